"""Scenario types for amplified-measurement trajectory simulations.

Conventions used throughout the package: quadratures x = a + a^dag and
p = (a - a^dag)/i, so the phase-space (Husimi) variances of a coherent
state are 2 per axis and measured variances are smaller by 1 per axis
(antinormal ordering).  A mode squeezed with parameter r has t = 0
phase-space variances

    sigma_x^2 = 1 + exp(-2 r),      sigma_p^2 = 1 + exp(2 r).

Linear amplification at rate g multiplies mean displacements along x by
G(t) = exp(g t) and evolves the variances as

    sigma_x^2(t) = 1 + G(t)^2 (sigma_x^2(0) - 1),
    sigma_p^2(t) = 1 + (sigma_p^2(0) - 1) / G(t)^2,

which also covers g < 0 (de-amplification of x, amplification of p).
Superpositions are two wave packets centred at +-x1 on the x axis with
amplitudes c1, c2 and relative phase phi; their overlap exponent
x1^2 exp(2 r) / 2 is invariant under amplification, so the state norm is
a constant of the motion and is precomputed here once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np


class ScenarioError(ValueError):
    """A scenario that cannot be simulated."""


class NonNormalizedAmplitudes(ScenarioError):
    """Superposition amplitudes with |c1|^2 + |c2|^2 != 1."""


class ZeroGain(ScenarioError):
    """Amplifier with g = 0 (the measurement needs a finite rate)."""


class NonPositiveSteps(ScenarioError):
    """Time grid with fewer than one step or non-positive duration."""


@dataclass(frozen=True)
class ModeSpec:
    """A single squeezed wave packet.

    Parameters
    ----------
    mean_x : float
        Centre of the packet on the x axis (twice the coherent amplitude).
    squeeze_r : float
        Squeezing parameter; r > 0 narrows x, r = 0 is coherent.
    """

    mean_x: float
    squeeze_r: float = 0.0

    @property
    def sigma_x2(self) -> float:
        return 1.0 + math.exp(-2.0 * self.squeeze_r)

    @property
    def sigma_p2(self) -> float:
        return 1.0 + math.exp(2.0 * self.squeeze_r)

    @property
    def overlap_exponent(self) -> float:
        """Exponent damping interference between packets at +-mean_x."""
        return 0.5 * self.mean_x ** 2 * math.exp(2.0 * self.squeeze_r)


@dataclass(frozen=True)
class SuperpositionSpec:
    """Superposition c1 |packet at +x1> + c2 e^{i phi} |packet at -x1>.

    The two packets share the squeezing of ``mode`` and sit at +-mean_x;
    c1_mag and c2_mag are the real magnitudes (|c1|^2 + |c2|^2 = 1) and
    phase_phi the relative phase.  c2_mag = 0 reduces to a single
    squeezed packet.
    """

    mode: ModeSpec
    c1_mag: float = 1.0
    c2_mag: float = 0.0
    phase_phi: float = 0.0

    def __post_init__(self):
        norm = self.c1_mag ** 2 + self.c2_mag ** 2
        if abs(norm - 1.0) > 1e-12:
            raise NonNormalizedAmplitudes(
                f"|c1|^2 + |c2|^2 = {norm!r}, expected 1 within 1e-12")
        if self.c1_mag < 0 or self.c2_mag < 0:
            raise NonNormalizedAmplitudes(
                "amplitude magnitudes must be non-negative")

    @property
    def x1(self) -> float:
        return self.mode.mean_x

    @property
    def fringe_weight(self) -> float:
        """Weight 2 |c1 c2| of the interference term."""
        return 2.0 * self.c1_mag * self.c2_mag

    @property
    def norm_factor(self) -> float:
        """State norm N = 1 / (1 + 2|c1 c2| cos(phi) e^{-overlap})."""
        ov = math.exp(-self.mode.overlap_exponent)
        return 1.0 / (1.0 + self.fringe_weight * math.cos(self.phase_phi) * ov)


@dataclass(frozen=True)
class TwoModeSpec:
    """System superposition entangled with a meter packet.

    The joint state is the branch-correlated superposition of
    (system at +x1, meter at +x1b) and (system at -x1, meter at -x1b)
    with equal magnitudes and relative phase taken from ``mode_a``.
    """

    mode_a: SuperpositionSpec
    mode_b: ModeSpec

    def __post_init__(self):
        if abs(self.mode_a.c1_mag ** 2 - 0.5) > 1e-12:
            raise NonNormalizedAmplitudes(
                "entangled scenarios need equal branch amplitudes 1/sqrt(2)")

    @property
    def x1(self) -> float:
        return self.mode_a.x1

    @property
    def x1b(self) -> float:
        return self.mode_b.mean_x


@dataclass(frozen=True)
class AmplifierSpec:
    """Measurement amplifier: rate g over [0, t_final] on an n_steps grid."""

    gain_rate_g: float
    t_final: float
    n_steps: int = 300

    def __post_init__(self):
        if self.gain_rate_g == 0.0:
            raise ZeroGain("amplifier rate g must be non-zero")
        if self.t_final <= 0.0:
            raise NonPositiveSteps(f"t_final = {self.t_final!r} must be > 0")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise NonPositiveSteps(f"n_steps = {self.n_steps!r} must be >= 1")

    @property
    def gain_tf(self) -> float:
        return math.exp(self.gain_rate_g * self.t_final)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid of n_steps + 1 times from 0 to t_final inclusive."""

    times: np.ndarray

    @classmethod
    def from_amplifier(cls, amp: AmplifierSpec) -> "TimeGrid":
        return cls(np.linspace(0.0, amp.t_final, amp.n_steps + 1))

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    @property
    def dt(self) -> float:
        return self.times[1] - self.times[0]

    @property
    def t_final(self) -> float:
        return self.times[-1]

    def __len__(self) -> int:
        return len(self.times)


StateSpec = Union[ModeSpec, SuperpositionSpec, TwoModeSpec]


def as_superposition(spec: Union[ModeSpec, SuperpositionSpec]) -> SuperpositionSpec:
    """Wrap a bare packet as the trivial (c2 = 0) superposition."""
    if isinstance(spec, SuperpositionSpec):
        return spec
    return SuperpositionSpec(mode=spec, c1_mag=1.0, c2_mag=0.0, phase_phi=0.0)


def gain(amp: AmplifierSpec, t) -> float:
    """Amplitude gain G(t) = exp(g t)."""
    return np.exp(amp.gain_rate_g * np.asarray(t, dtype=float))


def sigma_x2_at(mode: ModeSpec, amp: AmplifierSpec, t) -> float:
    g2 = gain(amp, t) ** 2
    return 1.0 + g2 * (mode.sigma_x2 - 1.0)


def sigma_p2_at(mode: ModeSpec, amp: AmplifierSpec, t) -> float:
    g2 = gain(amp, t) ** 2
    return 1.0 + (mode.sigma_p2 - 1.0) / g2


@dataclass(frozen=True)
class Scenario:
    """A validated state + amplifier pairing with derived constants.

    Attributes
    ----------
    state : SuperpositionSpec or TwoModeSpec
    amp : AmplifierSpec
        Amplifier for the (first) mode.
    amp_b : AmplifierSpec or None
        Meter amplifier; defaults to ``amp`` for two-mode states.
    grid : TimeGrid
    sigma_x2, sigma_p2 : float
        t = 0 phase-space variances of the system mode.
    sigma_x2_b, sigma_p2_b : float or None
        Same for the meter mode (two-mode states only).
    norm_n : float
        Norm factor of the system superposition taken alone.
    norm_n2 : float or None
        Norm factor of the entangled state (two-mode only).
    fringe_f : float
        Interference normalisation f(phi); equals 1/norm_n for a single
        mode and 1 + cos(phi) e^{-E_a - E_b} for two modes.
    gain_tf : float
        G(t_final) for the system amplifier.
    """

    state: Union[SuperpositionSpec, TwoModeSpec]
    amp: AmplifierSpec
    grid: TimeGrid
    sigma_x2: float
    sigma_p2: float
    norm_n: float
    fringe_f: float
    gain_tf: float
    amp_b: Optional[AmplifierSpec] = None
    sigma_x2_b: Optional[float] = None
    sigma_p2_b: Optional[float] = None
    norm_n2: Optional[float] = None

    @property
    def is_two_mode(self) -> bool:
        return isinstance(self.state, TwoModeSpec)

    @property
    def sup(self) -> SuperpositionSpec:
        """The system superposition (mode A for two-mode states)."""
        return self.state.mode_a if self.is_two_mode else self.state


def validate_scenario(spec: StateSpec, amp: AmplifierSpec,
                      amp_b: Optional[AmplifierSpec] = None) -> Scenario:
    """Check a state/amplifier pairing and precompute derived constants.

    Parameters
    ----------
    spec : ModeSpec, SuperpositionSpec or TwoModeSpec
        Bare packets are promoted to trivial superpositions.
    amp : AmplifierSpec
        Amplifier acting on the (system) mode.
    amp_b : AmplifierSpec, optional
        Meter amplifier for two-mode states; must share the time grid of
        ``amp``.  Defaults to ``amp``.

    Returns
    -------
    Scenario

    Raises
    ------
    NonNormalizedAmplitudes, ZeroGain, NonPositiveSteps
        Propagated from the component specs.
    ScenarioError
        For a meter amplifier on a single-mode state or mismatched grids.
    """
    grid = TimeGrid.from_amplifier(amp)
    if isinstance(spec, TwoModeSpec):
        if amp_b is None:
            amp_b = amp
        if (amp_b.t_final != amp.t_final or amp_b.n_steps != amp.n_steps):
            raise ScenarioError("meter amplifier must share the time grid")
        sup = spec.mode_a
        ea = sup.mode.overlap_exponent
        eb = spec.mode_b.overlap_exponent
        f2 = 1.0 + math.cos(sup.phase_phi) * math.exp(-ea - eb)
        return Scenario(
            state=spec, amp=amp, amp_b=amp_b, grid=grid,
            sigma_x2=sup.mode.sigma_x2, sigma_p2=sup.mode.sigma_p2,
            sigma_x2_b=spec.mode_b.sigma_x2, sigma_p2_b=spec.mode_b.sigma_p2,
            norm_n=sup.norm_factor, norm_n2=1.0 / math.sqrt(2.0 * f2),
            fringe_f=f2, gain_tf=amp.gain_tf)
    if amp_b is not None:
        raise ScenarioError("amp_b only applies to two-mode states")
    sup = as_superposition(spec)
    return Scenario(
        state=sup, amp=amp, grid=grid,
        sigma_x2=sup.mode.sigma_x2, sigma_p2=sup.mode.sigma_p2,
        norm_n=sup.norm_factor, fringe_f=1.0 / sup.norm_factor,
        gain_tf=amp.gain_tf)
