"""Sign binning, conditional resampling and inferred-state estimation.

A completed run selects trajectories by the sign of an amplified
position at the final time.  Because the backward relaxation contracts
toward t = 0, the selected sub-ensembles concentrate on one packet and
their initial-time spreads drop below the symmetric-state values; the
estimators here report those conditional moments with batch standard
errors, and rebuild ("loop") the unmeasured coordinates by drawing them
fresh from the conditional distribution given the measured ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from .analytic import (FringeTerm, GaussComponent, GaussFringeDensity,
                       UnsupportedPhase, _phase_kind)
from .core import (ModeSpec, ScenarioError, SuperpositionSpec, TwoModeSpec,
                   as_superposition)
from .sampler import RngStream, _as_generator, sample_p_given_x
from .sde_engine import TrajectoryEnsemble
from .stats import Histogram, histogram

N_BATCHES = 10
MIN_SAMPLES = 100


class EmptyEnsemble(ValueError):
    """No trajectories to select from."""


class EmptyBranch(ValueError):
    """The selected branch contains no trajectories."""


class TooFewSamples(ValueError):
    """Not enough samples for a variance estimate with an error bar."""


@dataclass(frozen=True)
class PostselectedEnsemble:
    """Initial-time coordinates of the trajectories with one final sign."""

    branch: int
    x0: np.ndarray
    p0: np.ndarray
    x_b0: Optional[np.ndarray] = None
    p_b0: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return len(self.x0)

    @property
    def is_two_mode(self) -> bool:
        return self.x_b0 is not None


@dataclass(frozen=True)
class MomentEstimate:
    """Mean and variance of one coordinate with batch standard errors.

    ``variance`` is whatever the producing estimator reports — the raw
    sample variance for phase-space moments, or the sample variance
    minus the coherent-state floor for observed (measured) moments; see
    the producer's docstring.  Negative values are reported as they
    come, never clamped.
    """

    mean: float
    variance: float
    std_error_mean: float
    std_error_variance: float
    n: int


@dataclass(frozen=True)
class UncertaintyProduct:
    """Product of observed standard deviations with propagated error."""

    epsilon: float
    std_error: float
    negative_variance: bool
    var_x: MomentEstimate
    var_p: MomentEstimate


def _moment_estimate(values: np.ndarray, correction: float = 0.0
                     ) -> MomentEstimate:
    n = len(values)
    mean = float(np.mean(values))
    var = float(np.var(values, ddof=1)) - correction
    batches = np.array_split(values, N_BATCHES)
    b_means = [float(np.mean(b)) for b in batches]
    b_vars = [float(np.var(b, ddof=1)) - correction for b in batches]
    se_mean = float(np.std(b_means, ddof=1)) / math.sqrt(N_BATCHES)
    se_var = float(np.std(b_vars, ddof=1)) / math.sqrt(N_BATCHES)
    return MomentEstimate(mean, var, se_mean, se_var, n)


def bin_by_sign(ensemble: TrajectoryEnsemble, mode: str = "a"
                ) -> Tuple[PostselectedEnsemble, PostselectedEnsemble]:
    """Split an ensemble by the final-time sign of an amplified position.

    Parameters
    ----------
    ensemble : TrajectoryEnsemble
    mode : {"a", "b"}
        Which position decides the split; "b" needs a two-mode run.

    Returns
    -------
    (plus, minus) : PostselectedEnsemble pair
        Zero final values count as positive.  Either branch may be
        empty after a strongly biased split.
    """
    if ensemble.count == 0:
        raise EmptyEnsemble("cannot select from an empty ensemble")
    if mode == "a":
        key = ensemble.x_paths[:, -1]
    elif mode == "b":
        if ensemble.x_b_paths is None:
            raise ScenarioError("mode 'b' selection needs a two-mode ensemble")
        key = ensemble.x_b_paths[:, -1]
    else:
        raise ValueError(f"mode must be 'a' or 'b', got {mode!r}")
    mask = key >= 0.0

    def take(sel, branch):
        xb = None if ensemble.x_b_paths is None else ensemble.x_b_paths[sel, 0]
        pb = None if ensemble.p_b_paths is None else ensemble.p_b_paths[sel, 0]
        return PostselectedEnsemble(branch, ensemble.x_paths[sel, 0],
                                    ensemble.p_paths[sel, 0], xb, pb)

    return take(mask, +1), take(~mask, -1)


def _meter_weights(spec: TwoModeSpec, x_b0: np.ndarray
                   ) -> Tuple[np.ndarray, np.ndarray]:
    """Branch weight and interference suppression given initial meter values.

    Stable for arbitrarily large |x_b0|: w_plus = (1 + tanh u)/2 and
    s = sech u with u = x_b0 x1b / sigma_xb^2.
    """
    sxb = spec.mode_b.sigma_x2
    u = np.asarray(x_b0, dtype=float) * spec.x1b / sxb
    w_plus = 0.5 * (1.0 + np.tanh(u))
    au = np.abs(u)
    s = 2.0 * np.exp(-au) / (1.0 + np.exp(-2.0 * au))
    return w_plus, s


def _draw_conditional_triple(spec: TwoModeSpec, x_b0: np.ndarray, rng
                             ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Draw (x_a, p_a, p_b) from the conditional given each initial meter value.

    Rejection against the positive mixture obtained by replacing the
    interference term with its envelope; per-candidate acceptance is at
    least 1/(1 + s) >= 1/2.
    """
    sup = spec.mode_a
    sxa = sup.mode.sigma_x2
    spa = sup.mode.sigma_p2
    spb = spec.mode_b.sigma_p2
    sxb = spec.mode_b.sigma_x2
    x1 = spec.x1
    k_a = x1 / sxa
    k_b = spec.x1b / sxb
    phi = sup.phase_phi
    w_plus, s = _meter_weights(spec, x_b0)
    e_amp = math.exp(-0.5 * x1 ** 2 / sxa)
    sig_x, sig_pa, sig_pb = math.sqrt(sxa), math.sqrt(spa), math.sqrt(spb)
    m = len(x_b0)
    xa = np.empty(m)
    pa = np.empty(m)
    pb = np.empty(m)
    fringe_w = s * e_amp
    total = 1.0 + fringe_w
    thr_plus = w_plus / total
    thr_mix = 1.0 / total
    pending = np.ones(m, dtype=bool)
    while pending.any():
        idx = np.flatnonzero(pending)
        mm = len(idx)
        pick = rng.random(mm)
        on_plus = pick < thr_plus[idx]
        on_minus = (~on_plus) & (pick < thr_mix[idx])
        center = np.where(on_plus, x1, np.where(on_minus, -x1, 0.0))
        cx = center + sig_x * rng.standard_normal(mm)
        cpa = sig_pa * rng.standard_normal(mm)
        cpb = sig_pb * rng.standard_normal(mm)
        shift = cx * x1 / sxa - 0.5 * x1 ** 2 / sxa
        a_plus = w_plus[idx] * np.exp(shift)
        a_minus = (1.0 - w_plus[idx]) * np.exp(-cx * x1 / sxa
                                               - 0.5 * x1 ** 2 / sxa)
        osc = np.cos(phi + k_a * cpa + k_b * cpb)
        ratio = ((a_plus + a_minus + fringe_w[idx] * osc)
                 / (a_plus + a_minus + fringe_w[idx]))
        accept = rng.random(mm) < ratio
        tgt = idx[accept]
        xa[tgt] = cx[accept]
        pa[tgt] = cpa[accept]
        pb[tgt] = cpb[accept]
        pending[tgt] = False
    return xa, pa, pb


def build_loops(selected: PostselectedEnsemble,
                spec: Union[ModeSpec, SuperpositionSpec, TwoModeSpec],
                rng, multiplicity: int = 1) -> PostselectedEnsemble:
    """Redraw the unmeasured coordinates conditioned on the measured ones.

    Single mode: keeps each initial position and draws a fresh initial
    momentum from the conditional given that position.  Two modes:
    keeps each initial meter position and draws fresh
    (x_a, p_a, p_b) from the conditional given it.

    Parameters
    ----------
    selected : PostselectedEnsemble
    spec : state specification matching the ensemble
    rng : numpy Generator or RngStream
    multiplicity : int
        Number of fresh draws per kept trajectory (loops per anchor).

    Returns
    -------
    PostselectedEnsemble with n * multiplicity samples.
    """
    if selected.n == 0:
        raise EmptyBranch("no trajectories in the selected branch")
    if multiplicity < 1:
        raise ValueError("multiplicity must be at least 1")
    rng = _as_generator(rng)
    if isinstance(spec, TwoModeSpec):
        if selected.x_b0 is None:
            raise ScenarioError("two-mode loops need meter coordinates")
        anchors = np.repeat(selected.x_b0, multiplicity)
        xa, pa, pb = _draw_conditional_triple(spec, anchors, rng)
        return PostselectedEnsemble(selected.branch, xa, pa, anchors, pb)
    anchors = np.repeat(selected.x0, multiplicity)
    p0 = sample_p_given_x(spec, anchors, rng)
    return PostselectedEnsemble(selected.branch, anchors, p0)


def observed_variances(selected: PostselectedEnsemble, mode: str = "a"
                       ) -> Tuple[MomentEstimate, MomentEstimate]:
    """Measured position and momentum moments of one selected branch.

    The observed variance is the initial-time sample variance minus the
    coherent-state floor of 1 per quadrature, so an eigenstate-like
    record gives zero and a squeezed record goes below the symmetric
    value; negative estimates are reported as they come.  Standard
    errors come from 10 contiguous batches.

    Parameters
    ----------
    selected : PostselectedEnsemble
    mode : {"a", "b"}
        Which mode's coordinates to summarise.

    Raises
    ------
    TooFewSamples
        Fewer than 100 samples in the branch.
    """
    if mode == "a":
        xs, ps = selected.x0, selected.p0
    elif mode == "b":
        if selected.x_b0 is None:
            raise ScenarioError("mode 'b' moments need a two-mode ensemble")
        xs, ps = selected.x_b0, selected.p_b0
    else:
        raise ValueError(f"mode must be 'a' or 'b', got {mode!r}")
    if len(xs) < MIN_SAMPLES:
        raise TooFewSamples(
            f"{len(xs)} samples in branch; need at least {MIN_SAMPLES}")
    return (_moment_estimate(xs, correction=1.0),
            _moment_estimate(ps, correction=1.0))


def uncertainty_product(selected: PostselectedEnsemble, mode: str = "a"
                        ) -> UncertaintyProduct:
    """Product of the observed standard deviations, with propagated error.

    epsilon = sqrt(Vx * Vp) for the observed variances of one branch;
    values below the symmetric-state product witness the conditional
    squeezing of the record.  If either observed variance is negative
    (possible through subtraction noise near an eigenstate-like record)
    the product is reported as NaN with ``negative_variance`` set.
    """
    est_x, est_p = observed_variances(selected, mode)
    vx, vp = est_x.variance, est_p.variance
    negative = vx < 0.0 or vp < 0.0
    if vx > 0.0 and vp > 0.0:
        eps = math.sqrt(vx * vp)
        se = 0.5 * math.hypot(est_x.std_error_variance * vp,
                              est_p.std_error_variance * vx) / eps
    else:
        eps = float("nan")
        se = float("nan")
    return UncertaintyProduct(eps, se, negative, est_x, est_p)


@dataclass(frozen=True)
class InferredState:
    """System phase-space state reconstructed from meter records.

    ``moments_x`` / ``moments_p`` carry raw phase-space moments (no
    floor subtraction); ``density`` is the closed-form reconstruction
    using the ensemble-averaged branch weight and interference
    suppression, and ``values`` samples it on the reporting grid.
    """

    density: GaussFringeDensity
    moments_x: MomentEstimate
    moments_p: MomentEstimate
    w_plus_bar: float
    sech_bar: float
    x_centers: np.ndarray
    p_centers: np.ndarray
    values: np.ndarray
    grid_mass: float
    meter_hist: Histogram
    n: int


def _inferred_density(spec: TwoModeSpec, w_plus_bar: float, sech_bar: float
                      ) -> GaussFringeDensity:
    sup = spec.mode_a
    sxa = sup.mode.sigma_x2
    spa = sup.mode.sigma_p2
    sxb = spec.mode_b.sigma_x2
    spb = spec.mode_b.sigma_p2
    x1 = spec.x1
    k_b = spec.x1b / sxb
    meter_damp = math.exp(-0.5 * k_b ** 2 * spb)
    comps = (GaussComponent(w_plus_bar, (x1, 0.0), (sxa, spa)),
             GaussComponent(1.0 - w_plus_bar, (-x1, 0.0), (sxa, spa)))
    fringe = FringeTerm(
        amplitude=sech_bar * meter_damp * math.exp(-0.5 * x1 ** 2 / sxa),
        means=(0.0, 0.0), variances=(sxa, spa),
        wave=(0.0, x1 / sxa), phase=sup.phase_phi)
    return GaussFringeDensity(gaussians=comps, fringe=fringe, norm=1.0,
                              axes=("x", "p"))


def infer_state_A_numeric(selected: PostselectedEnsemble, spec: TwoModeSpec,
                          n_bins: int = 100, span_sigma: float = 8.0
                          ) -> InferredState:
    """Reconstruct the system state from one branch's meter records.

    Each record contributes the conditional system distribution given
    its initial meter position; because those conditionals depend on the
    record only through the branch weight and the interference
    suppression — both entering linearly — the branch average is again a
    member of the closed-form family, evaluated at the ensemble means
    of the two factors.  Moments and their batch errors follow from the
    same closed forms applied per batch.

    Only the quarter phase is supported: there the conditional is
    normalised for every record, so the average needs no per-record
    renormalisation.

    Parameters
    ----------
    selected : PostselectedEnsemble
        A two-mode branch (needs meter coordinates).
    spec : TwoModeSpec
    n_bins : int
        Points per axis of the reporting grid (and meter histogram bins).
    span_sigma : float
        Half-width of the grid in packet standard deviations beyond the
        packet centers.
    """
    if selected.n == 0:
        raise EmptyBranch("no trajectories in the selected branch")
    if selected.x_b0 is None:
        raise ScenarioError("inference needs a two-mode ensemble")
    sup = spec.mode_a
    if _phase_kind(sup.phase_phi) != "quarter":
        raise UnsupportedPhase(
            "inferred-state reconstruction needs the quarter phase")
    x_b0 = selected.x_b0
    w_plus, s = _meter_weights(spec, x_b0)
    w_bar = float(np.mean(w_plus))
    s_bar = float(np.mean(s))
    density = _inferred_density(spec, w_bar, s_bar)

    def moments_from(wb, sb):
        d = _inferred_density(spec, wb, sb)
        return d.moments("x"), d.moments("p")

    (mx, vx), (mp, vp) = moments_from(w_bar, s_bar)
    w_batches = np.array_split(w_plus, N_BATCHES)
    s_batches = np.array_split(s, N_BATCHES)
    b_moments = [moments_from(float(np.mean(wb)), float(np.mean(sb)))
                 for wb, sb in zip(w_batches, s_batches)]
    se = [float(np.std(col, ddof=1)) / math.sqrt(N_BATCHES)
          for col in zip(*[(m[0][0], m[0][1], m[1][0], m[1][1])
                           for m in b_moments])]
    moments_x = MomentEstimate(mx, vx, se[0], se[1], selected.n)
    moments_p = MomentEstimate(mp, vp, se[2], se[3], selected.n)

    sig_x = math.sqrt(sup.mode.sigma_x2)
    sig_p = math.sqrt(sup.mode.sigma_p2)
    half_x = spec.x1 + span_sigma * sig_x
    half_p = span_sigma * sig_p
    x_centers = _bin_centers(-half_x, half_x, n_bins)
    p_centers = _bin_centers(-half_p, half_p, n_bins)
    values = density.density(x_centers[:, None], p_centers[None, :])
    dx = x_centers[1] - x_centers[0]
    dp = p_centers[1] - p_centers[0]
    grid_mass = float(values.sum() * dx * dp)

    center = float(np.mean(x_b0))
    spread = float(np.std(x_b0))
    edges = np.linspace(center - span_sigma * spread,
                        center + span_sigma * spread, n_bins + 1)
    meter_hist = histogram(x_b0, edges)
    return InferredState(density, moments_x, moments_p, w_bar, s_bar,
                         x_centers, p_centers, values, grid_mass,
                         meter_hist, selected.n)


def _bin_centers(lo: float, hi: float, n: int) -> np.ndarray:
    edges = np.linspace(lo, hi, n + 1)
    return 0.5 * (edges[:-1] + edges[1:])


def meter_sign_agreement(ensemble: TrajectoryEnsemble) -> float:
    """Fraction of trajectories whose two final positions share a sign."""
    if ensemble.x_b_paths is None:
        raise ScenarioError("sign agreement needs a two-mode ensemble")
    a = ensemble.x_paths[:, -1] >= 0.0
    b = ensemble.x_b_paths[:, -1] >= 0.0
    return float(np.mean(a == b))
