"""Forward-backward trajectory ensembles for amplified phase-space modes.

The amplified quadrature relaxes *backward* in time from a boundary
sample drawn at the final time; its conjugate relaxes *forward* from an
initial sample.  Both directions use the exact one-step kernel of
relaxation toward the unit-variance stationary state,

    y' = y e^{-r dt} + sqrt(1 - e^{-2 r dt}) z ,   z ~ N(0, 1),

so marginals at every grid time are exact for any step count; the step
count only controls how finely the path is recorded.

Work is split into fixed-size chunks, each drawing from its own
counter-based stream keyed by (seed, chunk index).  Results are
therefore bit-identical no matter how many threads run the chunks, and
a consumer that streams chunk-by-chunk sees exactly the bytes a fully
materialised ensemble would contain.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple, Union

import numpy as np

from .analytic import (GaussFringeDensity, fbc_from_wigner, marginal_p,
                       marginal_x, two_mode_q)
from .core import (AmplifierSpec, ModeSpec, Scenario, ScenarioError,
                   SuperpositionSpec, TimeGrid, TwoModeSpec, validate_scenario)
from .sampler import RngStream, sample_fringe_density

CHUNK = 8192

_BOUNDARY_METHODS = ("direct", "wigner")


class NonPositiveDt(ValueError):
    """A relaxation step needs a strictly positive time increment."""


@dataclass(frozen=True)
class Trajectory:
    """One recorded phase-space path (optionally with its meter pair)."""

    grid: TimeGrid
    x_path: np.ndarray
    p_path: np.ndarray
    x_b_path: Optional[np.ndarray] = None
    p_b_path: Optional[np.ndarray] = None


@dataclass
class TrajectoryEnsemble:
    """Array-backed collection of simulated paths.

    Paths are stored row-per-trajectory with one column per grid time;
    column 0 is t = 0 and the last column is the final time.
    """

    scenario: Scenario
    grid: TimeGrid
    x_paths: np.ndarray
    p_paths: np.ndarray
    x_b_paths: Optional[np.ndarray] = None
    p_b_paths: Optional[np.ndarray] = None

    def __post_init__(self):
        n_times = len(self.grid)
        for name in ("x_paths", "p_paths", "x_b_paths", "p_b_paths"):
            arr = getattr(self, name)
            if arr is None:
                continue
            if arr.ndim != 2 or arr.shape[1] != n_times:
                raise ValueError(f"{name} must have shape (count, {n_times})")
            if arr.shape[0] != self.x_paths.shape[0]:
                raise ValueError("path arrays disagree on trajectory count")
        if (self.x_b_paths is None) != (self.p_b_paths is None):
            raise ValueError("meter paths must come as a pair")

    @property
    def count(self) -> int:
        return self.x_paths.shape[0]

    @property
    def is_two_mode(self) -> bool:
        return self.x_b_paths is not None

    def __len__(self) -> int:
        return self.count

    def trajectory(self, i: int) -> Trajectory:
        xb = None if self.x_b_paths is None else self.x_b_paths[i]
        pb = None if self.p_b_paths is None else self.p_b_paths[i]
        return Trajectory(self.grid, self.x_paths[i], self.p_paths[i], xb, pb)

    def __iter__(self) -> Iterator[Trajectory]:
        for i in range(self.count):
            yield self.trajectory(i)


def ou_step(value, rate: float, dt: float, rng) -> np.ndarray:
    """One exact relaxation step toward the unit-variance stationary state."""
    if dt <= 0.0:
        raise NonPositiveDt(f"dt must be positive, got {dt!r}")
    if rate <= 0.0:
        raise ValueError("relaxation rate must be positive")
    c = math.exp(-rate * dt)
    s = math.sqrt(1.0 - c * c)
    value = np.asarray(value, dtype=float)
    return c * value + s * rng.standard_normal(value.shape)


def _fill_backward(out: np.ndarray, boundary: np.ndarray, rate: float,
                   dt: float, rng) -> None:
    """Fill rows from the last column leftward with the relaxation kernel."""
    c = math.exp(-rate * dt)
    s = math.sqrt(1.0 - c * c)
    m = out.shape[0]
    out[:, -1] = boundary
    for k in range(out.shape[1] - 1, 0, -1):
        out[:, k - 1] = c * out[:, k] + s * rng.standard_normal(m)


def _fill_forward(out: np.ndarray, start: np.ndarray, rate: float,
                  dt: float, rng) -> None:
    """Fill rows from the first column rightward with the relaxation kernel."""
    c = math.exp(-rate * dt)
    s = math.sqrt(1.0 - c * c)
    m = out.shape[0]
    out[:, 0] = start
    for k in range(1, out.shape[1]):
        out[:, k] = c * out[:, k - 1] + s * rng.standard_normal(m)


def n_chunks(n_traj: int) -> int:
    return (n_traj + CHUNK - 1) // CHUNK


def chunk_bounds(n_traj: int, chunk_id: int) -> Tuple[int, int]:
    lo = chunk_id * CHUNK
    return lo, min(lo + CHUNK, n_traj)


def _threads(threads: Optional[int]) -> int:
    if threads is None:
        threads = int(os.environ.get("QTRAJ_THREADS", "1"))
    return max(1, int(threads))


def _check_traj_count(n_traj: int) -> int:
    n_traj = int(n_traj)
    if n_traj < 1:
        raise ValueError("need at least one trajectory")
    return n_traj


def _run_chunks(n_traj: int, threads: int, fill) -> None:
    ids = range(n_chunks(n_traj))
    if threads == 1:
        for cid in ids:
            fill(cid)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(fill, ids))


# ---------------------------------------------------------------------------
# single mode, amplified position


def _single_mode_boundary(spec, amp: AmplifierSpec,
                          boundary_method: str) -> GaussFringeDensity:
    if boundary_method == "direct":
        return marginal_x(spec, amp, amp.t_final)
    if boundary_method == "wigner":
        return fbc_from_wigner(spec, amp)
    raise ValueError(
        f"boundary_method must be one of {_BOUNDARY_METHODS}, "
        f"got {boundary_method!r}")


def single_mode_chunk(spec: Union[ModeSpec, SuperpositionSpec],
                      amp: AmplifierSpec, seed: int, chunk_id: int,
                      size: int, boundary_method: str = "direct",
                      _densities=None) -> Tuple[np.ndarray, np.ndarray]:
    """Generate one chunk of position-amplified paths.

    Deterministic in (seed, chunk_id, size): the chunk draws from its
    own stream, so any scheduling that assigns the same sizes to the
    same chunk ids reproduces identical arrays.
    """
    if _densities is None:
        bdens = _single_mode_boundary(spec, amp, boundary_method)
        pdens = marginal_p(spec, amp, 0.0)
    else:
        bdens, pdens = _densities
    rng = RngStream(int(seed), chunk_id).generator()
    n_cols = amp.n_steps + 1
    x = np.empty((size, n_cols))
    p = np.empty((size, n_cols))
    rate = amp.gain_rate_g
    dt = amp.t_final / amp.n_steps
    x_final = sample_fringe_density(bdens, rng, size)
    _fill_backward(x, x_final, rate, dt, rng)
    p_start = sample_fringe_density(pdens, rng, size)
    _fill_forward(p, p_start, rate, dt, rng)
    return x, p


def simulate_single_mode(spec: Union[ModeSpec, SuperpositionSpec],
                         amp: AmplifierSpec, n_traj: int, seed: int,
                         boundary_method: str = "direct",
                         threads: Optional[int] = None) -> TrajectoryEnsemble:
    """Simulate a position-amplified single mode (gain rate > 0).

    The position is drawn at the final time from the amplified marginal
    (or, with ``boundary_method="wigner"``, from the scaled-and-smoothed
    initial phase-space marginal — analytically the same density) and
    relaxed backward; the momentum is drawn at t = 0 and relaxed
    forward.

    Parameters
    ----------
    spec : ModeSpec or SuperpositionSpec
    amp : AmplifierSpec
        Requires ``gain_rate_g > 0``; momentum-amplified runs use
        :func:`simulate_p_measurement`.
    n_traj, seed : int
    boundary_method : {"direct", "wigner"}
    threads : int, optional
        Defaults to the QTRAJ_THREADS environment variable (else 1).
        Results do not depend on the thread count.
    """
    if amp.gain_rate_g <= 0.0:
        raise ScenarioError("position amplification needs gain_rate_g > 0; "
                            "use simulate_p_measurement for negative gain")
    scenario = validate_scenario(spec, amp)
    n_traj = _check_traj_count(n_traj)
    densities = (_single_mode_boundary(spec, amp, boundary_method),
                 marginal_p(spec, amp, 0.0))
    n_cols = amp.n_steps + 1
    x = np.empty((n_traj, n_cols))
    p = np.empty((n_traj, n_cols))

    def fill(cid):
        lo, hi = chunk_bounds(n_traj, cid)
        xc, pc = single_mode_chunk(spec, amp, seed, cid, hi - lo,
                                   boundary_method, _densities=densities)
        x[lo:hi] = xc
        p[lo:hi] = pc

    _run_chunks(n_traj, _threads(threads), fill)
    return TrajectoryEnsemble(scenario, scenario.grid, x, p)


# ---------------------------------------------------------------------------
# single mode, amplified momentum


def p_measurement_chunk(spec: Union[ModeSpec, SuperpositionSpec],
                        amp: AmplifierSpec, seed: int, chunk_id: int,
                        size: int, _densities=None
                        ) -> Tuple[np.ndarray, np.ndarray]:
    """One chunk of momentum-amplified paths (negative gain rate)."""
    if _densities is None:
        bdens = marginal_p(spec, amp, amp.t_final)
        xdens = marginal_x(spec, amp, 0.0)
    else:
        bdens, xdens = _densities
    rng = RngStream(int(seed), chunk_id).generator()
    n_cols = amp.n_steps + 1
    x = np.empty((size, n_cols))
    p = np.empty((size, n_cols))
    rate = -amp.gain_rate_g
    dt = amp.t_final / amp.n_steps
    p_final = sample_fringe_density(bdens, rng, size)
    _fill_backward(p, p_final, rate, dt, rng)
    x_start = sample_fringe_density(xdens, rng, size)
    _fill_forward(x, x_start, rate, dt, rng)
    return x, p


def simulate_p_measurement(spec: Union[ModeSpec, SuperpositionSpec],
                           amp: AmplifierSpec, n_traj: int, seed: int,
                           threads: Optional[int] = None
                           ) -> TrajectoryEnsemble:
    """Simulate a momentum-amplified single mode (gain rate < 0).

    Mirror image of :func:`simulate_single_mode`: the momentum carries
    the amplified boundary condition at the final time and the position
    relaxes forward from its initial marginal.
    """
    if amp.gain_rate_g >= 0.0:
        raise ScenarioError("momentum amplification needs gain_rate_g < 0")
    scenario = validate_scenario(spec, amp)
    n_traj = _check_traj_count(n_traj)
    densities = (marginal_p(spec, amp, amp.t_final), marginal_x(spec, amp, 0.0))
    n_cols = amp.n_steps + 1
    x = np.empty((n_traj, n_cols))
    p = np.empty((n_traj, n_cols))

    def fill(cid):
        lo, hi = chunk_bounds(n_traj, cid)
        xc, pc = p_measurement_chunk(spec, amp, seed, cid, hi - lo,
                                     _densities=densities)
        x[lo:hi] = xc
        p[lo:hi] = pc

    _run_chunks(n_traj, _threads(threads), fill)
    return TrajectoryEnsemble(scenario, scenario.grid, x, p)


# ---------------------------------------------------------------------------
# two modes, both positions amplified


def two_mode_chunk(spec: TwoModeSpec, amp: AmplifierSpec, seed: int,
                   chunk_id: int, size: int,
                   amp_b: Optional[AmplifierSpec] = None, _densities=None):
    """One chunk of joint system-meter paths.

    Draw order per chunk: the correlated (x_a, x_b) pair at the final
    time, backward relaxation of x_a then x_b, the correlated
    (p_a, p_b) pair at t = 0, forward relaxation of p_a then p_b.
    """
    if amp_b is None:
        amp_b = amp
    if _densities is None:
        bdens = two_mode_q(spec, amp, amp.t_final, amp_b).marginal("p_a", "p_b")
        pdens = two_mode_q(spec, amp, 0.0, amp_b).marginal("x_a", "x_b")
    else:
        bdens, pdens = _densities
    rng = RngStream(int(seed), chunk_id).generator()
    n_cols = amp.n_steps + 1
    xa = np.empty((size, n_cols))
    pa = np.empty((size, n_cols))
    xb = np.empty((size, n_cols))
    pb = np.empty((size, n_cols))
    dt = amp.t_final / amp.n_steps
    x_final = sample_fringe_density(bdens, rng, size)
    _fill_backward(xa, x_final[:, 0], amp.gain_rate_g, dt, rng)
    _fill_backward(xb, x_final[:, 1], amp_b.gain_rate_g, dt, rng)
    p_start = sample_fringe_density(pdens, rng, size)
    _fill_forward(pa, p_start[:, 0], amp.gain_rate_g, dt, rng)
    _fill_forward(pb, p_start[:, 1], amp_b.gain_rate_g, dt, rng)
    return xa, pa, xb, pb


def simulate_two_mode(spec: TwoModeSpec, amp: AmplifierSpec, n_traj: int,
                      seed: int, amp_b: Optional[AmplifierSpec] = None,
                      threads: Optional[int] = None) -> TrajectoryEnsemble:
    """Simulate the entangled system-meter pair with both positions amplified.

    The final-time (x_a, x_b) pair is drawn from the joint amplified
    marginal — the branch correlation between system and meter lives in
    that draw — and both positions relax backward; the initial momentum
    pair carries the interference term and relaxes forward.
    """
    if not isinstance(spec, TwoModeSpec):
        raise ScenarioError("simulate_two_mode needs a TwoModeSpec")
    if amp_b is None:
        amp_b = amp
    if amp.gain_rate_g <= 0.0 or amp_b.gain_rate_g <= 0.0:
        raise ScenarioError("two-mode runs amplify both positions: "
                            "both gain rates must be positive")
    scenario = validate_scenario(spec, amp, amp_b)
    n_traj = _check_traj_count(n_traj)
    densities = (
        two_mode_q(spec, amp, amp.t_final, amp_b).marginal("p_a", "p_b"),
        two_mode_q(spec, amp, 0.0, amp_b).marginal("x_a", "x_b"))
    n_cols = amp.n_steps + 1
    xa = np.empty((n_traj, n_cols))
    pa = np.empty((n_traj, n_cols))
    xb = np.empty((n_traj, n_cols))
    pb = np.empty((n_traj, n_cols))

    def fill(cid):
        lo, hi = chunk_bounds(n_traj, cid)
        ca, cpa, cb, cpb = two_mode_chunk(spec, amp, seed, cid, hi - lo,
                                          amp_b, _densities=densities)
        xa[lo:hi] = ca
        pa[lo:hi] = cpa
        xb[lo:hi] = cb
        pb[lo:hi] = cpb

    _run_chunks(n_traj, _threads(threads), fill)
    return TrajectoryEnsemble(scenario, scenario.grid, xa, pa, xb, pb)
