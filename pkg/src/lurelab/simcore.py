"""Assembly and fixed-step integration of the closed-loop equations.

Classical fourth-order Runge-Kutta on a uniform grid with sub-stepping
at declared forcing jumps, paired-trajectory gap measurements,
exponential envelope fitting, Lyapunov monotonicity along unforced runs,
and the integral-gain bound check on trajectory ensembles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .apsignals import SignalSpec
from .certcore import CertificateP, LinearTriple, QCertificate
from .sectorcore import Nonlinearity

__all__ = [
    "LureSystem",
    "Trajectory",
    "GapSeries",
    "ExpFit",
    "BlowUpError",
    "InsufficientDataError",
    "simulate",
    "incremental_gap",
    "fit_exponential",
    "lyapunov_monotonicity",
    "MonotonicityResult",
    "IissSurrogate",
    "fit_iiss_surrogates",
    "iiss_bound_check",
    "IissVerdict",
]

BLOWUP_NORM = 1e9


class BlowUpError(RuntimeError):
    """The state left the admissible region during integration."""

    def __init__(self, time, last_state):
        super().__init__(f"state blow-up at t = {time:.6g}")
        self.time = float(time)
        self.last_state = np.asarray(last_state, dtype=float)


class InsufficientDataError(ValueError):
    """Too few usable nodes for a fit."""


@dataclass(frozen=True)
class LureSystem:
    """Closed loop: dx/dt = A x - B f(t, Cx) + B v(t)."""

    triple: LinearTriple
    f: Nonlinearity
    p_cert: Optional[CertificateP] = None
    q_cert: Optional[QCertificate] = None

    def __post_init__(self):
        if self.f.m != self.triple.m:
            raise ValueError(
                f"nonlinearity dimension {self.f.m} != triple m {self.triple.m}")


@dataclass(frozen=True)
class Trajectory:
    """Uniformly sampled state path with integrator metadata."""

    times: np.ndarray
    states: np.ndarray
    forcing_id: str = ""
    method: str = "rk4"
    dt: float = 0.0
    n_substeps: int = 0

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if len(times) != len(states):
            raise ValueError("times and states lengths differ")
        if np.any(np.diff(times) <= 0):
            raise ValueError("time grid must be strictly increasing")
        if not np.all(np.isfinite(states)):
            raise ValueError("states contain non-finite values")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def n(self) -> int:
        return self.states.shape[1]

    def final_state(self) -> np.ndarray:
        return self.states[-1]

    def window(self, t_lo: float, t_hi: float) -> "Trajectory":
        mask = (self.times >= t_lo - 1e-12) & (self.times <= t_hi + 1e-12)
        return Trajectory(self.times[mask], self.states[mask],
                          self.forcing_id, self.method, self.dt, self.n_substeps)


def _rk4_substep(rhs, t0, h, x, v_at):
    k1 = rhs(t0, x, v_at(t0))
    k2 = rhs(t0 + 0.5 * h, x + 0.5 * h * k1, v_at(t0 + 0.5 * h))
    k3 = rhs(t0 + 0.5 * h, x + 0.5 * h * k2, v_at(t0 + 0.5 * h))
    k4 = rhs(t0 + h, x + h * k3, v_at(t0 + h))
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def simulate(
    system: LureSystem,
    x0,
    v: SignalSpec,
    T: float,
    dt: float,
) -> Trajectory:
    """Fixed-step integration of the closed loop on [0, T].

    Steps are split at declared forcing jump times so no stage straddles
    a discontinuity; the closing stage of a sub-step ending exactly at a
    jump evaluates the forcing from the left.  Raises
    :class:`BlowUpError` when the state stops being finite or exceeds
    the blow-up norm.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if v.m != system.triple.m:
        raise ValueError("forcing dimension does not match the system")
    A, B, C = system.triple.A, system.triple.B, system.triple.C
    f = system.f
    x0 = np.asarray(x0, dtype=float).reshape(system.triple.n)
    n_steps = int(round(T / dt))
    times = dt * np.arange(n_steps + 1)
    states = np.empty((n_steps + 1, system.triple.n))
    states[0] = x0

    all_bps = v.breakpoints(0.0, n_steps * dt + dt)
    vfun = v.fn

    def v_scalar(t):
        return vfun(np.array([t]))[0]

    def v_left(t):
        return vfun(np.array([t - 1e-12 * max(1.0, abs(t))]))[0]

    def rhs(t, x, vval):
        y = C @ x
        w = f(t, y)
        return A @ x + B @ (vval - np.atleast_1d(w))

    x = x0
    n_sub = 0
    bp_idx = 0
    for k in range(n_steps):
        t0, t1 = times[k], times[k + 1]
        # breakpoints inside this step
        while bp_idx < len(all_bps) and all_bps[bp_idx] <= t0 + 1e-15:
            bp_idx += 1
        sub_edges = [t0]
        j = bp_idx
        while j < len(all_bps) and all_bps[j] < t1 - 1e-15:
            sub_edges.append(float(all_bps[j]))
            j += 1
        sub_edges.append(t1)
        n_edges = len(sub_edges) - 1
        for idx, (a, b) in enumerate(zip(sub_edges[:-1], sub_edges[1:])):
            # interior edges are jumps by construction; the step end only
            # when it coincides with the next unconsumed breakpoint
            ends_at_jump = idx < n_edges - 1 or (
                j < len(all_bps) and abs(float(all_bps[j]) - b) < 1e-12)

            def v_at(t, b=b, ends=ends_at_jump):
                if ends and abs(t - b) < 1e-15:
                    return v_left(b)
                return v_scalar(t)

            x = _rk4_substep(rhs, a, b - a, x, v_at)
            n_sub += 1
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > BLOWUP_NORM:
            raise BlowUpError(t1, states[k])
        states[k + 1] = x
    return Trajectory(times, states, forcing_id=v.name, method="rk4",
                      dt=dt, n_substeps=n_sub)


# ---------------------------------------------------------------------------
# paired-trajectory measurements


@dataclass(frozen=True)
class GapSeries:
    """Pointwise gap between two trajectories and forcing-difference data."""

    times: np.ndarray
    values: np.ndarray        # ||x1 - x2|| per node
    forcing_l1: np.ndarray    # int_0^t ||v1 - v2||
    forcing_sup: np.ndarray   # sup_{[0,t]} ||v1 - v2||

    def __post_init__(self):
        if np.any(self.values < 0):
            raise ValueError("gap values must be nonnegative")

    def initial(self) -> float:
        return float(self.values[0])


def incremental_gap(
    traj1: Trajectory,
    traj2: Trajectory,
    v1: SignalSpec,
    v2: SignalSpec,
) -> GapSeries:
    """Euclidean gap series with forcing-difference functionals.

    The integral of the forcing difference uses composite trapezoid on
    the trajectory grid; the sup-norm is the running nodal maximum.
    """
    if traj1.times.shape != traj2.times.shape or \
            np.max(np.abs(traj1.times - traj2.times)) > 1e-12:
        raise ValueError("trajectories are on different time grids")
    times = traj1.times
    gap = np.linalg.norm(traj1.states - traj2.states, axis=1)
    dv = np.linalg.norm(v1(times) - v2(times), axis=1)
    steps = np.diff(times)
    cells = 0.5 * steps * (dv[:-1] + dv[1:])
    forcing_l1 = np.concatenate([[0.0], np.cumsum(cells)])
    forcing_sup = np.maximum.accumulate(dv)
    return GapSeries(times, gap, forcing_l1, forcing_sup)


@dataclass(frozen=True)
class ExpFit:
    """Least-squares exponential envelope gap(t) ~ M gap(0) exp(-gamma t)."""

    M: float
    gamma: float
    residual: float
    window: tuple
    n_nodes: int

    def envelope(self, gap0: float, t) -> np.ndarray:
        return self.M * gap0 * np.exp(-self.gamma * np.asarray(t, dtype=float))


def fit_exponential(gap: GapSeries, window: Optional[tuple] = None) -> ExpFit:
    """Fit log gap against time on a window by linear least squares.

    Nodes with gap below 1e-300 are masked out.  The default window
    drops the first tenth of the horizon, where the transient may
    overshoot any exponential envelope.
    """
    t = gap.times
    if window is None:
        window = (t[0] + 0.1 * (t[-1] - t[0]), t[-1])
    lo, hi = window
    mask = (t >= lo) & (t <= hi) & (gap.values > 1e-300)
    if int(np.count_nonzero(mask)) < 8:
        raise InsufficientDataError(
            f"only {int(np.count_nonzero(mask))} usable nodes in window")
    ts = t[mask]
    logs = np.log(gap.values[mask])
    design = np.column_stack([np.ones_like(ts), -ts])
    coef, *_ = np.linalg.lstsq(design, logs, rcond=None)
    log_m_prime, gamma = float(coef[0]), float(coef[1])
    resid = float(np.sqrt(np.mean((design @ coef - logs) ** 2)))
    gap0 = max(gap.initial(), 1e-300)
    return ExpFit(math.exp(log_m_prime) / gap0, gamma, resid,
                  (float(lo), float(hi)), int(np.count_nonzero(mask)))


@dataclass(frozen=True)
class MonotonicityResult:
    max_increase: float
    threshold: float
    passed: bool


def lyapunov_monotonicity(traj: Trajectory, p_cert: CertificateP) -> MonotonicityResult:
    """Largest nodal increase of <x, Px> along an unforced trajectory.

    Passes when the increase stays within the integrator tolerance
    allowance dt * 1e-6 * scale.
    """
    P = p_cert.P
    vals = np.einsum("ij,jk,ik->i", traj.states, P, traj.states)
    diffs = np.diff(vals)
    scale = 1.0 + float(np.max(np.abs(vals)))
    threshold = traj.dt * 1e-6 * scale
    max_inc = float(np.max(diffs)) if diffs.size else 0.0
    return MonotonicityResult(max_inc, threshold, max_inc <= threshold)


# ---------------------------------------------------------------------------
# integral-gain bound on ensembles


@dataclass(frozen=True)
class IissSurrogate:
    """Envelope constants: gap <= M exp(-gamma t) gap0 + gain * int ||dv||."""

    M: float
    gamma: float
    gain: float


@dataclass(frozen=True)
class IissVerdict:
    passed: bool
    worst_margin: float
    at_time: float


def fit_iiss_surrogates(
    gaps: Sequence[GapSeries],
    settle_fraction: float = 0.1,
    safety: float = 1.05,
) -> IissSurrogate:
    """Fit (M, gamma, gain) on a training ensemble.

    The decay rate comes from members with (numerically) equal forcings;
    M is then inflated to envelope those members everywhere, and the
    linear integral gain is the smallest constant covering the rest.
    """
    unforced = [g for g in gaps if g.forcing_l1[-1] <= 1e-12]
    if not unforced:
        raise InsufficientDataError("need at least one equal-forcing pair")
    gamma = math.inf
    for g in unforced:
        fit = fit_exponential(g)
        gamma = min(gamma, max(fit.gamma, 1e-12))
    M = 1.0
    for g in unforced:
        gap0 = max(g.initial(), 1e-300)
        ratios = g.values / (gap0 * np.exp(-gamma * g.times))
        M = max(M, float(np.max(ratios)))
    M *= safety
    gain = 0.0
    for g in gaps:
        if g.forcing_l1[-1] <= 1e-12:
            continue
        gap0 = max(g.initial(), 1e-300)
        psi = M * gap0 * np.exp(-gamma * g.times)
        excess = g.values - psi
        with np.errstate(divide="ignore", invalid="ignore"):
            ratios = np.where(g.forcing_l1 > 1e-12,
                              excess / np.maximum(g.forcing_l1, 1e-300), 0.0)
        gain = max(gain, float(np.max(ratios)))
    return IissSurrogate(M, gamma, gain * safety)


def iiss_bound_check(
    gaps: Sequence[GapSeries],
    surrogate: IissSurrogate,
    rel_tol: float = 1e-9,
) -> list:
    """Check the fitted envelope bound at every node of every member."""
    out = []
    for g in gaps:
        gap0 = max(g.initial(), 1e-300)
        bound = (surrogate.M * gap0 * np.exp(-surrogate.gamma * g.times)
                 + surrogate.gain * g.forcing_l1)
        margins = g.values - bound - rel_tol * (1.0 + bound)
        worst = int(np.argmax(margins))
        out.append(IissVerdict(bool(margins[worst] <= 0.0),
                               float(margins[worst]), float(g.times[worst])))
    return out
