"""Forcing-signal generators and almost-periodicity analysis.

Sliding-window (Stepanov) norms and period scans, window profiles,
generalized Fourier coefficients with frequency-module containment, and
the asymptotic decomposition check used by the entrainment experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

__all__ = [
    "SignalSpec",
    "StepanovReport",
    "SpectrumEstimate",
    "BochnerProfile",
    "ModuleCheckResult",
    "AapConvergenceResult",
    "sawtooth",
    "zero_signal",
    "constant_signal",
    "make_example_forcings",
    "signal_from_samples",
    "stepanov_norm",
    "stepanov_period_scan",
    "bochner_transform",
    "fourier_coefficient",
    "fourier_table",
    "module_containment",
    "aap_convergence_check",
]

_LEFT_EPS = 1e-12


def sawtooth(t):
    """Right-continuous sawtooth -1 + mod(t, 2*pi)/pi with range [-1, 1)."""
    t = np.asarray(t, dtype=float)
    out = -1.0 + np.mod(t, 2.0 * math.pi) / math.pi
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SignalSpec:
    """Closed-form or sampled forcing signal with a class tag.

    ``fn`` maps an array of times (N,) to values (N, m).  Jump times lie
    on the lattices ``offset + k * period`` listed in ``jump_lattices``.
    ``two_sided`` marks signals whose defining formula extends to
    negative times (used by the two-sided Fourier average).
    """

    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    m: int
    tag: str = "generic"  # periodic | ap | stepanov-ap | aap | generic
    period: Optional[float] = None
    frequencies: tuple = ()
    jump_lattices: tuple = ()  # of (period, offset)
    two_sided: bool = True

    def __post_init__(self):
        tags = ("periodic", "ap", "stepanov-ap", "aap", "generic")
        if self.tag not in tags:
            raise ValueError(f"tag must be one of {tags}")
        if self.tag == "periodic":
            if not self.period or self.period <= 0:
                raise ValueError("periodic signal needs a positive period")
            probe = np.linspace(0.0, 3.0, 17)
            a = self(probe)
            b = self(probe + self.period)
            if np.max(np.abs(a - b)) > 1e-12 * (1.0 + np.max(np.abs(a))):
                raise ValueError("declared period not satisfied at samples")

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        ts = t.reshape(1) if scalar else t
        out = np.asarray(self.fn(ts), dtype=float)
        if out.shape != (len(ts), self.m):
            out = out.reshape(len(ts), self.m)
        return out[0] if scalar else out

    def eval_left(self, t) -> np.ndarray:
        """Value just before t; differs from v(t) only at jumps."""
        t = np.asarray(t, dtype=float)
        return self(t - _LEFT_EPS * np.maximum(1.0, np.abs(t)))

    def breakpoints(self, t0: float, t1: float) -> np.ndarray:
        """Jump times strictly inside (t0, t1), sorted."""
        pts = []
        for period, offset in self.jump_lattices:
            k0 = math.floor((t0 - offset) / period) + 1
            k1 = math.ceil((t1 - offset) / period) - 1
            if k1 >= k0:
                pts.append(offset + period * np.arange(k0, k1 + 1))
        if not pts:
            return np.empty(0)
        out = np.unique(np.concatenate(pts))
        return out[(out > t0) & (out < t1)]

    def shifted(self, tau: float) -> "SignalSpec":
        """The shifted signal t -> v(t + tau)."""
        base = self
        lattices = tuple(
            (p, (off - tau) % p) for (p, off) in self.jump_lattices)
        return replace(
            self,
            name=f"{self.name}<<{tau:g}",
            fn=lambda ts, b=base, tau=tau: b.fn(np.asarray(ts) + tau),
            jump_lattices=lattices,
        )

    def __add__(self, other: "SignalSpec") -> "SignalSpec":
        if self.m != other.m:
            raise ValueError("signal dimensions differ")
        a, b = self, other
        return SignalSpec(
            name=f"{a.name}+{b.name}",
            fn=lambda ts: a.fn(np.asarray(ts)) + b.fn(np.asarray(ts)),
            m=a.m,
            tag="generic",
            frequencies=tuple(sorted(set(a.frequencies) | set(b.frequencies))),
            jump_lattices=a.jump_lattices + b.jump_lattices,
            two_sided=a.two_sided and b.two_sided,
        )


def zero_signal(m: int, name: str = "zero") -> SignalSpec:
    return SignalSpec(name, lambda ts: np.zeros((len(ts), m)), m,
                      tag="periodic", period=1.0)


def constant_signal(value, name: str = "const") -> SignalSpec:
    value = np.atleast_1d(np.asarray(value, dtype=float))
    return SignalSpec(
        name, lambda ts, v=value: np.tile(v, (len(ts), 1)), value.size,
        tag="periodic", period=1.0)


def make_example_forcings() -> dict:
    """The four benchmark forcings for the coupled mass-spring example.

    All act on the second channel only.  ``v_p`` is periodic, ``v_s`` is
    Stepanov almost periodic (discontinuous), ``v_ap`` is almost
    periodic, and ``v_aap`` adds a decaying transient to ``v_s``.
    """
    rate = 0.75
    p1 = 2.0 * math.pi / rate
    p2 = 2.0 * math.pi / (rate * math.sqrt(2.0))

    def e2(scalars):
        out = np.zeros((len(scalars), 2))
        out[:, 1] = scalars
        return out

    v_p = SignalSpec(
        "v_p", lambda ts: e2(sawtooth(rate * np.asarray(ts))), 2,
        tag="periodic", period=p1, jump_lattices=((p1, 0.0),))
    v_s = SignalSpec(
        "v_s",
        lambda ts: e2(sawtooth(rate * np.asarray(ts))
                      + sawtooth(rate * math.sqrt(2.0) * np.asarray(ts))),
        2, tag="stepanov-ap", jump_lattices=((p1, 0.0), (p2, 0.0)))
    v_ap = SignalSpec(
        "v_ap",
        lambda ts: e2(np.sin(2.0 * math.sqrt(2.0) * math.pi * np.asarray(ts))
                      + np.sin(2.0 * math.pi * np.asarray(ts))),
        2, tag="ap",
        frequencies=(2.0 * math.pi, 2.0 * math.sqrt(2.0) * math.pi))
    v_aap = SignalSpec(
        "v_aap",
        lambda ts: (v_s.fn(ts)
                    + e2(np.asarray(ts) * np.exp(-1.5 * np.asarray(ts)))),
        2, tag="aap", jump_lattices=v_s.jump_lattices, two_sided=False)
    return {"v_p": v_p, "v_s": v_s, "v_ap": v_ap, "v_aap": v_aap}


def signal_from_samples(times, values, name: str = "sampled") -> SignalSpec:
    """Linear-interpolation signal backed by uniform samples."""
    times = np.asarray(times, dtype=float)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[0] != times.size:
        values = values.T
    if values.shape[0] != times.size:
        raise ValueError("times and values lengths differ")
    steps = np.diff(times)
    if np.any(steps <= 0) or np.max(steps) - np.min(steps) > 1e-9 * np.mean(steps):
        raise ValueError("sample grid must be uniform and increasing")
    m = values.shape[1]

    def fn(ts, xp=times, yp=values):
        ts = np.asarray(ts, dtype=float)
        return np.column_stack([np.interp(ts, xp, yp[:, j]) for j in range(m)])

    return SignalSpec(name, fn, m, tag="generic", two_sided=False)


# ---------------------------------------------------------------------------
# Stepanov machinery


def _window_l1(v: SignalSpec, a: float, b: float, n_nodes: int) -> float:
    """Integral of ||v|| over [a, b] with jump splitting."""
    base = np.linspace(a, b, n_nodes + 1)
    bps = v.breakpoints(a, b)
    if bps.size:
        eps = _LEFT_EPS * np.maximum(1.0, np.abs(bps))
        nodes = np.unique(np.concatenate([base, bps - eps, bps]))
    else:
        nodes = base
    vals = np.linalg.norm(v(nodes), axis=1)
    return float(_trapezoid(vals, nodes))


def stepanov_norm(v: SignalSpec, t_end: float, window_step: float = 0.05,
                  n_nodes: int = 256) -> float:
    """Sliding-window norm sup_a int_a^{a+1} ||v|| dt over [0, t_end].

    Windows start on a grid of the given step; each unit-window integral
    uses composite trapezoid with splitting at declared jump times.
    """
    if t_end < 1.0:
        raise ValueError("need t_end >= 1 for a unit window")
    starts = np.arange(0.0, t_end - 1.0 + 1e-12, window_step)
    return max(_window_l1(v, a, a + 1.0, n_nodes) for a in starts)


@dataclass(frozen=True)
class StepanovReport:
    epsilon: float
    taus: np.ndarray
    distances: np.ndarray
    accepted: np.ndarray
    max_gap: float
    density_length: Optional[float]
    relatively_dense: Optional[bool]

    def accepted_taus(self) -> np.ndarray:
        return self.taus[self.accepted]


def stepanov_period_scan(
    v: SignalSpec,
    epsilon: float,
    tau_range,
    tau_step: Optional[float] = None,
    scan_range=(0.0, 40.0),
    density_length: Optional[float] = None,
    refine: int = 4,
) -> StepanovReport:
    """Scan shift candidates for sliding-window almost-periods.

    The shift grid and the quadrature grid are index-aligned (the
    integration step is ``tau_step / refine``) so each candidate distance
    ``sup_a int_a^{a+1} ||v(t+tau) - v(t)|| dt`` reduces to vectorized
    index shifts.  Jumps are not split here; the quadrature error scales
    with the integration step and is reported for ranking against
    epsilon, while exact periods still give exactly zero.
    """
    if tau_step is None:
        periods = [p for (p, _) in v.jump_lattices]
        if v.period:
            periods.append(v.period)
        if v.frequencies:
            periods.extend(2.0 * math.pi / f for f in v.frequencies if f > 0)
        tau_step = (min(periods) if periods else 1.0) / 200.0
    h = tau_step / refine
    scan0, scan1 = scan_range
    tau_lo, tau_hi = tau_range
    n_tau_lo = max(1, int(math.ceil(tau_lo / tau_step - 1e-9)))
    n_tau_hi = int(math.floor(tau_hi / tau_step + 1e-9))
    taus = tau_step * np.arange(n_tau_lo, n_tau_hi + 1)
    if taus.size == 0:
        raise ValueError("empty shift grid")
    t_max = scan1 + 1.0 + taus[-1] + h
    # half-cell offset keeps nodes off the jump lattice when the scan
    # grid is commensurate with a declared period
    ts = scan0 + h * (np.arange(int(math.ceil((t_max - scan0) / h)) + 1) + 0.5)
    V = v(ts)
    w = int(round(1.0 / h))
    n_windows = int(math.floor((scan1 - scan0) / h)) + 1
    dists = np.empty(taus.size)
    for i, tau in enumerate(taus):
        k = int(round(tau / h))
        diff = np.linalg.norm(V[k:] - V[: len(V) - k], axis=1)
        cells = 0.5 * h * (diff[:-1] + diff[1:])
        cum = np.concatenate([[0.0], np.cumsum(cells)])
        sums = cum[w:] - cum[:-w]
        dists[i] = float(np.max(sums[:n_windows]))
    accepted = dists <= epsilon
    if np.any(accepted):
        acc = taus[accepted]
        gaps = np.diff(acc)
        edges = [acc[0] - tau_lo, tau_hi - acc[-1]]
        max_gap = float(max(gaps.max() if gaps.size else 0.0, *edges))
    else:
        max_gap = math.inf
    dense = None if density_length is None else bool(max_gap <= density_length)
    return StepanovReport(epsilon, taus, dists, accepted, max_gap,
                          density_length, dense)


@dataclass(frozen=True)
class BochnerProfile:
    """Unit-window profile s -> v(t + s), sampled on quadrature nodes."""

    t: float
    s_nodes: np.ndarray
    values: np.ndarray

    def l1_distance(self, other: "BochnerProfile") -> float:
        if self.s_nodes.shape != other.s_nodes.shape:
            raise ValueError("profiles use different node sets")
        diff = np.linalg.norm(self.values - other.values, axis=1)
        return float(_trapezoid(diff, self.s_nodes))


def bochner_transform(v: SignalSpec, t: float, quad_nodes: int = 256) -> BochnerProfile:
    s = np.linspace(0.0, 1.0, quad_nodes + 1)
    return BochnerProfile(float(t), s, v(t + s))


# ---------------------------------------------------------------------------
# generalized Fourier coefficients


def _oscillation_density(v: SignalSpec, lam: float) -> int:
    """Sample nodes per unit time, scaled to the fastest oscillation."""
    freq = abs(lam)
    if v.frequencies:
        freq += max(abs(f) for f in v.frequencies)
    for period, _ in v.jump_lattices:
        freq += 2.0 * math.pi / period
    if v.period:
        freq += 2.0 * math.pi / v.period
    cycles = freq / (2.0 * math.pi)
    return int(max(64, math.ceil(48 * cycles)))


def _averaged_transform(v: SignalSpec, lam: float, t0: float, t1: float,
                        nodes_per_unit: int, window: Optional[str]) -> np.ndarray:
    base = np.linspace(t0, t1, int((t1 - t0) * nodes_per_unit) + 1)
    bps = v.breakpoints(t0, t1)
    if bps.size:
        eps = _LEFT_EPS * np.maximum(1.0, np.abs(bps))
        nodes = np.unique(np.concatenate([base, bps - eps, bps]))
    else:
        nodes = base
    vals = v(nodes)
    phase = np.exp(-1j * lam * nodes)
    if window == "hann":
        wts = 0.5 * (1.0 - np.cos(2.0 * math.pi * (nodes - t0) / (t1 - t0)))
        norm = _trapezoid(wts, nodes)
    else:
        wts = np.ones_like(nodes)
        norm = t1 - t0
    integrand = (wts * phase)[:, None] * vals
    return _trapezoid(integrand, nodes, axis=0) / norm


def fourier_coefficient(
    v: SignalSpec,
    lam: float,
    T: float,
    nodes_per_unit: Optional[int] = None,
    window: Optional[str] = None,
) -> np.ndarray:
    """Generalized Fourier coefficient estimate at frequency lam.

    Signals whose formula extends to negative times are averaged over
    [-T, T]; one-sided signals (asymptotically almost periodic, sampled)
    over [0, T].  Both averages converge to the same limit for almost
    periodic signals.  Optional Hann windowing suppresses spectral
    leakage for sampled trajectories.
    """
    if T <= 0:
        raise ValueError("averaging horizon must be positive")
    npu = nodes_per_unit or _oscillation_density(v, lam)
    if v.two_sided:
        return _averaged_transform(v, lam, -T, T, npu, window)
    return _averaged_transform(v, lam, 0.0, T, npu, window)


@dataclass(frozen=True)
class SpectrumEstimate:
    frequencies: np.ndarray
    coefficients: np.ndarray  # (n_freq, m) complex
    horizon: float
    proxies: np.ndarray  # |coef_T - coef_{T/2}| per frequency
    floor: float

    def magnitudes(self) -> np.ndarray:
        return np.linalg.norm(self.coefficients, axis=1)

    def significant(self) -> np.ndarray:
        return self.frequencies[self.magnitudes() > self.floor]


def fourier_table(
    v: SignalSpec,
    frequencies: Sequence[float],
    T: float,
    window: Optional[str] = None,
    floor: Optional[float] = None,
) -> SpectrumEstimate:
    """Coefficient table with truncation proxies at the given frequencies."""
    freqs = np.asarray(list(frequencies), dtype=float)
    coefs = np.array([fourier_coefficient(v, f, T, window=window) for f in freqs])
    half = np.array([fourier_coefficient(v, f, T / 2.0, window=window)
                     for f in freqs])
    proxies = np.linalg.norm(coefs - half, axis=1)
    if floor is None:
        mags = np.linalg.norm(coefs, axis=1)
        floor = max(2.0 * float(np.max(proxies)), 0.02 * float(np.max(mags)))
    return SpectrumEstimate(freqs, coefs, float(T), proxies, float(floor))


@dataclass(frozen=True)
class ModuleCheckResult:
    contained: bool
    witnesses: dict  # frequency -> tuple of (coeff, generator) or None

    def __bool__(self):
        return self.contained


def _frequencies_of(spectrum) -> np.ndarray:
    if isinstance(spectrum, SpectrumEstimate):
        return spectrum.significant()
    return np.asarray(list(spectrum), dtype=float)


def module_containment(
    spectrum_a,
    spectrum_b,
    tol: float = 1e-6,
    max_coeff: int = 6,
    max_terms: int = 3,
) -> ModuleCheckResult:
    """Is every frequency of A an integer combination of B's frequencies?

    The search enumerates combinations of at most ``max_terms``
    generators with integer coefficients bounded by ``max_coeff`` in
    absolute value; a documented, bounded-depth test.
    """
    freqs_a = _frequencies_of(spectrum_a)
    gens = [float(g) for g in np.unique(np.abs(_frequencies_of(spectrum_b)))
            if g > tol]
    witnesses = {}
    contained = True
    from itertools import combinations, product

    combos = [((0,), (0.0,), 0.0)]
    values = {}
    for k in range(1, min(max_terms, len(gens)) + 1):
        for subset in combinations(range(len(gens)), k):
            for coeffs in product(range(-max_coeff, max_coeff + 1), repeat=k):
                if all(c == 0 for c in coeffs):
                    continue
                val = sum(c * gens[i] for c, i in zip(coeffs, subset))
                key = tuple(zip(coeffs, (gens[i] for i in subset)))
                values.setdefault(round(val, 12), key)
    combo_vals = np.array(list(values.keys()))
    combo_keys = list(values.values())
    for f in freqs_a:
        if abs(f) <= tol:
            witnesses[float(f)] = ()
            continue
        idx = int(np.argmin(np.abs(combo_vals - f)))
        if abs(combo_vals[idx] - f) <= tol:
            witnesses[float(f)] = combo_keys[idx]
        else:
            witnesses[float(f)] = None
            contained = False
    return ModuleCheckResult(contained, witnesses)


# ---------------------------------------------------------------------------
# asymptotic decomposition


@dataclass(frozen=True)
class AapConvergenceResult:
    passed: bool
    times: np.ndarray
    tail_sup: np.ndarray
    final_decile_sup: float
    threshold: float


def _coerce_path(obj):
    if hasattr(obj, "times") and hasattr(obj, "states"):
        return np.asarray(obj.times, float), np.asarray(obj.states, float)
    times, states = obj
    return np.asarray(times, float), np.asarray(states, float)


def aap_convergence_check(x, z_ap, threshold: float = 1e-2) -> AapConvergenceResult:
    """Tail sup-norm curve of x - z_ap and a final-decile verdict.

    ``tail_sup[i]`` is the supremum of the gap over [t_i, T]; the check
    passes when the supremum over the final tenth of the horizon is at
    most the threshold.
    """
    tx, sx = _coerce_path(x)
    tz, sz = _coerce_path(z_ap)
    if tx.shape != tz.shape or np.max(np.abs(tx - tz)) > 1e-12 * (1 + tx[-1]):
        raise ValueError("trajectories use different time grids")
    gap = np.linalg.norm(sx - sz, axis=1)
    tail = np.maximum.accumulate(gap[::-1])[::-1]
    t_decile = tx[0] + 0.9 * (tx[-1] - tx[0])
    idx = int(np.searchsorted(tx, t_decile))
    idx = min(idx, len(tx) - 1)
    final = float(tail[idx])
    return AapConvergenceResult(final <= threshold, tx, tail, final, threshold)
