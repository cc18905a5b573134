"""Nonlinearities and set-valued sector correspondences.

Covers evaluation of the feedback nonlinearity, membership and selection
in the sector-bounded correspondences used by the incremental stability
setup, Hausdorff-distance sampling, and grid verification of the
incremental sector hypotheses (upper envelope, monotonicity variants,
and alignment).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import comparison
from .comparison import ScalarFunc

__all__ = [
    "SectorData",
    "Nonlinearity",
    "CompactSetSpec",
    "SectorViolationError",
    "MembershipResult",
    "CheckOutcome",
    "HypothesisReport",
    "HypothesisGrid",
    "SectorCandidates",
    "power_law_eval",
    "power_law_nonlinearity",
    "identity_nonlinearity",
    "neg_identity_nonlinearity",
    "custom_nonlinearity",
    "diagonal_compose",
    "nonlinearity_from_spec",
    "apply_technical_normalization",
    "sector_membership",
    "canonical_selection",
    "sector_interval_1d",
    "sample_selections",
    "sector_hausdorff",
    "verify_sector_hypotheses",
    "infimum_lower_bound",
    "derive_alignment_constants",
    "sector_epsilon",
    "check_sector_product_bounds",
]


class SectorViolationError(ValueError):
    """A sampled point contradicts a sector hypothesis."""

    def __init__(self, message, location=None):
        super().__init__(message)
        self.location = location


# ---------------------------------------------------------------------------
# sector data


_SECTOR_GRID = np.concatenate(([0.0], np.geomspace(1e-6, 50.0, 120)))


@dataclass(frozen=True)
class SectorData:
    """Bounding data for the sector correspondences.

    ``variant="F"`` carries the alignment condition
    ``c*<w,y> >= ||w||`` for ``||y|| > mu``; ``variant="F0"`` drops it.
    ``theta_original`` records the pre-normalization upper bound when the
    upper envelope was inflated to make sqrt(theta^2 - alpha^2)
    non-decreasing.
    """

    theta: ScalarFunc
    alpha: ScalarFunc
    mu: float
    c: float
    variant: str = "F"
    theta_original: Optional[ScalarFunc] = None

    def __post_init__(self):
        if self.variant not in ("F", "F0"):
            raise ValueError(f"unknown sector variant {self.variant!r}")
        if self.theta.cls != "Kinf":
            raise ValueError("theta must be of class Kinf")
        if self.alpha.cls not in ("P", "K", "Kinf"):
            raise ValueError("alpha must be of class P, K or Kinf")
        if self.mu <= 0 or self.c <= 0:
            raise ValueError("mu and c must be positive")
        if self.c * self.mu < 1.0 - 1e-12:
            raise ValueError("need c * mu >= 1")
        th = self.theta(_SECTOR_GRID)
        al = self.alpha(_SECTOR_GRID)
        tol = 1e-10 * (1.0 + np.abs(th))
        if np.any(al > th + tol):
            s_bad = _SECTOR_GRID[np.argmax(al - th)]
            raise ValueError(f"alpha exceeds theta at s = {s_bad:.6g}")
        if self.variant == "F0":
            r = np.sqrt(np.maximum(th**2 - al**2, 0.0))
            if np.any(np.diff(r) < -1e-9 * (1.0 + r[:-1])):
                raise ValueError(
                    "sqrt(theta^2 - alpha^2) decreases on the check grid; "
                    "apply_technical_normalization can repair this"
                )

    def radial_gap(self, s):
        """sqrt(theta(s)^2 - alpha(s)^2), the half-width of the 1-d section."""
        th = np.asarray(self.theta(s), dtype=float)
        al = np.asarray(self.alpha(s), dtype=float)
        out = np.sqrt(np.maximum(th**2 - al**2, 0.0))
        return float(out) if out.ndim == 0 else out

    def as_dict(self):
        """Serializable description using function descriptors."""
        return {
            "theta": self.theta.descriptor or "custom",
            "alpha": self.alpha.descriptor or "custom",
            "mu": self.mu,
            "c": self.c,
            "variant": self.variant,
            "theta_original": (None if self.theta_original is None
                               else self.theta_original.descriptor or "custom"),
        }


def apply_technical_normalization(sector: SectorData) -> SectorData:
    """Inflate the upper bound to theta + alpha.

    This forces sqrt(theta^2 - alpha^2) to be non-decreasing while the
    inflated bound stays within sqrt(3) of the original.  The original
    upper bound is kept on ``theta_original``.
    """
    original = sector.theta_original or sector.theta
    th, al = sector.theta, sector.alpha
    inflated = comparison.from_callable(
        lambda s, t=th, a=al: t(s) + a(s),
        "Kinf",
        descriptor="theta+alpha",
    )
    return replace(sector, theta=inflated, theta_original=original)


# ---------------------------------------------------------------------------
# nonlinearities


def power_law_eval(a0: float, a1: float, d: float, z):
    """Odd power law a0*z + a1*z*|z|**d.

    ``d`` may be any real >= 1; fractional exponents occur in the
    worked mass-spring examples.
    """
    if a0 < 0 or a1 <= 0 or d < 1:
        raise ValueError("need a0 >= 0, a1 > 0, d >= 1")
    z = np.asarray(z, dtype=float)
    out = a0 * z + a1 * z * np.abs(z) ** d
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Nonlinearity:
    """Evaluable feedback map f(t, y) with declared structure.

    The evaluator is vectorized: it accepts y of shape (..., m) and
    returns the same shape.  ``structure`` is one of ``"time-invariant"``,
    ``"diagonal"``, ``"power-law"`` or ``"custom"``.
    """

    fn: Callable[[float, np.ndarray], np.ndarray]
    m: int
    structure: str
    time_varying: bool = False
    params: dict = field(default_factory=dict)
    components: tuple = ()
    name: str = "custom"

    def __call__(self, t: float, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        scalar = y.ndim == 0
        if scalar:
            y = y.reshape(1)
        if y.shape[-1] != self.m:
            raise ValueError(f"expected last axis {self.m}, got {y.shape[-1]}")
        out = np.asarray(self.fn(t, y), dtype=float)
        return out[0] if scalar and self.m == 1 else out

    def check_time_bound(self, y0, t_max: float = 100.0, n: int = 200) -> float:
        """Largest sampled ||f(t, y0)||; finite by the standing assumption."""
        y0 = np.atleast_1d(np.asarray(y0, dtype=float))
        ts = np.linspace(0.0, t_max, n)
        vals = np.array([np.linalg.norm(np.atleast_1d(self(t, y0))) for t in ts])
        if not np.all(np.isfinite(vals)):
            raise SectorViolationError("f(t, y0) not bounded on sampled times")
        return float(vals.max())

    def check_local_lipschitz(self, radius: float = 5.0, n: int = 60,
                              t_samples=(0.0,)) -> float:
        """Empirical Lipschitz constant of y -> f(t, y) on a ball grid."""
        pts = _ball_grid(self.m, radius, n)
        worst = 0.0
        for t in t_samples:
            vals = self(t, pts)
            vals = vals.reshape(len(pts), self.m)
            # nearest-neighbour difference quotients along the grid order
            dy = np.linalg.norm(np.diff(pts, axis=0), axis=1)
            df = np.linalg.norm(np.diff(vals, axis=0), axis=1)
            ok = dy > 1e-12
            worst = max(worst, float(np.max(df[ok] / dy[ok])))
        if not math.isfinite(worst):
            raise SectorViolationError("non-finite difference quotient sampled")
        return worst


def power_law_nonlinearity(a0: float, a1: float, d: float) -> Nonlinearity:
    if a0 < 0 or a1 <= 0 or d < 1:
        raise ValueError("need a0 >= 0, a1 > 0, d >= 1")

    def fn(t, y, a0=a0, a1=a1, d=d):
        return a0 * y + a1 * y * np.abs(y) ** d

    return Nonlinearity(
        fn, 1, "power-law", params={"a0": a0, "a1": a1, "d": d},
        name=f"power-law:{a0},{a1},{d}",
    )


def identity_nonlinearity(m: int = 1) -> Nonlinearity:
    return Nonlinearity(lambda t, y: y, m, "time-invariant", name="identity")


def neg_identity_nonlinearity(m: int = 1) -> Nonlinearity:
    """Sign-violating map used as a negative control in verification."""
    return Nonlinearity(lambda t, y: -y, m, "time-invariant", name="neg-identity")


def custom_nonlinearity(fn, m: int, time_varying: bool = False,
                        name: str = "custom") -> Nonlinearity:
    return Nonlinearity(fn, m, "custom", time_varying=time_varying, name=name)


def diagonal_compose(components: Sequence[Nonlinearity]) -> Nonlinearity:
    """Stack scalar nonlinearities componentwise."""
    components = tuple(components)
    if not components:
        raise ValueError("need at least one component")
    if any(c.m != 1 for c in components):
        raise ValueError("diagonal components must be scalar")
    m = len(components)

    if all(c.structure == "power-law" for c in components):
        a0 = np.array([c.params["a0"] for c in components])
        a1 = np.array([c.params["a1"] for c in components])
        d = np.array([c.params["d"] for c in components])

        def fn(t, y, a0=a0, a1=a1, d=d):
            return a0 * y + a1 * y * np.abs(y) ** d

    else:
        def fn(t, y, comps=components):
            y = np.asarray(y, dtype=float)
            cols = [np.asarray(c.fn(t, y[..., i:i + 1])).reshape(y[..., i].shape)
                    for i, c in enumerate(comps)]
            return np.stack(cols, axis=-1)

    return Nonlinearity(
        fn, m, "diagonal",
        time_varying=any(c.time_varying for c in components),
        components=components,
        name="diagonal[" + ",".join(c.name for c in components) + "]",
    )


def nonlinearity_from_spec(spec, m: Optional[int] = None) -> Nonlinearity:
    """Build a preset nonlinearity from a config string.

    Accepted forms: ``identity``, ``neg-identity``,
    ``power-law:a0,a1,d`` and ``diagonal[<spec>;<spec>;...]``.
    """
    if isinstance(spec, Nonlinearity):
        return spec
    s = str(spec).strip()
    if s.startswith("diagonal[") and s.endswith("]"):
        parts = [p for p in s[len("diagonal["):-1].split(";") if p.strip()]
        return diagonal_compose([nonlinearity_from_spec(p, 1) for p in parts])
    if s == "identity":
        return identity_nonlinearity(m or 1)
    if s == "neg-identity":
        return neg_identity_nonlinearity(m or 1)
    if s.startswith("power-law:"):
        a0, a1, d = (float(x) for x in s[len("power-law:"):].split(","))
        return power_law_nonlinearity(a0, a1, d)
    raise ValueError(f"unknown nonlinearity spec {spec!r}")


# ---------------------------------------------------------------------------
# compact sets


@dataclass(frozen=True)
class CompactSetSpec:
    """Closed ball or explicit finite point cloud in R^m."""

    m: int
    center: Optional[np.ndarray] = None
    radius: Optional[float] = None
    points: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.points is not None:
            pts = np.atleast_2d(np.asarray(self.points, dtype=float))
            if pts.shape[1] != self.m or not np.all(np.isfinite(pts)):
                raise ValueError("point cloud must be finite with m columns")
            object.__setattr__(self, "points", pts)
        else:
            if self.radius is None or self.radius < 0:
                raise ValueError("ball spec needs a nonnegative radius")
            c = np.zeros(self.m) if self.center is None else np.asarray(
                self.center, dtype=float)
            if c.shape != (self.m,):
                raise ValueError("center must have length m")
            object.__setattr__(self, "center", c)

    @staticmethod
    def ball(m: int, radius: float, center=None) -> "CompactSetSpec":
        return CompactSetSpec(m=m, center=center, radius=radius)

    @staticmethod
    def cloud(points) -> "CompactSetSpec":
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return CompactSetSpec(m=pts.shape[1], points=pts)

    def sample_points(self, n: int) -> np.ndarray:
        """Deterministic representative points (shape (k, m), k <= n)."""
        if self.points is not None:
            return self.points
        if self.radius == 0:
            return self.center.reshape(1, self.m)
        if self.m == 1:
            xs = np.linspace(-self.radius, self.radius, n)
            return (self.center + xs[:, None]).reshape(-1, 1)
        grid = _ball_grid(self.m, self.radius, n)
        return self.center + grid


def _ball_grid(m: int, radius: float, n: int) -> np.ndarray:
    """Deterministic points filling a ball: rings in 2-d, Halton-like in m>2."""
    if m == 1:
        return np.linspace(-radius, radius, n).reshape(-1, 1)
    if m == 2:
        pts = [np.zeros(2)]
        n_rings = max(2, int(math.sqrt(n)))
        for i in range(1, n_rings + 1):
            r = radius * i / n_rings
            k = max(4, int(round(2 * math.pi * i)))
            ang = np.linspace(0.0, 2 * math.pi, k, endpoint=False)
            pts.append(np.column_stack([r * np.cos(ang), r * np.sin(ang)]))
            if sum(len(np.atleast_2d(p)) for p in pts) >= n:
                break
        out = np.vstack([np.atleast_2d(p) for p in pts])
        return out[:n]
    rng = np.random.default_rng(1234 + m)
    raw = rng.standard_normal((n, m))
    raw /= np.maximum(np.linalg.norm(raw, axis=1, keepdims=True), 1e-300)
    radii = radius * rng.random(n) ** (1.0 / m)
    return raw * radii[:, None]


def _unit_directions(m: int, n: int) -> np.ndarray:
    if m == 1:
        return np.array([[1.0], [-1.0]])
    if m == 2:
        ang = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
        return np.column_stack([np.cos(ang), np.sin(ang)])
    rng = np.random.default_rng(4321 + m)
    dirs = rng.standard_normal((n, m))
    return dirs / np.linalg.norm(dirs, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# membership, selection, geometry


@dataclass(frozen=True)
class MembershipResult:
    ok: bool
    norm_bound: bool
    monotone_bound: bool
    alignment_bound: Optional[bool]

    def __bool__(self):
        return self.ok


def _sector_tol(*magnitudes) -> float:
    return 1e-10 * (1.0 + sum(abs(float(v)) for v in magnitudes))


def sector_membership(w, y, sector: SectorData) -> MembershipResult:
    """Check w against the defining inequalities of the correspondence at y."""
    w = np.atleast_1d(np.asarray(w, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if w.shape != y.shape:
        raise ValueError("w and y must have matching shape")
    ny, nw = np.linalg.norm(y), np.linalg.norm(w)
    inner = float(np.dot(w, y))
    th = float(sector.theta(ny))
    al = float(sector.alpha(ny))
    tol = _sector_tol(nw, th, inner, ny * al)
    norm_ok = bool(nw <= th + tol)
    mono_ok = bool(inner >= ny * al - tol)
    align_ok: Optional[bool] = None
    if sector.variant == "F" and ny > sector.mu:
        align_ok = bool(sector.c * inner >= nw - tol)
    ok = norm_ok and mono_ok and (align_ok is not False)
    return MembershipResult(ok, norm_ok, mono_ok, align_ok)


def canonical_selection(y, sector: SectorData) -> np.ndarray:
    """The boundary selection theta(||y||) * y / ||y|| (zero at zero)."""
    y = np.atleast_1d(np.asarray(y, dtype=float))
    ny = np.linalg.norm(y)
    if ny == 0.0:
        return np.zeros_like(y)
    return float(sector.theta(ny)) * y / ny


def sector_interval_1d(y: float, sector: SectorData):
    """Exact signed interval of the correspondence in one dimension."""
    y = float(y)
    if y == 0.0:
        return (0.0, 0.0)
    a = float(sector.alpha(abs(y)))
    t = float(sector.theta(abs(y)))
    if y > 0:
        return (a, t)
    return (-t, -a)


def sample_selections(y, sector: SectorData, rng: np.random.Generator,
                      n_random: int = 6) -> np.ndarray:
    """Canonical plus random members of the correspondence at y.

    Random members are drawn in the (axis, orthogonal) coordinates of the
    section; draws violating the alignment condition of variant F are
    rejected with capped retries.  Always returns at least the canonical
    selection.
    """
    y = np.atleast_1d(np.asarray(y, dtype=float))
    m = y.size
    ny = np.linalg.norm(y)
    picks = [canonical_selection(y, sector)]
    if ny == 0.0 or n_random <= 0:
        return np.array(picks)
    al = float(sector.alpha(ny))
    th = float(sector.theta(ny))
    yhat = y / ny
    if m > 1:
        basis = _orthonormal_complement(yhat)
    for _ in range(4 * n_random):
        if len(picks) >= n_random + 1:
            break
        a = al + (th - al) * rng.random()
        b_max = math.sqrt(max(th**2 - a**2, 0.0))
        if m == 1:
            w = a * yhat
        else:
            bdir = basis @ _random_unit(rng, m - 1)
            w = a * yhat + (b_max * (2 * rng.random() - 1.0)) * bdir
        if sector_membership(w, y, sector):
            picks.append(w)
    return np.array(picks)


def _random_unit(rng, m):
    v = rng.standard_normal(m)
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.eye(m)[0]


def _orthonormal_complement(unit: np.ndarray) -> np.ndarray:
    """Columns spanning the orthogonal complement of a unit vector."""
    m = unit.size
    full = np.eye(m) - np.outer(unit, unit)
    q, r = np.linalg.qr(full)
    keep = np.abs(np.diag(r)) > 1e-12
    return q[:, keep][:, : m - 1]


def _f0_boundary(y: np.ndarray, sector: SectorData, n: int) -> np.ndarray:
    """Boundary samples of the (alignment-free) section at y in m = 2."""
    ny = np.linalg.norm(y)
    if ny == 0.0:
        return np.zeros((1, 2))
    al = float(sector.alpha(ny))
    th = float(sector.theta(ny))
    r = math.sqrt(max(th**2 - al**2, 0.0))
    yhat = y / ny
    perp = np.array([-yhat[1], yhat[0]])
    phi_max = math.acos(min(max(al / th, -1.0), 1.0)) if th > 0 else 0.0
    n_arc = max(n // 2, 2)
    n_chord = max(n - n_arc, 2)
    phis = np.linspace(-phi_max, phi_max, n_arc)
    arc = th * (np.cos(phis)[:, None] * yhat + np.sin(phis)[:, None] * perp)
    bs = np.linspace(-r, r, n_chord)
    chord = al * yhat + bs[:, None] * perp
    return np.vstack([arc, chord])


def sector_hausdorff(y1, y2, sector: SectorData,
                     n_boundary: int = 512) -> float:
    """Hausdorff distance between the alignment-free sections at y1 and y2.

    Exact interval arithmetic in one dimension; sampled boundary
    discretization in two.  Higher dimensions are unsupported.
    """
    y1 = np.atleast_1d(np.asarray(y1, dtype=float))
    y2 = np.atleast_1d(np.asarray(y2, dtype=float))
    m = y1.size
    if m == 1:
        lo1, hi1 = sector_interval_1d(float(y1[0]), sector)
        lo2, hi2 = sector_interval_1d(float(y2[0]), sector)
        return max(abs(lo1 - lo2), abs(hi1 - hi2))
    if m != 2:
        raise ValueError("sector_hausdorff supports m in {1, 2} only")
    f0 = replace(sector, variant="F0") if sector.variant != "F0" else sector
    b1 = _f0_boundary(y1, f0, n_boundary)
    b2 = _f0_boundary(y2, f0, n_boundary)

    def directed(src, dst_boundary, dst_y):
        worst = 0.0
        for w in src:
            if sector_membership(w, dst_y, f0):
                continue
            d = float(np.min(np.linalg.norm(dst_boundary - w, axis=1)))
            worst = max(worst, d)
        return worst

    return max(directed(b1, b2, y2), directed(b2, b1, y1))


# ---------------------------------------------------------------------------
# hypothesis verification


@dataclass(frozen=True)
class HypothesisGrid:
    """Sampling plan for the incremental sector hypotheses.

    Radial grids mix a linear sweep of the declared ball with a geometric
    ladder of small radii so that behaviour near zero is visible.
    """

    radius: float = 10.0
    n_radial: int = 64
    n_angular: int = 32
    n_gamma: int = 25
    n_time: int = 5
    t_max: float = 100.0
    small_radii: tuple = (1e-4, 1e-3, 1e-2, 1e-1)

    def radii(self) -> np.ndarray:
        lin = np.linspace(self.radius / self.n_radial, self.radius, self.n_radial)
        return np.unique(np.concatenate([np.asarray(self.small_radii), lin]))

    def directions(self, m: int) -> np.ndarray:
        if m == 1:
            return np.array([[1.0], [-1.0]])
        return _unit_directions(m, self.n_angular)

    def increments(self, m: int) -> np.ndarray:
        radii = self.radii()
        dirs = self.directions(m)
        return (radii[:, None, None] * dirs[None, :, :]).reshape(-1, m)

    def times(self, time_varying: bool) -> np.ndarray:
        if not time_varying:
            return np.array([0.0])
        return np.linspace(0.0, self.t_max, self.n_time)


@dataclass(frozen=True)
class SectorCandidates:
    """Candidate bounding data to test the hypotheses against."""

    theta: ScalarFunc
    alpha: ScalarFunc
    mu: float = 1.0
    c: float = 1.0
    linear_rate: Optional[float] = None


@dataclass(frozen=True)
class CheckOutcome:
    name: str
    passed: bool
    worst_margin: float
    at: Optional[dict] = None


@dataclass(frozen=True)
class HypothesisReport:
    upper_envelope: CheckOutcome
    monotonicity: CheckOutcome
    monotonicity_kinf: CheckOutcome
    alignment: CheckOutcome
    strong_monotonicity: CheckOutcome

    def outcomes(self):
        return (self.upper_envelope, self.monotonicity, self.monotonicity_kinf,
                self.alignment, self.strong_monotonicity)

    def as_dict(self):
        return {
            o.name: {
                "passed": bool(o.passed),
                "worst_margin": float(o.worst_margin),
                "at": o.at,
            }
            for o in self.outcomes()
        }


def _increment_values(f: Nonlinearity, ys: np.ndarray, zs: np.ndarray,
                      ts: np.ndarray):
    """f(t, y + z) - f(t, z) for all (t, y, z); shape (T, Ny, Nz, m)."""
    ny, nz, m = len(ys), len(zs), ys.shape[1]
    out = np.empty((len(ts), ny, nz, m))
    shifted = ys[:, None, :] + zs[None, :, :]
    for it, t in enumerate(ts):
        out[it] = f(t, shifted) - f(t, zs[None, :, :])
    return out


def verify_sector_hypotheses(
    f: Nonlinearity,
    gamma: CompactSetSpec,
    candidates: SectorCandidates,
    grid: Optional[HypothesisGrid] = None,
) -> HypothesisReport:
    """Grid verification of the incremental sector hypotheses.

    The five checks, in report order: the upper envelope bound, the
    positive-definite monotonicity lower bound, the same bound with an
    unbounded (class K-infinity) candidate, the alignment inequality
    outside the ball of radius mu, and strong monotonicity (a linear
    lower rate).  Grid verdicts are sound for refutation and evidence
    only for satisfaction.
    """
    grid = grid or HypothesisGrid()
    ys = grid.increments(f.m)
    zs = gamma.sample_points(grid.n_gamma)
    ts = grid.times(f.time_varying)
    diffs = _increment_values(f, ys, zs, ts)

    y_norms = np.linalg.norm(ys, axis=1)
    d_norms = np.linalg.norm(diffs, axis=3)
    inner = np.einsum("tijk,ik->tij", diffs, ys)
    sup_d = d_norms.max(axis=(0, 2))
    inf_inner = inner.min(axis=(0, 2))

    def locate(arr_t_i_j, idx_flat):
        it, iy, iz = np.unravel_index(idx_flat, arr_t_i_j.shape)
        return {"t": float(ts[it]), "y": ys[iy].tolist(), "z": zs[iz].tolist()}

    # upper envelope
    th = candidates.theta(y_norms)
    margins = sup_d - th
    tol = 1e-10 * (1.0 + np.abs(th) + sup_d)
    worst = int(np.argmax(margins / tol))
    viol = d_norms - th[None, :, None]
    upper = CheckOutcome(
        "upper_envelope",
        bool(np.all(margins <= tol)),
        float(margins[worst]),
        locate(viol, int(np.argmax(viol))),
    )

    # monotonicity lower bounds
    al = candidates.alpha(y_norms)
    need = y_norms * al
    mono_margin = need - inf_inner
    tol_m = 1e-10 * (1.0 + np.abs(need) + np.abs(inf_inner))
    mono_ok = bool(np.all(mono_margin <= tol_m))
    viol_m = need[None, :, None] - inner
    mono_at = locate(viol_m, int(np.argmax(viol_m)))
    monotonicity = CheckOutcome(
        "monotonicity", mono_ok, float(np.max(mono_margin)), mono_at)
    monotonicity_kinf = CheckOutcome(
        "monotonicity_kinf",
        mono_ok and candidates.alpha.cls == "Kinf",
        float(np.max(mono_margin)),
        mono_at,
    )

    # alignment outside the mu-ball
    outside = y_norms > candidates.mu
    if np.any(outside):
        lhs = d_norms[:, outside, :]
        rhs = candidates.c * inner[:, outside, :]
        a_tol = 1e-10 * (1.0 + np.abs(lhs) + np.abs(rhs))
        a_viol = lhs - rhs
        ok = bool(np.all(a_viol <= a_tol))
        ys_out = ys[outside]
        it, iy, iz = np.unravel_index(int(np.argmax(a_viol)), a_viol.shape)
        alignment = CheckOutcome(
            "alignment", ok, float(np.max(a_viol)),
            {"t": float(ts[it]), "y": ys_out[iy].tolist(), "z": zs[iz].tolist()},
        )
    else:
        alignment = CheckOutcome("alignment", True, 0.0, None)

    # strong monotonicity: a positive linear lower rate must survive y -> 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = inf_inner / np.maximum(y_norms**2, 1e-300)
    if candidates.linear_rate is not None:
        rate = candidates.linear_rate
        sm_margin = rate * y_norms**2 - inf_inner
        sm_tol = 1e-10 * (1.0 + rate * y_norms**2 + np.abs(inf_inner))
        sm_ok = bool(np.all(sm_margin <= sm_tol))
        strong = CheckOutcome(
            "strong_monotonicity", sm_ok, float(np.max(sm_margin)),
            {"rate": rate},
        )
    else:
        strong = _strong_monotonicity_from_decay(y_norms, ratio)

    return HypothesisReport(upper, monotonicity, monotonicity_kinf,
                            alignment, strong)


def _strong_monotonicity_from_decay(y_norms, ratio) -> CheckOutcome:
    """Refute a linear lower rate when the ratio <y,df>/||y||^2 vanishes.

    With no candidate rate supplied, the hypothesis is declared failed
    when the worst-direction ratio decays at least like sqrt(r) between
    the two smallest sampled radii, which is evidence that its limit at
    zero is zero.
    """
    order = np.argsort(y_norms)
    y_sorted = y_norms[order]
    r_sorted = ratio[order]
    radii, idx = np.unique(np.round(y_sorted, 12), return_inverse=True)
    per_radius = np.array(
        [r_sorted[idx == k].min() for k in range(len(radii))])
    if np.any(per_radius <= 0):
        k = int(np.argmin(per_radius))
        return CheckOutcome("strong_monotonicity", False,
                            float(-per_radius[k]), {"radius": float(radii[k])})
    if len(radii) < 2:
        return CheckOutcome("strong_monotonicity", True, 0.0, None)
    r0, r1 = radii[0], radii[1]
    decay = per_radius[0] / per_radius[1]
    threshold = math.sqrt(r0 / r1)
    passed = decay > threshold
    rate = float(per_radius.min())
    return CheckOutcome(
        "strong_monotonicity", passed, float(threshold - decay),
        {"rate": rate, "decay": float(decay), "radii": [float(r0), float(r1)]},
    )


def infimum_lower_bound(
    f: Nonlinearity,
    gamma: CompactSetSpec,
    radial_grid=None,
    n_directions: int = 32,
    n_gamma: int = 25,
) -> ScalarFunc:
    """Brute-force monotone lower envelope of <y, f(y+z)-f(z)> / ||y||.

    Tabulates the infimum over sphere directions and over the compact
    set, then takes the largest non-decreasing minorant (running minimum
    from the right), clamped at zero.  Tagged K-infinity when the
    envelope keeps growing at the largest radii.
    """
    if f.time_varying:
        raise ValueError("lower-bound construction assumes a time-invariant map")
    if radial_grid is None:
        radial_grid = np.unique(np.concatenate([
            np.geomspace(1e-3, 0.5, 12), np.linspace(0.5, 10.0, 48)]))
    radial_grid = np.asarray(radial_grid, dtype=float)
    dirs = _unit_directions(f.m, n_directions)
    zs = gamma.sample_points(n_gamma)
    raw = np.empty(len(radial_grid))
    for i, s in enumerate(radial_grid):
        ys = s * dirs
        diffs = _increment_values(f, ys, zs, np.array([0.0]))[0]
        inner = np.einsum("ijk,ik->ij", diffs, ys)
        raw[i] = inner.min() / s
        if raw[i] < -1e-10 * (1.0 + abs(raw[i])):
            j = np.unravel_index(int(np.argmin(inner)), inner.shape)
            raise SectorViolationError(
                f"negative infimum {raw[i]:.3e} at radius {s:.4g}",
                location={"y": ys[j[0]].tolist(), "z": zs[j[1]].tolist()},
            )
    env = np.minimum.accumulate(raw[::-1])[::-1]
    env = np.maximum(env, 0.0)
    nodes = np.concatenate([[0.0], radial_grid])
    values = np.concatenate([[0.0], env])
    cls = "P"
    half = 0.5 * radial_grid[-1]
    mid = float(np.interp(half, nodes, values))
    if env[-1] > 0 and mid > 0 and env[-1] >= 1.5 * mid:
        cls = "Kinf"
    return comparison.piecewise_linear(nodes, values, cls=cls)


def derive_alignment_constants(
    f: Nonlinearity,
    gamma: CompactSetSpec,
    grid: Optional[HypothesisGrid] = None,
    mu: float = 1.0,
    safety: float = 1.05,
):
    """Brute-force (mu, c) for the alignment inequality on a grid.

    Returns constants with c * mu >= 1, or raises when the inner product
    is not positive somewhere outside the mu-ball (no finite c exists).
    """
    grid = grid or HypothesisGrid()
    ys = grid.increments(f.m)
    keep = np.linalg.norm(ys, axis=1) > mu
    ys = ys[keep]
    zs = gamma.sample_points(grid.n_gamma)
    ts = grid.times(f.time_varying)
    diffs = _increment_values(f, ys, zs, ts)
    inner = np.einsum("tijk,ik->tij", diffs, ys)
    norms = np.linalg.norm(diffs, axis=3)
    if np.any(inner <= 0):
        it, iy, iz = np.unravel_index(int(np.argmin(inner)), inner.shape)
        raise SectorViolationError(
            "inner product not positive outside the mu-ball",
            location={"t": float(ts[it]), "y": ys[iy].tolist(),
                      "z": zs[iz].tolist()},
        )
    c = float(np.max(norms / inner)) * safety
    c = max(c, 1.0 / mu)
    return mu, c


def sector_epsilon(sector: SectorData) -> float:
    """min(1/(2c), alpha(mu)/2), the slack in the outside-ball bound."""
    return min(1.0 / (2.0 * sector.c), float(sector.alpha(sector.mu)) / 2.0)


@dataclass(frozen=True)
class ProductBoundsReport:
    passed: bool
    worst_cross: float
    worst_outside: float
    worst_inside: float
    n_samples: int


def check_sector_product_bounds(
    sector: SectorData,
    n_samples: int = 10_000,
    seed: int = 0,
    box: float = 10.0,
) -> ProductBoundsReport:
    """Sampled check of the inner-product lower bounds used downstream.

    Three inequalities over draws of (u, y) and selections w at y:
    the cross-term bound
    ``2<u,y> <= <y,w> + 2 alpha^{-1}(2||u||) ||u||``;
    outside the mu-ball, ``eps (||w|| + ||y||) <= <y,w>`` with
    eps = min(1/(2c), alpha(mu)/2); inside it,
    ``g(||y||)||y||^2 + g(||w||)||w||^2 <= <y,w>`` where g is the
    composed gain built from the sector envelopes.
    """
    if sector.alpha.cls != "Kinf":
        raise ValueError("product bounds need alpha of class Kinf")
    th, al = sector.theta, sector.alpha
    inner_f = comparison.from_callable(
        lambda s: s + th(s), "Kinf", descriptor="s+theta")
    weight = comparison.from_callable(
        lambda s: 2.0 * (s**2 + th(s) ** 2), "Kinf", descriptor="2(s^2+theta^2)")
    budget = comparison.from_callable(
        lambda s: s * al(s), "Kinf", descriptor="s*alpha")
    gain = comparison.compose_gain(inner_f, weight, budget, sector.mu)
    eps = sector_epsilon(sector)

    rng = np.random.default_rng(seed)
    worst_cross = worst_out = worst_in = -math.inf
    count = 0
    dims = (1, 2)
    per_dim = n_samples // len(dims)
    for m in dims:
        ys = box * (2 * rng.random((per_dim, m)) - 1)
        us = box * (2 * rng.random((per_dim, m)) - 1)
        for y, u in zip(ys, us):
            sels = sample_selections(y, sector, rng, n_random=3)
            ny = np.linalg.norm(y)
            nu = np.linalg.norm(u)
            inv_term = 2.0 * al.inverse(2.0 * nu) * nu
            for w in sels:
                count += 1
                nw = np.linalg.norm(w)
                yw = float(np.dot(y, w))
                tol = _sector_tol(yw, inv_term, nu * ny)
                worst_cross = max(
                    worst_cross, 2.0 * float(np.dot(u, y)) - yw - inv_term - tol)
                if ny > sector.mu:
                    worst_out = max(worst_out, eps * (nw + ny) - yw - tol)
                elif ny > 0:
                    lhs = float(gain(ny)) * ny**2 + float(gain(nw)) * nw**2
                    worst_in = max(worst_in, lhs - yw - tol)
    passed = max(worst_cross, worst_out, worst_in) <= 0.0
    return ProductBoundsReport(passed, worst_cross, worst_out, worst_in, count)
