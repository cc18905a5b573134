"""Linear-algebra stability certificates.

Hurwitz and detectability tests, verification and feasibility search for
the passivity linear matrix inequality, observer-based Lyapunov matrix
construction, and the composite Lyapunov function whose decrease is
checked by sampling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.linalg

from . import comparison, sectorcore
from .comparison import ScalarFunc, compose_gain
from .sectorcore import SectorData, sample_selections

__all__ = [
    "LinearTriple",
    "CertificateP",
    "DetectabilityWitness",
    "DetectabilityReport",
    "QCertificate",
    "CertificateError",
    "HurwitzResult",
    "LmiVerdict",
    "LmiSearchResult",
    "hurwitz_check",
    "detectability_check",
    "assemble_lmi_block",
    "lmi_verify",
    "certify_p",
    "lmi_search",
    "construct_q_certificate",
    "QuadraticForm",
    "CompositeLyapunov",
    "FiniteDifferenceLyapunov",
    "iss_lyapunov_check",
    "construct_iss_lyapunov",
    "compose_gain",
]


class CertificateError(RuntimeError):
    """A certificate failed its own verification."""


def _readonly(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class LinearTriple:
    """State-space data (A, B, C) of the feedback interconnection."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    def __post_init__(self):
        A = _readonly(np.atleast_2d(self.A))
        B = _readonly(np.atleast_2d(self.B))
        C = _readonly(np.atleast_2d(self.C))
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError("A must be square")
        if B.shape[0] != n:
            raise ValueError("B must have n rows")
        m = B.shape[1]
        if C.shape != (m, n):
            raise ValueError("C must be m x n")
        for name, M in (("A", A), ("B", B), ("C", C)):
            if not np.all(np.isfinite(M)):
                raise ValueError(f"{name} has non-finite entries")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def as_dict(self):
        return {"A": self.A.tolist(), "B": self.B.tolist(), "C": self.C.tolist()}

    @staticmethod
    def from_dict(d) -> "LinearTriple":
        return LinearTriple(np.array(d["A"]), np.array(d["B"]), np.array(d["C"]))


class HurwitzResult(NamedTuple):
    hurwitz: bool
    abscissa: float


def hurwitz_check(M, tol: float = 1e-9) -> HurwitzResult:
    """Spectral abscissa test: Hurwitz iff max real part < -tol."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    abscissa = float(np.max(np.linalg.eigvals(M).real))
    return HurwitzResult(abscissa < -tol, abscissa)


@dataclass(frozen=True)
class DetectabilityWitness:
    """Output injection H with A - H C Hurwitz."""

    H: np.ndarray
    spectral_abscissa: float

    def __post_init__(self):
        object.__setattr__(self, "H", _readonly(np.atleast_2d(self.H)))
        if not self.spectral_abscissa < 0:
            raise ValueError("witness requires a negative spectral abscissa")


@dataclass(frozen=True)
class DetectabilityReport:
    detectable: bool
    witness: Optional[DetectabilityWitness]
    offending_eigenvalues: tuple


def detectability_check(triple: LinearTriple, tol: float = 1e-9,
                        rank_tol: Optional[float] = None) -> DetectabilityReport:
    """PBH detectability test with a constructed injection witness.

    Every eigenvalue of A with nonnegative real part must keep
    ``[A - lambda I; C]`` at full column rank.  On success the witness is
    H = B when A - B C is already Hurwitz, otherwise the stabilizing
    gain of a filter Riccati equation with identity weights.
    """
    A, B, C = triple.A, triple.B, triple.C
    n = triple.n
    eigs = np.linalg.eigvals(A)
    offending = []
    for lam in eigs:
        if lam.real < -tol:
            continue
        stacked = np.vstack([A - lam * np.eye(n), C.astype(complex)])
        if np.linalg.matrix_rank(stacked, tol=rank_tol) < n:
            if not any(abs(lam - o) < 1e-8 for o in offending):
                offending.append(complex(lam))
    if offending:
        return DetectabilityReport(False, None, tuple(offending))

    candidate = hurwitz_check(A - B @ C)
    if candidate.hurwitz:
        H = np.array(B)
    else:
        X = scipy.linalg.solve_continuous_are(
            A.T, C.T, np.eye(n), np.eye(triple.m))
        H = X @ C.T
        candidate = hurwitz_check(A - H @ C)
        if not candidate.hurwitz:
            raise CertificateError(
                "Riccati injection failed to stabilize a detectable pair")
    witness = DetectabilityWitness(H, candidate.abscissa)
    return DetectabilityReport(True, witness, ())


# ---------------------------------------------------------------------------
# the passivity LMI


@dataclass(frozen=True)
class CertificateP:
    """Symmetric positive semi-definite solution of the passivity LMI."""

    P: np.ndarray
    strictness: str = "semidefinite"  # or "strict"
    eps: Optional[float] = None
    p_eig_min: float = 0.0
    p_eig_max: float = 0.0
    block_eig_min: float = 0.0
    block_eig_max: float = 0.0

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        scale = np.linalg.norm(P)
        if np.linalg.norm(P - P.T) > 1e-12 * max(scale, 1.0):
            raise ValueError("P is not symmetric to tolerance")
        eigs = np.linalg.eigvalsh((P + P.T) / 2.0)
        if eigs[0] < -1e-10 * max(scale, 1.0):
            raise ValueError("P is not positive semi-definite")
        if self.strictness not in ("semidefinite", "strict"):
            raise ValueError("strictness must be 'semidefinite' or 'strict'")
        if self.strictness == "strict" and not (self.eps and self.eps > 0):
            raise ValueError("strict certificate needs eps > 0")
        object.__setattr__(self, "P", _readonly(P))
        object.__setattr__(self, "p_eig_min", float(eigs[0]))
        object.__setattr__(self, "p_eig_max", float(eigs[-1]))

    def quadratic_form(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(z @ self.P @ z)

    def as_dict(self):
        return {
            "P": self.P.tolist(),
            "strictness": self.strictness,
            "eps": self.eps,
            "eigenvalues": {
                "P": [self.p_eig_min, self.p_eig_max],
                "block": [self.block_eig_min, self.block_eig_max],
            },
        }


def assemble_lmi_block(triple: LinearTriple, P: np.ndarray) -> np.ndarray:
    """The (n+m) x (n+m) block [[A'P + PA, PB - C'], [B'P - C, 0]]."""
    A, B, C = triple.A, triple.B, triple.C
    top = np.hstack([A.T @ P + P @ A, P @ B - C.T])
    bottom = np.hstack([B.T @ P - C, np.zeros((triple.m, triple.m))])
    block = np.vstack([top, bottom])
    return (block + block.T) / 2.0


@dataclass(frozen=True)
class LmiVerdict:
    ok: bool
    block_eig_max: float
    block_eig_min: float
    scale: float
    strict_ok: Optional[bool] = None
    details: dict = field(default_factory=dict)

    def __bool__(self):
        return self.ok


def lmi_verify(triple: LinearTriple, certificate, tol: float = 1e-9) -> LmiVerdict:
    """Check the passivity LMI for a candidate P.

    Accepts a :class:`CertificateP` or a plain symmetric matrix.  The
    semidefinite test is ``lambda_max(block) <= tol * (1 + ||block||)``.
    The strict variant additionally requires A'P + PA + eps I negative
    semidefinite and PB = C' within tolerance.
    """
    if isinstance(certificate, CertificateP):
        cert = certificate
    else:
        cert = CertificateP(np.asarray(certificate, dtype=float))
    P = cert.P
    if P.shape != (triple.n, triple.n):
        raise ValueError("P has wrong dimensions for the triple")
    block = assemble_lmi_block(triple, P)
    eigs = np.linalg.eigvalsh(block)
    scale = 1.0 + float(np.linalg.norm(block))
    ok = bool(eigs[-1] <= tol * scale)
    strict_ok = None
    details = {}
    if cert.strictness == "strict":
        eps = float(cert.eps)
        shifted = triple.A.T @ P + P @ triple.A + eps * np.eye(triple.n)
        shifted_max = float(np.linalg.eigvalsh((shifted + shifted.T) / 2)[-1])
        coupling = float(np.linalg.norm(P @ triple.B - triple.C.T))
        strict_ok = (shifted_max <= tol * scale) and (coupling <= tol * scale)
        details = {"shifted_eig_max": shifted_max, "coupling_residual": coupling}
        ok = ok and strict_ok
    return LmiVerdict(ok, float(eigs[-1]), float(eigs[0]), scale,
                      strict_ok, details)


def certify_p(triple: LinearTriple, P, strictness: str = "semidefinite",
              eps: Optional[float] = None) -> CertificateP:
    """Package P with its eigenvalue report for the given triple."""
    base = CertificateP(np.asarray(P, dtype=float), strictness, eps)
    block = assemble_lmi_block(triple, base.P)
    eigs = np.linalg.eigvalsh(block)
    return CertificateP(base.P, strictness, eps,
                        block_eig_min=float(eigs[0]),
                        block_eig_max=float(eigs[-1]))


@dataclass(frozen=True)
class LmiSearchResult:
    feasible: bool
    certificate: Optional[CertificateP]
    residual: float
    iterations: int
    message: str = ""


def _sym_basis(n: int):
    """Orthogonal-ish basis E_ij (i <= j) of symmetric n x n matrices."""
    basis = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            basis.append(E)
    return basis


def lmi_search(
    triple: LinearTriple,
    strict: bool = False,
    eps: float = 1e-6,
    max_iter: int = 100_000,
    tol: float = 1e-9,
    stall_window: int = 500,
) -> LmiSearchResult:
    """Alternating-projection feasibility search for the passivity LMI.

    Iterates between projecting the assembled block onto the negative
    semidefinite cone (least-squares pullback to symmetric P) and
    projecting P onto the positive semidefinite cone.  Adequate for the
    small state dimensions used here; returns the best residual when the
    iteration stalls or hits the cap.
    """
    n, m = triple.n, triple.m
    basis = _sym_basis(n)
    shift = eps * np.diag(np.concatenate([np.ones(n), np.zeros(m)])) if strict \
        else np.zeros((n + m, n + m))
    const = assemble_lmi_block(triple, np.zeros((n, n))) + shift
    columns = [
        (assemble_lmi_block(triple, E) - (const - shift)).ravel() for E in basis
    ]
    Phi = np.column_stack(columns)

    def project_psd(P):
        vals, vecs = np.linalg.eigh((P + P.T) / 2.0)
        return (vecs * np.maximum(vals, 0.0)) @ vecs.T

    def project_nsd(M):
        vals, vecs = np.linalg.eigh((M + M.T) / 2.0)
        return (vecs * np.minimum(vals, 0.0)) @ vecs.T

    P = np.eye(n)
    best_res = math.inf
    last_improve = 0
    it = 0
    for it in range(1, max_iter + 1):
        block = assemble_lmi_block(triple, P) + shift
        Z = project_nsd(block)
        res = np.linalg.norm(block - Z) / (1.0 + np.linalg.norm(block))
        p_neg = float(np.linalg.eigvalsh(P)[0])
        if res <= tol and p_neg >= -tol * (1.0 + np.linalg.norm(P)):
            P = project_psd(P)
            cert = certify_p(triple, P, "strict" if strict else "semidefinite",
                             eps if strict else None)
            verdict = lmi_verify(triple, cert, tol=max(tol, 1e-9) * 10)
            if verdict.ok:
                return LmiSearchResult(True, cert, float(res), it)
        if res < best_res - 1e-14:
            best_res = res
            last_improve = it
        if it - last_improve > stall_window:
            return LmiSearchResult(
                False, None, float(best_res), it,
                "stalled: infeasible or unknown")
        coeffs, *_ = np.linalg.lstsq(Phi, (Z - const).ravel(), rcond=None)
        P_ls = np.zeros((n, n))
        for coef, E in zip(coeffs, basis):
            P_ls += coef * E
        P = project_psd(P_ls)
    return LmiSearchResult(False, None, float(best_res), it,
                           "iteration cap reached: infeasible or unknown")


# ---------------------------------------------------------------------------
# observer-based Lyapunov matrix


@dataclass(frozen=True)
class QCertificate:
    """Scaled observer Lyapunov matrix with its dissipation constants.

    The scaling guarantees the sampled dissipation inequality
    ``2 <Qz, Az - B(w - u)> <= -delta ||z||^2 + ||z|| (||Cz|| + ||w|| + ||u||)``.
    q1 and q2 bound the quadratic form: q1 ||z||^2 <= <z, Qz> <= q2 ||z||^2.
    """

    Q: np.ndarray
    delta: float
    q1: float
    q2: float
    check_margin: float = -math.inf

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        vals = np.linalg.eigvalsh((Q + Q.T) / 2.0)
        if vals[0] <= 0:
            raise ValueError("Q must be positive definite")
        if not (self.delta > 0 and self.q1 > 0 and self.q2 > 0):
            raise ValueError("delta, q1, q2 must be positive")
        object.__setattr__(self, "Q", _readonly(Q))

    def quadratic_form(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(z @ self.Q @ z)


def construct_q_certificate(
    triple: LinearTriple,
    witness: DetectabilityWitness,
    n_check: int = 10_000,
    box: float = 10.0,
    seed: int = 0,
) -> QCertificate:
    """Solve the observer Lyapunov equation and scale it for dissipation.

    Solves (A - HC)' Q0 + Q0 (A - HC) = -I and rescales
    Q = Q0 / (2 ||Q0|| max(||H||, ||B||, 1)) so the cross terms are
    dominated by ||z|| (||Cz|| + ||w|| + ||u||).  The resulting
    inequality is verified on seeded random samples.
    """
    A, B, C = triple.A, triple.B, triple.C
    H = np.atleast_2d(witness.H)
    M = A - H @ C
    hur = hurwitz_check(M)
    if not hur.hurwitz:
        raise ValueError("witness matrix A - HC is not Hurwitz")
    Q0 = scipy.linalg.solve_continuous_lyapunov(M.T, -np.eye(triple.n))
    Q0 = (Q0 + Q0.T) / 2.0
    scale = 1.0 / (2.0 * np.linalg.norm(Q0, 2)
                   * max(np.linalg.norm(H, 2), np.linalg.norm(B, 2), 1.0))
    Q = scale * Q0
    decay = -(M.T @ Q + Q @ M)
    delta = float(np.linalg.eigvalsh((decay + decay.T) / 2.0)[0])
    qvals = np.linalg.eigvalsh(Q)
    cert = QCertificate(Q, delta, float(qvals[0]), float(qvals[-1]))

    rng = np.random.default_rng(seed)
    zs = box * (2 * rng.random((n_check, triple.n)) - 1)
    us = box * (2 * rng.random((n_check, triple.m)) - 1)
    ws = box * (2 * rng.random((n_check, triple.m)) - 1)
    lhs = 2.0 * np.einsum("ij,ij->i", zs @ Q, zs @ A.T - (ws - us) @ B.T)
    zn = np.linalg.norm(zs, axis=1)
    rhs = (-delta * zn**2
           + zn * (np.linalg.norm(zs @ C.T, axis=1)
                   + np.linalg.norm(ws, axis=1) + np.linalg.norm(us, axis=1)))
    margin = float(np.max(lhs - rhs))
    if margin > 1e-8 * (1.0 + float(np.max(np.abs(rhs)))):
        raise CertificateError(
            f"sampled dissipation inequality violated by {margin:.3e}")
    return QCertificate(Q, delta, cert.q1, cert.q2, check_margin=margin)


# ---------------------------------------------------------------------------
# Lyapunov functions


class QuadraticForm:
    """V(z) = <z, P z> with its exact gradient."""

    def __init__(self, P):
        self.P = np.atleast_2d(np.asarray(P, dtype=float))

    def value(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(z @ self.P @ z)

    def gradient(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return 2.0 * (self.P @ z)


class FiniteDifferenceLyapunov:
    """Wrap a plain callable with a central finite-difference gradient."""

    def __init__(self, fn: Callable[[np.ndarray], float], step: float = 1e-6):
        self.fn = fn
        self.step = step

    def value(self, z) -> float:
        return float(self.fn(np.asarray(z, dtype=float)))

    def gradient(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        g = np.empty_like(z)
        for i in range(z.size):
            h = self.step * max(1.0, abs(z[i]))
            zp, zm = z.copy(), z.copy()
            zp[i] += h
            zm[i] -= h
            g[i] = (self.fn(zp) - self.fn(zm)) / (2.0 * h)
        return g


def _adaptive_simpson(f, a, b, rel_tol=1e-8, max_depth=30):
    """Adaptive Simpson quadrature with relative tolerance."""
    def simpson(fa, fm, fb, a, b):
        return (b - a) / 6.0 * (fa + 4.0 * fm + fb)

    def recurse(a, b, fa, fm, fb, whole, depth):
        mid = 0.5 * (a + b)
        lm, rm = 0.5 * (a + mid), 0.5 * (mid + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, a, mid)
        right = simpson(fm, frm, fb, mid, b)
        if depth >= max_depth or abs(left + right - whole) <= \
                15.0 * rel_tol * (abs(left + right) + 1e-300):
            return left + right + (left + right - whole) / 15.0
        return (recurse(a, mid, fa, flm, fm, left, depth + 1)
                + recurse(mid, b, fm, frm, fb, right, depth + 1))

    if a == b:
        return 0.0
    fa, fb = f(a), f(b)
    mid = 0.5 * (a + b)
    fm = f(mid)
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), 0)


class _CachedIntegral:
    """Cumulative integral of a nonnegative kernel on log-spaced breakpoints.

    Integrates in square-root coordinates (s = sigma^2), which removes
    the root singularity the kernel inherits from its sqrt argument and
    keeps the adaptive quadrature shallow.
    """

    def __init__(self, kernel, rel_tol=1e-8, s_max=1e8, n_break=201):
        self.kernel = kernel
        self.rel_tol = rel_tol
        self._g = lambda sig: 2.0 * sig * kernel(sig * sig)
        sigma = np.concatenate(([0.0], np.geomspace(1e-6, math.sqrt(s_max), n_break)))
        cum = np.zeros_like(sigma)
        for i in range(1, len(sigma)):
            cum[i] = cum[i - 1] + _adaptive_simpson(
                self._g, sigma[i - 1], sigma[i], rel_tol)
        self.sigma_break = sigma
        self.cumulative = cum

    def __call__(self, s: float) -> float:
        s = float(s)
        if s <= 0.0:
            return 0.0
        sig = math.sqrt(s)
        bp, cum = self.sigma_break, self.cumulative
        i = int(np.searchsorted(bp, sig, side="right")) - 1
        i = min(i, len(bp) - 1)
        return float(cum[i]) + _adaptive_simpson(
            self._g, float(bp[i]), sig, self.rel_tol)


class CompositeLyapunov:
    """V(z) = <z, Pz> + h(<z, Qz>) with an exact analytic gradient.

    h integrates the bounded kernel k, so the gradient is
    ``2 P z + k(<z, Qz>) 2 Q z``.
    """

    def __init__(self, P, Q, kernel, h):
        self.P = np.atleast_2d(np.asarray(P, dtype=float))
        self.Q = np.atleast_2d(np.asarray(Q, dtype=float))
        self.k = kernel
        self.h = h

    def value(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(z @ self.P @ z) + self.h(float(z @ self.Q @ z))

    def gradient(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return 2.0 * (self.P @ z) + self.k(float(z @ self.Q @ z)) * 2.0 * (self.Q @ z)


def construct_iss_lyapunov(
    triple: LinearTriple,
    p_cert: CertificateP,
    q_cert: QCertificate,
    gain: ScalarFunc,
    eps: float,
) -> CompositeLyapunov:
    """Composite Lyapunov candidate from the two certificates.

    The kernel is ``k(s) = c0 min(1/sqrt(s+1), c1 gain(c2 sqrt(s)))``
    with c0 = min(1, eps/q1), c1 = delta/4 and c2 = delta/(4 q2), and
    ``h`` is its cumulative integral evaluated by cached adaptive
    quadrature.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if gain.cls != "Kinf":
        raise ValueError("gain must be of class Kinf")
    delta, q1, q2 = q_cert.delta, q_cert.q1, q_cert.q2
    c0 = min(1.0, eps / q1)
    c1 = delta / 4.0
    c2 = delta / (4.0 * q2)

    # tabulate the gain once; composed gains invert by bisection, which
    # is too slow to call inside the quadrature kernel
    s_max = 1e8
    args = np.concatenate(([0.0], np.geomspace(1e-9, c2 * math.sqrt(s_max) * 1.5,
                                               4096)))
    vals = gain(args)

    def kernel(s, c0=c0, c1=c1, c2=c2, xs=args, ys=vals):
        s = float(s)
        g = np.interp(c2 * math.sqrt(s), xs, ys)
        return c0 * min(1.0 / math.sqrt(s + 1.0), c1 * float(g))

    h = _CachedIntegral(kernel, s_max=s_max)
    return CompositeLyapunov(p_cert.P, q_cert.Q, kernel, h)


@dataclass(frozen=True)
class DissipationCheck:
    passed: bool
    worst_violation: float
    at: Optional[dict]
    n_samples: int


def iss_lyapunov_check(
    V,
    triple: LinearTriple,
    sector: SectorData,
    decay: ScalarFunc,
    input_gain: ScalarFunc,
    box: float = 10.0,
    n_samples: int = 2000,
    seed: int = 0,
    n_selections: int = 3,
    tol: float = 1e-8,
) -> DissipationCheck:
    """Sampled decrease inequality for an ISS Lyapunov candidate.

    Draws (u, z) in the box and selections w at y = Cz, and reports the
    worst value of ``<grad V(z), Az - B(w - u)> + decay(||z||)
    - input_gain(||u||)`` relative to the local magnitude scale.  V must
    expose ``value``/``gradient``; wrap plain callables in
    :class:`FiniteDifferenceLyapunov`.
    """
    if not hasattr(V, "gradient"):
        V = FiniteDifferenceLyapunov(V)
    A, B, C = triple.A, triple.B, triple.C
    rng = np.random.default_rng(seed)
    worst = -math.inf
    worst_at = None
    count = 0
    for _ in range(n_samples):
        z = box * (2 * rng.random(triple.n) - 1)
        u = box * (2 * rng.random(triple.m) - 1)
        y = C @ z
        grad = V.gradient(z)
        dec = float(decay(np.linalg.norm(z)))
        gin = float(input_gain(np.linalg.norm(u)))
        for w in sample_selections(y, sector, rng, n_random=n_selections):
            count += 1
            lhs = float(grad @ (A @ z - B @ (w - u)))
            scale = 1.0 + abs(lhs) + dec + gin
            rel = (lhs + dec - gin) / scale
            if rel > worst:
                worst = rel
                worst_at = {"z": z.tolist(), "u": u.tolist(), "w": np.asarray(w).tolist()}
    return DissipationCheck(worst <= tol, worst, worst_at, count)
