"""Preset assemblies of the worked examples and entrainment protocols.

Each preset bundles a verified closed loop (certificates checked before
any simulation runs), a forcing catalogue, initial conditions, and the
acceptance thresholds used by the entrainment and gain-ladder drivers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import apsignals, certcore, comparison, sectorcore, simcore
from .apsignals import SignalSpec, make_example_forcings, zero_signal
from .certcore import (CertificateP, DetectabilityWitness, LinearTriple,
                       QCertificate, certify_p, detectability_check,
                       lmi_verify)
from .sectorcore import (CompactSetSpec, HypothesisGrid, HypothesisReport,
                         Nonlinearity, SectorCandidates, diagonal_compose,
                         derive_alignment_constants, infimum_lower_bound,
                         power_law_nonlinearity, verify_sector_hypotheses)
from .simcore import GapSeries, LureSystem, Trajectory, fit_exponential, simulate

__all__ = [
    "ExperimentPreset",
    "derive_sector_candidates",
    "EntrainmentResult",
    "PresetError",
    "preset_one_mass",
    "preset_two_mass",
    "preset_wec",
    "preset_by_name",
    "run_entrainment",
    "run_gain_ladder",
    "GainLadderRow",
]


class PresetError(ValueError):
    """Preset verification failed; the report rides on the exception."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass(frozen=True)
class Thresholds:
    gap_final_decile: float = 1e-2
    periodicity_residual: float = 5e-3
    module_tol: float = 1e-6


@dataclass(frozen=True)
class ExperimentPreset:
    """A verified model plus everything needed to run the experiments."""

    name: str
    system: LureSystem
    witness: DetectabilityWitness
    forcings: dict
    initial_conditions: tuple
    horizon: float = 100.0
    dt: float = 1e-3
    gamma: Optional[CompactSetSpec] = None
    candidates: Optional[SectorCandidates] = None
    hypothesis_report: Optional[HypothesisReport] = None
    thresholds: Thresholds = field(default_factory=Thresholds)
    pto: Optional[SignalSpec] = None  # extra additive input (wave-energy)

    @property
    def triple(self) -> LinearTriple:
        return self.system.triple

    @property
    def p_cert(self) -> CertificateP:
        return self.system.p_cert

    def forcing(self, name: str) -> SignalSpec:
        if name not in self.forcings:
            raise KeyError(
                f"unknown forcing {name!r}; have {sorted(self.forcings)}")
        v = self.forcings[name]
        if self.pto is not None:
            return v + self.pto
        return v


def derive_sector_candidates(f: Nonlinearity, gamma: CompactSetSpec,
                       grid: HypothesisGrid, safety: float = 0.95,
                       theta_scale: float = 1.05) -> SectorCandidates:
    """Brute-force sector candidates fitted on the verification grid.

    Both envelopes are tabulated from the same sampling plan the
    hypothesis verifier uses, so a healthy nonlinearity passes its own
    candidates by construction; the shrink/inflate factors absorb
    interpolation between radius nodes.  When the sampled infimum is
    negative (sign-violating controls) a unit linear lower bound is
    returned so verification locates the violation.
    """
    radii = grid.radii()
    dirs = grid.directions(f.m)
    zs = gamma.sample_points(grid.n_gamma)
    ts = grid.times(f.time_varying)
    sup = np.empty(len(radii))
    inf_ratio = np.empty(len(radii))
    for i, s in enumerate(radii):
        ys = s * dirs
        shifted = ys[:, None, :] + zs[None, :, :]
        sup_i, inf_i = 0.0, math.inf
        for t in ts:
            diff = f(t, shifted) - f(t, zs[None, :, :])
            sup_i = max(sup_i, float(np.linalg.norm(diff, axis=2).max()))
            inner = np.einsum("ijk,ik->ij", diff, ys)
            inf_i = min(inf_i, float(inner.min()) / s)
        sup[i] = sup_i
        inf_ratio[i] = inf_i
    nodes = np.concatenate([[0.0], radii])
    theta = comparison.piecewise_linear(
        nodes, np.concatenate([[0.0], np.maximum.accumulate(sup) * theta_scale]),
        cls="Kinf")
    if np.min(inf_ratio) <= 0:
        alpha = comparison.from_callable(lambda s: np.asarray(s, float),
                                         "Kinf", descriptor="fallback:identity")
        return SectorCandidates(theta=theta, alpha=alpha, mu=1.0, c=1.0)
    lower = np.minimum.accumulate(inf_ratio[::-1])[::-1] * safety
    grows = lower[-1] > 0 and lower[-1] >= 1.5 * np.interp(
        0.5 * radii[-1], nodes, np.concatenate([[0.0], lower]))
    alpha = comparison.piecewise_linear(
        nodes, np.concatenate([[0.0], lower]), cls="Kinf" if grows else "P")
    mu, c = derive_alignment_constants(f, gamma, grid)
    return SectorCandidates(theta=theta, alpha=alpha, mu=mu, c=c)


def _verify_preset(name, triple, P, f, gamma, grid, require_alignment=True):
    """Certificates and hypothesis grid checks shared by all presets."""
    verdict = lmi_verify(triple, P)
    if not verdict.ok:
        raise PresetError(
            f"{name}: passivity LMI fails (max block eigenvalue "
            f"{verdict.block_eig_max:.3e})", verdict)
    det = detectability_check(triple)
    if not det.detectable:
        raise PresetError(
            f"{name}: pair (C, A) not detectable; offending eigenvalues "
            f"{det.offending_eigenvalues}", det)
    candidates = derive_sector_candidates(f, gamma, grid)
    report = verify_sector_hypotheses(f, gamma, candidates, grid)
    required = [report.upper_envelope, report.monotonicity]
    if require_alignment:
        required.append(report.alignment)
    failed = [o.name for o in required if not o.passed]
    if failed:
        raise PresetError(f"{name}: hypothesis checks failed: {failed}", report)
    return det.witness, candidates, report


def preset_one_mass(
    m: float = 1.0,
    k: float = 1.0,
    f: Optional[Nonlinearity] = None,
    gamma_radius: float = 2.0,
    horizon: float = 100.0,
    dt: float = 1e-3,
    verify: bool = True,
) -> ExperimentPreset:
    """Single mass-spring loop with nonlinear damping on the velocity.

    State (z, dz/dt); the energy matrix diag(k, m) solves the passivity
    LMI with zero residual.  Default damping is the quadratic power law.
    """
    if m <= 0 or k <= 0:
        raise PresetError("mass and spring constant must be positive")
    A = np.array([[0.0, 1.0], [-k / m, 0.0]])
    B = np.array([[0.0], [1.0 / m]])
    C = np.array([[0.0, 1.0]])
    triple = LinearTriple(A, B, C)
    P = np.diag([k, m])
    f = f or power_law_nonlinearity(0.0, 1.0, 1.0)
    gamma = CompactSetSpec.ball(1, gamma_radius)
    grid = HypothesisGrid(radius=10.0, n_gamma=15)
    if verify:
        witness, candidates, report = _verify_preset(
            "one-mass", triple, P, f, gamma, grid)
        q_cert = certcore.construct_q_certificate(triple, witness)
    else:
        witness = DetectabilityWitness(B, certcore.hurwitz_check(A - B @ C).abscissa)
        candidates = report = q_cert = None
    system = LureSystem(triple, f, p_cert=certify_p(triple, P), q_cert=q_cert)
    rate = 0.75
    forcings = {
        "zero": zero_signal(1),
        "sin": SignalSpec("sin", lambda ts: np.sin(np.asarray(ts))[:, None], 1,
                          tag="periodic", period=2.0 * math.pi,
                          frequencies=(1.0,)),
        "saw": SignalSpec(
            "saw", lambda ts: apsignals.sawtooth(rate * np.asarray(ts))[:, None],
            1, tag="periodic", period=2.0 * math.pi / rate,
            jump_lattices=((2.0 * math.pi / rate, 0.0),)),
    }
    ics = (np.array([1.0, 0.0]), np.zeros(2))
    return ExperimentPreset("one-mass", system, witness, forcings, ics,
                            horizon, dt, gamma, candidates, report)


# published data for the coupled example
TWO_MASS_DATA = {"m1": 1.5, "m2": 0.75, "k1": 0.5, "k2": 1.2}
TWO_MASS_X0 = np.array([0.25, 0.25, -0.05, -0.025])


def two_mass_matrices(m1=None, m2=None, k1=None, k2=None):
    """State-space data of the coupled mass-spring loop (n=4, m=2)."""
    m1 = TWO_MASS_DATA["m1"] if m1 is None else m1
    m2 = TWO_MASS_DATA["m2"] if m2 is None else m2
    k1 = TWO_MASS_DATA["k1"] if k1 is None else k1
    k2 = TWO_MASS_DATA["k2"] if k2 is None else k2
    A = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [-(k2 + k1) / m1, 0.0, k2 / m1, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [k2 / m2, 0.0, -k2 / m2, 0.0],
    ])
    B = np.array([
        [0.0, 0.0],
        [1.0 / m1, -1.0 / m1],
        [0.0, 0.0],
        [0.0, 1.0 / m2],
    ])
    C = np.array([
        [0.0, 1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0, 1.0],
    ])
    P = np.array([
        [k1 + k2, 0.0, -k2, 0.0],
        [0.0, m1, 0.0, 0.0],
        [-k2, 0.0, k2, 0.0],
        [0.0, 0.0, 0.0, m2],
    ])
    return LinearTriple(A, B, C), P


def preset_two_mass(
    gamma_radius: float = 2.0,
    horizon: float = 100.0,
    dt: float = 1e-3,
    f: Optional[Nonlinearity] = None,
    verify: bool = True,
) -> ExperimentPreset:
    """Coupled two-mass loop with the published data and forcing set.

    Diagonal damping (y |y|, y |y|^{3/2}) on the two relative
    velocities; initial conditions are the published pair against zero;
    forcings are the four benchmark signals.
    """
    triple, P = two_mass_matrices()
    f = f or diagonal_compose([
        power_law_nonlinearity(0.0, 1.0, 1.0),
        power_law_nonlinearity(0.0, 1.0, 1.5),
    ])
    gamma = CompactSetSpec.ball(2, gamma_radius)
    grid = HypothesisGrid(radius=10.0, n_gamma=15)
    if verify:
        witness, candidates, report = _verify_preset(
            "two-mass", triple, P, f, gamma, grid)
        q_cert = certcore.construct_q_certificate(triple, witness)
    else:
        witness = DetectabilityWitness(
            triple.B, certcore.hurwitz_check(triple.A - triple.B @ triple.C).abscissa)
        candidates = report = q_cert = None
    system = LureSystem(triple, f, p_cert=certify_p(triple, P), q_cert=q_cert)
    forcings = dict(make_example_forcings())
    forcings["zero"] = zero_signal(2)
    ics = (TWO_MASS_X0.copy(), np.zeros(4))
    return ExperimentPreset("two-mass", system, witness, forcings, ics,
                            horizon, dt, gamma, candidates, report)


def default_radiation_pair(nr: int):
    """Passive radiation state space: -I plus a skew coupling band."""
    if nr < 1:
        raise PresetError("radiation order must be >= 1")
    Ar = -np.eye(nr)
    for i in range(nr - 1):
        Ar[i, i + 1] = -2.0
        Ar[i + 1, i] = 2.0
    Br = np.zeros((nr, 1))
    Br[0, 0] = 1.0
    return Ar, Br


def preset_wec(
    nr: int = 2,
    mass: float = 1.0,
    added_mass: float = 0.5,
    buoyancy: float = 1.0,
    radiation: Optional[tuple] = None,
    f: Optional[Nonlinearity] = None,
    pto: Optional[SignalSpec] = None,
    gamma_radius: float = 2.0,
    horizon: float = 100.0,
    dt: float = 1e-3,
    verify: bool = True,
) -> ExperimentPreset:
    """Heaving point-absorber model with a passive radiation block.

    The radiation pair must satisfy Ar + Ar' <= 0 (checked through the
    passivity LMI with the identity); the full loop then carries the
    block-diagonal energy matrix diag(k, M, I).  The power take-off
    input is exposed as a second additive signal, zero by default.
    Numeric parameters are artifact defaults validated by the same
    verifiers as the published examples.
    """
    Ar, Br = radiation if radiation is not None else default_radiation_pair(nr)
    Ar = np.atleast_2d(np.asarray(Ar, dtype=float))
    Br = np.asarray(Br, dtype=float).reshape(Ar.shape[0], 1)
    nr = Ar.shape[0]
    rad_triple = LinearTriple(Ar, Br, Br.T)
    rad_verdict = lmi_verify(rad_triple, np.eye(nr))
    if not rad_verdict.ok or not certcore.hurwitz_check(Ar).hurwitz:
        raise PresetError(
            "radiation pair rejected: needs Ar Hurwitz with Ar + Ar' <= 0",
            rad_verdict)
    if mass <= 0 or added_mass < 0 or buoyancy <= 0:
        raise PresetError("need mass > 0, added mass >= 0, buoyancy > 0")
    M = mass + added_mass
    n = 2 + nr
    A = np.zeros((n, n))
    A[0, 1] = 1.0
    A[1, 0] = -buoyancy / M
    A[1, 2:] = -Br[:, 0] / M
    A[2:, 1] = Br[:, 0]
    A[2:, 2:] = Ar
    B = np.zeros((n, 1))
    B[1, 0] = 1.0 / M
    C = np.zeros((1, n))
    C[0, 1] = 1.0
    triple = LinearTriple(A, B, C)
    P = np.diag(np.concatenate([[buoyancy, M], np.ones(nr)]))
    f = f or power_law_nonlinearity(0.0, 1.0, 1.0)
    gamma = CompactSetSpec.ball(1, gamma_radius)
    grid = HypothesisGrid(radius=10.0, n_gamma=15)
    if verify:
        witness, candidates, report = _verify_preset(
            "wec", triple, P, f, gamma, grid)
        q_cert = certcore.construct_q_certificate(triple, witness)
    else:
        det = detectability_check(triple)
        witness = det.witness
        candidates = report = q_cert = None
    system = LureSystem(triple, f, p_cert=certify_p(triple, P), q_cert=q_cert)
    forcings = {
        "zero": zero_signal(1),
        "sin": SignalSpec("sin", lambda ts: np.sin(np.asarray(ts))[:, None], 1,
                          tag="periodic", period=2.0 * math.pi,
                          frequencies=(1.0,)),
    }
    ics = (np.concatenate([[0.5, 0.0], np.zeros(nr)]), np.zeros(n))
    return ExperimentPreset("wec", system, witness, forcings, ics,
                            horizon, dt, gamma, candidates, report, pto=pto)


_PRESETS = {
    "one-mass": preset_one_mass,
    "two-mass": preset_two_mass,
    "wec": preset_wec,
}


def preset_by_name(name: str, **kwargs) -> ExperimentPreset:
    if name not in _PRESETS:
        raise PresetError(f"unknown preset {name!r}; have {sorted(_PRESETS)}")
    return _PRESETS[name](**kwargs)


# ---------------------------------------------------------------------------
# entrainment


@dataclass(frozen=True)
class EntrainmentResult:
    forcing: str
    trajectories: tuple
    gap: GapSeries
    final_decile_sup: float
    converged: bool
    periodicity_residual: Optional[float]
    periodic_ok: Optional[bool]
    fit: Optional[simcore.ExpFit]
    spectrum: Optional[apsignals.SpectrumEstimate]
    module_verdict: Optional[apsignals.ModuleCheckResult]

    def as_dict(self):
        return {
            "forcing": self.forcing,
            "final_decile_sup": self.final_decile_sup,
            "converged": bool(self.converged),
            "periodicity_residual": self.periodicity_residual,
            "periodic_ok": self.periodic_ok,
            "fit": None if self.fit is None else {
                "M": self.fit.M, "gamma": self.fit.gamma,
                "residual": self.fit.residual, "window": list(self.fit.window),
            },
            "module_contained": (None if self.module_verdict is None
                                 else bool(self.module_verdict.contained)),
        }


def _periodicity_residual(traj: Trajectory, period: float,
                          t_lo: float) -> float:
    """sup over the settled window of ||x(t + period) - x(t)||."""
    t = traj.times
    mask = (t >= t_lo) & (t + period <= t[-1] + 1e-12)
    ts = t[mask]
    shifted = np.column_stack([
        np.interp(ts + period, t, traj.states[:, j])
        for j in range(traj.n)
    ])
    return float(np.max(np.linalg.norm(shifted - traj.states[mask], axis=1)))


def _off_module_probes(generators, count=4, depth=2, span=3.0):
    """Frequencies far from the integer lattice of the generators."""
    gens = np.asarray(generators, dtype=float)
    lattice = set()
    rng = range(-depth, depth + 1)
    for c1 in rng:
        for c2 in rng if len(gens) > 1 else [0]:
            val = c1 * gens[0] + (c2 * gens[1] if len(gens) > 1 else 0.0)
            if val > 0:
                lattice.add(val)
    lattice = np.array(sorted(lattice))
    cands = np.linspace(0.3 * gens.min(), span * gens.max(), 400)
    dists = np.min(np.abs(cands[:, None] - lattice[None, :]), axis=1)
    order = np.argsort(-dists)
    return cands[order[:count]]


def run_entrainment(
    preset: ExperimentPreset,
    forcing_name: str,
    ic_pair: Optional[tuple] = None,
    horizon: Optional[float] = None,
    settle_fraction: float = 0.5,
    dt: Optional[float] = None,
) -> EntrainmentResult:
    """Simulate an initial-condition pair and measure convergence.

    Computes the gap curve and its final-decile supremum; for periodic
    forcing, the post-settle periodicity residual at the forcing period;
    for almost periodic forcing, a windowed spectrum of the post-settle
    output checked for containment in the forcing frequency module.  The
    exponential fit of the gap is included whenever enough of the curve
    is positive.
    """
    horizon = preset.horizon if horizon is None else horizon
    dt = preset.dt if dt is None else dt
    ics = preset.initial_conditions if ic_pair is None else ic_pair
    v = preset.forcing(forcing_name)
    traj_a = simulate(preset.system, ics[0], v, horizon, dt)
    traj_b = simulate(preset.system, ics[1], v, horizon, dt)
    gap = simcore.incremental_gap(traj_a, traj_b, v, v)
    t_decile = 0.9 * horizon
    final_sup = float(np.max(gap.values[gap.times >= t_decile - 1e-12]))
    converged = final_sup <= preset.thresholds.gap_final_decile
    settle = settle_fraction * horizon

    residual = periodic_ok = None
    if v.tag == "periodic" and v.period and 2.0 * v.period < horizon - settle:
        # compare the last two forcing periods: transients have decayed
        # there, so this measures asymptotic periodicity
        t_lo = max(settle, horizon - 2.0 * v.period)
        residual = _periodicity_residual(traj_b, v.period, t_lo)
        residual = max(residual, _periodicity_residual(traj_a, v.period, t_lo))
        periodic_ok = residual <= preset.thresholds.periodicity_residual

    fit = None
    try:
        fit = fit_exponential(gap, window=(0.1 * horizon, horizon))
    except simcore.InsufficientDataError:
        pass

    spectrum = verdict = None
    if v.tag == "ap" and v.frequencies:
        post = traj_b.window(settle, horizon)
        outputs = post.states @ preset.triple.C.T
        y_sig = apsignals.signal_from_samples(
            post.times - post.times[0], outputs, name=f"y[{forcing_name}]")
        gens = np.asarray(v.frequencies, dtype=float)
        probes = set()
        for c1 in range(-2, 3):
            for c2 in range(-2, 3):
                val = c1 * gens[0] + (c2 * gens[1] if len(gens) > 1 else 0.0)
                if val > 1e-9:
                    probes.add(round(float(val), 12))
        probes = sorted(probes) + [float(x) for x in _off_module_probes(gens)]
        T_avg = post.times[-1] - post.times[0]
        spectrum = apsignals.fourier_table(y_sig, probes, T_avg, window="hann")
        verdict = apsignals.module_containment(
            spectrum, gens, tol=preset.thresholds.module_tol)

    return EntrainmentResult(
        forcing_name, (traj_a, traj_b), gap, final_sup, converged,
        residual, periodic_ok, fit, spectrum, verdict)


@dataclass(frozen=True)
class GainLadderRow:
    R: float
    n_pairs: int
    M: float
    gamma: float
    residual: float
    accepted: bool
    note: str = ""


def run_gain_ladder(
    preset: ExperimentPreset,
    forcing_name: str,
    R_values: Sequence[float],
    n_pairs: int = 3,
    horizon: float = 40.0,
    dt: Optional[float] = None,
    seed: int = 0,
) -> list:
    """Fit exponential envelopes per data-radius R.

    For each R, initial-condition pairs are sampled with
    ||x0|| + ||v||_inf <= R and the shared forcing; the row reports the
    worst fitted decay across pairs.  Rows with gamma <= 0 are flagged
    as rejected; R values too small to admit any pair are skipped.
    """
    dt = preset.dt if dt is None else dt
    v = preset.forcing(forcing_name)
    probe = np.linspace(0.0, min(horizon, 50.0), 2048)
    v_sup = float(np.max(np.linalg.norm(v(probe), axis=1)))
    rng = np.random.default_rng(seed)
    rows = []
    n = preset.triple.n
    for R in R_values:
        budget = R - v_sup
        if R <= 0 or budget <= 0:
            rows.append(GainLadderRow(float(R), 0, math.nan, math.nan,
                                      math.nan, False,
                                      "skipped: radius does not admit a pair"))
            continue
        worst_gamma = math.inf
        worst_m = 0.0
        worst_res = 0.0
        for _ in range(n_pairs):
            x1 = rng.standard_normal(n)
            x1 *= budget * rng.random() / max(np.linalg.norm(x1), 1e-12)
            x2 = rng.standard_normal(n)
            x2 *= budget * rng.random() / max(np.linalg.norm(x2), 1e-12)
            try:
                ta = simulate(preset.system, x1, v, horizon, dt)
                tb = simulate(preset.system, x2, v, horizon, dt)
            except simcore.BlowUpError:
                worst_gamma = -math.inf
                break
            gap = simcore.incremental_gap(ta, tb, v, v)
            try:
                fit = fit_exponential(gap)
            except simcore.InsufficientDataError:
                continue
            if fit.gamma < worst_gamma:
                worst_gamma = fit.gamma
                worst_m = fit.M
                worst_res = fit.residual
        accepted = math.isfinite(worst_gamma) and worst_gamma > 0
        note = "" if accepted else "fit rejected: no positive decay"
        rows.append(GainLadderRow(float(R), n_pairs, worst_m,
                                  worst_gamma, worst_res, accepted, note))
    return rows
