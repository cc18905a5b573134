"""Batch command-line front end.

Subcommands: verify | simulate | entrain | analyze | ladder.  Configs
are JSON with a versioned schema and unknown keys rejected; outputs are
CSV/JSON written atomically.  Exit codes: 0 pass, 1 check failure,
2 config error, 3 runtime blow-up.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import apsignals, experiments, sectorcore, simcore
from .experiments import ExperimentPreset, PresetError, preset_by_name
from .simcore import BlowUpError

__all__ = ["main", "RunConfig", "ConfigError"]

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_BLOWUP = 3

CONFIG_VERSION = 1

_CONFIG_SCHEMA = {
    "version": int,
    "preset": str,
    "forcing": str,
    "x0": list,
    "horizon": (int, float),
    "dt": (int, float),
    "seed": int,
    "out": str,
    "verbosity": int,
    "nonlinearity": str,
    "signal": str,
    "scan_periods": bool,
    "fourier": list,
    "epsilon": (int, float),
    "R": list,
    "force": bool,
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    preset: Optional[str] = None
    forcing: str = "zero"
    x0: Optional[list] = None
    horizon: Optional[float] = None
    dt: Optional[float] = None
    seed: int = 0
    out: str = "runs"
    verbosity: int = 1
    nonlinearity: Optional[str] = None
    signal: Optional[str] = None
    scan_periods: bool = False
    fourier: list = field(default_factory=list)
    epsilon: float = 0.2
    R: list = field(default_factory=lambda: [1.0, 2.0, 5.0])
    force: bool = False

    @staticmethod
    def from_dict(raw: dict) -> "RunConfig":
        unknown = sorted(set(raw) - set(_CONFIG_SCHEMA))
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        version = raw.get("version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError(f"unsupported config version {version}")
        for key, val in raw.items():
            want = _CONFIG_SCHEMA[key]
            if not isinstance(val, want):
                raise ConfigError(
                    f"config key {key!r} has type {type(val).__name__}, "
                    f"expected {want}")
        kwargs = {k: v for k, v in raw.items() if k != "version"}
        return RunConfig(**kwargs)


def _atomic_write(path: str, data: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path) or ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: str, payload) -> None:
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _format_row(values) -> str:
    return ",".join(repr(float(x)) if isinstance(x, (int, float, np.floating))
                    else str(x) for x in values)


def _write_csv(path: str, header, rows) -> None:
    lines = [",".join(header)]
    lines.extend(_format_row(r) for r in rows)
    _atomic_write(path, "\n".join(lines) + "\n")


def _trajectory_rows(traj, p_cert=None, ic_label=None):
    cols = [traj.times] + [traj.states[:, j] for j in range(traj.n)]
    norms = np.linalg.norm(traj.states, axis=1)
    cols.append(norms)
    header = ["t"] + [f"x{j+1}" for j in range(traj.n)] + ["norm"]
    if p_cert is not None:
        vp = np.einsum("ij,jk,ik->i", traj.states, p_cert.P, traj.states)
        cols.append(vp)
        header.append("V_P")
    rows = list(zip(*cols))
    if ic_label is not None:
        header = ["ic"] + header
        rows = [(ic_label, *r) for r in rows]
    return header, rows


def _load_config(args) -> RunConfig:
    raw = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"malformed JSON config: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
    cfg = RunConfig.from_dict(raw)
    for key in ("preset", "forcing", "seed", "nonlinearity", "signal",
                "epsilon", "force"):
        val = getattr(args, key, None)
        if val is not None:
            setattr(cfg, key, val)
    if getattr(args, "horizon", None) is not None:
        cfg.horizon = args.horizon
    if getattr(args, "dt", None) is not None:
        cfg.dt = args.dt
    if getattr(args, "x0", None) is not None:
        cfg.x0 = [float(tok) for tok in args.x0.split(",")]
    if getattr(args, "out", None) is not None:
        cfg.out = args.out
    if getattr(args, "fourier", None):
        cfg.fourier = args.fourier.split(",")
    if getattr(args, "scan_periods", False):
        cfg.scan_periods = True
    if getattr(args, "R", None):
        cfg.R = [float(tok) for tok in args.R.split(",")]
    env_out = os.environ.get("LURELAB_OUT")
    if env_out:
        cfg.out = env_out
    if cfg.dt is not None and cfg.dt <= 0:
        raise ConfigError("dt must be positive")
    if cfg.horizon is not None and cfg.horizon <= 0:
        raise ConfigError("horizon must be positive")
    return cfg


def _build_preset(cfg: RunConfig, verify: bool = True) -> ExperimentPreset:
    name = cfg.preset or "two-mass"
    kwargs = {"verify": verify and not cfg.force}
    if cfg.nonlinearity:
        m = 2 if name == "two-mass" else 1
        kwargs["f"] = sectorcore.nonlinearity_from_spec(cfg.nonlinearity, m)
    return preset_by_name(name, **kwargs)


def _out_dir(cfg: RunConfig, *parts) -> str:
    return os.path.join(cfg.out, *parts)


# ---------------------------------------------------------------------------
# commands


def cmd_verify(cfg: RunConfig) -> int:
    name = cfg.preset or "two-mass"
    report = {"preset": name, "checks": {}}
    ok = True
    try:
        preset = _build_preset(cfg, verify=True)
    except PresetError as exc:
        payload = getattr(exc, "report", None)
        report["checks"]["preset"] = {"passed": False, "detail": str(exc)}
        if isinstance(payload, sectorcore.HypothesisReport):
            report["checks"]["hypotheses"] = payload.as_dict()
        _write_json(_out_dir(cfg, name, "verify.json"), report)
        print(f"verify {name}: FAIL ({exc})")
        return EXIT_CHECK_FAILED
    from .certcore import lmi_verify
    verdict = lmi_verify(preset.triple, preset.p_cert)
    report["checks"]["lmi"] = {
        "passed": bool(verdict.ok),
        "block_eig_max": verdict.block_eig_max,
    }
    report["checks"]["detectability"] = {
        "passed": True,
        "spectral_abscissa": preset.witness.spectral_abscissa,
    }
    if preset.hypothesis_report is not None:
        report["checks"]["hypotheses"] = preset.hypothesis_report.as_dict()
        core = (preset.hypothesis_report.upper_envelope,
                preset.hypothesis_report.monotonicity,
                preset.hypothesis_report.alignment)
        ok = ok and all(o.passed for o in core)
    ok = ok and verdict.ok
    report["passed"] = bool(ok)
    _write_json(_out_dir(cfg, name, "verify.json"), report)
    print(f"verify {name}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_simulate(cfg: RunConfig) -> int:
    preset = _build_preset(cfg, verify=not cfg.force)
    v = preset.forcing(cfg.forcing)
    x0 = np.asarray(cfg.x0, dtype=float) if cfg.x0 is not None \
        else preset.initial_conditions[0]
    horizon = cfg.horizon or preset.horizon
    dt = cfg.dt or preset.dt
    try:
        traj = simcore.simulate(preset.system, x0, v, horizon, dt)
    except BlowUpError as exc:
        _write_json(_out_dir(cfg, preset.name, cfg.forcing, "blowup.json"),
                    {"time": exc.time, "last_state": exc.last_state.tolist()})
        print(f"simulate {preset.name}/{cfg.forcing}: blow-up at t={exc.time:g}")
        return EXIT_BLOWUP
    header, rows = _trajectory_rows(traj, preset.p_cert)
    path = _out_dir(cfg, preset.name, cfg.forcing, "trajectories.csv")
    _write_csv(path, header, rows)
    print(f"simulate {preset.name}/{cfg.forcing}: wrote {path}")
    return EXIT_OK


def cmd_entrain(cfg: RunConfig) -> int:
    preset = _build_preset(cfg, verify=not cfg.force)
    horizon = cfg.horizon or preset.horizon
    dt = cfg.dt or preset.dt
    try:
        result = experiments.run_entrainment(
            preset, cfg.forcing, horizon=horizon, dt=dt)
    except BlowUpError as exc:
        print(f"entrain {preset.name}/{cfg.forcing}: blow-up at t={exc.time:g}")
        return EXIT_BLOWUP
    base = _out_dir(cfg, preset.name, cfg.forcing)
    traj_a, traj_b = result.trajectories
    header, rows = _trajectory_rows(traj_a, preset.p_cert, ic_label="a")
    _, rows_b = _trajectory_rows(traj_b, preset.p_cert, ic_label="b")
    _write_csv(os.path.join(base, "trajectories.csv"), header, rows + rows_b)
    _write_csv(os.path.join(base, "gaps.csv"),
               ["t", "gap", "forcing_l1", "forcing_sup"],
               zip(result.gap.times, result.gap.values,
                   result.gap.forcing_l1, result.gap.forcing_sup))
    fits = {} if result.fit is None else {
        "M": result.fit.M, "gamma": result.fit.gamma,
        "residual": result.fit.residual,
    }
    _write_json(os.path.join(base, "fits.json"), fits)
    _write_json(os.path.join(base, "report.json"), result.as_dict())
    checks = [result.converged]
    if result.periodic_ok is not None:
        checks.append(result.periodic_ok)
    if result.module_verdict is not None:
        checks.append(bool(result.module_verdict))
    ok = all(checks)
    print(f"entrain {preset.name}/{cfg.forcing}: "
          f"{'PASS' if ok else 'FAIL'} (final-decile gap "
          f"{result.final_decile_sup:.3e})")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


_FREQ_TOKENS = {"pi": math.pi, "2pi": 2 * math.pi,
                "sqrt2pi": math.sqrt(2) * math.pi,
                "2sqrt2pi": 2 * math.sqrt(2) * math.pi}


def _parse_frequency(token: str) -> float:
    token = token.strip().lower()
    if token in _FREQ_TOKENS:
        return _FREQ_TOKENS[token]
    return float(token)


def _resolve_signal(cfg: RunConfig) -> apsignals.SignalSpec:
    name = cfg.signal or "v_p"
    catalog = apsignals.make_example_forcings()
    catalog["zero"] = apsignals.zero_signal(2)
    if name in catalog:
        return catalog[name]
    if os.path.exists(name):
        data = np.loadtxt(name, delimiter=",", skiprows=1)
        try:
            return apsignals.signal_from_samples(data[:, 0], data[:, 1:],
                                                 name=os.path.basename(name))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    raise ConfigError(f"unknown signal {name!r}")


def cmd_analyze(cfg: RunConfig) -> int:
    v = _resolve_signal(cfg)
    base = _out_dir(cfg, "analyze", v.name)
    report = {"signal": v.name, "tag": v.tag}
    norm_coarse = apsignals.stepanov_norm(v, 20.0, n_nodes=128)
    norm_fine = apsignals.stepanov_norm(v, 20.0, n_nodes=256)
    report["stepanov_norm"] = {"coarse": norm_coarse, "fine": norm_fine}
    if cfg.scan_periods:
        period = v.period or 2 * math.pi / 0.75
        scan = apsignals.stepanov_period_scan(
            v, cfg.epsilon, (0.2 * period, 5.2 * period),
            scan_range=(0.0, 30.0), density_length=1.5 * period)
        _write_csv(os.path.join(base, "period_scan.csv"),
                   ["tau", "distance", "accepted"],
                   zip(scan.taus, scan.distances,
                       scan.accepted.astype(int)))
        report["period_scan"] = {
            "epsilon": scan.epsilon,
            "n_accepted": int(np.count_nonzero(scan.accepted)),
            "max_gap": scan.max_gap if math.isfinite(scan.max_gap) else None,
            "relatively_dense": scan.relatively_dense,
        }
    if cfg.fourier:
        freqs = [_parse_frequency(tok) for tok in cfg.fourier]
        table = apsignals.fourier_table(v, freqs, T=500.0)
        _write_csv(os.path.join(base, "fourier.csv"),
                   ["lambda", "magnitude", "proxy"],
                   zip(table.frequencies, table.magnitudes(), table.proxies))
        report["fourier"] = {
            f"{f:g}": float(mag)
            for f, mag in zip(table.frequencies, table.magnitudes())
        }
    _write_json(os.path.join(base, "report.json"), report)
    print(f"analyze {v.name}: wrote {base}")
    return EXIT_OK


def cmd_ladder(cfg: RunConfig) -> int:
    preset = _build_preset(cfg, verify=not cfg.force)
    rows = experiments.run_gain_ladder(
        preset, cfg.forcing, cfg.R, seed=cfg.seed,
        dt=cfg.dt or preset.dt)
    base = _out_dir(cfg, preset.name, cfg.forcing)
    _write_csv(os.path.join(base, "ladder.csv"),
               ["R", "n_pairs", "M", "gamma", "residual", "accepted"],
               [(r.R, r.n_pairs, r.M, r.gamma, r.residual, int(r.accepted))
                for r in rows])
    _write_json(os.path.join(base, "ladder.json"),
                [{"R": r.R, "M": None if math.isnan(r.M) else r.M,
                  "gamma": None if math.isnan(r.gamma) else r.gamma,
                  "accepted": r.accepted, "note": r.note} for r in rows])
    usable = [r for r in rows if r.n_pairs > 0]
    ok = bool(usable) and all(r.accepted for r in usable)
    for r in rows:
        print(f"ladder R={r.R:g}: "
              + (r.note or f"gamma={r.gamma:.4f} M={r.M:.3f}"))
    return EXIT_OK if ok else EXIT_CHECK_FAILED


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", help="preset name (one-mass | two-mass | wec)")
    p.add_argument("--forcing", help="forcing name from the preset catalogue")
    p.add_argument("--x0", help="comma-separated initial state")
    p.add_argument("--horizon", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (LURELAB_OUT overrides)")
    p.add_argument("--nonlinearity", help="override preset nonlinearity")
    p.add_argument("--force", action="store_true",
                   help="skip preset verification before running")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lurelab",
        description="verify, simulate and analyze forced Lur'e loops")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("verify", cmd_verify), ("simulate", cmd_simulate),
                     ("entrain", cmd_entrain), ("ladder", cmd_ladder)):
        p = sub.add_parser(name)
        _add_common(p)
        if name == "ladder":
            p.add_argument("--R", help="comma-separated radii")
        p.set_defaults(fn=fn)
    p = sub.add_parser("analyze")
    _add_common(p)
    p.add_argument("--signal", help="signal name or sampled CSV path")
    p.add_argument("--scan-periods", dest="scan_periods", action="store_true")
    p.add_argument("--fourier", help="comma-separated frequencies (2pi, ...)")
    p.add_argument("--epsilon", type=float, help="period-scan tolerance")
    p.set_defaults(fn=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PresetError as exc:
        print(f"preset rejected: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    except BlowUpError as exc:
        print(f"blow-up at t={exc.time:g}", file=sys.stderr)
        return EXIT_BLOWUP


if __name__ == "__main__":
    sys.exit(main())
