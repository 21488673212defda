"""Batch command line interface.

Every run reads an optional flat ``key=value`` config (``params.alpha=0.5``,
``tracer.T=64``), writes its data as CSV plus a ``manifest.json`` into a
run directory named after the subcommand and the config hash, and exits
with 0 on success (including failed numerical verdicts), 2 on a
configuration error and 3 on a runtime failure.
"""
from __future__ import annotations

import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import asdict, dataclass, field
import datetime as _dt
import hashlib
import json
import math
from pathlib import Path
import platform
import sys
import time

import numpy as np
import scipy

from .spectrum_core import ParameterError, SpectrumParams, params_from_config, scaling_exponents

__all__ = ["main", "parse_config", "ExperimentConfig", "ConfigError", "report", "DEFAULTS"]

VERSION = "0.1.0"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3

KINDS = ("field-cov", "tracer-sim", "hurst", "diagrams", "moments", "limit-sim",
         "rosenblatt-check", "report")

#: budget keys with defaults and types; anything else in a config is rejected
DEFAULTS = {
    "fieldcov.replicas": 10000, "fieldcov.modes": 2048, "fieldcov.t": 0.5, "fieldcov.x": 0.3,
    "fieldcov.budget": 2 ** 16, "fieldcov.block": 100,
    "tracer.T": 64.0, "tracer.replicas": 2000, "tracer.modes": 64, "tracer.t_max": 10.0,
    "tracer.dt": 0.25, "tracer.integrator": "midpoint", "tracer.courant": 0.5,
    "tracer.chunk": 500,
    "hurst.lags": "1,1.5,2,3,4,5,6,8,10", "hurst.control_replicas": 2000, "hurst.tol": 0.05,
    "moments.nmax": 4, "moments.quad_points": 16,
    "limit.representation": "spectral_Z", "limit.replicas": 10000, "limit.modes": 128,
    "limit.cells": 100, "limit.t_max": 1.0, "limit.n_out": 10,
    "rosenblatt.replicas": 10000, "rosenblatt.modes": 128, "rosenblatt.cells": 100,
    "rosenblatt.t_max": 2.0,
}


class ConfigError(ValueError):
    """Malformed or invalid configuration."""


def parse_config(text: str) -> dict:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for num, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {num}: expected key=value, got {raw!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        if not k or not v:
            raise ConfigError(f"line {num}: empty key or value")
        if k in out:
            raise ConfigError(f"line {num}: duplicate key {k!r}")
        out[k] = v
    return out


def _coerce(key, value):
    ref = DEFAULTS[key]
    try:
        if isinstance(ref, bool):
            return str(value).lower() in ("1", "true", "yes")
        if isinstance(ref, int):
            v = int(value)
        elif isinstance(ref, float):
            v = float(value)
        else:
            return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: cannot parse {value!r}") from None
    if not (v > 0 and math.isfinite(v)):
        raise ConfigError(f"{key}: budgets must be positive")
    return v


@dataclass
class ExperimentConfig:
    kind: str
    params: SpectrumParams
    budgets: dict
    seed: int = 0
    out: str = "runs"
    workers: int = 1
    extra: dict = field(default_factory=dict)

    def flat(self) -> dict:
        d = {f"params.{k}": v for k, v in asdict(self.params).items()}
        d.update(self.budgets)
        d.update(self.extra)
        d["seed"] = self.seed
        d["kind"] = self.kind
        return d

    def digest(self) -> str:
        blob = json.dumps(self.flat(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:12]


def build_config(kind: str, cfg: dict, seed: int, out: str, workers: int,
                 extra: dict | None = None) -> ExperimentConfig:
    unknown = [k for k in cfg if not k.startswith("params.") and k not in DEFAULTS]
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    try:
        params = params_from_config(cfg)
    except (ParameterError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None
    budgets = dict(DEFAULTS)
    for k, v in cfg.items():
        if k in DEFAULTS:
            budgets[k] = _coerce(k, v)
    if workers < 1:
        raise ConfigError("--workers must be >= 1")
    return ExperimentConfig(kind, params, budgets, int(seed), out, int(workers), extra or {})


# ---------------------------------------------------------------------------
# persistence


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def _jsonable(o):
    if isinstance(o, dict):
        return {str(k): _jsonable(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_jsonable(v) for v in o]
    if isinstance(o, np.ndarray):
        return _jsonable(o.tolist())
    if isinstance(o, (np.bool_,)):
        return bool(o)
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, (float, np.floating)):
        f = float(o)
        return f if math.isfinite(f) else str(f)
    return o


def _run_dir(cfg: ExperimentConfig) -> Path:
    d = Path(cfg.out) / f"{cfg.kind}-{cfg.digest()}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _manifest(cfg: ExperimentConfig, run_dir: Path, wall: float, results: dict,
              verdicts: dict, files) -> dict:
    man = {
        "run_id": f"{cfg.kind}-{cfg.digest()}",
        "kind": cfg.kind,
        "config_hash": cfg.digest(),
        "config": cfg.flat(),
        "seed": cfg.seed,
        "params": asdict(cfg.params),
        "versions": {"package": VERSION, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "wall_time_s": wall,
        "results": results,
        "verdicts": verdicts,
        "files": list(files),
    }
    with open(run_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(_jsonable(man), fh, indent=2, sort_keys=True)
    return man


def _verdict(passed, mandatory=True, **detail):
    return {"passed": bool(passed), "mandatory": bool(mandatory), **detail}


# ---------------------------------------------------------------------------
# subcommands


def _lags(text):
    return [float(x) for x in str(text).split(",") if x.strip()]


def _tracer_part(args):
    params, cfgd, n, modes, seed, want, control, chunk, offset = args
    from .tracer import TrajectoryConfig, simulate_tracers
    tc = TrajectoryConfig(**cfgd)
    r = simulate_tracers(params, tc, n, modes, seed, want, control, chunk, offset=offset)
    return r.times, r.z


def _simulate(cfg: ExperimentConfig, control=None, replicas=None):
    """Replica-parallel tracer ensemble; partitions are merged in index order."""
    b = cfg.budgets
    tcfg = dict(T=b["tracer.T"], t_max=b["tracer.t_max"], dt=b["tracer.dt"],
                integrator=b["tracer.integrator"], courant=b["tracer.courant"])
    from .tracer import TrajectoryConfig
    TrajectoryConfig(**tcfg)  # validate up front
    R = int(replicas or b["tracer.replicas"])
    w = max(1, min(cfg.workers, R))
    edges = np.linspace(0, R, w + 1).astype(int)
    jobs = [(cfg.params, tcfg, int(e1 - e0), int(b["tracer.modes"]), cfg.seed, ("z",), control,
             int(b["tracer.chunk"]), int(e0)) for e0, e1 in zip(edges[:-1], edges[1:]) if e1 > e0]
    if w == 1:
        parts = [_tracer_part(j) for j in jobs]
    else:
        with ProcessPoolExecutor(w) as ex:
            parts = list(ex.map(_tracer_part, jobs))
    return parts[0][0], np.concatenate([p[1] for p in parts], axis=0)


def run_field_cov(cfg, run_dir):
    from .velocity_field import covariance_mc, covariance_R
    b = cfg.budgets
    d = cfg.params.d
    x = np.zeros(d)
    x[0] = b["fieldcov.x"]
    t = b["fieldcov.t"]
    N = int(b["fieldcov.modes"])
    # E V(t,x) V(0,0)^T estimates (1 - 1/N) R(t,x)
    fac = 1.0 - 1.0 / N
    rows, zs = [], []
    for name, tt, xx in (("origin", 0.0, np.zeros(d)), ("shifted", t, x)):
        Rq = covariance_R(cfg.params, tt, xx, budget=b["fieldcov.budget"], seed=cfg.seed)
        mc = covariance_mc(cfg.params, tt, xx, int(b["fieldcov.replicas"]), N, cfg.seed,
                           int(b["fieldcov.block"]))
        for i in range(d):
            for j in range(d):
                z = (abs(mc.value[i, j] - fac * Rq.value[i, j])
                     / math.hypot(mc.stderr[i, j], fac * Rq.stderr[i, j]))
                zs.append(z)
                rows.append((name, i, j, mc.value[i, j], mc.stderr[i, j], Rq.value[i, j],
                             Rq.stderr[i, j], z))
    write_csv(run_dir / "covariance.csv",
              ["point", "i", "j", "mc", "mc_stderr", "quadrature", "quad_stderr", "z"], rows)
    verdicts = {"covariance_match": _verdict(max(zs) < 3.0, max_z=max(zs), n_tests=len(zs))}
    return {"t": t, "x": x.tolist(), "mode_factor": fac}, verdicts, ["covariance.csv"]


def run_tracer_sim(cfg, run_dir):
    from .tracer import msd_curve
    times, Z = _simulate(cfg)
    n, nt, d = Z.shape
    rows = ((r, times[i], *Z[r, i]) for r in range(n) for i in range(nt))
    write_csv(run_dir / "trajectories.csv", ["replica", "t"] + [f"x{j + 1}" for j in range(d)],
              rows)
    lags = [t for t in times[1:]]
    msd = msd_curve(Z, times, lags) if n >= 100 else np.empty((0, 3))
    write_csv(run_dir / "msd.csv", ["t", "msd", "stderr"], msd)
    sidecar = {"seed": cfg.seed, "params": asdict(cfg.params), "budgets": cfg.budgets,
               "code_version": VERSION}
    with open(run_dir / "trajectories.json", "w", encoding="utf-8") as fh:
        json.dump(_jsonable(sidecar), fh, indent=2)
    return {"n_replicas": n}, {}, ["trajectories.csv", "trajectories.json", "msd.csv"]


def run_hurst(cfg, run_dir):
    from .stats import estimate_hurst
    from .tracer import msd_curve
    b = cfg.budgets
    lags = _lags(b["hurst.lags"])
    H_target = scaling_exponents(cfg.params).hurst
    times, Z = _simulate(cfg)
    msd = msd_curve(Z, times, lags)
    fit = estimate_hurst(msd)
    times_c, Zc = _simulate(cfg, control="gaussian_white", replicas=b["hurst.control_replicas"])
    msd_c = msd_curve(Zc, times_c, lags)
    fit_c = estimate_hurst(msd_c)
    write_csv(run_dir / "msd.csv", ["t", "msd", "stderr"], msd)
    write_csv(run_dir / "msd_control.csv", ["t", "msd", "stderr"], msd_c)
    tol = b["hurst.tol"]
    res = {"H_target": H_target, "H": fit.hurst, "H_stderr": fit.hurst_stderr,
           "slope": fit.fit.slope, "span_ok": fit.span_ok,
           "control_slope": fit_c.fit.slope, "control_slope_stderr": fit_c.fit.stderr}
    verdicts = {
        "hurst_anomalous": _verdict(abs(fit.hurst - H_target) <= tol, H=fit.hurst,
                                    target=H_target, tol=tol),
        "brownian_control": _verdict(abs(fit_c.fit.slope - 1.0) <= 2 * tol,
                                     slope=fit_c.fit.slope),
    }
    return res, verdicts, ["msd.csv", "msd_control.csv"]


def diagram_census(n: int) -> dict:
    from .diagrams import count_complete_formula, cycle_census
    if n > 6:
        raise ConfigError("diagrams --n supports n <= 6 for the census")
    census = cycle_census(n) if n >= 2 else {}
    out = {"n": n, "complete": int(sum(census.values())),
           "single_cycle": int(census.get((n,), 0)),
           "inclusion_exclusion": count_complete_formula(n),
           "census": {"+".join(map(str, k)): v for k, v in sorted(census.items())}}
    if n == 4:
        out["two_two_cycles"] = int(census.get((2, 2), 0))
    return out


def run_diagrams(cfg, run_dir):
    n = int(cfg.extra.get("n", 4))
    res = diagram_census(n)
    with open(run_dir / "census.json", "w", encoding="utf-8") as fh:
        json.dump(res, fh, indent=2)
    print(json.dumps({k: res[k] for k in res if k in ("complete", "single_cycle",
                                                       "two_two_cycles")}))
    v = {"census_matches_formula": _verdict(res["complete"] == res["inclusion_exclusion"])}
    return res, v, ["census.json"]


def run_moments(cfg, run_dir):
    from .diagrams import MomentSpec, moment_Z
    b = cfg.budgets
    spec = MomentSpec(((1.0, 1.0),), 2)
    h = hashlib.sha256(repr(spec.coefficients).encode()).hexdigest()[:8]
    rows = []
    for n in range(1, int(b["moments.nmax"]) + 1):
        m = moment_Z(spec, n, cfg.params, int(b["moments.quad_points"]))
        rows.append((n, h, m.value, m.error))
    write_csv(run_dir / "moments.csv", ["n", "spec_hash", "value", "error"], rows)
    return {"moments": [list(r) for r in rows]}, {}, ["moments.csv"]


def run_limit_sim(cfg, run_dir):
    from .limit_processes import LimitPathConfig, simulate_moving_average, simulate_spectral
    from .stats import cumulants
    b = cfg.budgets
    rep = b["limit.representation"]
    grid = tuple(np.linspace(0.0, b["limit.t_max"], int(b["limit.n_out"]) + 1))
    H = scaling_exponents(cfg.params).hurst
    if rep == "moving_average":
        lp = simulate_moving_average(H, grid, int(b["limit.cells"]), cfg.seed,
                                     int(b["limit.replicas"]), cfg.params.d)
    else:
        lc = LimitPathConfig(rep, grid, params=cfg.params, grid_cells=int(b["limit.cells"]),
                             n_modes=int(b["limit.modes"]), n_replicas=int(b["limit.replicas"]))
        lp = simulate_spectral(lc, cfg.seed)
    (kind, P), = lp.paths.items()
    R, nt, d = P.shape
    keep = min(R, 100)
    rows = ((r, lp.times[i], *P[r, i]) for r in range(keep) for i in range(nt))
    write_csv(run_dir / "paths.csv", ["replica", "t"] + [f"z{j + 1}" for j in range(d)], rows)
    last = P[:, -1, :].ravel()
    cu = cumulants(last)
    res = {"kind": kind, "meta": lp.meta, "variance_t_max": cu.central[2],
           "skewness": cu.skewness, "excess_kurtosis": cu.excess_kurtosis,
           "errors": cu.errors}
    v = {"truncation_deficit_ok": _verdict(not lp.meta["flagged"], mandatory=False,
                                           deficit=lp.meta["deficit"])}
    return res, v, ["paths.csv"]


def run_rosenblatt(cfg, run_dir):
    from .limit_processes import rosenblatt_equivalence_report
    b = cfg.budgets
    rep = rosenblatt_equivalence_report(cfg.params, int(b["rosenblatt.replicas"]),
                                        int(b["rosenblatt.modes"]), int(b["rosenblatt.cells"]),
                                        int(b["rosenblatt.cells"]), cfg.seed,
                                        b["rosenblatt.t_max"])
    with open(run_dir / "rosenblatt.json", "w", encoding="utf-8") as fh:
        json.dump(_jsonable(rep), fh, indent=2)
    v = {k: _verdict(val) for k, val in rep["checks"].items()}
    return {"n_tests": rep["n_tests"]}, v, ["rosenblatt.json"]


def precheck(cfg: ExperimentConfig) -> None:
    """Validate module-level preconditions before any work is done."""
    from .limit_processes import REPRESENTATIONS, LimitPathConfig
    from .tracer import TrajectoryConfig
    b = cfg.budgets
    try:
        if cfg.kind in ("tracer-sim", "hurst"):
            TrajectoryConfig(T=b["tracer.T"], t_max=b["tracer.t_max"], dt=b["tracer.dt"],
                             integrator=b["tracer.integrator"], courant=b["tracer.courant"])
            if int(b["tracer.modes"]) % 2:
                raise ParameterError("tracer.modes must be even")
        if cfg.kind == "hurst":
            lags = _lags(b["hurst.lags"])
            if len(lags) < 2 or max(lags) > b["tracer.t_max"]:
                raise ParameterError("hurst.lags must hold >= 2 times within tracer.t_max")
        if cfg.kind == "limit-sim":
            rep = b["limit.representation"]
            if rep not in REPRESENTATIONS:
                raise ParameterError(f"unknown representation {rep!r}")
            grid = tuple(np.linspace(0.0, b["limit.t_max"], int(b["limit.n_out"]) + 1))
            LimitPathConfig(rep, grid, params=None if rep == "moving_average" else cfg.params,
                            hurst=scaling_exponents(cfg.params).hurst,
                            grid_cells=int(b["limit.cells"]), n_modes=int(b["limit.modes"]),
                            n_replicas=int(b["limit.replicas"]))
        if cfg.kind == "rosenblatt-check" and int(b["rosenblatt.cells"]) % 10:
            raise ParameterError("rosenblatt.cells must be a multiple of 10")
        if cfg.kind in ("moments", "limit-sim", "rosenblatt-check"):
            H = scaling_exponents(cfg.params).hurst
            if not 0.5 < H < 1.0:
                raise ParameterError(f"H = {H} outside (1/2, 1)")
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None


RUNNERS = {
    "field-cov": run_field_cov, "tracer-sim": run_tracer_sim, "hurst": run_hurst,
    "diagrams": run_diagrams, "moments": run_moments, "limit-sim": run_limit_sim,
    "rosenblatt-check": run_rosenblatt,
}


def run(cfg: ExperimentConfig) -> dict:
    run_dir = _run_dir(cfg)
    t0 = time.perf_counter()
    res, verdicts, files = RUNNERS[cfg.kind](cfg, run_dir)
    return _manifest(cfg, run_dir, time.perf_counter() - t0, res, verdicts, files)


# ---------------------------------------------------------------------------
# report


def report(dirs, out: str | None = None) -> dict:
    """Merge manifests from run directories (searched recursively).

    Runs with the same ``run_id`` are deduplicated by newest timestamp; an
    unreadable manifest is listed under ``excluded``.  The overall verdict
    is the AND of all mandatory verdicts.
    """
    found, excluded = {}, []
    for d in dirs:
        p = Path(d)
        paths = [p] if p.is_file() else sorted(p.rglob("manifest.json"))
        if not paths:
            excluded.append({"path": str(p), "reason": "no manifest"})
        for mp in paths:
            try:
                with open(mp, encoding="utf-8") as fh:
                    man = json.load(fh)
                rid, ts = man["run_id"], _dt.datetime.fromisoformat(man["timestamp"])
                man["verdicts"]
            except (OSError, ValueError, KeyError, TypeError) as exc:
                excluded.append({"path": str(mp), "reason": f"corrupt manifest: {exc}"})
                continue
            if rid not in found or ts > found[rid][0]:
                found[rid] = (ts, man, str(mp))
    checks, failing = [], []
    for rid, (ts, man, path) in sorted(found.items()):
        for name, v in man["verdicts"].items():
            entry = {"run_id": rid, "check": name, "passed": bool(v.get("passed")),
                     "mandatory": bool(v.get("mandatory", True))}
            checks.append(entry)
            if entry["mandatory"] and not entry["passed"]:
                failing.append(f"{rid}:{name}")
    overall = bool(checks) and not failing
    doc = {"overall": "pass" if overall else "fail", "n_runs": len(found), "checks": checks,
           "failing": failing, "excluded": excluded}
    lines = [f"overall: {doc['overall']} ({len(found)} runs, {len(checks)} checks)"]
    lines += [f"  {'PASS' if c['passed'] else 'FAIL'} {c['run_id']} {c['check']}"
              + ("" if c["mandatory"] else " (advisory)") for c in checks]
    lines += [f"  excluded {e['path']}: {e['reason']}" for e in excluded]
    doc["summary"] = "\n".join(lines)
    if out:
        Path(out).mkdir(parents=True, exist_ok=True)
        with open(Path(out) / "report.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
        with open(Path(out) / "report.txt", "w", encoding="utf-8") as fh:
            fh.write(doc["summary"] + "\n")
    return doc


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _parser():
    ap = _Parser(prog="chaostracer", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="kind", required=True)
    for k in KINDS:
        sp = sub.add_parser(k, prog=f"chaostracer {k}")
        if k == "report":
            sp.add_argument("dirs", nargs="+")
            sp.add_argument("--out", default=None)
            continue
        sp.add_argument("--config", default=None)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--out", default="runs")
        if k == "diagrams":
            sp.add_argument("--n", type=int, default=4)
    return ap


def _error(code, kind, msg):
    print(json.dumps({"error": kind, "message": msg, "exit_code": code}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except ConfigError as exc:
        return _error(EXIT_CONFIG, "config", str(exc))
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_CONFIG
    if args.kind == "report":
        doc = report(args.dirs, args.out)
        print(doc["summary"])
        return EXIT_OK
    try:
        text = ""
        if args.config is not None:
            try:
                text = Path(args.config).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
            if not text.strip():
                raise ConfigError("empty config file")
        extra = {"n": args.n} if args.kind == "diagrams" else {}
        cfg = build_config(args.kind, parse_config(text), args.seed, args.out, args.workers,
                           extra)
        if args.kind == "diagrams" and not 1 <= args.n <= 6:
            raise ConfigError("--n must be between 1 and 6")
        precheck(cfg)
    except ConfigError as exc:
        return _error(EXIT_CONFIG, "config", str(exc))
    try:
        man = run(cfg)
    except ConfigError as exc:
        return _error(EXIT_CONFIG, "config", str(exc))
    except (ParameterError, FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        return _error(EXIT_RUNTIME, "runtime", f"{type(exc).__name__}: {exc}")
    if args.kind != "diagrams":
        print(json.dumps({"run_id": man["run_id"], "verdicts": _jsonable(man["verdicts"])}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
