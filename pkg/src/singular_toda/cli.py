"""Command line driver: ``singular-toda <mode> --config <path> [--out DIR] [--refine K]``.

Modes: check, solve, sweep, probe, validate.  Exit codes: 0 success,
2 configuration error, 3 numerical failure, 4 validation failure.
BlowUp and MaxIter in solve mode are findings and exit 0.
"""
from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import math
import os
import sys
from pathlib import Path

SCHEMA_VERSION = 1
THREADS_ENV = "SINGULAR_TODA_THREADS"
MODES = ("check", "solve", "sweep", "probe", "validate")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VALIDATION = 0, 2, 3, 4

logger = logging.getLogger("singular_toda")


class ConfigError(Exception):
    """Malformed or inconsistent run configuration; the message names the location."""


# ------------------------------------------------------------------ config

SECTION_KEYS = {
    "": {"schema_version", "mode", "problem", "grid", "iteration", "output", "seed", "check",
         "sweep", "probe", "validate"},
    "problem": {"points", "weights", "dimension", "far_exponent", "validation", "family",
                "epsilon", "scale", "alpha", "center"},
    "check": {"tolerance"},
    "sweep": {"entries", "values", "tied", "samples", "low", "high", "solve"},
    "probe": {"kind", "epsilon", "weights", "scales", "p4_distance", "sanity"},
    "validate": {"cases", "oracle_nodes"},
}


def parse_config(text: str) -> dict:
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"line {err.lineno}, column {err.colno}: {err.msg}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("top level: expected a JSON object")
    if cfg.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: expected {SCHEMA_VERSION}, "
                          f"got {cfg.get('schema_version')!r}")
    _check_keys(cfg, "")
    for sec in ("problem", "check", "sweep", "probe", "validate", "grid", "iteration"):
        if sec in cfg and not isinstance(cfg[sec], dict):
            raise ConfigError(f"{sec}: expected an object")
        if sec in SECTION_KEYS and sec in cfg:
            _check_keys(cfg[sec], sec)
    # grid and iteration keys are dataclass fields; reject typos in every mode
    from .discretization import GridConfig
    from .toda_operator import IterationConfig
    for sec, cls in (("grid", GridConfig), ("iteration", IterationConfig)):
        extra = sorted(set(cfg.get(sec, {})) - set(cls.__dataclass_fields__))
        if extra:
            raise ConfigError(f"{sec}: unknown key {extra[0]!r}")
    return cfg


def _check_keys(obj: dict, where: str):
    extra = sorted(set(obj) - SECTION_KEYS[where])
    if extra:
        raise ConfigError(f"{where or 'top level'}: unknown key {extra[0]!r}")


def _dataclass_from(cls, data: dict, where: str):
    known = set(cls.__dataclass_fields__)
    extra = sorted(set(data) - known)
    if extra:
        raise ConfigError(f"{where}: unknown key {extra[0]!r}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{where}: {err}") from None


def grid_config(cfg: dict, refine: int):
    from .discretization import GridConfig
    n = int(cfg.get("problem", {}).get("dimension", 2))
    base = GridConfig.for_dimension(n)
    data = {**{k: getattr(base, k) for k in base.__dataclass_fields__}, **cfg.get("grid", {})}
    g = _dataclass_from(GridConfig, data, "grid")
    return g.refined(refine) if refine else g


def iteration_config(cfg: dict):
    from .toda_operator import IterationConfig
    return _dataclass_from(IterationConfig, dict(cfg.get("iteration", {})), "iteration")


def build_problem(cfg: dict):
    """SourceSet from the ``problem`` section.

    ``family: "epsilon"`` builds the seven-source counterexample family with
    the probe geometry at ``scale``; ``family: "single"`` a validation source
    of exponent ``alpha``.
    """
    import numpy as np
    from .diagnostics import ProbeSpec, probe_sources
    from .liouville_n import single_source
    from .problem_model import SourceSet

    p = cfg.get("problem")
    if p is None:
        raise ConfigError("problem: section required for this mode")
    fam = p.get("family")
    try:
        if fam == "epsilon":
            eps = float(p.get("epsilon", 0.1))
            return probe_sources(ProbeSpec("toda", epsilon=eps), float(p.get("scale", 10.0)))
        if fam == "single":
            return single_source(float(p.get("alpha", 0.0)), int(p.get("dimension", 2)),
                                 p.get("center"))
        if fam is not None:
            raise ConfigError(f"problem.family: unknown family {fam!r}")
        if "points" not in p or "weights" not in p:
            raise ConfigError("problem: 'points' and 'weights' are required")
        n = int(p.get("dimension", 2))
        pts = np.asarray(p["points"], dtype=float).reshape(-1, n) if len(p["points"]) \
            else np.zeros((0, n))
        w = np.asarray(p["weights"], dtype=float)
        if w.ndim == 1:
            w = w[None, :]
        return SourceSet(pts, w, n, p.get("far_exponent"), bool(p.get("validation", False)))
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(f"problem: {err}") from None


# ------------------------------------------------------------------ output

def jsonable(obj):
    """Plain JSON types; non-finite floats become null."""
    import numpy as np
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path: Path, obj):
    path.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def fmt(x) -> str:
    return format(float(x), ".17g")


def field_csv(nodes, chart, u) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = nodes.shape[1]
    w.writerow([f"x{k + 1}" for k in range(n)] + ["chart"] + [f"u{i + 1}" for i in range(len(u))])
    for j in range(len(nodes)):
        w.writerow([fmt(c) for c in nodes[j]] + [int(chart[j])] + [fmt(ui[j]) for ui in u])
    return buf.getvalue()


# ------------------------------------------------------------------- modes

def run_check(cfg, out: Path, refine: int) -> int:
    from .problem_model import check_conditions
    s = build_problem(cfg)
    tol = float(cfg.get("check", {}).get("tolerance", 0.0))
    rep = check_conditions(s, tol).as_dict()
    write_json(out / "condition_report.json", rep)
    print(json.dumps(jsonable(_condition_flags(rep)), sort_keys=True))
    return EXIT_OK


def _condition_flags(rep: dict) -> dict:
    flags = {k: v["holds"] for k, v in rep.items() if isinstance(v, dict) and "holds" in v}
    flags.update({f"A.{k}": v["holds"] for k, v in rep.get("assumptions_A", {}).items()})
    return flags


def _solve(s, cfg, refine):
    from .discretization import build_grid
    from .liouville_n import solve_n
    from .toda_operator import solve
    grid = build_grid(s, grid_config(cfg, refine))
    it = iteration_config(cfg)
    return solve(s, it, grid) if s.is_toda else solve_n(s, it, grid)


def run_solve(cfg, out: Path, refine: int) -> int:
    from .diagnostics import diagnose, history_csv
    s = build_problem(cfg)
    res = _solve(s, cfg, refine)
    summary = res.summary()
    summary["grid"] = res.grid.config.as_dict()
    summary["refine"] = refine
    write_json(out / "summary.json", summary)
    (out / "history.csv").write_text(history_csv(res.history))
    (out / "field.csv").write_text(field_csv(res.grid.nodes, res.grid.chart, res.u))
    points = list(s.points) if s.m else None
    write_json(out / "diagnostics.json", diagnose(res, sigma_points=points).as_dict())
    print(f"status {res.status.value} after {len(res.history)} iterations")
    return EXIT_OK


def _sweep_cells(s, sec: dict, seed):
    import numpy as np
    w = s.weights
    entries = sec.get("entries", "all")
    if entries == "all":
        entries = [[i, l] for i in range(w.shape[0]) for l in range(w.shape[1])]
    entries = [tuple(int(v) for v in e) for e in entries]
    for e in entries:
        if not (0 <= e[0] < w.shape[0] and 0 <= e[1] < w.shape[1]):
            raise ConfigError(f"sweep.entries: {list(e)} outside the weight matrix")
    if sec.get("samples"):
        rng = np.random.default_rng(seed)
        lo, hi = float(sec.get("low", 0.0)), float(sec.get("high", 0.99))
        for _ in range(int(sec["samples"])):
            cell = w.copy()
            for e in entries:
                cell[e] = rng.uniform(lo, hi)
            yield cell
        return
    values = sec.get("values")
    if not values:
        raise ConfigError("sweep: 'values' or 'samples' required")
    combos = ([(v,) * len(entries) for v in values] if sec.get("tied", True)
              else itertools.product(values, repeat=len(entries)))
    for combo in combos:
        cell = w.copy()
        for e, v in zip(entries, combo):
            cell[e] = float(v)
        yield cell


def run_sweep(cfg, out: Path, refine: int) -> int:
    from dataclasses import replace
    from .diagnostics import mass_check, slope_fit
    from .problem_model import ConfigurationError, check_conditions
    from .toda_operator import DegenerateFieldError

    base = build_problem(cfg)
    sec = cfg.get("sweep", {})
    do_solve = bool(sec.get("solve", False))
    rows, header = [], None
    for cell in _sweep_cells(base, sec, cfg.get("seed", 0)):
        try:
            s = replace(base, weights=cell)
        except ConfigurationError as err:
            raise ConfigError(f"sweep: {err}") from None
        flags = _condition_flags(check_conditions(s).as_dict())
        row = {f"w{i + 1}_{l + 1}": fmt(cell[i, l]) for i in range(cell.shape[0])
               for l in range(cell.shape[1])}
        row.update({k: str(v) for k, v in sorted(flags.items())})
        status, ms, sl = "skipped", [], []
        if do_solve:
            try:
                res = _solve(s, cfg, refine)
                status = res.status.value
                if res.converged:
                    ms = mass_check(res)["masses"]
                    sl = [slope_fit(u, res.grid).slope for u in res.u]
            except DegenerateFieldError:
                status = "degenerate"
        row["status"] = status
        for i in range(cell.shape[0]):
            row[f"mass{i + 1}"] = fmt(ms[i]) if ms else ""
            row[f"slope{i + 1}"] = fmt(sl[i]) if sl else ""
        header = header or list(row)
        rows.append(row)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    (out / "sweep.csv").write_text(buf.getvalue())
    print(f"{len(rows)} sweep cells")
    return EXIT_OK


def run_probe(cfg, out: Path, refine: int) -> int:
    from .diagnostics import ProbeSpec, nonexistence_probe, sigma_csv, trajectory_csv
    sec = dict(cfg.get("probe", {}))
    for k in ("weights", "scales"):
        if k in sec and sec[k] is not None:
            sec[k] = tuple(sec[k])
    spec = _dataclass_from(ProbeSpec, sec, "probe")
    try:
        spec.beta()
    except ValueError as err:
        raise ConfigError(f"probe: {err}") from None
    rep = nonexistence_probe(spec, iteration_config(cfg), grid_config(cfg, refine))
    write_json(out / "probe.json", rep.as_dict())
    (out / "trajectory.csv").write_text(trajectory_csv(rep))
    (out / "sigma.csv").write_text(sigma_csv([t for r in rep.rows for t in r.sigma]))
    print(f"verdict {rep.verdict}; mass {rep.concentration}")
    return EXIT_OK


def run_validate(cfg, out: Path, refine: int) -> int:
    from .oracle import validation_suite
    sec = cfg.get("validate", {})
    rows = validation_suite(cases=[tuple(c) for c in sec.get("cases", [])] or None,
                            refine=refine, oracle_nodes=int(sec.get("oracle_nodes", 3000)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["check", "value", "tolerance", "passed"])
    for r in rows:
        w.writerow([r["check"], fmt(r["value"]), fmt(r["tolerance"]), r["passed"]])
    (out / "validation.csv").write_text(buf.getvalue())
    write_json(out / "validation.json", rows)
    for r in rows:
        print(f"{'PASS' if r['passed'] else 'FAIL'}  {r['check']}  {r['value']:.3e} "
              f"(tol {r['tolerance']:.1e})")
    return EXIT_OK if all(r["passed"] for r in rows) else EXIT_VALIDATION


RUNNERS = {"check": run_check, "solve": run_solve, "sweep": run_sweep, "probe": run_probe,
           "validate": run_validate}


# -------------------------------------------------------------------- main

def _apply_thread_override():
    n = os.environ.get(THREADS_ENV)
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = n


def main(argv=None) -> int:
    _apply_thread_override()
    ap = argparse.ArgumentParser(prog="singular-toda", description=__doc__.splitlines()[0])
    ap.add_argument("mode", choices=MODES)
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--out", type=Path, default=None)
    ap.add_argument("--refine", type=int, default=0)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")

    from .discretization import GridError
    from .problem_model import ConfigurationError
    from .toda_operator import DegenerateFieldError

    try:
        text = args.config.read_text()
    except OSError as err:
        print(f"config error: {args.config}: {err.strerror}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = parse_config(text)
        if cfg.get("mode", args.mode) != args.mode:
            raise ConfigError(f"mode: config says {cfg['mode']!r}, command line {args.mode!r}")
        if args.refine < 0:
            raise ConfigError("--refine must be non-negative")
        out = args.out or Path(cfg.get("output", "."))
        out.mkdir(parents=True, exist_ok=True)
        return RUNNERS[args.mode](cfg, out, args.refine)
    except (ConfigError, ConfigurationError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegenerateFieldError, GridError, FloatingPointError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
