"""Command-line front end: ``lossrate <command> --config cfg.json``.

Exit status is 0 on success, 2 when the configuration or a model
precondition is invalid, 3 when a hypothesis of the asymptotic results
fails, and 4 when an exact computation exceeds its state capacity.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import platform
import sys
import time
import warnings
from typing import Any, Dict, List, Optional

import numpy as np
import scipy

from . import __version__
from .asymptotics import AsymptoticEstimate, barrier_asymptotics, hypothesis_report, increment_asymptotics
from .config import ExperimentConfig, load_config
from .exceptions import CapacityError, ConfigError, LossRateError, NonUniqueOptimumError
from .legendre import DEFAULT_TOL as LEGENDRE_TOL
from .legendre import legendre_transform
from .montecarlo import mc_barrier, mc_increment
from .oracle import LatticePortfolio, exact_barrier, exact_increment
from .path_rate import DEFAULT_TOL as PATH_TOL
from .path_rate import multiclass_rate, path_rate

COMMANDS = (
    "legendre", "rate-path", "rate-multiclass", "barrier", "increment",
    "oracle-barrier", "oracle-increment", "simulate", "hypothesis",
)
EXIT_OK, EXIT_INVALID, EXIT_HYPOTHESIS, EXIT_CAPACITY = 0, 2, 3, 4


class HypothesisFailure(Exception):
    """Raised after the report is built when a checked hypothesis fails."""

    def __init__(self, report):
        super().__init__("hypothesis check failed")
        self.report = report


def _jsonable(obj):
    """Recursively convert to JSON types; non-finite floats become strings."""
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def _estimate_dict(est: AsymptoticEstimate, caught) -> Dict[str, Any]:
    d = est.diagnostics
    tail = d.tail
    return {
        "optimum": list(est.optimum) if isinstance(est.optimum, tuple) else est.optimum,
        "decay": est.decay,
        "tilt": est.tilt,
        "prefactor": est.prefactor,
        "level": est.level,
        "lattice": None if est.lattice is None else {"span": est.lattice.span, "offset": est.lattice.offset},
        "estimates": [{"n": n, "estimate": v} for n, v in est.estimates.items()],
        "diagnostics": {
            "rates": [
                {"epoch": list(k) if isinstance(k, tuple) else k, "rate": r} for k, r in d.rates.items()
            ],
            "gap": d.gap,
            "runner_up": list(d.runner_up) if isinstance(d.runner_up, tuple) else d.runner_up,
            "uniqueness_ok": d.uniqueness_ok,
            "tail": {
                "status": tail.status, "slope": tail.slope, "epochs": list(tail.epochs),
                "rates": list(tail.rates), "detail": tail.detail,
            },
            "lattice_mismatch_n": list(d.lattice_warnings),
            "notes": list(d.notes),
            "passed": d.passed,
        },
        "warnings": sorted({str(w.message) for w in caught}),
    }


def _asymptotics(cfg: ExperimentConfig, target: str, n_list):
    U, tau = cfg.loss(), cfg.default_times()
    kw = dict(T_check=cfg.get("T_check"), tol=cfg.get("tol", LEGENDRE_TOL))
    if cfg.get("gap_tol") is not None:
        kw["gap_tol"] = cfg.get("gap_tol")
    if target == "barrier":
        return barrier_asymptotics(U, tau, cfg.barrier(), n_list, **kw)
    return increment_asymptotics(U, tau, cfg.increment_barrier(), n_list, **kw)


def _target(cfg: ExperimentConfig) -> str:
    if "target" in cfg.data:
        return cfg.data["target"]
    if "barrier" in cfg.data:
        return "barrier"
    if "increment_barrier" in cfg.data:
        return "increment"
    raise ConfigError("config needs 'barrier' or 'increment_barrier'")


def run_command(command: str, cfg: ExperimentConfig) -> Dict[str, Any]:
    """Dispatch one command and return its ``results`` section."""
    cfg.require(command)
    if command == "legendre":
        U = cfg.loss()
        tol = cfg.get("tol", LEGENDRE_TOL)
        out = []
        for x in cfg.data["points"]:
            r = legendre_transform(U, x, tol)
            out.append({"x": x, "value": r.value, "argmax": r.argmax, "boundary_flag": r.boundary_flag})
        return {"points": out}
    if command == "rate-path":
        r = path_rate(cfg.data["path"], cfg.loss(), cfg.default_times(), cfg.get("tol", PATH_TOL),
                      augment_defect=cfg.get("augment_defect", False))
        return {"rate": r.value, "weights": list(r.weights), "gap": r.gap, "iterations": r.iterations}
    if command == "rate-multiclass":
        rate = multiclass_rate(cfg.data["path"], cfg.multiclass(), cfg.get("tol", PATH_TOL),
                               augment_defect=cfg.get("augment_defect", False))
        return {"rate": rate}
    if command in ("barrier", "increment"):
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            est = _asymptotics(cfg, command, cfg.data["n"])
        return _estimate_dict(est, caught)
    if command in ("oracle-barrier", "oracle-increment"):
        U, tau = cfg.loss(), cfg.default_times()
        cap = cfg.get("state_cap")
        rows = []
        for n in cfg.data["n"]:
            port = LatticePortfolio(n, U, tau, **({"state_cap": cap} if cap else {}))
            if command == "oracle-barrier":
                p = exact_barrier(port, cfg.barrier())
            else:
                method = cfg.get("method", "dp")
                if method not in ("dp", "enumerate"):
                    raise ConfigError(f"oracle-increment method must be 'dp' or 'enumerate', got '{method}'")
                p = exact_increment(port, cfg.increment_barrier(), method=method)
            rows.append({"n": n, "probability": p})
        return {"probabilities": rows}
    if command == "simulate":
        U, tau = cfg.loss(), cfg.default_times()
        target = _target(cfg)
        method = cfg.get("method", "plain")
        if method not in ("plain", "tilted"):
            raise ConfigError(f"simulate method must be 'plain' or 'tilted', got '{method}'")
        seed = cfg.get("seed", 0)
        rows = []
        for n in cfg.data["n"]:
            tilt = None
            if method == "tilted":
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    tilt = _asymptotics(cfg, target, [n])
            fn = mc_barrier if target == "barrier" else mc_increment
            level = cfg.barrier() if target == "barrier" else cfg.increment_barrier()
            r = fn(U, tau, level, n, cfg.data["replications"], seed=seed, method=method, tilt=tilt,
                   n_jobs=cfg.get("n_jobs", 1))
            rows.append({"n": n, "estimate": r.estimate, "stderr": r.stderr, "method": r.method,
                         "replications": r.replications, "seed": r.seed})
        return {"target": target, "estimates": rows}
    if command == "hypothesis":
        target = _target(cfg)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                est = _asymptotics(cfg, target, cfg.get("n", []))
            except NonUniqueOptimumError as exc:
                raise HypothesisFailure({"target": target, "passed": False, "failure": str(exc),
                                         "tied": [list(e) if isinstance(e, tuple) else e for e in exc.epochs]})
        res = _estimate_dict(est, caught)
        res["target"] = target
        res["report"] = hypothesis_report(est)
        res["passed"] = est.diagnostics.passed
        if not res["passed"]:
            raise HypothesisFailure(res)
        return res
    raise ValueError(f"unknown command {command}")


def _csv_rows(command: str, results: Dict[str, Any]) -> List[list]:
    if command in ("barrier", "increment"):
        return [[r["n"], r["estimate"], "", "asymptotic"] for r in results["estimates"]]
    if command in ("oracle-barrier", "oracle-increment"):
        return [[r["n"], r["probability"], 0.0, "exact"] for r in results["probabilities"]]
    if command == "simulate":
        return [[r["n"], r["estimate"], r["stderr"], r["method"]] for r in results["estimates"]]
    if command == "hypothesis" and "estimates" in results:
        return [[r["n"], r["estimate"], "", "asymptotic"] for r in results["estimates"]]
    raise ConfigError(f"--format csv is only available for n-indexed results, not '{command}'")


def render(command: str, report: Dict[str, Any], fmt: str) -> str:
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "estimate", "stderr", "method"])
        for row in _csv_rows(command, report["results"]):
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        return buf.getvalue()
    return json.dumps(_jsonable(report), sort_keys=True, indent=2) + "\n"


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lossrate", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="experiment configuration (JSON)")
    p.add_argument("--out", help="report file; standard output when omitted")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--tol", type=float, help="override the config tolerance")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    started = time.perf_counter()
    status = EXIT_OK
    try:
        data = load_config(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise LossRateError("--seed must be nonnegative")
            data["seed"] = args.seed
        if args.tol is not None:
            if not args.tol > 0:
                raise LossRateError("--tol must be positive")
            data["tol"] = args.tol
        cfg = ExperimentConfig(data)
        try:
            results = run_command(args.command, cfg)
        except HypothesisFailure as hf:
            results, status = hf.report, EXIT_HYPOTHESIS
    except NonUniqueOptimumError as exc:
        print(f"hypothesis failure: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (LossRateError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    report = {
        "command": args.command,
        "config": data,
        "results": results,
        "versions": {"lossrate": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "timing": {"wall_seconds": time.perf_counter() - started},
    }
    try:
        text = render(args.command, report, args.format)
    except LossRateError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if status == EXIT_HYPOTHESIS:
        print("hypothesis failure: see report", file=sys.stderr)
    return status


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
