"""Command line: ``greenqueue {run,sweep,oracle-check,baseline}``.

Failures print one JSON object ``{"error": <category>, "message": ...}`` on
stderr and exit nonzero: 2 usage, 3 config, 4 io, 5 certification, 6 runtime.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from ..baselines import BASELINE_KINDS
from ..instances import random_instance, random_tabular_params
from ..model import AvailabilityViolation
from ..oracle import (build_model, exact_gradient_pomdp, finite_diff_gradient, relative_error, solve_poisson,
                      stationarity_residual, stationary_distribution)
from .config import ConfigError, ExperimentConfig, load_config, parse_config
from .experiment import run_experiment, run_scheme, run_sweep
from .outputs import OutputError, emit_outputs

__all__ = ["main", "oracle_check"]

EXIT = {"usage": 2, "config": 3, "io": 4, "certification": 5, "runtime": 6}
FD_TOL = 1e-5
POISSON_TOL = 1e-9


class _Fail(Exception):
    def __init__(self, category: str, message: str):
        self.category = category
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Fail("usage", message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML configuration (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="override run.seed (and sweep.seeds)")
    p.add_argument("--out", type=Path, help="output directory (overrides output.directory)")
    p.add_argument("--workers", type=int, default=1, help="worker processes for sweeps")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="greenqueue", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _common(sub.add_parser("run", help="one experiment as configured"))
    _common(sub.add_parser("sweep", help="sweep the configured axis over every scheme and seed"))
    p = sub.add_parser("oracle-check", help="exact-gradient, Poisson and stationarity certification")
    _common(p)
    p.add_argument("--instances", type=int, default=20, help="random enumerable instances to check")
    p = sub.add_parser("baseline", help="one baseline run")
    _common(p)
    p.add_argument("--kind", required=True, choices=BASELINE_KINDS)
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else parse_config(None)
    changes = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("run.seed", "must be non-negative")
        changes["run.seed"] = args.seed
        changes["sweep.seeds"] = [args.seed]
    if args.out is not None:
        changes["output.directory"] = str(args.out)
    if args.workers < 1:
        raise _Fail("usage", "--workers must be at least 1")
    return cfg.updated(changes) if changes else cfg


def oracle_check(n_instances: int = 20, seed: int = 0, h: float = 1e-5) -> dict:
    """Certify the exact gradient, Poisson solve and stationary law on random small instances."""
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n_instances):
        net = random_instance(rng)
        params = random_tabular_params(rng, net)
        gamma = rng.uniform(0.0, 1.0, net.K)
        model = build_model(net, params, gamma)
        pi = stationary_distribution(model)
        sol = solve_poisson(model)
        exact = exact_gradient_pomdp(model, pi, sol)
        fd = finite_diff_gradient(net, params, gamma, h=h, skeleton=model.skeleton)
        err = max(float(np.max(relative_error(g, f), initial=0.0)) for g, f in zip(exact, fd))
        rows.append({"instance": i, "users": net.K, "states": model.n_states, "fd_max_relative_error": err,
                     "poisson_residual": float(sol.residual),
                     "stationarity_residual": float(stationarity_residual(model, pi))})
    worst_fd = max(r["fd_max_relative_error"] for r in rows)
    worst_poisson = max(r["poisson_residual"] for r in rows)
    return {"instances": rows, "worst_fd_relative_error": worst_fd, "worst_poisson_residual": worst_poisson,
            "fd_tolerance": FD_TOL, "poisson_tolerance": POISSON_TOL,
            "passed": bool(worst_fd <= FD_TOL and worst_poisson <= POISSON_TOL)}


def _dispatch(args) -> int:
    cfg = _config(args)
    out = Path(cfg.output.directory)
    if args.command == "run":
        files = emit_outputs(run_experiment(cfg), cfg, out)
    elif args.command == "baseline":
        files = emit_outputs(run_scheme(cfg, args.kind), cfg, out)
    elif args.command == "sweep":
        files = emit_outputs(run_sweep(cfg, workers=args.workers), cfg, out)
    else:
        seed = cfg.run.seed
        report = oracle_check(args.instances, seed)
        path = out / "oracle_check.json"
        try:
            out.mkdir(parents=True, exist_ok=True)
            path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
        except OSError as err:
            raise OutputError(path, err.strerror or str(err)) from None
        print(json.dumps({"passed": report["passed"], "worst_fd_relative_error": report["worst_fd_relative_error"],
                          "worst_poisson_residual": report["worst_poisson_residual"], "report": str(path)}))
        if not report["passed"]:
            raise _Fail("certification", "oracle check exceeded its tolerances; see " + str(path))
        return 0
    print(json.dumps({"written": [str(p) for p in files]}))
    return 0


def main(argv: list[str] | None = None) -> int:
    try:
        return _dispatch(build_parser().parse_args(argv))
    except _Fail as err:
        category, message = err.category, str(err)
    except ConfigError as err:
        category, message = "config", str(err)
    except OutputError as err:
        category, message = "io", str(err)
    except AvailabilityViolation as err:
        category, message = "runtime", f"energy availability violated: {err}"
    except (ValueError, RuntimeError) as err:
        category, message = "runtime", str(err)
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return EXIT[category]


if __name__ == "__main__":
    sys.exit(main())
