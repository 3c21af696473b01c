"""Frames per second of the compiled and pure-Python frame loops.

Usage: python3 benchmarks/bench_engine.py [--frames N] [--kind pomdp|posg|none]

Both backends replay the same seeded run and the final parameters are
compared, so the timing is only reported for runs that agree bit for bit.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from greenqueue.engine import LearnerSettings, Simulation, available_backends
from greenqueue.harness.config import build_controller, build_network, learner_settings, parse_config, p0_vector
from greenqueue.learning import delay_scale


def _settings(cfg, net, kind: str) -> LearnerSettings:
    if kind == "none":
        return LearnerSettings(kind="none", beta=1.0, p0=p0_vector(cfg), f_scale=delay_scale(net))
    return learner_settings(cfg, net, kind)


def time_backend(backend: str, frames: int, kind: str, seed: int = 0) -> tuple[float, np.ndarray]:
    cfg = parse_config(None)
    net = build_network(cfg)
    sim = Simulation(net, build_controller(cfg, net), _settings(cfg, net, kind), seed=seed, backend=backend)
    start = time.perf_counter()
    sim.run(frames)
    return time.perf_counter() - start, sim.controller.theta.copy()


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--frames", type=int, default=20_000)
    ap.add_argument("--kind", default="pomdp", choices=["pomdp", "posg", "none"])
    args = ap.parse_args(argv)
    results = {}
    for backend in available_backends():
        elapsed, theta = time_backend(backend, args.frames, args.kind)
        results[backend] = (elapsed, theta)
        print(f"{backend:>9}: {args.frames / elapsed:12.0f} frames/s  ({elapsed:.3f} s)")
    if len(results) == 2:
        (tc, thc), (tp, thp) = results["compiled"], results["python"]
        same = np.array_equal(thc, thp)
        print(f"  speedup: {tp / tc:.1f}x   identical parameters: {same}")
        if not same:
            raise SystemExit("backends disagree")
    else:
        print("compiled backend not built; run `python3 setup.py build_ext --inplace`")


if __name__ == "__main__":
    main()
