"""Time the numpy fallback against the compiled kernels.

Usage: python benchmarks/bench_kernels.py [--repeat N] [--rounds K]

Kernel timings call both backends in-process. The end-to-end timing runs a
desk-scale logistic experiment once per backend in a subprocess, because the
oracle layer binds the backend at import.
"""
import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from dbo_lab import kernels
from dbo_lab.datagen import SynthSpec, generate_synthetic
from dbo_lab.mixing import build_ring_mixing

END_TO_END = """
import json, time
from dbo_lab import kernels
from dbo_lab.config import RunConfig
from dbo_lab.harness import run_experiment
cfg = RunConfig(problem="logistic-synthetic", heterogeneity=40.0, r_v=2.0, rounds={rounds}, truth_every=0)
t0 = time.perf_counter()
run_experiment(cfg)
print(json.dumps({{"backend": kernels.BACKEND, "seconds": time.perf_counter() - t0}}))
"""


def kernel_cases(n=8, d=50, samples=2000):
    rng = np.random.default_rng(0)
    W = build_ring_mixing(n, 0.4)
    Z, T, P, D = (rng.standard_normal((n, d)) for _ in range(4))
    data = generate_synthetic(SynthSpec(n_agents=1, dim=d, samples_per_agent=samples, seed=0))[0]
    lam, om, v = rng.standard_normal(d), rng.standard_normal(d), rng.standard_normal(d)
    args = (data.x_train, data.y_train, data.x_test, data.y_test, lam, om, v,
            1.0 / samples, 1.0 / samples)
    return {
        "gossip": lambda k: k.gossip(W.slot_idx, W.slot_w, Z),
        "track": lambda k: k.track(W.slot_idx, W.slot_w, T, P, D),
        "combine": lambda k: k.combine(W.slot_idx, W.slot_w, Z, T, 0.05, 2.0),
        "logistic_directions": lambda k: k.logistic_directions(*args),
    }


def time_kernels(repeat):
    out = {}
    for name, fn in kernel_cases().items():
        out[name] = {}
        for backend in kernels.available():
            k = kernels.get(backend)
            timer = timeit.Timer(lambda: fn(k))
            number, _ = timer.autorange()
            best = min(timer.repeat(repeat=repeat, number=number)) / number
            out[name][backend] = best
    return out


def time_end_to_end(rounds):
    out = {}
    for backend in kernels.available():
        env = dict(os.environ, DBO_LAB_BACKEND=backend)
        proc = subprocess.run([sys.executable, "-c", END_TO_END.format(rounds=rounds)], env=env,
                              capture_output=True, text=True, check=True)
        res = json.loads(proc.stdout.strip().splitlines()[-1])
        out[res["backend"]] = res["seconds"]
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--rounds", type=int, default=200)
    args = parser.parse_args(argv)
    if kernels.compiled_kernels is None:
        print("compiled kernels are not built; timing the fallback only")
    rows = time_kernels(args.repeat)
    print(f"{'kernel':<22}" + "".join(f"{b + ' (us)':>16}" for b in kernels.available()) + f"{'speedup':>10}")
    for name, res in rows.items():
        line = f"{name:<22}" + "".join(f"{res[b] * 1e6:>16.2f}" for b in kernels.available())
        if "cython" in res:
            line += f"{res['python'] / res['cython']:>10.2f}"
        print(line)
    e2e = time_end_to_end(args.rounds)
    print(f"\nend-to-end logistic run, {args.rounds} rounds (n=8, p=50, 2000 samples per agent):")
    for backend, sec in e2e.items():
        print(f"  {backend:<8}{sec:8.2f} s")


if __name__ == "__main__":
    main()
