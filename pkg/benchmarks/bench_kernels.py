"""Time the hot kernels compiled with numba and as plain Python.

Each mode runs in its own interpreter because the switch is read at import
time.  Compilation happens in a warm-up call and is not timed.

    python benchmarks/bench_kernels.py            # both modes, side by side
    python benchmarks/bench_kernels.py --repeat 5
"""

import argparse
import json
import os
import subprocess
import sys
import time


def workloads():
    import numpy as np

    from coarsembed import generators as gen
    from coarsembed.coarsening import CoarseningConfig, collapse_level
    from coarsembed.evaluation import train_logreg
    from coarsembed.partition import PartitionConfig, make_partition
    from coarsembed.sampling import fill_pool
    from coarsembed.trainer import TrainConfig, init_embedding, train_level

    g = gen.planted_partition(2000, 10, 10, seed=0)[0]
    d = 32
    M0 = init_embedding(g.vertex_count, d, np.random.default_rng(0))
    plan = make_partition(g, None, d, PartitionConfig(parts=4, B=5))
    rng = np.random.default_rng(1)
    X = rng.normal(size=(2000, d))
    y = (X[:, 0] > 0).astype(np.int8)

    def train():
        train_level(g, M0.copy(), TrainConfig(dim=d, seed=0), 2)

    def waves():
        train_level(g, M0.copy(), TrainConfig(dim=d, seed=0, concurrency=512), 2)

    def coarsen_one():
        collapse_level(g, CoarseningConfig())

    def pool():
        fill_pool(g, plan, (1, 0), plan.B, 7)

    def logreg():
        train_logreg(X, y)

    return {"train 2 epochs": train, "waves 2 epochs": waves, "coarsen 1 level": coarsen_one,
            "fill 1 pool": pool, "logreg fit": logreg}


def worker(repeat):
    from coarsembed._jit import JIT_ENABLED

    out = {"jit": JIT_ENABLED, "seconds": {}}
    for name, fn in workloads().items():
        fn()
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            fn()
            best = min(best, time.perf_counter() - t0)
        out["seconds"][name] = best
    print(json.dumps(out))


def run_mode(disable, repeat):
    env = dict(os.environ)
    env.pop("COARSEMBED_DISABLE_JIT", None)
    if disable:
        env["COARSEMBED_DISABLE_JIT"] = "1"
    res = subprocess.run([sys.executable, __file__, "--worker", "--repeat", str(repeat)],
                         env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3, help="timed runs per kernel (best is kept)")
    ap.add_argument("--worker", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)
    if args.worker:
        worker(args.repeat)
        return 0
    fast = run_mode(False, args.repeat)
    slow = run_mode(True, args.repeat)
    if not fast["jit"]:
        print("warning: numba unavailable, both columns are the fallback", file=sys.stderr)
    print(f"{'kernel':<18}{'numba s':>12}{'python s':>12}{'speedup':>10}")
    for name, t in fast["seconds"].items():
        s = slow["seconds"][name]
        print(f"{name:<18}{t:>12.4f}{s:>12.4f}{s / t:>9.0f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
