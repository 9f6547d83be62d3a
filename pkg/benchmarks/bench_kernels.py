"""Time the numpy and numba kernel backends on a training-sized batch.

    python benchmarks/bench_kernels.py [--batch 512] [--negatives 50] [--dim 64] [--repeats 20]

Each row is one model kind: median seconds for a forward pass (scores) and a
forward+backward pass (scores plus parameter gradients). Both backends must
agree on the scores; the script exits non-zero if they do not.
"""
import argparse
import statistics
import sys
import time

import numpy as np

from cfkgr import kernels
from cfkgr.models import ModelConfig, batch_view, init_model

KINDS = ("TransE", "ComplEx", "RESCAL", "TuckER")


def timed(fn, repeats):
    fn()  # warm-up, includes JIT compilation
    runs = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        runs.append(time.perf_counter() - start)
    return statistics.median(runs)


def bench(kind, backend, args, rng):
    dim = args.dim if kind != "RESCAL" else max(8, args.dim // 4)
    cfg = ModelConfig(kind=kind, entity_dim=dim, relation_dim=dim // 2 if kind == "TuckER" else None,
                      reciprocal=True)
    model = init_model(cfg, args.entities, 50, seed=0)
    n = args.batch * (args.negatives + 1) * 2
    h, t = rng.integers(args.entities, size=(2, n))
    r = rng.integers(100, size=n)
    w = rng.normal(size=n)

    old, kernels.backend = kernels.backend, backend
    try:
        forward = timed(lambda: batch_view(model, h, r, t).scores(), args.repeats)

        def both():
            view = batch_view(model, h, r, t)
            view.scores()
            view.grad(w)

        backward = timed(both, args.repeats)
        scores = batch_view(model, h, r, t).scores()
    finally:
        kernels.backend = old
    return forward, backward, scores


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=512)
    p.add_argument("--negatives", type=int, default=50)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--entities", type=int, default=2000)
    p.add_argument("--repeats", type=int, default=20)
    args = p.parse_args(argv)

    np_backend = kernels.load_backend(use_numba=False)
    nb_backend = kernels.load_backend(use_numba=True)
    if nb_backend.NAME != "numba":
        print("numba is not importable; only the numpy backend can be timed", file=sys.stderr)
        return 1

    print(f"{args.batch} positives x {args.negatives + 1} candidates x 2 directions per batch")
    print(f"{'kind':<9}{'numpy fwd':>11}{'numba fwd':>11}{'numpy f+b':>11}{'numba f+b':>11}{'speedup':>9}")
    status = 0
    for kind in KINDS:
        f0, b0, s0 = bench(kind, np_backend, args, np.random.default_rng(1))
        f1, b1, s1 = bench(kind, nb_backend, args, np.random.default_rng(1))
        if not np.allclose(s0, s1, rtol=1e-10, atol=1e-12):
            print(f"{kind}: backends disagree", file=sys.stderr)
            status = 1
        print(f"{kind:<9}{f0:>11.4f}{f1:>11.4f}{b0:>11.4f}{b1:>11.4f}{b0 / b1:>8.2f}x")
    return status


if __name__ == "__main__":
    sys.exit(main())
