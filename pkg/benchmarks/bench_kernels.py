"""Compare the compiled kernels with the numpy fallback.

Usage::

    python3 benchmarks/bench_kernels.py [--repeat 5] [--seed 3]

The micro benchmarks time each kernel on a block graph taken from a desk-scale
benchmark fit; the end-to-end rows time ``fit`` in fresh interpreters with and
without ``CATMAXENT_PURE_PYTHON=1``.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from catmaxent import _kernels_py
from catmaxent.evaluation import generate_benchmark
from catmaxent.kernels import pack_patterns

try:
    from catmaxent import _kernels as compiled
except ImportError:  # extension not built
    compiled = None

FIT_SNIPPET = """
import time
from catmaxent.engine import fit
from catmaxent.evaluation import generate_benchmark
from catmaxent.kernels import BACKEND
b = generate_benchmark(20, 10, 5000, {seed})
t0 = time.perf_counter()
fit(b.schema, b.candidates[:{k}], b.marginals)
print(BACKEND, time.perf_counter() - t0)
"""


def graph_arrays(seed, k):
    """Descendant and membership arrays of the largest component of a candidate fit."""
    from catmaxent.engine import fit

    b = generate_benchmark(20, 10, 5000, seed)
    model, _ = fit(b.schema, b.candidates[:k], b.marginals)
    comp = max(model.components, key=lambda c: len(c.graph.blocks))
    return b, model, comp


def micro(args):
    b, model, comp = graph_arrays(args.seed, args.candidates)
    g = comp.graph
    n = len(g.blocks)
    desc = [sorted(d.index for d in g.descendants(blk)) for blk in g.blocks]
    desc_ptr = np.cumsum([0] + [len(d) for d in desc]).astype(np.int64)
    desc_idx = np.array([i for d in desc for i in d], dtype=np.int64)
    order = np.array(sorted(range(n), key=lambda i: -len(g.blocks[i].assignment)), dtype=np.int64)
    rng = np.random.default_rng(0)
    cum = rng.uniform(0, 1, size=(n, 1))
    mem = [sorted(blk.index for blk in g.blocks if c in blk.satisfied) for c in range(len(comp.constraint_ids))]
    mem_ptr = np.cumsum([0] + [len(m) for m in mem]).astype(np.int64)
    mem_idx = np.array([i for m in mem for i in m], dtype=np.int64)
    weights = rng.uniform(0.1, 1, n)
    targets = np.array([model.constraints[i].target for i in comp.constraint_ids])
    rows = np.ascontiguousarray(b.dataset.rows, dtype=np.int32)
    packed = pack_patterns([c.pattern for c in b.candidates])

    cases = {
        "inclusion_exclusion": lambda k: k.inclusion_exclusion(cum, order, desc_ptr, desc_idx),
        "constraint_sums": lambda k: k.constraint_sums(weights, mem_ptr, mem_idx),
        "scaling_sweep": lambda k: k.scaling_sweep(weights.copy(), np.zeros(len(targets)), targets,
                                                    mem_ptr, mem_idx),
        "match_patterns": lambda k: k.match_patterns(rows, *packed),
    }
    print(f"graph: {n} blocks, {len(desc_idx)} descendant links, {len(targets)} constraints")
    print("kernel\tpython_ms\tcython_ms\tspeedup")
    for name, call in cases.items():
        py = min(timeit.repeat(lambda: call(_kernels_py), number=1, repeat=args.repeat)) * 1e3
        if compiled is None:
            print(f"{name}\t{py:.3f}\tn/a\tn/a")
            continue
        cy = min(timeit.repeat(lambda: call(compiled), number=1, repeat=args.repeat)) * 1e3
        print(f"{name}\t{py:.3f}\t{cy:.3f}\t{py / cy:.1f}x")


def end_to_end(args):
    print("fit\tbackend\tseconds")
    for pure in ("0", "1"):
        env = dict(os.environ, CATMAXENT_PURE_PYTHON=pure)
        out = subprocess.run([sys.executable, "-c", FIT_SNIPPET.format(seed=args.seed, k=args.candidates)],
                             env=env, capture_output=True, text=True, check=True).stdout.split()
        print(f"{args.candidates} candidates\t{out[0]}\t{float(out[1]):.2f}")


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--candidates", type=int, default=14, help="candidates in the end-to-end fit")
    parser.add_argument("--no-fit", action="store_true", help="skip the end-to-end fit timings")
    args = parser.parse_args(argv)
    micro(args)
    if not args.no_fit:
        end_to_end(args)


if __name__ == "__main__":
    main()
