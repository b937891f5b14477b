"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--items 3000] [--rows 20000] [--repeat 5]

Prints the best-of-``repeat`` wall time per kernel for each backend and the speed-up.
"""

import argparse
import timeit

import numpy as np

from rebus import _pykernels, kernels
from rebus.model import Hyperparams, build_context_table
from rebus.seqmine import mine_frequent_substrings

try:
    from rebus import _ckernels
except ImportError:
    _ckernels = None


def make_problem(n_items, n_rows, k, seed=0):
    rng = np.random.default_rng(seed)
    seqs = [rng.integers(0, n_items, size=int(rng.integers(5, 40))).tolist() for _ in range(n_rows // 10)]
    f = mine_frequent_substrings(seqs, 2, 3)
    prefixes = [s[:j] for s in seqs for j in range(1, len(s))][:n_rows]
    table = build_context_table(prefixes, Hyperparams(), f)
    P = rng.normal(scale=0.1, size=(n_items, k))
    beta = np.zeros(n_items)
    return table, P, beta, rng


def bench(impl, table, P, beta, rng, batch, repeat):
    rows = rng.integers(0, len(table), batch)
    pos = rng.integers(0, P.shape[0], batch)
    neg = rng.integers(0, P.shape[0], batch)
    all_rows = np.arange(min(len(table), 2048))
    gP, gb = np.zeros_like(P), np.zeros_like(beta)
    m, v = np.zeros_like(P), np.zeros_like(P)
    tab = (table.long_ptr, table.long_idx, table.short_ptr, table.short_idx, table.short_w)

    def grad():
        kernels.bpr_grad(P, beta, *tab, rows, pos, neg, 1.0, 0.5, 0.5, 1.0 / batch, gP, gb, impl=impl)

    def ctx():
        kernels.context_vectors(P, *tab, all_rows, 1.0, 0.5, 0.5, impl=impl)

    def adam():
        kernels.adam_step(P.copy(), gP, m, v, 1e-3, 0.9, 0.999, 1e-8, 1, 0.0, impl=impl)

    out = {}
    for name, fn in (("bpr_grad", grad), ("context_vectors", ctx), ("adam_step", adam)):
        n = 20 if impl is _pykernels else 200
        out[name] = min(timeit.repeat(fn, number=n, repeat=repeat)) / n
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--items", type=int, default=3000)
    ap.add_argument("--rows", type=int, default=20000)
    ap.add_argument("--k", type=int, default=10)
    ap.add_argument("--batch", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    table, P, beta, rng = make_problem(args.items, args.rows, args.k)
    print(f"items={args.items} rows={len(table)} k={args.k} batch={args.batch} default backend={kernels.BACKEND}")
    py = bench(_pykernels, table, P, beta, rng, args.batch, args.repeat)
    if _ckernels is None:
        print("compiled extension not built; fallback only")
    cy = bench(_ckernels, table, P, beta, rng, args.batch, args.repeat) if _ckernels else {}
    print(f"{'kernel':<16}{'python (ms)':>14}{'cython (ms)':>14}{'speed-up':>10}")
    for name, t in py.items():
        c = cy.get(name)
        cs = f"{1e3 * c:14.3f}{t / c:9.1f}x" if c else f"{'-':>14}{'-':>10}"
        print(f"{name:<16}{1e3 * t:14.3f}{cs}")


if __name__ == "__main__":
    main()
