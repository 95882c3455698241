#!/usr/bin/env python3
"""Flat-scan throughput benchmark: compiled kernel vs numpy fallback.

Reports wall time, reference-payload scan rate (GB/s, one logical pass over
the payload per query batch), and seconds per (query, reference) pair for
each available backend, plus index memory overhead relative to the raw
payload. Single-threaded by default so the rate reads as per-core.

Usage:
    python benchmarks/bench_matcher.py --refs 100000 --dim 512 --queries 50
"""

import argparse
import json
import sys
import time

import numpy as np

from originid.embeddings import EmbeddingSet
from originid.matcher import HAVE_COMPILED, build_index
from originid.matcher import _scan_py


def make_data(n_refs, dim, n_queries, seed):
    rng = np.random.default_rng(seed)
    refs = rng.standard_normal((n_refs, dim)).astype(np.float32)
    refs /= np.linalg.norm(refs, axis=1, keepdims=True)
    queries = rng.standard_normal((n_queries, dim)).astype(np.float32)
    queries /= np.linalg.norm(queries, axis=1, keepdims=True)
    return refs, queries


def time_kernel(kernel, refs, queries, k, repeats):
    kernel.topk_scan(refs[: min(4000, refs.shape[0])], queries, k)   # warm up
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        kernel.topk_scan(refs, queries, k)
        best = min(best, time.perf_counter() - start)
    return best


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--refs", type=int, default=100_000)
    parser.add_argument("--dim", type=int, default=512)
    parser.add_argument("--queries", type=int, default=50)
    parser.add_argument("--k", type=int, default=10)
    parser.add_argument("--repeats", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--json", action="store_true", help="emit a JSON record")
    args = parser.parse_args(argv)

    refs, queries = make_data(args.refs, args.dim, args.queries, args.seed)
    payload = args.refs * args.dim * 4

    emb = EmbeddingSet(ids=np.arange(args.refs, dtype=np.uint64),
                       dim=args.dim, data=refs)
    index = build_index(emb)
    overhead = index.payload_bytes / refs.nbytes

    kernels = []
    if HAVE_COMPILED:
        from originid.matcher import _scan
        kernels.append(("compiled", _scan))
    kernels.append(("numpy", _scan_py))

    rows = []
    for name, kernel in kernels:
        seconds = time_kernel(kernel, index.data, queries, args.k, args.repeats)
        rows.append({
            "backend": name,
            "seconds": seconds,
            "scan_gb_per_s": payload / seconds / 1e9,
            "s_per_pair": seconds / (args.refs * args.queries),
        })

    record = {
        "refs": args.refs, "dim": args.dim, "queries": args.queries,
        "k": args.k, "payload_bytes": payload,
        "index_overhead": overhead, "backends": rows,
    }
    if args.json:
        json.dump(record, sys.stdout, indent=2)
        print()
        return 0

    print(f"refs={args.refs} dim={args.dim} queries={args.queries} k={args.k} "
          f"payload={payload / 1e6:.1f} MB index_overhead={overhead:.3f}x")
    print(f"{'backend':<10}{'seconds':>10}{'GB/s':>9}{'s/pair':>12}")
    for row in rows:
        print(f"{row['backend']:<10}{row['seconds']:>10.3f}"
              f"{row['scan_gb_per_s']:>9.2f}{row['s_per_pair']:>12.2e}")
    if len(rows) == 2:
        print(f"compiled speedup over numpy: "
              f"{rows[1]['seconds'] / rows[0]['seconds']:.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
