"""Numpy fallback for the flat-scan kernel.

Same contract as the compiled kernel: float64-accumulated dot products cast
to float32, per-query top-k ordered by descending score with ties broken by
ascending row index.
"""

from __future__ import annotations

import numpy as np

_REF_CHUNK = 65536
_QUERY_CHUNK = 256


def topk_scan(refs: np.ndarray, queries: np.ndarray, k: int):
    """Return (idx, scores): int64 and float32 arrays of shape (Q, k)."""
    n_refs = refs.shape[0]
    n_q = queries.shape[0]
    out_idx = np.empty((n_q, k), dtype=np.int64)
    out_scr = np.empty((n_q, k), dtype=np.float32)

    for qs in range(0, n_q, _QUERY_CHUNK):
        qb = queries[qs:qs + _QUERY_CHUNK].astype(np.float64)
        run_scr = None
        run_idx = None
        for rs in range(0, n_refs, _REF_CHUNK):
            rb = refs[rs:rs + _REF_CHUNK].astype(np.float64)
            scr = (qb @ rb.T).astype(np.float32)
            idx = np.broadcast_to(
                np.arange(rs, rs + rb.shape[0], dtype=np.int64), scr.shape)
            if run_scr is not None:
                scr = np.concatenate([run_scr, scr], axis=1)
                idx = np.concatenate([run_idx, idx], axis=1)
            take = min(k, scr.shape[1])
            # stable sort on -score: equal scores keep column order, and
            # columns are laid out in ascending reference index
            order = np.argsort(-scr, axis=1, kind="stable")[:, :take]
            run_scr = np.take_along_axis(scr, order, axis=1)
            run_idx = np.take_along_axis(idx, order, axis=1)
        out_scr[qs:qs + run_scr.shape[0]] = run_scr
        out_idx[qs:qs + run_idx.shape[0]] = run_idx
    return out_idx, out_scr
