"""Flat index construction and exact top-k search over it."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..embeddings import EmbeddingSet, normalize_rows
from ..errors import DimensionMismatchError, OriginIdError

# Upper bound on queries handed to one kernel call; bounds heap/score memory.
_KERNEL_QUERY_BLOCK = 1024


@dataclass(frozen=True, eq=False)
class FlatIndex:
    """Unit-normalized reference rows stored contiguously in id order.

    Row order equals ascending id order, so the kernel's index tie-break is
    the contract's id tie-break.
    """

    ids: np.ndarray    # uint64, ascending
    dim: int
    data: np.ndarray   # float32 C-order, unit rows

    def __len__(self) -> int:
        return int(self.ids.shape[0])

    @property
    def payload_bytes(self) -> int:
        return int(self.data.nbytes)


@dataclass(frozen=True, eq=False)
class MatchResult:
    """Ranked hits for one query: (ref_id, cosine score), best first."""

    query_id: int
    hits: list

    def __post_init__(self):
        scores = [s for _, s in self.hits]
        if any(scores[i] < scores[i + 1] for i in range(len(scores) - 1)):
            raise OriginIdError("hit scores must be non-increasing")
        ref_ids = [r for r, _ in self.hits]
        if len(set(ref_ids)) != len(ref_ids):
            raise OriginIdError("duplicate reference id in hits")


def build_index(refs: EmbeddingSet) -> FlatIndex:
    """Normalize and lay out the reference rows for sequential scanning."""
    if len(refs) == 0:
        raise OriginIdError("cannot index an empty reference set")
    order = np.argsort(refs.ids, kind="stable")
    ids = np.ascontiguousarray(refs.ids[order])
    data = normalize_rows(refs.data[order], ids)
    data = np.ascontiguousarray(data, dtype=np.float32)
    ids.setflags(write=False)
    data.setflags(write=False)
    return FlatIndex(ids=ids, dim=refs.dim, data=data)


def search(index: FlatIndex, queries: EmbeddingSet, k: int,
           threads: int = 1) -> list[MatchResult]:
    """Exact top-k dot products of each query row against the index.

    Results are a pure function of (index, queries, k): worker count only
    changes wall time. Ties resolve to the smaller reference id.
    """
    from . import _kernel

    if queries.dim != index.dim:
        raise DimensionMismatchError(
            f"query dim {queries.dim} != index dim {index.dim}")
    if not 1 <= k <= len(index):
        raise OriginIdError(f"k={k} out of range [1, {len(index)}]")
    if len(queries) == 0:
        return []

    qdata = queries.data
    blocks = [(start, min(start + _KERNEL_QUERY_BLOCK, len(queries)))
              for start in range(0, len(queries), _KERNEL_QUERY_BLOCK)]

    def run_block(bounds):
        lo, hi = bounds
        return _kernel.topk_scan(index.data, qdata[lo:hi], k)

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run_block, blocks))
    else:
        parts = [run_block(b) for b in blocks]

    idx = np.concatenate([p[0] for p in parts], axis=0)
    scr = np.concatenate([p[1] for p in parts], axis=0)
    hit_ids = index.ids[idx]

    results = []
    for row, qid in enumerate(queries.ids):
        hits = [(int(hit_ids[row, j]), float(scr[row, j])) for j in range(k)]
        results.append(MatchResult(query_id=int(qid), hits=hits))
    return results


def write_matches(path, results: list[MatchResult]) -> None:
    """UTF-8 text, one "query_id<TAB>rank<TAB>ref_id<TAB>score" line per hit."""
    with open(path, "w", encoding="utf-8") as fh:
        for res in results:
            for rank, (ref_id, score) in enumerate(res.hits, start=1):
                fh.write(f"{res.query_id}\t{rank}\t{ref_id}\t{np.float32(score):.9g}\n")


def read_matches(path) -> list[MatchResult]:
    per_query: dict[int, list] = {}
    order: list[int] = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            qid_s, rank_s, rid_s, score_s = line.split("\t")
            qid = int(qid_s)
            if qid not in per_query:
                per_query[qid] = []
                order.append(qid)
            per_query[qid].append((int(rank_s), int(rid_s), float(score_s)))
    results = []
    for qid in order:
        hits = [(rid, score) for _, rid, score in sorted(per_query[qid])]
        results.append(MatchResult(query_id=qid, hits=hits))
    return results
