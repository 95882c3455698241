"""Retrieval metrics and the ablation grid runner.

Two metrics are reported. The primary one is mean inverse rank: with a single
true origin per query, average precision collapses to 1/rank (zero when the
origin is missing from the retrieved list). The alternate is micro average
precision over the pooled, score-sorted predictions of all queries. Orderings
asserted elsewhere hold under either.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingSet, ProjectionMatrix, normalize_rows, project
from .errors import MissingGroundTruthError, OriginIdError
from .matcher import MatchResult, build_index, search
from .simulate import SimDataset
from .training import TrainConfig, train

METRIC_CHOICES = ("mean-inverse-rank", "micro-ap", "both")


@dataclass(frozen=True)
class GridCell:
    profile: str
    strength: float
    loss_kind: str
    rank: int
    seen: bool


@dataclass
class EvalReport:
    map_score: float
    top1_acc: float
    n_queries: int
    cell: GridCell | None = None
    micro_ap: float | None = None

    def __post_init__(self):
        if not (0.0 <= self.top1_acc <= self.map_score <= 1.0 + 1e-12):
            raise OriginIdError(
                f"inconsistent report: mAP={self.map_score} Acc={self.top1_acc}")

    def as_dict(self) -> dict:
        out = {"map": self.map_score, "top1_acc": self.top1_acc,
               "n_queries": self.n_queries}
        if self.micro_ap is not None:
            out["micro_ap"] = self.micro_ap
        if self.cell is not None:
            out["cell"] = {"profile": self.cell.profile, "strength": self.cell.strength,
                           "loss": self.cell.loss_kind, "rank": self.cell.rank,
                           "seen": self.cell.seen}
        return out


def average_precision_single(rank_of_truth: int) -> float:
    """AP with one relevant item ranked at the given 1-based position."""
    if rank_of_truth < 1:
        raise OriginIdError(f"rank must be >= 1, got {rank_of_truth}")
    return 1.0 / rank_of_truth


def _truth_rank(match: MatchResult, truth: dict[int, int], k_eval: int | None) -> int:
    """1-based rank of the true origin within the evaluated hits, 0 if absent."""
    if match.query_id not in truth:
        raise MissingGroundTruthError(f"no ground truth for query {match.query_id}")
    target = truth[match.query_id]
    hits = match.hits if k_eval is None else match.hits[:k_eval]
    for pos, (ref_id, _) in enumerate(hits, start=1):
        if ref_id == target:
            return pos
    return 0


def evaluate(matches: list[MatchResult], truth: dict[int, int],
             k_eval: int | None = None, include_micro_ap: bool = False,
             cell: GridCell | None = None) -> EvalReport:
    """Mean inverse rank and top-1 accuracy over the given matches."""
    if not matches:
        raise OriginIdError("no matches to evaluate")
    ap_sum = 0.0
    acc_sum = 0
    for match in matches:
        rank = _truth_rank(match, truth, k_eval)
        if rank:
            ap_sum += average_precision_single(rank)
            acc_sum += rank == 1
    n = len(matches)
    micro = micro_average_precision(matches, truth, k_eval) if include_micro_ap else None
    return EvalReport(map_score=ap_sum / n, top1_acc=acc_sum / n,
                      n_queries=n, cell=cell, micro_ap=micro)


def micro_average_precision(matches: list[MatchResult], truth: dict[int, int],
                            k_eval: int | None = None) -> float:
    """AP of the pooled predictions of all queries, one positive per query.

    Predictions sort by descending score with deterministic (query id,
    reference id) tie-breaks; precision is accumulated at each positive and
    recall is counted against the number of queries.
    """
    pooled = []
    for match in matches:
        if match.query_id not in truth:
            raise MissingGroundTruthError(f"no ground truth for query {match.query_id}")
        target = truth[match.query_id]
        hits = match.hits if k_eval is None else match.hits[:k_eval]
        for ref_id, score in hits:
            pooled.append((-score, match.query_id, ref_id, ref_id == target))
    if not pooled:
        raise OriginIdError("no predictions to pool")
    pooled.sort()
    tp = 0
    ap = 0.0
    for pos, (_, _, _, is_pos) in enumerate(pooled, start=1):
        if is_pos:
            tp += 1
            ap += tp / pos
    return ap / len(matches)


def rank_histogram(matches, truth, k_eval=None) -> dict[int, int]:
    """Truth-rank counts (0 = not retrieved); handy for failure analysis."""
    hist: dict[int, int] = {}
    for match in matches:
        rank = _truth_rank(match, truth, k_eval)
        hist[rank] = hist.get(rank, 0) + 1
    return hist


def evaluate_projection(w: ProjectionMatrix | None, refs: EmbeddingSet,
                        queries: EmbeddingSet, truth: dict[int, int], k: int,
                        threads: int = 1, include_micro_ap: bool = False,
                        cell: GridCell | None = None) -> EvalReport:
    """Project (optionally), index, search, and score one cell end to end.

    w=None evaluates the raw embeddings (identity transform semantics).
    """
    if w is not None:
        refs = project(refs, w, normalize=True)
        queries = project(queries, w, normalize=True)
    else:
        refs = EmbeddingSet(ids=refs.ids, dim=refs.dim,
                            data=_unit_rows(refs))
        queries = EmbeddingSet(ids=queries.ids, dim=queries.dim,
                               data=_unit_rows(queries))
    index = build_index(refs)
    matches = search(index, queries, min(k, len(index)), threads=threads)
    return evaluate(matches, truth, include_micro_ap=include_micro_ap, cell=cell)


def _unit_rows(emb: EmbeddingSet) -> np.ndarray:
    return normalize_rows(emb.data, emb.ids)


def run_grid(train_dataset: SimDataset, configs: list[TrainConfig],
             train_profile: str, train_strength: float,
             eval_dataset: SimDataset | None = None, k: int = 10,
             threads: int = 1, include_micro_ap: bool = False,
             include_raw: bool = False, on_cell=None) -> list[EvalReport]:
    """Train one projection per config and score every (profile, strength) cell.

    The profile used for training is marked seen; all others unseen. Passing
    a separate eval_dataset scores held-out origins and fresh translations.
    include_raw adds unprojected-embedding reports (rank 0, loss "none").
    """
    key = (train_profile, train_strength)
    if key not in train_dataset.queries:
        raise OriginIdError(f"training cell {key} absent from dataset")
    if eval_dataset is None:
        eval_dataset = train_dataset

    reports: list[EvalReport] = []

    def eval_all(w: ProjectionMatrix | None, loss_kind: str, rank: int):
        for (profile, strength), qset in sorted(eval_dataset.queries.items()):
            cell = GridCell(profile=profile, strength=strength, loss_kind=loss_kind,
                            rank=rank, seen=profile == train_profile)
            rep = evaluate_projection(w, eval_dataset.origins, qset,
                                      eval_dataset.ground_truth, k, threads=threads,
                                      include_micro_ap=include_micro_ap, cell=cell)
            reports.append(rep)
            if on_cell is not None:
                on_cell(rep)

    if include_raw:
        eval_all(None, "none", 0)
    for cfg in configs:
        w = train(train_dataset.origins, train_dataset.queries[key],
                  train_dataset.ground_truth, cfg)
        eval_all(w, cfg.loss_kind, cfg.m)
    return reports


def summary_table(reports: list[EvalReport]) -> str:
    """Aligned text table: one row per (loss, rank, strength), seen/unseen columns."""
    rows: dict[tuple[str, int, float], dict[str, list[EvalReport]]] = {}
    for rep in reports:
        if rep.cell is None:
            continue
        key = (rep.cell.loss_kind, rep.cell.rank, rep.cell.strength)
        bucket = rows.setdefault(key, {"seen": [], "unseen": []})
        bucket["seen" if rep.cell.seen else "unseen"].append(rep)

    def mean(vals):
        return sum(vals) / len(vals) if vals else math.nan

    header = (f"{'loss':<10}{'rank':>6}{'strength':>10}"
              f"{'seen mAP':>10}{'seen Acc':>10}{'unseen mAP':>12}{'unseen Acc':>12}")
    lines = [header, "-" * len(header)]
    for (loss_kind, rank, strength) in sorted(rows):
        bucket = rows[(loss_kind, rank, strength)]
        s_map = mean([r.map_score for r in bucket["seen"]])
        s_acc = mean([r.top1_acc for r in bucket["seen"]])
        u_map = mean([r.map_score for r in bucket["unseen"]])
        u_acc = mean([r.top1_acc for r in bucket["unseen"]])
        lines.append(f"{loss_kind:<10}{rank:>6}{strength:>10.2f}"
                     f"{s_map:>10.4f}{s_acc:>10.4f}{u_map:>12.4f}{u_acc:>12.4f}")
    return "\n".join(lines) + "\n"
