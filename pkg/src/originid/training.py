"""Gradient-descent learning of the projection matrix.

The forward path per batch is: project raw rows through the current W,
unit-normalize each projected row, and feed both sides to the metric loss.
The backward path applies the exact normalization Jacobian and accumulates
the weight gradient from both the generated and the origin branches.

Training is float64 end to end and bit-deterministic for a given config;
the returned matrix is stored as float32.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import losses
from .embeddings import EPS_NORM, EmbeddingSet, ProjectionMatrix
from .errors import (
    DegenerateVectorError,
    DimensionMismatchError,
    MissingGroundTruthError,
    NumericalError,
    OriginIdError,
)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

DEFAULT_PEAK_LR = 3.5e-4
# Share of total steps spent in linear warmup when warmup_steps is not given.
DEFAULT_WARMUP_FRACTION = 0.05


@dataclass
class TrainConfig:
    m: int
    loss_kind: str = "cosface"
    scale: float | None = None
    margin: float | None = None
    peak_lr: float = DEFAULT_PEAK_LR
    warmup_steps: int | None = None
    total_steps: int = 1000
    batch_size: int = 128
    seed: int = 0
    weight_decay: float = 0.0
    init: str = "gaussian"   # or "identity"

    def __post_init__(self):
        if self.loss_kind not in losses.LOSS_KINDS:
            raise OriginIdError(f"unknown loss kind {self.loss_kind!r}")
        default_scale, default_margin = losses.default_hyperparams(self.loss_kind)
        if self.scale is None:
            self.scale = default_scale
        if self.margin is None:
            self.margin = default_margin
        if self.warmup_steps is None:
            self.warmup_steps = max(1, int(round(self.total_steps * DEFAULT_WARMUP_FRACTION)))
        if self.m < 1:
            raise OriginIdError("rank m must be >= 1")
        if self.scale <= 0:
            raise OriginIdError("scale must be positive")
        if self.margin < 0:
            raise OriginIdError("margin must be >= 0")
        if self.peak_lr <= 0:
            raise OriginIdError("peak_lr must be positive")
        if self.batch_size < 2:
            raise OriginIdError("batch_size must be >= 2")
        if self.total_steps < 1:
            raise OriginIdError("total_steps must be >= 1")
        if self.warmup_steps < 0 or self.warmup_steps > self.total_steps:
            raise OriginIdError("warmup_steps must lie in [0, total_steps]")
        if self.init not in ("gaussian", "identity"):
            raise OriginIdError(f"unknown init {self.init!r}")


@dataclass
class TripletBatch:
    """Generated rows, their origin rows, and per-row origin indices."""

    gen: np.ndarray            # (b, n) float64
    origins: np.ndarray        # (n_org, n) float64, deduplicated
    origin_index: np.ndarray   # (b,) int64 into origins

    def __post_init__(self):
        if self.gen.shape[1] != self.origins.shape[1]:
            raise DimensionMismatchError("gen and origins dims differ")
        if self.origin_index.shape != (self.gen.shape[0],):
            raise DimensionMismatchError("one origin index per generated row required")


def learning_rate(step: int, cfg: TrainConfig) -> float:
    """Linear warmup to peak_lr, then cosine decay to zero at total_steps."""
    if step < cfg.warmup_steps:
        return cfg.peak_lr * (step + 1) / cfg.warmup_steps
    span = cfg.total_steps - cfg.warmup_steps
    if span <= 0:
        return cfg.peak_lr
    progress = (step - cfg.warmup_steps) / span
    return cfg.peak_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def _normalize_with_jacobian(p: np.ndarray):
    norms = np.linalg.norm(p, axis=1)
    if np.any(norms <= EPS_NORM):
        bad = int(np.argmin(norms))
        raise DegenerateVectorError(
            f"projected row {bad} has norm {norms[bad]:.3e}; "
            "the projection collapsed this batch row")
    u = p / norms[:, None]
    return u, norms


def _backprop_normalize(du: np.ndarray, u: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # du/dp of p/|p| is (I - u u^T)/|p|
    return (du - (du * u).sum(axis=1, keepdims=True) * u) / norms[:, None]


def batch_loss_and_weight_grad(batch: TripletBatch, w: np.ndarray,
                               cfg: TrainConfig):
    """Loss and dLoss/dW for one batch under the current float64 weights."""
    p_gen = batch.gen @ w
    p_org = batch.origins @ w
    u_gen, n_gen = _normalize_with_jacobian(p_gen)
    u_org, n_org = _normalize_with_jacobian(p_org)
    loss, d_ugen, d_uorg = losses.loss_and_grad(
        cfg.loss_kind, u_gen, u_org, batch.origin_index,
        scale=cfg.scale, margin=cfg.margin)
    d_pgen = _backprop_normalize(d_ugen, u_gen, n_gen)
    d_porg = _backprop_normalize(d_uorg, u_org, n_org)
    grad_w = batch.gen.T @ d_pgen + batch.origins.T @ d_porg
    return loss, grad_w


def _pair_arrays(origins: EmbeddingSet, generated: EmbeddingSet, pairs: dict[int, int]):
    if origins.dim != generated.dim:
        raise DimensionMismatchError(
            f"origin dim {origins.dim} != generated dim {generated.dim}")
    sorted_oids = np.sort(origins.ids)
    order = np.argsort(origins.ids)
    origin_row = {}
    for gid in generated.ids:
        gid_int = int(gid)
        if gid_int not in pairs:
            raise MissingGroundTruthError(f"generated id {gid_int} has no ground truth")
        oid = pairs[gid_int]
        pos = np.searchsorted(sorted_oids, np.uint64(oid))
        if pos >= sorted_oids.size or sorted_oids[pos] != np.uint64(oid):
            raise MissingGroundTruthError(
                f"ground-truth origin {oid} for query {gid_int} is not in the origin set")
        origin_row[gid_int] = int(order[pos])
    gen64 = generated.data.astype(np.float64)
    org64 = origins.data.astype(np.float64)
    gen_origin_rows = np.array([origin_row[int(g)] for g in generated.ids], dtype=np.int64)
    return gen64, org64, gen_origin_rows


def make_batch(gen64, org64, gen_origin_rows, idx) -> TripletBatch:
    rows = gen_origin_rows[idx]
    uniq, inverse = np.unique(rows, return_inverse=True)
    return TripletBatch(gen=gen64[idx], origins=org64[uniq],
                        origin_index=inverse.astype(np.int64))


def init_weights(n: int, cfg: TrainConfig, rng: np.random.Generator) -> np.ndarray:
    if cfg.init == "identity":
        return np.eye(n, cfg.m, dtype=np.float64)
    return rng.standard_normal((n, cfg.m)) / math.sqrt(n)


def train(origins: EmbeddingSet, generated: EmbeddingSet, pairs: dict[int, int],
          cfg: TrainConfig, on_step=None) -> ProjectionMatrix:
    """Learn the projection by Adam over metric-loss batches.

    Deterministic given cfg.seed. on_step, when given, receives
    (step, loss, lr) after every optimizer step.
    """
    n = origins.dim
    if cfg.m > n:
        raise DimensionMismatchError(f"rank m={cfg.m} exceeds input dim {n}")
    gen64, org64, gen_origin_rows = _pair_arrays(origins, generated, pairs)
    n_pairs = gen64.shape[0]
    if n_pairs < 2:
        raise OriginIdError("need at least two training pairs")

    rng = np.random.Generator(np.random.Philox(key=cfg.seed))
    w = init_weights(n, cfg, rng)
    adam_m = np.zeros_like(w)
    adam_v = np.zeros_like(w)

    perm = np.empty(0, dtype=np.int64)
    cursor = 0
    for step in range(cfg.total_steps):
        take = min(cfg.batch_size, n_pairs)
        if cursor + take > perm.size:
            perm = rng.permutation(n_pairs)
            cursor = 0
        idx = perm[cursor:cursor + take]
        cursor += take

        batch = make_batch(gen64, org64, gen_origin_rows, idx)
        loss, grad = batch_loss_and_weight_grad(batch, w, cfg)
        if not math.isfinite(loss):
            raise NumericalError(
                f"loss became non-finite at step {step} "
                f"(lr={learning_rate(step, cfg):.3e}, batch={take})")
        if cfg.weight_decay:
            grad = grad + cfg.weight_decay * w

        lr = learning_rate(step, cfg)
        adam_m = ADAM_BETA1 * adam_m + (1.0 - ADAM_BETA1) * grad
        adam_v = ADAM_BETA2 * adam_v + (1.0 - ADAM_BETA2) * grad * grad
        mhat = adam_m / (1.0 - ADAM_BETA1 ** (step + 1))
        vhat = adam_v / (1.0 - ADAM_BETA2 ** (step + 1))
        w -= lr * mhat / (np.sqrt(vhat) + ADAM_EPS)

        if on_step is not None:
            on_step(step, loss, lr)

    return ProjectionMatrix(n=n, m=cfg.m, data=w.astype(np.float32))
