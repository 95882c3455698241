"""Metric-learning losses over projected, unit-normalized embedding rows.

Each function takes a batch of generated rows and a batch of origin rows
(both unit-norm), a label index per generated row pointing at its origin,
and returns the scalar loss together with exact analytic gradients with
respect to both row matrices. In-batch origins other than the labeled one
act as negatives; there are no learned class prototypes.

All arithmetic is float64.
"""

from __future__ import annotations

import numpy as np

from .errors import LabelError, OriginIdError

DEFAULT_COSFACE_SCALE = 64.0
DEFAULT_COSFACE_MARGIN = 0.35
DEFAULT_CIRCLE_SCALE = 256.0
DEFAULT_CIRCLE_MARGIN = 0.25

LOSS_KINDS = ("cosface", "circle", "softmax")

# Callers keep rows unit-norm; this only guards against misuse gross enough
# to change results (finite-difference probes nudge norms by ~1e-5).
_UNIT_ATOL = 1e-4


def _check_batch(gen, origins, labels):
    gen = np.asarray(gen, dtype=np.float64)
    origins = np.asarray(origins, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if gen.ndim != 2 or origins.ndim != 2 or gen.shape[1] != origins.shape[1]:
        raise OriginIdError("gen and origins must be 2-D with equal column counts")
    if labels.shape != (gen.shape[0],):
        raise LabelError(f"need one label per generated row, got {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= origins.shape[0]):
        raise LabelError("label index outside the origin batch")
    for name, mat in (("gen", gen), ("origins", origins)):
        norms = np.linalg.norm(mat, axis=1)
        off = np.abs(norms - 1.0)
        if off.size and off.max() > _UNIT_ATOL:
            raise OriginIdError(
                f"{name} row {int(np.argmax(off))} has norm {norms[np.argmax(off)]:.6f}, "
                "expected unit rows")
    return gen, origins, labels


def cosface_loss_and_grad(proj_gen, proj_origins, labels,
                          s: float = DEFAULT_COSFACE_SCALE,
                          margin: float = DEFAULT_COSFACE_MARGIN):
    """Large-margin cosine loss.

    Per row i with true origin y: the positive logit is s*(cos_iy - margin)
    and each other origin j contributes s*cos_ij; the loss is mean cross
    entropy of the softmax over these logits.
    """
    gen, origins, labels = _check_batch(proj_gen, proj_origins, labels)
    b = gen.shape[0]
    cos = gen @ origins.T                                   # (b, n_org)
    logits = s * cos
    logits[np.arange(b), labels] -= s * margin

    shift = logits.max(axis=1, keepdims=True)
    expz = np.exp(logits - shift)
    denom = expz.sum(axis=1, keepdims=True)
    p = expz / denom
    loss = float(np.mean(shift[:, 0] + np.log(denom[:, 0]) - logits[np.arange(b), labels]))

    dlogits = p.copy()
    dlogits[np.arange(b), labels] -= 1.0
    dlogits /= b
    dcos = s * dlogits
    grad_gen = dcos @ origins
    grad_origins = dcos.T @ gen
    return loss, grad_gen, grad_origins


def softmax_loss_and_grad(proj_gen, proj_origins, labels,
                          s: float = DEFAULT_COSFACE_SCALE):
    """Margin-free special case of the cosine softmax."""
    return cosface_loss_and_grad(proj_gen, proj_origins, labels, s=s, margin=0.0)


def circle_loss_and_grad(proj_gen, proj_origins, labels,
                         gamma: float = DEFAULT_CIRCLE_SCALE,
                         margin: float = DEFAULT_CIRCLE_MARGIN):
    """Circle loss: logistic over similarity deviations with self-paced weights.

    With delta_p = 1 - margin, delta_n = margin and weights
    a_p = relu(1 + margin - s_p), a_n = relu(s_n + margin), each row i incurs

        softplus( logsumexp_j[gamma * a_n * (s_n - delta_n)]
                  - gamma * a_p * (s_p - delta_p) )

    over its in-batch negatives j. The weights are differentiated through
    (relu subgradient 0 at the kink), so the gradient is the true derivative
    of the value returned.
    """
    gen, origins, labels = _check_batch(proj_gen, proj_origins, labels)
    b, n_org = gen.shape[0], origins.shape[0]
    if n_org < 2:
        raise OriginIdError("circle loss needs at least one in-batch negative")
    delta_p = 1.0 - margin
    delta_n = margin

    sims = gen @ origins.T                                  # (b, n_org)
    rows = np.arange(b)
    s_p = sims[rows, labels]

    neg_mask = np.ones((b, n_org), dtype=bool)
    neg_mask[rows, labels] = False

    a_n = np.maximum(sims + margin, 0.0)
    neg_logits = gamma * a_n * (sims - delta_n)
    neg_logits = np.where(neg_mask, neg_logits, -np.inf)
    neg_shift = neg_logits.max(axis=1)
    neg_exp = np.exp(neg_logits - neg_shift[:, None])
    neg_sum = neg_exp.sum(axis=1)
    lse_neg = neg_shift + np.log(neg_sum)

    a_p = np.maximum(1.0 + margin - s_p, 0.0)
    pos_term = -gamma * a_p * (s_p - delta_p)

    z = lse_neg + pos_term
    loss = float(np.mean(np.log1p(np.exp(-np.abs(z))) + np.maximum(z, 0.0)))

    ez = np.exp(-np.abs(z))
    sig = np.where(z >= 0, 1.0 / (1.0 + ez), ez / (1.0 + ez))

    # d neg_logit / d s = gamma * (2s) on the active side of the weight relu
    dneg = (neg_exp / neg_sum[:, None]) * gamma * 2.0 * sims * (sims + margin > 0)
    dneg = np.where(neg_mask, dneg, 0.0)
    # d pos_term / d s_p = -gamma * (2 - 2s) while the positive weight is active
    dpos = -gamma * (2.0 - 2.0 * s_p) * (1.0 + margin - s_p > 0)

    dsims = sig[:, None] * dneg
    dsims[rows, labels] += sig * dpos
    dsims /= b
    grad_gen = dsims @ origins
    grad_origins = dsims.T @ gen
    return loss, grad_gen, grad_origins


def loss_and_grad(kind: str, proj_gen, proj_origins, labels,
                  scale: float, margin: float):
    """Dispatch by loss name; scale/margin carry each loss's own meaning."""
    if kind == "cosface":
        return cosface_loss_and_grad(proj_gen, proj_origins, labels, s=scale, margin=margin)
    if kind == "circle":
        return circle_loss_and_grad(proj_gen, proj_origins, labels, gamma=scale, margin=margin)
    if kind == "softmax":
        return softmax_loss_and_grad(proj_gen, proj_origins, labels, s=scale)
    raise OriginIdError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")


def default_hyperparams(kind: str) -> tuple[float, float]:
    if kind in ("cosface", "softmax"):
        return DEFAULT_COSFACE_SCALE, DEFAULT_COSFACE_MARGIN if kind == "cosface" else 0.0
    if kind == "circle":
        return DEFAULT_CIRCLE_SCALE, DEFAULT_CIRCLE_MARGIN
    raise OriginIdError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
