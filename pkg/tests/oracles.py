"""Independent reference implementations used as test oracles.

Everything here is deliberately naive (double loops, sequential products,
central differences) and stays decoupled from the library code paths it
checks.
"""

import numpy as np


def brute_force_alpha_bar(T, beta_start, beta_end):
    """Sequential product over the linear beta table; returns the full table."""
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    table = [1.0]
    acc = 1.0
    for b in betas:
        acc *= (1.0 - b)
        table.append(acc)
    return table


def naive_topk(refs, queries, k):
    """Double-loop exact top-k: float64 dots cast to float32, ties by index."""
    out_idx = []
    out_scr = []
    for q in queries:
        q64 = q.astype(np.float64)
        scored = []
        for j, r in enumerate(refs):
            scored.append((np.float32(np.dot(q64, r.astype(np.float64))), j))
        scored.sort(key=lambda t: (-t[0], t[1]))
        out_idx.append([j for _, j in scored[:k]])
        out_scr.append([s for s, _ in scored[:k]])
    return np.array(out_idx, dtype=np.int64), np.array(out_scr, dtype=np.float32)


def central_difference_grads(loss_fn, gen, org, labels, h=1e-5):
    """Central finite differences of loss_fn wrt both row matrices."""
    g_gen = np.zeros_like(gen)
    g_org = np.zeros_like(org)
    for mat, grad in ((gen, g_gen), (org, g_org)):
        it = np.nditer(mat, flags=["multi_index"])
        for _ in it:
            ij = it.multi_index
            plus = mat.copy()
            plus[ij] += h
            minus = mat.copy()
            minus[ij] -= h
            if mat is gen:
                lp = loss_fn(plus, org, labels)
                lm = loss_fn(minus, org, labels)
            else:
                lp = loss_fn(gen, plus, labels)
                lm = loss_fn(gen, minus, labels)
            grad[ij] = (lp - lm) / (2.0 * h)
    return g_gen, g_org


def max_relative_error(analytic, numeric, floor=1e-6):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def unit_rows(mat):
    return mat / np.linalg.norm(mat, axis=1, keepdims=True)
