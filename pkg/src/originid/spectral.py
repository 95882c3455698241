"""Spectral diagnostics for learned projection matrices.

Covers the executable checks behind the linear-algebra story: the singular
spectrum and its effective rank, the cosine between the singular-value
vectors of two matrices (scale- and rotation-blind spectrum agreement), the
mean relative residual of projected (origin, translation) pairs, and the
left-invertibility test tying full rank to a recoverable pseudo-inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import EPS_NORM, ProjectionMatrix
from .errors import (
    DegenerateVectorError,
    DimensionMismatchError,
    NumericalError,
    OriginIdError,
)

# Relative threshold under sigma_1 below which a singular value is treated
# as numerically zero.
DEFAULT_RANK_TOL = 1e-6


@dataclass(frozen=True)
class SpectrumReport:
    singular_values: np.ndarray    # float64, descending
    effective_rank: int
    condition_number: float

    def __post_init__(self):
        sv = self.singular_values
        if np.any(sv < 0) or np.any(np.diff(sv) > 0):
            raise NumericalError("singular values must be nonnegative and descending")


def _svd(w: ProjectionMatrix):
    mat = w.data.astype(np.float64)
    try:
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    recon_err = np.abs((u * s) @ vt - mat).max()
    if s[0] > 0 and recon_err > 1e-6 * s[0]:
        raise NumericalError(
            f"SVD reconstruction error {recon_err:.3e} exceeds 1e-6 * sigma_1")
    return u, s, vt


def singular_values(w: ProjectionMatrix, tol: float = DEFAULT_RANK_TOL) -> SpectrumReport:
    """Singular spectrum of the projection, computed in float64."""
    _, s, _ = _svd(w)
    if s[0] == 0.0:
        return SpectrumReport(singular_values=s, effective_rank=0,
                              condition_number=float("inf"))
    kept = s > tol * s[0]
    rank = int(np.count_nonzero(kept))
    cond = float(s[0] / s[kept][-1]) if rank else float("inf")
    return SpectrumReport(singular_values=s, effective_rank=rank, condition_number=cond)


def sv_cosine(w1: ProjectionMatrix, w2: ProjectionMatrix) -> float:
    """Cosine between the descending singular-value vectors of two matrices."""
    if (w1.n, w1.m) != (w2.n, w2.m):
        raise DimensionMismatchError(
            f"shape mismatch: {(w1.n, w1.m)} vs {(w2.n, w2.m)}")
    v1 = singular_values(w1).singular_values
    v2 = singular_values(w2).singular_values
    n1 = float(np.linalg.norm(v1))
    n2 = float(np.linalg.norm(v2))
    if n1 == 0.0 or n2 == 0.0:
        raise DegenerateVectorError("all-zero singular spectrum")
    return float(np.dot(v1, v2) / (n1 * n2))


def alignment_residual(origin_rows, generated_rows, w: ProjectionMatrix) -> float:
    """Mean of |(z_g - z_o) W| / |z_o W| over pairs.

    Denominators are floored at EPS_NORM; hitting the floor means the
    projection annihilated an origin row, which is reported rather than
    silently scored as zero.
    """
    org = np.asarray(origin_rows, dtype=np.float64)
    gen = np.asarray(generated_rows, dtype=np.float64)
    if org.ndim != 2 or gen.shape != org.shape:
        raise DimensionMismatchError("origin and generated row blocks must match in shape")
    if org.shape[0] == 0:
        raise OriginIdError("alignment residual needs at least one pair")
    if org.shape[1] != w.n:
        raise DimensionMismatchError(f"row dim {org.shape[1]} != projection input {w.n}")
    mat = w.data.astype(np.float64)
    diff_norms = np.linalg.norm((gen - org) @ mat, axis=1)
    org_norms = np.linalg.norm(org @ mat, axis=1)
    if np.any(org_norms <= EPS_NORM):
        bad = int(np.argmin(org_norms))
        raise DegenerateVectorError(
            f"projected origin row {bad} has norm {org_norms[bad]:.3e}; "
            "residual denominator floor reached")
    return float(np.mean(diff_norms / np.maximum(org_norms, EPS_NORM)))


def left_inverse_check(w: ProjectionMatrix, tol: float = DEFAULT_RANK_TOL):
    """Pseudo-inverse residual |K W - I|_max and whether it clears tol.

    True exactly when the matrix has full effective rank at the same tol.
    """
    u, s, vt = _svd(w)
    if s[0] == 0.0:
        return False, float("inf")
    inv = np.where(s > tol * s[0], 1.0 / np.where(s > 0, s, 1.0), 0.0)
    k = (vt.T * inv) @ u.T
    residual = float(np.abs(k @ w.data.astype(np.float64) - np.eye(w.m)).max())
    return residual <= tol, residual
