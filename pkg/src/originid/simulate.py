"""Synthetic (origin, translation) pair generator.

A translation of a latent z0 at editing strength s is

    z1 = z0 + sqrt(1 - abar) / sqrt(abar) * (eps - eps_hat),     abar = abar(s)

where eps is the injected noise and eps_hat the model's estimate of it. The
noise-prediction gap eps - eps_hat is what a simulated model contributes; a
perfect model (gap zero) reproduces the origin exactly, and the gap scales the
displacement by sqrt((1-abar)/abar), which grows with strength.

Residual model. Each simulated model draws eta ~ N(0, I) and emits

    eps - eps_hat = sigma_resid * StyleMap(B R B^T eta * sqrt(dim/r))

where B is a fixed orthonormal basis of an r-dimensional "semantic change"
subspace shared by every model (r = dim // 4), and R is a per-model orthogonal
rotation of that subspace derived from style_seed. Models therefore disagree
sample-by-sample (distinct rotations) while sharing the subspace in which
translations move - the structure that lets one learned projection transfer
across models. The sqrt(dim/r) rescale keeps the expected displacement norm at
sigma_resid * sqrt((1-abar)/abar) * sqrt(dim), as if the residual were
full-dimensional. A fully isotropic residual would make every linear
projection statistically equivalent, so nothing could be learned from it.

Randomness is counter-based: every pair derives its own substream from
(master_seed, origin id, profile name, strength), so generation order and
parallel scheduling cannot change results.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .embeddings import EmbeddingSet
from .errors import DimensionMismatchError, OriginIdError

DEFAULT_TIMESTEPS = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02

# Basis seed for the shared residual subspace; a constant of the simulator,
# not a per-run knob, because the subspace must be common to all profiles.
_SUBSPACE_SEED = 0x0D15EA5E

# Query ids are origin ids offset by this, identically in every query set,
# so one ground-truth map serves all (profile, strength) cells.
QUERY_ID_OFFSET = 1 << 32


def _hash_u64(*parts) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def _strength_key(strength: float) -> int:
    # strengths arrive as round decimals; a fixed-point key keeps the
    # substream derivation exact
    return int(round(strength * 1_000_000))


@dataclass(frozen=True)
class NoiseSchedule:
    """Linear beta schedule with the cumulative signal coefficient table."""

    T: int = DEFAULT_TIMESTEPS
    beta_start: float = DEFAULT_BETA_START
    beta_end: float = DEFAULT_BETA_END
    alpha_bar: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.T < 1:
            raise OriginIdError(f"T must be >= 1, got {self.T}")
        if not (0.0 < self.beta_start <= self.beta_end < 1.0):
            raise OriginIdError("beta endpoints must satisfy 0 < start <= end < 1")
        if self.alpha_bar is None:
            betas = np.linspace(self.beta_start, self.beta_end, self.T, dtype=np.float64)
            table = np.empty(self.T + 1, dtype=np.float64)
            table[0] = 1.0
            np.cumprod(1.0 - betas, out=table[1:])
            object.__setattr__(self, "alpha_bar", table)
        ab = self.alpha_bar
        if ab.shape != (self.T + 1,) or ab[0] != 1.0 or np.any(np.diff(ab) >= 0) \
                or np.any(ab <= 0) or np.any(ab > 1):
            raise OriginIdError("alpha_bar table must start at 1, lie in (0, 1], "
                                "and be strictly decreasing")
        ab.setflags(write=False)


def alpha_bar_at(strength: float, schedule: NoiseSchedule) -> float:
    """Cumulative signal coefficient after noising strength*T steps."""
    if not 0.0 <= strength <= 1.0:
        raise OriginIdError(f"strength must be in [0, 1], got {strength}")
    return float(schedule.alpha_bar[round(strength * schedule.T)])


def displacement_coefficient(abar: float) -> float:
    """sqrt(1 - abar) / sqrt(abar): how the noise gap maps to displacement."""
    return math.sqrt(1.0 - abar) / math.sqrt(abar)


@dataclass(frozen=True)
class SimModelProfile:
    """One simulated diffusion model: residual scale plus a style identity."""

    name: str
    sigma_resid: float
    style_seed: int
    dim: int

    def __post_init__(self):
        if self.sigma_resid < 0:
            raise OriginIdError(f"sigma_resid must be >= 0, got {self.sigma_resid}")
        if self.dim < 2:
            raise OriginIdError(f"dim must be >= 2, got {self.dim}")


def residual_subspace_dim(dim: int) -> int:
    return max(1, dim // 4)


def _orthonormal(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((rows, cols)))
    return q * np.sign(np.diag(r))  # fix QR sign ambiguity


def residual_basis(dim: int) -> np.ndarray:
    """Fixed orthonormal basis (dim x r) of the shared residual subspace."""
    rng = np.random.Generator(np.random.Philox(key=_SUBSPACE_SEED + dim))
    return _orthonormal(rng, dim, residual_subspace_dim(dim))


def style_map(profile: SimModelProfile) -> np.ndarray:
    """Per-model orthogonal map: rotates the shared subspace, fixes its complement.

    Built as B R B^T + (I - B B^T) with R the QR orthogonalization of a
    Gaussian matrix seeded by style_seed.
    """
    dim = profile.dim
    b = residual_basis(dim)
    r = residual_subspace_dim(dim)
    rng = np.random.Generator(np.random.Philox(key=profile.style_seed))
    rot = _orthonormal(rng, r, r)
    eye = np.eye(dim)
    return b @ rot @ b.T + (eye - b @ b.T)


@dataclass(frozen=True)
class TranslateAudit:
    """Per-pair record of the quantities entering the difference equation."""

    alpha_bar: float
    epsilon: np.ndarray
    epsilon_hat: np.ndarray

    @property
    def coefficient(self) -> float:
        return displacement_coefficient(self.alpha_bar)


def _pair_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def translate_with_audit(
    z0: np.ndarray,
    strength: float,
    profile: SimModelProfile,
    schedule: NoiseSchedule,
    rng_seed: int,
) -> tuple[np.ndarray, TranslateAudit]:
    """Translate one origin vector; return the result and its audit record.

    All math is float64. The returned vector satisfies
    z1 - z0 == coefficient * (epsilon - epsilon_hat) up to float64 rounding.
    """
    if not 0.0 < strength < 1.0:
        raise OriginIdError(f"strength must be in (0, 1), got {strength}")
    z0 = np.asarray(z0, dtype=np.float64)
    if z0.shape != (profile.dim,):
        raise DimensionMismatchError(f"z0 shape {z0.shape} != profile dim {profile.dim}")
    abar = alpha_bar_at(strength, schedule)
    coef = displacement_coefficient(abar)

    rng = _pair_rng(rng_seed)
    eps = rng.standard_normal(profile.dim)
    eta = rng.standard_normal(profile.dim)

    dim = profile.dim
    r = residual_subspace_dim(dim)
    smap = _style_map_cached(profile)
    basis = _basis_cached(dim)
    structured = basis @ (basis.T @ eta) * math.sqrt(dim / r)
    gap = profile.sigma_resid * (smap @ structured)

    eps_hat = eps - gap
    z1 = z0 + coef * gap
    return z1, TranslateAudit(alpha_bar=abar, epsilon=eps, epsilon_hat=eps_hat)


def translate(z0, strength, profile, schedule, rng_seed) -> np.ndarray:
    z1, _ = translate_with_audit(z0, strength, profile, schedule, rng_seed)
    return z1


# Style maps and bases are pure functions of (profile, dim); memoize them so
# per-pair translation does not redo a QR factorization.
_STYLE_CACHE: dict[tuple[str, int, int], np.ndarray] = {}
_BASIS_CACHE: dict[int, np.ndarray] = {}


def _style_map_cached(profile: SimModelProfile) -> np.ndarray:
    key = (profile.name, profile.style_seed, profile.dim)
    if key not in _STYLE_CACHE:
        _STYLE_CACHE[key] = style_map(profile)
    return _STYLE_CACHE[key]


def _basis_cached(dim: int) -> np.ndarray:
    if dim not in _BASIS_CACHE:
        _BASIS_CACHE[dim] = residual_basis(dim)
    return _BASIS_CACHE[dim]


@dataclass
class SimDataset:
    """Origins, per-(profile, strength) query sets, and the ground-truth map."""

    origins: EmbeddingSet
    queries: dict[tuple[str, float], EmbeddingSet]
    ground_truth: dict[int, int]
    audits: dict[tuple[str, float], list[TranslateAudit]] | None = None

    def __post_init__(self):
        origin_ids = set(int(i) for i in self.origins.ids)
        for qset in self.queries.values():
            for qid in qset.ids:
                oid = self.ground_truth.get(int(qid))
                if oid is None or oid not in origin_ids:
                    raise OriginIdError(f"query {int(qid)} lacks a ground-truth origin")


def generate_dataset(
    n_origins: int,
    dim: int,
    profiles: list[SimModelProfile],
    strengths: list[float],
    master_seed: int,
    keep_audits: bool = False,
) -> SimDataset:
    """Draw origins i.i.d. N(0, I) and one translation per (origin, profile, strength).

    Fully deterministic given master_seed; every pair has its own substream.
    """
    if n_origins < 2:
        raise OriginIdError(f"n_origins must be >= 2, got {n_origins}")
    if dim < 2:
        raise OriginIdError(f"dim must be >= 2, got {dim}")
    for p in profiles:
        if p.dim != dim:
            raise DimensionMismatchError(f"profile {p.name} dim {p.dim} != dataset dim {dim}")

    schedule = NoiseSchedule()
    origin_rng = _pair_rng(_hash_u64(master_seed, "origins"))
    origins64 = origin_rng.standard_normal((n_origins, dim))
    origin_ids = np.arange(n_origins, dtype=np.uint64)
    origins = EmbeddingSet(ids=origin_ids, dim=dim,
                           data=origins64.astype(np.float32))

    query_ids = origin_ids + np.uint64(QUERY_ID_OFFSET)
    ground_truth = {int(q): int(o) for q, o in zip(query_ids, origin_ids)}

    queries: dict[tuple[str, float], EmbeddingSet] = {}
    audits: dict[tuple[str, float], list[TranslateAudit]] = {}
    for profile in profiles:
        for strength in strengths:
            rows = np.empty((n_origins, dim), dtype=np.float32)
            cell_audits: list[TranslateAudit] = []
            for i in range(n_origins):
                seed = _hash_u64(master_seed, int(origin_ids[i]),
                                 profile.name, _strength_key(strength))
                z1, audit = translate_with_audit(origins64[i], strength,
                                                 profile, schedule, seed)
                rows[i] = z1.astype(np.float32)
                if keep_audits:
                    cell_audits.append(audit)
            key = (profile.name, strength)
            queries[key] = EmbeddingSet(ids=query_ids, dim=dim, data=rows)
            if keep_audits:
                audits[key] = cell_audits

    return SimDataset(origins=origins, queries=queries, ground_truth=ground_truth,
                      audits=audits if keep_audits else None)


def write_ground_truth(path, ground_truth: dict[int, int]) -> None:
    """UTF-8 text, one "query_id<TAB>origin_id" per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(ground_truth):
            fh.write(f"{qid}\t{ground_truth[qid]}\n")


def read_ground_truth(path) -> dict[int, int]:
    out: dict[int, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            qid, _, oid = line.partition("\t")
            out[int(qid)] = int(oid)
    return out
