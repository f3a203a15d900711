"""Dense-vector helpers, seeded randomness and deterministic selection."""

from __future__ import annotations

import zlib
from typing import Sequence

import numpy as np

from .errors import DegenerateNorm, DimensionMismatch, InvalidShape

EPS_NORM = 1e-12


class SeededRng:
    """Single-owner random stream backed by PCG64.

    Child streams are derived from the parent seed and a name, so adding a
    consumer of one child never shifts the draws seen by another.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._key = tuple(_key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self._key)
        self.gen = np.random.Generator(np.random.PCG64(ss))

    def child(self, name: str | int) -> "SeededRng":
        tag = name if isinstance(name, int) else zlib.crc32(name.encode("utf-8"))
        return SeededRng(self.seed, self._key + (int(tag),))

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, key={self._key})"


def as_rng(rng) -> SeededRng:
    if isinstance(rng, SeededRng):
        return rng
    return SeededRng(int(rng))


def l2_normalize(v, eps: float = EPS_NORM) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.sqrt(np.dot(v, v))
    if not norm > eps:
        raise DegenerateNorm(f"cannot normalize vector with norm {norm:.3e}")
    return v / norm


def l2_normalize_rows(m, eps: float = EPS_NORM) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    if m.shape[0] and not np.all(norms > eps):
        raise DegenerateNorm(f"row norm {norms.min():.3e} below {eps}")
    return m / norms[:, None]


def cosine_sim(a, b) -> float:
    """Dot product of two unit vectors, clamped to [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"dims differ: {a.shape} vs {b.shape}")
    # elementwise product then sum keeps the result exactly symmetric
    return float(min(1.0, max(-1.0, float(np.sum(a * b)))))


def similarities(query, bank) -> np.ndarray:
    """Clamped similarities of one unit vector against the rows of ``bank``."""
    query = np.asarray(query, dtype=np.float64)
    bank = np.asarray(bank, dtype=np.float64)
    if bank.size == 0:
        return np.zeros(0)
    if bank.shape[1] != query.shape[0]:
        raise DimensionMismatch(f"dims differ: {query.shape[0]} vs {bank.shape[1]}")
    return np.clip(bank @ query, -1.0, 1.0)


def beta_sample(rng: SeededRng, alpha: float, beta: float, size=None):
    if not (alpha > 0 and beta > 0):
        raise InvalidShape(f"Beta shape parameters must be positive, got ({alpha}, {beta})")
    return rng.gen.beta(alpha, beta, size=size)


def top_k_by_score(scores: Sequence[float], k: int, direction: str = "highest") -> list[int]:
    """Indices of the ``k`` best scores; ties go to the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[0]
    k = max(0, min(int(k), n))
    if k == 0:
        return []
    if direction == "highest":
        key = -scores
    elif direction == "lowest":
        key = scores
    else:
        raise ValueError(f"direction must be 'highest' or 'lowest', not {direction!r}")
    order = np.argsort(key, kind="stable")
    return [int(i) for i in order[:k]]
