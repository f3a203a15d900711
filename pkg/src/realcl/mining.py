"""Real center tracking and hard-feature pools."""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field

import numpy as np

from .numeric import l2_normalize, similarities, top_k_by_score
from .pairing import FAKE, REAL

HARD_FAKE = "hard_fake"
HARD_REAL = "hard_real"


@dataclass
class RealCenter:
    dim: int
    running_sum: np.ndarray = None
    n_real: int = 0
    center: np.ndarray = None

    def __post_init__(self):
        if self.running_sum is None:
            self.running_sum = np.zeros(self.dim)

    def reset(self):
        self.running_sum = np.zeros(self.dim)
        self.n_real = 0
        self.center = None

    def copy(self) -> "RealCenter":
        return RealCenter(self.dim, self.running_sum.copy(), self.n_real,
                          None if self.center is None else self.center.copy())


def update_center(center: RealCenter, batch_real_z) -> RealCenter:
    """Accumulate this batch's real features; the center is the normalized mean.

    Raises DegenerateNorm when the mean cancels. The running sum is left
    untouched in that case.
    """
    batch_real_z = np.asarray(batch_real_z, dtype=np.float64).reshape(-1, center.dim)
    if batch_real_z.shape[0] == 0:
        return center
    # sorted summation keeps the center independent of batch order
    rows = sorted(map(tuple, batch_real_z))
    new_sum = center.running_sum + np.sum(np.array(rows), axis=0)
    new_count = center.n_real + batch_real_z.shape[0]
    new_center = l2_normalize(new_sum / new_count)
    center.running_sum, center.n_real, center.center = new_sum, new_count, new_center
    return center


@dataclass
class MinedFeatures:
    hard_fakes: list
    hard_reals: list
    fake_sims: list
    real_sims: list


def mine_batch(center, batch_z, labels, k: int) -> MinedFeatures:
    """Top-k fakes and tail-k reals by similarity to the center.

    Index lists refer to rows of ``batch_z``.
    """
    c = center.center if isinstance(center, RealCenter) else np.asarray(center)
    batch_z = np.asarray(batch_z, dtype=np.float64)
    labels = np.asarray(labels)
    sims = similarities(c, batch_z)
    fakes = np.flatnonzero(labels == FAKE)
    reals = np.flatnonzero(labels == REAL)
    top = [int(fakes[i]) for i in top_k_by_score(sims[fakes], k, "highest")]
    tail = [int(reals[i]) for i in top_k_by_score(sims[reals], k, "lowest")]
    return MinedFeatures(top, tail, [float(sims[i]) for i in top], [float(sims[i]) for i in tail])


@dataclass
class GlobalHardSet:
    """Bounded pool ranked by similarity at insertion.

    ``hard_fake`` keeps the highest similarities, ``hard_real`` the lowest.
    Entries stay sorted best-first; ties keep insertion order.
    """

    capacity: int
    polarity: str
    entries: list = field(default_factory=list)
    _keys: list = field(default_factory=list, repr=False)

    def _key(self, sim):
        return -sim if self.polarity == HARD_FAKE else sim

    def insert(self, feature, sim: float) -> bool:
        key = self._key(float(sim))
        pos = bisect.bisect_right(self._keys, key)
        if pos >= self.capacity:
            return False
        self._keys.insert(pos, key)
        self.entries.insert(pos, (np.array(feature, dtype=np.float64), float(sim)))
        if len(self.entries) > self.capacity:
            self._keys.pop()
            self.entries.pop()
        return True

    def clear(self):
        self.entries.clear()
        self._keys.clear()

    def __len__(self):
        return len(self.entries)

    def features(self, limit=None) -> np.ndarray:
        chosen = self.entries if limit is None else self.entries[:limit]
        if not chosen:
            return np.zeros((0, 0))
        return np.stack([f for f, _ in chosen])

    def similarities(self):
        return [s for _, s in self.entries]

    def rescore(self, center):
        """Recompute every stored similarity against ``center`` and re-sort."""
        items = [(f, float(np.clip(f @ center, -1, 1))) for f, _ in self.entries]
        self.clear()
        for f, s in items:
            self.insert(f, s)

    def snapshot(self) -> "GlobalHardSet":
        out = GlobalHardSet(self.capacity, self.polarity)
        out.entries = [(f.copy(), s) for f, s in self.entries]
        out._keys = list(self._keys)
        return out


@dataclass
class HardSets:
    hard_fake: GlobalHardSet
    hard_real: GlobalHardSet

    @classmethod
    def empty(cls, u: int) -> "HardSets":
        return cls(GlobalHardSet(u, HARD_FAKE), GlobalHardSet(u, HARD_REAL))

    def clear(self):
        self.hard_fake.clear()
        self.hard_real.clear()


def update_global_sets(sets: HardSets, batch_z, mined: MinedFeatures) -> HardSets:
    batch_z = np.asarray(batch_z)
    for i, s in zip(mined.hard_fakes, mined.fake_sims):
        sets.hard_fake.insert(batch_z[i], s)
    for i, s in zip(mined.hard_reals, mined.real_sims):
        sets.hard_real.insert(batch_z[i], s)
    return sets


def select_local_hard_fakes(center, batch_z, labels, s: int) -> list:
    """Indices of the ``s`` fakes most similar to the center, best first."""
    return mine_batch(center, batch_z, labels, s).hard_fakes
