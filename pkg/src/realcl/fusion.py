"""Synthesized hard positives and mixed hard negatives.

All outputs are detached unit vectors; the loss treats them as constants.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateNorm, NoIntraClassCandidates
from .mining import HardSets
from .numeric import SeededRng, beta_sample, l2_normalize, similarities, top_k_by_score
from .pairing import FAKE, REAL

logger = logging.getLogger(__name__)

FUSION_MODES = ("smooth", "linear", "linear_smooth", "off")
BETA_SHAPE = 0.8


@dataclass
class FusedPositives:
    features: np.ndarray
    labels: np.ndarray
    skipped: int = 0

    def __len__(self):
        return len(self.labels)


@dataclass
class FusedNegatives:
    features: np.ndarray
    lambdas: np.ndarray
    dropped: int = 0

    def __len__(self):
        return len(self.lambdas)


def _empty(dim):
    return np.zeros((0, dim))


def nearest_same_class(query, batch_z, labels, label, m: int) -> np.ndarray:
    """Rows of ``batch_z`` with ``label`` most similar to ``query`` (at most ``m``)."""
    pool = np.flatnonzero(np.asarray(labels) == label)
    if pool.size == 0:
        raise NoIntraClassCandidates(f"no features with label {label} in batch")
    sims = similarities(query, batch_z[pool])
    return pool[top_k_by_score(sims, m, "highest")]


def smooth_one(z_hg, neighbors) -> np.ndarray:
    """Mean of a hard feature and its neighbors, projected back onto the sphere."""
    neighbors = np.asarray(neighbors).reshape(-1, len(z_hg))
    total = z_hg + neighbors.sum(axis=0)
    return l2_normalize(total / (len(neighbors) + 1))


def _budgeted_hard_features(sets: HardSets, positive_budget: int):
    real_budget = positive_budget // 2
    fake_budget = positive_budget - real_budget
    out = []
    for pool, label, budget in ((sets.hard_real, REAL, real_budget), (sets.hard_fake, FAKE, fake_budget)):
        for feature, _ in pool.entries[:budget]:
            out.append((feature, label))
    return out


def transform_positives(sets: HardSets, batch_z, labels, M: int = 4, positive_budget: int = 32) -> FusedPositives:
    """One transformed positive per budgeted global hard feature.

    Each hard feature is averaged with its ``M`` most similar same-class
    batch features and renormalized. Hard features without same-class
    candidates are skipped and counted.
    """
    batch_z = np.asarray(batch_z, dtype=np.float64)
    labels = np.asarray(labels)
    feats, labs, skipped = [], [], 0
    for z_hg, label in _budgeted_hard_features(sets, positive_budget):
        try:
            nbrs = nearest_same_class(z_hg, batch_z, labels, label, M)
            feats.append(smooth_one(z_hg, batch_z[nbrs]))
            labs.append(label)
        except (NoIntraClassCandidates, DegenerateNorm) as exc:
            logger.debug("skipping hard feature: %s", exc)
            skipped += 1
    if not feats:
        return FusedPositives(_empty(batch_z.shape[1]), np.zeros(0, dtype=np.int64), skipped)
    return FusedPositives(np.stack(feats), np.array(labs, dtype=np.int64), skipped)


def linear_positives(sets: HardSets, batch_z, labels, n_hard: int = 8, n_neighbors: int = 4,
                     smooth_neighbors: int = 0) -> FusedPositives:
    """Control-group fusion: equal-weight pairwise combination.

    ``n_hard`` hard features (split across classes) are each combined with
    each of their ``n_neighbors`` nearest same-class batch features. With
    ``smooth_neighbors > 0`` every combined feature is then smoothed with
    that many nearest batch features.
    """
    batch_z = np.asarray(batch_z, dtype=np.float64)
    labels = np.asarray(labels)
    feats, labs, skipped = [], [], 0
    for z_hg, label in _budgeted_hard_features(sets, n_hard):
        try:
            nbrs = nearest_same_class(z_hg, batch_z, labels, label, n_neighbors)
        except NoIntraClassCandidates:
            skipped += 1
            continue
        for j in nbrs:
            try:
                fused = l2_normalize(z_hg + batch_z[j])
                if smooth_neighbors:
                    near = nearest_same_class(fused, batch_z, labels, label, smooth_neighbors)
                    fused = smooth_one(fused, batch_z[near])
            except DegenerateNorm:
                skipped += 1
                continue
            feats.append(fused)
            labs.append(label)
    if not feats:
        return FusedPositives(_empty(batch_z.shape[1]), np.zeros(0, dtype=np.int64), skipped)
    return FusedPositives(np.stack(feats), np.array(labs, dtype=np.int64), skipped)


def mix_negatives(local_hard_z, batch_real_z, M_mix: int, rng: SeededRng, lam=None) -> FusedNegatives:
    """Interpolate each local hard fake with its ``M_mix`` nearest reals.

    ``lam`` fixes the mixing weight; by default one weight is drawn from
    Beta(0.8, 0.8) per (fake, real) pair.
    """
    local_hard_z = np.asarray(local_hard_z, dtype=np.float64)
    batch_real_z = np.asarray(batch_real_z, dtype=np.float64)
    dim = batch_real_z.shape[1] if batch_real_z.ndim == 2 else local_hard_z.shape[-1]
    if len(local_hard_z) == 0 or len(batch_real_z) == 0 or M_mix <= 0:
        return FusedNegatives(_empty(dim), np.zeros(0))
    feats, lams, dropped = [], [], 0
    for z_hl in local_hard_z:
        sims = similarities(z_hl, batch_real_z)
        for j in top_k_by_score(sims, M_mix, "highest"):
            w = float(beta_sample(rng, BETA_SHAPE, BETA_SHAPE)) if lam is None else float(lam)
            try:
                feats.append(l2_normalize(w * z_hl + (1.0 - w) * batch_real_z[j]))
            except DegenerateNorm:
                dropped += 1
                continue
            lams.append(w)
    if not feats:
        return FusedNegatives(_empty(dim), np.zeros(0), dropped)
    return FusedNegatives(np.stack(feats), np.array(lams), dropped)
