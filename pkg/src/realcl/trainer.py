"""Two-stage training, evaluation metrics and the ablation sweep."""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, EmptySplit, NonFiniteLoss, RealCLError, SingleClass
from .fusion import FUSION_MODES, linear_positives, mix_negatives, transform_positives
from .losses import LossConfig
from .mining import HardSets, RealCenter, mine_batch, update_center, update_global_sets
from .model import (
    ModelParams,
    OptimState,
    encode_project,
    fake_probability,
    init_params,
    loss_gradients,
    sgd_step,
)
from .numeric import SeededRng
from .pairing import FAKE, REAL, STRATEGIES, AugmentConfig, Manifest, assemble_batch, augment
from .synth import World, WorldConfig, compress, compression_level

logger = logging.getLogger(__name__)

THRESHOLD = 0.5


@dataclass(frozen=True)
class TrainConfig:
    strategy: str = "semantical"
    loss: LossConfig = field(default_factory=LossConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    stage1_epochs: int = 30
    stage2_epochs: int = 10
    batch_size: int = 32
    lr: float = 0.01
    momentum: float = 0.9
    k: int = 2
    u: int = 32
    s: int = 4
    M: int = 4
    M_mix: int = 4
    positive_budget: int = 32
    fusion_mode: str = "smooth"
    # "linear" / "linear_smooth" control-group parameters
    linear_hard: int = 8
    linear_neighbors: int = 4
    smooth_neighbors: int = 2
    rescore_global: bool = False
    encoder_hidden: tuple = (64, 32)
    projector_hidden: tuple = (32, 16)
    seed: int = 0

    def validate(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"must be one of {STRATEGIES}", "train.strategy")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigError(f"must be one of {FUSION_MODES}", "train.fusion_mode")
        for name in ("stage1_epochs", "stage2_epochs", "batch_size", "u", "M", "linear_hard",
                     "linear_neighbors"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be >= 1", f"train.{name}")
        for name in ("k", "s", "M_mix", "positive_budget", "smooth_neighbors"):
            if int(getattr(self, name)) < 0:
                raise ConfigError("must be >= 0", f"train.{name}")
        if self.batch_size % 2:
            raise ConfigError("must be even (half real pairs, half fake pairs)", "train.batch_size")
        if not self.lr > 0:
            raise ConfigError("must be > 0", "train.lr")
        if not 0 <= self.momentum < 1:
            raise ConfigError("must lie in [0, 1)", "train.momentum")
        if not self.encoder_hidden or not self.projector_hidden:
            raise ConfigError("need at least one layer", "train.encoder_hidden")
        self.loss.validate()

    @property
    def is_baseline(self) -> bool:
        return self.fusion_mode == "off" and self.loss.fused_negative_mode == "off"

    def model_dims(self, input_dim: int):
        enc = [input_dim, *self.encoder_hidden]
        proj = [enc[-1], *self.projector_hidden]
        return enc, proj


def baseline_config(cfg: TrainConfig) -> TrainConfig:
    """The plain supervised-contrastive counterpart of ``cfg``."""
    return replace(cfg, fusion_mode="off", loss=replace(cfg.loss, fused_negative_mode="off"))


@dataclass
class TrainLog:
    step_losses: list = field(default_factory=list)
    epoch_losses: list = field(default_factory=list)
    hard_fake_sizes: list = field(default_factory=list)
    hard_real_sizes: list = field(default_factory=list)
    fused_pos_counts: list = field(default_factory=list)
    fused_neg_counts: list = field(default_factory=list)
    skipped_positives: int = 0
    dropped_negatives: int = 0
    stage2_losses: list = field(default_factory=list)
    stage2_train_acc: float = float("nan")
    seconds: float = 0.0

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else float("nan")


def batches_per_epoch(manifest: Manifest, N: int) -> int:
    half = N // 2
    smallest = min(manifest.indices(REAL).size, manifest.indices(FAKE).size)
    return max(1, smallest // half)


def _fused_features(cfg: TrainConfig, z, labels, center, sets, mix_rng):
    """Fused positives and negatives for one batch, per the configured mode."""
    fused_pos = fused_neg = None
    pos_labels = None
    skipped = dropped = 0
    if cfg.fusion_mode == "smooth":
        fp = transform_positives(sets, z, labels, cfg.M, cfg.positive_budget)
    elif cfg.fusion_mode == "linear":
        fp = linear_positives(sets, z, labels, cfg.linear_hard, cfg.linear_neighbors)
    else:
        fp = linear_positives(sets, z, labels, cfg.linear_hard, cfg.linear_neighbors, cfg.smooth_neighbors)
    skipped = fp.skipped
    if len(fp):
        fused_pos, pos_labels = fp.features, fp.labels
    if cfg.loss.fused_negative_mode != "off" and cfg.s > 0 and cfg.M_mix > 0:
        local = mine_batch(center, z, labels, cfg.s).hard_fakes
        fn = mix_negatives(z[local], z[labels == REAL], cfg.M_mix, mix_rng)
        dropped = fn.dropped
        if len(fn):
            fused_neg = fn.features
    return fused_pos, pos_labels, fused_neg, skipped, dropped


def train_stage1(cfg: TrainConfig, manifest: Manifest, params: ModelParams | None = None, log: TrainLog | None = None):
    """Contrastive pre-training of encoder and projector.

    With ``fusion_mode="off"`` no center is tracked and nothing is fused;
    if the margin is off as well the run is a plain supervised-contrastive
    baseline.
    """
    cfg.validate()
    root = SeededRng(cfg.seed)
    if params is None:
        enc, proj = cfg.model_dims(manifest.feature_dim)
        params = init_params(enc, proj, root.child("init"))
    log = log or TrainLog()
    batch_rng = root.child("batches")
    mix_rng = root.child("mixing")
    opt = OptimState(cfg.lr, cfg.momentum)
    trainable = params.encoder_names() + params.projector_names()
    loss_spec = "supcon_plain" if cfg.is_baseline else "supcon_margin"
    use_fusion = cfg.fusion_mode != "off"
    n_batches = batches_per_epoch(manifest, cfg.batch_size)
    proj_dim = params.projector_dims[-1]
    start = time.perf_counter()

    for epoch in range(cfg.stage1_epochs):
        center = RealCenter(proj_dim)
        sets = HardSets.empty(cfg.u)
        epoch_total = 0.0
        for _ in range(n_batches):
            batch = assemble_batch(manifest, cfg.strategy, cfg.batch_size, cfg.augment, batch_rng)
            fused_pos = pos_labels = fused_neg = None
            if use_fusion:
                z, _ = encode_project(params, batch.views)
                update_center(center, z[batch.labels == REAL])
                if cfg.rescore_global:
                    sets.hard_fake.rescore(center.center)
                    sets.hard_real.rescore(center.center)
                update_global_sets(sets, z, mine_batch(center, z, batch.labels, cfg.k))
                fused_pos, pos_labels, fused_neg, skipped, dropped = _fused_features(
                    cfg, z, batch.labels, center, sets, mix_rng)
                log.skipped_positives += skipped
                log.dropped_negatives += dropped
            loss, grads = loss_gradients(params, batch.views, batch.labels, loss_spec, cfg.loss,
                                         fused_pos, pos_labels, fused_neg)
            if not np.isfinite(loss):
                raise NonFiniteLoss(f"epoch {epoch}: loss {loss}")
            sgd_step(params, grads, opt, trainable)
            log.step_losses.append(loss)
            log.fused_pos_counts.append(0 if fused_pos is None else len(fused_pos))
            log.fused_neg_counts.append(0 if fused_neg is None else len(fused_neg))
            epoch_total += loss
        log.epoch_losses.append(epoch_total / n_batches)
        log.hard_fake_sizes.append(len(sets.hard_fake))
        log.hard_real_sizes.append(len(sets.hard_real))
        logger.info("stage1 epoch %d loss %.5f hard sets %d/%d", epoch, log.epoch_losses[-1],
                    len(sets.hard_fake), len(sets.hard_real))
    log.seconds += time.perf_counter() - start
    return params, log


def _balanced_epoch(manifest: Manifest, gen) -> np.ndarray:
    reals = manifest.indices(REAL)
    fakes = manifest.indices(FAKE)
    n = min(reals.size, fakes.size)
    chosen = np.concatenate([
        reals[gen.choice(reals.size, n, replace=False)],
        fakes[gen.choice(fakes.size, n, replace=False)],
    ])
    return chosen[gen.permutation(chosen.size)]


def train_stage2(params: ModelParams, manifest: Manifest, cfg: TrainConfig, log: TrainLog | None = None):
    """Linear probe on frozen encoder embeddings; only classifier weights move."""
    cfg.validate()
    log = log or TrainLog()
    rng = SeededRng(cfg.seed).child("stage2")
    opt = OptimState(cfg.lr, cfg.momentum)
    names = params.classifier_names()
    size = 2 * cfg.batch_size
    start = time.perf_counter()
    for _ in range(cfg.stage2_epochs):
        order = _balanced_epoch(manifest, rng.gen)
        total, count = 0.0, 0
        for lo in range(0, order.size, size):
            idx = order[lo:lo + size]
            views = np.stack([augment(manifest.features[i], cfg.augment, rng) for i in idx])
            loss, grads = loss_gradients(params, views, manifest.labels[idx], "cross_entropy")
            sgd_step(params, grads, opt, names)
            total += loss * idx.size
            count += idx.size
        log.stage2_losses.append(total / count)
    probs = fake_probability(params, manifest.features)
    log.stage2_train_acc = float(np.mean((probs > THRESHOLD) == (manifest.labels == FAKE)))
    log.seconds += time.perf_counter() - start
    return params, log


def train(cfg: TrainConfig, manifest: Manifest):
    params, log = train_stage1(cfg, manifest)
    return train_stage2(params, manifest, cfg, log)


@dataclass
class Metrics:
    tpr: float
    fpr: float
    auc: float
    acc: float
    n_eval: int
    perturbation: str


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with fake (label 1) as the positive class; ties count half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == FAKE))
    n_neg = int(np.sum(labels == REAL))
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both classes")
    ranks = rankdata(scores, method="average")
    u_stat = ranks[labels == FAKE].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


def metrics_from_scores(scores, labels, perturbation="none") -> Metrics:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.size == 0:
        raise EmptySplit("nothing to evaluate")
    pred = scores > THRESHOLD
    fake = labels == FAKE
    real = labels == REAL
    tpr = float(pred[fake].mean()) if fake.any() else float("nan")
    fpr = float(pred[real].mean()) if real.any() else float("nan")
    acc = float(np.mean(pred == fake))
    a = auc(scores, labels) if fake.any() and real.any() else float("nan")
    return Metrics(tpr, fpr, a, acc, int(scores.size), perturbation)


def evaluate(params: ModelParams, manifest: Manifest, level, artifact_direction, seed: int = 0) -> Metrics:
    level = compression_level(level)
    if len(manifest) == 0:
        raise EmptySplit("empty manifest")
    x = compress(manifest.features, level, SeededRng(seed).child(f"compress:{level.label}"), artifact_direction)
    return metrics_from_scores(fake_probability(params, x), manifest.labels, level.label)


RESULT_KEYS = ("cell_id", "strategy", "fusion_mode", "fused_negative_mode", "positive_budget", "neg_count",
               "compression", "seed", "tpr", "fpr", "auc", "acc", "stage1_final_loss")
LEVELS = ("none", "light", "heavy")
COUNT_CELLS = ((32, 0), (32, 16), (32, 32))


def counts_to_config(cfg: TrainConfig, positive_budget: int, neg_count: int) -> TrainConfig:
    """Map a (positives, negatives) cell onto budget, s and M_mix."""
    if neg_count == 0:
        return replace(cfg, positive_budget=positive_budget, s=0)
    s = cfg.s if cfg.s > 0 else 4
    if neg_count % s:
        raise ConfigError(f"negative count {neg_count} is not a multiple of s={s}", "ablation.counts")
    return replace(cfg, positive_budget=positive_budget, s=s, M_mix=neg_count // s)


def neg_count(cfg: TrainConfig) -> int:
    if cfg.loss.fused_negative_mode == "off":
        return 0
    return cfg.s * cfg.M_mix


def ablation_cells(base: TrainConfig, axes=("strategy",)) -> list:
    """(cell_id, TrainConfig) pairs; the plain baseline is always first."""
    cells = [("baseline", baseline_config(base))]
    for axis in axes:
        if axis == "strategy":
            cells += [(f"strategy={s}", replace(base, strategy=s)) for s in STRATEGIES]
        elif axis == "fusion_mode":
            cells += [(f"fusion_mode={m}", replace(base, fusion_mode=m)) for m in ("linear", "linear_smooth", "smooth")]
        elif axis == "counts":
            cells += [(f"counts={p}+{n}", counts_to_config(base, p, n)) for p, n in COUNT_CELLS]
        elif axis == "fused_negative_mode":
            cells += [(f"fused_negative_mode={m}", replace(base, loss=replace(base.loss, fused_negative_mode=m)))
                      for m in ("as_fakes", "margin")]
        else:
            raise ConfigError(f"unknown ablation axis {axis!r}", "ablate.axes")
    return cells


def run_ablation(world_cfg: WorldConfig, base: TrainConfig, axes=("strategy",), seeds=(0,), levels=LEVELS,
                 cells=None) -> list:
    """One result row per (cell, compression level, seed); failing cells yield NaN rows."""
    world = World(world_cfg)
    train_m = world.manifest("train")
    test_m = world.manifest("test")
    cells = ablation_cells(base, axes) if cells is None else cells
    rows = []
    for cell_id, cell_cfg in cells:
        for seed in seeds:
            cfg = replace(cell_cfg, seed=int(seed))
            try:
                params, log = train(cfg, train_m)
                results = [evaluate(params, test_m, lvl, world.artifact_direction, seed) for lvl in levels]
                final = log.final_loss
            except RealCLError as exc:
                logger.warning("cell %s seed %s failed: %s", cell_id, seed, exc)
                results = [Metrics(*(float("nan"),) * 4, 0, lvl) for lvl in levels]
                final = float("nan")
            for m in results:
                rows.append({
                    "cell_id": cell_id,
                    "strategy": cfg.strategy,
                    "fusion_mode": cfg.fusion_mode,
                    "fused_negative_mode": cfg.loss.fused_negative_mode,
                    "positive_budget": cfg.positive_budget if cfg.fusion_mode != "off" else 0,
                    "neg_count": neg_count(cfg),
                    "compression": m.perturbation,
                    "seed": int(seed),
                    "tpr": m.tpr,
                    "fpr": m.fpr,
                    "auc": m.auc,
                    "acc": m.acc,
                    "stage1_final_loss": final,
                })
    return rows


def format_results(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=RESULT_KEYS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def metrics_row(m: Metrics, **extra) -> dict:
    row = {k: "" for k in RESULT_KEYS}
    row.update(extra)
    row.update({"compression": m.perturbation, "tpr": m.tpr, "fpr": m.fpr, "auc": m.auc, "acc": m.acc})
    return row


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
