"""Supervised contrastive losses (plain and with fused features) and cross entropy.

Every loss has a ``*_and_grad`` twin returning the gradient with respect to
its feature or logit input; fused features are constants and get none.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, EmptyBatch, NonFiniteLoss

NEGATIVE_MODES = ("margin", "as_fakes", "off")
EXTENSIONS = ("class_filtered", "literal_union")
REDUCTIONS = ("sum", "mean")


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.1
    fused_negative_mode: str = "margin"
    use_transformed_positives: bool = True
    positive_set_extension: str = "class_filtered"
    # -1/|P_i| over the extended positive sum, exactly as printed in the method
    literal_normalizer: bool = False
    # "sum" matches the printed outer sum; it diverges at lr 0.01 on 2N anchors
    reduction: str = "mean"

    def validate(self):
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise ConfigError("must be a finite positive number", "loss.tau")
        if self.fused_negative_mode not in NEGATIVE_MODES:
            raise ConfigError(f"must be one of {NEGATIVE_MODES}", "loss.fused_negative_mode")
        if self.positive_set_extension not in EXTENSIONS:
            raise ConfigError(f"must be one of {EXTENSIONS}", "loss.positive_set_extension")
        if self.reduction not in REDUCTIONS:
            raise ConfigError(f"must be one of {REDUCTIONS}", "loss.reduction")


def _check_finite(value):
    if not np.isfinite(value):
        raise NonFiniteLoss(f"loss evaluated to {value}")
    return float(value)


def supcon_plain_loss_and_grad(z, labels, tau=0.1, reduction="sum"):
    """Supervised contrastive loss over a batch of unit features."""
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    n = z.shape[0]
    if n < 2:
        raise EmptyBatch("need at least two features")
    logits = z @ z.T / tau
    not_self = ~np.eye(n, dtype=bool)
    positives = (labels[:, None] == labels[None, :]) & not_self
    n_pos = positives.sum(axis=1)
    active = n_pos > 0
    if not active.any():
        raise EmptyBatch("no anchor has a positive")

    masked = np.where(not_self, logits, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)
    exp = np.exp(masked - row_max)
    denom = exp.sum(axis=1, keepdims=True)
    log_prob = logits - row_max - np.log(denom)
    safe_pos = np.maximum(n_pos, 1)
    per_anchor = -(np.where(positives, log_prob, 0.0).sum(axis=1)) / safe_pos
    weight = 1.0 if reduction == "sum" else 1.0 / active.sum()
    loss = _check_finite(weight * per_anchor[active].sum())

    softmax = exp / denom
    g = (softmax - positives / safe_pos[:, None]) * (active * weight)[:, None]
    dz = (g + g.T) @ z / tau
    return loss, dz


def supcon_plain_loss(z, labels, tau=0.1, reduction="sum"):
    return supcon_plain_loss_and_grad(z, labels, tau, reduction)[0]


def _extended_columns(labels, fused_pos, fused_pos_labels, fused_neg, cfg: LossConfig):
    """Extra constant columns plus their denominator/positive masks per anchor."""
    n = labels.shape[0]
    blocks, pos_cols = [], []
    literal_extra = np.zeros(n)
    if cfg.use_transformed_positives and fused_pos is not None and len(fused_pos):
        fused_pos = np.asarray(fused_pos, dtype=np.float64)
        fused_pos_labels = np.asarray(fused_pos_labels)
        blocks.append(fused_pos)
        if cfg.positive_set_extension == "class_filtered":
            pos_cols.append(labels[:, None] == fused_pos_labels[None, :])
        else:
            pos_cols.append(np.ones((n, len(fused_pos)), dtype=bool))
    if cfg.fused_negative_mode != "off" and fused_neg is not None and len(fused_neg):
        fused_neg = np.asarray(fused_neg, dtype=np.float64)
        blocks.append(fused_neg)
        if cfg.fused_negative_mode == "as_fakes":
            is_fake = labels == 1
            pos_cols.append(np.repeat(is_fake[:, None], len(fused_neg), axis=1))
            literal_extra = is_fake * float(len(fused_neg))
        else:
            pos_cols.append(np.zeros((n, len(fused_neg)), dtype=bool))
    if not blocks:
        return None, None, literal_extra
    return np.vstack(blocks), np.hstack(pos_cols), literal_extra


def supcon_margin_loss_and_grad(z, labels, fused_pos=None, fused_pos_labels=None, fused_neg=None,
                                cfg: LossConfig = LossConfig()):
    """Supervised contrastive margin loss and its gradient w.r.t. ``z``.

    ``fused_pos`` extend both the positive set (subject to the class filter)
    and the denominator of every anchor. ``fused_neg`` either add a margin
    term to every denominator or, in ``as_fakes`` mode, join the batch as
    fake-labelled features that are never anchors themselves.
    """
    z = np.asarray(z, dtype=np.float64)
    labels = np.asarray(labels)
    n = z.shape[0]
    if n < 2:
        raise EmptyBatch("need at least two features")
    tau = cfg.tau
    extra, extra_pos, literal_extra = _extended_columns(labels, fused_pos, fused_pos_labels, fused_neg, cfg)

    not_self = ~np.eye(n, dtype=bool)
    batch_pos = (labels[:, None] == labels[None, :]) & not_self
    if extra is None:
        cols = z
        pos = batch_pos
    else:
        cols = np.vstack([z, extra])
        pos = np.hstack([batch_pos, extra_pos])
    denom_mask = np.hstack([not_self, np.ones((n, cols.shape[0] - n), dtype=bool)])

    n_pos = pos.sum(axis=1).astype(np.float64)
    if cfg.literal_normalizer:
        norm = batch_pos.sum(axis=1) + literal_extra
    else:
        norm = n_pos
    active = (n_pos > 0) & (norm > 0)
    if not active.any():
        raise EmptyBatch("no anchor has a positive")
    safe_norm = np.where(active, norm, 1.0)

    logits = z @ cols.T / tau
    masked = np.where(denom_mask, logits, -np.inf)
    row_max = masked.max(axis=1, keepdims=True)
    exp = np.exp(masked - row_max)
    denom = exp.sum(axis=1, keepdims=True)
    lse = (row_max + np.log(denom))[:, 0]

    pos_logit_sum = np.where(pos, logits, 0.0).sum(axis=1)
    per_anchor = -(pos_logit_sum - n_pos * lse) / safe_norm
    weight = 1.0 if cfg.reduction == "sum" else 1.0 / active.sum()
    loss = _check_finite(weight * per_anchor[active].sum())

    coeff = (active * weight) / safe_norm
    g = (n_pos[:, None] * exp / denom - pos) * coeff[:, None]
    gb = g[:, :n]
    dz = (gb + gb.T) @ z
    if extra is not None:
        dz += g[:, n:] @ extra
    return loss, dz / tau


def supcon_margin_loss(z, labels, fused_pos=None, fused_pos_labels=None, fused_neg=None,
                       cfg: LossConfig = LossConfig()):
    return supcon_margin_loss_and_grad(z, labels, fused_pos, fused_pos_labels, fused_neg, cfg)[0]


def cross_entropy_and_grad(logits, labels):
    """Mean negative log-softmax of the true class; gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = logits.shape[0]
    if n < 1:
        raise EmptyBatch("cross entropy needs at least one sample")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_softmax = shifted - log_norm
    loss = _check_finite(-log_softmax[np.arange(n), labels].mean())
    grad = np.exp(log_softmax)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def cross_entropy(logits, labels):
    return cross_entropy_and_grad(logits, labels)[0]
