"""Encoder / projector / linear classifier with hand-written backward passes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DegenerateNorm, DimMismatch, NonFiniteLoss, ParseError
from .losses import (
    LossConfig,
    cross_entropy,
    cross_entropy_and_grad,
    supcon_margin_loss,
    supcon_margin_loss_and_grad,
    supcon_plain_loss,
    supcon_plain_loss_and_grad,
)
from .numeric import EPS_NORM, SeededRng

CHECKPOINT_FORMAT = "realcl-checkpoint"
CHECKPOINT_VERSION = 1
LOSS_SPECS = ("supcon_margin", "supcon_plain", "cross_entropy")


@dataclass
class ModelParams:
    encoder_dims: list
    projector_dims: list
    num_classes: int = 2
    arrays: dict = field(default_factory=dict)

    def __post_init__(self):
        self.encoder_dims = [int(d) for d in self.encoder_dims]
        self.projector_dims = [int(d) for d in self.projector_dims]
        if len(self.encoder_dims) < 2 or len(self.projector_dims) < 2:
            raise ConfigError("each stack needs at least an input and an output dim", "model")
        if self.projector_dims[0] != self.encoder_dims[-1]:
            raise ConfigError(
                f"projector input {self.projector_dims[0]} != encoder output {self.encoder_dims[-1]}", "model"
            )
        if any(d < 1 for d in self.encoder_dims + self.projector_dims):
            raise ConfigError("layer dims must be positive", "model")

    def shapes(self) -> dict:
        out = {}
        for prefix, dims in (("enc", self.encoder_dims), ("proj", self.projector_dims)):
            for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
                out[f"{prefix}.W{i}"] = (a, b)
                out[f"{prefix}.b{i}"] = (b,)
        out["cls.W"] = (self.encoder_dims[-1], self.num_classes)
        out["cls.b"] = (self.num_classes,)
        return out

    @property
    def names(self) -> list:
        return list(self.shapes())

    def encoder_names(self):
        return [k for k in self.names if k.startswith("enc.")]

    def projector_names(self):
        return [k for k in self.names if k.startswith("proj.")]

    def classifier_names(self):
        return [k for k in self.names if k.startswith("cls.")]

    def copy(self) -> "ModelParams":
        return ModelParams(self.encoder_dims, self.projector_dims, self.num_classes,
                           {k: v.copy() for k, v in self.arrays.items()})

    def num_parameters(self) -> int:
        return int(sum(np.prod(s) for s in self.shapes().values()))

    def fingerprint(self, names=None) -> bytes:
        names = self.names if names is None else names
        return b"".join(np.ascontiguousarray(self.arrays[k]).tobytes() for k in names)


def init_params(encoder_dims, projector_dims, rng: SeededRng, num_classes: int = 2) -> ModelParams:
    """Uniform Glorot weights, zero biases."""
    params = ModelParams(encoder_dims, projector_dims, num_classes)
    for name, shape in params.shapes().items():
        if len(shape) == 2:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            params.arrays[name] = rng.gen.uniform(-bound, bound, size=shape)
        else:
            params.arrays[name] = np.zeros(shape)
    return params


def _stack_forward(params, prefix, n_layers, x):
    acts = [x]
    pre = []
    for i in range(n_layers):
        out = acts[-1] @ params.arrays[f"{prefix}.W{i}"] + params.arrays[f"{prefix}.b{i}"]
        pre.append(out)
        acts.append(np.maximum(out, 0.0) if i < n_layers - 1 else out)
    return acts, pre


def _stack_backward(params, prefix, n_layers, acts, pre, grad_out, grads):
    g = grad_out
    for i in reversed(range(n_layers)):
        if i < n_layers - 1:
            g = g * (pre[i] > 0)
        grads[f"{prefix}.W{i}"] = acts[i].T @ g
        grads[f"{prefix}.b{i}"] = g.sum(axis=0)
        g = g @ params.arrays[f"{prefix}.W{i}"].T
    return g


def _as_rows(params, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != params.encoder_dims[0]:
        raise DimMismatch(f"input dim {x.shape[1]} != model input dim {params.encoder_dims[0]}")
    return x, single


def encode(params: ModelParams, x) -> np.ndarray:
    x, single = _as_rows(params, x)
    acts, _ = _stack_forward(params, "enc", len(params.encoder_dims) - 1, x)
    return acts[-1][0] if single else acts[-1]


def _normalize_rows(p):
    norms = np.sqrt(np.einsum("ij,ij->i", p, p))
    if not np.all(norms > EPS_NORM):
        raise DegenerateNorm(f"projector output norm {norms.min():.3e} is degenerate")
    return p / norms[:, None], norms


def encode_project(params: ModelParams, x):
    """Return ``(z, h)``: the unit projection and the encoder embedding."""
    x, single = _as_rows(params, x)
    ea, _ = _stack_forward(params, "enc", len(params.encoder_dims) - 1, x)
    h = ea[-1]
    pa, _ = _stack_forward(params, "proj", len(params.projector_dims) - 1, h)
    z, _ = _normalize_rows(pa[-1])
    return (z[0], h[0]) if single else (z, h)


def classify(params: ModelParams, h) -> np.ndarray:
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != params.encoder_dims[-1]:
        raise DimMismatch(f"embedding dim {h.shape[-1]} != {params.encoder_dims[-1]}")
    return h @ params.arrays["cls.W"] + params.arrays["cls.b"]


def fake_probability(params: ModelParams, x) -> np.ndarray:
    logits = classify(params, encode(params, x))
    logits = np.atleast_2d(logits)
    shifted = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(shifted)
    return p[:, 1] / p.sum(axis=1)


def loss_gradients(params: ModelParams, views, labels, loss_spec="supcon_margin", loss_cfg=LossConfig(),
                   fused_pos=None, fused_pos_labels=None, fused_neg=None):
    """Scalar loss of one batch and its exact gradient for every parameter.

    Fused features are constants. Under ``cross_entropy`` the projector
    gradient is zero; under the contrastive specs the classifier's is.
    """
    if loss_spec not in LOSS_SPECS:
        raise ConfigError(f"unknown loss spec {loss_spec!r}", "loss_spec")
    grads = {k: np.zeros(s) for k, s in params.shapes().items()}
    views, _ = _as_rows(params, views)
    n_enc = len(params.encoder_dims) - 1
    ea, epre = _stack_forward(params, "enc", n_enc, views)
    h = ea[-1]

    if loss_spec == "cross_entropy":
        logits = classify(params, h)
        loss, dlogits = cross_entropy_and_grad(logits, labels)
        grads["cls.W"] = h.T @ dlogits
        grads["cls.b"] = dlogits.sum(axis=0)
        dh = dlogits @ params.arrays["cls.W"].T
    else:
        n_proj = len(params.projector_dims) - 1
        pa, ppre = _stack_forward(params, "proj", n_proj, h)
        z, norms = _normalize_rows(pa[-1])
        if loss_spec == "supcon_plain":
            loss, dz = supcon_plain_loss_and_grad(z, labels, loss_cfg.tau, loss_cfg.reduction)
        else:
            loss, dz = supcon_margin_loss_and_grad(z, labels, fused_pos, fused_pos_labels, fused_neg, loss_cfg)
        dp = (dz - z * np.einsum("ij,ij->i", z, dz)[:, None]) / norms[:, None]
        dh = _stack_backward(params, "proj", n_proj, pa, ppre, dp, grads)
    _stack_backward(params, "enc", n_enc, ea, epre, dh, grads)

    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteLoss(f"non-finite gradient in {k}")
    return loss, grads


def loss_value(params, views, labels, loss_spec="supcon_margin", loss_cfg=LossConfig(),
               fused_pos=None, fused_pos_labels=None, fused_neg=None) -> float:
    """Forward-only loss through the public forward path (used by finite differences)."""
    if loss_spec == "cross_entropy":
        return cross_entropy(classify(params, encode(params, views)), labels)
    z, _ = encode_project(params, views)
    if loss_spec == "supcon_plain":
        return supcon_plain_loss(z, labels, loss_cfg.tau, loss_cfg.reduction)
    return supcon_margin_loss(z, labels, fused_pos, fused_pos_labels, fused_neg, loss_cfg)


@dataclass
class OptimState:
    learning_rate: float = 0.01
    momentum: float = 0.9
    buffers: dict = field(default_factory=dict)


def sgd_step(params: ModelParams, grads: dict, opt: OptimState, names=None) -> ModelParams:
    """Heavy-ball SGD in place on ``names`` (default: every parameter with a gradient)."""
    names = list(grads) if names is None else names
    for k in names:
        g = grads[k]
        if g.shape != params.arrays[k].shape:
            raise DimMismatch(f"gradient shape {g.shape} != parameter shape {params.arrays[k].shape} for {k}")
        buf = opt.buffers.get(k)
        buf = g.copy() if buf is None else opt.momentum * buf + g
        opt.buffers[k] = buf
        params.arrays[k] = params.arrays[k] - opt.learning_rate * buf
    return params


def checkpoint_dict(params: ModelParams, meta=None) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "encoder_dims": params.encoder_dims,
        "projector_dims": params.projector_dims,
        "num_classes": params.num_classes,
        "params": {k: params.arrays[k].tolist() for k in params.names},
        "meta": meta or {},
    }


def dumps_checkpoint(params: ModelParams, meta=None) -> str:
    # json writes floats with repr, which round-trips float64 exactly
    return json.dumps(checkpoint_dict(params, meta), indent=1) + "\n"


def save_checkpoint(params: ModelParams, path, meta=None):
    Path(path).write_text(dumps_checkpoint(params, meta), encoding="utf-8")


def loads_checkpoint(text: str):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"checkpoint is not valid JSON: {exc}") from exc
    if obj.get("format") != CHECKPOINT_FORMAT:
        raise ParseError("not a realcl checkpoint")
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ParseError(f"unsupported checkpoint version {obj.get('version')}")
    params = ModelParams(obj["encoder_dims"], obj["projector_dims"], obj["num_classes"])
    for name, shape in params.shapes().items():
        arr = np.array(obj["params"][name], dtype=np.float64)
        if arr.shape != shape:
            raise DimMismatch(f"checkpoint array {name} has shape {arr.shape}, expected {shape}")
        params.arrays[name] = arr
    return params, obj.get("meta", {})


def load_checkpoint(path):
    return loads_checkpoint(Path(path).read_text(encoding="utf-8"))
