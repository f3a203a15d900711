"""Central finite-difference verification of ``loss_gradients``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .losses import LossConfig
from .model import LOSS_SPECS, init_params, loss_gradients, loss_value
from .numeric import SeededRng, l2_normalize_rows

STEP = 1e-5
REL_TOL = 1e-4
# Entries whose gradient magnitude is below this are compared absolutely.
ABS_FLOOR = 1e-3


@dataclass
class GradcheckResult:
    loss_spec: str
    seed: int
    max_rel_error: float
    worst_param: str
    n_checked: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < REL_TOL


def relative_error(analytic, numeric) -> np.ndarray:
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), ABS_FLOOR)
    return np.abs(analytic - numeric) / scale


def finite_difference(fn, params, name, step=STEP) -> np.ndarray:
    arr = params.arrays[name]
    out = np.zeros_like(arr)
    for idx in np.ndindex(arr.shape):
        orig = arr[idx]
        arr[idx] = orig + step
        up = fn()
        arr[idx] = orig - step
        down = fn()
        arr[idx] = orig
        out[idx] = (up - down) / (2 * step)
    return out


def random_case(seed: int, loss_spec: str, n_pairs: int = 2):
    """Small random model, batch and fused features for one gradcheck."""
    rng = SeededRng(seed).child(f"gradcheck:{loss_spec}")
    gen = rng.gen
    d_in = int(gen.integers(3, 7))
    enc = [d_in, int(gen.integers(3, 9)), int(gen.integers(3, 7))]
    proj = [enc[-1], int(gen.integers(3, 7)), int(gen.integers(2, 6))]
    params = init_params(enc, proj, rng.child("init"))
    for k in params.names:
        if k.endswith(tuple(f".b{i}" for i in range(4))) or k == "cls.b":
            params.arrays[k] = 0.1 * gen.standard_normal(params.arrays[k].shape)
    n = 2 * n_pairs
    views = gen.standard_normal((n, d_in))
    labels = np.array([0, 1] * n_pairs)
    d_out = proj[-1]
    extras = {}
    if loss_spec == "supcon_margin":
        modes = ("margin", "as_fakes", "off")
        cfg = LossConfig(
            tau=float(gen.uniform(0.1, 1.0)),
            fused_negative_mode=modes[seed % 3],
            positive_set_extension=("class_filtered", "literal_union")[(seed // 3) % 2],
            literal_normalizer=bool(seed % 2),
            reduction=("sum", "mean")[(seed // 2) % 2],
        )
        n_p, n_n = int(gen.integers(0, 4)), int(gen.integers(0, 4))
        extras = dict(
            fused_pos=l2_normalize_rows(gen.standard_normal((n_p, d_out))) if n_p else None,
            fused_pos_labels=gen.integers(0, 2, n_p) if n_p else None,
            fused_neg=l2_normalize_rows(gen.standard_normal((n_n, d_out))) if n_n else None,
        )
    else:
        cfg = LossConfig(tau=float(gen.uniform(0.1, 1.0)))
    return params, views, labels, cfg, extras


def check_case(seed: int, loss_spec: str) -> GradcheckResult:
    params, views, labels, cfg, extras = random_case(seed, loss_spec)
    _, grads = loss_gradients(params, views, labels, loss_spec, cfg, **extras)

    def fn():
        return loss_value(params, views, labels, loss_spec, cfg, **extras)

    worst, worst_name, count = 0.0, "", 0
    for name in params.names:
        numeric = finite_difference(fn, params, name)
        err = float(relative_error(grads[name], numeric).max())
        count += numeric.size
        if err >= worst:
            worst, worst_name = err, name
    return GradcheckResult(loss_spec, seed, worst, worst_name, count)


def run_suite(n_configs: int = 20, base_seed: int = 0, loss_specs=LOSS_SPECS):
    return [check_case(base_seed + i, spec) for spec in loss_specs for i in range(n_configs)]
