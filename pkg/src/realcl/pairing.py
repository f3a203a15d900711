"""Sample manifests, positive-pair strategies and balanced batch assembly."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import DimMismatch, InsufficientData, ParseError, SchemaError, ValidationError
from .numeric import SeededRng

REAL, FAKE = 0, 1
LABEL_NAMES = {REAL: "real", FAKE: "fake"}
LABEL_CODES = {"real": REAL, "fake": FAKE}


class PairingStrategy(str, Enum):
    INSTANCE = "instance"
    TEMPORAL = "temporal"
    SEMANTICAL = "semantical"
    CLASS = "class"


STRATEGIES = tuple(s.value for s in PairingStrategy)


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    label: str
    video_id: str
    frame_index: int
    features: tuple
    identity_id: str | None = None
    source_video_id: str | None = None
    target_identity_id: str | None = None

    @property
    def label_code(self) -> int:
        return LABEL_CODES[self.label]

    def validate(self):
        if self.label not in LABEL_CODES:
            raise SchemaError(f"{self.sample_id}: label must be 'real' or 'fake', got {self.label!r}")
        if not isinstance(self.frame_index, int) or self.frame_index < 0:
            raise SchemaError(f"{self.sample_id}: frame_index must be a non-negative integer")
        if self.label == "real":
            if not self.identity_id:
                raise SchemaError(f"{self.sample_id}: real record needs identity_id")
            if self.source_video_id is not None or self.target_identity_id is not None:
                raise SchemaError(f"{self.sample_id}: real record must not carry source/target fields")
        else:
            if not self.source_video_id:
                raise SchemaError(f"{self.sample_id}: fake record needs source_video_id")
            if not self.target_identity_id:
                raise SchemaError(f"{self.sample_id}: fake record needs target_identity_id")

    def to_json(self) -> dict:
        out = {
            "sample_id": self.sample_id,
            "label": self.label,
            "video_id": self.video_id,
            "frame_index": self.frame_index,
        }
        if self.identity_id is not None:
            out["identity_id"] = self.identity_id
        if self.source_video_id is not None:
            out["source_video_id"] = self.source_video_id
        if self.target_identity_id is not None:
            out["target_identity_id"] = self.target_identity_id
        out["features"] = [float(x) for x in self.features]
        return out


_REQUIRED_KEYS = ("sample_id", "label", "video_id", "frame_index", "features")
_OPTIONAL_KEYS = ("identity_id", "source_video_id", "target_identity_id")


def record_from_json(obj: dict, where: str = "") -> SampleRecord:
    if not isinstance(obj, dict):
        raise ParseError(f"{where}expected a JSON object")
    missing = [k for k in _REQUIRED_KEYS if k not in obj]
    if missing:
        raise SchemaError(f"{where}missing keys {missing}")
    unknown = set(obj) - set(_REQUIRED_KEYS) - set(_OPTIONAL_KEYS)
    if unknown:
        raise SchemaError(f"{where}unknown keys {sorted(unknown)}")
    feats = obj["features"]
    if not isinstance(feats, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in feats):
        raise SchemaError(f"{where}features must be an array of reals")
    rec = SampleRecord(
        sample_id=str(obj["sample_id"]),
        label=obj["label"],
        video_id=str(obj["video_id"]),
        frame_index=obj["frame_index"],
        features=tuple(float(x) for x in feats),
        identity_id=obj.get("identity_id"),
        source_video_id=obj.get("source_video_id"),
        target_identity_id=obj.get("target_identity_id"),
    )
    rec.validate()
    return rec


@dataclass
class Manifest:
    records: list
    feature_dim: int
    _partners: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.validate()
        self.features = np.array([r.features for r in self.records], dtype=np.float64).reshape(
            len(self.records), self.feature_dim
        )
        self.labels = np.array([r.label_code for r in self.records], dtype=np.int64)

    def validate(self):
        seen = set()
        for rec in self.records:
            rec.validate()
            if len(rec.features) != self.feature_dim:
                raise DimMismatch(
                    f"{rec.sample_id}: feature length {len(rec.features)} != feature_dim {self.feature_dim}"
                )
            key = (rec.video_id, rec.frame_index)
            if key in seen:
                raise SchemaError(f"duplicate (video_id, frame_index) {key}")
            seen.add(key)

    def __len__(self):
        return len(self.records)

    def indices(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)

    def partners(self, strategy) -> list:
        """For every record, the sorted indices it may be paired with."""
        strategy = PairingStrategy(strategy)
        if strategy not in self._partners:
            self._partners[strategy] = _build_partner_lists(self.records, strategy)
        return self._partners[strategy]


def _build_partner_lists(records, strategy: PairingStrategy) -> list:
    # grouped construction; agrees with pair_admissible on every pair (tested)
    n = len(records)
    if strategy is PairingStrategy.CLASS:
        by_label = defaultdict(list)
        for i, r in enumerate(records):
            by_label[r.label].append(i)
        return [by_label[r.label] for r in records]

    sets = [{i} for i in range(n)]
    if strategy is not PairingStrategy.INSTANCE:
        by_frame = {(r.video_id, r.frame_index): i for i, r in enumerate(records)}
        for i, r in enumerate(records):
            for df in (-1, 1):
                j = by_frame.get((r.video_id, r.frame_index + df))
                if j is not None and records[j].label == r.label:
                    sets[i].add(j)
    if strategy is PairingStrategy.SEMANTICAL:
        groups = defaultdict(list)
        for i, r in enumerate(records):
            if r.label == "fake":
                groups[("src", r.source_video_id)].append(i)
                groups[("tgt", r.target_identity_id)].append(i)
            else:
                groups[("id", r.identity_id)].append(i)
        for i, r in enumerate(records):
            if r.label == "fake":
                sets[i].update(groups[("src", r.source_video_id)])
                sets[i].update(groups[("tgt", r.target_identity_id)])
            else:
                sets[i].update(j for j in groups[("id", r.identity_id)] if records[j].video_id != r.video_id)
    # instance-level ids may repeat across records
    by_id = defaultdict(list)
    for i, r in enumerate(records):
        by_id[r.sample_id].append(i)
    for i, r in enumerate(records):
        sets[i].update(by_id[r.sample_id])
    return [sorted(s) for s in sets]


def pair_admissible(a: SampleRecord, b: SampleRecord, strategy) -> bool:
    strategy = PairingStrategy(strategy)
    if strategy is PairingStrategy.CLASS:
        return a.label == b.label
    if a.sample_id == b.sample_id:
        return True
    if strategy is PairingStrategy.INSTANCE:
        return False
    if a.label == b.label and a.video_id == b.video_id and abs(a.frame_index - b.frame_index) == 1:
        return True
    if strategy is PairingStrategy.TEMPORAL:
        return False
    if a.label == "fake" and b.label == "fake":
        return a.source_video_id == b.source_video_id or a.target_identity_id == b.target_identity_id
    if a.label == "real" and b.label == "real":
        return a.identity_id == b.identity_id and a.video_id != b.video_id
    return False


def load_manifest(path) -> Manifest:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    records = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        records.append(record_from_json(obj, where=f"{path}:{lineno}: "))
    if not records:
        raise ParseError(f"{path}: no records")
    dims = {len(r.features) for r in records}
    if len(dims) != 1:
        raise DimMismatch(f"{path}: mixed feature dims {sorted(dims)}")
    return Manifest(records, dims.pop())


def dump_manifest(manifest: Manifest) -> str:
    return "".join(json.dumps(r.to_json()) + "\n" for r in manifest.records)


def save_manifest(manifest: Manifest, path):
    Path(path).write_text(dump_manifest(manifest), encoding="utf-8")


@dataclass(frozen=True)
class AugmentConfig:
    gaussian_sigma: float = 0.05
    dropout_prob: float = 0.1
    scale_range: tuple = (0.9, 1.1)

    def __post_init__(self):
        lo, hi = self.scale_range
        if self.gaussian_sigma < 0:
            raise ValidationError("gaussian_sigma must be >= 0")
        if not 0 <= self.dropout_prob < 1:
            raise ValidationError("dropout_prob must lie in [0, 1)")
        if not 0 < lo <= hi:
            raise ValidationError("scale_range needs 0 < lo <= hi")


IDENTITY_AUGMENT = AugmentConfig(0.0, 0.0, (1.0, 1.0))


def augment(v, cfg: AugmentConfig, rng: SeededRng) -> np.ndarray:
    """Gaussian jitter, then coordinate dropout, then a global rescale.

    The output is left unnormalized.
    """
    v = np.asarray(v, dtype=np.float64)
    gen = rng.gen
    noise = gen.standard_normal(v.shape)
    keep = gen.random(v.shape) >= cfg.dropout_prob
    scale = gen.uniform(cfg.scale_range[0], cfg.scale_range[1])
    out = v + cfg.gaussian_sigma * noise
    out = np.where(keep, out, 0.0)
    return out * scale


@dataclass
class Batch:
    """2N views. Rows ``i`` and ``i + N`` are the two members of one pair."""

    views: np.ndarray
    labels: np.ndarray
    pair_index: np.ndarray
    N: int
    record_index: np.ndarray

    def validate(self):
        n2 = 2 * self.N
        assert self.views.shape[0] == n2 and self.labels.shape == (n2,)
        idx = np.arange(n2)
        assert np.all(self.pair_index[self.pair_index] == idx)
        assert not np.any(self.pair_index == idx)
        assert np.all(self.labels == self.labels[self.pair_index])
        assert int(np.sum(self.labels == REAL)) == self.N


def assemble_batch(manifest: Manifest, strategy, N: int, cfg: AugmentConfig, rng: SeededRng) -> Batch:
    if N < 2 or N % 2:
        raise InsufficientData(f"batch size N must be an even number >= 2, got {N}")
    half = N // 2
    partners = manifest.partners(strategy)
    gen = rng.gen
    anchors, mates = [], []
    for label in (REAL, FAKE):
        pool = manifest.indices(label)
        if pool.size < half:
            raise InsufficientData(
                f"need {half} {LABEL_NAMES[label]} records for N={N}, manifest has {pool.size}"
            )
        chosen = pool[gen.choice(pool.size, size=half, replace=False)]
        for a in chosen:
            options = partners[a]
            mates.append(options[int(gen.integers(len(options)))])
            anchors.append(int(a))
    rec_idx = np.array(anchors + mates, dtype=np.int64)
    views = np.empty((2 * N, manifest.feature_dim))
    for row, ri in enumerate(rec_idx):
        views[row] = augment(manifest.features[ri], cfg, rng)
    pair_index = np.concatenate([np.arange(N, 2 * N), np.arange(N)])
    return Batch(views, manifest.labels[rec_idx].copy(), pair_index, N, rec_idx)
