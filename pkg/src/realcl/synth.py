"""Synthetic forgery world.

Real frames mix an identity latent (plus a slow per-video walk) with a
per-video background latent. A fake frame takes the background and motion
of a source video, blends the target identity into the source identity and
adds a fixed artifact direction. Compression attenuates that direction and
adds broadband noise.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError
from .numeric import SeededRng, l2_normalize
from .pairing import Manifest, SampleRecord


@dataclass(frozen=True)
class WorldConfig:
    num_identities: int = 8
    videos_per_identity: int = 2
    frames_per_video: int = 16
    feature_dim: int = 32
    identity_spread: float = 1.0
    frame_drift: float = 0.1
    artifact_strength: float = 3.0
    blend_weight: float = 0.7
    observation_noise: float = 0.3
    fakes_per_identity: int = 4
    seed: int = 0

    def validate(self):
        for name in ("num_identities", "videos_per_identity", "frames_per_video", "feature_dim",
                     "fakes_per_identity"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigError("must be an integer >= 1", f"world.{name}")
        if self.feature_dim < 2:
            raise ConfigError("must be >= 2", "world.feature_dim")
        if self.num_identities < 2:
            raise ConfigError("fakes need at least two identities", "world.num_identities")
        for name in ("identity_spread", "frame_drift", "artifact_strength", "observation_noise"):
            if not getattr(self, name) >= 0:
                raise ConfigError("must be >= 0", f"world.{name}")
        if not 0 <= self.blend_weight <= 1:
            raise ConfigError("must lie in [0, 1]", "world.blend_weight")

    def to_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class CompressionLevel:
    label: str
    artifact_attenuation: float
    added_noise: float


COMPRESSION_LEVELS = {
    "none": CompressionLevel("none", 0.0, 0.0),
    "light": CompressionLevel("light", 0.4, 0.02),
    "heavy": CompressionLevel("heavy", 0.8, 0.05),
}


def compression_level(name) -> CompressionLevel:
    if isinstance(name, CompressionLevel):
        return name
    try:
        return COMPRESSION_LEVELS[name]
    except KeyError:
        raise ConfigError(f"unknown compression level {name!r}", "compression") from None


class World:
    """Latent structure shared by every split generated from one config."""

    def __init__(self, cfg: WorldConfig):
        cfg.validate()
        self.cfg = cfg
        self.face_dim = cfg.feature_dim // 2
        self.bg_dim = cfg.feature_dim - self.face_dim
        gen = SeededRng(cfg.seed).child("structure").gen
        self.identity_latents = cfg.identity_spread * gen.standard_normal((cfg.num_identities, self.face_dim))
        q, r = np.linalg.qr(gen.standard_normal((cfg.feature_dim, cfg.feature_dim)))
        self.mixing = q * np.sign(np.diag(r))
        self.artifact_direction = l2_normalize(gen.standard_normal(cfg.feature_dim))

    def composite(self, face, background) -> np.ndarray:
        return self.mixing @ np.concatenate([face, background])

    def video_latents(self, split: str):
        """Per-video background latents and frame walks for one split."""
        cfg = self.cfg
        gen = SeededRng(cfg.seed).child(f"videos:{split}").gen
        backgrounds = gen.standard_normal((cfg.num_identities, cfg.videos_per_identity, self.bg_dim))
        steps = gen.standard_normal((cfg.num_identities, cfg.videos_per_identity, cfg.frames_per_video, self.face_dim))
        steps[:, :, 0] = 0.0
        walks = np.cumsum(steps, axis=2)
        return backgrounds, walks

    def manifest(self, split: str = "train") -> Manifest:
        cfg = self.cfg
        backgrounds, walks = self.video_latents(split)
        gen = SeededRng(cfg.seed).child(f"frames:{split}").gen
        records = []

        def vid(i, v):
            return f"{split}_id{i:02d}_v{v}"

        for i in range(cfg.num_identities):
            for v in range(cfg.videos_per_identity):
                for t in range(cfg.frames_per_video):
                    face = self.identity_latents[i] + cfg.frame_drift * walks[i, v, t]
                    x = self.composite(face, backgrounds[i, v])
                    x = x + cfg.observation_noise * gen.standard_normal(cfg.feature_dim)
                    records.append(SampleRecord(
                        sample_id=f"{vid(i, v)}_f{t:03d}", label="real", video_id=vid(i, v),
                        frame_index=t, features=tuple(x.tolist()), identity_id=f"id{i:02d}",
                    ))

        combos = [(v, t) for v in range(cfg.videos_per_identity)
                  for t in range(cfg.num_identities)]
        for s in range(cfg.num_identities):
            options = [(v, t) for v, t in combos if t != s]
            picks = gen.permutation(len(options))
            for n in range(cfg.fakes_per_identity):
                # cycle through every (video, target) combination before repeating one
                v, t = options[int(picks[n % len(options)])]
                fake_vid = f"{split}_fake{n}_{vid(s, v)}_to_id{t:02d}"
                face_mix = cfg.blend_weight * self.identity_latents[t] + (1 - cfg.blend_weight) * self.identity_latents[s]
                for f in range(cfg.frames_per_video):
                    face = face_mix + cfg.frame_drift * walks[s, v, f]
                    x = self.composite(face, backgrounds[s, v])
                    x = x + cfg.artifact_strength * self.artifact_direction
                    x = x + cfg.observation_noise * gen.standard_normal(cfg.feature_dim)
                    records.append(SampleRecord(
                        sample_id=f"{fake_vid}_f{f:03d}", label="fake", video_id=fake_vid,
                        frame_index=f, features=tuple(x.tolist()), source_video_id=vid(s, v),
                        target_identity_id=f"id{t:02d}",
                    ))
        return Manifest(records, cfg.feature_dim)


def generate_world(cfg: WorldConfig, split: str = "train") -> Manifest:
    return World(cfg).manifest(split)


def compress(v, level, rng: SeededRng, direction) -> np.ndarray:
    """Attenuate the artifact component of ``v`` (or of each row) and add noise."""
    level = compression_level(level)
    v = np.asarray(v, dtype=np.float64)
    if level.artifact_attenuation == 0 and level.added_noise == 0:
        return v.copy()
    direction = np.asarray(direction, dtype=np.float64)
    along = v @ direction
    out = v - level.artifact_attenuation * np.multiply.outer(along, direction)
    return out + level.added_noise * rng.gen.standard_normal(v.shape)


def centroid_accuracy(train: Manifest, test_x, test_labels) -> float:
    """Nearest-class-centroid accuracy; the separability oracle for the world."""
    centroids = np.stack([train.features[train.labels == c].mean(axis=0) for c in (0, 1)])
    d = ((np.asarray(test_x)[:, None, :] - centroids[None]) ** 2).sum(axis=2)
    return float(np.mean(np.argmin(d, axis=1) == np.asarray(test_labels)))
