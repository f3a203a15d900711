import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from realcl.pairing import Manifest, SampleRecord  # noqa: E402
from realcl.synth import World, WorldConfig  # noqa: E402


def _real(sid, ident, video, frame, feats):
    return SampleRecord(sid, "real", video, frame, tuple(feats), identity_id=ident)


def _fake(sid, video, frame, src, tgt, feats):
    return SampleRecord(sid, "fake", video, frame, tuple(feats), source_video_id=src, target_identity_id=tgt)


def relation_records():
    """Twelve records covering every metadata relation the strategies look at.

    r1-r2 adjacent frames, r3 two frames later, r4 same identity in another
    video, r5-r6 a second identity. Fakes share sources and targets in
    overlapping ways, and f5/f6 are two frames apart in one video.
    """
    return [
        _real("r1", "A", "v1", 0, (1.0, 0.0)),
        _real("r2", "A", "v1", 1, (0.9, 0.1)),
        _real("r3", "A", "v1", 3, (0.8, 0.2)),
        _real("r4", "A", "v2", 0, (0.7, 0.3)),
        _real("r5", "B", "v3", 0, (0.6, 0.4)),
        _real("r6", "B", "v3", 1, (0.5, 0.5)),
        _fake("f1", "fv1", 0, "v1", "B", (0.0, 1.0)),
        _fake("f2", "fv1", 1, "v1", "B", (0.1, 0.9)),
        _fake("f3", "fv2", 0, "v3", "A", (0.2, 0.8)),
        _fake("f4", "fv3", 0, "v1", "A", (0.3, 0.7)),
        _fake("f5", "fv4", 0, "v2", "B", (0.4, 0.6)),
        _fake("f6", "fv4", 2, "v2", "B", (0.5, 0.5)),
    ]


@pytest.fixture
def relation_manifest():
    return Manifest(relation_records(), 2)


@pytest.fixture(scope="session")
def default_world():
    return World(WorldConfig())


@pytest.fixture(scope="session")
def train_manifest(default_world):
    return default_world.manifest("train")


@pytest.fixture(scope="session")
def test_manifest(default_world):
    return default_world.manifest("test")


# filled by test_acceptance.py; echoed after the run so the verdicts land in the log
acceptance_lines = []


def pytest_terminal_summary(terminalreporter):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(acceptance_lines, key=lambda s: int(s.split()[1][1:])):
            terminalreporter.write_line(line)
