import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from purebox.corpus import (  # noqa: E402
    CANONICAL_CLASSES,
    SyntheticSource,
    acquire_many,
    accept_all,
    curate,
    encode_png,
    load_split,
    split_dataset,
)
from purebox.corpus import LabeledSet  # noqa: E402
from purebox.zoo import set_deterministic  # noqa: E402

set_deterministic()


def png(value, size=8, seed=None):
    """Encoded PNG of a constant (or seeded random) RGB image."""
    if seed is not None:
        arr = np.random.default_rng(seed).random((3, size, size))
    else:
        arr = np.full((3, size, size), value)
    return encode_png(arr)


def blob_images(n_per_class, size=16, seed=0):
    """Two classes: a bright Gaussian blob in opposite corners plus pixel noise."""
    rng = np.random.default_rng(seed)
    v, u = np.mgrid[0:size, 0:size] / size
    images, labels = [], []
    for label, (cy, cx) in enumerate([(0.25, 0.25), (0.75, 0.75)]):
        blob = np.exp(-((v - cy) ** 2 + (u - cx) ** 2) / 0.02)
        for _ in range(n_per_class):
            img = 0.3 + 0.5 * blob[None] + rng.normal(0, 0.1, (3, size, size))
            images.append(np.clip(img, 0, 1))
            labels.append(label)
    order = rng.permutation(len(labels))
    return LabeledSet(torch.tensor(np.array(images)[order], dtype=torch.float32),
                      torch.tensor(labels)[order], [f"b{seed}_{i}" for i in order])


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """4 synthetic classes at 16x16: 60 train / 20 val / 20 eval each."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    classes = CANONICAL_CLASSES[:4]
    manifest = acquire_many(classes, SyntheticSource(100, 16, amplitude=0.25, noise=0.05), 100, store_root=root)
    manifest = split_dataset(curate(manifest, accept_all(manifest)), 60, 20, seed=0)
    splits = {s: load_split(manifest, root, classes, s, 16) for s in ("train", "val", "eval")}
    return manifest, root, classes, splits


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)


ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one verdict line per acceptance criterion for the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
