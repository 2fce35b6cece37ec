"""Export the 5000-digit MNIST sample shipped inside ``mlxtend`` as IDX files.

The sample holds 500 real MNIST digits per class. It is split
deterministically into 400 training and 100 test digits per class and
written as ``<out>/mnist/{train,t10k}-{images-idx3,labels-idx1}-ubyte``.
"""

from __future__ import annotations

import gzip
import importlib.util
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .idx import write_idx

TEST_PER_CLASS = 100


def _mlxtend_csv() -> Path:
    spec = importlib.util.find_spec("mlxtend")
    if spec is None or spec.origin is None:
        raise ConfigError("mlxtend is not installed; `pip install mlxtend` provides the MNIST sample")
    path = Path(spec.origin).parent / "data" / "data" / "mnist_5k.csv.gz"
    if not path.exists():
        raise ConfigError(f"MNIST sample not found at {path}")
    return path


def prepare_mnist_subset(out_dir, seed: int = 0) -> Path:
    with gzip.open(_mlxtend_csv(), "rt") as fh:
        table = np.loadtxt(fh, delimiter=",", dtype=np.float64)
    images = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)
    rng = np.random.default_rng(seed)
    test_idx, train_idx = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        test_idx.append(idx[:TEST_PER_CLASS])
        train_idx.append(idx[TEST_PER_CLASS:])
    train_idx = rng.permutation(np.concatenate(train_idx))
    test_idx = rng.permutation(np.concatenate(test_idx))

    target = Path(out_dir) / "mnist"
    target.mkdir(parents=True, exist_ok=True)
    write_idx(target / "train-images-idx3-ubyte", images[train_idx])
    write_idx(target / "train-labels-idx1-ubyte", labels[train_idx])
    write_idx(target / "t10k-images-idx3-ubyte", images[test_idx])
    write_idx(target / "t10k-labels-idx1-ubyte", labels[test_idx])
    return target
