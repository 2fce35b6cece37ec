"""Image classification from IDX files.

Fitness of a candidate is the negated mean cross-entropy on one training
batch; all candidates of a generation share that batch. Test metrics use
the full held-out split.
"""

from __future__ import annotations

import functools
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..net import cross_entropy, forward
from ..rng import stream
from .idx import Dataset, load_idx

DATA_ENV = "SPARSE_EVO_DATA_DIR"
SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def resolve_data_dir(data_dir=None) -> Path:
    root = data_dir or os.environ.get(DATA_ENV)
    if not root:
        raise ConfigError(f"no data directory: set data_dir in the task config or ${DATA_ENV}")
    return Path(root)


def _find(directory: Path, stem: str) -> Path | None:
    for name in (stem, stem + ".gz"):
        if (directory / name).exists():
            return directory / name
    return None


@functools.lru_cache(maxsize=8)
def load_split(directory: str, split: str) -> Dataset:
    d = Path(directory)
    img, lab = (_find(d, s) for s in SPLIT_FILES[split])
    if img is None or lab is None:
        raise ConfigError(f"missing {split} split under {d}")
    return load_idx(img, lab, split=split)


def _downsample(images: np.ndarray, factor: int) -> np.ndarray:
    if factor == 1:
        return images
    n, h, w, c = images.shape
    h2, w2 = h // factor, w // factor
    x = images[:, : h2 * factor, : w2 * factor]
    return x.reshape(n, h2, factor, w2, factor, c).mean(axis=(2, 4))


@dataclass(frozen=True)
class ClassifyTask:
    dataset: str = "mnist"
    data_dir: str | None = None
    train_subset: int | None = 2000
    subset_seed: int = 0
    batch_size: int = 256
    downsample: int = 1
    kind = "classify"

    @functools.cached_property
    def _data(self):
        directory = str(resolve_data_dir(self.data_dir) / self.dataset)
        train = load_split(directory, "train")
        test = load_split(directory, "test")
        x_tr, y_tr = _downsample(train.images, self.downsample), train.labels
        if self.train_subset is not None and self.train_subset < len(y_tr):
            idx = np.sort(stream(self.subset_seed, "subset").permutation(len(y_tr))[: self.train_subset])
            x_tr, y_tr = x_tr[idx], y_tr[idx]
        return x_tr, y_tr, _downsample(test.images, self.downsample), test.labels

    def _inputs(self, spec, x):
        return x.reshape(x.shape[0], -1) if spec.kind == "mlp" else x

    @property
    def n_classes(self) -> int:
        return int(self._data[1].max()) + 1

    def check_spec(self, spec, dim: int):
        x_tr = self._data[0]
        n_in = int(np.prod(x_tr.shape[1:]))
        if spec is None:
            raise ConfigError("classification needs a network spec")
        if spec.n_inputs != n_in or (spec.kind == "cnn" and tuple(spec.input_shape) != x_tr.shape[1:]):
            raise ConfigError(f"network input {spec.example_shape} does not match images {x_tr.shape[1:]}")
        if spec.n_outputs != self.n_classes:
            raise ConfigError(f"network has {spec.n_outputs} outputs for {self.n_classes} classes")

    def train_data(self, spec):
        x, y = self._data[0], self._data[1]
        return self._inputs(spec, x), y

    def test_data(self, spec):
        x, y = self._data[2], self._data[3]
        return self._inputs(spec, x), y

    def draw_eval(self, rng):
        n = self._data[1].shape[0]
        return rng.choice(n, size=min(self.batch_size, n), replace=False)

    def fitness(self, spec, params, mask, ctx):
        x, y = self.train_data(spec)
        logits = forward(spec, np.atleast_2d(params), mask, x[ctx])
        return -cross_entropy(logits, y[ctx])

    def test_metric(self, spec, params, mask) -> float:
        x, y = self.test_data(spec)
        logits = forward(spec, params, mask, x)
        return float(np.mean(np.argmax(logits, axis=-1) == y))

    def test_loss(self, spec, params, mask) -> float:
        x, y = self.test_data(spec)
        return float(cross_entropy(forward(spec, params, mask, x), y))
