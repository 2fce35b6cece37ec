"""The iterative pruning loop and on-disk ticket lineages.

Each iteration ``t`` restarts from the original initialisation restricted
to the current mask (``m_t * theta0``, and ``m_t * sigma0`` for ES),
trains or evolves the surviving weights, records the final statistics
and test metric, scores the survivors and prunes a fraction ``p`` of them
globally.

A persisted lineage is a directory::

    lineage.json        config, hash, masks (run-length encoded), metrics
    theta0.bin          original initialisation, little-endian float64
    thetaF_<t>.bin      final mean / trained weights of iteration t
    sigmaF_<t>.bin      final search standard deviations (ES only)
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import es as es_engine
from .errors import ConfigError, LineageExhausted
from .gd import gd_hp, gd_train
from .net import INIT_SCHEMES, NetworkSpec, init_params, param_layout
from .pruning import HEURISTICS, density, prune_step, score_weights
from .rng import stream
from .tasks import make_task

log = logging.getLogger(__name__)

TRAINERS = es_engine.ALGOS + ("gd",)
FORMAT_VERSION = 1


@dataclass
class PruneConfig:
    algo: str = "snes"
    task: dict = field(default_factory=lambda: {"kind": "sphere"})
    network: dict = field(default_factory=lambda: {"kind": "mlp", "layer_dims": [2, 3, 1]})
    p: float = 0.2
    T: int = 1
    G: int = 50  # ES generations, or GD steps
    N: int = 32
    heuristic: str = "snr"
    seed: int = 0
    init_scheme: str = "lecun_normal"
    sigma_init: float = 0.05
    hp: dict = field(default_factory=dict)
    prune_biases: bool = True
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.algo not in TRAINERS:
            raise ConfigError(f"unknown trainer {self.algo!r}; expected one of {TRAINERS}")
        if not 0 < float(self.p) < 1:
            raise ConfigError(f"p must lie in (0, 1), got {self.p}")
        if int(self.T) < 1:
            raise ConfigError("T must be at least 1")
        if int(self.G) < 1:
            raise ConfigError("G must be at least 1")
        if self.heuristic not in HEURISTICS:
            raise ConfigError(f"unknown heuristic {self.heuristic!r}")
        if self.algo == "gd" and self.heuristic != "final_magnitude":
            raise ConfigError("GD lineages can only prune by final_magnitude")
        if self.init_scheme not in INIT_SCHEMES:
            raise ConfigError(f"unknown init scheme {self.init_scheme!r}")
        if self.algo == "gd":
            gd_hp(self.hp)
        else:
            es_engine.strategy_hp(self.algo, self.hp)
            if int(self.N) < 2:
                raise ConfigError("population size must be at least 2")
            if float(self.sigma_init) <= 0:
                raise ConfigError("sigma_init must be positive")
        self.spec  # validates the network block

    @property
    def spec(self) -> NetworkSpec:
        return NetworkSpec.from_dict(self.network)

    def build_task(self):
        return make_task(**self.task)

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def config_hash(self) -> str:
        """Hash of everything that defines the experiment except seed and thread count."""
        d = self.to_dict()
        d.pop("seed")
        d.pop("threads")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class IterationRecord:
    t: int
    mask: np.ndarray
    theta_f: np.ndarray
    sigma_f: np.ndarray | None
    metric: float
    threshold: float | None = None
    best_fitness: float | None = None
    final_loss: float | None = None


@dataclass
class TicketLineage:
    config: PruneConfig
    theta0: np.ndarray
    sigma0: np.ndarray | None
    iterations: list[IterationRecord] = field(default_factory=list)
    next_mask: np.ndarray | None = None
    complete: bool = False

    @property
    def spec(self) -> NetworkSpec:
        return self.config.spec

    @property
    def p(self) -> float:
        return self.config.p

    @property
    def pruning_mode(self) -> str:
        return self.config.heuristic

    @property
    def masks(self) -> list[np.ndarray]:
        out = [it.mask for it in self.iterations]
        if self.next_mask is not None:
            out.append(self.next_mask)
        return out


def prunable_flags(spec: NetworkSpec, prune_biases: bool) -> np.ndarray | None:
    if prune_biases:
        return None
    flags = np.ones(spec.num_params, dtype=bool)
    for e in param_layout(spec):
        if e.kind == "bias":
            flags[e.slice] = False
    return flags


def train_ticket(config: PruneConfig, task, mask, init, t: int, data_seed: int | None = None):
    """Train one (mask, init) pair with the configured trainer.

    Returns ``(theta_f, sigma_f, metric, extras)``; ``sigma_f`` is None
    for GD. Randomness comes from stream ``es``/``data`` counter ``t`` of
    the config seed, or of ``data_seed`` when given.
    """
    spec = config.spec
    m = np.asarray(mask, dtype=np.float64)
    seed = config.seed if data_seed is None else data_seed
    if config.algo == "gd":
        rec = gd_train(spec, init, m, task, int(config.G), config.hp, rng=stream(seed, "data", t))
        theta_f, sigma_f = rec.final_params, None
        extras = {"final_loss": float(rec.loss_history[-1])}
    else:
        state0 = es_engine.init_state(config.algo, init, config.sigma_init, m)
        evolved = es_engine.evolve(config.algo, state0, m, task, int(config.G), int(config.N),
                                   stream(seed, "es", t), spec=spec, hp=config.hp,
                                   threads=int(config.threads))
        theta_f, sigma_f = evolved.final.mean, evolved.final.sigma
        extras = {"best_fitness": float(evolved.fitness_history["best_so_far"][-1])}
    metric = float(task.test_metric(spec, theta_f, m))
    return theta_f, sigma_f, metric, extras


def iterative_prune(config: PruneConfig, out_dir=None, task=None, theta0=None) -> TicketLineage:
    """Run ``T`` train-score-prune rounds, always restarting from ``theta0``."""
    spec = config.spec
    task = task if task is not None else config.build_task()
    task.check_spec(spec, spec.num_params)
    if theta0 is None:
        theta0 = init_params(spec, config.init_scheme, config.seed)
    theta0 = np.asarray(theta0, dtype=np.float64)
    sigma0 = None if config.algo == "gd" else np.full(theta0.shape, float(config.sigma_init))
    lineage = TicketLineage(config=config, theta0=theta0, sigma0=sigma0)
    flags = prunable_flags(spec, config.prune_biases)
    mask = np.ones(theta0.shape, dtype=bool)
    for t in range(int(config.T)):
        init_t = mask * theta0
        theta_f, sigma_f, metric, extras = train_ticket(config, task, mask, init_t, t)
        rec = IterationRecord(t=t, mask=mask, theta_f=theta_f, sigma_f=sigma_f, metric=metric, **extras)
        lineage.iterations.append(rec)
        log.info("iteration %d density %.4f metric %.4f", t, density(mask), metric)
        scores = score_weights(config.heuristic, theta0, theta_f, sigma_f, mask)
        try:
            mask, rec.threshold = prune_step(scores, mask, config.p, flags)
        except LineageExhausted:
            if out_dir is not None:
                save_lineage(lineage, out_dir)
            raise
        lineage.next_mask = mask
        if out_dir is not None:
            save_lineage(lineage, out_dir)
    lineage.complete = True
    if out_dir is not None:
        save_lineage(lineage, out_dir)
    return lineage


# -- persistence -------------------------------------------------------------

def encode_mask(mask) -> str:
    """Run-length encoding ``"<first bit>:<run>,<run>,..."`` with alternating bits."""
    bits = np.asarray(mask, dtype=np.int8)
    if bits.size == 0:
        return "0:"
    change = np.flatnonzero(np.diff(bits)) + 1
    edges = np.concatenate([[0], change, [bits.size]])
    return f"{int(bits[0])}:" + ",".join(str(int(r)) for r in np.diff(edges))


def decode_mask(code: str) -> np.ndarray:
    first, _, runs = code.partition(":")
    if not runs:
        return np.zeros(0, dtype=bool)
    lengths = [int(r) for r in runs.split(",")]
    values = (np.arange(len(lengths)) + int(first)) % 2
    return np.repeat(values.astype(bool), lengths)


def _write_bin(path: Path, arr):
    np.asarray(arr, dtype="<f8").tofile(path)


def _read_bin(path: Path) -> np.ndarray:
    return np.fromfile(path, dtype="<f8").astype(np.float64)


def _num(x):
    if x is None or not np.isfinite(x):
        return None
    return float(x)


def save_lineage(lineage: TicketLineage, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    _write_bin(d / "theta0.bin", lineage.theta0)
    iters = []
    for it in lineage.iterations:
        _write_bin(d / f"thetaF_{it.t}.bin", it.theta_f)
        entry = {
            "t": it.t,
            "survivors": int(np.sum(it.mask)),
            "density": density(it.mask),
            "metric": _num(it.metric),
            "threshold": _num(it.threshold),
            "best_fitness": _num(it.best_fitness),
            "final_loss": _num(it.final_loss),
            "mask": encode_mask(it.mask),
        }
        if it.sigma_f is not None:
            _write_bin(d / f"sigmaF_{it.t}.bin", it.sigma_f)
        iters.append(entry)
    doc = {
        "format": FORMAT_VERSION,
        "config": {k: v for k, v in lineage.config.to_dict().items() if k != "threads"},
        "config_hash": lineage.config.config_hash(),
        "num_params": int(lineage.theta0.size),
        "sigma0": None if lineage.sigma0 is None else float(lineage.config.sigma_init),
        "complete": lineage.complete,
        "iterations": iters,
        "next_mask": None if lineage.next_mask is None else encode_mask(lineage.next_mask),
        "next_survivors": None if lineage.next_mask is None else int(np.sum(lineage.next_mask)),
    }
    (d / "lineage.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return d


def load_lineage(directory) -> TicketLineage:
    d = Path(directory)
    path = d / "lineage.json"
    if not path.exists():
        raise ConfigError(f"no lineage at {d}")
    doc = json.loads(path.read_text())
    config = PruneConfig(**doc["config"])
    theta0 = _read_bin(d / "theta0.bin")
    sigma0 = None if doc["sigma0"] is None else np.full(theta0.shape, doc["sigma0"])
    lineage = TicketLineage(config=config, theta0=theta0, sigma0=sigma0, complete=doc["complete"])
    for e in doc["iterations"]:
        t = e["t"]
        sig = d / f"sigmaF_{t}.bin"
        lineage.iterations.append(IterationRecord(
            t=t, mask=decode_mask(e["mask"]), theta_f=_read_bin(d / f"thetaF_{t}.bin"),
            sigma_f=_read_bin(sig) if sig.exists() else None,
            metric=np.nan if e["metric"] is None else e["metric"],
            threshold=e["threshold"], best_fitness=e["best_fitness"], final_loss=e["final_loss"]))
    if doc["next_mask"] is not None:
        lineage.next_mask = decode_mask(doc["next_mask"])
    return lineage
