"""Experiment config files (YAML) and their validation.

One file describes one run. Shared keys build the per-seed
:class:`~sparse_evo.lineage.PruneConfig`; family-specific options live in
a sub-block named after the family. See ``configs/`` for one annotated
example per family.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from ..errors import ConfigError
from ..lineage import PruneConfig
from ..pruning import BASELINES, HEURISTICS

FAMILIES = ("prune", "baselines", "transfer", "connect", "project")
BASELINE_KINDS = BASELINES + ("permuted_weights",)

TRANSFER_DEFAULTS = {"source": None, "heuristic": "snr", "algo": "gd", "G": None, "N": None,
                     "hp": {}, "task": None, "network": None, "sigma_init": None, "use_init": True,
                     "iterations": None, "baselines": ["random_global"]}
CONNECT_DEFAULTS = {"source": None, "heuristic": "snr", "iterations": None, "grid_size": 25,
                    "metric": "accuracy", "es_pairs": True, "gd_twins": True, "gd_G": 1000,
                    "gd_hp": {}, "data_seeds": [101, 202]}
PROJECT_DEFAULTS = {"source": None, "heuristic": "snr", "iterations": None, "xi_steps": 21,
                    "dir_seeds": [0, 1, 2], "grid_steps": 51, "grid_seeds": [10, 11],
                    "compare_gd": False, "gd_G": 1000, "gd_hp": {}}
FAMILY_DEFAULTS = {"transfer": TRANSFER_DEFAULTS, "connect": CONNECT_DEFAULTS, "project": PROJECT_DEFAULTS}

_SHARED = ("algo", "task", "network", "p", "T", "G", "N", "init_scheme", "sigma_init", "hp", "prune_biases")


@dataclass
class ExperimentConfig:
    experiment: str
    algo: str = "snes"
    task: dict = field(default_factory=lambda: {"kind": "sphere"})
    network: dict = field(default_factory=lambda: {"kind": "mlp", "layer_dims": [2, 3, 1]})
    p: float = 0.2
    T: int = 3
    G: int = 50
    N: int = 32
    init_scheme: str = "lecun_normal"
    sigma_init: float = 0.05
    hp: dict = field(default_factory=dict)
    prune_biases: bool = True
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    heuristics: list = field(default_factory=lambda: ["snr", "final_magnitude"])
    baselines: list = field(default_factory=lambda: list(BASELINE_KINDS))
    baseline_reference: str = "final_magnitude"
    baseline_iterations: list | None = None
    options: dict = field(default_factory=dict)  # family block (transfer/connect/project)
    threads: int = 1

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.experiment not in FAMILIES:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {FAMILIES}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        for s in self.seeds:
            if not isinstance(s, int) or s < 0 or s >= 2**64:
                raise ConfigError(f"seed {s!r} is not an unsigned 64-bit integer")
        for h in self.heuristics:
            if h not in HEURISTICS:
                raise ConfigError(f"unknown heuristic {h!r}")
        for b in self.baselines:
            if b not in BASELINE_KINDS:
                raise ConfigError(f"unknown baseline {b!r}; expected one of {BASELINE_KINDS}")
        if self.experiment == "baselines" and self.baseline_reference not in self.heuristics:
            raise ConfigError("baseline_reference must be one of the configured heuristics")
        if int(self.threads) < 1:
            raise ConfigError("threads must be at least 1")
        if self.experiment in FAMILY_DEFAULTS:
            defaults = FAMILY_DEFAULTS[self.experiment]
            unknown = set(self.options) - set(defaults)
            if unknown:
                raise ConfigError(f"unknown {self.experiment} options: {sorted(unknown)}")
            self.options = {**defaults, **self.options}
            if not self.options["source"]:
                raise ConfigError(f"{self.experiment} needs a source artifact directory")
        if self.experiment in ("prune", "baselines"):
            for h in self.heuristics:
                self.prune_config(self.seeds[0], h)

    def prune_config(self, seed: int, heuristic: str) -> PruneConfig:
        return PruneConfig(**{k: getattr(self, k) for k in _SHARED}, heuristic=heuristic,
                           seed=seed, threads=int(self.threads))

    def to_dict(self) -> dict:
        return json.loads(json.dumps(asdict(self)))

    def config_hash(self) -> str:
        """Hash of the experiment definition; seeds and thread count excluded."""
        d = self.to_dict()
        d.pop("seeds")
        d.pop("threads")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]


def parse_config(doc: dict) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    doc = dict(doc)
    if "experiment" not in doc:
        raise ConfigError("config needs an 'experiment' key")
    fam = doc["experiment"]
    options = doc.pop(fam, None) if fam in FAMILY_DEFAULTS else None
    known = set(ExperimentConfig.__dataclass_fields__) - {"options"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**doc, options=options or {})


def load_config(path, seed: int | None = None, threads: int | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    if isinstance(doc, dict):
        if seed is not None:
            doc["seeds"] = [seed]
        if threads is not None:
            doc["threads"] = threads
    return parse_config(doc)
