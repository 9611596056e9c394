"""Pipeline configuration: nested JSON sections merged over defaults."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict
from pathlib import Path
from typing import Any, Optional

from .fixture import FixtureSpec
from .lambdamart import TrainConfig

DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "paths": {
        "corpus": None,
        "sessions": None,
        "judgments": None,
        "embeddings": None,
        "positions": None,
        "stopwords": None,
        "output_dir": "sessionrank-out",
    },
    "fixture": {"seed": 0, "spec": asdict(FixtureSpec())},
    "index": {"spam_threshold": 70},
    "ql": {"mu": 3500.0},
    "bm25": {"k1": 1.2, "b": 0.75},
    "hlm": {"lambda": 0.15},
    "initial_ranker": {"alpha": 0.70, "k": 100, "rm_cutoff": 40},
    "positions": {
        "k": 20,
        "iters": 2000,
        "alpha": 0.5,
        "beta": 0.01,
        "lambda_psi": 0.5,
        "terms": 20,
        "label_weight": 2.0,
        "seed_weight": 1.0,
        "seed": None,
    },
    "matching": {"top": 2, "mode": "printed"},
    "relatedness": {"r": 1.0, "epochs": 5, "neg_ratio": 3, "seed": None},
    "features": {"lambda_hist": 0.70},
    "lambdamart": {**{k: v for k, v in asdict(TrainConfig()).items() if k != "seed"}, "n_splits": 10, "seed": None},
    "runs": {"ltr_base": ["general"], "ltr_sp": ["general", "related", "social"]},
    "compare": {"baseline": "current", "significance_vs": ["current", "aggregated", "initial", "ltr_base"]},
}

FIXTURE_FILES = {
    "corpus": "corpus.json",
    "sessions": "sessions.json",
    "judgments": "judgments.tsv",
    "embeddings": "embeddings.txt",
    "positions": "positions.json",
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        path = f"{where}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {path!r}")
        if isinstance(base[key], dict) and key != "runs":
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be an object")
            out[key] = _merge(base[key], value, path + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


class PipelineConfig:
    """Validated configuration; sections are plain dicts."""

    def __init__(self, data: Optional[dict] = None, base_dir: Optional[Path] = None):
        self.data = _merge(DEFAULTS, data or {})
        self.base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
        self._validate()

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
        return cls(data, path.parent)

    def _validate(self) -> None:
        for section, key in (("initial_ranker", "alpha"), ("features", "lambda_hist")):
            v = self.data[section][key]
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{section}.{key} must lie in [0, 1], got {v}")
        if self.data["matching"]["mode"] not in ("printed", "sim_argmax"):
            raise ConfigError("matching.mode must be 'printed' or 'sim_argmax'")
        for name, blocks in self.data["runs"].items():
            if name in ("current", "aggregated", "initial"):
                raise ConfigError(f"run name {name!r} is reserved for a baseline")
            if not blocks or set(blocks) - {"general", "related", "social"}:
                raise ConfigError(f"run {name!r}: feature blocks must be drawn from general, related, social")
        TrainConfig(**{k: v for k, v in self.data["lambdamart"].items() if k not in ("n_splits", "seed")})
        FixtureSpec(**_spec_args(self.data["fixture"]["spec"]))

    def __getitem__(self, section: str):
        return self.data[section]

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    def digest(self, *sections: str) -> str:
        """Content hash of the named sections (all sections when none given)."""
        keys = sections or tuple(sorted(self.data))
        blob = json.dumps({k: self.data[k] for k in keys}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def output_dir(self) -> Path:
        return self._resolve(self.data["paths"]["output_dir"])

    def _resolve(self, p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else self.base_dir / path

    def input_path(self, name: str) -> Path:
        """Configured input file, or the generated fixture's file when unset."""
        p = self.data["paths"][name]
        if p is None:
            return self.output_dir / "fixture" / FIXTURE_FILES[name]
        return self._resolve(p)

    @property
    def uses_fixture(self) -> bool:
        return any(self.data["paths"][k] is None for k in FIXTURE_FILES)

    def stage_seed(self, stage: str, override: Optional[int] = None) -> int:
        """Per-stage seed derived from the global seed by a stable hash."""
        if override is not None:
            return int(override)
        h = hashlib.sha256(f"{self.data['seed']}:{stage}".encode()).digest()
        return int.from_bytes(h[:4], "big")


def _spec_args(spec: dict) -> dict:
    return {k: tuple(v) if isinstance(v, list) else v for k, v in spec.items()}


def fixture_spec(cfg: PipelineConfig) -> FixtureSpec:
    return FixtureSpec(**_spec_args(cfg["fixture"]["spec"]))


def train_config(cfg: PipelineConfig, seed: int) -> TrainConfig:
    lm = {k: v for k, v in cfg["lambdamart"].items() if k not in ("n_splits", "seed")}
    return TrainConfig(**lm, seed=seed)
