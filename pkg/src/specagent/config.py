"""Run configuration: one declarative file covers every tunable."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, asdict
from pathlib import Path

import yaml

from .environment import LatencyModel, latency_from_config

MODES = ("speculative", "baseline")


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    mode: str = "speculative"
    seed: int = 0
    rate_min: float = 100.0          # tokens/second sampling bounds
    rate_max: float = 200.0
    rate: float | None = None        # explicit per-session rate (overrides sampling)
    increment_words: int = 6         # words per streamed query update
    words_per_second: float = 2.5    # synthetic timing for plain-text transcripts
    tool_latency: dict = field(default_factory=lambda: {"kind": "uniform", "low": 0.5, "high": 1.0})
    error_rate: float = 0.10         # fraction of synthesized samples given a bad call to fix
    match_threshold: float = 0.8     # alignment similarity threshold
    max_errors: int = 5
    max_total_tokens: int = 8192
    think_cost: int = 60             # tokens charged per scripted reasoning step
    registry: str = "builtin"        # or a path to a tool manifest

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}")
        if self.rate_min <= 0 or self.rate_max < self.rate_min:
            raise ConfigError("rate bounds must satisfy 0 < rate_min <= rate_max")
        if self.increment_words < 1:
            raise ConfigError("increment_words must be >= 1")

    def latency_model(self) -> LatencyModel:
        return latency_from_config(self.tool_latency)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        import json

        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True).encode()
        ).hexdigest()[:12]


def load_config(path: str | Path | None, **overrides) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigError(f"cannot load config {path}: {e}") from e
    data.update({k: v for k, v in overrides.items() if v is not None})
    known = RunConfig.__dataclass_fields__
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(**data)


def derive_seed(*parts) -> int:
    """Stable sub-seed derivation, independent of hash randomization."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big")
