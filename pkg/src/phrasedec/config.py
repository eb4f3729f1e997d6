"""Run configuration: a flat `key = value` text file, validated on load.

Lines starting with `#` are comments. List-valued keys (`models`, `seeds`)
take comma-separated values. Unknown keys are an error.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

from .model import MODEL_KINDS, ModelConfig
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    models: list = field(default_factory=lambda: ["PT-HRED"])
    seeds: list = field(default_factory=lambda: [0])
    # model
    d_hidden: int = 64
    d_emb: int = 32
    candidate_nonlinearity: str = "sigmoid"
    max_len: int = 30
    # optimisation
    gamma: float = 0.95
    lambda_gate: float = 1.0
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 250
    # simulated corpus
    n_users: int = 10
    train_per_user: int = 5
    test_per_user: int = 200
    data_seed: int = 0
    # evaluation
    n_samples: int = 5
    online_orders: int = 200
    # paths
    data_dir: str = "data"
    out_dir: str = "runs"

    def validate(self) -> "RunConfig":
        bad = [m for m in self.models if m not in MODEL_KINDS]
        if bad or not self.models:
            raise ConfigError(f"unknown model kinds {bad}; expected some of {list(MODEL_KINDS)}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.candidate_nonlinearity not in ("sigmoid", "tanh"):
            raise ConfigError("candidate_nonlinearity must be 'sigmoid' or 'tanh'")
        for k in ("d_hidden", "d_emb", "max_len", "n_users", "n_samples"):
            if getattr(self, k) < 1:
                raise ConfigError(f"{k} must be >= 1")
        for k in ("epochs", "train_per_user", "test_per_user", "online_orders"):
            if getattr(self, k) < 0:
                raise ConfigError(f"{k} must be >= 0")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError("gamma must lie in (0, 1]")
        if self.lambda_gate < 0 or self.lr <= 0:
            raise ConfigError("lambda_gate must be >= 0 and lr > 0")
        return self

    def model_config(self) -> ModelConfig:
        return ModelConfig(self.d_hidden, self.d_emb, self.candidate_nonlinearity, self.max_len)

    def train_config(self, model_kind: str, seed: int) -> TrainConfig:
        return TrainConfig(model_kind=model_kind, gamma=self.gamma, lambda_gate=self.lambda_gate,
                           lr=self.lr, epochs=self.epochs, seed=seed)

    def update(self, values: dict) -> "RunConfig":
        """Set fields from raw strings (or already-typed values)."""
        types = {f.name: f for f in fields(self)}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            setattr(self, key, _coerce(key, raw, getattr(self, key)))
        return self

    def dump(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {', '.join(map(str, v)) if isinstance(v, list) else v}")
        return "\n".join(lines) + "\n"


def _coerce(key: str, raw, current):
    if not isinstance(raw, str):
        return raw
    try:
        if isinstance(current, list):
            items = [x.strip() for x in raw.split(",") if x.strip()]
            return [int(x) for x in items] if key == "seeds" else items
        if isinstance(current, bool):
            return raw.strip().lower() in ("1", "true", "yes")
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw.strip()


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        cfg.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    if overrides:
        cfg.update(overrides)
    return cfg.validate()
