"""Model and training configuration, stored as flat ``key = value`` text."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # text
    max_query_len: int = 20
    max_doc_len: int = 4000
    max_field_len: int = 2000
    min_df: int = 2
    # encoder
    model_dim: int = 256
    ff_dim: int = 256
    heads: int = 32
    conv_window: int = 31
    conv_groups: int = 32
    layers: int = 2
    dropout: float = 0.2
    head_batch: int = 0  # heads per standard-attention chunk; 0 = all at once
    # scorer
    kernels: int = 10
    pool_window: int = 300
    pool_stride: int = 100
    top_windows: int = 3
    # training
    learning_rate: float = 1e-4
    batch_size: int = 16
    micro_batch: int = 0  # 0 = no accumulation
    steps: int = 1000
    checkpoint_every: int = 0
    seed: int = 0
    latent_channel: bool = True
    explicit_channel: bool = True

    def __post_init__(self) -> None:
        self.validate()

    @property
    def d_key(self) -> int:
        return self.model_dim // self.heads

    def validate(self) -> None:
        if self.model_dim % self.heads:
            raise ConfigError(f"model_dim {self.model_dim} not divisible by heads {self.heads}")
        if self.model_dim % self.conv_groups:
            raise ConfigError(
                f"model_dim {self.model_dim} not divisible by conv_groups {self.conv_groups}")
        if self.conv_window % 2 != 1:
            raise ConfigError(f"conv_window must be odd, got {self.conv_window}")
        if not self.pool_window >= self.pool_stride >= 1:
            raise ConfigError("need pool_window >= pool_stride >= 1")
        if self.kernels < 2:
            raise ConfigError("need at least 2 kernels")
        if not (self.latent_channel or self.explicit_channel):
            raise ConfigError("at least one matching channel must be enabled")

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes)

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name} = {v!r}" if isinstance(v, float) else f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "Config":
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            values[key] = _coerce(types[key], value, key)
        return cls(**values)

    @classmethod
    def load(cls, path: str | Path) -> "Config":
        return cls.loads(Path(path).read_text(encoding="utf-8"))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")


def _coerce(kind: str, value: str, key: str):
    try:
        if kind == "bool":
            if value.lower() in ("true", "1", "yes"):
                return True
            if value.lower() in ("false", "0", "no"):
                return False
            raise ValueError(value)
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return value
