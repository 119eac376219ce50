"""Run configuration and its flat ``key=value`` file format.

Lines are ``key = value``; ``#`` starts a comment. Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # encoder geometry
    image_size: int = 32
    channels: int = 3
    patch: int = 8
    dim: int = 64
    depth: int = 2
    heads: int = 4
    # token reallocation / hypergraph
    num_tokens: int = 4
    tau: float = 0.5
    chi_depth: int = 1
    # masks
    perturb_p: float = 0.1
    rho: float = 0.5
    # objectives
    margin: float = 0.3
    label_smooth: float = 0.1
    # optimisation
    lr: float = 1e-3
    lr_final: float = 1e-4
    steps: int = 300
    ids_per_batch: int = 4
    samples_per_id: int = 4
    seed: int = 0
    eval_every: int = 50
    save_every: int = 0
    precision: str = "float32"
    metric: str = "euclidean"
    # ablation switches
    sfm_on: bool = True
    str_on: bool = True
    chi_on: bool = True
    # synthetic data (gen-data)
    num_ids: int = 8
    per_id: int = 16
    clutter: float = 0.5
    text_noise: float = 0.05

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.dim % self.heads:
            raise ConfigError(f"dim={self.dim} not divisible by heads={self.heads}")
        if self.image_size % self.patch:
            raise ConfigError(f"image_size={self.image_size} not divisible by patch={self.patch}")
        if self.chi_on and not self.str_on:
            raise ConfigError("chi_on requires str_on (the hypergraph runs over reallocated tokens)")
        if self.num_tokens < 0:
            raise ConfigError("num_tokens must be >= 0")
        if not -1.0 <= self.tau <= 1.0:
            raise ConfigError(f"tau={self.tau} outside [-1, 1]")
        if not 0.0 <= self.perturb_p <= 1.0:
            raise ConfigError(f"perturb_p={self.perturb_p} outside [0, 1]")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError(f"rho={self.rho} outside [0, 1]")
        if self.ids_per_batch < 2 or self.samples_per_id < 2:
            raise ConfigError("batches need >= 2 identities with >= 2 samples each")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if self.metric not in ("euclidean", "cosine"):
            raise ConfigError(f"metric must be euclidean or cosine, got {self.metric!r}")
        if self.steps < 0:
            raise ConfigError("steps must be >= 0")

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch) ** 2

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**{k: _coerce(known[k], v) for k, v in values.items()})

    def dumps(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.to_dict().items())


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return repr(value) if isinstance(value, float) else str(value)


def _coerce(field: dataclasses.Field, value):
    kind = field.type if isinstance(field.type, str) else field.type.__name__
    if not isinstance(value, str):
        return value
    text = value.strip()
    try:
        if kind == "bool":
            lowered = text.lower()
            if lowered in ("true", "1", "yes", "on"):
                return True
            if lowered in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"{field.name}: cannot parse {text!r} as {kind}") from None
    return text


def parse_config(text: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key = key.strip()
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = value.strip()
    return values


def load_config(path=None, **overrides) -> RunConfig:
    values = parse_config(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(values)


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(cfg.dumps())


def micro_config(**overrides) -> RunConfig:
    """Tiny geometry for finite-difference gradient checks (D=8, N=4, K=2, depth=1)."""
    base = dict(image_size=8, patch=4, channels=3, dim=8, depth=1, heads=2, num_tokens=2,
                ids_per_batch=2, samples_per_id=2, perturb_p=0.0, precision="float64",
                num_ids=2, per_id=4, text_noise=0.05)
    base.update(overrides)
    return RunConfig(**base)
