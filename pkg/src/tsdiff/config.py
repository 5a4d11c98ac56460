"""Run configuration: model sizes, schedules, loss weights, solver and loop knobs.

The on-disk format is plain `key=value` lines ('#' starts a comment).
Unknown keys are rejected. CLI flags may override individual entries.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, asdict
from pathlib import Path

from .errors import ConfigError


@dataclass
class Config:
    # architecture
    hidden: int = 128            # width of encoder/decoder states and latents
    embed: int = 32              # per-dimension embedding width (and z width)
    attn_layers: int = 3         # self-attention layers in the encoder
    dim: int = 0                 # feature dimension D, filled from data at train time
    # diffusion
    diff_steps: int = 1000       # L
    beta_start: float = 1e-4
    beta_end: float = 0.02
    k_reg: int = 5               # forward steps of latent noising before decoding
    step_embed: int = 32         # sinusoidal embedding width for the step index
    diff_hidden: int = 0         # noise-net hidden width; 0 = same as hidden
    # losses
    w1: float = 0.4              # sequence NLL
    w2: float = 0.4              # diffusion
    w3: float = 0.1              # horizon
    w4: float = 0.1              # missingness
    delta: float = 0.05          # horizon margin
    # solver
    solver_step: float = 0.0     # 0 = auto: min(0.01*t_max, min gap / 4)
    # optimization
    lr: float = 1e-3
    batch_size: int = 8
    epochs: int = 100
    dropout: float = 0.1
    clip_norm: float = 5.0
    seed: int = 0
    checkpoint_every: int = 50
    # behavioral flags
    matched_logits_all_layers: bool = False  # use the final pooling form in every layer
    norm_mode: str = "embed"     # "embed" (per-token) | "tokens" (stats across observed tokens)
    horizon_sigma_is_variance: bool = True   # read the horizon spread as a variance

    def __post_init__(self):
        if self.hidden < 1 or self.embed < 1 or self.attn_layers < 1:
            raise ConfigError("hidden, embed and attn_layers must be >= 1")
        if self.diff_steps < 1:
            raise ConfigError("diff_steps must be >= 1")
        if not (0 < self.beta_start < self.beta_end < 1):
            raise ConfigError("need 0 < beta_start < beta_end < 1")
        if not (0 <= self.k_reg <= self.diff_steps):
            raise ConfigError("k_reg must be in [0, diff_steps]")
        if not (0 <= self.dropout < 1):
            raise ConfigError("dropout must be in [0, 1)")
        if self.norm_mode not in ("embed", "tokens"):
            raise ConfigError(f"unknown norm_mode {self.norm_mode!r}")
        if self.step_embed % 2 != 0:
            raise ConfigError("step_embed must be even")
        if self.diff_hidden < 0:
            raise ConfigError("diff_hidden must be >= 0")

    @property
    def noise_hidden(self) -> int:
        return self.diff_hidden if self.diff_hidden > 0 else self.hidden

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


_BOOL_WORDS = {"true": True, "false": False, "1": True, "0": False,
               "yes": True, "no": False}


def _coerce(name: str, text: str, target_type):
    text = text.strip()
    try:
        if target_type is bool:
            if text.lower() not in _BOOL_WORDS:
                raise ValueError(f"not a boolean: {text!r}")
            return _BOOL_WORDS[text.lower()]
        if target_type is int:
            return int(text)
        if target_type is float:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"config key {name!r}: {exc}") from exc


def parse_config_text(text: str, base: Config | None = None) -> Config:
    values = (base.to_dict() if base is not None else Config().to_dict())
    types = {f.name: f.type for f in fields(Config)}
    python_types = {"int": int, "float": float, "bool": bool, "str": str}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {raw!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in values:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        t = types[key]
        t = python_types.get(t, t) if isinstance(t, str) else t
        values[key] = _coerce(key, val, t)
    return Config.from_dict(values)


def load_config(path, base: Config | None = None) -> Config:
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(p.read_text(encoding="utf-8"), base=base)


def apply_overrides(cfg: Config, assignments: list[str]) -> Config:
    """Apply repeated `key=value` CLI overrides on top of a parsed config."""
    return parse_config_text("\n".join(assignments), base=cfg)


def config_to_text(cfg: Config) -> str:
    return "\n".join(f"{k}={v}" for k, v in cfg.to_dict().items()) + "\n"
