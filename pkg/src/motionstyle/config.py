"""Model and loss hyperparameters shared by training and the CLI."""

import math
from dataclasses import dataclass, field, asdict

from .errors import ConfigError


@dataclass
class LossWeights:
    """Balancing factors for the similarity, energy, and style losses."""

    nu_sim: float = 0.1
    nu_eng: float = 0.5
    nu_sty: float = 0.1

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value) or value < 0:
                raise ConfigError(f"{name} must be finite and >= 0, got {value}")


@dataclass
class ModelConfig:
    """Architecture and schedule hyperparameters.

    Defaults are the full-scale settings (channels 512, 23 canonical
    joints) except the diffusion step count, which defaults to the
    desk-scale 100; set diffusion_steps=1000 for the full-scale schedule.
    """

    channels: int = 512
    encoder_layers: int = 4
    decoder_layers: int = 4
    diffusion_layers: int = 8
    heads: int = 4
    window: int = 8
    window_stride: int = 4
    diffusion_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    adain_eps: float = 1e-5
    full_sequence_attention: bool = False
    decoder_positional_encoding: bool = False
    loss_weights: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        if isinstance(self.loss_weights, dict):
            self.loss_weights = LossWeights(**self.loss_weights)
        if self.channels % self.heads != 0:
            raise ConfigError(
                f"channels ({self.channels}) must be divisible by heads ({self.heads})"
            )
        for name in ("channels", "encoder_layers", "decoder_layers",
                     "diffusion_layers", "heads", "window", "window_stride",
                     "diffusion_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 0 < self.beta_start <= self.beta_end < 1:
            raise ConfigError(
                f"need 0 < beta_start <= beta_end < 1, got "
                f"[{self.beta_start}, {self.beta_end}]"
            )
        if self.adain_eps <= 0:
            raise ConfigError("adain_eps must be positive")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)
