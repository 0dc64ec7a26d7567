"""Dataclass configs: architecture, training, corpus.

Every config serializes to/from plain dicts (JSON on disk) and is echoed
verbatim into run directories so reports are reproducible from their
config alone.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError


@dataclass
class FmtConfig:
    """Where the feature-map transformation applies and how it pools.

    The pooling chain at each resolution: repeat masked max-pool
    (5x5 kernel, stride 3) while the spatial size exceeds 10, then a
    masked adaptive average-pool down to ``pooled_size``.
    """

    resolutions: tuple = (16, 32, 64)
    pooled_size: int = 4

    def __post_init__(self):
        self.resolutions = tuple(self.resolutions)
        if not set(self.resolutions) <= {16, 32, 64}:
            raise ConfigError(f"fmt resolutions {self.resolutions} outside 16..64")
        if self.pooled_size != 4:
            raise ConfigError("pooled_size is fixed at 4")

    def chain(self, res: int):
        """Descriptor of the pooling stages applied at ``res``."""
        stages, size = [], res
        while size > 10:
            size = (size - 5) // 3 + 1
            stages.append(("max_pool", 5, 3, size))
        stages.append(("adaptive_avg", self.pooled_size))
        return stages


@dataclass
class ModelConfig:
    resolution: int = 64
    base_width: int = 16
    style_dim: int = 64
    n_styles: int = 4
    fmt: FmtConfig = field(default_factory=FmtConfig)
    dmi_resolutions: tuple = (16, 32)
    n_res_blocks: int = 2
    eps: float = 1e-5

    def __post_init__(self):
        if isinstance(self.fmt, dict):
            self.fmt = FmtConfig(**self.fmt)
        self.dmi_resolutions = tuple(self.dmi_resolutions)
        if self.resolution not in (32, 64):
            raise ConfigError(f"resolution {self.resolution} not in (32, 64)")


@dataclass
class LossWeights:
    adv: float = 1.0
    style: float = 1.0
    content: float = 1.0
    recon: float = 10.0
    grad: float = 1.0

    def __post_init__(self):
        vals = dataclasses.asdict(self)
        if any(v < 0 or v != v for v in vals.values()):
            raise ConfigError(f"loss weights must be nonnegative finite: {vals}")
        if self.adv <= 0:
            raise ConfigError("adversarial weight must be positive")


@dataclass
class TrainConfig:
    epochs: int = 15
    batch_size: int = 8
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weights: LossWeights = field(default_factory=LossWeights)
    dmi: bool = True
    fmt: bool = True
    idn: bool = True
    seed: int = 0
    checkpoint_every: int = 10
    encoder_epochs: int = 10
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        try:
            with open(path) as f:
                return cls.from_dict(json.load(f))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot parse train config {path}: {e}")


@dataclass
class StyleRecipe:
    """Procedural style: palette of RGB base colors in [0,1], a texture,
    and a contour rendering mode."""

    name: str
    palette: list
    texture: str = "flat"  # flat | noise | vgrad | stripes
    texture_param: float = 0.0
    contour_style: str = "sharp"  # sharp | soft

    def __post_init__(self):
        if self.texture not in ("flat", "noise", "vgrad", "stripes"):
            raise ConfigError(f"unknown texture {self.texture!r}")
        if self.contour_style not in ("sharp", "soft"):
            raise ConfigError(f"unknown contour style {self.contour_style!r}")
        if not self.palette:
            raise ConfigError("palette must be non-empty")


def default_styles():
    """Four recipes separable by channel-mean statistics."""
    # each palette is bimodal in luminance (light vs dark entries) so shape
    # contours always clear the edge extractor's threshold
    return [
        StyleRecipe("ember", palette=[[1.0, 0.72, 0.35], [0.35, 0.04, 0.02], [1.0, 0.9, 0.5]],
                    texture="flat", contour_style="sharp"),
        StyleRecipe("marine", palette=[[0.55, 0.85, 1.0], [0.02, 0.08, 0.35], [0.75, 0.85, 1.0]],
                    texture="vgrad", texture_param=0.25, contour_style="soft"),
        StyleRecipe("meadow", palette=[[0.6, 0.95, 0.45], [0.03, 0.25, 0.04], [0.85, 0.95, 0.4]],
                    texture="noise", texture_param=0.06, contour_style="sharp"),
        StyleRecipe("dusk", palette=[[0.95, 0.8, 0.9], [0.25, 0.04, 0.35], [1.0, 0.85, 0.2]],
                    texture="stripes", texture_param=6.0, contour_style="soft"),
    ]


@dataclass
class CorpusSpec:
    n_images: int = 512
    styles: list = field(default_factory=default_styles)
    resolution: int = 64
    seed: int = 0
    train_fraction: float = 0.9

    def __post_init__(self):
        self.styles = [StyleRecipe(**s) if isinstance(s, dict) else s for s in self.styles]
        if len(self.styles) < 2:
            raise ConfigError("corpus needs at least 2 styles")
        if self.resolution not in (32, 64):
            raise ConfigError(f"resolution {self.resolution} not in (32, 64)")
        if self.n_images < len(self.styles):
            raise ConfigError("fewer images than styles")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown corpus spec keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "CorpusSpec":
        try:
            with open(path) as f:
                return cls.from_dict(json.load(f))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot parse corpus spec {path}: {e}")
