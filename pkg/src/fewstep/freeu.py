"""Training-free backbone/skip feature decoration.

FFT convention: ``numpy.fft.fft2`` (unnormalized forward, ``1/n^2`` inverse)
with DC at bin (0, 0). A bin's radius is ``hypot(fx, fy) / 0.5`` where
``fx, fy = numpy.fft.fftfreq(n)``; this equals the centered distance after
``fftshift`` divided by the Nyquist frequency.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import DecorationError
from .oracle_models import DenoiserModel

__all__ = [
    "FreeUParams",
    "RECOMMENDED_FREEU",
    "normalized_radius",
    "lowpass_mask",
    "spectral_lowpass_scale",
    "freeu_apply",
    "FreeUModel",
    "decorate",
]


@dataclass(frozen=True)
class FreeUParams:
    b1: float = 1.0
    b2: float = 1.0
    s1: float = 1.0
    s2: float = 1.0
    radius_threshold: float = 0.25
    t_aug: int = 0

    def __post_init__(self):
        if not (self.b1 > 0 and self.b2 > 0):
            raise ValueError("backbone scales must be positive")
        if not (self.s1 >= 0 and self.s2 >= 0):
            raise ValueError("skip scales must be non-negative")
        if not 0.0 < self.radius_threshold <= 1.0:
            raise ValueError("radius_threshold must lie in (0, 1]")
        if int(self.t_aug) != self.t_aug or self.t_aug < 0:
            raise ValueError("t_aug must be a non-negative integer")

    def to_dict(self):
        return asdict(self)


RECOMMENDED_FREEU = FreeUParams(b1=1.1, b2=1.1, s1=0.9, s2=0.2)


def normalized_radius(n: int) -> np.ndarray:
    f = np.fft.fftfreq(n)
    return np.hypot(f[:, None], f[None, :]) / 0.5


def lowpass_mask(n: int, radius_threshold: float) -> np.ndarray:
    return normalized_radius(n) <= radius_threshold


def _check_grid(feature):
    feature = np.asarray(feature, dtype=np.float64)
    if feature.ndim < 2 or feature.shape[-1] != feature.shape[-2]:
        raise ValueError(f"expected square trailing grid, got {feature.shape}")
    n = feature.shape[-1]
    if n & (n - 1):
        raise ValueError("grid size must be a power of two")
    return feature, n


def spectral_lowpass_scale(feature, s: float, radius_threshold: float = 0.25) -> np.ndarray:
    """Multiply Fourier bins with normalized radius <= ``radius_threshold`` by ``s``."""
    feature, n = _check_grid(feature)
    if s == 1.0:
        return feature.copy()
    spec = np.fft.fft2(feature)
    spec = np.where(lowpass_mask(n, radius_threshold), s * spec, spec)
    return np.fft.ifft2(spec).real


def freeu_apply(backbone, skip, level: int, params: FreeUParams):
    """Scale the backbone by ``b_level`` and the skip's low band by ``s_level``.

    Levels above 2 pass through unchanged.
    """
    if int(level) != level or level < 1:
        raise ValueError(f"invalid skip level {level!r}")
    if level > 2:
        return np.asarray(backbone), np.asarray(skip)
    b, s = (params.b1, params.s1) if level == 1 else (params.b2, params.s2)
    return b * np.asarray(backbone, dtype=np.float64), spectral_lowpass_scale(
        skip, s, params.radius_threshold
    )


class FreeUModel(DenoiserModel):
    """Wraps a model exposing ``features``/``combine``; the wrapped model is left untouched.

    The grid oracle has a single skip connection, which takes the level-1
    constants.
    """

    level = 1

    def __init__(self, model: DenoiserModel, params: FreeUParams):
        self.base = model
        self.params = params
        self.event_shape = model.event_shape
        self.model_id = f"{model.model_id}+freeu"

    def features(self, x, level, condition=None):
        backbone, skip = self.base.features(x, level, condition)
        return freeu_apply(backbone, skip, self.level, self.params)

    def combine(self, backbone, skip):
        return self.base.combine(backbone, skip)

    def denoise(self, x, level, condition=None):
        return self.combine(*self.features(x, level, condition))


def decorate(model: DenoiserModel, params: FreeUParams) -> DenoiserModel:
    if not (hasattr(model, "features") and hasattr(model, "combine")):
        raise DecorationError(
            f"{type(model).__name__} exposes no backbone/skip decomposition to decorate"
        )
    return FreeUModel(model, params)
