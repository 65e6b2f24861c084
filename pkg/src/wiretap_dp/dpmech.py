"""Quantile clipping, sensitivity and the Laplace mechanism."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

LOWER_Q = 0.005
UPPER_Q = 0.995


@dataclass(frozen=True)
class ClipBounds:
    a: float
    b: float

    def __post_init__(self):
        if not self.a <= self.b:
            raise ValueError(f"clip bounds out of order: a={self.a}, b={self.b}")


@dataclass(frozen=True)
class PrivacyMechanism:
    sensitivity: float
    epsilon: float
    n: int

    def __post_init__(self):
        if self.sensitivity < 0:
            raise ValueError("sensitivity must be non-negative")
        if not self.epsilon > 0:
            raise ValueError("privacy budget must be positive")

    @property
    def scale(self) -> float:
        return self.sensitivity / self.epsilon

    @classmethod
    def from_bounds(cls, bounds: ClipBounds, n: int, epsilon: float) -> "PrivacyMechanism":
        return cls(sensitivity(bounds, n), epsilon, n)

    def with_epsilon(self, epsilon: float) -> "PrivacyMechanism":
        return PrivacyMechanism(self.sensitivity, epsilon, self.n)


def fit_clip_bounds(latents) -> ClipBounds:
    """0.5% and 99.5% quantiles over every latent element of the dataset.

    Uses linear interpolation between order statistics.
    """
    if isinstance(latents, np.ndarray):
        flat = latents.reshape(-1)
    else:
        parts = [np.asarray(z, dtype=np.float64).reshape(-1) for z in latents]
        flat = np.concatenate(parts) if parts else np.empty(0)
    if flat.size == 0:
        raise ValueError("cannot fit clipping bounds on an empty dataset")
    if flat.size < 200:
        raise ValueError(f"need at least 200 latent elements to fit quantiles, got {flat.size}")
    a, b = np.quantile(flat.astype(np.float64), [LOWER_Q, UPPER_Q], method="linear")
    return ClipBounds(float(a), float(b))


def clip(codes: np.ndarray, bounds: ClipBounds) -> np.ndarray:
    return np.clip(codes, bounds.a, bounds.b)


def sensitivity(bounds: ClipBounds, n: int) -> float:
    """L2 distance between all-b and all-a vectors of length ``n``."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return (bounds.b - bounds.a) * math.sqrt(n)


def laplace_noise(shape, scale: float, rng: np.random.Generator) -> np.ndarray:
    """Laplace(0, scale) samples by inverse CDF."""
    u = rng.random(shape) - 0.5
    mag = np.minimum(np.abs(u), 0.5 - 2.0**-54)
    return -scale * np.sign(u) * np.log1p(-2.0 * mag)


def laplace_perturb(private: np.ndarray, mech: PrivacyMechanism, rng: np.random.Generator) -> np.ndarray:
    if not math.isfinite(mech.scale):
        raise ValueError("mechanism scale must be finite")
    private = np.asarray(private, dtype=np.float64)
    return private + laplace_noise(private.shape, mech.scale, rng)
