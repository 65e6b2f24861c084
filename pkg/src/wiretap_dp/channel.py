"""AWGN wiretap channel: power normalisation, complex pairing, noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diffcore import DimensionError


class DegenerateSignalError(ValueError):
    """Raised when an all-zero signal cannot be power normalised."""


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float
    P: float = 1.0

    def __post_init__(self):
        if not self.P > 0:
            raise ValueError("power constraint must be positive")

    @property
    def noise_var(self) -> float:
        """Noise variance per complex symbol, P / 10**(snr/10)."""
        if self.snr_db == float("inf"):
            return 0.0
        return self.P / 10.0 ** (self.snr_db / 10.0)


NOISELESS = ChannelConfig(float("inf"))


def power_factor(z: np.ndarray, P: float) -> np.ndarray:
    """Per-row factor sqrt(P * L / ||z||^2) over the last axis, keepdims."""
    z = np.asarray(z, dtype=np.float64)
    energy = np.sum(z * z, axis=-1, keepdims=True)
    if np.any(energy == 0):
        raise DegenerateSignalError("cannot normalise an all-zero signal")
    return np.sqrt(P * z.shape[-1] / energy)


def symbol_factor(z: np.ndarray, P: float) -> np.ndarray:
    """Per-row factor giving mean complex-symbol power ``P`` once the last axis
    is paired (zero-padded when odd), i.e. ``P / 2`` per real component."""
    z = np.asarray(z, dtype=np.float64)
    energy = np.sum(z * z, axis=-1, keepdims=True)
    if np.any(energy == 0):
        raise DegenerateSignalError("cannot normalise an all-zero signal")
    n_sym = (z.shape[-1] + 1) // 2
    return np.sqrt(P * n_sym / energy)


def normalize_power(z: np.ndarray, P: float = 1.0) -> np.ndarray:
    """Scale each row so its mean square equals ``P``."""
    return np.asarray(z, dtype=np.float64) * power_factor(z, P)


def pair_complex(z: np.ndarray) -> np.ndarray:
    """Symbol k is z[2k] + i z[2k+1] along the last axis."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] % 2:
        raise DimensionError(f"cannot pair odd length {z.shape[-1]} into complex symbols")
    return z[..., 0::2] + 1j * z[..., 1::2]


def unpair_complex(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s)
    out = np.empty(s.shape[:-1] + (2 * s.shape[-1],))
    out[..., 0::2] = s.real
    out[..., 1::2] = s.imag
    return out


def to_symbols(z: np.ndarray) -> np.ndarray:
    """Pair a real vector, zero-padding one element when the length is odd."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] % 2:
        z = np.concatenate([z, np.zeros(z.shape[:-1] + (1,))], axis=-1)
    return pair_complex(z)


def from_symbols(s: np.ndarray, length: int) -> np.ndarray:
    return unpair_complex(s)[..., :length]


def complex_noise(shape, noise_var: float, rng: np.random.Generator) -> np.ndarray:
    std = np.sqrt(noise_var / 2.0)
    re = rng.standard_normal(shape)
    im = rng.standard_normal(shape)
    return std * (re + 1j * im)


def transmit(symbols: np.ndarray, cfg: ChannelConfig, rng: np.random.Generator) -> np.ndarray:
    """Add circular Gaussian noise with total variance sigma^2 per symbol."""
    symbols = np.asarray(symbols)
    if cfg.noise_var == 0.0:
        return symbols.astype(np.complex128)
    return symbols + complex_noise(symbols.shape, cfg.noise_var, rng)
