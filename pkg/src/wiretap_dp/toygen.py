"""Disentangled toy generator, GAN-style inversion and latent partitions.

The generator is affine per semantic block. Observation block ``h`` is

    x_h = A_shared[h] @ vec(shared codes) + A_local[h] @ vec(codes of group h) + bias_h

so perturbing a local group only moves its own block. Inversion is
gradient descent on the observation MSE, which is convex here.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffcore as dc
from .diffcore import DimensionError


class ConfigurationError(ValueError):
    """Raised when latent layouts and generator settings disagree."""


class InversionError(RuntimeError):
    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


@dataclass(frozen=True)
class PartitionSpec:
    K: int
    D: int
    shared_count: int
    private_indices: tuple[int, ...]

    def __post_init__(self):
        idx = tuple(sorted(int(i) for i in self.private_indices))
        object.__setattr__(self, "private_indices", idx)
        if self.K < 1 or self.D < 1 or not 0 <= self.shared_count <= self.K:
            raise ConfigurationError(f"bad layout K={self.K}, D={self.D}, shared={self.shared_count}")
        if len(set(idx)) != len(idx) or any(i < 0 or i >= self.K for i in idx):
            raise ConfigurationError(f"private indices {idx} out of range for K={self.K}")
        if not set(range(self.shared_count)) <= set(idx):
            raise ConfigurationError("shared codes must all be private")

    @property
    def common_indices(self) -> tuple[int, ...]:
        private = set(self.private_indices)
        return tuple(i for i in range(self.K) if i not in private)

    @property
    def m(self) -> int:
        return len(self.private_indices)

    @property
    def n_elements(self) -> int:
        return self.K * self.D


def split(codes: np.ndarray, spec: PartitionSpec) -> tuple[np.ndarray, np.ndarray]:
    """Rows at the private indices and the remaining rows, both ascending.

    ``codes`` has shape ``(..., K, D)``.
    """
    codes = np.asarray(codes, dtype=np.float64)
    if codes.shape[-2:] != (spec.K, spec.D):
        raise DimensionError(f"codes {codes.shape} do not match K={spec.K}, D={spec.D}")
    private = codes[..., list(spec.private_indices), :]
    common = codes[..., list(spec.common_indices), :]
    return private, common


def merge(private: np.ndarray, common: np.ndarray, spec: PartitionSpec) -> np.ndarray:
    private = np.asarray(private, dtype=np.float64)
    common = np.asarray(common, dtype=np.float64)
    if private.shape[-2:] != (spec.m, spec.D) or common.shape[-2:] != (spec.K - spec.m, spec.D):
        raise DimensionError(
            f"cannot merge private {private.shape} and common {common.shape} "
            f"for m={spec.m}, K={spec.K}, D={spec.D}"
        )
    batch = np.broadcast_shapes(private.shape[:-2], common.shape[:-2])
    out = np.empty(batch + (spec.K, spec.D))
    out[..., list(spec.private_indices), :] = private
    out[..., list(spec.common_indices), :] = common
    return out


@dataclass(frozen=True, eq=False)
class ToyGenerator:
    """Fixed random stand-in for a pre-trained disentangled generator."""

    K: int
    D: int
    M: int
    shared_count: int
    A_shared: np.ndarray  # (H, M/H, shared_count*D)
    A_local: np.ndarray  # (H, M/H, 2*D)
    bias: np.ndarray  # (M,)
    seed: int = 0

    @classmethod
    def create(cls, K=8, D=16, M=192, shared_count=2, seed=0) -> "ToyGenerator":
        if (K - shared_count) % 2 or K - shared_count < 2:
            raise ConfigurationError("local codes must come in shape/texture pairs")
        H = (K - shared_count) // 2
        if M % H:
            raise ConfigurationError(f"M={M} not divisible into H={H} blocks")
        rng = np.random.default_rng(seed)
        bs = M // H
        n_in = (shared_count + 2) * D
        A_shared = np.empty((H, bs, shared_count * D))
        A_local = np.empty((H, bs, 2 * D))
        for h in range(H):
            g = rng.standard_normal((max(bs, n_in), min(bs, n_in)))
            q, _ = np.linalg.qr(g)
            # orthonormal columns when the block is tall (A^T A = I per block),
            # orthonormal rows otherwise
            block = q if bs >= n_in else q.T
            A_shared[h] = block[:, : shared_count * D]
            A_local[h] = block[:, shared_count * D :]
        bias = 0.1 * rng.standard_normal(M)
        return cls(K, D, M, shared_count, A_shared, A_local, bias, seed)

    @property
    def H(self) -> int:
        return (self.K - self.shared_count) // 2

    @property
    def block_size(self) -> int:
        return self.M // self.H

    def group_rows(self, h: int) -> list[int]:
        start = self.shared_count + 2 * h
        return [start, start + 1]

    def matrix(self) -> np.ndarray:
        """Dense (M, K*D) map equivalent to the block structure."""
        A = np.zeros((self.M, self.K * self.D))
        sd = self.shared_count * self.D
        bs = self.block_size
        for h in range(self.H):
            rows = slice(h * bs, (h + 1) * bs)
            A[rows, :sd] = self.A_shared[h]
            start = self.group_rows(h)[0] * self.D
            A[rows, start : start + 2 * self.D] = self.A_local[h]
        return A

    def check(self, spec: PartitionSpec) -> None:
        if (spec.K, spec.D, spec.shared_count) != (self.K, self.D, self.shared_count):
            raise ConfigurationError(
                f"partition (K={spec.K}, D={spec.D}, shared={spec.shared_count}) does not match "
                f"generator (K={self.K}, D={self.D}, shared={self.shared_count})"
            )


def generate(codes: np.ndarray, gen: ToyGenerator, spec: PartitionSpec | None = None) -> np.ndarray:
    """Observation(s) for latent codes of shape ``(..., K, D)``."""
    if spec is not None:
        gen.check(spec)
    codes = np.asarray(codes, dtype=np.float64)
    if codes.shape[-2:] != (gen.K, gen.D):
        raise ConfigurationError(f"codes {codes.shape} do not match generator K={gen.K}, D={gen.D}")
    batch = codes.shape[:-2]
    flat = codes.reshape(batch + (gen.K * gen.D,))
    return flat @ _matrix(gen).T + gen.bias


_MATRIX_CACHE: dict[int, tuple[ToyGenerator, np.ndarray]] = {}


def _matrix(gen: ToyGenerator) -> np.ndarray:
    hit = _MATRIX_CACHE.get(id(gen))
    if hit is None or hit[0] is not gen:
        hit = (gen, gen.matrix())
        _MATRIX_CACHE[id(gen)] = hit
    return hit[1]


def _obs_mse(flat: np.ndarray, X: np.ndarray, A: np.ndarray, bias: np.ndarray) -> np.ndarray:
    r = flat @ A.T + bias - X
    return np.mean(r * r, axis=-1)


def inversion_objective(flat_codes: dc.Node, X: np.ndarray, gen: ToyGenerator) -> dc.Node:
    """MSE(X, generate(Z)) as a graph over vectorised codes ``(B, K*D)``."""
    return dc.mean(dc.sqdiff(dc.affine(flat_codes, _matrix(gen), gen.bias), dc.const(X)))


def invert(
    X: np.ndarray,
    gen: ToyGenerator,
    iters: int = 200,
    lr: float = 40.0,
    init: np.ndarray | None = None,
    max_halvings: int = 20,
) -> np.ndarray:
    """Recover latent codes for observations ``X`` of shape ``(M,)`` or ``(B, M)``.

    Runs exactly ``iters`` descent steps per sample. A step that would raise
    the sample's MSE is retried with the rate halved, up to ``max_halvings``
    times, and skipped if it still does not help.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    if X2.shape[-1] != gen.M:
        raise DimensionError(f"observation length {X2.shape[-1]} != M={gen.M}")
    B = X2.shape[0]
    n = gen.K * gen.D
    if init is None:
        Z = np.zeros((B, n))
    else:
        Z = np.array(init, dtype=np.float64).reshape(B, n)
    A = _matrix(gen)
    current = _obs_mse(Z, X2, A, gen.bias)
    # a fully rejected step leaves Z (and so the next attempt) unchanged,
    # so such samples are frozen for the remaining iterations
    active = np.ones(B, dtype=bool)
    for it in range(iters):
        rows = np.flatnonzero(active)
        if rows.size == 0:
            break
        Za, Xa = Z[rows], X2[rows]
        z_node = dc.param(Za)
        loss = dc.scale(inversion_objective(z_node, Xa, gen), float(rows.size))
        grad = dc.backward(loss)[z_node]
        step = np.full(rows.size, float(lr))
        candidate = Za - step[:, None] * grad
        cand_mse = _obs_mse(candidate, Xa, A, gen.bias)
        cur = current[rows]
        worse = cand_mse >= cur
        halvings = 0
        while np.any(worse) and halvings < max_halvings:
            step[worse] *= 0.5
            candidate[worse] = Za[worse] - step[worse, None] * grad[worse]
            cand_mse[worse] = _obs_mse(candidate[worse], Xa[worse], A, gen.bias)
            worse = cand_mse >= cur
            halvings += 1
        accept = ~worse
        Z[rows[accept]] = candidate[accept]
        current[rows[accept]] = cand_mse[accept]
        active[rows[worse]] = False
        if np.any(current > 1e6) or not np.all(np.isfinite(current)):
            raise InversionError("inversion diverged", it)
    codes = Z.reshape(B, gen.K, gen.D)
    return codes[0] if single else codes


# --------------------------------------------------------------------------
# synthetic dataset


@dataclass
class Dataset:
    identities: np.ndarray  # (N,) int
    latents: np.ndarray  # (N, K, D) ground-truth codes
    observations: np.ndarray  # (N, M)

    def __len__(self) -> int:
        return len(self.identities)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.identities[idx], self.latents[idx], self.observations[idx])


def synth_dataset(
    gen: ToyGenerator,
    n_identities: int,
    per_identity: int,
    rng: np.random.Generator,
    first_identity: int = 0,
    shared_jitter: float = 0.0,
) -> Dataset:
    """Records whose shared codes come from a per-identity base; local codes vary.

    ``shared_jitter`` adds i.i.d. Gaussian variation of that standard
    deviation to each record's shared codes, so that samples of one identity
    are close but not identical.
    """
    K, D, s = gen.K, gen.D, gen.shared_count
    ids = np.repeat(np.arange(first_identity, first_identity + n_identities), per_identity)
    shared = rng.standard_normal((n_identities, s, D))
    latents = rng.standard_normal((len(ids), K, D))
    latents[:, :s, :] = np.repeat(shared, per_identity, axis=0)
    if shared_jitter:
        latents[:, :s, :] += shared_jitter * rng.standard_normal((len(ids), s, D))
    obs = generate(latents, gen)
    return Dataset(ids, latents, obs)


def write_dataset(path: str | Path, data: Dataset, gen: ToyGenerator) -> None:
    """One record per line: identity, K*D latent values, M observation values."""
    K, D, M = gen.K, gen.D, gen.M
    lines = [f"# identity latent[{K}x{D}] observation[{M}] K={K} D={D} M={M}"]
    for ident, z, x in zip(data.identities, data.latents, data.observations):
        vals = " ".join(repr(float(v)) for v in np.concatenate([z.reshape(-1), x]))
        lines.append(f"{int(ident)} {vals}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path: str | Path) -> Dataset:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise ValueError(f"{path}: missing header line")
    fields = dict(tok.split("=") for tok in text[0].split() if "=" in tok)
    K, D, M = int(fields["K"]), int(fields["D"]), int(fields["M"])
    rows = [line.split() for line in text[1:] if line.strip()]
    width = 1 + K * D + M
    for i, r in enumerate(rows):
        if len(r) != width:
            raise ValueError(f"{path}: record {i} has {len(r)} fields, expected {width}")
    ids = np.array([int(r[0]) for r in rows], dtype=np.int64)
    vals = np.array([[float(v) for v in r[1:]] for r in rows]).reshape(len(rows), width - 1)
    return Dataset(ids, vals[:, : K * D].reshape(-1, K, D), vals[:, K * D :])
