"""Utility and privacy measurements for reconstructed codes and observations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.stats import rankdata

from . import diffcore as dc
from .dpmech import PrivacyMechanism, laplace_perturb
from .diffcore import DimensionError
from .shield import Discriminator, ShieldNet, disc_loss_node
from .toygen import ToyGenerator, invert


@dataclass(frozen=True)
class MetricRecord:
    scheme: str
    threat: str
    epsilon: float
    snr_db: float
    role: str
    latent_mse: float
    latent_mse_se: float
    obs_mse: float
    obs_mse_se: float
    privacy_rate: float
    n: int

    def __post_init__(self):
        if not 0.0 <= self.privacy_rate <= 1.0:
            raise ValueError("privacy rate outside [0, 1]")
        if self.latent_mse < 0 or self.obs_mse < 0:
            raise ValueError("negative MSE")


def per_sample_mse(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"shapes {a.shape} and {b.shape} differ")
    d = (a - b).reshape(a.shape[0], -1) if a.ndim > 1 else (a - b)[None, :]
    return np.mean(d * d, axis=1)


def latent_mse(Z: np.ndarray, S: np.ndarray) -> float:
    return float(np.mean(per_sample_mse(Z, S)))


def obs_mse(X: np.ndarray, X_hat: np.ndarray) -> float:
    return float(np.mean(per_sample_mse(X, X_hat)))


def mean_se(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(np.mean(values)), se


def identity_prototypes(identities: np.ndarray, latents: np.ndarray, shared_count: int) -> np.ndarray:
    """Per-record prototype: the mean shared-code block over that record's identity."""
    identities = np.asarray(identities)
    shared = np.asarray(latents, dtype=np.float64)[:, :shared_count, :]
    uniq, inv = np.unique(identities, return_inverse=True)
    sums = np.zeros((len(uniq),) + shared.shape[1:])
    np.add.at(sums, inv, shared)
    counts = np.bincount(inv, minlength=len(uniq)).astype(np.float64)
    return (sums / counts[:, None, None])[inv]


def identity_distances(
    reconstructions: np.ndarray, prototypes: np.ndarray, gen: ToyGenerator, iters: int = 200, lr: float = 40.0
) -> np.ndarray:
    """L2 distance between the shared codes recovered from each reconstruction and its prototype."""
    recon = np.atleast_2d(reconstructions)
    if len(recon) == 0:
        raise ValueError("no reconstructions to score")
    Z = invert(recon, gen, iters=iters, lr=lr)
    shared = Z[:, : gen.shared_count, :].reshape(len(recon), -1)
    proto = np.asarray(prototypes, dtype=np.float64).reshape(len(recon), -1)
    if proto.shape != shared.shape:
        raise DimensionError(f"prototypes {proto.shape} vs recovered shared codes {shared.shape}")
    return np.linalg.norm(shared - proto, axis=1)


def privacy_success_rate(
    reconstructions: np.ndarray,
    prototypes: np.ndarray,
    gen: ToyGenerator,
    tau: float,
    return_distances: bool = False,
):
    """Fraction of reconstructions whose identity feature lies farther than ``tau``
    from the source's identity prototype."""
    d = identity_distances(reconstructions, prototypes, gen)
    rate = float(np.mean(d > tau))
    return (rate, d) if return_distances else rate


def calibrate_tau(distances_matched: np.ndarray, target_rate: float = 0.05) -> float:
    """Threshold at which ``target_rate`` of matched-identity distances exceed it."""
    return float(np.quantile(distances_matched, 1.0 - target_rate, method="linear"))


def roc_auc(scores_pos: np.ndarray, scores_neg: np.ndarray) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg), ties counted half."""
    scores = np.concatenate([scores_pos, scores_neg])
    ranks = rankdata(scores)
    n1, n0 = len(scores_pos), len(scores_neg)
    u = ranks[:n1].sum() - n1 * (n1 + 1) / 2.0
    return float(u / (n1 * n0))


def train_discriminator(
    z1: np.ndarray,
    z2: np.ndarray,
    seed: int,
    epochs: int = 30,
    lr: float = 3e-3,
    batch_size: int = 64,
    hidden: int | None = None,
) -> Discriminator:
    """Fit a fresh discriminator to separate genuine (z1) from candidate (z2) samples."""
    n = z1.shape[1]
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA0C]))
    D = Discriminator.init(n, rng, hidden=hidden, seed=seed)
    opt = dc.OptimizerState(lr0=lr, T_0=max(epochs, 1), T_mult=1, method="adam")
    N = min(len(z1), len(z2))
    steps = math.ceil(N / batch_size)
    for _ in range(epochs):
        order = rng.permutation(N)
        for start in range(0, N, batch_size):
            idx = order[start : start + batch_size]
            real, leaves = D.node(dc.const(z1[idx]), trainable=True)
            fake = D.apply(dc.const(z2[idx]), leaves)
            grads = dc.backward(disc_loss_node(real, fake), leaves)
            opt.step(D.arrays(), [grads[p] for p in leaves], 1.0 / steps)
    return D


def resemblance_auc(
    candidate: ShieldNet | Callable[[np.ndarray], np.ndarray],
    mech: PrivacyMechanism,
    probe: np.ndarray,
    seed: int,
    epochs: int = 30,
    train_fraction: float = 0.5,
    reference_seed: int | None = None,
) -> float:
    """AUC of a freshly trained discriminator separating Laplace-perturbed codes
    from ``candidate`` outputs on held-out probes. 0.5 means indistinguishable.

    ``probe`` holds private codes of shape (N, m, D). Two disjoint halves of
    the probes feed training and scoring.
    """
    if reference_seed is not None and reference_seed == seed:
        raise ValueError("fresh discriminator must not reuse the training-time seed")
    probe = np.asarray(probe, dtype=np.float64)
    N = len(probe)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1A9]))
    perm = rng.permutation(N)
    n_train = int(N * train_fraction)
    tr, te = perm[:n_train], perm[n_train:]
    # each probe yields either a genuine or a candidate sample, never both
    half_tr, half_te = len(tr) // 2, len(te) // 2

    def sides(idx, half):
        real = laplace_perturb(probe[idx[:half]], mech, rng).reshape(half, -1)
        cand = np.asarray(candidate(probe[idx[half:]]), dtype=np.float64).reshape(len(idx) - half, -1)
        return real, cand

    r_tr, c_tr = sides(tr, half_tr)
    r_te, c_te = sides(te, half_te)
    D = train_discriminator(r_tr, c_tr, seed, epochs=epochs)
    return roc_auc(D(r_te), D(c_te))
