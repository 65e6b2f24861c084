"""Alice / Bob / Eve pipelines, threat models, training strategies and baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import dpmech
from .channel import ChannelConfig, from_symbols, symbol_factor, to_symbols, transmit
from .dpmech import ClipBounds, PrivacyMechanism
from .shield import (
    AdversarialTrainer,
    EpochStats,
    ShieldConfig,
    ShieldModels,
    ShieldNet,
    fit_receiver,
    init_models,
    latent_noise,
)
from .toygen import PartitionSpec, ToyGenerator, generate, invert, merge, split

# Reference layout: 28 codes, 2 shared, 13 shape/texture groups. Local code l
# (0-based, 2..27) maps onto the toy's local codes proportionally.
REF_K = 28
REF_SHARED = 2
CODE_PRESETS = {
    # 1-based reference code numbers for each experiment
    "basic": (4, 7),
    "stronger": (4, 13),
    "stronger_eve_guess": (6, 7),
}


def map_reference_codes(first: int, last: int, K: int, shared_count: int) -> tuple[int, ...]:
    """Shared codes plus the toy local codes covering reference codes first..last (1-based)."""
    n_local_ref = REF_K - REF_SHARED
    n_local = K - shared_count
    out = set(range(shared_count))
    for code in range(first - 1, last):
        if code < REF_SHARED:
            continue
        rel = (code - REF_SHARED) * n_local // n_local_ref
        out.add(shared_count + rel)
    return tuple(sorted(out))


def preset_partition(name: str, K: int, D: int, shared_count: int) -> PartitionSpec:
    first, last = CODE_PRESETS[name]
    return PartitionSpec(K, D, shared_count, map_reference_codes(first, last, K, shared_count))


@dataclass(frozen=True)
class ThreatModel:
    kind: str = "basic"
    guessed: PartitionSpec | None = None

    def __post_init__(self):
        if self.kind not in ("basic", "stronger"):
            raise ValueError(f"unknown threat model {self.kind!r}")
        if self.kind == "stronger" and self.guessed is None:
            raise ValueError("stronger eavesdropper needs guessed private indices")


@dataclass(eq=False)
class SystemBundle:
    gen: ToyGenerator
    spec: PartitionSpec
    mech: PrivacyMechanism
    bounds: ClipBounds | None
    legit_channel: ChannelConfig
    eve_channel: ChannelConfig
    models: ShieldModels
    threat: ThreatModel = field(default_factory=ThreatModel)
    invert_iters: int = 200
    invert_lr: float = 40.0

    def __post_init__(self):
        self.gen.check(self.spec)
        n = self.spec.m * self.spec.D
        for net in (self.models.protection, self.models.legit):
            if net.n != n:
                raise ValueError(f"{net.role} net width {net.n} does not match m*D={n}")
        if self.threat.kind == "stronger":
            self.gen.check(self.threat.guessed)
        if self.legit_channel.P != self.eve_channel.P:
            raise ValueError("both links must share the transmit power constraint")


@dataclass
class Transmission:
    symbols: np.ndarray  # (B, ceil(L/2)) complex
    Z: np.ndarray  # (B, K, D) clipped latent codes before protection
    Z2: np.ndarray  # (B, K, D) transmitted codes before normalisation
    factor: np.ndarray  # (B, 1) power normalisation factor, known to receivers


def encode_latents(X: np.ndarray, bundle: SystemBundle) -> np.ndarray:
    Z = invert(X, bundle.gen, iters=bundle.invert_iters, lr=bundle.invert_lr)
    if bundle.bounds is not None:
        Z = dpmech.clip(Z, bundle.bounds)
    return Z


def send(Z2: np.ndarray, P: float) -> tuple[np.ndarray, np.ndarray]:
    B = Z2.shape[0]
    flat = Z2.reshape(B, -1)
    factor = symbol_factor(flat, P)
    return to_symbols(flat * factor), factor


def alice_encode(X: np.ndarray, bundle: SystemBundle, aux_rng: np.random.Generator | None = None) -> Transmission:
    X = np.atleast_2d(X)
    Z = encode_latents(X, bundle)
    Zp, Zc = split(Z, bundle.spec)
    aux = None
    if bundle.models.protection.aux_dim:
        rng = aux_rng or np.random.default_rng(0)
        aux = rng.standard_normal((len(Z), bundle.models.protection.aux_dim))
    Z2 = merge(bundle.models.protection(Zp, aux), Zc, bundle.spec)
    symbols, factor = send(Z2, bundle.legit_channel.P)
    return Transmission(symbols, Z, Z2, factor)


def received_codes(Y: np.ndarray, factor: np.ndarray, spec: PartitionSpec) -> np.ndarray:
    B = Y.shape[0]
    return (from_symbols(Y, spec.n_elements) / factor).reshape(B, spec.K, spec.D)


def bob_decode(Y1: np.ndarray, factor: np.ndarray, bundle: SystemBundle) -> tuple[np.ndarray, np.ndarray]:
    Y = received_codes(Y1, factor, bundle.spec)
    Yp, Yc = split(Y, bundle.spec)
    S1 = merge(bundle.models.legit(Yp), Yc, bundle.spec)
    return S1, generate(S1, bundle.gen)


def eve_decode(Y2: np.ndarray, factor: np.ndarray, bundle: SystemBundle) -> tuple[np.ndarray, np.ndarray]:
    Y = received_codes(Y2, factor, bundle.spec)
    if bundle.threat.kind == "basic":
        return Y, generate(Y, bundle.gen)
    guess = bundle.threat.guessed
    Yp, Yc = split(Y, guess)
    S2 = merge(bundle.models.eve(Yp), Yc, guess)
    return S2, generate(S2, bundle.gen)


# --------------------------------------------------------------------------
# training


def _stage_rngs(seed: int, label: int) -> tuple[np.random.Generator, ...]:
    ss = np.random.SeedSequence([seed, label])
    return tuple(np.random.default_rng(s) for s in ss.spawn(2))


def train_basic(
    bundle: SystemBundle, latents: np.ndarray, cfg: ShieldConfig, seed: int = 0
) -> tuple[ShieldModels, list[EpochStats]]:
    """Stage-one training: discriminator and legitimate nets, alternately.

    ``latents`` are Alice's clipped codes for the training split.
    """
    if len(latents) == 0:
        raise ValueError("empty training set")
    (rng, _) = _stage_rngs(seed, 1)
    steps = math.ceil(len(latents) / cfg.batch_size)
    train_cfg = replace(cfg, snr_db=bundle.legit_channel.snr_db, P=bundle.legit_channel.P)
    trainer = AdversarialTrainer(bundle.models, bundle.spec, bundle.mech, train_cfg, rng, steps)
    history = [trainer.epoch_run(latents) for _ in range(cfg.epochs)]
    return bundle.models, history


def eve_observations(bundle: SystemBundle, Z: np.ndarray, rng: np.random.Generator, cfg: ChannelConfig) -> np.ndarray:
    """De-normalised codes Eve receives for clipped codes ``Z`` under the frozen protector."""
    Zp, Zc = split(Z, bundle.spec)
    Z2 = merge(bundle.models.protection(Zp), Zc, bundle.spec)
    B = len(Z)
    flat = Z2.reshape(B, -1)
    factor = symbol_factor(flat, cfg.P)
    noise = latent_noise(B, flat.shape[1], cfg.noise_var, rng)
    return (flat + noise / factor).reshape(Z.shape)


def train_eve(
    bundle: SystemBundle, latents: np.ndarray, cfg: ShieldConfig, seed: int = 0, epochs: int | None = None
) -> tuple[ShieldNet, list[float], float]:
    """Stage two: fit Eve's deprotection net with every legitimate net frozen.

    Returns the net, per-epoch training loss and the loss before training.
    """
    guess = bundle.threat.guessed
    if guess is None:
        raise ValueError("stage two needs a stronger threat model")
    rng_init, rng = _stage_rngs(seed, 2)
    eve = ShieldNet.init("deprotection-eve", guess.m, guess.D, rng_init)
    bundle.models.eve = eve
    ch = bundle.eve_channel

    def make_batch(idx):
        return eve_observations(bundle, latents[idx], rng, ch), latents[idx]

    probe_rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
    Y0 = eve_observations(bundle, latents, probe_rng, ch)
    Yp, Yc = split(Y0, guess)
    initial = float(np.mean((merge(eve(Yp), Yc, guess) - latents) ** 2))
    opt = cfg.optimizer_state(cfg.eve_lr)
    history = fit_receiver(
        eve, guess, make_batch, len(latents), cfg.eve_epochs if epochs is None else epochs, opt, cfg.batch_size, rng
    )
    return eve, history, initial


def train_stronger(bundle: SystemBundle, latents: np.ndarray, cfg: ShieldConfig, seed: int = 0):
    """Two-stage training; returns models, stage-one history, Eve history and Eve's initial loss."""
    models, history = train_basic(bundle, latents, cfg, seed)
    _, eve_hist, eve_initial = train_eve(bundle, latents, cfg, seed)
    return models, history, eve_hist, eve_initial


# --------------------------------------------------------------------------
# baselines


def traditional_dp_transmit(Z: np.ndarray, spec: PartitionSpec, mech: PrivacyMechanism, P: float, rng):
    Zp, Zc = split(Z, spec)
    Z2 = merge(dpmech.laplace_perturb(Zp, mech, rng), Zc, spec)
    symbols, factor = send(Z2, P)
    return symbols, factor, Z2


def train_dp_denoiser(
    spec: PartitionSpec,
    mech: PrivacyMechanism,
    channel: ChannelConfig,
    latents: np.ndarray,
    cfg: ShieldConfig,
    seed: int = 0,
) -> tuple[ShieldNet, list[float]]:
    """Receiver-side net trained to strip genuine Laplace noise (and channel noise)."""
    rng_init, rng = _stage_rngs(seed, 4)
    net = ShieldNet.init("denoiser", spec.m, spec.D, rng_init)

    def make_batch(idx):
        Z = latents[idx]
        Zp, Zc = split(Z, spec)
        Z2 = merge(dpmech.laplace_perturb(Zp, mech, rng), Zc, spec)
        B = len(idx)
        flat = Z2.reshape(B, -1)
        factor = symbol_factor(flat, channel.P)
        noise = latent_noise(B, flat.shape[1], channel.noise_var, rng)
        return (flat + noise / factor).reshape(Z.shape), Z

    opt = cfg.optimizer_state(cfg.lr)
    history = fit_receiver(net, spec, make_batch, len(latents), cfg.epochs, opt, cfg.batch_size, rng)
    return net, history


@dataclass
class Reconstructions:
    Z: np.ndarray
    bob_S: np.ndarray
    bob_X: np.ndarray
    eve_S: np.ndarray
    eve_X: np.ndarray


def run_scheme(
    scheme: str,
    X: np.ndarray,
    bundle: SystemBundle,
    rngs: dict[str, np.random.Generator],
    denoiser: ShieldNet | None = None,
    Z: np.ndarray | None = None,
) -> Reconstructions:
    """Push observations ``X`` through one scheme for both receivers.

    ``rngs`` maps ``alice``, ``bob`` and ``eve`` to independent streams.
    ``Z`` may carry precomputed clipped latents to skip inversion.
    """
    X = np.atleast_2d(X)
    if Z is None:
        Z = encode_latents(X, bundle)
    spec = bundle.spec
    P = bundle.legit_channel.P
    if scheme == "proposed":
        Zp, Zc = split(Z, spec)
        aux = None
        if bundle.models.protection.aux_dim:
            aux = rngs["alice"].standard_normal((len(Z), bundle.models.protection.aux_dim))
        symbols, factor = send(merge(bundle.models.protection(Zp, aux), Zc, spec), P)
        Y1 = transmit(symbols, bundle.legit_channel, rngs["bob"])
        Y2 = transmit(symbols, bundle.eve_channel, rngs["eve"])
        bob_S, bob_X = bob_decode(Y1, factor, bundle)
        eve_S, eve_X = eve_decode(Y2, factor, bundle)
    elif scheme == "direct":
        symbols, factor = send(Z, P)
        Y1 = transmit(symbols, bundle.legit_channel, rngs["bob"])
        Y2 = transmit(symbols, bundle.eve_channel, rngs["eve"])
        bob_S = received_codes(Y1, factor, spec)
        eve_S = received_codes(Y2, factor, spec)
        bob_X, eve_X = generate(bob_S, bundle.gen), generate(eve_S, bundle.gen)
    elif scheme == "traditional_dp":
        if denoiser is None:
            raise ValueError("traditional DP baseline needs a trained denoiser")
        symbols, factor, _ = traditional_dp_transmit(Z, spec, bundle.mech, P, rngs["alice"])
        Y1 = transmit(symbols, bundle.legit_channel, rngs["bob"])
        Y2 = transmit(symbols, bundle.eve_channel, rngs["eve"])
        Yb = received_codes(Y1, factor, spec)
        Yp, Yc = split(Yb, spec)
        bob_S = merge(denoiser(Yp), Yc, spec)
        bob_X = generate(bob_S, bundle.gen)
        eve_S = received_codes(Y2, factor, spec)
        eve_X = generate(eve_S, bundle.gen)
    else:
        raise ValueError(f"unknown scheme {scheme!r}")
    return Reconstructions(Z, bob_S, bob_X, eve_S, eve_X)


def baseline_direct(X: np.ndarray, bundle: SystemBundle, rngs, Z=None) -> Reconstructions:
    return run_scheme("direct", X, bundle, rngs, Z=Z)


def baseline_traditional_dp(X: np.ndarray, bundle: SystemBundle, rngs, denoiser: ShieldNet, Z=None) -> Reconstructions:
    return run_scheme("traditional_dp", X, bundle, rngs, denoiser=denoiser, Z=Z)
