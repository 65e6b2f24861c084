"""Learnable DP protection, deprotection networks and their adversary.

Protection and deprotection nets are a single fully connected layer on the
vectorised private codes. The discriminator is two FC layers with sigmoid
activations. All losses are built as :mod:`diffcore` graphs so the same code
path serves training and gradient checks.
"""

from __future__ import annotations

import json
import math
import zipfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from . import diffcore as dc
from .channel import complex_noise, unpair_complex
from .diffcore import DimensionError, Node
from .dpmech import PrivacyMechanism, laplace_perturb
from .toygen import PartitionSpec, merge, split

CLAMP = 1e-7
CHECKPOINT_VERSION = 1
ROLES = ("protection", "deprotection-legit", "deprotection-eve", "denoiser")


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, epoch: int, batch: int):
        super().__init__(f"{message} (epoch {epoch}, batch {batch})")
        self.epoch = epoch
        self.batch = batch


def _params(arrays: Iterable[np.ndarray], trainable: bool) -> list[Node]:
    return [dc.param(a) if trainable else dc.const(a) for a in arrays]


@dataclass(eq=False)
class ShieldNet:
    """vectorise -> affine -> reshape on (m, D) code blocks."""

    role: str
    m: int
    D: int
    W: np.ndarray
    b: np.ndarray
    aux_dim: int = 0

    @classmethod
    def init(cls, role: str, m: int, D: int, rng: np.random.Generator, aux_dim: int = 0) -> "ShieldNet":
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        n = m * D
        W, b = dc.uniform_init(rng, n, n + aux_dim)
        return cls(role, m, D, W, b, aux_dim)

    @classmethod
    def identity(cls, role: str, m: int, D: int) -> "ShieldNet":
        n = m * D
        return cls(role, m, D, np.eye(n), np.zeros(n))

    @property
    def n(self) -> int:
        return self.m * self.D

    def arrays(self) -> list[np.ndarray]:
        return [self.W, self.b]

    def copy(self) -> "ShieldNet":
        return ShieldNet(self.role, self.m, self.D, self.W.copy(), self.b.copy(), self.aux_dim)

    def vectorize(self, codes: np.ndarray, aux: np.ndarray | None = None) -> np.ndarray:
        codes = np.asarray(codes, dtype=np.float64)
        if codes.shape[-2:] != (self.m, self.D):
            raise DimensionError(f"{self.role} net expects (..., {self.m}, {self.D}), got {codes.shape}")
        flat = codes.reshape(codes.shape[:-2] + (self.n,))
        if self.aux_dim:
            if aux is None:
                raise ValueError("auxiliary noise input required")
            flat = np.concatenate([flat, aux], axis=-1)
        return flat

    def node(self, x: Node, trainable: bool = False) -> tuple[Node, list[Node]]:
        leaves = _params(self.arrays(), trainable)
        return dc.affine(x, *leaves), leaves

    def __call__(self, codes: np.ndarray, aux: np.ndarray | None = None) -> np.ndarray:
        flat = self.vectorize(codes, aux)
        out = flat @ self.W.T + self.b
        return out.reshape(np.shape(codes))


def protect(private: np.ndarray, net: ShieldNet, aux: np.ndarray | None = None) -> np.ndarray:
    return net(private, aux)


def deprotect(received_private: np.ndarray, net: ShieldNet) -> np.ndarray:
    return net(received_private)


@dataclass(eq=False)
class Discriminator:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    seed: int = 0

    @classmethod
    def init(cls, n: int, rng: np.random.Generator, hidden: int | None = None, seed: int = 0) -> "Discriminator":
        hidden = hidden or 4 * n
        W1, b1 = dc.uniform_init(rng, hidden, n)
        W2, b2 = dc.uniform_init(rng, 1, hidden)
        return cls(W1, b1, W2, b2, seed)

    def arrays(self) -> list[np.ndarray]:
        return [self.W1, self.b1, self.W2, self.b2]

    def copy(self) -> "Discriminator":
        return Discriminator(*(a.copy() for a in self.arrays()), seed=self.seed)

    def node(self, x: Node, trainable: bool = False) -> tuple[Node, list[Node]]:
        leaves = _params(self.arrays(), trainable)
        return self.apply(x, leaves), leaves

    @staticmethod
    def apply(x: Node, leaves: list[Node]) -> Node:
        W1, b1, W2, b2 = leaves
        h = dc.sigmoid(dc.affine(x, W1, b1))
        return dc.sigmoid(dc.affine(h, W2, b2), clamp=CLAMP)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        x2 = x.reshape(x.shape[0], -1) if x.ndim > 2 else x
        return self.node(dc.const(x2))[0].value[..., 0]


# --------------------------------------------------------------------------
# losses as graphs


def _flat(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x.reshape(x.shape[0], -1) if x.ndim > 2 else np.atleast_2d(x)


def disc_loss_node(D_out_real: Node, D_out_fake: Node) -> Node:
    real = dc.scale(dc.mean(dc.log(D_out_real)), -1.0)
    fake = dc.scale(dc.mean(dc.log(dc.one_minus(D_out_fake))), -1.0)
    return dc.add(real, fake)


def gen_adv_node(D_out_fake: Node) -> Node:
    return dc.mean(dc.log(dc.one_minus(D_out_fake)))


def disc_loss(D: Discriminator, z1: np.ndarray, z2: np.ndarray) -> float:
    """-mean log D(z1) - mean log(1 - D(z2)), samples vectorised."""
    real, _ = D.node(dc.const(_flat(z1)))
    fake, _ = D.node(dc.const(_flat(z2)))
    return float(disc_loss_node(real, fake).value)


def gen_adv_loss(D: Discriminator, z2: np.ndarray) -> float:
    fake, _ = D.node(dc.const(_flat(z2)))
    return float(gen_adv_node(fake).value)


def _check_pair(Z: np.ndarray, S: np.ndarray) -> None:
    if np.shape(Z) != np.shape(S):
        raise DimensionError(f"shapes {np.shape(Z)} and {np.shape(S)} differ")


def eve_loss(Z: np.ndarray, S2: np.ndarray) -> float:
    _check_pair(Z, S2)
    return float(dc.mean(dc.sqdiff(dc.const(Z), dc.const(S2))).value)


def legit_loss(Z: np.ndarray, S1: np.ndarray, D: Discriminator, z2: np.ndarray, lam: float) -> float:
    """MSE(Z, S1) + lam * mean log(1 - D(z2))."""
    _check_pair(Z, S1)
    mse = dc.mean(dc.sqdiff(dc.const(Z), dc.const(S1)))
    fake, _ = D.node(dc.const(_flat(z2)))
    return float(dc.add(mse, dc.scale(gen_adv_node(fake), lam)).value)


def latent_noise(batch: int, n_elements: int, noise_var: float, rng: np.random.Generator) -> np.ndarray:
    """Real-valued view of complex channel noise for ``n_elements`` reals per sample."""
    n_sym = (n_elements + 1) // 2
    return unpair_complex(complex_noise((batch, n_sym), noise_var, rng))[:, :n_elements]


def received_graph(
    z2p: Node,
    common_flat: np.ndarray,
    noise_private: np.ndarray,
    noise_common: np.ndarray,
    P: float,
    n_elements: int,
) -> tuple[Node, Node]:
    """Private and common codes after power normalisation, AWGN and de-normalisation.

    Received codes equal Z2 + n / c, where c scales Z2 to mean complex-symbol
    power P, so 1/c = sqrt(||Z2||^2 / (P * ceil(L/2))). The factor is kept
    differentiable so inflating the protected codes pays for the extra channel
    noise it induces on every code.
    """
    energy = dc.row_sum(dc.sqdiff(z2p, dc.const(np.zeros(z2p.shape))))
    if common_flat.shape[-1]:
        energy = dc.add(energy, dc.const(np.sum(common_flat**2, axis=-1, keepdims=True)))
    inv_c = dc.power(dc.scale(energy, 1.0 / (P * ((n_elements + 1) // 2))), 0.5)
    y_priv = dc.add(z2p, dc.mul(inv_c, dc.const(noise_private)))
    y_common = dc.add(dc.const(common_flat), dc.mul(inv_c, dc.const(noise_common)))
    return y_priv, y_common


def split_mse_node(pred_priv: Node, true_priv: np.ndarray, pred_common: Node | None, true_common: np.ndarray, spec: PartitionSpec) -> Node:
    """MSE over all K*D elements assembled from private and common parts."""
    m, K = spec.m, spec.K
    loss = dc.scale(dc.mean(dc.sqdiff(pred_priv, dc.const(true_priv))), m / K)
    if pred_common is not None and K > m:
        loss = dc.add(loss, dc.scale(dc.mean(dc.sqdiff(pred_common, dc.const(true_common))), (K - m) / K))
    return loss


# --------------------------------------------------------------------------
# training


@dataclass
class ShieldConfig:
    lam: float = 1.0
    batch_size: int = 64
    epochs: int = 60
    eve_epochs: int = 30
    lr: float = 3e-3
    d_lr: float = 3e-4
    eve_lr: float = 3e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    T_0: int = 10
    T_mult: int = 2
    snr_db: float = 20.0
    P: float = 1.0
    aux_noise: int = 0
    d_hidden: int = 0
    init: str = "uniform"

    def optimizer_state(self, lr: float) -> dc.OptimizerState:
        return dc.OptimizerState(
            lr0=lr, T_0=self.T_0, T_mult=self.T_mult, method=self.optimizer, momentum=self.momentum
        )

    @property
    def noise_var(self) -> float:
        return self.P / 10.0 ** (self.snr_db / 10.0)


@dataclass(eq=False)
class ShieldModels:
    protection: ShieldNet
    legit: ShieldNet
    discriminator: Discriminator
    eve: ShieldNet | None = None
    seeds: dict = field(default_factory=dict)


def init_models(spec: PartitionSpec, cfg: ShieldConfig, seed: int) -> ShieldModels:
    ss = np.random.SeedSequence([seed, 0x5EED])
    rp, rl, rd = (np.random.default_rng(s) for s in ss.spawn(3))
    m, D = spec.m, spec.D
    if cfg.init == "identity":
        prot = ShieldNet.identity("protection", m, D)
        legit = ShieldNet.identity("deprotection-legit", m, D)
    else:
        prot = ShieldNet.init("protection", m, D, rp, aux_dim=cfg.aux_noise)
        legit = ShieldNet.init("deprotection-legit", m, D, rl)
    disc = Discriminator.init(m * D, rd, hidden=cfg.d_hidden or None, seed=seed)
    return ShieldModels(prot, legit, disc, seeds={"init": seed})


def batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


@dataclass
class EpochStats:
    d_loss: float
    g_adv: float
    legit_mse: float
    legit_loss: float
    d_acc: float


class AdversarialTrainer:
    """Alternating discriminator / legitimate-network updates."""

    def __init__(
        self,
        models: ShieldModels,
        spec: PartitionSpec,
        mech: PrivacyMechanism,
        cfg: ShieldConfig,
        rng: np.random.Generator,
        steps_per_epoch: int,
    ):
        self.models = models
        self.spec = spec
        self.mech = mech
        self.cfg = cfg
        self.rng = rng
        self.d_opt = cfg.optimizer_state(cfg.d_lr)
        self.g_opt = cfg.optimizer_state(cfg.lr)
        self.increment = 1.0 / max(steps_per_epoch, 1)
        self.epoch = 0

    def _aux(self, batch: int) -> np.ndarray | None:
        if not self.models.protection.aux_dim:
            return None
        return self.rng.standard_normal((batch, self.models.protection.aux_dim))

    def discriminator_step(self, z1: np.ndarray, z2: np.ndarray) -> tuple[float, float]:
        D = self.models.discriminator
        real, leaves = D.node(dc.const(z1), trainable=True)
        fake = D.apply(dc.const(z2), leaves)
        loss = disc_loss_node(real, fake)
        grads = dc.backward(loss, leaves)
        acc = 0.5 * (np.mean(real.value > 0.5) + np.mean(fake.value < 0.5))
        self.d_opt.step(D.arrays(), [grads[p] for p in leaves], self.increment)
        return float(loss.value), float(acc)

    def legit_graph(self, Zp: np.ndarray, Zc: np.ndarray, noise: np.ndarray, aux=None):
        prot, legit, D = self.models.protection, self.models.legit, self.models.discriminator
        spec, cfg = self.spec, self.cfg
        n_el = spec.n_elements
        noise_p, noise_c = split(noise, spec)
        zp_in = prot.vectorize(Zp, aux)
        z2p, prot_leaves = prot.node(dc.const(zp_in), trainable=True)
        B = Zp.shape[0]
        y_priv, y_common = received_graph(
            z2p, Zc.reshape(B, -1), noise_p.reshape(B, -1), noise_c.reshape(B, -1), cfg.P, n_el
        )
        yhat, legit_leaves = legit.node(y_priv, trainable=True)
        mse = split_mse_node(yhat, Zp.reshape(B, -1), y_common, Zc.reshape(B, -1), spec)
        fake, _ = D.node(z2p, trainable=False)
        adv = gen_adv_node(fake)
        loss = dc.add(mse, dc.scale(adv, cfg.lam))
        return loss, mse, adv, z2p, prot_leaves + legit_leaves

    def step(self, Z: np.ndarray) -> tuple[float, float, float, float, float]:
        spec, cfg = self.spec, self.cfg
        B = Z.shape[0]
        Zp, Zc = split(Z, spec)
        aux = self._aux(B)
        z1 = laplace_perturb(Zp, self.mech, self.rng).reshape(B, -1)
        z2 = self.models.protection(Zp, aux).reshape(B, -1)
        d_loss, d_acc = self.discriminator_step(z1, z2)
        noise = latent_noise(B, spec.n_elements, cfg.noise_var, self.rng).reshape(B, spec.K, spec.D)
        loss, mse, adv, _, leaves = self.legit_graph(Zp, Zc, noise, aux)
        grads = dc.backward(loss, leaves)
        arrays = self.models.protection.arrays() + self.models.legit.arrays()
        self.g_opt.step(arrays, [grads[p] for p in leaves], self.increment)
        return d_loss, float(adv.value), float(mse.value), float(loss.value), d_acc

    def epoch_run(self, data: np.ndarray) -> EpochStats:
        rows = []
        for bi, idx in enumerate(batches(len(data), self.cfg.batch_size, self.rng)):
            try:
                out = self.step(data[idx])
            except FloatingPointError as exc:
                raise TrainingDiverged(str(exc), self.epoch, bi) from exc
            if not all(math.isfinite(v) for v in out):
                raise TrainingDiverged("non-finite loss", self.epoch, bi)
            rows.append(out)
        self.epoch += 1
        return EpochStats(*np.mean(np.array(rows), axis=0).tolist())


def adversarial_epoch(trainer: AdversarialTrainer, data: np.ndarray) -> tuple[ShieldModels, EpochStats]:
    """One pass over ``data`` (clipped latent codes, shape (N, K, D))."""
    stats = trainer.epoch_run(data)
    return trainer.models, stats


def fit_receiver(
    net: ShieldNet,
    spec: PartitionSpec,
    make_batch,
    n: int,
    epochs: int,
    opt: dc.OptimizerState,
    batch_size: int,
    rng: np.random.Generator,
) -> list[float]:
    """Train a deprotection-style net to map received private codes to true ones.

    ``make_batch(idx)`` returns ``(received_codes, true_codes)``, both
    ``(B, K, D)``; the net acts on the rows ``spec`` marks private. Returns
    the mean full-code MSE per epoch.
    """
    history = []
    steps = max(math.ceil(n / batch_size), 1)
    for epoch in range(epochs):
        losses = []
        for bi, idx in enumerate(batches(n, batch_size, rng)):
            Y, Z = make_batch(idx)
            B = len(idx)
            Yp, Yc = split(Y, spec)
            Zp, Zc = split(Z, spec)
            try:
                pred, leaves = net.node(dc.const(Yp.reshape(B, -1)), trainable=True)
                loss = split_mse_node(pred, Zp.reshape(B, -1), dc.const(Yc.reshape(B, -1)), Zc.reshape(B, -1), spec)
                grads = dc.backward(loss, leaves)
            except FloatingPointError as exc:
                raise TrainingDiverged(str(exc), epoch, bi) from exc
            opt.step(net.arrays(), [grads[p] for p in leaves], 1.0 / steps)
            losses.append(float(loss.value))
        history.append(float(np.mean(losses)))
    return history


# --------------------------------------------------------------------------
# checkpoints


def _net_meta(net: ShieldNet) -> dict:
    return {"role": net.role, "m": net.m, "D": net.D, "aux_dim": net.aux_dim}


def save_models(path: str | Path, models: dict[str, ShieldNet | Discriminator], meta: dict) -> None:
    """Write named nets to an ``.npz`` container.

    Layout: ``__meta__`` holds a JSON document with the format version, the
    caller's metadata and per-net descriptors; each array is stored under
    ``<name>/<field>`` (``W``, ``b`` for shield nets; ``W1``, ``b1``, ``W2``,
    ``b2`` for discriminators).
    """
    arrays: dict[str, np.ndarray] = {}
    nets_meta = {}
    for name, net in models.items():
        if isinstance(net, ShieldNet):
            nets_meta[name] = {"kind": "shield", **_net_meta(net)}
            arrays[f"{name}/W"] = net.W
            arrays[f"{name}/b"] = net.b
        else:
            nets_meta[name] = {"kind": "discriminator", "seed": net.seed}
            for k, a in zip(("W1", "b1", "W2", "b2"), net.arrays()):
                arrays[f"{name}/{k}"] = a
    doc = {"version": CHECKPOINT_VERSION, "meta": meta, "nets": nets_meta}
    arrays["__meta__"] = np.frombuffer(json.dumps(doc, sort_keys=True).encode(), dtype=np.uint8)
    # fixed zip timestamps keep reruns byte-identical
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for key, arr in arrays.items():
            with zf.open(zipfile.ZipInfo(f"{key}.npy", date_time=(1980, 1, 1, 0, 0, 0)), "w") as fh:
                np.lib.format.write_array(fh, np.asarray(arr), allow_pickle=False)


def load_models(path: str | Path) -> tuple[dict[str, ShieldNet | Discriminator], dict]:
    with np.load(path) as z:
        doc = json.loads(bytes(z["__meta__"]).decode())
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
        nets: dict[str, ShieldNet | Discriminator] = {}
        for name, info in doc["nets"].items():
            if info["kind"] == "shield":
                nets[name] = ShieldNet(
                    info["role"], info["m"], info["D"], z[f"{name}/W"].copy(), z[f"{name}/b"].copy(), info["aux_dim"]
                )
            else:
                nets[name] = Discriminator(
                    *(z[f"{name}/{k}"].copy() for k in ("W1", "b1", "W2", "b2")), seed=info["seed"]
                )
    return nets, doc["meta"]


def config_dict(cfg: ShieldConfig) -> dict:
    return asdict(cfg)
