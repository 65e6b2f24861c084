"""Command-line front end: ``gendata``, ``train``, ``sweep`` and ``report``.

Exit codes: 0 success, 2 configuration or schema error, 3 training
divergence, 4 I/O error.

Each sweep cell (scheme, epsilon index, SNR index) draws its randomness from
three streams, one per role (alice, bob, eve), seeded by
``SeedSequence([seed, scheme id, epsilon index, snr index, role id])``.
Schemes that ignore epsilon use epsilon index 0, so their rows repeat
exactly across the epsilon grid. Any cell can therefore be recomputed alone.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import multiprocessing as mp
import numpy as np

from . import dpmech, metrics
from .channel import ChannelConfig
from .config import SCHEMES, ConfigError, ExperimentConfig, emit_config, load_config
from .dpmech import ClipBounds, PrivacyMechanism
from .shield import (
    Discriminator,
    ShieldModels,
    ShieldNet,
    TrainingDiverged,
    init_models,
    load_models,
    save_models,
)
from .toygen import ConfigurationError, Dataset, ToyGenerator, generate, invert, read_dataset, synth_dataset, write_dataset
from .wiretap import (
    SystemBundle,
    ThreatModel,
    encode_latents,
    preset_partition,
    run_scheme,
    train_basic,
    train_dp_denoiser,
    train_eve,
)

EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_IO = 4

RESULT_COLUMNS = (
    "scheme",
    "threat",
    "epsilon",
    "snr_db",
    "role",
    "latent_mse",
    "latent_mse_se",
    "obs_mse",
    "obs_mse_se",
    "privacy_rate",
    "n",
)
HISTORY_COLUMNS = ("epsilon", "stage", "epoch", "d_loss", "g_adv", "legit_mse", "legit_loss", "d_acc", "receiver_mse")
ROLE_IDS = {"alice": 0, "bob": 1, "eve": 2}
EPSILON_FREE = {"direct"}


class SchemaError(ValueError):
    pass


def fmt(v) -> str:
    """Shortest round-trip text for floats; plain ``str`` otherwise."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    Path(path).write_text(buf.getvalue())


# --------------------------------------------------------------------------
# shared setup


def make_generator(cfg: ExperimentConfig) -> ToyGenerator:
    try:
        return ToyGenerator.create(cfg.K, cfg.D, cfg.M, cfg.shared_count, seed=cfg.generator_seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_split(cfg: ExperimentConfig, name: str, gen: ToyGenerator) -> Dataset:
    data = read_dataset(cfg.data_path() / f"{name}.txt")
    if data.latents.shape[1:] != (gen.K, gen.D) or data.observations.shape[1] != gen.M:
        raise ConfigError(f"{name} split does not match K={gen.K}, D={gen.D}, M={gen.M}")
    return data


def threat_model(cfg: ExperimentConfig):
    spec = preset_partition(cfg.partition_preset, cfg.K, cfg.D, cfg.shared_count)
    if cfg.threat == "stronger":
        guess = preset_partition(cfg.eve_guess_preset, cfg.K, cfg.D, cfg.shared_count)
        return spec, ThreatModel("stronger", guess)
    return spec, ThreatModel()


def scheme_id(scheme: str) -> int:
    return SCHEMES.index(scheme)


def cell_rngs(seed: int, scheme: str, ei: int, si: int) -> dict[str, np.random.Generator]:
    e = 0 if scheme in EPSILON_FREE else ei
    return {
        role: np.random.default_rng(np.random.SeedSequence([seed, scheme_id(scheme), e, si, rid]))
        for role, rid in ROLE_IDS.items()
    }


# --------------------------------------------------------------------------
# gendata


def cmd_gendata(cfg: ExperimentConfig) -> list[Path]:
    gen = make_generator(cfg)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xDA7A]))
    train = synth_dataset(gen, cfg.train_identities, cfg.per_identity, rng, shared_jitter=cfg.shared_jitter)
    test = synth_dataset(
        gen, cfg.test_identities, cfg.per_identity, rng, first_identity=cfg.train_identities, shared_jitter=cfg.shared_jitter
    )
    out = cfg.data_path()
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "train.txt", out / "test.txt"]
    write_dataset(paths[0], train, gen)
    write_dataset(paths[1], test, gen)
    return paths


# --------------------------------------------------------------------------
# train


def calibrate_identity_threshold(cfg, gen, data: Dataset, bounds: ClipBounds) -> float:
    """Threshold giving ``tau_rate`` success on noiseless direct transmission."""
    Z = dpmech.clip(invert(data.observations, gen, iters=cfg.invert_iters, lr=cfg.invert_lr), bounds)
    proto = metrics.identity_prototypes(data.identities, data.latents, gen.shared_count)
    d = metrics.identity_distances(generate(Z, gen), proto, gen, iters=cfg.invert_iters, lr=cfg.invert_lr)
    return metrics.calibrate_tau(d, cfg.tau_rate)


def cmd_train(cfg: ExperimentConfig, checkpoint: Path) -> tuple[Path, Path]:
    gen = make_generator(cfg)
    train = load_split(cfg, "train", gen)
    spec, threat = threat_model(cfg)
    scfg = cfg.shield()
    probe = SystemBundle(
        gen, spec, PrivacyMechanism(0.0, 1.0, spec.n_elements), None,
        ChannelConfig(cfg.train_snr_db, cfg.P), ChannelConfig(cfg.train_snr_db, cfg.P),
        init_models(spec, scfg, cfg.seed), threat, cfg.invert_iters, cfg.invert_lr,
    )
    Z_raw = encode_latents(train.observations, probe)
    bounds = dpmech.fit_clip_bounds(Z_raw)
    Z = dpmech.clip(Z_raw, bounds)
    tau = calibrate_identity_threshold(cfg, gen, train, bounds)

    nets: dict[str, ShieldNet | Discriminator] = {}
    history = []
    for ei, eps in enumerate(cfg.epsilons):
        mech = PrivacyMechanism.from_bounds(bounds, spec.n_elements, eps)
        # every epsilon starts from the same initialisation and batch order
        # (common random numbers), so differences across the grid come from
        # epsilon alone
        cell_seed = cfg.seed
        bundle = SystemBundle(
            gen, spec, mech, bounds, probe.legit_channel, probe.eve_channel,
            init_models(spec, scfg, cell_seed), threat, cfg.invert_iters, cfg.invert_lr,
        )
        try:
            _, hist = train_basic(bundle, Z, scfg, cell_seed)
        except TrainingDiverged as exc:
            raise TrainingDiverged(f"epsilon {eps}: {exc}", exc.epoch, exc.batch) from exc
        history += [(eps, "adversarial", k, s.d_loss, s.g_adv, s.legit_mse, s.legit_loss, s.d_acc, "") for k, s in enumerate(hist)]
        m = bundle.models
        nets.update({f"e{ei}/protection": m.protection, f"e{ei}/legit": m.legit, f"e{ei}/discriminator": m.discriminator})
        if threat.kind == "stronger":
            eve, eve_hist, initial = train_eve(bundle, Z, scfg, cell_seed)
            nets[f"e{ei}/eve"] = eve
            history.append((eps, "eve", -1, "", "", "", "", "", initial))
            history += [(eps, "eve", k, "", "", "", "", "", v) for k, v in enumerate(eve_hist)]
        if "traditional_dp" in cfg.schemes:
            den, den_hist = train_dp_denoiser(spec, mech, probe.legit_channel, Z, scfg, cell_seed)
            nets[f"e{ei}/denoiser"] = den
            history += [(eps, "denoiser", k, "", "", "", "", "", v) for k, v in enumerate(den_hist)]

    meta = {
        # locations are left out so a checkpoint does not depend on where it was written
        "config": emit_config(cfg.with_overrides(out_dir="", data_dir="")),
        "bounds": [bounds.a, bounds.b],
        "tau": tau,
        "stages": ["adversarial", "eve"] if threat.kind == "stronger" else ["adversarial"],
    }
    checkpoint.parent.mkdir(parents=True, exist_ok=True)
    save_models(checkpoint, nets, meta)
    hist_path = Path(cfg.out_dir) / "history.csv"
    hist_path.parent.mkdir(parents=True, exist_ok=True)
    write_csv(hist_path, HISTORY_COLUMNS, history)
    return checkpoint, hist_path


# --------------------------------------------------------------------------
# sweep

_STATE: dict = {}


@dataclass
class SweepState:
    cfg: ExperimentConfig
    gen: ToyGenerator
    bundles: list[SystemBundle]
    denoisers: list[ShieldNet | None]
    test: Dataset
    Z: np.ndarray
    prototypes: np.ndarray
    tau: float


def build_sweep_state(cfg: ExperimentConfig, checkpoint: Path) -> SweepState:
    nets, meta = load_models(checkpoint)
    gen = make_generator(cfg)
    test = load_split(cfg, "test", gen)
    spec, threat = threat_model(cfg)
    bounds = ClipBounds(*meta["bounds"])
    bundles, denoisers = [], []
    for ei, eps in enumerate(cfg.epsilons):
        try:
            models = ShieldModels(nets[f"e{ei}/protection"], nets[f"e{ei}/legit"], nets[f"e{ei}/discriminator"])
        except KeyError as exc:
            raise ConfigError(f"checkpoint has no models for epsilon index {ei} ({eps})") from exc
        if threat.kind == "stronger":
            models.eve = nets.get(f"e{ei}/eve")
            if models.eve is None:
                raise ConfigError("checkpoint lacks the eavesdropper net required by threat = stronger")
        mech = PrivacyMechanism.from_bounds(bounds, spec.n_elements, eps)
        bundles.append(
            SystemBundle(
                gen, spec, mech, bounds, ChannelConfig(cfg.train_snr_db, cfg.P), ChannelConfig(cfg.train_snr_db, cfg.P),
                models, threat, cfg.invert_iters, cfg.invert_lr,
            )
        )
        denoisers.append(nets.get(f"e{ei}/denoiser"))
    if "traditional_dp" in cfg.schemes and any(d is None for d in denoisers):
        raise ConfigError("checkpoint lacks traditional-DP denoisers")
    Z = encode_latents(test.observations, bundles[0])
    proto = metrics.identity_prototypes(test.identities, test.latents, gen.shared_count)
    return SweepState(cfg, gen, bundles, denoisers, test, Z, proto, float(meta["tau"]))


def evaluate_cell(state: SweepState, scheme: str, ei: int, si: int) -> list[tuple]:
    cfg = state.cfg
    snr = cfg.snrs_db[si]
    base = state.bundles[ei]
    ch = ChannelConfig(snr, cfg.P)
    bundle = SystemBundle(
        base.gen, base.spec, base.mech, base.bounds, ch, ch, base.models,
        base.threat if scheme == "proposed" else ThreatModel(), base.invert_iters, base.invert_lr,
    )
    rngs = cell_rngs(cfg.seed, scheme, ei, si)
    rec = run_scheme(scheme, state.test.observations, bundle, rngs, denoiser=state.denoisers[ei], Z=state.Z)
    X = state.test.observations
    rows = []
    for role, S, Xh in (("bob", rec.bob_S, rec.bob_X), ("eve", rec.eve_S, rec.eve_X)):
        lm, lse = metrics.mean_se(metrics.per_sample_mse(rec.Z, S))
        om, ose = metrics.mean_se(metrics.per_sample_mse(X, Xh))
        d = metrics.identity_distances(Xh, state.prototypes, state.gen, iters=cfg.invert_iters, lr=cfg.invert_lr)
        rate = float(np.mean(d > state.tau))
        rows.append((scheme, bundle.threat.kind, cfg.epsilons[ei], snr, role, lm, lse, om, ose, rate, len(X)))
    return rows


def _worker_cell(args):
    return evaluate_cell(_STATE["state"], *args)


def cells(cfg: ExperimentConfig) -> list[tuple[str, int, int]]:
    return [
        (s, ei, si) for s in cfg.schemes for ei in range(len(cfg.epsilons)) for si in range(len(cfg.snrs_db))
    ]


def cmd_sweep(cfg: ExperimentConfig, checkpoint: Path, jobs: int = 1) -> Path:
    state = build_sweep_state(cfg, checkpoint)
    todo = cells(cfg)
    if jobs > 1:
        _STATE["state"] = state
        try:
            with ProcessPoolExecutor(max_workers=jobs, mp_context=mp.get_context("fork")) as pool:
                results = list(pool.map(_worker_cell, todo))
        finally:
            _STATE.clear()
    else:
        results = [evaluate_cell(state, *c) for c in todo]
    rows = [r for block in results for r in block]
    order = {s: i for i, s in enumerate(SCHEMES)}
    rows.sort(key=lambda r: (order[r[0]], r[2], r[3], r[4]))
    out = Path(cfg.out_dir) / "results.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_csv(out, RESULT_COLUMNS, rows)
    return out


# --------------------------------------------------------------------------
# report

REPORT_METRICS = {
    "latent_mse": "latent_mse_se",
    "obs_mse": "obs_mse_se",
    "privacy_rate": None,
}


def read_results(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in RESULT_COLUMNS:
            if col not in header:
                raise SchemaError(f"results file {path} is missing column {col!r}")
        return list(reader)


def long_form(rows: list[dict], metric: str, axis: str) -> list[tuple]:
    """Curves over ``axis`` (epsilon or snr_db), one per fixed value of the other axis."""
    other = "snr_db" if axis == "epsilon" else "epsilon"
    se_col = REPORT_METRICS[metric]
    out = []
    for r in rows:
        curve = f"{r['scheme']}|{r['threat']}|{r['role']}|{other}={r[other]}"
        y = float(r[metric])
        if se_col is None:
            n = int(r["n"])
            se = math.sqrt(y * (1.0 - y) / n) if n > 0 else 0.0
        else:
            se = float(r[se_col])
        out.append((curve, float(r[axis]), y, se))
    out.sort(key=lambda t: (t[0], t[1]))
    return out


def cmd_report(results: Path, out_dir: Path) -> list[Path]:
    rows = read_results(results)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for axis, tag in (("epsilon", "eps"), ("snr_db", "snr")):
        for metric in REPORT_METRICS:
            path = out_dir / f"{tag}_{metric}.csv"
            write_csv(path, ("curve", "x", "y", "stderr"), long_form(rows, metric, axis))
            written.append(path)
    return written


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wiretap-dp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("gendata", "train", "sweep", "report"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path, help="key = value configuration file")
        sp.add_argument("--checkpoint", type=Path, help="model checkpoint (default: <out>/checkpoint.npz)")
        sp.add_argument("--out", type=Path, help="output directory (overrides out_dir)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for sweep cells")
        sp.add_argument("--seed", type=int, help="master seed (overrides the config)")
        if name == "report":
            sp.add_argument("results", nargs="?", type=Path, help="results CSV (default: <out>/results.csv)")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg = cfg.with_overrides(out_dir=str(args.out))
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be non-negative")
            cfg = cfg.with_overrides(seed=args.seed)
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        checkpoint = args.checkpoint or Path(cfg.out_dir) / "checkpoint.npz"
        if args.command == "gendata":
            for p in cmd_gendata(cfg):
                print(p)
        elif args.command == "train":
            for p in cmd_train(cfg, checkpoint):
                print(p)
        elif args.command == "sweep":
            print(cmd_sweep(cfg, checkpoint, args.jobs))
        else:
            results = args.results or Path(cfg.out_dir) / "results.csv"
            for p in cmd_report(results, Path(cfg.out_dir)):
                print(p)
    except (ConfigError, ConfigurationError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDiverged as exc:
        print(f"error: training diverged at epoch {exc.epoch}, batch {exc.batch}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
