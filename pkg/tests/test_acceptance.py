"""Acceptance criteria 1-9.

Each test prints one ``criterion N: PASS|FAIL`` line (visible without ``-s``)
and then asserts. Run alone with::

    pytest tests/test_acceptance.py -v

The trend criteria share one full-grid training run, so the module takes a
few minutes.
"""

import csv
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from wiretap_dp import cli
from wiretap_dp import diffcore as dc
from wiretap_dp.channel import ChannelConfig, transmit
from wiretap_dp.config import ExperimentConfig, parse_config
from wiretap_dp.dpmech import ClipBounds, clip, fit_clip_bounds, laplace_noise, laplace_perturb, sensitivity
from wiretap_dp.metrics import resemblance_auc
from wiretap_dp.shield import Discriminator, disc_loss_node, gen_adv_node
from wiretap_dp.toygen import ToyGenerator, generate, inversion_objective, invert, split, synth_dataset


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return emit


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def pick(rows, scheme, role, key, snr=None, eps=None):
    out = {}
    for r in rows:
        if r["scheme"] != scheme or r["role"] != role:
            continue
        if snr is not None and float(r["snr_db"]) != snr:
            continue
        if eps is not None and float(r["epsilon"]) != eps:
            continue
        out[float(r["epsilon"] if snr is not None else r["snr_db"])] = float(r[key])
    return out


def run_pipeline(cfg: ExperimentConfig, jobs: int = 1) -> Path:
    out = Path(cfg.out_dir)
    cli.cmd_gendata(cfg)
    cli.cmd_train(cfg, out / "checkpoint.npz")
    cli.cmd_sweep(cfg, out / "checkpoint.npz", jobs=jobs)
    return out


@pytest.fixture(scope="module")
def basic_run(tmp_path_factory):
    cfg = ExperimentConfig(out_dir=str(tmp_path_factory.mktemp("basic")))
    t0 = time.process_time()
    out = run_pipeline(cfg)
    return cfg, out, read_rows(out / "results.csv"), time.process_time() - t0


# ---------------------------------------------------------------- 1


def _rel(num, ana):
    return float(np.max(np.abs(num - ana) / np.maximum(np.abs(num) + np.abs(ana), 1e-6)))


def test_criterion_1_gradients(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    gen = ToyGenerator.create(K=4, D=4, M=24, shared_count=2, seed=1)
    lam = 1.0
    worst = {"L_D": 0.0, "L_G": 0.0, "L_2": 0.0, "L_eve": 0.0, "inversion": 0.0}
    for _ in range(100):
        D = Discriminator.init(6, rng, hidden=5)
        z1 = rng.normal(size=(4, 6))
        Z, S = rng.normal(size=(3, 6)), rng.normal(size=(3, 6))
        z2 = rng.normal(size=(3, 6))
        builders = {
            "L_D": lambda L, x: disc_loss_node(Discriminator.apply(dc.const(z1), L), Discriminator.apply(x, L)),
            "L_G": lambda L, x: gen_adv_node(Discriminator.apply(x, L)),
            "L_2": lambda L, x: dc.add(
                dc.mean(dc.sqdiff(dc.const(Z), x)), dc.scale(gen_adv_node(Discriminator.apply(x, L)), lam)
            ),
            "L_eve": lambda L, x: dc.mean(dc.sqdiff(dc.const(Z), x)),
        }
        for name, build in builders.items():
            leaves = [dc.param(a) for a in D.arrays()]
            x = dc.param(z2.copy())
            g = dc.backward(build(leaves, x), leaves + [x])
            f = lambda: float(build([dc.const(a) for a in D.arrays()], dc.const(z2)).value)
            err = _rel(dc.numerical_grad(f, z2), g[x])
            if name == "L_D":
                err = max([err] + [_rel(dc.numerical_grad(f, a), g[p]) for p, a in zip(leaves, D.arrays())])
            worst[name] = max(worst[name], err)
        X = generate(rng.normal(size=(2, 4, 4)), gen)
        codes = rng.normal(size=(2, 16))
        node = dc.param(codes.copy())
        g = dc.backward(inversion_objective(node, X, gen), [node])[node]
        num = dc.numerical_grad(lambda: float(inversion_objective(dc.const(codes), X, gen).value), codes)
        worst["inversion"] = max(worst["inversion"], _rel(num, g))
    elapsed = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-4 and elapsed < 30
    detail = " ".join(f"{k}={v:.1e}" for k, v in worst.items())
    verdict(1, ok, f"max rel err {detail}; {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 2


def test_criterion_2_mechanism_statistics(verdict):
    t0 = time.perf_counter()
    x = laplace_noise(1_000_000, 1.0, np.random.default_rng(5))
    mean, var = float(x.mean()), float(x.var())
    p = float(stats.kstest(x, stats.laplace(scale=1.0).cdf).pvalue)
    cfg = ChannelConfig(10.0)
    n = transmit(np.zeros(1_000_000, dtype=complex), cfg, np.random.default_rng(1))
    nvar = float(np.mean(np.abs(n) ** 2))
    elapsed = time.perf_counter() - t0
    ok = -0.02 < mean < 0.02 and 1.9 <= var <= 2.1 and p > 0.01 and abs(nvar / cfg.noise_var - 1) <= 0.02
    ok = ok and elapsed < 60
    verdict(2, ok, f"laplace mean={mean:.4f} var={var:.4f} ks_p={p:.3f}; awgn var={nvar:.5f} vs {cfg.noise_var}; {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 3


def test_criterion_3_sensitivity_and_clipping(verdict):
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(1000):
        a, b = np.sort(rng.normal(scale=5, size=2))
        n = int(rng.integers(1, 1000))
        brute = float(np.linalg.norm(b * np.ones(n) - a * np.ones(n)))
        worst = max(worst, abs(sensitivity(ClipBounds(a, b), n) - brute))
    gen = ToyGenerator.create()
    fit = synth_dataset(gen, 2000, 5, np.random.default_rng(10)).latents
    fresh = synth_dataset(gen, 2000, 5, np.random.default_rng(11)).latents.reshape(-1)[:100_000]
    frac = float(np.mean(clip(fresh, fit_clip_bounds(fit)) != fresh))
    ok = worst <= 1e-12 and 0.005 <= frac <= 0.015
    verdict(3, ok, f"max |sens - brute|={worst:.1e}; clipped fraction={frac:.4f}")
    assert ok


# ---------------------------------------------------------------- 4


def test_criterion_4_inversion(verdict):
    t0 = time.perf_counter()
    gen = ToyGenerator.create()
    rng = np.random.default_rng(4)
    Z0 = rng.normal(size=(100, gen.K, gen.D))
    X = generate(Z0, gen)
    Z = invert(X, gen, init=Z0 + 0.5 * rng.normal(size=Z0.shape))
    mse = np.mean((generate(Z, gen) - X) ** 2, axis=1)
    elapsed = time.perf_counter() - t0
    ok = bool(np.all(mse < 1e-6)) and elapsed < 60
    verdict(4, ok, f"worst obs MSE={mse.max():.2e} over 100 codes; {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 5


def test_criterion_5_basic_trends(basic_run, verdict):
    cfg, _, rows, cpu = basic_run
    eps = sorted(cfg.epsilons)
    top = eps[len(eps) // 2 :]
    bob_z = pick(rows, "proposed", "bob", "latent_mse", snr=20.0)
    direct_z = pick(rows, "direct", "bob", "latent_mse", snr=20.0)
    ratios = [bob_z[e] / direct_z[e] for e in top]
    a = max(ratios) <= 1.5
    eve_x = pick(rows, "proposed", "eve", "obs_mse", snr=20.0)
    bob_x = pick(rows, "proposed", "bob", "obs_mse", snr=20.0)
    gap = eve_x[eps[0]] / bob_x[eps[0]]
    b = gap >= 3.0
    rho = float(stats.spearmanr(eps, [eve_x[e] for e in eps])[0])
    c = rho <= -0.8
    curve = pick(rows, "proposed", "bob", "obs_mse", eps=cfg.mid_epsilon)
    snr_err = [curve[s] for s in sorted(curve)]
    d = all(y < x for x, y in zip(snr_err, snr_err[1:]))
    ok = a and b and c and d and cpu < 600
    verdict(
        5,
        ok,
        f"(a) max bob/direct={max(ratios):.3f} (b) eve/bob={gap:.1f} (c) rho={rho:.3f} "
        f"(d) bob vs snr {[round(v, 4) for v in snr_err]}; cpu {cpu:.0f}s",
    )
    assert ok


# ---------------------------------------------------------------- 6


def test_criterion_6_stronger_threat(tmp_path, verdict):
    mid = ExperimentConfig().mid_epsilon
    cfg = ExperimentConfig(out_dir=str(tmp_path), threat="stronger", epsilons=(mid,), schemes=("proposed",))
    out = run_pipeline(cfg)
    hist = [r for r in read_rows(out / "history.csv") if r["stage"] == "eve"]
    initial = float(hist[0]["receiver_mse"])
    final = float(hist[-1]["receiver_mse"])
    decreases = final < initial
    rows = read_rows(out / "results.csv")
    eve = pick(rows, "proposed", "eve", "obs_mse", eps=mid)
    bob = pick(rows, "proposed", "bob", "obs_mse", eps=mid)
    ratios = {s: eve[s] / bob[s] for s in sorted(bob)}
    ok = decreases and all(r >= 2.0 for r in ratios.values())
    shown = " ".join(f"{s:g}dB:{r:.2f}" for s, r in ratios.items())
    verdict(6, ok, f"eve stage-2 loss {initial:.3f}->{final:.3f}; eve/bob at eps={mid:g}: {shown}")
    assert ok


# ---------------------------------------------------------------- 7


def test_criterion_7_baseline_separation(basic_run, verdict):
    cfg, _, rows, _ = basic_run
    lo, hi = min(cfg.epsilons), max(cfg.epsilons)
    trad = pick(rows, "traditional_dp", "bob", "obs_mse", snr=20.0)[lo]
    prop = pick(rows, "proposed", "bob", "obs_mse", snr=20.0)[lo]
    trad_eve = pick(rows, "traditional_dp", "eve", "privacy_rate", snr=20.0)[hi]
    prop_eve = pick(rows, "proposed", "eve", "privacy_rate", snr=20.0)[hi]
    ok = trad / prop >= 5.0 and trad_eve < prop_eve
    verdict(
        7,
        ok,
        f"bob trad/proposed at eps={lo:g}: {trad / prop:.0f}x; eve privacy at eps={hi:g}: "
        f"trad {trad_eve:.3f} vs proposed {prop_eve:.3f}",
    )
    assert ok


# ---------------------------------------------------------------- 8


def test_criterion_8_resemblance(basic_run, verdict):
    cfg, out, _, _ = basic_run
    state = cli.build_sweep_state(cfg, out / "checkpoint.npz")
    spec = state.bundles[0].spec
    # held-out identities, never seen in training
    probes = synth_dataset(state.gen, 800, 5, np.random.default_rng(77), first_identity=10**6, shared_jitter=cfg.shared_jitter)
    Zp, _ = split(clip(probes.latents, state.bundles[0].bounds), spec)
    lines, null_ok, cmp_ok, n_cmp = [], True, True, 0
    for ei, (eps, bundle) in enumerate(zip(cfg.epsilons, state.bundles)):
        ref = bundle.models.discriminator.seed
        seed = 10_000 + ei
        rng = np.random.default_rng(seed)
        null = resemblance_auc(lambda z: laplace_perturb(z, bundle.mech, rng), bundle.mech, Zp, seed, reference_seed=ref)
        prot = resemblance_auc(bundle.models.protection, bundle.mech, Zp, seed, reference_seed=ref)
        raw = resemblance_auc(lambda z: z, bundle.mech, Zp, seed, reference_seed=ref)
        null_ok &= 0.45 <= null <= 0.55
        if raw > 0.9:
            n_cmp += 1
            cmp_ok &= prot < raw
        lines.append(f"eps={eps:g}: null={null:.3f} protect={prot:.3f} raw={raw:.3f}")
    ok = null_ok and cmp_ok and n_cmp > 0
    verdict(8, ok, "; ".join(lines))
    assert ok


# ---------------------------------------------------------------- 9

SMALL = """\
epsilons = 1, 100, 2000
snrs_db = 0, 20
epochs = 4
eve_epochs = 2
train_identities = 60
test_identities = 20
per_identity = 4
threat = stronger
"""


def test_criterion_9_reproducibility(tmp_path, verdict):
    base = parse_config(SMALL)
    outs = [run_pipeline(base.with_overrides(out_dir=str(tmp_path / name))) for name in ("a", "b")]
    names = ("train.txt", "test.txt", "history.csv", "results.csv", "checkpoint.npz")
    same = {n: (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes() for n in names}
    ok = all(same.values())
    verdict(9, ok, " ".join(f"{n}={'identical' if s else 'DIFFERENT'}" for n, s in same.items()))
    assert ok
