#!/usr/bin/env python3
"""Resemblance AUCs for every budget in a trained checkpoint.

For each epsilon, prints the AUC of a fresh discriminator on three pairs:
genuine Laplace against genuine Laplace (null), Laplace against the
protection net, and Laplace against unperturbed codes.
"""

import argparse
from pathlib import Path

import numpy as np

from wiretap_dp import cli
from wiretap_dp.config import load_config
from wiretap_dp.dpmech import clip, laplace_perturb
from wiretap_dp.metrics import resemblance_auc
from wiretap_dp.toygen import split, synth_dataset


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--config")
    p.add_argument("--out", default="out", help="run directory holding checkpoint.npz")
    p.add_argument("--probes", type=int, default=800, help="held-out identities (5 records each)")
    args = p.parse_args()
    cfg = load_config(args.config).with_overrides(out_dir=args.out)
    state = cli.build_sweep_state(cfg, Path(args.out) / "checkpoint.npz")
    b0 = state.bundles[0]
    data = synth_dataset(
        state.gen, args.probes, 5, np.random.default_rng(77), first_identity=10**6, shared_jitter=cfg.shared_jitter
    )
    Zp, _ = split(clip(data.latents, b0.bounds), b0.spec)
    print("epsilon,null,protection,unperturbed")
    for ei, (eps, b) in enumerate(zip(cfg.epsilons, state.bundles)):
        seed, ref = 10_000 + ei, b.models.discriminator.seed
        rng = np.random.default_rng(seed)
        null = resemblance_auc(lambda z: laplace_perturb(z, b.mech, rng), b.mech, Zp, seed, reference_seed=ref)
        prot = resemblance_auc(b.models.protection, b.mech, Zp, seed, reference_seed=ref)
        raw = resemblance_auc(lambda z: z, b.mech, Zp, seed, reference_seed=ref)
        print(f"{eps:g},{null:.3f},{prot:.3f},{raw:.3f}")


if __name__ == "__main__":
    main()
