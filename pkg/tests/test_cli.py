import csv
from pathlib import Path

import numpy as np
import pytest

from wiretap_dp import cli
from wiretap_dp.config import parse_config
from wiretap_dp.shield import load_models
from wiretap_dp.toygen import read_dataset

SMALL = """\
epsilons = 1, 100, 2000
snrs_db = 0, 20
epochs = 3
eve_epochs = 2
train_identities = 40
test_identities = 10
per_identity = 4
"""


def write_cfg(tmp_path, extra=""):
    p = tmp_path / "exp.cfg"
    p.write_text(SMALL + extra)
    return p


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("run")
    cfg = write_cfg(tmp)
    out = tmp / "o"
    for cmd in ("gendata", "train", "sweep", "report"):
        assert cli.run([cmd, "--config", str(cfg), "--out", str(out)]) == 0
    return tmp, cfg, out


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_gendata_deterministic_and_disjoint(tmp_path):
    cfg = write_cfg(tmp_path)
    assert cli.run(["gendata", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert cli.run(["gendata", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    for name in ("train.txt", "test.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    train = read_dataset(tmp_path / "a" / "train.txt")
    test = read_dataset(tmp_path / "a" / "test.txt")
    assert len(train) == 40 * 4 and len(test) == 10 * 4
    assert not set(train.identities) & set(test.identities)


def test_seed_flag_overrides(tmp_path):
    cfg = write_cfg(tmp_path)
    cli.run(["gendata", "--config", str(cfg), "--out", str(tmp_path / "a")])
    cli.run(["gendata", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "9"])
    assert (tmp_path / "a" / "train.txt").read_bytes() != (tmp_path / "b" / "train.txt").read_bytes()


def test_basic_checkpoint_has_no_eve(pipeline):
    _, _, out = pipeline
    nets, meta = load_models(out / "checkpoint.npz")
    assert not any(k.endswith("/eve") for k in nets)
    assert {"e0/protection", "e0/legit", "e0/discriminator", "e0/denoiser"} <= set(nets)
    assert meta["stages"] == ["adversarial"]


def test_history_has_one_row_per_epoch(pipeline):
    _, _, out = pipeline
    rows = read_rows(out / "history.csv")
    adv = [r for r in rows if r["stage"] == "adversarial"]
    assert len(adv) == 3 * 3
    assert set(rows[0]) == set(cli.HISTORY_COLUMNS)


def test_history_rerun_bit_exact(pipeline, tmp_path):
    _, cfg, out = pipeline
    other = tmp_path / "o"
    other.mkdir()
    for name in ("train.txt", "test.txt"):
        (other / name).write_bytes((out / name).read_bytes())
    assert cli.run(["train", "--config", str(cfg), "--out", str(other)]) == 0
    assert (other / "history.csv").read_bytes() == (out / "history.csv").read_bytes()
    assert (other / "checkpoint.npz").read_bytes() == (out / "checkpoint.npz").read_bytes()


def test_sweep_shape_and_columns(pipeline):
    _, _, out = pipeline
    text = (out / "results.csv").read_text()
    assert text.splitlines()[0] == ",".join(cli.RESULT_COLUMNS)
    rows = read_rows(out / "results.csv")
    assert len(rows) == 3 * 3 * 2 * 2


def test_direct_rows_ignore_epsilon(pipeline):
    _, _, out = pipeline
    rows = [r for r in read_rows(out / "results.csv") if r["scheme"] == "direct"]
    by_cell = {}
    for r in rows:
        key = (r["snr_db"], r["role"])
        vals = tuple(r[c] for c in cli.RESULT_COLUMNS if c != "epsilon")
        by_cell.setdefault(key, set()).add(vals)
    assert all(len(v) == 1 for v in by_cell.values())


def test_numbers_round_trip(pipeline):
    _, _, out = pipeline
    for r in read_rows(out / "results.csv"):
        for col in ("latent_mse", "obs_mse", "privacy_rate"):
            assert repr(float(r[col])) == r[col]


def test_cell_isolation(pipeline):
    _, cfg_path, out = pipeline
    cfg = parse_config(cfg_path.read_text()).with_overrides(out_dir=str(out))
    state = cli.build_sweep_state(cfg, out / "checkpoint.npz")
    rows = read_rows(out / "results.csv")
    redo = cli.evaluate_cell(state, "traditional_dp", 1, 1)
    for rec in redo:
        match = [
            r for r in rows
            if r["scheme"] == rec[0] and float(r["epsilon"]) == rec[2] and float(r["snr_db"]) == rec[3] and r["role"] == rec[4]
        ]
        assert [cli.fmt(v) for v in rec] == [match[0][c] for c in cli.RESULT_COLUMNS]


def test_parallel_sweep_matches_serial(pipeline, tmp_path):
    _, cfg, out = pipeline
    other = tmp_path / "o"
    other.mkdir()
    for name in ("train.txt", "test.txt", "checkpoint.npz"):
        (other / name).write_bytes((out / name).read_bytes())
    assert cli.run(["sweep", "--config", str(cfg), "--out", str(other), "--jobs", "2"]) == 0
    assert (other / "results.csv").read_bytes() == (out / "results.csv").read_bytes()


def test_report_partitions_rows(pipeline):
    _, _, out = pipeline
    n = len(read_rows(out / "results.csv"))
    for tag in ("eps", "snr"):
        for metric in ("latent_mse", "obs_mse", "privacy_rate"):
            rows = read_rows(out / f"{tag}_{metric}.csv")
            assert len(rows) == n
            keys = [(r["curve"], float(r["x"])) for r in rows]
            assert keys == sorted(keys)
            assert len(set(keys)) == n


def test_report_missing_column(pipeline, tmp_path, capsys):
    _, cfg, out = pipeline
    rows = read_rows(out / "results.csv")
    bad = tmp_path / "bad.csv"
    cols = [c for c in cli.RESULT_COLUMNS if c != "obs_mse_se"]
    with open(bad, "w", newline="") as fh:
        w = csv.DictWriter(fh, cols, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    code = cli.run(["report", str(bad), "--out", str(tmp_path / "r")])
    assert code == cli.EXIT_CONFIG
    assert "obs_mse_se" in capsys.readouterr().err


def test_stronger_checkpoint_has_both_stages(tmp_path):
    cfg = write_cfg(tmp_path, "threat = stronger\nschemes = proposed\nepsilons = 100\n".replace("epsilons = 100\n", ""))
    text = cfg.read_text().replace("epsilons = 1, 100, 2000", "epsilons = 100")
    cfg.write_text(text)
    out = tmp_path / "o"
    assert cli.run(["gendata", "--config", str(cfg), "--out", str(out)]) == 0
    assert cli.run(["train", "--config", str(cfg), "--out", str(out)]) == 0
    nets, meta = load_models(out / "checkpoint.npz")
    assert {"e0/protection", "e0/legit", "e0/eve"} <= set(nets)
    assert meta["stages"] == ["adversarial", "eve"]
    assert cli.run(["sweep", "--config", str(cfg), "--out", str(out)]) == 0
    rows = read_rows(out / "results.csv")
    assert {r["threat"] for r in rows} == {"stronger"}


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("no_such_key = 1\n")
    assert cli.run(["gendata", "--config", str(bad)]) == cli.EXIT_CONFIG
    cfg = write_cfg(tmp_path)
    assert cli.run(["train", "--config", str(cfg), "--out", str(tmp_path / "empty")]) == cli.EXIT_IO
    assert cli.run(["sweep", "--config", str(tmp_path / "missing.cfg")]) == cli.EXIT_IO


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(tmp_path):
    cfg = write_cfg(tmp_path, "lr = 1e9\noptimizer = sgd\nmomentum = 0\n")
    out = tmp_path / "o"
    assert cli.run(["gendata", "--config", str(cfg), "--out", str(out)]) == 0
    assert cli.run(["train", "--config", str(cfg), "--out", str(out)]) == cli.EXIT_DIVERGED
