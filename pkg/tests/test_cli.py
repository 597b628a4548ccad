import csv
import json

import numpy as np
import pytest

from cubethin import cli
from cubethin.chainio import ingest_chain, write_chain
from cubethin.control_variates import Chain


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def chain_file(tmp_path_factory):
    d = tmp_path_factory.mktemp("chain")
    assert cli.main(["simulate", "--dim", "2", "-N", "3000", "--rho", "0.5", "--out", str(d), "--seed", "1"]) == 0
    return d / "chain.csv"


def run(*args):
    return cli.main([str(a) for a in args])


# ---- simulate / config ------------------------------------------------------------------


def test_simulate_kinds(tmp_path):
    assert run("simulate", "--kind", "truncnorm-gibbs", "--dim", "3", "-N", "500", "--out", tmp_path) == 0
    ch = ingest_chain(tmp_path / "chain.csv")
    assert ch.N == 500 and ch.d == 3 and not ch.has_scores and ch.states.min() >= 0
    target = json.loads((tmp_path / "target.json").read_text())
    assert len(target["mu"]) == 3
    assert run("simulate", "--binary", "-N", "100", "--dim", "2", "--out", tmp_path) == 0
    assert ingest_chain(tmp_path / "chain.bin").has_scores


def test_config_file_and_flag_precedence(tmp_path):
    cfgfile = tmp_path / "cfg.json"
    cfgfile.write_text(json.dumps({"M": 7, "seed": 3, "method": "thin"}))
    args = cli.build_parser().parse_args(["thin", "--config", str(cfgfile), "-M", "9"])
    cfg = cli.load_config(args)
    assert (cfg.M, cfg.seed, cfg.methods, cfg.burnin) == (9, 3, ("thin",), 0)


def test_config_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"M": 5, "colour": 1}')
    assert run("thin", "--config", bad, "--input", "x") == 1
    assert "colour" in capsys.readouterr().err
    bad.write_text("{not json")
    assert run("thin", "--config", bad) == 1
    assert "bad.json:1" in capsys.readouterr().err


def test_invalid_flags(chain_file, tmp_path, capsys):
    assert run("thin", "--input", chain_file, "-M", "0", "--out", tmp_path) == 1
    assert "-M" in capsys.readouterr().err
    assert run("thin", "--input", chain_file, "--method", "magic", "--out", tmp_path) == 1
    assert "magic" in capsys.readouterr().err
    assert run("metrics", "--input", chain_file, "--metrics", "ksd,foo", "--out", tmp_path) == 1
    assert run("thin", "--input", chain_file, "--burnin", "5000", "--out", tmp_path) == 1
    assert run("thin", "--out", tmp_path) == 1
    assert "--input" in capsys.readouterr().err


def test_missing_input_exit_code(tmp_path, capsys):
    assert run("thin", "--input", tmp_path / "absent.csv", "--out", tmp_path) == 1
    assert "absent.csv" in capsys.readouterr().err


# ---- weights ------------------------------------------------------------------------------


def _weights(tmp_path, offset, seed=5):
    d = tmp_path / f"w{offset}"
    run("simulate", "--dim", "2", "-N", "4000", "--rho", "0.9", "--offset", offset, "--seed", seed, "--out", d)
    assert run("weights", "--input", d / "chain.csv", "--out", d) == 0
    rows = read_csv(d / "weights.csv")
    return np.array([float(r["weight"]) for r in rows])


def test_weights_diagnostic(tmp_path):
    w0 = _weights(tmp_path, 0.0)
    assert w0.size == 4000 and w0.sum() == pytest.approx(1.0)
    far = _weights(tmp_path, 8.0)
    n = w0.size
    # stationary start: first decile weighted like the bulk
    assert abs(w0[: n // 10].mean() * n - 1.0) < 0.2
    # start deep in the tail: early states are down-weighted
    assert far[: n // 10].mean() < far[n // 10 :].mean()
    assert far[:5].mean() < 0.5 * far[n // 10 :].mean()
    assert far[:5].min() < 0
    assert far[:20].mean() < w0[:20].mean()


def test_weights_require_cv_method(chain_file, tmp_path):
    assert run("weights", "--input", chain_file, "--method", "thin", "--out", tmp_path) == 1


def test_weights_burnin_offsets_indices(chain_file, tmp_path):
    assert run("weights", "--input", chain_file, "--burnin", "100", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "weights.csv")
    assert len(rows) == 2900 and rows[0]["index"] == "100"


# ---- thin ------------------------------------------------------------------------------------


def test_thin_standard(tmp_path):
    p = tmp_path / "big.csv"
    write_chain(Chain(np.arange(100_000.0)[:, None]), p)
    assert run("thin", "--input", p, "--method", "thin", "-M", "100", "--out", tmp_path) == 0
    rows = read_csv(tmp_path / "subsample.csv")
    assert [int(r["index"]) for r in rows] == list(range(0, 100_000, 1000))
    assert {r["sign"] for r in rows} == {"1"}
    assert {float(r["magnitude"]) for r in rows} == {0.01}


def test_thin_cube_full_balances(chain_file, tmp_path):
    assert run("thin", "--input", chain_file, "--method", "cube-full", "-M", "100", "--out", tmp_path, "--seed", "2") == 0
    rows = read_csv(tmp_path / "subsample.csv")
    assert len(rows) == 100
    summary = read_csv(tmp_path / "thin_summary.csv")[0]
    assert summary["seed"] == "2" and summary["M"] == "100"
    ch = ingest_chain(chain_file)
    from cubethin import control_variates as cvm

    h = cvm.score_cv_full(ch).values
    idx = np.array([int(r["index"]) for r in rows])
    sg = np.array([int(r["sign"]) for r in rows])
    resid = np.abs(sg @ h[idx]) / (1 + np.abs(h).max(axis=0))
    assert resid.max() == pytest.approx(float(summary["max_cv_residual"]), rel=1e-9, abs=1e-15)
    if summary["landed"] == "0":
        assert resid.max() <= 1e-8


def test_thin_byte_identical_and_workers(chain_file, tmp_path):
    outs = []
    for i, workers in enumerate((1, 1, 3)):
        d = tmp_path / f"o{i}"
        args = ["thin", "--input", chain_file, "--method", "cube-full,cube-diagonal,thin", "--replicates", "4"]
        assert run(*args, "-M", "30", "--out", d, "--workers", workers) == 0
        outs.append(((d / "subsample.csv").read_bytes(), (d / "thin_summary.csv").read_bytes()))
    assert outs[0] == outs[1] == outs[2]
    rows = read_csv(tmp_path / "o0" / "thin_summary.csv")
    assert [(r["method"], r["replicate"]) for r in rows] == [
        (m, str(r)) for m in ("cube-full", "cube-diagonal", "thin") for r in range(4)
    ]


def test_thin_seed_changes_cube_output(chain_file, tmp_path):
    for s in (0, 1):
        assert run("thin", "--input", chain_file, "-M", "30", "--seed", s, "--out", tmp_path / str(s)) == 0
    a = (tmp_path / "0" / "subsample.csv").read_bytes()
    b = (tmp_path / "1" / "subsample.csv").read_bytes()
    assert a != b


def test_thin_cube_gibbs(tmp_path):
    assert run("simulate", "--kind", "truncnorm-gibbs", "--dim", "3", "-N", "2000", "--out", tmp_path) == 0
    args = ["thin", "--input", tmp_path / "chain.csv", "--method", "cube-gibbs", "-M", "40", "--out", tmp_path]
    assert run(*args) == 1  # no target given
    assert run(*args, "--target", tmp_path / "target.json") == 0
    assert len(read_csv(tmp_path / "subsample.csv")) == 40


def test_thin_stein(chain_file, tmp_path):
    assert run("thin", "--input", chain_file, "--method", "stein-greedy", "-M", "10", "--out", tmp_path) == 0
    assert len(read_csv(tmp_path / "subsample.csv")) == 10


# ---- metrics / compare -----------------------------------------------------------------------


def test_metrics_rows_and_determinism(chain_file, tmp_path):
    for i in range(2):
        args = ["metrics", "--input", chain_file, "--method", "cube-full,thin", "--replicates", "3", "-M", "50"]
        assert run(*args, "--out", tmp_path / str(i), "--ref-max", "1000") == 0
    a = (tmp_path / "0" / "metrics.csv").read_bytes()
    assert a == (tmp_path / "1" / "metrics.csv").read_bytes()
    rows = read_csv(tmp_path / "0" / "metrics.csv")
    assert len(rows) == 6
    assert all(float(r["ksd"]) >= 0 and float(r["star_discrepancy"]) >= 0 for r in rows)


def test_metrics_subsample_against_itself(tmp_path):
    X = np.random.default_rng(0).normal(size=(50, 2))
    write_chain(Chain(X, -X), tmp_path / "c.csv")
    sub = tmp_path / "sub.csv"
    sub.write_text("method,replicate,index,sign,magnitude\n" + "".join(f"all,0,{i},1,0.02\n" for i in range(50)))
    assert run("metrics", "--input", tmp_path / "c.csv", "--subsample", sub, "--metrics", "ed,star", "--out", tmp_path) == 0
    row = read_csv(tmp_path / "metrics.csv")[0]
    assert abs(float(row["energy_distance"])) <= 1e-12
    assert float(row["star_discrepancy"]) <= 1e-12
    assert row["ksd"] == ""


def test_metrics_subsample_errors(chain_file, tmp_path):
    sub = tmp_path / "sub.csv"
    sub.write_text("method,replicate,index,sign,magnitude\nx,0,999999,1,1\n")
    assert run("metrics", "--input", chain_file, "--subsample", sub, "--out", tmp_path) == 1
    sub.write_text("method,replicate,index\n")
    assert run("metrics", "--input", chain_file, "--subsample", sub, "--out", tmp_path) == 1


def test_metrics_ksd_needs_scores(tmp_path, capsys):
    write_chain(Chain(np.random.default_rng(1).normal(size=(30, 1))), tmp_path / "c.csv")
    assert run("metrics", "--input", tmp_path / "c.csv", "--method", "thin", "-M", "5", "--out", tmp_path) == 1
    assert "scores" in capsys.readouterr().err
    args = ["metrics", "--input", tmp_path / "c.csv", "--method", "thin", "-M", "5", "--metrics", "ed", "--out", tmp_path]
    assert run(*args) == 0


def test_compare_methods(chain_file, tmp_path):
    assert run("compare", "--input", chain_file, "-M", "20", "--replicates", "2", "--out", tmp_path, "--ref-max", "500") == 0
    methods = [r["method"] for r in read_csv(tmp_path / "metrics.csv")]
    assert methods == [m for m in ("cube-full", "cube-diagonal", "thin", "stein-greedy") for _ in range(2)]


# ---- experiment ---------------------------------------------------------------------------------


def test_experiment_schema_and_determinism(tmp_path):
    args = ["experiment-truncnorm", "--dim", "3", "-N", "2000", "-M", "20", "--replicates", "3"]
    assert run(*args, "--out", tmp_path / "a") == 0
    assert run(*args, "--out", tmp_path / "b", "--workers", "2") == 0
    a = (tmp_path / "a" / "experiment.csv").read_bytes()
    assert a == (tmp_path / "b" / "experiment.csv").read_bytes()
    rows = read_csv(tmp_path / "a" / "experiment.csv")
    assert list(rows[0]) == ["replicate", "component", "estimator", "value"]
    assert len(rows) == 4 * 3 * 3
    assert {r["estimator"] for r in rows} == set(cli.ESTIMATORS)
    assert json.loads((tmp_path / "a" / "target.json").read_text())["Sigma"]


def test_experiment_invalid(tmp_path):
    assert run("experiment-truncnorm", "-N", "50", "-M", "50", "--out", tmp_path) == 1


def test_stream_independence():
    a = cli.stream(0, 0, 1).random(4)
    assert np.array_equal(a, cli.stream(0, 0, 1).random(4))
    assert not np.array_equal(a, cli.stream(0, 0, 2).random(4))
    assert not np.array_equal(a, cli.stream(1, 0, 1).random(4))
