import json

import pandas as pd
import pytest

from phibp.cli import RUNTIME_ERROR, USAGE_ERROR, build_parser, main

CONFIG = {
    "seed": 5,
    "simulation": {
        "base": {"alpha": 0.5, "theta": 8.0},
        "groups": [{"alpha": 0.3, "theta": 1.0}, {"alpha": 0.6, "theta": 2.0}],
        "samples": [2],
        "test_samples": [1],
    },
    "chains": {"chains": 2, "steps": 30, "burn_in": 10, "thin": 5, "delta": 0.3},
    "prediction": {"max_draws": 3, "n_augment": 1},
}


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(CONFIG))
    return path


def read_manifest(directory):
    return json.loads((directory / "manifest.json").read_text())


def test_usage_errors_exit_with_two(tmp_path, capsys):
    assert main([]) == USAGE_ERROR
    assert main(["fit", "--out", str(tmp_path)]) == USAGE_ERROR
    assert main(["fit", "--counts", "c.csv", "--out", str(tmp_path), "--prior", "beta"]) == USAGE_ERROR
    assert main(["--help"]) == 0


def test_bad_config_exits_with_two(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"chains": {"thin": 0}}))
    assert main(["simulate", "--config", str(path), "--out", str(tmp_path / "out")]) == USAGE_ERROR
    assert "configuration error" in capsys.readouterr().err


def test_missing_counts_exit_with_one(tmp_path, capsys):
    code = main(["fit", "--counts", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "out")])
    assert code == RUNTIME_ERROR
    assert "phibp fit" in capsys.readouterr().err


def test_malformed_chain_metadata_exits_with_one(tmp_path, config_file, capsys):
    sim, fitted = tmp_path / "sim", tmp_path / "fit"
    common = ["--config", str(config_file)]
    counts = ["--counts", str(sim / "counts.csv")]
    assert main(["simulate", *common, "--out", str(sim)]) == 0
    assert main(["fit", *common, *counts, "--out", str(fitted)]) == 0
    (fitted / "chain_meta.json").write_text("{}")
    capsys.readouterr()

    code = main(["posterior", *common, *counts, "--chains-dir", str(fitted), "--out", str(tmp_path / "post")])
    assert code == RUNTIME_ERROR
    err = capsys.readouterr().err
    assert "phibp posterior: unexpected KeyError" in err
    assert "Traceback" not in err


def test_unexpected_errors_exit_with_one(tmp_path, monkeypatch, capsys):
    def broken(args):
        raise KeyError("groups")

    monkeypatch.setattr("phibp.cli.run", broken)
    assert main(["diagnose", "--chains-dir", str(tmp_path), "--out", str(tmp_path / "out")]) == RUNTIME_ERROR
    err = capsys.readouterr().err
    assert "KeyError" in err
    assert len(err.strip().splitlines()) == 1


def test_parser_overrides():
    args = build_parser().parse_args(
        ["fit", "--counts", "c.csv", "--out", "o", "--steps", "50", "--burnin", "10", "--seed", "3"]
    )
    assert args.steps == 50
    assert args.burnin == 10
    assert args.seed == 3


def test_pipeline_end_to_end(tmp_path, config_file):
    sim, fitted, post, div, pred, ppc, diag = (tmp_path / d for d in ("sim", "fit", "post", "div", "pred", "ppc", "diag"))
    common = ["--config", str(config_file)]

    assert main(["simulate", *common, "--out", str(sim)]) == 0
    manifest = read_manifest(sim)
    assert manifest["command"] == "simulate"
    assert manifest["status"] == "complete"
    assert manifest["seed"] == 5
    assert set(manifest["outputs"]) >= {"counts.csv", "truth.json", "train.csv", "test.csv"}
    assert "numpy" in manifest["versions"]

    train = ["--counts", str(sim / "train.csv"), "--samples", str(sim / "train_samples.csv")]
    test = ["--test", str(sim / "test.csv"), "--test-samples", str(sim / "test_samples.csv")]

    assert main(["fit", *common, *train, "--out", str(fitted)]) == 0
    chains = pd.read_csv(fitted / "chains.csv")
    assert {"chain", "step", "alpha_0", "theta_0", "log_joint"} <= set(chains.columns)
    assert (fitted / "latents.npy").exists()
    assert "rhat" in json.loads((fitted / "diagnostics.json").read_text())

    assert main(["diagnose", "--chains-dir", str(fitted), "--out", str(diag)]) == 0
    assert (diag / "diagnostics.json").read_bytes() == (fitted / "diagnostics.json").read_bytes()

    assert main(["posterior", *common, *train, "--chains-dir", str(fitted), "--out", str(post)]) == 0
    assert main(["diversity", "--posterior", str(post / "posterior.csv"), "--out", str(div)]) == 0
    assert {"alpha.csv", "beta.csv", "diversity_summary.json"} <= set(read_manifest(div)["outputs"])

    assert main(["predict", *common, *train, *test, "--chains-dir", str(fitted), "--out", str(pred)]) == 0
    loglik = pd.read_csv(pred / "loglik.csv")
    assert list(loglik.columns) == ["chain", "step", "novel", "existing", "total"]
    assert len(loglik) == 3
    assert {"predictive.csv", "unseen_entropy.csv", "predict_summary.json"} <= set(read_manifest(pred)["outputs"])

    assert main(["ppc", *common, *train, *test, "--chains-dir", str(fitted), "--out", str(ppc)]) == 0
    assert list(pd.read_csv(ppc / "ppc.csv").columns) == ["chain", "step", "group", "ks"]


def test_predict_needs_new_samples(tmp_path, config_file):
    sim, fitted = tmp_path / "sim", tmp_path / "fit"
    common = ["--config", str(config_file)]
    train = ["--counts", str(sim / "train.csv"), "--samples", str(sim / "train_samples.csv")]
    assert main(["simulate", *common, "--out", str(sim)]) == 0
    assert main(["fit", *common, *train, "--out", str(fitted)]) == 0

    code = main(["predict", *common, *train, "--chains-dir", str(fitted), "--out", str(tmp_path / "p")])
    assert code == USAGE_ERROR
    assert not (tmp_path / "p" / "predictive.csv").exists()

    code = main(["predict", *common, *train, "--chains-dir", str(fitted), "--m", "2", "--out", str(tmp_path / "q")])
    assert code == 0
    assert not (tmp_path / "q" / "loglik.csv").exists()


def test_same_seed_gives_identical_outputs(tmp_path, config_file):
    runs = []
    for name in ("a", "b"):
        sim, fitted = tmp_path / name / "sim", tmp_path / name / "fit"
        common = ["--config", str(config_file), "--seed", "11"]
        assert main(["simulate", *common, "--out", str(sim)]) == 0
        assert main(["fit", *common, "--counts", str(sim / "counts.csv"), "--out", str(fitted)]) == 0
        runs.append((sim, fitted))

    (sim_a, fit_a), (sim_b, fit_b) = runs
    for name in ("counts.csv", "truth.json", "train.csv", "test.csv"):
        assert (sim_a / name).read_bytes() == (sim_b / name).read_bytes()
    for name in ("chains.csv", "chain_meta.json", "latents.npy"):
        assert (fit_a / name).read_bytes() == (fit_b / name).read_bytes()
    assert read_manifest(sim_a)["seed"] == 11
