import json

import pytest

from phibp.tools.recovery_study import central_interval, main, summarize_study


def test_central_interval():
    lower, upper = central_interval(list(range(101)))
    assert lower == pytest.approx(2.5)
    assert upper == pytest.approx(97.5)


def test_summarize_study_counts():
    rows = [
        {
            "gg": {"converged": True, "covered": {"alpha_0": True, "theta_0": True}, "loglik": -10.0, "ks": 0.1, "bray_curtis": 0.3},
            "gamma": {"loglik": -12.0, "ks": 0.2, "bray_curtis": 0.4},
        },
        {
            "gg": {"converged": False, "covered": {"alpha_0": True, "theta_0": False}, "loglik": -15.0, "ks": None, "bray_curtis": 0.5},
            "gamma": {"loglik": -11.0, "ks": 0.2, "bray_curtis": 0.4},
        },
    ]
    summary = summarize_study(rows)
    assert summary == {
        "replicates": 2,
        "gg_converged": 1,
        "gg_covers_truth": 1,
        "gg_better_loglik": 1,
        "gg_lower_ks": 1,
        "gamma_higher_beta": 1,
    }


@pytest.mark.slow
def test_reduced_study_runs(tmp_path):
    argv = [
        "--out", str(tmp_path),
        "--replicates", "1",
        "--samples-mean", "5",
        "--test-samples", "2",
        "--chains", "2",
        "--steps", "40",
        "--burnin", "20",
        "--thin", "5",
        "--max-draws", "3",
    ]
    result = main(argv)
    written = json.loads((tmp_path / "study_summary.json").read_text())
    assert written["summary"] == result["summary"]
    assert written["summary"]["replicates"] == 1
    replicate = written["replicates"][0]
    assert set(replicate) >= {"gg", "gamma", "species"}
    assert set(replicate["gg"]["covered"]) == {"alpha_0", "theta_0"}
