import json
import subprocess
import sys

import numpy as np
import pytest

from quotamatch.cli import main
from quotamatch.market import _write_json, load_result, save_market


@pytest.fixture()
def example_files(tmp_path, example_market):
    spec, phi = example_market
    market = tmp_path / "market.json"
    surplus = tmp_path / "phi.json"
    save_market(spec, market)
    _write_json({"phi": [list(row) for row in phi.phi]}, surplus)
    return spec, market, surplus


def test_solve_eae_reproduces_reported_taxes(example_files, tmp_path, capsys):
    spec, market, surplus = example_files
    out = tmp_path / "result.json"
    code = main(["solve-eae", "--market", str(market), "--phi", str(surplus), "--out", str(out)])
    assert code == 0
    result = load_result(out, spec)
    assert result.taxes.w[0] == pytest.approx(0.5825, abs=0.005)
    assert result.taxes.w[1] == 0.0
    doc = json.loads(out.read_text())
    assert set(doc) == {"mu", "U", "V", "w", "diagnostics", "welfare"}
    assert doc["diagnostics"]["converged"] is True
    assert "location constant" in capsys.readouterr().out


def test_verify_passes_on_own_output(example_files, tmp_path, capsys):
    _, market, surplus = example_files
    out = tmp_path / "result.json"
    assert main(["solve-eae", "--market", str(market), "--phi", str(surplus), "--out", str(out)]) == 0
    code = main(["verify", "--market", str(market), "--result", str(out), "--phi", str(surplus)])
    assert code == 0
    printed = capsys.readouterr().out
    assert "population_residual" in printed and "passed" in printed


def test_verify_fails_on_tampered_result(example_files, tmp_path):
    _, market, surplus = example_files
    out = tmp_path / "result.json"
    main(["solve-eae", "--market", str(market), "--phi", str(surplus), "--out", str(out)])
    doc = json.loads(out.read_text())
    doc["w"]["z2"] = 1.0
    out.write_text(json.dumps(doc))
    assert main(["verify", "--market", str(market), "--result", str(out), "--phi", str(surplus)]) == 2


def test_solve_ae_with_taxes_file(example_files, tmp_path):
    spec, market, surplus = example_files
    taxes = tmp_path / "taxes.json"
    _write_json({"w": {"z1": 0.25, "z2": -0.1}}, taxes)
    out = tmp_path / "ae.json"
    code = main([
        "solve-ae", "--market", str(market), "--phi", str(surplus),
        "--taxes", str(taxes), "--out", str(out),
    ])
    assert code == 0
    result = load_result(out, spec)
    assert list(result.taxes.w) == [0.25, -0.1]


def test_estimate_round_trip(tmp_path):
    from quotamatch.ae import solve_ae
    from quotamatch.estimation import CovariateBasis, SurplusModel, surplus_from_covariates
    from quotamatch.market import MarketSpec

    spec = MarketSpec(
        ("x1", "x2"), ("y1", "y2"), ("z1", "z2"),
        np.array([0.6, 0.4]), np.array([0.5, 0.5]),
        {"y1": "z1", "y2": "z2"},
        np.array([np.inf, np.inf]), np.zeros(2),
    )
    c = CovariateBasis(np.stack([np.ones((2, 2)), np.array([[0.0, 1.0], [1.5, 0.5]])], axis=2))
    truth = SurplusModel(np.array([1.0, -0.5]))
    observed = solve_ae(spec, surplus_from_covariates(truth, c)).matching

    market = tmp_path / "market.json"
    save_market(spec, market)
    obs_path = tmp_path / "observed.json"
    _write_json(
        {
            "mu": {
                "matched": [list(r) for r in observed.matched],
                "unmatched_workers": list(observed.unmatched_workers),
                "unmatched_slots": list(observed.unmatched_slots),
            }
        },
        obs_path,
    )
    cov_path = tmp_path / "cov.json"
    _write_json({"S": 2, "c": [[list(cell) for cell in row] for row in c.c]}, cov_path)
    out = tmp_path / "fit.json"
    code = main([
        "estimate", "--market", str(market), "--observed", str(obs_path),
        "--covariates", str(cov_path), "--out", str(out),
    ])
    assert code == 0
    fit = json.loads(out.read_text())
    assert abs(fit["coefficients"][0] - 1.0) < 1e-3
    assert abs(fit["coefficients"][1] + 0.5) < 1e-3


def test_experiment_csv_shape_and_determinism(tmp_path):
    out1 = tmp_path / "a" / "panels.csv"
    out2 = tmp_path / "b" / "panels.csv"
    out1.parent.mkdir()
    out2.parent.mkdir()
    args = ["experiment", "--seeds", "2", "--floors", "0.1:0.4:0.15", "--seed", "5"]
    assert main(args + ["--out", str(out1)]) == 0
    assert main(args + ["--out", str(out2), "--jobs", "2"]) == 0
    assert out1.read_bytes() == out2.read_bytes()
    assert (out1.parent / "locus.csv").read_bytes() == (out2.parent / "locus.csv").read_bytes()
    lines = out1.read_text().splitlines()
    assert lines[0] == "floor,policy,metric,mean,stderr"
    # 3 floors x 5 policies x 5 metrics
    assert len(lines) == 1 + 3 * 5 * 5


def test_counterfactual_emits_rows(example_files, tmp_path, capsys):
    spec, market, surplus = example_files
    out = tmp_path / "policies.csv"
    code = main([
        "counterfactual", "--market", str(market), "--phi", str(surplus),
        "--floors", "0.05", "--urban-region", "z1",
        "--grid", "0.1:0.5:0.05", "--cap-grid", "0.1:0.3:0.05",
        "--tax-grid", "0:2:0.5", "--subsidy-grid=-0.2:0:0.1",
        "--out", str(out),
    ])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0].startswith("policy,floor,feasible,search_parameter,social_welfare")
    assert len(lines) == 1 + 4


def test_bench_writes_csv(tmp_path):
    out = tmp_path / "bench.csv"
    code = main([
        "bench", "--worker-types", "4", "--regions", "2", "--trials", "1",
        "--out", str(out),
    ])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "num_worker_types,num_regions,mean_seconds,converged"
    assert len(lines) == 2


def test_usage_errors_exit_one(tmp_path, capsys):
    assert main(["solve-eae", "--market", "missing.json", "--phi", "x", "--out", "y"]) == 1
    assert main(["no-such-command"]) == 1
    assert main(["solve-eae", "--bogus-flag", "1"]) == 1


def test_infeasible_market_exits_three(tmp_path, single_pair):
    # A floor this close to the saturation point needs a subsidy beyond the
    # admissible bracket, so the search reports infeasibility.
    market = tmp_path / "market.json"
    save_market(single_pair.with_quotas(lower={"z": 1.0 - 1e-15}), market)
    surplus = tmp_path / "phi.json"
    _write_json({"phi": [[0.0]]}, surplus)
    out = tmp_path / "r.json"
    code = main(["solve-eae", "--market", str(market), "--phi", str(surplus), "--out", str(out)])
    assert code == 3


def test_help_mentions_every_documented_flag():
    import quotamatch.cli as cli

    parser = cli.build_parser()
    txt = []
    for action in parser._subparsers._group_actions[0].choices.values():
        txt.append(action.format_help())
    blob = "\n".join(txt)
    for flag in (
        "--market", "--phi", "--taxes", "--observed", "--covariates", "--out",
        "--seed", "--jobs", "--tol-pop", "--tol-tax", "--tol-kkt", "--floors", "--grid",
    ):
        assert flag in blob, flag


def test_module_invocation(example_files, tmp_path):
    _, market, surplus = example_files
    out = tmp_path / "result.json"
    proc = subprocess.run(
        [sys.executable, "-m", "quotamatch", "solve-eae", "--market", str(market),
         "--phi", str(surplus), "--out", str(out)],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
