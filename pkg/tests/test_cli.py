"""End-to-end tests of the command-line workflows via CliRunner."""

import hashlib
import json

import pytest
from click.testing import CliRunner

from istlab.cli import main


def _exp_kernel(beta):
    return {"kind": "exponential", "death_rate": {"kind": "constant", "beta": beta}}


def _cfg(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(json.dumps(obj), encoding="utf-8")
    return str(path)


def _manifest(out_dir):
    return json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))


def _all_output(result):
    """stdout plus stderr, across click versions that split the two."""
    try:
        return result.output + result.stderr
    except (ValueError, AttributeError):
        return result.output


@pytest.fixture
def runner():
    return CliRunner()


SCALE_CFG = {
    "rate": {"kind": "constant", "beta": 1.0},
    "kernel": _exp_kernel(2.0),
    "T": 1.0,
}


def test_scale_writes_artifacts_and_manifest(runner, tmp_path):
    cfg = _cfg(tmp_path, "scale.json", SCALE_CFG)
    out = tmp_path / "run1"
    result = runner.invoke(main, ["scale", "--config", cfg, "--out", str(out)])
    assert result.exit_code == 0, result.output
    table = (out / "scale_table.csv").read_bytes()
    manifest = _manifest(out)
    assert manifest["command"] == "scale"
    assert manifest["format"] == "csv"
    assert manifest["config"]["seed"] == 0
    assert manifest["artifacts"]["scale_table.csv"] == hashlib.sha256(table).hexdigest()
    assert manifest["summary"]["T"] == 1.0


def test_scale_deterministic_and_manifest_rerun(runner, tmp_path):
    cfg = _cfg(tmp_path, "scale.json", SCALE_CFG)
    outs = [tmp_path / f"run{i}" for i in range(3)]
    for out in outs[:2]:
        assert runner.invoke(
            main, ["scale", "--config", cfg, "--out", str(out)]
        ).exit_code == 0
    h0 = _manifest(outs[0])["artifacts"]["scale_table.csv"]
    h1 = _manifest(outs[1])["artifacts"]["scale_table.csv"]
    assert h0 == h1
    # a manifest is itself a valid config for the same subcommand
    rerun = runner.invoke(
        main,
        ["scale", "--config", str(outs[0] / "manifest.json"), "--out", str(outs[2])],
    )
    assert rerun.exit_code == 0, rerun.output
    assert _manifest(outs[2])["artifacts"]["scale_table.csv"] == h0
    # but not for a different subcommand
    wrong = runner.invoke(
        main,
        ["tree", "--config", str(outs[0] / "manifest.json"), "--out", str(tmp_path / "w")],
    )
    assert wrong.exit_code == 2
    assert "manifest is for subcommand 'scale'" in wrong.output


def test_scale_json_format(runner, tmp_path):
    cfg = _cfg(tmp_path, "scale.json", SCALE_CFG)
    out = tmp_path / "run"
    result = runner.invoke(
        main, ["scale", "--config", cfg, "--out", str(out), "--format", "json"]
    )
    assert result.exit_code == 0, result.output
    payload = json.loads((out / "scale_table.json").read_text(encoding="utf-8"))
    assert payload["values"][0] == 1.0
    assert len(payload["grid"]) == len(payload["values"])


def test_config_schema_violation_exits_2(runner, tmp_path):
    bad = dict(SCALE_CFG)
    del bad["T"]
    cfg = _cfg(tmp_path, "bad.json", bad)
    result = runner.invoke(main, ["scale", "--config", cfg, "--out", str(tmp_path / "o")])
    assert result.exit_code == 2
    assert "config error at $" in result.output
    unreadable = tmp_path / "broken.json"
    unreadable.write_text("{not json", encoding="utf-8")
    result = runner.invoke(
        main, ["scale", "--config", str(unreadable), "--out", str(tmp_path / "o2")]
    )
    assert result.exit_code == 2
    assert "cannot read config" in result.output


def test_tree_csv_and_seed_override(runner, tmp_path):
    cfg = _cfg(
        tmp_path,
        "tree.json",
        {
            "rate": {"kind": "constant", "beta": 1.5},
            "kernel": _exp_kernel(1.0),
            "x0": 2.0,
            "truncation": 3.0,
            "n": 2,
        },
    )
    out0 = tmp_path / "seed0"
    out5 = tmp_path / "seed5"
    assert runner.invoke(
        main, ["tree", "--config", cfg, "--out", str(out0)]
    ).exit_code == 0
    assert runner.invoke(
        main, ["tree", "--config", cfg, "--out", str(out5), "--seed", "5"]
    ).exit_code == 0
    m0, m5 = _manifest(out0), _manifest(out5)
    assert sorted(m0["artifacts"]) == ["tree_000.csv", "tree_001.csv"]
    assert m0["config"]["seed"] == 0 and m5["config"]["seed"] == 5
    assert m0["artifacts"]["tree_000.csv"] != m5["artifacts"]["tree_000.csv"]
    assert m0["summary"]["mean_nodes"] >= 1.0


def test_tree_thread_count_does_not_change_artifacts(runner, tmp_path):
    cfg = _cfg(
        tmp_path,
        "tree.json",
        {
            "rate": {"kind": "constant", "beta": 1.5},
            "kernel": _exp_kernel(1.0),
            "x0": 2.0,
            "truncation": 3.0,
            "n": 3,
        },
    )
    out1 = tmp_path / "t1"
    out2 = tmp_path / "t2"
    assert runner.invoke(
        main, ["tree", "--config", cfg, "--out", str(out1), "--threads", "1"]
    ).exit_code == 0
    assert runner.invoke(
        main, ["tree", "--config", cfg, "--out", str(out2), "--threads", "2"]
    ).exit_code == 0
    assert _manifest(out1)["artifacts"] == _manifest(out2)["artifacts"]
    assert _manifest(out2)["threads"] == 2


def test_tree_json_format(runner, tmp_path):
    cfg = _cfg(
        tmp_path,
        "tree.json",
        {
            "rate": {"kind": "constant", "beta": 1.0},
            "kernel": _exp_kernel(1.0),
            "x0": 1.0,
            "truncation": 2.0,
        },
    )
    out = tmp_path / "run"
    result = runner.invoke(
        main, ["tree", "--config", cfg, "--out", str(out), "--format", "json"]
    )
    assert result.exit_code == 0, result.output
    payload = json.loads((out / "trees.json").read_text(encoding="utf-8"))
    assert len(payload) == 1
    root = payload[0]["nodes"][0]
    assert root["birth"] == 0.0 and root["death"] == 1.0


def test_contour_both_modes(runner, tmp_path):
    base = {
        "rate": {"kind": "constant", "beta": 1.0},
        "kernel": _exp_kernel(2.0),
        "x0": 1.0,
    }
    cfg_pdmp = _cfg(tmp_path, "pdmp.json", {**base, "mode": "pdmp", "horizon": 2.0})
    out_pdmp = tmp_path / "pdmp"
    result = runner.invoke(main, ["contour", "--config", cfg_pdmp, "--out", str(out_pdmp)])
    assert result.exit_code == 0, result.output
    assert (out_pdmp / "path.csv").exists()
    assert _manifest(out_pdmp)["summary"]["mode"] == "pdmp"

    cfg_tree = _cfg(tmp_path, "tree.json", {**base, "mode": "tree", "truncation": 2.0})
    out_tree = tmp_path / "tree"
    result = runner.invoke(
        main,
        ["contour", "--config", cfg_tree, "--out", str(out_tree), "--format", "json"],
    )
    assert result.exit_code == 0, result.output
    payload = json.loads((out_tree / "path.json").read_text(encoding="utf-8"))
    assert payload["x0"] == 1.0
    assert payload["absorption_time"] is not None
    assert _manifest(out_tree)["summary"]["absorbed"] is True


def test_population_with_histogram(runner, tmp_path):
    cfg = _cfg(
        tmp_path,
        "pop.json",
        {
            "rate": {"kind": "constant", "beta": 2.0},
            "kernel": _exp_kernel(1.0),
            "t0": 1.0,
            "t": 2.0,
            "N": 400,
        },
    )
    out = tmp_path / "run"
    result = runner.invoke(main, ["population", "--config", cfg, "--out", str(out)])
    assert result.exit_code == 0, result.output
    report = json.loads((out / "population.json").read_text(encoding="utf-8"))
    assert 0.0 < report["p0"] < 1.0 and 0.0 < report["q"] < 1.0
    assert report["mc"]["N"] == 400
    hist = (out / "population_hist.csv").read_text(encoding="utf-8")
    assert hist.startswith("k,observed,expected\n")


def test_classify_verdict(runner, tmp_path):
    cfg = _cfg(
        tmp_path,
        "cls.json",
        {"rate": {"kind": "constant", "beta": 0.5}, "kernel": _exp_kernel(1.0)},
    )
    out = tmp_path / "run"
    result = runner.invoke(main, ["classify", "--config", cfg, "--out", str(out)])
    assert result.exit_code == 0, result.output
    assert _manifest(out)["summary"]["verdict"] == "SUBCRITICAL"
    assert (out / "classify.json").exists()


def test_condition_without_validation_block(runner, tmp_path):
    cfg = _cfg(
        tmp_path,
        "cond.json",
        {
            "rate": {"kind": "constant", "beta": 2.0},
            "kernel": _exp_kernel(1.0),
            "event": "Ext",
            "T": 6.0,
        },
    )
    out = tmp_path / "run"
    result = runner.invoke(main, ["condition", "--config", cfg, "--out", str(out)])
    assert result.exit_code == 0, result.output
    text = (out / "conditioned.csv").read_text(encoding="utf-8")
    assert text.splitlines()[0].startswith("x,")
    assert _manifest(out)["summary"]["event"] == "Ext"


def test_scaling_command_small_run(runner, tmp_path):
    cfg = _cfg(
        tmp_path,
        "scaling.json",
        {
            "rate": {"kind": "constant", "beta": 2.0},
            "kernel": _exp_kernel(2.0),
            "c": 0.0,
            "x0": 1.0,
            "t": 0.2,
            "N": 200,
            "n_list": [1],
        },
    )
    out = tmp_path / "run"
    result = runner.invoke(main, ["scaling", "--config", cfg, "--out", str(out)])
    assert result.exit_code == 0, result.output
    payload = json.loads((out / "scaling.json").read_text(encoding="utf-8"))
    assert payload["ks_report"]["dimension"] == 1.0
    assert _manifest(out)["summary"]["assumption_passed"] is True


def test_nonconvergent_ladder_exits_3(runner, tmp_path):
    # critical pair: the extinction ladder increments decay like 1/T and
    # cannot reach the tolerance by T_max = 16
    cfg = _cfg(
        tmp_path,
        "ext.json",
        {
            "rate": {"kind": "constant", "beta": 1.0},
            "kernel": _exp_kernel(1.0),
            "t0": 1.0,
            "T_max": 16.0,
        },
    )
    result = runner.invoke(
        main, ["extinction", "--config", cfg, "--out", str(tmp_path / "run")]
    )
    assert result.exit_code == 3
    assert "error:" in result.output


def test_regime_refusal_exits_4(runner, tmp_path):
    # supercritical pair: length-tail estimation refuses to fit
    cfg = _cfg(
        tmp_path,
        "tails.json",
        {
            "rate": {"kind": "constant", "beta": 2.0},
            "kernel": _exp_kernel(1.0),
            "x0": 1.0,
            "T": 4.0,
            "N": 100,
            "thresholds": [1.0, 2.0],
        },
    )
    result = runner.invoke(
        main, ["tails", "--config", cfg, "--out", str(tmp_path / "run")]
    )
    assert result.exit_code == 4
    assert "error:" in result.output


def test_extinction_supercritical_value(runner, tmp_path):
    # dual pair (2, 1): extinction from t0 = 1 is exp(-1)
    cfg = _cfg(
        tmp_path,
        "ext.json",
        {
            "rate": {"kind": "constant", "beta": 2.0},
            "kernel": _exp_kernel(1.0),
            "t0": 1.0,
        },
    )
    out = tmp_path / "run"
    result = runner.invoke(main, ["extinction", "--config", cfg, "--out", str(out)])
    assert result.exit_code == 0, result.output
    rows = json.loads((out / "extinction.json").read_text(encoding="utf-8"))
    assert abs(rows[0]["value"] - 0.36787944117144233) < 1e-3
