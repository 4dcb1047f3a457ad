import json
import os

import numpy as np
import pytest

from scaffold_xai import experiment as ex
from scaffold_xai.cli import main

SMALL = {
    "name": "tiny",
    "dataset": {"synthetic": {"n": 400, "m": 5, "sensitive_base_rate": 0.5}},
    "n_runs": 2,
    "max_test_rows": 15,
    "lime": {"n_samples": 300},
    "forest": {"n_trees": 15},
    "seed": 11,
}


def _cfg(**over):
    return ex.ExperimentConfig.from_dict({**SMALL, **over})


def _write(tmp_path, data, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def test_derive_seed_depends_on_stage_and_key():
    a = ex.derive_seed(0, "split", 0)
    assert a == ex.derive_seed(0, "split", 0)
    assert len({a, ex.derive_seed(0, "split", 1), ex.derive_seed(0, "background", 0),
                ex.derive_seed(1, "split", 0)}) == 4


@pytest.mark.parametrize("bad,msg", [
    ({"bogus": 1}, "unknown key"),
    ({"lime": {"n_sample": 3}}, "unknown key 'lime.n_sample'"),
    ({"dataset": {}}, "dataset"),
    ({"n_uncorrelated": 3}, "n_uncorrelated"),
    ({"n_uncorrelated": 0}, "unbiased_rule"),
    ({"explainers": ["anchors"]}, "explainers"),
    ({"sweeps": ["everything"]}, "sweeps"),
    ({"train_fraction": 1.2}, "train_fraction"),
    ({"n_runs": 0}, "n_runs"),
])
def test_config_validation(bad, msg):
    with pytest.raises(ex.ConfigError, match=msg):
        _cfg(**bad)


def test_rule_resolution_errors():
    cfg = _cfg(biased_rule={"kind": "threshold", "feature": "nope"})
    with pytest.raises(ex.ConfigError, match="unknown feature"):
        ex.prepare(cfg)
    cfg = _cfg(unbiased_rule={"kind": "threshold", "feature": "@uncorrelated_2", "threshold": 0.5})
    with pytest.raises(ex.ConfigError, match="does not exist"):
        ex.prepare(cfg)


def test_prepare_layout():
    prep = ex.prepare(_cfg(n_uncorrelated=2), run=0)
    d = prep.data
    assert d.feature_names[-2:] == ["unrelated_1", "unrelated_2"]
    assert prep.train.n_rows == 360 and prep.test.n_rows == 40
    assert prep.unbiased.kind == "xor"
    assert prep.background.k == 10
    # biased rule reproduces the planted label exactly
    assert np.array_equal(prep.biased.predict(prep.test.rows), prep.test.labels)


def test_runs_resplit():
    a, b = ex.prepare(_cfg(), 0), ex.prepare(_cfg(), 1)
    assert not np.array_equal(a.test.rows, b.test.rows)


def test_run_self_checks_and_outputs(tmp_path):
    report = ex.run_experiment(_cfg(), out_dir=str(tmp_path))
    assert all(report["self_checks"].values()), report["self_checks"]
    assert sorted(os.listdir(tmp_path)) == ["occurrence.csv", "report.json"]
    body = json.loads((tmp_path / "report.json").read_text())
    assert set(body) == {"envelope", "report"}
    assert body["report"]["aggregate"]["biased_parity_ratio"] == 0.0
    lime = body["report"]["aggregate"]["explainers"]["lime"]
    assert lime["baseline"]["percentages"]["sensitive"][0] == 100.0
    assert lime["attack"]["n_explanations"] == 30
    head = (tmp_path / "occurrence.csv").read_text().splitlines()[0]
    assert head.startswith("# config: ")
    assert json.loads(head[len("# config: "):]) == report["config"]


def test_byte_identical_reruns(tmp_path):
    cfg = _cfg(sweeps=["distance_norm"], pca=True, n_runs=1)
    r1 = ex.run_experiment(cfg, workers=1, out_dir=str(tmp_path / "a"))
    r2 = ex.run_experiment(cfg, workers=3, out_dir=str(tmp_path / "b"))
    assert ex.report_bytes(r1) == ex.report_bytes(r2)
    for name in ("occurrence.csv", "sweep.csv", "pca.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    # the echoed config alone reproduces the run
    r3 = ex.run_experiment(ex.ExperimentConfig.from_dict(r1["config"]), out_dir=str(tmp_path / "c"))
    assert ex.report_bytes(r3) == ex.report_bytes(r1)
    r4 = ex.run_experiment(cfg.with_overrides(seed=12), out_dir=str(tmp_path / "d"))
    assert ex.report_bytes(r4) != ex.report_bytes(r1)


def test_bin_curve():
    xs, ys = ex.bin_curve([0.91, 0.93, 0.52, 0.99], [90, 100, 10, 80], 0.05)
    assert xs == pytest.approx([0.52, 0.92, 0.99])
    assert ys == pytest.approx([10, 95, 80])
    assert all(a < b for a, b in zip(xs, xs[1:]))


def test_sweep_shapes():
    cfg = _cfg(sweep_options={"max_rows": 8, "depth_caps": [1, None], "train_fractions": [0.3, 1.0],
                              "ood_f1_explainers": ["lime"], "background_ks": [3]})
    prep = ex.prepare(cfg)
    curves = ex.run_sweep("ood_f1", prep)
    assert len(curves["lime"].metadata["points"]) == 4
    c = ex.run_sweep("kernel_width", prep)
    assert len(c.x_values) == len(c.y_values) == 5
    bg = ex.run_sweep("background", prep)
    assert sorted(bg) == ["kmeans_3", "zeros"]
    cross = ex.sweep_to_dict(ex.run_sweep("cross_explainer", prep))
    assert len(cross) == 4 and all("effectiveness" in v for v in cross.values())
    with pytest.raises(ex.ConfigError):
        ex.run_sweep("nope", prep)


def test_unbiased_feature_group_without_injection(tmp_path):
    cfg = _cfg(n_uncorrelated=0, explainers=["lime"], n_runs=1,
               unbiased_rule={"kind": "threshold", "feature": "x1", "threshold": "mean",
                              "output_on_match": 0})
    prep = ex.prepare(cfg)
    assert prep.groups() == {"sensitive": [0], "unbiased_feature": [1]}
    report = ex.run_single(prep)
    assert "unbiased_feature" in report["explainers"]["lime"]["attack"]["groups"]


def test_explain_instance_shap_efficiency():
    out = ex.explain_instance(_cfg(), 2, ("shap",))
    for side in ("baseline", "attack"):
        eff = out["explanations"]["shap"][side]["efficiency"]
        assert eff["holds"]
    with pytest.raises(IndexError):
        ex.explain_instance(_cfg(), 10_000)


# ------------------------------------------------------------------ CLI

def test_cli_run_and_explain(tmp_path, capsys):
    path = _write(tmp_path, {**SMALL, "n_runs": 1})
    assert main(["run", "--config", path, "--out", str(tmp_path / "o"), "--workers", "2"]) == 0
    assert (tmp_path / "o" / "report.json").exists()
    capsys.readouterr()
    assert main(["explain", "--config", path, "--instance", "0", "--explainer", "lime"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert set(out["explanations"]) == {"lime"}


def test_cli_sweep_and_pca(tmp_path):
    path = _write(tmp_path, {**SMALL, "sweep_options": {"max_rows": 5}})
    assert main(["sweep", "--config", path, "--sweep", "distance_norm", "--out", str(tmp_path / "s")]) == 0
    lines = (tmp_path / "s" / "sweep.csv").read_text().splitlines()
    assert lines[1] == "sweep,series,x,y" and len(lines) == 4
    assert main(["pca", "--config", path, "--out", str(tmp_path / "p")]) == 0
    rows = (tmp_path / "p" / "pca.csv").read_text().splitlines()
    assert rows[2] == "x,y,source" and len(rows) == 3 + 2 * 360


@pytest.mark.parametrize("argv_tail,code", [
    (["--instance", "5000"], 2),
])
def test_cli_explain_bad_index(tmp_path, argv_tail, code):
    path = _write(tmp_path, SMALL)
    assert main(["explain", "--config", path, *argv_tail]) == code


def test_cli_error_codes_leave_no_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    bad_json = tmp_path / "bad.json"
    bad_json.write_text("{oops")
    assert main(["run", "--config", str(bad_json), "--out", str(out)]) == 2
    assert main(["run", "--config", _write(tmp_path, {**SMALL, "extra": 1}), "--out", str(out)]) == 2
    missing = {**SMALL, "dataset": {"csv": "nope.csv", "schema": "nope.json"}}
    assert main(["run", "--config", _write(tmp_path, missing), "--out", str(out)]) == 3
    (tmp_path / "d.csv").write_text("a,b\n1,x\n")
    (tmp_path / "s.json").write_text(json.dumps({"label_column": "b", "positive_label": 1,
                                                 "sensitive_column": "a",
                                                 "positive_sensitive_value": 1}))
    broken = {**SMALL, "dataset": {"csv": "d.csv", "schema": "s.json"}}
    assert main(["run", "--config", _write(tmp_path, broken), "--out", str(out)]) == 3
    assert main(["run"]) == 2
    assert main(["frobnicate"]) == 2
    assert not out.exists()
    err = capsys.readouterr().err
    assert "error:" in err
