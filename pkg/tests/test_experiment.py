import csv
import json
from pathlib import Path

import pytest

from nacl import cli
from nacl.experiment import (PRESETS, ExperimentSpec, SpecError, ablation_presets, execute_run, override,
                             parse_spec, report, run_experiment)
from nacl.metrics import MetricsRecord

TINY = dict(epochs=1, n_train=4, n_val=2, n_test=2, width=4)


def tiny(spec, **kw):
    return override(spec, **{**TINY, **kw})


def read_tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(Path(root).rglob("*")) if p.is_file()}


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_default_comparison_preset():
    spec = ablation_presets("paper-defaults")
    assert [r.method for r in spec.runs] == ["CE+DSC", "FL", "ECP", "LS", "SVLS", "MbLS", "NACL"]
    loss = {r.method: r.train.loss for r in spec.runs}
    assert loss["FL"].gamma == 3.0 and loss["ECP"].alpha == 0.1 and loss["LS"].alpha == 0.1
    assert loss["SVLS"].resolved_prior().sigma == 2.0 and loss["MbLS"].margin == 5.0
    assert loss["CE+DSC"].dice_weight == 1.0
    assert spec.runs[0].train.batch_size == 4 and spec.runs[0].train.epochs == 40


def test_ablation_presets():
    assert {r.train.loss.penalty for r in ablation_presets("penalties").runs} == {"L1", "L2"}
    assert [r.train.loss.lam for r in ablation_presets("lambda-sweep").runs] == [0.1, 0.2, 0.3]
    sig = ablation_presets("sigma-sweep").runs
    assert sorted((r.train.loss.kind, r.train.loss.resolved_prior().sigma) for r in sig) == \
        [(k, s) for k in ("NACL", "SVLS") for s in (1.0, 2.0, 3.0)]
    assert {r.train.loss.target_space for r in ablation_presets("target-space").runs} == {"logits", "softmax"}
    assert {r.train.loss.resolved_prior().kind for r in ablation_presets("priors").runs} == {"mean", "gaussian"}
    with pytest.raises(SpecError, match="valid presets"):
        ablation_presets("nope")


def test_override_sets_both_seeds():
    spec = override(ablation_presets("penalties"), seed=7, epochs=2)
    assert all(r.train.seed == 7 and r.synth.seed == 7 and r.train.epochs == 2 for r in spec.runs)
    with pytest.raises(ValueError):
        override(spec, epochs=0)


def test_run_dirs_unique():
    for name in PRESETS:
        dirs = [r.dirname for r in ablation_presets(name).runs]
        assert len(set(dirs)) == len(dirs)


SPEC = """\
output_dir: out
evaluation:
  bins: 10
defaults:
  train: {epochs: 3}
runs:
  - name: a
    loss: {kind: NACL, lambda: 0.2}
  - name: b
    method: Focal
    loss:
      kind: FL
    train:
      epochs: 5
"""


def test_parse_spec():
    spec = parse_spec(SPEC)
    a, b = spec.runs
    assert a.train.loss.lam == 0.2 and a.train.epochs == 3 and a.train.bins == 10
    assert b.method == "Focal" and b.train.epochs == 5
    assert spec.output_dir == "out"
    j = parse_spec(json.dumps({"runs": [{"name": "x", "loss": {"kind": "CE"}}]}))
    assert j.runs[0].train.loss.kind == "CE"


@pytest.mark.parametrize("text,line,needle", [
    ("runs:\n  - name: a\n    loss:\n      kind: FL\n      gamma: -1\n", 5, "gamma"),
    ("runs:\n  - name: a\n    loss: {kind: LS}\n  - name: a\n    loss: {kind: CE}\n", 4, "duplicate"),
    ("output_dir: x\nbogus: 1\n", 2, "unknown key"),
    ("runs:\n  - name: a\n    train:\n      beta1: 1.5\n", 4, "beta1"),
    ("evaluation:\n  bins: 0\n", 2, "bins"),
    ("preset: nope\n", 1, "valid presets"),
    ("runs:\n  - name: a\n    loss: {kind: NACL, lambda: -0.1}\n", 3, "lam"),
    ("runs: [\n", 2, "syntax"),
])
def test_spec_errors_are_anchored(text, line, needle):
    with pytest.raises(SpecError) as err:
        parse_spec(text, "spec.yaml")
    assert str(err.value).startswith(f"spec.yaml:{line}:")
    assert needle in str(err.value)


def test_empty_run_list(tmp_path):
    out = tmp_path / "empty"
    assert run_experiment(ExperimentSpec([], str(out))) == 0
    assert rows(out / "comparison.csv") == []
    assert (out / "comparison.csv").read_text().startswith("method,run,dsc,hd,")


def test_rerun_is_byte_identical_and_report_idempotent(tmp_path):
    spec = tiny(ablation_presets("penalties", str(tmp_path / "a")))
    run_experiment(spec)
    first = read_tree(tmp_path / "a")
    run_experiment(spec)
    assert read_tree(tmp_path / "a") == first
    report(tmp_path / "a")
    assert read_tree(tmp_path / "a") == first
    table = rows(tmp_path / "a" / "comparison.csv")
    assert [r["method"] for r in table] == ["NACL-L1", "NACL-L2"]
    for col in ("ece_gt_foreground", "ece_union_foreground", "cece_gt_foreground", "cece_union_foreground"):
        assert all(r[col] for r in table)
    files = set(first)
    run_dir = spec.runs[0].dirname
    for f in ("config.json", "metrics.json", "loss_curve.csv", "logit_hist.csv", "per_image.csv", "model.ckpt",
              "reliability_gt_foreground.csv", "reliability_union_foreground.csv"):
        assert f"{run_dir}/{f}" in files


def test_parallel_matches_sequential(tmp_path):
    seq = tiny(ablation_presets("penalties", str(tmp_path / "s")))
    run_experiment(seq)
    par = tiny(ablation_presets("penalties", str(tmp_path / "p")))
    run_experiment(par, jobs=2)
    assert read_tree(tmp_path / "s") == read_tree(tmp_path / "p")


def _inject(root, name, method, flat):
    d = root / f"{name}-00000000"
    d.mkdir(parents=True)
    rec = MetricsRecord(method, name, dsc_mean=flat["dsc"], hd_mean=flat["hd"],
                        ece={"gt_foreground": flat["ece"], "union_foreground": flat["ece"]},
                        cece={"gt_foreground": flat["cece"], "union_foreground": flat["cece"]})
    (d / "metrics.json").write_text(json.dumps({"status": "ok", "method": method, "run": name,
                                                "test": rec.to_dict()}))
    (d / "per_image.csv").write_text("image,dsc\n0,%r\n" % flat["dsc"])


def test_report_ranks_hand_computed(tmp_path):
    _inject(tmp_path, "x", "X", {"dsc": 0.9, "hd": 2.0, "ece": 0.1, "cece": 0.2})
    _inject(tmp_path, "y", "Y", {"dsc": 0.8, "hd": 1.0, "ece": 0.1, "cece": 0.3})
    assert report(tmp_path) == []
    ranks = {r["method"]: r for r in rows(tmp_path / "sum_rank.csv")}
    # dsc: X1 Y2; hd: Y1 X2; ece x2 modes tied 1.5 each; cece x2 modes X1 Y2
    assert float(ranks["X"]["sum_rank"]) == 1 + 2 + 1.5 * 2 + 1 * 2
    assert float(ranks["Y"]["sum_rank"]) == 2 + 1 + 1.5 * 2 + 2 * 2
    mcr = {r["method"]: float(r["mean_case_rank"]) for r in rows(tmp_path / "mean_case_rank.csv")}
    assert mcr == {"X": 1.0, "Y": 2.0}


def test_report_single_run_and_problems(tmp_path):
    _inject(tmp_path, "x", "X", {"dsc": 0.5, "hd": 1.0, "ece": 0.2, "cece": 0.4})
    (tmp_path / "broken-11111111").mkdir()
    problems = report(tmp_path)
    assert len(problems) == 1 and "broken" in problems[0]
    table = rows(tmp_path / "sum_rank.csv")
    assert len(table) == 1 and all(float(v) == 1.0 for k, v in table[0].items() if k not in ("method", "sum_rank"))


def test_failed_run_recorded(tmp_path, monkeypatch):
    from nacl import experiment
    from nacl.train import TrainingDivergedError

    def boom(*a, **k):
        raise TrainingDivergedError("non-finite loss")
    monkeypatch.setattr(experiment, "train", boom)
    run = tiny(ablation_presets("penalties")).runs[0]
    res = execute_run(run, tmp_path)
    assert res["status"] == "failed"
    problems = report(tmp_path)
    assert "failed" in problems[0]


def test_cli(tmp_path, capsys):
    spec = tmp_path / "spec.yaml"
    spec.write_text("runs:\n  - name: ce\n    loss: {kind: CE}\n")
    out = tmp_path / "out"
    argv = ["run", str(spec), "--out", str(out), "--epochs", "1", "--n-train", "4", "--n-val", "2",
            "--n-test", "2", "--seed", "3"]
    assert cli.main(argv) == 0
    table = rows(out / "comparison.csv")
    assert len(table) == 1 and float(table[0]["sum_rank"]) == 6.0
    assert cli.main(["report", str(out)]) == 0
    spec.write_text("runs:\n  - name: ce\n    loss: {kind: CE, alpha: -1}\n")
    assert cli.main(["run", str(spec)]) == 2
    assert f"{spec}:3:" in capsys.readouterr().err
    assert cli.main(["preset", "nope"]) == 2
    assert cli.main(["preset", "penalties", "--epochs", "0"]) == 2


def test_defaults_apply_to_preset_runs():
    spec = parse_spec("preset: penalties\ndefaults:\n  train: {epochs: 2}\n  synth: {noise: 0.0}\n")
    assert [r.train.loss.penalty for r in spec.runs] == ["L1", "L2"]
    assert all(r.train.epochs == 2 and r.synth.noise == 0.0 for r in spec.runs)
    with pytest.raises(SpecError, match=r"^<spec>:3:"):
        parse_spec("preset: penalties\ndefaults:\n  train: {epochs: -2}\n")
