"""Experiment specs, presets, the run driver and the comparison report.

A spec is a YAML (or JSON) document::

    output_dir: results
    preset: paper-defaults        # optional, its runs come first
    evaluation:
      bins: 15
    defaults:                     # merged under every run (train/synth only for preset runs)
      train: {epochs: 40, n_train: 200}
      synth: {noise: 0.15}
    runs:
      - name: nacl-l2
        method: NACL-L2           # label used in tables, defaults to name
        loss: {kind: NACL, lambda: 0.1, penalty: L2}
        train: {seed: 1}

Every run writes into ``<output_dir>/<name>-<hash>`` where the hash covers
the run's full configuration.
"""

from __future__ import annotations

import concurrent.futures
import copy
import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import yaml

from .checkpoint import save_checkpoint
from .data import GenerationError, SynthConfig
from .losses import LossConfig, PriorSpec, default_loss
from .metrics import FOREGROUND_MODES, MetricsRecord, mean_case_rank, sum_rank, write_reliability_csv
from .numerics import InvalidInputError
from .train import TrainConfig, TrainingDivergedError, train

log = logging.getLogger(__name__)

EVAL_MODES = ("gt_foreground", "union_foreground")
SPEC_KEYS = {"name", "output_dir", "preset", "evaluation", "defaults", "runs"}
RUN_KEYS = {"name", "method", "loss", "train", "synth"}


class SpecError(InvalidInputError):
    """Invalid experiment spec; ``str()`` carries ``file:line:`` anchors."""


@dataclass(frozen=True)
class RunSpec:
    name: str
    method: str
    train: TrainConfig
    synth: SynthConfig

    def config_dict(self) -> dict:
        return {"name": self.name, "method": self.method, "train": self.train.to_dict(),
                "synth": self.synth.to_dict()}

    def config_hash(self) -> str:
        blob = json.dumps(self.config_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:8]

    @property
    def dirname(self) -> str:
        return f"{self.name}-{self.config_hash()}"


@dataclass
class ExperimentSpec:
    runs: List[RunSpec] = field(default_factory=list)
    output_dir: str = "results"
    bins: int = 15
    preset: Optional[str] = None
    name: str = ""

    def __post_init__(self):
        names = [r.name for r in self.runs]
        dup = sorted({n for n in names if names.count(n) > 1})
        if dup:
            raise SpecError(f"duplicate run names: {dup}")


# ---------------------------------------------------------------- presets

def _run(name, loss: LossConfig, method=None, **train_kw) -> RunSpec:
    return RunSpec(name, method or name, TrainConfig(loss=loss, **train_kw), SynthConfig())


def _preset_defaults():
    order = [("ce_dsc", "CE+DSC"), ("fl", "FL"), ("ecp", "ECP"), ("ls", "LS"), ("svls", "SVLS"),
             ("mbls", "MbLS"), ("nacl", "NACL")]
    return [_run(n, default_loss(k), k) for n, k in order]


def _nacl(**kw) -> LossConfig:
    return default_loss("NACL").with_(**kw)


def _priors():
    return [_run("nacl-mean", _nacl(prior=PriorSpec("mean", 3)), "NACL-mean"),
            _run("nacl-gaussian", _nacl(prior=PriorSpec("gaussian", 3, 2.0)), "NACL-gaussian")]


def _penalties():
    return [_run("nacl-l1", _nacl(penalty="L1"), "NACL-L1"), _run("nacl-l2", _nacl(penalty="L2"), "NACL-L2")]


def _target_space():
    return [_run("nacl-logits", _nacl(target_space="logits"), "NACL-logits"),
            _run("nacl-softmax", _nacl(target_space="softmax"), "NACL-softmax")]


def _sigma_sweep():
    runs = []
    for s in (1, 2, 3):
        runs.append(_run(f"svls-s{s}", LossConfig("SVLS", prior=PriorSpec("gaussian", 3, float(s))), f"SVLS-s{s}"))
        runs.append(_run(f"nacl-gauss-s{s}", _nacl(prior=PriorSpec("gaussian", 3, float(s))), f"NACL-gauss-s{s}"))
    return runs


def _lambda_sweep():
    return [_run(f"nacl-lam{v}", _nacl(lam=v), f"NACL-lam{v}") for v in (0.1, 0.2, 0.3)]


def _data_fraction():
    runs = []
    for frac in (0.25, 0.5, 0.75, 1.0):
        pct = int(frac * 100)
        runs.append(_run(f"ce_dsc-f{pct}", default_loss("CE+DSC"), f"CE+DSC-f{pct}", train_fraction=frac))
        runs.append(_run(f"nacl-f{pct}", default_loss("NACL"), f"NACL-f{pct}", train_fraction=frac))
    return runs


def _nacl_vs_baseline():
    return [_run("ce_dsc", default_loss("CE+DSC"), "CE+DSC"), _run("nacl", default_loss("NACL"), "NACL")]


PRESETS = {
    "paper-defaults": _preset_defaults,
    "nacl-vs-baseline": _nacl_vs_baseline,
    "priors": _priors,
    "penalties": _penalties,
    "target-space": _target_space,
    "sigma-sweep": _sigma_sweep,
    "lambda-sweep": _lambda_sweep,
    "data-fraction": _data_fraction,
}


def ablation_presets(name: str, output_dir: Optional[str] = None) -> ExperimentSpec:
    if name not in PRESETS:
        raise SpecError(f"unknown preset {name!r}; valid presets: {', '.join(sorted(PRESETS))}")
    return ExperimentSpec(PRESETS[name](), output_dir or f"results/{name}", preset=name, name=name)


def override(spec: ExperimentSpec, seed: Optional[int] = None, epochs: Optional[int] = None,
             train_fraction: Optional[float] = None, **train_kw) -> ExperimentSpec:
    """Apply CLI-level overrides to every run; ``seed`` sets both data and init seeds."""
    runs = []
    for r in spec.runs:
        tkw = {k: v for k, v in train_kw.items() if v is not None}
        if seed is not None:
            tkw["seed"] = seed
        if epochs is not None:
            tkw["epochs"] = epochs
        if train_fraction is not None:
            tkw["train_fraction"] = train_fraction
        synth = replace(r.synth, seed=seed) if seed is not None else r.synth
        runs.append(replace(r, train=replace(r.train, **tkw), synth=synth))
    return replace(spec, runs=runs)


# ---------------------------------------------------------------- spec parsing

def _line_index(node, path=(), out=None):
    """Map key paths to 1-based source lines of a composed YAML node tree."""
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = k.start_mark.line + 1
            _line_index(v, path + (key,), out)
            out[path + (key,)] = k.start_mark.line + 1
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (i,), out)
    return out


def _merge(base: dict, top: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (top or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


class _Anchor:
    def __init__(self, source: str, lines: Dict[tuple, int]):
        self.source, self.lines = source, lines

    def error(self, path: tuple, msg: str, section: Optional[dict] = None) -> SpecError:
        where = path
        if section:
            for key in section:
                names = {key, "lam"} if key == "lambda" else {key}
                if any(n in msg for n in names) and path + (key,) in self.lines:
                    where = path + (key,)
                    break
        while where not in self.lines and where:
            where = where[:-1]
        line = self.lines.get(where, 1)
        label = ".".join(str(p) if not isinstance(p, int) else f"[{p}]" for p in path).replace(".[", "[")
        return SpecError(f"{self.source}:{line}: {label or '<root>'}: {msg}")


def parse_spec(text: str, source: str = "<spec>") -> ExperimentSpec:
    """Parse and fully validate a spec; every problem raises :class:`SpecError`."""
    try:
        node = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 1
        raise SpecError(f"{source}:{line}: syntax error: {getattr(exc, 'problem', exc)}") from None
    if doc is None:
        doc, node = {}, None
    anchor = _Anchor(source, _line_index(node) if node is not None else {(): 1})
    if not isinstance(doc, dict):
        raise anchor.error((), "top level must be a mapping")
    unknown = set(doc) - SPEC_KEYS
    if unknown:
        key = sorted(unknown)[0]
        raise anchor.error((key,), f"unknown key {key!r}; allowed: {sorted(SPEC_KEYS)}")

    runs: List[RunSpec] = []
    preset = doc.get("preset")
    if preset is not None:
        if preset not in PRESETS:
            raise anchor.error(("preset",), f"unknown preset {preset!r}; valid presets: {', '.join(sorted(PRESETS))}")
        runs.extend(PRESETS[preset]())

    ev = doc.get("evaluation") or {}
    if not isinstance(ev, dict):
        raise anchor.error(("evaluation",), "must be a mapping")
    bins = ev.get("bins", 15)
    if not isinstance(bins, int) or isinstance(bins, bool) or bins < 1:
        raise anchor.error(("evaluation", "bins"), f"bins must be a positive integer, got {bins!r}")
    modes = ev.get("foreground_modes", list(EVAL_MODES))
    bad = [m for m in modes if m not in FOREGROUND_MODES]
    if bad or not set(EVAL_MODES) <= set(modes):
        raise anchor.error(("evaluation", "foreground_modes"),
                           f"foreground_modes must include {list(EVAL_MODES)} and only {list(FOREGROUND_MODES)}")

    defaults = doc.get("defaults") or {}
    if not isinstance(defaults, dict) or set(defaults) - {"train", "synth", "loss"}:
        raise anchor.error(("defaults",), "defaults may only hold 'train', 'synth' and 'loss' mappings")

    # preset runs keep their losses but take the train/synth defaults
    for i, r in enumerate(runs):
        try:
            tr = TrainConfig.from_dict({**r.train.to_dict(), **(defaults.get("train") or {})})
        except (InvalidInputError, TypeError) as exc:
            raise anchor.error(("defaults", "train"), str(exc), defaults.get("train")) from None
        try:
            sy = SynthConfig.from_dict({**r.synth.to_dict(), **(defaults.get("synth") or {})})
        except (InvalidInputError, TypeError) as exc:
            raise anchor.error(("defaults", "synth"), str(exc), defaults.get("synth")) from None
        runs[i] = replace(r, train=replace(tr, loss=r.train.loss), synth=sy)

    raw_runs = doc.get("runs") or []
    if not isinstance(raw_runs, list):
        raise anchor.error(("runs",), "runs must be a list")
    for i, raw in enumerate(raw_runs):
        path = ("runs", i)
        if not isinstance(raw, dict):
            raise anchor.error(path, "each run must be a mapping")
        extra = set(raw) - RUN_KEYS
        if extra:
            key = sorted(extra)[0]
            raise anchor.error(path + (key,), f"unknown run key {key!r}; allowed: {sorted(RUN_KEYS)}")
        name = raw.get("name")
        if not isinstance(name, str) or not name or "/" in name:
            raise anchor.error(path + ("name",), "every run needs a non-empty name without '/'")
        merged = _merge(defaults, {k: raw.get(k) for k in ("train", "synth", "loss") if k in raw})
        try:
            loss = LossConfig.from_dict(merged.get("loss") or {})
        except (InvalidInputError, TypeError) as exc:
            raise anchor.error(path + ("loss",), str(exc), raw.get("loss")) from None
        try:
            tr = TrainConfig.from_dict({**(merged.get("train") or {}), "loss": loss})
        except (InvalidInputError, TypeError) as exc:
            raise anchor.error(path + ("train",), str(exc), raw.get("train")) from None
        try:
            sy = SynthConfig.from_dict(merged.get("synth") or {})
        except (InvalidInputError, TypeError) as exc:
            raise anchor.error(path + ("synth",), str(exc), raw.get("synth")) from None
        if any(r.name == name for r in runs):
            raise anchor.error(path + ("name",), f"duplicate run name {name!r}")
        runs.append(RunSpec(name, str(raw.get("method", name)), replace(tr, bins=bins), sy))
    if bins != 15:
        runs = [replace(r, train=replace(r.train, bins=bins)) for r in runs]
    return ExperimentSpec(runs, str(doc.get("output_dir", "results")), bins, preset, str(doc.get("name", "")))


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SpecError(f"{path}: cannot read spec: {exc.strerror}") from None
    return parse_spec(text, str(path))


# ---------------------------------------------------------------- running

def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, allow_nan=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def execute_run(run: RunSpec, out_dir) -> dict:
    """Train one run and write its artifacts; divergence is recorded, not raised."""
    rdir = Path(out_dir) / run.dirname
    rdir.mkdir(parents=True, exist_ok=True)
    _dump_json(run.config_dict(), rdir / "config.json")
    try:
        art = train(run.train, run.synth, method=run.method)
    except (TrainingDivergedError, GenerationError, FloatingPointError) as exc:
        result = {"status": "failed", "error": str(exc), "method": run.method, "run": run.name,
                  "hyperparameters": run.train.loss.to_dict()}
        _dump_json(result, rdir / "metrics.json")
        return result
    rec = art.test_metrics
    rec.run = run.name
    result = {
        "status": "ok",
        "method": run.method,
        "run": run.name,
        "hyperparameters": run.train.loss.to_dict(),
        "test": rec.to_dict(),
        "val": art.val_metrics.to_dict(),
        "best_epoch": art.best_epoch,
        "diagnostics": art.diagnostics,
    }
    _dump_json(result, rdir / "metrics.json")
    for mode, stats in art.reliability.items():
        if stats is not None:
            write_reliability_csv(stats, rdir / f"reliability_{mode}.csv")
    _write_csv(rdir / "loss_curve.csv", ["epoch", "lr", "train_loss", "val_dsc"],
               [[e, _fmt(run.train.lr_at(e)), _fmt(l), _fmt(v)]
                for e, (l, v) in enumerate(zip(art.loss_curve, art.val_dsc))])
    edges = art.hist_edges
    _write_csv(rdir / "logit_hist.csv", ["epoch", "bin_lo", "bin_hi", "count"],
               [[e, _fmt(edges[i]), _fmt(edges[i + 1]), int(c)]
                for e, h in enumerate(art.logit_hist) for i, c in enumerate(h)])
    keys = ["dsc", "hd"] + [f"{m}_{mode}" for m in ("ece", "cece") for mode in EVAL_MODES]
    _write_csv(rdir / "per_image.csv", ["image"] + keys,
               [[i] + [_fmt(row.get(k, float("nan"))) for k in keys] for i, row in enumerate(art.per_image)])
    save_checkpoint(rdir / "model.ckpt", art.params, run.synth.height, run.synth.width)
    return result


def run_experiment(spec: ExperimentSpec, jobs: int = 1) -> int:
    """Execute every run, then write the comparison report. Returns an exit status."""
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if jobs > 1 and len(spec.runs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(execute_run, spec.runs, [out] * len(spec.runs)))
    else:
        results = [execute_run(r, out) for r in spec.runs]
    for r in results:
        if r["status"] != "ok":
            log.warning("run %s failed: %s", r["run"], r["error"])
    report(out, [r.dirname for r in spec.runs])
    return 0


# ---------------------------------------------------------------- report

def _table_metrics():
    return ["dsc", "hd"] + [f"{m}_{mode}" for m in ("ece", "cece") for mode in EVAL_MODES]


def _read_per_image(path) -> List[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items() if k != "image"} for row in csv.DictReader(fh)]


def report(output_dir, run_dirs: Optional[Sequence[str]] = None) -> List[str]:
    """Write comparison tables for the completed runs under ``output_dir``.

    Returns the list of problems (missing or corrupt runs); the report is
    produced from the remaining runs.
    """
    out = Path(output_dir)
    if run_dirs is None:
        run_dirs = sorted(p.name for p in out.iterdir() if p.is_dir()) if out.is_dir() else []
    problems, rows, cases, dirs = [], [], {}, {}
    metrics = _table_metrics()
    for d in run_dirs:
        path = out / d / "metrics.json"
        try:
            with open(path) as fh:
                res = json.load(fh)
            if res.get("status") != "ok":
                problems.append(f"{d}: run {res.get('status')}: {res.get('error', '')}")
                continue
            rec = MetricsRecord.from_dict(res["test"])
            flat = rec.flat(EVAL_MODES)
            per_image = _read_per_image(out / d / "per_image.csv")
        except (OSError, ValueError, KeyError, TypeError) as exc:
            problems.append(f"{d}: missing or corrupt outputs ({exc.__class__.__name__}: {exc})")
            continue
        label = res["method"]
        if label in cases:
            label = f"{label} [{res['run']}]"
        rows.append((label, res["run"], flat, res.get("diagnostics", {})))
        cases[label] = per_image
        dirs[label] = d

    table = {label: flat for label, _, flat, _ in rows}
    ranks = sum_rank(table, metrics) if table else {}
    ncases = {len(v) for v in cases.values()}
    mcr = mean_case_rank(cases, metrics) if len(ncases) == 1 else {label: float("nan") for label in cases}
    if len(ncases) > 1:
        problems.append("runs cover different test sets; mean-case-rank skipped")

    _write_csv(out / "comparison.csv", ["method", "run"] + metrics + ["winner_abs_logit_mean", "sum_rank"],
               [[label, run] + [_fmt(flat[m]) for m in metrics]
                + [_fmt(diag.get("winner_abs_logit_mean", float("nan"))), _fmt(ranks[label])]
                for label, run, flat, diag in rows])
    per_metric = {m: sum_rank({l: {m: f[m]} for l, f in table.items()}, [m]) for m in metrics} if table else {}
    _write_csv(out / "sum_rank.csv", ["method"] + metrics + ["sum_rank"],
               [[label] + [_fmt(per_metric[m][label]) for m in metrics] + [_fmt(ranks[label])]
                for label, _, _, _ in rows])
    _write_csv(out / "mean_case_rank.csv", ["method", "mean_case_rank"],
               [[label, _fmt(mcr[label])] for label, _, _, _ in rows])
    # radar: raw values plus min-max scaling per metric across methods
    radar = []
    for m in metrics:
        vals = np.array([table[l][m] for l, _, _, _ in rows], dtype=np.float64)
        lo, hi = (np.nanmin(vals), np.nanmax(vals)) if len(vals) else (0.0, 0.0)
        for (label, _, _, _), v in zip(rows, vals):
            scaled = (v - lo) / (hi - lo) if hi > lo else 0.0
            radar.append([label, m, _fmt(v), _fmt(scaled)])
    _write_csv(out / "radar.csv", ["method", "metric", "value", "scaled"], radar)
    rel = []
    for label, _, _, _ in rows:
        for mode in EVAL_MODES:
            p = out / dirs[label] / f"reliability_{mode}.csv"
            if p.exists():
                with open(p, newline="") as fh:
                    for r in csv.DictReader(fh):
                        rel.append([label, mode, r["bin_lo"], r["bin_hi"], r["count"], r["accuracy"], r["confidence"]])
    _write_csv(out / "reliability.csv", ["method", "mode", "bin_lo", "bin_hi", "count", "accuracy", "confidence"], rel)
    with open(out / "report_problems.txt", "w") as fh:
        fh.writelines(p + "\n" for p in problems)
    return problems
