"""Config-driven scenario runners and result persistence.

A run config (YAML) names a data source, a partition plan, a list of
strategies, federation settings and seeds. :func:`run_localized_benchmark`
and :func:`run_pandemic_scenario` execute every (strategy, seed) pair and
return a :class:`ResultBundle` of tidy records, which :meth:`ResultBundle.write`
stores as CSV files plus a JSON manifest.
"""

from __future__ import annotations

import copy
import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import yaml

from . import __version__
from .data import CsvSchema, Dataset, SyntheticSpec, generate_synthetic, ingest_csv
from .federation import ExperimentResult, FederationConfig, train
from .learner import ModelSpec
from .partition import (
    Benchmark,
    NovelDiseaseSchedule,
    PartitionPlan,
    build_localized_benchmark,
    build_pandemic_benchmark,
)
from .strategies import StrategyConfig

__all__ = [
    "OUTPUT_ROOT_ENV",
    "ConfigError",
    "ResultBundle",
    "RunConfig",
    "emit_plotdata",
    "load_config",
    "parse_config",
    "run",
    "run_localized_benchmark",
    "run_pandemic_scenario",
]

OUTPUT_ROOT_ENV = "FEDSHIFT_OUTPUT_ROOT"
BASE_METRICS = ("ltr", "accuracy", "auc")
NOVEL_METRICS = ("nonnovel_ltr", "novel_recall", "novel_auc")
TOP_KEYS = {
    "scenario", "data", "partition", "novel_disease", "model", "federation",
    "strategies", "metrics", "seeds", "output_dir", "workers",
}


class ConfigError(ValueError):
    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("invalid run config:\n" + "\n".join(f"  - {e}" for e in self.errors))


@dataclass
class RunConfig:
    scenario: str
    data: dict[str, Any]
    plan: PartitionPlan
    strategies: list[StrategyConfig]
    federation: FederationConfig
    model: dict[str, Any]
    metrics: list[str]
    seeds: list[int]
    output_dir: Path
    novel: dict[str, Any] | None = None
    workers: int = 1
    raw: dict[str, Any] = field(default_factory=dict, repr=False)
    base_dir: Path = Path(".")

    def dataset(self, seed: int) -> Dataset:
        if "synthetic" in self.data:
            return generate_synthetic(SyntheticSpec.from_mapping(self.data["synthetic"], default_seed=seed))
        csv_cfg = self.data["csv"]
        path = Path(csv_cfg["path"])
        if not path.is_absolute():
            path = self.base_dir / path
        return ingest_csv(path, CsvSchema.from_mapping(csv_cfg["schema"]))

    def schedule(self, dataset: Dataset) -> NovelDiseaseSchedule | None:
        if self.scenario != "pandemic":
            return None
        nd = self.novel or {}
        label = nd.get("novel_label", dataset.num_classes - 1)
        if isinstance(label, str):
            label = dataset.label_space.class_names.index(label)
        if "prevalences" in nd:
            return NovelDiseaseSchedule(label, np.asarray(nd["prevalences"], dtype=float))
        if "assignment" in nd:
            return NovelDiseaseSchedule.from_assignment(label, nd["assignment"], nd.get("schedules"))
        return NovelDiseaseSchedule.default(label, self.plan.n_clients)

    def resolved_output_dir(self) -> Path:
        root = os.environ.get(OUTPUT_ROOT_ENV)
        if not root:
            return self.output_dir
        out = self.output_dir
        return Path(root) / (out.name if out.is_absolute() else out)


def parse_config(raw: Mapping[str, Any], base_dir: Path | str = ".") -> RunConfig:
    """Validate a config mapping, reporting every problem at once."""
    raw = copy.deepcopy(dict(raw))
    errors: list[str] = []
    unknown = set(raw) - TOP_KEYS
    if unknown:
        errors.append(f"unknown top-level keys: {sorted(unknown)}")

    scenario = raw.get("scenario", "localized")
    if scenario not in ("localized", "pandemic"):
        errors.append(f"scenario must be 'localized' or 'pandemic', got {scenario!r}")

    data = raw.get("data") or {}
    sources = [k for k in ("synthetic", "csv") if k in data]
    if len(sources) != 1:
        errors.append("data must name exactly one source: 'synthetic' or 'csv'")
    elif sources[0] == "synthetic":
        try:
            SyntheticSpec.from_mapping(data["synthetic"])
        except (TypeError, ValueError, KeyError) as exc:
            errors.append(f"data.synthetic: {exc}")
    else:
        c = data["csv"]
        if not isinstance(c, Mapping) or "path" not in c or "schema" not in c:
            errors.append("data.csv needs 'path' and 'schema'")
        else:
            try:
                CsvSchema.from_mapping(c["schema"])
            except (TypeError, ValueError, KeyError) as exc:
                errors.append(f"data.csv.schema: {exc}")

    plan = None
    pcfg = dict(raw.get("partition") or {})
    unknown_p = set(pcfg) - set(PartitionPlan.__dataclass_fields__)
    if unknown_p:
        errors.append(f"partition: unknown keys {sorted(unknown_p)}")
    else:
        try:
            plan = PartitionPlan(**pcfg)
        except (TypeError, ValueError) as exc:
            errors.append(f"partition: {exc}")

    fed = None
    try:
        fed = FederationConfig.from_mapping(raw.get("federation") or {})
    except (TypeError, ValueError) as exc:
        errors.append(f"federation: {exc}")

    strategies = []
    for i, s in enumerate(raw.get("strategies") or ["F-ERM"]):
        try:
            strategies.append(StrategyConfig.parse(s))
        except (TypeError, ValueError, KeyError) as exc:
            errors.append(f"strategies[{i}]: {exc}")
    labels = [s.label for s in strategies]
    if len(set(labels)) != len(labels):
        errors.append(f"duplicate strategies: {labels}")

    model = dict(raw.get("model") or {})
    try:
        ModelSpec.from_mapping(model, input_dim=1, n_classes=2)
    except (TypeError, ValueError) as exc:
        errors.append(f"model: {exc}")

    metrics = list(raw.get("metrics") or BASE_METRICS)
    bad = [m for m in metrics if m not in BASE_METRICS + NOVEL_METRICS]
    if bad:
        errors.append(f"unknown metrics {bad}")

    seeds = raw.get("seeds", [0, 1, 2, 3, 4])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        errors.append("seeds must be a non-empty list of non-negative integers")
    elif len(set(seeds)) != len(seeds):
        errors.append("seeds must be distinct")

    novel = raw.get("novel_disease")
    if scenario == "pandemic" and plan is not None and isinstance(novel, Mapping):
        try:
            label = novel.get("novel_label", 0)
            if "prevalences" in novel:
                s = NovelDiseaseSchedule(label if isinstance(label, int) else 0, np.asarray(novel["prevalences"]))
            elif "assignment" in novel:
                s = NovelDiseaseSchedule.from_assignment(0, novel["assignment"], novel.get("schedules"))
            else:
                s = NovelDiseaseSchedule.default(0, plan.n_clients)
            if s.prevalences.shape != (plan.n_clients, plan.n_tasks):
                errors.append(
                    f"novel_disease: schedule is {s.prevalences.shape[0]}x{s.prevalences.shape[1]}, "
                    f"partition needs {plan.n_clients}x{plan.n_tasks}"
                )
        except (TypeError, ValueError) as exc:
            errors.append(f"novel_disease: {exc}")
    elif scenario == "pandemic" and novel is not None and not isinstance(novel, Mapping):
        errors.append("novel_disease must be a mapping")
    elif scenario == "pandemic" and novel is None and plan is not None and plan.n_tasks != 4:
        errors.append("the built-in fast/slow schedules have 4 tasks; set novel_disease.prevalences")
    if scenario == "localized" and novel is not None:
        errors.append("novel_disease is only valid with scenario: pandemic")

    workers = raw.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        errors.append("workers must be a positive integer")
    if "output_dir" not in raw:
        errors.append("output_dir is required")

    if errors:
        raise ConfigError(errors)
    return RunConfig(
        scenario=scenario,
        data=dict(data),
        plan=plan,
        strategies=strategies,
        federation=fed,
        model=model,
        metrics=metrics,
        seeds=list(seeds),
        output_dir=Path(raw["output_dir"]),
        novel=dict(novel) if novel else None,
        workers=workers,
        raw=raw,
        base_dir=Path(base_dir),
    )


def load_config(path: str | Path) -> RunConfig:
    """Read a YAML run config, or the config echoed in a bundle's manifest.json."""
    path = Path(path)
    text = path.read_text()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: {exc}"]) from None
    if not isinstance(raw, Mapping):
        raise ConfigError([f"{path}: expected a mapping at top level"])
    base_dir = path.parent
    if "config" in raw and "manifest_version" in raw:
        base_dir = Path(raw.get("config_dir", base_dir))
        raw = raw["config"]
    return parse_config(raw, base_dir)


# ---------------------------------------------------------------------------
# Result bundles
# ---------------------------------------------------------------------------


def _fmt(v: Any) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    if isinstance(v, (np.floating,)):
        return _fmt(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def _csv_text(rows: Sequence[Mapping[str, Any]], columns: Sequence[str] | None = None) -> str:
    columns = list(columns or (rows[0].keys() if rows else []))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c, "")) for c in columns])
    return buf.getvalue()


EVAL_COLUMNS = ["strategy", "seed", "client", "trained_task", "eval_task", "metric", "value", "flag"]
HOLDOUT_COLUMNS = ["strategy", "seed", "client", "metric", "value", "flag"]
SUMMARY_COLUMNS = ["strategy", "seed", "trained_task", "metric", "value"]
ROUND_COLUMNS = ["strategy", "seed", "task", "round", "phase", "client", "pre_loss", "post_loss", "checksum"]


def _flag(value: float, result, metric: str, novel_label: int | None) -> str:
    if not math.isnan(value):
        return ""
    if metric.startswith("novel") and novel_label is not None and result.counts[novel_label] == 0:
        return "excluded-class"
    return "undefined"


@dataclass
class RunOutput:
    """Tidy records of one (strategy, seed) experiment."""

    strategy: str
    seed: int
    evaluations: list[dict[str, Any]]
    holdout: list[dict[str, Any]]
    summary: list[dict[str, Any]]
    rounds: list[dict[str, Any]]
    partition: list[dict[str, Any]]
    partition_report: dict[str, Any]

    @property
    def name(self) -> str:
        return f"{self.strategy}__seed{self.seed}"


def tidy_result(result: ExperimentResult, metrics: Sequence[str]) -> RunOutput:
    label, seed = result.strategy.label, result.seed
    nl = result.novel_label
    metrics = list(metrics) + ([m for m in NOVEL_METRICS if m not in metrics] if nl is not None else [])
    mx = result.matrix
    evals = []
    for (c, t, j), res in sorted(mx.entries.items()):
        vals = res.as_dict(nl)
        for m in metrics:
            v = vals[m]
            evals.append(
                {"strategy": label, "seed": seed, "client": c, "trained_task": t + 1, "eval_task": j + 1,
                 "metric": m, "value": v, "flag": _flag(v, res, m, nl)}
            )
    hold = []
    for c, res in sorted(mx.holdout.items()):
        vals = res.as_dict(nl)
        for m in metrics:
            v = vals[m]
            hold.append({"strategy": label, "seed": seed, "client": c, "metric": m, "value": v,
                         "flag": _flag(v, res, m, nl)})
    summary = []
    for t in range(mx.n_tasks):
        for m in metrics:
            summary.append({"strategy": label, "seed": seed, "trained_task": t + 1, "metric": m,
                            "value": mx.mean_across_clients(t, m)})
    for m in metrics:
        summary.append({"strategy": label, "seed": seed, "trained_task": "holdout", "metric": m,
                        "value": mx.holdout_mean(m)})
    rounds = []
    for rec in result.rounds:
        for c in sorted(rec.checksums):
            rounds.append(
                {"strategy": label, "seed": seed, "task": rec.task + 1, "round": rec.round + 1,
                 "phase": rec.phase, "client": c, "pre_loss": rec.pre_loss[c], "post_loss": rec.post_loss[c],
                 "checksum": rec.checksums[c]}
            )
    part = [{"seed": seed, **r} for r in result.benchmark.describe_rows()]
    return RunOutput(label, seed, evals, hold, summary, rounds, part, result.benchmark.report.to_dict())


@dataclass
class ResultBundle:
    manifest: dict[str, Any]
    runs: list[RunOutput]

    def _merged(self, attr: str) -> list[dict[str, Any]]:
        return [r for run in self.runs for r in getattr(run, attr)]

    @property
    def evaluations(self) -> list[dict[str, Any]]:
        return self._merged("evaluations")

    @property
    def holdout(self) -> list[dict[str, Any]]:
        return self._merged("holdout")

    @property
    def summary(self) -> list[dict[str, Any]]:
        return self._merged("summary")

    @property
    def rounds(self) -> list[dict[str, Any]]:
        return self._merged("rounds")

    def files(self) -> dict[str, str]:
        """Relative path -> file contents for the whole bundle."""
        out = {
            "manifest.json": json.dumps(self.manifest, indent=2, sort_keys=True) + "\n",
            "evaluations.csv": _csv_text(self.evaluations, EVAL_COLUMNS),
            "holdout.csv": _csv_text(self.holdout, HOLDOUT_COLUMNS),
            "summary.csv": _csv_text(self.summary, SUMMARY_COLUMNS),
        }
        for run in self.runs:
            d = f"runs/{run.name}"
            out[f"{d}/evaluations.csv"] = _csv_text(run.evaluations, EVAL_COLUMNS)
            out[f"{d}/holdout.csv"] = _csv_text(run.holdout, HOLDOUT_COLUMNS)
            out[f"{d}/rounds.csv"] = _csv_text(run.rounds, ROUND_COLUMNS)
            out[f"{d}/partition.csv"] = _csv_text(run.partition)
            out[f"{d}/partition_report.json"] = json.dumps(run.partition_report, sort_keys=True) + "\n"
        out.update(plotdata_files(self.summary, self.scenario))
        return out

    @property
    def scenario(self) -> str:
        return self.manifest["scenario"]

    def write(self, out_dir: str | Path) -> Path:
        out_dir = Path(out_dir)
        for rel, text in self.files().items():
            p = out_dir / rel
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_text(text)
        return out_dir


# ---------------------------------------------------------------------------
# Plot data
# ---------------------------------------------------------------------------

PLOT_COLUMNS = {
    "plot_task_ltr.csv": ["strategy", "trained_task", "metric", "mean", "std", "n_seeds"],
    "plot_holdout.csv": ["strategy", "metric", "mean", "std", "n_seeds"],
    "plot_pandemic.csv": ["strategy", "trained_task", "metric", "mean", "std", "n_seeds"],
}

DATA_DICTIONARY = [
    ("evaluations.csv", "strategy", "strategy label; F- prefix means federated averaging"),
    ("evaluations.csv", "seed", "run seed (partition, initialisation and sampling)"),
    ("evaluations.csv", "client", "client index"),
    ("evaluations.csv", "trained_task", "task just trained (1-based)"),
    ("evaluations.csv", "eval_task", "test task evaluated (1-based, <= trained_task)"),
    ("evaluations.csv", "metric", "ltr | accuracy | auc | nonnovel_ltr | novel_recall | novel_auc"),
    ("evaluations.csv", "value", "metric value; empty when undefined"),
    ("evaluations.csv", "flag", "excluded-class: novel label absent from the test task; undefined: other empty value"),
    ("holdout.csv", "*", "as evaluations.csv, for each client's final model on the shared hold-out set"),
    ("summary.csv", "value", "mean across clients of the mean over seen test tasks; trained_task=holdout gives "
     "the hold-out mean across clients"),
    ("plot_task_ltr.csv", "mean", "mean over seeds of summary ltr per trained task (localized benchmark)"),
    ("plot_task_ltr.csv", "std", "sample standard deviation over seeds (0 with one seed)"),
    ("plot_holdout.csv", "mean", "mean over seeds of the hold-out ltr and auc"),
    ("plot_pandemic.csv", "mean", "mean over seeds of nonnovel_ltr, novel_recall and novel_auc per trained task"),
    ("*", "n_seeds", "number of seeds with a defined value"),
]


def _aggregate(values: list[float]) -> tuple[float, float, int]:
    v = np.array([x for x in values if not math.isnan(x)], dtype=float)
    if v.size == 0:
        return float("nan"), float("nan"), 0
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return float(v.mean()), std, int(v.size)


def _to_float(v: Any) -> float:
    if isinstance(v, str):
        return float(v) if v else float("nan")
    return float(v)


def plotdata_files(summary: Iterable[Mapping[str, Any]], scenario: str) -> dict[str, str]:
    groups: dict[tuple, list[float]] = {}
    order: list[tuple] = []
    for r in summary:
        key = (r["strategy"], str(r["trained_task"]), r["metric"])
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(_to_float(r["value"]))

    task_rows, hold_rows, pan_rows = [], [], []
    for key in order:
        strat, task, metric = key
        mean, std, n = _aggregate(groups[key])
        if task == "holdout":
            if metric in ("ltr", "auc"):
                hold_rows.append({"strategy": strat, "metric": metric, "mean": mean, "std": std, "n_seeds": n})
        elif scenario == "pandemic" and metric in NOVEL_METRICS:
            pan_rows.append({"strategy": strat, "trained_task": int(task), "metric": metric, "mean": mean,
                             "std": std, "n_seeds": n})
        elif scenario == "localized" and metric == "ltr":
            task_rows.append({"strategy": strat, "trained_task": int(task), "metric": metric, "mean": mean,
                              "std": std, "n_seeds": n})
    out = {"plot_holdout.csv": _csv_text(hold_rows, PLOT_COLUMNS["plot_holdout.csv"])}
    if scenario == "pandemic":
        out["plot_pandemic.csv"] = _csv_text(pan_rows, PLOT_COLUMNS["plot_pandemic.csv"])
    else:
        out["plot_task_ltr.csv"] = _csv_text(task_rows, PLOT_COLUMNS["plot_task_ltr.csv"])
    out["data_dictionary.csv"] = _csv_text(
        [{"file": f, "column": c, "description": d} for f, c, d in DATA_DICTIONARY], ["file", "column", "description"]
    )
    return out


def emit_plotdata(source: ResultBundle | str | Path, out_dir: str | Path | None = None) -> dict[str, Path]:
    """Write one CSV per figure analogue (plus a data dictionary) and return their paths.

    ``source`` is a bundle in memory or a bundle directory containing
    ``summary.csv`` and ``manifest.json``.
    """
    if isinstance(source, ResultBundle):
        files = plotdata_files(source.summary, source.scenario)
        if out_dir is None:
            raise ValueError("out_dir is required for an in-memory bundle")
    else:
        src = Path(source)
        manifest = json.loads((src / "manifest.json").read_text())
        with (src / "summary.csv").open(newline="") as fh:
            summary = list(csv.DictReader(fh))
        files = plotdata_files(summary, manifest["scenario"])
        out_dir = out_dir or src
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, text in files.items():
        (out_dir / name).write_text(text)
        paths[name] = out_dir / name
    return paths


# ---------------------------------------------------------------------------
# Runners
# ---------------------------------------------------------------------------


def _manifest(cfg: RunConfig) -> dict[str, Any]:
    return {
        "manifest_version": 1,
        "package": "fedshift",
        "package_version": __version__,
        "scenario": cfg.scenario,
        "seeds": cfg.seeds,
        "strategies": [s.label for s in cfg.strategies],
        "runs": [f"{s.label}__seed{seed}" for s in cfg.strategies for seed in cfg.seeds],
        "config": cfg.raw,
        "config_dir": str(cfg.base_dir),
    }


def build_benchmark(cfg: RunConfig, seed: int) -> Benchmark:
    dataset = cfg.dataset(seed)
    plan = replace(cfg.plan, seed=seed)
    schedule = cfg.schedule(dataset)
    if schedule is None:
        return build_localized_benchmark(dataset, plan)
    return build_pandemic_benchmark(dataset, plan, schedule)


def _run_all(cfg: RunConfig) -> ResultBundle:
    benches = {seed: build_benchmark(cfg, seed) for seed in cfg.seeds}
    jobs = [(s, seed) for s in cfg.strategies for seed in cfg.seeds]

    def job(item):
        strategy, seed = item
        bench = benches[seed]
        spec = ModelSpec.from_mapping(cfg.model, bench.dataset.dim, bench.dataset.num_classes, seed=seed)
        return tidy_result(train(bench, strategy, cfg.federation, spec, seed), cfg.metrics)

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as ex:
            runs = list(ex.map(job, jobs))
    else:
        runs = [job(j) for j in jobs]
    return ResultBundle(_manifest(cfg), runs)


def run_localized_benchmark(cfg: RunConfig) -> ResultBundle:
    """Every (strategy, seed) pair on the localized benchmark."""
    if cfg.scenario != "localized":
        raise ValueError(f"expected a localized config, got {cfg.scenario!r}")
    return _run_all(cfg)


def run_pandemic_scenario(cfg: RunConfig) -> ResultBundle:
    """Every (strategy, seed) pair with a novel label emerging on the configured schedule."""
    if cfg.scenario != "pandemic":
        raise ValueError(f"expected a pandemic config, got {cfg.scenario!r}")
    return _run_all(cfg)


def run(cfg: RunConfig, out_dir: str | Path | None = None) -> tuple[ResultBundle, Path]:
    bundle = run_pandemic_scenario(cfg) if cfg.scenario == "pandemic" else run_localized_benchmark(cfg)
    path = bundle.write(out_dir or cfg.resolved_output_dir())
    return bundle, path
