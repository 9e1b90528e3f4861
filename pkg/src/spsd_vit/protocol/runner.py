"""Experiment orchestration: leave-one-domain-out and single-source
protocols, aggregation across seeds, and the hyperparameter sweep.

Run directories follow ``<out>/<experiment>/<held-out>/<seed>/``; a
completed run (matching ``result.json``) is loaded instead of retrained,
so interrupted experiments and sweeps pick up where they stopped.
"""

import dataclasses
import itertools
import json
import platform
import time
from collections import namedtuple
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__, kernels
from ..data import generate_synthetic, load_dataset_root
from ..errors import ConfigError
from .config import (
    DEFAULT_BETA_GRID,
    DEFAULT_LAMBDA_GRID,
    SweepGrid,
    config_fingerprint,
    config_to_dict,
)
from .trainer import RunResult, train_run

RESULTS_CSV = "results.csv"
CSV_HEADER = ["setting", "method", "target", "seed", "lambda", "beta_final",
              "accuracy", "ece", "sce", "selected_step"]


def load_datasets(data_config):
    """Materialise the configured dataset as ``(by_domain, names)``."""
    if data_config.kind == "synthetic":
        pool = generate_synthetic(
            data_config.domains,
            per_domain=data_config.per_domain,
            num_classes=data_config.num_classes,
            image_size=data_config.image_size,
            seed=data_config.seed,
        )
        by_domain = {d: pool.restrict_domains([d]) for d in pool.domains()}
        names = {s.domain_id: s.name for s in data_config.domains}
        return by_domain, names
    datasets, folder_names = load_dataset_root(data_config.root)
    by_domain = {i: ds for i, ds in enumerate(datasets)}
    names = dict(enumerate(folder_names))
    return by_domain, names


def _plan(config, domains):
    """Expand the protocol setting into (held_out_label, sources, eval_targets)."""
    targets = config.targets if config.targets is not None else tuple(domains)
    for t in targets:
        if t not in domains:
            raise ConfigError(f"target domain {t} not present; have {sorted(domains)}")
    if config.setting == "multi_source":
        if len(domains) < 2:
            raise ConfigError("multi_source needs at least two domains")
        return [
            (t, tuple(d for d in domains if d != t), (t,)) for t in targets
        ]
    # single_source: train on each listed domain alone, evaluate on the rest
    if len(domains) < 2:
        raise ConfigError("single_source needs at least two domains")
    return [
        (s, (s,), tuple(d for d in domains if d != s)) for s in targets
    ]


@dataclass
class RunManifest:
    """Provenance record written at the experiment root."""

    experiment: str
    fingerprint: str
    config: dict
    domain_names: dict
    package_version: str = __version__
    numpy_version: str = np.__version__
    kernel_backend: str = ""
    platform: str = ""
    created: float = 0.0
    runs: list = field(default_factory=list)

    def to_json_dict(self):
        return dataclasses.asdict(self)


def run_experiment(config, out_root, exp_dir=None, resume=True, log=None):
    """Execute every (held-out, seed) run of the experiment.

    Returns the flat list of :class:`RunResult`.  Artifacts: per-run
    directories, a consolidated ``results.csv``, ``summary.json`` with
    per-target aggregates, and ``manifest.json``.
    """
    if config.network is None:
        raise ConfigError("experiment config has no network section")
    datasets, names = load_datasets(config.data)
    sample = next(iter(datasets.values()))
    if sample.num_classes != config.network.num_classes:
        raise ConfigError(
            f"network.num_classes {config.network.num_classes} does not match "
            f"the dataset ({sample.num_classes} classes)"
        )
    if sample.image_size != config.network.image_size:
        raise ConfigError(
            f"network.image_size {config.network.image_size} does not match "
            f"the dataset ({sample.image_size} px)"
        )

    exp_dir = Path(exp_dir) if exp_dir is not None else Path(out_root) / config.name
    exp_dir.mkdir(parents=True, exist_ok=True)
    fingerprint = config_fingerprint(config)
    manifest = RunManifest(
        experiment=config.name,
        fingerprint=fingerprint,
        config=config_to_dict(config),
        domain_names={str(k): v for k, v in names.items()},
        kernel_backend=kernels.get_backend(),
        platform=platform.platform(),
        created=time.time(),
    )

    results = []
    for held_out, sources, eval_targets in _plan(config, sorted(datasets)):
        held_name = names.get(held_out, f"domain{held_out}")
        for seed in config.seeds:
            run_dir = exp_dir / held_name / str(seed)
            manifest.runs.append(str(run_dir.relative_to(exp_dir)))
            cached = _load_cached(run_dir, fingerprint)
            if resume and cached is not None:
                if log:
                    log(f"loaded completed run {run_dir}")
                results.extend(cached)
                continue
            stale = _state_fingerprint(run_dir)
            run_resume = resume and stale in (None, fingerprint)
            if log and resume and not run_resume:
                log(f"config changed; restarting {run_dir} from scratch")
            results.extend(train_run(
                config, datasets, sources, eval_targets, seed,
                run_dir=run_dir, resume=run_resume, log=log,
            ))

    _write_results_csv(exp_dir / RESULTS_CSV, results)
    summary = {
        "experiment": config.name,
        "aggregate": aggregate(results).to_json_dict(),
    }
    (exp_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    (exp_dir / "manifest.json").write_text(
        json.dumps(manifest.to_json_dict(), indent=2, sort_keys=True)
    )
    return results


def _load_cached(run_dir, fingerprint):
    path = Path(run_dir) / "result.json"
    if not path.is_file():
        return None
    try:
        payload = json.loads(path.read_text())
        if payload.get("fingerprint") != fingerprint:
            return None
        return [RunResult.from_json_dict(d) for d in payload["results"]]
    except (json.JSONDecodeError, KeyError, TypeError):
        return None


def _state_fingerprint(run_dir):
    """Fingerprint recorded in a run's checkpoint state, if any."""
    path = Path(run_dir) / "state.json"
    if not path.is_file():
        return None
    try:
        return json.loads(path.read_text()).get("fingerprint")
    except json.JSONDecodeError:
        return None


def _write_results_csv(path, results):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in results:
            writer.writerow([
                r.setting, r.method, r.target_domain, r.seed,
                f"{r.lam:g}", f"{r.beta_final:g}",
                f"{r.target_accuracy:.6f}", f"{r.ece:.6f}", f"{r.sce:.6f}",
                r.selected_step,
            ])


@dataclass(frozen=True)
class TargetAggregate:
    mean: float
    std: float
    count: int


@dataclass(frozen=True)
class AggregateResult:
    """Per-target mean/std over seeds plus the unweighted overall mean."""

    method: str
    setting: str
    per_target: dict
    overall_mean: float

    def to_json_dict(self):
        return {
            "method": self.method,
            "setting": self.setting,
            "per_target": {
                str(t): dataclasses.asdict(a) for t, a in sorted(self.per_target.items())
            },
            "overall_mean": self.overall_mean,
        }


def aggregate(results, value=lambda r: r.target_accuracy):
    """Mean and population std per target, and the mean of per-target means.

    All results must come from one (method, setting) pair; the overall
    mean weights every target equally regardless of its seed count.
    """
    results = list(results)
    if not results:
        raise ValueError("cannot aggregate zero results")
    methods = {r.method for r in results}
    settings = {r.setting for r in results}
    if len(methods) > 1 or len(settings) > 1:
        raise ValueError(
            f"aggregate needs a single (method, setting) group, got "
            f"{sorted(methods)} x {sorted(settings)}"
        )
    by_target = {}
    for r in results:
        by_target.setdefault(r.target_domain, []).append(value(r))
    per_target = {
        t: TargetAggregate(
            mean=float(np.mean(vals)),
            std=float(np.std(vals)),
            count=len(vals),
        )
        for t, vals in by_target.items()
    }
    overall = float(np.mean([a.mean for a in per_target.values()]))
    return AggregateResult(
        method=methods.pop(), setting=settings.pop(),
        per_target=per_target, overall_mean=overall,
    )


@dataclass(frozen=True)
class SweepPoint:
    lam: float
    beta_final: float
    val_accuracy: float
    target_accuracy: float
    num_runs: int


@dataclass(frozen=True)
class SweepResult:
    points: tuple
    winner: SweepPoint

    def to_json_dict(self):
        return {
            "points": [dataclasses.asdict(p) for p in self.points],
            "winner": dataclasses.asdict(self.winner),
        }


GridPoint = namedtuple("GridPoint", ["lam", "beta_final"])


def sweep_grid(config):
    """The (lam, beta_final) grid the sweep will visit, in order."""
    if config.method == "erm":
        raise ConfigError("erm has no distillation hyperparameters to sweep")
    grid = config.sweep
    if grid is None:
        betas = DEFAULT_BETA_GRID if config.method == "spsd" else (config.distill.beta_final,)
        grid = SweepGrid(lam=DEFAULT_LAMBDA_GRID, beta_final=betas)
    return [GridPoint(*point) for point in itertools.product(grid.lam, grid.beta_final)]


def sweep(config, out_root, resume=True, log=None):
    """Train the full hyperparameter grid and pick the winner by pooled
    validation accuracy (ties go to the earliest grid point)."""
    points = []
    base_dir = Path(out_root) / config.name
    for lam, beta in sweep_grid(config):
        derived = dataclasses.replace(
            config,
            distill=dataclasses.replace(config.distill, lam=lam, beta_final=beta),
        )
        tag = f"lam{lam:g}_beta{beta:g}"
        if log:
            log(f"sweep point {tag}")
        results = run_experiment(
            derived, out_root, exp_dir=base_dir / tag, resume=resume, log=log,
        )
        points.append(SweepPoint(
            lam=lam, beta_final=beta,
            val_accuracy=float(np.mean([r.val_accuracy for r in results])),
            target_accuracy=float(np.mean([r.target_accuracy for r in results])),
            num_runs=len(results),
        ))

    winner = points[0]
    for p in points[1:]:
        if p.val_accuracy > winner.val_accuracy:
            winner = p
    result = SweepResult(points=tuple(points), winner=winner)

    with open(base_dir / "grid_table.csv", "w", newline="") as fh:
        import csv

        writer = csv.writer(fh)
        writer.writerow(["lambda", "beta_final", "val_accuracy",
                         "target_accuracy", "num_runs"])
        for p in points:
            writer.writerow([
                f"{p.lam:g}", f"{p.beta_final:g}", f"{p.val_accuracy:.6f}",
                f"{p.target_accuracy:.6f}", p.num_runs,
            ])
    (base_dir / "sweep_summary.json").write_text(
        json.dumps(result.to_json_dict(), indent=2, sort_keys=True)
    )
    return result
