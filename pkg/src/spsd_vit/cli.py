"""Command-line interface.

Subcommands: ``make-data`` (render a synthetic dataset to disk),
``train`` (run the configured experiment), ``sweep`` (hyperparameter
grid), ``report`` (tables and figures from saved runs), and ``bench``
(kernel-backend and method step-time comparisons).

Every command validates its configuration completely before touching
the filesystem and exits 1 with a message naming the offending key on
failure.  The output root defaults to ``$SPSD_OUT_DIR`` or ``./runs``.
"""

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .errors import ConfigError, IngestError

OUT_ENV = "SPSD_OUT_DIR"


def _default_out():
    return os.environ.get(OUT_ENV) or "runs"


def build_parser():
    parser = argparse.ArgumentParser(
        prog="spsd-vit",
        description="Domain-generalization harness for self-distilled ViTs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="render the configured synthetic dataset to disk")
    p.add_argument("--config", required=True, help="experiment or data YAML")
    p.add_argument("--out", required=True, help="dataset root directory to create")
    p.add_argument("--seed", type=int, default=None, help="override data.seed")

    p = sub.add_parser("train", help="train every (target, seed) run of an experiment")
    p.add_argument("--config", required=True, help="experiment YAML")
    p.add_argument("--out", default=None, help=f"runs root (default ${OUT_ENV} or ./runs)")
    p.add_argument("--seed", type=int, default=None, help="train only this seed")
    p.add_argument("--target", type=int, default=None, help="train only this held-out domain")
    p.add_argument("--no-resume", action="store_true",
                   help="ignore existing checkpoints and completed runs")

    p = sub.add_parser("sweep", help="train the hyperparameter grid and pick a winner")
    p.add_argument("--config", required=True, help="experiment YAML")
    p.add_argument("--out", default=None)
    p.add_argument("--no-resume", action="store_true")

    p = sub.add_parser("report", help="render tables and figures from saved runs")
    p.add_argument("--runs", default=None, help=f"runs root (default ${OUT_ENV} or ./runs)")
    p.add_argument("--out", default=None, help="report directory (default <runs>/report)")

    p = sub.add_parser("bench", help="step-time benchmarks")
    p.add_argument("--what", choices=("backends", "methods", "kernels", "all"),
                   default="all")
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--config", default=None, help="optional experiment YAML")
    p.add_argument("--out", default=None, help="optional JSON output path")
    return parser


def cmd_make_data(args):
    import yaml

    from .data import generate_synthetic, save_dataset_root
    from .protocol.config import DataConfig, _build

    with open(args.config) as fh:
        raw = yaml.safe_load(fh)
    if isinstance(raw, dict) and "data" in raw:
        raw = raw["data"]
    data = _build(DataConfig, raw, "data")
    if data.kind != "synthetic":
        raise ConfigError("make-data requires data.kind == 'synthetic'")
    if args.seed is not None:
        data = dataclasses.replace(data, seed=args.seed)
    dataset = generate_synthetic(
        data.domains, per_domain=data.per_domain, num_classes=data.num_classes,
        image_size=data.image_size, seed=data.seed,
    )
    manifest = save_dataset_root(
        args.out, dataset, specs=data.domains,
        manifest_extra={"seed": data.seed, "image_size": data.image_size},
    )
    print(f"wrote {len(dataset)} images across {len(manifest['domains'])} "
          f"domains to {args.out}")
    return 0


def _load_config(path):
    from .protocol import load_experiment_config

    return load_experiment_config(path)


def cmd_train(args):
    from .protocol import run_experiment

    config = _load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seeds=(args.seed,))
    if args.target is not None:
        config = dataclasses.replace(config, targets=(args.target,))
    out_root = args.out or _default_out()
    results = run_experiment(
        config, out_root, resume=not args.no_resume, log=print,
    )
    for r in results:
        print(
            f"[{r.method}] target {r.target_domain} seed {r.seed}: "
            f"accuracy {r.target_accuracy:.4f} ece {r.ece:.4f} "
            f"sce {r.sce:.4f} (selected step {r.selected_step})"
        )
    return 0


def cmd_sweep(args):
    from .protocol import sweep

    config = _load_config(args.config)
    out_root = args.out or _default_out()
    result = sweep(config, out_root, resume=not args.no_resume, log=print)
    w = result.winner
    print(
        f"winner: lam {w.lam:g} beta_final {w.beta_final:g} "
        f"(val accuracy {w.val_accuracy:.4f} over {w.num_runs} runs)"
    )
    return 0


def cmd_report(args):
    from .report import write_report

    runs_root = args.runs or _default_out()
    out_dir = args.out or (Path(runs_root) / "report")
    written = write_report(runs_root, out_dir)
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_bench(args):
    from . import bench

    config = _load_config(args.config) if args.config else None
    payload = {}
    if args.what in ("methods", "all"):
        payload["methods"] = bench.bench_methods(config, steps=args.steps)
    if args.what in ("backends", "all"):
        payload["backends"] = bench.bench_backends(config, steps=args.steps)
    if args.what in ("kernels", "all"):
        payload["kernels"] = bench.bench_kernels()
    text = json.dumps(payload, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return 0


_COMMANDS = {
    "make-data": cmd_make_data,
    "train": cmd_train,
    "sweep": cmd_sweep,
    "report": cmd_report,
    "bench": cmd_bench,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, IngestError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
