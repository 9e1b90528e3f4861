"""Single-run training with IID model selection.

One *run* trains on the pooled training splits of its source domains,
evaluates pooled source validation accuracy on a fixed cadence, keeps
the earliest checkpoint with the best validation accuracy, and finally
scores that checkpoint on the held-out domain(s).

Every random choice is drawn from a named child stream of the run seed
(init / batch order / route sampling / augmentation), so a run is a
pure function of ``(config, datasets, seed)``.  Generator states are
persisted at checkpoints, which makes a resumed run continue exactly
where the interrupted one left off.
"""

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..data import augment_batch, channel_stats, normalize_only, split_train_val
from ..data.dataset import DomainDataset
from ..distill import BetaSchedule, sample_block, total_loss
from ..errors import ConfigError
from ..metrics import (
    CalibrationReport,
    attention_heatmap,
    blockwise_accuracy,
    calibration_report,
    softmax_probs,
    top1_accuracy,
)
from ..model import VisionTransformer, load_checkpoint, save_checkpoint
from ..optim import AdamW
from .config import config_fingerprint

EVAL_BATCH = 256

# child-stream tags of the run seed
_STREAM_INIT = 0
_STREAM_ORDER = 1
_STREAM_BLOCK = 2
_STREAM_AUG = 3
_STREAM_SPLIT = 4


@dataclass
class StepRecord:
    step: int
    total: float
    ce: float
    kl: float
    beta: float
    millis: float


@dataclass
class RunResult:
    """Evaluation of one trained run on one held-out domain."""

    experiment: str
    method: str
    setting: str
    source_domains: tuple
    target_domain: int
    seed: int
    lam: float
    beta_final: float
    selected_step: int
    val_accuracy: float
    target_accuracy: float
    per_block: dict
    calibration: CalibrationReport
    trajectory: tuple
    mean_step_time: float
    total_steps: int
    wall_time: float

    def to_json_dict(self):
        d = {k: v for k, v in vars(self).items() if k != "calibration"}
        d["source_domains"] = list(self.source_domains)
        d["trajectory"] = [[int(s), float(a)] for s, a in self.trajectory]
        d["per_block"] = {str(k): float(v) for k, v in self.per_block.items()}
        d["calibration"] = self.calibration.to_json_dict()
        return d

    @staticmethod
    def from_json_dict(d):
        d = dict(d)
        d["source_domains"] = tuple(d["source_domains"])
        d["trajectory"] = tuple((int(s), float(a)) for s, a in d["trajectory"])
        d["per_block"] = {int(k): float(v) for k, v in d["per_block"].items()}
        d["calibration"] = CalibrationReport.from_json_dict(d["calibration"])
        return RunResult(**d)

    @property
    def ece(self):
        return self.calibration.ece

    @property
    def sce(self):
        return self.calibration.sce


def select_model_iid(trajectory):
    """Earliest step attaining the maximum pooled validation accuracy."""
    trajectory = list(trajectory)
    if not trajectory:
        raise ValueError("cannot select from an empty trajectory")
    best_step, best_acc = trajectory[0]
    for step, acc in trajectory[1:]:
        if acc > best_acc:
            best_step, best_acc = step, acc
    return int(best_step), float(best_acc)


def _stream(seed, tag):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, tag])))


class TrainingLoop:
    """Stateful train-step driver shared by the trainer and the benchmark."""

    def __init__(self, model, optimizer, distill_config, schedule,
                 images, labels, batch_size, augment_config, seed):
        if len(images) < batch_size:
            raise ConfigError(
                f"batch_size {batch_size} exceeds the {len(images)}-sample "
                "pooled training set"
            )
        self.model = model
        self.optimizer = optimizer
        self.distill = distill_config
        self.schedule = schedule
        self.images = images
        self.labels = labels
        self.batch_size = batch_size
        self.augment = augment_config
        self.order_rng = _stream(seed, _STREAM_ORDER)
        self.block_rng = _stream(seed, _STREAM_BLOCK)
        self.aug_rng = _stream(seed, _STREAM_AUG)
        self.count = 0

    def step(self):
        """One optimization step; returns its loss components and timing."""
        t = self.count + 1
        start = time.perf_counter()
        idx = self.order_rng.choice(len(self.images), size=self.batch_size, replace=False)
        batch = augment_batch(self.images[idx], self.aug_rng, self.augment)
        batch = batch.astype(self.model.dtype, copy=False)
        labels = self.labels[idx]

        J = self.model.config.num_blocks
        if self.distill.mode == "erm":
            bundle = self.model.forward_with_cache(batch)
            out = total_loss(bundle.full_logits, None, labels, self.distill)
            d_logits = {J: out.d_full}
        else:
            j = sample_block(self.block_rng, self.distill)
            bundle = self.model.forward_with_cache(batch, routes=[j])
            out = total_loss(
                bundle.full_logits, bundle.routes[j], labels,
                self.distill, self.schedule, t,
            )
            if j == J:
                d_logits = {J: out.d_full + out.d_route}
            else:
                d_logits = {J: out.d_full, j: out.d_route}
        grads = self.model.backward(bundle, d_logits)
        self.optimizer.step(grads)
        self.count = t
        millis = (time.perf_counter() - start) * 1e3
        return StepRecord(
            step=t, total=out.total, ce=out.ce, kl=out.kl,
            beta=out.beta, millis=millis,
        )

    def rng_state(self):
        return {
            "order": self.order_rng.bit_generator.state,
            "block": self.block_rng.bit_generator.state,
            "aug": self.aug_rng.bit_generator.state,
        }

    def restore_rng_state(self, state):
        self.order_rng.bit_generator.state = state["order"]
        self.block_rng.bit_generator.state = state["block"]
        self.aug_rng.bit_generator.state = state["aug"]


def eval_logits(model, images, augment_config, batch_size=EVAL_BATCH):
    """Forward a stack of raw images (normalization only, no augmentation)."""
    normalized = normalize_only(images, augment_config).astype(model.dtype, copy=False)
    chunks = [
        model.forward(normalized[i:i + batch_size])
        for i in range(0, len(normalized), batch_size)
    ]
    return np.concatenate(chunks)


@dataclass
class RunContext:
    """Everything train_run derives from (config, datasets, seed)."""

    model: VisionTransformer
    optimizer: AdamW
    loop: TrainingLoop
    augment: "AugmentConfig"
    train_pool: DomainDataset
    val_pool: DomainDataset
    records: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)
    best_step: int = 0
    best_acc: float = -1.0
    best_params: dict = None
    wall_base: float = 0.0


def prepare_run(config, datasets, sources, seed):
    """Split sources, derive normalization stats, build model/optimizer/loop."""
    train_parts, val_parts = [], []
    for d in sources:
        tr, va = split_train_val(datasets[d], train_fraction=0.8, seed=[seed, _STREAM_SPLIT, d])
        train_parts.append(tr)
        val_parts.append(va)
    train_pool = DomainDataset.concatenate(train_parts)
    val_pool = DomainDataset.concatenate(val_parts)

    aug = config.augment
    if aug.mean is None:
        aug = aug.with_stats(*channel_stats(train_pool.images))

    model = VisionTransformer(config.network, seed=[seed, _STREAM_INIT])
    optimizer = AdamW(model.params, config.optim)
    distill = config.distill.resolve_sample_range(config.network.num_blocks)
    schedule = None
    if distill.mode == "spsd":
        schedule = BetaSchedule(distill.beta_final, config.total_steps)
    loop = TrainingLoop(
        model, optimizer, distill, schedule,
        train_pool.images, train_pool.labels,
        config.batch_size, aug, seed,
    )
    return RunContext(
        model=model, optimizer=optimizer, loop=loop, augment=aug,
        train_pool=train_pool, val_pool=val_pool,
    )


def _write_steps_csv(path, records):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "total", "ce", "kl", "beta", "millis"])
        for r in records:
            writer.writerow([
                r.step, f"{r.total:.8f}", f"{r.ce:.8f}", f"{r.kl:.8f}",
                "" if r.beta is None else f"{r.beta:.8f}", f"{r.millis:.3f}",
            ])


def _read_steps_csv(path):
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            records.append(StepRecord(
                step=int(row["step"]), total=float(row["total"]),
                ce=float(row["ce"]), kl=float(row["kl"]),
                beta=float(row["beta"]) if row["beta"] else None,
                millis=float(row["millis"]),
            ))
    return records


def _save_state(run_dir, ctx, fingerprint, elapsed):
    state = {
        "fingerprint": fingerprint,
        "step": ctx.loop.count,
        "best_step": ctx.best_step,
        "best_acc": ctx.best_acc,
        "trajectory": [[int(s), float(a)] for s, a in ctx.trajectory],
        "rng": ctx.loop.rng_state(),
        "wall_time": elapsed,
    }
    tmp = run_dir / "state.json.tmp"
    tmp.write_text(json.dumps(state))
    tmp.replace(run_dir / "state.json")
    save_checkpoint(run_dir / "last.npz", ctx.model, ctx.optimizer, step=ctx.loop.count)
    _write_steps_csv(run_dir / "steps.csv", ctx.records)


def _try_resume(run_dir, ctx, fingerprint, log):
    state_path = run_dir / "state.json"
    last_path = run_dir / "last.npz"
    if not (state_path.is_file() and last_path.is_file()):
        return
    state = json.loads(state_path.read_text())
    if state["fingerprint"] != fingerprint:
        raise ConfigError(
            f"refusing to resume {run_dir}: it was produced by a different "
            "config (fingerprint mismatch); use --no-resume to start over"
        )
    saved_model, saved_opt, step = load_checkpoint(last_path)
    ctx.model.load_params(saved_model.params)
    ctx.optimizer.load_state_dict(saved_opt.state_dict())
    ctx.loop.count = step
    ctx.loop.restore_rng_state(state["rng"])
    ctx.trajectory = [(int(s), float(a)) for s, a in state["trajectory"]]
    ctx.best_step = int(state["best_step"])
    ctx.best_acc = float(state["best_acc"])
    ctx.wall_base = float(state.get("wall_time", 0.0))
    if (run_dir / "best.npz").is_file():
        best_model, _, _ = load_checkpoint(run_dir / "best.npz")
        ctx.best_params = best_model.params
    if (run_dir / "steps.csv").is_file():
        ctx.records = _read_steps_csv(run_dir / "steps.csv")
    if log:
        log(f"resumed {run_dir} at step {step}")


def train_run(config, datasets, sources, eval_targets, seed,
              run_dir=None, resume=True, log=None):
    """Train one run and evaluate it on each domain in ``eval_targets``.

    Returns one :class:`RunResult` per evaluation target (they share the
    selected checkpoint).  When ``run_dir`` is given, checkpoints, the
    per-step log, per-target results, and heatmaps are persisted there
    and an interrupted run resumes from its last checkpoint.
    """
    started = time.perf_counter()
    fingerprint = config_fingerprint(config)
    ctx = prepare_run(config, datasets, sources, seed)
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        if resume:
            _try_resume(run_dir, ctx, fingerprint, log)

    T = config.total_steps
    while ctx.loop.count < T:
        record = ctx.loop.step()
        ctx.records.append(record)
        t = ctx.loop.count
        if t % config.eval_every == 0 or t == T:
            logits = eval_logits(ctx.model, ctx.val_pool.images, ctx.augment)
            acc = top1_accuracy(logits, ctx.val_pool.labels)
            ctx.trajectory.append((t, acc))
            if acc > ctx.best_acc:
                ctx.best_acc = acc
                ctx.best_step = t
                ctx.best_params = ctx.model.copy_params()
                if run_dir is not None:
                    save_checkpoint(run_dir / "best.npz", ctx.model, step=t)
            if run_dir is not None:
                _save_state(run_dir, ctx, fingerprint,
                            ctx.wall_base + time.perf_counter() - started)
            if log:
                log(f"step {t}/{T} val_acc {acc:.4f} "
                    f"(best {ctx.best_acc:.4f} @ {ctx.best_step})")

    selected_step, val_acc = select_model_iid(ctx.trajectory)
    assert selected_step == ctx.best_step and val_acc == ctx.best_acc
    if ctx.best_params is not None:
        ctx.model.load_params(ctx.best_params)

    mean_ms = float(np.mean([r.millis for r in ctx.records])) if ctx.records else 0.0
    wall = ctx.wall_base + time.perf_counter() - started
    results = []
    heatmap_payload = {}
    for target in eval_targets:
        ds = datasets[target]
        logits = eval_logits(ctx.model, ds.images, ctx.augment)
        probs = softmax_probs(logits)
        normalized = normalize_only(ds.images, ctx.augment).astype(
            ctx.model.dtype, copy=False
        )
        per_block = blockwise_accuracy(ctx.model, normalized, ds.labels)
        results.append(RunResult(
            experiment=config.name,
            method=config.method,
            setting=config.setting,
            source_domains=tuple(sources),
            target_domain=int(target),
            seed=int(seed),
            lam=config.distill.lam,
            beta_final=config.distill.beta_final,
            selected_step=selected_step,
            val_accuracy=val_acc,
            target_accuracy=top1_accuracy(logits, ds.labels),
            per_block=per_block,
            calibration=calibration_report(probs, ds.labels),
            trajectory=tuple(ctx.trajectory),
            mean_step_time=mean_ms,
            total_steps=T,
            wall_time=wall,
        ))
        n_maps = min(config.heatmap_samples, len(ds))
        if n_maps:
            maps = np.stack([
                attention_heatmap(ctx.model, normalized[i]) for i in range(n_maps)
            ])
            heatmap_payload[f"target{target}/images"] = ds.images[:n_maps]
            heatmap_payload[f"target{target}/maps"] = maps.astype(np.float32)

    if run_dir is not None:
        payload = {"results": [r.to_json_dict() for r in results],
                   "fingerprint": fingerprint}
        tmp = run_dir / "result.json.tmp"
        tmp.write_text(json.dumps(payload, indent=2, sort_keys=True))
        tmp.replace(run_dir / "result.json")
        _write_steps_csv(run_dir / "steps.csv", ctx.records)
        if heatmap_payload:
            with open(run_dir / "heatmaps.npz", "wb") as fh:
                np.savez(fh, **heatmap_payload)
    return results
