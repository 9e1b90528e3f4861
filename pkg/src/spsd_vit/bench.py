"""Wall-clock benchmarks.

Two comparisons matter here: the compiled kernel backend against the
pure-numpy fallback (same training step, same data), and the per-step
overhead of distillation modes against plain ERM.  Both reuse the real
:class:`~spsd_vit.protocol.trainer.TrainingLoop`, so numbers reflect the
full step: batch draw, augmentation, forward, loss, backward, update.
"""

import time
from dataclasses import replace

import numpy as np

from . import kernels
from .data import SyntheticDomainSpec
from .protocol.config import DataConfig, ExperimentConfig
from .protocol.trainer import prepare_run


def default_bench_config():
    """A small but representative training setup."""
    from .model import NetworkConfig

    specs = tuple(
        SyntheticDomainSpec(domain_id=d, tint=t, texture_seed=11 * (d + 1),
                            blur_sigma=0.4 + 0.2 * d, cue_prob=0.9)
        for d, t in enumerate([(0.55, 0.45, 0.42), (0.42, 0.52, 0.58)])
    )
    return ExperimentConfig(
        name="bench",
        method="spsd",
        seeds=(0,),
        total_steps=100,
        network=NetworkConfig(
            num_classes=5, image_size=32, patch_size=8,
            num_blocks=4, dim=64, num_heads=4,
        ),
        data=DataConfig(kind="synthetic", per_domain=160, num_classes=5,
                        image_size=32, domains=specs, seed=0),
    )


def _build_loop(config, method, seed=0, min_steps=None):
    from .protocol.runner import load_datasets

    config = replace(config, method=method, name=f"bench_{method}")
    if min_steps is not None and config.total_steps < min_steps:
        # The softening schedule is defined on [0, total_steps]; stretch it
        # so a long benchmark never walks off the end.
        config = replace(config, total_steps=min_steps)
    datasets, _ = load_datasets(config.data)
    sources = sorted(datasets)
    ctx = prepare_run(config, datasets, sources, seed)
    return ctx.loop


def _time_loop(loop, steps, warmup):
    for _ in range(warmup):
        loop.step()
    times = [loop.step().millis for _ in range(steps)]
    return float(np.mean(times)), float(np.median(times))


def bench_methods(config=None, steps=500, warmup=5, methods=("erm", "spsd"), seed=0):
    """Mean/median step time per training mode on identical data.

    Returns ``{method: {"mean_ms", "median_ms"}, "ratios": {...}}`` where
    ratios are relative to the first method listed.
    """
    config = config or default_bench_config()
    out = {}
    for method in methods:
        loop = _build_loop(config, method, seed=seed, min_steps=steps + warmup)
        mean_ms, median_ms = _time_loop(loop, steps, warmup)
        out[method] = {"mean_ms": mean_ms, "median_ms": median_ms}
    baseline = methods[0]
    out["ratios"] = {
        m: out[m]["mean_ms"] / out[baseline]["mean_ms"] for m in methods
    }
    return out


def bench_backends(config=None, steps=200, warmup=5, seed=0):
    """Step time of the full training loop under each kernel backend."""
    config = config or default_bench_config()
    previous = kernels.get_backend()
    out = {}
    try:
        for backend in kernels.available_backends():
            kernels.use_backend(backend)
            loop = _build_loop(config, config.method, seed=seed,
                               min_steps=steps + warmup)
            mean_ms, median_ms = _time_loop(loop, steps, warmup)
            out[backend] = {"mean_ms": mean_ms, "median_ms": median_ms}
    finally:
        kernels.use_backend(previous)
    if "cython" in out and "python" in out:
        out["speedup"] = out["python"]["mean_ms"] / out["cython"]["mean_ms"]
    return out


def bench_kernels(rows=2176, dim=64, repeats=200):
    """Microbenchmark of the individual kernels, per backend."""
    rng = np.random.default_rng(0)
    x = rng.normal(size=(rows, dim)).astype(np.float32)
    dy = rng.normal(size=(rows, dim)).astype(np.float32)
    g = np.ones(dim, dtype=np.float32)
    b = np.zeros(dim, dtype=np.float32)
    previous = kernels.get_backend()
    out = {}
    try:
        for backend in kernels.available_backends():
            kernels.use_backend(backend)
            timings = {}
            y, mean, rstd = kernels.layer_norm_forward(x, g, b, 1e-6)
            p = kernels.softmax_forward(x)
            cases = {
                "layer_norm_forward": lambda: kernels.layer_norm_forward(x, g, b, 1e-6),
                "layer_norm_backward": lambda: kernels.layer_norm_backward(dy, x, g, mean, rstd),
                "softmax_forward": lambda: kernels.softmax_forward(x),
                "softmax_backward": lambda: kernels.softmax_backward(dy, p),
                "gelu_forward": lambda: kernels.gelu_forward(x),
                "gelu_backward": lambda: kernels.gelu_backward(dy, x),
            }
            for name, fn in cases.items():
                fn()
                start = time.perf_counter()
                for _ in range(repeats):
                    fn()
                timings[name] = (time.perf_counter() - start) / repeats * 1e6  # us
            out[backend] = timings
    finally:
        kernels.use_backend(previous)
    return out
