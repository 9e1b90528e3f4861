"""Acceptance gate: one test per numbered shipping criterion.

Each test is marked ``@pytest.mark.acceptance(n, label)``; the conftest
hook prints a one-line PASS/FAIL verdict per criterion after the run.
Criteria 8 and 9 share one leave-one-domain-out experiment driven by
``configs/acceptance.yaml`` and therefore dominate the suite's runtime.
"""

import dataclasses
import json
import statistics
import time
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest
import yaml

from spsd_vit.cli import main
from spsd_vit.distill import BetaSchedule, DistillConfig, kl_softened, kl_tempered, total_loss
from spsd_vit.metrics import blockwise_accuracy, ece, sce, top1_accuracy
from spsd_vit.model import NetworkConfig, VisionTransformer
from spsd_vit.optim import AdamW, AdamWConfig
from spsd_vit.protocol import aggregate, config_from_dict, run_experiment

ACCEPTANCE_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "acceptance.yaml"


@pytest.mark.acceptance(1, "softening/tempering identities")
def test_softening_identities():
    start = time.monotonic()
    prng = np.random.default_rng(11)
    n, C = 10_000, 6
    z = prng.normal(scale=3.0, size=(n, C))
    z_j = prng.normal(scale=3.0, size=(n, C))
    y = prng.integers(0, C, size=n)

    # beta = 1 leaves both sides unblended: identical to temperature 1
    softened = kl_softened(z, z_j, y, beta=1.0, placement="both")
    tempered = kl_tempered(z, z_j, tau=1.0)
    assert np.max(np.abs(softened - tempered)) < 1e-12

    # beta = 0 replaces both sides with the same one-hot target
    zero = kl_softened(z, z_j, y, beta=0.0, placement="both")
    assert np.all(zero == 0.0)
    assert time.monotonic() - start < 5.0


@pytest.mark.acceptance(2, "full-objective gradient check")
def test_full_objective_gradients_every_parameter():
    start = time.monotonic()
    net = NetworkConfig(num_classes=3, image_size=8, patch_size=4,
                        num_blocks=2, dim=8, num_heads=2, mlp_ratio=2.0)
    model = VisionTransformer(net, seed=0, dtype=np.float64)
    prng = np.random.default_rng(100)
    for p in model.params.values():
        p[...] = prng.normal(scale=0.25, size=p.shape)
    images = prng.uniform(size=(4, 8, 8, 3))
    labels = prng.integers(0, 3, size=4)

    config = DistillConfig(mode="spsd", lam=0.7, sample_range=(1,))
    schedule = BetaSchedule(beta_final=0.8, total_steps=10)
    step = 5  # beta_t = 0.4

    def loss():
        bundle = model.forward_with_cache(images, routes=(1,))
        return bundle, total_loss(bundle.full_logits, bundle.routes[1], labels,
                                  config, schedule=schedule, step=step)

    bundle, out = loss()
    grads = model.backward(bundle, {net.num_blocks: out.d_full, 1: out.d_route})

    h = 1e-5
    worst = 0.0
    for name, p in model.params.items():
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = loss()[1].total
            flat[i] = orig - h
            lo = loss()[1].total
            flat[i] = orig
            fd = (hi - lo) / (2 * h)
            rel = abs(fd - g[i]) / max(abs(fd) + abs(g[i]), 1e-6)
            worst = max(worst, rel)
    assert worst < 1e-4, f"worst relative error {worst:.3e}"
    assert time.monotonic() - start < 60.0


@pytest.mark.acceptance(3, "linear softening schedule")
def test_schedule_endpoints_and_linearity():
    schedule = BetaSchedule(beta_final=0.8, total_steps=3000)
    assert schedule.beta_at(0) == 0.0
    assert schedule.beta_at(3000) == 0.8
    prng = np.random.default_rng(3)
    for a in prng.uniform(size=100):
        assert abs(schedule.beta_at(a * 3000) - a * 0.8) <= 1e-12


@pytest.mark.acceptance(4, "KL nonnegativity")
def test_kl_nonnegative_including_extreme_logits():
    prng = np.random.default_rng(4)
    n, C = 10_000, 5
    blocks = [
        prng.normal(size=(n // 4, C)),
        prng.normal(scale=10.0, size=(n // 4, C)),
        prng.uniform(-50.0, 50.0, size=(n // 4, C)),
        np.where(prng.uniform(size=(n // 4, C)) < 0.5, -50.0, 50.0),
    ]
    z = np.concatenate(blocks)
    z_j = np.concatenate([prng.permutation(b) for b in blocks])
    y = prng.integers(0, C, size=z.shape[0])

    for tau in (0.5, 1.0, 3.0):
        assert kl_tempered(z, z_j, tau).min() >= -1e-12
    for beta in (0.0, 0.37, 1.0):
        for placement in ("both", "final_only", "intermediate_only"):
            assert kl_softened(z, z_j, y, beta, placement).min() >= -1e-12


def _ece_loop(conf, correct, bins):
    groups = {}
    for c, ok in zip(conf.tolist(), correct.tolist()):
        b = min(int(c * bins), bins - 1)
        groups.setdefault(b, []).append((c, ok))
    err = 0.0
    for members in groups.values():
        accs = [ok for _, ok in members]
        confs = [c for c, _ in members]
        gap = abs(sum(accs) / len(accs) - sum(confs) / len(confs))
        err += (len(members) / len(conf)) * gap
    return err


def _sce_loop(probs, labels, bins):
    C = probs.shape[1]
    total = 0.0
    for c in range(C):
        hits = (labels == c).astype(float)
        total += _ece_loop(probs[:, c], hits, bins)
    return total / C


@pytest.mark.acceptance(5, "calibration metric oracles")
def test_calibration_matches_loop_oracles():
    prng = np.random.default_rng(5)
    for _ in range(10_000):
        n = int(prng.integers(4, 25))
        bins = int(prng.integers(1, 16))
        conf = prng.uniform(size=n)
        correct = (prng.uniform(size=n) < 0.5).astype(float)
        assert ece(conf, correct, bins) == pytest.approx(
            _ece_loop(conf, correct, bins), abs=1e-12)

    n, C, bins = 10_000, 4, 15
    raw = prng.uniform(size=(n, C))
    probs = raw / raw.sum(axis=1, keepdims=True)
    labels = prng.integers(0, C, size=n)
    assert sce(probs, labels, bins) == pytest.approx(
        _sce_loop(probs, labels, bins), abs=1e-12)
    conf = probs.max(axis=1)
    correct = (probs.argmax(axis=1) == labels).astype(float)
    assert ece(conf, correct, bins) == pytest.approx(
        _ece_loop(conf, correct, bins), abs=1e-12)

    # perfectly calibrated fixtures score exactly zero
    conf = np.array([0.25] * 4 + [0.75] * 4)
    correct = np.array([1, 0, 0, 0, 1, 1, 1, 0], dtype=float)
    assert ece(conf, correct, num_bins=2) == 0.0
    probs = np.full((8, 2), 0.5)
    labels = np.array([0, 1] * 4)
    assert sce(probs, labels, num_bins=2) == 0.0

    # a single bin collapses to the overall accuracy/confidence gap
    conf = prng.uniform(size=500)
    correct = (prng.uniform(size=500) < 0.4).astype(float)
    want = abs(correct.mean() - conf.mean())
    assert ece(conf, correct, num_bins=1) == pytest.approx(want, abs=1e-12)


@pytest.mark.acceptance(6, "final-route identity")
def test_final_route_equals_full_logits(tiny_network_config):
    J = tiny_network_config.num_blocks
    prng = np.random.default_rng(6)
    images = prng.uniform(size=(12, 16, 16, 3)).astype(np.float32)
    labels = prng.integers(0, 3, size=12)

    untrained = VisionTransformer(tiny_network_config, seed=1)
    trained = VisionTransformer(tiny_network_config, seed=1)
    opt = AdamW(trained.params, AdamWConfig(lr=1e-3))
    erm = DistillConfig(mode="erm")
    for _ in range(5):
        bundle = trained.forward_with_cache(images)
        out = total_loss(bundle.full_logits, None, labels, erm)
        opt.step(trained.backward(bundle, {J: out.d_full}))

    for model in (untrained, trained):
        bundle = model.forward_with_cache(images, routes=(J,))
        assert bundle.routes[J].tobytes() == bundle.full_logits.tobytes()
        per_block = blockwise_accuracy(model, images, labels)
        assert per_block[J] == top1_accuracy(bundle.full_logits, labels)


@pytest.mark.acceptance(7, "per-target aggregation")
def test_aggregate_reproduces_four_target_average():
    per_target = [51.6, 73.3, 64.0, 72.9]
    results = [
        SimpleNamespace(method="spsd", setting="multi_source",
                        target_domain=t, target_accuracy=v)
        for t, v in enumerate(per_target)
    ]
    overall = aggregate(results).overall_mean
    assert abs(overall - 65.5) <= 0.05


@pytest.fixture(scope="session")
def domain_shift_experiment(tmp_path_factory):
    """Both training modes on the leave-one-domain-out acceptance config."""
    raw = yaml.safe_load(ACCEPTANCE_CONFIG.read_text())
    base = config_from_dict(raw)
    root = tmp_path_factory.mktemp("acceptance")
    start = time.monotonic()
    results = {}
    for method in ("spsd", "erm"):
        config = dataclasses.replace(base, method=method, name=f"acc_{method}")
        results[method] = sorted(run_experiment(config, root, log=None),
                                 key=lambda r: r.seed)
    elapsed = time.monotonic() - start
    return results, base.network.num_blocks, elapsed


@pytest.mark.slow
@pytest.mark.acceptance(8, "held-out-domain accuracy ordering")
def test_spsd_matches_or_beats_erm_on_target(domain_shift_experiment):
    results, _, elapsed = domain_shift_experiment
    spsd = [r.target_accuracy for r in results["spsd"]]
    erm = [r.target_accuracy for r in results["erm"]]
    assert len(spsd) == len(erm) == 5
    assert statistics.median(spsd) >= statistics.median(erm)
    assert statistics.mean(spsd) >= statistics.mean(erm) - 0.005
    assert elapsed < 1800.0


@pytest.mark.slow
@pytest.mark.acceptance(9, "intermediate-route accuracy ordering")
def test_spsd_strengthens_penultimate_route(domain_shift_experiment):
    results, num_blocks, _ = domain_shift_experiment
    route = num_blocks - 1
    spsd = [r.per_block[route] for r in results["spsd"]]
    erm = [r.per_block[route] for r in results["erm"]]
    assert statistics.median(spsd) > statistics.median(erm)


@pytest.mark.slow
@pytest.mark.acceptance(10, "step-time overhead bound")
def test_distillation_step_overhead_within_ten_percent():
    from spsd_vit.bench import bench_methods

    out = bench_methods(steps=500)
    assert out["ratios"]["spsd"] <= 1.10, (
        f"spsd/erm step-time ratio {out['ratios']['spsd']:.3f}"
    )


@pytest.mark.acceptance(11, "run-to-run reproducibility")
def test_repeated_training_reproduces_selection(tmp_path):
    raw = {
        "name": "repro",
        "method": "spsd",
        "total_steps": 6,
        "eval_every": 3,
        "batch_size": 8,
        "seeds": [0],
        "targets": [2],
        "network": {"num_classes": 3, "image_size": 16, "patch_size": 8,
                    "num_blocks": 2, "dim": 8, "num_heads": 2, "mlp_ratio": 2.0},
        "data": {"kind": "synthetic", "seed": 0, "per_domain": 24,
                 "num_classes": 3, "image_size": 16,
                 "domains": [
                     {"domain_id": 0, "name": "a", "cue_prob": 0.9, "texture_seed": 1},
                     {"domain_id": 1, "name": "b", "cue_prob": 0.9, "texture_seed": 2},
                     {"domain_id": 2, "name": "c", "cue_prob": 0.34, "texture_seed": 3},
                 ]},
    }
    config_path = tmp_path / "exp.yaml"
    config_path.write_text(yaml.safe_dump(raw))

    records = []
    for attempt in ("first", "second"):
        out_dir = tmp_path / attempt
        assert main(["train", "--config", str(config_path), "--out", str(out_dir)]) == 0
        payload = json.loads((out_dir / "repro" / "c" / "0" / "result.json").read_text())
        result = payload["results"][0]
        records.append((result["selected_step"], result["target_accuracy"]))

    assert records[0] == records[1]
