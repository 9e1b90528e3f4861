"""Self-distillation objectives and their gradients.

Three training modes share one interface:

``erm``
    plain cross-entropy on the full-network logits.
``sd``
    cross-entropy plus a temperature-scaled KL term pulling one sampled
    intermediate route toward the full-network prediction:
    ``KL(softmax(z / tau) || softmax(z_j / tau))``.  The KL value is used
    as-is, deliberately without the usual ``tau**2`` rescaling.
``spsd``
    cross-entropy plus a KL term between *softened* predictions, where a
    prediction is blended with the one-hot label before the softmax:
    ``soften(z, y, beta) = beta * z + (1 - beta) * onehot(y)`` and
    ``KL(softmax(soften(z)) || softmax(soften(z_j)))``.  ``beta`` ramps
    linearly over training, ``beta_t = beta_final * t / total_steps``,
    so early steps distill label-like targets and late steps distill the
    model's own predictions.

Distillation always runs teacher-to-student *within one network*: the
teacher side is the full-network logits ``z``, the student side is the
logits ``z_j`` read out after an intermediate block sampled uniformly
per step.  Unless ``detach_teacher`` is set, gradients flow through both
sides.  All KL math is evaluated in float64 regardless of input dtype;
gradients are returned in the input dtype.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError

MODES = ("erm", "sd", "spsd")
PLACEMENTS = ("final_only", "intermediate_only", "both")


@dataclass(frozen=True)
class DistillConfig:
    mode: str = "spsd"
    lam: float = 0.7
    tau: float = 3.0
    beta_final: float = 0.8
    soften_placement: str = "both"
    sample_range: tuple = None
    detach_teacher: bool = False
    intermediate_ce: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lam < 0:
            raise ConfigError(f"lam must be non-negative, got {self.lam}")
        if self.tau <= 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if not 0.0 <= self.beta_final <= 1.0:
            raise ConfigError(f"beta_final must lie in [0, 1], got {self.beta_final}")
        if self.soften_placement not in PLACEMENTS:
            raise ConfigError(
                f"soften_placement must be one of {PLACEMENTS}, "
                f"got {self.soften_placement!r}"
            )
        if self.sample_range is not None:
            cleaned = tuple(sorted(set(int(j) for j in self.sample_range)))
            if not cleaned or cleaned[0] < 1:
                raise ConfigError(
                    f"sample_range must be a non-empty set of 1-based block "
                    f"indices, got {self.sample_range!r}"
                )
            object.__setattr__(self, "sample_range", cleaned)

    def resolve_sample_range(self, num_blocks):
        """Fill the default route set {1, ..., J-1} and bounds-check it."""
        if self.sample_range is None:
            resolved = replace(self, sample_range=tuple(range(1, num_blocks)))
        else:
            resolved = self
        if resolved.sample_range[-1] > num_blocks:
            raise ConfigError(
                f"sample_range {resolved.sample_range} exceeds the "
                f"{num_blocks}-block network"
            )
        return resolved


@dataclass(frozen=True)
class BetaSchedule:
    """Linear ramp of the softening coefficient over training."""

    beta_final: float
    total_steps: int

    def __post_init__(self):
        if not 0.0 <= self.beta_final <= 1.0:
            raise ConfigError(f"beta_final must lie in [0, 1], got {self.beta_final}")
        if self.total_steps < 1:
            raise ConfigError(f"total_steps must be >= 1, got {self.total_steps}")

    def beta_at(self, t):
        if not 0 <= t <= self.total_steps:
            raise ValueError(
                f"step {t} outside the schedule domain [0, {self.total_steps}]"
            )
        return self.beta_final * (t / self.total_steps)


def one_hot(labels, num_classes, dtype=np.float64):
    labels = np.asarray(labels)
    if labels.ndim == 0:
        labels = labels[None]
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError(
            f"labels must lie in [0, {num_classes}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    out = np.zeros((labels.shape[0], num_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1
    return out


def soften(logits, labels, beta):
    """Convex blend of logits with the one-hot label: ``beta*z + (1-beta)*y``.

    ``beta = 1`` returns the logits unchanged; ``beta = 0`` returns the
    one-hot target.  Accepts a single ``(C,)`` vector with an int label
    or a ``(B, C)`` batch with a ``(B,)`` label array.
    """
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    z = np.asarray(logits)
    squeeze = z.ndim == 1
    z2 = z[None] if squeeze else z
    y = one_hot(labels, z2.shape[1], dtype=z2.dtype)
    out = beta * z2 + (1.0 - beta) * y
    return out[0] if squeeze else out


def _log_softmax(x):
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _kl_rows(a, b):
    """Row-wise KL(softmax(a) || softmax(b)) plus the pieces its gradient needs."""
    la = _log_softmax(a)
    lb = _log_softmax(b)
    p = np.exp(la)
    r = la - lb
    kl = (p * r).sum(axis=1)
    return kl, p, np.exp(lb), r


def _pair_2d(z, z_j):
    z = np.asarray(z, dtype=np.float64)
    z_j = np.asarray(z_j, dtype=np.float64)
    if z.shape != z_j.shape:
        raise ValueError(f"logit shapes differ: {z.shape} vs {z_j.shape}")
    squeeze = z.ndim == 1
    if squeeze:
        z, z_j = z[None], z_j[None]
    return z, z_j, squeeze


def kl_tempered(z, z_j, tau):
    """``KL(softmax(z/tau) || softmax(z_j/tau))`` per sample (no tau**2 factor)."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    z, z_j, squeeze = _pair_2d(z, z_j)
    kl, _, _, _ = _kl_rows(z / tau, z_j / tau)
    return float(kl[0]) if squeeze else kl


def kl_softened(z, z_j, labels, beta, placement="both"):
    """KL between softened predictions; ``placement`` picks which side blends.

    ``both`` softens teacher and student, ``final_only`` only the
    full-network side, ``intermediate_only`` only the route side.
    """
    if placement not in PLACEMENTS:
        raise ValueError(f"placement must be one of {PLACEMENTS}, got {placement!r}")
    if not 0.0 <= beta <= 1.0:
        raise ValueError(f"beta must lie in [0, 1], got {beta}")
    z, z_j, squeeze = _pair_2d(z, z_j)
    y = one_hot(labels, z.shape[1])
    a = beta * z + (1.0 - beta) * y if placement in ("both", "final_only") else z
    b = beta * z_j + (1.0 - beta) * y if placement in ("both", "intermediate_only") else z_j
    kl, _, _, _ = _kl_rows(a, b)
    return float(kl[0]) if squeeze else kl


def sample_block(rng, config):
    """Uniform draw from the configured intermediate-route set."""
    if config.sample_range is None:
        raise ConfigError(
            "sample_range is unresolved; call resolve_sample_range(num_blocks) first"
        )
    return int(config.sample_range[rng.integers(len(config.sample_range))])


@dataclass
class LossOutput:
    """Batch-mean loss components and the logit gradients of the total."""

    total: float
    ce: float
    kl: float
    beta: float
    d_full: np.ndarray
    d_route: np.ndarray
    ce_intermediate: float = 0.0


def _ce_mean_and_grad(logits64, labels):
    B = logits64.shape[0]
    lsm = _log_softmax(logits64)
    ce = -lsm[np.arange(B), labels].mean()
    grad = np.exp(lsm)
    grad[np.arange(B), labels] -= 1.0
    grad /= B
    return ce, grad


def total_loss(full_logits, route_logits, labels, config, schedule=None, step=None):
    """Combined objective ``CE(z, y) + lam * KL_mode`` and its logit gradients.

    ``route_logits`` must be None in ``erm`` mode and a ``(B, C)`` array
    of the sampled intermediate route otherwise.  ``spsd`` additionally
    needs ``schedule`` and the current ``step`` to evaluate ``beta_t``.
    Returned gradients are those of the *batch-mean* total loss.
    """
    labels = np.asarray(labels)
    z = np.asarray(full_logits, dtype=np.float64)
    out_dtype = np.asarray(full_logits).dtype
    B, C = z.shape
    if labels.shape != (B,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {B}")

    ce, d_full = _ce_mean_and_grad(z, labels)

    if config.mode == "erm":
        if route_logits is not None:
            raise ConfigError("erm mode takes no route logits")
        return LossOutput(
            total=float(ce), ce=float(ce), kl=0.0, beta=None,
            d_full=d_full.astype(out_dtype), d_route=None,
        )

    if route_logits is None:
        raise ConfigError(f"{config.mode} mode requires route logits")
    z_j = np.asarray(route_logits, dtype=np.float64)
    if z_j.shape != z.shape:
        raise ValueError(f"route logits shape {z_j.shape} != full logits {z.shape}")

    beta = None
    if config.mode == "sd":
        tau = config.tau
        a, b = z / tau, z_j / tau
        da_dz = db_dzj = 1.0 / tau
    else:
        if schedule is None or step is None:
            raise ConfigError("spsd mode requires a BetaSchedule and the current step")
        beta = schedule.beta_at(step)
        y = one_hot(labels, C)
        placement = config.soften_placement
        if placement in ("both", "final_only"):
            a, da_dz = beta * z + (1.0 - beta) * y, beta
        else:
            a, da_dz = z, 1.0
        if placement in ("both", "intermediate_only"):
            b, db_dzj = beta * z_j + (1.0 - beta) * y, beta
        else:
            b, db_dzj = z_j, 1.0

    kl_rows, p, q, r = _kl_rows(a, b)
    kl = kl_rows.mean()
    w = config.lam / B
    if not config.detach_teacher:
        d_full += w * da_dz * p * (r - kl_rows[:, None])
    d_route = w * db_dzj * (q - p)

    total = ce + config.lam * kl
    ce_int = 0.0
    if config.intermediate_ce:
        ce_int, d_route_ce = _ce_mean_and_grad(z_j, labels)
        total += ce_int
        d_route = d_route + d_route_ce

    return LossOutput(
        total=float(total), ce=float(ce), kl=float(kl), beta=beta,
        d_full=d_full.astype(out_dtype), d_route=d_route.astype(out_dtype),
        ce_intermediate=float(ce_int),
    )
