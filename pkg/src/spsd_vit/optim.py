"""Decoupled-weight-decay Adam over a named parameter dictionary."""

from dataclasses import asdict, dataclass

import numpy as np

from . import kernels
from .errors import ConfigError


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ConfigError("beta1 and beta2 must lie in [0, 1)")
        if self.eps <= 0:
            raise ConfigError("eps must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")


class AdamW:
    """Holds first/second moments per parameter and applies updates in place.

    Weight decay is decoupled (applied directly to the parameter, not the
    gradient) and hits every parameter tensor uniformly.
    """

    def __init__(self, params, config=None):
        self.config = config or AdamWConfig()
        self.params = params
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads):
        if set(grads) != set(self.params):
            missing = set(self.params) ^ set(grads)
            raise ConfigError(f"gradient keys do not match parameters: {sorted(missing)}")
        self.t += 1
        cfg = self.config
        for name, p in self.params.items():
            g = grads[name]
            assert p.flags.c_contiguous and g.flags.c_contiguous
            kernels.adamw_update(
                p.ravel(), g.ravel(), self.m[name].ravel(), self.v[name].ravel(),
                self.t, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps, cfg.weight_decay,
            )

    def state_dict(self):
        return {
            "config": asdict(self.config),
            "t": self.t,
            "m": {k: v.copy() for k, v in self.m.items()},
            "v": {k: v.copy() for k, v in self.v.items()},
        }

    def load_state_dict(self, state):
        self.config = AdamWConfig(**state["config"])
        self.t = int(state["t"])
        for k in self.params:
            self.m[k][...] = state["m"][k]
            self.v[k][...] = state["v"][k]
