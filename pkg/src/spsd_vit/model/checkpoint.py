"""Checkpoint archive format.

A checkpoint is a single ``.npz`` file holding the network config as a
JSON string, every parameter array under ``param/<name>``, optionally
the optimizer moments under ``opt/m/<name>`` and ``opt/v/<name>``, and
a JSON metadata record with the step counter.  Arrays round-trip
bit-exactly through ``np.savez``.
"""

import json
from dataclasses import asdict

import numpy as np

from .config import NetworkConfig
from .vit import VisionTransformer

FORMAT_VERSION = 1


def save_checkpoint(path, model, optimizer=None, step=0):
    arrays = {
        "__config__": np.array(json.dumps(asdict(model.config), sort_keys=True)),
        "__meta__": np.array(
            json.dumps(
                {
                    "format": FORMAT_VERSION,
                    "step": int(step),
                    "dtype": model.dtype.name,
                    "has_optimizer": optimizer is not None,
                },
                sort_keys=True,
            )
        ),
    }
    for name, value in model.params.items():
        arrays[f"param/{name}"] = value
    if optimizer is not None:
        state = optimizer.state_dict()
        arrays["__optim__"] = np.array(json.dumps(state["config"], sort_keys=True))
        arrays["opt/t"] = np.array(state["t"], dtype=np.int64)
        for name, value in state["m"].items():
            arrays[f"opt/m/{name}"] = value
        for name, value in state["v"].items():
            arrays[f"opt/v/{name}"] = value
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path):
    """Returns ``(model, optimizer_or_None, step)``."""
    from ..optim import AdamW, AdamWConfig

    with np.load(path, allow_pickle=False) as archive:
        config = NetworkConfig(**json.loads(str(archive["__config__"][()])))
        meta = json.loads(str(archive["__meta__"][()]))
        params = {}
        m, v = {}, {}
        for key in archive.files:
            if key.startswith("param/"):
                params[key[len("param/"):]] = archive[key]
            elif key.startswith("opt/m/"):
                m[key[len("opt/m/"):]] = archive[key]
            elif key.startswith("opt/v/"):
                v[key[len("opt/v/"):]] = archive[key]
        model = VisionTransformer(config, dtype=np.dtype(meta["dtype"]), params=params)
        optimizer = None
        if meta.get("has_optimizer"):
            opt_config = AdamWConfig(**json.loads(str(archive["__optim__"][()])))
            optimizer = AdamW(model.params, opt_config)
            optimizer.load_state_dict(
                {"config": json.loads(str(archive["__optim__"][()])),
                 "t": int(archive["opt/t"][()]),
                 "m": m, "v": v}
            )
    return model, optimizer, int(meta["step"])
