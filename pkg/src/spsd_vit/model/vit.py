"""Vision transformer with explicit forward and backward passes.

The network is a standard pre-norm ViT on non-overlapping patches with a
learned class token and learned position embeddings.  A single shared
classifier head (final layer norm + linear) can be applied to the class
token of *any* block's output; ``route j`` denotes that read-out after
block ``j`` (1-based).  The full-network logits are exactly route
``num_blocks`` — same code path, same arrays.

Matrix multiplies go through numpy's BLAS; layer norm, softmax, and GELU
go through :mod:`spsd_vit.kernels` so the compiled backend accelerates
both directions.  Weight layout is ``(fan_in, fan_out)`` everywhere.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .. import kernels
from ..errors import RouteError, ShapeError
from .config import NetworkConfig

INIT_STD = 0.02


def trunc_normal(rng, shape, std=INIT_STD, dtype=np.float32):
    """Normal(0, std) truncated to two standard deviations."""
    draws = stats.truncnorm.rvs(-2.0, 2.0, scale=std, size=shape, random_state=rng)
    return np.ascontiguousarray(draws, dtype=dtype)


def init_params(config, rng, dtype=np.float32):
    """Fresh parameter dictionary keyed by canonical 1-based names."""
    d = config.dim
    hidden = config.mlp_hidden
    params = {
        "patch_embed.weight": trunc_normal(rng, (config.patch_dim, d), dtype=dtype),
        "patch_embed.bias": np.zeros(d, dtype=dtype),
        "cls_token": trunc_normal(rng, (1, 1, d), dtype=dtype),
        "pos_embed": trunc_normal(rng, (1, config.num_tokens, d), dtype=dtype),
    }
    for j in range(1, config.num_blocks + 1):
        prefix = f"block.{j}."
        params[prefix + "norm1.weight"] = np.ones(d, dtype=dtype)
        params[prefix + "norm1.bias"] = np.zeros(d, dtype=dtype)
        params[prefix + "attn.qkv.weight"] = trunc_normal(rng, (d, 3 * d), dtype=dtype)
        params[prefix + "attn.qkv.bias"] = np.zeros(3 * d, dtype=dtype)
        params[prefix + "attn.proj.weight"] = trunc_normal(rng, (d, d), dtype=dtype)
        params[prefix + "attn.proj.bias"] = np.zeros(d, dtype=dtype)
        params[prefix + "norm2.weight"] = np.ones(d, dtype=dtype)
        params[prefix + "norm2.bias"] = np.zeros(d, dtype=dtype)
        params[prefix + "mlp.fc1.weight"] = trunc_normal(rng, (d, hidden), dtype=dtype)
        params[prefix + "mlp.fc1.bias"] = np.zeros(hidden, dtype=dtype)
        params[prefix + "mlp.fc2.weight"] = trunc_normal(rng, (hidden, d), dtype=dtype)
        params[prefix + "mlp.fc2.bias"] = np.zeros(d, dtype=dtype)
    params["norm.weight"] = np.ones(d, dtype=dtype)
    params["norm.bias"] = np.zeros(d, dtype=dtype)
    params["head.weight"] = trunc_normal(rng, (d, config.num_classes), dtype=dtype)
    params["head.bias"] = np.zeros(config.num_classes, dtype=dtype)
    return params


@dataclass
class ForwardBundle:
    """Forward activations cached for the backward pass.

    ``routes`` maps a 1-based block index to the classifier logits read
    out after that block; it always contains the full-network route
    ``J = num_blocks``, and ``full_logits`` is that same array object.
    ``attention`` maps block index to the post-softmax attention tensor
    of shape ``(batch, heads, tokens, tokens)``.
    """

    full_logits: np.ndarray
    routes: dict = field(default_factory=dict)
    attention: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def batch_size(self):
        return self.full_logits.shape[0]


class VisionTransformer:
    """A small ViT whose gradients are computed by hand.

    Parameters live in ``self.params`` (name -> array); all arrays share
    one dtype, float32 by default or float64 for high-precision gradient
    checks.
    """

    def __init__(self, config: NetworkConfig, seed=0, dtype=np.float32, params=None):
        self.config = config
        self.dtype = np.dtype(dtype)
        if self.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            raise ShapeError(f"unsupported parameter dtype {dtype!r}")
        if params is None:
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
            params = init_params(config, rng, dtype=self.dtype)
        else:
            params = {k: np.ascontiguousarray(v, dtype=self.dtype) for k, v in params.items()}
        self.params = params

    # ---------------------------------------------------------------- helpers

    def num_params(self):
        return int(sum(p.size for p in self.params.values()))

    def copy_params(self):
        return {k: v.copy() for k, v in self.params.items()}

    def load_params(self, params):
        missing = self.params.keys() - params.keys()
        if missing:
            raise ShapeError(f"missing parameters: {sorted(missing)}")
        for name, value in params.items():
            if name not in self.params:
                raise ShapeError(f"unknown parameter {name!r}")
            if value.shape != self.params[name].shape:
                raise ShapeError(
                    f"parameter {name!r} has shape {value.shape}, "
                    f"expected {self.params[name].shape}"
                )
        for name, value in params.items():
            self.params[name][...] = value

    def patchify(self, images):
        """(B, S, S, 3) images -> (B, num_patches, patch_dim) rows.

        Patches are ordered row-major over the grid; each patch is
        flattened in (row, col, channel) order.
        """
        cfg = self.config
        B = images.shape[0]
        if images.shape[1:] != (cfg.image_size, cfg.image_size, 3):
            raise ShapeError(
                f"expected images of shape (B, {cfg.image_size}, "
                f"{cfg.image_size}, 3), got {images.shape}"
            )
        g, p = cfg.grid_size, cfg.patch_size
        x = images.reshape(B, g, p, g, p, 3)
        x = x.transpose(0, 1, 3, 2, 4, 5)
        return np.ascontiguousarray(x.reshape(B, g * g, p * p * 3), dtype=self.dtype)

    def _check_routes(self, routes):
        J = self.config.num_blocks
        cleaned = sorted(set(int(j) for j in routes))
        for j in cleaned:
            if not 1 <= j <= J:
                raise RouteError(
                    f"route index {j} outside valid block range 1..{J}"
                )
        return cleaned

    # ---------------------------------------------------------------- forward

    def forward(self, images):
        """Full-network logits of shape (B, num_classes)."""
        return self.forward_with_cache(images).full_logits

    def forward_with_cache(self, images, routes=()):
        """Run the network, reading out the head after each requested block.

        ``routes`` is an iterable of 1-based block indices; route ``J``
        (the full network) is always computed.  Returns a
        :class:`ForwardBundle` carrying logits, attention maps, and the
        activation cache consumed by :meth:`backward`.
        """
        cfg = self.config
        P = self.params
        J = cfg.num_blocks
        route_set = self._check_routes(routes)
        if J not in route_set:
            route_set.append(J)

        patches = self.patchify(images)
        B = patches.shape[0]
        m, d = cfg.num_tokens, cfg.dim

        emb = patches.reshape(B * cfg.num_patches, cfg.patch_dim) @ P["patch_embed.weight"]
        emb += P["patch_embed.bias"]
        tokens = np.empty((B, m, d), dtype=self.dtype)
        tokens[:, :1, :] = P["cls_token"]
        tokens[:, 1:, :] = emb.reshape(B, cfg.num_patches, d)
        tokens += P["pos_embed"]

        cache = {"patches": patches, "blocks": [], "route_heads": {}}
        attention = {}
        x = tokens
        block_outputs = {}
        for j in range(1, J + 1):
            x, block_cache, attn = self._block_forward(j, x)
            cache["blocks"].append(block_cache)
            attention[j] = attn
            if j in route_set:
                block_outputs[j] = x

        route_logits = {}
        for j in route_set:
            logits, head_cache = self._head_forward(block_outputs[j])
            route_logits[j] = logits
            cache["route_heads"][j] = head_cache

        bundle = ForwardBundle(
            full_logits=route_logits[J],
            routes=route_logits,
            attention=attention,
            _cache=cache,
        )
        return bundle

    def _block_forward(self, j, x):
        cfg = self.config
        P = self.params
        prefix = f"block.{j}."
        B, m, d = x.shape
        h, dh = cfg.num_heads, cfg.head_dim
        scale = 1.0 / math.sqrt(dh)

        x2 = x.reshape(B * m, d)
        ln1, mean1, rstd1 = kernels.layer_norm_forward(
            x2, P[prefix + "norm1.weight"], P[prefix + "norm1.bias"], cfg.layer_norm_eps
        )
        qkv = ln1 @ P[prefix + "attn.qkv.weight"] + P[prefix + "attn.qkv.bias"]
        qkv = qkv.reshape(B, m, 3, h, dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]  # each (B, h, m, dh)

        scores = np.matmul(q, k.transpose(0, 1, 3, 2)) * scale
        attn = kernels.softmax_forward(scores.reshape(B * h * m, m)).reshape(B, h, m, m)
        ctx = np.matmul(attn, v)  # (B, h, m, dh)
        ctx = np.ascontiguousarray(ctx.transpose(0, 2, 1, 3)).reshape(B * m, d)
        proj = ctx @ P[prefix + "attn.proj.weight"] + P[prefix + "attn.proj.bias"]
        x_mid = x + proj.reshape(B, m, d)

        mid2 = x_mid.reshape(B * m, d)
        ln2, mean2, rstd2 = kernels.layer_norm_forward(
            mid2, P[prefix + "norm2.weight"], P[prefix + "norm2.bias"], cfg.layer_norm_eps
        )
        pre = ln2 @ P[prefix + "mlp.fc1.weight"] + P[prefix + "mlp.fc1.bias"]
        act = kernels.gelu_forward(pre)
        out = act @ P[prefix + "mlp.fc2.weight"] + P[prefix + "mlp.fc2.bias"]
        x_out = x_mid + out.reshape(B, m, d)

        block_cache = {
            "x_in": x, "ln1": ln1, "mean1": mean1, "rstd1": rstd1,
            "q": q, "k": k, "v": v, "attn": attn, "ctx": ctx,
            "x_mid": x_mid, "ln2": ln2, "mean2": mean2, "rstd2": rstd2,
            "pre": pre, "act": act,
        }
        return x_out, block_cache, attn

    def _head_forward(self, x_out):
        """Shared read-out: final layer norm + linear head on the class token."""
        cfg = self.config
        P = self.params
        cls = np.ascontiguousarray(x_out[:, 0, :])
        ln, mean, rstd = kernels.layer_norm_forward(
            cls, P["norm.weight"], P["norm.bias"], cfg.layer_norm_eps
        )
        logits = ln @ P["head.weight"] + P["head.bias"]
        return logits, {"cls": cls, "ln": ln, "mean": mean, "rstd": rstd}

    # --------------------------------------------------------------- backward

    def backward(self, bundle, d_logits):
        """Backpropagate logit gradients through the cached forward pass.

        ``d_logits`` maps route index -> gradient array of shape
        (B, num_classes); use route ``J`` for the full-network logits.
        Returns a gradient dictionary matching ``self.params``.
        """
        cfg = self.config
        P = self.params
        J = cfg.num_blocks
        cache = bundle._cache
        grads = {name: np.zeros_like(p) for name, p in P.items()}

        inject = {}
        for j, dz in d_logits.items():
            j = int(j)
            if j not in cache["route_heads"]:
                raise RouteError(
                    f"route {j} got a gradient but was not computed forward"
                )
            dz = np.ascontiguousarray(dz, dtype=self.dtype)
            head_cache = cache["route_heads"][j]
            grads["head.weight"] += head_cache["ln"].T @ dz
            grads["head.bias"] += dz.sum(axis=0)
            dln = np.ascontiguousarray(dz @ P["head.weight"].T)
            dcls, dg, db = kernels.layer_norm_backward(
                dln, head_cache["cls"], P["norm.weight"],
                head_cache["mean"], head_cache["rstd"],
            )
            grads["norm.weight"] += dg
            grads["norm.bias"] += db
            if j in inject:
                inject[j] = inject[j] + dcls
            else:
                inject[j] = dcls

        B = bundle.batch_size
        m, d = cfg.num_tokens, cfg.dim
        dx = np.zeros((B, m, d), dtype=self.dtype)
        for j in range(J, 0, -1):
            if j in inject:
                dx[:, 0, :] += inject[j]
            dx = self._block_backward(j, cache["blocks"][j - 1], dx, grads)

        grads["pos_embed"] += dx.sum(axis=0, keepdims=True)
        grads["cls_token"] += dx[:, :1, :].sum(axis=0, keepdims=True)
        demb = np.ascontiguousarray(dx[:, 1:, :]).reshape(B * cfg.num_patches, d)
        patches2 = cache["patches"].reshape(B * cfg.num_patches, cfg.patch_dim)
        grads["patch_embed.weight"] += patches2.T @ demb
        grads["patch_embed.bias"] += demb.sum(axis=0)
        return grads

    def _block_backward(self, j, c, d_out, grads):
        cfg = self.config
        P = self.params
        prefix = f"block.{j}."
        B, m, d = d_out.shape
        h, dh = cfg.num_heads, cfg.head_dim
        scale = 1.0 / math.sqrt(dh)

        # MLP branch: x_out = x_mid + fc2(gelu(fc1(ln2(x_mid))))
        dout2 = d_out.reshape(B * m, d)
        grads[prefix + "mlp.fc2.weight"] += c["act"].T @ dout2
        grads[prefix + "mlp.fc2.bias"] += dout2.sum(axis=0)
        dact = np.ascontiguousarray(dout2 @ P[prefix + "mlp.fc2.weight"].T)
        dpre = kernels.gelu_backward(dact, c["pre"])
        grads[prefix + "mlp.fc1.weight"] += c["ln2"].T @ dpre
        grads[prefix + "mlp.fc1.bias"] += dpre.sum(axis=0)
        dln2 = np.ascontiguousarray(dpre @ P[prefix + "mlp.fc1.weight"].T)
        mid2 = c["x_mid"].reshape(B * m, d)
        dmid_ln, dg2, db2 = kernels.layer_norm_backward(
            dln2, mid2, P[prefix + "norm2.weight"], c["mean2"], c["rstd2"]
        )
        grads[prefix + "norm2.weight"] += dg2
        grads[prefix + "norm2.bias"] += db2
        d_mid = d_out + dmid_ln.reshape(B, m, d)

        # attention branch: x_mid = x_in + proj(attn(ln1(x_in)))
        dmid2 = d_mid.reshape(B * m, d)
        grads[prefix + "attn.proj.weight"] += c["ctx"].T @ dmid2
        grads[prefix + "attn.proj.bias"] += dmid2.sum(axis=0)
        dctx = dmid2 @ P[prefix + "attn.proj.weight"].T
        dctx = np.ascontiguousarray(dctx.reshape(B, m, h, dh).transpose(0, 2, 1, 3))

        dattn = np.matmul(dctx, c["v"].transpose(0, 1, 3, 2))
        dv = np.matmul(c["attn"].transpose(0, 1, 3, 2), dctx)
        dscores = kernels.softmax_backward(
            np.ascontiguousarray(dattn.reshape(B * h * m, m)),
            np.ascontiguousarray(c["attn"].reshape(B * h * m, m)),
        ).reshape(B, h, m, m)
        dscores *= scale
        dq = np.matmul(dscores, c["k"])
        dk = np.matmul(dscores.transpose(0, 1, 3, 2), c["q"])

        dqkv = np.empty((B, m, 3, h, dh), dtype=self.dtype)
        dqkv[:, :, 0] = dq.transpose(0, 2, 1, 3)
        dqkv[:, :, 1] = dk.transpose(0, 2, 1, 3)
        dqkv[:, :, 2] = dv.transpose(0, 2, 1, 3)
        dqkv2 = dqkv.reshape(B * m, 3 * d)
        grads[prefix + "attn.qkv.weight"] += c["ln1"].T @ dqkv2
        grads[prefix + "attn.qkv.bias"] += dqkv2.sum(axis=0)
        dln1 = np.ascontiguousarray(dqkv2 @ P[prefix + "attn.qkv.weight"].T)
        x_in2 = c["x_in"].reshape(B * m, d)
        din_ln, dg1, db1 = kernels.layer_norm_backward(
            dln1, x_in2, P[prefix + "norm1.weight"], c["mean1"], c["rstd1"]
        )
        grads[prefix + "norm1.weight"] += dg1
        grads[prefix + "norm1.bias"] += db1
        return d_mid + din_ln.reshape(B, m, d)
