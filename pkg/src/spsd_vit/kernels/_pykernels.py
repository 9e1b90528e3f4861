"""Pure-numpy implementations of the hot kernels.

Every function here has a signature-identical twin in the compiled
``_cykernels`` extension; the package picks one backend at import time
(see ``spsd_vit.kernels``).  All kernels accept C-contiguous float32 or
float64 arrays and preserve the input dtype.
"""

import numpy as np

BACKEND_NAME = "python"

# tanh approximation constants shared by both GELU directions
_GELU_K = 0.7978845608028654  # sqrt(2 / pi)
_GELU_C = 0.044715


def layer_norm_forward(x, gamma, beta, eps):
    """Row-wise layer norm over the last axis of a 2-D array.

    Returns ``(y, mean, rstd)``; the statistics are needed by the
    backward pass.
    """
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[:, None]) * rstd[:, None]
    y = xhat * gamma + beta
    return y, mean, rstd


def layer_norm_backward(dy, x, gamma, mean, rstd):
    """Gradients of layer norm w.r.t. input and affine parameters."""
    xhat = (x - mean[:, None]) * rstd[:, None]
    dxhat = dy * gamma
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = rstd[:, None] * (dxhat - m1 - xhat * m2)
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    return dx, dgamma, dbeta


def softmax_forward(x):
    """Row-wise softmax of a 2-D array, stabilised by the row max."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(dp, p):
    """Backward of ``p = softmax(x)`` given upstream gradient ``dp``."""
    inner = (dp * p).sum(axis=1, keepdims=True)
    return p * (dp - inner)


def gelu_forward(x):
    """GELU activation (tanh approximation), elementwise on a 2-D array."""
    u = _GELU_K * (x + _GELU_C * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def gelu_backward(dy, x):
    """Backward of the tanh-approximation GELU."""
    x2 = x * x
    u = _GELU_K * (x + _GELU_C * x * x2)
    t = np.tanh(u)
    du = _GELU_K * (1.0 + 3.0 * _GELU_C * x2)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def adamw_update(param, grad, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """One decoupled-weight-decay Adam step, in place on 1-D views.

    ``step`` is the 1-based update count used for bias correction.
    """
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    denom = np.sqrt(v / bc2) + eps
    param -= lr * (m / (bc1 * denom) + weight_decay * param)
