"""Forward and backward passes for dense and convolutional layers.

A double-weight dense layer carries two weight matrices of identical shape;
its effective weight is their element-wise product, so the forward pass is

    z = x @ (w * w2).T + b        (standard layer: w2 absent, z = x @ w.T + b)

Gradients split the product rule across the two factors: with
delta = upstream * act'(z),

    grad_w  = (delta.T @ x) * w2
    grad_w2 = (delta.T @ x) * w
    grad_b  = column sum of delta
    grad_x  = delta @ (w * w2)

Biases are never double-weighted. Convolutions keep single weights and use
SAME padding (output extent ceil(in/stride), pad split floor-left /
ceil-right) with cross-correlation, no kernel flip.
"""

from dataclasses import dataclass, field

import numpy as np

from .tensor import DimensionError

ACTIVATIONS = ("sigmoid", "relu", "softmax", "linear")
LOSSES = ("cross_entropy", "sse")


# ---------------------------------------------------------------------------
# activations


def activation_apply(kind, z):
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-z))
    if kind == "relu":
        return np.maximum(0.0, z)
    if kind == "softmax":
        shifted = z - np.max(z, axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / np.sum(e, axis=-1, keepdims=True)
    if kind == "linear":
        return z
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(kind, z):
    """Element-wise derivative of the activation at pre-activation z.

    relu' at exactly 0 is defined as 0. softmax has no element-wise
    derivative; its gradient only occurs fused with cross-entropy.
    """
    if kind == "sigmoid":
        s = 1.0 / (1.0 + np.exp(-z))
        return s * (1.0 - s)
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "linear":
        return np.ones_like(z)
    if kind == "softmax":
        raise ValueError("softmax gradient is only available fused with cross_entropy")
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# losses


def loss_and_grad(kind, output, target):
    """Batch-mean loss and its gradient.

    sse:           E = mean over batch of 0.5 * sum((target - output)^2),
                   gradient w.r.t. the layer *output*.
    cross_entropy: `output` holds the final-layer logits (pre-softmax);
                   E = mean of -sum(target * log softmax(logits)),
                   gradient w.r.t. the *logits*: (softmax - target) / batch.
    """
    output = np.asarray(output, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if output.shape != target.shape:
        raise DimensionError(f"loss shapes differ: {output.shape} vs {target.shape}")
    batch = output.shape[0] if output.ndim > 1 else 1
    if kind == "sse":
        diff = output - target
        loss = 0.5 * float(np.sum(diff * diff)) / batch
        return loss, diff / batch
    if kind == "cross_entropy":
        shifted = output - np.max(output, axis=-1, keepdims=True)
        log_norm = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
        log_probs = shifted - log_norm
        loss = -float(np.sum(target * log_probs)) / batch
        grad = (np.exp(log_probs) - target) / batch
        return loss, grad
    raise ValueError(f"unknown loss {kind!r}")


# ---------------------------------------------------------------------------
# dense layers


@dataclass
class DenseParams:
    """One fully connected layer: w is (units, inputs), b is (units,).

    w2, when present, has the shape of w and marks the layer double-weight.
    """

    w: np.ndarray
    b: np.ndarray
    w2: np.ndarray = None

    def effective_weight(self):
        return self.w * self.w2 if self.w2 is not None else self.w


@dataclass
class DenseCache:
    x: np.ndarray
    z: np.ndarray
    activation: str
    input_shape: tuple = None  # original shape when the input was flattened


def dense_forward(params, x, activation):
    """Apply the layer to a (batch, inputs) array; returns (output, cache)."""
    x = np.asarray(x, dtype=np.float64)
    v = params.effective_weight()
    if x.ndim != 2 or x.shape[1] != v.shape[1]:
        raise DimensionError(f"dense input {x.shape} does not match weights {v.shape}")
    z = x @ v.T + params.b
    return activation_apply(activation, z), DenseCache(x=x, z=z, activation=activation)


def dense_backward(params, cache, upstream, preactivation_grad=False):
    """Gradients for a dense layer.

    `upstream` is dE/d(output) unless preactivation_grad is set, in which
    case it is already dE/dz (the fused softmax + cross-entropy path).
    Returns (grads dict with keys w/b and w2 when present, grad_input).
    """
    if cache is None:
        raise RuntimeError("dense_backward: no forward cache")
    if preactivation_grad:
        delta = np.asarray(upstream, dtype=np.float64)
    else:
        delta = upstream * activation_grad(cache.activation, cache.z)
    dw_eff = delta.T @ cache.x
    grads = {"b": delta.sum(axis=0)}
    if params.w2 is not None:
        grads["w"] = dw_eff * params.w2
        grads["w2"] = dw_eff * params.w
    else:
        grads["w"] = dw_eff
    grad_input = delta @ params.effective_weight()
    return grads, grad_input


# ---------------------------------------------------------------------------
# convolutional layers


@dataclass
class ConvParams:
    """kernels is (kh, kw, c_in, c_out), b is (c_out,); SAME padding."""

    kernels: np.ndarray
    b: np.ndarray
    stride: int = 1


@dataclass
class ConvCache:
    x_shape: tuple
    cols: np.ndarray
    z: np.ndarray
    activation: str
    pads: tuple = field(default=None)  # (top, bottom, left, right)


def same_padding(extent, kernel, stride):
    """SAME rule: output = ceil(extent/stride); pad floor-left/ceil-right."""
    out = -(-extent // stride)
    pad = max((out - 1) * stride + kernel - extent, 0)
    return pad // 2, pad - pad // 2, out


def _im2col(xp, kh, kw, stride, oh, ow):
    batch, _, _, c_in = xp.shape
    cols = np.empty((batch, oh, ow, kh, kw, c_in), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i : i + stride * oh : stride,
                                        j : j + stride * ow : stride, :]
    return cols.reshape(batch, oh, ow, kh * kw * c_in)


def conv2d_forward(params, x, activation):
    """Cross-correlate a (batch, H, W, c_in) array; returns (output, cache)."""
    x = np.asarray(x, dtype=np.float64)
    kh, kw, c_in, c_out = params.kernels.shape
    if x.ndim != 4 or x.shape[3] != c_in:
        raise DimensionError(f"conv input {x.shape} does not match kernels {params.kernels.shape}")
    s = params.stride
    pt, pb, oh = same_padding(x.shape[1], kh, s)
    pl, pr, ow = same_padding(x.shape[2], kw, s)
    xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
    cols = _im2col(xp, kh, kw, s, oh, ow)
    z = cols @ params.kernels.reshape(-1, c_out) + params.b
    cache = ConvCache(x_shape=x.shape, cols=cols, z=z, activation=activation,
                      pads=(pt, pb, pl, pr))
    return activation_apply(activation, z), cache


def conv2d_backward(params, cache, upstream):
    """Adjoint of conv2d_forward. Returns ({'kernels','b'}, grad_input)."""
    if cache is None:
        raise RuntimeError("conv2d_backward: no forward cache")
    kh, kw, c_in, c_out = params.kernels.shape
    delta = upstream * activation_grad(cache.activation, cache.z)
    batch, oh, ow, _ = delta.shape
    flat_delta = delta.reshape(-1, c_out)
    flat_cols = cache.cols.reshape(-1, kh * kw * c_in)
    grads = {
        "kernels": (flat_cols.T @ flat_delta).reshape(kh, kw, c_in, c_out),
        "b": flat_delta.sum(axis=0),
    }
    dcols = (flat_delta @ params.kernels.reshape(-1, c_out).T).reshape(
        batch, oh, ow, kh, kw, c_in)
    pt, pb, pl, pr = cache.pads
    _, h, w, _ = cache.x_shape
    dxp = np.zeros((batch, h + pt + pb, w + pl + pr, c_in), dtype=np.float64)
    s = params.stride
    for i in range(kh):
        for j in range(kw):
            dxp[:, i : i + s * oh : s, j : j + s * ow : s, :] += dcols[:, :, :, i, j, :]
    return grads, dxp[:, pt : pt + h, pl : pl + w, :]
