"""Minimal reverse-mode differentiation over a fixed set of array ops.

A program is a Wengert list of ``(output, op, inputs)`` triples.  ``run``
evaluates it and keeps each op's cache on a tape; ``backprop`` replays the
tape in reverse, accumulating gradients by name.  All arrays are NHWC.
"""
import numpy as np

from .errors import ShapeError

LEAKY_SLOPE = 0.1


def conv_forward(x, w, b):
    """'Same' zero-padded stride-1 convolution; ``w`` is (k, k, Cin, Cout).

    Evaluated as a sum of k*k shifted matmuls, which avoids materializing
    the im2col matrix.
    """
    k = w.shape[0]
    n, h, wd, cin = x.shape
    if w.shape[2] != cin:
        raise ShapeError(f"conv expects {w.shape[2]} input channels, got {cin}")
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
    y = np.empty((n, h, wd, w.shape[3]))
    y[...] = b
    for i in range(k):
        for j in range(k):
            y += xp[:, i:i + h, j:j + wd, :] @ w[i, j]
    return y, (xp, w)


def conv_backward(g, cache):
    xp, w = cache
    k = w.shape[0]
    p = k // 2
    n, h, wd, cout = g.shape
    g2d = g.reshape(-1, cout)
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for i in range(k):
        for j in range(k):
            dxp[:, i:i + h, j:j + wd, :] += g @ w[i, j].T
            dw[i, j] = xp[:, i:i + h, j:j + wd, :].reshape(-1, xp.shape[-1]).T @ g2d
    return dxp[:, p:p + h, p:p + wd, :], dw, g2d.sum(axis=0)


def leaky_forward(x):
    return np.where(x > 0, x, LEAKY_SLOPE * x), x > 0


def leaky_backward(g, positive):
    return (np.where(positive, g, LEAKY_SLOPE * g),)


def sigmoid_forward(x):
    y = 0.5 * (1.0 + np.tanh(0.5 * x))
    return y, y


def sigmoid_backward(g, y):
    return (g * y * (1.0 - y),)


def pool_forward(x):
    """2x2 average pooling, stride 2."""
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"pooling needs even spatial dims, got {h}x{w}")
    y = x.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4))
    return y, x.shape


def pool_backward(g, xshape):
    g = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * 0.25
    return (g.reshape(xshape),)


def upsample_forward(x):
    """Nearest-neighbour 2x upsampling."""
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2), x.shape


def upsample_backward(g, xshape):
    n, h, w, c = xshape
    return (g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)),)


def concat_forward(a, b):
    return np.concatenate([a, b], axis=-1), a.shape[-1]


def concat_backward(g, split):
    return g[..., :split], g[..., split:]


def gap_forward(x):
    """Global average pool over the spatial axes: (N, H, W, C) -> (N, C)."""
    return x.mean(axis=(1, 2)), x.shape


def gap_backward(g, xshape):
    n, h, w, c = xshape
    return (np.broadcast_to(g[:, None, None, :] / (h * w), xshape).copy(),)


OPS = {
    "conv": (conv_forward, conv_backward),
    "leaky": (leaky_forward, leaky_backward),
    "sigmoid": (sigmoid_forward, sigmoid_backward),
    "pool": (pool_forward, pool_backward),
    "upsample": (upsample_forward, upsample_backward),
    "concat": (concat_forward, concat_backward),
    "gap": (gap_forward, gap_backward),
}


def run(program, values):
    """Evaluate ``program`` in place on the ``values`` dict; return the tape."""
    tape = []
    for out, op, inputs in program:
        fwd = OPS[op][0]
        values[out], cache = fwd(*(values[name] for name in inputs))
        tape.append((out, op, inputs, cache))
    return tape


def backprop(tape, seeds, wanted=None):
    """Reverse-accumulate gradients from ``seeds`` (name -> dL/dvalue).

    Returns gradients for the names in ``wanted`` (every touched name if
    None).  Names that receive no gradient come back as None.
    """
    grads = dict(seeds)
    for out, op, inputs, cache in reversed(tape):
        g = grads.get(out)
        if g is None:
            continue
        for name, gi in zip(inputs, OPS[op][1](g, cache)):
            grads[name] = gi if name not in grads else grads[name] + gi
    if wanted is None:
        return grads
    return {name: grads.get(name) for name in wanted}
