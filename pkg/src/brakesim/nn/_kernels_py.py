"""Reference numpy kernels for the dense-network hot paths.

Each function here has a signature-identical compiled twin in
``_kernels_cy``; the active implementation is chosen in ``backend``.
Activation tags are integers: 0 identity, 1 tanh, 2 relu.  All arrays are
C-contiguous float64; weight matrices are (out, in).
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "py"

IDENTITY, TANH, RELU = 0, 1, 2


def forward(x, ws, bs, acts):
    """Affine + activation chain; returns per-layer (pre, post) lists."""
    pres = []
    posts = []
    h = x
    for w, b, a in zip(ws, bs, acts):
        z = h @ w.T + b
        pres.append(z)
        if a == TANH:
            h = np.tanh(z)
        elif a == RELU:
            h = np.maximum(z, 0.0)
        else:
            h = z
        posts.append(h)
    return pres, posts


def backward(x, ws, acts, pres, posts, gy):
    """Reverse-mode pass; returns (weight grads, bias grads, input grad).

    ``gy`` is the gradient of a scalar with respect to the final post; the
    returned gradients sum over the batch, so any 1/B averaging belongs in
    ``gy`` itself.
    """
    n = len(ws)
    gws = [None] * n
    gbs = [None] * n
    up = gy
    for i in range(n - 1, -1, -1):
        a = acts[i]
        if a == TANH:
            delta = up * (1.0 - posts[i] * posts[i])
        elif a == RELU:
            delta = up * (pres[i] > 0.0)
        else:
            delta = up
        h_prev = x if i == 0 else posts[i - 1]
        gws[i] = delta.T @ h_prev
        gbs[i] = delta.sum(axis=0)
        up = delta @ ws[i]
    return gws, gbs, up


def adam_update(p, g, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected adaptive-moment step on a flat parameter array.

    ``t`` is the 1-based step count including this call.  Returns new
    (params, first moment, second moment); inputs are not mutated.
    """
    m2 = beta1 * m + (1.0 - beta1) * g
    v2 = beta2 * v + (1.0 - beta2) * (g * g)
    mhat = m2 / (1.0 - beta1**t)
    vhat = v2 / (1.0 - beta2**t)
    p2 = p - lr * mhat / (np.sqrt(vhat) + eps)
    return p2, m2, v2
