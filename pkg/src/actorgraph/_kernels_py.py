"""Pure numpy implementations of the hot kernels.

The compiled module ``actorgraph._native`` exposes the same functions with the
same semantics; :mod:`actorgraph.backend` picks one of the two at import time.
Both implementations stabilize softmax-style kernels by subtracting the row
maximum over the supported entries before exponentiation, so outputs stay
finite for any finite input.
"""

import numpy as np

from .errors import DegenerateRowError


def relu_fwd(x):
    return np.maximum(x, 0.0)


def relu_bwd(x, dy):
    # Subgradient at exactly 0 is 0.
    return np.where(x > 0.0, dy, 0.0)


def masked_softmax_fwd(logits, mask):
    """Row softmax restricted to mask==1 entries; masked entries are exact 0."""
    support = mask > 0.0
    if not support.any(axis=1).all():
        row = int(np.flatnonzero(~support.any(axis=1))[0])
        raise DegenerateRowError(f"mask row {row} has no unmasked entry")
    shifted = logits - np.max(np.where(support, logits, -np.inf), axis=1, keepdims=True)
    e = np.where(support, np.exp(shifted), 0.0)
    return e / e.sum(axis=1, keepdims=True)


def masked_softmax_bwd(out, dout):
    inner = np.sum(dout * out, axis=1, keepdims=True)
    return out * (dout - inner)


def weighted_softmax_fwd(logits, weights):
    """Row-normalize weights*exp(logits); weights must be >= 0.

    Returns ``(out, ratio)`` where ``ratio[i, j] = exp(logits[i, j] - m_i) / S_i``
    is the quantity the weight gradient needs. Entries whose weight is exactly
    zero get ratio 0: the reported subgradient w.r.t. a zero weight is zero
    (upstream ReLU-produced weights clamp the gradient there anyway).
    """
    support = weights > 0.0
    if not support.any(axis=1).all():
        row = int(np.flatnonzero(~support.any(axis=1))[0])
        raise DegenerateRowError(f"relation row {row} has all-zero position factors")
    shifted = logits - np.max(np.where(support, logits, -np.inf), axis=1, keepdims=True)
    e = np.where(support, np.exp(shifted), 0.0)
    s = (weights * e).sum(axis=1, keepdims=True)
    ratio = e / s
    return weights * ratio, ratio


def weighted_softmax_bwd(out, ratio, dout):
    inner = np.sum(dout * out, axis=1, keepdims=True)
    centred = dout - inner
    return out * centred, ratio * centred


def log_softmax_fwd(x):
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def log_softmax_bwd(out, dout):
    return dout - np.exp(out) * dout.sum(axis=1, keepdims=True)


def max_over_rows_fwd(x):
    idx = np.argmax(x, axis=0)  # first maximal row wins ties
    return x.max(axis=0, keepdims=True), idx.astype(np.int64)


def max_over_rows_bwd(shape, idx, dout):
    dx = np.zeros(shape)
    dx[idx, np.arange(shape[1])] = dout[0]
    return dx


def pairwise_distances(points):
    """Euclidean distance matrix for an (n, 2) coordinate array."""
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def sincos_encode(values, dims, base):
    """Map scalars to interleaved sin/cos features of geometric wavelengths.

    Column 2k holds sin(v / base**(2k/dims)), column 2k+1 the matching cos.
    """
    k = np.arange(dims // 2)
    scale = base ** (2.0 * k / dims)
    angles = values[:, None] / scale[None, :]
    out = np.empty((values.shape[0], dims))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def adam_update(param, grad, m, v, t, lr, beta1, beta2, eps):
    """One Adam step with bias correction, in place on param/m/v."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)
