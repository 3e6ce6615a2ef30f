"""Complex-valued layers with hand-written backward passes.

Complex tensors are plain ``numpy.complex128`` arrays. Gradients use the
split real/imaginary convention: for a real scalar loss ``L`` and a complex
array ``z`` the gradient is stored as ``dL/dRe(z) + 1j * dL/dIm(z)``.
Under that convention a holomorphic linear map ``y = x @ W`` back-propagates
as ``gx = gy @ conj(W).T`` and ``gW = conj(x).T @ gy``.

Feature maps are laid out as ``(batch, height, width, depth, channels)``.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

MAG_EPS = 1e-12
LOG_EPS = 1e-12


def _same_pads(k: int) -> tuple[int, int]:
    lo = (k - 1) // 2
    return lo, k - 1 - lo


def _row_cols(xp_one, kw, kd):
    """Columns over (kw, kd, C) for every padded row of one sample.

    Returns ``(H_pad, W * D, kw * kd * C)``; kernel row ``i`` then reads the
    contiguous slab ``[i:i + H]``, so no per-row copy is needed.
    """
    v = sliding_window_view(xp_one, (kw, kd), axis=(1, 2))
    hp, w, d, c = v.shape[:4]
    cols = np.ascontiguousarray(v.transpose(0, 1, 2, 4, 5, 3))
    return cols.reshape(hp, w * d, kw * kd * c)


def _correlate(x, weight, pads):
    b, h, w, d, _ = x.shape
    kh, kw, kd, cin, cout = weight.shape
    xp = np.pad(x, [(0, 0), *pads, (0, 0)])
    wm = weight.reshape(kh, kw * kd * cin, cout)
    k = wm.shape[1]
    out = np.empty((b, h * w * d, cout), dtype=np.result_type(x, weight))
    for n in range(b):
        cols = _row_cols(xp[n], kw, kd)
        acc = out[n]
        np.matmul(cols[0:h].reshape(-1, k), wm[0], out=acc)
        for i in range(1, kh):
            acc += cols[i:i + h].reshape(-1, k) @ wm[i]
    return out.reshape(b, h, w, d, cout)


def complex_conv3d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """3D cross-correlation with complex weights, stride 1, zero "same" padding.

    ``x`` is ``(B, H, W, D, C_in)``, ``weight`` is ``(kh, kw, kd, C_in, C_out)``
    and ``bias`` is ``(C_out,)``.
    """
    if x.ndim != 5 or weight.ndim != 5 or x.shape[-1] != weight.shape[3]:
        raise ValueError(
            f"shape error: input {x.shape} incompatible with kernel {weight.shape}")
    if bias.shape != (weight.shape[4],):
        raise ValueError(f"shape error: bias {bias.shape} for kernel {weight.shape}")
    out = _correlate(x, weight, [_same_pads(k) for k in weight.shape[:3]])
    out += bias
    return out


def complex_conv3d_backward(grad_out, x, weight, need_input_grad=True):
    """Return ``(grad_x, grad_weight, grad_bias)`` for :func:`complex_conv3d`.

    ``grad_x`` is ``None`` when ``need_input_grad`` is false (first layer).
    """
    b, h, w, d, _ = x.shape
    kh, kw, kd, cin, cout = weight.shape
    pads = [_same_pads(k) for k in (kh, kw, kd)]
    xp = np.pad(x, [(0, 0), *pads, (0, 0)])
    grad_w = np.zeros((kh, kw * kd * cin, cout), dtype=np.result_type(x, weight, grad_out))
    g3 = grad_out.reshape(b, h, w * d, cout)
    for n in range(b):
        cols = _row_cols(xp[n], kw, kd).conj()
        for i in range(kh):
            grad_w[i] += cols[i:i + h].reshape(-1, cols.shape[2]).T @ g3[n].reshape(-1, cout)
    grad_w = grad_w.reshape(weight.shape)
    grad_b = grad_out.sum(axis=(0, 1, 2, 3))
    if not need_input_grad:
        return None, grad_w, grad_b
    # transposed correlation: flipped, conjugated kernel with in/out swapped
    flipped = weight[::-1, ::-1, ::-1].conj().transpose(0, 1, 2, 4, 3)
    grad_x = _correlate(grad_out, flipped, [p[::-1] for p in pads])
    return grad_x, grad_w, grad_b


def crelu(x: np.ndarray) -> np.ndarray:
    """ReLU applied separately to the real and imaginary parts."""
    return np.maximum(x.real, 0.0) + 1j * np.maximum(x.imag, 0.0)


def crelu_backward(grad_out, x):
    return grad_out.real * (x.real > 0) + 1j * (grad_out.imag * (x.imag > 0))


def _sigmoid(q):
    return 0.5 * (1.0 + np.tanh(0.5 * q))


def se_block_forward(u, w1, w2):
    """Squeeze-and-excitation on complex features; returns ``(out, cache)``.

    The squeeze averages ``|u|`` over every spatial axis, so the gates are
    real and rescale each complex channel without touching its phase.
    ``w1`` is ``(C // r, C)`` and ``w2`` is ``(C, C // r)``.
    """
    c = u.shape[-1]
    if w1.shape[1] != c or w2.shape != (c, w1.shape[0]):
        raise ValueError(f"shape error: SE weights {w1.shape}, {w2.shape} for {c} channels")
    if w1.shape[0] == 0 or c % w1.shape[0]:
        raise ValueError(f"bad reduction: {c} channels cannot be reduced to {w1.shape[0]}")
    spatial = tuple(range(1, u.ndim - 1))
    z = np.abs(u).mean(axis=spatial)            # (B, C)
    hidden = z @ w1.T                           # (B, C/r)
    act = np.maximum(hidden, 0.0)
    s = _sigmoid(act @ w2.T)                    # (B, C)
    gate = s.reshape(s.shape[0], *([1] * len(spatial)), c)
    return u * gate, (z, hidden, act, s)


def se_block(u, w1, w2):
    return se_block_forward(u, w1, w2)[0]


def magnitude_grad(grad_mag, z):
    """Chain a real gradient on ``|z|`` back to the complex ``z``."""
    return grad_mag * (z / np.maximum(np.abs(z), MAG_EPS))


def se_block_backward(grad_out, u, w1, w2, cache):
    z, hidden, act, s = cache
    c = u.shape[-1]
    spatial = tuple(range(1, u.ndim - 1))
    shape_b = (u.shape[0], *([1] * len(spatial)), c)
    grad_u = grad_out * s.reshape(shape_b)
    grad_s = (grad_out * u.conj()).real.sum(axis=spatial)
    grad_q = grad_s * s * (1.0 - s)
    grad_w2 = grad_q.T @ act
    grad_hidden = (grad_q @ w2) * (hidden > 0)
    grad_w1 = grad_hidden.T @ z
    grad_z = grad_hidden @ w1
    n_spatial = int(np.prod([u.shape[a] for a in spatial]))
    grad_u += magnitude_grad((grad_z / n_spatial).reshape(shape_b), u)
    return grad_u, grad_w1, grad_w2


def concat_channels(xs):
    if not xs:
        raise ValueError("concat of zero tensors")
    lead = xs[0].shape[:-1]
    for x in xs[1:]:
        if x.shape[:-1] != lead:
            raise ValueError(f"dimension mismatch: {x.shape[:-1]} vs {lead}")
    return np.concatenate(xs, axis=-1)


def concat_channels_backward(grad_out, sizes):
    return np.split(grad_out, np.cumsum(sizes)[:-1], axis=-1)


def dense(x, weight, bias):
    if x.ndim != 2 or x.shape[1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise ValueError(
            f"shape mismatch: input {x.shape}, weight {weight.shape}, bias {bias.shape}")
    return x @ weight + bias


def dense_backward(grad_out, x, weight, need_input_grad=True):
    grad_w = x.conj().T @ grad_out
    grad_b = grad_out.sum(axis=0)
    grad_x = grad_out @ weight.conj().T if need_input_grad else None
    return grad_x, grad_w, grad_b


def dropout_mask(shape, rate, rng):
    """Inverted-dropout multiplier: 0 for dropped elements, 1/(1-rate) otherwise."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape)
    rng = np.random.default_rng(rng)
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


def dropout(x, rate, seed=None, training=True):
    """One Bernoulli draw per complex element, shared by real and imaginary parts."""
    if not training or rate == 0.0:
        return x
    return x * dropout_mask(x.shape, rate, seed)


def magnitude_softmax(logits):
    a = np.abs(logits)
    e = np.exp(a - a.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def magnitude_softmax_backward(grad_prob, logits, prob):
    grad_a = prob * (grad_prob - (grad_prob * prob).sum(axis=-1, keepdims=True))
    return magnitude_grad(grad_a, logits)


def cross_entropy(prob, onehot):
    """Batch mean of ``-sum(y * log(p))`` with ``p`` clamped below at 1e-12."""
    return float(-(onehot * np.log(np.maximum(prob, LOG_EPS))).sum() / prob.shape[0])


def cross_entropy_backward(prob, onehot):
    active = prob > LOG_EPS
    return np.where(active, -onehot / (prob.shape[0] * np.where(active, prob, 1.0)), 0.0)


def glorot_complex(rng, shape, fan_in, fan_out):
    """Real and imaginary parts uniform in +-sqrt(6/(fan_in+fan_out))/sqrt(2)."""
    limit = np.sqrt(6.0 / (fan_in + fan_out)) / np.sqrt(2.0)
    re = rng.uniform(-limit, limit, size=shape)
    im = rng.uniform(-limit, limit, size=shape)
    return re + 1j * im


def glorot_real(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)
