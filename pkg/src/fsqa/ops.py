"""Sequence-layer primitives over (channels x time) tensors.

Every op is mask-aware or mask-neutral: layers that look sideways in time
(convolution, pooling, attention) either receive the validity mask or rely
on the caller having zeroed invalid columns, so padded content can never
reach a valid position.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DataError
from .tensor import Tensor, _make, mul

LN_EPS = 1e-5


class ValidityMask:
    """Boolean per-time-point validity; valid positions form a prefix."""

    __slots__ = ("valid",)

    def __init__(self, valid):
        v = np.asarray(valid, dtype=bool)
        if v.ndim != 1 or v.size < 1:
            raise DataError("mask must be a non-empty 1-D boolean vector")
        n = int(v.sum())
        if n < 1:
            raise DataError("mask must have at least one valid position")
        if not v[:n].all():
            raise DataError("valid positions must form a contiguous prefix")
        self.valid = v

    @classmethod
    def from_length(cls, num_valid: int, total: int) -> "ValidityMask":
        if not (1 <= num_valid <= total):
            raise DataError(f"num_valid {num_valid} outside [1, {total}]")
        v = np.zeros(total, dtype=bool)
        v[:num_valid] = True
        return cls(v)

    @property
    def length(self) -> int:
        return self.valid.size

    @property
    def num_valid(self) -> int:
        return int(self.valid.sum())

    def __eq__(self, other):
        return isinstance(other, ValidityMask) and np.array_equal(self.valid, other.valid)

    def __repr__(self):
        return f"ValidityMask({self.num_valid}/{self.length})"


def apply_mask(x: Tensor, mask: ValidityMask) -> Tensor:
    """Zero all invalid columns (gradient there is dropped too)."""
    if x.shape[-1] != mask.length:
        raise ConfigError(f"mask length {mask.length} != tensor length {x.shape[-1]}")
    return mul(x, Tensor(mask.valid.astype(x.dtype)))


def conv_output_length(length: int, kernel: int, stride: int, padding: int) -> int:
    return (length + 2 * padding - kernel) // stride + 1


def conv1d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int | None = None,
    depthwise: bool = False,
) -> Tensor:
    """1-D convolution over the time axis of a (C, T) tensor.

    Regular weights are (C_out, C_in, K); depthwise weights are (C, K) and
    map channel i only from channel i.  Kernels are odd and padding defaults
    to (K-1)/2 so stride-1 convolutions preserve length.  Content outside
    [0, T) reads as zero.
    """
    c_in, t = x.shape
    if depthwise:
        if weight.ndim != 2 or weight.shape[0] != c_in:
            raise ConfigError(f"depthwise weight {weight.shape} incompatible with {c_in} channels")
        k = weight.shape[1]
    else:
        if weight.ndim != 3 or weight.shape[1] != c_in:
            raise ConfigError(f"weight {weight.shape} incompatible with {c_in} input channels")
        k = weight.shape[2]
    if k % 2 == 0:
        raise ConfigError(f"kernel size must be odd, got {k}")
    if padding is None:
        padding = (k - 1) // 2
    if bias is not None:
        c_out = c_in if depthwise else weight.shape[0]
        if bias.shape != (c_out,):
            raise ConfigError(f"bias shape {bias.shape} != ({c_out},)")

    t_out = conv_output_length(t, k, stride, padding)
    xp = np.zeros((c_in, t + 2 * padding), dtype=x.dtype)
    xp[:, padding:padding + t] = x.data
    span = (t_out - 1) * stride + 1

    if depthwise:
        out = np.zeros((c_in, t_out), dtype=x.dtype)
        for j in range(k):
            out += weight.data[:, j:j + 1] * xp[:, j:j + span:stride]
        if bias is not None:
            out = out + bias.data[:, None]

        def vjp(g):
            gxp = np.zeros_like(xp)
            gw = np.empty_like(weight.data)
            for j in range(k):
                sl = xp[:, j:j + span:stride]
                gw[:, j] = (g * sl).sum(axis=1, dtype=np.float64)
                gxp[:, j:j + span:stride] += weight.data[:, j:j + 1] * g
            gx = gxp[:, padding:padding + t]
            gb = None if bias is None else g.sum(axis=1, dtype=np.float64).astype(g.dtype)
            return (gx, gw.astype(g.dtype), gb)

    else:
        c_out = weight.shape[0]
        cols = np.empty((c_in, k, t_out), dtype=x.dtype)
        for j in range(k):
            cols[:, j, :] = xp[:, j:j + span:stride]
        cols2 = cols.reshape(c_in * k, t_out)
        w2 = weight.data.reshape(c_out, c_in * k)
        out = w2 @ cols2
        if bias is not None:
            out = out + bias.data[:, None]

        def vjp(g):
            gw = (g @ cols2.T).reshape(weight.shape)
            gcols = (w2.T @ g).reshape(c_in, k, t_out)
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j:j + span:stride] += gcols[:, j, :]
            gx = gxp[:, padding:padding + t]
            gb = None if bias is None else g.sum(axis=1, dtype=np.float64).astype(g.dtype)
            return (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    if bias is None:
        full_vjp = lambda g: vjp(g)[:2]  # noqa: E731
    else:
        full_vjp = vjp
    return _make(out, parents, full_vjp)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    """Normalize over channels independently at each time point."""
    c = x.shape[0]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ConfigError(f"affine shapes {gamma.shape}/{beta.shape} != ({c},)")
    xd = x.data.astype(np.float64)
    mu = xd.mean(axis=0, keepdims=True)
    centered = xd - mu
    var = (centered * centered).mean(axis=0, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (centered * inv).astype(x.dtype)
    out = gamma.data[:, None] * xhat + beta.data[:, None]

    def vjp(g):
        gx_hat = g * gamma.data[:, None]
        m1 = gx_hat.mean(axis=0, keepdims=True, dtype=np.float64)
        m2 = (gx_hat * xhat).mean(axis=0, keepdims=True, dtype=np.float64)
        gx = (inv * (gx_hat - m1 - xhat * m2)).astype(g.dtype)
        ggamma = (g * xhat).sum(axis=1, dtype=np.float64).astype(g.dtype)
        gbeta = g.sum(axis=1, dtype=np.float64).astype(g.dtype)
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), vjp)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """y = W @ x (+ b per output channel) for x of shape (C_in, T)."""
    from .tensor import add, matmul, reshape

    y = matmul(weight, x)
    if bias is not None:
        y = add(y, reshape(bias, (-1, 1)))
    return y


def masked_maxpool1d(
    x: Tensor,
    mask: ValidityMask,
    kernel: int = 3,
    stride: int = 2,
    padding: int = 1,
) -> tuple[Tensor, ValidityMask]:
    """Max-pool with invalid positions treated as -inf.

    An output position is valid iff its window covers at least one valid
    input position; invalid outputs are set to zero.
    """
    c, t = x.shape
    if mask.length != t:
        raise ConfigError(f"mask length {mask.length} != tensor length {t}")
    t_out = conv_output_length(t, kernel, stride, padding)
    span = (t_out - 1) * stride + 1

    neg = np.finfo(x.dtype).min
    xp = np.full((c, t + 2 * padding), neg, dtype=x.dtype)
    xp[:, padding:padding + t] = np.where(mask.valid, x.data, neg)
    mp = np.zeros(t + 2 * padding, dtype=bool)
    mp[padding:padding + t] = mask.valid

    windows = np.empty((c, kernel, t_out), dtype=x.dtype)
    out_valid = np.zeros(t_out, dtype=bool)
    for j in range(kernel):
        windows[:, j, :] = xp[:, j:j + span:stride]
        out_valid |= mp[j:j + span:stride]
    amax = windows.argmax(axis=1)
    vals = np.take_along_axis(windows, amax[:, None, :], axis=1)[:, 0, :]
    if not np.isfinite(vals[:, out_valid]).all():
        raise AssertionError("all-invalid window marked valid")
    out = np.where(out_valid, vals, x.dtype.type(0))
    out_mask = ValidityMask(out_valid)

    def vjp(g):
        gm = np.where(out_valid, g, 0)
        gxp = np.zeros_like(xp)
        for j in range(kernel):
            gxp[:, j:j + span:stride] += np.where(amax == j, gm, 0)
        return (gxp[:, padding:padding + t],)

    return _make(out, (x,), vjp), out_mask


def masked_softmax(logits: Tensor, key_mask: ValidityMask) -> Tensor:
    """Row-wise softmax over valid keys only; invalid keys get exactly 0.

    Accepts (T_k,) or (T_q, T_k) logits; the mask runs over the last axis.
    """
    if logits.shape[-1] != key_mask.length:
        raise ConfigError(f"key mask length {key_mask.length} != {logits.shape[-1]}")
    if key_mask.num_valid < 1:
        raise DataError("softmax needs at least one valid key")
    valid = key_mask.valid
    z = np.where(valid, logits.data, -np.inf)
    zmax = z.max(axis=-1, keepdims=True)
    e = np.exp(z - zmax)
    e = np.where(valid, e, 0.0)
    denom = e.sum(axis=-1, keepdims=True, dtype=np.float64)
    p = (e / denom).astype(logits.dtype)

    def vjp(g):
        dot = (g * p).sum(axis=-1, keepdims=True, dtype=np.float64).astype(g.dtype)
        return (p * (g - dot),)

    return _make(p, (logits,), vjp)


def masked_mean(x: Tensor, mask: ValidityMask) -> Tensor:
    """Mean over valid columns, one value per channel."""
    if x.shape[-1] != mask.length:
        raise ConfigError(f"mask length {mask.length} != tensor length {x.shape[-1]}")
    n = mask.num_valid
    if n < 1:
        raise DataError("mean over an all-invalid mask")
    out = (x.data[:, mask.valid].sum(axis=1, dtype=np.float64) / n).astype(x.dtype)

    def vjp(g):
        gx = np.zeros_like(x.data)
        gx[:, mask.valid] = g[:, None] / n
        return (gx,)

    return _make(out, (x,), vjp)


def drop_path(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Stochastic depth: zero the whole branch with probability `rate`.

    Surviving branches are scaled by 1/(1-rate); inference is the identity.
    """
    if not (0.0 <= rate < 1.0):
        raise ConfigError(f"drop_path rate {rate} outside [0, 1)")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("drop_path in training mode needs an rng")
    if rng.random() < rate:
        return mul(x, 0.0)
    return mul(x, 1.0 / (1.0 - rate))
