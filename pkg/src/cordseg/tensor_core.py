"""Dense rank-4 tensor math for a small segmentation network.

Tensors are plain numpy arrays in (batch, channels, height, width) layout,
float32 on the production path. Every operation here is a pure function;
backward passes take the cached forward inputs explicitly instead of
recording a graph. Convolutions run as window-view + one BLAS contraction,
which is the whole performance story at this scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

Tensor = np.ndarray  # rank 4: (n, c, h, w)

BCE_EPS = 1e-7


@dataclass
class ConvParams:
    """One convolution's weights: kernel (out_ch, in_ch, kh, kw) and bias (out_ch,)."""

    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self) -> None:
        if self.kernel.ndim != 4:
            raise ValueError(f"kernel must be rank 4, got shape {self.kernel.shape}")
        kh, kw = self.kernel.shape[2:]
        if kh not in (1, 2, 3) or kw not in (1, 2, 3):
            raise ValueError(f"kernel spatial dims must be in {{1, 2, 3}}, got {kh}x{kw}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ValueError(
                f"bias shape {self.bias.shape} does not match out_ch {self.kernel.shape[0]}"
            )

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return self.kernel.shape[1]


@dataclass
class ArgmaxRecord:
    """Winning position per 2x2 pooling window, for routing gradients back."""

    indices: np.ndarray  # (n, c, h/2, w/2), values 0..3 (row-major within window)
    input_shape: tuple[int, int, int, int]


@dataclass
class OptimState:
    """Adaptive-moment accumulators, keyed like the parameter dict."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0


def _check_input(x: Tensor) -> None:
    if x.ndim != 4:
        raise ValueError(f"expected rank-4 tensor (n, c, h, w), got shape {x.shape}")


def _same_pad(kh: int, kw: int) -> tuple[int, int, int, int]:
    # top, bottom, left, right; asymmetric only for even kernels
    return (kh - 1) // 2, kh - 1 - (kh - 1) // 2, (kw - 1) // 2, kw - 1 - (kw - 1) // 2


def _windows(xp: Tensor, kh: int, kw: int) -> np.ndarray:
    """Read-only sliding-window view (n, c, kh, kw, h_out, w_out), stride 1."""
    n, c, h, w = xp.shape
    ho, wo = h - kh + 1, w - kw + 1
    sn, sc, sh, sw = xp.strides
    return as_strided(
        xp, (n, c, kh, kw, ho, wo), (sn, sc, sh, sw, sh, sw), writeable=False
    )


def conv2d(x: Tensor, params: ConvParams, padding: str = "same") -> Tensor:
    """Cross-correlate x with the kernel at stride 1, plus bias.

    padding="same" zero-pads so output h, w equal input h, w;
    "valid" uses no padding.
    """
    _check_input(x)
    k, b = params.kernel, params.bias
    oc, ic, kh, kw = k.shape
    n, c, h, w = x.shape
    if c != ic:
        raise ValueError(f"input has {c} channels, kernel expects {ic}")
    if h == 0 or w == 0:
        raise ValueError("input has empty spatial dims")
    if padding == "same":
        pt, pb, pl, pr = _same_pad(kh, kw)
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    elif padding == "valid":
        xp = x
        if h < kh or w < kw:
            raise ValueError(f"input {h}x{w} smaller than kernel {kh}x{kw}")
    else:
        raise ValueError(f"unknown padding {padding!r}")
    win = _windows(xp, kh, kw)
    # (n, ho, wo, oc) <- contract over (c, kh, kw)
    out = np.tensordot(win, k, axes=([1, 2, 3], [1, 2, 3]))
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    out += b[None, :, None, None]
    return out


def conv2d_backward(
    x: Tensor, params: ConvParams, grad_out: Tensor, padding: str = "same"
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Gradients of conv2d w.r.t. input, kernel and bias."""
    k = params.kernel
    oc, ic, kh, kw = k.shape
    n, c, h, w = x.shape
    if grad_out.shape[:2] != (n, oc):
        raise ValueError(
            f"grad_out shape {grad_out.shape} inconsistent with conv ({n}, {oc}, ...)"
        )
    if padding == "same":
        pt, pb, pl, pr = _same_pad(kh, kw)
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))
    else:
        pt = pl = 0
        xp = x
    ho, wo = grad_out.shape[2:]
    if (xp.shape[2] - kh + 1, xp.shape[3] - kw + 1) != (ho, wo):
        raise ValueError("grad_out spatial dims do not match the forward output")

    grad_bias = grad_out.sum(axis=(0, 2, 3))
    win = _windows(xp, kh, kw)
    # grad_k[o, i, a, b] = sum_{n, y, x} grad_out[n, o, y, x] * xp[n, i, y + a, x + b]
    grad_kernel = np.tensordot(grad_out, win, axes=([0, 2, 3], [0, 4, 5]))

    # one contraction over out channels, then scatter the kh*kw taps
    g = np.tensordot(grad_out, k, axes=([1], [0]))  # (n, ho, wo, ic, kh, kw)
    g = np.ascontiguousarray(g.transpose(0, 3, 4, 5, 1, 2))  # (n, ic, kh, kw, ho, wo)
    grad_xp = np.zeros_like(xp)
    for a in range(kh):
        for b_ in range(kw):
            grad_xp[:, :, a : a + ho, b_ : b_ + wo] += g[:, :, a, b_]
    grad_x = grad_xp[:, :, pt : pt + h, pl : pl + w]
    return np.ascontiguousarray(grad_x), grad_kernel, grad_bias


def relu(x: Tensor) -> Tensor:
    return np.maximum(x, 0)


def relu_backward(x: Tensor, grad_out: Tensor) -> Tensor:
    """Pass gradient where the forward input was positive, zero elsewhere."""
    if x.shape != grad_out.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {grad_out.shape}")
    return np.where(x > 0, grad_out, 0)


def maxpool2x2(x: Tensor) -> tuple[Tensor, ArgmaxRecord]:
    """Max over disjoint 2x2 windows; records the winning index per window."""
    _check_input(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(n, c, h // 2, w // 2, 4)
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(out), ArgmaxRecord(idx, (n, c, h, w))


def maxpool2x2_backward(record: ArgmaxRecord, grad_out: Tensor) -> Tensor:
    """Route each window's gradient entirely to its recorded argmax."""
    n, c, h, w = record.input_shape
    if grad_out.shape != (n, c, h // 2, w // 2):
        raise ValueError(
            f"grad_out shape {grad_out.shape} does not match pooled shape "
            f"{(n, c, h // 2, w // 2)}"
        )
    g = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad_out.dtype)
    np.put_along_axis(g, record.indices[..., None], grad_out[..., None], axis=-1)
    g = g.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(g.reshape(n, c, h, w))


def upconv2x2(x: Tensor, params: ConvParams) -> Tensor:
    """Transposed convolution, kernel 2x2, stride 2: doubles h and w.

    Each input pixel scatters value * kernel into its own disjoint 2x2
    output block, so no windows overlap.
    """
    _check_input(x)
    k, b = params.kernel, params.bias
    oc, ic, kh, kw = k.shape
    if (kh, kw) != (2, 2):
        raise ValueError(f"upconv2x2 requires a 2x2 kernel, got {kh}x{kw}")
    n, c, h, w = x.shape
    if c != ic:
        raise ValueError(f"input has {c} channels, kernel expects {ic}")
    t = np.tensordot(x, k, axes=([1], [1]))  # (n, h, w, oc, 2, 2)
    out = t.transpose(0, 3, 1, 4, 2, 5).reshape(n, oc, 2 * h, 2 * w)
    out = np.ascontiguousarray(out)
    out += b[None, :, None, None]
    return out


def upconv2x2_backward(
    x: Tensor, params: ConvParams, grad_out: Tensor
) -> tuple[Tensor, np.ndarray, np.ndarray]:
    """Gradients of upconv2x2 w.r.t. input, kernel and bias."""
    k = params.kernel
    oc, ic, _, _ = k.shape
    n, c, h, w = x.shape
    if grad_out.shape != (n, oc, 2 * h, 2 * w):
        raise ValueError(
            f"grad_out shape {grad_out.shape} does not match {(n, oc, 2 * h, 2 * w)}"
        )
    grad_bias = grad_out.sum(axis=(0, 2, 3))
    g6 = grad_out.reshape(n, oc, h, 2, w, 2)
    # grad_k[o, i, a, b] = sum_{n, y, x} g6[n, o, y, a, x, b] * x[n, i, y, x]
    grad_kernel = np.tensordot(g6, x, axes=([0, 2, 4], [0, 2, 3]))  # (o, a, b, i)
    grad_kernel = np.ascontiguousarray(grad_kernel.transpose(0, 3, 1, 2))
    # grad_x[n, i, y, x] = sum_{o, a, b} g6[n, o, y, a, x, b] * k[o, i, a, b]
    grad_x = np.tensordot(g6, k, axes=([1, 3, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(grad_x), grad_kernel, grad_bias


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack b's channels after a's; batch and spatial dims must agree."""
    _check_input(a)
    _check_input(b)
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"cannot concat {a.shape} with {b.shape}")
    return np.concatenate([a, b], axis=1)


def split_channels(x: Tensor, first: int) -> tuple[Tensor, Tensor]:
    """Inverse of concat_channels: the first `first` channels and the rest."""
    return x[:, :first], x[:, first:]


def sigmoid(x: Tensor) -> Tensor:
    """Elementwise logistic function, overflow-safe in float32."""
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid_backward(out: Tensor, grad_out: Tensor) -> Tensor:
    """Gradient through sigmoid, given the forward *output*."""
    if out.shape != grad_out.shape:
        raise ValueError(f"shape mismatch: {out.shape} vs {grad_out.shape}")
    return grad_out * out * (1.0 - out)


def bce_loss(pred: Tensor, target: Tensor) -> tuple[float, Tensor]:
    """Mean binary cross-entropy and its gradient w.r.t. pred.

    Predictions are clamped to [BCE_EPS, 1 - BCE_EPS] before the logs; the
    gradient is the analytic derivative of the clamped mean.
    """
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    p = np.clip(pred, BCE_EPS, 1.0 - BCE_EPS)
    t = target
    loss = -float(np.mean(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)))
    grad = ((p - t) / (p * (1.0 - p))) / p.size
    return loss, grad.astype(pred.dtype, copy=False)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], OptimState]:
    """One bias-corrected adaptive-moment update. Returns new params and state."""
    if set(params) != set(grads) or set(params) != set(state.m):
        raise ValueError("params, grads and optimizer state must share keys")
    t = state.t + 1
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise ValueError(f"shape mismatch for {name!r}")
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, OptimState(new_m, new_v, t)


def init_optim_state(params: dict[str, np.ndarray]) -> OptimState:
    return OptimState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
        t=0,
    )
