"""Dense-tensor kernels: 2-D convolution, ReLU and Adam with exact analytic gradients.

Tensors are plain float64 numpy arrays laid out channels x height x width.
Convolution is direct (strip-mined shift-and-GEMM, no FFT) with "same"
replicate-edge padding, so spatial dimensions never change.  All backward
passes are exact adjoints of the forward computation, including the fold of
the replicate padding back onto the edge pixels.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

# Rows per GEMM strip; keeps the accumulator and input band cache-resident.
_STRIP_ROWS = 16


def replicate_pad(x: np.ndarray, p: int, out: np.ndarray | None = None) -> np.ndarray:
    """Pad the two trailing spatial axes by p on each side, repeating edges."""
    if p == 0:
        return x
    if out is None:
        pad = [(0, 0)] * (x.ndim - 2) + [(p, p), (p, p)]
        return np.pad(x, pad, mode="edge")
    h, w = x.shape[-2], x.shape[-1]
    out[..., p:p + h, p:p + w] = x
    out[..., :p, p:p + w] = x[..., :1, :]
    out[..., p + h:, p:p + w] = x[..., -1:, :]
    out[..., :, :p] = out[..., :, p:p + 1]
    out[..., :, p + w:] = out[..., :, p + w - 1:p + w]
    return out


def replicate_pad_adjoint(g_padded: np.ndarray, p: int) -> np.ndarray:
    """Exact adjoint of replicate_pad: folds margin gradients onto the edges."""
    if p == 0:
        return g_padded
    h = g_padded.shape[-2] - 2 * p
    w = g_padded.shape[-1] - 2 * p
    rows = g_padded[..., p:p + h, :].copy()
    rows[..., 0, :] += g_padded[..., :p, :].sum(axis=-2)
    rows[..., -1, :] += g_padded[..., p + h:, :].sum(axis=-2)
    out = rows[..., :, p:p + w].copy()
    out[..., :, 0] += rows[..., :, :p].sum(axis=-1)
    out[..., :, -1] += rows[..., :, p + w:].sum(axis=-1)
    return out


@dataclass
class ConvLayer:
    """One convolutional layer: kernel (out_ch, in_ch, k, k) and bias (out_ch).

    k must be odd; the forward pass uses (k-1)/2 replicate padding so the
    output spatial size equals the input's.
    """

    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.kernel.ndim != 4:
            raise ValueError(f"kernel must be 4-D (out,in,k,k), got shape {self.kernel.shape}")
        if self.kernel.shape[2] != self.kernel.shape[3]:
            raise ValueError(f"kernel must be square, got {self.kernel.shape[2:]}")
        if self.kernel.shape[2] % 2 != 1:
            raise ValueError(f"kernel size must be odd, got {self.kernel.shape[2]}")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ValueError(f"bias shape {self.bias.shape} does not match out_ch {self.kernel.shape[0]}")

    @property
    def out_ch(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_ch(self) -> int:
        return self.kernel.shape[1]

    @property
    def ksize(self) -> int:
        return self.kernel.shape[2]

    def num_params(self) -> int:
        return self.kernel.size + self.bias.size


def _check_input(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"input must be 3-D (channels,H,W), got shape {x.shape}")
    if x.shape[0] != layer.in_ch:
        raise ValueError(f"channel mismatch: layer expects {layer.in_ch} input channels, got {x.shape[0]}")
    if x.shape[1] < 1 or x.shape[2] < 1:
        raise ValueError(f"spatial dims must be >= 1, got {x.shape[1:]}")
    return x


def conv2d_forward(
    x: np.ndarray,
    layer: ConvLayer,
    xp: np.ndarray | None = None,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Direct same-size convolution with replicate-edge padding.

    Each output element is the bias plus the windowed weighted sum of the
    input.  ``xp`` may supply the already padded input (shape with +k-1 on
    both spatial axes) to skip re-padding on hot paths.
    """
    x = _check_input(x, layer)
    k = layer.ksize
    p = k // 2
    cin, h, w = x.shape
    cout = layer.out_ch
    if xp is None:
        xp = replicate_pad(x, p)
    # contiguous (k,k,out,in) slices keep every matmul on the BLAS path
    kc = np.ascontiguousarray(layer.kernel.transpose(2, 3, 0, 1))
    if out is None:
        out = np.empty((cout, h, w))
    strip = min(_STRIP_ROWS, h)
    band = np.empty((cin, strip, w))
    tmp = np.empty((cout, strip * w))
    acc = np.empty((cout, strip * w))
    for y0 in range(0, h, strip):
        rows = min(strip, h - y0)
        a = acc[:, :rows * w]
        a[:] = layer.bias[:, None]
        t = tmp[:, :rows * w]
        b = band[:, :rows, :]
        for dy in range(k):
            src = xp[:, y0 + dy:y0 + dy + rows, :]
            for dx in range(k):
                np.copyto(b, src[:, :, dx:dx + w])
                np.matmul(kc[dy, dx], b.reshape(cin, rows * w), out=t)
                a += t
        out[:, y0:y0 + rows, :] = a.reshape(cout, rows, w)
    return out


def conv2d_backward(
    x: np.ndarray,
    layer: ConvLayer,
    grad_out: np.ndarray,
    xp: np.ndarray | None = None,
    need_grad_input: bool = True,
    gxp_buf: np.ndarray | None = None,
):
    """Analytic gradients of a scalar loss w.r.t. input, kernel and bias.

    grad_out must match the forward output shape.  Returns
    (grad_input, grad_kernel, grad_bias); grad_input is None when
    need_grad_input is False (saves the adjoint scatter for the first layer).
    """
    x = _check_input(x, layer)
    grad_out = np.asarray(grad_out, dtype=np.float64)
    cin, h, w = x.shape
    cout = layer.out_ch
    if grad_out.shape != (cout, h, w):
        raise ValueError(f"grad_out shape {grad_out.shape} does not match output shape {(cout, h, w)}")
    k = layer.ksize
    p = k // 2
    if xp is None:
        xp = replicate_pad(x, p)
    kct = np.ascontiguousarray(layer.kernel.transpose(2, 3, 1, 0))  # (k,k,in,out)

    grad_kernel = np.zeros((k, k, cout, cin))
    grad_bias = grad_out.sum(axis=(1, 2))
    gxp = None
    if need_grad_input:
        if gxp_buf is not None:
            gxp = gxp_buf
            gxp.fill(0.0)
        else:
            gxp = np.zeros((cin, h + 2 * p, w + 2 * p))

    strip = min(_STRIP_ROWS, h)
    band = np.empty((cin, strip, w))
    tmp = np.empty((cin, strip * w)) if need_grad_input else None
    for y0 in range(0, h, strip):
        rows = min(strip, h - y0)
        gs = grad_out[:, y0:y0 + rows, :].reshape(cout, rows * w)
        b = band[:, :rows, :]
        for dy in range(k):
            src = xp[:, y0 + dy:y0 + dy + rows, :]
            dst = gxp[:, y0 + dy:y0 + dy + rows, :] if need_grad_input else None
            for dx in range(k):
                np.copyto(b, src[:, :, dx:dx + w])
                grad_kernel[dy, dx] += gs @ b.reshape(cin, rows * w).T
                if need_grad_input:
                    t = tmp[:, :rows * w]
                    np.matmul(kct[dy, dx], gs, out=t)
                    dst[:, :, dx:dx + w] += t.reshape(cin, rows, w)
    grad_input = replicate_pad_adjoint(gxp, p) if need_grad_input else None
    return grad_input, np.ascontiguousarray(grad_kernel.transpose(2, 3, 0, 1)), grad_bias


def im2col(x: np.ndarray, k: int, xp: np.ndarray | None = None, out: np.ndarray | None = None) -> np.ndarray:
    """Unfold k x k replicate-padded windows into a (in_ch*k*k, H*W) matrix.

    Row order is (channel, dy, dx).  Worth materializing only for layers
    whose fan-in is small or whose input is constant across many GEMMs.
    """
    x = np.asarray(x, dtype=np.float64)
    cin, h, w = x.shape
    p = k // 2
    if xp is None:
        xp = replicate_pad(x, p)
    if out is None:
        out = np.empty((cin * k * k, h * w))
    col = out.reshape(cin, k, k, h, w)
    for i in range(cin):
        for dy in range(k):
            for dx in range(k):
                np.copyto(col[i, dy, dx], xp[i, dy:dy + h, dx:dx + w])
    return out


def conv2d_forward_col(col: np.ndarray, layer: ConvLayer, h: int, w: int, out: np.ndarray | None = None) -> np.ndarray:
    """Forward pass from a prebuilt im2col matrix (single GEMM plus bias)."""
    cout = layer.out_ch
    if out is None:
        out = np.empty((cout, h, w))
    flat = out.reshape(cout, h * w)
    np.matmul(layer.kernel.reshape(cout, -1), col, out=flat)
    flat += layer.bias[:, None]
    return out


def conv2d_grad_kernel_col(col: np.ndarray, grad_out: np.ndarray, layer: ConvLayer):
    """(grad_kernel, grad_bias) from a prebuilt im2col matrix; skips grad_input."""
    cout, h, w = grad_out.shape
    gk = (grad_out.reshape(cout, h * w) @ col.T).reshape(layer.kernel.shape)
    return gk, grad_out.sum(axis=(1, 2))


def relu(x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
    """Elementwise max(0, x)."""
    return np.maximum(x, 0.0, out=out)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Upstream gradient times the 0/1 pass-through mask of (x > 0)."""
    return grad_out * (x > 0.0)


@dataclass
class AdamState:
    """Adam accumulators for a list of parameter arrays.

    Defaults are the optimizer's standard configuration
    (beta1=0.9, beta2=0.999, eps=1e-8); the learning rate comes from the
    tuning configuration.
    """

    lr: float
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray], lr: float, **kw) -> "AdamState":
        return cls(
            lr=lr,
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            **kw,
        )


def adam_update(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> list[np.ndarray]:
    """One Adam step with bias correction; returns the updated parameter list.

    A non-finite gradient rejects the whole step: the counter is not
    advanced, the accumulators are untouched and the incident is logged.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and accumulators must have equal length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch: param {p.shape}, grad {g.shape}, accumulator {m.shape}")
    if not all(np.all(np.isfinite(g)) for g in grads):
        log.warning("adam_update: non-finite gradient at t=%d, step rejected", state.t)
        return [p.copy() for p in params]
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        out.append(p - state.lr * mhat / (np.sqrt(vhat) + state.eps))
    return out
