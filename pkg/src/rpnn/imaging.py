"""Resolution-bridging primitives for single-band images.

All functions operate on 2-D float64 arrays (height x width).  The module
provides the scale-6 interpolation used to bring a low-resolution band to
panchromatic size, the sensor-matched Gaussian low-pass filter, decimation
with a fixed phase offset, and windowed local statistics.  Filtering and
decimation come with exact adjoints so losses built on them have analytic
gradients.

Geometry convention: low-resolution sample (n, m) sits at high-resolution
position (R*n + R//2, R*m + R//2).  Decimation reads the same phase, which
makes degrade(interpolate(x)) a near-identity on band-limited inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

VAR_EPS = 1e-12  # windows with variance below this are treated as flat


@dataclass(frozen=True)
class MtfFilterSpec:
    """Gaussian low-pass matched to a sensor MTF gain at the decimated Nyquist.

    The continuous Gaussian with sigma_f = (ratio/pi)*sqrt(-2*ln(gain)) has
    frequency response exactly `gain` at f = 1/(2*ratio).
    """

    ratio: int = 6
    nyquist_gain: float = 0.3
    half_width: int = 20

    def __post_init__(self):
        if self.ratio < 2:
            raise ValueError(f"ratio must be >= 2, got {self.ratio}")
        if not 0.0 < self.nyquist_gain < 1.0:
            raise ValueError(f"nyquist_gain must be in (0,1), got {self.nyquist_gain}")
        if self.half_width < 1:
            raise ValueError(f"half_width must be >= 1, got {self.half_width}")

    @property
    def sigma(self) -> float:
        return (self.ratio / math.pi) * math.sqrt(-2.0 * math.log(self.nyquist_gain))

    def kernel(self) -> np.ndarray:
        """Normalized 1-D Gaussian taps over [-half_width, half_width]."""
        t = np.arange(-self.half_width, self.half_width + 1, dtype=np.float64)
        k = np.exp(-0.5 * (t / self.sigma) ** 2)
        return k / k.sum()


@dataclass(frozen=True)
class DecimationSpec:
    """Subsampling step and phase; default phase centers the kept sample."""

    step: int = 6
    offset: tuple[int, int] = (3, 3)

    def __post_init__(self):
        n0, m0 = self.offset
        if not (0 <= n0 < self.step and 0 <= m0 < self.step):
            raise ValueError(f"offset {self.offset} must lie in [0, {self.step})")

    @classmethod
    def for_ratio(cls, ratio: int) -> "DecimationSpec":
        return cls(step=ratio, offset=(ratio // 2, ratio // 2))


def _as_image(x: np.ndarray, name: str = "image") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {x.shape}")
    return x


# ---------------------------------------------------------------------------
# cubic interpolation


def _cubic_weights(n_in: int, ratio: int):
    """Catmull-Rom gather indices and weights for one axis of a ratio-x upsample."""
    y = np.arange(n_in * ratio, dtype=np.float64)
    u = (y - ratio // 2) / ratio
    i0 = np.floor(u).astype(np.int64)
    s = u - i0
    w = np.empty((4, y.size))
    w[0] = 0.5 * s * (-1.0 + s * (2.0 - s))
    w[1] = 1.0 + s * s * (-2.5 + 1.5 * s)
    w[2] = 0.5 * s * (1.0 + s * (4.0 - 3.0 * s))
    w[3] = 0.5 * s * s * (s - 1.0)
    idx = np.stack([np.clip(i0 + t - 1, 0, n_in - 1) for t in range(4)])
    return idx, w


def interpolate_band(band: np.ndarray, ratio: int) -> np.ndarray:
    """Separable Catmull-Rom upsampling of a band to ratio times its size.

    Sample (n, m) of the input maps to (ratio*n + ratio//2, ratio*m + ratio//2)
    of the output, where its value is reproduced exactly.  Edges replicate.
    """
    band = _as_image(band, "band")
    if ratio < 2:
        raise ValueError(f"ratio must be >= 2, got {ratio}")
    h, w = band.shape
    if h < 4 or w < 4:
        raise ValueError(f"band too small for cubic interpolation: {band.shape} (need >= 4x4)")
    idx_r, w_r = _cubic_weights(h, ratio)
    rows = np.zeros((h * ratio, w))
    for t in range(4):
        rows += w_r[t][:, None] * band[idx_r[t], :]
    idx_c, w_c = _cubic_weights(w, ratio)
    out = np.zeros((h * ratio, w * ratio))
    for t in range(4):
        out += w_c[t][None, :] * rows[:, idx_c[t]]
    return out


# ---------------------------------------------------------------------------
# separable Gaussian filtering with exact adjoint


def _filter_axis(x: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    p = (k.size - 1) // 2
    pad = [(0, 0), (0, 0)]
    pad[axis] = (p, p)
    xp = np.pad(x, pad, mode="edge")
    return sliding_window_view(xp, k.size, axis=axis) @ k


def _fold_axis(u: np.ndarray, p: int, n: int, axis: int) -> np.ndarray:
    """Adjoint of replicate padding by p on one axis (length n core)."""
    sl = [slice(None), slice(None)]

    def take(a, b):
        s = sl.copy()
        s[axis] = slice(a, b)
        return u[tuple(s)]

    core = take(p, p + n).copy()
    edge0 = [slice(None), slice(None)]
    edge0[axis] = 0
    edge1 = [slice(None), slice(None)]
    edge1[axis] = n - 1
    core[tuple(edge0)] += take(0, p).sum(axis=axis)
    core[tuple(edge1)] += take(p + n, None).sum(axis=axis)
    return core


def _filter_axis_adjoint(g: np.ndarray, k: np.ndarray, axis: int) -> np.ndarray:
    p = (k.size - 1) // 2
    n = g.shape[axis]
    pad = [(0, 0), (0, 0)]
    pad[axis] = (k.size - 1, k.size - 1)
    gz = np.pad(g, pad)
    full = sliding_window_view(gz, k.size, axis=axis) @ k[::-1]
    return _fold_axis(full, p, n, axis)


def mtf_lowpass(image: np.ndarray, spec: MtfFilterSpec | None = None) -> np.ndarray:
    """Separable Gaussian low-pass with replicate-edge boundary handling."""
    image = _as_image(image)
    spec = spec or MtfFilterSpec()
    k = spec.kernel()
    return _filter_axis(_filter_axis(image, k, 0), k, 1)


def mtf_lowpass_adjoint(grad: np.ndarray, spec: MtfFilterSpec | None = None) -> np.ndarray:
    """Exact adjoint of mtf_lowpass (transpose of pad-then-correlate)."""
    grad = _as_image(grad, "grad")
    spec = spec or MtfFilterSpec()
    k = spec.kernel()
    return _filter_axis_adjoint(_filter_axis_adjoint(grad, k, 1), k, 0)


# ---------------------------------------------------------------------------
# decimation


def degrade(band_hr: np.ndarray, spec: MtfFilterSpec | None = None, dec: DecimationSpec | None = None) -> np.ndarray:
    """Low-pass then subsample: out(n, m) = LPF(x)(n0 + R*n, m0 + R*m)."""
    band_hr = _as_image(band_hr, "band_hr")
    spec = spec or MtfFilterSpec()
    dec = dec or DecimationSpec.for_ratio(spec.ratio)
    r = dec.step
    h, w = band_hr.shape
    if h % r != 0 or w % r != 0:
        raise ValueError(f"high-resolution dims {band_hr.shape} not divisible by step {r}")
    n0, m0 = dec.offset
    lp = mtf_lowpass(band_hr, spec)
    return lp[n0::r, m0::r].copy()


def degrade_adjoint(
    grad_lr: np.ndarray,
    hr_shape: tuple[int, int],
    spec: MtfFilterSpec | None = None,
    dec: DecimationSpec | None = None,
) -> np.ndarray:
    """Exact adjoint of degrade: scatter to the sampling phase, then LPF adjoint."""
    grad_lr = _as_image(grad_lr, "grad_lr")
    spec = spec or MtfFilterSpec()
    dec = dec or DecimationSpec.for_ratio(spec.ratio)
    n0, m0 = dec.offset
    z = np.zeros(hr_shape)
    z[n0::dec.step, m0::dec.step] = grad_lr
    return mtf_lowpass_adjoint(z, spec)


# ---------------------------------------------------------------------------
# windowed statistics

# Window of size s centered at (i, j) covers offsets [-(s//2), s-1-s//2];
# for even s this is the top/left-heavy convention.


def window_mean(x: np.ndarray, size: int) -> np.ndarray:
    """Mean over a size x size window at every pixel, replicate-edge."""
    x = _as_image(x)
    if size < 1:
        raise ValueError(f"window size must be >= 1, got {size}")
    lo = size // 2
    hi = size - 1 - lo
    xp = np.pad(x, ((lo, hi), (lo, hi)), mode="edge")
    s = np.zeros((xp.shape[0] + 1, xp.shape[1] + 1))
    np.cumsum(xp, axis=0, out=s[1:, 1:])
    np.cumsum(s[1:, 1:], axis=1, out=s[1:, 1:])
    total = s[size:, size:] - s[size:, :-size] - s[:-size, size:] + s[:-size, :-size]
    return total / float(size * size)


def window_mean_adjoint(grad: np.ndarray, size: int) -> np.ndarray:
    """Exact adjoint of window_mean, including the replicate-pad fold."""
    grad = _as_image(grad, "grad")
    lo = size // 2
    hi = size - 1 - lo
    gz = np.pad(grad, size - 1)
    s = np.zeros((gz.shape[0] + 1, gz.shape[1] + 1))
    np.cumsum(gz, axis=0, out=s[1:, 1:])
    np.cumsum(s[1:, 1:], axis=1, out=s[1:, 1:])
    spread = s[size:, size:] - s[size:, :-size] - s[:-size, size:] + s[:-size, :-size]
    folded = _fold_axis(_fold_axis(spread, lo, grad.shape[0], 0), lo, grad.shape[1], 1)
    return folded / float(size * size)


def local_cc(x: np.ndarray, y: np.ndarray, size: int) -> np.ndarray:
    """Local correlation coefficient over size x size windows.

    Returns values clamped to [-1, 1]; windows where either variance falls
    below VAR_EPS yield 0 so flat regions cannot inject NaNs downstream.
    """
    x = _as_image(x, "x")
    y = _as_image(y, "y")
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if size < 2:
        raise ValueError(f"window size must be >= 2, got {size}")
    mx = window_mean(x, size)
    my = window_mean(y, size)
    vx = np.maximum(window_mean(x * x, size) - mx * mx, 0.0)
    vy = np.maximum(window_mean(y * y, size) - my * my, 0.0)
    cov = window_mean(x * y, size) - mx * my
    valid = (vx > VAR_EPS) & (vy > VAR_EPS)
    denom = np.sqrt(np.where(valid, vx * vy, 1.0))
    rho = np.where(valid, cov / denom, 0.0)
    return np.clip(rho, -1.0, 1.0)
