"""Synthetic high-resolution scenes with known ground truth.

A scene is a mixture of smooth endmember spectra weighted by spatial
abundance fields (smoothed random fields plus geometric shapes), so nearby
bands are strongly correlated and the most correlated neighbor of a band is
its spectral predecessor.  The panchromatic image is the mean of the bands
inside the panchromatic bandwidth, optionally plus extra high-frequency
detail.  Degrading such a scene produces test inputs whose ground truth is
the scene itself.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataio import DataCube, PanImage
from .imaging import DecimationSpec, MtfFilterSpec, degrade

log = logging.getLogger(__name__)


def default_wavelengths(bands: int, start: float = 400.0) -> np.ndarray:
    """Default center-wavelength grid: 10 nm gaps with two trailing 90 nm gaps.

    The mixed gaps make the iteration budget exercise both its linear branch
    and its cap, and push the last bands outside the default panchromatic
    bandwidth so both beta regimes occur.
    """
    if bands < 1:
        raise ValueError(f"bands must be >= 1, got {bands}")
    gaps = [10.0] * max(bands - 3, 0) + [90.0] * min(2, max(bands - 1, 0))
    gaps = gaps[: bands - 1]
    return start + np.concatenate([[0.0], np.cumsum(gaps)])


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of a synthetic scene; fully deterministic per seed.

    ``texture`` injects fine structure below the low-resolution Nyquist so
    plain interpolation genuinely loses detail; ``shapes`` stamps sharp-edged
    objects into every abundance field for the same reason.
    """

    size: int = 384
    bands: int = 16
    wavelengths: tuple[float, ...] | None = None
    endmembers: int = 5
    smoothness: float = 3.0
    texture: float = 0.5
    shapes: int = 40
    noise: float = 0.0
    pan_detail: float = 0.0
    seed: int = 0
    ratio: int = 6
    pan_band: tuple[float, float] = (400.0, 700.0)

    def __post_init__(self):
        if self.size < 4 * self.ratio or self.size % self.ratio != 0:
            raise ValueError(f"size must be a multiple of ratio >= {4 * self.ratio}, got {self.size}")
        if self.bands < 1:
            raise ValueError(f"bands must be >= 1, got {self.bands}")
        if self.endmembers < 1:
            raise ValueError(f"endmembers must be >= 1, got {self.endmembers}")
        if self.smoothness <= 0:
            raise ValueError(f"smoothness must be positive, got {self.smoothness}")
        if self.texture < 0 or self.shapes < 0:
            raise ValueError("texture and shapes must be non-negative")
        if self.noise < 0 or self.pan_detail < 0:
            raise ValueError("noise and pan_detail must be non-negative")

    def wavelength_grid(self) -> np.ndarray:
        if self.wavelengths is not None:
            grid = np.asarray(self.wavelengths, dtype=np.float64)
            if grid.size != self.bands:
                raise ValueError(f"{grid.size} wavelengths for {self.bands} bands")
            if np.any(np.diff(grid) <= 0):
                raise ValueError("wavelengths must be strictly increasing")
            return grid
        return default_wavelengths(self.bands)


def _smooth_field(rng: np.random.Generator, n: int, cell: float) -> np.ndarray:
    """Bilinear upsampling of coarse white noise; zero mean, unit-ish spread."""
    cell = max(cell, 1.0)
    g = int(np.ceil(n / cell)) + 2
    coarse = rng.standard_normal((g, g))
    pos = np.arange(n) / cell
    i0 = np.floor(pos).astype(np.int64)
    f = pos - i0
    i0 = np.clip(i0, 0, g - 2)
    rows = coarse[i0, :] * (1 - f)[:, None] + coarse[i0 + 1, :] * f[:, None]
    return rows[:, i0] * (1 - f)[None, :] + rows[:, i0 + 1] * f[None, :]


def _add_shapes(rng: np.random.Generator, field: np.ndarray, count: int) -> None:
    """Stamp random rectangles and disks; sharp edges carry detail the
    low-resolution grid cannot represent."""
    n = field.shape[0]
    yy, xx = np.mgrid[0:n, 0:n]
    for _ in range(count):
        amp = rng.uniform(0.6, 1.8) * rng.choice([-1.0, 1.0])
        cy, cx = rng.uniform(0.05 * n, 0.95 * n, size=2)
        r = rng.uniform(0.015 * n, 0.09 * n)
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) < r) & (np.abs(xx - cx) < 0.7 * r)
        else:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 < r * r
        field[mask] += amp


# Material-like archetypes (base, slope, then Gaussian bumps of (amp, center
# nm, width nm)).  Fixed across seeds so scenes from different seeds share the
# radiometric character of one sensor, which is what lets weights pretrained
# on one scene transfer to another.
_ARCHETYPES = (
    (0.12, 0.10, ((0.55, 1000.0, 350.0), (-0.08, 450.0, 60.0))),   # vegetation-like
    (0.08, -0.05, ((0.45, 430.0, 160.0), (0.05, 900.0, 200.0))),   # water-like
    (0.22, 0.35, ((0.18, 1600.0, 500.0), (0.05, 600.0, 150.0))),   # soil-like
    (0.80, -0.05, ((-0.15, 1400.0, 300.0), (0.08, 500.0, 200.0))), # bright surface
    (0.10, 0.04, ((0.10, 550.0, 200.0), (0.05, 1700.0, 400.0))),   # dark surface
)


def _endmember_spectra(rng: np.random.Generator, grid: np.ndarray, count: int) -> np.ndarray:
    """Smooth positive spectra in [0.05, 1] built from the fixed archetypes.

    A small seeded perturbation varies scenes without changing the sensor's
    overall band statistics; wide bumps keep neighboring bands similar.
    """
    spectra = np.empty((count, grid.size))
    x = (grid - 400.0) / 2000.0
    for e in range(count):
        base, slope, bumps = _ARCHETYPES[e % len(_ARCHETYPES)]
        s = base + slope * x
        for amp, center, width in bumps:
            s = s + amp * np.exp(-0.5 * ((grid - center) / width) ** 2)
        wiggle_amp = rng.uniform(-0.06, 0.06)
        wiggle_center = rng.uniform(grid.min(), grid.max())
        s = s * rng.uniform(0.92, 1.08) + wiggle_amp * np.exp(
            -0.5 * ((grid - wiggle_center) / 300.0) ** 2
        )
        spectra[e] = np.clip(s, 0.05, 1.0)
    return spectra


# softmax temperature for material competition: high enough that most pixels
# are dominated by one material (patchy scenes with spectral boundaries)
_PATCH_SHARPNESS = 14.0


def generate_scene(spec: SceneSpec):
    """Build (ground-truth cube, panchromatic image), both at high resolution.

    Materials compete through a sharpened softmax of their abundance fields,
    so the scene is patchy with hard spectral boundaries; a multiplicative
    shading field carries fine sub-decimation brightness texture that all
    bands (and hence the PAN) share.
    """
    rng = np.random.default_rng(spec.seed)
    grid = spec.wavelength_grid()
    n = spec.size
    cell = spec.smoothness * spec.ratio

    fields = np.empty((spec.endmembers, n, n))
    for e in range(spec.endmembers):
        f = _smooth_field(rng, n, cell)
        _add_shapes(rng, f, count=spec.shapes)
        fmin, fmax = f.min(), f.max()
        span = fmax - fmin if fmax > fmin else 1.0
        fields[e] = (f - fmin) / span
    if spec.endmembers == 1:
        abundances = fields
    else:
        logits = _PATCH_SHARPNESS * fields
        logits -= logits.max(axis=0, keepdims=True)
        expf = np.exp(logits)
        abundances = expf / expf.sum(axis=0, keepdims=True)
    spectra = _endmember_spectra(rng, grid, spec.endmembers)
    values = np.tensordot(spectra.T, abundances, axes=1)  # (B, n, n)

    # shared multiplicative shading: scalar per pixel, so spectral angles are
    # untouched while every band gains detail the decimated grid cannot hold
    shading = np.clip(1.0 + spec.texture * _smooth_field(rng, n, spec.ratio / 2.0) / 3.0, 0.4, 1.6) / 1.6
    values *= shading

    if spec.noise > 0:
        values = np.maximum(values + rng.normal(0.0, spec.noise, size=values.shape), 0.0)

    lo, hi = spec.pan_band
    in_band = (grid >= lo) & (grid <= hi)
    if not np.any(in_band):
        raise ValueError(f"no bands inside the panchromatic bandwidth {spec.pan_band}")
    pan = values[in_band].mean(axis=0)
    if spec.pan_detail > 0:
        detail = _smooth_field(rng, n, 2.0)
        pan = np.maximum(pan + spec.pan_detail * detail, 0.0)

    cube = DataCube(grid, values, scale=1.0, ratio=spec.ratio)
    return cube, PanImage(pan, scale=1.0, ratio=spec.ratio)


def wald_degrade(
    gt_cube: DataCube,
    pan: PanImage,
    filt: MtfFilterSpec | None = None,
    dec: DecimationSpec | None = None,
):
    """Reduced-resolution protocol inputs: (degraded cube, pan, ground truth).

    Each ground-truth band is low-passed and decimated to produce the
    low-resolution cube; the panchromatic image passes through unchanged and
    the original cube serves as the ground truth for evaluation.
    """
    filt = filt or MtfFilterSpec(ratio=gt_cube.ratio if gt_cube.ratio > 1 else 6)
    dec = dec or DecimationSpec.for_ratio(filt.ratio)
    bands_lr = np.stack([degrade(b, filt, dec) for b in gt_cube.values])
    hs_lr = DataCube(gt_cube.wavelengths.copy(), bands_lr, scale=gt_cube.scale, ratio=filt.ratio)
    return hs_lr, pan, gt_cube
