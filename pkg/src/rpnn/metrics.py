"""Fusion quality indexes at reduced and full resolution, plus the plain
interpolation baseline and a band-correlation diagnostic.

Reduced resolution (ground truth available): SAM in degrees, ERGAS, PSNR in
dB and a per-band average of the universal image quality index (q_avg).
Full resolution (no ground truth): the spectral distortion d_lambda
(degrade-consistency via q_avg), a spatial distortion d_s approximated as
the mean cross-scale gap of band/PAN correlation coefficients, and
q_star = (1 - d_lambda)(1 - d_s).

Reports serialize to fixed key names (sam_deg, ergas, psnr_db, q_avg,
d_lambda, d_s, q_star) for machine diffing.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataio import DataCube
from .imaging import VAR_EPS, DecimationSpec, MtfFilterSpec, degrade, interpolate_band

log = logging.getLogger(__name__)

PSNR_CAP_DB = 100.0
DEFAULT_UIQI_BLOCK = 32


@dataclass
class MetricsReport:
    """Either a reduced- or a full-resolution set of quality indexes."""

    mode: str
    sam_deg: float | None = None
    ergas: float | None = None
    psnr_db: float | None = None
    q_avg: float | None = None
    d_lambda: float | None = None
    d_s: float | None = None
    q_star: float | None = None

    @classmethod
    def reduced(cls, sam_deg, ergas, psnr_db, q_avg) -> "MetricsReport":
        return cls("reduced", sam_deg=sam_deg, ergas=ergas, psnr_db=psnr_db, q_avg=q_avg)

    @classmethod
    def full(cls, d_lambda, d_s) -> "MetricsReport":
        return cls("full", d_lambda=d_lambda, d_s=d_s, q_star=q_star(d_lambda, d_s))

    def to_text(self) -> str:
        if self.mode == "reduced":
            keys = ("sam_deg", "ergas", "psnr_db", "q_avg")
        else:
            keys = ("d_lambda", "d_s", "q_star")
        return "".join(f"{k} = {getattr(self, k):.10g}\n" for k in keys)


def _check_cubes(fused: np.ndarray, gt: np.ndarray):
    fused = np.asarray(fused, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if fused.shape != gt.shape:
        raise ValueError(f"shape mismatch: fused {fused.shape} vs reference {gt.shape}")
    if fused.ndim != 3:
        raise ValueError(f"expected (B,H,W) arrays, got shape {fused.shape}")
    return fused, gt


def sam(fused: np.ndarray, gt: np.ndarray, count_skipped: bool = False):
    """Mean per-pixel spectral angle in degrees; optimum 0.

    Pixels whose spectrum is all-zero in either image have no defined angle;
    they are skipped (and counted when count_skipped is set).
    """
    fused, gt = _check_cubes(fused, gt)
    nf = np.sqrt(np.einsum("bhw,bhw->hw", fused, fused))
    ng = np.sqrt(np.einsum("bhw,bhw->hw", gt, gt))
    valid = (nf > 0) & (ng > 0)
    skipped = int(valid.size - valid.sum())
    if skipped == valid.size:
        raise ValueError("no pixel has a nonzero spectrum in both images")
    if skipped:
        log.warning("sam: skipped %d all-zero spectra", skipped)
    # chord form 2*arcsin(|u - w|/2): well conditioned at small angles and
    # exactly zero for identical spectra, unlike arccos of a rounded cosine
    uf = fused / np.where(valid, nf, 1.0)
    ug = gt / np.where(valid, ng, 1.0)
    chord = 0.5 * np.sqrt(np.einsum("bhw,bhw->hw", uf - ug, uf - ug))
    angles = 2.0 * np.arcsin(np.clip(chord, 0.0, 1.0))
    value = float(np.degrees(angles[valid].mean()))
    return (value, skipped) if count_skipped else value


def ergas(fused: np.ndarray, gt: np.ndarray, ratio: int = 6) -> float:
    """Band-relative RMSE aggregate scaled by 100/ratio; optimum 0."""
    fused, gt = _check_cubes(fused, gt)
    terms = []
    for b in range(gt.shape[0]):
        mu = gt[b].mean()
        if mu == 0.0:
            log.warning("ergas: band %d has zero mean, excluded", b)
            continue
        rmse = np.sqrt(np.mean((fused[b] - gt[b]) ** 2))
        terms.append((rmse / mu) ** 2)
    if not terms:
        raise ValueError("all bands have zero mean")
    return float(100.0 / ratio * np.sqrt(np.mean(terms)))


def psnr(fused: np.ndarray, gt: np.ndarray) -> float:
    """Mean over bands of 10 log10(peak^2 / MSE), peak = reference band max.

    Identical bands (and any band above the cap) report 100 dB so reports
    stay finite.
    """
    fused, gt = _check_cubes(fused, gt)
    vals = []
    for b in range(gt.shape[0]):
        peak = gt[b].max()
        mse = np.mean((fused[b] - gt[b]) ** 2)
        if peak <= 0.0:
            log.warning("psnr: band %d has non-positive peak, excluded", b)
            continue
        if mse == 0.0:
            vals.append(PSNR_CAP_DB)
        else:
            vals.append(min(10.0 * np.log10(peak * peak / mse), PSNR_CAP_DB))
    if not vals:
        raise ValueError("no band has a positive reference peak")
    return float(np.mean(vals))


def _uiqi_band(x: np.ndarray, y: np.ndarray, block: int) -> float:
    """UIQI averaged over non-overlapping block x block windows of one band."""
    h, w = x.shape
    nbh, nbw = h // block, w // block
    if nbh < 1 or nbw < 1:
        raise ValueError(f"band {h}x{w} smaller than UIQI block {block}")
    xb = x[: nbh * block, : nbw * block].reshape(nbh, block, nbw, block)
    yb = y[: nbh * block, : nbw * block].reshape(nbh, block, nbw, block)
    mx = xb.mean(axis=(1, 3))
    my = yb.mean(axis=(1, 3))
    vx = (xb * xb).mean(axis=(1, 3)) - mx * mx
    vy = (yb * yb).mean(axis=(1, 3)) - my * my
    cov = (xb * yb).mean(axis=(1, 3)) - mx * my
    flat_x = vx < VAR_EPS
    flat_y = vy < VAR_EPS
    both_flat = flat_x & flat_y
    one_flat = flat_x ^ flat_y
    lum_den = mx * mx + my * my
    lum = np.where(lum_den > VAR_EPS, 2.0 * mx * my / np.where(lum_den > VAR_EPS, lum_den, 1.0), 1.0)
    con_den = vx + vy
    q = np.where(
        both_flat,
        1.0,
        np.where(one_flat, 0.0, 2.0 * cov / np.where(con_den > 0, con_den, 1.0) * lum),
    )
    return float(q.mean())


def q_avg(fused: np.ndarray, gt: np.ndarray, block: int = DEFAULT_UIQI_BLOCK) -> float:
    """Per-band universal image quality index on non-overlapping blocks, averaged."""
    fused, gt = _check_cubes(fused, gt)
    return float(np.mean([_uiqi_band(fused[b], gt[b], block) for b in range(gt.shape[0])]))


def d_lambda(
    fused_hr: np.ndarray,
    hs_lr: np.ndarray,
    filt: MtfFilterSpec | None = None,
    dec: DecimationSpec | None = None,
    block: int = DEFAULT_UIQI_BLOCK,
) -> float:
    """Spectral distortion: 1 - q_avg(degraded fusion, original cube); optimum 0."""
    filt = filt or MtfFilterSpec()
    dec = dec or DecimationSpec.for_ratio(filt.ratio)
    fused_hr = np.asarray(fused_hr, dtype=np.float64)
    deg = np.stack([degrade(b, filt, dec) for b in fused_hr])
    return 1.0 - q_avg(deg, np.asarray(hs_lr, dtype=np.float64), block=block)


def _global_cc(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    vx = float((xc * xc).mean())
    vy = float((yc * yc).mean())
    if vx < VAR_EPS or vy < VAR_EPS:
        return 0.0
    return float(np.clip((xc * yc).mean() / np.sqrt(vx * vy), -1.0, 1.0))


def d_s(
    fused_hr: np.ndarray,
    pan: np.ndarray,
    hs_lr: np.ndarray,
    filt: MtfFilterSpec | None = None,
    dec: DecimationSpec | None = None,
) -> float:
    """Spatial distortion: mean over bands of the cross-scale correlation gap.

    Compares cc(fused band, PAN) at full scale with cc(original band,
    degraded PAN) at reduced scale; a faithful sharpening keeps the two
    close.  This form approximates the published regression-based index: it
    shares its optimum and invariances but is not numerically identical.
    """
    filt = filt or MtfFilterSpec()
    dec = dec or DecimationSpec.for_ratio(filt.ratio)
    fused_hr = np.asarray(fused_hr, dtype=np.float64)
    hs_lr = np.asarray(hs_lr, dtype=np.float64)
    pan = np.asarray(pan, dtype=np.float64)
    if float(pan.var()) < VAR_EPS:
        raise ValueError("panchromatic image is flat; spatial distortion undefined")
    pan_lr = degrade(pan, filt, dec)
    gaps = [
        abs(_global_cc(fused_hr[b], pan) - _global_cc(hs_lr[b], pan_lr))
        for b in range(hs_lr.shape[0])
    ]
    return float(np.mean(gaps))


def q_star(d_lambda_value: float, d_s_value: float) -> float:
    """(1 - D_lambda) * (1 - D_S); 1 is ideal."""
    if not 0.0 <= d_lambda_value <= 1.0 or not 0.0 <= d_s_value <= 1.0:
        raise ValueError(f"distortions must lie in [0,1], got {d_lambda_value}, {d_s_value}")
    return (1.0 - d_lambda_value) * (1.0 - d_s_value)


def exp_baseline(hs: DataCube, ratio: int = 6) -> DataCube:
    """Plain band-wise interpolation to PAN scale; the no-sharpening reference."""
    up = np.stack([interpolate_band(b, ratio) for b in hs.values])
    return DataCube(hs.wavelengths.copy(), up, scale=hs.scale, ratio=hs.ratio)


def band_correlation_matrix(values: np.ndarray) -> np.ndarray:
    """Global correlation coefficient between every pair of bands.

    Diagonal is 1; rows/columns of flat bands are 0 off-diagonal.  Used to
    check that each band's most correlated neighbor is its predecessor.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 3 or values.shape[0] < 2:
        raise ValueError(f"need a (B,H,W) cube with B >= 2, got shape {values.shape}")
    b = values.shape[0]
    flat = values.reshape(b, -1)
    centered = flat - flat.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered * centered).sum(axis=1))
    ok = norms > np.sqrt(VAR_EPS * flat.shape[1])
    safe = np.where(ok, norms, 1.0)
    corr = (centered / safe[:, None]) @ (centered / safe[:, None]).T
    corr = np.clip(corr, -1.0, 1.0)
    corr[~ok, :] = 0.0
    corr[:, ~ok] = 0.0
    np.fill_diagonal(corr, 1.0)
    return corr
