"""Unsupervised band-wise tuning loss: spectral consistency plus weighted spatial consistency.

The spectral term is the per-pixel mean absolute difference between the
degraded fusion result and the original low-resolution band.  The spatial
term is the mean absolute gap between a bound map rho_max and the local
correlation coefficient of the fused band with the panchromatic image.  The
combined loss is  L = L_spectral + beta * L_spatial,  where beta is halved
for bands whose center wavelength falls outside the panchromatic bandwidth.

All losses return (value, gradient w.r.t. the fused band); gradients are
exact adjoint-chain computations, not autodiff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import (
    VAR_EPS,
    DecimationSpec,
    MtfFilterSpec,
    degrade,
    degrade_adjoint,
    interpolate_band,
    local_cc,
    mtf_lowpass,
    window_mean,
    window_mean_adjoint,
)

RHO_MAX_MODES = ("constant", "estimated")


@dataclass(frozen=True)
class LossConfig:
    """Weights and window settings of the combined loss."""

    beta_overlap: float = 0.5
    beta_nonoverlap: float = 0.25
    sigma: int = 6
    rho_max_mode: str = "estimated"
    pan_band: tuple[float, float] = (400.0, 700.0)

    def __post_init__(self):
        if not 0.0 < self.beta_nonoverlap <= self.beta_overlap:
            raise ValueError(
                f"need 0 < beta_nonoverlap <= beta_overlap, got {self.beta_nonoverlap}, {self.beta_overlap}"
            )
        if self.sigma < 2:
            raise ValueError(f"sigma must be >= 2, got {self.sigma}")
        if self.rho_max_mode not in RHO_MAX_MODES:
            raise ValueError(f"rho_max_mode must be one of {RHO_MAX_MODES}, got {self.rho_max_mode!r}")
        if not self.pan_band[0] < self.pan_band[1]:
            raise ValueError(f"pan_band must be an increasing interval, got {self.pan_band}")


@dataclass
class LossReport:
    """One loss evaluation; l_total = l_spectral + beta * l_spatial."""

    l_spectral: float
    l_spatial: float
    l_total: float
    beta: float
    iteration: int = 0


def beta_for_wavelength(wavelength_nm: float, cfg: LossConfig) -> float:
    lo, hi = cfg.pan_band
    return cfg.beta_overlap if lo <= wavelength_nm <= hi else cfg.beta_nonoverlap


def spectral_loss(
    fused: np.ndarray,
    band_lr: np.ndarray,
    spec: MtfFilterSpec | None = None,
    dec: DecimationSpec | None = None,
):
    """Mean |degrade(fused) - band_lr| and its gradient w.r.t. fused.

    The l1 norm is normalized by the low-resolution pixel count, so values
    are comparable across image sizes.  The subgradient of |.| at zero is 0.
    """
    fused = np.asarray(fused, dtype=np.float64)
    band_lr = np.asarray(band_lr, dtype=np.float64)
    spec = spec or MtfFilterSpec()
    dec = dec or DecimationSpec.for_ratio(spec.ratio)
    deg = degrade(fused, spec, dec)
    if deg.shape != band_lr.shape:
        raise ValueError(f"degraded fused {deg.shape} does not match low-resolution band {band_lr.shape}")
    diff = deg - band_lr
    value = float(np.abs(diff).mean())
    grad = degrade_adjoint(np.sign(diff) / diff.size, fused.shape, spec, dec)
    return value, grad


def rho_max_map(
    pan: np.ndarray,
    band_lr: np.ndarray,
    cfg: LossConfig,
    spec: MtfFilterSpec | None = None,
) -> np.ndarray:
    """Upper-bound correlation map for the spatial term.

    "estimated" compares the low-passed panchromatic image with the
    interpolated band on windows six times larger than the loss window
    (small windows are meaningless when both images lack high frequencies);
    the map is clamped to [0, 1].  "constant" returns all ones.
    """
    pan = np.asarray(pan, dtype=np.float64)
    if cfg.rho_max_mode == "constant":
        return np.ones_like(pan)
    spec = spec or MtfFilterSpec()
    band_lr = np.asarray(band_lr, dtype=np.float64)
    expected = (band_lr.shape[0] * spec.ratio, band_lr.shape[1] * spec.ratio)
    if pan.shape != expected:
        raise ValueError(f"pan shape {pan.shape} does not match ratio x band shape {expected}")
    rho = local_cc(mtf_lowpass(pan, spec), interpolate_band(band_lr, spec.ratio), 6 * cfg.sigma)
    return np.clip(rho, 0.0, 1.0)


def spatial_loss(fused: np.ndarray, pan: np.ndarray, rho_max: np.ndarray, sigma: int):
    """Mean |rho_max - local_cc(pan, fused)| and its gradient w.r.t. fused.

    The gradient is propagated analytically through the windowed mean,
    variance and covariance; flat windows (variance below VAR_EPS) and
    windows where the [-1, 1] clamp binds contribute zero gradient.
    """
    fused = np.asarray(fused, dtype=np.float64)
    pan = np.asarray(pan, dtype=np.float64)
    rho_max = np.asarray(rho_max, dtype=np.float64)
    if fused.shape != pan.shape or fused.shape != rho_max.shape:
        raise ValueError(f"shape mismatch: fused {fused.shape}, pan {pan.shape}, rho_max {rho_max.shape}")
    ep = window_mean(pan, sigma)
    vp = np.maximum(window_mean(pan * pan, sigma) - ep * ep, 0.0)
    ef = window_mean(fused, sigma)
    vf = window_mean(fused * fused, sigma) - ef * ef
    cov = window_mean(pan * fused, sigma) - ep * ef

    valid = (vp > VAR_EPS) & (vf > VAR_EPS)
    vp_s = np.where(valid, vp, 1.0)
    vf_s = np.where(valid, vf, 1.0)
    denom = np.sqrt(vp_s * vf_s)
    raw = np.where(valid, cov / denom, 0.0)
    rho = np.clip(raw, -1.0, 1.0)
    value = float(np.abs(rho_max - rho).mean())

    g = -np.sign(rho_max - rho) / rho.size
    g = np.where(valid & (np.abs(raw) <= 1.0), g, 0.0)
    d_cov = g / denom
    d_vf = g * (-raw) / (2.0 * vf_s)
    d_ef = -ep * d_cov - 2.0 * ef * d_vf
    grad = (
        window_mean_adjoint(d_ef, sigma)
        + 2.0 * fused * window_mean_adjoint(d_vf, sigma)
        + pan * window_mean_adjoint(d_cov, sigma)
    )
    return value, grad


def combined_loss(
    fused: np.ndarray,
    band_lr: np.ndarray,
    pan: np.ndarray,
    wavelength_nm: float,
    cfg: LossConfig | None = None,
    spec: MtfFilterSpec | None = None,
    dec: DecimationSpec | None = None,
    rho_max: np.ndarray | None = None,
    iteration: int = 0,
):
    """Full tuning loss; returns (LossReport, gradient w.r.t. fused).

    ``rho_max`` may be precomputed once per band (it depends only on the
    panchromatic image and the input band) and passed in to skip the
    estimation on every iteration.
    """
    cfg = cfg or LossConfig()
    spec = spec or MtfFilterSpec()
    dec = dec or DecimationSpec.for_ratio(spec.ratio)
    if rho_max is None:
        rho_max = rho_max_map(pan, band_lr, cfg, spec)
    beta = beta_for_wavelength(wavelength_nm, cfg)
    l_spec, g_spec = spectral_loss(fused, band_lr, spec, dec)
    l_spat, g_spat = spatial_loss(fused, pan, rho_max, cfg.sigma)
    report = LossReport(
        l_spectral=l_spec,
        l_spatial=l_spat,
        l_total=l_spec + beta * l_spat,
        beta=beta,
        iteration=iteration,
    )
    return report, g_spec + beta * g_spat
