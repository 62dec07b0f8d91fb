"""Tests for interpolation, MTF filtering, decimation and local statistics."""

import numpy as np
import pytest

from rpnn.imaging import (
    DecimationSpec,
    MtfFilterSpec,
    degrade,
    degrade_adjoint,
    interpolate_band,
    local_cc,
    mtf_lowpass,
    mtf_lowpass_adjoint,
    window_mean,
    window_mean_adjoint,
)


def smooth_band(seed, n, blur=2.0):
    """Band-limited positive test image: wrap-blurred white noise in [0.2, 0.8]."""
    rng = np.random.default_rng(seed)
    f = rng.random((n, n))
    taps = np.exp(-0.5 * (np.arange(-12, 13) / blur) ** 2)
    taps /= taps.sum()
    from numpy.lib.stride_tricks import sliding_window_view

    fp = np.pad(f, 12, mode="wrap")
    f = sliding_window_view(fp, 25, axis=0) @ taps
    f = sliding_window_view(f, 25, axis=1) @ taps
    return 0.2 + 0.6 * (f - f.min()) / (f.max() - f.min())


class TestFilterSpec:
    def test_sigma_formula(self):
        spec = MtfFilterSpec(ratio=6, nyquist_gain=0.3)
        assert spec.sigma == pytest.approx((6 / np.pi) * np.sqrt(-2 * np.log(0.3)))
        assert spec.sigma > 0

    def test_kernel_normalized(self):
        assert MtfFilterSpec().kernel().sum() == pytest.approx(1.0, abs=1e-12)

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            MtfFilterSpec(ratio=1)
        with pytest.raises(ValueError):
            MtfFilterSpec(nyquist_gain=1.5)
        with pytest.raises(ValueError):
            DecimationSpec(step=6, offset=(6, 0))


class TestInterpolate:
    def test_constant_preserved(self):
        out = interpolate_band(np.full((5, 7), 3.25), 6)
        assert out.shape == (30, 42)
        assert np.abs(out - 3.25).max() < 1e-12

    def test_linear_ramp_at_mapped_positions(self):
        ramp = np.tile(np.arange(16.0), (16, 1))
        up = interpolate_band(ramp, 6)
        n = np.arange(16)
        assert np.abs(up[np.ix_(6 * n + 3, 6 * n + 3)] - ramp).max() < 1e-9

    def test_too_small_rejected(self):
        with pytest.raises(ValueError, match="too small"):
            interpolate_band(np.zeros((3, 8)), 6)

    def test_overshoot_bounded_on_smooth_data(self):
        band = smooth_band(0, 16)
        up = interpolate_band(band, 6)
        rng_span = band.max() - band.min()
        assert up.min() >= band.min() - 0.1 * rng_span
        assert up.max() <= band.max() + 0.1 * rng_span

    def test_round_trip_gaussian_bump(self):
        yy, xx = np.mgrid[0:16, 0:16]
        bump = 0.2 + 0.8 * np.exp(-(((yy - 7.5) ** 2 + (xx - 7.5) ** 2) / (2 * 4.0 ** 2)))
        rt = degrade(interpolate_band(bump, 6))
        err = np.abs(rt - bump).mean() / np.abs(bump).mean()
        assert err < 0.02


class TestLowpass:
    def test_constant_unchanged(self):
        img = np.full((24, 24), 1.3)
        out = mtf_lowpass(img)
        assert np.abs(out - 1.3).max() < 1e-12
        assert abs(out.mean() - img.mean()) < 1e-9

    def test_impulse_emits_kernel_with_correct_nyquist_gain(self):
        spec = MtfFilterSpec()
        n = 101
        img = np.zeros((n, n))
        img[n // 2, n // 2] = 1.0
        out = mtf_lowpass(img, spec)
        k1 = spec.kernel()
        hw = spec.half_width
        row = out[n // 2, n // 2 - hw:n // 2 + hw + 1]
        assert np.allclose(row, k1 * k1[hw], atol=1e-12)
        # discrete frequency response of the emitted 1-D kernel at 1/(2R)
        t = np.arange(-hw, hw + 1)
        gain = float((k1 * np.cos(2 * np.pi * t / (2 * spec.ratio))).sum())
        assert abs(gain - spec.nyquist_gain) < 1e-3

    def test_noise_variance_contracts(self):
        x = np.random.default_rng(1).standard_normal((60, 60))
        assert mtf_lowpass(x).var() < x.var()

    def test_commutes_with_constant_shift(self):
        x = smooth_band(2, 30)
        assert np.allclose(mtf_lowpass(x + 2.5), mtf_lowpass(x) + 2.5, atol=1e-10)

    def test_adjoint_exact(self):
        rng = np.random.default_rng(3)
        x = rng.random((25, 31))
        g = rng.random((25, 31))
        lhs = (mtf_lowpass(x) * g).sum()
        rhs = (x * mtf_lowpass_adjoint(g)).sum()
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestDegrade:
    def test_constant(self):
        out = degrade(np.full((36, 36), 0.7))
        assert out.shape == (6, 6)
        assert np.abs(out - 0.7).max() < 1e-12

    def test_round_trip_smooth(self):
        band = smooth_band(4, 20)
        rt = degrade(interpolate_band(band, 6))
        assert np.abs(rt - band).mean() / np.abs(band).mean() < 0.02

    def test_impulse_train_reads_kernel(self):
        spec = MtfFilterSpec()
        dec = DecimationSpec.for_ratio(6)
        n = 96
        img = np.zeros((n, n))
        img[45, 45] = 1.0  # on the sampled phase (3 + 6*7 = 45), away from edges
        out = degrade(img, spec, dec)
        k1 = spec.kernel()
        hw = spec.half_width
        assert out[7, 7] == pytest.approx(k1[hw] ** 2, abs=1e-15)
        assert out[7, 8] == pytest.approx(k1[hw] * k1[hw + 6], abs=1e-15)
        assert out[6, 7] == pytest.approx(k1[hw] * k1[hw - 6], abs=1e-15)

    def test_incompatible_dims_rejected(self):
        with pytest.raises(ValueError, match="not divisible"):
            degrade(np.zeros((37, 36)))

    def test_commutes_with_constant_shift(self):
        x = smooth_band(5, 24)
        up = interpolate_band(x, 6)
        assert np.allclose(degrade(up + 1.1), degrade(up) + 1.1, atol=1e-10)

    def test_adjoint_exact(self):
        rng = np.random.default_rng(6)
        x = rng.random((30, 30))
        g = rng.random((5, 5))
        lhs = (degrade(x) * g).sum()
        rhs = (x * degrade_adjoint(g, (30, 30))).sum()
        assert lhs == pytest.approx(rhs, rel=1e-12)


def local_cc_reference(x, y, size):
    """Direct per-window covariance loop (replicate-padded windows)."""
    h, w = x.shape
    lo = size // 2
    hi = size - 1 - lo
    xp = np.pad(x, ((lo, hi), (lo, hi)), mode="edge")
    yp = np.pad(y, ((lo, hi), (lo, hi)), mode="edge")
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            wx = xp[i:i + size, j:j + size]
            wy = yp[i:i + size, j:j + size]
            cov = np.mean(wx * wy) - wx.mean() * wy.mean()
            vx = np.mean(wx * wx) - wx.mean() ** 2
            vy = np.mean(wy * wy) - wy.mean() ** 2
            if vx <= 1e-12 or vy <= 1e-12:
                out[i, j] = 0.0
            else:
                out[i, j] = np.clip(cov / np.sqrt(vx * vy), -1, 1)
    return out


class TestLocalCC:
    def test_self_correlation_is_one(self):
        x = np.random.default_rng(7).random((12, 12))
        assert np.abs(local_cc(x, x, 6) - 1.0).max() < 1e-9

    def test_affine_anticorrelation(self):
        x = np.random.default_rng(8).random((12, 12))
        assert np.abs(local_cc(x, -2.0 * x + 7.0, 6) + 1.0).max() < 1e-9

    def test_matches_window_loop_oracle(self):
        rng = np.random.default_rng(9)
        x = rng.random((12, 12))
        y = rng.random((12, 12))
        assert np.abs(local_cc(x, y, 6) - local_cc_reference(x, y, 6)).max() < 1e-12

    def test_symmetric_and_affine_invariant(self):
        rng = np.random.default_rng(10)
        x = rng.random((15, 11))
        y = rng.random((15, 11))
        assert np.abs(local_cc(x, y, 5) - local_cc(y, x, 5)).max() < 1e-12
        assert np.abs(local_cc(3.0 * x + 0.5, y, 5) - local_cc(x, y, 5)).max() < 1e-9

    def test_flat_windows_yield_zero(self):
        x = np.ones((10, 10))
        y = np.random.default_rng(11).random((10, 10))
        assert not local_cc(x, y, 4).any()

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape mismatch"):
            local_cc(np.zeros((4, 4)), np.zeros((4, 5)), 2)

    def test_finite_outputs(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((20, 20))
        y = np.zeros((20, 20))
        y[:10] = x[:10]
        out = local_cc(x, y, 6)
        assert np.isfinite(out).all()
        assert out.max() <= 1.0 and out.min() >= -1.0


class TestWindowMean:
    def test_matches_direct_mean(self):
        rng = np.random.default_rng(13)
        x = rng.random((9, 14))
        for size in (2, 3, 6):
            lo = size // 2
            hi = size - 1 - lo
            xp = np.pad(x, ((lo, hi), (lo, hi)), mode="edge")
            ref = np.array(
                [[xp[i:i + size, j:j + size].mean() for j in range(14)] for i in range(9)]
            )
            assert np.abs(window_mean(x, size) - ref).max() < 1e-12

    def test_adjoint_exact(self):
        rng = np.random.default_rng(14)
        x = rng.random((17, 13))
        g = rng.random((17, 13))
        for size in (2, 6, 36):
            lhs = (window_mean(x, size) * g).sum()
            rhs = (x * window_mean_adjoint(g, size)).sum()
            assert lhs == pytest.approx(rhs, rel=1e-12)
