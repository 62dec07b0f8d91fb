"""Tests for the three-layer residual network and its checkpoint format."""

import numpy as np
import pytest

from rpnn.network import (
    LAYER_SHAPES,
    TOTAL_PARAMS,
    NetParams,
    NetWorkspace,
    backward,
    forward,
    forward_with_cache,
    init_params,
    load_params,
    save_params,
)


def zero_params():
    return NetParams.from_list([np.zeros_like(a) for a in init_params(0).to_list()])


class TestTopology:
    def test_parameter_count_by_enumeration(self):
        params = init_params(0)
        counted = sum(a.size for a in params.to_list())
        assert counted == TOTAL_PARAMS == 43473
        # per-layer arithmetic: (2*49+1)*48 + (48*25+1)*32 + (32*9+1)*1
        assert (2 * 49 + 1) * 48 == 4752
        assert (48 * 25 + 1) * 32 == 38432
        assert (32 * 9 + 1) * 1 == 289
        assert 4752 + 38432 + 289 == TOTAL_PARAMS

    def test_layer_shapes(self):
        params = init_params(1)
        assert params.layer1.kernel.shape == (48, 2, 7, 7)
        assert params.layer2.kernel.shape == (32, 48, 5, 5)
        assert params.layer3.kernel.shape == (1, 32, 3, 3)

    def test_wrong_shape_rejected(self):
        good = init_params(2).to_list()
        bad = [a.copy() for a in good]
        bad[0] = np.zeros((48, 2, 5, 5))
        with pytest.raises(ValueError, match="does not match"):
            NetParams.from_list(bad)


class TestForward:
    def test_residual_identity_with_zero_params(self):
        rng = np.random.default_rng(3)
        pan = rng.random((18, 18))
        bi = rng.random((18, 18))
        assert np.array_equal(forward(pan, bi, zero_params()), bi)

    def test_output_shape_matches_input(self):
        rng = np.random.default_rng(4)
        params = init_params(4)
        for n in (12, 17):
            out = forward(rng.random((n, n)), rng.random((n, n)), params)
            assert out.shape == (n, n)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="equal shape"):
            forward(np.zeros((12, 12)), np.zeros((12, 13)), init_params(0))

    def test_zero_input_zero_bias_gives_zero(self):
        params = init_params(5)  # biases are zero at initialization
        out = forward(np.zeros((12, 12)), np.zeros((12, 12)), params)
        assert np.abs(out).max() == 0.0

    def test_workspace_path_matches_plain_path(self):
        rng = np.random.default_rng(6)
        params = init_params(6)
        pan = rng.random((15, 15))
        bi = rng.random((15, 15))
        plain = forward(pan, bi, params)
        work = NetWorkspace()
        ws = forward(pan, bi, params, work=work)
        assert np.abs(plain - ws).max() < 1e-12


class TestGradients:
    def test_jacobian_vector_products_match_finite_differences(self):
        # the network is piecewise linear in its ReLUs: a finite-difference
        # interval that straddles a kink estimates no derivative, so
        # directions whose +-h activation masks differ are redrawn
        rng = np.random.default_rng(7)
        params = init_params(7)
        pan = rng.random((24, 24))
        bi = rng.random((24, 24))
        fused, cache = forward_with_cache(pan, bi, params)
        g = rng.standard_normal(fused.shape)
        grads = backward(g, cache, params)
        plist = params.to_list()
        h = 1e-6

        def masks(eps, dirs):
            shifted = NetParams.from_list([a + eps * d for a, d in zip(plist, dirs)])
            val, (_, _, a1, _, _, a2, _, _) = forward_with_cache(pan, bi, shifted)
            return float((val * g).sum()), (a1 > 0, a2 > 0)

        checked = 0
        attempts = 0
        while checked < 5 and attempts < 50:
            attempts += 1
            dirs = [rng.standard_normal(a.shape) for a in plist]
            norm = np.sqrt(sum((d * d).sum() for d in dirs))
            dirs = [d / norm for d in dirs]
            up, mu = masks(h, dirs)
            dn, md = masks(-h, dirs)
            if not (np.array_equal(mu[0], md[0]) and np.array_equal(mu[1], md[1])):
                continue
            fd = (up - dn) / (2 * h)
            an = sum(float((gr * d).sum()) for gr, d in zip(grads, dirs))
            assert abs(fd - an) / max(abs(fd), 1e-12) < 1e-5
            checked += 1
        assert checked == 5

    def test_workspace_backward_matches_plain(self):
        rng = np.random.default_rng(8)
        params = init_params(8)
        pan = rng.random((20, 20))
        bi = rng.random((20, 20))
        g = rng.standard_normal((20, 20))
        _, cache = forward_with_cache(pan, bi, params)
        plain = backward(g, cache, params)
        work = NetWorkspace()
        _, cache_ws = forward_with_cache(pan, bi, params, work=work)
        ws = backward(g, cache_ws, params, work=work)
        for a, b in zip(plain, ws):
            assert np.abs(a - b).max() < 1e-10


class TestInit:
    def test_deterministic(self):
        a = init_params(123)
        b = init_params(123)
        for x, y in zip(a.to_list(), b.to_list()):
            assert np.array_equal(x, y)
        c = init_params(124)
        assert any(not np.array_equal(x, y) for x, y in zip(a.to_list(), c.to_list()))

    def test_he_uniform_bounds(self):
        params = init_params(9)
        for layer, (o, i, k) in zip(params.layers(), LAYER_SHAPES):
            bound = np.sqrt(6.0 / (i * k * k))
            assert np.abs(layer.kernel).max() <= bound
            assert not layer.bias.any()
        assert np.abs(params.layer1.kernel).max() <= np.sqrt(6.0 / 98)


class TestCheckpoint:
    def test_round_trip_is_float32_exact(self, tmp_path):
        params = init_params(10)
        path = tmp_path / "w.ckpt"
        save_params(params, path)
        loaded = load_params(path)
        for a, b in zip(params.to_list(), loaded.to_list()):
            assert np.array_equal(a.astype(np.float32).astype(np.float64), b)

    def test_header_layout(self, tmp_path):
        path = tmp_path / "w.ckpt"
        save_params(init_params(11), path)
        raw = path.read_bytes()
        assert raw[:4] == b"RPNN"
        assert int.from_bytes(raw[4:8], "little") == 1
        assert int.from_bytes(raw[8:12], "little") == TOTAL_PARAMS
        assert len(raw) == 16 + 4 * TOTAL_PARAMS

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "w.ckpt"
        save_params(init_params(12), path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="magic"):
            load_params(path)

    def test_truncated_rejected(self, tmp_path):
        path = tmp_path / "w.ckpt"
        save_params(init_params(13), path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="bytes"):
            load_params(path)

    def test_wrong_count_rejected(self, tmp_path):
        path = tmp_path / "w.ckpt"
        save_params(init_params(14), path)
        raw = bytearray(path.read_bytes())
        raw[8:12] = (7).to_bytes(4, "little")
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="parameters"):
            load_params(path)
