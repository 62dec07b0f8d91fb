"""Tests for the RPNC container, normalization and config-file parsing."""

import struct

import numpy as np
import pytest

from rpnn.dataio import (
    DataCube,
    PanImage,
    denormalize,
    normalize_pair,
    read_config,
    read_cube,
    read_pan,
    validate_pair,
    write_config,
    write_cube,
    write_pan,
)
from rpnn.imaging import local_cc


def random_cube(seed, b=3, h=4, w=5):
    rng = np.random.default_rng(seed)
    # float32-representable payload so disk round-trips are bitwise exact
    values = rng.random((b, h, w)).astype(np.float32).astype(np.float64)
    wavelengths = 400.0 + 10.0 * np.arange(b)
    return DataCube(wavelengths, values, scale=1.0, ratio=6)


class TestRoundTrip:
    def test_write_read_bitwise(self, tmp_path):
        cube = random_cube(0)
        path = tmp_path / "c.rpnc"
        write_cube(cube, path)
        loaded = read_cube(path)
        assert np.array_equal(loaded.values, cube.values)
        assert np.array_equal(loaded.wavelengths, cube.wavelengths)
        assert loaded.scale == cube.scale
        assert loaded.ratio == cube.ratio
        assert np.array_equal(loaded.band_permutation, np.arange(3))

    def test_pan_round_trip(self, tmp_path):
        pan = PanImage(np.random.default_rng(1).random((6, 8)).astype(np.float32).astype(np.float64), ratio=6)
        path = tmp_path / "p.rpnc"
        write_pan(pan, path)
        loaded = read_pan(path)
        assert np.array_equal(loaded.values, pan.values)

    def test_multiband_file_rejected_as_pan(self, tmp_path):
        path = tmp_path / "c.rpnc"
        write_cube(random_cube(2), path)
        with pytest.raises(ValueError, match="single-band"):
            read_pan(path)


class TestHeaderValidation:
    def test_bad_magic(self, tmp_path):
        path = tmp_path / "c.rpnc"
        write_cube(random_cube(3), path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"JUNK"
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="magic"):
            read_cube(path)

    def test_band_count_mismatch_names_byte_counts(self, tmp_path):
        cube = random_cube(4, b=4)
        path = tmp_path / "c.rpnc"
        write_cube(cube, path)
        raw = bytearray(path.read_bytes())
        raw[16:20] = (5).to_bytes(4, "little")  # header claims 5 bands, file holds 4
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError) as err:
            read_cube(path)
        msg = str(err.value)
        assert "bytes" in msg and "5" in msg

    def test_truncated_file(self, tmp_path):
        path = tmp_path / "c.rpnc"
        write_cube(random_cube(5), path)
        path.write_bytes(path.read_bytes()[:40])
        with pytest.raises(ValueError, match="short"):
            read_cube(path)

    def test_duplicate_wavelengths_rejected(self, tmp_path):
        path = tmp_path / "c.rpnc"
        write_cube(random_cube(6), path)
        raw = bytearray(path.read_bytes())
        lam = np.frombuffer(bytes(raw[64:64 + 12]), dtype="<f4").copy()
        lam[1] = lam[0]
        raw[64:64 + 12] = lam.tobytes()
        path.write_bytes(bytes(raw))
        with pytest.raises(ValueError, match="duplicate"):
            read_cube(path)


class TestWavelengthSorting:
    def test_unsorted_on_disk_sorted_in_memory(self, tmp_path):
        cube = random_cube(7)
        path = tmp_path / "c.rpnc"
        write_cube(cube, path)
        raw = bytearray(path.read_bytes())
        # swap wavelengths and planes of bands 0 and 2 on disk
        lam = np.frombuffer(bytes(raw[64:76]), dtype="<f4").copy()
        lam[[0, 2]] = lam[[2, 0]]
        raw[64:76] = lam.tobytes()
        plane = 4 * 4 * 5
        p0 = bytes(raw[76:76 + plane])
        p2 = bytes(raw[76 + 2 * plane:76 + 3 * plane])
        raw[76:76 + plane] = p2
        raw[76 + 2 * plane:76 + 3 * plane] = p0
        path.write_bytes(bytes(raw))
        loaded = read_cube(path)
        assert np.array_equal(loaded.wavelengths, cube.wavelengths)
        assert np.array_equal(loaded.values, cube.values)
        assert np.array_equal(loaded.band_permutation, [2, 1, 0])

    def test_constructor_rejects_nonincreasing(self):
        with pytest.raises(ValueError, match="strictly increasing"):
            DataCube(np.array([500.0, 400.0]), np.zeros((2, 2, 2)))


class TestGoldenFixture:
    def test_layout_is_byte_stable(self, tmp_path):
        # 1 band, 2x2, wavelength 500nm, scale 2.0, ratio 6, values 0..3
        header = struct.pack("<4sIIIIId32x", b"RPNC", 1, 2, 2, 1, 6, 2.0)
        payload = np.array([500.0], dtype="<f4").tobytes()
        payload += np.array([0.0, 1.0, 2.0, 3.0], dtype="<f4").tobytes()
        path = tmp_path / "golden.rpnc"
        path.write_bytes(header + payload)
        cube = read_cube(path)
        assert cube.bands == 1 and cube.height == 2 and cube.width == 2
        assert cube.scale == 2.0 and cube.ratio == 6
        assert np.array_equal(cube.values[0], [[0.0, 1.0], [2.0, 3.0]])
        # writer reproduces the identical bytes
        out = tmp_path / "rewrite.rpnc"
        write_cube(cube, out)
        assert out.read_bytes() == header + payload


class TestPairing:
    def test_ratio_mismatch_rejected(self):
        cube = random_cube(8, b=2, h=4, w=4)
        pan = PanImage(np.zeros((20, 24)))
        with pytest.raises(ValueError, match="not 6x"):
            validate_pair(cube, pan, 6)
        validate_pair(cube, PanImage(np.zeros((24, 24))), 6)


class TestNormalization:
    def test_max_rule(self):
        rng = np.random.default_rng(9)
        cube = DataCube([400.0, 410.0], rng.uniform(0, 4000, (2, 50, 50)), ratio=6)
        pan = PanImage(rng.uniform(0, 3000, (300, 300)), ratio=6)
        _cn, _pn, s = normalize_pair(cube, pan)
        assert s == pytest.approx(4000, rel=0.02)

    def test_round_trip_within_float32_ulp(self):
        rng = np.random.default_rng(10)
        values = rng.uniform(0, 4000, (2, 8, 8)).astype(np.float32).astype(np.float64)
        cube = DataCube([400.0, 410.0], values, ratio=6)
        pan = PanImage(rng.uniform(0, 3000, (48, 48)), ratio=6)
        cn, _pn, s = normalize_pair(cube, pan)
        restored = denormalize(cn.values, s).astype(np.float32)
        original = values.astype(np.float32)
        ulp = np.spacing(original)
        assert np.all(np.abs(restored - original) <= ulp)

    def test_all_zero_rejected(self):
        cube = DataCube([400.0], np.zeros((1, 4, 4)))
        pan = PanImage(np.zeros((24, 24)))
        with pytest.raises(ValueError, match="normalize"):
            normalize_pair(cube, pan)

    def test_local_cc_invariant_under_shared_scale(self):
        from rpnn.imaging import interpolate_band

        rng = np.random.default_rng(11)
        cube = DataCube([400.0], rng.uniform(0, 100, (1, 8, 8)), ratio=6)
        pan = PanImage(rng.uniform(0, 120, (48, 48)), ratio=6)
        cn, pn, s = normalize_pair(cube, pan)
        up = interpolate_band(cube.values[0], 6)
        upn = interpolate_band(cn.values[0], 6)
        before = local_cc(pan.values, up, 6)
        after = local_cc(pn.values, upn, 6)
        assert np.abs(before - after).max() < 1e-9

    def test_warns_on_hot_pixels(self, caplog):
        values = np.ones((1, 40, 40))
        values[0, 0, 0] = 1e6  # hot pixel beyond the percentile
        cube = DataCube([400.0], values)
        pan = PanImage(np.ones((240, 240)))
        with caplog.at_level("WARNING"):
            normalize_pair(cube, pan)
        assert any("hot pixels" in r.message for r in caplog.records)


class TestConfigFiles:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "run.cfg"
        write_config({"alpha": "1.5", "direction": "forward"}, path)
        assert read_config(path) == {"alpha": "1.5", "direction": "forward"}

    def test_comments_and_blanks(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("# comment\n\nalpha = 2.0  # inline\n lr=1e-4\n")
        assert read_config(path) == {"alpha": "2.0", "lr": "1e-4"}

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("alpha 1.5\n")
        with pytest.raises(ValueError, match="key = value"):
            read_config(path)
