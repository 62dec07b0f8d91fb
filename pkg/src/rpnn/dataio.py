"""Bit-exact datacube/PAN container, radiometric normalization and config files.

RPNC container layout (little-endian):

  offset  size  field
  0       4     magic "RPNC"
  4       4     version (uint32, currently 1)
  8       4     W  (uint32, samples per row)
  12      4     H  (uint32, rows per band)
  16      4     B  (uint32, band count)
  20      4     R  (uint32, nominal resolution ratio of the companion pair)
  24      8     scale (float64, radiometric normalization divisor, 1.0 = raw)
  32      32    reserved (zeros)
  64      4*B   center wavelengths [nm] (float32)
  ...     4*B*H*W  samples, float32, band-sequential, row-major per band

A panchromatic image is stored as a B=1 cube.  Values are float32 on disk
and float64 in memory.  Bands are re-sorted to ascending wavelength on read
and the applied permutation is recorded on the cube.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

MAGIC = b"RPNC"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIId32x")
assert _HEADER.size == 64

PAN_NOMINAL_WAVELENGTH = 550.0
NORMALIZE_PERCENTILE = 99.9
SOFT_MAX_NORMALIZED = 1.5


@dataclass
class DataCube:
    """Hyperspectral cube: (B, H, W) values with ascending center wavelengths."""

    wavelengths: np.ndarray
    values: np.ndarray
    scale: float = 1.0
    ratio: int = 1
    band_permutation: np.ndarray | None = None  # disk order -> memory order

    def __post_init__(self):
        self.wavelengths = np.asarray(self.wavelengths, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise ValueError(f"cube values must be 3-D (B,H,W), got shape {self.values.shape}")
        if self.wavelengths.ndim != 1 or self.wavelengths.size != self.values.shape[0]:
            raise ValueError(
                f"wavelength count {self.wavelengths.size} does not match {self.values.shape[0]} bands"
            )
        d = np.diff(self.wavelengths)
        if np.any(d <= 0):
            raise ValueError("wavelengths must be strictly increasing (duplicates are not allowed)")
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass
class PanImage:
    """Single-band panchromatic image at ratio x the companion cube's size."""

    values: np.ndarray
    scale: float = 1.0
    ratio: int = 1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"pan values must be 2-D, got shape {self.values.shape}")
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def validate_pair(cube: DataCube, pan: PanImage, ratio: int) -> None:
    """Reject cube/PAN pairs whose dimension ratio is not exactly `ratio`."""
    if pan.height != ratio * cube.height or pan.width != ratio * cube.width:
        raise ValueError(
            f"pan {pan.height}x{pan.width} is not {ratio}x the cube {cube.height}x{cube.width}"
        )


def write_cube(cube: DataCube, path) -> None:
    """Write a cube in memory (ascending-wavelength) order."""
    header = _HEADER.pack(
        MAGIC, FORMAT_VERSION, cube.width, cube.height, cube.bands, cube.ratio, cube.scale
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(cube.wavelengths, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(cube.values, dtype="<f4").tobytes())


def read_cube(path) -> DataCube:
    """Read an RPNC file; bands come back sorted by ascending wavelength."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: file too short for a header ({len(raw)} bytes)")
    magic, version, w, h, b, ratio, scale = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    if w < 1 or h < 1 or b < 1:
        raise ValueError(f"{path}: invalid dimensions W={w} H={h} B={b}")
    expected = _HEADER.size + 4 * b + 4 * b * h * w
    if len(raw) != expected:
        raise ValueError(
            f"{path}: header declares {b} bands of {h}x{w} ({expected} bytes), file holds {len(raw)} bytes"
        )
    wavelengths = np.frombuffer(raw, dtype="<f4", count=b, offset=_HEADER.size).astype(np.float64)
    values = (
        np.frombuffer(raw, dtype="<f4", count=b * h * w, offset=_HEADER.size + 4 * b)
        .astype(np.float64)
        .reshape(b, h, w)
    )
    perm = np.argsort(wavelengths, kind="stable")
    if np.any(np.diff(wavelengths[perm]) <= 0):
        raise ValueError(f"{path}: duplicate wavelengths are not allowed")
    if not np.array_equal(perm, np.arange(b)):
        log.info("%s: bands unsorted on disk, applying permutation %s", path, perm.tolist())
        wavelengths = wavelengths[perm]
        values = values[perm]
    return DataCube(wavelengths, values, scale=scale, ratio=ratio, band_permutation=perm)


def write_pan(pan: PanImage, path) -> None:
    """Store a panchromatic image as a one-band cube."""
    cube = DataCube(
        np.array([PAN_NOMINAL_WAVELENGTH]),
        pan.values[None, :, :],
        scale=pan.scale,
        ratio=pan.ratio,
    )
    write_cube(cube, path)


def read_pan(path) -> PanImage:
    cube = read_cube(path)
    if cube.bands != 1:
        raise ValueError(f"{path}: expected a single-band panchromatic file, found {cube.bands} bands")
    return PanImage(cube.values[0], scale=cube.scale, ratio=cube.ratio)


def normalize_pair(cube: DataCube, pan: PanImage):
    """Divide both images by a shared robust scale; returns (cube, pan, scale).

    The scale is the larger of the two 99.9th percentiles, which ignores hot
    pixels.  Multiplying the returned values by the scale restores the
    originals exactly (in float64; within 1 ULP after float32 storage).
    """
    s = float(
        max(
            np.percentile(cube.values, NORMALIZE_PERCENTILE),
            np.percentile(pan.values, NORMALIZE_PERCENTILE),
        )
    )
    if not np.isfinite(s) or s <= 0.0:
        raise ValueError(f"cannot normalize: percentile scale is {s} (all-zero or invalid input)")
    cube_n = DataCube(
        cube.wavelengths.copy(),
        cube.values / s,
        scale=s,
        ratio=cube.ratio,
        band_permutation=cube.band_permutation,
    )
    pan_n = PanImage(pan.values / s, scale=s, ratio=pan.ratio)
    peak = max(cube_n.values.max(), pan_n.values.max())
    if peak > SOFT_MAX_NORMALIZED:
        log.warning("normalized values reach %.3f (> %.1f); hot pixels beyond the percentile scale", peak, SOFT_MAX_NORMALIZED)
    return cube_n, pan_n, s


def denormalize(values: np.ndarray, scale: float) -> np.ndarray:
    return values * scale


# ---------------------------------------------------------------------------
# flat key-value run-configuration files


def read_config(path) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line.rstrip()!r}")
            key, value = stripped.split("=", 1)
            key = key.strip()
            if not key:
                raise ValueError(f"{path}:{lineno}: empty key")
            out[key] = value.strip()
    return out


def write_config(cfg: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in cfg:
            fh.write(f"{key} = {cfg[key]}\n")
