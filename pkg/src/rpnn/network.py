"""Single-band pansharpening network: three convolutions with a global residual skip.

Topology (fixed): 2 -> 48 -> 32 -> 1 channels with 7x7 / 5x5 / 3x3 kernels,
ReLU after the first two layers, and the interpolated input band added to
the third layer's output.  Input channel order is (pan, band_interp) and
must match between pretraining and tuning.

Checkpoint format: 16-byte header (magic b"RPNN", version uint32, parameter
count uint32, reserved uint32, little-endian) followed by the parameters as
little-endian float32, layers in order, kernel then bias.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .nn import (
    ConvLayer,
    conv2d_backward,
    conv2d_forward,
    conv2d_forward_col,
    conv2d_grad_kernel_col,
    im2col,
    relu,
    relu_backward,
    replicate_pad,
)

LAYER_SHAPES = ((48, 2, 7), (32, 48, 5), (1, 32, 3))
TOTAL_PARAMS = sum(o * i * k * k + o for o, i, k in LAYER_SHAPES)  # 43473

CHECKPOINT_MAGIC = b"RPNN"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIII")


@dataclass
class NetParams:
    """The three convolutional layers' weights and biases."""

    layer1: ConvLayer
    layer2: ConvLayer
    layer3: ConvLayer

    def __post_init__(self):
        for layer, (o, i, k) in zip(self.layers(), LAYER_SHAPES):
            if layer.kernel.shape != (o, i, k, k):
                raise ValueError(f"layer kernel shape {layer.kernel.shape} does not match required {(o, i, k, k)}")

    def layers(self) -> tuple[ConvLayer, ConvLayer, ConvLayer]:
        return (self.layer1, self.layer2, self.layer3)

    def num_params(self) -> int:
        return sum(layer.num_params() for layer in self.layers())

    def to_list(self) -> list[np.ndarray]:
        """Flat parameter list [k1, b1, k2, b2, k3, b3] (views, not copies)."""
        out = []
        for layer in self.layers():
            out.append(layer.kernel)
            out.append(layer.bias)
        return out

    @classmethod
    def from_list(cls, arrays: list[np.ndarray]) -> "NetParams":
        return cls(
            ConvLayer(arrays[0], arrays[1]),
            ConvLayer(arrays[2], arrays[3]),
            ConvLayer(arrays[4], arrays[5]),
        )

    def copy(self) -> "NetParams":
        return NetParams.from_list([a.copy() for a in self.to_list()])


def init_params(seed: int) -> NetParams:
    """He-uniform kernels (bound sqrt(6/fan_in)), zero biases; deterministic per seed."""
    rng = np.random.default_rng(seed)
    layers = []
    for o, i, k in LAYER_SHAPES:
        bound = np.sqrt(6.0 / (i * k * k))
        kernel = rng.uniform(-bound, bound, size=(o, i, k, k))
        layers.append(ConvLayer(kernel, np.zeros(o)))
    return NetParams(*layers)


class NetWorkspace:
    """Reusable buffers for repeated forward/backward passes on one image size.

    Single-owner: do not share one workspace across threads.  The layer-1
    im2col matrix is cached and rebuilt only when the input pair changes,
    which makes tuning iterations on a fixed image pair cheap.
    """

    def __init__(self):
        self._bufs: dict[str, np.ndarray] = {}
        self._col1_key = None

    def buf(self, name: str, shape: tuple[int, ...]) -> np.ndarray:
        b = self._bufs.get(name)
        if b is None or b.shape != shape:
            b = np.empty(shape)
            self._bufs[name] = b
        return b

    def input_col(self, x0: np.ndarray, input_key=None) -> np.ndarray:
        """im2col of the 2-channel input.

        When ``input_key`` is a caller-supplied label for a fixed input pair,
        the unfolded matrix is rebuilt only when the label changes; with
        input_key=None it is rebuilt every call.
        """
        k = LAYER_SHAPES[0][2]
        cin, h, w = x0.shape
        col = self.buf("col1", (cin * k * k, h * w))
        key = None if input_key is None else (input_key, cin, h, w)
        if key is None or self._col1_key != key:
            im2col(x0, k, out=col)
            self._col1_key = key
        return col


def _stack_inputs(pan: np.ndarray, band_interp: np.ndarray) -> np.ndarray:
    pan = np.asarray(pan, dtype=np.float64)
    band_interp = np.asarray(band_interp, dtype=np.float64)
    if pan.shape != band_interp.shape:
        raise ValueError(f"pan {pan.shape} and interpolated band {band_interp.shape} must have equal shape")
    return np.stack([pan, band_interp])


def forward(pan: np.ndarray, band_interp: np.ndarray, params: NetParams, work: NetWorkspace | None = None) -> np.ndarray:
    """Fused band = conv3(relu(conv2(relu(conv1([pan, band_interp]))))) + band_interp."""
    fused, _ = forward_with_cache(pan, band_interp, params, work=work)
    return fused


def forward_with_cache(
    pan: np.ndarray,
    band_interp: np.ndarray,
    params: NetParams,
    work: NetWorkspace | None = None,
    x0: np.ndarray | None = None,
    input_key=None,
):
    """Forward pass keeping the tensors needed by backward().

    ``x0`` may carry a prestacked (2, H, W) input to avoid restacking; a
    workspace makes repeated calls allocation-free.  The cache (and the
    workspace buffers backing it) is invalidated by the next forward pass on
    the same workspace, so run backward() before reusing it.
    """
    if x0 is None:
        x0 = _stack_inputs(pan, band_interp)
    band_interp = np.asarray(band_interp, dtype=np.float64)
    h, w = x0.shape[1], x0.shape[2]
    l1, l2, l3 = params.layers()
    if work is None:
        a1 = conv2d_forward(x0, l1)
        z1 = relu(a1)
        z1p = replicate_pad(z1, l2.ksize // 2)
        a2 = conv2d_forward(z1, l2, xp=z1p)
        z2 = relu(a2)
        z2p = replicate_pad(z2, l3.ksize // 2)
        a3 = conv2d_forward(z2, l3, xp=z2p)
        col1 = None
    else:
        col1 = work.input_col(x0, input_key)
        a1 = conv2d_forward_col(col1, l1, h, w, out=work.buf("a1", (l1.out_ch, h, w)))
        z1 = relu(a1, out=work.buf("z1", a1.shape))
        p2 = l2.ksize // 2
        z1p = replicate_pad(z1, p2, out=work.buf("z1p", (l2.in_ch, h + 2 * p2, w + 2 * p2)))
        a2 = conv2d_forward(z1, l2, xp=z1p, out=work.buf("a2", (l2.out_ch, h, w)))
        z2 = relu(a2, out=work.buf("z2", a2.shape))
        p3 = l3.ksize // 2
        z2p = replicate_pad(z2, p3, out=work.buf("z2p", (l3.in_ch, h + 2 * p3, w + 2 * p3)))
        a3 = conv2d_forward(z2, l3, xp=z2p, out=work.buf("a3", (l3.out_ch, h, w)))
    fused = a3[0] + band_interp
    return fused, (x0, col1, a1, z1, z1p, a2, z2, z2p)


def backward(grad_fused: np.ndarray, cache, params: NetParams, work: NetWorkspace | None = None) -> list[np.ndarray]:
    """Gradients of a scalar loss w.r.t. all parameters, given dL/dfused.

    Returns [gk1, gb1, gk2, gb2, gk3, gb3] matching NetParams.to_list().
    """
    x0, col1, a1, z1, z1p, a2, z2, z2p = cache
    l1, l2, l3 = params.layers()
    g3 = np.asarray(grad_fused, dtype=np.float64)[None, :, :]
    h, w = g3.shape[1], g3.shape[2]
    gxp3 = work.buf("gxp3", (l3.in_ch, h + 2 * (l3.ksize // 2), w + 2 * (l3.ksize // 2))) if work else None
    gz2, gk3, gb3 = conv2d_backward(z2, l3, g3, xp=z2p, gxp_buf=gxp3)
    ga2 = relu_backward(gz2, a2)
    gxp2 = work.buf("gxp2", (l2.in_ch, h + 2 * (l2.ksize // 2), w + 2 * (l2.ksize // 2))) if work else None
    gz1, gk2, gb2 = conv2d_backward(z1, l2, ga2, xp=z1p, gxp_buf=gxp2)
    ga1 = relu_backward(gz1, a1)
    if col1 is not None:
        gk1, gb1 = conv2d_grad_kernel_col(col1, ga1, l1)
    else:
        _, gk1, gb1 = conv2d_backward(x0, l1, ga1, need_grad_input=False)
    return [gk1, gb1, gk2, gb2, gk3, gb3]


def save_params(params: NetParams, path) -> None:
    """Write a checkpoint (see module docstring for the exact layout)."""
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f4").tobytes() for a in params.to_list()
    )
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, params.num_params(), 0))
        fh.write(payload)


def load_params(path) -> NetParams:
    """Read a checkpoint written by save_params, validating header and size."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"checkpoint too short: {len(raw)} bytes")
    magic, version, count, _ = _HEADER.unpack_from(raw)
    if magic != CHECKPOINT_MAGIC:
        raise ValueError(f"bad checkpoint magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    if count != TOTAL_PARAMS:
        raise ValueError(f"checkpoint declares {count} parameters, expected {TOTAL_PARAMS}")
    expected_bytes = _HEADER.size + 4 * TOTAL_PARAMS
    if len(raw) != expected_bytes:
        raise ValueError(f"checkpoint size {len(raw)} bytes, expected {expected_bytes}")
    flat = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).astype(np.float64)
    arrays = []
    pos = 0
    for o, i, k in LAYER_SHAPES:
        n = o * i * k * k
        arrays.append(flat[pos:pos + n].reshape(o, i, k, k))
        pos += n
        arrays.append(flat[pos:pos + o])
        pos += o
    return NetParams.from_list(arrays)
