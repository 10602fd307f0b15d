"""Dense float maps, the binary ``.pdt`` tensor format and bilinear sampling.

Maps are plain ``numpy.ndarray`` objects of dtype float64 laid out channel
major (C x H x W). On disk values are stored as little-endian float32.
"""
import struct

import numpy as np

MAGIC = b"PDTENSR\x00"
MAX_NDIM = 8

Tensor = np.ndarray


class TensorFormatError(ValueError):
    """Raised when a tensor file does not follow the binary layout."""


def as_tensor(values, shape=None):
    """Return a read-only float64 copy of ``values`` (optionally reshaped)."""
    arr = np.array(values, dtype=np.float64)
    if shape is not None:
        arr = arr.reshape(shape)
    arr.setflags(write=False)
    return arr


def encode_tensor(t):
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0 or t.ndim > MAX_NDIM:
        raise TensorFormatError(f"ndim must be in [1, {MAX_NDIM}], got {t.ndim}")
    header = MAGIC + struct.pack("<I", t.ndim) + struct.pack(f"<{t.ndim}I", *t.shape)
    payload = np.ascontiguousarray(t, dtype="<f4").tobytes()
    return header + payload


def decode_tensor(buf):
    if len(buf) < len(MAGIC) + 4 or buf[: len(MAGIC)] != MAGIC:
        raise TensorFormatError("bad magic")
    pos = len(MAGIC)
    (ndim,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    if ndim == 0 or ndim > MAX_NDIM:
        raise TensorFormatError(f"unsupported dimension count {ndim}")
    if len(buf) < pos + 4 * ndim:
        raise TensorFormatError("truncated header")
    shape = struct.unpack_from(f"<{ndim}I", buf, pos)
    pos += 4 * ndim
    count = int(np.prod(shape))
    if len(buf) != pos + 4 * count:
        raise TensorFormatError(
            f"payload size mismatch: expected {4 * count} bytes, got {len(buf) - pos}"
        )
    data = np.frombuffer(buf, dtype="<f4", count=count, offset=pos)
    return as_tensor(data.astype(np.float64), shape)


def write_tensor(t, path):
    """Write ``t`` to ``path``; values are rounded to the nearest float32."""
    with open(path, "wb") as f:
        f.write(encode_tensor(t))


def read_tensor(path):
    with open(path, "rb") as f:
        return decode_tensor(f.read())


def bilinear_sample(fmap, x, y):
    """Sample every channel of a C x H x W map at real pixel coordinates.

    ``x`` and ``y`` may be scalars or equally shaped arrays; the result has
    shape ``(C,) + x.shape``. Pixels outside the map read as zero.
    """
    fmap = np.asarray(fmap, dtype=np.float64)
    _, h, w = fmap.shape
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = x - x0
    fy = y - y0
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)

    out = np.zeros((fmap.shape[0],) + x.shape)
    for dy, wy in ((0, 1.0 - fy), (1, fy)):
        for dx, wx in ((0, 1.0 - fx), (1, fx)):
            xi = x0 + dx
            yi = y0 + dy
            inside = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            vals = fmap[:, np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
            out += np.where(inside, wx * wy, 0.0) * vals
    return out
