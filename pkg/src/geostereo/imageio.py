"""PFM disparity files, 8-bit occlusion masks and RGB guidance images.

PFM layout: three ASCII header lines (``Pf``/``PF``, ``width height``,
``scale``) followed by float32 rows stored bottom-to-top. A negative scale
means little-endian. Unknown disparities are ``+inf``.
"""

import io
import re

import numpy as np
from PIL import Image

from .errors import ContractError
from .fields import DisparityMap, FeatureMap, OcclusionMap, make_disparity_map


class PfmError(ValueError):
    """Malformed PFM data; ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ImageFormatError(ValueError):
    pass


_TOKEN = re.compile(rb"\s*(\S+)")


def _next_token(data, pos):
    m = _TOKEN.match(data, pos)
    if m is None:
        raise PfmError("unexpected end of header", pos)
    return m.group(1), m.start(1), m.end()


def decode_pfm(data):
    """Parse PFM bytes into ``(array, scale)``.

    ``array`` is float32 top-to-bottom, shaped ``(H, W)`` for ``Pf`` or
    ``(H, W, 3)`` for ``PF``.
    """
    data = bytes(data)
    magic, start, pos = _next_token(data, 0)
    if magic not in (b"Pf", b"PF"):
        raise PfmError(f"bad magic {magic[:8]!r}, expected 'Pf' or 'PF'", start)
    bands = 1 if magic == b"Pf" else 3
    dims = []
    for name in ("width", "height"):
        tok, start, pos = _next_token(data, pos)
        try:
            dims.append(int(tok))
        except ValueError:
            raise PfmError(f"{name} {tok[:16]!r} is not an integer", start) from None
        if dims[-1] < 1:
            raise PfmError(f"{name} must be positive", start)
    tok, start, pos = _next_token(data, pos)
    try:
        scale = float(tok)
    except ValueError:
        raise PfmError(f"scale {tok[:16]!r} is not a number", start) from None
    if scale == 0 or not np.isfinite(scale):
        raise PfmError("scale must be finite and nonzero", start)
    # exactly one whitespace byte separates the header from the payload
    if pos >= len(data) or data[pos : pos + 1] not in (b"\n", b" ", b"\r", b"\t"):
        raise PfmError("missing separator after scale", pos)
    pos += 1
    if data[pos - 1 : pos] == b"\r" and data[pos : pos + 1] == b"\n":
        pos += 1
    width, height = dims
    count = width * height * bands
    if len(data) - pos < 4 * count:
        raise PfmError(f"payload truncated: need {4 * count} bytes, found {len(data) - pos}", pos)
    dtype = "<f4" if scale < 0 else ">f4"
    arr = np.frombuffer(data, dtype=dtype, count=count, offset=pos).astype(np.float32)
    shape = (height, width) if bands == 1 else (height, width, 3)
    return np.flipud(arr.reshape(shape)).copy(), scale


def encode_pfm(array):
    """Little-endian PFM bytes for a float array, top row first in ``array``."""
    arr = np.asarray(array, dtype=np.float32)
    if arr.ndim == 2:
        magic = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"PF"
    else:
        raise ContractError(f"PFM holds (H, W) or (H, W, 3) arrays, got {arr.shape}")
    h, w = arr.shape[:2]
    header = b"%s\n%d %d\n-1\n" % (magic, w, h)
    return header + np.flipud(arr).astype("<f4").tobytes()


def read_pfm(data):
    """Disparity map from single-band PFM bytes; non-finite pixels are invalid."""
    arr, scale = decode_pfm(data)
    if arr.ndim != 2:
        raise PfmError("expected a single-band 'Pf' file for disparity", 0)
    values = arr.astype(np.float64)
    if abs(scale) != 1.0:
        values = values * abs(scale)
    return make_disparity_map(values)


def write_pfm(d):
    """PFM bytes for a disparity map, invalid pixels written as ``+inf``."""
    return encode_pfm(np.where(d.valid, d.values, np.inf))


def load_pfm(path):
    with open(path, "rb") as fh:
        return read_pfm(fh.read())


def save_pfm(path, d):
    data = write_pfm(d) if isinstance(d, DisparityMap) else encode_pfm(d)
    with open(path, "wb") as fh:
        fh.write(data)


def read_image(data):
    """8-bit PNG/PGM/PPM bytes to a 3-channel FeatureMap in [0, 1]."""
    try:
        img = Image.open(io.BytesIO(bytes(data)))
        img.load()
    except Exception as exc:  # Pillow raises a zoo of types for bad input
        raise ImageFormatError(f"cannot decode image: {exc}") from None
    if img.mode not in ("L", "RGB", "RGBA", "P", "LA", "1"):
        raise ImageFormatError(f"unsupported image mode {img.mode!r}; only 8-bit images are read")
    rgb = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return FeatureMap(np.moveaxis(rgb, -1, 0))


def load_image(path):
    with open(path, "rb") as fh:
        return read_image(fh.read())


def mask_to_uint8(o):
    """0..1 occlusion values to 0..255, rounding halves up."""
    values = o.values if isinstance(o, OcclusionMap) else np.asarray(o, dtype=np.float64)
    return np.floor(np.clip(values, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_mask(o, fmt="PNG"):
    """Encode an occlusion map as 8-bit grayscale (0 visible, 255 occluded)."""
    buf = io.BytesIO()
    Image.fromarray(mask_to_uint8(o)).save(buf, format="PPM" if fmt.upper() == "PGM" else fmt)
    return buf.getvalue()


def write_image(image, fmt="PNG"):
    """Encode a 3-channel FeatureMap in [0, 1] as an 8-bit RGB image."""
    rgb = np.moveaxis(image.values, 0, -1)
    buf = io.BytesIO()
    Image.fromarray(np.floor(np.clip(rgb, 0, 1) * 255 + 0.5).astype(np.uint8)).save(buf, format=fmt)
    return buf.getvalue()
