"""Image arrays, pixel arithmetic, seeded noise initialization and PPM/PGM I/O.

Images are float64 arrays of shape ``(height, width, channels)`` with values
in [0, 1]. Weight masks are float arrays of shape ``(height, width)``.
"""

from __future__ import annotations

import os
import re

import numpy as np

__all__ = [
    "ImageFormatError",
    "as_image",
    "read_ppm",
    "write_ppm",
    "read_pgm",
    "write_pgm",
    "gaussian_init",
    "blend",
    "frame_filename",
    "make_rng",
]

DEFAULT_INIT_MEAN = 0.5
DEFAULT_INIT_STDDEV = 0.2


class ImageFormatError(ValueError):
    """Raised for malformed or unsupported raster files."""


def as_image(data, channels=None):
    """Validate ``data`` as an image array and return it as float64."""
    img = np.asarray(data, dtype=np.float64)
    if img.ndim != 3:
        raise ValueError(f"image must be HxWxC, got shape {img.shape}")
    if channels is not None and img.shape[2] != channels:
        raise ValueError(f"expected {channels} channels, got {img.shape[2]}")
    if not np.all(np.isfinite(img)):
        raise ValueError("image contains non-finite values")
    return img


def make_rng(seed, *stream):
    """Seeded generator; extra integers select an independent stream."""
    return np.random.default_rng([int(seed), *map(int, stream)])


# --- netpbm codec ---------------------------------------------------------

_WS = b" \t\r\n"


def _parse_header(buf, magic):
    """Parse a binary netpbm header. Returns (width, height, maxval, offset)."""
    if len(buf) < 2:
        raise ImageFormatError("truncated header at byte offset 0")
    if buf[:2] != magic:
        found = buf[:2].decode("latin-1")
        raise ImageFormatError(
            f"unsupported format {found!r} at byte offset 0 (expected {magic.decode()})"
        )
    pos = 2
    fields = []
    while len(fields) < 3:
        # skip whitespace and comments
        while pos < len(buf) and (buf[pos] in _WS or buf[pos] == ord("#")):
            if buf[pos] == ord("#"):
                while pos < len(buf) and buf[pos] not in b"\r\n":
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < len(buf) and buf[pos] not in _WS and buf[pos] != ord("#"):
            pos += 1
        token = buf[start:pos]
        if not token:
            raise ImageFormatError(f"truncated header at byte offset {start}")
        if not token.isdigit():
            raise ImageFormatError(
                f"malformed header token {token!r} at byte offset {start}"
            )
        fields.append((int(token), start))
    (width, _), (height, hoff), (maxval, moff) = fields
    if width <= 0 or height <= 0:
        raise ImageFormatError(f"invalid dimensions {width}x{height} at byte offset {hoff}")
    if maxval != 255:
        raise ImageFormatError(f"unsupported maxval {maxval} at byte offset {moff}")
    if pos >= len(buf) or buf[pos] not in _WS:
        raise ImageFormatError(f"missing whitespace after header at byte offset {pos}")
    return width, height, maxval, pos + 1


def _read_netpbm(path, magic, channels):
    with open(path, "rb") as fh:
        buf = fh.read()
    width, height, _, offset = _parse_header(buf, magic)
    need = width * height * channels
    payload = buf[offset:offset + need]
    if len(payload) < need:
        raise ImageFormatError(
            f"truncated payload: expected {need} bytes at byte offset {offset}, "
            f"got {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    return arr.reshape(height, width, channels)


def _quantize(values):
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def read_ppm(path):
    """Read a binary P6 file with maxval 255 into an HxWx3 image in [0, 1]."""
    return _read_netpbm(path, b"P6", 3)


def write_ppm(image, path):
    """Write an HxWx3 image as binary P6; values are clamped then rounded."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"write_ppm needs a 3-channel image, got shape {img.shape}")
    h, w, _ = img.shape
    with open(path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (w, h))
        fh.write(_quantize(img).tobytes())


def read_pgm(path):
    """Read a binary P5 file (maxval 255) into an HxW array in [0, 1]."""
    return _read_netpbm(path, b"P5", 1)[:, :, 0]


def write_pgm(mask, path):
    """Write an HxW array in [0, 1] as binary P5 (0 black, 1 white)."""
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"write_pgm needs an HxW array, got shape {m.shape}")
    h, w = m.shape
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (w, h))
        fh.write(_quantize(m).tobytes())


def frame_filename(index, prefix="frame", ext="ppm"):
    """Zero-padded 1-based frame file name, e.g. ``frame_0001.ppm``."""
    return f"{prefix}_{index:04d}.{ext}"


_FRAME_RE = re.compile(r"_(\d+)\.[A-Za-z]+$")


def sorted_frame_paths(paths):
    """Sort frame paths by their trailing frame number."""
    def key(p):
        m = _FRAME_RE.search(os.path.basename(p))
        return (int(m.group(1)) if m else -1, p)
    return sorted(paths, key=key)


# --- pixel-space operations -----------------------------------------------

def gaussian_init(width, height, channels, rng, mean=DEFAULT_INIT_MEAN,
                  stddev=DEFAULT_INIT_STDDEV):
    """I.i.d. normal noise clamped to [0, 1].

    ``rng`` is a :class:`numpy.random.Generator` or an integer seed.
    """
    if stddev < 0:
        raise ValueError("stddev must be non-negative")
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng)
    noise = rng.standard_normal((height, width, channels))
    return np.clip(mean + stddev * noise, 0.0, 1.0)


def blend(a, b, mask_a, scalar_a):
    """Mask-weighted blend of two images.

    Per component: ``d*m*a + (1 - d + d*(1 - m))*b`` with ``d = scalar_a`` and
    the per-pixel mask ``m`` replicated across channels. With ``m = 1`` the
    result is a convex combination; with ``m = 0`` it is ``b``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m = np.asarray(mask_a, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if m.shape != a.shape[:2]:
        raise ValueError(f"mask shape {m.shape} does not match image {a.shape[:2]}")
    d = float(scalar_a)
    m = m[:, :, None]
    return d * m * a + ((1.0 - d) + d * (1.0 - m)) * b
