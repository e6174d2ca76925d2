"""Optical flow fields: .flo I/O, warping, occlusion and motion-boundary masks.

A flow field is an ``(H, W, 2)`` float array holding the displacement
``(u, v)`` in pixels, ``u`` along x (columns) and ``v`` along y (rows). A
field stored for frame ``a`` towards frame ``b`` maps pixel ``p`` of ``a`` to
``p + flow[p]`` in ``b``.

Warping is backward: to bring frame ``i-1`` onto the grid of frame ``i`` the
backward flow ``i -> i-1`` is sampled, so every target pixel gets a value.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FLO_MAGIC",
    "FlowFormatError",
    "FlowPair",
    "MaskCoefficients",
    "read_flo",
    "write_flo",
    "sample_bilinear",
    "warp_image",
    "warp_flow_forward",
    "compose_flows",
    "disocclusion_mask",
    "motion_boundary_mask",
    "consistency_weights",
    "long_term_weights",
]

FLO_MAGIC = 202021.25
_FLO_TAG = b"PIEH"


class FlowFormatError(ValueError):
    """Raised for invalid .flo files."""


@dataclass(frozen=True)
class MaskCoefficients:
    """Thresholds of the occlusion and motion-boundary inequalities."""

    occlusion_rel: float = 0.01
    occlusion_abs: float = 0.5
    boundary_rel: float = 0.01
    boundary_abs: float = 0.002


DEFAULT_COEFFICIENTS = MaskCoefficients()


@dataclass(frozen=True)
class FlowPair:
    """Forward flow (reference -> current) and backward flow (current -> reference).

    Both live on their own frame's grid; masks derived from the pair live on
    the grid of the current frame (the one the backward flow starts from).
    """

    forward: np.ndarray
    backward: np.ndarray

    def __post_init__(self):
        if np.shape(self.forward) != np.shape(self.backward):
            raise ValueError(
                f"flow pair shape mismatch: {np.shape(self.forward)} vs "
                f"{np.shape(self.backward)}"
            )
        _check_flow(self.forward)


def _check_flow(flow):
    if np.ndim(flow) != 3 or np.shape(flow)[2] != 2:
        raise ValueError(f"flow must be HxWx2, got shape {np.shape(flow)}")


# --- .flo codec -----------------------------------------------------------

def read_flo(path, nan_policy="reject"):
    """Read a Middlebury .flo file.

    ``nan_policy`` is ``"reject"`` (raise on non-finite values) or ``"zero"``
    (replace them with 0).
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < 12 or buf[:4] != _FLO_TAG:
        raise FlowFormatError(f"{path}: not a flow file (bad magic)")
    width, height = struct.unpack("<ii", buf[4:12])
    if width <= 0 or height <= 0:
        raise FlowFormatError(f"{path}: invalid dimensions {width}x{height}")
    need = 12 + 8 * width * height
    if len(buf) != need:
        raise FlowFormatError(
            f"{path}: size mismatch, header {width}x{height} needs {need} bytes, "
            f"file has {len(buf)}"
        )
    data = np.frombuffer(buf, dtype="<f4", offset=12).reshape(height, width, 2)
    flow = data.astype(np.float64)
    bad = ~np.isfinite(flow)
    if bad.any():
        if nan_policy == "zero":
            flow[bad] = 0.0
        else:
            raise FlowFormatError(f"{path}: {int(bad.sum())} non-finite flow values")
    return flow


def write_flo(flow, path):
    """Write an HxWx2 field as little-endian .flo."""
    _check_flow(flow)
    h, w, _ = np.shape(flow)
    with open(path, "wb") as fh:
        fh.write(_FLO_TAG)
        fh.write(struct.pack("<ii", w, h))
        fh.write(np.asarray(flow, dtype="<f4").tobytes())


# --- resampling -----------------------------------------------------------

def sample_bilinear(src, xs, ys):
    """Bilinearly sample ``src`` (HxW or HxWxC) at real coordinates.

    Coordinates are clamped to the image, which replicates edge pixels.
    """
    h, w = src.shape[:2]
    xs = np.clip(xs, 0.0, w - 1)
    ys = np.clip(ys, 0.0, h - 1)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    if src.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = src[y0, x0] * (1.0 - fx) + src[y0, x1] * fx
    bottom = src[y1, x0] * (1.0 - fx) + src[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def _displaced_grid(flow):
    h, w = flow.shape[:2]
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return xs + flow[..., 0], ys + flow[..., 1]


def warp_image(src, backward_flow):
    """Resample ``src`` onto the grid the flow is defined on.

    Output pixel ``p`` is ``src`` sampled at ``p + backward_flow[p]``.
    """
    src = np.asarray(src, dtype=np.float64)
    flow = np.asarray(backward_flow, dtype=np.float64)
    _check_flow(flow)
    if src.shape[:2] != flow.shape[:2]:
        raise ValueError(f"image {src.shape[:2]} and flow {flow.shape[:2]} differ")
    xs, ys = _displaced_grid(flow)
    return sample_bilinear(src, xs, ys)


def warp_flow_forward(pair):
    """Forward flow resampled at the backward-displaced positions."""
    return warp_image(pair.forward, pair.backward)


def compose_flows(first, second):
    """Chain two flows: ``first`` a->b (on a's grid), ``second`` b->c (on b's grid).

    Returns the a->c flow on a's grid. Used when no direct long-range flow is
    available.
    """
    return first + warp_image(second, first)


# --- reliability masks ----------------------------------------------------

def disocclusion_mask(pair, coeffs=DEFAULT_COEFFICIENTS):
    """Pixels of the current frame failing the forward-backward check."""
    warped = warp_flow_forward(pair)
    bwd = np.asarray(pair.backward, dtype=np.float64)
    lhs = np.sum((warped + bwd) ** 2, axis=2)
    rhs = coeffs.occlusion_rel * (np.sum(warped ** 2, axis=2)
                                  + np.sum(bwd ** 2, axis=2)) + coeffs.occlusion_abs
    return lhs > rhs


def _grad_sq(channel):
    h, w = channel.shape
    gy = np.gradient(channel, axis=0) if h > 1 else np.zeros_like(channel)
    gx = np.gradient(channel, axis=1) if w > 1 else np.zeros_like(channel)
    return gx ** 2 + gy ** 2


def motion_boundary_mask(backward, coeffs=DEFAULT_COEFFICIENTS):
    """Pixels where the backward flow has a large spatial gradient.

    Gradients use central differences, one-sided at the border.
    """
    flow = np.asarray(backward, dtype=np.float64)
    _check_flow(flow)
    lhs = _grad_sq(flow[..., 0]) + _grad_sq(flow[..., 1])
    rhs = coeffs.boundary_rel * np.sum(flow ** 2, axis=2) + coeffs.boundary_abs
    return lhs > rhs


def consistency_weights(pair, coeffs=DEFAULT_COEFFICIENTS):
    """Binary temporal weights: 0 at disocclusions and motion boundaries, else 1."""
    bad = disocclusion_mask(pair, coeffs) | motion_boundary_mask(pair.backward, coeffs)
    return np.where(bad, 0.0, 1.0)


def long_term_weights(short_weights, target_offset):
    """Long-term weights for one offset.

    ``short_weights`` maps each offset ``j`` to the short-term weights between
    frame ``i-j`` and frame ``i``. The result is the target offset's mask minus
    the sum of all masks with a smaller offset (temporally closer frames),
    clipped at zero, so each pixel is tied to the closest reliable frame.
    """
    if target_offset not in short_weights:
        raise KeyError(f"no weights for offset {target_offset}")
    target = np.asarray(short_weights[target_offset], dtype=np.float64)
    closer = np.zeros_like(target)
    for j, mask in short_weights.items():
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != target.shape:
            raise ValueError(
                f"mask for offset {j} has shape {mask.shape}, expected {target.shape}"
            )
        if j < target_offset:
            closer = closer + mask
    return np.maximum(target - closer, 0.0)
