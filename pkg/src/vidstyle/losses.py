"""Content, Gram-matrix style and temporal consistency losses with gradients.

Feature-space losses return per-layer gradients with respect to the feature
maps; :func:`total_loss_grad` pushes them through the extractor and adds the
pixel-space temporal gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .features import FeatureStack

__all__ = [
    "LossWeights",
    "TemporalTerm",
    "StyleTarget",
    "LossContext",
    "content_loss_grad",
    "gram",
    "style_loss_grad",
    "style_grams",
    "temporal_loss_grad",
    "total_loss_grad",
    "resize_image",
]

TEMPORAL_NORMS = ("squared", "absolute")


@dataclass(frozen=True)
class LossWeights:
    """Loss weights, layer roles and long-term offsets."""

    alpha: float = 1.0
    beta: float = 100.0
    gamma: float = 400.0
    content_layers: tuple = (3,)
    style_layers: tuple = (1, 2, 3, 4)
    offsets: tuple = (1,)
    temporal_norm: str = "squared"

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")
        offs = tuple(self.offsets)
        if not offs or any(int(j) != j or j < 1 for j in offs) or list(offs) != sorted(set(offs)):
            raise ValueError(f"offsets must be strictly increasing positive integers, got {offs}")
        if self.temporal_norm not in TEMPORAL_NORMS:
            raise ValueError(f"temporal_norm must be one of {TEMPORAL_NORMS}")

    def robust(self):
        """Absolute-error temporal loss with the temporal weight doubled."""
        return LossWeights(self.alpha, self.beta, 2.0 * self.gamma, self.content_layers,
                           self.style_layers, self.offsets, "absolute")

    def to_dict(self):
        return {
            "alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
            "content_layers": list(self.content_layers),
            "style_layers": list(self.style_layers),
            "offsets": list(self.offsets),
            "temporal_norm": self.temporal_norm,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            alpha=float(d["alpha"]), beta=float(d["beta"]), gamma=float(d["gamma"]),
            content_layers=tuple(d["content_layers"]),
            style_layers=tuple(d["style_layers"]),
            offsets=tuple(d["offsets"]),
            temporal_norm=d.get("temporal_norm", "squared"),
        )


@dataclass
class TemporalTerm:
    """A warped earlier stylized frame and its per-pixel weights."""

    warped: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if np.shape(self.weights) != np.shape(self.warped)[:2]:
            raise ValueError(
                f"weights {np.shape(self.weights)} do not match image "
                f"{np.shape(self.warped)[:2]}"
            )


def content_loss_grad(F, P, layers):
    """Per-layer mean squared feature difference.

    Returns ``(loss, grads)`` where ``grads[l]`` is dLoss/dF^l.
    """
    loss = 0.0
    grads = {}
    for l in layers:
        if l not in F or l not in P:
            raise KeyError(f"content layer {l} missing from feature stack")
        f, p = F[l], P[l]
        if f.shape != p.shape:
            raise ValueError(f"layer {l}: feature shapes {f.shape} vs {p.shape}")
        diff = f - p
        nm = diff.size
        loss += float(np.sum(diff ** 2)) / nm
        grads[l] = (2.0 / nm) * diff
    return loss, grads


def gram(features):
    """Gram matrix G_ij = sum_k F_ik F_jk of one layer.

    ``features`` is either (H, W, N) or an (M, N) matrix.
    """
    f = np.asarray(features, dtype=np.float64)
    f = f.reshape(-1, f.shape[-1])
    return f.T @ f


def style_grams(stack, layers):
    return {l: gram(stack[l]) for l in layers}


def style_loss_grad(F, A, layers):
    """Squared Gram difference normalized by (N_l M_l)^2 per layer.

    ``A`` maps layer index to the style image's Gram matrix.
    """
    loss = 0.0
    grads = {}
    for l in layers:
        if l not in F or l not in A:
            raise KeyError(f"style layer {l} missing")
        f = F[l]
        h, w, n = f.shape
        m = h * w
        a = np.asarray(A[l])
        if a.shape != (n, n):
            raise ValueError(f"layer {l}: Gram shape {a.shape}, expected {(n, n)}")
        mat = f.reshape(m, n)
        diff = mat.T @ mat - a
        scale = 1.0 / (n * n * m * m)
        loss += scale * float(np.sum(diff ** 2))
        grads[l] = (4.0 * scale * (mat @ diff)).reshape(h, w, n)
    return loss, grads


def temporal_loss_grad(x, term, norm="squared"):
    """Weighted deviation from a warped frame, averaged over all components."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != np.shape(term.warped):
        raise ValueError(f"image {x.shape} vs warped {np.shape(term.warped)}")
    c = np.asarray(term.weights, dtype=np.float64)[:, :, None]
    diff = x - term.warped
    d = x.size
    if norm == "squared":
        loss = float(np.sum(c * diff ** 2)) / d
        grad = (2.0 / d) * c * diff
    elif norm == "absolute":
        loss = float(np.sum(c * np.abs(diff))) / d
        grad = (1.0 / d) * c * np.sign(diff)
    else:
        raise ValueError(f"unknown temporal norm {norm!r}")
    return loss, grad


def resize_image(image, height, width):
    """Bilinear resize to (height, width); identity when sizes match."""
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    if (h, w) == (height, width):
        return img
    zoom = (height / h, width / w, 1.0)
    out = ndimage.zoom(img, zoom, order=1, mode="nearest", grid_mode=True)
    return np.clip(out[:height, :width], 0.0, 1.0)


@dataclass
class StyleTarget:
    """Cached Gram matrices of a style image at one frame resolution."""

    grams: dict

    @classmethod
    def from_image(cls, extractor, style, shape, layers):
        style = resize_image(style, shape[0], shape[1])
        return cls(style_grams(extractor.forward(style, layers), layers))


@dataclass
class LossContext:
    """Everything the objective needs besides the current image."""

    content: FeatureStack
    style: StyleTarget
    temporal: list = field(default_factory=list)


def total_loss_grad(x, context, weights, extractor):
    """Weighted sum of content, style and temporal losses and its pixel gradient.

    Returns ``(loss, grad, parts)`` with ``parts`` holding the unweighted
    component values.
    """
    x = np.asarray(x, dtype=np.float64)
    layers = set()
    if weights.alpha:
        layers |= set(weights.content_layers)
    if weights.beta:
        layers |= set(weights.style_layers)
    total = 0.0
    parts = {"content": 0.0, "style": 0.0, "temporal": 0.0}
    grad = np.zeros_like(x)
    if layers:
        F, cache = extractor.forward(x, layers, return_cache=True)
        upstream = {}
        if weights.alpha:
            lc, gc = content_loss_grad(F, context.content, weights.content_layers)
            parts["content"] = lc
            total += weights.alpha * lc
            for l, g in gc.items():
                upstream[l] = weights.alpha * g
        if weights.beta:
            ls, gs = style_loss_grad(F, context.style.grams, weights.style_layers)
            parts["style"] = ls
            total += weights.beta * ls
            for l, g in gs.items():
                upstream[l] = upstream[l] + weights.beta * g if l in upstream else weights.beta * g
        grad = extractor.backward(x, upstream, cache=cache)
    if weights.gamma and context.temporal:
        lt_sum = 0.0
        for term in context.temporal:
            lt, gt = temporal_loss_grad(x, term, weights.temporal_norm)
            lt_sum += lt
            grad = grad + weights.gamma * gt
        parts["temporal"] = lt_sum
        total += weights.gamma * lt_sum
    return total, grad, parts
