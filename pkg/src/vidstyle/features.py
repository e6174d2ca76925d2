"""Small fixed-filter convolutional feature extractor with exact backprop.

The extractor stands in for a pretrained classification network. Each stage
is a same-padded convolution without bias followed by a rectifier, optionally
followed by 2x2 mean pooling. Layer ``l`` (1-based) is the rectified output
of stage ``l``, before pooling. Filters are drawn from a seeded normal
distribution and scaled to unit Frobenius norm per output channel.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

__all__ = [
    "StageSpec",
    "LayerConfig",
    "FeatureStack",
    "Extractor",
    "build_extractor",
    "default_config",
]


@dataclass(frozen=True)
class StageSpec:
    in_channels: int
    out_channels: int
    kernel: int = 3
    pool: bool = False


@dataclass(frozen=True)
class LayerConfig:
    stages: tuple = ()
    seed: int = 0
    content_layers: tuple = (3,)
    style_layers: tuple = (1, 2, 3, 4)

    def __post_init__(self):
        if not self.stages:
            raise ValueError("extractor needs at least one stage")
        for k, (a, b) in enumerate(zip(self.stages, self.stages[1:]), start=1):
            if a.out_channels != b.in_channels:
                raise ValueError(
                    f"channel chain broken between stage {k} ({a.out_channels} out) "
                    f"and stage {k + 1} ({b.in_channels} in)"
                )
        for s in self.stages:
            if s.kernel < 1 or s.kernel % 2 == 0:
                raise ValueError(f"kernel size must be odd and positive, got {s.kernel}")
        n = len(self.stages)
        for l in (*self.content_layers, *self.style_layers):
            if not 1 <= l <= n:
                raise ValueError(f"layer {l} outside 1..{n}")

    @property
    def pool_factor(self):
        return 2 ** sum(s.pool for s in self.stages)

    def to_dict(self):
        d = asdict(self)
        d["stages"] = [asdict(s) for s in self.stages]
        d["content_layers"] = list(self.content_layers)
        d["style_layers"] = list(self.style_layers)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            stages=tuple(StageSpec(**s) for s in d["stages"]),
            seed=int(d.get("seed", 0)),
            content_layers=tuple(d.get("content_layers", (3,))),
            style_layers=tuple(d.get("style_layers", (1, 2, 3, 4))),
        )


def default_config(seed=0):
    """Four 3x3 stages, 3->8->8->16->16 channels, pooling after stages 1 and 2."""
    return LayerConfig(
        stages=(
            StageSpec(3, 8, pool=True),
            StageSpec(8, 8, pool=True),
            StageSpec(8, 16),
            StageSpec(16, 16),
        ),
        seed=seed,
    )


@dataclass
class FeatureStack:
    """Feature maps keyed by layer index, each of shape (H_l, W_l, N_l)."""

    maps: dict = field(default_factory=dict)

    def __getitem__(self, layer):
        return self.maps[layer]

    def __contains__(self, layer):
        return layer in self.maps

    def layers(self):
        return sorted(self.maps)

    def channels(self, layer):
        """N_l, the number of filters."""
        return self.maps[layer].shape[2]

    def size(self, layer):
        """M_l, the number of spatial positions."""
        h, w, _ = self.maps[layer].shape
        return h * w

    def matrix(self, layer):
        """Layer features as an (M_l, N_l) matrix."""
        f = self.maps[layer]
        return f.reshape(-1, f.shape[2])


def _conv(x, kernel):
    k = kernel.shape[0]
    r = k // 2
    h, w, _ = x.shape
    if k == 1:
        return x @ kernel[0, 0]
    xp = np.pad(x, ((r, r), (r, r), (0, 0)))
    cols = np.concatenate([xp[dy:dy + h, dx:dx + w] for dy in range(k) for dx in range(k)],
                          axis=2)
    return cols @ kernel.reshape(-1, kernel.shape[3])


def _conv_transpose(g, kernel):
    k = kernel.shape[0]
    r = k // 2
    h, w, _ = g.shape
    cin = kernel.shape[2]
    if k == 1:
        return g @ kernel[0, 0].T
    t = g @ kernel.reshape(-1, kernel.shape[3]).T
    gp = np.zeros((h + 2 * r, w + 2 * r, cin))
    for idx in range(k * k):
        dy, dx = divmod(idx, k)
        gp[dy:dy + h, dx:dx + w] += t[:, :, idx * cin:(idx + 1) * cin]
    return gp[r:r + h, r:r + w]


def _pool(x):
    h, w, c = x.shape
    return x.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))


def _unpool(g):
    return np.repeat(np.repeat(g, 2, axis=0), 2, axis=1) * 0.25


class Extractor:
    """Immutable feature network built from a :class:`LayerConfig`."""

    def __init__(self, config, kernels):
        if len(kernels) != len(config.stages):
            raise ValueError("one kernel per stage required")
        ks = []
        for spec, kern in zip(config.stages, kernels):
            kern = np.array(kern, dtype=np.float64)
            expected = (spec.kernel, spec.kernel, spec.in_channels, spec.out_channels)
            if kern.shape != expected:
                raise ValueError(f"kernel shape {kern.shape}, expected {expected}")
            kern.setflags(write=False)
            ks.append(kern)
        self.config = config
        self.kernels = tuple(ks)

    @property
    def num_layers(self):
        return len(self.kernels)

    def check_input(self, shape):
        h, w = shape[:2]
        f = self.config.pool_factor
        if h % f or w % f:
            ph, pw = (-h) % f, (-w) % f
            raise ValueError(
                f"image {h}x{w} not divisible by pooling factor {f}; "
                f"pad by {ph} rows and {pw} columns"
            )
        if shape[2] != self.config.stages[0].in_channels:
            raise ValueError(
                f"image has {shape[2]} channels, extractor expects "
                f"{self.config.stages[0].in_channels}"
            )

    def forward(self, image, layers=None, return_cache=False):
        """Compute the feature maps for ``layers`` (default: content + style)."""
        x = np.asarray(image, dtype=np.float64)
        self.check_input(x.shape)
        if layers is None:
            layers = set(self.config.content_layers) | set(self.config.style_layers)
        layers = sorted(set(layers))
        for l in layers:
            if not 1 <= l <= self.num_layers:
                raise ValueError(f"layer {l} outside 1..{self.num_layers}")
        depth = layers[-1] if layers else 0
        maps = {}
        pre = []
        for l in range(1, depth + 1):
            z = _conv(x, self.kernels[l - 1])
            a = np.maximum(z, 0.0)
            pre.append(z)
            if l in layers:
                maps[l] = a
            x = _pool(a) if self.config.stages[l - 1].pool else a
        stack = FeatureStack(maps)
        if return_cache:
            return stack, pre
        return stack

    def backward(self, image, upstream, cache=None):
        """Gradient w.r.t. the input pixels of ``sum_l <upstream[l], F^l>``.

        ``upstream`` maps layer index to an array shaped like that layer's
        features. ``cache`` is the pre-activation list returned by
        ``forward(..., return_cache=True)``; it is recomputed when omitted.
        """
        x = np.asarray(image, dtype=np.float64)
        if not upstream:
            return np.zeros_like(x)
        depth = max(upstream)
        if cache is None or len(cache) < depth:
            _, cache = self.forward(x, range(1, depth + 1), return_cache=True)
        g = None
        for l in range(depth, 0, -1):
            z = cache[l - 1]
            if g is not None and self.config.stages[l - 1].pool:
                g = _unpool(g)
            if l in upstream:
                u = np.asarray(upstream[l], dtype=np.float64)
                if u.shape != z.shape:
                    raise ValueError(
                        f"upstream gradient for layer {l} has shape {u.shape}, "
                        f"expected {z.shape}"
                    )
                g = u if g is None else g + u
            if g is None:
                continue
            g = _conv_transpose(g * (z > 0), self.kernels[l - 1])
        return g


def build_extractor(config=None, seed=None):
    """Draw unit-norm filters for ``config`` from its seed (or ``seed``)."""
    if config is None:
        config = default_config(0 if seed is None else seed)
    elif seed is not None and seed != config.seed:
        config = LayerConfig(config.stages, seed, config.content_layers, config.style_layers)
    rng = np.random.default_rng(config.seed)
    kernels = []
    for spec in config.stages:
        k = rng.standard_normal((spec.kernel, spec.kernel, spec.in_channels, spec.out_channels))
        norms = np.sqrt(np.sum(k ** 2, axis=(0, 1, 2), keepdims=True))
        kernels.append(k / norms)
    return Extractor(config, kernels)
