"""
Stylizing a single image
========================

A content image and a style image go in, an image that keeps the layout of
the first and the texture statistics of the second comes out. Everything is
numpy: the feature extractor is a small seeded convolutional stack.
"""

import os

import numpy as np

from vidstyle.bench import style_image
from vidstyle.features import build_extractor
from vidstyle.imagecore import gaussian_init, make_rng, write_ppm
from vidstyle.losses import LossWeights
from vidstyle.pipeline import stylize_single
from vidstyle.solver import SolverConfig

OUT = os.environ.get("DEMO_OUT", "demo_output")
os.makedirs(OUT, exist_ok=True)

###############################################################################
# Inputs: a smooth "photo" for content and a striped texture for style.

content = style_image("blobs", 64, seed=3)
style = style_image("stripes", 64)
extractor = build_extractor()
print("layers:", extractor.num_layers, "pooling factor:", extractor.config.pool_factor)

###############################################################################
# The objective weighs content against style. Start from seeded noise and let
# projected L-BFGS keep every pixel in [0, 1].

weights = LossWeights(alpha=1, beta=100, gamma=0)
init = gaussian_init(64, 64, 3, make_rng(0, 0))
x, report = stylize_single(content, style, init, weights,
                           SolverConfig(max_iterations=400), extractor)
print(f"{report.iterations} iterations, converged={report.converged}")
print("final parts:", {k: f"{v:.3e}" for k, v in report.parts.items()})

###############################################################################
# Save the result and the per-iteration log.

write_ppm(x, os.path.join(OUT, "single.ppm"))
report.write_log(os.path.join(OUT, "single.log"), every=50)
print("pixel range:", float(np.min(x)), float(np.max(x)))
