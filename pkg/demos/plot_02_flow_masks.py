"""
Where optical flow can be trusted
=================================

A synthetic scene provides exact flow. The forward-backward check flags
pixels that were hidden in the previous frame, the gradient test flags
motion boundaries, and together they give the per-pixel temporal weights.
"""

import numpy as np

from vidstyle.bench import default_scene, generate_synth_scene
from vidstyle.flow import (consistency_weights, disocclusion_mask, long_term_weights,
                           motion_boundary_mask, warp_image)

seq = generate_synth_scene(default_scene(0, frames=5, size=64))
store = seq.flow_store(offsets=(1, 2, 4))

###############################################################################
# Warping frame 1 onto frame 2's grid reproduces frame 2 wherever the pixel
# was visible in both frames.

pair = store.pair(0, 1)
warped = warp_image(seq.frames[0], pair.backward)
hidden = disocclusion_mask(pair)
err = np.abs(warped - seq.frames[1]).max(axis=2)
print("max warp error on trusted pixels:", float(err[~hidden].max()))
print("disoccluded pixels:", int(hidden.sum()), "truth:", int(seq.disocclusions[0].sum()))
print("motion boundary pixels:", int(motion_boundary_mask(pair.backward).sum()))

###############################################################################
# Long-term weights tie each pixel of frame 5 to its nearest reliable frame.

short = {j: consistency_weights(store.pair(4 - j, 4)) for j in (1, 2, 4)}
for j in (1, 2, 4):
    print(f"offset {j}: {int(long_term_weights(short, j).sum())} pixels")
