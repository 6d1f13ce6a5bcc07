"""
Warping a frame with AdaCoF
===========================

Every output pixel is a weighted sum of F*F samples. Each sample sits on a
dilated grid around the pixel and is shifted by its own offset.
Here we set the kernels and offsets by hand: first an exact copy, then a
sub-pixel translation, then a blur. The last part checks the fast kernel
against the plain-loop reference.
"""

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from cdfi.adacof import AdaCoFParams, adacof_forward, adacof_forward_reference
from cdfi.data import SynthConfig, synth_triplet

OUT = Path(__file__).parent / "out"
OUT.mkdir(exist_ok=True)

frame = synth_triplet(SynthConfig(height=64, width=64), 3).frame0[None]  # (1, 3, H, W)
H, W = frame.shape[-2:]
F, d = 3, 1


def one_hot_centre(F):
    w = np.zeros((1, F * F, H, W))
    w[:, (F * F) // 2] = 1.0
    return w


zeros = np.zeros((1, F * F, H, W))

# identity: all weight on the centre tap, no offsets
same = adacof_forward(frame, AdaCoFParams(one_hot_centre(F), zeros, zeros, F, d))
print("identity max error:", np.abs(same - frame).max())

# translation: shift every sample by (+1.5, -2.25) pixels
shift = adacof_forward(frame, AdaCoFParams(one_hot_centre(F), zeros + 1.5, zeros - 2.25, F, d))

# box blur: equal weights on the rigid 3x3 grid
blur = adacof_forward(frame, AdaCoFParams(np.full((1, F * F, H, W), 1 / F**2), zeros, zeros, F, d))

# the numba kernel and the scalar reference agree
rng = np.random.default_rng(0)
small = rng.random((1, 2, 6, 6))
params = AdaCoFParams(rng.random((1, 9, 6, 6)), rng.normal(size=(1, 9, 6, 6)),
                      rng.normal(size=(1, 9, 6, 6)), 3, 2)
gap = np.abs(adacof_forward(small, params) - adacof_forward_reference(small, params)).max()
print("fast vs reference:", gap)

fig, axes = plt.subplots(1, 4, figsize=(10, 3))
for ax, img, title in zip(axes, (frame, same, shift, blur), ("input", "identity", "shifted", "3x3 box")):
    ax.imshow(np.clip(img[0].transpose(1, 2, 0), 0, 1))
    ax.set_title(title)
    ax.axis("off")
fig.tight_layout()
fig.savefig(OUT / "adacof_warping.png", dpi=100)
print("wrote", OUT / "adacof_warping.png")
