"""
Three model variants
====================

The same trunk supports three modes:

- ``adacof``: the warped-and-blended frame only
- ``pyramid``: adds feature-pyramid warping and GridNet synthesis
- ``full``: blends both candidates with a second occlusion mask

This prints the parameter counts and runs an untrained forward pass of each.
The debug outputs are the ones ``cdfi interp --dump`` writes.
"""

import numpy as np

from cdfi.data import preset, synth_triplet
from cdfi.network.model import InterpNet
from cdfi.network.spec import ModelConfig

tr = synth_triplet(preset("large-motion", height=64, width=64), 0)
f0, f1 = tr.frame0[None], tr.frame1[None]

for mode, flags in (("adacof", dict(pyramid=False, path_selection=False)),
                    ("pyramid", dict(pyramid=True, path_selection=False)),
                    ("full", dict(pyramid=True, path_selection=True))):
    model = InterpNet(ModelConfig(**flags), seed=0)
    out = model.forward_inference(f0, f1)
    print(f"{mode:8s} {model.parameter_count():7d} params   "
          + "  ".join(f"{k}: mean {v.mean():.3f}" for k, v in out.items()))

# width multiplier scales the trunk; F and d resize the kernel heads
wide = InterpNet(ModelConfig(kernel_size=7, dilation=2, width_multiplier=2), seed=0)
print("full, F=7, d=2, width x2:", wide.parameter_count(), "params")
