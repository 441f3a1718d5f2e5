"""Synthetic low-light degradation and the pad/crop round trip used at inference.

Run: python3 demos/degradation.py [out_dir]
"""
import os
import sys

import numpy as np

from lmtgp import data, metrics

out_dir = sys.argv[1] if len(sys.argv) > 1 else "demo_out"
os.makedirs(out_dir, exist_ok=True)
rng = np.random.default_rng(3)
scene = data.synthetic_scene(rng, 70)
for exposure in (-1.0, -2.5, -4.0):
    dark = data.degrade(scene, data.DegradationParams(exposure=exposure, contrast=-20, vibrance=-30))
    print(f"exposure {exposure:+.1f}: mean {dark.mean():.3f}, PSNR vs scene "
          f"{metrics.psnr(scene, dark):.2f} dB")
    data.save_image(dark, os.path.join(out_dir, f"dark_{-exposure:.1f}.png"))
data.save_image(scene, os.path.join(out_dir, "scene.png"))

padded, dims = data.pad_to_multiple(scene, 32)
back = data.crop_back(padded, dims, 32)
print(f"padded {scene.shape[:2]} -> {padded.shape[:2]}, round trip exact: {np.array_equal(back, scene)}")
