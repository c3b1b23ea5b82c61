"""Mosaic a color scene, add sensor noise, and run the raw processing chain.

    python demos/raw_isp.py [out_prefix]
"""

import sys

import numpy as np
from skimage import data

from patchlab.evalharness import BayerImage, METRICS, isp_chain, luminance, method_config, save_raw
from patchlab.imagecore import NoiseSpec, add_awgn, psnr, save_ppm

prefix = sys.argv[1] if len(sys.argv) > 1 else None
scene = data.astronaut()[100:196, 160:256].astype(float)
# a warm cast that white balance should remove
scene = np.clip(scene * [1.2, 1.0, 0.7], 0, 255)
raw = BayerImage.from_rgb(scene)
noisy = BayerImage(add_awgn(raw.mosaic, NoiseSpec(8, 1)))
metric = METRICS["sharpness"]

for method in ("identity", "nlm", "bm3d_lite"):
    rgb = isp_chain(noisy, method_config(method, 8))
    ref = isp_chain(raw, method_config("identity"))
    print(f"{method:10s} sharpness {metric.evaluate(luminance(rgb)):9.1f}  "
          f"PSNR vs clean chain {psnr(luminance(ref), luminance(rgb)):.2f} dB  "
          f"channel means {np.round(rgb.reshape(-1, 3).mean(axis=0), 1)}")
    if prefix:
        save_ppm(rgb, f"{prefix}_{method}.ppm")
if prefix:
    save_raw(noisy, f"{prefix}_raw.pgm")
