"""Denoise one noisy crop with every pipeline and print PSNR/SSIM.

    python demos/denoise_comparison.py [sigma]
"""

import sys
import time

from patchlab.evalharness import benchmark_noisy, method_config, standard_images
from patchlab.imagecore import psnr, ssim
from patchlab.pipelines import denoise

sigma = float(sys.argv[1]) if len(sys.argv) > 1 else 20.0
name, clean = standard_images(size=128, names=("camera",))[0]
noisy = benchmark_noisy(clean, sigma, seed=0, image_index=0)

print(f"{name} 128x128, sigma={sigma:g}")
print(f"{'noisy':18s} {psnr(clean, noisy):7.2f} dB  SSIM {ssim(clean, noisy):.4f}")
for method in ("nlm", "lra_svd", "lpg_pca", "bm3d_lite", "bm3d_lite_1stage"):
    t0 = time.perf_counter()
    out = denoise(noisy, method_config(method, sigma))
    dt = time.perf_counter() - t0
    print(f"{method:18s} {psnr(clean, out):7.2f} dB  SSIM {ssim(clean, out):.4f}  ({dt:.1f} s)")
