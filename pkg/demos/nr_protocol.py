"""The logistic-fit correlation protocol on a toy quality metric.

SSIM of noisy images serves as the subjective quality. Two candidate metrics
are scored: the noise estimator (informative) and the sharpness proxy.

    python demos/nr_protocol.py
"""

import numpy as np

from patchlab.evalharness import builtin_sharpness_proxy, correlation_report, fit_logistic, correlation_csv
from patchlab.imagecore import NoiseSpec, add_awgn, estimate_noise_sigma, ssim

rng = np.random.default_rng(3)
y, x = np.mgrid[0:64, 0:64]
scenes = [100 + 50 * np.sin(x / p) * np.cos(y / q) for p, q in rng.uniform(2, 9, (6, 2))]

quality, metrics = [], {"noise_estimate": [], "sharpness": []}
for i, scene in enumerate(scenes):
    for sigma in range(2, 40, 3):
        noisy = add_awgn(scene, NoiseSpec(sigma, 100 * i + sigma))
        quality.append(ssim(scene, noisy))
        metrics["noise_estimate"].append(estimate_noise_sigma(noisy))
        metrics["sharpness"].append(builtin_sharpness_proxy(noisy))

reports = {}
for name, scores in metrics.items():
    fit = fit_logistic(scores, quality)
    reports[name] = correlation_report(fit, scores, quality)
print(correlation_csv(reports), end="")
