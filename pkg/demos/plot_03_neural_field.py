"""
A neural attenuation field with and without a classical prior
=============================================================

Fit two fields to the same 25 noisy views. One also reads the FDK
volume at every sample point; the other sees positions only.
"""

import numpy as np

from rhotomo.classical import fdk
from rhotomo.field import FieldConfig
from rhotomo.geometry import ScanGeometry, uniform_angles
from rhotomo.metrics import data_range_of, psnr
from rhotomo.projector import add_noise, forward_project
from rhotomo.trainer import TrainConfig, extract_volume, train
from rhotomo.volume import shepp_logan_3d

n = 24
phantom = shepp_logan_3d((n, n, n))
geom = ScanGeometry.covering((n, n, n), (1.0, 1.0, 1.0), 200.0, 300.0, uniform_angles(50))
proj = add_noise(forward_project(phantom, geom, 4 * n), 0.03, np.random.default_rng(0))
train_views, test_views = proj.split_even_odd()
prior = fdk(train_views, 4 * n)
peak = data_range_of(phantom.data)
print(f"FDK prior alone: {psnr(prior.data, phantom.data, peak):.2f} dB")

steps = 600
for source, k in (("fdk", 16), ("none", 0)):
    cfg = TrainConfig(max_steps=steps, batch_rays=256, samples_per_ray=48, prior_source=source, seed=0)
    model, log = train(train_views, prior, cfg, FieldConfig(prior_features=k))
    rec = extract_volume(model, prior if source == "fdk" else None, geom)
    print(f"prior={source:4s}  smoothed loss {log.smoothed_loss(100)[-1]:.5f}"
          f"  psnr {psnr(rec.data, phantom.data, peak):.2f} dB")
