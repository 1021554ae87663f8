"""
Reading a prior volume at arbitrary points
==========================================

The field sees the classical reconstruction through one of three
interpolation rules. Here they are on a tiny ramp volume.
"""

import numpy as np

from rhotomo.volume import PRIOR_MODES, Volume, sample_prior

# values equal the x index, so interpolation is easy to read off
data = np.broadcast_to(np.arange(4.0)[:, None, None], (4, 4, 4)).copy()
vol = Volume(data)

# x from just inside the left face to outside the right face
xs = np.array([-1.9, -0.75, -0.5, 0.0, 0.3, 1.5, 2.5])
points = np.stack([xs, np.zeros_like(xs), np.zeros_like(xs)], axis=1)

print("x      " + "  ".join(f"{x:6.2f}" for x in xs))
for mode in PRIOR_MODES:
    print(f"{mode:9s}" + "  ".join(f"{v:6.2f}" for v in sample_prior(vol, points, mode)))
