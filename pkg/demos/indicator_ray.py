"""Indicator function along a ray approaching a small obstacle, written as a CSV."""

import sys

from probescope.geometry import Disk, ImpedanceSpec, ObstacleSpec
from probescope.probe import ProbeContext, indicator_function, ray_points, write_sweep_csv

obstacle = ObstacleSpec((Disk((0.0, 0.0), 0.05),), ImpedanceSpec(0.0, 0.01))
ctx = ProbeContext(Disk((0.0, 0.0), 1.0), obstacle, 0.5, h=0.03, h_interface=0.005)
dist = [0.2, 0.1, 0.05, 0.025]
samples = [indicator_function(p, ctx) for p in ray_points((0.05, 0.0), (1.0, 0.0), dist)]
for d, s in zip(dist, samples):
    print(f"distance {d:6.3f}: I = {s.value:.6e}")
write_sweep_csv(sys.argv[1] if len(sys.argv) > 1 else "indicator_ray.csv", dist, samples)
