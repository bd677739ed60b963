"""Support-function estimates of a disk obstacle from CGO data and their convex hull."""

import numpy as np

from probescope.dtn import DtnPair
from probescope.enclosure import convex_hull, estimate_support_many, polygon_area
from probescope.geometry import Disk, ImpedanceSpec, ObstacleSpec, directions
from probescope.mesh import mesh_domain

obstacle = ObstacleSpec((Disk((0.1, 0.05), 0.3),), ImpedanceSpec(0.0, 1.0))
pair = DtnPair(mesh_domain(Disk((0.0, 0.0), 1.0), obstacle, 0.03), obstacle.impedance, 1.0)
W = directions(8)
ests = estimate_support_many(pair, W, np.linspace(2, 12, 21), fit_from=7.0)
for e in ests:
    truth = obstacle.components[0].support(e.omega)
    print(f"omega=({e.omega[0]:+.3f},{e.omega[1]:+.3f})  h_hat={e.h_hat:.4f}  true={truth:.4f}  r2={e.fit.r2:.5f}")
V = convex_hull(W, np.array([e.h_hat for e in ests]))
print(f"hull area {polygon_area(V):.4f} vs obstacle area {np.pi * 0.09:.4f}")
