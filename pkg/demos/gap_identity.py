"""Gap between obstacle-free and obstacle DtN maps for a few Fourier modes.

Prints the gap, its energy decomposition and the absorbed power on the
obstacle boundary, which must equal the imaginary part of the gap.
"""

import numpy as np

from probescope.dtn import DtnPair
from probescope.fem import boundary_mass
from probescope.geometry import Disk, ImpedanceSpec, ObstacleSpec
from probescope.mesh import INTERFACE, mesh_domain

obstacle = ObstacleSpec((Disk((0.1, 0.05), 0.3),), ImpedanceSpec(0.5, 1.0))
mesh = mesh_domain(Disk((0.0, 0.0), 1.0), obstacle, 0.05)
pair = DtnPair(mesh, obstacle.impedance, 1.0)
theta = np.arctan2(pair.outer_points[:, 1], pair.outer_points[:, 0])

for n in range(4):
    f = np.exp(1j * n * theta)
    g = pair.gap(f)
    _, u = pair.solve_pair(f)
    B = boundary_mass(u.mesh, INTERFACE, obstacle.impedance.values(1).imag)
    absorbed = np.vdot(u.values, B @ u.values).real
    print(f"mode {n}: gap={g.value:.6e}  parts sum={g.parts_sum:.6e}  absorbed={absorbed:.6e}")
