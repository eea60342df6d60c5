"""Cell problem for a 2D laminate and the obstacle problem it homogenizes.

For a(z) = 2 + sin 2πz1 the effective tensor is diag(√3, 2): the harmonic
mean across the layers and the arithmetic mean along them.

    python3 demos/laminate_2d.py
"""

import numpy as np

from homogvi import pipeline as pl
from homogvi.cell import solve_micro
from homogvi.coefficients import CoefficientSpec, ObstacleSpec
from homogvi.mesh import build_cell_mesh, build_macro_mesh

coeff = CoefficientSpec(2, [["2 + sin(2*pi*z1)"]], 1, 3)
cell = build_cell_mesh(128, 2)
chi, at = solve_micro(coeff(np.zeros(2), np.zeros(2), cell.centroids), cell)
print("effective tensor:")
print(at.matrix)
print(f"expected diag({np.sqrt(3):.6f}, 2)")

mesh = build_macro_mesh([(0.0, 1.0), (0.0, 1.0)], 64)
obstacle = ObstacleSpec(2, "0.05 - ((x1 - 0.5)^2 + (x2 - 0.5)^2)")
u0 = pl.solve_homogenized_vi(at.matrix, -4.0, obstacle, mesh)
print(f"homogenized solution: max u = {u0.u.max():.5f}, "
      f"contact area = {u0.active_volume():.4f}, KKT: {u0.kkt}")
