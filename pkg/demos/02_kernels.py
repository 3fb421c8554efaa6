"""The small numerical kernels behind every solver.

Each kernel is checked against the equation it solves: Lambert W in log
form, then the weighted simplex projection, then the optimal photon field.
"""

import numpy as np

from polyct.core import FanBeamGeometry, bundled_phantom, bundled_table
from polyct.kernels import lambert_w0_exp, project_weighted_simplex
from polyct.physics import ForwardModel, simulate_measurement

# z = W(exp(u)) solves log z + z = u, even where exp(u) overflows
u = np.array([-50.0, 0.0, 10.0, 300.0, 700.0])
z = lambert_w0_exp(u)
print("W(exp u):", z)
print("residual:", np.abs(np.log(z) + z - u))

# weighted projection: argmin 1/2 sum r (w - v)^2 over the simplex
rng = np.random.default_rng(0)
v = rng.normal(0.2, 0.4, 5)
r = np.exp(rng.normal(size=5))
w = project_weighted_simplex(v, r)
print("v =", np.round(v, 3))
print("w =", np.round(w, 3), "sum", w.sum())
# KKT: r (v - w) equals the pivot on the support and is below it elsewhere
print("r (v - w):", np.round(r * (v - w), 4))

# optimal photon field for fixed w, given the readouts
size = 32
table = bundled_table(5)
geom = FanBeamGeometry.default(size)
truth = bundled_phantom("phantom", size, 5)
sigma, i_bar = 1e2, 1500.0
ms = simulate_measurement(truth, table, geom, sigma, i_bar, seed=2)
fm = ForwardModel(table, geom, i_bar)
f = fm.from_sinogram(ms.f)
I = fm.intensity_flat(truth.data.reshape(-1, 5))
y, Y = fm.photon_field(I, f, sigma)
gauss, kl = fm.data_terms(y, I, f, sigma)[:2]
print(f"photon field: Gaussian term {gauss:.4g}, KL term {kl:.4g}")
print("stationarity:", np.abs((Y - f)[:, None] / sigma**2 + np.log(y / I)).max())
