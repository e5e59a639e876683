"""Distance between diffusive and non-diffusive stress shrinks with eps.

Each run starts from the same flexed wall and constant stress; the eps = 0
run is the reference. A coarse grid keeps the whole sweep under a minute.
"""

import numpy as np

from oldroyd_fsi.analysis import eps_sweep
from oldroyd_fsi.coupling import CoupledState, Params
from oldroyd_fsi.fluid import FluidState
from oldroyd_fsi.geometry import ReferenceDomain
from oldroyd_fsi.shell import ShellState
from oldroyd_fsi.solute import StressField

d = ReferenceDomain(nx=32, ny=16)
params = Params(d, nu=5.0, gamma=1.0, eps=0.2, dt=0.02)
start = CoupledState(ShellState(0.05 * np.cos(np.pi * d.xc), np.zeros(d.nx)),
                     FluidState.rest(d), StressField.constant(d, [[1.0, 1.0], [1.0, 0.5]]))
res = eps_sweep(start, params, [0.2, 0.1, 0.05, 0.025], 1.0, sample_every=5)

print(f"{'eps':>6} {'stress gap':>11} {'velocity gap':>13}")
for e, dT, du in zip(res.eps, res.dist_T, res.dist_u):
    print(f"{e:6.3f} {dT:11.3e} {du:13.3e}")
print(f"fitted slopes: stress {res.slope_T:.2f}, velocity {res.slope_u:.2f}")
