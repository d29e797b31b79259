"""Walk through a feeder: parse it, solve the AC oracle, compare the linear model.

    python3 demos/01_feeder_and_linear_model.py [case]
"""

import sys

import numpy as np

from pfpcmc.measgen import build_measurement_matrix, make_scenario
from pfpcmc.netmodel import build_admittance, build_linear_model, load_case, solve_ac_power_flow

name = sys.argv[1] if len(sys.argv) > 1 else "case141"
case = load_case(name)
print(f"{name}: {case.n + 1} buses, base {case.base_mva} MVA, total load {case.load.sum() * case.base_mva:.2f} MVA")

part = build_admittance(case)
lpf = build_linear_model(part, case.v0)
ac = solve_ac_power_flow(case, part)
print(f"AC oracle: {ac.iterations} fixed-point iterations, residual {ac.residual:.1e}")
print(f"lowest voltage {np.abs(ac.v).min():.4f} pu, substation supplies {ac.s0 * case.base_mva:.3f} MVA")

# the linear model is exact at zero load and degrades with loading
for t in (0.25, 0.5, 1.0):
    c = case.scaled(t)
    a = solve_ac_power_flow(c, build_admittance(c))
    err = np.abs(lpf.voltage(a.s) - a.v).max()
    mag = np.abs(lpf.magnitude(a.s) - np.abs(a.v)).max()
    print(f"loading {t:4.2f}: max phasor error {err:.2e} pu, max |v| error {mag:.2e} pu")

# the measurement matrix is tall and numerically low rank
M = build_measurement_matrix(ac.v, ac.s)
sv = np.linalg.svd(M, compute_uv=False)
print("singular values of M:", np.array2string(sv, precision=3))

scn = make_scenario(case, fad=0.32, seed=0)
counts = np.bincount(scn.meas.psi[:, 1], minlength=5)
print(f"FAD 0.32 keeps {len(scn.meas.psi)} of {M.size} entries; per column {counts.tolist()}")
