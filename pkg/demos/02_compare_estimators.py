"""Run every estimator on one 141-bus scenario and print accuracy and time.

mc and m2 ignore the network; m1 and the projection family (full, s1) use
the linear power-flow tolerances.  s2 is left out here (see demo 03).

    python3 demos/02_compare_estimators.py [seed]
"""

import sys

from pfpcmc.bench import EstimatorConfig, ScenarioConfig, estimate

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
scn = ScenarioConfig("case141", fad=0.32, seed=seed).build()
print(f"141-bus feeder, FAD 0.32, seed {seed}: {len(scn.meas.psi)} noisy readings\n")
print(f"{'method':8s} {'status':10s} {'|v| MAPE %':>11s} {'angle MAPE %':>13s} {'time s':>8s}")
for method in ("mc", "m1", "m2", "full", "s1"):
    res = estimate(scn, EstimatorConfig.for_method(method))
    print(f"{method:8s} {res.status:10s} {res.mape_vmag:11.3f} {res.mape_angle:13.2f} {res.wall_time:8.2f}")

# the s1 objective splits into data fit, trace and power-flow misfit
res = estimate(scn, EstimatorConfig.for_method("s1"))
print("\ns1 objective terms:", {k: round(v, 3) for k, v in res.terms.items()})
