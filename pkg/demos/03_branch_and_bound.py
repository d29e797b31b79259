"""Follow the S2 search on a small feeder and show its trace.

Each node adds secant cuts on ``U'z`` for the worst eigen-direction of
``Y - U U'``; the log shows bounds rising and the projection residual falling.

    python3 demos/03_branch_and_bound.py
"""

import io
import json

from pfpcmc.bench import EstimatorConfig, ScenarioConfig, estimate
from pfpcmc.bnb import secant_cut

cut = secant_cut([1.0, 0.0], (-0.2, 0.6))
print("secant over [-0.2, 0.6]:", [(t, round(t * t, 3), round(cut.secant(t), 3)) for t in (-0.2, 0.2, 0.6)])

scn = ScenarioConfig("case4", fad=0.4, seed=1).build()
buf = io.StringIO()
s1 = estimate(scn, EstimatorConfig.for_method("s1"))
s2 = estimate(scn, EstimatorConfig.for_method("s2", max_nodes=20), trace=buf)
print(f"\ns1: objective {s1.objective:.4f}, |v| MAPE {s1.mape_vmag:.3f}%")
print(f"s2: objective {s2.objective:.4f}, |v| MAPE {s2.mape_vmag:.3f}%, {s2.extra['nodes']} nodes, {s2.extra['search_status']}")

print("\nnode parent depth    bound   residual action")
for line in buf.getvalue().splitlines()[:15]:
    r = json.loads(line)
    bound = r.get("bound")
    print(
        f"{r['node']:4d} {str(r.get('parent')):>6s} {r.get('depth', 0):5d} "
        f"{(bound if bound is not None else float('nan')):8.4f} {r.get('residual') or 0:10.2e} {r['action']}"
    )
