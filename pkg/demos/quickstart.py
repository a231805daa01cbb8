"""Run GD, L-SVRG and SAGA on one least-squares problem and compare with the bound.

    python3 demos/quickstart.py
"""
from unisgd import harness as H

PROBLEM = "lsq:d=10,m=1,n=64,seed=6"

for method in ("gd", "lsvrg:1,1/64", "saga:1", "saga:16"):
    cfg = H.RunConfig(problem=PROBLEM, method=method, epsilon=1e-2, x0="random:3")
    rep = H.verify_bound(cfg)
    print(f"{method:>14}: {rep.summary()}")

# the trace is a list of records; write it with export_csv for plotting elsewhere
tr = H.run(H.RunConfig(problem=PROBLEM, method="saga:16", epsilon=1e-4), write=False)
print("\n".join(",".join(r.row()) for r in tr[-3:]))
