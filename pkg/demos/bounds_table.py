"""Certificates, stepsizes and iteration bounds for a few configurations.

Same rows as ``unisgd bound``; the closed-form counts and the general
theorem-driven counts agree whenever the certificate is analytic.
"""
from unisgd import harness as H

CONFIGS = [
    dict(problem="sinpl", x0="3", epsilon=1e-6),
    dict(problem="lsq:d=10,m=1,n=64,seed=6", method="lsvrg:1,1/64"),
    dict(problem="lsq:d=8,m=4,n=16,het=0.5,seed=3", method="lsvrg:1,1/4", framework="diana",
         compressor="randk:2", epsilon=5e-2),
    dict(problem="lsq:d=8,m=4,n=16,het=0.5,seed=3", method="gd", framework="dc",
         compressor="randk:2", epsilon=5e-2),
]

for c in CONFIGS:
    rows = H.bound_table(H.RunConfig(**c))
    w = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"{k:<{w}}  {v}")
    print()
