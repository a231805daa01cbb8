"""Compressed methods at the optimum of a heterogeneous problem.

DC (compress the raw local gradients) keeps a second moment of roughly
omega/m^2 * sum ||grad f_i||^2 even at x*.  DIANA compresses differences to
learned shifts, so its aggregate goes to zero once the shifts converge.
"""
import numpy as np

from unisgd import federated as F
from unisgd.compression import Compressor
from unisgd.problems import parse_problem
from unisgd.rng import stream

obj = parse_problem("lsq:d=8,m=4,n=16,het=0.8,seed=3")
comp = Compressor("randk", obj.d, k=1)
x = obj.x_star
floor = comp.omega / obj.m ** 2 * np.sum(obj.worker_grads(x) ** 2)

cl = F.build_cluster(obj, "gd", comp, x)
dc = [np.sum(F.dc_round(cl, x, stream(0, "compress", 0, r))[0] ** 2) for r in range(5000)]
print(f"DC    E|g|^2 at x* = {np.mean(dc):.4f}   (predicted floor {floor:.4f})")

cl = F.build_cluster(obj, "gd", comp, x)
for r in range(201):
    g, _, _ = F.diana_round(cl, x, 1 / (1 + comp.omega), stream(0, "compress", 1, r))
    if r % 40 == 0:
        print(f"DIANA round {r:3d}: |g| = {np.linalg.norm(g):.3e}")
