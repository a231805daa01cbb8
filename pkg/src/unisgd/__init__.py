"""Unified stochastic gradient estimators with compressed federated composition.

Modules
-------
problems      finite-sum test objectives with exact constants
compression   unbiased omega-compressors
estimators    GD, SGD, L-SVRG, SAGA and their recursion certificates
federated     DC and DIANA rounds and certificate composition
theory        stepsizes, iteration bounds and closed-form counts
harness       end-to-end runs, CSV traces, bound checks and sweeps
"""
from .compression import Compressor, parse_compressor, verify_compressor
from .estimators import UnifiedParams, certificate, parse_method, verify_assumption1
from .federated import compose_dc, compose_diana, dc_round, diana_round, parse_framework
from .harness import RunConfig, run, verify_bound
from .problems import FiniteSumObjective, make_heterogeneous_lsq, make_sin_pl, parse_problem
from .theory import (check_prop1, corollary_bound, thm1_iters, thm1_stepsize, thm2_iters,
                     thm2_schedule, thm5_constant_pl)

__version__ = "0.1.0"

__all__ = [
    "Compressor", "parse_compressor", "verify_compressor",
    "UnifiedParams", "certificate", "parse_method", "verify_assumption1",
    "compose_dc", "compose_diana", "dc_round", "diana_round", "parse_framework",
    "RunConfig", "run", "verify_bound",
    "FiniteSumObjective", "make_heterogeneous_lsq", "make_sin_pl", "parse_problem",
    "check_prop1", "corollary_bound", "thm1_iters", "thm1_stepsize", "thm2_iters",
    "thm2_schedule", "thm5_constant_pl",
]
