"""Causal and symmetric insufficient-reason priors over finite relations.

Modules:

* :mod:`causalpir.core`: finite domains, exact and floating tables, entropies.
* :mod:`causalpir.pir`: causal and symmetric PIR joints, likelihood-based direction calls.
* :mod:`causalpir.maxent`: classical and conditional maximum entropy under linear constraints.
* :mod:`causalpir.causal_maxent`: sequential entropy maximization along a DAG.
* :mod:`causalpir.counting`: exact multinomial counts and concentration census.
* :mod:`causalpir.igci`: fat-pen relations and slope-based direction scores.
* :mod:`causalpir.cli`: scenario files and the ``causalpir`` command.
"""
from .causal_maxent import (CausalFitResult, Dag, appendix_timeseries_compare, causal_maxent_bivariate,
                            causal_maxent_dag, order_sensitivity)
from .core import (ConditionalTable, DomainError, FiniteDomain, LinearConstraint, ProbTable, Relation,
                   SizeCapError, entropy, marginalize, mutual_information, relation_to_constraint)
from .counting import concentration_census, count_realizations, log_count_entropy_gap
from .igci import MonotoneFunction, discrete_pir_score, fat_pen, igci_score, limit_consistency
from .maxent import conditional_maxent, feasibility
from .pir import (Direction, causal_pir_joint, infer_direction, pearl_puzzle, pir_likelihood,
                  symmetric_pir_joint)

__version__ = "0.1.0"

__all__ = [
    "CausalFitResult", "ConditionalTable", "Dag", "Direction", "DomainError", "FiniteDomain",
    "LinearConstraint", "MonotoneFunction", "ProbTable", "Relation", "SizeCapError",
    "appendix_timeseries_compare", "causal_maxent_bivariate", "causal_maxent_dag", "causal_pir_joint",
    "concentration_census", "conditional_maxent", "count_realizations", "discrete_pir_score", "entropy",
    "fat_pen", "feasibility", "igci_score", "infer_direction", "limit_consistency", "log_count_entropy_gap",
    "marginalize", "mutual_information", "order_sensitivity", "pearl_puzzle", "pir_likelihood",
    "relation_to_constraint", "symmetric_pir_joint",
]
