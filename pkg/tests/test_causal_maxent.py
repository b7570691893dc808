import math
import time
from fractions import Fraction

import numpy as np
import pytest

from causalpir.causal_maxent import (GENERAL, INFEASIBLE, MARKOV, NON_UNIQUE, OK, Dag, appendix_relation,
                                     appendix_timeseries_compare, causal_maxent_bivariate, causal_maxent_dag,
                                     chain_problem, normalize_scope, order_sensitivity, parity_problem,
                                     sun_lauderdale_problem)
from causalpir.core import (DomainError, FiniteDomain, LinearConstraint, ProbTable, SizeCapError, entropy,
                            exact_entropy, LogCombination, marginalize, relation_to_constraint)
from causalpir.counting import concentration_census
from causalpir.maxent import maxent
from causalpir.pir import causal_pir_joint, device_relation

F = Fraction


def strict_local_maxima(p):
    q = np.concatenate([[-np.inf], np.asarray(p, float), [-np.inf]])
    return int(np.sum((q[1:-1] > q[:-2]) & (q[1:-1] > q[2:])))


# --- DAG plumbing --------------------------------------------------------------------

def test_dag_validation_and_orders():
    dag = Dag(("A", "B", "C"), (("A", "C"), ("B", "C")))
    assert dag.parents("C") == ["A", "B"]
    assert dag.default_order() == ["A", "B", "C"]
    assert dag.is_topological(["B", "A", "C"]) and not dag.is_topological(["C", "A", "B"])
    assert dag.nondescendants("A") == ["B"]
    with pytest.raises(DomainError):
        Dag(("A", "B"), (("A", "B"), ("B", "A")))
    with pytest.raises(DomainError):
        Dag(("A",), (("A", "Z"),))
    assert Dag.from_dict(dag.to_dict()) == dag


def test_scope_aliases():
    assert normalize_scope("general") == GENERAL
    assert normalize_scope("markov-respecting") == MARKOV
    with pytest.raises(DomainError):
        normalize_scope("other")


def test_non_topological_order_rejected():
    domain, cons, dag = chain_problem(3)
    with pytest.raises(DomainError):
        causal_maxent_dag(domain, cons, dag, order=["X2", "X1", "X3"])


# --- bivariate ---------------------------------------------------------------------------

def test_bivariate_device_equals_causal_pir():
    rel = device_relation()
    cons = [relation_to_constraint(rel)]
    exact = causal_maxent_bivariate(rel.domain, cons, "X")
    assert exact.ok and exact.joint.equals(causal_pir_joint(rel, "X"))
    numeric = causal_maxent_bivariate(rel.domain, cons, "X", method="numeric")
    assert numeric.ok and numeric.joint.equals(causal_pir_joint(rel, "X").to_float(), atol=1e-9)


def test_bivariate_unconstrained_is_uniform():
    d = FiniteDomain([("X", (0, 1, 2)), ("Y", (0, 1))])
    fit = causal_maxent_bivariate(d, [], "X")
    assert fit.ok and fit.joint.equals(ProbTable.uniform(d).to_float(), atol=1e-12)


def test_sun_lauderdale_causal_shape():
    domain, cons = sun_lauderdale_problem()
    fit = causal_maxent_bivariate(domain, cons, "X")
    assert fit.ok
    px = marginalize(fit.joint, ["X"]).array()
    assert strict_local_maxima(px) == 1
    cond = fit.joint.array()[:, 1] / px
    assert np.all(np.diff(cond) > 0)
    assert max(c.violation(fit.joint) for c in cons) <= 1e-8


def test_sun_lauderdale_stronger_coupling_separates_shapes():
    # with E[XY] = 0.4 the classical marginal splits into two modes while the causal one stays single
    domain, cons = sun_lauderdale_problem(mean_xy=0.4)
    classical = marginalize(maxent(domain, cons).distribution, ["X"]).array()
    causal = marginalize(causal_maxent_bivariate(domain, cons, "X").joint, ["X"]).array()
    assert strict_local_maxima(classical) == 2
    assert strict_local_maxima(causal) == 1


def test_bivariate_needs_two_variables():
    domain, cons, _ = chain_problem(3)
    with pytest.raises(DomainError):
        causal_maxent_bivariate(domain, cons, "X1")


# --- DAG examples ----------------------------------------------------------------------

def test_chain_words():
    domain, cons, dag = chain_problem(3)
    fit = causal_maxent_dag(domain, cons, dag)
    assert fit.status == OK
    assert fit.joint.as_dict() == {(0, 0, 0): F(1, 2), (1, 0, 0): F(1, 4), (1, 1, 0): F(1, 8),
                                   (1, 1, 1): F(1, 8)}
    # 1.75 bits against 2 bits, compared as exact log-combinations
    log2 = LogCombination.log_of(F(2))
    assert exact_entropy(fit.joint) == log2.scale(F(7, 4))
    classical = maxent(domain, cons).distribution
    assert exact_entropy(ProbTable.uniform_over(classical.support())) == log2.scale(2)
    assert entropy(classical) == pytest.approx(2 * math.log(2), abs=1e-12)


@pytest.mark.parametrize("n", [2, 4, 5])
def test_chain_general_n(n):
    domain, cons, dag = chain_problem(n)
    fit = causal_maxent_dag(domain, cons, dag)
    words = fit.joint.as_dict()
    assert len(words) == n + 1
    ones = sorted(words.items(), key=lambda kv: -sum(kv[0]))
    expected = [F(1, 2 ** n)] + [F(1, 2 ** j) for j in range(n, 0, -1)]
    assert [w for _, w in ones] == expected


def test_chain_numeric_matches_exact():
    domain, cons, dag = chain_problem(3)
    exact = causal_maxent_dag(domain, cons, dag, method="exact")
    numeric = causal_maxent_dag(domain, cons, dag, method="numeric")
    assert numeric.ok
    assert numeric.joint.equals(exact.joint.to_float(), atol=1e-9)


def test_parity_general_scope():
    domain, cons, dag = parity_problem()
    fit = causal_maxent_dag(domain, cons, dag)
    assert fit.status == INFEASIBLE and fit.failed_step == 2
    assert fit.describe() == "infeasible at step 2"
    first = fit.steps[0]
    assert first.node == "X1"
    assert first.conditional.array() == pytest.approx([0.5, 0.5], abs=1e-9)


def test_parity_markov_scope():
    domain, cons, dag = parity_problem()
    fit = causal_maxent_dag(domain, cons, dag, feasibility_scope=MARKOV)
    assert fit.status == NON_UNIQUE and fit.joint is None
    masses = sorted(tuple(int(v) for v in p.support().sorted_members()[0]) for p in fit.alternatives)
    assert masses == [(-1, -1), (1, 1)]
    for p in fit.alternatives:
        assert len(p.support()) == 1
        assert np.max(p.array()) == pytest.approx(1.0, abs=1e-9)
    assert fit.markov_residual(dag) <= 1e-8


def test_markov_scope_unique_on_chain():
    domain, cons, dag = chain_problem(3)
    fit = causal_maxent_dag(domain, cons, dag, feasibility_scope=MARKOV)
    assert fit.status == OK
    exact = causal_maxent_dag(domain, cons, dag)
    assert fit.joint.equals(exact.joint.to_float(), atol=1e-6)


def test_markov_residual_and_factorization():
    domain, cons, dag = chain_problem(4)
    fit = causal_maxent_dag(domain, cons, dag)
    assert fit.markov_residual(dag) <= 1e-8
    # the joint is the product of the per-step conditionals
    prod = np.ones(domain.shape, dtype=object)
    for step in fit.steps:
        axes = domain.axes(step.parents + [step.node])
        for point in domain.points():
            idx = domain.index_of(point)
            given = tuple(point[a] for a in axes[:-1])
            row = step.conditional.row(given) if step.parents else step.conditional.rows
            prod[idx] = prod[idx] * row[domain.value_index(step.node, point[axes[-1]])]
    assert np.all(prod == fit.joint.weights)


def test_two_node_dag_equals_bivariate():
    domain, cons = sun_lauderdale_problem(points=21)
    a = causal_maxent_bivariate(domain, cons, "X")
    b = causal_maxent_dag(domain, cons, Dag(("X", "Y"), (("X", "Y"),)))
    assert a.joint.equals(b.joint, atol=1e-9)


def test_decoupled_constraints_reproduce_marginal_maxent():
    d = FiniteDomain([("X", (1, 2, 3, 4)), ("Y", (0, 1, 2))])
    cx = LinearConstraint(d, d.grid("X"), 2.2, 0.0, "E[X]")
    cy = LinearConstraint(d, d.grid("Y"), 1.5, 0.0, "E[Y]")
    fit = causal_maxent_bivariate(d, [cx, cy], "X")
    assert fit.ok
    dx = d.sub(["X"])
    plain = maxent(dx, [LinearConstraint(dx, np.arange(1, 5), 2.2, 0.0, "E[X]")]).distribution
    assert marginalize(fit.joint, ["X"]).equals(plain, atol=1e-8)


def test_census_expectation_equals_causal_fit():
    rel = device_relation()
    fit = causal_maxent_bivariate(rel.domain, [relation_to_constraint(rel)], "X")
    for n in (1, 3, 6):
        assert concentration_census(rel, "X", n).expected["causal"].equals(fit.joint)


def test_epsilon_rescues_parity_mismatch():
    domain, cons, dag = parity_problem()
    relaxed = [c.with_epsilon(1.0) for c in cons]
    fit = causal_maxent_dag(domain, relaxed, dag)
    assert fit.ok
    assert fit.joint.equals(ProbTable.uniform(domain).to_float(), atol=1e-8)


# --- order sensitivity -----------------------------------------------------------------------

def test_order_sensitivity_unique_order():
    domain, cons, dag = chain_problem(3)
    rep = order_sensitivity(domain, cons, dag)
    assert rep.orders == [["X1", "X2", "X3"]] and rep.max_tv == 0.0


def test_order_sensitivity_decoupled():
    d = FiniteDomain([("A", (0, 1, 2)), ("B", (0, 1))])
    cons = [LinearConstraint(d, d.grid("A"), 1.4, 0.0, "E[A]"), LinearConstraint(d, d.grid("B"), 0.2, 0.0, "E[B]")]
    rep = order_sensitivity(d, cons, Dag(("A", "B")))
    assert len(rep.orders) == 2 and rep.statuses == ["ok", "ok"]
    assert rep.max_tv <= 1e-9


def test_order_sensitivity_parity_fails_symmetrically():
    domain, cons, dag = parity_problem()
    rep = order_sensitivity(domain, cons, dag)
    assert rep.statuses == ["infeasible at step 2", "infeasible at step 2"]


def test_order_sensitivity_cap():
    d = FiniteDomain([(f"V{i}", (0, 1)) for i in range(8)])
    with pytest.raises(SizeCapError):
        order_sensitivity(d, [], Dag(d.names))


# --- appendix ---------------------------------------------------------------------------------

def test_appendix_comparison():
    assert len(appendix_relation()) == 13
    rep = appendix_timeseries_compare()
    assert rep.admissible == 13
    assert list(rep.uniform_marginal.weights) == [F(5, 13), F(4, 13), F(4, 13)]
    assert list(rep.sequential_marginal.weights) == [F(1, 3)] * 3
    assert rep.sequential_fit.ok


@pytest.mark.slow
def test_sun_lauderdale_runtime():
    domain, cons = sun_lauderdale_problem()
    t = time.perf_counter()
    causal_maxent_bivariate(domain, cons, "X")
    maxent(domain, cons)
    assert time.perf_counter() - t < 30
