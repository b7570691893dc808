import logging
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from causalpir.core import (DomainError, FiniteDomain, LinearConstraint, ProbTable, Relation, entropy,
                            marginalize, relation_to_constraint)
from causalpir.maxent import (CONVERGED, INFEASIBLE, conditional_maxent, exponential_form_error, feasibility,
                              maxent)
from causalpir.pir import causal_pir_joint, device_relation

DIE = FiniteDomain([("X", (1, 2, 3, 4, 5, 6))])


def dual_oracle(fs, targets, sweeps=10000, tol=1e-10):
    """Cyclic coordinate descent on the dual: one 1-D root find per multiplier."""
    fs = [np.asarray(f, float).ravel() for f in fs]
    lam = np.zeros(len(fs))

    def dist(lam):
        e = -sum(l * f for l, f in zip(lam, fs))
        w = np.exp(e - e.max())
        return w / w.sum()

    for _ in range(sweeps):
        for j, (f, c) in enumerate(zip(fs, targets)):
            def g(t, j=j):
                trial = lam.copy()
                trial[j] = t
                return float(dist(trial) @ fs[j] - c)
            lam[j] = brentq(g, -50, 50, xtol=1e-15)
        p = dist(lam)
        if max(abs(p @ f - c) for f, c in zip(fs, targets)) < tol:
            return p
    raise AssertionError("oracle did not reach its residual tolerance")


def die_mean(target=4.5):
    return [LinearConstraint(DIE, np.arange(1, 7), target, 0.0, "E[X]")]


def test_unconstrained_is_uniform():
    d = FiniteDomain([("Z", (0, 1, 2, 3))])
    sol = maxent(d, [])
    assert sol.converged
    assert np.allclose(sol.distribution.array(), 0.25, atol=1e-15)


def test_binary_mean_pins_distribution():
    d = FiniteDomain([("X", (0, 1))])
    sol = maxent(d, [LinearConstraint(d, d.grid("X"), 0.3)])
    assert sol.distribution.array() == pytest.approx([0.7, 0.3], abs=1e-12)


def test_die_matches_coordinate_descent_oracle():
    cons = die_mean()
    sol = maxent(DIE, cons)
    oracle = dual_oracle([c.f for c in cons], [4.5])
    assert sol.status == CONVERGED
    assert max(sol.residuals.values()) <= 1e-8
    assert np.max(np.abs(sol.distribution.array() - oracle)) <= 1e-6
    assert sol.distribution.array() == pytest.approx([0.054, 0.079, 0.114, 0.165, 0.240, 0.348], abs=1e-3)
    assert exponential_form_error(sol, cons) <= 1e-8
    assert sol.entropy == pytest.approx(sol.dual_value, abs=1e-7)


def test_two_constraints_match_oracle():
    cons = [LinearConstraint(DIE, np.arange(1, 7), 3.0, 0.0, "E[X]"),
            LinearConstraint(DIE, np.arange(1, 7) ** 2, 12.0, 0.0, "E[X^2]")]
    sol = maxent(DIE, cons)
    oracle = dual_oracle([c.f for c in cons], [3.0, 12.0])
    assert sol.converged
    assert np.max(np.abs(sol.distribution.array() - oracle)) <= 1e-6
    assert exponential_form_error(sol, cons) <= 1e-8


def test_infeasible_mean():
    d = FiniteDomain([("X", (0, 1))])
    sol = maxent(d, [LinearConstraint(d, d.grid("X"), 2.0)])
    assert sol.status == INFEASIBLE and sol.distribution is None
    assert sol.feasibility.min_squared_residual == pytest.approx(1.0, abs=1e-6)


def test_boundary_target_uses_face():
    d = FiniteDomain([("X", (0, 1))])
    sol = maxent(d, [LinearConstraint(d, d.grid("X"), 1.0)])
    assert sol.converged
    assert sol.distribution.array() == pytest.approx([0.0, 1.0], abs=1e-12)


def test_epsilon_relaxes_to_feasible_target():
    d = FiniteDomain([("X", (0, 1))])
    sol = maxent(d, [LinearConstraint(d, d.grid("X"), 1.2, epsilon=0.3)])
    assert sol.converged
    # nearest attainable target inside the band is the closest one to 1.2
    assert sol.distribution.array() == pytest.approx([0.0, 1.0], abs=1e-9)
    # uniform already lies inside [0.2, 0.8] but the dual phase pins the target itself
    sol2 = maxent(d, [LinearConstraint(d, d.grid("X"), 0.5, epsilon=0.3)])
    assert sol2.distribution.array() == pytest.approx([0.5, 0.5], abs=1e-12)


def test_feasibility_examples():
    d = FiniteDomain([("X", (0, 1))])
    ok = feasibility(d, [LinearConstraint(d, d.grid("X"), 0.3)])
    assert ok.feasible
    assert abs(ok.witness.array() @ np.array([0, 1]) - 0.3) <= 1e-9
    bad = feasibility(d, [LinearConstraint(d, d.grid("X"), 2.0)])
    assert not bad.feasible and bad.min_squared_residual > 1e-16
    par = FiniteDomain([("X1", (-1, 1)), ("X2", (-1, 1))])
    rep = feasibility(par, [LinearConstraint(par, par.grid("X1") * par.grid("X2"), 1.0)])
    assert rep.feasible
    w = rep.witness.array()
    assert w[0, 1] + w[1, 0] <= 1e-9


def test_support_constraint_restricts_domain():
    rel = device_relation()
    sol = maxent(rel.domain, [relation_to_constraint(rel)])
    assert sol.converged
    assert sol.distribution.equals(ProbTable.uniform_over(rel).to_float(), atol=1e-12)
    assert sol.multipliers == {}


def test_duplicate_constraint_dropped_with_warning(caplog):
    cons = die_mean() + [LinearConstraint(DIE, 2 * np.arange(1, 7), 9.0, 0.0, "E[2X]")]
    with caplog.at_level(logging.WARNING, logger="causalpir.maxent"):
        sol = maxent(DIE, cons)
    assert sol.converged and sol.dropped == ["E[2X]"]
    assert "linearly dependent" in caplog.text
    assert np.allclose(sol.distribution.array(), maxent(DIE, die_mean()).distribution.array(), atol=1e-10)


def test_constraint_on_other_domain_rejected():
    other = FiniteDomain([("Y", (1, 2))])
    with pytest.raises(DomainError):
        maxent(DIE, [LinearConstraint(other, np.ones(2), 1.0)])


# --- properties --------------------------------------------------------------------

def test_maximality_against_feasible_perturbations():
    cons = die_mean()
    sol = maxent(DIE, cons)
    p = sol.distribution.array()
    h = entropy(sol.distribution)
    A = np.vstack([np.ones(6), np.arange(1, 7)])
    # null space of the constraint rows keeps every perturbation feasible
    _, _, vt = np.linalg.svd(A)
    basis = vt[2:]
    rng = np.random.default_rng(0)
    for _ in range(1000):
        d = rng.normal(size=basis.shape[0]) @ basis
        t = rng.uniform(0, 1) * 0.99 / max(1e-12, np.max(-d / p))
        q = p + t * d
        q = np.clip(q, 0, None)
        q /= q.sum()
        assert entropy(ProbTable(DIE, q)) <= h + 1e-8


def test_permutation_equivariance():
    rng = np.random.default_rng(3)
    f = rng.normal(size=6)
    g = rng.normal(size=6)
    base = [LinearConstraint(DIE, f, 0.1, 0.0, "f"), LinearConstraint(DIE, g, -0.2, 0.0, "g")]
    p = maxent(DIE, base).distribution.array()
    perm = rng.permutation(6)
    dom = FiniteDomain([("X", tuple(np.array(DIE.values("X"))[perm].tolist()))])
    permuted = [LinearConstraint(dom, g[perm], -0.2, 0.0, "g"), LinearConstraint(dom, f[perm], 0.1, 0.0, "f")]
    q = maxent(dom, permuted).distribution.array()
    assert np.allclose(q, p[perm], atol=1e-10)


def test_adding_constraints_never_raises_entropy():
    cons = []
    last = math.inf
    for k, (f, c) in enumerate([(np.arange(1, 7), 4.0), (np.arange(1, 7) ** 2, 18.0), ([1, 0, 0, 0, 0, 0], 0.05)]):
        cons.append(LinearConstraint(DIE, np.asarray(f, float), c, 0.0, f"c{k}"))
        sol = maxent(DIE, cons)
        assert sol.converged
        assert sol.entropy <= last + 1e-9
        last = sol.entropy


# --- conditional maxent --------------------------------------------------------------

D33 = FiniteDomain([("X", (1, 2, 3)), ("Y", (1, 2, 3))])


def test_conditional_no_constraints_uniform_rows():
    px = ProbTable.from_dict(D33.sub(["X"]), {(1,): 0.5, (2,): 0.5}, exact=False)
    res = conditional_maxent(D33, [], px)
    assert np.all(res.conditional.array() == 1 / 3)


def test_conditional_device_rows():
    rel = device_relation()
    px = ProbTable.uniform(D33.sub(["X"]), exact=False)
    res = conditional_maxent(D33, [relation_to_constraint(rel)], px)
    rows = res.conditional.array()
    assert rows == pytest.approx(np.array([[0, 0.5, 0.5], [1, 0, 0], [1, 0, 0]]), abs=1e-12)
    assert res.solution.distribution.equals(causal_pir_joint(rel, "X").to_float(), atol=1e-12)


def test_conditional_zero_mass_rows_uniform():
    rel = device_relation()
    px = ProbTable.from_dict(D33.sub(["X"]), {(1,): 1.0}, exact=False)
    res = conditional_maxent(D33, [relation_to_constraint(rel)], px)
    assert res.conditional.row((2,)) == pytest.approx([1 / 3] * 3)


def test_conditional_parity_markov_infeasible():
    d = FiniteDomain([("X1", (-1, 1)), ("X2", (-1, 1))])
    c = LinearConstraint(d, d.grid("X1") * d.grid("X2"), 1.0)
    res = conditional_maxent(d, [c], ProbTable.uniform(d.sub(["X1"]), exact=False), parents=[])
    assert res.conditional is None and res.solution.status == INFEASIBLE


def test_conditional_moment_shared_multipliers():
    d = FiniteDomain([("X", (0, 1)), ("Y", (0, 1, 2))])
    c = LinearConstraint(d, d.grid("Y"), 1.3, 0.0, "E[Y]")
    px = ProbTable.from_dict(d.sub(["X"]), {(0,): 0.25, (1,): 0.75}, exact=False)
    res = conditional_maxent(d, [c], px)
    assert res.solution.converged
    assert c.violation(res.solution.distribution) <= 1e-10
    rows = res.conditional.array()
    # with a feature independent of x both rows share one exponential family member
    assert np.allclose(rows[0], rows[1], atol=1e-10)
    lam = res.solution.multipliers["E[Y]"]
    model = np.exp(-lam * np.arange(3))
    assert np.allclose(rows[0], model / model.sum(), rtol=1e-8)


def test_conditional_keeps_fixed_marginal():
    rel = Relation(D33, frozenset({(1, 1), (1, 2), (2, 2), (2, 3), (3, 3), (3, 1)}))
    px = ProbTable.from_dict(D33.sub(["X"]), {(1,): 0.2, (2,): 0.3, (3,): 0.5}, exact=False)
    res = conditional_maxent(D33, [relation_to_constraint(rel)], px)
    assert marginalize(res.solution.distribution, ["X"]).equals(px, atol=1e-12)
