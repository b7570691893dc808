"""Maximum entropy under linear expectation constraints on finite domains.

Both solvers minimize the convex dual.  For the plain problem it is

    D(lam) = log sum_x exp(-sum_j lam_j (f_j(x) - c_j))

and for the conditional problem with a fixed cause marginal ``p`` it is the
``p``-weighted sum of per-row log-partition functions with shared
multipliers.  Support restrictions coming from relations are applied by
removing points before the dual is formed, and points that no feasible
distribution can charge are removed by linear programming first, so the
dual always has a finite minimizer.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from . import _lp
from .core import (ConditionalTable, DomainError, FiniteDomain, LinearConstraint,
                   ProbTable, entropy)

log = logging.getLogger(__name__)

GRAD_TOL = 1e-10
MAX_ITERS = 500
COND_LIMIT = 1e12
RANK_TOL = 1e-10
FEASIBLE_TOL = 1e-16

CONVERGED = "converged"
MAX_ITERS_STATUS = "max-iters"
INFEASIBLE = "infeasible"


@dataclass
class FeasibilityReport:
    feasible: bool
    witness: ProbTable | None = None
    min_squared_residual: float = 0.0


@dataclass
class MaxEntSolution:
    distribution: ProbTable | None
    multipliers: dict[str, float]
    log_partition: float | np.ndarray
    dual_value: float
    residuals: dict[str, float]
    iterations: int
    status: str
    feasibility: FeasibilityReport | None = None
    dropped: list[str] = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == CONVERGED

    @property
    def entropy(self) -> float:
        return entropy(self.distribution) if self.distribution is not None else float("nan")


def _check_domain(domain: FiniteDomain, constraints: Sequence[LinearConstraint]) -> None:
    for c in constraints:
        if c.domain != domain:
            raise DomainError(f"constraint {c.id!r} is defined on {c.domain}, not {domain}")


def support_mask(domain: FiniteDomain, constraints: Sequence[LinearConstraint]) -> np.ndarray:
    mask = np.ones(domain.shape, dtype=bool)
    for c in constraints:
        if c.relation is not None:
            mask &= c.relation.mask()
    return mask


def _split_constraints(constraints):
    support = [c for c in constraints if c.is_support]
    moments = [c for c in constraints if not c.is_support]
    return support, moments


def _ids(constraints) -> list[str]:
    return [c.id or f"c{i}" for i, c in enumerate(constraints)]


def _violations(p: ProbTable, constraints) -> dict[str, float]:
    return {cid: c.violation(p) for cid, c in zip(_ids(constraints), constraints)}


def _min_squared_residual(W, c, eps, n) -> float:
    """min over the simplex of sum_j max(0, |W x - c| - eps)^2."""
    def obj(x):
        r = np.maximum(0.0, np.abs(W @ x - c) - eps)
        return float(r @ r)

    def grad(x):
        d = W @ x - c
        r = np.maximum(0.0, np.abs(d) - eps) * np.sign(d)
        return 2.0 * W.T @ r

    x0 = np.full(n, 1.0 / n)
    res = minimize(obj, x0, jac=grad, method="SLSQP", bounds=[(0, 1)] * n,
                   constraints=[{"type": "eq", "fun": lambda x: x.sum() - 1.0, "jac": lambda x: np.ones(n)}],
                   options={"ftol": 1e-15, "maxiter": 1000})
    return float(res.fun)


def feasibility(domain: FiniteDomain, constraints: Sequence[LinearConstraint]) -> FeasibilityReport:
    """Decide whether some distribution meets every constraint within its epsilon."""
    _check_domain(domain, constraints)
    mask = support_mask(domain, constraints).ravel()
    _, moments = _split_constraints(constraints)
    n = int(mask.sum())
    if n == 0:
        return FeasibilityReport(False, None, float("inf"))
    W = np.array([c.f.ravel()[mask] for c in moments]).reshape(len(moments), n)
    c = np.array([m.target for m in moments])
    eps = np.array([m.epsilon for m in moments])
    poly = _lp.Polytope(np.ones((1, n)), np.ones(1), W, c - eps, c + eps)
    res = poly.solve(np.zeros(n))
    if res is None:
        return FeasibilityReport(False, None, _min_squared_residual(W, c, eps, n))
    x = np.clip(res.x, 0.0, None)
    x /= x.sum()
    full = np.zeros(domain.size)
    full[mask] = x
    witness = ProbTable(domain, full)
    r = np.maximum(0.0, np.abs(W @ x - c) - eps)
    return FeasibilityReport(True, witness, float(r @ r))


def _independent_rows(A: np.ndarray, keep_first: int, tol: float = RANK_TOL) -> list[int]:
    """Greedy selection of linearly independent rows; the first ``keep_first`` rows are kept."""
    chosen: list[int] = list(range(keep_first))
    basis = A[:keep_first]
    rank = np.linalg.matrix_rank(basis, tol=tol) if keep_first else 0
    for i in range(keep_first, A.shape[0]):
        trial = np.vstack([basis, A[i]]) if basis.size else A[i:i + 1]
        scale = max(1.0, np.abs(trial).max())
        r = np.linalg.matrix_rank(trial / scale, tol=tol)
        if r > rank:
            chosen.append(i)
            basis, rank = trial, r
    return chosen


def _newton_dual(G: np.ndarray, row_weight: np.ndarray, mask: np.ndarray,
                 tol: float = GRAD_TOL, max_iter: int = MAX_ITERS):
    """Minimize sum_r w_r log sum_t exp(-G[r, t] . lam) over ``lam``.

    ``G`` has shape (rows, outcomes, constraints) and is already centred at
    the targets; ``mask`` marks usable outcomes.  Returns
    ``(lam, q, log_z, dual, iterations, converged)``.
    """
    R, T, m = G.shape
    lam = np.zeros(m)

    def evaluate(lam):
        a = np.where(mask, -(G @ lam), -np.inf)
        amax = a.max(axis=1, keepdims=True)
        e = np.where(mask, np.exp(a - amax), 0.0)
        z = e.sum(axis=1, keepdims=True)
        q = e / z
        log_z = (np.log(z) + amax)[:, 0]
        return q, log_z, float(row_weight @ log_z)

    q, log_z, val = evaluate(lam)
    it = 0
    converged = False
    while True:
        mean = np.einsum("rt,rtj->rj", q, G)
        grad = -row_weight @ mean
        if m == 0 or np.max(np.abs(grad)) <= tol:
            converged = True
            break
        if it >= max_iter:
            break
        second = np.einsum("rt,rtj,rtk->rjk", q, G, G)
        hess = np.einsum("r,rjk->jk", row_weight, second - np.einsum("rj,rk->rjk", mean, mean))
        try:
            step = -grad if np.linalg.cond(hess) > COND_LIMIT else -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = -grad
        slope = float(grad @ step)
        if slope >= 0:
            step, slope = -grad, -float(grad @ grad)
        t = 1.0
        while True:
            q_new, lz_new, v_new = evaluate(lam + t * step)
            if v_new <= val + 1e-4 * t * slope or t < 1e-14:
                break
            t *= 0.5
        if t < 1e-14:
            break  # no further descent possible at this precision
        lam = lam + t * step
        q, log_z, val = q_new, lz_new, v_new
        it += 1
    return lam, q, log_z, val, it, bool(converged)


def maxent(domain: FiniteDomain, constraints: Sequence[LinearConstraint],
           tol: float = GRAD_TOL, max_iter: int = MAX_ITERS) -> MaxEntSolution:
    """Entropy maximizer over ``domain`` subject to ``constraints``."""
    _check_domain(domain, constraints)
    support, moments = _split_constraints(constraints)
    ids = _ids(moments)
    mask = support_mask(domain, constraints).ravel()
    n = int(mask.sum())
    W = np.array([c.f.ravel()[mask] for c in moments]).reshape(len(moments), n)
    c = np.array([m.target for m in moments])
    eps = np.array([m.epsilon for m in moments])

    poly = _lp.Polytope(np.ones((1, n)), np.ones(1), W, c - eps, c + eps) if n else None
    witness, targets = _lp.nearest_targets(poly, c) if n else (None, None)
    if witness is None:
        report = feasibility(domain, constraints)
        return MaxEntSolution(None, {i: float("nan") for i in ids}, float("nan"), float("nan"),
                              {}, 0, INFEASIBLE, report)

    A_eq = np.vstack([np.ones((1, n)), W])
    b_eq = np.concatenate([[1.0], targets])
    face, _ = _lp.positive_face(A_eq, b_eq, n)
    if face is None:  # numerical disagreement between the two LPs
        report = feasibility(domain, constraints)
        return MaxEntSolution(None, {i: float("nan") for i in ids}, float("nan"), float("nan"),
                              {}, 0, INFEASIBLE, report)

    Wf = W[:, face]
    keep = _independent_rows(np.vstack([np.ones((1, Wf.shape[1])), Wf]), 1)
    keep = [k - 1 for k in keep[1:]]
    dropped = [ids[j] for j in range(len(ids)) if j not in keep]
    if dropped:
        log.warning("dropping linearly dependent constraints %s", dropped)

    G = (Wf[keep].T - targets[keep])[None, :, :]
    lam_k, q, log_z, dual, iters, ok = _newton_dual(G, np.ones(1), np.ones((1, Wf.shape[1]), bool), tol, max_iter)

    full = np.zeros(domain.size)
    idx = np.flatnonzero(mask)[face]
    full[idx] = q[0]
    p = ProbTable(domain, full / full.sum())
    lam = np.zeros(len(moments))
    lam[keep] = lam_k
    # log Z of the uncentred form exp(-lam . f) / Z
    log_partition = float(log_z[0] - lam_k @ targets[keep]) if keep else float(log_z[0])
    status = CONVERGED if ok else MAX_ITERS_STATUS
    res = _violations(p, constraints)
    if status == CONVERGED and max(res.values(), default=0.0) > max(1e-8, 10 * tol):
        status = MAX_ITERS_STATUS
    return MaxEntSolution(p, dict(zip(ids, lam.tolist())), log_partition, dual, res, iters, status,
                          FeasibilityReport(True, ProbTable(domain, _normalized_full(domain, mask, witness))),
                          dropped)


def _normalized_full(domain, mask, x):
    full = np.zeros(domain.size)
    x = np.clip(x, 0.0, None)
    full[mask] = x / x.sum()
    return full


@dataclass
class ConditionalMaxEntResult:
    conditional: ConditionalTable | None
    solution: MaxEntSolution


def conditional_maxent(domain: FiniteDomain, constraints: Sequence[LinearConstraint],
                       cause_marginal: ProbTable, parents: Sequence[str] | None = None,
                       tol: float = GRAD_TOL, max_iter: int = MAX_ITERS) -> ConditionalMaxEntResult:
    """Maximize ``H(target | parents)`` with the distribution of the given variables fixed.

    The given variables are those of ``cause_marginal``; the target is every
    other variable of ``domain``.  The conditional may depend on ``parents``
    only (all given variables by default).  Rows of parent values with zero
    mass are returned uniform.
    """
    _check_domain(domain, constraints)
    given = list(cause_marginal.domain.names)
    if cause_marginal.domain != domain.sub(given):
        raise DomainError("cause marginal must be defined on a sub-domain with matching values")
    parents = given if parents is None else list(parents)
    if not set(parents) <= set(given):
        raise DomainError(f"parents {parents} must be among the given variables {given}")
    target = [n for n in domain.names if n not in given]
    if not target:
        raise DomainError("no target variables left")
    support, moments = _split_constraints(constraints)
    ids = _ids(moments)

    order = given + target
    axes = domain.axes(order)
    E = cause_marginal.domain.size
    T = domain.sub(target).size
    pe = cause_marginal.array().ravel()
    pa_dom = domain.sub(parents) if parents else None
    n_pa = pa_dom.size if parents else 1
    # parent index of each given point
    gshape = cause_marginal.domain.shape
    pa_axes = [given.index(p) for p in parents]
    multi = np.array(np.unravel_index(np.arange(E), gshape)).T if gshape else np.zeros((1, 0), int)
    pa_of_e = (np.ravel_multi_index(multi[:, pa_axes].T, pa_dom.shape) if parents else np.zeros(E, int))

    def reshaped(arr):
        return np.transpose(arr, axes).reshape(E, T)

    smask = reshaped(support_mask(domain, constraints))
    # (pa, t) is allowed iff every given point with mass that maps to pa admits t
    allowed = np.ones((n_pa, T), bool)
    for e in range(E):
        if pe[e] > 0:
            allowed[pa_of_e[e]] &= smask[e]
    p_pa = np.bincount(pa_of_e, weights=pe, minlength=n_pa)
    live = p_pa > 0

    # mass-weighted features per (pa, t)
    Wt = np.zeros((len(moments), n_pa, T))
    for j, m in enumerate(moments):
        fj = reshaped(m.f)
        np.add.at(Wt[j], pa_of_e, pe[:, None] * fj)
    c = np.array([m.target for m in moments])
    eps = np.array([m.epsilon for m in moments])

    var_mask = allowed & live[:, None]
    nv = int(var_mask.sum())
    rows_of_var = np.nonzero(var_mask)[0]
    Arow = np.zeros((int(live.sum()), nv))
    live_rows = np.flatnonzero(live)
    for k, r in enumerate(live_rows):
        Arow[k, rows_of_var == r] = 1.0
    Wv = Wt[:, var_mask].reshape(len(moments), nv)

    def fail():
        return ConditionalMaxEntResult(None, MaxEntSolution(
            None, {i: float("nan") for i in ids}, float("nan"), float("nan"), {}, 0, INFEASIBLE,
            FeasibilityReport(False, None, float("nan"))))

    if np.any(~allowed[live].any(axis=1)):
        return fail()
    poly = _lp.Polytope(Arow, np.ones(len(live_rows)), Wv, c - eps, c + eps)
    witness, targets = _lp.nearest_targets(poly, c)
    if witness is None:
        return fail()
    face, _ = _lp.positive_face(np.vstack([Arow, Wv]), np.concatenate([np.ones(len(live_rows)), targets]), nv)
    if face is None:
        return fail()
    usable = np.zeros((n_pa, T), bool)
    usable[var_mask] = face

    # per-row averaged features, centred at the targets
    feat = np.zeros((n_pa, T, len(moments)))
    feat[live] = np.moveaxis(Wt[:, live, :] / p_pa[live][None, :, None], 0, -1)
    A = np.vstack([Arow[:, face], Wv[:, face]])
    keep = _independent_rows(A, Arow.shape[0])
    keep = [k - Arow.shape[0] for k in keep[Arow.shape[0]:]]
    dropped = [ids[j] for j in range(len(ids)) if j not in keep]
    if dropped:
        # rows in the span of the row sums only restate the fixed marginal
        Ar = Arow[:, face]
        fixed = []
        for j in range(len(ids)):
            if j not in keep:
                coef = np.linalg.lstsq(Ar.T, Wv[j, face], rcond=None)[0]
                if np.linalg.norm(Ar.T @ coef - Wv[j, face]) <= RANK_TOL * max(1.0, np.linalg.norm(Wv[j, face])):
                    fixed.append(ids[j])
        if fixed:
            log.info("constraints %s are fixed by the given marginal", fixed)
        if len(fixed) < len(dropped):
            log.warning("dropping linearly dependent constraints %s", [d for d in dropped if d not in fixed])
    G = feat[live][:, :, keep] - targets[keep]
    lam_k, q, log_z, dual, iters, ok = _newton_dual(G, p_pa[live], usable[live], tol, max_iter)

    rows = np.full((n_pa, T), 1.0 / T)
    rows[live] = q
    tgt_dom = domain.sub(target)
    cond = ConditionalTable(pa_dom, tgt_dom, rows.reshape((pa_dom.shape if parents else ()) + tgt_dom.shape))
    joint_eT = pe[:, None] * rows[pa_of_e]
    joint = np.transpose(joint_eT.reshape(cause_marginal.domain.shape + tgt_dom.shape), np.argsort(axes))
    p = ProbTable(domain, joint / joint.sum())
    lam = np.zeros(len(moments))
    lam[keep] = lam_k
    res = _violations(p, constraints)
    status = CONVERGED if ok else MAX_ITERS_STATUS
    if status == CONVERGED and max(res.values(), default=0.0) > max(1e-8, 10 * tol):
        status = MAX_ITERS_STATUS
    lz = np.full(n_pa, np.nan)
    lz[live] = log_z - (lam_k @ targets[keep] if keep else 0.0)
    sol = MaxEntSolution(p, dict(zip(ids, lam.tolist())), lz, dual, res, iters, status,
                         FeasibilityReport(True, None, 0.0), dropped)
    return ConditionalMaxEntResult(cond, sol)


def exponential_form_error(solution: MaxEntSolution, constraints: Sequence[LinearConstraint]) -> float:
    """Max relative deviation of ``p`` from ``exp(-lam . f - log Z)`` on its support."""
    p = solution.distribution.array().ravel()
    moments = [c for c in constraints if not c.is_support]
    expo = np.zeros_like(p)
    for cid, c in zip(_ids(moments), moments):
        expo -= solution.multipliers[cid] * c.f.ravel()
    on = p > 0
    model = np.exp(expo[on] - solution.log_partition)
    return float(np.max(np.abs(model - p[on]) / p[on]))
