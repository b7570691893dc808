"""Linear-programming helpers for feasibility and face reduction on probability polytopes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog

POSITIVE_TOL = 1e-9


@dataclass
class Polytope:
    """``{x in [0, 1]^n : A_eq x = b_eq, lo <= W x <= hi}``."""

    A_eq: np.ndarray
    b_eq: np.ndarray
    W: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    @property
    def n(self) -> int:
        return self.A_eq.shape[1] if self.A_eq.size else self.W.shape[1]

    def _ub(self):
        if self.W.shape[0] == 0:
            return None, None
        return np.vstack([self.W, -self.W]), np.concatenate([self.hi, -self.lo])

    def solve(self, cost: np.ndarray):
        A_ub, b_ub = self._ub()
        res = linprog(cost, A_ub=A_ub, b_ub=b_ub,
                      A_eq=self.A_eq if self.A_eq.shape[0] else None,
                      b_eq=self.b_eq if self.A_eq.shape[0] else None,
                      bounds=(0.0, 1.0), method="highs")
        return res if res.status == 0 else None


def nearest_targets(poly: Polytope, targets: np.ndarray) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Feasibility plus the band-constrained targets closest (in L1) to ``targets``.

    Returns ``(None, None)`` when the polytope is empty, otherwise a witness
    and targets ``W @ witness``; if ``targets`` themselves are attainable they
    are returned unchanged.
    """
    m, n = poly.W.shape
    if m == 0:
        res = poly.solve(np.zeros(n))
        return (None, None) if res is None else (res.x, targets.copy())
    # variables: x (n), d_plus (m), d_minus (m);  W x - d_plus + d_minus = targets
    A_eq = np.hstack([poly.W, -np.eye(m), np.eye(m)])
    if poly.A_eq.shape[0]:
        A_eq = np.vstack([A_eq, np.hstack([poly.A_eq, np.zeros((poly.A_eq.shape[0], 2 * m))])])
        b_eq = np.concatenate([targets, poly.b_eq])
    else:
        b_eq = targets
    band = np.maximum(poly.hi - targets, targets - poly.lo)
    bounds = [(0.0, 1.0)] * n + [(0.0, float(b)) for b in band] * 2
    cost = np.concatenate([np.zeros(n), np.ones(2 * m)])
    res = linprog(cost, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        return None, None
    x = res.x[:n]
    if res.fun <= 1e-12:
        return x, targets.copy()
    return x, poly.W @ x


def positive_face(A_eq: np.ndarray, b_eq: np.ndarray, n: int, tol: float = POSITIVE_TOL):
    """Coordinates that are positive for some point of ``{x in [0,1]^n : A_eq x = b_eq}``.

    Returns ``(mask, interior)`` where ``interior`` is a feasible point that is
    positive on every coordinate of ``mask``, or ``(None, None)`` if empty.
    """
    poly = Polytope(A_eq, b_eq, np.zeros((0, n)), np.zeros(0), np.zeros(0))
    first = poly.solve(np.zeros(n))
    if first is None:
        return None, None
    witnesses = [first.x]
    mask = first.x > tol
    for i in range(n):
        if mask[i]:
            continue
        cost = np.zeros(n)
        cost[i] = -1.0
        res = poly.solve(cost)
        if res is not None and res.x[i] > tol:
            witnesses.append(res.x)
            mask |= res.x > tol
    interior = np.mean(witnesses, axis=0)
    interior[~mask] = 0.0
    return mask, interior
