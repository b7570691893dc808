"""Sequential (causal) entropy maximization along a DAG.

Nodes are processed in a topological order.  At each node the conditional
given its parents is chosen to maximize conditional entropy, holding the
conditionals already chosen fixed and requiring that the constraints can
still be met by some completion of the remaining nodes.  Two readings of
"some completion" are offered:

``general-joint``
    any joint distribution of the remaining variables given the fixed ones.
    Each step is then a concave program over a polytope.
``markov``
    completions that factorize along the DAG.  The step problem is no longer
    convex.  With support restrictions only it is solved exactly by searching
    row supports; otherwise it is explored by deterministic multi-start local
    optimization.  Every distinct optimum is reported.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import networkx as nx
import numpy as np
from scipy.linalg import null_space, qr
from scipy.optimize import minimize

from . import _lp
from .core import (ConditionalTable, DomainError, FiniteDomain, LinearConstraint, ProbTable,
                   Relation, SizeCapError, exact_conditional_entropy,
                   marginalize, mutual_information, relation_to_constraint, total_variation)
from .maxent import conditional_maxent, maxent, support_mask

GENERAL = "general-joint"
MARKOV = "markov"
SCOPES = (GENERAL, MARKOV)

OK = "ok"
INFEASIBLE = "infeasible"
NON_UNIQUE = "non-unique"

MAX_ORDERS = 5040
MARKOV_RANDOM_STARTS = 64
MARKOV_MAX_VERTEX_STARTS = 256
MAX_BRANCHES = 16


def normalize_scope(scope: str) -> str:
    aliases = {"general": GENERAL, "general-joint": GENERAL, "markov": MARKOV, "markov-respecting": MARKOV}
    try:
        return aliases[scope]
    except KeyError:
        raise DomainError(f"unknown feasibility scope {scope!r}") from None


@dataclass(frozen=True)
class Dag:
    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        if len(set(self.nodes)) != len(self.nodes):
            raise DomainError("repeated DAG nodes")
        for a, b in self.edges:
            if a not in self.nodes or b not in self.nodes:
                raise DomainError(f"edge {a}->{b} references an undeclared node")
        if not nx.is_directed_acyclic_graph(self.graph()):
            raise DomainError("the graph has a directed cycle")

    @classmethod
    def chain(cls, nodes: Sequence[str]) -> "Dag":
        return cls(tuple(nodes), tuple(zip(nodes[:-1], nodes[1:])))

    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        g.add_nodes_from(self.nodes)
        g.add_edges_from(self.edges)
        return g

    def parents(self, node: str) -> list[str]:
        """Parents in node-declaration order."""
        ps = {a for a, b in self.edges if b == node}
        return [n for n in self.nodes if n in ps]

    def is_topological(self, order: Sequence[str]) -> bool:
        if sorted(order) != sorted(self.nodes):
            return False
        pos = {n: i for i, n in enumerate(order)}
        return all(pos[a] < pos[b] for a, b in self.edges)

    def default_order(self) -> list[str]:
        return list(nx.lexicographical_topological_sort(self.graph()))

    def nondescendants(self, node: str) -> list[str]:
        desc = nx.descendants(self.graph(), node) | {node}
        return [n for n in self.nodes if n not in desc]

    def to_dict(self) -> dict:
        return {"nodes": list(self.nodes), "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, data) -> "Dag":
        return cls(tuple(data["nodes"]), tuple(tuple(e) for e in data.get("edges", [])))


@dataclass
class CausalStep:
    node: str
    parents: list[str]
    conditional: ConditionalTable | None
    conditional_entropy: float
    info: dict = field(default_factory=dict)


@dataclass
class CausalFitResult:
    order: list[str]
    steps: list[CausalStep]
    joint: ProbTable | None
    status: str
    failed_step: int | None = None
    alternatives: list[ProbTable] = field(default_factory=list)
    scope: str = GENERAL

    @property
    def ok(self) -> bool:
        return self.status == OK

    def describe(self) -> str:
        if self.status == INFEASIBLE:
            return f"infeasible at step {self.failed_step}"
        if self.status == NON_UNIQUE:
            return f"non-unique ({len(self.alternatives)} solutions)"
        return "ok"

    def markov_residual(self, dag: Dag) -> float:
        """Largest ``I(X_j ; nondescendants \\ parents | parents)`` over nodes, in nats."""
        joints = self.alternatives if self.status == NON_UNIQUE else [self.joint]
        worst = 0.0
        for joint in joints:
            if joint is None:
                continue
            joint = joint.to_float()
            for node in dag.nodes:
                pa = dag.parents(node)
                others = [n for n in dag.nondescendants(node) if n not in pa]
                if others:
                    worst = max(worst, mutual_information(joint, [node], others, pa))
        return worst


def _moments(constraints):
    return [c for c in constraints if not c.is_support]


def _support_only(constraints) -> bool:
    return all(c.is_support for c in constraints)


# --- exact path: support restrictions only -----------------------------------

def _exact_fit(domain: FiniteDomain, constraints, dag: Dag, order: list[str]) -> CausalFitResult:
    mask = support_mask(domain, constraints)
    support = Relation.from_mask(domain, mask).reorder(order)
    if not support.members:
        return CausalFitResult(order, [], None, INFEASIBLE, 1)
    p_prefix: dict[tuple, Fraction] = {(): Fraction(1)}
    steps: list[CausalStep] = []
    for k, node in enumerate(order):
        earlier = order[:k]
        pa = dag.parents(node)
        pa_pos = [earlier.index(p) for p in pa]
        proj = support.project(order[:k + 1])
        node_vals = domain.values(node)
        allowed: dict[tuple, set] = {}
        for e, w in p_prefix.items():
            if w == 0:
                continue
            opts = {v for v in node_vals if e + (v,) in proj}
            key = tuple(e[i] for i in pa_pos)
            allowed[key] = allowed.get(key, opts) & opts
        if any(not a for a in allowed.values()):
            return CausalFitResult(order, steps, None, INFEASIBLE, k + 1)
        pa_dom = domain.sub(pa) if pa else None
        rows = []
        for key in (pa_dom.points() if pa_dom else [()]):
            a = allowed.get(key)
            rows.append([Fraction(1, len(a)) if v in a else Fraction(0) for v in node_vals] if a
                        else [Fraction(1, len(node_vals))] * len(node_vals))
        cond = ConditionalTable(pa_dom, domain.sub([node]), np.array(rows, dtype=object), exact=True)
        new_prefix = {}
        for e, w in p_prefix.items():
            row = cond.row(tuple(e[i] for i in pa_pos)) if pa else cond.rows
            for v, q in zip(node_vals, np.ravel(row)):
                if w * q:
                    new_prefix[e + (v,)] = w * q
        h_joint = ProbTable.from_dict(domain.sub(order[:k + 1]), new_prefix)
        h = float(exact_conditional_entropy(marginalize(h_joint, pa + [node]), pa)) if pa else \
            float(exact_conditional_entropy(marginalize(h_joint, [node]), []))
        steps.append(CausalStep(node, pa, cond, h, {"method": "exact"}))
        p_prefix = new_prefix
    joint = ProbTable.from_dict(domain.sub(order), p_prefix).reorder(domain.names)
    return CausalFitResult(order, steps, joint, OK)


# --- numeric general-joint step ----------------------------------------------

def _barrier_maximize(A, b, v0, q_idx, q_weight, tol=1e-13):
    """Maximize sum_i w_i * (-v_i log v_i) over {v > 0 : A v = b} (entropy part on ``q_idx``).

    Only the q-coordinates carry entropy; ``q_weight`` holds the row mass
    ``p(pa)`` of each.  Log-barrier path following with Newton steps in the
    null space of ``A``.
    """
    v = v0.copy()
    # pull the starting point back onto the affine set
    if A.shape[0]:
        v = v - np.linalg.lstsq(A, A @ v - b, rcond=None)[0]
        if np.any(v <= 0):
            v = np.maximum(v, 1e-12 * np.max(v))
    N = null_space(A) if A.shape[0] else np.eye(len(v))
    if N.shape[1] == 0:
        return v, 0
    wq = np.zeros(len(v))
    wq[q_idx] = q_weight
    total_newton = 0

    def phi(v, tau):
        return float(np.sum(-wq * v * np.log(v)) + tau * np.sum(np.log(v)))

    tau = 1.0
    while True:
        for _ in range(200):
            g = -wq * (np.log(v) + 1.0) + tau / v
            h = -wq / v - tau / v**2
            gz = N.T @ g
            Hz = (N.T * h) @ N
            dz = np.linalg.solve(Hz, -gz)
            dv = N @ dz
            decrement = float(gz @ dz)
            if decrement <= 1e-20:
                break
            neg = dv < 0
            t = min(1.0, 0.99 * float(np.min(-v[neg] / dv[neg]))) if np.any(neg) else 1.0
            f0 = phi(v, tau)
            while t > 1e-16 and phi(v + t * dv, tau) < f0 + 1e-4 * t * float(g @ dv) - 1e-15 * abs(f0):
                t *= 0.5
            v = v + t * dv
            total_newton += 1
            if decrement < 1e-24 or t <= 1e-16:
                break
        if tau <= tol:
            break
        tau *= 0.1
    return v, total_newton


def _general_step(domain, constraints, order, k, dag, p_prefix):
    """Numeric step for node ``order[k]`` when later nodes remain.

    ``p_prefix`` is the fixed distribution over ``order[:k]`` as an array of
    that shape.  Returns ``(conditional rows (n_pa, n_node), info)`` or
    ``(None, info)`` when no conditional admits a feasible completion.
    """
    node = order[k]
    earlier, later = order[:k], order[k + 1:]
    pa = dag.parents(node)
    eshape = domain.sub(earlier).shape if earlier else ()
    E = math.prod(eshape)
    nj = len(domain.values(node))
    L = domain.sub(later).size
    pe = np.asarray(p_prefix, dtype=float).reshape(E)

    axes = domain.axes(order)
    smask = np.transpose(support_mask(domain, constraints), axes).reshape(E, nj, L)
    pmask = smask & (pe > 0)[:, None, None]
    moments = _moments(constraints)
    Wfull = np.array([np.transpose(c.f, axes).reshape(E, nj, L)[pmask] for c in moments]).reshape(
        len(moments), int(pmask.sum()))
    c = np.array([m.target for m in moments])
    eps = np.array([m.epsilon for m in moments])

    pa_pos = [earlier.index(p) for p in pa]
    pa_shape = domain.sub(pa).shape if pa else ()
    n_pa = math.prod(pa_shape)
    if pa:
        multi = np.array(np.unravel_index(np.arange(E), eshape))
        pa_of_e = np.ravel_multi_index(multi[pa_pos], pa_shape)
    else:
        pa_of_e = np.zeros(E, int)
    p_pa = np.bincount(pa_of_e, weights=pe, minlength=n_pa)
    live_rows = np.flatnonzero(p_pa > 0)

    nP = int(pmask.sum())
    nq = len(live_rows) * nj
    n = nP + nq
    P_index = -np.ones((E, nj, L), int)
    P_index[pmask] = np.arange(nP)
    q_index = {r: nP + i * nj + np.arange(nj) for i, r in enumerate(live_rows)}

    rows_a, rhs = [], []
    for e in np.flatnonzero(pe > 0):
        for x in range(nj):
            row = np.zeros(n)
            idx = P_index[e, x][P_index[e, x] >= 0]
            row[idx] = 1.0
            row[q_index[pa_of_e[e]][x]] -= pe[e]
            rows_a.append(row)
            rhs.append(0.0)
    for r in live_rows:
        row = np.zeros(n)
        row[q_index[r]] = 1.0
        rows_a.append(row)
        rhs.append(1.0)
    A = np.array(rows_a)
    b = np.array(rhs)
    W = np.hstack([Wfull, np.zeros((len(moments), nq))])

    poly = _lp.Polytope(A, b, W, c - eps, c + eps)
    witness, targets = _lp.nearest_targets(poly, c)
    if witness is None:
        return None, {"method": "barrier", "reason": "no feasible completion"}
    A2 = np.vstack([A, W])
    b2 = np.concatenate([b, targets])
    face, interior = _lp.positive_face(A2, b2, n)
    if face is None:
        return None, {"method": "barrier", "reason": "no feasible completion"}

    cols = np.flatnonzero(face)
    Ared = A2[:, cols]
    # redundant equality rows would make the affine pull-back ill-posed
    rank = np.linalg.matrix_rank(Ared)
    bred = b2
    if rank < Ared.shape[0]:
        _, _, perm = qr(Ared.T, pivoting=True, mode="economic")
        keep_rows = np.sort(perm[:rank])
        Ared, bred = Ared[keep_rows], b2[keep_rows]
    q_cols = [i for i, col in enumerate(cols) if col >= nP]
    weights = np.array([p_pa[live_rows[(cols[i] - nP) // nj]] for i in q_cols])
    v, iters = _barrier_maximize(Ared, bred, interior[cols], np.array(q_cols, int), weights)

    full = np.zeros(n)
    full[cols] = v
    rows = np.full((n_pa, nj), 1.0 / nj)
    for r in live_rows:
        qr_ = np.clip(full[q_index[r]], 0.0, None)
        rows[r] = qr_ / qr_.sum()
    return rows, {"method": "barrier", "newton_iterations": iters, "targets": targets.tolist()}


def _step_entropy(p_prefix_arr, rows, pa_of_e, n_pa):
    p_pa = np.bincount(pa_of_e, weights=p_prefix_arr, minlength=n_pa)
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(rows > 0, rows * np.log(rows), 0.0).sum(axis=1)
    return float(p_pa @ h)


def _pa_index(domain, earlier, pa):
    eshape = domain.sub(earlier).shape if earlier else ()
    E = math.prod(eshape)
    if not pa:
        return np.zeros(E, int), 1
    pa_shape = domain.sub(pa).shape
    multi = np.array(np.unravel_index(np.arange(E), eshape))
    return np.ravel_multi_index(multi[[earlier.index(p) for p in pa]], pa_shape), math.prod(pa_shape)


def _numeric_general_fit(domain, constraints, dag, order) -> CausalFitResult:
    p_prefix = np.ones(())
    steps: list[CausalStep] = []
    for k, node in enumerate(order):
        earlier, later = order[:k], order[k + 1:]
        pa = dag.parents(node)
        pa_dom = domain.sub(pa) if pa else None
        node_dom = domain.sub([node])
        if later:
            rows, info = _general_step(domain, constraints, order, k, dag, p_prefix)
            if rows is None:
                return CausalFitResult(order, steps, None, INFEASIBLE, k + 1)
        elif not earlier:
            sol = maxent(domain, list(constraints))
            if sol.distribution is None:
                return CausalFitResult(order, steps, None, INFEASIBLE, k + 1)
            rows = sol.distribution.array().reshape(1, -1)
            info = {"method": "dual-newton", "iterations": sol.iterations, "status": sol.status}
        else:
            sub = domain.sub(order[:k + 1])
            # constraints expressed on the prefix+node domain, which is the full domain here
            reordered = [_reorder_constraint(c, order) for c in constraints]
            res = conditional_maxent(sub, reordered, ProbTable(domain.sub(earlier), p_prefix), parents=pa)
            if res.conditional is None:
                return CausalFitResult(order, steps, None, INFEASIBLE, k + 1)
            rows = res.conditional.array().reshape(-1, len(node_dom.values(node)))
            info = {"method": "dual-newton", "iterations": res.solution.iterations,
                    "status": res.solution.status, "multipliers": res.solution.multipliers}
        cond = ConditionalTable(pa_dom, node_dom, rows.reshape((pa_dom.shape if pa else ()) + node_dom.shape))
        pa_of_e, n_pa = _pa_index(domain, earlier, pa)
        h = _step_entropy(np.ravel(p_prefix), rows.reshape(n_pa, -1), pa_of_e, n_pa)
        steps.append(CausalStep(node, pa, cond, h, info))
        p_prefix = (np.ravel(p_prefix)[:, None] * rows.reshape(n_pa, -1)[pa_of_e]).reshape(
            domain.sub(order[:k + 1]).shape)
    joint = ProbTable(domain.sub(order), p_prefix / p_prefix.sum()).reorder(domain.names)
    return CausalFitResult(order, steps, joint, OK)


def _reorder_constraint(c: LinearConstraint, order: Sequence[str]) -> LinearConstraint:
    if list(c.domain.names) == list(order):
        return c
    axes = c.domain.axes(order)
    rel = c.relation.reorder(order) if c.relation is not None else None
    return LinearConstraint(c.domain.sub(order), np.transpose(c.f, axes), c.target, c.epsilon, c.id, rel)


# --- markov-respecting scope ---------------------------------------------------

def _markov_joint(domain, order, dag, conds):
    """Product of conditionals (arrays indexed [pa..., node]) as an array in ``order`` shape."""
    joint = np.ones(())
    for k, node in enumerate(order):
        earlier = order[:k]
        pa = dag.parents(node)
        pa_of_e, n_pa = _pa_index(domain, earlier, pa)
        rows = conds[node].reshape(n_pa, -1)
        joint = (np.ravel(joint)[:, None] * rows[pa_of_e]).reshape(domain.sub(order[:k + 1]).shape)
    return joint


def _markov_rows(constraints, axes):
    """Constraint rows in ``order`` layout; support restrictions become one row per excluded point.

    A single "mass outside S is zero" row has zero gradient at every feasible
    point, which local solvers cannot work with.
    """
    rows, targets, eps = [], [], []
    for c in constraints:
        f = np.transpose(c.f, axes).ravel()
        if c.is_support:
            for i in np.flatnonzero(f):
                e = np.zeros_like(f)
                e[i] = 1.0
                rows.append(e)
                targets.append(0.0)
                eps.append(0.0)
        else:
            rows.append(f)
            targets.append(c.target)
            eps.append(c.epsilon)
    n = math.prod(c.f.size for c in constraints[:1]) if constraints else 0
    return np.array(rows).reshape(len(rows), n), np.array(targets), np.array(eps)


# --- Markov scope, support restrictions only ---------------------------------

MARKOV_EXACT_MAX_CANDIDATES = 1 << 16


def _completable(reach: set, k: int, order, dag, support: Relation, budget: list) -> bool:
    """Whether the reachable prefixes extend through ``order[k:]`` by deterministic rows inside the support.

    Deterministic rows suffice: shrinking a row never adds reachable points.
    """
    if k == len(order):
        return True
    node = order[k]
    pa_pos = [order.index(p) for p in dag.parents(node)]
    proj = support.project(order[:k + 1])
    groups: dict[tuple, list] = {}
    for e in reach:
        groups.setdefault(tuple(e[i] for i in pa_pos), []).append(e)
    keys = sorted(groups)
    options = [[v for v in support.domain.values(node) if all(e + (v,) in proj for e in groups[key])]
               for key in keys]
    if any(not o for o in options):
        return False
    for choice in itertools.product(*options):
        budget[0] -= 1
        if budget[0] < 0:
            raise SizeCapError("Markov completion search exceeds its cap")
        nxt = {e + (v,) for key, v in zip(keys, choice) for e in groups[key]}
        if _completable(nxt, k + 1, order, dag, support, budget):
            return True
    return False


def _markov_exact_fit(domain: FiniteDomain, constraints, dag: Dag, order: list[str]) -> CausalFitResult:
    """Markov scope when every constraint restricts the support: a finite search over row supports.

    With the parent marginal fixed, the best rows are uniform on their supports, so
    a step maximizes ``sum p(pa) log |row support|`` over supports that still admit
    a factorizing completion.
    """
    mask = support_mask(domain, constraints)
    support = Relation.from_mask(domain, mask).reorder(order)
    branches: list[tuple[dict, list]] = [({(): Fraction(1)}, [])]
    if not support.members:
        return CausalFitResult(order, [], None, INFEASIBLE, 1, scope=MARKOV)
    for k, node in enumerate(order):
        pa = dag.parents(node)
        pa_pos = [order.index(p) for p in pa]
        proj = support.project(order[:k + 1])
        node_vals = domain.values(node)
        pa_dom = domain.sub(pa) if pa else None
        new_branches = []
        for p_prefix, steps in branches:
            mass: dict[tuple, Fraction] = {}
            allowed: dict[tuple, list] = {}
            for e, w in p_prefix.items():
                key = tuple(e[i] for i in pa_pos)
                mass[key] = mass.get(key, Fraction(0)) + w
                opts = [v for v in node_vals if e + (v,) in proj]
                allowed[key] = [v for v in allowed.get(key, opts) if v in opts]
            keys = sorted(mass)
            subsets = [[c for r in range(len(allowed[key]), 0, -1) for c in itertools.combinations(allowed[key], r)]
                       for key in keys]
            if math.prod(len(s) for s in subsets) > MARKOV_EXACT_MAX_CANDIDATES:
                raise SizeCapError("too many row-support candidates for the exact Markov search")
            scored = sorted(((sum(float(mass[key]) * math.log(len(c)) for key, c in zip(keys, choice)), choice)
                             for choice in itertools.product(*subsets)), key=lambda t: -t[0])
            best = None
            budget = [MARKOV_EXACT_MAX_CANDIDATES]
            for score, choice in scored:
                if best is not None and score < best - 1e-12:
                    break
                rows_of = dict(zip(keys, choice))
                reach = {e + (v,) for e in p_prefix for v in rows_of[tuple(e[i] for i in pa_pos)]}
                if not _completable(reach, k + 1, order, dag, support, budget):
                    continue
                best = score if best is None else best
                rows = []
                for key in (pa_dom.points() if pa_dom else [()]):
                    a = rows_of.get(key)
                    rows.append([Fraction(1, len(a)) if v in a else Fraction(0) for v in node_vals] if a
                                else [Fraction(1, len(node_vals))] * len(node_vals))
                cond = ConditionalTable(pa_dom, domain.sub([node]), np.array(rows, dtype=object), exact=True)
                new_prefix = {}
                for e, w in p_prefix.items():
                    a = rows_of[tuple(e[i] for i in pa_pos)]
                    for v in a:
                        new_prefix[e + (v,)] = w / len(a)
                h = sum(float(mass[key]) * math.log(len(c)) for key, c in rows_of.items())
                new_branches.append((new_prefix, steps + [CausalStep(node, pa, cond, h, {"method": "exact"})]))
        if not new_branches:
            return CausalFitResult(order, branches[0][1], None, INFEASIBLE, k + 1, scope=MARKOV)
        branches = new_branches[:MAX_BRANCHES]
    joints = []
    for p_prefix, steps in branches:
        pt = ProbTable.from_dict(domain.sub(order), p_prefix).reorder(domain.names)
        if not any(pt.equals(j) for j, _ in joints):
            joints.append((pt, steps))
    if len(joints) == 1:
        return CausalFitResult(order, joints[0][1], joints[0][0], OK, scope=MARKOV)
    return CausalFitResult(order, joints[0][1], None, NON_UNIQUE, alternatives=[j for j, _ in joints],
                           scope=MARKOV)


def _markov_fit(domain, constraints, dag, order, seed=0) -> CausalFitResult:
    axes = domain.axes(order)
    F, targets, eps = _markov_rows(constraints, axes)
    shapes = {}
    for node in order:
        pa = dag.parents(node)
        shapes[node] = (domain.sub(pa).size if pa else 1, len(domain.values(node)))
    rng = np.random.default_rng(seed)

    def residual(conds):
        joint = _markov_joint(domain, order, dag, conds).ravel()
        return np.maximum(0.0, np.abs(F @ joint - targets) - eps) if len(F) else np.zeros(0)

    branches = [({}, [])]  # (fixed conditionals, steps)
    finished: list[tuple[dict, list]] = []
    failed_step = None
    for k, node in enumerate(order):
        free = order[k:]
        sizes = [math.prod(shapes[n]) for n in free]
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        new_branches = []
        for fixed, steps in branches:
            earlier = order[:k]
            pa = dag.parents(node)
            pa_of_e, n_pa = _pa_index(domain, earlier, pa)
            prefix = np.ravel(_markov_joint(domain, earlier, dag, fixed)) if earlier else np.ones(1)
            p_pa = np.bincount(pa_of_e, weights=prefix, minlength=n_pa)

            def unpack(theta):
                conds = dict(fixed)
                for i, n_ in enumerate(free):
                    conds[n_] = theta[offsets[i]:offsets[i + 1]].reshape(shapes[n_])
                return conds

            def neg_h(theta):
                rows = theta[:sizes[0]].reshape(shapes[node])
                r = np.clip(rows, 1e-300, None)
                return float(p_pa @ (rows * np.log(r)).sum(axis=1))

            def neg_h_grad(theta):
                g = np.zeros_like(theta)
                rows = np.clip(theta[:sizes[0]].reshape(shapes[node]), 1e-12, None)
                g[:sizes[0]] = (p_pa[:, None] * (np.log(rows) + 1.0)).ravel()
                return g

            def eq(theta):
                conds = unpack(theta)
                joint = _markov_joint(domain, order, dag, conds).ravel()
                sums = [conds[n_].sum(axis=1) - 1.0 for n_ in free]
                mom = F @ joint - targets if len(F) else np.zeros(0)
                return np.concatenate(sums + [mom])

            ineq = None
            if np.any(eps > 0):
                def ineq(theta):
                    joint = _markov_joint(domain, order, dag, unpack(theta)).ravel()
                    return eps - np.abs(F @ joint - targets)

            starts = _markov_starts(free, shapes, rng)
            found = []
            for x0 in starts:
                cons = [{"type": "eq", "fun": eq}] if not np.any(eps > 0) else [
                    {"type": "eq", "fun": lambda th: eq(th)[:-len(F)] if len(F) else eq(th)},
                    {"type": "ineq", "fun": ineq}]
                res = minimize(neg_h, x0, jac=neg_h_grad, method="SLSQP", bounds=[(0.0, 1.0)] * len(x0),
                               constraints=cons, options={"maxiter": 500, "ftol": 1e-14})
                theta = np.clip(res.x, 0.0, 1.0)
                conds = unpack(theta)
                for n_ in free:
                    conds[n_] = conds[n_] / conds[n_].sum(axis=1, keepdims=True)
                if np.max(residual(conds), initial=0.0) > 1e-7:
                    continue
                found.append((-neg_h(np.concatenate([conds[n_].ravel() for n_ in free])), conds[node]))
            if not found:
                failed_step = k + 1 if failed_step is None else failed_step
                continue
            best = max(h for h, _ in found)
            distinct: list[np.ndarray] = []
            for h, rows in sorted(found, key=lambda t: -t[0]):
                if h < best - 1e-6:
                    continue
                rows = _snap(rows)
                if not any(np.max(np.abs(rows - d)) <= 1e-4 for d in distinct):
                    distinct.append(rows)
            for rows in distinct[:MAX_BRANCHES]:
                f2 = dict(fixed)
                f2[node] = rows
                pa_dom = domain.sub(pa) if pa else None
                cond = ConditionalTable(pa_dom, domain.sub([node]),
                                        rows.reshape((pa_dom.shape if pa else ()) + (shapes[node][1],)))
                h = _step_entropy(prefix, rows, pa_of_e, n_pa)
                new_branches.append((f2, steps + [CausalStep(node, pa, cond, h,
                                                             {"method": "multistart", "starts": len(starts),
                                                              "alternatives": len(distinct)})]))
        branches = new_branches[:MAX_BRANCHES]
        if not branches:
            return CausalFitResult(order, [], None, INFEASIBLE, failed_step, scope=MARKOV)
    joints = []
    for fixed, steps in branches:
        arr = _markov_joint(domain, order, dag, fixed)
        pt = ProbTable(domain.sub(order), arr / arr.sum()).reorder(domain.names)
        if not any(total_variation(pt, j) <= 1e-6 for j, _ in joints):
            joints.append((pt, steps))
    if len(joints) == 1:
        return CausalFitResult(order, joints[0][1], joints[0][0], OK, scope=MARKOV)
    return CausalFitResult(order, joints[0][1], None, NON_UNIQUE,
                           alternatives=[j for j, _ in joints], scope=MARKOV)


def _snap(rows: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """Round entries within ``tol`` of 0 or 1 and renormalize (vertex solutions come back slightly off)."""
    r = np.where(rows < tol, 0.0, rows)
    r = np.where(r > 1 - tol, 1.0, r)
    return r / r.sum(axis=1, keepdims=True)


def _markov_starts(free, shapes, rng) -> list[np.ndarray]:
    """Perturbed simplex vertices when few enough, otherwise seeded random interior points."""
    row_specs = [(shapes[n][1]) for n in free for _ in range(shapes[n][0])]
    n_vertex = math.prod(row_specs)
    if all(shapes[n][1] <= 4 for n in free) and n_vertex <= MARKOV_MAX_VERTEX_STARTS:
        starts = []
        for choice in itertools.product(*(range(k) for k in row_specs)):
            parts = []
            for k, c in zip(row_specs, choice):
                row = np.full(k, 0.05 / k)
                row[c] += 0.95
                parts.append(row)
            starts.append(np.concatenate(parts))
        return starts
    return [np.concatenate([rng.dirichlet(np.ones(k)) for k in row_specs]) for _ in range(MARKOV_RANDOM_STARTS)]


# --- public operations ---------------------------------------------------------

def causal_maxent_dag(domain: FiniteDomain, constraints: Sequence[LinearConstraint], dag: Dag,
                      order: Sequence[str] | None = None, feasibility_scope: str = GENERAL,
                      method: str = "auto", seed: int = 0) -> CausalFitResult:
    """Fit conditionals node by node along ``order`` (default: smallest topological order).

    ``method`` selects the general-joint solver: ``"exact"`` (support
    restrictions only, rational arithmetic), ``"numeric"`` or ``"auto"``.
    """
    scope = normalize_scope(feasibility_scope)
    if set(dag.nodes) != set(domain.names):
        raise DomainError(f"DAG nodes {dag.nodes} must match domain variables {domain.names}")
    for c in constraints:
        if c.domain != domain:
            raise DomainError(f"constraint {c.id!r} is not defined on the fit domain")
    order = list(order) if order is not None else dag.default_order()
    if not dag.is_topological(order):
        raise DomainError(f"order {order} is not topological for the DAG")
    constraints = list(constraints)
    if scope == MARKOV:
        if method != "numeric" and _support_only(constraints):
            return _markov_exact_fit(domain, constraints, dag, order)
        return _markov_fit(domain, constraints, dag, order, seed)
    if method == "exact" or (method == "auto" and _support_only(constraints)):
        if not _support_only(constraints):
            raise DomainError("the exact solver handles support restrictions only")
        return _exact_fit(domain, constraints, dag, order)
    if method not in ("auto", "numeric"):
        raise DomainError(f"unknown method {method!r}")
    return _numeric_general_fit(domain, constraints, dag, order)


def causal_maxent_bivariate(domain: FiniteDomain, constraints: Sequence[LinearConstraint],
                            cause: str, method: str = "auto") -> CausalFitResult:
    """Maximize ``H(cause)`` over attainable marginals, then ``H(effect | cause)``."""
    if len(domain.names) != 2:
        raise DomainError("the bivariate fit needs exactly two variables")
    domain.axis(cause)
    effect = next(n for n in domain.names if n != cause)
    dag = Dag(domain.names, ((cause, effect),))
    return causal_maxent_dag(domain, constraints, dag, [cause, effect], GENERAL, method)


@dataclass
class OrderSensitivityReport:
    orders: list[list[str]]
    results: list[CausalFitResult]
    max_tv: float

    @property
    def statuses(self) -> list[str]:
        return [r.describe() for r in self.results]


def order_sensitivity(domain: FiniteDomain, constraints: Sequence[LinearConstraint], dag: Dag,
                      feasibility_scope: str = GENERAL, max_orders: int = MAX_ORDERS) -> OrderSensitivityReport:
    orders = []
    for o in nx.all_topological_sorts(dag.graph()):
        orders.append(list(o))
        if len(orders) > max_orders:
            raise SizeCapError(f"more than {max_orders} topological orders")
    orders.sort()
    results = [causal_maxent_dag(domain, constraints, dag, o, feasibility_scope) for o in orders]
    joints = [r.joint for r in results if r.joint is not None]
    tv = max((total_variation(a, b) for a, b in itertools.combinations(joints, 2)), default=0.0)
    return OrderSensitivityReport(orders, results, tv)


# --- bundled scenarios -----------------------------------------------------------

def implication_relation(domain: FiniteDomain, premise: dict, conclusion: dict) -> Relation:
    """Assignments satisfying ``premise -> conclusion`` (each a variable -> value mapping)."""
    def holds(point, cond):
        return all(point[domain.axis(k)] == v for k, v in cond.items())
    return Relation(domain, frozenset(p for p in domain.points() if not holds(p, premise) or holds(p, conclusion)))


def chain_problem(n: int = 3):
    """Binary chain where a 0 is always followed by a 0."""
    names = [f"X{i}" for i in range(1, n + 1)]
    domain = FiniteDomain([(nm, (0, 1)) for nm in names])
    constraints = [relation_to_constraint(implication_relation(domain, {a: 0}, {b: 0}), f"{a}=0=>{b}=0")
                   for a, b in zip(names[:-1], names[1:])]
    return domain, constraints, Dag.chain(names)


def parity_problem():
    """Two unlinked +-1 variables with E[X1 X2] = 1."""
    domain = FiniteDomain([("X1", (-1, 1)), ("X2", (-1, 1))])
    f = domain.grid("X1") * domain.grid("X2")
    return domain, [LinearConstraint(domain, f, 1.0, 0.0, "E[X1*X2]")], Dag(("X1", "X2"))


def sun_lauderdale_problem(points: int = 41, lo: float = -3.0, hi: float = 3.0,
                           mean_xy: float = 0.3):
    """Gridded cause X with a binary effect Y and first/second moment constraints."""
    xs = tuple(float(v) for v in np.linspace(lo, hi, points))
    domain = FiniteDomain([("X", xs), ("Y", (0, 1))])
    X, Y = domain.grid("X"), domain.grid("Y")
    constraints = [
        LinearConstraint(domain, X, 0.0, 0.0, "E[X]"),
        LinearConstraint(domain, X**2, 1.0, 0.0, "E[X^2]"),
        LinearConstraint(domain, Y, 0.5, 0.0, "E[Y]"),
        LinearConstraint(domain, X * Y, mean_xy, 0.0, "E[X*Y]"),
    ]
    return domain, constraints


APPENDIX_VARS = ("Y_prev", "Y_t", "X_t")


def appendix_relation() -> Relation:
    """X_t = 1 couples (Y_prev, Y_t) through the ball device; X_t = 0 leaves them free."""
    from .pir import device_relation
    device = device_relation().members
    domain = FiniteDomain([("Y_prev", (1, 2, 3)), ("Y_t", (1, 2, 3)), ("X_t", (0, 1))])
    return Relation(domain, frozenset(p for p in domain.points() if p[2] == 0 or (p[0], p[1]) in device))


@dataclass
class AppendixComparison:
    admissible: int
    uniform_marginal: ProbTable
    sequential_marginal: ProbTable
    sequential_fit: CausalFitResult


def appendix_timeseries_compare() -> AppendixComparison:
    rel = appendix_relation()
    uniform = ProbTable.uniform_over(rel)
    dag = Dag(APPENDIX_VARS, (("Y_prev", "Y_t"), ("X_t", "Y_t")))
    fit = causal_maxent_dag(rel.domain, [relation_to_constraint(rel)], dag, ["Y_prev", "X_t", "Y_t"])
    return AppendixComparison(len(rel), marginalize(uniform, ["Y_prev"]),
                              marginalize(fit.joint, ["Y_prev"]), fit)
