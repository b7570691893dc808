"""Finite domains, joint and conditional tables, relations and entropy functionals.

Two arithmetic modes coexist.  Exact tables hold :class:`fractions.Fraction`
weights in numpy object arrays; floating tables hold ``float64``.  Domain
points are addressed in C order over the declared variables (the last
variable varies fastest), which is the canonical order used everywhere.

Entropies are in nats and use the convention ``0 log 0 = 0``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Iterator, Mapping, Sequence

import numpy as np

FLOAT_SUM_TOL = 1e-12


class DomainError(ValueError):
    """Unknown variable, invalid point, or malformed table."""


class SizeCapError(RuntimeError):
    """An enumeration would exceed its configured size cap."""


class FiniteDomain:
    """Ordered product of named finite value sets."""

    def __init__(self, variables: Iterable[tuple[str, Sequence[Any]]]):
        variables = [(str(name), tuple(values)) for name, values in variables]
        if not variables:
            raise DomainError("a domain needs at least one variable")
        names = [name for name, _ in variables]
        if len(set(names)) != len(names):
            raise DomainError(f"duplicate variable names in {names}")
        for name, values in variables:
            if not values:
                raise DomainError(f"variable {name!r} has no values")
            if len(set(values)) != len(values):
                raise DomainError(f"variable {name!r} has repeated values")
        self._variables = tuple(variables)
        self._position = {name: i for i, name in enumerate(names)}
        self._value_index = [{v: k for k, v in enumerate(vals)} for _, vals in variables]

    @property
    def variables(self) -> tuple[tuple[str, tuple], ...]:
        return self._variables

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self._variables)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(vals) for _, vals in self._variables)

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def values(self, name: str) -> tuple:
        return self._variables[self.axis(name)][1]

    def axis(self, name: str) -> int:
        try:
            return self._position[name]
        except KeyError:
            raise DomainError(f"unknown variable {name!r}; domain has {self.names}") from None

    def axes(self, names: Sequence[str]) -> tuple[int, ...]:
        return tuple(self.axis(n) for n in names)

    def sub(self, names: Sequence[str]) -> "FiniteDomain":
        """Domain over ``names`` in the given order."""
        return FiniteDomain([(n, self.values(n)) for n in names])

    def value_index(self, name: str, value: Any) -> int:
        try:
            return self._value_index[self.axis(name)][value]
        except KeyError:
            raise DomainError(f"{value!r} is not a value of {name!r}") from None

    def index_of(self, point: Sequence[Any]) -> tuple[int, ...]:
        """Multi-index of a full assignment given as labels."""
        point = tuple(point)
        if len(point) != len(self._variables):
            raise DomainError(f"point {point} has wrong arity for {self.names}")
        try:
            return tuple(self._value_index[i][v] for i, v in enumerate(point))
        except KeyError:
            raise DomainError(f"point {point} is not in the domain {self.names}") from None

    def flat_index(self, point: Sequence[Any]) -> int:
        return int(np.ravel_multi_index(self.index_of(point), self.shape))

    def points(self) -> Iterator[tuple]:
        """All assignments in canonical order."""
        return itertools.product(*(vals for _, vals in self._variables))

    def grid(self, name: str) -> np.ndarray:
        """Float array of ``name``'s values broadcast over the full shape."""
        ax = self.axis(name)
        vals = np.asarray(self.values(name), dtype=float)
        shape = [1] * len(self._variables)
        shape[ax] = len(vals)
        return np.broadcast_to(vals.reshape(shape), self.shape)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, FiniteDomain) and self._variables == other._variables

    def __hash__(self) -> int:
        return hash(self._variables)

    def __repr__(self) -> str:
        inner = ", ".join(f"{n}={list(v)}" for n, v in self._variables)
        return f"FiniteDomain({inner})"


@dataclass(frozen=True)
class Relation:
    """A set of admissible full assignments of ``domain``."""

    domain: FiniteDomain
    members: frozenset

    def __post_init__(self):
        members = frozenset(tuple(m) for m in self.members)
        for m in members:
            self.domain.index_of(m)
        object.__setattr__(self, "members", members)

    @classmethod
    def full(cls, domain: FiniteDomain) -> "Relation":
        return cls(domain, frozenset(domain.points()))

    @classmethod
    def from_mask(cls, domain: FiniteDomain, mask: np.ndarray) -> "Relation":
        pts = list(domain.points())
        return cls(domain, frozenset(p for p, keep in zip(pts, np.ravel(mask)) if keep))

    def __contains__(self, point) -> bool:
        return tuple(point) in self.members

    def __len__(self) -> int:
        return len(self.members)

    def mask(self) -> np.ndarray:
        out = np.zeros(self.domain.shape, dtype=bool)
        for m in self.members:
            out[self.domain.index_of(m)] = True
        return out

    def sorted_members(self) -> list[tuple]:
        return sorted(self.members, key=self.domain.index_of)

    def intersect(self, other: "Relation") -> "Relation":
        if other.domain != self.domain:
            raise DomainError("relations live on different domains")
        return Relation(self.domain, self.members & other.members)

    def reorder(self, names: Sequence[str]) -> "Relation":
        """Same relation with variables permuted into ``names`` order."""
        axes = self.domain.axes(names)
        if sorted(axes) != list(range(len(self.domain.names))):
            raise DomainError("reorder needs a permutation of all variables")
        return Relation(self.domain.sub(names), frozenset(tuple(m[a] for a in axes) for m in self.members))

    def transpose(self) -> "Relation":
        """Reverse the variable order (swap cause and effect for pairs)."""
        return self.reorder(self.domain.names[::-1])

    def project(self, names: Sequence[str]) -> set[tuple]:
        axes = self.domain.axes(names)
        return {tuple(m[a] for a in axes) for m in self.members}


def _as_exact(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, (int, np.integer)):
        return Fraction(int(value))
    if isinstance(value, str):
        return Fraction(value)
    raise DomainError(f"exact tables need rational weights, got {value!r}")


class ProbTable:
    """Joint distribution over a :class:`FiniteDomain`.

    ``weights`` has shape ``domain.shape``.  With ``exact=True`` the entries
    are Fractions and must sum to exactly one, otherwise they are floats
    summing to one within 1e-12.
    """

    __slots__ = ("domain", "weights", "exact")

    def __init__(self, domain: FiniteDomain, weights, exact: bool | None = None):
        arr = np.asarray(weights, dtype=object if exact else None)
        if exact is None:
            exact = arr.dtype == object
        if arr.size != domain.size:
            raise DomainError(f"expected {domain.size} weights, got {arr.size}")
        arr = arr.reshape(domain.shape)
        if exact:
            flat = [_as_exact(w) for w in arr.ravel()]
            arr = np.empty(domain.size, dtype=object)
            arr[:] = flat
            arr = arr.reshape(domain.shape)
            if any(w < 0 for w in flat):
                raise DomainError("negative probability")
            if sum(flat) != 1:
                raise DomainError(f"weights sum to {sum(flat)}, not 1")
        else:
            arr = np.array(arr, dtype=float)
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise DomainError("weights must be finite and nonnegative")
            if abs(arr.sum() - 1.0) > FLOAT_SUM_TOL:
                raise DomainError(f"weights sum to {arr.sum()!r}, not 1")
        arr.setflags(write=False)
        self.domain = domain
        self.weights = arr
        self.exact = bool(exact)

    @classmethod
    def from_dict(cls, domain: FiniteDomain, table: Mapping[tuple, Any], exact: bool = True) -> "ProbTable":
        arr = np.zeros(domain.shape, dtype=object if exact else float)
        if exact:
            arr[...] = Fraction(0)
        for point, w in table.items():
            arr[domain.index_of(point)] = _as_exact(w) if exact else float(w)
        return cls(domain, arr, exact=exact)

    @classmethod
    def uniform_over(cls, relation: Relation) -> "ProbTable":
        if not relation.members:
            raise DomainError("uniform distribution over an empty set")
        w = Fraction(1, len(relation))
        return cls.from_dict(relation.domain, {m: w for m in relation.members})

    @classmethod
    def uniform(cls, domain: FiniteDomain, exact: bool = True) -> "ProbTable":
        if exact:
            return cls(domain, np.full(domain.shape, Fraction(1, domain.size), dtype=object), exact=True)
        return cls(domain, np.full(domain.shape, 1.0 / domain.size))

    def __getitem__(self, point) -> Any:
        return self.weights[self.domain.index_of(point)]

    def items(self) -> Iterator[tuple[tuple, Any]]:
        return zip(self.domain.points(), self.weights.ravel())

    def as_dict(self, support_only: bool = True) -> dict[tuple, Any]:
        return {p: w for p, w in self.items() if not support_only or w > 0}

    def support(self) -> Relation:
        return Relation(self.domain, frozenset(p for p, w in self.items() if w > 0))

    def to_float(self) -> "ProbTable":
        if not self.exact:
            return self
        return ProbTable(self.domain, self.weights.astype(float))

    def array(self) -> np.ndarray:
        """Float copy of the weights."""
        return np.array(self.weights, dtype=float)

    def equals(self, other: "ProbTable", atol: float = 0.0) -> bool:
        if self.domain != other.domain:
            return False
        if atol == 0.0 and self.exact and other.exact:
            return bool(np.all(self.weights == other.weights))
        return bool(np.max(np.abs(self.array() - other.array())) <= atol)

    def reorder(self, names: Sequence[str]) -> "ProbTable":
        axes = self.domain.axes(names)
        return ProbTable(self.domain.sub(names), np.transpose(self.weights, axes), exact=self.exact)

    def __repr__(self) -> str:
        mode = "exact" if self.exact else "float"
        body = ", ".join(f"{p}: {w}" for p, w in self.as_dict().items())
        return f"ProbTable[{mode}]({body})"


class ConditionalTable:
    """Row-stochastic table ``q(target | given)``.

    ``rows`` has shape ``given.shape + target.shape``.  An empty ``given``
    domain (a root node) is represented by ``given=None`` and a single row.
    """

    __slots__ = ("given", "target", "rows", "exact")

    def __init__(self, given: FiniteDomain | None, target: FiniteDomain, rows, exact: bool | None = None):
        gshape = given.shape if given is not None else ()
        arr = np.asarray(rows, dtype=object if exact else None)
        if exact is None:
            exact = arr.dtype == object
        arr = arr.reshape(gshape + target.shape)
        flat_rows = arr.reshape(math.prod(gshape), target.size)
        if exact:
            flat_rows = np.array([[_as_exact(w) for w in r] for r in flat_rows], dtype=object)
            for r in flat_rows:
                if any(w < 0 for w in r) or sum(r) != 1:
                    raise DomainError("conditional rows must be distributions")
        else:
            flat_rows = np.array(flat_rows, dtype=float)
            if np.any(flat_rows < 0) or np.any(np.abs(flat_rows.sum(axis=1) - 1) > FLOAT_SUM_TOL):
                raise DomainError("conditional rows must be distributions")
        arr = flat_rows.reshape(gshape + target.shape)
        arr.setflags(write=False)
        self.given = given
        self.target = target
        self.rows = arr
        self.exact = bool(exact)

    def row(self, given_point: Sequence[Any] = ()) -> np.ndarray:
        if self.given is None:
            return self.rows
        return self.rows[self.given.index_of(given_point)]

    def array(self) -> np.ndarray:
        return np.array(self.rows, dtype=float)

    def __repr__(self) -> str:
        g = self.given.names if self.given is not None else ()
        return f"ConditionalTable({self.target.names} | {g})"


@dataclass(frozen=True, eq=False)
class LinearConstraint:
    """``|E_p[f] - target| <= epsilon`` for a table ``f`` over ``domain``.

    Constraints built from a :class:`Relation` keep it in ``relation``; the
    solvers then treat them as support restrictions instead of expectations.
    """

    domain: FiniteDomain
    f: np.ndarray
    target: float
    epsilon: float = 0.0
    id: str = ""
    relation: Relation | None = field(default=None, compare=False)

    def __post_init__(self):
        f = np.array(self.f, dtype=float)
        if f.size != self.domain.size:
            raise DomainError(f"constraint {self.id!r}: table has {f.size} entries, domain has {self.domain.size}")
        if not np.all(np.isfinite(f)):
            raise DomainError(f"constraint {self.id!r}: non-finite entries in f")
        if not (self.epsilon >= 0 and math.isfinite(self.epsilon)):
            raise DomainError(f"constraint {self.id!r}: epsilon must be a finite number >= 0")
        f = f.reshape(self.domain.shape)
        f.setflags(write=False)
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "target", float(self.target))
        object.__setattr__(self, "epsilon", float(self.epsilon))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LinearConstraint):
            return NotImplemented
        return (self.domain == other.domain and np.array_equal(self.f, other.f) and self.target == other.target
                and self.epsilon == other.epsilon and self.id == other.id)

    def __hash__(self) -> int:
        return hash((self.domain, self.f.tobytes(), self.target, self.epsilon, self.id))

    @property
    def is_support(self) -> bool:
        return self.relation is not None

    def expectation(self, p: ProbTable) -> float:
        return float(np.sum(p.array() * self.f))

    def violation(self, p: ProbTable) -> float:
        """Amount by which ``p`` misses the tolerance band (0 when satisfied)."""
        return max(0.0, abs(self.expectation(p) - self.target) - self.epsilon)

    def satisfied_by(self, p: ProbTable, tol: float = 0.0) -> bool:
        if self.relation is not None and p.exact:
            return all(m in self.relation for m in p.support().members)
        return self.violation(p) <= tol

    def with_epsilon(self, epsilon: float) -> "LinearConstraint":
        return LinearConstraint(self.domain, self.f, self.target, epsilon, self.id, self.relation)


def relation_to_constraint(relation: Relation, id: str = "") -> LinearConstraint:
    """Mass outside ``relation`` must be zero: indicator of the complement, target 0."""
    if not relation.members:
        raise DomainError("empty relation")
    f = (~relation.mask()).astype(float)
    return LinearConstraint(relation.domain, f, 0.0, 0.0, id or "support", relation)


def marginalize(joint: ProbTable, keep: Sequence[str]) -> ProbTable:
    """Sum out every variable not in ``keep``; result variables follow ``keep``'s order."""
    keep = list(keep)
    if not keep:
        raise DomainError("keep at least one variable")
    if len(set(keep)) != len(keep):
        raise DomainError(f"repeated variables in {keep}")
    axes = joint.domain.axes(keep)
    drop = tuple(i for i in range(len(joint.domain.names)) if i not in axes)
    w = joint.weights.sum(axis=drop) if drop else joint.weights
    remaining = [a for a in range(len(joint.domain.names)) if a in axes]
    order = [remaining.index(a) for a in axes]
    w = np.transpose(np.asarray(w, dtype=object if joint.exact else float).reshape(
        [joint.domain.shape[a] for a in remaining]), order)
    return ProbTable(joint.domain.sub(keep), w, exact=joint.exact)


def entropy(p: ProbTable) -> float:
    w = p.array().ravel()
    w = w[w > 0]
    return float(-np.sum(w * np.log(w)))


def conditional_entropy(joint: ProbTable, condition: Sequence[str]) -> float:
    """``H(rest | condition)`` in nats; empty ``condition`` gives the joint entropy."""
    condition = list(condition)
    joint.domain.axes(condition)
    if not condition:
        return entropy(joint)
    return entropy(joint) - entropy(marginalize(joint, condition))


def mutual_information(joint: ProbTable, a: Sequence[str], b: Sequence[str], given: Sequence[str] = ()) -> float:
    """``I(A; B | given)`` computed from entropies of marginals."""
    given = list(given)

    def h(names):
        return entropy(marginalize(joint, names)) if names else 0.0

    return h(list(a) + given) + h(list(b) + given) - h(list(a) + list(b) + given) - h(given)


def is_independent(joint: ProbTable, a: Sequence[str], b: Sequence[str]) -> bool:
    """Exact factorization test ``P(a, b) = P(a) P(b)`` (exact tables only)."""
    if not joint.exact:
        raise DomainError("exact independence test needs an exact table")
    pab = marginalize(joint, list(a) + list(b)).weights
    pa = marginalize(joint, list(a)).weights
    pb = marginalize(joint, list(b)).weights
    outer = np.multiply.outer(pa, pb)
    return bool(np.all(pab == outer))


# --- exact entropy as a rational combination of logs of primes ---------------

def _factorize(n: int) -> dict[int, int]:
    out: dict[int, int] = {}
    d = 2
    while d * d <= n:
        while n % d == 0:
            out[d] = out.get(d, 0) + 1
            n //= d
        d += 1 if d == 2 else 2
    if n > 1:
        out[n] = out.get(n, 0) + 1
    return out


class LogCombination:
    """Exact value ``sum_p c_p log p`` over primes ``p`` with rational ``c_p``.

    Every entropy of a rational distribution has this form, so identities
    such as the chain rule can be checked with ``==`` instead of a tolerance.
    """

    __slots__ = ("coeffs",)

    def __init__(self, coeffs: Mapping[int, Fraction] | None = None):
        self.coeffs = {p: Fraction(c) for p, c in (coeffs or {}).items() if c != 0}

    @classmethod
    def log_of(cls, q: Fraction) -> "LogCombination":
        q = Fraction(q)
        if q <= 0:
            raise DomainError("log of a nonpositive number")
        coeffs: dict[int, Fraction] = {}
        for p, e in _factorize(q.numerator).items():
            coeffs[p] = coeffs.get(p, Fraction(0)) + e
        for p, e in _factorize(q.denominator).items():
            coeffs[p] = coeffs.get(p, Fraction(0)) - e
        return cls(coeffs)

    def __add__(self, other: "LogCombination") -> "LogCombination":
        out = dict(self.coeffs)
        for p, c in other.coeffs.items():
            out[p] = out.get(p, Fraction(0)) + c
        return LogCombination(out)

    def __neg__(self) -> "LogCombination":
        return LogCombination({p: -c for p, c in self.coeffs.items()})

    def __sub__(self, other: "LogCombination") -> "LogCombination":
        return self + (-other)

    def scale(self, k) -> "LogCombination":
        return LogCombination({p: c * k for p, c in self.coeffs.items()})

    def __eq__(self, other: object) -> bool:
        return isinstance(other, LogCombination) and self.coeffs == other.coeffs

    def __hash__(self) -> int:
        return hash(frozenset(self.coeffs.items()))

    def __float__(self) -> float:
        return float(sum(float(c) * math.log(p) for p, c in self.coeffs.items()))

    def __repr__(self) -> str:
        if not self.coeffs:
            return "0"
        return " + ".join(f"{c}*log({p})" for p, c in sorted(self.coeffs.items()))


def exact_entropy(p: ProbTable) -> LogCombination:
    if not p.exact:
        raise DomainError("exact entropy needs an exact table")
    total = LogCombination()
    for w in p.weights.ravel():
        if w > 0:
            total = total - LogCombination.log_of(w).scale(w)
    return total


def exact_conditional_entropy(joint: ProbTable, condition: Sequence[str]) -> LogCombination:
    condition = list(condition)
    joint.domain.axes(condition)
    if not condition:
        return exact_entropy(joint)
    return exact_entropy(joint) - exact_entropy(marginalize(joint, condition))


def total_variation(p: ProbTable, q: ProbTable) -> float:
    if p.domain != q.domain:
        raise DomainError("distributions on different domains")
    return 0.5 * float(np.abs(p.array() - q.array()).sum())


# --- canonical JSON-ready serialization --------------------------------------

def _encode_weight(w, exact: bool):
    return str(Fraction(w)) if exact else float(w)


def domain_to_dict(domain: FiniteDomain) -> dict:
    return {"variables": [{"name": n, "values": list(v)} for n, v in domain.variables]}


def domain_from_dict(data: Mapping) -> FiniteDomain:
    return FiniteDomain([(v["name"], v["values"]) for v in data["variables"]])


def relation_to_dict(relation: Relation) -> dict:
    return {"domain": domain_to_dict(relation.domain),
            "members": [list(m) for m in relation.sorted_members()]}


def relation_from_dict(data: Mapping, domain: FiniteDomain | None = None) -> Relation:
    domain = domain or domain_from_dict(data["domain"])
    return Relation(domain, frozenset(tuple(m) for m in data["members"]))


def table_to_dict(p: ProbTable) -> dict:
    return {"domain": domain_to_dict(p.domain),
            "mode": "exact" if p.exact else "float",
            "weights": [_encode_weight(w, p.exact) for w in p.weights.ravel()]}


def table_from_dict(data: Mapping) -> ProbTable:
    domain = domain_from_dict(data["domain"])
    exact = data.get("mode", "float") == "exact"
    if exact:
        return ProbTable(domain, np.array([Fraction(w) for w in data["weights"]], dtype=object), exact=True)
    return ProbTable(domain, np.array(data["weights"], dtype=float))


def constraint_to_dict(c: LinearConstraint) -> dict:
    out = {"id": c.id, "domain": domain_to_dict(c.domain), "f": [float(v) for v in c.f.ravel()],
           "target": c.target, "epsilon": c.epsilon}
    if c.relation is not None:
        out["support"] = [list(m) for m in c.relation.sorted_members()]
    return out


def constraint_from_dict(data: Mapping) -> LinearConstraint:
    domain = domain_from_dict(data["domain"])
    if "support" in data:
        rel = Relation(domain, frozenset(tuple(m) for m in data["support"]))
        return relation_to_constraint(rel, data.get("id", ""))
    return LinearConstraint(domain, np.array(data["f"], dtype=float), data["target"],
                            data.get("epsilon", 0.0), data.get("id", ""))
