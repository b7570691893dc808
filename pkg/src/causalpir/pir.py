"""Causal and symmetric principle of insufficient reason on finite relations.

The causal variant is uniform over admissible cause values and then uniform
over the effect options left open by each cause value.  The symmetric
variant is uniform over the admissible pairs themselves.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .core import (DomainError, FiniteDomain, ProbTable, Relation, SizeCapError,
                   is_independent, marginalize, mutual_information)

FUNCTION_ENUMERATION_CAP = 10**6


class Direction(enum.Enum):
    CAUSE_TO_EFFECT = "X->Y"
    EFFECT_TO_CAUSE = "Y->X"
    SYMMETRIC = "symmetric"


def _split(relation: Relation, cause: str | Sequence[str]) -> tuple[list[str], list[str]]:
    cause = [cause] if isinstance(cause, str) else list(cause)
    relation.domain.axes(cause)
    effect = [n for n in relation.domain.names if n not in cause]
    if not effect:
        raise DomainError("every variable was declared a cause; nothing is left for the effect")
    return cause, effect


def _require_nonempty(relation: Relation) -> None:
    if not relation.members:
        raise DomainError("the relation is empty")


def _options(relation: Relation, cause: list[str], effect: list[str]) -> dict[tuple, set[tuple]]:
    cax = relation.domain.axes(cause)
    eax = relation.domain.axes(effect)
    opts: dict[tuple, set[tuple]] = {}
    for m in relation.members:
        opts.setdefault(tuple(m[a] for a in cax), set()).add(tuple(m[a] for a in eax))
    return opts


def _assemble(domain: FiniteDomain, cause: list[str], effect: list[str], c: tuple, e: tuple) -> tuple:
    lookup = dict(zip(cause, c)) | dict(zip(effect, e))
    return tuple(lookup[n] for n in domain.names)


def cause_support(relation: Relation, cause: str | Sequence[str]) -> set[tuple]:
    """Cause values (as tuples) that appear in some admissible assignment."""
    _require_nonempty(relation)
    cause, effect = _split(relation, cause)
    return set(_options(relation, cause, effect))


@dataclass(frozen=True)
class FunctionClassSummary:
    cause: tuple[str, ...]
    cause_support: frozenset
    options: dict
    count: int


def function_class(relation: Relation, cause: str | Sequence[str]) -> FunctionClassSummary:
    """Cause support, per-cause options and the exact size of the admissible function class.

    A function from cause values to effect values is admissible when it
    stays inside the relation on the cause support; off the support it is
    unrestricted.
    """
    _require_nonempty(relation)
    cause, effect = _split(relation, cause)
    opts = _options(relation, cause, effect)
    n_causes = math.prod(len(relation.domain.values(n)) for n in cause)
    n_effects = math.prod(len(relation.domain.values(n)) for n in effect)
    count = math.prod(len(o) for o in opts.values()) * n_effects ** (n_causes - len(opts))
    return FunctionClassSummary(tuple(cause), frozenset(opts),
                                {k: frozenset(v) for k, v in sorted(opts.items())}, count)


def _cause_effect_values(relation: Relation, cause: list[str], effect: list[str]):
    d = relation.domain
    cvals = list(itertools.product(*(d.values(n) for n in cause)))
    evals = list(itertools.product(*(d.values(n) for n in effect)))
    return cvals, evals


def enumerate_function_class(relation: Relation, cause: str | Sequence[str],
                             cap: int = FUNCTION_ENUMERATION_CAP) -> list[tuple]:
    """Brute-force list of admissible functions, each a tuple of effect values per cause value."""
    _require_nonempty(relation)
    cause, effect = _split(relation, cause)
    cvals, evals = _cause_effect_values(relation, cause, effect)
    total = len(evals) ** len(cvals)
    if total > cap:
        raise SizeCapError(f"{total} functions exceed the enumeration cap {cap}")
    opts = _options(relation, cause, effect)
    return [f for f in itertools.product(evals, repeat=len(cvals))
            if all(f[i] in opts[c] for i, c in enumerate(cvals) if c in opts)]


def function_space_joint(relation: Relation, cause: str | Sequence[str],
                         cap: int = FUNCTION_ENUMERATION_CAP) -> ProbTable:
    """Joint from a uniform cause on its support and a uniform admissible function.

    Enumerates the whole function space; used as an independent check of
    :func:`causal_pir_joint`.
    """
    cause, effect = _split(relation, cause)
    cvals, _ = _cause_effect_values(relation, cause, effect)
    support = cause_support(relation, cause)
    funcs = enumerate_function_class(relation, cause, cap)
    table: dict[tuple, Fraction] = {}
    px = Fraction(1, len(support))
    for i, c in enumerate(cvals):
        if c not in support:
            continue
        for f in funcs:
            pt = _assemble(relation.domain, cause, effect, c, f[i])
            table[pt] = table.get(pt, Fraction(0)) + px / len(funcs)
    return ProbTable.from_dict(relation.domain, table)


def causal_pir_joint(relation: Relation, cause: str | Sequence[str]) -> ProbTable:
    """Uniform over the cause support, then uniform over each cause value's options."""
    _require_nonempty(relation)
    cause, effect = _split(relation, cause)
    opts = _options(relation, cause, effect)
    px = Fraction(1, len(opts))
    table = {}
    for c, effects in opts.items():
        for e in effects:
            table[_assemble(relation.domain, cause, effect, c, e)] = px / len(effects)
    return ProbTable.from_dict(relation.domain, table)


def symmetric_pir_joint(relation: Relation) -> ProbTable:
    _require_nonempty(relation)
    return ProbTable.uniform_over(relation)


def _direction_joint(relation: Relation, direction: Direction) -> ProbTable:
    names = relation.domain.names
    if direction is Direction.SYMMETRIC:
        return symmetric_pir_joint(relation)
    if len(names) != 2:
        raise DomainError("directional likelihoods are defined for pairs of variables")
    cause = names[0] if direction is Direction.CAUSE_TO_EFFECT else names[1]
    return causal_pir_joint(relation, cause)


def pir_likelihood(relation: Relation, observations: Sequence[Sequence], direction: Direction) -> Fraction:
    """Product of joint probabilities of i.i.d. observations under the PIR prior.

    Observations outside the relation raise: they contradict the relation
    itself rather than favouring either direction.
    """
    for obs in observations:
        if tuple(obs) not in relation:
            raise DomainError(f"observation {tuple(obs)} lies outside the relation")
    joint = _direction_joint(relation, direction)
    out = Fraction(1)
    for obs in observations:
        out *= joint[tuple(obs)]
    return out


@dataclass(frozen=True)
class DirectionInference:
    direction: Direction | None  # None on a tie
    likelihood_forward: Fraction
    likelihood_backward: Fraction

    @property
    def tie(self) -> bool:
        return self.direction is None

    @property
    def label(self) -> str:
        return "tie" if self.direction is None else self.direction.value


def infer_direction(relation: Relation, observations: Sequence[Sequence]) -> DirectionInference:
    fwd = pir_likelihood(relation, observations, Direction.CAUSE_TO_EFFECT)
    bwd = pir_likelihood(relation, observations, Direction.EFFECT_TO_CAUSE)
    if fwd > bwd:
        d = Direction.CAUSE_TO_EFFECT
    elif bwd > fwd:
        d = Direction.EFFECT_TO_CAUSE
    else:
        d = None
    return DirectionInference(d, fwd, bwd)


# --- bundled relations -------------------------------------------------------

def device_relation(cause: str = "X", effect: str = "Y") -> Relation:
    """The three-slot ball device: slot 1 on top reaches 2 or 3 below, slots 2 and 3 reach 1."""
    domain = FiniteDomain([(cause, (1, 2, 3)), (effect, (1, 2, 3))])
    return Relation(domain, frozenset({(1, 2), (1, 3), (2, 1), (3, 1)}))


COME, HOME = "come", "home"


def pearl_relation() -> Relation:
    domain = FiniteDomain([("A", (COME, HOME)), ("B", (COME, HOME)), ("C", (COME, HOME))])
    members = frozenset(p for p in domain.points() if p != (COME, COME, COME))
    return Relation(domain, members)


@dataclass(frozen=True)
class PearlReport:
    causal: ProbTable
    symmetric: ProbTable
    causal_ab: ProbTable
    symmetric_ab: ProbTable
    causal_independent: bool
    symmetric_independent: bool
    causal_mi: float
    symmetric_mi: float
    causal_c_given_both_come: dict


def pearl_puzzle() -> PearlReport:
    """A and B both come or not; C will not come when both of them come."""
    rel = pearl_relation()
    causal = causal_pir_joint(rel, ["A", "B"])
    symmetric = symmetric_pir_joint(rel)
    both = [causal[(COME, COME, c)] for c in (COME, HOME)]
    total = sum(both)
    return PearlReport(
        causal=causal,
        symmetric=symmetric,
        causal_ab=marginalize(causal, ["A", "B"]),
        symmetric_ab=marginalize(symmetric, ["A", "B"]),
        causal_independent=is_independent(causal, ["A"], ["B"]),
        symmetric_independent=is_independent(symmetric, ["A"], ["B"]),
        causal_mi=mutual_information(causal, ["A"], ["B"]),
        symmetric_mi=mutual_information(symmetric, ["A"], ["B"]),
        causal_c_given_both_come={COME: both[0] / total, HOME: both[1] / total},
    )


def conditional_rows(joint: ProbTable, given: Sequence[str]) -> dict[tuple, dict[tuple, Fraction]]:
    """``P(rest | given)`` rows for every given value with positive mass (exact tables)."""
    d = joint.domain
    given = list(given)
    rest = [n for n in d.names if n not in given]
    gax, rax = d.axes(given), d.axes(rest)
    rows: dict[tuple, dict[tuple, Fraction]] = {}
    for p, w in joint.items():
        g = tuple(p[a] for a in gax)
        rows.setdefault(g, {})[tuple(p[a] for a in rax)] = w
    out = {}
    for g, row in rows.items():
        tot = sum(row.values())
        if tot > 0:
            out[g] = {k: v / tot for k, v in row.items()}
    return out


def cause_marginal_counts(relation: Relation, cause: str) -> np.ndarray:
    """``|opts(x)|`` per value of ``cause`` in declaration order (0 outside the support)."""
    cause_l, effect = _split(relation, cause)
    opts = _options(relation, cause_l, effect)
    return np.array([len(opts.get((v,), ())) for v in relation.domain.values(cause)])
