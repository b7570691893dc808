"""Exact counting behind the entropy-concentration argument.

All counts are Python integers.  The census enumerates empirical types
(frequency tables over the admissible pairs) instead of raw tuples: both
measures studied here are exchangeable, so the probability of a type is its
multinomial multiplicity times the per-tuple weight, and results match raw
enumeration exactly.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence

from .core import DomainError, ProbTable, Relation, SizeCapError
from .pir import _options, _split, causal_pir_joint, symmetric_pir_joint

CENSUS_CAP = 10**7
DEFAULT_DELTAS = (Fraction(1, 10), Fraction(1, 5), Fraction(2, 5))


def _check_counts(counts: Sequence[int]) -> list[int]:
    counts = [int(c) for c in counts]
    if not counts or any(c < 0 for c in counts):
        raise DomainError(f"invalid frequency vector {counts}")
    if sum(counts) < 1:
        raise DomainError("a frequency vector needs n >= 1")
    return counts


def count_realizations(counts: Sequence[int]) -> int:
    """Multinomial coefficient ``n! / (n_1! ... n_k!)``."""
    counts = _check_counts(counts)
    out, total = 1, 0
    for c in counts:
        total += c
        out *= math.comb(total, c)
    return out


def empirical_entropy(counts: Sequence[int]) -> float:
    counts = _check_counts(counts)
    n = sum(counts)
    return -sum(c / n * math.log(c / n) for c in counts if c)


def log_count_entropy_gap(counts: Sequence[int]) -> float:
    """``|(1/n) log #(counts) - H(counts / n)|`` with the count evaluated exactly."""
    counts = _check_counts(counts)
    n = sum(counts)
    return abs(math.log(count_realizations(counts)) / n - empirical_entropy(counts))


def gap_envelope(k: int, n: int, constant: float = 2.0) -> float:
    """Sanity rail ``constant * k log n / n`` for :func:`log_count_entropy_gap` (n >= 2)."""
    return constant * k * math.log(n) / n


def conditional_count(cause_counts: Sequence[int], table: Sequence[Sequence[int]]) -> int:
    """Number of effect tuples with per-cause frequency rows ``table`` for a fixed cause tuple."""
    cause_counts = [int(c) for c in cause_counts]
    if len(cause_counts) != len(table):
        raise DomainError("one table row per cause value is required")
    out = 1
    for n_i, row in zip(cause_counts, table):
        if any(int(c) < 0 for c in row) or sum(int(c) for c in row) != n_i:
            raise DomainError(f"row {list(row)} does not sum to the cause frequency {n_i}")
        if n_i:
            out *= count_realizations(row)
    return out


def conditional_log_count_gap(cause_counts: Sequence[int], table: Sequence[Sequence[int]]) -> float:
    """``|(1/n) log conditional_count - H(effect | cause)|`` of the empirical table."""
    n = sum(cause_counts)
    h = 0.0
    for n_i, row in zip(cause_counts, table):
        for c in row:
            if c:
                h -= c / n * math.log(c / n_i)
    return abs(math.log(conditional_count(cause_counts, table)) / n - h)


def compositions(n: int, k: int) -> Iterator[tuple[int, ...]]:
    """All ``k``-tuples of nonnegative integers summing to ``n`` (stars and bars)."""
    for bars in itertools.combinations(range(n + k - 1), k - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(n + k - 2 - prev)
        yield tuple(out)


@dataclass(frozen=True)
class CensusRecord:
    n: int
    delta: Fraction
    measure: str
    target: str
    mass: Fraction

    def to_dict(self) -> dict:
        return {"n": self.n, "delta": str(self.delta), "measure": self.measure,
                "target": self.target, "mass": str(self.mass)}


@dataclass
class Census:
    n: int
    records: list[CensusRecord]
    expected: dict[str, ProbTable]
    targets: dict[str, ProbTable]

    def mass(self, measure: str, target: str, delta) -> Fraction:
        delta = _as_delta(delta)
        for r in self.records:
            if r.measure == measure and r.target == target and r.delta == delta:
                return r.mass
        raise KeyError((measure, target, delta))


def _as_delta(d) -> Fraction:
    # floats go through their shortest repr so 0.4 means 2/5
    return Fraction(repr(d)) if isinstance(d, float) else Fraction(d)


def _l1(counts, n, target_weights) -> Fraction:
    return sum((abs(Fraction(c, n) - t) for c, t in zip(counts, target_weights)), Fraction(0))


def concentration_census(relation: Relation, cause: str, n: int,
                         deltas: Sequence = DEFAULT_DELTAS, cap: int = CENSUS_CAP) -> Census:
    """Exact mass of empirical joints near the causal and symmetric PIR joints.

    Two measures on pairs of ``n``-tuples are compared: ``causal`` draws the
    cause tuple uniformly from the cause support and then each effect value
    uniformly among its options; ``uniform`` draws uniformly from admissible
    ``n``-tuples of pairs.  Distances are L1 between the empirical joint and
    the target joint.
    """
    if n < 1:
        raise DomainError("n must be positive")
    cause_l, effect = _split(relation, cause)
    opts = _options(relation, cause_l, effect)
    members = relation.sorted_members()
    k = len(members)
    n_types = math.comb(n + k - 1, k - 1)
    if n_types > cap:
        raise SizeCapError(f"{n_types} type classes exceed the census cap {cap}")
    cax = relation.domain.axes(cause_l)
    cause_of = [tuple(m[a] for a in cax) for m in members]
    n_causes = len(opts)
    n_opts = [len(opts[c]) for c in cause_of]

    targets = {"causal": causal_pir_joint(relation, cause), "symmetric": symmetric_pir_joint(relation)}
    tw = {name: [t[m] for m in members] for name, t in targets.items()}
    deltas = [_as_delta(d) for d in deltas]
    mass = {(ms, tg, d): Fraction(0) for ms in ("causal", "uniform") for tg in targets for d in deltas}
    expected = {ms: [Fraction(0)] * k for ms in ("causal", "uniform")}
    n_fact = math.factorial(n)
    causal_den = n_causes ** n
    uniform_den = k ** n

    for counts in compositions(n, k):
        mult = n_fact
        for c in counts:
            mult //= math.factorial(c)
        # per-tuple causal weight: |S_X|^-n * prod_x |opts(x)|^-n_x
        opt_den = 1
        for c, o in zip(counts, n_opts):
            opt_den *= o ** c
        probs = {"causal": Fraction(mult, causal_den * opt_den), "uniform": Fraction(mult, uniform_den)}
        dist = {name: _l1(counts, n, w) for name, w in tw.items()}
        for ms, pr in probs.items():
            for i, c in enumerate(counts):
                if c:
                    expected[ms][i] += pr * Fraction(c, n)
            for tg, dv in dist.items():
                for d in deltas:
                    if dv <= d:
                        mass[(ms, tg, d)] += pr

    records = [CensusRecord(n, d, ms, tg, m) for (ms, tg, d), m in sorted(
        mass.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2]))]
    exp_tables = {ms: ProbTable.from_dict(relation.domain, dict(zip(members, e))) for ms, e in expected.items()}
    return Census(n, records, exp_tables, targets)


def brute_force_census(relation: Relation, cause: str, n: int, delta, cap: int = 10**6) -> dict:
    """Raw enumeration over admissible tuple pairs; an independent check of the type-class census."""
    cause_l, effect = _split(relation, cause)
    opts = _options(relation, cause_l, effect)
    members = relation.sorted_members()
    if len(members) ** n > cap:
        raise SizeCapError("too many tuples for brute force")
    cax = relation.domain.axes(cause_l)
    targets = {"causal": causal_pir_joint(relation, cause), "symmetric": symmetric_pir_joint(relation)}
    delta = _as_delta(delta)
    out = {(ms, tg): Fraction(0) for ms in ("causal", "uniform") for tg in targets}
    n_causes = len(opts)
    index = {m: i for i, m in enumerate(members)}
    for word in itertools.product(members, repeat=n):
        w_causal = Fraction(1, n_causes ** n)
        for m in word:
            w_causal /= len(opts[tuple(m[a] for a in cax)])
        w_uniform = Fraction(1, len(members) ** n)
        counts = [0] * len(members)
        for m in word:
            counts[index[m]] += 1
        for tg, t in targets.items():
            d = _l1(counts, n, [t[m] for m in members])
            if d <= delta:
                out[("causal", tg)] += w_causal
                out[("uniform", tg)] += w_uniform
    return out
