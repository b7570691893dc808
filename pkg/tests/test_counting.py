import itertools
import math
from fractions import Fraction

import pytest

from causalpir.core import DomainError, FiniteDomain, Relation, SizeCapError
from causalpir.counting import (DEFAULT_DELTAS, brute_force_census, compositions, concentration_census,
                                conditional_count, conditional_log_count_gap, count_realizations,
                                empirical_entropy, gap_envelope, log_count_entropy_gap)
from causalpir.pir import causal_pir_joint, device_relation, pearl_relation

F = Fraction


def factorial_oracle(counts):
    out = math.factorial(sum(counts))
    for c in counts:
        out //= math.factorial(c)
    return out


# --- realization counts -------------------------------------------------------------

def test_count_examples():
    assert count_realizations([2, 1, 1]) == 12
    assert count_realizations([7, 0, 0, 0]) == 1
    c = count_realizations([50, 50])
    assert c == factorial_oracle([50, 50]) == math.comb(100, 50)
    assert c == 100891344545564193334812497256
    assert isinstance(c, int)


@pytest.mark.parametrize("bad", [[], [-1, 2], [0, 0]])
def test_count_rejects_invalid(bad):
    with pytest.raises(DomainError):
        count_realizations(bad)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_total_count_identity(k):
    for n in range(1, 13):
        vectors = list(compositions(n, k))
        assert len(vectors) == len(set(vectors)) == math.comb(n + k - 1, k - 1)
        assert sum(count_realizations(v) for v in vectors) == k ** n


def test_counts_match_factorial_oracle():
    for counts in itertools.product(range(5), repeat=3):
        if sum(counts):
            assert count_realizations(counts) == factorial_oracle(counts)


# --- entropy gap -----------------------------------------------------------------------

def test_gap_examples():
    assert log_count_entropy_gap([9]) == 0.0
    g = log_count_entropy_gap([50, 50])
    oracle = abs(math.log(factorial_oracle([50, 50])) / 100 - math.log(2))
    assert g == pytest.approx(oracle, abs=1e-14)
    assert g == pytest.approx(0.0253, abs=1e-4)
    assert g <= gap_envelope(2, 100) == pytest.approx(0.184, abs=1e-3)


def test_gap_decreasing_on_balanced_pairs():
    gaps = [log_count_entropy_gap([10 * t, 10 * t]) for t in range(1, 11)]
    assert all(a > b for a, b in zip(gaps, gaps[1:]))


def test_gap_within_envelope():
    for k in (2, 3):
        for n in range(2, 25):
            for v in compositions(n, k):
                assert log_count_entropy_gap(v) <= gap_envelope(k, n)


def test_empirical_entropy():
    assert empirical_entropy([3, 3]) == pytest.approx(math.log(2), abs=1e-15)
    assert empirical_entropy([0, 5]) == 0.0


# --- conditional counts ---------------------------------------------------------------

def test_conditional_count_examples():
    assert conditional_count([3, 2], [[3, 0], [0, 2]]) == 1
    assert conditional_count([2, 2], [[1, 1], [1, 1]]) == 4
    assert conditional_count([4, 4], [[2, 2], [2, 2]]) == 36
    assert conditional_count([0, 2], [[0, 0], [1, 1]]) == 2


def test_conditional_count_row_mismatch():
    with pytest.raises(DomainError):
        conditional_count([2, 2], [[1, 1], [2, 1]])
    with pytest.raises(DomainError):
        conditional_count([2, 2], [[2, 0]])


def test_conditional_count_single_cause_reduces():
    for row in ([2, 1, 1], [5, 0, 3], [4, 4]):
        assert conditional_count([sum(row)], [row]) == count_realizations(row)


def test_conditional_gap_small():
    assert conditional_log_count_gap([4, 4], [[2, 2], [2, 2]]) == pytest.approx(
        abs(math.log(36) / 8 - math.log(2)), abs=1e-14)


# --- census ----------------------------------------------------------------------------

def test_census_single_draw_is_the_measure():
    rel = device_relation()
    c = concentration_census(rel, "X", 1)
    assert c.expected["causal"].equals(causal_pir_joint(rel, "X"))
    assert c.expected["causal"].as_dict() == {(1, 2): F(1, 6), (1, 3): F(1, 6), (2, 1): F(1, 3), (3, 1): F(1, 3)}


def test_census_expectation_identity():
    for rel, cause in ((device_relation(), "X"), (device_relation(), "Y"), (pearl_relation(), ["A", "B"])):
        for n in (1, 2, 5):
            assert concentration_census(rel, cause, n).expected["causal"].equals(causal_pir_joint(rel, cause))


def test_census_n8_ordering():
    c = concentration_census(device_relation(), "X", 8)
    assert c.mass("causal", "causal", F(2, 5)) > c.mass("causal", "symmetric", F(2, 5))
    assert c.mass("uniform", "symmetric", F(2, 5)) > c.mass("uniform", "causal", F(2, 5))


def test_census_mass_grows_with_n():
    masses = [concentration_census(device_relation(), "X", n).mass("causal", "causal", 0.4) for n in (4, 8, 12)]
    assert masses[0] <= masses[1] <= masses[2]


def test_census_records_serialize_exactly():
    c = concentration_census(device_relation(), "X", 3)
    assert len(c.records) == 2 * 2 * len(DEFAULT_DELTAS)
    rec = c.records[0].to_dict()
    assert set(rec) == {"n", "delta", "measure", "target", "mass"}
    assert F(rec["mass"]) == c.records[0].mass


@pytest.mark.parametrize("n", [1, 3, 5])
def test_census_matches_raw_enumeration(n):
    rel = device_relation()
    c = concentration_census(rel, "X", n)
    for d in DEFAULT_DELTAS:
        raw = brute_force_census(rel, "X", n, d)
        for (ms, tg), m in raw.items():
            assert c.mass(ms, tg, d) == m


def test_census_irregular_relation_matches_raw():
    d = FiniteDomain([("X", (0, 1, 2)), ("Y", (0, 1))])
    rel = Relation(d, frozenset({(0, 0), (0, 1), (1, 1), (2, 0), (2, 1)}))
    c = concentration_census(rel, "X", 4, deltas=[F(1, 2)])
    raw = brute_force_census(rel, "X", 4, F(1, 2))
    for (ms, tg), m in raw.items():
        assert c.mass(ms, tg, F(1, 2)) == m


def test_census_caps():
    with pytest.raises(SizeCapError):
        concentration_census(device_relation(), "X", 10_000)
    with pytest.raises(SizeCapError):
        brute_force_census(device_relation(), "X", 12, F(2, 5))
    with pytest.raises(DomainError):
        concentration_census(device_relation(), "X", 0)
