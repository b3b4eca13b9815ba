import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catmaxent.core import (
    AttributeDef,
    PatternConstraint,
    PatternInstantiation,
    Schema,
    TupleDataset,
    empirical_frequency,
    indicator,
    make_constraint,
    pattern_mask,
    validate_constraints,
)
from catmaxent.errors import EmptyInputError, SchemaMismatchError, ValidationError


@pytest.fixture
def abc():
    return Schema.from_dict({"x": ["a", "b"], "y": ["a", "b", "c"], "z": ["a", "b", "c"]})


def test_attribute_needs_two_values():
    with pytest.raises(ValidationError):
        AttributeDef("x", ("only",))
    with pytest.raises(ValidationError):
        AttributeDef("x", ("a", "a"))


def test_schema_rejects_duplicate_names():
    with pytest.raises(ValidationError):
        Schema([AttributeDef("x", ("0", "1")), AttributeDef("x", ("0", "1"))])


def test_space_size_is_exact_beyond_64_bits():
    s = Schema.uniform(70, 4)
    assert s.space_size() == 4 ** 70
    assert s.space_size() > 2 ** 64
    assert s.space_size([0, 1]) == 16


def test_parse_and_format_pattern(abc):
    p = abc.parse_pattern("y=c, x=b")
    assert p.items == ((0, 1), (1, 2))
    assert abc.format_pattern(p) == "x=b,y=c"
    for bad in ["", "x", "x=b,x=a", "w=a"]:
        with pytest.raises(ValidationError):
            abc.parse_pattern(bad)
    with pytest.raises(SchemaMismatchError):
        abc.parse_pattern("x=zz")


def test_pattern_requires_assignment():
    with pytest.raises(ValidationError):
        PatternInstantiation({})
    with pytest.raises(ValidationError):
        PatternInstantiation([(0, 1), (0, 0)])


def test_pattern_is_canonical_and_hashable():
    p = PatternInstantiation({2: 1, 0: 0})
    q = PatternInstantiation([(0, 0), (2, 1)])
    assert p == q and hash(p) == hash(q)
    assert p.attrs == (0, 2) and p.values == (0, 1)


def test_indicator_examples():
    assert indicator(PatternInstantiation({0: 0}), (0, 1, 2)) == 1
    assert indicator(PatternInstantiation({0: 0, 1: 0}), (0, 1, 2)) == 0
    with pytest.raises(SchemaMismatchError):
        indicator(PatternInstantiation({5: 0}), (0, 1, 2))


def test_indicator_is_product_of_equalities():
    cards = (2, 3, 2)
    for t in itertools.product(*map(range, cards)):
        for attrs in [(0,), (1, 2), (0, 1, 2)]:
            for vals in itertools.product(*[range(cards[a]) for a in attrs]):
                p = PatternInstantiation(dict(zip(attrs, vals)))
                expected = int(np.prod([t[a] == v for a, v in zip(attrs, vals)]))
                assert indicator(p, t) == expected
                assert bool(pattern_mask(np.array([t]), p)[0]) == bool(expected)


def test_constraint_target_bounds():
    p = PatternInstantiation({0: 0})
    for bad in [0.0, 1.0, -0.1, 1.5, float("nan")]:
        with pytest.raises(ValidationError):
            PatternConstraint(p, bad)
    assert make_constraint(p, 0.0, clamp=True).target == pytest.approx(1e-9)
    assert make_constraint(p, 1.0, clamp=True).target == pytest.approx(1 - 1e-9)


def test_duplicate_constraints_rejected(abc):
    p = PatternInstantiation({0: 0})
    with pytest.raises(ValidationError, match="duplicate"):
        validate_constraints(abc, [PatternConstraint(p, 0.2), PatternConstraint(p, 0.3)])


def test_dataset_validation(abc):
    with pytest.raises(SchemaMismatchError):
        TupleDataset(abc, [[0, 0, 3]])
    with pytest.raises(SchemaMismatchError):
        TupleDataset(abc, [[0, 0]])
    ds = TupleDataset(abc, [[0, 1, 2]])
    with pytest.raises(ValueError):
        ds.rows[0, 0] = 1


def test_empirical_frequency_examples(abc):
    rows = [[0, 0, 0], [0, 0, 1], [0, 0, 2], [1, 0, 0]]
    ds = TupleDataset(abc, rows)
    assert empirical_frequency(ds, PatternInstantiation({1: 0, 0: 0})) == 0.75
    assert empirical_frequency(ds, PatternInstantiation({1: 2})) == 0.0
    ten = TupleDataset(abc, [[0, 0, 0]] * 9 + [[1, 2, 1]])
    assert empirical_frequency(ten, PatternInstantiation({0: 1, 1: 2, 2: 1})) == 0.1
    with pytest.raises(EmptyInputError):
        empirical_frequency(TupleDataset(abc, np.zeros((0, 3))), PatternInstantiation({0: 0}))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 1), st.integers(0, 2), st.integers(0, 2)), min_size=1, max_size=30),
       st.randoms(use_true_random=False))
def test_empirical_frequency_permutation_invariant(rows, rnd):
    s = Schema.from_cardinalities([2, 3, 3])
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    p = PatternInstantiation({0: 1, 2: 0})
    assert empirical_frequency(TupleDataset(s, rows), p) == empirical_frequency(TupleDataset(s, shuffled), p)
