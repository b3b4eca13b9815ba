import numpy as np
import pytest

import catmaxent.evaluation as ev
from helpers import random_instance
from catmaxent.core import PatternConstraint as C
from catmaxent.core import PatternInstantiation as P
from catmaxent.core import Schema, TupleDataset, empirical_frequency
from catmaxent.engine import fit
from catmaxent.errors import SpaceTooLargeError, ValidationError
from catmaxent.evaluation import (
    approx_kl,
    baseline_independent_model,
    brute_force_maxent,
    entropy,
    evaluation_patterns,
    generate_benchmark,
    metrics_table,
)
from catmaxent.selection import heuristic_h


def test_identical_sources_give_zero():
    pats = [P({0: 0}), P({0: 1, 1: 0})]
    src = {pats[0]: 0.3, pats[1]: 0.2}
    assert approx_kl(src, src, pats) == 0.0


def test_asymmetric_pair():
    x = P({0: 0})
    pq = approx_kl({x: 0.1}, {x: 0.5}, [x])
    qp = approx_kl({x: 0.5}, {x: 0.1}, [x])
    assert pq == pytest.approx(0.1 * np.log(0.2) + 0.9 * np.log(1.8))
    assert qp == pytest.approx(0.5 * np.log(5) + 0.5 * np.log(0.5 / 0.9))
    assert pq != pytest.approx(qp)


def test_kl_is_sum_of_h():
    rng = np.random.default_rng(0)
    pats = [P({0: i}) for i in range(5)]
    a = dict(zip(pats, rng.uniform(0.05, 0.95, 5)))
    b = dict(zip(pats, rng.uniform(0.05, 0.95, 5)))
    assert approx_kl(a, b, pats) == pytest.approx(sum(heuristic_h(a[x], b[x]) for x in pats))


def test_clamping_is_counted():
    x = P({0: 0})
    before = ev.clamp_count
    val = approx_kl({x: 0.0}, {x: 0.5}, [x])
    assert ev.clamp_count == before + 1
    assert np.isfinite(val) and val > 0
    with pytest.raises(ValidationError):
        approx_kl({}, {}, [])


def test_sources_from_models_and_datasets():
    s = Schema.from_cardinalities([2, 2])
    ds = TupleDataset(s, [[0, 0], [0, 0], [0, 1], [1, 0], [1, 1], [1, 1]])
    m, _ = fit(s, [C(P({0: 0, 1: 0}), 1 / 3)], ds.marginal_frequencies(), tol=1e-12)
    pats = evaluation_patterns(s, [P({0: 0, 1: 0})])
    assert len(pats) == 1 + 4
    assert approx_kl(m, ds, pats) == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(TypeError):
        approx_kl(3, ds, pats)
    with pytest.raises(ValidationError):
        evaluation_patterns(s, [], include_attributes=False)


def test_baseline_factorizes():
    s = Schema.from_cardinalities([2, 3])
    marg = [np.array([0.3, 0.7]), np.array([0.2, 0.5, 0.3])]
    base = baseline_independent_model(s, marg)
    assert base.query(P({0: 1, 1: 2})) == pytest.approx(0.7 * 0.3)
    pats = evaluation_patterns(s, [P({0: 1, 1: 2})])
    assert approx_kl(base, base, pats) == 0.0


def test_baseline_is_worse_than_dependent_truth():
    s = Schema.from_cardinalities([2, 2])
    # correlated joint: A0 == A1 with probability 0.9
    joint = {(0, 0): 0.45, (1, 1): 0.45, (0, 1): 0.05, (1, 0): 0.05}

    def truth(p):
        return sum(v for t, v in joint.items() if all(t[a] == x for a, x in p.items))

    base = baseline_independent_model(s, [np.array([0.5, 0.5])] * 2)
    pats = evaluation_patterns(s, [P({0: 0, 1: 0}), P({0: 1, 1: 1})])
    assert approx_kl(base, truth, pats) > 0.1


def test_brute_force_basics():
    s = Schema.from_cardinalities([2, 3])
    bf = brute_force_maxent(s, [])
    np.testing.assert_allclose(bf.probs, 1 / 6)
    cons = [C(P({0: 0, 1: 1}), 0.4), C(P({1: 2}), 0.1)]
    bf = brute_force_maxent(s, cons)
    for c in cons:
        assert abs(bf.query(c.pattern) - c.target) <= 1e-9
    with pytest.raises(SpaceTooLargeError):
        brute_force_maxent(Schema.uniform(21, 2), [])


def test_projection_from_start_satisfies_constraints_with_lower_entropy():
    rng = np.random.default_rng(2)
    s, cons, marg, tuples, _ = random_instance(rng, with_marginals=True)
    start = rng.dirichlet(np.ones(len(tuples)))
    q = brute_force_maxent(s, cons, marg, start=start, tol=1e-11)
    for c in cons:
        assert abs(q.query(c.pattern) - c.target) <= 1e-10
    m, _ = fit(s, cons, marg, tol=1e-11)
    assert entropy(m.prob(tuples)) >= entropy(q.probs) - 1e-8


def test_entropy():
    assert entropy([0.5, 0.5]) == pytest.approx(np.log(2))
    assert entropy([1.0, 0.0]) == 0.0


def test_metrics_table():
    out = metrics_table({"full": {"a": 1.0, "b": 2.0}, "base": {"a": 3.0, "b": 4.0}}, ["a", "b"])
    assert out.splitlines() == ["model\ta\tb", "full\t1.0\t2.0", "base\t3.0\t4.0"]


def test_benchmark_determinism_and_shape():
    a = generate_benchmark(12, 4, 1000, seed=3)
    b = generate_benchmark(12, 4, 1000, seed=3)
    c = generate_benchmark(12, 4, 1000, seed=4)
    assert a.dataset == b.dataset and a.candidates == b.candidates
    assert a.dataset != c.dataset
    assert a.planted_mask.sum() == 4 and len(a.candidates) == 8
    assert set(a.decoys).isdisjoint(a.planted)
    assert {c.pattern for c in a.planted_constraints} == set(a.planted)
    truth = a.truth()
    for c in a.candidates:
        assert truth[c.pattern] == c.target == empirical_frequency(a.dataset, c.pattern)


def test_benchmark_frequency_one_and_zero():
    b = generate_benchmark(6, 1, 500, seed=1, freq_range=(1.0, 1.0))
    assert empirical_frequency(b.dataset, b.planted[0]) == 1.0
    b = generate_benchmark(6, 1, 20000, seed=1, freq_range=(0.0, 0.0))
    x = b.planted[0]
    coincidence = np.prod([b.generating_marginals[a][v] for a, v in x.items])
    f = empirical_frequency(b.dataset, x)
    assert abs(f - coincidence) <= 4 * np.sqrt(coincidence * (1 - coincidence) / 20000)


def test_benchmark_planted_frequency_within_binomial_band():
    n = 20000
    b = generate_benchmark(8, 1, n, seed=5, freq_range=(0.3, 0.3))
    x = b.planted[0]
    coincidence = np.prod([b.generating_marginals[a][v] for a, v in x.items])
    expected = 0.3 + 0.7 * coincidence
    f = empirical_frequency(b.dataset, x)
    assert abs(f - expected) <= 4 * np.sqrt(expected * (1 - expected) / n)
