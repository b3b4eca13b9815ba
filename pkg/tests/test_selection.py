import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from catmaxent.core import PatternConstraint as C
from catmaxent.core import PatternInstantiation as P
from catmaxent.core import Schema
from catmaxent.engine import fit, log_likelihood
from catmaxent.errors import DomainError, SelectionError
from catmaxent.evaluation import generate_benchmark
from catmaxent.selection import (
    STOP_BIC,
    STOP_EXHAUSTED,
    STOP_LIMIT,
    bic,
    heuristic_h,
    likelihood_order,
    select,
)

S3 = Schema.from_cardinalities([2, 2, 2])


def test_h_examples():
    assert heuristic_h(0.5, 0.5) == 0.0
    assert heuristic_h(0.5, 0.25) == pytest.approx(0.1438, abs=5e-5)
    assert heuristic_h(0.5, 0.25) == pytest.approx(0.5 * math.log(2) + 0.5 * math.log(0.5 / 0.75))
    for bad in [(0.0, 0.5), (0.5, 1.0), (1.2, 0.5)]:
        with pytest.raises(DomainError):
            heuristic_h(*bad)


@given(st.floats(0.001, 0.999), st.floats(0.001, 0.999))
def test_h_positive_off_diagonal(a, b):
    h = heuristic_h(a, b)
    assert h >= 0
    if abs(a - b) > 1e-6:
        assert h > 0


def test_bic_uniform():
    m, _ = fit(S3, [])
    assert bic(m, 100) == pytest.approx(-2 * 100 * math.log(1 / 8))
    assert bic(m, 100) == pytest.approx(415.888, abs=1e-3)
    with pytest.raises(ValueError):
        bic(m, 0)


def test_bic_zero_information_constraint_costs_log_n():
    m0, _ = fit(S3, [])
    m1, _ = fit(S3, [C(P({0: 1, 2: 0}), 0.25)])
    assert bic(m1, 100) - bic(m0, 100) == pytest.approx(math.log(100), abs=1e-9)


def test_bic_counts_marginal_parameters():
    s = Schema.from_cardinalities([2, 3])
    m, _ = fit(s, [], [np.array([0.5, 0.5]), np.array([0.2, 0.3, 0.5])])
    assert m.n_parameters() == 1 + 2


def test_single_informative_candidate_accepted():
    n = 1000
    cands = [C(P({0: 0, 1: 0}), 0.6)]
    chosen, model, trace = select(S3, cands, None, n)
    assert chosen == [0]
    gain = 0.6 * math.log(0.6 / 0.25) + 0.4 * math.log(0.4 / 0.75)
    assert trace.initial_bic - trace.steps[0].bic == pytest.approx(2 * n * gain - math.log(n), rel=1e-6)
    assert trace.stop_reason == STOP_EXHAUSTED


def test_zero_h_candidate_is_not_preferred():
    s4 = Schema.from_cardinalities([2, 2, 2, 2])
    cands = [C(P({0: 0, 3: 1}), 0.25), C(P({1: 0, 2: 0}), 0.5)]
    chosen, _, trace = select(s4, cands, None, 1000)
    assert trace.steps[0].candidate == 1
    assert chosen == [1]
    assert trace.stop_reason == STOP_BIC


def test_tie_break_lowest_index():
    cands = [C(P({0: 0, 1: 0}), 0.5), C(P({1: 0, 2: 0}), 0.5)]
    _, _, trace = select(S3, cands, None, 1000, use_bic=False)
    assert trace.steps[0].candidate == 0


def test_no_bic_runs_to_exhaustion_and_step_limit():
    b = generate_benchmark(10, 3, 800, seed=2)
    chosen, _, trace = select(b.schema, b.candidates, b.marginals, 800, use_bic=False)
    assert sorted(chosen) == list(range(len(b.candidates)))
    assert trace.stop_reason == STOP_EXHAUSTED
    chosen, _, trace = select(b.schema, b.candidates, b.marginals, 800, max_steps=2)
    assert len(chosen) == 2 and trace.stop_reason == STOP_LIMIT


def test_selection_is_deterministic_and_monotone():
    b = generate_benchmark(12, 4, 1500, seed=5)
    runs = [select(b.schema, b.candidates, b.marginals, b.dataset.n_rows) for _ in range(2)]
    assert runs[0][0] == runs[1][0]
    assert runs[0][2].to_table() == runs[1][2].to_table()
    trace = runs[0][2]
    acc = trace.accepted
    bics = [trace.initial_bic] + [s.bic for s in acc]
    lls = [trace.initial_log_likelihood] + [s.log_likelihood for s in acc]
    assert all(b2 < b1 for b1, b2 in zip(bics, bics[1:]))
    assert all(l2 >= l1 - 1e-6 for l1, l2 in zip(lls, lls[1:]))


def test_threads_do_not_change_the_trace():
    b = generate_benchmark(12, 4, 1500, seed=6)
    t1 = select(b.schema, b.candidates, b.marginals, 1500, threads=1)[2].to_table()
    t4 = select(b.schema, b.candidates, b.marginals, 1500, threads=4)[2].to_table()
    assert t1 == t4


def test_refit_failure_keeps_partial_trace():
    cands = [C(P({0: 0}), 0.3), C(P({0: 0, 1: 0}), 0.5)]
    with pytest.raises(SelectionError) as info:
        select(S3, cands, None, 100, use_bic=False, max_sweeps=100)
    assert info.value.trace is not None
    assert len(info.value.trace.steps) == 1


def test_trace_table_format():
    cands = [C(P({0: 0, 1: 0}), 0.6)]
    _, _, trace = select(S3, cands, None, 100)
    lines = trace.to_table().splitlines()
    assert lines[0] == "iteration\tconstraint\th\tlog_likelihood\tbic\taccepted"
    assert lines[-1].startswith("# stop:")
    assert len(lines) == 2 + len(trace.steps) + 1


def test_likelihood_order_is_greedy_optimal():
    s = Schema.from_cardinalities([2, 2, 2, 2])
    cands = [C(P({0: 0, 1: 0}), 0.3), C(P({2: 1, 3: 1}), 0.5), C(P({1: 1, 2: 0}), 0.2)]
    order, lls = likelihood_order(s, cands, None, 100)
    assert len(order) == 3 and len(lls) == 4
    first = [log_likelihood(fit(s, [c])[0], 100) for c in cands]
    assert order[0] == int(np.argmax(first))
    assert all(b >= a - 1e-9 for a, b in zip(lls, lls[1:]))
