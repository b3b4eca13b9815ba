"""Random instance generators shared by the test modules."""

from __future__ import annotations

import itertools

import numpy as np

from catmaxent.core import PatternConstraint, PatternInstantiation, Schema, indicator, pattern_mask
from catmaxent.engine import enumerate_space


def random_patterns(rng, cards, n, max_size=3, min_size=1):
    q = len(cards)
    pats = []
    tries = 0
    while len(pats) < n and tries < 100 * (n + 1):
        tries += 1
        size = int(rng.integers(min_size, min(max_size, q) + 1))
        attrs = rng.choice(q, size=size, replace=False)
        p = PatternInstantiation({int(a): int(rng.integers(cards[a])) for a in attrs})
        if p not in pats:
            pats.append(p)
    return pats


def random_instance(rng, n_attrs=(4, 8), n_values=(2, 4), n_constraints=(1, 6),
                    with_marginals=False, alpha=0.7):
    """Schema plus constraints whose targets come from a random full distribution.

    Targets realized by one distribution are always jointly feasible.
    """
    q = int(rng.integers(n_attrs[0], n_attrs[1] + 1))
    cards = rng.integers(n_values[0], n_values[1] + 1, size=q)
    schema = Schema.from_cardinalities(cards)
    tuples = enumerate_space(schema)
    truth = rng.dirichlet(np.full(len(tuples), alpha))
    k = int(rng.integers(n_constraints[0], n_constraints[1] + 1))
    pats = random_patterns(rng, cards, k)
    cons = []
    for p in pats:
        t = float(truth[pattern_mask(tuples, p)].sum())
        if 0.0 < t < 1.0:
            cons.append(PatternConstraint(p, t))
    marg = None
    if with_marginals:
        marg = [np.bincount(tuples[:, a], weights=truth, minlength=int(cards[a])) for a in range(q)]
    return schema, cons, marg, tuples, truth


def brute_force_sizes(schema, patterns):
    """Map satisfied-set -> number of tuples, by enumeration."""
    counts: dict[frozenset, int] = {}
    for t in itertools.product(*[range(int(k)) for k in schema.cardinalities]):
        sat = frozenset(i for i, p in enumerate(patterns) if indicator(p, t))
        counts[sat] = counts.get(sat, 0) + 1
    return counts
