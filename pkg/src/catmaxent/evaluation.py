"""Evaluation metrics, the brute-force oracle and the synthetic benchmark generator."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import (
    PatternConstraint,
    PatternInstantiation,
    Schema,
    TupleDataset,
    empirical_frequency,
    pattern_mask,
    validate_constraints,
)
from .engine import MaxEntModel, _normalize_targets, enumerate_space, fit
from .errors import NonConvergenceError, SpaceTooLargeError, ValidationError

log = logging.getLogger(__name__)

KL_EPS = 1e-12
BRUTE_FORCE_LIMIT = 1_000_000

#: per-process count of probabilities clamped by :func:`approx_kl`
clamp_count = 0


# approximate KL ----------------------------------------------------------

def as_source(obj) -> Callable[[PatternInstantiation], float]:
    """Turn a model, dataset, mapping or callable into ``pattern -> probability``."""
    if isinstance(obj, MaxEntModel):
        return obj.query
    if isinstance(obj, TupleDataset):
        return lambda p: empirical_frequency(obj, p)
    if isinstance(obj, Mapping):
        return obj.__getitem__
    if callable(obj):
        return obj
    raise TypeError(f"cannot use {type(obj).__name__} as a probability source")


def _clamp(x: float) -> float:
    global clamp_count
    if x < KL_EPS or x > 1.0 - KL_EPS:
        clamp_count += 1
        return min(max(x, KL_EPS), 1.0 - KL_EPS)
    return x


def approx_kl(p, q, patterns: Sequence[PatternInstantiation]) -> float:
    """Sum over patterns of the two-state KL between ``p(X)`` and ``q(X)``.

    Probabilities are clamped to ``[1e-12, 1 - 1e-12]``; clamps are counted in
    :data:`clamp_count`.
    """
    if not patterns:
        raise ValidationError("evaluation pattern set must be non-empty")
    ps, qs = as_source(p), as_source(q)
    total = 0.0
    before = clamp_count
    for x in patterns:
        a, b = _clamp(float(ps(x))), _clamp(float(qs(x)))
        total += a * np.log(a / b) + (1.0 - a) * np.log((1.0 - a) / (1.0 - b))
    if clamp_count > before:
        log.warning("approx_kl clamped %d probabilities to [%g, 1-%g]", clamp_count - before, KL_EPS, KL_EPS)
    return max(float(total), 0.0)


def evaluation_patterns(schema: Schema, patterns: Sequence, include_attributes: bool = True) -> list[PatternInstantiation]:
    """The constraint patterns, optionally followed by every single-attribute pattern."""
    out = [getattr(p, "pattern", p) for p in patterns]
    if include_attributes:
        for a, k in enumerate(schema.cardinalities):
            out.extend(PatternInstantiation({a: v}) for v in range(int(k)))
    if not out:
        raise ValidationError("evaluation pattern set must be non-empty")
    return out


def baseline_independent_model(schema: Schema, marginals) -> MaxEntModel:
    """Marginals-only model: every attribute independent."""
    return fit(schema, [], marginals)[0]


def entropy(p: np.ndarray) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def metrics_table(rows: Mapping[str, Mapping[str, float]], columns: Sequence[str]) -> str:
    """Tab-separated table; one row per model, one column per measure."""
    lines = ["model\t" + "\t".join(columns)]
    for name, vals in rows.items():
        lines.append(name + "\t" + "\t".join(repr(float(vals[c])) for c in columns))
    return "\n".join(lines) + "\n"


# brute-force oracle ------------------------------------------------------

@dataclass
class EnumeratedDistribution:
    tuples: np.ndarray
    probs: np.ndarray
    iterations: int = 0
    residual: float = 0.0

    def query(self, pattern: PatternInstantiation) -> float:
        return float(self.probs[pattern_mask(self.tuples, pattern)].sum())


def brute_force_maxent(schema: Schema, constraints: Sequence[PatternConstraint], marginals=None, *,
                       tol: float = 1e-9, max_iter: int = 100_000, start: np.ndarray | None = None,
                       limit: int = BRUTE_FORCE_LIMIT) -> EnumeratedDistribution:
    """Iterative scaling directly over the enumerated tuple space.

    Starting from the uniform vector this converges to the maximum-entropy
    distribution; from ``start`` it gives the I-projection of ``start`` onto
    the constraint set.
    """
    if schema.space_size() > limit:
        raise SpaceTooLargeError(f"tuple space of {schema.space_size()} exceeds {limit}")
    constraints = validate_constraints(schema, list(constraints))
    targets = _normalize_targets(schema, marginals)
    tuples = enumerate_space(schema, limit)
    n = tuples.shape[0]
    p = np.full(n, 1.0 / n) if start is None else np.asarray(start, dtype=np.float64).copy()
    p /= p.sum()
    masks = [pattern_mask(tuples, c.pattern) for c in constraints]
    t = np.array([c.target for c in constraints])
    marg = [] if targets is None else [(a, tg) for a, tg in enumerate(targets) if tg is not None]

    def residual():
        r = max((abs(p[m].sum() - tc) for m, tc in zip(masks, t)), default=0.0)
        for a, tg in marg:
            cur = np.bincount(tuples[:, a], weights=p, minlength=len(tg))
            r = max(r, float(np.abs(cur - tg).max()))
        return r

    it = 0
    res = residual()
    while res > tol and it < max_iter:
        for m, tc in zip(masks, t):
            s = p[m].sum()
            if s <= 0 or s >= 1:
                raise NonConvergenceError("oracle: constraint without interior support", residual=res)
            r = tc * (1 - s) / (s * (1 - tc))
            p[m] *= r
            p /= 1 - s + r * s
        for a, tg in marg:
            cur = np.bincount(tuples[:, a], weights=p, minlength=len(tg))
            p *= (tg / cur)[tuples[:, a]]
            p /= p.sum()
        it += 1
        res = residual()
    if res > tol:
        raise NonConvergenceError(f"oracle did not converge (residual {res:.3e})", residual=res, iterations=it)
    return EnumeratedDistribution(tuples, p, it, res)


# synthetic benchmark -----------------------------------------------------

@dataclass
class Benchmark:
    schema: Schema
    dataset: TupleDataset
    planted: list[PatternInstantiation]
    planted_freqs: np.ndarray
    decoys: list[PatternInstantiation]
    generating_marginals: list[np.ndarray]
    candidates: list[PatternConstraint]
    planted_mask: np.ndarray  # candidates[i] is planted
    marginals: list[np.ndarray]  # empirical per-attribute frequencies
    seed: int = 0

    @property
    def planted_constraints(self) -> list[PatternConstraint]:
        return [c for c, m in zip(self.candidates, self.planted_mask) if m]

    def truth(self) -> dict[PatternInstantiation, float]:
        """Realized frequencies of planted and single-attribute patterns."""
        out = {c.pattern: c.target for c in self.candidates}
        for a, row in enumerate(self.marginals):
            for v, f in enumerate(row):
                out[PatternInstantiation({a: v})] = float(f)
        return out


def _random_pattern(rng, cards, size_range):
    size = int(rng.integers(size_range[0], size_range[1] + 1))
    attrs = rng.choice(len(cards), size=size, replace=False)
    return PatternInstantiation({int(a): int(rng.integers(cards[a])) for a in attrs})


def generate_benchmark(n_attrs: int = 20, n_patterns: int = 10, n_rows: int = 5000, seed: int = 0, *,
                       n_decoys: int | None = None, value_range=(2, 4), pattern_size=(2, 3),
                       freq_range=(0.05, 0.35), concentration: float = 1.0,
                       min_value_prob: float = 0.02) -> Benchmark:
    """Synthetic dataset with planted dependent patterns.

    Every row starts from independent draws of the attribute marginals; each
    planted pattern is then stamped with probability equal to its frequency,
    in a random priority order per row, later stamps skipping attributes an
    earlier stamp already wrote.  Decoy patterns are random patterns that were
    never planted; together with the planted ones they form the candidate
    pool, with targets set to the realized frequencies.
    """
    from .io import constraints_from_dataset

    if n_decoys is None:
        n_decoys = n_patterns
    rng = np.random.default_rng(seed)
    cards = rng.integers(value_range[0], value_range[1] + 1, size=n_attrs)
    schema = Schema.from_cardinalities(cards)
    gen_marg = []
    for k in cards:
        if min_value_prob * k >= 1:
            raise ValidationError("min_value_prob too large for the value range")
        d = rng.dirichlet(np.full(int(k), concentration))
        gen_marg.append(min_value_prob + (1 - k * min_value_prob) * d)

    planted: list[PatternInstantiation] = []
    while len(planted) < n_patterns:
        p = _random_pattern(rng, cards, pattern_size)
        if p not in planted:
            planted.append(p)
    freqs = rng.uniform(freq_range[0], freq_range[1], size=n_patterns)

    data = np.empty((n_rows, n_attrs), dtype=np.int32)
    for a, w in enumerate(gen_marg):
        data[:, a] = np.minimum(np.searchsorted(np.cumsum(w), rng.random(n_rows), side="right"), len(w) - 1)
    if n_patterns:
        stamp = rng.random((n_rows, n_patterns)) < freqs
        priority = np.argsort(rng.random((n_rows, n_patterns)), axis=1)
        written = np.zeros((n_rows, n_attrs), dtype=bool)
        for rank in range(n_patterns):
            chosen = priority[:, rank]
            for j, pat in enumerate(planted):
                rows = (chosen == j) & stamp[:, j]
                for a, v in pat.items:
                    sel = rows & ~written[:, a]
                    data[sel, a] = v
                    written[sel, a] = True
    dataset = TupleDataset(schema, data)

    decoys: list[PatternInstantiation] = []
    tries = 0
    while len(decoys) < n_decoys:
        tries += 1
        if tries > 1000 * (n_decoys + 1):
            raise ValidationError("could not draw enough decoy patterns")
        p = _random_pattern(rng, cards, pattern_size)
        if p in planted or p in decoys:
            continue
        f = empirical_frequency(dataset, p)
        if 0.0 < f < 1.0:
            decoys.append(p)

    pool = planted + decoys
    order = rng.permutation(len(pool))
    pool = [pool[i] for i in order]
    planted_mask = np.array([i < n_patterns for i in order], dtype=bool)
    candidates = constraints_from_dataset(dataset, pool)
    if len(candidates) != len(pool):
        kept = {c.pattern for c in candidates}
        planted_mask = np.array([m for p, m in zip(pool, planted_mask) if p in kept], dtype=bool)
    marg = dataset.marginal_frequencies()
    if any(np.any(m <= 0) for m in marg):
        log.warning("some attribute value never occurs in the generated data; "
                    "its empirical marginal is zero and cannot be used as a fit target")
    return Benchmark(schema, dataset, planted, freqs, decoys, gen_marg, candidates,
                     planted_mask, marg, seed)
