"""Drawing synthetic tuples from a fitted model.

Per component a block is drawn with probability p(B), its fixed values are
written, the remaining attributes of the component are drawn from the
per-attribute weights, and the draw is rejected while the completed tuple
matches a constraint the block does not satisfy.  Attributes outside every
component are drawn independently.

Randomness: numpy ``PCG64`` streams spawned from ``SeedSequence(seed)``, one
per fixed-size chunk of rows, so results do not depend on the thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core import TupleDataset
from .engine import MaxEntModel
from .errors import SamplingError, ValidationError

RNG_ALGORITHM = "PCG64"
EXACT_FREE_SPACE = 10_000
LOW_ACCEPTANCE = 1e-2


@dataclass(frozen=True)
class SampleSpec:
    n: int
    seed: int = 0
    rejection_cap: int = 1_000_000
    chunk_size: int = 65_536

    def __post_init__(self):
        if int(self.n) < 1:
            raise ValidationError(f"sample size must be at least 1, got {self.n}")
        if self.rejection_cap < 1 or self.chunk_size < 1:
            raise ValidationError("rejection_cap and chunk_size must be positive")


class AliasTable:
    """Walker alias table built with Vose's method; O(1) draws."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=np.float64)
        if w.ndim != 1 or w.size == 0 or np.any(w < 0) or not np.isfinite(w).all() or w.sum() <= 0:
            raise ValidationError("alias table needs a non-empty vector of non-negative weights")
        n = w.size
        scaled = w * (n / w.sum())
        prob = np.ones(n)
        alias = np.arange(n)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s, g = small.pop(), large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] = scaled[g] + scaled[s] - 1.0
            (small if scaled[g] < 1.0 else large).append(g)
        # leftovers are 1 up to rounding
        self.prob = prob
        self.alias = alias
        self.n = n

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        idx = rng.integers(0, self.n, size=size)
        keep = rng.random(size) < self.prob[idx]
        return np.where(keep, idx, self.alias[idx])


class _ComponentPlan:
    def __init__(self, model: MaxEntModel, k: int):
        comp = model.components[k]
        g = comp.graph
        arr = g.arrays
        self.index = k
        self.attrs = np.array(comp.attrs, dtype=np.int64)
        self.assigned = arr.assigned[:, self.attrs]
        self.satisfied = arr.satisfied
        probs = comp.block_probabilities()
        self.blocks = AliasTable(probs)
        self.patterns = kernels.pack_patterns(g.patterns)
        w = model.weights
        self.attr_tables = {int(a): AliasTable(w[a]) for a in self.attrs}
        # blocks whose free region is mostly excluded get an exact table
        self.exact: dict[int, tuple[AliasTable, np.ndarray]] = {}
        cards = model.schema.cardinalities
        for b in np.flatnonzero(probs > 0):
            if comp.cum[b] <= 0:
                continue
            acc = comp.mass[b] / comp.cum[b]
            free = [int(a) for a, v in zip(self.attrs, self.assigned[b]) if v < 0]
            space = math.prod(int(cards[a]) for a in free)
            if acc < LOW_ACCEPTANCE and space <= EXACT_FREE_SPACE:
                self.exact[int(b)] = self._exact_table(model, b, free)

    def _exact_table(self, model, b, free):
        cards = [int(model.schema.cardinalities[a]) for a in free]
        grid = np.indices(cards).reshape(len(free), -1).T if free else np.zeros((1, 0), dtype=np.int64)
        rows = np.zeros((grid.shape[0], len(model.schema)), dtype=np.int32)
        for j, a in enumerate(self.attrs):
            if self.assigned[b, j] >= 0:
                rows[:, a] = self.assigned[b, j]
        weights = np.ones(grid.shape[0])
        w = model.weights
        for j, a in enumerate(free):
            rows[:, a] = grid[:, j]
            weights *= w[a][grid[:, j]]
        match = kernels.match_patterns(rows, *self.patterns).astype(bool)
        weights[np.any(match & ~self.satisfied[b], axis=1)] = 0.0
        return AliasTable(weights), grid.astype(np.int32)

    def fill(self, out: np.ndarray, rng: np.random.Generator, cap: int) -> None:
        m = out.shape[0]
        blocks = self.blocks.draw(rng, m)
        exact_rows = np.zeros(m, dtype=bool)
        for b, (table, grid) in self.exact.items():
            rows = np.flatnonzero(blocks == b)
            if rows.size:
                exact_rows[rows] = True
                fixed = self.assigned[b]
                for j, a in enumerate(self.attrs):
                    if fixed[j] >= 0:
                        out[rows, a] = fixed[j]
                free = [int(a) for a, v in zip(self.attrs, fixed) if v < 0]
                pick = grid[table.draw(rng, rows.size)]
                for j, a in enumerate(free):
                    out[rows, a] = pick[:, j]
        pending = np.flatnonzero(~exact_rows)
        attempts = 0
        while pending.size:
            attempts += 1
            if attempts > cap:
                bad = int(blocks[pending[0]])
                raise SamplingError(
                    f"rejection cap {cap} exceeded for block {bad} of component {self.index}"
                )
            pb = blocks[pending]
            fixed = self.assigned[pb]
            for j, a in enumerate(self.attrs):
                draws = self.attr_tables[int(a)].draw(rng, pending.size)
                out[pending, a] = np.where(fixed[:, j] >= 0, fixed[:, j], draws)
            match = kernels.match_patterns(out[pending], *self.patterns).astype(bool)
            reject = np.any(match & ~self.satisfied[pb], axis=1)
            pending = pending[reject]


def _chunk(model, plans, free_tables, spec, seq, size):
    rng = np.random.Generator(np.random.PCG64(seq))
    out = np.zeros((size, len(model.schema)), dtype=np.int32)
    for a, table in free_tables:
        out[:, a] = table.draw(rng, size)
    for plan in plans:
        plan.fill(out, rng, spec.rejection_cap)
    return out


def sample(model: MaxEntModel, spec: SampleSpec | int, seed: int | None = None, threads: int = 1) -> TupleDataset:
    """Draw ``spec.n`` i.i.d. tuples from ``model``; deterministic given the seed."""
    if not isinstance(spec, SampleSpec):
        spec = SampleSpec(int(spec), 0 if seed is None else int(seed))
    elif seed is not None:
        raise ValueError("pass the seed inside SampleSpec")
    plans = [_ComponentPlan(model, k) for k in range(len(model.components))]
    covered = {int(a) for p in plans for a in p.attrs}
    w = model.weights
    free_tables = [(a, AliasTable(w[a])) for a in range(len(model.schema)) if a not in covered]
    n_chunks = -(-spec.n // spec.chunk_size)
    seqs = np.random.SeedSequence(spec.seed).spawn(n_chunks)
    sizes = [min(spec.chunk_size, spec.n - i * spec.chunk_size) for i in range(n_chunks)]
    jobs = list(zip(seqs, sizes))
    if threads > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda j: _chunk(model, plans, free_tables, spec, *j), jobs))
    else:
        parts = [_chunk(model, plans, free_tables, spec, *j) for j in jobs]
    return TupleDataset(model.schema, np.concatenate(parts, axis=0))
