"""Tuple blocks and the partial-order DAG used for inclusion-exclusion.

A block is identified by its merged assignment; its ``satisfied`` set is
every graph pattern contained in that assignment.  Blocks never enumerate
tuples: sizes and masses come from cumulative products corrected by the
masses of all descendants.
"""

from __future__ import annotations

import itertools
import math
from typing import NamedTuple, Sequence

import numpy as np

from . import kernels
from .core import PatternInstantiation, Schema
from .errors import InternalConsistencyError, SchemaMismatchError, ValidationError

__all__ = [
    "TupleBlock",
    "BlockGraph",
    "BlockArrays",
    "BlockSizes",
    "partial_order_leq",
    "create_block",
    "build_block_graph",
    "compute_block_sizes",
    "compute_block_marginal_probs",
    "export_graph",
]

MARGINAL_SUM_TOL = 1e-9


class TupleBlock:
    __slots__ = ("index", "assignment", "key", "satisfied", "children")

    def __init__(self, index: int, assignment: dict[int, int], satisfied: frozenset[int]):
        self.index = index
        self.assignment = assignment
        self.key = frozenset(assignment.items())
        self.satisfied = satisfied
        self.children: list[TupleBlock] = []

    @property
    def attrs(self) -> frozenset[int]:
        return frozenset(self.assignment)

    def __repr__(self) -> str:
        items = ",".join(f"{a}={v}" for a, v in sorted(self.assignment.items()))
        return f"TupleBlock(#{self.index} {{{items}}} sat={sorted(self.satisfied)})"


def partial_order_leq(b1: TupleBlock, b2: TupleBlock) -> bool:
    """``b1 <= b2``: attr(b1) within attr(b2) and both agree on shared attributes."""
    return b1.key <= b2.key


def _compatible(assignment: dict[int, int], pattern: PatternInstantiation) -> bool:
    return all(assignment.get(a, v) == v for a, v in pattern.items)


def _add_child(parent: TupleBlock, child: TupleBlock) -> None:
    if all(c is not child for c in parent.children):
        parent.children.append(child)


def _remove_child(parent: TupleBlock, child: TupleBlock) -> None:
    parent.children = [c for c in parent.children if c is not child]


class _InsertState:
    __slots__ = ("done", "attached")

    def __init__(self):
        self.done: set[int] = set()
        self.attached = False


class BlockArrays(NamedTuple):
    """Flat numeric view of a finished graph."""

    order: np.ndarray  # every block listed after all its descendants
    desc_ptr: np.ndarray
    desc_idx: np.ndarray
    mem_ptr: np.ndarray  # pattern -> blocks satisfying it (CSR)
    mem_idx: np.ndarray
    satisfied: np.ndarray  # (n_blocks, n_patterns) bool
    assigned: np.ndarray  # (n_blocks, n_attrs) value index or -1


class BlockSizes(NamedTuple):
    cum: list[int]
    size: list[int]


class BlockGraph:
    """DAG of tuple blocks over the attributes in ``scope``."""

    def __init__(self, schema: Schema, scope: Sequence[int] | None = None):
        self.schema = schema
        self.scope = tuple(range(len(schema))) if scope is None else tuple(sorted(set(scope)))
        self.patterns: list[PatternInstantiation] = []
        self.root = TupleBlock(0, {}, frozenset())
        self.blocks: list[TupleBlock] = [self.root]
        self._index: dict[frozenset, TupleBlock] = {self.root.key: self.root}
        self._item_blocks: dict[tuple[int, int], int] = {}  # (attr, value) -> bitmask of blocks
        self._arrays: BlockArrays | None = None

    def __len__(self) -> int:
        return len(self.blocks)

    def lookup(self, assignment) -> TupleBlock | None:
        return self._index.get(frozenset(dict(assignment).items()))

    def _closure(self, assignment: dict[int, int]) -> frozenset[int]:
        return frozenset(
            i for i, p in enumerate(self.patterns)
            if all(assignment.get(a) == v for a, v in p.items)
        )

    # construction -----------------------------------------------------

    def create_block(self, b: TupleBlock, pattern: PatternInstantiation) -> TupleBlock | None:
        """Merge ``pattern`` into ``b``.

        Returns ``None`` when incompatible, ``b`` itself when ``b`` already
        fixes the whole pattern, otherwise a new (unregistered) block.
        """
        if not _compatible(b.assignment, pattern):
            return None
        if all(a in b.assignment for a in pattern.attrs):
            return b
        merged = dict(b.assignment)
        merged.update(pattern.items)
        return TupleBlock(-1, merged, self._closure(merged))

    def add_pattern(self, pattern: PatternInstantiation) -> int:
        """Merge a new pattern against every existing block and insert the results."""
        self.schema.check_pattern(pattern)
        scope = set(self.scope)
        if not set(pattern.attrs) <= scope:
            raise SchemaMismatchError(f"{pattern!r} uses attributes outside the graph scope")
        if pattern in self.patterns:
            raise ValidationError(f"{pattern!r} already in graph")
        c = len(self.patterns)
        self.patterns.append(pattern)
        self._arrays = None
        for b in self.blocks:
            if all(b.assignment.get(a) == v for a, v in pattern.items):
                b.satisfied = b.satisfied | {c}
        for b in list(self.blocks):
            new = self.create_block(b, pattern)
            if new is None or new is b or new.key in self._index:
                continue
            new.index = len(self.blocks)
            self.blocks.append(new)
            self._index[new.key] = new
            self._register(new)
            self.find_position(self.root, None, new)
        return c

    def find_position(self, curr: TupleBlock, last: TupleBlock | None, new: TupleBlock,
                      _state: _InsertState | None = None) -> bool:
        """Insert ``new`` below ``curr``; True on success, False if unrelated."""
        if _state is None and self._index.get(new.key, new) is not new:
            return True
        st = _state if _state is not None else _InsertState()
        if curr.key == new.key:
            return True
        if partial_order_leq(new, curr):
            if last is not None:
                _remove_child(last, curr)
                _add_child(new, curr)
                _add_child(last, new)
            return True
        if partial_order_leq(curr, new):
            if curr.index in st.done:
                return True
            if not curr.children:
                _add_child(curr, new)
            else:
                failed = self._insert_descendant(new, curr, st)
                self._check_descendant(failed, new, st)
            st.done.add(curr.index)
            return True
        return False

    def _insert_descendant(self, new, curr, st) -> list[TupleBlock]:
        failed = []
        accu = False
        for k in list(curr.children):
            if self.find_position(k, curr, new, st):
                accu = True
            else:
                failed.append(k)
        if not accu:
            _add_child(curr, new)
        return failed

    def _check_descendant(self, failed, new, st) -> None:
        # attach the minimal blocks above ``new`` that its current children do not reach
        if not failed or st.attached:
            return
        st.attached = True
        covered = 1 << new.index
        for c in new.children:
            covered |= self._supersets(c)
        cand = self._supersets(new) & ~covered
        for i in sorted(_bits(cand), key=lambda i: len(self.blocks[i].assignment)):
            if covered >> i & 1:
                continue
            d = self.blocks[i]
            _add_child(new, d)
            covered |= self._supersets(d)

    def _register(self, b: TupleBlock) -> None:
        bit = 1 << b.index
        for it in b.assignment.items():
            self._item_blocks[it] = self._item_blocks.get(it, 0) | bit

    def _supersets(self, b: TupleBlock) -> int:
        """Bitmask of blocks whose assignment contains ``b``'s (``b`` included)."""
        if not b.assignment:
            return (1 << len(self.blocks)) - 1
        m = -1
        for it in b.assignment.items():
            m &= self._item_blocks.get(it, 0)
        return m

    def copy(self) -> "BlockGraph":
        g = BlockGraph.__new__(BlockGraph)
        g.schema, g.scope = self.schema, self.scope
        g.patterns = list(self.patterns)
        g.blocks = [TupleBlock(b.index, dict(b.assignment), b.satisfied) for b in self.blocks]
        for b, nb in zip(self.blocks, g.blocks):
            nb.children = [g.blocks[c.index] for c in b.children]
        g.root = g.blocks[0]
        g._index = {b.key: b for b in g.blocks}
        g._item_blocks = dict(self._item_blocks)
        g._arrays = None
        return g

    # derived structure ------------------------------------------------

    def order(self) -> list[int]:
        """Block indices with every descendant before its ancestors."""
        return sorted(range(len(self.blocks)), key=lambda i: (-len(self.blocks[i].assignment), i))

    def descendant_masks(self) -> list[int]:
        masks = [0] * len(self.blocks)
        for i in self.order():
            m = 0
            for c in self.blocks[i].children:
                if len(c.assignment) <= len(self.blocks[i].assignment):
                    raise InternalConsistencyError(f"edge {i}->{c.index} violates the partial order")
                m |= masks[c.index] | (1 << c.index)
            masks[i] = m
        return masks

    def descendants(self, block: TupleBlock) -> list[TupleBlock]:
        return [self.blocks[i] for i in _bits(self.descendant_masks()[block.index])]

    @property
    def arrays(self) -> BlockArrays:
        if self._arrays is None:
            self._arrays = self._build_arrays()
        return self._arrays

    def _build_arrays(self) -> BlockArrays:
        n, C = len(self.blocks), len(self.patterns)
        masks = self.descendant_masks()
        desc_ptr = np.zeros(n + 1, dtype=np.int64)
        desc = []
        for i, m in enumerate(masks):
            desc.extend(_bits(m))
            desc_ptr[i + 1] = len(desc)
        sat = np.zeros((n, C), dtype=bool)
        assigned = np.full((n, len(self.schema)), -1, dtype=np.int64)
        for b in self.blocks:
            if b.satisfied:
                sat[b.index, list(b.satisfied)] = True
            for a, v in b.assignment.items():
                assigned[b.index, a] = v
        mem_ptr = np.zeros(C + 1, dtype=np.int64)
        mem = []
        for c in range(C):
            mem.extend(np.flatnonzero(sat[:, c]).tolist())
            mem_ptr[c + 1] = len(mem)
        return BlockArrays(
            np.array(self.order(), dtype=np.int64), desc_ptr, np.array(desc, dtype=np.int64),
            mem_ptr, np.array(mem, dtype=np.int64), sat, assigned,
        )

    # checks -----------------------------------------------------------

    def verify(self) -> None:
        """Exhaustive structural check; quadratic in blocks, for tests and small runs."""
        expected = _consistent_unions(self.patterns)
        got = {b.key for b in self.blocks}
        if got != expected:
            raise InternalConsistencyError(
                f"graph has {len(got)} blocks, expected {len(expected)} consistent unions"
            )
        masks = self.descendant_masks()
        for b in self.blocks:
            if b.satisfied != self._closure(b.assignment):
                raise InternalConsistencyError(f"{b!r}: satisfied set is not the closure")
            for d in self.blocks:
                if d is b:
                    continue
                reach = bool(masks[b.index] >> d.index & 1)
                if reach != partial_order_leq(b, d):
                    raise InternalConsistencyError(
                        f"reachability {b.index}->{d.index} is {reach} but order says {not reach}"
                    )


def _bits(m: int) -> list[int]:
    if bin(m).count("1") > 32:
        s = bin(m)[:1:-1]
        return [i for i, c in enumerate(s) if c == "1"]
    out = []
    while m:
        low = m & -m
        out.append(low.bit_length() - 1)
        m ^= low
    return out


def _consistent_unions(patterns: Sequence[PatternInstantiation]) -> set[frozenset]:
    """All consistent unions of pattern subsets, by explicit subset enumeration."""
    found = {frozenset()}
    if len(patterns) <= 14:
        for r in range(1, len(patterns) + 1):
            for combo in itertools.combinations(patterns, r):
                merged: dict[int, int] = {}
                ok = True
                for p in combo:
                    for a, v in p.items:
                        if merged.setdefault(a, v) != v:
                            ok = False
                            break
                    if not ok:
                        break
                if ok:
                    found.add(frozenset(merged.items()))
        return found
    frontier = [dict()]
    seen = {frozenset()}
    while frontier:
        cur = frontier.pop()
        for p in patterns:
            if _compatible(cur, p):
                nxt = dict(cur)
                nxt.update(p.items)
                key = frozenset(nxt.items())
                if key not in seen:
                    seen.add(key)
                    frontier.append(nxt)
    return seen


def create_block(graph: BlockGraph, b: TupleBlock, pattern: PatternInstantiation):
    return graph.create_block(b, pattern)


def build_block_graph(schema: Schema, patterns: Sequence[PatternInstantiation],
                      scope: Sequence[int] | None = None, verify: bool = False) -> BlockGraph:
    """Construct the block graph by merging each pattern with every existing block."""
    g = BlockGraph(schema, scope)
    for p in patterns:
        g.add_pattern(getattr(p, "pattern", p))
    if verify:
        g.verify()
    return g


def compute_block_sizes(graph: BlockGraph) -> BlockSizes:
    """Exact integer block sizes over the graph scope."""
    cards = graph.schema.cardinalities
    cum = [
        math.prod(int(cards[a]) for a in graph.scope if a not in b.assignment)
        for b in graph.blocks
    ]
    masks = graph.descendant_masks()
    size = [0] * len(graph.blocks)
    for i in graph.order():
        s = cum[i] - sum(size[d] for d in _bits(masks[i]))
        if s < 0:
            raise InternalConsistencyError(f"block {i} has negative size {s}")
        size[i] = s
    return BlockSizes(cum, size)


def normalize_marginals(schema: Schema, marginals) -> list[np.ndarray]:
    """Validate per-attribute probability rows; ``None`` rows become uniform."""
    if marginals is None:
        marginals = [None] * len(schema)
    if len(marginals) != len(schema):
        raise ValidationError(f"need {len(schema)} marginal rows, got {len(marginals)}")
    out = []
    for a, (attr, row) in enumerate(zip(schema.attributes, marginals)):
        k = attr.cardinality
        if row is None:
            out.append(np.full(k, 1.0 / k))
            continue
        row = np.asarray(row, dtype=np.float64)
        if row.shape != (k,):
            raise ValidationError(f"marginal row for {attr.name!r} must have {k} entries")
        if np.any(~np.isfinite(row)) or np.any(row < 0):
            raise ValidationError(f"marginal row for {attr.name!r} has invalid entries")
        if abs(row.sum() - 1.0) > MARGINAL_SUM_TOL:
            raise ValidationError(f"marginal row for {attr.name!r} sums to {row.sum()!r}, not 1")
        out.append(row)
    return out


def cumulative_masses(graph: BlockGraph, weights: Sequence[np.ndarray]) -> np.ndarray:
    """Mass of each block's fixed assignment; free attributes integrate to one."""
    assigned = graph.arrays.assigned
    cum = np.ones(assigned.shape[0])
    for a in graph.scope:
        col = assigned[:, a]
        fixed = col >= 0
        cum[fixed] *= np.asarray(weights[a], dtype=np.float64)[col[fixed]]
    return cum


def _clamp_masses(mass: np.ndarray, n_desc: np.ndarray) -> np.ndarray:
    tol = 1e-12 + 1e-14 * n_desc
    if mass.ndim == 2:
        tol = tol[:, None]
    if np.any(mass < -tol):
        raise InternalConsistencyError(f"negative block mass {mass.min()!r}")
    return np.maximum(mass, 0.0)


def block_masses(graph: BlockGraph, weights: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """``(cum, mass)`` of every block under independent per-attribute weights."""
    arr = graph.arrays
    cum = cumulative_masses(graph, weights)
    mass = kernels.inclusion_exclusion(cum[:, None], arr.order, arr.desc_ptr, arr.desc_idx)[:, 0]
    return cum, _clamp_masses(mass, np.diff(arr.desc_ptr))


def compute_block_marginal_probs(graph: BlockGraph, marginals) -> tuple[np.ndarray, np.ndarray]:
    """Cumulative and exact block probabilities under the independent marginal model."""
    return block_masses(graph, normalize_marginals(graph.schema, marginals))


def restricted_masses(graph: BlockGraph, weights, cum: np.ndarray, attr: int) -> np.ndarray:
    """``(n_blocks, k)`` masses of ``B ∩ {T(attr) = a}`` for every value ``a``."""
    arr = graph.arrays
    w = weights[attr]
    rc = np.outer(cum, w)
    fixed = arr.assigned[:, attr]
    rows = np.flatnonzero(fixed >= 0)
    if rows.size:
        rc[rows] = 0.0
        rc[rows, fixed[rows]] = cum[rows]
    m = kernels.inclusion_exclusion(rc, arr.order, arr.desc_ptr, arr.desc_idx)
    return _clamp_masses(m, np.diff(arr.desc_ptr))


def pattern_restricted_masses(graph: BlockGraph, weights, cum: np.ndarray,
                              pattern: PatternInstantiation) -> np.ndarray:
    """Masses of ``B ∩ {T = x}`` for a pattern restricted to the graph scope."""
    arr = graph.arrays
    rc = cum.copy()
    for a, v in pattern.items:
        fixed = arr.assigned[:, a]
        rc = np.where(fixed < 0, rc * weights[a][v], np.where(fixed == v, rc, 0.0))
    m = kernels.inclusion_exclusion(rc[:, None], arr.order, arr.desc_ptr, arr.desc_idx)[:, 0]
    return _clamp_masses(m, np.diff(arr.desc_ptr))


def export_graph(graph: BlockGraph, fmt: str = "text") -> str:
    """Adjacency listing (``text``) or Graphviz source (``dot``) for inspection."""
    sizes = compute_block_sizes(graph)
    names = graph.schema.names
    labels = graph.schema.attributes

    def assign(b):
        return ",".join(f"{names[a]}={labels[a].values[v]}" for a, v in sorted(b.assignment.items()))

    lines = []
    if fmt == "dot":
        lines.append("digraph blocks {")
        for b in graph.blocks:
            lines.append(
                f'  b{b.index} [label="{{{assign(b)}}}\\nsat={sorted(b.satisfied)}\\n'
                f'cum={sizes.cum[b.index]} size={sizes.size[b.index]}"];'
            )
        for b in graph.blocks:
            for c in b.children:
                lines.append(f"  b{b.index} -> b{c.index};")
        lines.append("}")
    elif fmt == "text":
        lines.append("block\tkey\tattrs\tcum\tsize\tchildren")
        for b in graph.blocks:
            lines.append(
                "\t".join([
                    str(b.index),
                    "{" + ",".join(map(str, sorted(b.satisfied))) + "}",
                    "{" + assign(b) + "}",
                    str(sizes.cum[b.index]),
                    str(sizes.size[b.index]),
                    ",".join(str(c.index) for c in b.children),
                ])
            )
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return "\n".join(lines) + "\n"
