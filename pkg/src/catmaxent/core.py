"""Schema, patterns, constraints and datasets.

Attributes and values are addressed by dense integer indices everywhere
outside the I/O layer; labels only live on :class:`Schema`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyInputError, SchemaMismatchError, ValidationError

#: clamp margin used when boundary targets are explicitly allowed
CLAMP_EPS = 1e-9


@dataclass(frozen=True)
class AttributeDef:
    name: str
    values: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(str(v) for v in self.values))
        if not self.name:
            raise ValidationError("attribute name must be non-empty")
        if len(self.values) < 2:
            raise ValidationError(
                f"attribute {self.name!r} needs at least 2 values, got {len(self.values)}"
            )
        if len(set(self.values)) != len(self.values):
            raise ValidationError(f"attribute {self.name!r} has duplicate value labels")

    @property
    def cardinality(self) -> int:
        return len(self.values)


class Schema:
    """Ordered set of categorical attributes with finite value ranges."""

    def __init__(self, attributes: Iterable[AttributeDef]):
        self.attributes: tuple[AttributeDef, ...] = tuple(attributes)
        names = [a.name for a in self.attributes]
        if len(set(names)) != len(names):
            raise ValidationError("attribute names must be unique")
        self._name_index = {n: i for i, n in enumerate(names)}
        self._value_index = [{v: j for j, v in enumerate(a.values)} for a in self.attributes]
        self.cardinalities = np.array([a.cardinality for a in self.attributes], dtype=np.int64)
        self.cardinalities.setflags(write=False)

    @classmethod
    def from_dict(cls, spec: Mapping[str, Sequence[str]]) -> "Schema":
        return cls(AttributeDef(name, tuple(values)) for name, values in spec.items())

    @classmethod
    def uniform(cls, n_attributes: int, n_values: int) -> "Schema":
        return cls.from_cardinalities([n_values] * n_attributes)

    @classmethod
    def from_cardinalities(cls, cards: Sequence[int]) -> "Schema":
        return cls(
            AttributeDef(f"A{i}", tuple(str(v) for v in range(int(k))))
            for i, k in enumerate(cards)
        )

    def __len__(self) -> int:
        return len(self.attributes)

    def __eq__(self, other) -> bool:
        return isinstance(other, Schema) and self.attributes == other.attributes

    def __hash__(self) -> int:
        return hash(self.attributes)

    def __repr__(self) -> str:
        return f"Schema({[a.name for a in self.attributes]!r})"

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.attributes]

    def space_size(self, attrs: Iterable[int] | None = None) -> int:
        """Exact |S| (arbitrary precision), optionally restricted to ``attrs``."""
        idx = range(len(self)) if attrs is None else attrs
        return math.prod(int(self.cardinalities[i]) for i in idx)

    def attribute_index(self, name: str) -> int:
        try:
            return self._name_index[name]
        except KeyError:
            raise SchemaMismatchError(f"unknown attribute {name!r}") from None

    def value_index(self, attr: int, label: str) -> int:
        try:
            return self._value_index[attr][label]
        except KeyError:
            raise SchemaMismatchError(
                f"unknown value {label!r} for attribute {self.attributes[attr].name!r}"
            ) from None

    def check_pattern(self, pattern: "PatternInstantiation") -> None:
        for a, v in pattern.items:
            if a >= len(self):
                raise SchemaMismatchError(f"attribute index {a} outside schema of {len(self)}")
            if v >= self.cardinalities[a]:
                raise SchemaMismatchError(
                    f"value index {v} outside range of attribute {self.attributes[a].name!r}"
                )

    def pattern(self, assignments: Mapping[str, str]) -> "PatternInstantiation":
        """Build a pattern from label assignments ``{attr_name: value_label}``."""
        items = {}
        for name, label in assignments.items():
            a = self.attribute_index(name)
            items[a] = self.value_index(a, label)
        return PatternInstantiation(items)

    def parse_pattern(self, text: str) -> "PatternInstantiation":
        """Parse ``attr=value,attr=value``."""
        assignments = {}
        if not text or not text.strip():
            raise ValidationError("empty pattern expression")
        for part in text.split(","):
            if "=" not in part:
                raise ValidationError(f"malformed pattern term {part!r}; expected attr=value")
            name, _, label = part.partition("=")
            name, label = name.strip(), label.strip()
            if name in assignments:
                raise ValidationError(f"attribute {name!r} assigned twice in {text!r}")
            assignments[name] = label
        return self.pattern(assignments)

    def format_pattern(self, pattern: "PatternInstantiation") -> str:
        return ",".join(
            f"{self.attributes[a].name}={self.attributes[a].values[v]}" for a, v in pattern.items
        )


@dataclass(frozen=True, order=True)
class PatternInstantiation:
    """Assignment of value indices to a non-empty subset of attributes.

    Stored as a tuple of ``(attribute, value)`` pairs sorted by attribute.
    """

    items: tuple[tuple[int, int], ...]

    def __init__(self, assignments: Mapping[int, int] | Iterable[tuple[int, int]]):
        pairs = list(assignments.items()) if isinstance(assignments, Mapping) else list(assignments)
        if not pairs:
            raise ValidationError("a pattern must assign at least one attribute")
        attrs = [int(a) for a, _ in pairs]
        if len(set(attrs)) != len(attrs):
            raise ValidationError("pattern assigns the same attribute twice")
        if any(a < 0 or v < 0 for a, v in pairs):
            raise SchemaMismatchError("negative attribute or value index")
        object.__setattr__(self, "items", tuple(sorted((int(a), int(v)) for a, v in pairs)))

    @property
    def attrs(self) -> tuple[int, ...]:
        return tuple(a for a, _ in self.items)

    @property
    def values(self) -> tuple[int, ...]:
        return tuple(v for _, v in self.items)

    def as_dict(self) -> dict[int, int]:
        return dict(self.items)

    def __len__(self) -> int:
        return len(self.items)

    def __repr__(self) -> str:
        return "Pattern(" + ", ".join(f"{a}={v}" for a, v in self.items) + ")"


def indicator(pattern: PatternInstantiation, t: Sequence[int]) -> int:
    """1 if tuple ``t`` contains ``pattern``, else 0."""
    n = len(t)
    for a, v in pattern.items:
        if a >= n:
            raise SchemaMismatchError(f"pattern attribute {a} outside tuple of length {n}")
        if t[a] != v:
            return 0
    return 1


def pattern_mask(rows: np.ndarray, pattern: PatternInstantiation) -> np.ndarray:
    """Vectorized indicator over a 2-D array of tuples."""
    rows = np.asarray(rows)
    if rows.ndim != 2:
        raise ValueError("rows must be 2-D")
    mask = np.ones(rows.shape[0], dtype=bool)
    for a, v in pattern.items:
        if a >= rows.shape[1]:
            raise SchemaMismatchError(f"pattern attribute {a} outside tuples of width {rows.shape[1]}")
        mask &= rows[:, a] == v
    return mask


@dataclass(frozen=True)
class PatternConstraint:
    pattern: PatternInstantiation
    target: float

    def __post_init__(self):
        t = float(self.target)
        if not math.isfinite(t) or not 0.0 < t < 1.0:
            raise ValidationError(
                f"target probability {self.target!r} for {self.pattern!r} must lie strictly in (0, 1)"
            )
        object.__setattr__(self, "target", t)


def make_constraint(pattern: PatternInstantiation, target: float, clamp: bool = False) -> PatternConstraint:
    """Build a constraint, optionally clamping boundary targets into [eps, 1-eps]."""
    if clamp:
        target = min(max(float(target), CLAMP_EPS), 1.0 - CLAMP_EPS)
    return PatternConstraint(pattern, target)


def validate_constraints(schema: Schema, constraints: Sequence[PatternConstraint]) -> tuple[PatternConstraint, ...]:
    seen = {}
    for i, c in enumerate(constraints):
        if not isinstance(c, PatternConstraint):
            raise ValidationError(f"constraint {i} is not a PatternConstraint")
        schema.check_pattern(c.pattern)
        if c.pattern in seen:
            raise ValidationError(
                f"duplicate constraint on {schema.format_pattern(c.pattern)} "
                f"(entries {seen[c.pattern]} and {i})"
            )
        seen[c.pattern] = i
    return tuple(constraints)


class TupleDataset:
    """Multiset of categorical tuples stored as an ``(n_rows, n_attrs)`` index array."""

    def __init__(self, schema: Schema, rows):
        arr = np.array(rows, dtype=np.int32, copy=True)
        if arr.ndim == 1 and arr.size == 0:
            arr = arr.reshape(0, len(schema))
        if arr.ndim != 2 or arr.shape[1] != len(schema):
            raise SchemaMismatchError(
                f"rows must have shape (n, {len(schema)}), got {arr.shape}"
            )
        if arr.size:
            bad = (arr < 0) | (arr >= schema.cardinalities[None, :])
            if bad.any():
                r, c = np.argwhere(bad)[0]
                raise SchemaMismatchError(f"row {r}, attribute {schema.attributes[c].name!r}: value index {arr[r, c]} out of range")
        arr.setflags(write=False)
        self.schema = schema
        self.rows = arr

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, TupleDataset)
            and self.schema == other.schema
            and np.array_equal(self.rows, other.rows)
        )

    def labels(self) -> list[list[str]]:
        attrs = self.schema.attributes
        return [[attrs[j].values[v] for j, v in enumerate(row)] for row in self.rows.tolist()]

    def marginal_frequencies(self) -> list[np.ndarray]:
        if not len(self):
            raise EmptyInputError("dataset has no rows")
        return [
            np.bincount(self.rows[:, j], minlength=int(k)) / len(self)
            for j, k in enumerate(self.schema.cardinalities)
        ]


def empirical_frequency(dataset: TupleDataset, pattern: PatternInstantiation) -> float:
    if len(dataset) == 0:
        raise EmptyInputError("empirical frequency of an empty dataset is undefined")
    dataset.schema.check_pattern(pattern)
    return float(np.count_nonzero(pattern_mask(dataset.rows, pattern))) / len(dataset)
