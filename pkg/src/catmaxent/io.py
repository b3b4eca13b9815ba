"""Reading and writing datasets, constraint specs and fitted models.

Constraint spec files are YAML documents::

    format: catmaxent-spec/1
    schema:
      sex: [male, female]
      age: [young, middle, old]
    marginals:                 # optional
      sex: {male: 0.49, female: 0.51}
    patterns:
      - match: {sex: male, age: young}
        p: 0.12
    metadata:                  # optional
      n_rows: 5000
      complete_marginals: false
      other_label: other
      clamp: false
      notes: free text

All external files carry value labels, never indices.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .core import (
    AttributeDef,
    PatternConstraint,
    PatternInstantiation,
    Schema,
    TupleDataset,
    empirical_frequency,
    make_constraint,
    pattern_mask,
)
from .engine import MaxEntModel
from .errors import EmptyInputError, IngestError, SchemaMismatchError, ValidationError

log = logging.getLogger(__name__)

SPEC_FORMAT = "catmaxent-spec/1"
MARGINAL_TOL = 1e-6


# datasets -----------------------------------------------------------------

def read_microdata_csv(path, schema: Schema | None = None) -> TupleDataset:
    """Read a labeled CSV file; infer the schema from observed values if none is given."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError("empty file", path=path, line=1) from None
        header = [h.strip() for h in header]
        if not header or not any(header):
            raise IngestError("missing header", path=path, line=1)
        raw = []
        for row in reader:
            if not row:
                continue
            if len(row) != len(header):
                raise IngestError(
                    f"expected {len(header)} fields, found {len(row)}", path=path, line=reader.line_num
                )
            raw.append((reader.line_num, row))
    if not raw:
        raise IngestError("no data rows", path=path, line=2)

    if schema is None:
        if len(set(header)) != len(header):
            raise IngestError("duplicate column names", path=path, line=1)
        attrs = []
        for j, name in enumerate(header):
            values = sorted({row[j] for _, row in raw})
            if len(values) < 2:
                raise IngestError(
                    f"column {name!r} has a single value and cannot be inferred as an attribute",
                    path=path, line=1, column=j + 1,
                )
            attrs.append(AttributeDef(name, tuple(values)))
        schema = Schema(attrs)
        cols = list(range(len(header)))
    else:
        if sorted(header) != sorted(schema.names):
            raise IngestError(
                f"columns {header} do not match schema attributes {schema.names}", path=path, line=1
            )
        pos = {name: j for j, name in enumerate(header)}
        cols = [pos[name] for name in schema.names]

    data = np.empty((len(raw), len(schema)), dtype=np.int32)
    lookups = [{v: i for i, v in enumerate(a.values)} for a in schema.attributes]
    for r, (line, row) in enumerate(raw):
        for a, j in enumerate(cols):
            try:
                data[r, a] = lookups[a][row[j]]
            except KeyError:
                raise IngestError(
                    f"unknown label {row[j]!r} for attribute {schema.attributes[a].name!r}",
                    path=path, line=line, column=j + 1,
                ) from None
    return TupleDataset(schema, data)


def write_dataset_csv(dataset: TupleDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(dataset.schema.names)
        w.writerows(dataset.labels())


def constraints_from_dataset(dataset: TupleDataset, patterns: Sequence[PatternInstantiation]) -> list[PatternConstraint]:
    """One constraint per pattern with its empirical frequency as target.

    Patterns at frequency 0 or 1 are dropped with a warning.
    """
    if len(dataset) == 0:
        raise EmptyInputError("cannot derive constraints from an empty dataset")
    out = []
    for p in patterns:
        f = empirical_frequency(dataset, p)
        if f <= 0.0 or f >= 1.0:
            log.warning("dropping pattern %s with empirical frequency %g",
                        dataset.schema.format_pattern(p), f)
            continue
        out.append(PatternConstraint(p, f))
    return out


# constraint specs ---------------------------------------------------------

@dataclass
class ConstraintSpec:
    schema: Schema
    constraints: list[PatternConstraint]
    marginals: list[np.ndarray | None] | None = None
    n_rows: int | None = None
    metadata: dict = field(default_factory=dict)


def _loc(node):
    m = node.start_mark
    return m.line + 1, m.column + 1


def _err(msg, node, path):
    line, col = _loc(node)
    return IngestError(msg, path=path, line=line, column=col)


def _expect(node, kind, what, path):
    if not isinstance(node, kind):
        name = {yaml.MappingNode: "a mapping", yaml.SequenceNode: "a list", yaml.ScalarNode: "a scalar"}[kind]
        raise _err(f"{what} must be {name}", node, path)
    return node


def _number(node, what, path) -> float:
    _expect(node, yaml.ScalarNode, what, path)
    try:
        x = float(node.value)
    except ValueError:
        raise _err(f"{what} must be a number, got {node.value!r}", node, path) from None
    if not math.isfinite(x):
        raise _err(f"{what} must be finite", node, path)
    return x


def _pairs(node, what, path):
    _expect(node, yaml.MappingNode, what, path)
    seen = set()
    for k, v in node.value:
        _expect(k, yaml.ScalarNode, f"key in {what}", path)
        if k.value in seen:
            raise _err(f"duplicate key {k.value!r} in {what}", k, path)
        seen.add(k.value)
        yield k, v


def read_constraint_spec(path) -> ConstraintSpec:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_constraint_spec(text, path=path)


def parse_constraint_spec(text: str, path=None) -> ConstraintSpec:
    try:
        root = yaml.compose(text)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark or exc.context_mark
        raise IngestError(f"YAML syntax error: {exc.problem}", path=path,
                          line=mark.line + 1 if mark else None,
                          column=mark.column + 1 if mark else None) from None
    if root is None:
        raise IngestError("empty spec file", path=path, line=1)
    sections = {k.value: (k, v) for k, v in _pairs(root, "spec document", path)}
    unknown = set(sections) - {"format", "schema", "marginals", "patterns", "metadata"}
    if unknown:
        k, _ = sections[sorted(unknown)[0]]
        raise _err(f"unknown section {k.value!r}", k, path)
    if "format" in sections:
        k, v = sections["format"]
        if _expect(v, yaml.ScalarNode, "format", path).value != SPEC_FORMAT:
            raise _err(f"unsupported format {v.value!r}; expected {SPEC_FORMAT}", v, path)
    if "schema" not in sections:
        raise IngestError("missing 'schema' section", path=path, line=1)

    meta = {}
    meta_nodes = {}
    if "metadata" in sections:
        for k, v in _pairs(sections["metadata"][1], "metadata", path):
            meta_nodes[k.value] = v
            meta[k.value] = _expect(v, yaml.ScalarNode, f"metadata {k.value!r}", path).value
    n_rows = None
    if "n_rows" in meta:
        try:
            n_rows = int(meta["n_rows"])
        except ValueError:
            raise _err("n_rows must be an integer", meta_nodes["n_rows"], path) from None
        if n_rows < 1:
            raise _err("n_rows must be positive", meta_nodes["n_rows"], path)
    truthy = {"true", "yes", "on", "1"}
    complete = str(meta.get("complete_marginals", "false")).lower() in truthy
    clamp = str(meta.get("clamp", "false")).lower() in truthy
    other = str(meta.get("other_label", "other"))

    attr_nodes = []
    values: dict[str, list[str]] = {}
    for k, v in _pairs(sections["schema"][1], "schema", path):
        _expect(v, yaml.SequenceNode, f"values of {k.value!r}", path)
        labels = []
        for item in v.value:
            _expect(item, yaml.ScalarNode, f"value of {k.value!r}", path)
            if item.value in labels:
                raise _err(f"duplicate value {item.value!r} for attribute {k.value!r}", item, path)
            labels.append(item.value)
        if len(labels) < 2:
            raise _err(f"attribute {k.value!r} needs at least two values", v, path)
        values[k.value] = labels
        attr_nodes.append(k)
    if not values:
        raise _err("schema declares no attributes", sections["schema"][1], path)

    marg_rows: dict[str, tuple[dict[str, float], object]] = {}
    if "marginals" in sections:
        for k, v in _pairs(sections["marginals"][1], "marginals", path):
            if k.value not in values:
                raise _err(f"marginals for unknown attribute {k.value!r}", k, path)
            row = {}
            for lk, lv in _pairs(v, f"marginals of {k.value!r}", path):
                if lk.value not in values[k.value]:
                    raise _err(f"unknown value {lk.value!r} for attribute {k.value!r}", lk, path)
                f = _number(lv, f"frequency of {k.value}={lk.value}", path)
                if not 0.0 <= f <= 1.0:
                    raise _err(f"frequency {f} outside [0, 1]", lv, path)
                row[lk.value] = f
            marg_rows[k.value] = (row, v)
        for name, (row, node) in marg_rows.items():
            total = sum(row.values())
            missing = [x for x in values[name] if x not in row]
            if abs(total - 1.0) <= MARGINAL_TOL and not missing:
                continue
            if complete and total < 1.0 - MARGINAL_TOL and not missing:
                if other in values[name]:
                    raise _err(f"cannot complete {name!r}: value {other!r} already exists", node, path)
                values[name].append(other)
                row[other] = 1.0 - total
                continue
            if missing:
                raise _err(f"marginals of {name!r} omit value(s) {missing}", node, path)
            raise _err(f"marginals of {name!r} sum to {total:.9g}, not 1", node, path)

    schema = Schema(AttributeDef(name, tuple(labels)) for name, labels in values.items())
    marginals = None
    if marg_rows:
        marginals = [None] * len(schema)
        for name, (row, node) in marg_rows.items():
            a = schema.attribute_index(name)
            vec = np.array([row[x] for x in schema.attributes[a].values], dtype=np.float64)
            if np.any(vec <= 0.0):
                if not clamp:
                    raise _err(f"marginals of {name!r} contain a zero frequency", node, path)
                vec = np.maximum(vec, 1e-9)
            marginals[a] = vec / vec.sum()

    constraints = []
    seen = {}
    if "patterns" in sections:
        _expect(sections["patterns"][1], yaml.SequenceNode, "patterns", path)
        for entry in sections["patterns"][1].value:
            fields_ = {k.value: v for k, v in _pairs(entry, "pattern entry", path)}
            if "match" not in fields_ or "p" not in fields_:
                raise _err("pattern entry needs 'match' and 'p'", entry, path)
            assign = {}
            for ak, av in _pairs(fields_["match"], "match", path):
                _expect(av, yaml.ScalarNode, "match value", path)
                try:
                    a = schema.attribute_index(ak.value)
                    assign[a] = schema.value_index(a, av.value)
                except SchemaMismatchError as exc:
                    raise _err(str(exc), ak, path) from None
            if not assign:
                raise _err("empty match", fields_["match"], path)
            pat = PatternInstantiation(assign)
            target = _number(fields_["p"], "p", path)
            if pat in seen:
                raise _err(f"duplicate pattern {schema.format_pattern(pat)} (first at line {seen[pat]})",
                           entry, path)
            seen[pat] = _loc(entry)[0]
            try:
                constraints.append(make_constraint(pat, target, clamp=clamp))
            except ValidationError as exc:
                raise _err(str(exc), fields_["p"], path) from None

    metadata = {k: v for k, v in meta.items() if k != "n_rows"}
    return ConstraintSpec(schema, constraints, marginals, n_rows, metadata)


def spec_to_yaml(spec: ConstraintSpec) -> str:
    s = spec.schema
    doc: dict = {"format": SPEC_FORMAT}
    doc["schema"] = {a.name: list(a.values) for a in s.attributes}
    if spec.marginals is not None:
        doc["marginals"] = {
            s.attributes[a].name: {lab: float(f) for lab, f in zip(s.attributes[a].values, row)}
            for a, row in enumerate(spec.marginals) if row is not None
        }
    doc["patterns"] = [
        {"match": {s.attributes[a].name: s.attributes[a].values[v] for a, v in c.pattern.items},
         "p": float(c.target)}
        for c in spec.constraints
    ]
    meta = dict(spec.metadata)
    if spec.n_rows is not None:
        meta["n_rows"] = int(spec.n_rows)
    if meta:
        doc["metadata"] = meta
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None, allow_unicode=True)


def write_constraint_spec(spec: ConstraintSpec, path) -> None:
    Path(path).write_text(spec_to_yaml(spec), encoding="utf-8")


# models and tables --------------------------------------------------------

def save_model(model: MaxEntModel, path, report=None) -> None:
    doc = model.to_dict()
    if report is not None:
        doc["fit_report"] = {
            "iterations": report.iterations,
            "max_residual": report.max_residual,
            "converged": report.converged,
        }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_model(path) -> MaxEntModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise IngestError(f"invalid model file: {exc.msg}", path=path, line=exc.lineno, column=exc.colno) from None
    try:
        return MaxEntModel.from_dict(doc)
    except (KeyError, TypeError) as exc:
        raise IngestError(f"malformed model document ({exc})", path=path) from None


def write_table(text: str, path=None) -> None:
    if path is None:
        print(text, end="")
    else:
        Path(path).write_text(text, encoding="utf-8")
