import json
import logging

import numpy as np
import pytest

from catmaxent.core import PatternConstraint as C
from catmaxent.core import PatternInstantiation as P
from catmaxent.core import Schema, TupleDataset
from catmaxent.engine import fit
from catmaxent.errors import EmptyInputError, IngestError, ValidationError
from catmaxent.io import (
    ConstraintSpec,
    constraints_from_dataset,
    load_model,
    parse_constraint_spec,
    read_constraint_spec,
    read_microdata_csv,
    save_model,
    spec_to_yaml,
    write_constraint_spec,
    write_dataset_csv,
    write_table,
)

SCHEMA = Schema.from_dict({"sex": ["male", "female"], "age": ["young", "middle", "old"], "own": ["yes", "no"]})


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


# CSV ---------------------------------------------------------------------

def test_read_known_labels(tmp_path):
    p = write(tmp_path, "d.csv", "sex,age,own\nmale,old,yes\nfemale,young,no\n")
    ds = read_microdata_csv(p, SCHEMA)
    assert ds.n_rows == 2
    assert ds.rows.tolist() == [[0, 2, 0], [1, 0, 1]]


def test_columns_may_be_reordered(tmp_path):
    p = write(tmp_path, "d.csv", "own,sex,age\nyes,male,old\n")
    assert read_microdata_csv(p, SCHEMA).rows.tolist() == [[0, 2, 0]]


def test_unknown_label_names_row_and_column(tmp_path):
    p = write(tmp_path, "d.csv", "sex,age,own\nmale,old,yes\nmale,ancient,no\n")
    with pytest.raises(IngestError) as info:
        read_microdata_csv(p, SCHEMA)
    assert info.value.line == 3 and info.value.column == 2
    assert "ancient" in str(info.value) and "line 3" in str(info.value)


@pytest.mark.parametrize("text, line", [
    ("", 1),
    ("sex,age,own\n", 2),
    ("sex,age,own\nmale,old\n", 2),
])
def test_malformed_files(tmp_path, text, line):
    p = write(tmp_path, "d.csv", text)
    with pytest.raises(IngestError) as info:
        read_microdata_csv(p, SCHEMA)
    assert info.value.line == line


def test_inference(tmp_path):
    p = write(tmp_path, "d.csv", "a,b\nx,1\ny,2\nx,3\n")
    ds = read_microdata_csv(p)
    assert ds.schema.cardinalities.tolist() == [2, 3]
    assert ds.schema.attributes[0].values == ("x", "y")
    single = write(tmp_path, "s.csv", "a,b\nx,1\nx,2\n")
    with pytest.raises(IngestError, match="single value"):
        read_microdata_csv(single)


def test_dataset_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ds = TupleDataset(SCHEMA, rng.integers(0, SCHEMA.cardinalities, size=(50, 3)))
    p = tmp_path / "out.csv"
    write_dataset_csv(ds, p)
    assert read_microdata_csv(p, SCHEMA) == ds


def test_quoted_labels_round_trip(tmp_path):
    s = Schema.from_dict({"city": ["New York, NY", 'say "hi"'], "n": ["1", "2"]})
    ds = TupleDataset(s, [[0, 1], [1, 0]])
    p = tmp_path / "q.csv"
    write_dataset_csv(ds, p)
    assert read_microdata_csv(p, s) == ds


# constraints from data ------------------------------------------------------

def test_constraints_from_dataset(caplog):
    s = Schema.from_cardinalities([2, 2])
    rows = [[0, 0]] * 75 + [[1, 1]] * 25
    ds = TupleDataset(s, rows)
    with caplog.at_level(logging.WARNING):
        out = constraints_from_dataset(ds, [P({0: 0}), P({0: 0, 1: 1})])
    assert out == [C(P({0: 0}), 0.75)]
    assert "dropping" in caplog.text
    with pytest.raises(EmptyInputError):
        constraints_from_dataset(TupleDataset(s, np.zeros((0, 2))), [P({0: 0})])


def test_pairwise_patterns_hand_count():
    s = Schema.from_cardinalities([2, 2])
    ds = TupleDataset(s, [[0, 0], [0, 0], [0, 1], [1, 0], [1, 1], [1, 1], [1, 1], [0, 0]])
    pats = [P({0: a, 1: b}) for a in range(2) for b in range(2)]
    out = constraints_from_dataset(ds, pats)
    assert [c.target for c in out] == [3 / 8, 1 / 8, 1 / 8, 3 / 8]


# constraint spec -----------------------------------------------------------

SPEC = """\
format: catmaxent-spec/1
schema:
  sex: [male, female]
  age: [young, middle, old]
marginals:
  sex: {male: 0.49, female: 0.51}
patterns:
  - match: {sex: male, age: young}
    p: 0.12
  - match: {age: old}
    p: 0.3
metadata:
  n_rows: 5000
  notes: toy
"""


def test_parse_spec():
    spec = parse_constraint_spec(SPEC)
    assert spec.schema.names == ["sex", "age"]
    assert spec.n_rows == 5000 and spec.metadata == {"notes": "toy"}
    assert spec.constraints == [C(P({0: 0, 1: 0}), 0.12), C(P({1: 2}), 0.3)]
    np.testing.assert_allclose(spec.marginals[0], [0.49, 0.51])
    assert spec.marginals[1] is None


def test_minimal_spec():
    spec = parse_constraint_spec("schema:\n  a: [x, y]\nmarginals:\n  a: {x: 0.4, y: 0.6}\n")
    assert spec.constraints == [] and spec.n_rows is None


def test_other_completion():
    text = ("schema:\n  a: [x, y]\nmarginals:\n  a: {x: 0.5, y: 0.47}\n"
            "metadata:\n  complete_marginals: true\n")
    spec = parse_constraint_spec(text)
    assert spec.schema.attributes[0].values == ("x", "y", "other")
    np.testing.assert_allclose(spec.marginals[0], [0.5, 0.47, 0.03])
    with pytest.raises(IngestError, match="sum"):
        parse_constraint_spec("schema:\n  a: [x, y]\nmarginals:\n  a: {x: 0.5, y: 0.47}\n")


def test_duplicate_pattern_is_an_error():
    text = ("schema:\n  a: [x, y]\n  b: [u, v]\npatterns:\n"
            "  - match: {a: x, b: u}\n    p: 0.2\n"
            "  - match: {b: u, a: x}\n    p: 0.3\n")
    with pytest.raises(IngestError, match="duplicate") as info:
        parse_constraint_spec(text)
    assert info.value.line == 7


@pytest.mark.parametrize("text, fragment", [
    ("schema: [a\n", "YAML"),
    ("schema:\n  a: [x]\n", "two values"),
    ("schema:\n  a: [x, y]\npatterns:\n  - match: {a: z}\n    p: 0.2\n", "unknown value"),
    ("schema:\n  a: [x, y]\npatterns:\n  - match: {a: x}\n    p: 1.0\n", "strictly"),
    ("schema:\n  a: [x, y]\npatterns:\n  - match: {a: x}\n    p: abc\n", "number"),
    ("schema:\n  a: [x, y]\nbogus: 1\n", "unknown section"),
    ("format: other/2\nschema:\n  a: [x, y]\n", "unsupported format"),
    ("patterns: []\n", "schema"),
])
def test_spec_errors_carry_location(text, fragment):
    with pytest.raises(IngestError) as info:
        parse_constraint_spec(text, path="s.yaml")
    assert fragment in str(info.value)
    assert info.value.line is not None


def test_boundary_targets_with_clamp():
    text = "schema:\n  a: [x, y]\npatterns:\n  - match: {a: x}\n    p: 1.0\nmetadata:\n  clamp: true\n"
    spec = parse_constraint_spec(text)
    assert spec.constraints[0].target == pytest.approx(1 - 1e-9)


def test_spec_round_trip(tmp_path):
    spec = parse_constraint_spec(SPEC)
    p = tmp_path / "s.yaml"
    write_constraint_spec(spec, p)
    back = read_constraint_spec(p)
    assert back.schema == spec.schema
    assert back.constraints == spec.constraints
    assert back.n_rows == spec.n_rows and back.metadata == spec.metadata
    np.testing.assert_array_equal(back.marginals[0], spec.marginals[0])
    assert spec_to_yaml(back) == spec_to_yaml(spec)


def test_numeric_looking_labels_stay_strings():
    s = Schema.from_cardinalities([2, 3])
    spec = ConstraintSpec(s, [C(P({0: 1, 1: 2}), 0.1)], None, 10)
    back = parse_constraint_spec(spec_to_yaml(spec))
    assert back.schema == s and back.constraints == spec.constraints


# models and tables ----------------------------------------------------------

def test_model_round_trip(tmp_path):
    s = Schema.from_cardinalities([2, 3, 2])
    m, rep = fit(s, [C(P({0: 0, 1: 2}), 0.3)], [None, np.array([0.2, 0.3, 0.5]), None])
    p = tmp_path / "m.json"
    save_model(m, p, rep)
    doc = json.loads(p.read_text())
    assert doc["fit_report"]["converged"] is True
    back = load_model(p)
    tuples, probs = m.enumerate()
    np.testing.assert_allclose(back.prob(tuples), probs, rtol=1e-12)


def test_model_load_errors(tmp_path):
    bad = write(tmp_path, "bad.json", '{"format": ')
    with pytest.raises(IngestError) as info:
        load_model(bad)
    assert info.value.line == 1
    other = write(tmp_path, "o.json", '{"format": "catmaxent-model", "version": 1}')
    with pytest.raises(IngestError):
        load_model(other)
    with pytest.raises(ValidationError):
        load_model(write(tmp_path, "w.json", '{"format": "nope"}'))


def test_write_table(tmp_path, capsys):
    write_table("a\tb\n")
    assert capsys.readouterr().out == "a\tb\n"
    write_table("x\n", tmp_path / "t.tsv")
    assert (tmp_path / "t.tsv").read_text() == "x\n"
