"""Command-line front end: ``catmaxent {fit,select,sample,query,evaluate,benchmark}``.

Exit codes
----------
0 success, 2 usage, 3 input or validation error, 4 non-convergence,
5 internal consistency failure, 6 sampling failure, 1 anything else.
"""

from __future__ import annotations

import argparse
import logging
import secrets
import sys
import time
from pathlib import Path

from . import __version__
from .core import TupleDataset
from .engine import DEFAULT_MAX_SWEEPS, DEFAULT_TOL, fit
from .errors import (
    CatMaxEntError,
    InternalConsistencyError,
    NonConvergenceError,
    SamplingError,
    SelectionError,
    ValidationError,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NONCONVERGENCE = 4
EXIT_INTERNAL = 5
EXIT_SAMPLING = 6

log = logging.getLogger("catmaxent")


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {v}")
    return v


def _existing(text: str) -> Path:
    p = Path(text)
    if not p.is_file():
        raise argparse.ArgumentTypeError(f"no such file: {text}")
    return p


def _fit_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--tol", type=_positive_float, default=DEFAULT_TOL,
                   help="constraint residual tolerance (default %(default)g)")
    p.add_argument("--max-sweeps", type=_positive_int, default=DEFAULT_MAX_SWEEPS,
                   help="iterative scaling sweep limit (default %(default)d)")
    p.add_argument("--threads", type=_positive_int, default=1)


def _report_lines(report) -> str:
    return (f"iterations\t{report.iterations}\n"
            f"max_residual\t{report.max_residual:.3e}\n"
            f"converged\t{int(report.converged)}\n")


# subcommands --------------------------------------------------------------

def cmd_fit(args) -> int:
    from .io import read_constraint_spec, save_model

    spec = read_constraint_spec(args.spec)
    t0 = time.perf_counter()
    try:
        model, report = fit(spec.schema, spec.constraints, spec.marginals,
                            tol=args.tol, max_sweeps=args.max_sweeps, threads=args.threads)
    except NonConvergenceError as exc:
        report = getattr(exc, "report", None)
        if report is not None:
            sys.stdout.write(_report_lines(report))
        raise
    elapsed = time.perf_counter() - t0
    save_model(model, args.out, report)
    sys.stdout.write(_report_lines(report))
    sys.stdout.write(f"components\t{len(model.components)}\n")
    sys.stdout.write(f"blocks\t{sum(len(c.graph.blocks) for c in model.components)}\n")
    print(f"fitted {len(model.constraints)} constraints in {elapsed:.3f}s -> {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_select(args) -> int:
    from .io import read_constraint_spec, save_model, write_table
    from .selection import select

    spec = read_constraint_spec(args.spec)
    n_rows = args.n_rows or spec.n_rows
    if n_rows is None:
        raise ValidationError("row count unknown: set metadata.n_rows in the spec or pass --n-rows")
    try:
        chosen, model, trace = select(spec.schema, spec.constraints, spec.marginals, n_rows,
                                      use_bic=not args.no_bic, max_steps=args.max_steps,
                                      tol=args.tol, max_sweeps=args.max_sweeps, threads=args.threads)
    except SelectionError as exc:
        if exc.trace is not None:
            write_table(exc.trace.to_table(), args.trace)
        if isinstance(exc.__cause__, NonConvergenceError):
            raise exc.__cause__ from exc
        raise
    save_model(model, args.out)
    write_table(trace.to_table(), args.trace)
    print(f"selected {len(chosen)} of {len(spec.constraints)} candidates ({trace.stop_reason})",
          file=sys.stderr)
    return EXIT_OK


def cmd_sample(args) -> int:
    from .io import load_model, write_dataset_csv
    from .sampler import SampleSpec, sample

    seed = args.seed
    if seed is None:
        seed = secrets.randbits(63)
        print(f"seed\t{seed}", file=sys.stderr)
    model = load_model(args.model)
    ds = sample(model, SampleSpec(args.n, seed, rejection_cap=args.rejection_cap), threads=args.threads)
    write_dataset_csv(ds, args.out)
    print(f"wrote {ds.n_rows} rows to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_query(args) -> int:
    from .io import load_model

    model = load_model(args.model)
    pattern = model.schema.parse_pattern(args.pattern)
    print(repr(model.query(pattern, method=args.method)))
    return EXIT_OK


def _reference(path: Path, schema):
    """Reference probabilities plus the patterns they define."""
    from .evaluation import as_source
    from .io import read_constraint_spec, read_microdata_csv

    if path.suffix.lower() == ".csv":
        ds = read_microdata_csv(path, schema)
        return as_source(ds), None, ds.marginal_frequencies(), ds.n_rows
    spec = read_constraint_spec(path)
    if spec.schema != schema:
        raise ValidationError("reference spec schema differs from the model schema")
    table = {c.pattern: c.target for c in spec.constraints}
    marg = spec.marginals
    from .core import PatternInstantiation

    if marg is not None:
        for a, row in enumerate(marg):
            if row is not None:
                for v, f in enumerate(row):
                    table[PatternInstantiation({a: v})] = float(f)

    def lookup(p):
        try:
            return table[p]
        except KeyError:
            raise ValidationError(
                f"reference spec has no probability for {schema.format_pattern(p)}") from None

    return lookup, [c.pattern for c in spec.constraints], marg, spec.n_rows


def cmd_evaluate(args) -> int:
    from .evaluation import approx_kl, baseline_independent_model, evaluation_patterns, metrics_table
    from .io import load_model, write_table
    from .sampler import SampleSpec, sample

    model = load_model(args.model)
    ref, ref_patterns, ref_marg, _ = _reference(args.reference, model.schema)
    patterns = ref_patterns if ref_patterns is not None else [c.pattern for c in model.constraints]
    if args.patterns == "attributes":
        patterns = evaluation_patterns(model.schema, [], True)
    else:
        patterns = evaluation_patterns(model.schema, patterns, args.patterns == "all")
    if ref_marg is None:
        raise ValidationError("reference has no marginals; cannot build the baseline model")

    models = {"model": model, "baseline": baseline_independent_model(model.schema, ref_marg)}
    columns = ["kl_model"]
    if args.sample_n:
        columns.append("kl_sample")
        seed = args.seed
        if seed is None:
            seed = secrets.randbits(63)
            print(f"seed\t{seed}", file=sys.stderr)
    rows = {}
    for name, m in models.items():
        vals = {"kl_model": approx_kl(m, ref, patterns)}
        if args.sample_n:
            ds = sample(m, SampleSpec(args.sample_n, seed), threads=args.threads)
            vals["kl_sample"] = approx_kl(ds, ref, patterns)
        rows[name] = vals
    write_table(metrics_table(rows, columns), args.out)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    from .evaluation import generate_benchmark
    from .io import ConstraintSpec, write_constraint_spec, write_dataset_csv

    seed = args.seed
    if seed is None:
        seed = secrets.randbits(32)
        print(f"seed\t{seed}", file=sys.stderr)
    b = generate_benchmark(args.attrs, args.patterns, args.rows, seed, n_decoys=args.decoys)
    planted = ",".join(str(i) for i, m in enumerate(b.planted_mask) if m)
    spec = ConstraintSpec(b.schema, b.candidates, b.marginals, b.dataset.n_rows,
                          {"seed": int(seed), "planted": planted})
    write_constraint_spec(spec, args.out_spec)
    if args.out_data is not None:
        write_dataset_csv(b.dataset, args.out_data)
    print(f"{len(b.candidates)} candidates ({int(b.planted_mask.sum())} planted) -> {args.out_spec}",
          file=sys.stderr)
    return EXIT_OK


# parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catmaxent", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the maximum-entropy model of a constraint spec")
    p.add_argument("spec", type=_existing)
    p.add_argument("-o", "--out", required=True, type=Path, help="model JSON output")
    _fit_options(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="greedy BIC selection over the spec's patterns")
    p.add_argument("spec", type=_existing)
    p.add_argument("-o", "--out", required=True, type=Path, help="model JSON output")
    p.add_argument("--trace", type=Path, default=None, help="trace TSV (default: stdout)")
    p.add_argument("--no-bic", action="store_true", help="admit every candidate in greedy order")
    p.add_argument("--max-steps", type=_positive_int, default=None)
    p.add_argument("--n-rows", type=_positive_int, default=None,
                   help="dataset size for BIC (default: spec metadata)")
    _fit_options(p)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("sample", help="draw synthetic tuples from a fitted model")
    p.add_argument("model", type=_existing)
    p.add_argument("-n", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, default=None, help="generated and printed when omitted")
    p.add_argument("-o", "--out", required=True, type=Path, help="CSV output")
    p.add_argument("--rejection-cap", type=_positive_int, default=1_000_000)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("query", help="probability of a pattern such as 'sex=male,age=young'")
    p.add_argument("model", type=_existing)
    p.add_argument("pattern")
    p.add_argument("--method", choices=("graph", "restricted"), default="graph")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("evaluate", help="approximate KL of a model and its baseline against a reference")
    p.add_argument("model", type=_existing)
    p.add_argument("reference", type=_existing, help="constraint spec (YAML) or microdata CSV")
    p.add_argument("--patterns", choices=("constraints", "attributes", "all"), default="all")
    p.add_argument("--sample-n", type=_positive_int, default=None,
                   help="also score a synthetic sample of this size")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("-o", "--out", type=Path, default=None, help="TSV output (default: stdout)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="generate a synthetic benchmark spec and dataset")
    p.add_argument("--attrs", type=_positive_int, default=20)
    p.add_argument("--patterns", type=_positive_int, default=10)
    p.add_argument("--decoys", type=int, default=None)
    p.add_argument("--rows", type=_positive_int, default=5000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-spec", required=True, type=Path)
    p.add_argument("--out-data", type=Path, default=None)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NonConvergenceError as exc:
        print(f"error: did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except InternalConsistencyError as exc:
        print(f"error: internal consistency check failed: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except SamplingError as exc:
        print(f"error: sampling failed: {exc}", file=sys.stderr)
        return EXIT_SAMPLING
    except (ValidationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CatMaxEntError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
