"""Fitting and querying the categorical maximum-entropy model.

The fitted distribution factorizes as

    p*(T) = prod_i w_i(T_i) * prod_k [ u0_k * exp(sum_{c in k} log_u_c * I_c(T)) ]

where ``w_i`` are normalized per-attribute weights (uniform when no marginal
targets are given, otherwise the fitted independent factor), ``k`` ranges
over attribute-connected constraint components, and ``u0_k`` normalizes each
component.  All parameters are kept in log space.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .blockgraph import (
    BlockGraph,
    block_masses,
    build_block_graph,
    normalize_marginals,
    pattern_restricted_masses,
    restricted_masses,
)
from .core import (
    PatternConstraint,
    PatternInstantiation,
    Schema,
    validate_constraints,
)
from .errors import (
    InfeasibleConstraintError,
    NonConvergenceError,
    SchemaMismatchError,
    SpaceTooLargeError,
    ValidationError,
)

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-6
DEFAULT_MAX_SWEEPS = 1000
MODEL_FORMAT = "catmaxent-model"
MODEL_VERSION = 1


@dataclass
class FitReport:
    iterations: int = 0
    max_residual: float = 0.0
    converged: bool = True
    component_times: list[float] = field(default_factory=list)
    component_sweeps: list[int] = field(default_factory=list)


def decompose(constraints: Sequence[PatternConstraint], include_marginals: bool = False) -> list[list[int]]:
    """Group constraint indices into attribute-connected components.

    Marginal targets never join components; they live in the separate
    independent factor, so ``include_marginals`` does not change the result.
    """
    parent: dict[int, int] = {}

    def find(a):
        while parent.setdefault(a, a) != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for c in constraints:
        attrs = c.pattern.attrs
        r0 = find(attrs[0])
        for a in attrs[1:]:
            r = find(a)
            if r != r0:
                parent[max(r, r0)] = min(r, r0)
                r0 = min(r, r0)
    groups: dict[int, list[int]] = {}
    for i, c in enumerate(constraints):
        groups.setdefault(find(c.pattern.attrs[0]), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


class Component:
    """One independent factor: its constraints, attributes and block graph."""

    def __init__(self, constraint_ids, graph: BlockGraph, log_u0: float):
        self.constraint_ids = tuple(constraint_ids)
        self.graph = graph
        self.attrs = graph.scope
        self.log_u0 = float(log_u0)
        # filled by MaxEntModel._annotate
        self.cum: np.ndarray | None = None
        self.mass: np.ndarray | None = None
        self.theta: np.ndarray | None = None

    def block_probabilities(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            lp = np.log(self.mass) + self.theta + self.log_u0
        return np.exp(lp)


class MaxEntModel:
    """Fitted (or initial) model; treat as immutable once constructed."""

    def __init__(self, schema: Schema, constraints: Sequence[PatternConstraint],
                 log_u: np.ndarray, log_w: Sequence[np.ndarray],
                 marginal_targets: Sequence[np.ndarray | None] | None,
                 components: Sequence[Component]):
        self.schema = schema
        self.constraints = tuple(constraints)
        self.log_u = np.array(log_u, dtype=np.float64)
        self.log_u.setflags(write=False)
        self.log_w = [np.array(x, dtype=np.float64) for x in log_w]
        if marginal_targets is None or all(t is None for t in marginal_targets):
            self.marginal_targets = None
        else:
            self.marginal_targets = [None if t is None else np.asarray(t, float) for t in marginal_targets]
        self.components = tuple(components)
        self._component_of_attr = {}
        for k, comp in enumerate(self.components):
            for a in comp.attrs:
                self._component_of_attr[a] = k
        self._annotate()

    # construction helpers ----------------------------------------------

    def _annotate(self):
        w = self.weights
        for comp in self.components:
            comp.cum, comp.mass = block_masses(comp.graph, w)
            sat = comp.graph.arrays.satisfied.astype(np.float64)
            comp.theta = sat @ self.log_u[list(comp.constraint_ids)] if comp.constraint_ids else np.zeros(len(comp.graph))

    @property
    def weights(self) -> list[np.ndarray]:
        return [np.exp(x) for x in self.log_w]

    @property
    def marginals_active(self) -> bool:
        return self.marginal_targets is not None

    @property
    def log_u0(self) -> float:
        """Log of the overall pattern-factor normalizer (the u0/v0 ratio)."""
        return float(sum(c.log_u0 for c in self.components))

    @property
    def targets(self) -> np.ndarray:
        return np.array([c.target for c in self.constraints])

    def n_parameters(self) -> int:
        """Free multiplicative parameters: one per constraint, k-1 per constrained attribute."""
        n = len(self.constraints)
        if self.marginal_targets is not None:
            n += sum(len(t) - 1 for t in self.marginal_targets if t is not None)
        return n

    # probabilities --------------------------------------------------------

    def component_of(self, attr: int) -> Component | None:
        k = self._component_of_attr.get(attr)
        return None if k is None else self.components[k]

    def pattern_probabilities(self) -> np.ndarray:
        """Model probability of every constraint pattern."""
        out = np.zeros(len(self.constraints))
        for comp in self.components:
            p = comp.block_probabilities()
            arr = comp.graph.arrays
            sums = kernels.constraint_sums(p, arr.mem_ptr, arr.mem_idx)
            out[list(comp.constraint_ids)] = sums
        return out

    def attribute_marginal(self, attr: int) -> np.ndarray:
        comp = self.component_of(attr)
        w = self.weights
        if comp is None:
            return w[attr]
        m = restricted_masses(comp.graph, w, comp.cum, attr)
        e = np.exp(comp.theta + comp.log_u0)
        return e @ m

    def query(self, pattern: PatternInstantiation, method: str = "graph") -> float:
        """p*(T = x) for an arbitrary pattern.

        ``graph`` builds a temporary block graph with the pattern added to the
        affected component; ``restricted`` runs inclusion-exclusion on the
        existing graph with the pattern's values pinned.  Both are exact.
        """
        self.schema.check_pattern(pattern)
        w = self.weights
        by_comp: dict[int, dict[int, int]] = {}
        logp = 0.0
        for a, v in pattern.items:
            k = self._component_of_attr.get(a)
            if k is None:
                logp += math.log(w[a][v])
            else:
                by_comp.setdefault(k, {})[a] = v
        for k, assign in by_comp.items():
            comp = self.components[k]
            sub = PatternInstantiation(assign)
            if method == "graph":
                p = _query_graph(comp, self.log_u, w, sub)
            elif method == "restricted":
                m = pattern_restricted_masses(comp.graph, w, comp.cum, sub)
                p = float(np.exp(comp.theta + comp.log_u0) @ m)
            else:
                raise ValueError(f"unknown query method {method!r}")
            if p <= 0.0:
                return 0.0
            logp += math.log(p)
        return math.exp(logp)

    def log_prob(self, rows) -> np.ndarray:
        """log p*(t) for each row of a 2-D array of tuples."""
        rows = np.ascontiguousarray(rows, dtype=np.int32)
        if rows.ndim != 2 or rows.shape[1] != len(self.schema):
            raise SchemaMismatchError("rows do not match the model schema")
        out = np.full(rows.shape[0], self.log_u0)
        for a, lw in enumerate(self.log_w):
            out += lw[rows[:, a]]
        if self.constraints:
            ptr, at, va = kernels.pack_patterns([c.pattern for c in self.constraints])
            ind = kernels.match_patterns(rows, ptr, at, va)
            out += ind.astype(np.float64) @ self.log_u
        return out

    def prob(self, rows) -> np.ndarray:
        return np.exp(self.log_prob(rows))

    def enumerate(self, limit: int = 1_000_000) -> tuple[np.ndarray, np.ndarray]:
        """All tuples of the space and their probabilities (small spaces only)."""
        tuples = enumerate_space(self.schema, limit)
        return tuples, self.prob(tuples)

    # serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "schema": [{"name": a.name, "values": list(a.values)} for a in self.schema.attributes],
            "constraints": [
                {"pattern": [list(it) for it in c.pattern.items], "target": c.target}
                for c in self.constraints
            ],
            "marginal_targets": None if self.marginal_targets is None else [
                None if t is None else t.tolist() for t in self.marginal_targets
            ],
            "log_u": self.log_u.tolist(),
            "log_w": [x.tolist() for x in self.log_w],
            "components": [
                {"constraints": list(c.constraint_ids), "log_u0": c.log_u0} for c in self.components
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MaxEntModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValidationError(f"not a model document (format={d.get('format')!r})")
        if d.get("version") != MODEL_VERSION:
            raise ValidationError(f"unsupported model version {d.get('version')!r}")
        from .core import AttributeDef

        schema = Schema(AttributeDef(a["name"], tuple(a["values"])) for a in d["schema"])
        constraints = validate_constraints(schema, [
            PatternConstraint(PatternInstantiation([tuple(it) for it in c["pattern"]]), c["target"])
            for c in d["constraints"]
        ])
        comps = []
        for cd in d["components"]:
            ids = cd["constraints"]
            g = _component_graph(schema, constraints, ids)
            comps.append(Component(ids, g, cd["log_u0"]))
        mt = d.get("marginal_targets")
        return cls(schema, constraints, np.array(d["log_u"], dtype=np.float64),
                   [np.array(x, dtype=np.float64) for x in d["log_w"]],
                   None if mt is None else [None if t is None else np.array(t) for t in mt],
                   comps)


def _query_graph(comp: Component, log_u: np.ndarray, weights, sub: PatternInstantiation) -> float:
    g = comp.graph
    lu = log_u[list(comp.constraint_ids)]
    if sub in g.patterns:
        idx = g.patterns.index(sub)
        sel = g.arrays.satisfied[:, idx]
        return float(comp.block_probabilities()[sel].sum())
    tmp = g.copy()
    c = tmp.add_pattern(sub)
    _, mass = block_masses(tmp, weights)
    sat = tmp.arrays.satisfied
    theta = sat[:, :c].astype(np.float64) @ lu if c else np.zeros(len(tmp))
    with np.errstate(divide="ignore"):
        lw = np.log(mass) + theta
    top = lw.max()
    e = np.exp(lw - top)
    return float(e[sat[:, c]].sum() / e.sum())


def enumerate_space(schema: Schema, limit: int = 1_000_000) -> np.ndarray:
    size = schema.space_size()
    if size > limit:
        raise SpaceTooLargeError(f"tuple space has {size} tuples (limit {limit})")
    grids = np.indices(tuple(int(k) for k in schema.cardinalities)).reshape(len(schema), -1).T
    return np.ascontiguousarray(grids, dtype=np.int32)


def _component_graph(schema, constraints, ids) -> BlockGraph:
    attrs = sorted({a for i in ids for a in constraints[i].pattern.attrs})
    return build_block_graph(schema, [constraints[i].pattern for i in ids], scope=attrs)


def _normalize_targets(schema: Schema, marginals):
    """Marginal targets as a per-attribute list (``None`` = unconstrained)."""
    if marginals is None:
        return None
    if isinstance(marginals, dict):
        rows = [None] * len(schema)
        for a, row in marginals.items():
            rows[a if isinstance(a, int) else schema.attribute_index(a)] = row
        marginals = rows
    rows = list(marginals)
    checked = normalize_marginals(schema, rows)
    out = []
    for a, (row, chk) in enumerate(zip(rows, checked)):
        if row is None:
            out.append(None)
            continue
        if np.any(chk <= 0.0):
            raise ValidationError(
                f"marginal target for {schema.attributes[a].name!r} has a zero entry; "
                "boundary frequencies force infinite parameters"
            )
        out.append(chk)
    return None if all(t is None for t in out) else out


def _logsumexp(x: np.ndarray) -> float:
    top = np.max(x)
    if not np.isfinite(top):
        return float(top)
    return float(top + np.log(np.exp(x - top).sum()))


def _theta(sat: np.ndarray, lu: np.ndarray) -> np.ndarray:
    if lu.size == 0:
        return np.zeros(sat.shape[0])
    return sat.astype(np.float64) @ lu


class _ComponentFit:
    """Mutable fitting state for one component."""

    def __init__(self, schema, graph: BlockGraph, targets, lu, weights, marg_targets):
        self.graph = graph
        self.arr = graph.arrays
        self.targets = np.asarray(targets, dtype=np.float64)
        self.lu = np.array(lu, dtype=np.float64)
        self.w = weights  # full list, entries for graph.scope are owned by this fit
        self.marg = {a: marg_targets[a] for a in graph.scope
                     if marg_targets is not None and marg_targets[a] is not None}
        self.refresh_masses()

    def refresh_masses(self):
        self.cum, self.mass = block_masses(self.graph, self.w)
        with np.errstate(divide="ignore"):
            self.log_mass = np.log(self.mass)

    def block_probs(self) -> np.ndarray:
        lw = self.log_mass + _theta(self.arr.satisfied, self.lu)
        top = lw.max()
        p = np.exp(lw - top)
        return p / p.sum()

    def pattern_residual(self, p) -> float:
        if not self.targets.size:
            return 0.0
        sums = kernels.constraint_sums(p, self.arr.mem_ptr, self.arr.mem_idx)
        return float(np.max(np.abs(sums - self.targets)))

    def marginal(self, a, p, masses=None) -> np.ndarray:
        m = restricted_masses(self.graph, self.w, self.cum, a) if masses is None else masses
        # p = mass * e^theta / Z  =>  e^theta / Z = p / mass on blocks with mass
        scale = np.divide(p, self.mass, out=np.zeros_like(p), where=self.mass > 0)
        return scale @ m

    def marginal_residual(self, p) -> float:
        r = 0.0
        for a, t in self.marg.items():
            r = max(r, float(np.max(np.abs(self.marginal(a, p) - t))))
        return r

    def pattern_sweep(self, p) -> np.ndarray:
        bad = kernels.scaling_sweep(p, self.lu, self.targets, self.arr.mem_ptr, self.arr.mem_idx)
        if bad >= 0:
            raise InfeasibleConstraintError(
                f"constraint {bad} of the component has no support left under the model; "
                "the constraint set is inconsistent",
                residual=float("inf"),
            )
        return p

    def marginal_sweep(self):
        fixed_cols = self.arr.assigned
        for a, t in self.marg.items():
            p = self.block_probs()
            m = restricted_masses(self.graph, self.w, self.cum, a)
            cur = self.marginal(a, p, m)
            if np.any(cur <= 0):
                raise InfeasibleConstraintError(
                    f"attribute {a} has a value with zero model probability", residual=float("inf")
                )
            ratio = t / cur
            nw = self.w[a] * ratio
            z = nw.sum()
            self.w[a], ratio = nw / z, ratio / z
            # block masses are linear in the weights of one attribute
            self.mass = np.maximum(m @ ratio, 0.0)
            col = fixed_cols[:, a]
            hit = col >= 0
            self.cum[hit] *= ratio[col[hit]]
            with np.errstate(divide="ignore"):
                self.log_mass = np.log(self.mass)

    def log_u0(self) -> float:
        finite = self.mass > 0
        lw = self.log_mass[finite] + _theta(self.arr.satisfied[finite], self.lu)
        return -_logsumexp(lw)


def _fit_component(fit: _ComponentFit, tol: float, max_sweeps: int):
    t0 = time.perf_counter()
    resid = float("inf")
    sweeps = 0
    for sweeps in range(max_sweeps + 1):
        p = fit.block_probs()
        if not np.all(np.isfinite(p)):
            raise NonConvergenceError("model parameters diverged", residual=float("inf"), iterations=sweeps)
        resid = fit.pattern_residual(p)
        if resid <= tol and fit.marg:
            resid = max(resid, fit.marginal_residual(p))
        if resid <= tol or sweeps == max_sweeps:
            break
        fit.pattern_sweep(p)
        if fit.marg:
            fit.marginal_sweep()
    return sweeps, resid, time.perf_counter() - t0


def initial_model(schema: Schema, constraints: Sequence[PatternConstraint] = (), marginals=None) -> MaxEntModel:
    """Unfitted model: every pattern parameter at one, marginal weights at their targets."""
    constraints = validate_constraints(schema, list(constraints))
    targets = _normalize_targets(schema, marginals)
    w = normalize_marginals(schema, targets)
    log_w = [np.log(x) for x in w]
    comps = []
    for ids in decompose(constraints):
        g = _component_graph(schema, constraints, ids)
        _, mass = block_masses(g, w)
        with np.errstate(divide="ignore"):
            lu0 = -_logsumexp(np.log(mass))
        comps.append(Component(ids, g, lu0))
    return MaxEntModel(schema, constraints, np.zeros(len(constraints)), log_w, targets, comps)


def fit(schema: Schema, constraints: Sequence[PatternConstraint], marginals=None, *,
        tol: float = DEFAULT_TOL, max_sweeps: int = DEFAULT_MAX_SWEEPS, threads: int = 1,
        init: MaxEntModel | None = None, raise_on_failure: bool = True) -> tuple[MaxEntModel, FitReport]:
    """Fit the maximum-entropy model to pattern and (optional) marginal targets.

    Parameters
    ----------
    schema : Schema
    constraints : sequence of PatternConstraint
        Pattern targets; processed in the given order within each sweep.
    marginals : list of arrays (one per attribute, ``None`` to skip) or dict, optional
        Target distribution of single attributes.
    tol : float
        Largest allowed absolute residual over all targets.
    max_sweeps : int
        Sweeps per component before giving up.
    threads : int
        Components are independent and may be fitted concurrently.
    init : MaxEntModel, optional
        Warm start; parameters of constraints shared with ``init`` are reused.

    Returns
    -------
    model, report

    Raises
    ------
    NonConvergenceError
        If the residual stays above ``tol`` (the report is attached as ``.report``).
    """
    constraints = validate_constraints(schema, list(constraints))
    targets = _normalize_targets(schema, marginals)
    warm = init is not None and init.schema == schema
    prev = {c.pattern: lu for c, lu in zip(init.constraints, init.log_u)} if warm else {}
    groups = decompose(constraints)
    in_comp = {a for ids in groups for i in ids for a in constraints[i].pattern.attrs}
    w = normalize_marginals(schema, None)
    if targets is not None:
        for a, t in enumerate(targets):
            if t is None:
                continue
            if warm and a in in_comp and init.marginal_targets is not None \
                    and init.marginal_targets[a] is not None:
                w[a] = np.exp(init.log_w[a])
            else:
                # attributes outside every component follow their target exactly
                w[a] = t.copy()

    fits = []
    for ids in groups:
        g = _component_graph(schema, constraints, ids)
        lu = [prev.get(constraints[i].pattern, 0.0) for i in ids]
        fits.append((ids, _ComponentFit(schema, g, [constraints[i].target for i in ids], lu, w, targets)))

    def run(item):
        return _fit_component(item[1], tol, max_sweeps)

    if threads > 1 and len(fits) > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(run, fits))
    else:
        results = [run(f) for f in fits]

    report = FitReport(
        iterations=max((r[0] for r in results), default=0),
        max_residual=max((r[1] for r in results), default=0.0),
        component_times=[r[2] for r in results],
        component_sweeps=[r[0] for r in results],
    )
    report.converged = report.max_residual <= tol
    log_u = np.zeros(len(constraints))
    comps = []
    for (ids, f), _ in zip(fits, results):
        log_u[list(ids)] = f.lu
        comps.append(Component(ids, f.graph, f.log_u0()))
    model = MaxEntModel(schema, constraints, log_u, [np.log(x) for x in w], targets, comps)
    if not report.converged and raise_on_failure:
        err = NonConvergenceError(
            f"iterative scaling stopped after {report.iterations} sweeps with residual "
            f"{report.max_residual:.3e} > {tol:.1e}; constraints may be inconsistent",
            residual=report.max_residual, iterations=report.iterations,
        )
        err.report = report
        err.model = model
        raise err
    log.debug("fit: %d components, %d sweeps, residual %.3e",
              len(comps), report.iterations, report.max_residual)
    return model, report


def block_probability(model: MaxEntModel, component: int, block_index: int) -> float:
    """p(B) = p_A(B) * u0 * prod u^I(B) for a block of one component's graph."""
    comp = model.components[component]
    return float(comp.block_probabilities()[block_index])


def query(model: MaxEntModel, pattern: PatternInstantiation, method: str = "graph") -> float:
    return model.query(pattern, method=method)


def iterative_scaling_step(model: MaxEntModel, constraint_index: int) -> MaxEntModel:
    """Rescale one constraint parameter so that constraint holds exactly.

    With ``c`` the current pattern probability and ``t`` its target,
    ``u <- u * (t/c) * ((1-c)/(1-t))`` and ``u0 <- u0 * (1-t)/(1-c)``.
    """
    con = model.constraints[constraint_index]
    c = model.query(con.pattern, method="restricted")
    t = con.target
    if c <= 0.0:
        raise InfeasibleConstraintError(f"pattern {con.pattern!r} has zero support", residual=t)
    if c >= 1.0:
        raise InfeasibleConstraintError(f"pattern {con.pattern!r} covers the whole space", residual=1 - t)
    log_u = model.log_u.copy()
    log_u[constraint_index] += math.log(t / c) + math.log((1 - c) / (1 - t))
    comps = []
    for comp in model.components:
        lu0 = comp.log_u0
        if constraint_index in comp.constraint_ids:
            lu0 += math.log((1 - t) / (1 - c))
        comps.append(Component(comp.constraint_ids, comp.graph, lu0))
    return MaxEntModel(model.schema, model.constraints, log_u, model.log_w,
                       model.marginal_targets, comps)


def marginal_scaling_step(model: MaxEntModel, attr: int) -> MaxEntModel:
    """Rescale one attribute's weights so its marginal target holds exactly."""
    if model.marginal_targets is None or model.marginal_targets[attr] is None:
        raise ValidationError(f"attribute {attr} has no marginal target")
    target = model.marginal_targets[attr]
    cur = np.array([
        model.query(PatternInstantiation({attr: v}), method="graph") for v in range(len(target))
    ])
    w = np.exp(model.log_w[attr]) * target / cur
    log_w = list(model.log_w)
    log_w[attr] = np.log(w / w.sum())
    comps = [Component(c.constraint_ids, c.graph, 0.0) for c in model.components]
    tmp = MaxEntModel(model.schema, model.constraints, model.log_u, log_w, model.marginal_targets, comps)
    for comp in tmp.components:
        with np.errstate(divide="ignore"):
            comp.log_u0 = -_logsumexp(np.log(comp.mass) + comp.theta)
    return tmp


def log_likelihood(model: MaxEntModel, n_rows: int, pattern_freqs=None, marginal_freqs=None) -> float:
    """Closed-form training log-likelihood from empirical frequencies.

    ``L = |D| (log u0 + sum_c f_c log u_c + sum_i sum_a f_i(a) log w_i(a))``;
    frequencies default to the model's own targets.
    """
    f = model.targets if pattern_freqs is None else np.asarray(pattern_freqs, dtype=np.float64)
    total = model.log_u0 + float(f @ model.log_u) if len(f) else model.log_u0
    for a, lw in enumerate(model.log_w):
        if marginal_freqs is not None and marginal_freqs[a] is not None:
            fa = np.asarray(marginal_freqs[a], dtype=np.float64)
        elif model.marginal_targets is not None and model.marginal_targets[a] is not None:
            fa = model.marginal_targets[a]
        elif np.allclose(lw, lw[0]):
            fa = np.full(len(lw), 1.0 / len(lw))
        else:
            raise ValidationError(f"empirical marginal of attribute {a} is required")
        total += float(fa @ lw)
    return n_rows * total
