"""Greedy selection of informative pattern constraints with BIC stopping."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .core import PatternConstraint, Schema, validate_constraints
from .engine import DEFAULT_MAX_SWEEPS, DEFAULT_TOL, MaxEntModel, fit, log_likelihood
from .errors import DomainError, NonConvergenceError, SelectionError

log = logging.getLogger(__name__)

STOP_BIC = "BIC non-decreasing"
STOP_EXHAUSTED = "candidates exhausted"
STOP_LIMIT = "step limit"


def heuristic_h(alpha: float, beta: float) -> float:
    """Two-state KL divergence ``a log(a/b) + (1-a) log((1-a)/(1-b))``."""
    if not (0.0 < alpha < 1.0 and 0.0 < beta < 1.0):
        raise DomainError(f"h({alpha!r}, {beta!r}) needs both arguments strictly inside (0, 1)")
    val = alpha * math.log(alpha / beta) + (1.0 - alpha) * math.log((1.0 - alpha) / (1.0 - beta))
    return max(val, 0.0)


def bic(model: MaxEntModel, n_rows: int) -> float:
    """``-2 L + N log |D|`` with N the free parameter count of the model."""
    if n_rows < 1:
        raise ValueError("n_rows must be positive")
    return -2.0 * log_likelihood(model, n_rows) + model.n_parameters() * math.log(n_rows)


@dataclass
class SelectionStep:
    iteration: int
    candidate: int
    h: float
    log_likelihood: float
    bic: float
    accepted: bool


@dataclass
class SelectionTrace:
    initial_log_likelihood: float = 0.0
    initial_bic: float = 0.0
    steps: list[SelectionStep] = field(default_factory=list)
    stop_reason: str = ""

    @property
    def accepted(self) -> list[SelectionStep]:
        return [s for s in self.steps if s.accepted]

    def to_table(self) -> str:
        lines = ["iteration\tconstraint\th\tlog_likelihood\tbic\taccepted"]
        lines.append(f"0\t-\t-\t{self.initial_log_likelihood!r}\t{self.initial_bic!r}\t1")
        for s in self.steps:
            lines.append(
                f"{s.iteration}\t{s.candidate}\t{s.h!r}\t{s.log_likelihood!r}\t{s.bic!r}\t{int(s.accepted)}"
            )
        lines.append(f"# stop: {self.stop_reason}")
        return "\n".join(lines) + "\n"


def _argmax_lowest(values: Sequence[float]) -> int:
    best, arg = -math.inf, -1
    for i, v in enumerate(values):
        if v > best:
            best, arg = v, i
    return arg


def select(schema: Schema, candidates: Sequence[PatternConstraint], marginals=None, n_rows: int = 1, *,
           use_bic: bool = True, strict: bool = True, max_steps: int | None = None,
           tol: float = DEFAULT_TOL, max_sweeps: int = DEFAULT_MAX_SWEEPS, threads: int = 1,
           query_method: str = "restricted"):
    """Greedily add the candidate whose model probability diverges most from its target.

    Each round scores every remaining candidate with
    ``h(model probability, target)``, adds the best (lowest index on ties),
    refits warm-started from the current model and keeps it only if BIC
    drops (strictly, unless ``strict`` is False).  With ``use_bic=False``
    every candidate is admitted in greedy order.

    Returns
    -------
    selected : list of int
        Indices into ``candidates`` in the order they were accepted.
    model : MaxEntModel
    trace : SelectionTrace
    """
    candidates = validate_constraints(schema, list(candidates))
    model, _ = fit(schema, [], marginals, tol=tol, max_sweeps=max_sweeps)
    trace = SelectionTrace(log_likelihood(model, n_rows), bic(model, n_rows))
    current_bic = trace.initial_bic
    selected: list[int] = []
    remaining = list(range(len(candidates)))
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        while True:
            if not remaining:
                trace.stop_reason = STOP_EXHAUSTED
                break
            if max_steps is not None and len(selected) >= max_steps:
                trace.stop_reason = STOP_LIMIT
                break

            def score(i, model=model):
                c = candidates[i]
                return heuristic_h(model.query(c.pattern, method=query_method), c.target)

            hs = list(pool.map(score, remaining)) if pool else [score(i) for i in remaining]
            pick = remaining[_argmax_lowest(hs)]
            h = max(hs)
            chosen = [candidates[i] for i in selected + [pick]]
            try:
                new_model, _ = fit(schema, chosen, marginals, tol=tol, max_sweeps=max_sweeps, init=model)
            except NonConvergenceError as exc:
                trace.stop_reason = f"refit failed: {exc}"
                raise SelectionError(f"refit after adding candidate {pick} failed: {exc}", trace) from exc
            ll = log_likelihood(new_model, n_rows)
            b = bic(new_model, n_rows)
            ok = (not use_bic) or (b < current_bic if strict else b <= current_bic)
            trace.steps.append(SelectionStep(len(trace.steps) + 1, pick, h, ll, b, ok))
            log.debug("select: candidate %d h=%.4g L=%.6g BIC=%.6g accepted=%s", pick, h, ll, b, ok)
            if not ok:
                trace.stop_reason = STOP_BIC
                break
            model, current_bic = new_model, b
            selected.append(pick)
            remaining.remove(pick)
    finally:
        if pool:
            pool.shutdown()
    return selected, model, trace


def likelihood_order(schema: Schema, candidates: Sequence[PatternConstraint], marginals=None,
                     n_rows: int = 1, max_steps: int | None = None, *, tol: float = DEFAULT_TOL,
                     max_sweeps: int = DEFAULT_MAX_SWEEPS) -> tuple[list[int], list[float]]:
    """Greedy order that adds, at each step, the candidate with the largest refit likelihood.

    Returns the chosen indices and the log-likelihood after each addition;
    the likelihood of the marginals-only start is prepended.
    """
    candidates = validate_constraints(schema, list(candidates))
    model, _ = fit(schema, [], marginals, tol=tol, max_sweeps=max_sweeps)
    lls = [log_likelihood(model, n_rows)]
    order: list[int] = []
    remaining = list(range(len(candidates)))
    steps = len(candidates) if max_steps is None else min(max_steps, len(candidates))
    for _ in range(steps):
        best = (-math.inf, -1, None)
        for i in remaining:
            m, _ = fit(schema, [candidates[j] for j in order + [i]], marginals,
                       tol=tol, max_sweeps=max_sweeps, init=model)
            ll = log_likelihood(m, n_rows)
            if ll > best[0]:
                best = (ll, i, m)
        ll, i, model = best
        order.append(i)
        remaining.remove(i)
        lls.append(ll)
    return order, lls
