"""Parameter estimation and scoring for categorical Bayesian networks.

Covers maximum-likelihood CPTs, exact-marginalization log-likelihood over
incomplete rows, EM, inverse-probability weights for missingness correction,
and decomposable BIC scoring with a family-score cache. All log quantities
are in nats.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from .data import CategoricalDataset, VariableSchema
from .errors import (
    AllZero,
    EmptyList,
    MissingCellsPresent,
    SchemaMismatch,
    TooManyMissingInRow,
    UnknownVariable,
)
from .graphs import Dag

ENUMERATION_CAP = 2 ** 20


class ParameterSet:
    """One CPT per variable, indexed by the lexicographic parent-state
    product (first parent most significant)."""

    __slots__ = ("variables", "states", "pseudocount")

    def __init__(self, variables: Mapping[str, Tuple[Tuple[str, ...], np.ndarray]],
                 states: Mapping[str, Tuple[str, ...]], pseudocount: float = 0.0):
        self.variables = {v: (tuple(ps), np.asarray(t, dtype=float))
                          for v, (ps, t) in variables.items()}
        self.states = {v: tuple(s) for v, s in states.items()}
        self.pseudocount = float(pseudocount)
        for v, (parents, table) in self.variables.items():
            if v not in self.states:
                raise SchemaMismatch(f"no state labels for {v!r}")
            card = len(self.states[v])
            ncfg = 1
            for p in parents:
                if p not in self.states:
                    raise SchemaMismatch(f"no state labels for parent {p!r} of {v!r}")
                ncfg *= len(self.states[p])
            if table.shape != (ncfg, card):
                raise SchemaMismatch(
                    f"CPT for {v!r} has shape {table.shape}, expected {(ncfg, card)}")
            if not np.allclose(table.sum(axis=1), 1.0, atol=1e-9):
                raise SchemaMismatch(f"CPT rows for {v!r} do not sum to 1")

    def table(self, v: str) -> np.ndarray:
        return self.variables[v][1]

    def parents(self, v: str) -> Tuple[str, ...]:
        return self.variables[v][0]

    def to_json(self) -> str:
        doc = {"variables": {
            v: {"parents": list(ps), "table": t.tolist(), "states": list(self.states[v])}
            for v, (ps, t) in self.variables.items()
        }}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @staticmethod
    def from_json(text: str) -> "ParameterSet":
        doc = json.loads(text)
        variables, states = {}, {}
        for v, spec in doc["variables"].items():
            table = np.asarray(spec["table"], dtype=float)
            variables[v] = (tuple(spec["parents"]), table)
            states[v] = tuple(spec.get("states", [str(i) for i in range(table.shape[1])]))
        return ParameterSet(variables, states)


@dataclass(frozen=True)
class ScoreValue:
    log_likelihood: float
    penalty: float = 0.0
    per_sample: float = 0.0

    @property
    def bic(self) -> float:
        return self.log_likelihood - self.penalty


@dataclass
class EmTrace:
    log_likelihoods: List[float]
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.log_likelihoods)


def _check_coverage(g: Dag, d: CategoricalDataset) -> None:
    for v in g.vertices:
        if v not in d.names:
            raise SchemaMismatch(f"dataset has no column for vertex {v!r}")


def _family_columns(g: Dag, d: CategoricalDataset, v: str) -> Tuple[Tuple[str, ...], List[int]]:
    parents = tuple(sorted(g.parents(v), key=d.index))
    return parents, [d.index(p) for p in parents]


def fit_mle(g: Dag, d: CategoricalDataset, pseudocount: float = 0.0) -> ParameterSet:
    """Per-family counting estimator; unseen parent configurations with zero
    pseudocount get a uniform row."""
    if d.mask.any():
        raise MissingCellsPresent("fit_mle requires complete data")
    _check_coverage(g, d)
    return _weighted_fit(g, d.schema, {n: d.index(n) for n in d.names},
                         d.rows, None, pseudocount)


def _weighted_fit(g: Dag, schema, col_of, rows, weights, pseudocount: float) -> ParameterSet:
    cards = {v.name: v.cardinality for v in schema}
    variables, states = {}, {}
    for v in g.vertices:
        parents = tuple(sorted(g.parents(v), key=col_of.__getitem__))
        card = cards[v]
        ncfg = 1
        code = np.zeros(rows.shape[0], dtype=np.int64)
        for p in parents:
            code = code * cards[p] + rows[:, col_of[p]]
            ncfg *= cards[p]
        code = code * card + rows[:, col_of[v]]
        counts = np.bincount(code, weights=weights, minlength=ncfg * card).astype(float)
        counts = counts.reshape(ncfg, card)
        table = _normalize_counts(counts, pseudocount)
        variables[v] = (parents, table)
        states[v] = next(s.states for s in schema if s.name == v)
    return ParameterSet(variables, states, pseudocount)


def _normalize_counts(counts: np.ndarray, pseudocount: float) -> np.ndarray:
    card = counts.shape[1]
    rowsum = counts.sum(axis=1, keepdims=True)
    if pseudocount > 0:
        return (counts + pseudocount) / (rowsum + pseudocount * card)
    table = np.full_like(counts, 1.0 / card)
    seen = rowsum[:, 0] > 0
    table[seen] = counts[seen] / rowsum[seen]
    return table


def _check_params(g: Dag, params: ParameterSet, d: CategoricalDataset) -> None:
    _check_coverage(g, d)
    for v in g.vertices:
        if v not in params.variables:
            raise SchemaMismatch(f"no CPT for vertex {v!r}")
        parents, table = params.variables[v]
        if set(parents) != set(g.parents(v)):
            raise SchemaMismatch(f"CPT parents for {v!r} do not match the graph")
        if table.shape[1] != d.variable(v).cardinality:
            raise SchemaMismatch(f"CPT cardinality mismatch for {v!r}")


def _log_tables(g: Dag, params: ParameterSet) -> Dict[str, np.ndarray]:
    out = {}
    with np.errstate(divide="ignore"):
        for v in g.vertices:
            out[v] = np.log(params.table(v))
    return out


def _block_loglik(g: Dag, params: ParameterSet, log_tabs, col_of, cards,
                  block: np.ndarray) -> np.ndarray:
    logp = np.zeros(block.shape[0])
    for v in g.vertices:
        parents = params.parents(v)
        code = np.zeros(block.shape[0], dtype=np.int64)
        for p in parents:
            code = code * cards[p] + block[:, col_of[p]]
        logp += log_tabs[v][code, block[:, col_of[v]]]
    return logp


def expand_completions(g: Dag, params: ParameterSet, d: CategoricalDataset,
                       cap: int = ENUMERATION_CAP):
    """Exact enumeration of missing-cell completions (graph columns only).

    Returns (rows, weights, origin, row_ll): completed row block, posterior
    weight of each completion (summing to 1 per original row), the original
    row index of each block row, and the observed-data log-likelihood per
    original row.
    """
    _check_params(g, params, d)
    col_of = {v: i for i, v in enumerate(g.vertices)}
    cols = [d.index(v) for v in g.vertices]
    sub = np.ascontiguousarray(d.rows[:, cols])
    smask = np.ascontiguousarray(d.mask[:, cols])
    cards = {v: d.variable(v).cardinality for v in g.vertices}
    log_tabs = _log_tables(g, params)

    patterns, inverse = np.unique(smask, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    row_ll = np.zeros(d.n)
    blocks, wblocks, oblocks = [], [], []
    for pi in range(patterns.shape[0]):
        ridx = np.nonzero(inverse == pi)[0]
        miss = np.nonzero(patterns[pi])[0]
        m = ridx.size
        if miss.size == 0:
            block = sub[ridx]
            ll = _block_loglik(g, params, log_tabs, col_of, cards, block)
            row_ll[ridx] = ll
            blocks.append(block)
            wblocks.append(np.ones(m))
            oblocks.append(ridx)
            continue
        k = 1
        for j in miss:
            k *= cards[g.vertices[j]]
            if k > cap:
                raise TooManyMissingInRow(
                    f"row marginalization needs > {cap} completions")
        completions = np.array(
            list(itertools.product(*[range(cards[g.vertices[j]]) for j in miss])),
            dtype=np.int16)
        block = np.repeat(sub[ridx], k, axis=0)
        block[:, miss] = np.tile(completions, (m, 1))
        logp = _block_loglik(g, params, log_tabs, col_of, cards, block)
        logp = logp.reshape(m, k)
        ll = logsumexp(logp, axis=1)
        row_ll[ridx] = ll
        w = np.exp(logp - ll[:, None])
        blocks.append(block)
        wblocks.append(w.ravel())
        oblocks.append(np.repeat(ridx, k))
    rows = np.vstack(blocks) if blocks else np.zeros((0, len(cols)), dtype=np.int16)
    weights = np.concatenate(wblocks) if wblocks else np.zeros(0)
    origin = np.concatenate(oblocks) if oblocks else np.zeros(0, dtype=np.intp)
    return rows, weights, origin, row_ll


def log_likelihood(params: ParameterSet, g: Dag, d: CategoricalDataset) -> ScoreValue:
    """Sum of per-row log-likelihoods; rows with missing cells contribute the
    exact marginal over all completions."""
    if d.is_complete():
        _check_params(g, params, d)
        col_of = {v: i for i, v in enumerate(g.vertices)}
        cols = [d.index(v) for v in g.vertices]
        block = np.ascontiguousarray(d.rows[:, cols])
        cards = {v: d.variable(v).cardinality for v in g.vertices}
        ll = float(np.sum(_block_loglik(g, params, _log_tables(g, params),
                                        col_of, cards, block)))
    else:
        _, _, _, row_ll = expand_completions(g, params, d)
        ll = float(np.sum(row_ll))
    per = ll / d.n if d.n > 0 else 0.0
    return ScoreValue(log_likelihood=ll, penalty=0.0, per_sample=per)


def rescale_ll(values: Sequence, n: int) -> List[float]:
    """Divide by sample size, then by the maximum absolute per-sample value."""
    if not values:
        raise EmptyList("no score values to rescale")
    if n <= 0:
        raise EmptyList("sample size must be positive")
    raw = [v.log_likelihood if isinstance(v, ScoreValue) else float(v) for v in values]
    per = [v / n for v in raw]
    m = max(abs(v) for v in per)
    if m == 0.0:
        raise AllZero("all per-sample values are zero")
    return [v / m for v in per]


def em_fit(g: Dag, d: CategoricalDataset, pseudocount: float = 0.0,
           max_iter: int = 100, tol: float = 1e-6) -> Tuple[ParameterSet, EmTrace]:
    """EM with exact E-step enumeration; trace holds the observed-data LL
    evaluated at the start of each iteration."""
    _check_coverage(g, d)
    col_of = {v: i for i, v in enumerate(g.vertices)}
    schema = tuple(d.variable(v) for v in g.vertices)
    # available-case init, smoothed so every completion has positive mass
    complete_rows = ~d.mask[:, [d.index(v) for v in g.vertices]].any(axis=1)
    sub = d.rows[:, [d.index(v) for v in g.vertices]][complete_rows]
    params = _weighted_fit(g, schema, col_of, sub, None, max(pseudocount, 1.0))
    trace: List[float] = []
    converged = False
    prev = -math.inf
    for _ in range(max_iter):
        rows, weights, _, row_ll = expand_completions(g, params, d)
        ll = float(np.sum(row_ll))
        trace.append(ll)
        if trace and len(trace) > 1 and ll - prev < tol:
            converged = True
            break
        prev = ll
        params = _weighted_fit(g, schema, col_of, rows, weights, pseudocount)
    return params, EmTrace(trace, converged)


def ipw_weights(d: CategoricalDataset, target: str,
                detected_parents: Iterable[str]) -> np.ndarray:
    """Per-row inverse-probability weights for the target's observation.

    Stratum observation rates use pseudocount 1; rows with the target
    missing get weight 0; empty strata default to weight 1.
    """
    jt = d.index(target)
    parents = sorted(set(detected_parents), key=d.index)
    pcols = [d.index(p) for p in parents]
    observed = ~d.mask[:, jt]
    for p, jp in zip(parents, pcols):
        if d.mask[observed, jp].any():
            raise MissingCellsPresent(
                f"detected parent {p!r} has missing cells where {target!r} is observed")
    cards = [d.variable(p).cardinality for p in parents]
    ncfg = int(np.prod(cards)) if cards else 1
    usable = ~d.mask[:, pcols].any(axis=1) if pcols else np.ones(d.n, dtype=bool)
    code = np.zeros(d.n, dtype=np.int64)
    for jp, card in zip(pcols, cards):
        code = code * card + np.where(d.mask[:, jp], 0, d.rows[:, jp])
    total = np.bincount(code[usable], minlength=ncfg).astype(float)
    obs = np.bincount(code[usable & observed], minlength=ncfg).astype(float)
    phat = (obs + 1.0) / (total + 2.0)
    # strata with no usable rows default to rate 1 (weight 1); they cannot
    # occur among the data's own rows but keep the estimator total
    phat[total == 0] = 1.0
    weights = np.zeros(d.n)
    sel = observed & usable
    weights[sel] = 1.0 / phat[code[sel]]
    return weights


@dataclass
class WeightedCounts:
    """Per-family weighted sufficient statistics for one graph."""
    parents: Dict[str, Tuple[str, ...]]
    tables: Dict[str, np.ndarray]
    total_weight: float


def weighted_counts(g: Dag, d: CategoricalDataset,
                    row_weights: Optional[np.ndarray] = None) -> WeightedCounts:
    if d.mask.any():
        raise MissingCellsPresent("weighted_counts requires complete rows")
    _check_coverage(g, d)
    cards = {v: d.variable(v).cardinality for v in g.vertices}
    parents_map, tables = {}, {}
    for v in g.vertices:
        parents, pcols = _family_columns(g, d, v)
        ncfg = 1
        code = np.zeros(d.n, dtype=np.int64)
        for p, jp in zip(parents, pcols):
            code = code * cards[p] + d.rows[:, jp]
            ncfg *= cards[p]
        code = code * cards[v] + d.rows[:, d.index(v)]
        counts = np.bincount(code, weights=row_weights,
                             minlength=ncfg * cards[v]).astype(float)
        parents_map[v] = parents
        tables[v] = counts.reshape(ncfg, cards[v])
    total = float(d.n) if row_weights is None else float(np.sum(row_weights))
    return WeightedCounts(parents_map, tables, total)


def _counts_ll_term(counts: np.ndarray, pseudocount: float) -> float:
    rowsum = counts.sum(axis=1, keepdims=True)
    if pseudocount > 0:
        probs = (counts + pseudocount) / (rowsum + pseudocount * counts.shape[1])
        nz = counts > 0
        return float(np.sum(counts[nz] * np.log(probs[nz])))
    nz = counts > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = counts / rowsum
    return float(np.sum(counts[nz] * np.log(ratio[nz])))


def bic(g: Dag, counts: WeightedCounts, n_effective: float,
        pseudocount: float = 0.0) -> ScoreValue:
    """Decomposable BIC from weighted family counts."""
    for v in g.vertices:
        if v not in counts.tables:
            raise SchemaMismatch(f"no counts for vertex {v!r}")
        if set(counts.parents[v]) != set(g.parents(v)):
            raise SchemaMismatch(f"counts for {v!r} use a different parent set")
    ll = 0.0
    nparams = 0
    for v in g.vertices:
        tab = counts.tables[v]
        ll += _counts_ll_term(tab, pseudocount)
        nparams += (tab.shape[1] - 1) * tab.shape[0]
    penalty = 0.5 * math.log(n_effective) * nparams
    per = ll / n_effective if n_effective > 0 else 0.0
    return ScoreValue(log_likelihood=ll, penalty=penalty, per_sample=per)


class BicScorer:
    """Decomposable BIC with a (child, parent-set) family-score cache.

    Operates on complete rows, optionally weighted (expected counts from an
    EM completion, or bootstrap weights). Safe for read-mostly sharing:
    cache writes are idempotent.
    """

    def __init__(self, schema: Sequence[VariableSchema], rows: np.ndarray,
                 weights: Optional[np.ndarray] = None, pseudocount: float = 0.0,
                 n_effective: Optional[float] = None):
        self.schema = tuple(schema)
        self.rows = np.asarray(rows, dtype=np.int16)
        self.weights = None if weights is None else np.asarray(weights, dtype=float)
        self.pseudocount = float(pseudocount)
        if n_effective is None:
            n_effective = (self.rows.shape[0] if self.weights is None
                           else float(np.sum(self.weights)))
        self.n_effective = float(n_effective)
        self._col = {v.name: i for i, v in enumerate(self.schema)}
        self._card = {v.name: v.cardinality for v in self.schema}
        self._cache: Dict[Tuple[str, Tuple[str, ...]], float] = {}

    @property
    def variables(self) -> Tuple[str, ...]:
        return tuple(v.name for v in self.schema)

    def _canon(self, parents: Iterable[str]) -> Tuple[str, ...]:
        return tuple(sorted(parents, key=self._col.__getitem__))

    def family_score(self, child: str, parents: Iterable[str]) -> float:
        key = (child, self._canon(parents))
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        val = self._compute(child, key[1])
        self._cache[key] = val
        return val

    def _family_counts(self, child: str, parents: Tuple[str, ...]):
        card = self._card[child]
        ncfg = 1
        code = np.zeros(self.rows.shape[0], dtype=np.int64)
        for p in parents:
            code = code * self._card[p] + self.rows[:, self._col[p]]
            ncfg *= self._card[p]
        code = code * card + self.rows[:, self._col[child]]
        counts = np.bincount(code, weights=self.weights,
                             minlength=ncfg * card).astype(float)
        return counts.reshape(ncfg, card)

    def _compute(self, child: str, parents: Tuple[str, ...]) -> float:
        counts = self._family_counts(child, parents)
        ll = _counts_ll_term(counts, self.pseudocount)
        penalty = 0.5 * math.log(self.n_effective) * (counts.shape[1] - 1) * counts.shape[0]
        return ll - penalty

    def score(self, g: Dag) -> float:
        return sum(self.family_score(v, g.parents(v)) for v in g.vertices)

    def move_delta(self, child: str, old_parents: Iterable[str],
                   new_parents: Iterable[str]) -> float:
        return (self.family_score(child, new_parents)
                - self.family_score(child, old_parents))


class IpwBicScorer(BicScorer):
    """BIC over family-complete rows, reweighted by per-variable IPW weights.

    A family is counted on the rows where all its members are observed; the
    row weights (product of the involved partially observed variables' IPW
    weights) are normalised to mean one over those rows, so the weighted
    counts never claim more evidence than the rows actually seen. Move
    deltas evaluate the old and the new family on the same row subset (that
    of their union), otherwise the subpopulation shift between subsets
    would masquerade as signal.
    """

    def __init__(self, d: CategoricalDataset, var_weights: Mapping[str, np.ndarray],
                 pseudocount: float = 0.0):
        super().__init__(d.schema, d.rows, weights=None, pseudocount=pseudocount,
                         n_effective=float(d.n))
        self.mask = d.mask
        self.var_weights = {k: np.asarray(v, dtype=float) for k, v in var_weights.items()}
        self.partial = frozenset(
            v.name for j, v in enumerate(self.schema) if d.mask[:, j].any())
        self._on_cache: Dict[Tuple[str, Tuple[str, ...], Tuple[str, ...]], float] = {}

    def _observed_part(self, names: Iterable[str]) -> Tuple[str, ...]:
        return tuple(sorted((v for v in names if v in self.partial),
                            key=self._col.__getitem__))

    def _counts_on(self, child: str, parents: Tuple[str, ...],
                   obs: Tuple[str, ...]):
        ok = (~self.mask[:, [self._col[v] for v in obs]].any(axis=1)
              if obs else np.ones(self.rows.shape[0], dtype=bool))
        w = np.ones(int(ok.sum()))
        for v in obs:
            vw = self.var_weights.get(v)
            if vw is not None:
                w = w * vw[ok]
        # Normalise to mean weight one over the usable rows: the weighted
        # counts then never claim more evidence than the rows actually seen,
        # which keeps the (fixed) BIC penalty honest across row subsets.
        total = w.sum()
        if total > 0:
            w = w * (ok.sum() / total)
        rows = self.rows[ok]
        card = self._card[child]
        ncfg = 1
        code = np.zeros(rows.shape[0], dtype=np.int64)
        for p in parents:
            code = code * self._card[p] + rows[:, self._col[p]]
            ncfg *= self._card[p]
        code = code * card + rows[:, self._col[child]]
        counts = np.bincount(code, weights=w, minlength=ncfg * card).astype(float)
        return counts.reshape(ncfg, card)

    def _score_on(self, child: str, parents: Tuple[str, ...],
                  obs: Tuple[str, ...]) -> float:
        key = (child, parents, obs)
        hit = self._on_cache.get(key)
        if hit is not None:
            return hit
        counts = self._counts_on(child, parents, obs)
        ll = _counts_ll_term(counts, self.pseudocount)
        penalty = 0.5 * math.log(self.n_effective) * (counts.shape[1] - 1) * counts.shape[0]
        val = ll - penalty
        self._on_cache[key] = val
        return val

    def _family_counts(self, child: str, parents: Tuple[str, ...]):
        return self._counts_on(child, parents,
                               self._observed_part((child,) + parents))

    def move_delta(self, child: str, old_parents: Iterable[str],
                   new_parents: Iterable[str]) -> float:
        old = self._canon(old_parents)
        new = self._canon(new_parents)
        obs = self._observed_part({child} | set(old) | set(new))
        return self._score_on(child, new, obs) - self._score_on(child, old, obs)
