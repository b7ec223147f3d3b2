"""Categorical datasets with missing values.

Cells are stored as small integer state indices; missing cells carry the
sentinel -1 and a parallel boolean mask. Datasets are immutable: every
operation returns a new instance.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from .errors import (
    AllMissingColumn,
    BadFraction,
    DriverMissing,
    EmptyDataset,
    HeaderMismatch,
    IncompleteParameters,
    MalformedCsv,
    NameCollision,
    UnknownState,
    UnknownVariable,
)
from .graphs import Dag

MISSING = -1
MISSING_TOKENS = ("", "NA")


@dataclass(frozen=True)
class VariableSchema:
    name: str
    states: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        if len(self.states) < 2:
            raise UnknownState(f"variable {self.name!r} needs >= 2 states")
        if len(set(self.states)) != len(self.states):
            raise UnknownState(f"variable {self.name!r} has duplicate state labels")

    @property
    def cardinality(self) -> int:
        return len(self.states)


class CategoricalDataset:
    __slots__ = ("schema", "rows", "mask", "_index")

    def __init__(self, schema: Sequence[VariableSchema], rows, mask=None):
        self.schema = tuple(schema)
        rows = np.asarray(rows, dtype=np.int16)
        if rows.ndim != 2 or rows.shape[1] != len(self.schema):
            raise MalformedCsv("row matrix shape does not match schema")
        if mask is None:
            mask = rows == MISSING
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != rows.shape:
            raise MalformedCsv("mask shape does not match rows")
        rows = rows.copy()
        rows[mask] = MISSING
        for j, var in enumerate(self.schema):
            col = rows[~mask[:, j], j]
            if col.size and (col.min() < 0 or col.max() >= var.cardinality):
                raise UnknownState(f"state index out of range in column {var.name!r}")
        rows.setflags(write=False)
        mask.setflags(write=False)
        self.rows = rows
        self.mask = mask
        self._index = {v.name: i for i, v in enumerate(self.schema)}
        if len(self._index) != len(self.schema):
            raise NameCollision("duplicate variable names in schema")

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def p(self) -> int:
        return len(self.schema)

    @property
    def names(self) -> Tuple[str, ...]:
        return tuple(v.name for v in self.schema)

    def index(self, name: str) -> int:
        if name not in self._index:
            raise UnknownVariable(f"unknown variable {name!r}")
        return self._index[name]

    def variable(self, name: str) -> VariableSchema:
        return self.schema[self.index(name)]

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.index(name)]

    def take(self, idx) -> "CategoricalDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return CategoricalDataset(self.schema, self.rows[idx], self.mask[idx])

    def is_complete(self) -> bool:
        return not self.mask.any()

    def __eq__(self, other):
        if not isinstance(other, CategoricalDataset):
            return NotImplemented
        return (self.schema == other.schema
                and np.array_equal(self.rows, other.rows)
                and np.array_equal(self.mask, other.mask))

    def __repr__(self):
        return f"CategoricalDataset(n={self.n}, p={self.p})"


def read_csv(path, schema: Optional[Sequence[VariableSchema]] = None) -> CategoricalDataset:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MalformedCsv(f"{path}: empty file")
        records = list(reader)
    return _parse_rows(header, records, schema, str(path))


def _parse_rows(header, records, schema, where):
    if schema is not None:
        names = [v.name for v in schema]
        if list(header) != names:
            raise HeaderMismatch(f"{where}: header {header!r} != schema {names!r}")
        lookup = [{s: i for i, s in enumerate(v.states)} for v in schema]
    else:
        lookup = [{} for _ in header]
    p = len(header)
    rows = np.full((len(records), p), MISSING, dtype=np.int16)
    for r, rec in enumerate(records):
        if len(rec) != p:
            raise MalformedCsv(f"{where}: row {r + 1} has {len(rec)} fields, expected {p}")
        for c, tok in enumerate(rec):
            if tok in MISSING_TOKENS:
                continue
            if tok not in lookup[c]:
                if schema is not None:
                    raise UnknownState(
                        f"{where}: row {r + 1}, column {header[c]!r}: state {tok!r}")
                lookup[c][tok] = len(lookup[c])
            rows[r, c] = lookup[c][tok]
    if schema is None:
        schema = []
        for c, name in enumerate(header):
            states = [s for s, _ in sorted(lookup[c].items(), key=lambda kv: kv[1])]
            if len(states) < 2:
                # pad degenerate columns so the schema invariant holds
                states = states + [f"__pad{k}" for k in range(2 - len(states))]
            schema.append(VariableSchema(name, tuple(states)))
    return CategoricalDataset(schema, rows)


def write_csv(d: CategoricalDataset, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(d.names)
        for r in range(d.n):
            rec = []
            for c, var in enumerate(d.schema):
                if d.mask[r, c]:
                    rec.append("NA")
                else:
                    rec.append(var.states[d.rows[r, c]])
            writer.writerow(rec)


def indicators(d: CategoricalDataset) -> CategoricalDataset:
    """Append one binary indicator R_X (state 1 = missing) per partially
    observed column; fully observed columns get none."""
    partial = [j for j in range(d.p) if d.mask[:, j].any()]
    if not partial:
        return d
    schema = list(d.schema)
    cols = [d.rows]
    for j in partial:
        name = f"R_{d.schema[j].name}"
        if name in d._index:
            raise NameCollision(f"variable {name!r} already exists")
        schema.append(VariableSchema(name, ("0", "1")))
        cols.append(d.mask[:, j].astype(np.int16).reshape(-1, 1))
    rows = np.hstack(cols)
    mask = np.hstack([d.mask, np.zeros((d.n, len(partial)), dtype=bool)])
    return CategoricalDataset(schema, rows, mask)


def forward_sample(g: Dag, params, n: int, seed: int) -> CategoricalDataset:
    """Ancestral sampling: n i.i.d. rows, deterministic given seed."""
    for v in g.vertices:
        if v not in params.variables:
            raise IncompleteParameters(f"no CPT for {v!r}")
    schema = [VariableSchema(v, params.states[v]) for v in g.vertices]
    col = {v: i for i, v in enumerate(g.vertices)}
    cards = {v: len(params.states[v]) for v in g.vertices}
    rng = np.random.default_rng(seed)
    rows = np.zeros((n, len(schema)), dtype=np.int16)
    for v in g.topological_order():
        parents, table = params.variables[v]
        if set(parents) != set(g.parents(v)):
            raise IncompleteParameters(f"CPT parents for {v!r} do not match the graph")
        code = np.zeros(n, dtype=np.int64)
        for pvar in parents:
            code = code * cards[pvar] + rows[:, col[pvar]]
        probs = table[code]
        u = rng.random(n)
        cum = np.cumsum(probs, axis=1)
        val = np.sum(cum < u[:, None], axis=1)
        rows[:, col[v]] = np.minimum(val, cards[v] - 1)
    return CategoricalDataset(schema, rows)


def logit(p: float) -> float:
    """Inverse of the logistic link; returns +/-inf at the boundary."""
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    return math.log(p / (1.0 - p))


@dataclass(frozen=True)
class AmputationEntry:
    target: str
    mechanism: str  # "MCAR" | "MAR" | "MNAR"
    drivers: Tuple[str, ...] = ()
    intercept: float = -math.inf
    weights: Mapping[str, Mapping[str, float]] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "drivers", tuple(self.drivers))
        if self.mechanism not in ("MCAR", "MAR", "MNAR"):
            raise UnknownVariable(f"unknown mechanism {self.mechanism!r}")
        if self.mechanism == "MCAR" and self.drivers:
            raise DriverMissing("MCAR entries take no drivers")


@dataclass(frozen=True)
class AmputationSpec:
    entries: Tuple[AmputationEntry, ...]
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    @staticmethod
    def from_json(text: str) -> "AmputationSpec":
        doc = json.loads(text)
        entries = [
            AmputationEntry(
                target=t["target"],
                mechanism=t["mechanism"],
                drivers=tuple(t.get("drivers", ())),
                intercept=float(t.get("intercept", -math.inf)),
                weights={k: {s: float(w) for s, w in v.items()}
                         for k, v in t.get("weights", {}).items()},
            )
            for t in doc["targets"]
        ]
        return AmputationSpec(tuple(entries), int(doc["seed"]))

    def to_json(self) -> str:
        doc = {
            "targets": [
                {
                    "target": e.target,
                    "mechanism": e.mechanism,
                    "drivers": list(e.drivers),
                    "intercept": e.intercept,
                    "weights": {k: dict(v) for k, v in e.weights.items()},
                }
                for e in self.entries
            ],
            "seed": self.seed,
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def ampute(d: CategoricalDataset, spec: AmputationSpec) -> CategoricalDataset:
    """Mask cells per row with the entry's logistic probability.

    Driver states are read from the pre-amputation data, so MNAR entries may
    reference the target itself (self-masking) or other amputation targets.
    """
    targets = []
    for e in spec.entries:
        j = d.index(e.target)
        if d.mask[:, j].any():
            raise DriverMissing(f"target {e.target!r} must be complete before amputation")
        targets.append(j)
        for w in e.drivers:
            jd = d.index(w)
            if d.mask[:, jd].any():
                raise DriverMissing(f"driver {w!r} has missing cells in the input")
    mask = d.mask.copy()
    # one spawned child stream per entry: spawned streams are guaranteed
    # distinct from the root stream of the same seed, so amputation noise
    # never collides with data sampled from default_rng(seed)
    streams = np.random.SeedSequence(spec.seed).spawn(len(spec.entries))
    for i, e in enumerate(spec.entries):
        eta = np.full(d.n, e.intercept, dtype=float)
        for w in e.drivers:
            wmap = e.weights.get(w, {})
            states = d.variable(w).states
            per_state = np.array([float(wmap.get(s, 0.0)) for s in states])
            eta = eta + per_state[d.column(w)]
        prob = expit(eta)
        u = np.random.default_rng(streams[i]).random(d.n)
        mask[:, targets[i]] |= u < prob
    out = CategoricalDataset(d.schema, d.rows, mask)
    # MAR drivers must remain fully observed after all entries are applied
    for e in spec.entries:
        if e.mechanism == "MAR":
            for w in e.drivers:
                if out.mask[:, out.index(w)].any():
                    raise DriverMissing(
                        f"MAR driver {w!r} is not fully observed after amputation")
    return out


def impute_mode(d: CategoricalDataset) -> CategoricalDataset:
    """Single imputation: column mode, ties to the lowest state index."""
    rows = d.rows.copy()
    for j, var in enumerate(d.schema):
        miss = d.mask[:, j]
        if not miss.any():
            continue
        obs = d.rows[~miss, j]
        if obs.size == 0:
            raise AllMissingColumn(f"column {var.name!r} has no observed cells")
        counts = np.bincount(obs, minlength=var.cardinality)
        rows[miss, j] = int(np.argmax(counts))
    return CategoricalDataset(d.schema, rows, np.zeros_like(d.mask))


def bootstrap(d: CategoricalDataset, seed: int) -> CategoricalDataset:
    if d.n < 1:
        raise EmptyDataset("cannot resample an empty dataset")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, d.n, size=d.n)
    return d.take(idx)


def split(d: CategoricalDataset, held_out_fraction: float, seed: int):
    """(train, test) with floor(n * fraction) rows held out."""
    if not 0.0 < held_out_fraction < 1.0:
        raise BadFraction(f"fraction must lie in (0, 1), got {held_out_fraction}")
    if d.n < 2:
        raise EmptyDataset("need at least two rows to split")
    k = int(math.floor(d.n * held_out_fraction))
    rng = np.random.default_rng(seed)
    perm = rng.permutation(d.n)
    test_idx = np.sort(perm[:k])
    train_idx = np.sort(perm[k:])
    return d.take(train_idx), d.take(test_idx)
