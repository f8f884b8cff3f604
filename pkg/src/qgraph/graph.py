"""Finite compact metric graphs and the ``.qg`` text format.

A graph is a list of vertex names plus oriented edges. Each edge is
identified with ``[0, length]``; its tail sits at 0 and its head at
``length``. Loops (tail == head) and parallel edges are allowed.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple

import numpy as np

from qgraph.conditions import (
    ConditionError,
    GeneralCondition,
    Kind,
    PermInvariantCondition,
)

TAIL = "tail"
HEAD = "head"


class GraphError(ValueError):
    """Structural problem with a metric graph (unknown vertex, bad length, ...)."""


class GraphFormatError(GraphError):
    """Syntax or validation error while reading a graph file."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


def natural_key(name: str) -> tuple:
    """Sort key that orders ``e2`` before ``e10``."""
    return tuple(int(t) if t.isdigit() else t for t in re.split(r"(\d+)", name))


@dataclass(frozen=True)
class EdgePotential:
    """Piecewise-constant potential on a uniform partition of the edge.

    ``samples[i]`` is the value on the i-th of ``len(samples)`` equal pieces.
    A single sample is a constant potential.
    """

    samples: tuple[float, ...] = (0.0,)

    def __post_init__(self):
        samples = tuple(float(s) for s in self.samples)
        if not samples:
            raise GraphError("edge potential needs at least one sample")
        if not all(math.isfinite(s) for s in samples):
            raise GraphError("edge potential samples must be finite")
        object.__setattr__(self, "samples", samples)

    @classmethod
    def constant(cls, value: float) -> EdgePotential:
        return cls((float(value),))

    @property
    def is_zero(self) -> bool:
        return all(s == 0.0 for s in self.samples)

    def integral(self, length: float) -> float:
        return float(sum(self.samples)) * length / len(self.samples)

    def cell_values(self, n_cells: int) -> np.ndarray:
        """Potential value on each of ``n_cells`` uniform cells.

        ``n_cells`` must be a multiple of the sample count.
        """
        m = len(self.samples)
        if n_cells % m:
            raise ValueError(f"{n_cells} cells do not refine {m} potential samples")
        return np.repeat(np.asarray(self.samples, dtype=float), n_cells // m)


@dataclass(frozen=True)
class Edge:
    id: str
    tail: str
    head: str
    length: float
    potential: EdgePotential = field(default_factory=EdgePotential)

    @property
    def is_loop(self) -> bool:
        return self.tail == self.head


class Incidence(NamedTuple):
    edge: str
    end: str  # TAIL or HEAD


class MetricGraph:
    """Immutable finite metric graph.

    Vertex and edge order is the construction order; everything derived
    (boundary maps, DOF numbering) is deterministic in it.
    """

    def __init__(self, vertices: Iterable[str], edges: Iterable[Edge]):
        self._vertices = tuple(vertices)
        self._edges = tuple(edges)
        if len(set(self._vertices)) != len(self._vertices):
            raise GraphError("duplicate vertex id")
        ids = [e.id for e in self._edges]
        if len(set(ids)) != len(ids):
            raise GraphError("duplicate edge id")
        known = set(self._vertices)
        for e in self._edges:
            for v in (e.tail, e.head):
                if v not in known:
                    raise GraphError(f"unknown vertex {v!r} on edge {e.id!r}")
            if not (math.isfinite(e.length) and e.length > 0):
                raise GraphError(f"edge {e.id!r} must have positive finite length, got {e.length}")
        self._by_id = {e.id: e for e in self._edges}

    @property
    def vertices(self) -> tuple[str, ...]:
        return self._vertices

    @property
    def edges(self) -> tuple[Edge, ...]:
        return self._edges

    def edge(self, edge_id: str) -> Edge:
        return self._by_id[edge_id]

    def has_vertex(self, v: str) -> bool:
        return v in set(self._vertices)

    def _check_vertex(self, v: str) -> None:
        if v not in self._vertices:
            raise GraphError(f"unknown vertex {v!r}")

    def boundary_map(self, v: str) -> tuple[Incidence, ...]:
        """Incidences at ``v``: tail-ends first, then head-ends, each in edge-id order.

        This fixes the component order of the boundary value vector F(v)
        and of the outward derivative vector F'(v).
        """
        self._check_vertex(v)
        by_id = sorted(self._edges, key=lambda e: natural_key(e.id))
        tails = [Incidence(e.id, TAIL) for e in by_id if e.tail == v]
        heads = [Incidence(e.id, HEAD) for e in by_id if e.head == v]
        return tuple(tails + heads)

    def degree(self, v: str) -> int:
        self._check_vertex(v)
        return sum((e.tail == v) + (e.head == v) for e in self._edges)

    @property
    def total_length(self) -> float:
        return float(sum(e.length for e in self._edges))

    def connected_components(self) -> list[set[str]]:
        """Components of the metric graph (isolated vertices carry no functions and are skipped)."""
        parent = {v: v for v in self._vertices}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for e in self._edges:
            a, b = find(e.tail), find(e.head)
            if a != b:
                parent[a] = b
        groups: dict[str, set[str]] = {}
        for v in self._vertices:
            if self.degree(v) > 0:
                groups.setdefault(find(v), set()).add(v)
        return list(groups.values())

    def with_edges(self, vertices: Iterable[str], edges: Iterable[Edge]) -> MetricGraph:
        return MetricGraph(vertices, edges)

    def __eq__(self, other):
        if not isinstance(other, MetricGraph):
            return NotImplemented
        return self._vertices == other._vertices and self._edges == other._edges

    def __hash__(self):
        return hash((self._vertices, self._edges))

    def __repr__(self):
        return f"MetricGraph(vertices={list(self._vertices)}, edges={len(self._edges)})"


def degree(graph: MetricGraph, v: str) -> int:
    return graph.degree(v)


def boundary_map(graph: MetricGraph, v: str) -> tuple[Incidence, ...]:
    return graph.boundary_map(v)


# --- text format --------------------------------------------------------------

_COEF_KEY = {
    Kind.IB: "alpha",
    Kind.ROBIN: "alpha",
    Kind.IIB: "beta",
    Kind.IIIA: "C",
    Kind.IIIB: "D",
}


def _parse_float(text: str, line: int, col: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise GraphFormatError(f"expected a number, got {text!r}", line, col) from None
    if not math.isfinite(value):
        raise GraphFormatError(f"number must be finite, got {text!r}", line, col)
    return value


def _tokens(line: str) -> list[tuple[str, int]]:
    """Whitespace tokens with their 1-based column."""
    return [(m.group(), m.start() + 1) for m in re.finditer(r"\S+", line)]


def _key_values(tokens, lineno) -> dict[str, tuple[str, int]]:
    out = {}
    for tok, col in tokens:
        if "=" not in tok:
            raise GraphFormatError(f"expected key=value, got {tok!r}", lineno, col)
        key, _, value = tok.partition("=")
        if not key or not value:
            raise GraphFormatError(f"malformed key=value {tok!r}", lineno, col)
        if key in out:
            raise GraphFormatError(f"duplicate key {key!r}", lineno, col)
        out[key] = (value, col + len(key) + 1)
    return out


def parse_condition(type_name: str, params: Mapping[str, str]) -> PermInvariantCondition:
    """Build a condition from a file type name and its ``key=value`` parameters.

    Raises ``ConditionError`` for unknown names, missing or superfluous keys.
    """
    try:
        kind = Kind(type_name)
    except ValueError:
        raise ConditionError(f"unknown condition type {type_name!r}") from None
    key = _COEF_KEY.get(kind)
    extra = set(params) - ({key} if key else set())
    if extra:
        raise ConditionError(f"unexpected parameter(s) {sorted(extra)} for {type_name}")
    if key is None:
        return PermInvariantCondition(kind)
    if key not in params:
        raise ConditionError(f"{type_name} requires coefficient {key}=")
    return PermInvariantCondition(kind, float(params[key]))


def format_condition(cond: PermInvariantCondition) -> str:
    key = _COEF_KEY.get(cond.kind)
    if key is None:
        return cond.kind.value
    return f"{cond.kind.value} {key}={cond.coefficient!r}"


def parse_potential(text: str) -> EdgePotential:
    return EdgePotential(tuple(float(s) for s in text.split(",")))


def parse_graph(text: str) -> tuple[MetricGraph, dict[str, PermInvariantCondition]]:
    """Parse a graph file into a validated graph and a vertex condition map."""
    section = None
    vertices: list[str] = []
    conditions: dict[str, PermInvariantCondition] = {}
    edges: list[Edge] = []
    edge_lines: dict[str, int] = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        toks = _tokens(line)
        if not toks:
            continue
        head, col = toks[0]
        if head.startswith("["):
            if head not in ("[vertices]", "[edges]") or len(toks) > 1:
                raise GraphFormatError(f"unknown section header {line.strip()!r}", lineno, col)
            section = head[1:-1]
            continue
        if section is None:
            raise GraphFormatError("content before any section header", lineno, col)

        if section == "vertices":
            if len(toks) < 2:
                raise GraphFormatError(f"vertex {head!r} is missing a condition type", lineno, col)
            if head in conditions:
                raise GraphFormatError(f"duplicate vertex {head!r}", lineno, col)
            type_name, type_col = toks[1]
            kv = _key_values(toks[2:], lineno)
            params = {k: str(_parse_float(v, lineno, c)) for k, (v, c) in kv.items()}
            try:
                cond = parse_condition(type_name, params)
            except ConditionError as exc:
                raise GraphFormatError(str(exc), lineno, type_col) from None
            vertices.append(head)
            conditions[head] = cond
        else:
            if len(toks) < 4:
                raise GraphFormatError("edge line needs NAME TAIL HEAD length=REAL", lineno, col)
            (tail, tcol), (hd, hcol) = toks[1], toks[2]
            for v, c in ((tail, tcol), (hd, hcol)):
                if v not in conditions:
                    raise GraphFormatError(f"unknown vertex {v!r}", lineno, c)
            if head in edge_lines:
                raise GraphFormatError(f"duplicate edge {head!r}", lineno, col)
            kv = _key_values(toks[3:], lineno)
            unknown = set(kv) - {"length", "q"}
            if unknown:
                k = sorted(unknown)[0]
                raise GraphFormatError(f"unknown edge key {k!r}", lineno, kv[k][1])
            if "length" not in kv:
                raise GraphFormatError("edge is missing length=", lineno, col)
            length = _parse_float(kv["length"][0], lineno, kv["length"][1])
            if length <= 0:
                raise GraphFormatError(f"edge length must be positive, got {length}", lineno, kv["length"][1])
            potential = EdgePotential()
            if "q" in kv:
                qtext, qcol = kv["q"]
                potential = EdgePotential(tuple(_parse_float(s, lineno, qcol) for s in qtext.split(",")))
            edges.append(Edge(head, tail, hd, length, potential))
            edge_lines[head] = lineno

    if not vertices:
        raise GraphFormatError("no vertices declared")
    return MetricGraph(vertices, edges), conditions


def serialize_graph(graph: MetricGraph, conditions: Mapping[str, PermInvariantCondition]) -> str:
    """Inverse of :func:`parse_graph` (general conditions cannot be written)."""
    lines = ["[vertices]"]
    for v in graph.vertices:
        if v not in conditions:
            raise GraphError(f"missing condition for vertex {v!r}")
        cond = conditions[v]
        if isinstance(cond, GeneralCondition):
            raise GraphError(f"vertex {v!r} has a general condition, which the file format cannot express")
        lines.append(f"{v} {format_condition(cond)}")
    lines.append("[edges]")
    for e in graph.edges:
        entry = f"{e.id} {e.tail} {e.head} length={e.length!r}"
        if e.potential.samples != (0.0,):
            entry += " q=" + ",".join(repr(s) for s in e.potential.samples)
        lines.append(entry)
    return "\n".join(lines) + "\n"


def read_graph(path) -> tuple[MetricGraph, dict[str, PermInvariantCondition]]:
    with open(path, encoding="utf-8") as fh:
        return parse_graph(fh.read())
