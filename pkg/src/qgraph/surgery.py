"""Graph surgery: attach an edge, attach a pendant edge, join two vertices.

Each operation returns a new graph and condition map. ``expected_direction``
gives the eigenvalue monotonicity guaranteed for the operation, or
``NO_GUARANTEE`` when none is known.
"""

from __future__ import annotations

import enum
import shlex
from dataclasses import dataclass, field
from typing import Mapping

from qgraph.conditions import (
    Condition,
    ConditionError,
    GeneralCondition,
    Kind,
    PermInvariantCondition,
    antikirchhoff,
    delta,
    deltaprime,
    degree_one_robin,
    kirchhoff,
    natural_extension,
)
from qgraph.graph import Edge, EdgePotential, GraphError, MetricGraph, parse_condition, parse_potential


class SurgeryError(ValueError):
    """The surgery does not apply to the given graph and conditions."""


class Direction(enum.Enum):
    NON_INCREASING = "non-increasing"
    NON_DECREASING = "non-decreasing"
    NO_GUARANTEE = "no-guarantee"


@dataclass(frozen=True)
class DirectionVerdict:
    direction: Direction
    theorem: str
    notes: tuple[str, ...] = ()
    case: str = ""
    # the guarantee only covers indices whose eigenvalue before surgery is >= 0
    nonnegative_only: bool = False


@dataclass(frozen=True)
class AttachEdge:
    v1: str
    v2: str
    length: float
    potential: EdgePotential = field(default_factory=EdgePotential)
    edge_id: str | None = None

    def __post_init__(self):
        if not self.length > 0:
            raise SurgeryError("new edge length must be positive")
        if self.v1 == self.v2:
            raise SurgeryError("attach-edge needs two distinct vertices")

    def describe(self) -> str:
        return _describe("attach-edge", [self.v1, self.v2], self.length, self.potential)


@dataclass(frozen=True)
class AttachPendant:
    v1: str
    length: float
    new_condition: Condition = field(default_factory=kirchhoff)
    potential: EdgePotential = field(default_factory=EdgePotential)
    new_vertex: str | None = None
    edge_id: str | None = None

    def __post_init__(self):
        if not self.length > 0:
            raise SurgeryError("new edge length must be positive")

    def describe(self) -> str:
        text = _describe("attach-pendant", [self.v1], self.length, self.potential)
        cond = self.new_condition
        if isinstance(cond, PermInvariantCondition):
            text += f" cond={cond}"
        return text


@dataclass(frozen=True)
class JoinVertices:
    v1: str
    v2: str
    new_vertex: str | None = None

    def __post_init__(self):
        if self.v1 == self.v2:
            raise SurgeryError("join needs two distinct vertices")

    def describe(self) -> str:
        return f"join {self.v1} {self.v2}"


SurgeryOp = AttachEdge | AttachPendant | JoinVertices


def _describe(name, vertices, length, potential):
    text = f"{name} {' '.join(vertices)} length={length:g}"
    if not potential.is_zero:
        text += " q=" + ",".join(f"{s:g}" for s in potential.samples)
    return text


def _fresh(name: str | None, taken, prefix: str) -> str:
    if name is not None:
        if name in taken:
            raise SurgeryError(f"name {name!r} is already in use")
        return name
    i = 1
    while f"{prefix}{i}" in taken:
        i += 1
    return f"{prefix}{i}"


def _require(graph: MetricGraph, conditions, v: str) -> Condition:
    if v not in graph.vertices:
        raise SurgeryError(f"unknown vertex {v!r}")
    return conditions[v]


def _extend(cond: Condition, d: int, v: str) -> PermInvariantCondition:
    try:
        return natural_extension(cond, d)
    except ConditionError as exc:
        raise SurgeryError(f"vertex {v!r}: {exc}") from None


def attach_edge(graph, conditions, v1, v2, length, potential=None, edge_id=None):
    """New edge with tail ``v1`` and head ``v2``; endpoint conditions naturally extended."""
    op = AttachEdge(v1, v2, length, potential or EdgePotential(), edge_id)
    return apply(op, graph, conditions)


def attach_pendant(graph, conditions, v1, length, new_condition=None, potential=None, new_vertex=None, edge_id=None):
    """New edge from ``v1`` to a new degree-one vertex carrying ``new_condition``."""
    op = AttachPendant(v1, length, new_condition or kirchhoff(), potential or EdgePotential(), new_vertex, edge_id)
    return apply(op, graph, conditions)


def join_vertices(graph, conditions, v1, v2, new_vertex=None):
    """Merge ``v1`` and ``v2`` into one vertex with the merged condition."""
    return apply(JoinVertices(v1, v2, new_vertex), graph, conditions)


def _join_reading(cond: Condition, d: int) -> PermInvariantCondition:
    """Condition as it takes part in joining.

    On a degree-one vertex the decoupled kinds coincide with permutation
    invariant ones (Dirichlet = anti-Kirchhoff, Neumann = Kirchhoff,
    Robin = delta), so they are read that way.
    """
    if isinstance(cond, GeneralCondition):
        raise SurgeryError("joining needs permutation-invariant conditions at both vertices")
    if cond.kind.decoupled:
        if d != 1:
            raise SurgeryError(f"decoupled {cond.kind.value} condition cannot be joined")
        if cond.kind is Kind.DIRICHLET:
            return antikirchhoff()
        if cond.kind is Kind.NEUMANN:
            return kirchhoff()
        return delta(cond.coefficient)
    return cond


def merged_condition(c1: PermInvariantCondition, c2: PermInvariantCondition) -> PermInvariantCondition:
    f1, f2 = c1.family, c2.family
    if f1 != f2:
        raise SurgeryError(f"cannot join a type {f1} vertex with a type {f2} vertex")
    if f1 == "I":
        return delta(c1.strength + c2.strength)
    if f1 == "II":
        return deltaprime(c1.strength + c2.strength)
    if c1.coefficient != c2.coefficient:
        raise SurgeryError(f"type {f1} vertices can only be joined with equal coefficients")
    return c1


def apply(op: SurgeryOp, graph: MetricGraph, conditions: Mapping[str, Condition]):
    """Apply ``op``; returns ``(graph, conditions)`` for the modified graph."""
    conds = dict(conditions)
    if isinstance(op, AttachEdge):
        c1, c2 = _require(graph, conds, op.v1), _require(graph, conds, op.v2)
        conds[op.v1] = _extend(c1, graph.degree(op.v1) + 1, op.v1)
        conds[op.v2] = _extend(c2, graph.degree(op.v2) + 1, op.v2)
        eid = _fresh(op.edge_id, {e.id for e in graph.edges}, "e")
        edges = list(graph.edges) + [Edge(eid, op.v1, op.v2, op.length, op.potential)]
        return MetricGraph(graph.vertices, edges), conds
    if isinstance(op, AttachPendant):
        c1 = _require(graph, conds, op.v1)
        conds[op.v1] = _extend(c1, graph.degree(op.v1) + 1, op.v1)
        try:
            degree_one_robin(op.new_condition)
        except ConditionError as exc:
            raise SurgeryError(f"new vertex condition: {exc}") from None
        v2 = _fresh(op.new_vertex, set(graph.vertices), "p")
        eid = _fresh(op.edge_id, {e.id for e in graph.edges}, "e")
        conds[v2] = op.new_condition
        edges = list(graph.edges) + [Edge(eid, op.v1, v2, op.length, op.potential)]
        return MetricGraph(list(graph.vertices) + [v2], edges), conds
    if isinstance(op, JoinVertices):
        c1 = _join_reading(_require(graph, conds, op.v1), graph.degree(op.v1))
        c2 = _join_reading(_require(graph, conds, op.v2), graph.degree(op.v2))
        merged = merged_condition(c1, c2)
        taken = set(graph.vertices) - {op.v1, op.v2}
        v0 = _fresh(op.new_vertex or f"{op.v1}+{op.v2}", taken, "j")
        vertices = []
        for v in graph.vertices:
            if v == op.v1:
                vertices.append(v0)
            elif v != op.v2:
                vertices.append(v)
        rename = {op.v1: v0, op.v2: v0}
        edges = [Edge(e.id, rename.get(e.tail, e.tail), rename.get(e.head, e.head), e.length, e.potential)
                 for e in graph.edges]
        del conds[op.v1], conds[op.v2]
        conds[v0] = merged
        return MetricGraph(vertices, edges), conds
    raise TypeError(f"unknown surgery {op!r}")


def join_case(beta1: float, beta2: float) -> str:
    """Sign case (i)-(vi) for joining two type II vertices."""
    b0 = beta1 + beta2
    if beta1 * beta2 == 0:
        return "vi"
    if beta1 > 0 and beta2 > 0:
        return "i"
    if beta1 < 0 and beta2 < 0:
        return "ii"
    if b0 > 0:
        return "iii"
    if b0 < 0:
        return "iv"
    return "v"


_TYPE_II_DIRECTION = {
    "i": Direction.NON_INCREASING,
    "ii": Direction.NON_DECREASING,
    "iii": Direction.NON_DECREASING,
    "iv": Direction.NON_INCREASING,
    "v": Direction.NON_DECREASING,
    "vi": Direction.NON_INCREASING,
}

_EDGE_MONOTONE = {Kind.IIA, Kind.IIB, Kind.IIIA}


def expected_direction(op: SurgeryOp, conditions: Mapping[str, Condition]) -> DirectionVerdict:
    """Eigenvalue direction guaranteed for ``op`` by the monotonicity theorems."""
    if isinstance(op, AttachEdge):
        kinds = [getattr(conditions[v], "kind", None) for v in (op.v1, op.v2)]
        if all(k in _EDGE_MONOTONE for k in kinds):
            return DirectionVerdict(Direction.NON_INCREASING, "attach-edge",
                                    ("both endpoints anti-Kirchhoff, delta-prime or type IIIa",))
        note = "only types IIa, IIb, IIIa are covered"
        if Kind.IIIB in kinds:
            note = "type IIIb is not covered; no counterexample is known either"
        return DirectionVerdict(Direction.NO_GUARANTEE, "attach-edge", (note,))

    if isinstance(op, AttachPendant):
        kind = getattr(conditions[op.v1], "kind", None)
        if kind in _EDGE_MONOTONE:
            return DirectionVerdict(Direction.NON_INCREASING, "attach-pendant",
                                    ("extension by zero; any condition and potential on the new edge",))
        if kind in (Kind.IA, Kind.IB, Kind.IIIB):
            alpha = degree_one_robin(op.new_condition)
            q_int = op.potential.integral(op.length)
            if alpha is not None and alpha <= 0 and q_int <= 0:
                return DirectionVerdict(
                    Direction.NON_INCREASING, "attach-pendant",
                    (f"new vertex Robin alpha={alpha:g} <= 0", f"integral of new potential {q_int:g} <= 0",
                     "constant extension; covers indices with nonnegative eigenvalue before surgery"),
                    nonnegative_only=True,
                )
            reason = "new vertex is Dirichlet" if alpha is None else (
                f"new vertex Robin alpha={alpha:g} > 0" if alpha > 0 else f"integral of new potential {q_int:g} > 0")
            return DirectionVerdict(Direction.NO_GUARANTEE, "attach-pendant", (reason,))
        return DirectionVerdict(Direction.NO_GUARANTEE, "attach-pendant", ("endpoint condition has no natural extension",))

    if isinstance(op, JoinVertices):
        c1, c2 = conditions[op.v1], conditions[op.v2]
        if isinstance(c1, GeneralCondition) or isinstance(c2, GeneralCondition):
            return DirectionVerdict(Direction.NO_GUARANTEE, "join", ("general condition",))
        # degree is irrelevant for permutation-invariant kinds; decoupled ones only join at degree one
        c1 = _join_reading(c1, 1) if c1.kind.decoupled else c1
        c2 = _join_reading(c2, 1) if c2.kind.decoupled else c2
        fam = c1.family
        if fam != c2.family:
            return DirectionVerdict(Direction.NO_GUARANTEE, "join", ("family mismatch",))
        if fam == "I":
            return DirectionVerdict(Direction.NON_DECREASING, "join-I",
                                    (f"alpha0 = {c1.strength + c2.strength:g}",))
        if fam == "II":
            case = join_case(c1.strength, c2.strength)
            return DirectionVerdict(_TYPE_II_DIRECTION[case], "join-II",
                                    (f"beta1={c1.strength:g}", f"beta2={c2.strength:g}"), case=case)
        if c1.coefficient != c2.coefficient:
            return DirectionVerdict(Direction.NO_GUARANTEE, "join", ("unequal coefficients",))
        if fam == "IIIa":
            return DirectionVerdict(Direction.NON_INCREASING, "join-IIIa")
        if c1.coefficient > 0:
            return DirectionVerdict(Direction.NON_DECREASING, "join-IIIb", ("D > 0",), case="D>0")
        return DirectionVerdict(Direction.NON_INCREASING, "join-IIIb", ("D < 0",), case="D<0")
    raise TypeError(f"unknown surgery {op!r}")


def parse_surgery(text: str) -> SurgeryOp:
    """Parse ``attach-edge v1 v2 length=L [q=..]``, ``attach-pendant v1 length=L
    cond=TYPE[:coef] [q=..] [name=V]`` or ``join v1 v2 [name=V]``."""
    tokens = shlex.split(text)
    if not tokens:
        raise SurgeryError("empty surgery description")
    name, rest = tokens[0], tokens[1:]
    positional = [t for t in rest if "=" not in t]
    kv = dict(t.split("=", 1) for t in rest if "=" in t)
    try:
        if name == "attach-edge":
            _arity(name, positional, 2, kv, {"length", "q", "id"})
            return AttachEdge(positional[0], positional[1], float(kv["length"]),
                              parse_potential(kv["q"]) if "q" in kv else EdgePotential(), kv.get("id"))
        if name == "attach-pendant":
            _arity(name, positional, 1, kv, {"length", "q", "cond", "name", "id"})
            cond = kirchhoff()
            if "cond" in kv:
                type_name, _, coef = kv["cond"].partition(":")
                params = {}
                if coef:
                    key = {"delta": "alpha", "robin": "alpha", "deltaprime": "beta", "type3a": "C", "type3b": "D"}.get(type_name, "x")
                    params[key] = coef
                cond = parse_condition(type_name, params)
            return AttachPendant(positional[0], float(kv["length"]), cond,
                                 parse_potential(kv["q"]) if "q" in kv else EdgePotential(), kv.get("name"), kv.get("id"))
        if name == "join":
            _arity(name, positional, 2, kv, {"name"})
            return JoinVertices(positional[0], positional[1], kv.get("name"))
    except (KeyError, ValueError, ConditionError, GraphError) as exc:
        if isinstance(exc, SurgeryError):
            raise
        raise SurgeryError(f"bad surgery {text!r}: {exc}") from None
    raise SurgeryError(f"unknown surgery {name!r}")


def _arity(name, positional, n, kv, allowed):
    if len(positional) != n:
        raise SurgeryError(f"{name} takes {n} vertex name(s)")
    unknown = set(kv) - allowed
    if unknown:
        raise SurgeryError(f"{name}: unknown key(s) {sorted(unknown)}")
    if "length" in allowed and "length" not in kv:
        raise SurgeryError(f"{name} needs length=")
