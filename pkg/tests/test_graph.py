import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qgraph.conditions import Kind
from qgraph.graph import (
    HEAD,
    TAIL,
    Edge,
    EdgePotential,
    GraphError,
    GraphFormatError,
    Incidence,
    MetricGraph,
    boundary_map,
    degree,
    parse_graph,
    serialize_graph,
)

LENS_BASE = """
[vertices]
v1 delta alpha=1
v2 kirchhoff   # free end
[edges]
e1 v1 v2 length=1
"""


def test_parse_delta_kirchhoff_interval():
    g, conds = parse_graph(LENS_BASE)
    assert g.vertices == ("v1", "v2")
    assert g.edge("e1").length == 1.0
    assert conds["v1"].kind is Kind.IB and conds["v1"].coefficient == 1.0
    assert conds["v2"].kind is Kind.IA


def test_parse_single_loop():
    g, _ = parse_graph("[vertices]\nv kirchhoff\n[edges]\ne1 v v length=1\n")
    assert g.degree("v") == 2


def test_unknown_vertex_reported_with_line():
    with pytest.raises(GraphFormatError, match="unknown vertex") as info:
        parse_graph("[vertices]\nv1 kirchhoff\n[edges]\ne1 v1 v9 length=1\n")
    assert info.value.line == 4


@pytest.mark.parametrize(
    "text, message",
    [
        ("[vertices]\nv1 kirchhoff\nv2 kirchhoff\n[edges]\ne1 v1 v2 length=0\n", "positive"),
        ("[vertices]\nv1 kirchhoff\nv2 kirchhoff\n[edges]\ne1 v1 v2 length=-1\n", "positive"),
        ("[vertices]\nv1 delta\nv2 kirchhoff\n[edges]\ne1 v1 v2 length=1\n", "coefficient"),
        ("[vertices]\nv1\n[edges]\n", "type"),
        ("[vertices]\nv1 bogus\n[edges]\n", "bogus"),
        ("v1 kirchhoff\n", "section"),
        ("[vertices]\nv1 kirchhoff\n[edges]\ne1 v1 v1\n", "length"),
        ("[vertices]\nv1 kirchhoff\nv1 kirchhoff\n[edges]\n", "duplicate"),
    ],
)
def test_parse_errors(text, message):
    with pytest.raises(GraphFormatError, match=message):
        parse_graph(text)


def test_potential_samples_parsed():
    g, _ = parse_graph("[vertices]\na neumann\nb neumann\n[edges]\ne a b length=2 q=1,-1,3\n")
    q = g.edge("e").potential
    assert q.samples == (1.0, -1.0, 3.0)
    assert q.integral(2.0) == pytest.approx(2.0)


def test_degree_examples():
    path = MetricGraph(["a", "b", "c"], [Edge("e1", "a", "b", 1.0), Edge("e2", "b", "c", 1.0)])
    assert degree(path, "b") == 2
    loop = MetricGraph(["v"], [Edge("e1", "v", "v", 1.0)])
    assert degree(loop, "v") == 2
    both = MetricGraph(["v", "w"], [Edge("e1", "v", "v", 1.0), Edge("e2", "v", "w", 1.0)])
    assert degree(both, "v") == 3
    with pytest.raises(GraphError):
        degree(path, "zz")


def test_boundary_map_examples():
    g = MetricGraph(["v", "a", "b"], [Edge("e1", "v", "a", 1.0), Edge("e2", "b", "v", 1.0)])
    assert boundary_map(g, "v") == (Incidence("e1", TAIL), Incidence("e2", HEAD))
    loop = MetricGraph(["v"], [Edge("e1", "v", "v", 1.0)])
    assert boundary_map(loop, "v") == (Incidence("e1", TAIL), Incidence("e1", HEAD))
    g = MetricGraph(["v", "a", "b"], [Edge("e2", "v", "a", 1.0), Edge("e1", "v", "b", 1.0)])
    assert boundary_map(g, "v") == (Incidence("e1", TAIL), Incidence("e2", TAIL))


def test_natural_edge_order():
    g = MetricGraph(["v", "a"], [Edge(f"e{i}", "v", "a", 1.0) for i in (10, 2, 1)])
    assert [inc.edge for inc in g.boundary_map("v")] == ["e1", "e2", "e10"]


@pytest.mark.parametrize("length", [0.0, -1.0, math.inf, math.nan])
def test_invalid_length(length):
    with pytest.raises(GraphError):
        MetricGraph(["a", "b"], [Edge("e", "a", "b", length)])


def test_potential_must_be_finite():
    with pytest.raises(ValueError):
        EdgePotential((1.0, math.inf))


def test_connected_components():
    g = MetricGraph(["a", "b", "c", "d"], [Edge("e1", "a", "b", 1.0), Edge("e2", "c", "d", 1.0), Edge("e3", "d", "d", 1.0)])
    assert len(g.connected_components()) == 2


# --- properties -----------------------------------------------------------------

_KINDS = ["kirchhoff", "delta alpha=-1.5", "antikirchhoff", "deltaprime beta=2", "type3a C=0.5",
          "type3b D=-3", "dirichlet", "neumann", "robin alpha=0.25"]


@st.composite
def graph_texts(draw):
    nv = draw(st.integers(1, 5))
    names = [f"v{i}" for i in range(nv)]
    lines = ["[vertices]"] + [f"{v} {draw(st.sampled_from(_KINDS))}" for v in names]
    lines.append("[edges]")
    ne = draw(st.integers(0, 6))
    for i in range(ne):
        a, b = draw(st.sampled_from(names)), draw(st.sampled_from(names))
        length = draw(st.floats(1e-3, 1e3, allow_nan=False))
        entry = f"e{i} {a} {b} length={length!r}"
        if draw(st.booleans()):
            q = draw(st.lists(st.floats(-10, 10, allow_nan=False), min_size=1, max_size=4))
            entry += " q=" + ",".join(repr(x) for x in q)
        lines.append(entry)
    return "\n".join(lines) + "\n"


@settings(max_examples=150, deadline=None)
@given(graph_texts())
def test_round_trip(text):
    g, conds = parse_graph(text)
    g2, conds2 = parse_graph(serialize_graph(g, conds))
    assert g2 == g
    assert conds2 == conds
    for v in g.vertices:
        assert g2.boundary_map(v) == g.boundary_map(v)


@settings(max_examples=150, deadline=None)
@given(graph_texts())
def test_handshake(text):
    g, _ = parse_graph(text)
    assert sum(g.degree(v) for v in g.vertices) == 2 * len(g.edges)
    for v in g.vertices:
        assert len(g.boundary_map(v)) == g.degree(v)
