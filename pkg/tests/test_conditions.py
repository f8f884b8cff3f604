import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qgraph import conditions as vc
from qgraph.conditions import (
    ConditionError,
    GeneralCondition,
    Kind,
    PermInvariantCondition,
    averaging,
    boundary_matrix,
    classify,
    complement,
    form_constraints,
    form_contribution,
    natural_extension,
    projection_matrices,
)

COUPLED = [
    vc.kirchhoff(),
    vc.delta(1.5),
    vc.delta(-0.7),
    vc.antikirchhoff(),
    vc.deltaprime(2.0),
    vc.deltaprime(-0.3),
    vc.type3a(0.5),
    vc.type3a(-4.0),
    vc.type3b(2.0),
    vc.type3b(-0.25),
]
ALL = COUPLED + [vc.dirichlet(), vc.neumann(), vc.robin(1.0), vc.robin(-2.0)]


def test_kirchhoff_degree_two_matrices():
    g = projection_matrices(vc.kirchhoff(), 2)
    np.testing.assert_allclose(g.P_D, [[0.5, -0.5], [-0.5, 0.5]], atol=1e-15)
    np.testing.assert_allclose(g.P_N, [[0.5, 0.5], [0.5, 0.5]], atol=1e-15)
    np.testing.assert_allclose(g.P_R, 0, atol=0)


def test_delta_coupling_scaled_by_degree():
    g = projection_matrices(vc.delta(3.0), 3)
    np.testing.assert_allclose(g.P_D, complement(3), atol=1e-15)
    np.testing.assert_allclose(g.P_R, averaging(3), atol=1e-15)
    np.testing.assert_allclose(g.Lambda, 1.0 * averaging(3), atol=1e-15)


def test_deltaprime_coupling():
    g = projection_matrices(vc.deltaprime(2.0), 4)
    np.testing.assert_allclose(g.P_N, complement(4), atol=1e-15)
    np.testing.assert_allclose(g.P_R, averaging(4), atol=1e-15)
    np.testing.assert_allclose(g.Lambda, 2.0 * averaging(4), atol=1e-15)


@pytest.mark.parametrize("kind", [Kind.IB, Kind.IIB, Kind.IIIA, Kind.IIIB])
def test_zero_coefficient_rejected(kind):
    with pytest.raises(ConditionError):
        PermInvariantCondition(kind, 0.0)


def test_zero_strength_constructors_change_kind():
    assert vc.delta(0.0) == vc.kirchhoff()
    assert vc.deltaprime(0.0) == vc.antikirchhoff()


def test_robin_zero_is_neumann_triple():
    g = projection_matrices(vc.robin(0.0), 2)
    np.testing.assert_allclose(g.P_N, np.eye(2))


def test_classify_examples():
    assert classify(projection_matrices(vc.kirchhoff(), 3)) == vc.kirchhoff()
    assert classify(GeneralCondition(np.diag([1, 0]), np.diag([0, 1]), np.zeros((2, 2)))) is None
    back = classify(projection_matrices(vc.type3b(-2.0), 5))
    assert back.kind is Kind.IIIB and back.coefficient == pytest.approx(-2.0, rel=1e-14)


@pytest.mark.parametrize("cond", COUPLED, ids=str)
@pytest.mark.parametrize("d", range(2, 11))
def test_classify_inverts_projection_matrices(cond, d):
    back = classify(projection_matrices(cond, d))
    assert back.kind is cond.kind
    if cond.coefficient is not None:
        assert back.coefficient == pytest.approx(cond.coefficient, rel=1e-12)


@pytest.mark.parametrize("cond", COUPLED, ids=str)
def test_degree_one_classification_is_equivalent(cond):
    # several kinds coincide at degree one; compare triples instead of labels
    g = projection_matrices(cond, 1)
    h = projection_matrices(classify(g), 1)
    for a, b in ((g.P_D, h.P_D), (g.P_N, h.P_N), (g.P_R, h.P_R), (g.Lambda, h.Lambda)):
        np.testing.assert_allclose(a, b, atol=1e-12)


@pytest.mark.parametrize("cond", ALL, ids=str)
@pytest.mark.parametrize("d", [1, 2, 3, 7])
def test_triples_are_valid(cond, d):
    g = projection_matrices(cond, d)
    for P in (g.P_D, g.P_N, g.P_R):
        np.testing.assert_allclose(P @ P, P, atol=1e-12)
    np.testing.assert_allclose(g.P_D + g.P_N + g.P_R, np.eye(d), atol=1e-12)


def test_general_condition_validation():
    with pytest.raises(ConditionError, match="projection"):
        GeneralCondition(np.diag([1, 0.5]), np.diag([0, 0.5]), np.zeros((2, 2)))
    with pytest.raises(ConditionError, match="identity"):
        GeneralCondition(np.diag([1, 0]), np.zeros((2, 2)), np.zeros((2, 2)))
    with pytest.raises(ConditionError, match="invertible"):
        GeneralCondition(np.zeros((1, 1)), np.zeros((1, 1)), np.eye(1), np.zeros((1, 1)))
    with pytest.raises(ConditionError, match="inside"):
        GeneralCondition(np.diag([1, 0]), np.zeros((2, 2)), np.diag([0, 1]), np.eye(2))


def test_natural_extension():
    ext = natural_extension(vc.delta(1.0), 2)
    assert ext == vc.delta(1.0)
    np.testing.assert_allclose(projection_matrices(ext, 2).Lambda, 0.5 * averaging(2))
    assert natural_extension(vc.type3a(-1.0), 5).coefficient == -1.0
    with pytest.raises(ConditionError):
        natural_extension(vc.robin(1.0), 2)
    with pytest.raises(ConditionError):
        natural_extension(projection_matrices(vc.kirchhoff(), 2), 3)


@pytest.mark.parametrize("cond", COUPLED, ids=str)
def test_natural_extension_keeps_type(cond):
    for d in (2, 3, 6):
        assert classify(projection_matrices(natural_extension(cond, d), d)).kind is cond.kind


def test_constraint_rows():
    np.testing.assert_array_equal(form_constraints(vc.kirchhoff(), 3), [[1, -1, 0], [0, 1, -1]])
    assert form_constraints(vc.deltaprime(5.0), 4).shape == (0, 4)
    np.testing.assert_array_equal(form_constraints(vc.antikirchhoff(), 2), [[1, 1]])
    np.testing.assert_array_equal(form_constraints(vc.dirichlet(), 2), np.eye(2))
    assert form_constraints(vc.robin(1.0), 2).shape == (0, 2)


@pytest.mark.parametrize("cond", ALL, ids=str)
@pytest.mark.parametrize("d", [1, 2, 4])
def test_constraints_span_dirichlet_range(cond, d):
    g = projection_matrices(cond, d)
    C = form_constraints(cond, d)
    # the kernel of C is ran(P_N + P_R)
    rank = np.linalg.matrix_rank(C) if C.size else 0
    assert rank == round(np.trace(g.P_D).real)
    np.testing.assert_allclose(C @ (g.P_N + g.P_R), 0, atol=1e-12)


@pytest.mark.parametrize(
    "cond, trace, expected",
    [
        (vc.delta(2.0), [3, 3, 3], 18.0),
        (vc.deltaprime(4.0), [1, 2, -1], 1.0),
        (vc.type3b(2.0), [1, -1], 1.0),
        (vc.type3a(3.0), [1, -1], 6.0),
        (vc.kirchhoff(), [2, 2], 0.0),
        (vc.antikirchhoff(), [1, -1], 0.0),
        (vc.robin(2.5), [2], 10.0),
    ],
)
def test_form_contribution_examples(cond, trace, expected):
    assert form_contribution(cond, trace) == pytest.approx(expected, abs=1e-13)


def test_form_contribution_rejects_constraint_violation():
    with pytest.raises(ConditionError):
        form_contribution(vc.kirchhoff(), [1.0, 2.0])
    with pytest.raises(ConditionError):
        form_contribution(vc.type3a(1.0), [1.0, 1.0])


def test_boundary_matrix_closed_forms():
    for d in (1, 2, 5):
        np.testing.assert_allclose(boundary_matrix(vc.type3b(0.4), d), complement(d) / 0.4, atol=1e-13)
        np.testing.assert_allclose(boundary_matrix(vc.deltaprime(-3.0), d), d * averaging(d) / -3.0, atol=1e-13)


def test_delta_matrix_vanishes_with_alpha():
    for alpha in (1e-2, 1e-5, 1e-9):
        assert np.abs(boundary_matrix(vc.delta(alpha), 3)).max() <= alpha
    assert vc.deltaprime(1e-9).kind is Kind.IIB
    assert np.abs(boundary_matrix(vc.deltaprime(1e-9), 3)).max() > 1e8


def _direct(cond, F):
    """Vertex term written out from the closed-form expressions."""
    d = len(F)
    s = np.sum(F)
    sq = np.sum(np.abs(F) ** 2)
    c = cond.coefficient
    return {
        Kind.IA: 0.0,
        Kind.IIA: 0.0,
        Kind.DIRICHLET: 0.0,
        Kind.NEUMANN: 0.0,
        Kind.IB: lambda: c * abs(F[0]) ** 2,
        Kind.IIB: lambda: abs(s) ** 2 / c,
        Kind.IIIA: lambda: c * sq,
        Kind.IIIB: lambda: (sq - abs(s) ** 2 / d) / c,
        Kind.ROBIN: lambda: c * sq,
    }[cond.kind]


def _project_to_domain(cond, F):
    C = form_constraints(cond, len(F))
    if not C.size:
        return F
    _, s, Vh = np.linalg.svd(C)
    N = Vh[np.sum(s > 1e-12):].conj().T
    return N @ (N.conj().T @ F)


@pytest.mark.parametrize("cond", ALL, ids=str)
def test_matrix_agrees_with_closed_form_on_random_traces(cond):
    rng = np.random.default_rng(7)
    for _ in range(1000):
        d = int(rng.integers(1, 7))
        F = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        F = _project_to_domain(cond, F)
        expected = _direct(cond, F)
        expected = expected() if callable(expected) else expected
        assert form_contribution(cond, F) == pytest.approx(expected, rel=1e-12, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_random_general_conditions_roundtrip_through_constraints(d, seed):
    from qgraph.verify import random_general_condition

    g = random_general_condition(np.random.default_rng(seed), d)
    C = form_constraints(g, d)
    np.testing.assert_allclose(C @ g.P_D @ C.conj().T, np.eye(C.shape[0]), atol=1e-10)
    M = boundary_matrix(g, d)
    np.testing.assert_allclose(M, M.conj().T, atol=1e-12)
