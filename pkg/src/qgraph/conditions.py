"""Self-adjoint vertex conditions.

Any local self-adjoint condition at a vertex of degree ``d`` is a triple of
mutually orthogonal projections ``P_D + P_N + P_R = I`` on ``C^d`` with a
Hermitian coupling ``Lambda`` invertible on ``ran P_R``::

    P_D F = 0,   P_N F' = 0,   P_R F' = Lambda P_R F

where ``F`` holds boundary values and ``F'`` outward derivatives, ordered by
the vertex boundary map. The associated quadratic form only sees
``P_D F = 0`` (a constraint) and ``<Lambda P_R F, P_R F>`` (a vertex term).

Permutation-invariant conditions use only the projections ``0``, the
averaging projection ``Pavg = (1/d) 11^T`` and its complement
``Qavg = I - Pavg``, with ``Lambda`` a constant multiple of ``P_R``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

PROJECTION_TOL = 1e-12
RECOGNITION_TOL = 1e-10
CONSTRAINT_TOL = 1e-10


class ConditionError(ValueError):
    """Invalid vertex condition or an operation it does not support."""


class Kind(enum.Enum):
    IA = "kirchhoff"
    IB = "delta"
    IIA = "antikirchhoff"
    IIB = "deltaprime"
    IIIA = "type3a"
    IIIB = "type3b"
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"
    ROBIN = "robin"

    @property
    def decoupled(self) -> bool:
        return self in (Kind.DIRICHLET, Kind.NEUMANN, Kind.ROBIN)

    @property
    def family(self) -> str | None:
        """Classification family used by the joining rules: 'I', 'II', 'IIIa', 'IIIb'."""
        return _FAMILY.get(self)


_FAMILY = {
    Kind.IA: "I",
    Kind.IB: "I",
    Kind.IIA: "II",
    Kind.IIB: "II",
    Kind.IIIA: "IIIa",
    Kind.IIIB: "IIIb",
}
_NEEDS_COEF = {Kind.IB, Kind.IIB, Kind.IIIA, Kind.IIIB, Kind.ROBIN}
_NONZERO_COEF = {Kind.IB, Kind.IIB, Kind.IIIA, Kind.IIIB}


@dataclass(frozen=True)
class PermInvariantCondition:
    """A permutation-invariant condition, independent of the vertex degree.

    ``coefficient`` is alpha (delta, robin), beta (deltaprime), C (type3a)
    or D (type3b), and ``None`` for the coefficient-free kinds.
    """

    kind: Kind
    coefficient: float | None = None

    def __post_init__(self):
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind in _NEEDS_COEF:
            if self.coefficient is None:
                raise ConditionError(f"{kind.value} requires a coefficient")
            coef = float(self.coefficient)
            if not np.isfinite(coef):
                raise ConditionError(f"{kind.value} coefficient must be finite")
            if kind in _NONZERO_COEF and coef == 0.0:
                raise ConditionError(f"{kind.value} coefficient must be nonzero")
            object.__setattr__(self, "coefficient", coef)
        elif self.coefficient is not None:
            raise ConditionError(f"{kind.value} takes no coefficient")

    @property
    def family(self) -> str | None:
        return self.kind.family

    @property
    def strength(self) -> float:
        """Coefficient with the constraint kinds read as zero (Kirchhoff: alpha=0, anti-Kirchhoff: beta=0)."""
        if self.kind in (Kind.IA, Kind.IIA, Kind.NEUMANN):
            return 0.0
        if self.coefficient is None:
            raise ConditionError(f"{self.kind.value} has no interaction strength")
        return self.coefficient

    def __str__(self):
        if self.coefficient is None:
            return self.kind.value
        return f"{self.kind.value}:{self.coefficient:g}"


def kirchhoff() -> PermInvariantCondition:
    return PermInvariantCondition(Kind.IA)


def delta(alpha: float) -> PermInvariantCondition:
    """delta condition; alpha = 0 gives Kirchhoff."""
    return PermInvariantCondition(Kind.IB, alpha) if alpha != 0 else kirchhoff()


def antikirchhoff() -> PermInvariantCondition:
    return PermInvariantCondition(Kind.IIA)


def deltaprime(beta: float) -> PermInvariantCondition:
    """delta-prime condition; beta = 0 gives anti-Kirchhoff."""
    return PermInvariantCondition(Kind.IIB, beta) if beta != 0 else antikirchhoff()


def type3a(c: float) -> PermInvariantCondition:
    return PermInvariantCondition(Kind.IIIA, c)


def type3b(d: float) -> PermInvariantCondition:
    return PermInvariantCondition(Kind.IIIB, d)


def dirichlet() -> PermInvariantCondition:
    return PermInvariantCondition(Kind.DIRICHLET)


def neumann() -> PermInvariantCondition:
    return PermInvariantCondition(Kind.NEUMANN)


def robin(alpha: float) -> PermInvariantCondition:
    return PermInvariantCondition(Kind.ROBIN, alpha)


def averaging(d: int) -> np.ndarray:
    """Orthogonal projection onto span{(1, ..., 1)}."""
    return np.full((d, d), 1.0 / d)


def complement(d: int) -> np.ndarray:
    """Orthogonal projection onto the zero-sum vectors."""
    return np.eye(d) - averaging(d)


def _range_basis(P: np.ndarray) -> np.ndarray:
    w, U = np.linalg.eigh(P)
    return U[:, w > 0.5]


class GeneralCondition:
    """Projection triple ``(P_D, P_N, P_R)`` with coupling ``Lambda``.

    ``Lambda`` is stored as a d x d Hermitian matrix vanishing off
    ``ran P_R``, so it is also the vertex term matrix of the form.
    """

    def __init__(self, P_D, P_N, P_R, Lambda=None):
        P_D, P_N, P_R = (np.array(P, dtype=complex) for P in (P_D, P_N, P_R))
        d = P_D.shape[0]
        if d < 1 or any(P.shape != (d, d) for P in (P_D, P_N, P_R)):
            raise ConditionError("projections must be square matrices of one common size")
        Lam = np.zeros((d, d), complex) if Lambda is None else np.array(Lambda, dtype=complex)
        if Lam.shape != (d, d):
            raise ConditionError("Lambda must be d x d")
        for name, P in (("P_D", P_D), ("P_N", P_N), ("P_R", P_R)):
            if np.abs(P - P.conj().T).max() > PROJECTION_TOL or np.abs(P @ P - P).max() > PROJECTION_TOL:
                raise ConditionError(f"{name} is not an orthogonal projection")
        if np.abs(P_D + P_N + P_R - np.eye(d)).max() > PROJECTION_TOL:
            raise ConditionError("projections do not sum to the identity")
        for A, B in ((P_D, P_N), (P_D, P_R), (P_N, P_R)):
            if np.abs(A @ B).max() > PROJECTION_TOL:
                raise ConditionError("projection ranges are not mutually orthogonal")
        if np.abs(Lam - Lam.conj().T).max() > PROJECTION_TOL * max(1.0, np.abs(Lam).max()):
            raise ConditionError("Lambda is not Hermitian")
        scale = max(1.0, np.abs(Lam).max())
        if np.abs(Lam - P_R @ Lam @ P_R).max() > PROJECTION_TOL * scale:
            raise ConditionError("Lambda must act inside ran P_R")
        U = _range_basis(P_R)
        if U.shape[1]:
            restricted = U.conj().T @ Lam @ U
            if np.linalg.svd(restricted, compute_uv=False).min() <= PROJECTION_TOL:
                raise ConditionError("Lambda is not invertible on ran P_R")
        for M in (P_D, P_N, P_R, Lam):
            M.setflags(write=False)
        self.P_D, self.P_N, self.P_R, self.Lambda = P_D, P_N, P_R, Lam

    @property
    def degree(self) -> int:
        return self.P_D.shape[0]

    @property
    def is_real(self) -> bool:
        return all(np.abs(M.imag).max() == 0 for M in (self.P_D, self.P_N, self.P_R, self.Lambda))

    def __repr__(self):
        d = self.degree
        ranks = [int(round(np.trace(P).real)) for P in (self.P_D, self.P_N, self.P_R)]
        return f"GeneralCondition(d={d}, ranks D/N/R={ranks})"


Condition = PermInvariantCondition | GeneralCondition


def projection_matrices(cond: PermInvariantCondition, d: int) -> GeneralCondition:
    """Projection triple and coupling of a permutation-invariant condition at degree ``d``."""
    if d < 1:
        raise ConditionError("degree must be at least 1")
    Pm, Qm, Z, I = averaging(d), complement(d), np.zeros((d, d)), np.eye(d)
    c = cond.coefficient
    table = {
        Kind.IA: (Qm, Pm, Z, 0.0),
        Kind.IB: (Qm, Z, Pm, c / d if c is not None else None),
        Kind.IIA: (Pm, Qm, Z, 0.0),
        Kind.IIB: (Z, Qm, Pm, d / c if c else None),
        Kind.IIIA: (Pm, Z, Qm, c),
        Kind.IIIB: (Z, Pm, Qm, 1.0 / c if c else None),
        Kind.DIRICHLET: (I, Z, Z, 0.0),
        Kind.NEUMANN: (Z, I, Z, 0.0),
        Kind.ROBIN: (Z, Z, I, c),
    }
    kind = Kind.NEUMANN if cond.kind is Kind.ROBIN and c == 0 else cond.kind
    P_D, P_N, P_R, lam = table[kind]
    return GeneralCondition(P_D, P_N, P_R, lam * P_R)


def _label(P: np.ndarray, d: int) -> str | None:
    for name, ref in (("0", np.zeros((d, d))), ("P", averaging(d)), ("Q", complement(d)), ("I", np.eye(d))):
        if np.abs(P - ref).max() <= RECOGNITION_TOL:
            return name
    return None


def classify(g: GeneralCondition) -> PermInvariantCondition | None:
    """Recognise a permutation-invariant condition; ``None`` if ``g`` is not one.

    At degree 1 the averaging projection is the identity and its complement is
    zero, so several kinds coincide; the Kirchhoff / delta / anti-Kirchhoff
    reading is returned there.
    """
    d = g.degree
    if d == 1:
        if abs(g.P_D[0, 0] - 1) <= RECOGNITION_TOL:
            return antikirchhoff()
        if abs(g.P_N[0, 0] - 1) <= RECOGNITION_TOL:
            return kirchhoff()
        lam = g.Lambda[0, 0]
        if abs(lam.imag) > RECOGNITION_TOL:
            return None
        return PermInvariantCondition(Kind.IB, float(lam.real))
    labels = (_label(g.P_D, d), _label(g.P_N, d), _label(g.P_R, d))
    if None in labels:
        return None
    lam = None
    if labels[2] != "0":
        P_R = g.P_R
        lam = np.trace(g.Lambda) / np.trace(P_R)
        if abs(lam.imag) > RECOGNITION_TOL or np.abs(g.Lambda - lam * P_R).max() > RECOGNITION_TOL * max(1, abs(lam)):
            return None
        lam = float(lam.real)
    match labels:
        case ("Q", "P", "0"):
            return kirchhoff()
        case ("Q", "0", "P"):
            return PermInvariantCondition(Kind.IB, lam * d)
        case ("P", "Q", "0"):
            return antikirchhoff()
        case ("0", "Q", "P"):
            return PermInvariantCondition(Kind.IIB, d / lam)
        case ("P", "0", "Q"):
            return PermInvariantCondition(Kind.IIIA, lam)
        case ("0", "P", "Q"):
            return PermInvariantCondition(Kind.IIIB, 1.0 / lam)
        case ("I", "0", "0"):
            return dirichlet()
        case ("0", "I", "0"):
            return neumann()
        case ("0", "0", "I"):
            return robin(lam)
    return None


def natural_extension(cond: Condition, new_degree: int) -> PermInvariantCondition:
    """The same condition at a vertex of larger degree.

    The kind and interaction strength are kept; the degree enters only when
    the projections are built (``alpha/d``, ``d/beta``, ``C``, ``1/D``).
    """
    if isinstance(cond, GeneralCondition):
        raise ConditionError("a general (non permutation-invariant) condition has no natural extension")
    if cond.kind.decoupled:
        raise ConditionError(f"decoupled {cond.kind.value} condition has no natural extension")
    if new_degree < 1:
        raise ConditionError("degree must be at least 1")
    return cond


def as_general(cond: Condition, d: int) -> GeneralCondition:
    if isinstance(cond, GeneralCondition):
        if cond.degree != d:
            raise ConditionError(f"condition is for degree {cond.degree}, vertex has degree {d}")
        return cond
    return projection_matrices(cond, d)


def form_constraints(cond: Condition, d: int) -> np.ndarray:
    """Rows ``C`` such that the form domain requires ``C @ F == 0``.

    Continuity is written as consecutive differences, sum conditions as a
    single all-ones row. General conditions give an orthonormal basis of
    ``ran P_D`` (conjugated), one row per dimension.
    """
    if isinstance(cond, GeneralCondition):
        g = as_general(cond, d)
        return _range_basis(g.P_D).conj().T
    if d < 1:
        raise ConditionError("degree must be at least 1")
    kind = cond.kind
    if kind in (Kind.IA, Kind.IB):
        rows = np.zeros((d - 1, d))
        for j in range(d - 1):
            rows[j, j], rows[j, j + 1] = 1.0, -1.0
        return rows
    if kind in (Kind.IIA, Kind.IIIA):
        return np.ones((1, d))
    if kind is Kind.DIRICHLET:
        return np.eye(d)
    return np.zeros((0, d))


def boundary_matrix(cond: Condition, d: int) -> np.ndarray:
    """Hermitian ``M`` with ``<M F, F>`` equal to the vertex term of the form."""
    g = as_general(cond, d)
    M = g.Lambda
    if isinstance(cond, PermInvariantCondition) or g.is_real:
        return np.array(M.real)
    return np.array(M)


def form_contribution(cond: Condition, trace) -> float:
    """Vertex term ``<Lambda P_R F, P_R F>`` for a trace in the form domain."""
    F = np.asarray(trace, dtype=complex)
    d = F.shape[0]
    C = form_constraints(cond, d)
    if C.shape[0] and np.abs(C @ F).max() > CONSTRAINT_TOL * max(1.0, np.abs(F).max()):
        raise ConditionError("boundary trace violates the form-domain constraints")
    M = boundary_matrix(cond, d)
    return float(np.real(np.vdot(F, M @ F)))


def degree_one_robin(cond: Condition) -> float | None:
    """Robin coefficient the condition reduces to on a degree-one vertex.

    Neumann-like conditions give 0; Dirichlet-like ones give ``None``.
    """
    g = as_general(cond, 1)
    if abs(g.P_D[0, 0]) > RECOGNITION_TOL:
        return None
    return float(g.Lambda[0, 0].real)
