"""Conforming P1 finite elements for the Schroedinger form on a metric graph.

Each edge carries its own nodal DOFs, endpoints included, so a boundary
value F_j(v) is one DOF. Vertex conditions enter in two ways: the Dirichlet
part is a linear constraint on the boundary DOFs of the vertex, removed by
an orthonormal null-space basis ``T``; the Robin part is a Hermitian matrix
added to the stiffness matrix. The reduced pencil ``(T^H A T, T^H B T)`` is
symmetric definite.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from qgraph.conditions import Condition, boundary_matrix, form_constraints, form_contribution
from qgraph.graph import HEAD, TAIL, GraphError, MetricGraph

log = logging.getLogger(__name__)

RANK_TOL = 1e-12
CLUSTER_TOL = 1e-6
DENSE_LIMIT = 3000


class SolverError(RuntimeError):
    """Eigenvalue computation failed (bad request or invalid discrete problem)."""


@dataclass(frozen=True)
class Mesh:
    """Uniform cells per edge and the global DOF numbering.

    Edge ``e`` owns DOFs ``offset[e] .. offset[e] + cells[e]``; the first is
    its tail end, the last its head end.
    """

    graph: MetricGraph
    cells: Mapping[str, int]
    offsets: Mapping[str, int] = field(init=False)
    n_dofs: int = field(init=False)

    def __post_init__(self):
        offsets, pos = {}, 0
        for e in self.graph.edges:
            n = int(self.cells[e.id])
            if n < 1:
                raise ValueError(f"edge {e.id!r} needs at least one cell")
            offsets[e.id] = pos
            pos += n + 1
        object.__setattr__(self, "cells", {e.id: int(self.cells[e.id]) for e in self.graph.edges})
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "n_dofs", pos)

    def width(self, edge_id: str) -> float:
        return self.graph.edge(edge_id).length / self.cells[edge_id]

    @property
    def h_max(self) -> float:
        return max((self.width(e.id) for e in self.graph.edges), default=0.0)

    def dof(self, edge_id: str, end: str) -> int:
        return self.offsets[edge_id] + (self.cells[edge_id] if end == HEAD else 0)

    def vertex_dofs(self, v: str) -> list[int]:
        return [self.dof(inc.edge, inc.end) for inc in self.graph.boundary_map(v)]

    def refined(self) -> Mesh:
        """Every cell split in two; the P1 space of the result contains this one."""
        return Mesh(self.graph, {k: 2 * n for k, n in self.cells.items()})

    def describe(self) -> str:
        return f"h_max={self.h_max:.6g};dofs={self.n_dofs}"


def cells_for(length: float, h_target: float, n_samples: int = 1) -> int:
    n = max(1, math.ceil(length / h_target - 1e-9))
    return n_samples * math.ceil(n / n_samples)


def build_mesh(graph: MetricGraph, h_target: float, reuse: Mesh | None = None) -> Mesh:
    """Mesh with ``ceil(L/h_target)`` cells per edge, rounded up to a multiple
    of the edge's potential sample count.

    Edges that also exist in ``reuse`` keep its cell counts, which makes the
    meshes of a graph and of a surgically modified graph nested.
    """
    if not h_target > 0:
        raise ValueError("h_target must be positive")
    cells = {}
    for e in graph.edges:
        if reuse is not None and e.id in reuse.cells and reuse.graph.edge(e.id).length == e.length:
            cells[e.id] = reuse.cells[e.id]
        else:
            cells[e.id] = cells_for(e.length, h_target, len(e.potential.samples))
    return Mesh(graph, cells)


@dataclass
class DiscreteProblem:
    A: sp.csr_matrix
    B: sp.csr_matrix
    T: sp.csr_matrix
    mesh: Mesh

    @property
    def reduced_dim(self) -> int:
        return self.T.shape[1]

    def reduced(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        TH = self.T.conj().T
        return (TH @ self.A @ self.T).tocsr(), (TH @ self.B @ self.T).tocsr()


def _null_space(C: np.ndarray, d: int) -> np.ndarray:
    """Orthonormal basis of ``{x : C x = 0}`` via pivoted QR of ``C^H``."""
    if C.shape[0] == 0:
        return np.eye(d, dtype=C.dtype if np.iscomplexobj(C) else float)
    Q, R, _ = sla.qr(C.conj().T, pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > RANK_TOL * max(diag.max(), 1.0))) if diag.size else 0
    return Q[:, rank:]


def assemble(graph: MetricGraph, conditions: Mapping[str, Condition], mesh: Mesh) -> DiscreteProblem:
    """Stiffness + potential + vertex terms, mass, and the constraint basis."""
    if mesh.graph is not graph and mesh.graph != graph:
        raise GraphError("mesh was built for a different graph")
    missing = [v for v in graph.vertices if v not in conditions]
    if missing:
        raise GraphError(f"no condition for vertices {missing}")

    n = mesh.n_dofs
    rows, cols, a_vals, b_vals = [], [], [], []
    for e in graph.edges:
        ne, h, off = mesh.cells[e.id], mesh.width(e.id), mesh.offsets[e.id]
        q = e.potential.cell_values(ne)
        i = off + np.arange(ne)
        j = i + 1
        stiff_diag = 1.0 / h + q * h / 3.0
        stiff_off = -1.0 / h + q * h / 6.0
        for r, c, av, bv in (
            (i, i, stiff_diag, np.full(ne, h / 3.0)),
            (j, j, stiff_diag, np.full(ne, h / 3.0)),
            (i, j, stiff_off, np.full(ne, h / 6.0)),
            (j, i, stiff_off, np.full(ne, h / 6.0)),
        ):
            rows.append(r)
            cols.append(c)
            a_vals.append(av)
            b_vals.append(bv)
    rows = np.concatenate(rows) if rows else np.zeros(0, int)
    cols = np.concatenate(cols) if cols else np.zeros(0, int)
    a_vals = np.concatenate(a_vals) if a_vals else np.zeros(0)
    b_vals = np.concatenate(b_vals) if b_vals else np.zeros(0)

    vertex_blocks = []
    complex_problem = False
    for v in graph.vertices:
        dofs = mesh.vertex_dofs(v)
        d = len(dofs)
        if d == 0:
            continue
        cond = conditions[v]
        M = boundary_matrix(cond, d)
        N = _null_space(form_constraints(cond, d), d)
        complex_problem |= np.iscomplexobj(M) or np.iscomplexobj(N)
        vertex_blocks.append((dofs, M, N))

    dtype = complex if complex_problem else float
    A = sp.coo_matrix((a_vals, (rows, cols)), shape=(n, n), dtype=dtype).tocsr()
    B = sp.coo_matrix((b_vals, (rows, cols)), shape=(n, n), dtype=float).tocsr()

    extra_r, extra_c, extra_v = [], [], []
    t_rows, t_cols, t_vals = [], [], []
    boundary = np.zeros(n, bool)
    for dofs, M, _ in vertex_blocks:
        boundary[dofs] = True
        nz = np.nonzero(M)
        extra_r.extend(np.asarray(dofs)[nz[0]])
        extra_c.extend(np.asarray(dofs)[nz[1]])
        extra_v.extend(M[nz])
    if extra_v:
        A = A + sp.coo_matrix((np.asarray(extra_v, dtype=dtype), (extra_r, extra_c)), shape=(n, n)).tocsr()

    interior = np.flatnonzero(~boundary)
    t_rows.extend(interior)
    t_cols.extend(range(len(interior)))
    t_vals.extend(np.ones(len(interior)))
    col = len(interior)
    for dofs, _, N in vertex_blocks:
        for k in range(N.shape[1]):
            for local, dof in enumerate(dofs):
                if N[local, k] != 0:
                    t_rows.append(dof)
                    t_cols.append(col)
                    t_vals.append(N[local, k])
            col += 1
    # order columns by their first DOF so that an unconstrained problem has T = I
    first = np.full(col, n)
    np.minimum.at(first, np.asarray(t_cols, int), np.asarray(t_rows, int))
    rank = np.empty(col, int)
    rank[np.argsort(first, kind="stable")] = np.arange(col)
    t_cols = rank[np.asarray(t_cols, int)]
    T = sp.coo_matrix((np.asarray(t_vals, dtype=dtype), (t_rows, t_cols)), shape=(n, col)).tocsr()
    return DiscreteProblem(A, B, T, mesh)


def quadratic_form(graph: MetricGraph, conditions: Mapping[str, Condition], mesh: Mesh, u) -> float:
    """Evaluate the continuous form on the P1 function with nodal values ``u``.

    Independent of :func:`assemble`: integrates cell by cell and evaluates the
    vertex terms from the boundary traces.
    """
    u = np.asarray(u)
    total = 0.0
    for e in graph.edges:
        ne, h, off = mesh.cells[e.id], mesh.width(e.id), mesh.offsets[e.id]
        q = e.potential.cell_values(ne)
        for c in range(ne):
            a, b = u[off + c], u[off + c + 1]
            total += abs(b - a) ** 2 / h
            total += q[c] * h / 3.0 * (abs(a) ** 2 + (a * np.conj(b)).real + abs(b) ** 2)
    for v in graph.vertices:
        dofs = mesh.vertex_dofs(v)
        if dofs:
            total += form_contribution(conditions[v], u[dofs])
    return float(total)


@dataclass
class Spectrum:
    eigenvalues: np.ndarray
    error_estimates: np.ndarray
    mesh: str = ""
    clusters: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        self.eigenvalues = np.asarray(self.eigenvalues, dtype=float)
        self.error_estimates = np.asarray(self.error_estimates, dtype=float)
        if not self.clusters:
            self.clusters = cluster_indices(self.eigenvalues)

    def __len__(self):
        return len(self.eigenvalues)

    def cluster_of(self) -> list[int]:
        label = [0] * len(self.eigenvalues)
        for c, members in enumerate(self.clusters):
            for i in members:
                label[i] = c
        return label

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "lambda", "error_estimate", "cluster"])
        for i, (lam, err, c) in enumerate(zip(self.eigenvalues, self.error_estimates, self.cluster_of()), 1):
            w.writerow([i, repr(float(lam)), repr(float(err)), c + 1])
        return buf.getvalue()


def cluster_indices(values, tol: float = CLUSTER_TOL) -> list[list[int]]:
    """Group ascending values whose gap is below ``tol * (1 + |lambda|)``."""
    groups: list[list[int]] = []
    for i, lam in enumerate(values):
        if groups and lam - values[groups[-1][-1]] < tol * (1 + abs(lam)):
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def _lower_bound(A, B) -> float:
    """Crude lower bound on the pencil's spectrum from Gershgorin discs."""
    A = sp.csr_matrix(A)
    B = sp.csr_matrix(B)
    absA = abs(A)
    a_low = (A.diagonal().real - (np.asarray(absA.sum(axis=1)).ravel() - np.abs(A.diagonal()))).min()
    absB = abs(B)
    b_low = (B.diagonal().real - (np.asarray(absB.sum(axis=1)).ravel() - np.abs(B.diagonal()))).min()
    if a_low >= 0:
        return -1.0
    if b_low <= 0:
        raise SolverError("cannot bound the spectrum for a sparse solve")
    return a_low / b_low - 1.0


def count_below(A, B, sigma: float) -> int | None:
    """Number of eigenvalues of the pencil below ``sigma`` (Sylvester inertia).

    Uses an LU factorization restricted to symmetric pivoting, so that the
    signs of ``diag(U)`` are those of an LDL^H factorization. Returns ``None``
    when the factorization had to pivot off the diagonal.
    """
    try:
        lu = spla.splu(sp.csc_matrix(A - sigma * B), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options=dict(SymmetricMode=True))
    except RuntimeError:
        return None  # exactly singular at sigma
    if not np.array_equal(lu.perm_r, lu.perm_c):
        return None
    return int(np.sum(lu.U.diagonal().real < 0))


def _shift_below(A, B) -> float:
    """Shift just under the smallest eigenvalue, tightened by inertia bisection."""
    lo = _lower_bound(A, B)
    hi = 0.0 if lo < 0 else 1.0
    for _ in range(60):
        c = count_below(A, B, hi)
        if c is None:
            return lo
        if c > 0:
            break
        lo, hi = hi, 2 * hi + 1.0
    else:
        return lo
    for _ in range(40):
        if hi - lo <= 1e-2 * (1 + abs(lo)):
            break
        mid = 0.5 * (lo + hi)
        c = count_below(A, B, mid)
        if c is None:
            break
        lo, hi = (mid, hi) if c == 0 else (lo, mid)
    return lo - 1e-3 * (1 + abs(lo))


def solve_spectrum(problem: DiscreteProblem, k: int, tol: float = 1e-8) -> Spectrum:
    """The ``k`` smallest eigenvalues of the reduced pencil, ascending."""
    mesh_desc = problem.mesh.describe()
    if k == 0:
        return Spectrum(np.zeros(0), np.zeros(0), mesh_desc)
    n = problem.reduced_dim
    if k < 0 or k > n:
        raise SolverError(f"requested k={k} eigenvalues but the reduced space has dimension {n}")
    Ar, Br = problem.reduced()
    if n <= DENSE_LIMIT:
        Ad, Bd = Ar.toarray(), Br.toarray()
        Ad = (Ad + Ad.conj().T) / 2
        Bd = (Bd + Bd.conj().T) / 2
        try:
            L = sla.cholesky(Bd, lower=True)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"mass matrix is not positive definite: {exc}") from exc
        X = sla.solve_triangular(L, Ad, lower=True)
        C = sla.solve_triangular(L, X.conj().T, lower=True)
        C = (C + C.conj().T) / 2
        w, Y = sla.eigh(C, subset_by_index=[0, k - 1])
        vecs = sla.solve_triangular(L.conj().T, Y, lower=False)
    else:
        sigma = _shift_below(Ar, Br)
        try:
            w, vecs = spla.eigsh(Ar, k=k, M=Br, sigma=sigma, which="LM")
        except Exception as exc:  # ARPACK raises several unrelated types
            raise SolverError(f"sparse eigensolver failed: {exc}") from exc
        order = np.argsort(w)
        w, vecs = w[order], vecs[:, order]
        missed = count_below(Ar, Br, w[-1] - CLUSTER_TOL * (1 + abs(w[-1])))
        if missed is not None and missed > k - 1:
            raise SolverError("sparse eigensolver skipped eigenvalues below the ones it returned")
        Ad = Bd = None
    scale_a = spla.norm(Ar, 1)
    scale_b = spla.norm(Br, 1)
    for lam, x in zip(w, vecs.T):
        res = np.linalg.norm(Ar @ x - lam * (Br @ x)) / np.linalg.norm(x)
        if res > tol * (scale_a + abs(lam) * scale_b):
            raise SolverError(f"residual {res:.3g} too large for eigenvalue {lam:.6g}")
    log.debug("solved %d eigenvalues on %s", k, mesh_desc)
    return Spectrum(np.asarray(w, dtype=float), np.zeros(k), mesh_desc)


def spectrum(graph: MetricGraph, conditions: Mapping[str, Condition], k: int, h: float = 1 / 200) -> Spectrum:
    mesh = build_mesh(graph, h)
    return solve_spectrum(assemble(graph, conditions, mesh), k)


def richardson(coarse: np.ndarray, fine: np.ndarray, order: int = 2) -> np.ndarray:
    """Extrapolate values computed at widths h and h/2 with error O(h^order)."""
    factor = 2.0**order
    return fine + (fine - coarse) / (factor - 1.0)


def refine_and_extrapolate(
    graph: MetricGraph,
    conditions: Mapping[str, Condition],
    k: int,
    levels: int = 2,
    h0: float = 1 / 200,
    mesh: Mesh | None = None,
) -> Spectrum:
    """Solve on ``levels`` nested meshes (widths halving) and Richardson-extrapolate
    the last two levels, assuming O(h^2) convergence."""
    if levels < 1:
        raise ValueError("levels must be at least 1")
    mesh = mesh or build_mesh(graph, h0)
    spectra = []
    for level in range(levels):
        spectra.append(solve_spectrum(assemble(graph, conditions, mesh), k))
        if level + 1 < levels:
            mesh = mesh.refined()
    last = spectra[-1]
    if levels == 1:
        return last
    extrapolated = richardson(spectra[-2].eigenvalues, last.eigenvalues)
    estimates = np.abs(last.eigenvalues - extrapolated)
    return Spectrum(extrapolated, estimates, f"{last.mesh};levels={levels};extrapolated")
