"""Exact eigenvalues for small potential-free graphs.

These routines do not share code with the finite element path; they are
the reference values the FEM results are checked against.

On every edge a solution of ``-f'' = lam f`` is ``f = a c(x) + b s(x)`` with
``c = cos(sqrt(lam) x)`` and ``s = sin(sqrt(lam) x) / sqrt(lam)`` (``cosh``
and ``sinh`` for ``lam < 0``, ``1`` and ``x`` at ``lam = 0``). Both are
entire in ``lam``, so the secular determinant is a smooth real function
across the whole real line. We scan it on the variable ``t`` with
``lam = t |t|``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np
from scipy import optimize

from qgraph.conditions import Condition, ConditionError, as_general, degree_one_robin
from qgraph.graph import HEAD, MetricGraph

DEFAULT_STEP = 1e-3
DEFAULT_CAP = 200.0
ROOT_XTOL = 1e-12
SINGULAR_TOL = 1e-8
MULTIPLICITY_TOL = 1e-6


class OracleError(RuntimeError):
    """The exact method cannot answer (unsupported input or roots not found)."""


def _cs(lam, x):
    """``c, s, c', s'`` at ``x`` for each ``lam`` (arrays broadcast)."""
    lam = np.asarray(lam, dtype=float)
    root = np.sqrt(np.abs(lam))
    pos = lam > 0
    neg = lam < 0
    rx = root * x
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(pos, np.cos(rx), np.where(neg, np.cosh(rx), 1.0))
        s = np.where(pos, np.sin(rx) / np.where(pos, root, 1.0),
                     np.where(neg, np.sinh(rx) / np.where(neg, root, 1.0), x))
    return c, s, -lam * s, c


def to_lambda(t):
    return t * np.abs(t)


def _scan_roots(
    func: Callable[[np.ndarray], np.ndarray],
    t_lo: float,
    t_hi: float,
    step: float,
    touching: bool,
) -> list[float]:
    """Roots of ``func`` on ``[t_lo, t_hi]`` from sign changes (bisected) and,
    if ``touching``, from local minima of ``|func|`` (candidates only)."""
    n = max(2, int(math.ceil((t_hi - t_lo) / step)) + 1)
    grid = np.linspace(t_lo, t_hi, n)
    if t_lo < 0 < t_hi:
        grid = np.union1d(grid, [0.0])
    vals = func(grid)
    roots = []
    exact = vals == 0
    roots.extend(grid[exact].tolist())
    sign = np.sign(vals)
    for i in np.flatnonzero(sign[:-1] * sign[1:] < 0):
        f = lambda t: float(func(np.array([t]))[0])
        roots.append(optimize.bisect(f, grid[i], grid[i + 1], xtol=ROOT_XTOL))
    if touching:
        a = np.abs(vals)
        inner = np.arange(1, len(grid) - 1)
        mins = inner[(a[inner] <= a[inner - 1]) & (a[inner] <= a[inner + 1]) & ~exact[inner]
                     & (sign[inner - 1] == sign[inner]) & (sign[inner + 1] == sign[inner])]
        roots.extend(("min", grid[i - 1], grid[i + 1]) for i in mins)
    return roots


@dataclass
class SecularProblem:
    """Vertex conditions of a potential-free graph as a determinant in ``lam``.

    Unknowns are ``(a_e, b_e)`` per edge; each vertex of degree d contributes
    the d rows ``(P_D - Lambda) F + (P_N + P_R) F' = 0``.
    """

    graph: MetricGraph
    conditions: Mapping[str, Condition]
    step: float = DEFAULT_STEP
    cap: float = DEFAULT_CAP

    def __post_init__(self):
        g = self.graph
        for e in g.edges:
            if not e.potential.is_zero:
                raise OracleError("the secular method needs zero potentials")
        self._index = {e.id: i for i, e in enumerate(g.edges)}
        self._blocks = []
        self._lambda_norm = 0.0
        for v in g.vertices:
            incs = g.boundary_map(v)
            if not incs:
                continue
            gc = as_general(self.conditions[v], len(incs))
            if not gc.is_real:
                raise OracleError("the secular method supports real vertex conditions only")
            A = (gc.P_D - gc.Lambda).real
            B = (gc.P_N + gc.P_R).real
            self._blocks.append((incs, A, B))
            self._lambda_norm = max(self._lambda_norm, float(np.linalg.norm(gc.Lambda, 2)))
        self.size = 2 * len(g.edges)

    def matrix(self, lam) -> np.ndarray:
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        N = self.size
        M = np.zeros((lam.size, N, N))
        row = 0
        for incs, A, B in self._blocks:
            d = len(incs)
            # value and outward-derivative coefficients of (a_e, b_e) per incidence
            for j, inc in enumerate(incs):
                e = self.graph.edge(inc.edge)
                col = 2 * self._index[inc.edge]
                if inc.end == HEAD:
                    c, s, cp, sp_ = _cs(lam, e.length)
                    val = (c, s)
                    der = (-cp, -sp_)
                else:
                    one, zero = np.ones_like(lam), np.zeros_like(lam)
                    val = (one, zero)
                    der = (zero, one)
                for r in range(d):
                    M[:, row + r, col] += A[r, j] * val[0] + B[r, j] * der[0]
                    M[:, row + r, col + 1] += A[r, j] * val[1] + B[r, j] * der[1]
            row += d
        return M

    def det(self, t) -> np.ndarray:
        return np.linalg.det(self.matrix(to_lambda(np.asarray(t, dtype=float))))

    def multiplicity(self, t: float) -> int:
        sv = np.linalg.svd(self.matrix(to_lambda(t))[0], compute_uv=False)
        return int(np.sum(sv <= MULTIPLICITY_TOL * max(sv[0], 1.0)))

    def smallest_singular_ratio(self, t: float) -> float:
        sv = np.linalg.svd(self.matrix(to_lambda(t))[0], compute_uv=False)
        return float(sv[-1] / max(sv[0], 1.0))

    def negative_bound(self) -> float:
        """Scan depth on the negative side, from a trace-inequality estimate."""
        m = self._lambda_norm
        if m == 0:
            return 1.0
        lmin = min(e.length for e in self.graph.edges)
        return 3.0 * m + 3.0 * math.sqrt(m / lmin) + 1.0

    def _refine_touching(self, a: float, b: float) -> float:
        """Locate a root where the determinant touches zero without changing sign.

        At an even-order root the central difference of det changes sign, so
        it is bisected; otherwise fall back to minimising the singular ratio.
        """
        delta = 1e-6

        def slope(t):
            return float(self.det(np.array([t + delta]))[0] - self.det(np.array([t - delta]))[0])

        if slope(a) * slope(b) < 0:
            return float(optimize.bisect(slope, a, b, xtol=ROOT_XTOL))
        res = optimize.minimize_scalar(self.smallest_singular_ratio, bounds=(a, b),
                                       method="bounded", options={"xatol": ROOT_XTOL})
        return float(res.x)

    def roots(self, t_lo: float, t_hi: float) -> list[tuple[float, int]]:
        """``(lam, multiplicity)`` pairs for ``t`` in ``[t_lo, t_hi]``."""
        found: list[tuple[float, int]] = []
        for cand in _scan_roots(self.det, t_lo, t_hi, self.step, touching=True):
            if isinstance(cand, tuple):
                t = self._refine_touching(cand[1], cand[2])
                if self.smallest_singular_ratio(t) > SINGULAR_TOL:
                    continue
            else:
                t = float(cand)
            mult = max(1, self.multiplicity(t))
            if any(abs(t - u) < 1e-7 for u, _ in found):
                continue
            found.append((t, mult))
        found.sort()
        return [(float(to_lambda(t)), m) for t, m in found]


def secular_eigenvalues(
    graph: MetricGraph,
    conditions: Mapping[str, Condition],
    k: int,
    step: float = DEFAULT_STEP,
    cap: float = DEFAULT_CAP,
    max_edges: int = 3,
) -> np.ndarray:
    """The ``k`` smallest eigenvalues, with multiplicity, of a small potential-free graph."""
    if len(graph.edges) > max_edges:
        raise OracleError(f"secular method limited to {max_edges} edges")
    if not graph.edges:
        raise OracleError("graph has no edges")
    if k <= 0:
        return np.zeros(0)
    prob = SecularProblem(graph, conditions, step, cap)
    for t in np.random.default_rng(0).uniform(0.3, 5.0, 3):
        if prob.smallest_singular_ratio(t) > SINGULAR_TOL:
            break
    else:
        raise OracleError("secular determinant vanishes identically")
    values: list[float] = []
    lo = -prob.negative_bound()
    hi = min(cap, 10.0)
    while True:
        roots = prob.roots(lo, hi)
        values = [lam for lam, m in roots for _ in range(m)]
        if len(values) >= k or hi >= cap:
            break
        hi = min(cap, 2 * hi)
    if len(values) < k:
        raise OracleError(f"found only {len(values)} eigenvalues below the scan cap {cap}^2")
    return np.asarray(values[:k])


def _interval_characteristic(length, left, right):
    """Characteristic function of ``-f''`` on ``[0, length]`` with Robin data.

    ``left``/``right`` are Robin coefficients (``None`` for Dirichlet); the
    outward derivative at each end equals ``alpha`` times the value.
    """

    def g(t):
        lam = to_lambda(np.asarray(t, dtype=float))
        c, s, cp, sp_ = _cs(lam, length)
        if left is None:
            f, fp = s, sp_
        else:
            f, fp = c + left * s, cp + left * sp_
        if right is None:
            return f
        return fp + right * f

    return g


def _robin_data(cond: Condition) -> float | None:
    try:
        return degree_one_robin(cond)
    except ConditionError:
        raise OracleError(f"unsupported end condition {cond!r}") from None


def interval_eigenvalues(length: float, left: Condition, right: Condition, k: int) -> np.ndarray:
    """Lowest ``k`` eigenvalues of ``-d^2/dx^2`` on ``[0, length]``."""
    a, b = _robin_data(left), _robin_data(right)
    if k <= 0:
        return np.zeros(0)
    j = np.arange(1, k + 1)
    if a == 0 and b == 0:
        return ((j - 1) * np.pi / length) ** 2
    if a is None and b is None:
        return (j * np.pi / length) ** 2
    g = _interval_characteristic(length, a, b)
    strength = abs(a or 0.0) + abs(b or 0.0)
    lo = -(strength + math.sqrt(strength / length) + 1.0)
    hi = (k + 1) * np.pi / length + 1.0
    roots = sorted(float(to_lambda(t)) for t in _scan_roots(g, lo, hi, DEFAULT_STEP, touching=False))
    if len(roots) < k:
        raise OracleError("missed interval eigenvalues")
    return np.asarray(roots[:k])


def robin_root(alpha: float) -> float:
    """Smallest eigenvalue on ``[0, 1]`` with ``f'(0) = alpha f(0)`` and ``f'(1) = 0``."""
    if alpha == 0:
        return 0.0
    if alpha > 0:
        # sqrt(lam) tan(sqrt(lam)) = alpha on (0, pi/2)
        r = optimize.brentq(lambda x: x * math.tan(x) - alpha, 0.0, math.pi / 2 - 1e-15, xtol=1e-15)
        return r * r
    # sqrt(mu) tanh(sqrt(mu)) = -alpha, lam = -mu
    upper = abs(alpha) + 2.0
    r = optimize.brentq(lambda x: x * math.tanh(x) + alpha, 0.0, upper, xtol=1e-15)
    return -r * r


def loop_eigenvalues(total_length: float, coupling: str, k: int) -> np.ndarray:
    """Laplacian on a circle of the given length, periodic or anti-periodic."""
    if total_length <= 0:
        raise ValueError("total length must be positive")
    out = []
    if coupling == "periodic":
        out.append(0.0)
        j = 1
        while len(out) < k:
            out.extend([(2 * np.pi * j / total_length) ** 2] * 2)
            j += 1
    elif coupling == "antiperiodic":
        j = 1
        while len(out) < k:
            out.extend([((2 * j - 1) * np.pi / total_length) ** 2] * 2)
            j += 1
    else:
        raise ValueError(f"unknown coupling {coupling!r}")
    return np.asarray(out[:k], dtype=float)


def count_below(graph: MetricGraph, conditions: Mapping[str, Condition], bound: float, step: float = DEFAULT_STEP) -> int:
    """Number of eigenvalues (with multiplicity) strictly below ``bound``."""
    prob = SecularProblem(graph, conditions, step, cap=math.sqrt(bound))
    roots = prob.roots(-prob.negative_bound(), math.sqrt(bound))
    return sum(m for lam, m in roots if lam < bound)
