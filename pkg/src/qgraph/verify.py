"""Before/after spectral comparisons for surgeries and randomized suites.

The meshes of the two graphs are nested: edges shared by both graphs keep
their cells, so the discrete spaces relate exactly as the function spaces in
the monotonicity proofs (extension by zero or by a constant, identical or
nested form domains). The guaranteed inequalities then hold for the
discrete eigenvalues at any resolution, up to eigensolver round-off.
"""

from __future__ import annotations

import csv
import io
import logging
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from qgraph import conditions as vc
from qgraph.conditions import Condition, GeneralCondition, Kind, PermInvariantCondition
from qgraph.fem import Spectrum, assemble, build_mesh, solve_spectrum
from qgraph.graph import Edge, EdgePotential, GraphError, MetricGraph, serialize_graph
from qgraph.surgery import (
    AttachEdge,
    AttachPendant,
    Direction,
    DirectionVerdict,
    JoinVertices,
    SurgeryOp,
    apply,
    expected_direction,
)

log = logging.getLogger(__name__)

SLACK_ABS = 1e-8
SLACK_REL = 1e-8

BRANCHES = ("attach-edge", "attach-pendant", "join-I", "join-II", "join-IIIa", "join-IIIb")
EXPLORATORY = ("attach-edge-any",)
TYPE_II_CASES = ("i", "ii", "iii", "iv", "v", "vi")


@dataclass
class ComparisonReport:
    surgery: str
    verdict: DirectionVerdict
    before: np.ndarray
    after: np.ndarray
    passed: list[bool]
    covered: list[bool]
    slack: tuple[float, float]
    nested: bool = True

    @property
    def diff(self) -> np.ndarray:
        return self.after - self.before

    @property
    def ok(self) -> bool:
        return all(self.passed)

    @property
    def observed(self) -> str:
        tol = self.slack[0] + self.slack[1] * np.abs(self.before)
        up = np.any(self.diff > tol)
        down = np.any(self.diff < -tol)
        if up and down:
            return "mixed"
        if up:
            return "increased"
        if down:
            return "decreased"
        return "unchanged"

    def rows(self, seed="") -> list[list]:
        out = []
        for i, (b, a, p) in enumerate(zip(self.before, self.after, self.passed), 1):
            out.append([seed, self.verdict.theorem, self.verdict.case, i, repr(float(b)), repr(float(a)),
                        repr(float(a - b)), int(p)])
        return out


CSV_HEADER = ["seed", "theorem", "case", "k", "lambda_before", "lambda_after", "diff", "pass"]


def compare_spectra(
    before: Spectrum | Sequence[float],
    after: Spectrum | Sequence[float],
    verdict: DirectionVerdict,
    slack_abs: float = SLACK_ABS,
    slack_rel: float = SLACK_REL,
    k: int | None = None,
    surgery: str = "",
) -> ComparisonReport:
    """Check ``after`` against ``before`` in the direction the verdict predicts.

    ``NO_GUARANTEE`` always passes. Indices outside a verdict's coverage
    (negative eigenvalues under a ``nonnegative_only`` verdict) pass too and
    are reported as uncovered.
    """
    b = np.asarray(getattr(before, "eigenvalues", before), dtype=float)
    a = np.asarray(getattr(after, "eigenvalues", after), dtype=float)
    if k is None:
        if len(a) != len(b):
            raise ValueError(f"spectra have different lengths ({len(b)} vs {len(a)})")
        k = len(b)
    if k > len(a) or k > len(b):
        raise ValueError(f"k={k} exceeds the available eigenvalues")
    b, a = b[:k], a[:k]
    tol = slack_abs + slack_rel * np.abs(b)
    covered = [verdict.direction is not Direction.NO_GUARANTEE and not (verdict.nonnegative_only and lb < 0)
               for lb in b]
    passed = []
    for lb, la, t, cov in zip(b, a, tol, covered):
        if not cov:
            passed.append(True)
        elif verdict.direction is Direction.NON_INCREASING:
            passed.append(bool(la <= lb + t))
        else:
            passed.append(bool(la >= lb - t))
    return ComparisonReport(surgery, verdict, b, a, passed, covered, (slack_abs, slack_rel))


def run_surgery_case(
    graph: MetricGraph,
    conditions: Mapping[str, Condition],
    op: SurgeryOp,
    k: int,
    h: float = 0.1,
    slack_abs: float = SLACK_ABS,
    slack_rel: float = SLACK_REL,
) -> ComparisonReport:
    """Solve before and after ``op`` on nested meshes and compare."""
    new_graph, new_conds = apply(op, graph, conditions)
    verdict = expected_direction(op, conditions)
    mesh = build_mesh(graph, h)
    new_mesh = build_mesh(new_graph, h, reuse=mesh)
    pb, pa = assemble(graph, conditions, mesh), assemble(new_graph, new_conds, new_mesh)
    kk = min(k, pb.reduced_dim, pa.reduced_dim)
    before = solve_spectrum(pb, kk)
    after = solve_spectrum(pa, kk)
    report = compare_spectra(before, after, verdict, slack_abs, slack_rel, surgery=op.describe())
    log.debug("%s: %s, observed %s", op.describe(), verdict.direction.value, report.observed)
    return report


# --- random instances -----------------------------------------------------------


@dataclass(frozen=True)
class InstanceParams:
    pool: tuple[str, ...] = BRANCHES
    max_vertices: int = 4
    max_edges: int = 5
    max_degree: int = 4
    length_range: tuple[float, float] = (0.3, 2.0)
    coef_range: tuple[float, float] = (0.2, 3.0)
    potential_range: tuple[float, float] = (-2.0, 3.0)
    potential_prob: float = 0.5
    general_prob: float = 0.25
    new_length_range: tuple[float, float] = (0.2, 2.0)
    type_ii_cases: tuple[str, ...] = TYPE_II_CASES
    h: float = 0.1

    def __post_init__(self):
        if not self.pool:
            raise ValueError("empty branch pool")
        unknown = set(self.pool) - set(BRANCHES) - set(EXPLORATORY)
        if unknown:
            raise ValueError(f"unknown branches {sorted(unknown)}")


def _coef(rng, params, sign=None) -> float:
    lo, hi = params.coef_range
    mag = rng.uniform(lo, hi)
    if sign is None:
        sign = rng.choice([-1.0, 1.0])
    return float(sign * mag)


def _random_perm_condition(rng, params, kinds=None) -> PermInvariantCondition:
    kinds = kinds or [Kind.IA, Kind.IB, Kind.IIA, Kind.IIB, Kind.IIIA, Kind.IIIB,
                      Kind.DIRICHLET, Kind.NEUMANN, Kind.ROBIN]
    kind = kinds[rng.integers(len(kinds))]
    if kind in (Kind.IB, Kind.IIB, Kind.IIIA, Kind.IIIB, Kind.ROBIN):
        return PermInvariantCondition(kind, _coef(rng, params))
    return PermInvariantCondition(kind)


def random_general_condition(rng, d: int, params: InstanceParams | None = None) -> GeneralCondition:
    """Random projection triple with a random Hermitian coupling on ``ran P_R``."""
    params = params or InstanceParams()
    cplx = rng.random() < 0.5
    Z = rng.standard_normal((d, d))
    if cplx:
        Z = Z + 1j * rng.standard_normal((d, d))
    U, _ = np.linalg.qr(Z)
    cuts = np.sort(rng.integers(0, d + 1, size=2))
    blocks = U[:, : cuts[0]], U[:, cuts[0]: cuts[1]], U[:, cuts[1]:]
    P_D, P_N, P_R = (B @ B.conj().T for B in blocks)
    r = blocks[2].shape[1]
    lam = np.array([_coef(rng, params) for _ in range(r)])
    Lam = blocks[2] @ np.diag(lam) @ blocks[2].conj().T
    Lam = (Lam + Lam.conj().T) / 2
    return GeneralCondition(P_D, P_N, P_R, Lam)


def _random_potential(rng, params, length, nonpositive_integral=False) -> EdgePotential:
    if not nonpositive_integral and rng.random() >= params.potential_prob:
        return EdgePotential()
    m = int(rng.integers(1, 4))
    lo, hi = params.potential_range
    samples = rng.uniform(lo, hi, m)
    if nonpositive_integral and samples.mean() > 0:
        samples = samples - samples.mean() - rng.uniform(0, 0.5)
    return EdgePotential(tuple(float(s) for s in samples))


def _random_graph(rng, params: InstanceParams) -> MetricGraph:
    nv = int(rng.integers(2, params.max_vertices + 1))
    names = [f"v{i + 1}" for i in range(nv)]
    deg = dict.fromkeys(names, 0)
    pairs = []

    def can(a, b):
        extra = 2 if a == b else 1
        return deg[a] + extra <= params.max_degree and (a == b or deg[b] + 1 <= params.max_degree)

    for v in names:
        if deg[v] == 0:
            others = [u for u in names if u != v]
            u = others[rng.integers(len(others))]
            pairs.append((v, u))
            deg[v] += 1
            deg[u] += 1
    target = int(rng.integers(len(pairs), max(len(pairs), params.max_edges) + 1))
    attempts = 0
    while len(pairs) < target and attempts < 50:
        attempts += 1
        a = names[rng.integers(nv)]
        b = a if rng.random() < 0.15 else names[rng.integers(nv)]
        if can(a, b):
            pairs.append((a, b))
            deg[a] += 1
            deg[b] += 1
    lo, hi = params.length_range
    edges = []
    for i, (a, b) in enumerate(pairs, 1):
        length = float(rng.uniform(lo, hi))
        edges.append(Edge(f"e{i}", a, b, length, _random_potential(rng, params, length)))
    return MetricGraph(names, edges)


_PENDANT_SAFE_NEW = [Kind.IA, Kind.NEUMANN, Kind.IB, Kind.ROBIN, Kind.IIB, Kind.IIIB]


def _pendant_new_condition(rng, params, restricted: bool) -> PermInvariantCondition:
    if not restricted:
        return _random_perm_condition(rng, params)
    kind = _PENDANT_SAFE_NEW[rng.integers(len(_PENDANT_SAFE_NEW))]
    if kind in (Kind.IA, Kind.NEUMANN):
        return PermInvariantCondition(kind)
    if kind is Kind.ROBIN and rng.random() < 0.2:
        return vc.robin(0.0)
    if kind is Kind.IIIB:
        return vc.type3b(_coef(rng, params))
    # delta alpha<0, robin alpha<0, delta-prime beta<0: all Robin with nonpositive coefficient at degree one
    return PermInvariantCondition(kind, _coef(rng, params, sign=-1.0))


def _type_ii_betas(rng, params, case: str) -> tuple[float, float]:
    lo, hi = params.coef_range
    a, b = rng.uniform(lo, hi, 2)
    if case == "i":
        return a, b
    if case == "ii":
        return -a, -b
    big, small = max(a, b), min(a, b)
    if big == small:
        big += lo
    if case == "iii":
        pair = (big, -small)
    elif case == "iv":
        pair = (small, -big)
    elif case == "v":
        pair = (a, -a)
    else:
        pair = (0.0, 0.0) if rng.random() < 0.3 else (0.0, float(rng.choice([-1, 1]) * a))
    return pair if rng.random() < 0.5 else pair[::-1]


def random_instance(seed: int, params: InstanceParams | None = None):
    """Reproducible ``(graph, conditions, op)`` satisfying the op's theorem hypotheses."""
    params = params or InstanceParams()
    rng = np.random.default_rng(seed)
    branch = params.pool[rng.integers(len(params.pool))]
    graph = _random_graph(rng, params)
    conds: dict[str, Condition] = {}
    for v in graph.vertices:
        d = graph.degree(v)
        if rng.random() < params.general_prob:
            conds[v] = random_general_condition(rng, d, params)
        else:
            conds[v] = _random_perm_condition(rng, params)
    names = list(graph.vertices)
    i, j = rng.choice(len(names), size=2, replace=False)
    v1, v2 = names[i], names[j]
    lo, hi = params.new_length_range
    new_len = float(rng.uniform(lo, hi))

    if branch in ("attach-edge", "attach-edge-any"):
        kinds = [Kind.IIA, Kind.IIB, Kind.IIIA]
        if branch == "attach-edge-any":
            kinds = [Kind.IA, Kind.IB, Kind.IIA, Kind.IIB, Kind.IIIA, Kind.IIIB]
        conds[v1] = _random_perm_condition(rng, params, kinds)
        conds[v2] = _random_perm_condition(rng, params, kinds)
        op = AttachEdge(v1, v2, new_len, _random_potential(rng, params, new_len))
    elif branch == "attach-pendant":
        kinds = [Kind.IA, Kind.IB, Kind.IIA, Kind.IIB, Kind.IIIA, Kind.IIIB]
        conds[v1] = _random_perm_condition(rng, params, kinds)
        restricted = conds[v1].kind in (Kind.IA, Kind.IB, Kind.IIIB)
        new_cond = _pendant_new_condition(rng, params, restricted)
        pot = _random_potential(rng, params, new_len, nonpositive_integral=restricted)
        op = AttachPendant(v1, new_len, new_cond, pot)
    elif branch == "join-I":
        for v in (v1, v2):
            conds[v] = vc.kirchhoff() if rng.random() < 0.25 else vc.delta(_coef(rng, params))
        op = JoinVertices(v1, v2)
    elif branch == "join-II":
        case = params.type_ii_cases[rng.integers(len(params.type_ii_cases))]
        b1, b2 = _type_ii_betas(rng, params, case)
        conds[v1], conds[v2] = vc.deltaprime(b1), vc.deltaprime(b2)
        op = JoinVertices(v1, v2)
    elif branch == "join-IIIa":
        c = _coef(rng, params)
        conds[v1], conds[v2] = vc.type3a(c), vc.type3a(c)
        op = JoinVertices(v1, v2)
    else:
        dcoef = _coef(rng, params)
        conds[v1], conds[v2] = vc.type3b(dcoef), vc.type3b(dcoef)
        op = JoinVertices(v1, v2)
    return graph, conds, op


# --- suites ------------------------------------------------------------------------


@dataclass
class CaseResult:
    seed: int
    report: ComparisonReport
    graph_text: str


@dataclass
class SuiteSummary:
    results: list[CaseResult] = field(default_factory=list)

    @property
    def cases(self) -> int:
        return len(self.results)

    @property
    def passes(self) -> int:
        return sum(r.report.ok for r in self.results)

    @property
    def failures(self) -> list[CaseResult]:
        return [r for r in self.results if not r.report.ok]

    def tally(self) -> dict[str, tuple[int, int]]:
        """``label -> (cases, passes)`` with labels like ``join-II(iv)``."""
        runs, ok = Counter(), Counter()
        for r in self.results:
            v = r.report.verdict
            label = v.theorem + (f"({v.case})" if v.case else "")
            runs[label] += 1
            ok[label] += r.report.ok
        return {label: (runs[label], ok[label]) for label in sorted(runs)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.results:
            w.writerows(r.report.rows(r.seed))
        return buf.getvalue()

    def table(self) -> str:
        lines = [f"{'theorem':<22} {'cases':>6} {'pass':>6}"]
        for label, (n, p) in self.tally().items():
            lines.append(f"{label:<22} {n:>6} {p:>6}")
        lines.append(f"{'total':<22} {self.cases:>6} {self.passes:>6}")
        for r in self.failures:
            lines.append(f"FAIL seed={r.seed} {r.report.surgery} ({r.report.verdict.direction.value})")
            lines.append(r.graph_text.rstrip())
        return "\n".join(lines)


def _graph_text(graph, conds) -> str:
    try:
        return serialize_graph(graph, conds)
    except GraphError:
        return "# general vertex conditions; replay with the seed\n"


def run_case(seed: int, params: InstanceParams, k: int, slack_abs=SLACK_ABS, slack_rel=SLACK_REL) -> CaseResult:
    graph, conds, op = random_instance(seed, params)
    report = run_surgery_case(graph, conds, op, k, params.h, slack_abs, slack_rel)
    return CaseResult(seed, report, _graph_text(graph, conds) if not report.ok else "")


def run_suite(
    seeds: int | Sequence[int],
    params: InstanceParams | None = None,
    k: int = 6,
    jobs: int = 1,
    slack_abs: float = SLACK_ABS,
    slack_rel: float = SLACK_REL,
) -> SuiteSummary:
    """Run random surgery cases; results are ordered by seed."""
    params = params or InstanceParams()
    seed_list = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    if jobs > 1 and len(seed_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run_case, s, params, k, slack_abs, slack_rel) for s in seed_list]
            results = [f.result() for f in futures]
    else:
        results = [run_case(s, params, k, slack_abs, slack_rel) for s in seed_list]
    return SuiteSummary(results)
