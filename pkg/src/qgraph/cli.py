"""Command-line entry point: ``qgraph spectrum|surgery|verify|sweep|oracle``.

Exit codes: 0 success, 1 violated eigenvalue direction or failing suite,
2 unreadable input, 3 solver failure, 4 inapplicable surgery.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from qgraph.conditions import ConditionError
from qgraph.fem import SolverError, refine_and_extrapolate
from qgraph.graph import GraphError, read_graph
from qgraph.oracle import OracleError, secular_eigenvalues
from qgraph.surgery import AttachEdge, AttachPendant, SurgeryError, apply, parse_surgery
from qgraph.verify import BRANCHES, EXPLORATORY, SLACK_ABS, InstanceParams, run_suite, run_surgery_case

log = logging.getLogger("qgraph")

EXIT_OK, EXIT_VIOLATION, EXIT_PARSE, EXIT_SOLVER, EXIT_SURGERY = 0, 1, 2, 3, 4
DEFAULT_H = 1 / 200
VERIFY_H = 0.05


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclasses.dataclass(frozen=True)
class RunConfig:
    command: str
    graph: str | None = None
    k: int = 10
    h: float = DEFAULT_H
    levels: int = 2
    out: str = "-"
    jobs: int = 1
    slack: float = SLACK_ABS
    gnuplot: bool = False

    def __post_init__(self):
        if self.k < 0:
            raise CliError(EXIT_PARSE, "--k must be nonnegative")
        if not self.h > 0:
            raise CliError(EXIT_PARSE, "--h must be positive")
        if self.levels < 1:
            raise CliError(EXIT_PARSE, "--levels must be at least 1")
        if self.jobs < 1:
            raise CliError(EXIT_PARSE, "--jobs must be at least 1")


def _load(path):
    try:
        return read_graph(path)
    except OSError as exc:
        raise CliError(EXIT_PARSE, f"cannot read {path}: {exc.strerror or exc}") from None
    except (GraphError, ConditionError) as exc:
        raise CliError(EXIT_PARSE, f"{path}: {exc}") from None


def _parse_op(text):
    try:
        return parse_surgery(text)
    except SurgeryError as exc:
        raise CliError(EXIT_PARSE, str(exc)) from None


def _solve(graph, conds, cfg: RunConfig):
    try:
        return refine_and_extrapolate(graph, conds, cfg.k, cfg.levels, cfg.h)
    except SolverError as exc:
        raise CliError(EXIT_SOLVER, f"solver: {exc}") from None


def _rows_text(header, rows, gnuplot: bool) -> str:
    buf = io.StringIO()
    if gnuplot:
        buf.write("# " + " ".join(header) + "\n")
        for row in rows:
            buf.write(" ".join(str(x) for x in row) + "\n")
        return buf.getvalue()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _emit(text: str, out: str):
    if out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def cmd_spectrum(cfg: RunConfig) -> int:
    graph, conds = _load(cfg.graph)
    spec = _solve(graph, conds, cfg)
    log.info("mesh %s", spec.mesh)
    if cfg.gnuplot:
        rows = [[i, repr(float(v))] for i, v in enumerate(spec.eigenvalues, 1)]
        _emit(_rows_text(["k", "lambda"], rows, True), cfg.out)
    else:
        _emit(spec.to_csv(), cfg.out)
    return EXIT_OK


def cmd_surgery(cfg: RunConfig, surgery: str) -> int:
    graph, conds = _load(cfg.graph)
    op = _parse_op(surgery)
    try:
        report = run_surgery_case(graph, conds, op, cfg.k, cfg.h, cfg.slack)
    except SurgeryError as exc:
        raise CliError(EXIT_SURGERY, f"surgery not applicable: {exc}") from None
    except SolverError as exc:
        raise CliError(EXIT_SOLVER, f"solver: {exc}") from None
    v = report.verdict
    print(f"{report.surgery}: predicted {v.direction.value} ({v.theorem}{' ' + v.case if v.case else ''}), "
          f"observed {report.observed}, {'pass' if report.ok else 'FAIL'}", file=sys.stderr)
    for note in v.notes:
        print(f"  {note}", file=sys.stderr)
    header = ["k", "lambda_before", "lambda_after", "diff", "covered", "pass"]
    rows = [[i, repr(float(b)), repr(float(a)), repr(float(a - b)), int(c), int(p)]
            for i, (b, a, c, p) in enumerate(zip(report.before, report.after, report.covered, report.passed), 1)]
    _emit(_rows_text(header, rows, cfg.gnuplot), cfg.out)
    return EXIT_OK if report.ok else EXIT_VIOLATION


def cmd_verify(cfg: RunConfig, seeds: int, seed_start: int, pool, type_ii_cases) -> int:
    params = InstanceParams(pool=tuple(pool), h=cfg.h, type_ii_cases=tuple(type_ii_cases))
    summary = run_suite(range(seed_start, seed_start + seeds), params, cfg.k, cfg.jobs, cfg.slack)
    _emit(summary.to_csv(), cfg.out)
    print(summary.table(), file=sys.stderr)
    return EXIT_OK if not summary.failures else EXIT_VIOLATION


def parse_values(text: str) -> list[float]:
    """``a,b,c`` or ``start:stop:step`` (stop inclusive); empty text gives no values."""
    text = text.strip()
    if not text:
        return []
    try:
        if ":" in text:
            start, stop, step = (float(x) for x in text.split(":"))
            if step <= 0:
                raise ValueError("step must be positive")
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            return [start + i * step for i in range(max(n, 0))]
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise CliError(EXIT_PARSE, f"bad --values {text!r}: {exc}") from None


def _sweep_point(graph, conds, op, cfg):
    try:
        new_graph, new_conds = apply(op, graph, conds)
    except SurgeryError as exc:
        raise CliError(EXIT_SURGERY, f"surgery not applicable: {exc}") from None
    return _solve(new_graph, new_conds, cfg).eigenvalues


def cmd_sweep(cfg: RunConfig, surgery: str, param: str, values: list[float]) -> int:
    graph, conds = _load(cfg.graph)
    base = _parse_op(surgery)
    if param != "length" or not isinstance(base, (AttachEdge, AttachPendant)):
        raise CliError(EXIT_PARSE, f"cannot sweep {param!r} of {base.describe()}; only the new edge length")
    if any(v <= 0 for v in values):
        raise CliError(EXIT_PARSE, "lengths must be positive")
    ops = [dataclasses.replace(base, length=v) for v in values]
    if cfg.jobs > 1 and len(ops) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            spectra = list(ex.map(_sweep_point, [graph] * len(ops), [conds] * len(ops), ops, [cfg] * len(ops)))
    else:
        spectra = [_sweep_point(graph, conds, op, cfg) for op in ops]
    if cfg.gnuplot:
        header = [param] + [f"lambda{i}" for i in range(1, cfg.k + 1)]
        rows = [[repr(v)] + [repr(float(x)) for x in lam] for v, lam in zip(values, spectra)]
    else:
        header = [param, "k", "lambda"]
        rows = [[repr(v), i, repr(float(x))] for v, lam in zip(values, spectra) for i, x in enumerate(lam, 1)]
    _emit(_rows_text(header, rows, cfg.gnuplot), cfg.out)
    return EXIT_OK


def cmd_oracle(cfg: RunConfig, step: float) -> int:
    graph, conds = _load(cfg.graph)
    try:
        values = secular_eigenvalues(graph, conds, cfg.k, step=step)
    except OracleError as exc:
        raise CliError(EXIT_SOLVER, f"oracle: {exc}") from None
    rows = [[i, repr(float(v))] for i, v in enumerate(values, 1)]
    _emit(_rows_text(["k", "lambda"], rows, cfg.gnuplot), cfg.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--k", type=int, default=10, help="number of eigenvalues (default 10)")
    common.add_argument("--out", default="-", help="output file (default stdout)")
    common.add_argument("--jobs", type=int, default=1, help="parallel workers")
    common.add_argument("--gnuplot-friendly", dest="gnuplot", action="store_true",
                        help="whitespace-separated wide columns with a commented header")

    mesh = argparse.ArgumentParser(add_help=False)
    mesh.add_argument("--h", type=float, default=DEFAULT_H, help="target cell width (default 1/200)")
    mesh.add_argument("--levels", type=int, default=2, help="refinement levels; 2+ extrapolates (default 2)")

    slack = argparse.ArgumentParser(add_help=False)
    slack.add_argument("--slack", type=float, default=SLACK_ABS, help="absolute slack (default 1e-8)")

    p = argparse.ArgumentParser(prog="qgraph", description="Quantum graph spectra and surgery checks.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("spectrum", parents=[common, mesh], help="lowest eigenvalues of a graph file")
    s.add_argument("graph")

    s = sub.add_parser("surgery", parents=[common, mesh, slack], help="compare spectra before and after a surgery")
    s.add_argument("graph")
    s.add_argument("op", help="e.g. 'attach-edge v1 v2 length=0.5' or 'join v1 v2'")

    s = sub.add_parser("verify", parents=[common, slack], help="randomized theorem suite")
    s.add_argument("--seeds", type=int, default=200)
    s.add_argument("--seed-start", type=int, default=0)
    s.add_argument("--h", type=float, default=VERIFY_H, help=f"cell width (default {VERIFY_H})")
    s.add_argument("--pool", default=",".join(BRANCHES),
                   help=f"comma-separated branches from {', '.join(BRANCHES + EXPLORATORY)}")
    s.add_argument("--cases", default="i,ii,iii,iv,v,vi", help="delta-prime join cases to draw")

    s = sub.add_parser("sweep", parents=[common, mesh], help="spectra over a surgery parameter")
    s.add_argument("graph")
    s.add_argument("op")
    s.add_argument("--param", default="length")
    s.add_argument("--values", required=True, help="'a,b,c' or 'start:stop:step'")

    s = sub.add_parser("oracle", parents=[common], help="secular-equation eigenvalues (small graphs, q = 0)")
    s.add_argument("graph")
    s.add_argument("--step", type=float, default=1e-3, help="scan step in sqrt(lambda)")
    return p


def _configure_logging():
    level = os.environ.get("QGRAPH_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig(
            command=args.command,
            graph=getattr(args, "graph", None),
            k=args.k,
            h=getattr(args, "h", DEFAULT_H),
            levels=getattr(args, "levels", 1),
            out=args.out,
            jobs=args.jobs,
            slack=getattr(args, "slack", SLACK_ABS),
            gnuplot=args.gnuplot,
        )
        if args.command == "spectrum":
            return cmd_spectrum(cfg)
        if args.command == "surgery":
            return cmd_surgery(cfg, args.op)
        if args.command == "verify":
            pool = [x.strip() for x in args.pool.split(",") if x.strip()]
            cases = [x.strip() for x in args.cases.split(",") if x.strip()]
            try:
                InstanceParams(pool=tuple(pool))
            except ValueError as exc:
                raise CliError(EXIT_PARSE, str(exc)) from None
            return cmd_verify(cfg, args.seeds, args.seed_start, pool, cases)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.op, args.param, parse_values(args.values))
        return cmd_oracle(cfg, args.step)
    except CliError as exc:
        print(f"qgraph: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
