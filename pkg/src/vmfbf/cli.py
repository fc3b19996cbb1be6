"""Command-line front end: run a config, write the CSV trace and a text report.

Exit codes: 0 when the run converged, 2 when it stopped at ``max_iter``,
1 on any error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .exceptions import VmfbfError
from .fbf import fbf_solve, fejer_certificate, summability_certificate, vi_solve
from .primal_dual import PdState, assemble_product, equivalence_check, kkt_residual, pd_solve
from .trace import CSV_COLUMNS, CertificateReport, IterateTrace

__all__ = ["RunResult", "write_trace_csv", "execute", "run", "compare", "main"]

log = logging.getLogger(__name__)

CERTIFICATES = ("fejer", "summability", "kkt", "equivalence")
EXIT_CONVERGED, EXIT_ERROR, EXIT_MAX_ITER = 0, 1, 2


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_trace_csv(trace: IterateTrace, path) -> None:
    """Columns ``n,gamma,primal_residual,dual_residual,metric_distance,cum_sq``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in trace.rows:
            w.writerow([_fmt(r.n), _fmt(r.gamma), _fmt(r.primal_residual), _fmt(r.dual_residual),
                        _fmt(r.metric_distance), _fmt(r.cum_sq)])


@dataclass
class RunResult:
    exit_code: int
    trace: IterateTrace | None
    certificates: list[CertificateReport] = field(default_factory=list)
    report: str = ""
    error: str | None = None
    state: PdState | None = None
    trace_path: Path | None = None
    report_path: Path | None = None


def _exit_code(status: str) -> int:
    return {"converged": EXIT_CONVERGED, "max_iter": EXIT_MAX_ITER}.get(status, EXIT_ERROR)


def _certify(cfg: RunConfig, trace: IterateTrace, state, wanted: set[str]) -> list[CertificateReport]:
    out = []
    if "summability" in wanted:
        out.append(summability_certificate(trace))
    if "fejer" in wanted:
        if cfg.problem_type == "pd":
            fp, fc = assemble_product(cfg.problem, cfg.solver, trace.beta)
        else:
            fp, fc = cfg.problem, cfg.solver
        if fp.known_zero is None:
            out.append(CertificateReport("fejer", None, 0, "no known solution in the config"))
        elif not cfg.solver.record_trace:
            out.append(CertificateReport("fejer", None, 0, "trace not recorded"))
        else:
            out.append(fejer_certificate(trace, fp, fc))
    if "kkt" in wanted:
        if cfg.problem_type == "pd":
            res = kkt_residual(state, cfg.problem, trace.beta)
            tol = 10 * max(cfg.solver.stop_tol, 1e-12)
            out.append(CertificateReport("kkt", res <= tol, 1, f"residual {res:.3e} (threshold {tol:.1e})",
                                         {"residual": res}))
        else:
            out.append(CertificateReport("kkt", None, 0, "only defined for primal-dual problems"))
    if "equivalence" in wanted:
        if cfg.problem_type == "pd":
            steps = max(1, min(200, trace.iterations))
            x0 = cfg.x0
            dev = equivalence_check(cfg.problem, cfg.solver, steps, x0, cfg.v0)
            scale = 1.0 + max(float(np.linalg.norm(u)) for u in trace.iterates[: steps + 1]) \
                if trace.iterates else 1.0
            tol = 1e-12 * scale
            out.append(CertificateReport("equivalence", dev <= tol, steps,
                                         f"max deviation {dev:.3e} over {steps} steps (threshold {tol:.1e})",
                                         {"deviation": dev}))
        else:
            out.append(CertificateReport("equivalence", None, 0, "only defined for primal-dual problems"))
    return out


def _report_text(cfg: RunConfig, trace: IterateTrace | None, certs, error: str | None, state=None) -> str:
    lines = [f"run: {cfg.name}", f"problem type: {cfg.problem_type}"]
    if error is not None:
        lines += ["status: error", f"message: {error}"]
        return "\n".join(lines) + "\n"
    lines.append(f"status: {trace.status}")
    lines.append(f"iterations: {trace.iterations}")
    lines.append(f"final primal residual: {_fmt(trace.final_residual)}")
    if trace.kind == "pd" and trace.rows:
        lines.append(f"final dual residual: {_fmt(trace.rows[-1].dual_residual)}")
    lines.append(f"beta: {_fmt(trace.beta)}")
    lines.append(f"mu: {_fmt(trace.mu)}")
    lo, hi = trace.gamma_interval
    lines.append(f"gamma interval: [{_fmt(lo)}, {_fmt(hi)}]")
    if state is not None:
        lines.append("final x: " + " ".join(_fmt(v) for v in state.x))
        for i, v in enumerate(state.v):
            lines.append(f"final v[{i}]: " + " ".join(_fmt(c) for c in v))
    else:
        lines.append("final x: " + " ".join(_fmt(v) for v in trace.final_x))
    if "vi" in trace.reports:
        lines.append(trace.reports["vi"].line())
    for c in certs:
        lines.append(c.line())
    return "\n".join(lines) + "\n"


def execute(cfg: RunConfig, certify: set[str] | None = None) -> RunResult:
    """Run a parsed config in memory. Solver errors become exit code 1."""
    certify = set(CERTIFICATES) if certify is None else set(certify)
    state = None
    try:
        if cfg.problem_type == "pd":
            state, trace = pd_solve(cfg.problem, cfg.solver, cfg.x0, cfg.v0)
        elif cfg.problem_type == "vi":
            trace = vi_solve(cfg.problem.A, cfg.problem.B, cfg.solver, cfg.x0, seed=cfg.seed)
        else:
            trace = fbf_solve(cfg.problem, cfg.solver, cfg.x0)
        certs = _certify(cfg, trace, state, certify)
    except VmfbfError as exc:
        log.error("run %s failed: %s", cfg.name, exc)
        return RunResult(EXIT_ERROR, None, [], _report_text(cfg, None, [], str(exc)), error=str(exc))
    code = _exit_code(trace.status)
    return RunResult(code, trace, certs, _report_text(cfg, trace, certs, None, state), state=state)


def run(cfg: RunConfig, out_dir=".", certify: set[str] | None = None) -> RunResult:
    """Execute ``cfg`` and write ``<stem>.trace.csv`` and ``<stem>.report.txt`` under ``out_dir``."""
    result = execute(cfg, certify)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = cfg.output or cfg.name
    result.report_path = out / f"{stem}.report.txt"
    result.report_path.write_text(result.report)
    if result.trace is not None:
        result.trace_path = out / f"{stem}.trace.csv"
        write_trace_csv(result.trace, result.trace_path)
    return result


def _problem_section(cfg: RunConfig) -> dict:
    d = cfg.to_dict()["problem"]
    d.pop("x0", None)
    d.pop("v0", None)
    return d


def compare(cfg_a: RunConfig, cfg_b: RunConfig, out_dir=None, certify: set[str] | None = None):
    """Run two configs of the same problem and tabulate their residuals side by side.

    Returns ``(report_text, result_a, result_b)``. Raises ``ValueError`` when
    the configs describe different problems.
    """
    if cfg_a.problem_type != cfg_b.problem_type or _problem_section(cfg_a) != _problem_section(cfg_b):
        raise ValueError(f"configs {cfg_a.name!r} and {cfg_b.name!r} describe different problems")
    if out_dir is None:
        ra, rb = execute(cfg_a, certify), execute(cfg_b, certify)
    else:
        ra, rb = run(cfg_a, out_dir, certify), run(cfg_b, out_dir, certify)
    lines = [f"compare: {cfg_a.name} vs {cfg_b.name}"]
    for cfg, r in ((cfg_a, ra), (cfg_b, rb)):
        if r.trace is None:
            lines.append(f"{cfg.name}: error ({r.error})")
        else:
            lines.append(f"{cfg.name}: status {r.trace.status}, iterations {r.trace.iterations}")
    if ra.trace is not None and rb.trace is not None:
        dist = float(np.linalg.norm(ra.trace.final_x - rb.trace.final_x))
        lines.append(f"final iterate distance: {_fmt(dist)}")
        lines.append("n,residual_a,residual_b,ratio")
        for row_a, row_b in zip(ra.trace.rows, rb.trace.rows):
            sa = math.hypot(row_a.primal_residual, row_a.dual_residual or 0.0)
            sb = math.hypot(row_b.primal_residual, row_b.dual_residual or 0.0)
            ratio = sa / sb if sb > 0 else (1.0 if sa == 0 else math.inf)
            lines.append(f"{row_a.n},{_fmt(sa)},{_fmt(sb)},{_fmt(ratio)}")
    text = "\n".join(lines) + "\n"
    if out_dir is not None:
        Path(out_dir, f"{cfg_a.output or cfg_a.name}_vs_{cfg_b.output or cfg_b.name}.compare.txt").write_text(text)
    return text, ra, rb


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vmfbf", description="Run variable metric FBF / primal-dual solvers.")
    p.add_argument("--config", required=True, type=Path, help="JSON run configuration")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
    p.add_argument("--max-iter", type=int, help="override solver.max_iter")
    p.add_argument("--tol", type=float, help="override solver.stop_tol")
    p.add_argument("--certify", action="append", choices=(*CERTIFICATES, "all"),
                   help="certificates to report (repeatable; default: summability)")
    p.add_argument("--compare", type=Path, metavar="PATH2", help="second config to compare against")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    certify = set(args.certify or ["summability"])
    if "all" in certify:
        certify = set(CERTIFICATES)
    try:
        cfg = load_config(args.config).with_overrides(args.max_iter, args.tol)
        if args.compare is not None:
            cfg_b = load_config(args.compare).with_overrides(args.max_iter, args.tol)
            text, ra, rb = compare(cfg, cfg_b, args.out, certify)
            sys.stdout.write(text)
            codes = {ra.exit_code, rb.exit_code}
            return EXIT_ERROR if EXIT_ERROR in codes else max(codes)
        result = run(cfg, args.out, certify)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    sys.stdout.write(result.report)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
