"""Variable metric forward-backward-forward splitting.

Finds a zero of ``A + B`` with ``A`` maximally monotone (given by its
resolvents) and ``B`` monotone and ``beta``-Lipschitz, through

    y_n     = x_n - gamma_n U_n (B x_n + a_n)
    p_n     = J_{gamma_n U_n A} y_n + b_n
    q_n     = p_n - gamma_n U_n (B p_n + c_n)
    x_{n+1} = x_n - y_n + q_n

where ``U_n`` are diagonal metrics with ``(1 + eta_n) U_{n+1} >= U_n`` and
``gamma_n`` lies in ``[eps, (1 - eps) / (beta mu)]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .exceptions import ConfigurationError, DimensionError, DivergenceError, ScheduleViolationError
from .metric import LOEWNER_ATOL, MetricSchedule, as_point
from .operators import LipschitzMonotoneMap, ResolventOracle
from .trace import CertificateReport, IterateTrace, TraceRow

__all__ = [
    "DIVERGENCE_LIMIT",
    "gamma_bounds",
    "ErrorSchedule",
    "geometric_errors",
    "harmonic_errors",
    "errors_from_dict",
    "FbfProblem",
    "FbfConfig",
    "FbfStep",
    "fbf_step",
    "fbf_solve",
    "fejer_certificate",
    "summability_certificate",
    "vi_solve",
    "vi_check",
]

DIVERGENCE_LIMIT = 1e12


def gamma_bounds(beta: float, mu: float, epsilon: float) -> tuple[float, float]:
    """Admissible step interval ``[eps, (1 - eps) / (beta mu)]``.

    Requires ``0 < eps < 1 / (beta mu + 1)``, which makes the interval
    nonempty.
    """
    if not (beta > 0 and mu > 0):
        raise ConfigurationError(f"beta and mu must be > 0, got beta={beta}, mu={mu}")
    if not 0 < epsilon < 1.0 / (beta * mu + 1.0):
        raise ConfigurationError(
            f"epsilon={epsilon} must lie in (0, 1/(beta*mu+1)) = (0, {1.0 / (beta * mu + 1.0)})"
        )
    return epsilon, (1.0 - epsilon) / (beta * mu)


ErrorFn = Callable[[int], np.ndarray]


@dataclass(frozen=True)
class ErrorSchedule:
    """Perturbations ``a_n``, ``b_n``, ``c_n`` injected into the iteration.

    ``None`` slots are identically zero.
    """

    a: ErrorFn | None = None
    b: ErrorFn | None = None
    c: ErrorFn | None = None
    declared_summable: bool = True
    descriptor: dict | None = field(default=None, compare=False)

    @property
    def is_zero(self) -> bool:
        return self.a is None and self.b is None and self.c is None

    def to_dict(self) -> dict:
        if self.is_zero:
            return {"kind": "none"}
        if self.descriptor is None:
            raise NotImplementedError("error schedule has no serializable descriptor")
        return dict(self.descriptor)


def _scaled_direction(direction, rate: Callable[[int], float]) -> ErrorFn:
    d = as_point(direction, name="direction").copy()
    d.setflags(write=False)
    return lambda n: rate(n) * d


def geometric_errors(direction, ratio: float = 0.5, slots: str = "abc") -> ErrorSchedule:
    """``ratio**n * direction`` in the requested slots; absolutely summable."""
    if not 0 <= ratio < 1:
        raise ConfigurationError(f"ratio must lie in [0, 1), got {ratio}")
    fn = _scaled_direction(direction, lambda n: ratio**n)
    desc = {"kind": "geometric", "ratio": ratio, "direction": np.asarray(direction, float).tolist(),
            "slots": "".join(sorted(slots))}
    return ErrorSchedule(*(fn if s in slots else None for s in "abc"), True, desc)


def harmonic_errors(direction, slots: str = "abc") -> ErrorSchedule:
    """``direction / (n + 1)``; not summable, so the convergence theory is silent."""
    fn = _scaled_direction(direction, lambda n: 1.0 / (n + 1))
    desc = {"kind": "harmonic", "direction": np.asarray(direction, float).tolist(),
            "slots": "".join(sorted(slots))}
    return ErrorSchedule(*(fn if s in slots else None for s in "abc"), False, desc)


def errors_from_dict(spec: dict | None, dim: int) -> ErrorSchedule:
    if spec is None or spec.get("kind", "none") == "none":
        return ErrorSchedule()
    kind = spec["kind"]
    direction = spec.get("direction", [1.0] * dim)
    if len(direction) != dim:
        raise DimensionError(f"error direction has dimension {len(direction)}, expected {dim}")
    slots = spec.get("slots", "abc")
    if set(slots) - set("abc"):
        raise ConfigurationError(f"error slots must be a subset of 'abc', got {slots!r}")
    if kind == "geometric":
        return geometric_errors(direction, float(spec.get("ratio", 0.5)), slots)
    if kind == "harmonic":
        return harmonic_errors(direction, slots)
    raise ConfigurationError(f"unknown error schedule kind {kind!r}")


@dataclass(frozen=True)
class FbfProblem:
    """Find ``x`` with ``0 in A x + B x``.

    ``known_zero`` is optional metadata for the certificates; the iteration
    never reads it.
    """

    A: ResolventOracle
    B: LipschitzMonotoneMap
    dim: int
    known_zero: np.ndarray | None = None

    def __post_init__(self):
        if self.B.dim != self.dim:
            raise DimensionError(f"B has dimension {self.B.dim}, problem has {self.dim}")
        if self.A.dim is not None and self.A.dim != self.dim:
            raise DimensionError(f"A has dimension {self.A.dim}, problem has {self.dim}")
        if self.known_zero is not None:
            object.__setattr__(self, "known_zero", as_point(self.known_zero, self.dim, "known_zero"))

    @property
    def beta(self) -> float:
        return self.B.lipschitz_constant


GAMMA_RULES = ("constant", "max_admissible", "table")


@dataclass(frozen=True)
class FbfConfig:
    schedule: MetricSchedule
    epsilon: float = 0.01
    gamma_rule: str = "max_admissible"
    gamma: float | None = None  # for gamma_rule="constant"
    gamma_table: tuple[float, ...] | None = None  # for gamma_rule="table"; last entry repeats
    errors: ErrorSchedule = field(default_factory=ErrorSchedule)
    max_iter: int = 1000
    stop_tol: float = 1e-8
    record_trace: bool = True

    def __post_init__(self):
        if self.gamma_rule not in GAMMA_RULES:
            raise ConfigurationError(f"gamma_rule must be one of {GAMMA_RULES}, got {self.gamma_rule!r}")
        if self.gamma_rule == "constant" and self.gamma is None:
            raise ConfigurationError("gamma_rule='constant' needs gamma")
        if self.gamma_rule == "table":
            if not self.gamma_table:
                raise ConfigurationError("gamma_rule='table' needs a non-empty gamma_table")
            object.__setattr__(self, "gamma_table", tuple(float(g) for g in self.gamma_table))
        if self.max_iter < 0:
            raise ConfigurationError("max_iter must be >= 0")
        if not self.stop_tol >= 0:
            raise ConfigurationError("stop_tol must be >= 0")

    @property
    def mu(self) -> float:
        return self.schedule.mu_bound

    def gamma_at(self, n: int, beta: float) -> float:
        """Step size ``gamma_n``, checked against the admissible interval."""
        lo, hi = gamma_bounds(beta, self.mu, self.epsilon)
        if self.gamma_rule == "max_admissible":
            return hi
        if self.gamma_rule == "constant":
            g = float(self.gamma)
        else:
            g = self.gamma_table[min(n, len(self.gamma_table) - 1)]
        if not lo <= g <= hi:
            raise ConfigurationError(f"gamma_{n}={g} outside admissible interval [{lo}, {hi}]")
        return g


class FbfStep(NamedTuple):
    x_next: np.ndarray
    p: np.ndarray
    y: np.ndarray
    q: np.ndarray


def _errors_at(errors: ErrorSchedule, n: int, dim: int):
    out = []
    for fn in (errors.a, errors.b, errors.c):
        out.append(None if fn is None else as_point(fn(n), dim, "error term"))
    return out


def _tseng(x, gamma, w, A: ResolventOracle, B, a, b, c) -> FbfStep:
    g = B(x) if a is None else B(x) + a
    y = x - gamma * w * g
    p = A.resolve(gamma, w, y)
    if b is not None:
        p = p + b
    g = B(p) if c is None else B(p) + c
    q = p - gamma * w * g
    return FbfStep(x - y + q, p, y, q)


def _check_metric(schedule: MetricSchedule, n: int, w: np.ndarray, w_next: np.ndarray, eta: float):
    if w.max() > schedule.mu_bound:
        j = int(np.argmax(w))
        raise ScheduleViolationError(
            f"U_{n} weight {w[j]} at component {j} exceeds mu_bound {schedule.mu_bound}", n, j)
    if w.min() < schedule.alpha_bound:
        j = int(np.argmin(w))
        raise ScheduleViolationError(
            f"U_{n} weight {w[j]} at component {j} is below alpha_bound {schedule.alpha_bound}", n, j)
    bad = np.flatnonzero((1.0 + eta) * w_next < w - LOEWNER_ATOL)
    if bad.size:
        j = int(bad[0])
        raise ScheduleViolationError(
            f"chain condition (1+eta_{n}) U_{n + 1} >= U_{n} fails at component {j}", n, j)


def fbf_step(x, n: int, problem: FbfProblem, config: FbfConfig) -> FbfStep:
    """One iteration from ``x`` at index ``n``: one resolvent and two ``B`` calls."""
    x = as_point(x, problem.dim)
    s = config.schedule
    if s.dim != problem.dim:
        raise DimensionError(f"schedule has dimension {s.dim}, problem has {problem.dim}")
    w = s.weights(n)
    _check_metric(s, n, w, s.weights(n + 1), float(s.eta(n)))
    gamma = config.gamma_at(n, problem.beta)
    a, b, c = _errors_at(config.errors, n, problem.dim)
    return _tseng(x, gamma, w, problem.A, problem.B, a, b, c)


def _wnorm(w, v):
    return math.sqrt(float(np.sum(w * v * v)))


def fbf_solve(problem: FbfProblem, config: FbfConfig, x0=None) -> IterateTrace:
    """Run the iteration until ``||x_n - p_n|| <= stop_tol`` or ``max_iter`` steps.

    Parameters
    ----------
    problem : FbfProblem
    config : FbfConfig
    x0 : array_like, optional
        Starting point, zero by default.

    Returns
    -------
    IterateTrace
        ``status`` is ``"converged"`` or ``"max_iter"``; ``final_x`` is the
        last iterate computed and ``final_p`` the matching resolvent output.

    Raises
    ------
    ScheduleViolationError
        If the metric schedule breaks its declared bounds or chain condition.
    DivergenceError
        If an iterate becomes non-finite or exceeds ``DIVERGENCE_LIMIT`` in norm.
    """
    dim = problem.dim
    s = config.schedule
    if s.dim != dim:
        raise DimensionError(f"schedule has dimension {s.dim}, problem has {dim}")
    beta, mu = problem.beta, config.mu
    interval = gamma_bounds(beta, mu, config.epsilon)
    x = np.zeros(dim) if x0 is None else as_point(x0, dim, "x0").copy()
    xbar = problem.known_zero
    A, B = problem.A, problem.B
    errors = config.errors

    trace = IterateTrace(
        rows=[], final_x=x, final_p=x, status="max_iter", kind="fbf", beta=beta, mu=mu,
        alpha=s.alpha_bound, gamma_interval=interval, errors_summable=errors.declared_summable,
        errors_present=not errors.is_zero,
    )
    if config.record_trace:
        trace.iterates.append(x.copy())
    cum = 0.0
    w_next = s.weights(0)
    for n in range(config.max_iter):
        w = w_next
        w_next = s.weights(n + 1)
        eta = float(s.eta(n))
        _check_metric(s, n, w, w_next, eta)
        gamma = config.gamma_at(n, beta)
        a, b, c = _errors_at(errors, n, dim)
        step = _tseng(x, gamma, w, A, B, a, b, c)
        r = float(np.linalg.norm(x - step.p))
        if not math.isfinite(r):
            raise DivergenceError(f"non-finite residual at iteration {n}")
        cum += r * r
        if config.record_trace:
            trace.rows.append(TraceRow(
                n=n, gamma=gamma, primal_residual=r,
                yq_residual=float(np.linalg.norm(step.y - step.q)), cum_sq=cum,
                metric_distance=None if xbar is None else _wnorm(1.0 / w, x - xbar),
                eta=eta,
                err_a=0.0 if a is None else _wnorm(w, a),
                err_b=0.0 if b is None else _wnorm(1.0 / w, b),
                err_c=0.0 if c is None else _wnorm(w, c),
            ))
        x = step.x_next
        trace.final_x, trace.final_p = x, step.p
        nx = float(np.linalg.norm(x))
        if not math.isfinite(nx) or nx > DIVERGENCE_LIMIT:
            trace.status = "error"
            raise DivergenceError(f"iterate norm {nx:.3e} exceeds {DIVERGENCE_LIMIT:.0e} at iteration {n}")
        if config.record_trace:
            trace.iterates.append(x.copy())
        if r <= config.stop_tol:
            trace.status = "converged"
            break
    return trace


def _perturbation_bound(row: TraceRow, beta: float, mu: float, alpha: float) -> float:
    # eps_n = sqrt(mu/alpha) (2(||b_n|| + ||a_n||/(beta mu)) + ||c_n||/(beta mu) + ||a_n||/(beta mu))
    k = 1.0 / (beta * mu)
    return math.sqrt(mu / alpha) * (2.0 * (row.err_b + k * row.err_a) + k * row.err_c + k * row.err_a)


def fejer_certificate(trace: IterateTrace, problem: FbfProblem, config: FbfConfig,
                      atol: float = 1e-10) -> CertificateReport:
    """Check the quasi-Fejer inequality along a recorded run.

    For every recorded step,
    ``||x_{n+1} - xbar||_{U_{n+1}^-1} <= (1 + eta_n) ||x_n - xbar||_{U_n^-1} + eps_n + atol``
    where ``eps_n`` is the perturbation bound built from the measured error
    norms (zero for an error-free run). Distances are recomputed from the
    stored iterates.
    """
    if problem.known_zero is None:
        raise ValueError("fejer_certificate needs problem.known_zero")
    if len(trace.iterates) != len(trace.rows) + 1:
        raise ValueError("trace must be recorded with iterates (record_trace=True)")
    s = config.schedule
    xbar = problem.known_zero
    beta, mu, alpha = problem.beta, s.mu_bound, s.alpha_bound
    dist = [_wnorm(1.0 / s.weights(k), xk - xbar) for k, xk in enumerate(trace.iterates)]
    failures = []
    worst = -math.inf
    for row in trace.rows:
        n = row.n
        bound = (1.0 + row.eta) * dist[n] + _perturbation_bound(row, beta, mu, alpha)
        excess = dist[n + 1] - bound
        worst = max(worst, excess)
        if excess > atol:
            failures.append(f"n={n}: {dist[n + 1]:.17g} > {bound:.17g}")
    checked = len(trace.rows)
    passed = not failures
    summary = f"{checked} steps checked, worst excess {worst:.3e}" if checked else "no steps recorded"
    return CertificateReport(
        "fejer", passed, checked, summary,
        values={"distances": dist, "worst_excess": worst if checked else 0.0},
        failures=failures[:20],
    )


def summability_certificate(trace: IterateTrace) -> CertificateReport:
    """Cumulative squared stopping residual and its second-half tail.

    Flags suspected divergence when the tail exceeds half the total. The
    check is a heuristic, and makes no claim when the injected errors were
    declared non-summable. Traces shorter than 10 rows are reported but
    marked inconclusive.
    """
    sq = trace.stopping_residuals()
    total = float(sq.sum())
    N = sq.size
    tail = float(sq[N // 2:].sum())
    frac = tail / total if total > 0 else 0.0
    values = {"total": total, "tail": tail, "tail_fraction": frac, "declared_summable": trace.errors_summable,
              "conclusive": N >= 10}
    if not trace.errors_summable:
        return CertificateReport("summability", None, N,
                                 f"errors declared non-summable; total={total:.6g}, tail fraction={frac:.3g}",
                                 values)
    passed = frac <= 0.5
    summary = f"total={total:.6g}, tail fraction={frac:.3g}"
    if N < 10:
        summary += " (fewer than 10 iterations, inconclusive)"
    failures = [] if passed else ["tail exceeds half of the total: suspected divergence"]
    return CertificateReport("summability", passed, N, summary, values, failures)


def vi_check(f: ResolventOracle, B: LipschitzMonotoneMap, xbar, probes: int = 100, seed: int = 0,
             slack: float = 1e-6) -> CertificateReport:
    """Test ``<xbar - y, B xbar> + f(xbar) <= f(y)`` at random probe points ``y``.

    Probes outside ``dom f`` are mapped back through the proximity operator
    of ``f`` so indicator functions are tested on their domain.
    """
    xbar = as_point(xbar, B.dim, "xbar")
    rng = np.random.default_rng(seed)
    Bx = B(xbar)
    fx = f.value(xbar)
    if not math.isfinite(fx):
        return CertificateReport("vi", False, 0, "candidate lies outside dom f", {"max_violation": math.inf},
                                 ["f(xbar) is infinite"])
    spread = 1.0 + float(np.linalg.norm(xbar))
    ones = np.ones(B.dim)
    worst = -math.inf
    failures = []
    for k in range(probes):
        y = xbar + spread * rng.standard_normal(B.dim)
        fy = f.value(y)
        if not math.isfinite(fy):
            y = f.resolve(1.0, ones, y)
            fy = f.value(y)
        gap = float((xbar - y) @ Bx) + fx - fy
        worst = max(worst, gap)
        if gap > slack:
            failures.append(f"probe {k}: violation {gap:.3e}")
    passed = not failures
    return CertificateReport("vi", passed, probes, f"max violation {worst:.3e} over {probes} probes",
                             {"max_violation": worst}, failures[:20])


def vi_solve(f: ResolventOracle, B: LipschitzMonotoneMap, config: FbfConfig, x0=None,
             probes: int = 100, seed: int = 0, slack: float = 1e-6) -> IterateTrace:
    """Solve the variational inequality ``<x - y, Bx> + f(x) <= f(y)`` for all ``y``.

    Runs the error-free iteration with ``A = df``; for diagonal metrics the
    resolvent step is the separable prox of ``f`` in the ``U_n^{-1}`` metric.
    The result is checked against random probes and stored under
    ``trace.reports["vi"]``; the check uses ``final_p``, which lies in
    ``dom f`` by construction.
    """
    if not config.errors.is_zero:
        raise ConfigurationError("the variational inequality solver runs without injected errors")
    problem = FbfProblem(f, B, B.dim)
    trace = fbf_solve(problem, config, x0)
    trace.kind = "vi"
    trace.reports["vi"] = vi_check(f, B, trace.final_p, probes, seed, slack)
    return trace
