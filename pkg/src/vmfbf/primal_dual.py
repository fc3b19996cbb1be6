"""Primal-dual splitting for structured monotone inclusions.

Solves the primal inclusion

    z in A x + sum_i L_i^* ((B_i [] D_i)(L_i x - r_i)) + C x

together with its dual in the variables ``v_1, ..., v_m``, where ``[]`` is
the parallel sum. The iteration (:func:`pd_step`) is the forward-backward-
forward method applied on the direct sum ``H + G_1 + ... + G_m``;
:func:`assemble_product` builds that product-space problem explicitly so
the two routes can be cross-checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .exceptions import ConfigurationError, DimensionError, DivergenceError
from .fbf import (
    DIVERGENCE_LIMIT,
    ErrorSchedule,
    FbfConfig,
    FbfProblem,
    _check_metric,
    _errors_at,
    fbf_step,
    gamma_bounds,
)
from .metric import MetricSchedule, as_point, block_schedule, constant_schedule
from .operators import LinearMap, LipschitzMonotoneMap, ResolventOracle, operator_norm_bound
from .trace import IterateTrace, TraceRow

__all__ = [
    "DualBlock",
    "StructuredProblem",
    "PdState",
    "PdConfig",
    "PdStep",
    "ProductResolvent",
    "beta_compute",
    "pd_step",
    "pd_solve",
    "assemble_product",
    "equivalence_check",
    "kkt_residual",
]


@dataclass(frozen=True)
class DualBlock:
    """One coupling term ``L^* ((B [] D)(L x - r))``; ``D`` enters through ``D^{-1}``."""

    L: LinearMap
    B: ResolventOracle
    D_inv: LipschitzMonotoneMap
    r: np.ndarray | None = None

    def __post_init__(self):
        L = self.L if isinstance(self.L, LinearMap) else LinearMap(self.L)
        object.__setattr__(self, "L", L)
        r = np.zeros(L.out_dim) if self.r is None else as_point(self.r, L.out_dim, "r")
        object.__setattr__(self, "r", r)

    @property
    def dim(self) -> int:
        return self.L.out_dim

    @property
    def nu(self) -> float:
        return self.D_inv.lipschitz_constant


@dataclass(frozen=True)
class StructuredProblem:
    A: ResolventOracle
    C: LipschitzMonotoneMap
    blocks: tuple[DualBlock, ...]
    z: np.ndarray | None = None
    known_solution: tuple[np.ndarray, tuple[np.ndarray, ...]] | None = None

    def __post_init__(self):
        blocks = tuple(self.blocks)
        if not blocks:
            raise ValueError("at least one dual block is required")
        object.__setattr__(self, "blocks", blocks)
        n = self.C.dim
        if self.A.dim is not None and self.A.dim != n:
            raise DimensionError(f"A has dimension {self.A.dim}, C has {n}")
        for i, blk in enumerate(blocks):
            if blk.L.in_dim != n:
                raise DimensionError(f"blocks[{i}].L has {blk.L.in_dim} columns, expected {n}")
            if blk.L.is_zero:
                raise ValueError(f"blocks[{i}].L must be nonzero")
            if blk.D_inv.dim != blk.dim:
                raise DimensionError(f"blocks[{i}].D_inv has dimension {blk.D_inv.dim}, expected {blk.dim}")
            if blk.B.dim is not None and blk.B.dim != blk.dim:
                raise DimensionError(f"blocks[{i}].B has dimension {blk.B.dim}, expected {blk.dim}")
        z = np.zeros(n) if self.z is None else as_point(self.z, n, "z")
        object.__setattr__(self, "z", z)

    @property
    def dim(self) -> int:
        return self.C.dim

    @property
    def m(self) -> int:
        return len(self.blocks)

    @property
    def dual_dims(self) -> list[int]:
        return [b.dim for b in self.blocks]

    @property
    def total_dim(self) -> int:
        return self.dim + sum(self.dual_dims)


class PdState(NamedTuple):
    x: np.ndarray
    v: tuple[np.ndarray, ...]

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.x, *self.v])

    @classmethod
    def unstack(cls, vec: np.ndarray, dim: int, dual_dims: Sequence[int]) -> "PdState":
        parts = np.split(np.asarray(vec, dtype=float), np.cumsum([dim, *dual_dims])[:-1])
        return cls(parts[0], tuple(parts[1:]))

    @classmethod
    def zeros(cls, problem: StructuredProblem) -> "PdState":
        return cls(np.zeros(problem.dim), tuple(np.zeros(d) for d in problem.dual_dims))


@dataclass(frozen=True)
class PdConfig:
    primal_schedule: MetricSchedule
    dual_schedules: tuple[MetricSchedule, ...]
    epsilon: float = 0.01
    gamma_rule: str = "max_admissible"
    gamma: float | None = None
    gamma_table: tuple[float, ...] | None = None
    primal_errors: ErrorSchedule = field(default_factory=ErrorSchedule)  # a_1, b_1, c_1
    dual_errors: tuple[ErrorSchedule, ...] | None = None  # a_{2,i}, b_{2,i}, c_{2,i}
    max_iter: int = 1000
    stop_tol: float = 1e-8
    record_trace: bool = True

    def __post_init__(self):
        object.__setattr__(self, "dual_schedules", tuple(self.dual_schedules))
        if self.dual_errors is None:
            object.__setattr__(self, "dual_errors", tuple(ErrorSchedule() for _ in self.dual_schedules))
        else:
            object.__setattr__(self, "dual_errors", tuple(self.dual_errors))
        if len(self.dual_errors) != len(self.dual_schedules):
            raise ConfigurationError("need one dual error schedule per dual block")
        # reuse FbfConfig's validation of the step rule
        self._as_fbf(self.primal_schedule)

    @classmethod
    def identity(cls, problem: StructuredProblem, **kwargs) -> "PdConfig":
        """Config with ``U_n = Id`` on every space."""
        return cls(constant_schedule(np.ones(problem.dim)),
                   tuple(constant_schedule(np.ones(d)) for d in problem.dual_dims), **kwargs)

    @property
    def mu(self) -> float:
        return max(s.mu_bound for s in (self.primal_schedule, *self.dual_schedules))

    @property
    def errors_summable(self) -> bool:
        return all(e.declared_summable for e in (self.primal_errors, *self.dual_errors))

    @property
    def errors_present(self) -> bool:
        return not all(e.is_zero for e in (self.primal_errors, *self.dual_errors))

    def _as_fbf(self, schedule: MetricSchedule, errors: ErrorSchedule | None = None) -> FbfConfig:
        return FbfConfig(
            schedule=schedule, epsilon=self.epsilon, gamma_rule=self.gamma_rule, gamma=self.gamma,
            gamma_table=self.gamma_table, errors=errors or ErrorSchedule(), max_iter=self.max_iter,
            stop_tol=self.stop_tol, record_trace=self.record_trace,
        )

    def gamma_at(self, n: int, beta: float) -> float:
        lo, hi = gamma_bounds(beta, self.mu, self.epsilon)
        if self.gamma_rule == "max_admissible":
            return hi
        g = float(self.gamma) if self.gamma_rule == "constant" else \
            self.gamma_table[min(n, len(self.gamma_table) - 1)]
        if not lo <= g <= hi:
            raise ConfigurationError(f"gamma_{n}={g} outside admissible interval [{lo}, {hi}]")
        return g

    def check_dims(self, problem: StructuredProblem):
        if self.primal_schedule.dim != problem.dim:
            raise DimensionError(f"primal schedule has dimension {self.primal_schedule.dim}, expected {problem.dim}")
        if len(self.dual_schedules) != problem.m:
            raise DimensionError(f"{len(self.dual_schedules)} dual schedules for {problem.m} blocks")
        for i, (s, d) in enumerate(zip(self.dual_schedules, problem.dual_dims)):
            if s.dim != d:
                raise DimensionError(f"dual_schedules[{i}] has dimension {s.dim}, expected {d}")


def beta_compute(problem: StructuredProblem, norm_tol: float = 1e-10) -> float:
    """``max(nu_0, ..., nu_m) + sqrt(sum_i ||L_i||^2)`` with safe norm over-estimates."""
    if not norm_tol > 0:
        raise ValueError("norm_tol must be > 0")
    nus = [problem.C.lipschitz_constant] + [b.nu for b in problem.blocks]
    sq = 0.0
    for i, b in enumerate(problem.blocks):
        if b.L.is_zero:
            raise ValueError(f"blocks[{i}].L must be nonzero")
        sq += operator_norm_bound(b.L, norm_tol) ** 2
    return max(nus) + math.sqrt(sq)


class PdStep(NamedTuple):
    state: PdState
    p1: np.ndarray
    p2: tuple[np.ndarray, ...]
    y1: np.ndarray
    q1: np.ndarray
    y2: tuple[np.ndarray, ...]
    q2: tuple[np.ndarray, ...]


def _adjoint_sum(problem: StructuredProblem, vs) -> np.ndarray:
    # fixed summation order i = 1..m
    total = problem.blocks[0].L.adjoint(vs[0])
    for blk, v in zip(problem.blocks[1:], vs[1:]):
        total = total + blk.L.adjoint(v)
    return total


def _pd_iteration(problem: StructuredProblem, state: PdState, gamma: float, w0: np.ndarray,
                  ws: Sequence[np.ndarray], errs0, errs) -> PdStep:
    x, vs = state
    a1, b1, c1 = errs0
    A, C = problem.A, problem.C

    g = C(x) + _adjoint_sum(problem, vs)
    if a1 is not None:
        g = g + a1
    y1 = x - gamma * w0 * g
    p1 = A.resolve(gamma, w0, y1 + gamma * w0 * problem.z)
    if b1 is not None:
        p1 = p1 + b1

    y2s, p2s, q2s, v_next = [], [], [], []
    for blk, v, w, (a2, b2, c2) in zip(problem.blocks, vs, ws, errs):
        h = blk.L.apply(x) - blk.D_inv(v)
        if a2 is not None:
            h = h + a2
        y2 = v + gamma * w * h
        p2 = blk.B.inverse_resolve(gamma, w, y2 - gamma * w * blk.r)
        if b2 is not None:
            p2 = p2 + b2
        h = blk.L.apply(p1) - blk.D_inv(p2)
        if c2 is not None:
            h = h + c2
        q2 = p2 + gamma * w * h
        y2s.append(y2)
        p2s.append(p2)
        q2s.append(q2)
        v_next.append(v - y2 + q2)

    g = C(p1) + _adjoint_sum(problem, p2s)
    if c1 is not None:
        g = g + c1
    q1 = p1 - gamma * w0 * g
    x_next = x - y1 + q1
    return PdStep(PdState(x_next, tuple(v_next)), p1, tuple(p2s), y1, q1, tuple(y2s), tuple(q2s))


def _coerce_state(problem: StructuredProblem, state) -> PdState:
    x, vs = state
    if len(vs) != problem.m:
        raise DimensionError(f"state has {len(vs)} dual blocks, problem has {problem.m}")
    return PdState(as_point(x, problem.dim, "x"),
                   tuple(as_point(v, d, f"v[{i}]") for i, (v, d) in enumerate(zip(vs, problem.dual_dims))))


def _metrics_at(config: PdConfig, n: int, check: bool = True):
    scheds = (config.primal_schedule, *config.dual_schedules)
    ws = []
    for s in scheds:
        w = s.weights(n)
        if check:
            _check_metric(s, n, w, s.weights(n + 1), float(s.eta(n)))
        ws.append(w)
    return ws[0], ws[1:]


def _pd_errors_at(problem: StructuredProblem, config: PdConfig, n: int):
    errs0 = _errors_at(config.primal_errors, n, problem.dim)
    errs = [_errors_at(e, n, d) for e, d in zip(config.dual_errors, problem.dual_dims)]
    return errs0, errs


def pd_step(state, n: int, problem: StructuredProblem, config: PdConfig, beta: float | None = None) -> PdStep:
    """One primal-dual iteration.

    Uses one resolvent of ``A``, one resolvent of ``B_i^{-1}`` per block,
    two evaluations of ``C`` and of each ``D_i^{-1}``, and two applications
    of each ``L_i`` and ``L_i^*``.
    """
    state = _coerce_state(problem, state)
    config.check_dims(problem)
    beta = beta_compute(problem) if beta is None else beta
    gamma = config.gamma_at(n, beta)
    w0, ws = _metrics_at(config, n)
    errs0, errs = _pd_errors_at(problem, config, n)
    return _pd_iteration(problem, state, gamma, w0, ws, errs0, errs)


def _stacked_error_norms(problem, wfull, errs0, errs):
    # ||a||_U, ||b||_{U^-1}, ||c||_U of the product-space error vectors
    dims = [problem.dim, *problem.dual_dims]
    out = []
    for k, power in ((0, 1.0), (1, -1.0), (2, 1.0)):
        parts = [np.zeros(d) if e[k] is None else e[k] for e, d in zip((errs0, *errs), dims)]
        vec = np.concatenate(parts)
        out.append(math.sqrt(float(np.sum(wfull**power * vec * vec))))
    return out


def pd_solve(problem: StructuredProblem, config: PdConfig, x0=None, v0=None,
             beta: float | None = None) -> tuple[PdState, IterateTrace]:
    """Iterate :func:`pd_step` until every block residual is below ``stop_tol``.

    The stopping quantity is ``max(||x_n - p_{1,n}||, max_i ||v_{i,n} - p_{2,i,n}||)``.
    The trace records the primal residual, the dual residual
    ``sqrt(sum_i ||v_{i,n} - p_{2,i,n}||^2)`` and their cumulative squared sum;
    ``iterates`` holds stacked ``(x_n, v_{1,n}, ..., v_{m,n})`` vectors.

    Returns
    -------
    state : PdState
        The last computed iterate ``(x_N, v_N)``.
    trace : IterateTrace
    """
    config.check_dims(problem)
    beta = beta_compute(problem) if beta is None else beta
    mu = config.mu
    interval = gamma_bounds(beta, mu, config.epsilon)
    state = PdState.zeros(problem)
    if x0 is not None or v0 is not None:
        state = _coerce_state(problem, (state.x if x0 is None else x0, state.v if v0 is None else v0))
    known = None
    if problem.known_solution is not None:
        known = _coerce_state(problem, problem.known_solution).stacked()
    alpha = min(s.alpha_bound for s in (config.primal_schedule, *config.dual_schedules))

    trace = IterateTrace(
        rows=[], final_x=state.stacked(), final_p=state.stacked(), status="max_iter", kind="pd",
        beta=beta, mu=mu, alpha=alpha, gamma_interval=interval,
        errors_summable=config.errors_summable, errors_present=config.errors_present,
    )
    if config.record_trace:
        trace.iterates.append(state.stacked())
    cum = 0.0
    for n in range(config.max_iter):
        gamma = config.gamma_at(n, beta)
        w0, ws = _metrics_at(config, n)
        errs0, errs = _pd_errors_at(problem, config, n)
        step = _pd_iteration(problem, state, gamma, w0, ws, errs0, errs)
        r1 = float(np.linalg.norm(state.x - step.p1))
        r2s = [float(np.linalg.norm(v - p2)) for v, p2 in zip(state.v, step.p2)]
        r2 = math.sqrt(sum(r * r for r in r2s))
        if not (math.isfinite(r1) and math.isfinite(r2)):
            raise DivergenceError(f"non-finite residual at iteration {n}")
        cum += r1 * r1 + r2 * r2
        if config.record_trace:
            cur = state.stacked()
            wfull = np.concatenate([w0, *ws])
            yq = np.concatenate([step.y1 - step.q1, *(y - q for y, q in zip(step.y2, step.q2))])
            ea, eb, ec = _stacked_error_norms(problem, wfull, errs0, errs)
            trace.rows.append(TraceRow(
                n=n, gamma=gamma, primal_residual=r1, dual_residual=r2,
                yq_residual=float(np.linalg.norm(yq)), cum_sq=cum,
                metric_distance=None if known is None else
                math.sqrt(float(np.sum((cur - known) ** 2 / wfull))),
                eta=max(float(s.eta(n)) for s in (config.primal_schedule, *config.dual_schedules)),
                err_a=ea, err_b=eb, err_c=ec,
            ))
        state = step.state
        trace.final_p = np.concatenate([step.p1, *step.p2])
        stacked = state.stacked()
        trace.final_x = stacked
        nx = float(np.linalg.norm(stacked))
        if not math.isfinite(nx) or nx > DIVERGENCE_LIMIT:
            trace.status = "error"
            raise DivergenceError(f"iterate norm {nx:.3e} exceeds {DIVERGENCE_LIMIT:.0e} at iteration {n}")
        if config.record_trace:
            trace.iterates.append(stacked)
        if max(r1, max(r2s)) <= config.stop_tol:
            trace.status = "converged"
            break
    return state, trace


class ProductResolvent(ResolventOracle):
    """Blockwise resolvent of ``(x, v) -> (-z + A x) x (r_1 + B_1^{-1} v_1) x ...``."""

    kind = "product"

    def __init__(self, problem: StructuredProblem):
        self.problem = problem
        self.dim = problem.total_dim
        self._splits = np.cumsum([problem.dim, *problem.dual_dims])[:-1]

    def _split(self, arr):
        return np.split(np.broadcast_to(arr, (self.dim,)), self._splits)

    def resolve(self, gamma, w, y):
        pr = self.problem
        wx, *wv = self._split(w)
        yx, *yv = self._split(y)
        parts = [pr.A.resolve(gamma, wx, yx + gamma * wx * pr.z)]
        for blk, wi, yi in zip(pr.blocks, wv, yv):
            parts.append(blk.B.inverse_resolve(gamma, wi, yi - gamma * wi * blk.r))
        return np.concatenate(parts)

    def contains(self, p, a, tol=1e-9):
        pr = self.problem
        px, *pv = self._split(p)
        ax, *av = self._split(a)
        if not pr.A.contains(px, ax + pr.z, tol):
            return False
        # a_i in r_i + B_i^{-1} p_i  <=>  p_i in B_i(a_i - r_i)
        return all(blk.B.contains(ai - blk.r, pi, tol) for blk, pi, ai in zip(pr.blocks, pv, av))


def _stack_errors(problem: StructuredProblem, config: PdConfig) -> ErrorSchedule:
    """Product-space error sequences.

    The dual lines carry ``+gamma U_i (L_i x - D_i^{-1} v_i + a_{2,i})`` while
    the product operator is ``D_i^{-1} v_i - L_i x``, so the ``a`` and ``c``
    slots of the dual blocks enter with a flipped sign.
    """
    if not config.errors_present:
        return ErrorSchedule()
    dims = [problem.dim, *problem.dual_dims]
    sources = (config.primal_errors, *config.dual_errors)

    def slot(name: str, sign_dual: float):
        fns = [getattr(e, name) for e in sources]
        if all(f is None for f in fns):
            return None

        def fn(n: int) -> np.ndarray:
            parts = []
            for k, (f, d) in enumerate(zip(fns, dims)):
                if f is None:
                    parts.append(np.zeros(d))
                else:
                    val = np.asarray(f(n), dtype=float)
                    parts.append(val if k == 0 else sign_dual * val)
            return np.concatenate(parts)
        return fn

    return ErrorSchedule(slot("a", -1.0), slot("b", 1.0), slot("c", -1.0),
                         declared_summable=config.errors_summable)


def assemble_product(problem: StructuredProblem, config: PdConfig,
                     beta: float | None = None) -> tuple[FbfProblem, FbfConfig]:
    """The equivalent forward-backward-forward problem on ``K = H + G_1 + ... + G_m``.

    ``B(x, v) = (C x + sum_i L_i^* v_i, D_1^{-1} v_1 - L_1 x, ...)`` is
    monotone and ``beta``-Lipschitz with ``beta`` from :func:`beta_compute`;
    the metric is block diagonal and the errors are stacked.
    """
    config.check_dims(problem)
    beta = beta_compute(problem) if beta is None else beta
    splits = np.cumsum([problem.dim, *problem.dual_dims])[:-1]

    def apply(u: np.ndarray) -> np.ndarray:
        x, *vs = np.split(u, splits)
        parts = [problem.C(x) + _adjoint_sum(problem, vs)]
        for blk, v in zip(problem.blocks, vs):
            parts.append(blk.D_inv(v) - blk.L.apply(x))
        return np.concatenate(parts)

    B = LipschitzMonotoneMap(apply, beta, problem.total_dim)
    known = None
    if problem.known_solution is not None:
        known = _coerce_state(problem, problem.known_solution).stacked()
    fp = FbfProblem(ProductResolvent(problem), B, problem.total_dim, known)
    schedule = block_schedule((config.primal_schedule, *config.dual_schedules))
    return fp, config._as_fbf(schedule, _stack_errors(problem, config))


def equivalence_check(problem: StructuredProblem, config: PdConfig, n_steps: int,
                      x0=None, v0=None) -> float:
    """Largest deviation between the primal-dual iterates and the product-space iterates.

    Both routes start from the same point and use the same steps and
    errors; the result is ``max_n ||(x_n, v_n) - X_n||`` over ``n_steps``.
    """
    beta = beta_compute(problem)
    fp, fc = assemble_product(problem, config, beta)
    state = PdState.zeros(problem)
    if x0 is not None or v0 is not None:
        state = _coerce_state(problem, (state.x if x0 is None else x0, state.v if v0 is None else v0))
    X = state.stacked()
    worst = 0.0
    for n in range(n_steps):
        state = pd_step(state, n, problem, config, beta).state
        X = fbf_step(X, n, fp, fc).x_next
        worst = max(worst, float(np.linalg.norm(state.stacked() - X)))
    return worst


def kkt_residual(state, problem: StructuredProblem, beta: float | None = None) -> float:
    """Fixed-point residual of one exact step with ``U = Id`` and ``gamma = 1/(2 beta)``.

    Returns ``||state_next - state|| + ||x - p_1|| + sqrt(sum_i ||v_i - p_{2,i}||^2)``,
    which vanishes exactly at primal-dual solutions.
    """
    state = _coerce_state(problem, state)
    beta = beta_compute(problem) if beta is None else beta
    gamma = 1.0 / (2.0 * beta)  # mu = 1 for the identity metric
    w0 = np.ones(problem.dim)
    ws = [np.ones(d) for d in problem.dual_dims]
    none3 = (None, None, None)
    step = _pd_iteration(problem, state, gamma, w0, ws, none3, [none3] * problem.m)
    move = float(np.linalg.norm(step.state.stacked() - state.stacked()))
    gap1 = float(np.linalg.norm(state.x - step.p1))
    gap2 = math.sqrt(sum(float(np.sum((v - p) ** 2)) for v, p in zip(state.v, step.p2)))
    return move + gap1 + gap2
