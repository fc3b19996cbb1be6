"""Monotone operators, their resolvents, and linear maps.

Maximally monotone operators are represented only through their scaled
resolvents ``J_{gamma U A}`` for diagonal ``U``; this is everything the
splitting algorithms evaluate. Every catalog entry also knows how to check
the graph membership ``a in A p`` in closed form, which is what the
resolvent contract tests rely on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import ConvergenceError, DimensionError, NumericalError
from .metric import DiagonalMetric, as_point

__all__ = [
    "ResolventOracle",
    "ZeroOperator",
    "L1Subdifferential",
    "BoxNormalCone",
    "QuadraticGradient",
    "SupportAbs",
    "CustomSeparable",
    "SCALAR_FUNCTIONS",
    "resolvent_scaled",
    "inverse_resolvent_scaled",
    "moreau_inverse_resolvent",
    "oracle_from_dict",
    "LinearMap",
    "LipschitzMonotoneMap",
    "linear_monotone_map",
    "zero_map",
    "map_from_dict",
    "operator_norm",
    "operator_norm_bound",
    "ProbeReport",
    "monotonicity_probe",
]


def _soft(y, t):
    return np.sign(y) * np.maximum(np.abs(y) - t, 0.0)


class ResolventOracle:
    """A maximally monotone operator ``A`` given through its resolvents.

    Subclasses implement :meth:`resolve`, i.e. the unique ``p`` with
    ``y in p + gamma * diag(w) * A(p)``, and :meth:`contains`. The resolvent
    of the inverse operator defaults to the metric Moreau identity
    ``J_{gamma U A^-1}(y) = y - gamma U J_{(gamma U)^-1 A}((gamma U)^-1 y)``.
    """

    kind = "abstract"
    #: fixed dimension, or ``None`` for coordinatewise operators of any size
    dim: int | None = None

    def resolve(self, gamma: float, w: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def inverse_resolve(self, gamma: float, w: np.ndarray, y: np.ndarray) -> np.ndarray:
        return moreau_inverse_resolvent(self, gamma, w, y)

    def contains(self, p: np.ndarray, a: np.ndarray, tol: float = 1e-9) -> bool:
        """Whether ``a`` lies in ``A(p)`` up to ``tol`` (componentwise)."""
        raise NotImplementedError

    def value(self, x: np.ndarray) -> float:
        """``f(x)`` when this operator is the subdifferential of ``f``."""
        raise NotImplementedError(f"{self.kind} has no associated function")

    def to_dict(self) -> dict:
        raise NotImplementedError(f"{self.kind} cannot be serialized")


def moreau_inverse_resolvent(A: ResolventOracle, gamma: float, w: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Resolvent of ``A^{-1}`` through the resolvent of ``A``.

    ``p = y - t * J_{t^{-1} A}(y / t)`` with ``t = gamma * w`` taken
    componentwise; valid for any diagonal positive ``w``.
    """
    t = gamma * w
    return y - t * A.resolve(1.0, 1.0 / t, y / t)


class ZeroOperator(ResolventOracle):
    """``A = 0``; the subdifferential of the zero function."""

    kind = "zero"

    def resolve(self, gamma, w, y):
        return np.array(y, dtype=float)

    def inverse_resolve(self, gamma, w, y):
        # A^-1 is the normal cone at the origin
        return np.zeros_like(y, dtype=float)

    def contains(self, p, a, tol=1e-9):
        return bool(np.all(np.abs(a) <= tol))

    def value(self, x):
        return 0.0

    def to_dict(self):
        return {"kind": "zero"}

    def __repr__(self):
        return "ZeroOperator()"


@dataclass(frozen=True, eq=False, repr=False)
class L1Subdifferential(ResolventOracle):
    """``A = d(sum_j weight_j |x_j|)``; the resolvent is soft thresholding."""

    weight: float | np.ndarray = 1.0
    kind = "l1"

    def __post_init__(self):
        if np.any(np.asarray(self.weight) < 0):
            raise ValueError("l1 weight must be >= 0")

    def resolve(self, gamma, w, y):
        return _soft(y, gamma * w * self.weight)

    def inverse_resolve(self, gamma, w, y):
        # the inverse is the normal cone of [-weight, weight]
        return np.clip(y, -self.weight, self.weight)

    def contains(self, p, a, tol=1e-9):
        wt = np.broadcast_to(np.asarray(self.weight, dtype=float), np.shape(p))
        if np.any(np.abs(a) > wt + tol):
            return False
        nz = p != 0
        return bool(np.all(np.abs(a[nz] - wt[nz] * np.sign(p[nz])) <= tol))

    def value(self, x):
        return float(np.sum(self.weight * np.abs(x)))

    def to_dict(self):
        return {"kind": "l1", "weight": np.asarray(self.weight).tolist()}

    def __repr__(self):
        return f"L1Subdifferential(weight={np.asarray(self.weight).tolist()})"


def _box_contains(lo, hi, p, a, tol):
    lo = np.broadcast_to(np.asarray(lo, dtype=float), np.shape(p))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), np.shape(p))
    if np.any(p < lo - tol) or np.any(p > hi + tol):
        return False
    at_lo = p <= lo + tol
    at_hi = p >= hi - tol
    interior = ~at_lo & ~at_hi
    ok = np.ones(np.shape(p), dtype=bool)
    ok[interior] = np.abs(a[interior]) <= tol
    only_hi = at_hi & ~at_lo
    only_lo = at_lo & ~at_hi
    ok[only_hi] = a[only_hi] >= -tol
    ok[only_lo] = a[only_lo] <= tol
    return bool(np.all(ok))


def _box_indicator(lo, hi, x, tol=1e-12):
    return 0.0 if np.all(x >= np.asarray(lo) - tol) and np.all(x <= np.asarray(hi) + tol) else math.inf


@dataclass(frozen=True, eq=False, repr=False)
class BoxNormalCone(ResolventOracle):
    """Normal cone of the box ``[lo, hi]``; the resolvent is the projection."""

    lo: float | np.ndarray = 0.0
    hi: float | np.ndarray = 1.0
    kind = "box"

    def __post_init__(self):
        if np.any(np.asarray(self.lo) > np.asarray(self.hi)):
            raise ValueError("box requires lo <= hi")

    def resolve(self, gamma, w, y):
        return np.clip(y, self.lo, self.hi)

    def inverse_resolve(self, gamma, w, y):
        # prox of t * sigma_[lo,hi], sigma(s) = hi*s for s > 0 and lo*s for s < 0
        t = gamma * w
        with np.errstate(invalid="ignore"):
            up = y - t * self.hi
            down = y - t * self.lo
            return np.where(y > t * self.hi, up, np.where(y < t * self.lo, down, 0.0))

    def contains(self, p, a, tol=1e-9):
        return _box_contains(self.lo, self.hi, p, a, tol)

    def value(self, x):
        return _box_indicator(self.lo, self.hi, x)

    def to_dict(self):
        return {"kind": "box", "lo": np.asarray(self.lo).tolist(), "hi": np.asarray(self.hi).tolist()}

    def __repr__(self):
        return f"BoxNormalCone(lo={np.asarray(self.lo).tolist()}, hi={np.asarray(self.hi).tolist()})"


@dataclass(frozen=True, eq=False, repr=False)
class SupportAbs(ResolventOracle):
    """``(d weight|.|)^{-1}``, the normal cone of ``[-weight, weight]``.

    This is the dual partner of :class:`L1Subdifferential`: the two swap
    their direct and inverse resolvents.
    """

    weight: float | np.ndarray = 1.0
    kind = "support_abs"

    def __post_init__(self):
        if np.any(np.asarray(self.weight) < 0):
            raise ValueError("support_abs weight must be >= 0")

    def resolve(self, gamma, w, y):
        return np.clip(y, -self.weight, self.weight)

    def inverse_resolve(self, gamma, w, y):
        return _soft(y, gamma * w * self.weight)

    def contains(self, p, a, tol=1e-9):
        wt = np.asarray(self.weight, dtype=float)
        return _box_contains(-wt, wt, p, a, tol)

    def value(self, x):
        wt = np.asarray(self.weight, dtype=float)
        return _box_indicator(-wt, wt, x)

    def to_dict(self):
        return {"kind": "support_abs", "weight": np.asarray(self.weight).tolist()}

    def __repr__(self):
        return f"SupportAbs(weight={np.asarray(self.weight).tolist()})"


@dataclass(frozen=True, eq=False, repr=False)
class QuadraticGradient(ResolventOracle):
    """Affine monotone ``A(x) = Q x - b`` (gradient of ``x'Qx/2 - b'x`` when ``Q`` is symmetric)."""

    Q: np.ndarray
    b: np.ndarray | None = None
    kind = "quadratic"

    def __post_init__(self):
        Q = np.array(self.Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
            raise DimensionError(f"Q must be square, got shape {Q.shape}")
        sym = 0.5 * (Q + Q.T)
        if np.linalg.eigvalsh(sym).min() < -1e-12 * max(1.0, np.abs(Q).max()):
            raise ValueError("Q must be monotone (Q + Q^T positive semidefinite)")
        b = np.zeros(Q.shape[0]) if self.b is None else as_point(self.b, Q.shape[0], "b").copy()
        Q.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "b", b)

    @property
    def dim(self):
        return self.Q.shape[0]

    def resolve(self, gamma, w, y):
        t = gamma * np.broadcast_to(w, y.shape)
        lhs = np.eye(self.dim) + t[:, None] * self.Q
        return np.linalg.solve(lhs, y + t * self.b)

    def inverse_resolve(self, gamma, w, y):
        # s = (y - p)/t solves (Q + diag(t)) s = y + b
        t = gamma * np.broadcast_to(w, y.shape)
        s = np.linalg.solve(self.Q + np.diag(t), y + self.b)
        return y - t * s

    def contains(self, p, a, tol=1e-9):
        return bool(np.all(np.abs(self.Q @ p - self.b - a) <= tol * (1.0 + np.abs(a))))

    def value(self, x):
        return float(0.5 * x @ self.Q @ x - self.b @ x)

    def to_dict(self):
        return {"kind": "quadratic", "Q": self.Q.tolist(), "b": self.b.tolist()}

    def __repr__(self):
        return f"QuadraticGradient(Q={self.Q.tolist()}, b={self.b.tolist()})"


#: nondecreasing scalar functions usable by name in config files
SCALAR_FUNCTIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "cubic": lambda s: s**3,
    "tanh": np.tanh,
    "arctan": np.arctan,
    "sign": np.sign,
    "relu": lambda s: np.maximum(s, 0.0),
    "identity": lambda s: s,
}


@dataclass(frozen=True, eq=False, repr=False)
class CustomSeparable(ResolventOracle):
    """Coordinatewise operator from a nondecreasing scalar function ``g``.

    The resolvent solves ``p + t g(p) = y`` per coordinate by bisection. The
    residual is nondecreasing in ``p`` so bisection also lands on the right
    point across jumps of ``g`` (the maximal monotone extension fills them).
    """

    func: Callable[[np.ndarray], np.ndarray]
    name: str | None = None
    tol: float = 1e-12
    max_bisect: int = 400
    kind = "custom_separable"

    def resolve(self, gamma, w, y):
        y = np.asarray(y, dtype=float)
        t = gamma * np.broadcast_to(w, y.shape)
        g = self.func

        def resid(p):
            return p + t * g(p) - y

        width = 10.0 * (1.0 + np.abs(y))
        lo, hi = y - width, y + width
        for _ in range(64):
            bad_lo = resid(lo) > 0
            bad_hi = resid(hi) < 0
            if not (bad_lo.any() or bad_hi.any()):
                break
            lo = np.where(bad_lo, lo - 2.0 * (hi - lo), lo)
            hi = np.where(bad_hi, hi + 2.0 * (hi - lo), hi)
        else:
            j = int(np.flatnonzero(bad_lo | bad_hi)[0])
            raise NumericalError(f"could not bracket the scalar resolvent at component {j}", j)
        scale = np.maximum(1.0, np.abs(y))
        # every step halves the bracket, so the step count is known in advance
        ratio = float(np.max((hi - lo) / (self.tol * scale)))
        steps = max(0, math.ceil(math.log2(ratio))) if ratio > 1 else 0
        for _ in range(min(steps, self.max_bisect)):
            mid = 0.5 * (lo + hi)
            below = resid(mid) <= 0
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        if steps > self.max_bisect:
            j = int(np.argmax((hi - lo) / scale))
            if not hi[j] - lo[j] <= 4 * np.spacing(scale[j]):
                raise NumericalError(f"bisection did not converge at component {j}", j)
        return 0.5 * (lo + hi)

    def contains(self, p, a, tol=1e-9):
        d = 1e-7 * (1.0 + np.abs(p))
        left = self.func(p - d)
        right = self.func(p + d)
        return bool(np.all((a >= left - tol * (1 + np.abs(a))) & (a <= right + tol * (1 + np.abs(a)))))

    def to_dict(self):
        if self.name is None or self.name not in SCALAR_FUNCTIONS:
            raise NotImplementedError("only named scalar functions can be serialized")
        return {"kind": "custom_separable", "function": self.name}

    def __repr__(self):
        return f"CustomSeparable(name={self.name!r})"


def _check_resolvent_args(A: ResolventOracle, gamma, U: DiagonalMetric, y):
    if not gamma > 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    y = as_point(y, U.dim, "y")
    if A.dim is not None and A.dim != U.dim:
        raise DimensionError(f"operator has dimension {A.dim}, metric has {U.dim}")
    return y


def resolvent_scaled(A: ResolventOracle, gamma: float, U: DiagonalMetric, y) -> np.ndarray:
    """``J_{gamma U A}(y)``: the unique ``p`` with ``y in p + gamma U A(p)``."""
    y = _check_resolvent_args(A, gamma, U, y)
    return A.resolve(gamma, U.weights, y)


def inverse_resolvent_scaled(B: ResolventOracle, gamma: float, U: DiagonalMetric, y) -> np.ndarray:
    """``J_{gamma U B^{-1}}(y)``, i.e. ``p`` with ``p in B((y - p) / (gamma U))``."""
    y = _check_resolvent_args(B, gamma, U, y)
    return B.inverse_resolve(gamma, U.weights, y)


def oracle_from_dict(spec: dict, dim: int | None = None) -> ResolventOracle:
    """Catalog lookup for config files: ``{"kind": ..., <parameters>}``."""
    kind = spec.get("kind") if isinstance(spec, dict) else None
    if kind == "zero":
        op = ZeroOperator()
    elif kind == "l1":
        op = L1Subdifferential(_param(spec.get("weight", 1.0), dim, "weight"))
    elif kind == "box":
        op = BoxNormalCone(_param(spec.get("lo", 0.0), dim, "lo"), _param(spec.get("hi", 1.0), dim, "hi"))
    elif kind == "support_abs":
        op = SupportAbs(_param(spec.get("weight", 1.0), dim, "weight"))
    elif kind == "quadratic":
        op = QuadraticGradient(spec["Q"], spec.get("b"))
        if dim is not None and op.dim != dim:
            raise DimensionError(f"Q has dimension {op.dim}, expected {dim}")
    elif kind == "custom_separable":
        name = spec.get("function")
        if name not in SCALAR_FUNCTIONS:
            raise ValueError(f"unknown scalar function {name!r}; choose from {sorted(SCALAR_FUNCTIONS)}")
        op = CustomSeparable(SCALAR_FUNCTIONS[name], name)
    else:
        raise ValueError(f"unknown operator kind {kind!r}")
    return op


def _param(value, dim, name):
    if np.ndim(value) == 0:
        return float(value)
    arr = np.asarray(value, dtype=float)
    if arr.ndim != 1 or (dim is not None and arr.size != dim):
        raise DimensionError(f"{name} has shape {arr.shape}, expected ({dim},)")
    return arr


@dataclass(frozen=True, eq=False)
class LinearMap:
    """Dense bounded linear map ``H -> G`` with its adjoint (the transpose)."""

    matrix: np.ndarray

    def __post_init__(self):
        M = np.array(self.matrix, dtype=float)
        if M.ndim == 0:
            M = M.reshape(1, 1)
        if M.ndim != 2:
            raise DimensionError(f"matrix must be 2-D, got shape {M.shape}")
        if not np.all(np.isfinite(M)):
            raise ValueError("matrix contains non-finite entries")
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)

    @property
    def in_dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def out_dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_zero(self) -> bool:
        return not np.any(self.matrix)

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        return self.matrix.T @ y

    __call__ = apply

    def to_list(self) -> list:
        return self.matrix.tolist()


@dataclass(frozen=True, eq=False)
class LipschitzMonotoneMap:
    """Single-valued monotone map with a declared Lipschitz constant."""

    apply: Callable[[np.ndarray], np.ndarray]
    lipschitz_constant: float
    dim: int
    descriptor: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.lipschitz_constant > 0:
            raise ValueError(f"lipschitz_constant must be > 0, got {self.lipschitz_constant}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.apply(x)

    def to_dict(self) -> dict:
        if self.descriptor is None:
            raise NotImplementedError("map has no serializable descriptor")
        return dict(self.descriptor)


def linear_monotone_map(matrix, offset=None, lipschitz: float | None = None) -> LipschitzMonotoneMap:
    """``x -> M x + offset``. The Lipschitz constant defaults to a safe ``||M||``.

    A zero matrix gets constant 1.0, since any positive number bounds it.
    """
    L = LinearMap(matrix)
    if L.in_dim != L.out_dim:
        raise DimensionError(f"monotone map must be square, got {L.matrix.shape}")
    M = L.matrix
    if np.linalg.eigvalsh(0.5 * (M + M.T)).min() < -1e-12 * max(1.0, float(np.abs(M).max())):
        raise ValueError("matrix is not monotone (M + M^T is not positive semidefinite)")
    c = None if offset is None else as_point(offset, L.in_dim, "offset").copy()
    if lipschitz is None:
        lipschitz = 1.0 if L.is_zero else operator_norm_bound(L)
    if c is None:
        def apply(x):
            return M @ x
    else:
        def apply(x):
            return M @ x + c
    desc = {"kind": "linear", "matrix": M.tolist(), "lipschitz": float(lipschitz)}
    if c is not None:
        desc["offset"] = c.tolist()
    return LipschitzMonotoneMap(apply, float(lipschitz), L.in_dim, desc)


def zero_map(dim: int, lipschitz: float = 1.0) -> LipschitzMonotoneMap:
    return LipschitzMonotoneMap(
        lambda x: np.zeros_like(x), float(lipschitz), dim, {"kind": "zero", "dim": dim, "lipschitz": lipschitz}
    )


def map_from_dict(spec: dict, dim: int | None = None) -> LipschitzMonotoneMap:
    kind = spec.get("kind") if isinstance(spec, dict) else None
    if kind == "zero":
        d = spec.get("dim", dim)
        if d is None:
            raise DimensionError("zero map needs a dimension")
        m = zero_map(int(d), float(spec.get("lipschitz", 1.0)))
    elif kind == "linear":
        m = linear_monotone_map(spec["matrix"], spec.get("offset"), spec.get("lipschitz"))
    else:
        raise ValueError(f"unknown map kind {kind!r}")
    if dim is not None and m.dim != dim:
        raise DimensionError(f"map has dimension {m.dim}, expected {dim}")
    return m


def _power_iteration(M: np.ndarray, v: np.ndarray, tol: float, max_iter: int) -> tuple[float, int] | None:
    lam_prev = None
    scale = float(np.abs(M).max()) ** 2
    for k in range(1, max_iter + 1):
        w = M.T @ (M @ v)
        nw = float(np.linalg.norm(w))
        if nw <= 1e-300 + 1e-15 * scale:
            return None  # start vector in the null space
        lam = float(v @ w)
        v = w / nw
        if lam_prev is not None and abs(lam - lam_prev) <= tol * lam:
            return math.sqrt(max(lam, 0.0)), k
        lam_prev = lam
    raise ConvergenceError(f"power iteration did not stabilize within {max_iter} iterations")


def operator_norm(L: LinearMap, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """Spectral norm of ``L`` by power iteration on ``L^T L``.

    The start vector is all-ones; a second, seeded random start guards
    against an all-ones vector orthogonal to the top singular vector, and
    restarts replace starts that land in the null space. Deterministic.

    Raises
    ------
    ValueError
        If ``L`` is the zero map.
    ConvergenceError
        If the Rayleigh quotient does not stabilize within ``max_iter``.
    """
    if not isinstance(L, LinearMap):
        L = LinearMap(L)
    if L.is_zero:
        raise ValueError("operator_norm requires a nonzero map")
    if not tol > 0:
        raise ValueError("tol must be > 0")
    M = L.matrix
    n = L.in_dim
    rng = np.random.default_rng(0)
    starts = [np.ones(n) / math.sqrt(n)]
    best = 0.0
    attempts = 0
    while starts:
        v = starts.pop()
        out = _power_iteration(M, v, tol, max_iter)
        attempts += 1
        if out is None:
            if attempts > 20:
                raise ConvergenceError("power iteration stagnated from every start vector")
            r = rng.standard_normal(n)
            starts.append(r / np.linalg.norm(r))
            continue
        best = max(best, out[0])
        if attempts == 1:
            r = rng.standard_normal(n)
            starts.append(r / np.linalg.norm(r))
    return best


def operator_norm_bound(L: LinearMap, tol: float = 1e-10, max_iter: int = 100_000) -> float:
    """``operator_norm(L) * (1 + tol)``; safe to use where over-estimates are harmless."""
    return operator_norm(L, tol, max_iter) * (1.0 + tol)


@dataclass
class ProbeReport:
    samples: int
    min_inner: float
    max_ratio: float
    lipschitz_constant: float
    violation: bool
    monotone_ok: bool
    lipschitz_ok: bool


def monotonicity_probe(B: LipschitzMonotoneMap, samples: int = 100, seed: int = 0,
                       scale: float = 1.0) -> ProbeReport:
    """Sample pairs ``(x, y)`` and report the worst ``<x-y, Bx-By>`` and Lipschitz ratio.

    ``min_inner`` is normalized by ``||x - y||^2`` so the threshold does not
    depend on the sampling scale.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    rng = np.random.default_rng(seed)
    min_inner = math.inf
    max_ratio = 0.0
    for _ in range(samples):
        x = scale * rng.standard_normal(B.dim)
        y = scale * rng.standard_normal(B.dim)
        d = x - y
        nd = float(np.linalg.norm(d))
        if nd == 0.0:
            continue
        dB = B(x) - B(y)
        min_inner = min(min_inner, float(d @ dB) / nd**2)
        max_ratio = max(max_ratio, float(np.linalg.norm(dB)) / nd)
    mono_ok = min_inner >= -1e-8
    lip_ok = max_ratio <= B.lipschitz_constant * (1 + 1e-8)
    return ProbeReport(samples, min_inner, max_ratio, B.lipschitz_constant,
                       not (mono_ok and lip_ok), mono_ok, lip_ok)
