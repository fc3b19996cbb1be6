"""Finite-dimensional Hilbert space primitives.

Points are plain 1-D ``float64`` numpy arrays. Metrics are diagonal,
self-adjoint and bounded below by a declared constant ``alpha_bound``;
sequences of such metrics are described by :class:`MetricSchedule`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .exceptions import ConfigurationError, DimensionError

__all__ = [
    "LOEWNER_ATOL",
    "as_point",
    "DiagonalMetric",
    "metric_inner",
    "metric_norm",
    "loewner_geq",
    "MetricSchedule",
    "Violation",
    "ValidationReport",
    "constant_schedule",
    "geometric_schedule",
    "table_schedule",
    "block_schedule",
    "schedule_validate",
    "schedule_from_dict",
]

LOEWNER_ATOL = 1e-14


def as_point(x, dim: int | None = None, name: str = "x") -> np.ndarray:
    """Return ``x`` as a finite 1-D float array, checking its length."""
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise DimensionError(f"{name} must be a vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionError(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True, eq=False)
class DiagonalMetric:
    """Diagonal positive operator ``diag(weights)`` with ``weights >= alpha_bound``."""

    weights: np.ndarray
    alpha_bound: float | None = None

    def __post_init__(self):
        w = as_point(self.weights, name="weights").copy()
        if w.size == 0:
            raise DimensionError("metric must have positive dimension")
        alpha = float(w.min()) if self.alpha_bound is None else float(self.alpha_bound)
        if not alpha > 0:
            raise ConfigurationError(f"alpha_bound must be > 0, got {alpha}")
        if w.min() < alpha:
            j = int(np.argmin(w))
            raise ConfigurationError(
                f"weight {w[j]} at component {j} is below alpha_bound {alpha}"
            )
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "alpha_bound", alpha)

    @classmethod
    def identity(cls, dim: int) -> "DiagonalMetric":
        return cls(np.ones(dim))

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def norm(self) -> float:
        """Operator norm, i.e. the largest weight."""
        return float(self.weights.max())

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.weights * x

    def apply_inverse(self, x: np.ndarray) -> np.ndarray:
        return x / self.weights

    def inverse(self) -> "DiagonalMetric":
        return DiagonalMetric(1.0 / self.weights)

    def __eq__(self, other):
        if not isinstance(other, DiagonalMetric):
            return NotImplemented
        return np.array_equal(self.weights, other.weights) and self.alpha_bound == other.alpha_bound

    def __repr__(self):
        return f"DiagonalMetric(weights={self.weights.tolist()}, alpha_bound={self.alpha_bound})"


def _check_dims(M: DiagonalMetric, *vectors):
    out = []
    for k, v in enumerate(vectors):
        out.append(as_point(v, M.dim, name=f"argument {k + 1}"))
    return out


def metric_inner(M: DiagonalMetric, x, y) -> float:
    """``<Mx, y>`` for a diagonal metric."""
    x, y = _check_dims(M, x, y)
    return float(np.sum(M.weights * (x * y)))


def metric_norm(M: DiagonalMetric, x) -> float:
    """``sqrt(<Mx, x>)``."""
    (x,) = _check_dims(M, x)
    return math.sqrt(float(np.sum(M.weights * x * x)))


def loewner_geq(M1: DiagonalMetric, M2: DiagonalMetric, slack: float = 0.0) -> bool:
    """True iff ``(1 + slack) M1 >= M2`` in the Loewner order.

    For diagonal operators this is a componentwise comparison; an absolute
    tolerance of ``LOEWNER_ATOL`` absorbs rounding in schedule generators.
    """
    if M1.dim != M2.dim:
        raise DimensionError(f"metric dimensions differ: {M1.dim} vs {M2.dim}")
    if slack < 0:
        raise ConfigurationError(f"slack must be >= 0, got {slack}")
    return bool(np.all((1.0 + slack) * M1.weights >= M2.weights - LOEWNER_ATOL))


@dataclass(frozen=True, eq=False)
class MetricSchedule:
    """A sequence ``n -> U_n`` of diagonal metrics with chain slacks ``eta_n``.

    ``mu_bound`` and ``alpha_bound`` are declared by the constructor and
    checked on prefixes by :func:`schedule_validate`. ``reverse_eta``, when
    given, declares slacks ``nu_n`` with ``(1 + nu_n) U_n >= U_{n+1}``.
    """

    generator: Callable[[int], np.ndarray]
    eta: Callable[[int], float]
    mu_bound: float
    alpha_bound: float
    dim: int
    summable: bool = True
    reverse_eta: Callable[[int], float] | None = None
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.alpha_bound > 0:
            raise ConfigurationError(f"alpha_bound must be > 0, got {self.alpha_bound}")
        if not self.mu_bound >= self.alpha_bound:
            raise ConfigurationError(
                f"mu_bound {self.mu_bound} is smaller than alpha_bound {self.alpha_bound}"
            )

    def weights(self, n: int) -> np.ndarray:
        return np.asarray(self.generator(n), dtype=float)

    def metric(self, n: int) -> DiagonalMetric:
        """``U_n``; raises if its weights fall below ``alpha_bound``."""
        return DiagonalMetric(self.weights(n), self.alpha_bound)

    def to_dict(self) -> dict:
        if self.kind == "custom":
            raise ConfigurationError("custom schedules cannot be serialized")
        return {"kind": self.kind, **self.params}


@dataclass(frozen=True)
class Violation:
    n: int
    kind: str  # "chain", "reverse_chain", "mu", "alpha"
    component: int
    detail: str


@dataclass
class ValidationReport:
    n_checked: int
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def by_kind(self, kind: str) -> list[Violation]:
        return [v for v in self.violations if v.kind == kind]

    def summary(self) -> str:
        if self.ok:
            return f"schedule admissible on n=0..{self.n_checked - 1}"
        counts: dict[str, int] = {}
        for v in self.violations:
            counts[v.kind] = counts.get(v.kind, 0) + 1
        parts = ", ".join(f"{k}: {c}" for k, c in sorted(counts.items()))
        first = self.violations[0]
        return f"{len(self.violations)} violations ({parts}); first at n={first.n}: {first.detail}"


def schedule_validate(s: MetricSchedule, n_max: int) -> ValidationReport:
    """Check the schedule's declared properties for ``n = 0 .. n_max - 1``.

    Reports chain violations ``(1 + eta_n) U_{n+1} >= U_n``, the reverse chain
    when declared, ``max weight <= mu_bound`` and ``min weight >= alpha_bound``.
    """
    if n_max < 1:
        raise ConfigurationError(f"n_max must be >= 1, got {n_max}")
    rows = [s.weights(n) for n in range(n_max + 1)]
    for n, w in enumerate(rows):
        if w.shape != (s.dim,):
            raise DimensionError(f"schedule weights at n={n} do not have dimension {s.dim}")
    W = np.array(rows)
    cur, nxt = W[:-1], W[1:]
    eta = np.array([float(s.eta(n)) for n in range(n_max)])
    found: list[tuple[int, int, Violation]] = []

    for n in np.flatnonzero(cur.max(axis=1) > s.mu_bound):
        j = int(np.argmax(cur[n]))
        found.append((n, 0, Violation(int(n), "mu", j, f"weight {cur[n, j]!r} exceeds mu_bound {s.mu_bound!r}")))
    for n in np.flatnonzero(cur.min(axis=1) < s.alpha_bound):
        j = int(np.argmin(cur[n]))
        found.append((n, 1, Violation(int(n), "alpha", j,
                                      f"weight {cur[n, j]!r} below alpha_bound {s.alpha_bound!r}")))
    bad = ((1.0 + eta)[:, None] * nxt < cur - LOEWNER_ATOL)
    for n in np.flatnonzero((eta < 0) | bad.any(axis=1)):
        j = int(np.argmax(bad[n])) if bad[n].any() else -1
        found.append((n, 2, Violation(int(n), "chain", j,
                                      f"(1+eta_n) U_(n+1) >= U_n fails at component {j} (eta_n={eta[n]!r})")))
    if s.reverse_eta is not None:
        nu = np.array([float(s.reverse_eta(n)) for n in range(n_max)])
        bad = ((1.0 + nu)[:, None] * cur < nxt - LOEWNER_ATOL)
        for n in np.flatnonzero((nu < 0) | bad.any(axis=1)):
            j = int(np.argmax(bad[n])) if bad[n].any() else -1
            found.append((n, 3, Violation(int(n), "reverse_chain", j,
                                          f"(1+nu_n) U_n >= U_(n+1) fails at component {j}")))
    found.sort(key=lambda item: (item[0], item[1]))
    return ValidationReport(n_checked=n_max, violations=[v for _, _, v in found])


def _min_slack(prev: np.ndarray, nxt: np.ndarray) -> float:
    # smallest eta >= 0 with (1 + eta) * nxt >= prev
    return max(0.0, float((prev / nxt).max()) - 1.0)


def constant_schedule(weights: Sequence[float] | np.ndarray) -> MetricSchedule:
    """``U_n = diag(weights)`` for every ``n``, zero slack in both directions."""
    w = as_point(weights, name="weights").copy()
    if w.min() <= 0:
        raise ConfigurationError("constant schedule weights must be strictly positive")
    w.setflags(write=False)
    return MetricSchedule(
        generator=lambda n: w,
        eta=lambda n: 0.0,
        reverse_eta=lambda n: 0.0,
        mu_bound=float(w.max()),
        alpha_bound=float(w.min()),
        dim=w.size,
        kind="constant",
        params={"weights": w.tolist()},
    )


def geometric_schedule(base, scale: float, rho: float, direction=None) -> MetricSchedule:
    """``U_n = diag(base) + scale * rho**n * diag(direction)`` with ``0 < rho < 1``.

    ``base`` may be an integer dimension (meaning the identity). The slacks
    ``eta_n`` (and the reverse ``nu_n``) are the smallest values that make
    the chain hold; both sequences decay like ``rho**n`` and are summable.
    """
    if isinstance(base, (int, np.integer)):
        base_w = np.ones(int(base))
    else:
        base_w = as_point(base, name="base").copy()
    d = np.ones_like(base_w) if direction is None else as_point(direction, base_w.size, "direction").copy()
    if not 0 < rho < 1:
        raise ConfigurationError(f"rho must lie in (0, 1), got {rho}")
    if np.any(d < 0):
        raise ConfigurationError("direction must be componentwise >= 0")
    first = base_w + scale * d
    if base_w.min() <= 0 or first.min() <= 0:
        raise ConfigurationError("geometric schedule must stay strictly positive")
    base_w.setflags(write=False)
    d.setflags(write=False)

    @lru_cache(maxsize=4096)
    def gen(n: int) -> np.ndarray:
        w = base_w + scale * rho**n * d
        w.setflags(write=False)
        return w

    def eta(n: int) -> float:
        return _min_slack(gen(n), gen(n + 1))

    def nu(n: int) -> float:
        return _min_slack(gen(n + 1), gen(n))

    return MetricSchedule(
        generator=gen,
        eta=eta,
        reverse_eta=nu,
        mu_bound=float(max(first.max(), base_w.max())),
        alpha_bound=float(min(first.min(), base_w.min())),
        dim=base_w.size,
        kind="geometric",
        params={"base": base_w.tolist(), "scale": scale, "rho": rho, "direction": d.tolist()},
    )


def table_schedule(table, eta=None, mu_bound: float | None = None,
                   alpha_bound: float | None = None) -> MetricSchedule:
    """User-supplied weights ``table[n]``; the last row repeats forever.

    Missing slacks are derived as the smallest admissible ones (zero once
    the table is exhausted). Bounds default to the extremes of the table.
    """
    rows = np.array(table, dtype=float)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise DimensionError("table must be a non-empty list of weight rows")
    if not np.all(np.isfinite(rows)) or rows.min() <= 0:
        raise ConfigurationError("table weights must be finite and strictly positive")
    rows.setflags(write=False)
    last = rows.shape[0] - 1

    def gen(n: int) -> np.ndarray:
        return rows[min(n, last)]

    if eta is None:
        def eta_fn(n: int) -> float:
            return 0.0 if n >= last else _min_slack(rows[n], rows[n + 1])
        eta_list = None
    else:
        eta_list = [float(e) for e in eta]

        def eta_fn(n: int) -> float:
            return eta_list[n] if n < len(eta_list) else 0.0

    params = {"table": rows.tolist()}
    if eta_list is not None:
        params["eta"] = eta_list
    if mu_bound is not None:
        params["mu_bound"] = mu_bound
    if alpha_bound is not None:
        params["alpha_bound"] = alpha_bound
    return MetricSchedule(
        generator=gen,
        eta=eta_fn,
        mu_bound=float(rows.max()) if mu_bound is None else float(mu_bound),
        alpha_bound=float(rows.min()) if alpha_bound is None else float(alpha_bound),
        dim=rows.shape[1],
        kind="table",
        params=params,
    )


def block_schedule(schedules: Sequence[MetricSchedule]) -> MetricSchedule:
    """Block-diagonal schedule ``diag(U^0_n, U^1_n, ...)`` on a direct sum.

    Slacks combine by ``max`` and bounds by ``max``/``min``; the result is
    summable iff every part is.
    """
    parts = list(schedules)
    if not parts:
        raise ConfigurationError("need at least one schedule")

    def gen(n: int) -> np.ndarray:
        return np.concatenate([s.weights(n) for s in parts])

    def eta(n: int) -> float:
        return max(float(s.eta(n)) for s in parts)

    reverse = None
    if all(s.reverse_eta is not None for s in parts):
        def reverse(n: int) -> float:
            return max(float(s.reverse_eta(n)) for s in parts)

    return MetricSchedule(
        generator=gen,
        eta=eta,
        reverse_eta=reverse,
        mu_bound=max(s.mu_bound for s in parts),
        alpha_bound=min(s.alpha_bound for s in parts),
        dim=sum(s.dim for s in parts),
        summable=all(s.summable for s in parts),
        kind="custom",
    )


def schedule_from_dict(spec: dict, dim: int | None = None) -> MetricSchedule:
    """Build a schedule from its config description (``kind`` + parameters)."""
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigurationError("schedule must be an object with a 'kind' field")
    kind = spec["kind"]
    if kind == "constant":
        w = spec.get("weights")
        if w is None:
            if dim is None:
                raise ConfigurationError("constant schedule needs 'weights' or a known dimension")
            w = np.ones(dim)
        elif np.ndim(w) == 0:
            w = np.full(dim, float(w))
        s = constant_schedule(w)
    elif kind == "geometric":
        base = spec.get("base", dim)
        s = geometric_schedule(base, float(spec["scale"]), float(spec["rho"]), spec.get("direction"))
    elif kind == "table":
        s = table_schedule(spec["table"], spec.get("eta"), spec.get("mu_bound"), spec.get("alpha_bound"))
    else:
        raise ConfigurationError(f"unknown schedule kind {kind!r}")
    if dim is not None and s.dim != dim:
        raise DimensionError(f"schedule has dimension {s.dim}, expected {dim}")
    return s
