"""Iteration records shared by the FBF and primal-dual solvers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["TraceRow", "IterateTrace", "CertificateReport", "CSV_COLUMNS"]

CSV_COLUMNS = ("n", "gamma", "primal_residual", "dual_residual", "metric_distance", "cum_sq")


@dataclass
class TraceRow:
    n: int
    gamma: float
    primal_residual: float  # ||x_n - p_n|| (FBF) or ||x_n - p_{1,n}|| (primal-dual)
    yq_residual: float  # ||y_n - q_n|| on the full space
    cum_sq: float  # running sum of squared stopping residuals
    dual_residual: float | None = None  # sqrt(sum_i ||v_{i,n} - p_{2,i,n}||^2), primal-dual only
    metric_distance: float | None = None  # ||x_n - xbar||_{U_n^{-1}} when a zero is known
    eta: float = 0.0
    # norms entering the perturbation bound of the Fejer certificate
    err_a: float = 0.0  # ||a_n||_{U_n}
    err_b: float = 0.0  # ||b_n||_{U_n^{-1}}
    err_c: float = 0.0  # ||c_n||_{U_n}


@dataclass
class IterateTrace:
    """Result of a solver run.

    ``iterates`` holds ``x_0 .. x_N`` (stacked primal-dual vectors for the
    primal-dual solver) when the run recorded a trace.
    """

    rows: list[TraceRow]
    final_x: np.ndarray
    final_p: np.ndarray
    status: str  # "converged", "max_iter" or "error"
    kind: str = "fbf"
    beta: float | None = None
    mu: float | None = None
    alpha: float | None = None
    gamma_interval: tuple[float, float] | None = None
    errors_summable: bool = True
    errors_present: bool = False
    iterates: list[np.ndarray] = field(default_factory=list)
    message: str = ""
    reports: dict = field(default_factory=dict)

    @property
    def iterations(self) -> int:
        return len(self.rows)

    @property
    def final_residual(self) -> float:
        return self.rows[-1].primal_residual if self.rows else float("nan")

    def stopping_residuals(self) -> np.ndarray:
        """Squared stopping quantity per iteration (primal plus dual blocks)."""
        return np.array(
            [r.primal_residual**2 + (r.dual_residual or 0.0) ** 2 for r in self.rows], dtype=float
        )


@dataclass
class CertificateReport:
    name: str
    passed: bool | None  # None: hypotheses not met, no claim made
    checked: int
    summary: str
    values: dict = field(default_factory=dict)
    failures: list[str] = field(default_factory=list)

    def line(self) -> str:
        verdict = {True: "PASS", False: "FAIL", None: "NO CLAIM"}[self.passed]
        return f"{self.name}: {verdict} ({self.summary})"
