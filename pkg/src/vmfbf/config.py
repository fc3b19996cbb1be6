"""JSON run configurations: parsing, validation and canonical serialization.

A config file looks like::

    {
      "format_version": 1,
      "name": "rotation",
      "problem": {"type": "fbf", "dim": 2, "A": {"kind": "zero"},
                  "B": {"kind": "linear", "matrix": [[0, -1], [1, 0]]},
                  "x0": [1, 0], "known_zero": [0, 0]},
      "solver": {"schedule": {"kind": "constant"}, "epsilon": 0.1,
                 "gamma_rule": "constant", "gamma": 0.45,
                 "max_iter": 500, "stop_tol": 1e-9},
      "seed": 0
    }

``problem.type`` is one of ``fbf``, ``vi`` (with ``f`` instead of ``A``)
or ``pd`` (with ``z``, ``A``, ``C`` and a list of ``blocks``). Matrices are
row-major nested lists.
"""

from __future__ import annotations

import contextlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .exceptions import VmfbfError
from .fbf import FbfConfig, FbfProblem, errors_from_dict
from .metric import as_point, schedule_from_dict
from .operators import LinearMap, map_from_dict, oracle_from_dict
from .primal_dual import DualBlock, PdConfig, StructuredProblem

__all__ = ["FORMAT_VERSION", "ConfigError", "RunConfig", "parse_config", "load_config", "dump_config"]

FORMAT_VERSION = 1
PROBLEM_TYPES = ("fbf", "vi", "pd")


class ConfigError(VmfbfError, ValueError):
    """Invalid config file; ``field`` names the offending entry."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


@contextlib.contextmanager
def _at(path: str):
    try:
        yield
    except ConfigError:
        raise
    except KeyError as exc:
        raise ConfigError(f"missing required field {exc.args[0]!r}", path) from exc
    except (ValueError, TypeError, VmfbfError, NotImplementedError) as exc:
        raise ConfigError(str(exc), path) from exc


def _require(d: dict, key: str, path: str):
    if not isinstance(d, dict):
        raise ConfigError("expected an object", path)
    if key not in d:
        raise ConfigError("missing required field", f"{path}.{key}" if path else key)
    return d[key]


@dataclass
class RunConfig:
    """A validated run description.

    ``problem`` is an :class:`FbfProblem` (types ``fbf`` and ``vi``) or a
    :class:`StructuredProblem`; ``solver`` the matching config object.
    """

    name: str
    problem_type: str
    problem: Any
    solver: Any
    x0: np.ndarray | None = None
    v0: tuple[np.ndarray, ...] | None = None
    output: str | None = None
    seed: int = 0
    format_version: int = FORMAT_VERSION
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        """Canonical JSON-ready description; ``parse_config(cfg.to_dict())`` reproduces ``cfg``."""
        d: dict[str, Any] = {"format_version": self.format_version, "name": self.name}
        if self.problem_type == "pd":
            d["problem"] = _pd_problem_dict(self.problem, self.x0, self.v0)
            d["solver"] = _pd_solver_dict(self.solver)
        else:
            d["problem"] = _fbf_problem_dict(self.problem_type, self.problem, self.x0)
            d["solver"] = _fbf_solver_dict(self.solver)
        if self.output is not None:
            d["output"] = self.output
        d["seed"] = self.seed
        return d

    def with_overrides(self, max_iter: int | None = None, stop_tol: float | None = None) -> "RunConfig":
        changes = {}
        if max_iter is not None:
            changes["max_iter"] = int(max_iter)
        if stop_tol is not None:
            changes["stop_tol"] = float(stop_tol)
        if not changes:
            return self
        return replace(self, solver=replace(self.solver, **changes))


def _vec_or_none(x):
    return None if x is None else np.asarray(x, dtype=float).tolist()


def _fbf_problem_dict(kind: str, p: FbfProblem, x0) -> dict:
    d = {"type": kind, "dim": p.dim, "f" if kind == "vi" else "A": p.A.to_dict(), "B": p.B.to_dict()}
    if p.known_zero is not None:
        d["known_zero"] = _vec_or_none(p.known_zero)
    if x0 is not None:
        d["x0"] = _vec_or_none(x0)
    return d


def _step_rule_dict(c) -> dict:
    d: dict[str, Any] = {"epsilon": c.epsilon, "gamma_rule": c.gamma_rule}
    if c.gamma_rule == "constant":
        d["gamma"] = c.gamma
    elif c.gamma_rule == "table":
        d["gamma_table"] = list(c.gamma_table)
    d["max_iter"] = c.max_iter
    d["stop_tol"] = c.stop_tol
    return d


def _fbf_solver_dict(c: FbfConfig) -> dict:
    d = {"schedule": c.schedule.to_dict(), **_step_rule_dict(c), "errors": c.errors.to_dict()}
    return d


def _pd_problem_dict(p: StructuredProblem, x0, v0) -> dict:
    d: dict[str, Any] = {
        "type": "pd", "dim": p.dim, "z": _vec_or_none(p.z), "A": p.A.to_dict(), "C": p.C.to_dict(),
        "blocks": [
            {"L": b.L.to_list(), "B": b.B.to_dict(), "D_inv": b.D_inv.to_dict(), "r": _vec_or_none(b.r)}
            for b in p.blocks
        ],
    }
    if p.known_solution is not None:
        kx, kv = p.known_solution
        d["known_solution"] = {"x": _vec_or_none(kx), "v": [_vec_or_none(v) for v in kv]}
    if x0 is not None:
        d["x0"] = _vec_or_none(x0)
    if v0 is not None:
        d["v0"] = [_vec_or_none(v) for v in v0]
    return d


def _pd_solver_dict(c: PdConfig) -> dict:
    return {
        "primal_schedule": c.primal_schedule.to_dict(),
        "dual_schedules": [s.to_dict() for s in c.dual_schedules],
        **_step_rule_dict(c),
        "primal_errors": c.primal_errors.to_dict(),
        "dual_errors": [e.to_dict() for e in c.dual_errors],
    }


def _step_rule(s: dict, path: str) -> dict:
    out: dict[str, Any] = {}
    with _at(f"{path}.epsilon"):
        out["epsilon"] = float(s.get("epsilon", 0.01))
    out["gamma_rule"] = s.get("gamma_rule", "max_admissible")
    if "gamma" in s:
        with _at(f"{path}.gamma"):
            out["gamma"] = float(s["gamma"])
    if "gamma_table" in s:
        with _at(f"{path}.gamma_table"):
            out["gamma_table"] = tuple(float(g) for g in s["gamma_table"])
    with _at(f"{path}.max_iter"):
        out["max_iter"] = int(s.get("max_iter", 1000))
    with _at(f"{path}.stop_tol"):
        out["stop_tol"] = float(s.get("stop_tol", 1e-8))
    return out


def _parse_fbf(kind: str, prob: dict, solver: dict):
    dim = prob.get("dim")
    with _at("problem.B"):
        B = map_from_dict(_require(prob, "B", "problem"), dim)
    dim = B.dim if dim is None else int(dim)
    key = "f" if kind == "vi" else "A"
    with _at(f"problem.{key}"):
        A = oracle_from_dict(_require(prob, key, "problem"), dim)
        if kind == "vi":
            A.value(np.zeros(dim))  # must be a subdifferential of a known function
    known = prob.get("known_zero")
    with _at("problem.known_zero"):
        problem = FbfProblem(A, B, dim, None if known is None else as_point(known, dim, "known_zero"))
    x0 = None
    if "x0" in prob:
        with _at("problem.x0"):
            x0 = as_point(prob["x0"], dim, "x0")
    with _at("solver.schedule"):
        schedule = schedule_from_dict(solver.get("schedule", {"kind": "constant"}), dim)
    with _at("solver.errors"):
        errors = errors_from_dict(solver.get("errors"), dim)
    with _at("solver"):
        cfg = FbfConfig(schedule=schedule, errors=errors, **_step_rule(solver, "solver"))
    if kind == "vi" and not errors.is_zero:
        raise ConfigError("variational inequality runs take no injected errors", "solver.errors")
    return problem, cfg, x0, None


def _parse_pd(prob: dict, solver: dict):
    with _at("problem.C"):
        C = map_from_dict(_require(prob, "C", "problem"), prob.get("dim"))
    dim = C.dim
    with _at("problem.A"):
        A = oracle_from_dict(_require(prob, "A", "problem"), dim)
    with _at("problem.z"):
        z = as_point(prob.get("z", [0.0] * dim), dim, "z")
    raw_blocks = _require(prob, "blocks", "problem")
    if not isinstance(raw_blocks, list) or not raw_blocks:
        raise ConfigError("expected a non-empty list", "problem.blocks")
    blocks = []
    for i, rb in enumerate(raw_blocks):
        path = f"blocks[{i}]"
        with _at(f"{path}.L"):
            L = LinearMap(_require(rb, "L", path))
            if L.in_dim != dim:
                raise ConfigError(f"L has shape {L.matrix.shape}, expected {dim} columns", f"{path}.L")
            if L.is_zero:
                raise ConfigError("L must be nonzero", f"{path}.L")
        g = L.out_dim
        with _at(f"{path}.B"):
            Bi = oracle_from_dict(_require(rb, "B", path), g)
        with _at(f"{path}.D_inv"):
            D_inv = map_from_dict(rb.get("D_inv", {"kind": "zero"}), g)
        with _at(f"{path}.r"):
            r = as_point(rb.get("r", [0.0] * g), g, "r")
        blocks.append(DualBlock(L, Bi, D_inv, r))
    known = None
    if "known_solution" in prob:
        ks = prob["known_solution"]
        with _at("problem.known_solution"):
            known = (as_point(ks["x"], dim, "x"),
                     tuple(as_point(v, b.dim, f"v[{i}]") for i, (v, b) in enumerate(zip(ks["v"], blocks))))
            if len(known[1]) != len(blocks):
                raise ValueError("one dual vector per block required")
    with _at("problem"):
        problem = StructuredProblem(A, C, tuple(blocks), z, known)
    x0 = v0 = None
    if "x0" in prob:
        with _at("problem.x0"):
            x0 = as_point(prob["x0"], dim, "x0")
    if "v0" in prob:
        with _at("problem.v0"):
            if len(prob["v0"]) != len(blocks):
                raise ValueError("one dual start vector per block required")
            v0 = tuple(as_point(v, b.dim, f"v0[{i}]") for i, (v, b) in enumerate(zip(prob["v0"], blocks)))

    with _at("solver.primal_schedule"):
        ps = schedule_from_dict(solver.get("primal_schedule", {"kind": "constant"}), dim)
    raw_ds = solver.get("dual_schedules", [{"kind": "constant"}] * len(blocks))
    if len(raw_ds) != len(blocks):
        raise ConfigError(f"expected {len(blocks)} entries", "solver.dual_schedules")
    ds = []
    for i, (sd, b) in enumerate(zip(raw_ds, blocks)):
        with _at(f"solver.dual_schedules[{i}]"):
            ds.append(schedule_from_dict(sd, b.dim))
    with _at("solver.primal_errors"):
        pe = errors_from_dict(solver.get("primal_errors"), dim)
    raw_de = solver.get("dual_errors", [None] * len(blocks))
    if len(raw_de) != len(blocks):
        raise ConfigError(f"expected {len(blocks)} entries", "solver.dual_errors")
    de = []
    for i, (ed, b) in enumerate(zip(raw_de, blocks)):
        with _at(f"solver.dual_errors[{i}]"):
            de.append(errors_from_dict(ed, b.dim))
    with _at("solver"):
        cfg = PdConfig(ps, tuple(ds), primal_errors=pe, dual_errors=tuple(de), **_step_rule(solver, "solver"))
    return problem, cfg, x0, v0


def parse_config(data: dict, default_name: str = "run") -> RunConfig:
    """Validate a decoded config document and build the run objects."""
    if not isinstance(data, dict):
        raise ConfigError("top level must be an object")
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise ConfigError(f"unsupported format_version {version!r}, expected {FORMAT_VERSION}", "format_version")
    prob = _require(data, "problem", "")
    solver = data.get("solver", {})
    if not isinstance(solver, dict):
        raise ConfigError("expected an object", "solver")
    kind = _require(prob, "type", "problem")
    if kind not in PROBLEM_TYPES:
        raise ConfigError(f"unknown problem type {kind!r}; expected one of {PROBLEM_TYPES}", "problem.type")
    if kind == "pd":
        problem, cfg, x0, v0 = _parse_pd(prob, solver)
    else:
        problem, cfg, x0, v0 = _parse_fbf(kind, prob, solver)
    with _at("seed"):
        seed = int(data.get("seed", 0))
    return RunConfig(
        name=str(data.get("name", default_name)), problem_type=kind, problem=problem, solver=cfg,
        x0=x0, v0=v0, output=data.get("output"), seed=seed, format_version=version,
    )


def load_config(path) -> RunConfig:
    """Read and validate a config file; errors name the offending field or position."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return parse_config(data, default_name=path.stem)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"

