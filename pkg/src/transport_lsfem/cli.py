"""Configuration-driven experiment runner.

A run reads a TOML or JSON file (any field may be overridden by a flag),
performs a uniform or adaptive refinement study and writes
``convergence.csv`` (plus optional legacy-VTK snapshots) to ``output_dir``.

Exit status: 0 on success, 2 when the linear solver fails, 3 on a
configuration error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .adaptivity import AmrAborted, AmrConfig, amr_loop, uniform_loop
from .assembly import Method, MethodKind, Solution
from .linalg import SOLVERS
from .mesh import Mesh, MeshError
from .problems import get_problem
from .quadrature import quadrature
from .spaces import eval_field

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 2, 3

CSV_COLUMNS = (
    "iter",
    "n_nodes",
    "n_elems",
    "n_dofs",
    "estimator",
    "ls_error",
    "l2_u_error",
    "overshoot",
    "cg_iters",
    "wall_ms",
    "eoc_estimator",
    "eoc_l2",
)


class ConfigError(ValueError):
    """Invalid run configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"config field {field!r}: {message}")
        self.field = field


@dataclass
class RunConfig:
    problem: str = "smooth"
    method: str = "lsfem"
    k: int = 0
    refinement: str = "adaptive"
    theta: float = 0.5
    alpha_f: float = 10.0
    node_budget: int = 20000
    levels: int = 5
    solver_tol: float = 1e-10
    solver: str = "auto"
    output_dir: str = "output"
    export_solutions: bool = False
    timing: bool = True
    max_iterations: int = 200

    def validate(self) -> "RunConfig":
        try:
            get_problem(self.problem)
        except (KeyError, ValueError) as err:
            raise ConfigError("problem", str(err)) from None
        try:
            kind = MethodKind(self.method)
        except ValueError:
            raise ConfigError("method", f"expected one of {[m.value for m in MethodKind]}, got {self.method!r}") from None
        if self.k not in (0, 1):
            raise ConfigError("k", f"order must be 0 or 1, got {self.k!r}")
        if kind is MethodKind.C_LSFEM and self.k != 1:
            raise ConfigError("k", "c-lsfem uses continuous P1 and requires k = 1")
        if self.refinement not in ("uniform", "adaptive"):
            raise ConfigError("refinement", f"expected 'uniform' or 'adaptive', got {self.refinement!r}")
        if not (0.0 < self.theta <= 1.0):
            raise ConfigError("theta", f"must lie in (0, 1], got {self.theta!r}")
        if not (math.isfinite(self.alpha_f) and self.alpha_f > 0):
            raise ConfigError("alpha_f", f"must be finite and positive, got {self.alpha_f!r}")
        if self.node_budget < 1:
            raise ConfigError("node_budget", f"must be positive, got {self.node_budget!r}")
        if self.levels < 1:
            raise ConfigError("levels", f"must be positive, got {self.levels!r}")
        if not (0.0 < self.solver_tol < 1.0):
            raise ConfigError("solver_tol", f"must lie in (0, 1), got {self.solver_tol!r}")
        if self.solver not in SOLVERS:
            raise ConfigError("solver", f"expected one of {SOLVERS}, got {self.solver!r}")
        if self.max_iterations < 1:
            raise ConfigError("max_iterations", f"must be positive, got {self.max_iterations!r}")
        return self

    @property
    def method_spec(self) -> Method:
        return Method(MethodKind(self.method), self.alpha_f)


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def _coerce(name: str, value):
    want = _TYPES[_FIELDS[name].type]
    if want is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0", "yes", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(name, f"expected a boolean, got {value!r}")
    if want is int:
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(name, f"expected an integer, got {value!r}")
        try:
            f = float(value)
        except ValueError:
            raise ConfigError(name, f"expected an integer, got {value!r}") from None
        if not f.is_integer():
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return int(f)
    if want is float:
        if isinstance(value, bool):
            raise ConfigError(name, f"expected a number, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(name, f"expected a number, got {value!r}") from None
    if not isinstance(value, str):
        raise ConfigError(name, f"expected a string, got {value!r}")
    return value


def config_from_dict(data: dict) -> RunConfig:
    """Build and validate a :class:`RunConfig`; unknown keys are errors."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "configuration must be a table/object")
    kwargs = {}
    for key, value in data.items():
        name = key.replace("-", "_")
        if name not in _FIELDS:
            raise ConfigError(key, "unknown field")
        kwargs[name] = _coerce(name, value)
    return RunConfig(**kwargs).validate()


def load_config_file(path) -> dict:
    """Read a TOML (``.toml``) or JSON file into a dict."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError("<file>", f"cannot read {path}: {err}") from None
    if path.suffix.lower() == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError("<file>", f"invalid JSON in {path}: {err}") from None
    try:
        import tomllib
    except ModuleNotFoundError:  # Python < 3.11
        import tomli as tomllib
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError("<file>", f"invalid TOML in {path}: {err}") from None


def _cell_averages(mesh: Mesh, solution: Solution, beta=None):
    quad = quadrature("triangle", 4)
    elems = np.arange(mesh.n_triangles)
    disc = solution.disc
    sig_c, u_c = disc.split(solution.x)
    w = quad.weights / quad.weights.sum()
    uh, _ = eval_field(mesh, disc.pk, u_c, elems, quad.points)
    u_avg = uh @ w
    if disc.rt is not None:
        sh, _ = eval_field(mesh, disc.rt, sig_c, elems, quad.points)
        s_avg = np.einsum("mqc,q->mc", sh, w)
    elif beta is not None:
        from .spaces import physical_points

        xy = physical_points(mesh, quad.points)
        bx, by = beta(xy[..., 0], xy[..., 1])
        s_avg = np.stack([(np.broadcast_to(bx, uh.shape) * uh) @ w, (np.broadcast_to(by, uh.shape) * uh) @ w], -1)
    else:
        s_avg = np.zeros((mesh.n_triangles, 2))
    return u_avg, s_avg


def export_vtk(mesh: Mesh, solution: Solution, path, beta=None) -> None:
    """Legacy-VTK ASCII unstructured grid with cell data ``u`` (element mean
    of ``u_h``; the coefficient itself for P0) and ``sigma_avg`` (element mean
    of ``sigma_h``, or of ``beta u_h`` for C-LSFEM when ``beta`` is given).
    Coordinates are printed with 17 significant digits.

    Raises
    ------
    OSError
        If ``path`` cannot be written.
    """
    u_avg, s_avg = _cell_averages(mesh, solution, beta)
    if solution.disc.pk.space.value == "P0":
        u_avg = solution.u
    n, m = mesh.n_vertices, mesh.n_triangles
    lines = ["# vtk DataFile Version 3.0", "transport_lsfem solution", "ASCII", "DATASET UNSTRUCTURED_GRID"]
    lines.append(f"POINTS {n} double")
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.p]
    lines.append(f"CELLS {m} {4 * m}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.t]
    lines.append(f"CELL_TYPES {m}")
    lines += ["5"] * m
    lines.append(f"CELL_DATA {m}")
    lines += ["SCALARS u double 1", "LOOKUP_TABLE default"]
    lines += [f"{v:.17g}" for v in u_avg]
    lines.append("VECTORS sigma_avg double")
    lines += [f"{sx:.17g} {sy:.17g} 0" for sx, sy in s_avg]
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class ConvergenceWriter:
    """Streams rows of ``convergence.csv`` (flushed after each row) and
    computes orders against ``h`` (uniform) or ``n_dofs^(-1/2)`` (adaptive)."""

    def __init__(self, path, uniform: bool):
        self.fh = open(path, "w", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(CSV_COLUMNS)
        self.fh.flush()
        self.uniform = uniform
        self.prev = None

    def _size(self, rec):
        return rec.h if self.uniform else rec.n_dofs ** -0.5

    def _order(self, new, old, s_new, s_old):
        if self.prev is None or not (new > 0 and old > 0) or s_new == s_old:
            return float("nan")
        return math.log(old / new) / math.log(s_old / s_new)

    def add(self, rec):
        e_est = e_l2 = float("nan")
        if self.prev is not None:
            s0, s1 = self._size(self.prev), self._size(rec)
            e_est = self._order(rec.estimator, self.prev.estimator, s1, s0)
            e_l2 = self._order(rec.l2_u_error, self.prev.l2_u_error, s1, s0)
        row = (
            rec.iteration,
            rec.n_vertices,
            rec.n_triangles,
            rec.n_dofs,
            rec.estimator,
            rec.ls_error,
            rec.l2_u_error,
            rec.overshoot,
            rec.solver_iterations,
            rec.wall_ms,
            e_est,
            e_l2,
        )
        self.writer.writerow([_fmt(v) for v in row])
        self.fh.flush()
        self.prev = rec

    def close(self):
        self.fh.close()


def run(config: RunConfig, log=print) -> int:
    """Execute one experiment; returns the exit status."""
    try:
        config.validate()
    except ConfigError as err:
        log(f"error: {err}")
        return EXIT_CONFIG
    problem = get_problem(config.problem)
    out = Path(config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        log(f"error: config field 'output_dir': {err}")
        return EXIT_CONFIG
    uniform = config.refinement == "uniform"
    writer = ConvergenceWriter(out / "convergence.csv", uniform)
    amr_cfg = AmrConfig(
        theta=config.theta,
        node_budget=config.node_budget,
        k=config.k,
        solver_tol=config.solver_tol,
        solver=config.solver,
        timing=config.timing,
        max_iterations=config.max_iterations,
    )

    def on_record(rec, mesh, sol):
        writer.add(rec)
        if config.export_solutions:
            export_vtk(mesh, sol, out / f"solution_{rec.iteration:03d}.vtk", beta=problem.beta)

    try:
        if uniform:
            uniform_loop(problem, config.method_spec, config.levels, amr_cfg, on_record=on_record)
        else:
            amr_loop(problem, config.method_spec, amr_cfg, on_record=on_record)
    except AmrAborted as err:
        log(f"error: solver failure after {len(err.records)} iterations: {err}")
        return EXIT_SOLVER
    except MeshError as err:
        log(f"error: problem/method combination rejected: {err}")
        return EXIT_CONFIG
    finally:
        writer.close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="transport-lsfem",
        description="Run a least-squares transport convergence study.",
    )
    ap.add_argument("config", nargs="?", help="TOML or JSON run configuration")
    for name, f in _FIELDS.items():
        flag = "--" + name.replace("_", "-")
        if f.type == "bool":
            ap.add_argument(flag, dest=name, default=None, action=argparse.BooleanOptionalAction)
        else:
            ap.add_argument(flag, dest=name, default=None, help=f"default: {f.default!r}")
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    data = {}
    try:
        if args.config:
            data.update(load_config_file(args.config))
        for name in _FIELDS:
            value = getattr(args, name)
            if value is not None:
                data[name] = value
        config = config_from_dict(data)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    return run(config, log=lambda msg: print(msg, file=sys.stderr))
