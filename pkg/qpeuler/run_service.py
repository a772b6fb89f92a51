"""
Run orchestration: config loading, mode-set and Ω construction, the solver
run itself and every artifact it leaves behind.
"""

import json
import logging
import os
import platform
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import pydantic
import scipy
from dotenv import load_dotenv
from pydantic import ValidationError

from . import __version__
from .artifacts import dump_coefficients, dump_lift, write_frame, write_manifest, write_snapshot
from .errors import (
    ConfigError,
    ModeBudgetError,
    NonUnitOmegaError,
    QPEulerError,
    RankDeficientOmegaError,
    SeriesTailError,
    SolverAbort,
    ToleranceBreach,
)
from .euler_solver import (
    Diagnostics,
    EulerianState,
    LagrangianState,
    SolverConfig,
    StateHistory,
    Trajectories,
    integrate,
    integrate_lagrangian,
    lagrangian_coefficients,
    trajectories,
)
from .freq_lattice import (
    FrequencyMatrix,
    ModeSet,
    build_mode_set,
    canonical_omega,
    check_nonresonance,
    identity_omega,
    mode_set_summary,
    twelvefold_omega,
)
from .initial_data import build_initial_data
from .models import RunConfig, RunManifest
from .qp_diffeo import TorusGrid, evaluate_diffeo, invert, lift, make_diffeo
from .qp_field import NormParams, QPVectorField

load_dotenv()

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ABORT = 3
EXIT_BREACH = 4


# -------------------------------------------------------------------------
# Config loading
# -------------------------------------------------------------------------


def _field_line(text: str, key: str) -> Optional[int]:
    match = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    if match is None:
        return None
    return text.count("\n", 0, match.start()) + 1


def parse_config(text: str, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Parse and validate a JSON run config. overrides maps dotted field paths
    (e.g. "solver.t_end") to values applied before validation.
    """
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON: {e.msg} (column {e.colno})", line=e.lineno) from e
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object", line=1)

    for path, value in (overrides or {}).items():
        if value is None:
            continue
        node = data
        *parents, leaf = path.split(".")
        for key in parents:
            node = node.setdefault(key, {})
        node[leaf] = value

    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        loc = [str(part) for part in first["loc"]]
        dotted = ".".join(loc)
        named = [part for part in loc if not part.isdigit()]
        line = _field_line(text, named[-1]) if named else None
        raise ConfigError(first["msg"], field=dotted or None, line=line) from e


def load_config(path: os.PathLike, overrides: Optional[Dict[str, Any]] = None) -> Tuple[RunConfig, str]:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text, overrides), text


def build_omega(config: RunConfig) -> FrequencyMatrix:
    spec = config.omega
    try:
        if spec.matrix is not None:
            return FrequencyMatrix(np.array(spec.matrix, dtype=float))
        if spec.preset == "identity":
            return identity_omega(spec.n)
        if spec.preset == "twelvefold":
            return twelvefold_omega()
        vec = np.asarray(spec.omega, dtype=float)
        return canonical_omega(vec.size, vec)
    except (RankDeficientOmegaError, NonUnitOmegaError) as e:
        raise ConfigError(str(e), field="omega") from e


def build_modes(config: RunConfig) -> ModeSet:
    omega = build_omega(config)
    try:
        return build_mode_set(omega, config.K)
    except ModeBudgetError as e:
        raise ConfigError(str(e), field="K") from e


def norm_params(config: RunConfig, ms: ModeSet) -> NormParams:
    s = config.norm.s if config.norm.s is not None else ms.M / 2 + 1
    p = NormParams(config.norm.l, s)
    try:
        p.validate(ms.M)
    except ValueError as e:
        raise ConfigError(str(e), field="norm.s") from e
    return p


def solver_config(config: RunConfig, ms: ModeSet) -> SolverConfig:
    try:
        grid = TorusGrid.for_modes(ms, config.solver.grid)
    except ValueError as e:
        raise ConfigError(str(e), field="solver.grid") from e
    tol = config.tolerances
    return SolverConfig(
        dt=config.solver.dt,
        t_end=config.solver.t_end,
        grid=grid,
        div_tol=tol.div_tol,
        energy_report_every=config.solver.energy_report_every,
        norm=norm_params(config, ms),
        strict=config.solver.strict,
        newton_tol=tol.newton_tol,
        newton_max_iter=tol.newton_max_iter,
        aliasing_threshold=tol.aliasing_threshold,
        series_order=tol.series_order,
        series_tol=tol.series_tol,
    )


def check_output_modes(config: RunConfig, ms: ModeSet) -> None:
    for m in config.outputs.lagrangian_modes:
        if len(m) != ms.M or max(abs(k) for k in m) > ms.K:
            raise ConfigError(f"mode {m} is not in the box |m|_inf <= {ms.K} of Z^{ms.M}",
                              field="outputs.lagrangian_modes")


def package_versions() -> Dict[str, str]:
    return {
        "qpeuler": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "pydantic": pydantic.VERSION,
    }


# -------------------------------------------------------------------------
# Runs
# -------------------------------------------------------------------------


@dataclass
class RunResult:
    exit_code: int
    message: str
    directory: Optional[Path] = None
    manifest: Optional[RunManifest] = None
    artifacts: List[str] = field(default_factory=list)


class RunService:
    """Runs one configured integration and owns its output directory"""

    def __init__(self, output_root: Optional[str] = None):
        # an explicit root wins over outputs.directory in the config
        self.explicit_root = output_root is not None
        self.output_root = Path(output_root or os.getenv("QPEULER_OUTPUT_DIR", "runs"))

    # -------------------------------------------------------------------------
    # Public API
    # -------------------------------------------------------------------------

    def run_file(self, path: os.PathLike, overrides: Optional[Dict[str, Any]] = None) -> RunResult:
        try:
            config, text = load_config(path, overrides)
        except ConfigError as e:
            return RunResult(EXIT_CONFIG, str(e))
        directory = self.output_root / Path(path).stem
        if config.outputs.directory and not self.explicit_root:
            directory = Path(config.outputs.directory)
        return self.run(config, text, directory)

    def run(self, config: RunConfig, config_text: str, directory: Optional[Path] = None) -> RunResult:
        directory = Path(directory) if directory is not None else self.output_root / "run"
        directory.mkdir(parents=True, exist_ok=True)
        artifacts: List[str] = []

        try:
            ms = build_modes(config)
            sc = solver_config(config, ms)
            check_output_modes(config, ms)
        except ConfigError as e:
            return RunResult(EXIT_CONFIG, str(e), directory)

        report = check_nonresonance(ms, config.tolerances.nonresonance_tol)
        manifest = RunManifest(
            config_text=config_text,
            resolved_config=config.model_dump(mode="json"),
            versions=package_versions(),
            mode_set=mode_set_summary(ms),
            nonresonance=report,
        )
        manifest_path = directory / "manifest.json"

        if not report.ok and not config.allow_resonant:
            message = (f"Ω fails the truncated non-resonance check (separation {report.min_separation:.3e}); "
                       f"pass --allow-resonant to run anyway")
            return self._finish(manifest, manifest_path, artifacts, EXIT_CONFIG, "refused", message, directory)
        if not report.ok:
            logger.warning("Running on a resonant Ω by explicit override")

        try:
            u0, init_report = build_initial_data(config.initial_data, ms, sc.norm)
        except (ValueError, QPEulerError) as e:
            return self._finish(manifest, manifest_path, artifacts, EXIT_CONFIG, "refused",
                                f"initial_data: {e}", directory)
        manifest.initial_data = init_report

        try:
            if config.solver.mode == "eulerian":
                diagnostics, traj = self._run_eulerian(config, sc, u0, directory, artifacts)
            else:
                diagnostics, traj = self._run_lagrangian(config, sc, u0, directory, artifacts)
        except ToleranceBreach as e:
            self._write_partial(e, sc, directory, artifacts)
            return self._finish(manifest, manifest_path, artifacts, EXIT_BREACH, "tolerance_breach", str(e), directory)
        except SolverAbort as e:
            self._write_partial(e, sc, directory, artifacts)
            return self._finish(manifest, manifest_path, artifacts, EXIT_ABORT, "aborted", str(e), directory)
        except QPEulerError as e:
            return self._finish(manifest, manifest_path, artifacts, EXIT_ABORT, "aborted", str(e), directory)

        artifacts.append(str(write_frame(diagnostics.to_frame(), directory / "diagnostics.csv")))
        if traj is not None:
            artifacts.append(str(write_frame(traj.to_frame(), directory / "trajectories.csv")))
        message = f"t={diagnostics.records[-1].t:.6g}, energy drift {diagnostics.energy_drift():.3e}"
        return self._finish(manifest, manifest_path, artifacts, EXIT_OK, "ok", message, directory)

    def run_sweep(self, paths: Sequence[os.PathLike], jobs: int = 1,
                  overrides: Optional[Dict[str, Any]] = None) -> List[RunResult]:
        """Independent runs, one per config file, on up to `jobs` worker processes"""
        if jobs <= 1 or len(paths) <= 1:
            return [self.run_file(p, overrides) for p in paths]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_one, str(self.output_root), str(p), overrides) for p in paths]
            return [f.result() for f in futures]

    def invert_diffeo(self, config: RunConfig, directory: Path, scale: float = 1.0,
                      displacement: Optional[QPVectorField] = None) -> Dict[str, Any]:
        """Invert φ = id + scale·f (f from the config's initial data unless given) and dump the results"""
        ms = build_modes(config)
        sc = solver_config(config, ms)
        if displacement is None:
            displacement, _ = build_initial_data(config.initial_data, ms, sc.norm)
        phi = make_diffeo(displacement * scale, sc.grid)
        inverse = invert(phi, sc.grid, sc.newton_tol, sc.newton_max_iter)

        directory = Path(directory)
        dump_coefficients(inverse.displacement, directory / "inverse.txt", header={"margin": inverse.margin})
        dump_lift(lift(inverse, sc.grid), directory / "inverse_lift.npz")
        return {
            "margin": phi.margin,
            "inverse_margin": inverse.margin,
            "round_trip_residual": inverse.residual,
            "grid": sc.grid.points_per_dim,
        }

    # -------------------------------------------------------------------------
    # Internals
    # -------------------------------------------------------------------------

    def _snapshot(self, u: QPVectorField, t: float, p: NormParams, path: Path, artifacts: List[str]) -> None:
        artifacts.append(str(write_snapshot(u, t, p, path)))

    def _run_eulerian(self, config: RunConfig, sc: SolverConfig, u0: QPVectorField, directory: Path,
                      artifacts: List[str]) -> Tuple[Diagnostics, Optional[Trajectories]]:
        every = config.outputs.snapshot_every
        seeds = config.outputs.trajectories
        history = StateHistory([EulerianState(0.0, u0)]) if seeds else None

        def on_step(state: EulerianState, step: int) -> None:
            if every and step % every == 0:
                self._snapshot(state.u, state.t, sc.norm, directory / f"snapshot_{step:06d}.txt", artifacts)
            if history is not None:
                history.append(state)

        state, diagnostics = integrate(EulerianState(0.0, u0), sc, callback=on_step)
        self._snapshot(state.u, state.t, sc.norm, directory / "final.txt", artifacts)

        traj = None
        if seeds:
            traj = trajectories(history, seeds, sc, every=config.outputs.trajectory_every)
        return diagnostics, traj

    def _run_lagrangian(self, config: RunConfig, sc: SolverConfig, u0: QPVectorField, directory: Path,
                        artifacts: List[str]) -> Tuple[Diagnostics, Optional[Trajectories]]:
        every = config.outputs.snapshot_every
        seeds = np.array(config.outputs.trajectories, dtype=float)
        times = [0.0]
        positions = [seeds.copy()] if seeds.size else []

        def on_step(state: LagrangianState, step: int) -> None:
            if every and step % every == 0:
                self._snapshot(state.v, state.t, sc.norm, directory / f"lagrangian_v_{step:06d}.txt", artifacts)
            # particle paths are the flow map applied to the seeds
            if seeds.size and step % config.outputs.trajectory_every == 0:
                times.append(state.t)
                positions.append(evaluate_diffeo(state.phi, seeds))

        state, diagnostics = integrate_lagrangian(LagrangianState.from_eulerian(u0), sc, callback=on_step)
        self._snapshot(state.v, state.t, sc.norm, directory / "final_v.txt", artifacts)
        artifacts.append(str(dump_coefficients(state.phi.displacement, directory / "final_phi.txt",
                                               header={"t": state.t, "margin": state.phi.margin})))
        if config.outputs.lagrangian_modes:
            try:
                table = lagrangian_coefficients(state, config.outputs.lagrangian_modes, sc)
                artifacts.append(str(write_frame(table, directory / "lagrangian_coefficients.csv")))
            except SeriesTailError as e:
                logger.warning("Skipping lagrangian_coefficients.csv: %s", e)

        traj = None
        if seeds.size:
            if times[-1] != state.t:
                times.append(state.t)
                positions.append(evaluate_diffeo(state.phi, seeds))
            traj = Trajectories(times=np.array(times), positions=np.stack(positions))
        return diagnostics, traj

    def _write_partial(self, error: SolverAbort, sc: SolverConfig, directory: Path, artifacts: List[str]) -> None:
        if isinstance(error.diagnostics, Diagnostics) and error.diagnostics.records:
            artifacts.append(str(write_frame(error.diagnostics.to_frame(), directory / "diagnostics.csv")))
        state = error.state
        if isinstance(state, EulerianState):
            self._snapshot(state.u, state.t, sc.norm, directory / "abort_state.txt", artifacts)
        elif isinstance(state, LagrangianState):
            self._snapshot(state.v, state.t, sc.norm, directory / "abort_v.txt", artifacts)
            artifacts.append(str(dump_coefficients(state.phi.displacement, directory / "abort_phi.txt",
                                                   header={"t": state.t})))

    def _finish(self, manifest: RunManifest, path: Path, artifacts: List[str], code: int, status: str,
                message: str, directory: Path) -> RunResult:
        manifest.finished_at = datetime.now()
        manifest.status = status
        manifest.exit_code = code
        manifest.message = message
        manifest.artifacts = list(artifacts)
        write_manifest(manifest, path)
        if code == EXIT_OK:
            logger.info("Run finished: %s", message)
        else:
            logger.error("Run ended with status %s: %s", status, message)
        return RunResult(code, message, directory, manifest, [str(path)] + artifacts)


def _run_one(output_root: str, path: str, overrides: Optional[Dict[str, Any]]) -> RunResult:
    return RunService(output_root).run_file(path, overrides)


run_service = RunService()
