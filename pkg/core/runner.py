import time
import uuid
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Tuple

import numpy as np

from core.db import (
    STATUS_COMPLETED,
    STATUS_FAILED,
    close_db,
    create_run,
    finish_run,
    init_db,
)
from core.env_manager import ConfigError, RunConfig
from core.utils import APP_NAME, APP_VERSION, check_dir_writable, write_csv, write_json
from core.phasefield.experiments import (
    Setup,
    boundary_scaling_sweep,
    cutoff_diagnostic,
    envelope_derivative_check,
    ergodic_means,
    estimate_Fn,
    nested_box_sweep,
    realization_seed,
    run_diagnostics,
    symmetry_check,
    uniqueness_gap_sweep,
    variance_sweep,
)
from core.phasefield.lattice import ConstantExterior
from core.phasefield.minimize import (
    InitPolicy,
    SolverConfig,
    glue_cutoff,
    glue_report,
    holder_quotient,
    minimize,
)
from core.phasefield.stats import SweepRecord

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_CONFIG = 2

# share of failed solves above which a run exits with EXIT_SOLVER
FAILURE_QUOTA = 0.10


# =============================================================================
# Run Session System
# =============================================================================


class SessionPhase(str, Enum):
    BEGIN_SETUP = "begin_setup"
    MANIFEST_WRITTEN = "manifest_written"
    BEGIN_COMPUTE = "begin_compute"
    REALIZATION_DONE = "realization_done"
    END_COMPUTE = "end_compute"
    WRITE_RESULTS = "write_results"
    ALL_DONE = "all_done"
    ERROR = "error"


class RunEvent:
    def __init__(self, phase: SessionPhase, text: str, level: str = "info"):
        self.phase = phase
        self.text = text
        self.level = level
        self.timestamp = time.time()

    def to_dict(self):
        return {
            "phase": self.phase.value,
            "text": self.text,
            "level": self.level,
            "timestamp": self.timestamp,
        }


class RunSession:
    def __init__(self, cfg: RunConfig, session_id: str = None):
        self.id = session_id or str(uuid.uuid4())
        self.cfg = cfg
        self.out_dir = Path(cfg.out)
        self.manifest_path = self.out_dir / f"{cfg.stem}.json"
        self.events: List[RunEvent] = []
        self.started = time.time()

    def send(self, phase: SessionPhase, text: str, level: str = "info"):
        """Print a structured run event and keep it for the manifest."""
        event = RunEvent(phase, text, level)
        self.events.append(event)
        if self.cfg.quiet and phase == SessionPhase.REALIZATION_DONE:
            return
        print(f"[{phase.value}] {text}")

    def progress(self, label: str, total: int) -> Callable:
        """Callback for map_tasks reporting each finished task."""
        done = [0]

        def on_done(index, result):
            done[0] += 1
            ok = result.get("converged", True) if isinstance(result, dict) else True
            self.send(
                SessionPhase.REALIZATION_DONE,
                f"{label} {done[0]}/{total} (task {index})" + ("" if ok else " ⚠️ not converged"),
                "info" if ok else "warn",
            )

        return on_done

    def write_manifest(self, status: str, **extra):
        payload = {
            "app": APP_NAME,
            "version": APP_VERSION,
            "session_id": self.id,
            "experiment": self.cfg.experiment,
            "stem": self.cfg.stem,
            "status": status,
            "config": self.cfg.to_dict(),
            "seeds": _seeds(self.cfg),
            "started": self.started,
            "updated": time.time(),
            **extra,
            "events": [e.to_dict() for e in self.events],
        }
        write_json(self.manifest_path, payload)
        return self.manifest_path


def _seeds(cfg: RunConfig) -> Dict:
    seeds = {"base": cfg.seed}
    if cfg.experiment in ("variance", "ergodic", "gap", "extremal", "scaling"):
        seeds["realizations"] = [
            realization_seed(cfg.seed, r) for r in range(cfg.realizations)
        ]
    return seeds


# =============================================================================
# Commands
# =============================================================================


@dataclass
class Outcome:
    record: SweepRecord
    payload: Dict = field(default_factory=dict)
    tables: Dict[str, Tuple[List[str], list]] = field(default_factory=dict)


def build_setup(cfg: RunConfig) -> Setup:
    solver = SolverConfig(
        method=cfg.method,
        tol=cfg.tol,
        max_iter=cfg.max_iter,
        multistart=cfg.multistart,
        init=InitPolicy(cfg.init),
        seed=cfg.seed,
    )
    return Setup(
        d=cfg.d,
        s=cfg.s,
        theta=cfg.theta,
        C0=cfg.c0,
        delta0=cfg.delta0,
        bridge=cfg.bridge,
        m=cfg.m,
        K=cfg.k,
        dist=cfg.dist,
        method=cfg.summation,
        cache_dir=cfg.cache_dir,
        solver=solver,
    )


def _field_table(grid, **columns):
    axes = ["x", "y"][: grid.d]
    header = axes + list(columns)
    values = [np.asarray(v) for v in columns.values()]
    rows = [
        [*point.tolist(), *(float(v[i]) for v in values)]
        for i, point in enumerate(grid.points)
    ]
    return header, rows


def run_minimize(cfg: RunConfig, session: RunSession) -> Outcome:
    setup = build_setup(cfg)
    grid = setup.grid(cfg.n[0])
    problem = setup.problem(grid, setup.disorder(grid, cfg.seed))
    exterior = ConstantExterior(cfg.exterior if cfg.exterior is not None else setup.barrier)
    result = minimize(setup.solver, problem, exterior)
    session.send(
        SessionPhase.REALIZATION_DONE,
        f"energy {result.energy:.12g}, residual {result.residual:.3e}, "
        f"{result.iterations} iterations",
    )
    parts = result.breakdown
    record = SweepRecord(
        "minimize", setup.to_dict(),
        ["n", "gagliardo", "potential", "disorder", "exterior", "energy", "residual",
         "iterations", "converged"],
    )
    record.add_row([grid.n, parts.gagliardo, parts.potential, parts.disorder,
                    parts.exterior, parts.total, result.residual, result.iterations,
                    result.converged])
    record.solves, record.failures = 1, int(not result.converged)
    return Outcome(
        record,
        {"result": result.to_dict()},
        {"field": _field_table(grid, value=result.field.values)},
    )


def run_extremal(cfg: RunConfig, session: RunSession) -> Outcome:
    setup = build_setup(cfg)
    payload = {"states": {}, "glue": {}, "holder": {}}
    tables = {}
    for n in cfg.n:
        grid = setup.grid(n)
        problem = setup.problem(grid, setup.disorder(grid, cfg.seed))
        states = setup.pair(problem, k_gap=cfg.k_gap)
        key = str(n)
        payload["states"][key] = states.to_dict()
        payload["glue"][key] = glue_report(
            states.v_plus, states.v_minus, problem, tol=max(cfg.tol, 1e-9)
        ).to_dict()
        alpha = min(0.9, 1.8 * cfg.s)
        payload["holder"][key] = {
            "alpha": alpha,
            "plus": holder_quotient(states.v_plus, alpha, grid.central_mask()),
            "minus": holder_quotient(states.v_minus, alpha, grid.central_mask()),
        }
        if n == cfg.n[0]:
            tables["field"] = _field_table(
                grid, v_plus=states.v_plus.values, v_minus=states.v_minus.values
            )
        session.send(
            SessionPhase.REALIZATION_DONE,
            f"n={n}: G(v+)-G(v-) = {states.energy_gap:.6g}, "
            f"ordering violation {states.ordering_violation:.2e}",
        )
    record = symmetry_check(
        setup, cfg.n[0], cfg.realizations, cfg.seed, cfg.workers,
        session.progress("symmetry", cfg.realizations),
    )
    if len(cfg.n) > 1:
        nested = nested_box_sweep(setup, cfg.n, cfg.seed, cfg.workers)
        payload["nested"] = nested.to_dict()
        tables["nested"] = (nested.columns, nested.rows)
    return Outcome(record, payload, tables)


def run_scaling(cfg: RunConfig, session: RunSession) -> Outcome:
    setup = build_setup(cfg)
    s_list = list(cfg.s_list) if cfg.s_list else [cfg.s]
    R = cfg.realizations if cfg.theta > 0 else 0
    total = len(s_list) * len(cfg.n) * R
    record = boundary_scaling_sweep(
        setup, s_list, cfg.n, cfg.seed, R, cfg.workers, session.progress("pair", total)
    )
    return Outcome(record)


def run_fn(cfg: RunConfig, session: RunSession) -> Outcome:
    setup = build_setup(cfg)
    n = cfg.n[0]
    total = cfg.resamples * (2 if cfg.bias_check else 1)
    estimate = estimate_Fn(
        setup, n, cfg.pad, cfg.resamples, cfg.seed, cfg.bias_check, cfg.workers,
        session.progress("resample", total),
    )
    record = SweepRecord("fn", {**setup.to_dict(), "n": n, "pad": estimate.pad,
                                "M": cfg.resamples}, ["n", "resample", "delta"])
    for j, delta in enumerate(estimate.deltas):
        record.add_row([n, j, delta])
    record.aggregate("delta")
    record.solves = total
    record.failures = estimate.failures + estimate.bias_failures
    return Outcome(record, {"estimate": estimate.to_dict()})


def run_variance(cfg: RunConfig, session: RunSession) -> Outcome:
    setup = build_setup(cfg)
    total = len(cfg.n) * cfg.realizations * cfg.resamples
    record = variance_sweep(
        setup, cfg.n, cfg.realizations, cfg.resamples, cfg.pad, cfg.seed, cfg.bins,
        cfg.workers, session.progress("resample", total),
    )
    return Outcome(record)


def run_ergodic(cfg: RunConfig, session: RunSession) -> Outcome:
    setup = build_setup(cfg)
    record = ergodic_means(
        setup, cfg.n[0], cfg.realizations, cfg.seed, cfg.workers,
        session.progress("realization", cfg.realizations),
    )
    return Outcome(record)


def run_gap(cfg: RunConfig, session: RunSession) -> Outcome:
    setup = build_setup(cfg)
    total = len(cfg.n) * cfg.realizations
    record = uniqueness_gap_sweep(
        setup, cfg.n, cfg.realizations, cfg.seed, cfg.workers,
        session.progress("realization", total),
    )
    return Outcome(record)


def run_diagnostics_command(cfg: RunConfig, session: RunSession) -> Outcome:
    setup = build_setup(cfg)
    n = cfg.n[0]
    checks = run_diagnostics(setup, n, cfg.seed, cfg.samples)
    record = SweepRecord("diagnostics", setup.to_dict(),
                         ["name", "passed", "value", "threshold"])
    for check in checks:
        record.add_row([check.name, check.passed, check.value, check.threshold])
        session.send(
            SessionPhase.REALIZATION_DONE,
            f"{'✅' if check.passed else '❌'} {check.name}: {check.value:.3e} "
            f"(threshold {check.threshold:.1e})",
        )
    payload = {"checks": [c.to_dict() for c in checks]}

    grid = setup.grid(n)
    problem = setup.problem(grid, setup.disorder(grid, cfg.seed))
    states = setup.pair(problem)
    sides = []
    side = 2
    while side <= n:
        sides.append(side)
        side *= 2
    glued = glue_cutoff(states.v_plus, states.v_minus, grid)
    payload["cutoff"] = cutoff_diagnostic(
        states.v_plus, problem, sides, u=glued, alpha=min(0.9, 1.8 * cfg.s)
    ).to_dict()
    solves = len(checks)
    failures = sum(1 for c in checks if not c.passed)
    if cfg.theta > 0:
        site = cfg.site or (0,) * cfg.d
        envelope = envelope_derivative_check(
            setup, n, site, cfg.h_list, cfg.seed, jobs=cfg.workers
        )
        payload["envelope"] = envelope.to_dict()
        solves += 1
        failures += int(not (envelope.sandwich_ok and envelope.monotone))
    record.solves, record.failures = solves, failures
    return Outcome(record, payload)


def precheck(cfg: RunConfig) -> Setup:
    """
    Validation that needs the model objects (setup constants, the envelope site);
    failures here are configuration errors.
    """
    try:
        setup = build_setup(cfg)
    except ValueError as e:
        raise ConfigError("setup", str(e)) from None
    if cfg.experiment == "diagnostics" and cfg.site is not None:
        grid = setup.grid(cfg.n[0])
        if not np.any(grid.cell_mask(tuple(cfg.site))):
            raise ConfigError("site", f"Site {tuple(cfg.site)} has no cell inside Λ_{grid.n}")
    return setup


COMMANDS = {
    "minimize": run_minimize,
    "extremal": run_extremal,
    "scaling": run_scaling,
    "fn": run_fn,
    "variance": run_variance,
    "ergodic": run_ergodic,
    "gap": run_gap,
    "diagnostics": run_diagnostics_command,
}


# =============================================================================
# Main Run Routine
# =============================================================================


def _write_outputs(cfg: RunConfig, outcome: Outcome) -> List[str]:
    out = Path(cfg.out)
    written = [str(p) for p in outcome.record.write(out, cfg.stem)]
    for suffix, (header, rows) in outcome.tables.items():
        path = out / f"{cfg.stem}_{suffix}.csv"
        write_csv(path, header, rows)
        written.append(str(path))
    return written


def run(cfg: RunConfig) -> int:
    """
    Execute one experiment: manifest first, then compute, then tables and the final
    manifest.

    Returns:
        int: 0 on success, 1 when more than 10% of the solves failed or the compute
        raised, 2 on configuration or output-directory errors.
    """
    session = RunSession(cfg)
    session.send(SessionPhase.BEGIN_SETUP, f"{cfg.experiment} -> {session.manifest_path}")

    if not check_dir_writable(cfg.out):
        print(f"❌ Output directory {cfg.out} is not writable")
        return EXIT_CONFIG
    if session.manifest_path.exists() and not cfg.overwrite:
        print(
            f"❌ {session.manifest_path} already exists; re-run with --overwrite=true "
            f"to replace it"
        )
        return EXIT_CONFIG

    init_db(cfg.out)
    ledger = create_run(cfg.experiment, cfg.stem, cfg.to_dict())
    try:
        session.write_manifest("started")
        session.send(SessionPhase.MANIFEST_WRITTEN, str(session.manifest_path))
        precheck(cfg)

        session.send(SessionPhase.BEGIN_COMPUTE, f"Running {cfg.experiment}...")
        outcome = COMMANDS[cfg.experiment](cfg, session)
        record = outcome.record
        session.send(
            SessionPhase.END_COMPUTE,
            f"{record.solves - record.failures}/{record.solves} solves converged",
        )

        session.send(SessionPhase.WRITE_RESULTS, "Writing tables...")
        outputs = _write_outputs(cfg, outcome)

        breach = record.failure_rate > FAILURE_QUOTA
        status = STATUS_FAILED if breach else STATUS_COMPLETED
        if breach:
            session.send(
                SessionPhase.ERROR,
                f"⚠️ {record.failures} of {record.solves} solves failed "
                f"(quota {FAILURE_QUOTA:.0%})",
                "error",
            )
        else:
            session.send(SessionPhase.ALL_DONE, f"✅ {cfg.experiment} finished")
        session.write_manifest(
            status,
            failures=record.failures,
            solves=record.solves,
            summary=record.to_dict(),
            results=outcome.payload,
            outputs=outputs,
        )
        finish_run(ledger.run_id, status, record.failures, record.solves)
        return EXIT_SOLVER if breach else EXIT_OK

    except ConfigError as e:
        code, message = EXIT_CONFIG, str(e)
    except Exception as e:
        code, message = EXIT_SOLVER, f"{type(e).__name__}: {e}"
    finally:
        close_db()

    session.send(SessionPhase.ERROR, f"❌ {message}", "error")
    session.write_manifest(STATUS_FAILED, error=message)
    init_db(cfg.out)
    try:
        finish_run(ledger.run_id, STATUS_FAILED, message=message)
    finally:
        close_db()
    return code
