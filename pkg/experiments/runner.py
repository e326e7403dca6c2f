"""
Verb dispatch for the ``run`` command.

Each verb fills an ordered mapping of artifact name -> bytes. The runner then
writes every artifact atomically, writes ``manifest.json`` last and records
the run with its checksums.
"""
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from django.db import DatabaseError
from django.utils import timezone

from meanfield import __version__
from meanfield.analysis import chaos_study, nash_gap_study
from meanfield.counterexample import brute_force_costs, exact_costs, limit_cost
from meanfield.descriptors import load_descriptor
from meanfield.exceptions import ExtinctionError, MeanFieldError
from meanfield.feedback import ConstantFeedback, CounterexampleFeedback
from meanfield.fieldio import density_field_rows, encode_binary, value_field_rows
from meanfield.hjb_kfp import SpaceGrid, initial_density, renormalize, solve_hjb, solve_kfp, stability_ratio
from meanfield.mfg import SolverOptions, default_init_flow, solve_mfg, total_variation, value_at_initial_law
from meanfield.model import validate
from meanfield.nplayer import StrategyProfile, player_costs, simulate_nplayer
from meanfield.sde import TimeGrid

from .emit import atomic_write, csv_bytes, json_bytes, sha256
from .forms import default_output_root
from .models import ExperimentRun, RunArtifact

logger = logging.getLogger(__name__)


@dataclass
class RunOutcome:
    exit_code: int
    run_dir: Path
    manifest: dict
    warning: bool = False
    artifacts: dict = field(default_factory=dict)


def config_hash(config: dict) -> str:
    echo = {k: v for k, v in config.items() if k != "output_dir"}
    return sha256(json.dumps(echo, sort_keys=True, default=str).encode("utf-8"))


# ---------------------------------------------------------------------
# Shared helpers
# ---------------------------------------------------------------------

def _grid(config, coeffs) -> TimeGrid:
    return TimeGrid(config["n_steps"], coeffs.horizon_T)


def _options(config, coeffs) -> SolverOptions:
    feedback = CounterexampleFeedback(dim=coeffs.dim_d) if config["profile"] == "counterexample" else None
    return SolverOptions(
        mode=config["mode"],
        space_nodes=config["space_nodes"],
        n_particles=config["particles"],
        seed=config["seed"],
        feedback=feedback,
    )


def _solve(config, coeffs, grid):
    return solve_mfg(
        coeffs,
        grid,
        _options(config, coeffs),
        damping=config["damping"],
        tol=config["tol"],
        max_iter=config["max_iter"],
    )


def _feedback(config, coeffs, grid):
    profile = config["profile"]
    if profile == "rest":
        return ConstantFeedback(tuple(coeffs.action_space.rest_action())), None
    if profile == "counterexample":
        return CounterexampleFeedback(dim=coeffs.dim_d), None
    solution = _solve(config, coeffs, grid)
    return solution.feedback, solution


def _flow_rows(flow):
    header = ["j", "t", "survival"] + [f"mean{k + 1}" for k in range(flow.dim_d0)]
    rows = [
        [j, float(t), float(flow.survival[j])] + [float(v) for v in flow.means[j]]
        for j, t in enumerate(flow.grid.times)
    ]
    return header, rows


# ---------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------

def simulate_nplayer_verb(config, coeffs, out, meta):
    grid = _grid(config, coeffs)
    feedback, _ = _feedback(config, coeffs, grid)
    profile = StrategyProfile.symmetric(feedback)
    path_rows, cost_rows = [], []
    for N in config["ladder"]:
        for r in range(config["replications"]):
            ensemble = simulate_nplayer(coeffs, grid, profile, N, config["seed"], replication=r)
            for j, t in enumerate(grid.times):
                path_rows.append(
                    [N, r, j, float(t), int(ensemble.survivor_counts[j])]
                    + [float(v) for v in ensemble.conditional_means[j]]
                )
            for i, cost in enumerate(player_costs(ensemble, coeffs)):
                cost_rows.append([N, r, i, float(cost)])
    header = ["N", "replication", "j", "t", "survivors"] + [f"mean{k + 1}" for k in range(coeffs.dim_d0)]
    out["nplayer_paths.csv"] = csv_bytes(header, path_rows, meta)
    out["nplayer_costs.csv"] = csv_bytes(["N", "replication", "player", "cost"], cost_rows, meta)
    return False


def solve_mfg_verb(config, coeffs, out, meta):
    grid = _grid(config, coeffs)
    try:
        solution = _solve(config, coeffs, grid)
    except ExtinctionError as exc:
        logger.warning("extinction at index %d during the fixed point", exc.first_index)
        out["fixed_point.json"] = json_bytes(
            {"extinction": {"first_index": exc.first_index, "mass": exc.mass}, "converged": False}, meta
        )
        return True
    header, rows = _flow_rows(solution.flow)
    out["flow.csv"] = csv_bytes(header, rows, meta)
    payload = {**solution.report.as_dict(), "total_variation": total_variation(solution.flow)}
    out["fixed_point.json"] = json_bytes(payload, meta)
    return not solution.report.converged


def nash_gap_verb(config, coeffs, out, meta):
    if config["exact"]:
        report = nash_gap_study(None, None, None, config["ladder"], 0, config["seed"], exact=True)
        warning = False
    else:
        grid = _grid(config, coeffs)
        solution = _solve(config, coeffs, grid)
        extra = {"reference": config["reference"]}
        if config["profile"] == "counterexample":
            extra["deviation"] = ConstantFeedback(coeffs.action_space.lower)
        report = nash_gap_study(
            coeffs, grid, solution, config["ladder"], config["replications"], config["seed"], **extra
        )
        warning = not solution.report.converged
    out["nash_gap.json"] = json_bytes(report.as_dict(), meta)
    rows = report.replication_rows()
    out["nash_gap.csv"] = csv_bytes(["N", "replication", "cost_equilibrium", "cost_deviation", "gap"], rows, meta)
    return warning


def chaos_study_verb(config, coeffs, out, meta):
    grid = _grid(config, coeffs)
    solution = _solve(config, coeffs, grid)
    report = chaos_study(coeffs, grid, solution, config["ladder"], config["seed"], config["replications"])
    out["chaos.json"] = json_bytes(report.as_dict(), meta)
    rows = [[N, float(d), float(s)] for N, d, s in zip(report.N_ladder, report.distances, report.survival_gap)]
    out["chaos.csv"] = csv_bytes(["N", "distance", "survival_gap"], rows, meta)
    return not solution.report.converged


def counterexample_verb(config, coeffs, out, meta):
    results = [exact_costs(N) if N % 2 else brute_force_costs(N) for N in config["ladder"]]
    rows = [result.as_row() for result in results]
    header = list(rows[0].keys())
    out["counterexample.csv"] = csv_bytes(header, rows, meta)
    out["counterexample.json"] = json_bytes({"rows": rows, "limit_cost": limit_cost()}, meta)
    return False


def solve_pde_verb(config, coeffs, out, meta):
    grid = _grid(config, coeffs)
    spacegrid = SpaceGrid.for_domain(coeffs.domain, config["space_nodes"])
    flow = default_init_flow(coeffs, grid)
    value_field = solve_hjb(coeffs, grid, spacegrid, flow)
    density = solve_kfp(coeffs, grid, spacegrid, value_field, initial_density(coeffs.initial_law, spacegrid))
    out["value.csv"] = csv_bytes(*value_field_rows(value_field), meta)
    out["density.csv"] = csv_bytes(*density_field_rows(density), meta)
    summary = {
        "value_at_initial_law": value_at_initial_law(value_field, coeffs.initial_law),
        "masses": density.masses,
        "stability_ratio": stability_ratio(coeffs, grid, spacegrid),
    }
    warning = False
    try:
        summary["conditional_means"] = renormalize(density, coeffs).means
    except ExtinctionError as exc:
        summary["extinction"] = {"first_index": exc.first_index, "mass": exc.mass}
        warning = True
    out["pde.json"] = json_bytes(summary, meta)
    out["value.bin"] = encode_binary(value_field.values)
    out["density.bin"] = encode_binary(density.densities)
    return warning


def validate_model_verb(config, coeffs, out, meta):
    report = validate(coeffs, config["probes"], config["seed"])
    out["validation.json"] = json_bytes(report.as_dict(), meta)
    return not report.passed


VERB_HANDLERS = {
    "simulate-nplayer": simulate_nplayer_verb,
    "solve-mfg": solve_mfg_verb,
    "nash-gap": nash_gap_verb,
    "chaos-study": chaos_study_verb,
    "counterexample": counterexample_verb,
    "solve-pde": solve_pde_verb,
    "validate-model": validate_model_verb,
}


# ---------------------------------------------------------------------
# Run history
# ---------------------------------------------------------------------

def _start_record(verb, config, digest, run_dir):
    try:
        return ExperimentRun.objects.create(
            verb=verb,
            config=config,
            config_hash=digest,
            master_seed=config["seed"],
            version=__version__,
            output_dir=str(run_dir),
        )
    except DatabaseError as exc:
        logger.warning("run history unavailable (%s); run `manage.py migrate`", exc)
        return None


def _finish_record(record, status, exit_code, elapsed, warning=False, error="", checksums=None):
    if record is None:
        return
    record.status = status
    record.exit_code = exit_code
    record.warning = warning
    record.error = error
    record.finished_at = timezone.now()
    record.elapsed_seconds = elapsed
    record.save()
    for name, (digest, size) in (checksums or {}).items():
        RunArtifact.objects.create(run=record, name=name, sha256=digest, size_bytes=size)


# ---------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------

def run(verb: str, config: dict, coeffs=None) -> RunOutcome:
    """
    Run one verb. Module errors propagate (after the run is recorded as
    failed); extinction and non-convergence only raise the warning flag.
    """
    digest = config_hash(config)
    meta = {"master_seed": config["seed"], "config_hash": digest, "version": __version__}
    run_dir = Path(config.get("output_dir") or default_output_root() / f"{verb}-{digest[:12]}")
    if coeffs is None and config.get("model"):
        coeffs = load_descriptor(config["model"])
    record = _start_record(verb, config, digest, run_dir)
    started = time.perf_counter()
    artifacts = {}
    try:
        warning = VERB_HANDLERS[verb](config, coeffs, artifacts, meta)
    except MeanFieldError as exc:
        _finish_record(record, ExperimentRun.Status.FAILED, 1, time.perf_counter() - started, error=str(exc))
        raise
    compute_seconds = time.perf_counter() - started

    checksums = {}
    for name, data in artifacts.items():
        atomic_write(run_dir / name, data)
        checksums[name] = (sha256(data), len(data))
    elapsed = time.perf_counter() - started
    manifest = {
        "verb": verb,
        "config": config,
        "config_hash": digest,
        "master_seed": config["seed"],
        "version": __version__,
        "warning": bool(warning),
        "files": {name: {"sha256": d, "bytes": size} for name, (d, size) in checksums.items()},
        "timings": {"compute_seconds": compute_seconds, "total_seconds": elapsed},
    }
    atomic_write(run_dir / "manifest.json", (json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n").encode())
    _finish_record(record, ExperimentRun.Status.SUCCEEDED, 0, elapsed, bool(warning), checksums=checksums)
    if warning:
        logger.warning("run finished with warnings verb=%s dir=%s", verb, run_dir)
    else:
        logger.info("run finished verb=%s dir=%s files=%d", verb, run_dir, len(checksums))
    return RunOutcome(exit_code=0, run_dir=run_dir, manifest=manifest, warning=bool(warning), artifacts=checksums)
