"""Command-line pipeline over the library stages.

Usage::

    abfkit abstract|complexity|certify|synthesize|pipeline \
        --config FILE [--seed N] [--profile desk|paper] [--out DIR]

Exit codes: 0 success (certified and, where applicable, synthesized),
2 certification rejected, 3 empty winning set, 4 data acquisition failure,
5 configuration error. One global seed fans out deterministically to the
per-stage sample streams, so identical configs reproduce identical artifacts.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .abf import write_certificate
from .abstraction import build_abstraction, cells_within, write_abstraction
from .bounds import SampleSpec, data_requirement_surface, min_samples, write_surface
from .config import RunConfig
from .errors import (
    AbfkitError,
    ConfigError,
    DataAcquisitionError,
    InfeasibleError,
)
from .scenario import (
    Rejection,
    ScenarioProblem,
    solve_sop,
    verdict,
    write_problem_manifest,
    write_report,
)
from .synthesis import max_invariant_set, simulate_closed_loop, write_controller, write_trajectory
from .systems import ExternalCommandSystem, collect_dataset, write_dataset

EXIT_OK = 0
EXIT_REJECTED = 2
EXIT_SYNTHESIS_FAILURE = 3
EXIT_DATA_ERROR = 4
EXIT_CONFIG_ERROR = 5


def _stage_seed(seed: int, stage: str) -> int:
    """Deterministic per-stage stream derived from the single global seed."""
    offsets = {"probe": 1, "dataset": 2, "simulate": 3}
    return int(np.random.SeedSequence([int(seed), offsets[stage]]).generate_state(1)[0])


def _close(system) -> None:
    if isinstance(system, ExternalCommandSystem):
        system.close()


def _sample_spec(config: RunConfig, system, box, inputs, grid, template) -> SampleSpec:
    lip = config.lipschitz_constants(
        system, box, inputs, grid, template, _stage_seed(config.seed, "probe")
    )
    r = 1 + template.size + (1 if config.rho_tilde is None else 0)
    return SampleSpec(
        epsilon=config.epsilon,
        beta=config.beta,
        n=int(config.get("complexity.n", box.dimension)),
        r=int(config.get("complexity.r", r)),
        lipschitz=lip,
    )


def cmd_abstract(config: RunConfig, out_dir: Path) -> tuple[int, dict]:
    system = config.build_system()
    try:
        grid = config.build_grid()
        inputs = config.build_inputs()
        abstraction = build_abstraction(system, grid, inputs)
    finally:
        _close(system)
    csv_path = out_dir / "abstraction.csv"
    json_path = out_dir / "abstraction.json"
    write_abstraction(abstraction, csv_path, json_path)
    out_edges = int(np.sum(abstraction.transitions == abstraction.out_index))
    print(
        f"abstraction: {abstraction.n_states} states x {inputs.count} inputs, "
        f"{out_edges} transitions leave the box"
    )
    return EXIT_OK, {
        "abstraction_csv": str(csv_path),
        "abstraction_json": str(json_path),
        "states": abstraction.n_states,
        "inputs": inputs.count,
        "out_transitions": out_edges,
    }


def cmd_complexity(config: RunConfig, out_dir: Path) -> tuple[int, dict]:
    system = config.build_system()
    try:
        box = config.build_box()
        inputs = config.build_inputs()
        grid = config.build_grid()
        template = config.build_template()
        spec = _sample_spec(config, system, box, inputs, grid, template)
    finally:
        _close(system)
    n_min = min_samples(spec)
    print(f"minimum sample count: {n_min}")
    artifacts: dict = {
        "n_min": n_min,
        "epsilon": list(spec.epsilon),
        "beta": spec.beta,
        "lipschitz": list(spec.lipschitz),
        "r": spec.r,
    }
    reference = config.values.get("complexity.reference_n")
    if reference is not None:
        ref = int(reference)
        delta = (n_min - ref) / ref
        print(f"reference sample count: {ref} (delta {delta:+.2%})")
        artifacts["reference_n"] = ref
        artifacts["reference_delta"] = delta
    if "complexity.epsilon_grid" in config.values and "complexity.beta_grid" in config.values:
        rows = data_requirement_surface(
            spec,
            config.get_list("complexity.epsilon_grid"),
            config.get_list("complexity.beta_grid"),
        )
        surface_csv = out_dir / "surface.csv"
        surface_json = out_dir / "surface.json"
        write_surface(rows, surface_csv, surface_json)
        artifacts["surface_csv"] = str(surface_csv)
        print(f"surface: {len(rows)} grid points -> {surface_csv}")
    return EXIT_OK, artifacts


def cmd_certify(config: RunConfig, out_dir: Path) -> tuple[int, dict]:
    system = config.build_system()
    try:
        box = config.build_box()
        inputs = config.build_inputs()
        grid = config.build_grid()
        template = config.build_template()

        raw_count = config.values.get("scenario.sample_count", "auto")
        if raw_count == "auto":
            spec = _sample_spec(config, system, box, inputs, grid, template)
            count = min_samples(spec)
        else:
            count = int(raw_count)
        print(f"collecting {count} x {inputs.count} one-step experiments")
        dataset = collect_dataset(
            system, box, inputs, count, _stage_seed(config.seed, "dataset")
        )
        abstraction = build_abstraction(system, grid, inputs)
    finally:
        _close(system)

    problem = ScenarioProblem(
        template=template,
        dataset=dataset,
        abstraction=abstraction,
        gamma_tilde_set=config.gamma_tilde_set,
        rho_tilde=config.rho_tilde,
        sigma_floor=float(config.get("abf.sigma_floor", 1e-9)),
        sigma_max=float(config.get("abf.sigma_max", 1e9)),
    )
    report = solve_sop(problem, top_k=int(config.get("scenario.top_k", 64)))
    outcome = verdict(
        report, config.epsilon, config.beta, psi=config.psi(report.gamma_tilde)
    )
    report = report.with_verdict(config.epsilon, config.beta)

    write_abstraction(abstraction, out_dir / "abstraction.csv", out_dir / "abstraction.json")
    write_problem_manifest(problem, out_dir / "problem.json")
    write_report(report, out_dir / "report.json")
    artifacts: dict = {
        "mu_star": report.mu_star,
        "gamma_tilde": report.gamma_tilde,
        "sample_count": report.sample_count,
        "report_json": str(out_dir / "report.json"),
    }
    if bool(config.get("io.write_dataset", True)):
        dataset_path = out_dir / "dataset.csv"
        write_dataset(dataset, dataset_path)
        artifacts["dataset_csv"] = str(dataset_path)

    if isinstance(outcome, Rejection):
        rejection = {
            "mu_star": outcome.mu_star,
            "max_epsilon": outcome.max_epsilon,
            "slack": outcome.slack,
        }
        with open(out_dir / "rejection.json", "w") as fh:
            json.dump(rejection, fh, indent=2)
            fh.write("\n")
        print(
            f"rejected: mu_star {outcome.mu_star:.6g} + max epsilon "
            f"{outcome.max_epsilon:.6g} = {outcome.slack:.6g} > 0"
        )
        artifacts["verdict"] = False
        artifacts["rejection_json"] = str(out_dir / "rejection.json")
        return EXIT_REJECTED, artifacts

    cert_path = out_dir / "certificate.json"
    write_certificate(outcome, cert_path)
    print(
        f"certified: mu_star {report.mu_star:.6g}, gamma {outcome.gamma:.4g}, "
        f"rho {outcome.rho:.4g}, precision {outcome.epsilon_tilde:.4g}, "
        f"confidence {outcome.confidence:.4g}"
    )
    artifacts["verdict"] = True
    artifacts["certificate_json"] = str(cert_path)
    return EXIT_OK, artifacts


def cmd_synthesize(config: RunConfig, out_dir: Path, certificate=None) -> tuple[int, dict]:
    system = config.build_system()
    try:
        box = config.build_box()
        grid = config.build_grid()
        inputs = config.build_inputs()
        abstraction = build_abstraction(system, grid, inputs)

        if "safety.lower" in config.values:
            safe_lower = np.array(config.get_list("safety.lower"))
        else:
            safe_lower = np.array(box.lower)
        if "safety.upper" in config.values:
            safe_upper = np.array(config.get_list("safety.upper"))
        else:
            safe_upper = np.array(box.upper)
        if bool(config.get("safety.deflate_epsilon", False)) and certificate is not None:
            margin = certificate.epsilon_tilde
            safe_lower = safe_lower + margin
            safe_upper = safe_upper - margin
            if np.any(safe_lower >= safe_upper):
                print("deflated safe box is empty")
                return EXIT_SYNTHESIS_FAILURE, {"winning_cells": 0}
        safe = cells_within(grid, safe_lower, safe_upper)
        controller = max_invariant_set(abstraction, safe)
        artifacts: dict = {"safe_cells": int(safe.size), "winning_cells": len(controller.winning_set)}
        if controller.is_empty:
            print("synthesis failed: the winning set is empty")
            return EXIT_SYNTHESIS_FAILURE, artifacts

        controller_path = out_dir / "controller.csv"
        write_controller(controller, controller_path)
        artifacts["controller_csv"] = str(controller_path)
        print(
            f"controller: {len(controller.winning_set)} / {safe.size} safe cells winning"
        )

        x0 = np.array(config.get_list("simulate.x0"))
        horizon = int(config.get("simulate.horizon", 100))
        trajectory = simulate_closed_loop(system, controller, grid, x0, horizon)
    finally:
        _close(system)

    trajectory_path = out_dir / "trajectory.csv"
    write_trajectory(trajectory, trajectory_path)
    manifest = {
        "trajectory_csv": trajectory_path.name,
        "series": [
            {"name": f"x_{d}", "column": f"x_{d}"} for d in range(box.dimension)
        ] + [{"name": "input_index", "column": "input_index"}],
        "safe_box": {"lower": safe_lower.tolist(), "upper": safe_upper.tolist()},
        "event": trajectory.event,
        "event_time": trajectory.event_time,
        "steps": trajectory.length,
    }
    with open(out_dir / "plot_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    artifacts["trajectory_csv"] = str(trajectory_path)
    artifacts["event"] = trajectory.event
    if trajectory.event == "no_controller":
        print(f"simulation stopped at t={trajectory.event_time}: no admissible input")
    else:
        print(f"simulation completed {trajectory.length} steps")
    return EXIT_OK, artifacts


def cmd_pipeline(config: RunConfig, out_dir: Path) -> tuple[int, dict]:
    stages = []
    overall = EXIT_OK
    certificate = None

    def run(name, fn, *args):
        nonlocal overall
        start = time.perf_counter()
        code, artifacts = fn(config, out_dir, *args)
        stages.append(
            {
                "stage": name,
                "exit_code": code,
                "artifacts": artifacts,
                "wall_clock_s": time.perf_counter() - start,
            }
        )
        if code != EXIT_OK and overall == EXIT_OK:
            overall = code
        return code, artifacts

    run("abstract", cmd_abstract)
    run("complexity", cmd_complexity)
    code, artifacts = run("certify", cmd_certify)
    certified = code == EXIT_OK
    if certified:
        from .abf import read_certificate

        certificate = read_certificate(Path(artifacts["certificate_json"]))
        run("synthesize", cmd_synthesize, certificate)

    report = {
        "profile": config.profile,
        "seed": config.seed,
        "stages": stages,
        "verdict": certified,
        "exit_code": overall,
    }
    with open(out_dir / "pipeline_report.json", "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    print(f"pipeline verdict: {'certified' if certified else 'rejected'}")
    return overall, report


_COMMANDS = {
    "abstract": cmd_abstract,
    "complexity": cmd_complexity,
    "certify": cmd_certify,
    "synthesize": cmd_synthesize,
    "pipeline": cmd_pipeline,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="abfkit",
        description="Data-driven finite abstractions with certified closeness bounds",
    )
    parser.add_argument("--version", action="version", version=f"abfkit {__version__}")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, help="flat key-value config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--profile", choices=["desk", "paper"], default=None)
    parser.add_argument("--out", default=None, help="output directory")
    args = parser.parse_args(argv)

    overrides: dict[str, str] = {}
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    if args.profile is not None:
        overrides["profile"] = args.profile

    try:
        config = RunConfig.from_file(args.config, overrides)
    except (OSError, ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR

    if config.profile == "paper":
        print(
            "warning: profile 'paper' uses the full-scale parameters; expect a "
            "very long run and six-figure sample counts",
            file=sys.stderr,
        )

    out_dir = Path(args.out or config.values.get("out", "abfkit_out"))
    out_dir.mkdir(parents=True, exist_ok=True)

    try:
        code, _ = _COMMANDS[args.command](config, out_dir)
        return code
    except DataAcquisitionError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA_ERROR
    except (ConfigError, InfeasibleError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except AbfkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
