import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd
from dotenv import load_dotenv

from automaton import build_switcher, find_accepting_fragment, format_decomposition, fragment_for_any, load_nba
from constants import (DEFAULT_LOG_DIR, DEFAULT_OUTPUT_DIR, DEFAULT_SIM_DT, EXIT_CONFIG,
                       EXIT_NO_FRAGMENT, EXIT_OK, EXIT_SYNTHESIS, EXIT_VIOLATION, OUTPUT_ENV_VAR)
from controller import HybridController, StageConfig
from errors import (BlockedTaskError, ConfigError, InfeasiblePaddingError, NoFragmentError,
                    OutOfDomainError, ParameterError, ParseError, SimulationAborted,
                    SynthesisError, TubeSynthError, UnrealizableTripletError, ValidationError)
from plants import (DisturbanceModel, build_plant, plot_axis_frames, simulate, trace_frame,
                    trace_monitor)
from tubes import TubeParams, synthesize_stt, tube_frame, verify_stt
from utils import get_timestamp, read_document, setup_logging, write_csv, write_json
from workspace import load_workspace, ra_task_of_triplet

env = load_dotenv()

logger = logging.getLogger(__name__)


# ----------------------------------------
# Experiment configuration
# ----------------------------------------
@dataclass
class Experiment:
    name: str
    config_path: str
    nba: object
    workspace: object
    proposition: str
    fragment: object
    switcher: object
    plant: object
    stage_config: object
    tube_params: object
    tube_overrides: dict
    plant_block: dict
    initial_state: np.ndarray
    horizon: float
    dt: float
    seed: int
    output_dir: str
    required_visits: int = 1
    report: bool = False


def _resolve(base_dir, path):
    return path if os.path.isabs(path) else os.path.join(base_dir, path)


def resolve_output_dir(cli_out=None, config_out=None, base_dir="."):
    """--out, then the config's output_dir, then $TUBESYNTH_OUT, then <project>/results."""
    if cli_out:
        return os.path.abspath(cli_out)
    if config_out:
        return os.path.abspath(_resolve(base_dir, config_out))
    if os.environ.get(OUTPUT_ENV_VAR):
        return os.path.abspath(os.environ[OUTPUT_ENV_VAR])
    return DEFAULT_OUTPUT_DIR


def _tube_settings(doc, switcher):
    block = doc.get("tube", {})
    params = TubeParams.from_dict(block)
    names = {t.name() for t in switcher.triplets}
    overrides = {}
    for key, override in doc.get("tube_overrides", {}).items():
        if key not in names:
            raise ConfigError(f"tube override '{key}' does not name a triplet of the fragment ({sorted(names)})")
        overrides[key] = TubeParams.from_dict({**block, **override})
    return params, overrides


def load_experiment(config_path, seed=None, out=None):
    doc = read_document(config_path)
    base_dir = os.path.dirname(os.path.abspath(config_path))
    for key in ("automaton", "workspace", "plant", "initial_state"):
        if key not in doc:
            raise ConfigError(f"config {config_path} is missing '{key}'")

    nba = load_nba(_resolve(base_dir, doc["automaton"]))
    workspace = load_workspace(_resolve(base_dir, doc["workspace"]))
    proposition = doc.get("initial_proposition")
    if proposition is None:
        proposition, fragment = fragment_for_any(nba)
    else:
        fragment = find_accepting_fragment(nba, proposition)
    switcher = build_switcher(nba, fragment)

    try:
        plant = build_plant(doc["plant"])
        stage_config = StageConfig.from_dict(doc.get("controller"), plant.stage_count, plant.dimension)
        tube_params, overrides = _tube_settings(doc, switcher)
    except (ParameterError, TypeError) as e:
        raise ConfigError(f"invalid parameters in {config_path}: {e}") from e
    if plant.dimension != workspace.dimension:
        raise ConfigError(f"plant output dimension {plant.dimension} differs from workspace dimension "
                          f"{workspace.dimension}")

    x0 = np.asarray(doc["initial_state"], dtype=float)
    if x0.shape != (plant.state_size,):
        raise ConfigError(f"initial_state needs {plant.state_size} entries, got {x0.size}")
    horizon = float(doc.get("horizon", 0.0))
    dt = float(doc.get("dt", DEFAULT_SIM_DT))
    if not dt > 0 or horizon < 0:
        raise ConfigError(f"need dt > 0 and horizon >= 0 (dt={dt}, horizon={horizon})")

    return Experiment(
        name=doc.get("name", os.path.splitext(os.path.basename(config_path))[0]),
        config_path=str(config_path),
        nba=nba,
        workspace=workspace,
        proposition=proposition,
        fragment=fragment,
        switcher=switcher,
        plant=plant,
        stage_config=stage_config,
        tube_params=tube_params,
        tube_overrides=overrides,
        plant_block=dict(doc["plant"]),
        initial_state=x0,
        horizon=horizon,
        dt=dt,
        seed=int(seed if seed is not None else doc.get("seed", 0)),
        output_dir=resolve_output_dir(out, doc.get("output_dir"), base_dir),
        required_visits=int(doc.get("required_visits", 1)),
        report=bool(doc.get("report", False)),
    )


def _file_stem(triplet):
    return triplet.name().replace(",", "_")


# ----------------------------------------
# Pipeline steps
# ----------------------------------------
def synthesize_previews(exp):
    """Tube and verification report per distinct triplet, entered at the center of S."""
    results = []
    for t in exp.switcher.distinct_triplets():
        params = exp.tube_overrides.get(t.name(), exp.tube_params)
        task = ra_task_of_triplet(t, exp.workspace)
        entry = task.initial_set[0].center
        try:
            tube = synthesize_stt(task, entry, params)
        except SynthesisError as e:
            raise SynthesisError(f"triplet ({t.name()}): {e}", e.report) from e
        coarse = verify_stt(tube, task, params.dt, params.margin)
        fine = verify_stt(tube, task, params.dt / 10.0, params.margin)
        results.append({"triplet": t, "task": task, "tube": tube, "params": params, "entry": entry,
                        "report": coarse, "fine_report": fine})
        logger.info(f"Preview tube ({t.name()}): verified={coarse.passed and fine.passed}, "
                    f"{len(tube.adjustments)} circumvent(s)")
    return results


def run_experiment(exp, disturbance_block=None):
    """Simulate and monitor one experiment. Returns (trace, monitor, aborted cause or None)."""
    controller = HybridController(exp.switcher, exp.workspace, exp.stage_config,
                                  exp.tube_params, exp.tube_overrides)
    block = exp.plant_block.get("disturbance", {}) if disturbance_block is None else disturbance_block
    disturbance = DisturbanceModel.from_dict(block, exp.plant.state_size, seed=exp.seed)
    cause = None
    try:
        trace = simulate(exp.plant, controller, exp.initial_state, exp.horizon, exp.dt, disturbance)
    except SimulationAborted as e:
        trace, cause = e.trace, e.cause
    monitor = trace_monitor(trace, exp.workspace, exp.switcher, exp.required_visits) if len(trace) else None
    return trace, monitor, cause


def _sweep_run(exp, amplitude, seed, threshold):
    block = {"kind": "uniform", "amplitude": amplitude, "seed": seed}
    trace, monitor, cause = run_experiment(exp, block)
    sup_e = monitor["sup_abs_e"].get("stage1", 1.0) if monitor else 1.0
    passed = cause is None and monitor is not None and monitor["passed"] and sup_e <= threshold
    return {"amplitude": amplitude, "seed": seed, "passed": bool(passed), "sup_abs_e_stage1": sup_e,
            "error": str(cause) if cause else None}


def robustness_sweep(exp, seeds, amplitudes, parallel_calls=4, threshold=0.999):
    """
    Re-run an experiment under seeded uniform disturbances. Amplitudes are swept
    in increasing order; the first amplitude at which any seed fails is reported.
    """
    runs = []
    first_failing = None
    largest_passing = None
    for amplitude in sorted(amplitudes):
        with ThreadPoolExecutor(max_workers=parallel_calls) as executor:
            futures = [executor.submit(_sweep_run, exp, amplitude, s, threshold) for s in seeds]
            batch = [f.result() for f in futures]
        runs.extend(batch)
        if all(r["passed"] for r in batch):
            largest_passing = amplitude
        elif first_failing is None:
            first_failing = amplitude
        logger.info(f"Sweep amplitude {amplitude}: {sum(r['passed'] for r in batch)}/{len(batch)} passed")
    return {"runs": runs, "largest_passing_amplitude": largest_passing, "first_failing_amplitude": first_failing}


# ----------------------------------------
# Subcommands
# ----------------------------------------
def cmd_decompose(exp, args):
    print(format_decomposition(exp.proposition, exp.fragment, exp.switcher))
    return EXIT_OK


def cmd_synth(exp, args):
    tube_dir = os.path.join(exp.output_dir, "tubes")
    all_ok = True
    for result in synthesize_previews(exp):
        t, tube, params = result["triplet"], result["tube"], result["params"]
        stem = _file_stem(t)
        write_csv(tube_frame(tube, params.dt), os.path.join(tube_dir, f"{stem}.csv"))
        verified = result["report"].passed and result["fine_report"].passed
        write_json({"triplet": t.name(), "entry": result["entry"].tolist(), "verified": verified,
                    "adjustments": [list(a) for a in tube.adjustments],
                    "verification": result["report"].to_dict(),
                    "fine_verification": result["fine_report"].to_dict()},
                   os.path.join(tube_dir, f"{stem}.verify.json"))
        all_ok = all_ok and verified
        print(f"({t.name()}): {'verified' if verified else 'FAILED'}")
    return EXIT_OK if all_ok else EXIT_SYNTHESIS


def _write_run_outputs(exp, trace, monitor, cause):
    out = exp.output_dir
    frame = trace_frame(trace)
    write_csv(frame, os.path.join(out, "trace.csv"))
    for i, axis in plot_axis_frames(frame, exp.plant.dimension).items():
        write_csv(axis, os.path.join(out, f"plot_axis_{i}.csv"))
    if monitor is not None:
        write_json(monitor, os.path.join(out, "monitor.json"))
    summary = {
        "experiment": exp.name,
        "config": exp.config_path,
        "finished_at": get_timestamp(),
        "initial_proposition": exp.proposition,
        "triplets": [t.name() for t in exp.switcher.triplets],
        "cycle_start": exp.switcher.cycle_start,
        "seed": exp.seed,
        "horizon": exp.horizon,
        "dt": exp.dt,
        "samples": len(trace),
        "switch_events": trace.events,
        "aborted": None if cause is None else {"type": type(cause).__name__, "message": str(cause),
                                               "stage": getattr(cause, "stage", None),
                                               "dimension": getattr(cause, "dimension", None),
                                               "time": getattr(cause, "time", None)},
        "passed": cause is None and monitor is not None and monitor["passed"],
    }
    write_json(summary, os.path.join(out, "run_summary.json"))
    return frame, summary


def cmd_simulate(exp, args):
    label = exp.workspace.label_of(exp.plant.output_of(exp.initial_state))
    if label != exp.proposition:
        raise ConfigError(f"initial output is labeled '{label}', the fragment starts with '{exp.proposition}'")
    trace, monitor, cause = run_experiment(exp)
    frame, summary = _write_run_outputs(exp, trace, monitor, cause)

    if args.report or exp.report:
        try:
            from visualize_results import create_html_report
            report = create_html_report(exp.output_dir, frame, monitor, summary, exp.workspace)
            print(f"Report: {report}")
        except Exception as e:
            logger.error(f"Error generating report: {str(e)}", exc_info=True)
            print("Simulation complete, but report generation failed.")

    if cause is not None:
        print(f"Simulation aborted at sample {len(trace)}: {cause}")
        return EXIT_SYNTHESIS if isinstance(cause, SynthesisError) else EXIT_VIOLATION
    print(f"Visits: {monitor['visits']}, order consistent: {monitor['order_consistent']}, "
          f"unsafe: {monitor['unsafe_occurrence'] is not None}")
    return EXIT_OK if monitor["passed"] else EXIT_VIOLATION


def cmd_verify(exp, args):
    trace_path = args.trace or os.path.join(exp.output_dir, "trace.csv")
    try:
        frame = pd.read_csv(trace_path)
    except FileNotFoundError as e:
        raise ConfigError(f"trace file not found: {trace_path}") from e
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ParseError(f"cannot read trace {trace_path}: {e}", locus=trace_path) from e
    required = ["t", "triplet_index"] + [f"y_{i}" for i in range(1, exp.workspace.dimension + 1)]
    missing = [c for c in required if c not in frame.columns]
    if missing:
        raise ConfigError(f"trace {trace_path} lacks columns {missing}")
    if frame.empty:
        raise ConfigError(f"trace {trace_path} has no samples")

    monitor = trace_monitor(frame, exp.workspace, exp.switcher, exp.required_visits)
    write_json(monitor, os.path.join(exp.output_dir, "verify.json"))
    print(f"Visits: {monitor['visits']}, order consistent: {monitor['order_consistent']}, "
          f"unsafe: {monitor['unsafe_occurrence'] is not None}")
    return EXIT_OK if monitor["passed"] else EXIT_VIOLATION


COMMANDS = {"decompose": cmd_decompose, "synth": cmd_synth, "simulate": cmd_simulate, "verify": cmd_verify}


# ----------------------------------------
# Main entrypoint
# ----------------------------------------
def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="Experiment config (JSON)")
    common.add_argument("--out", default=None, help="Output directory")
    common.add_argument("--seed", type=int, default=None, help="Override the config seed")
    common.add_argument("--quiet", action="store_true", help="Only report errors on the console")

    p = argparse.ArgumentParser(description="Tube-based controller synthesis for automaton specifications")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("decompose", parents=[common], help="Print the fragment, triplets and switcher")
    sub.add_parser("synth", parents=[common], help="Synthesize and verify one preview tube per triplet")
    sim = sub.add_parser("simulate", parents=[common], help="Run the closed loop and monitor the trace")
    sim.add_argument("--report", type=lambda x: x.lower() == 'true', default=False)
    ver = sub.add_parser("verify", parents=[common], help="Monitor a stored trace")
    ver.add_argument("--trace", default=None, help="Trace CSV (default <out>/trace.csv)")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    experiment = os.path.splitext(os.path.basename(args.config))[0]
    ts, log_file = setup_logging(DEFAULT_LOG_DIR, f"{args.command}-{experiment}", quiet=args.quiet)
    if not args.quiet:
        print(f"Logs are being saved to: {log_file}")
    logger.info(f"Starting {args.command} for {args.config}")

    try:
        exp = load_experiment(args.config, seed=args.seed, out=args.out)
        return COMMANDS[args.command](exp, args)
    except (ConfigError, ParseError, ValidationError, OutOfDomainError) as e:
        logger.error(f"Configuration error: {e}")
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NoFragmentError as e:
        logger.error(f"No fragment: {e}")
        print(f"No accepting fragment: {e}", file=sys.stderr)
        return EXIT_NO_FRAGMENT
    except (SynthesisError, BlockedTaskError, UnrealizableTripletError, InfeasiblePaddingError) as e:
        logger.error(f"Synthesis failed: {e}", exc_info=True)
        print(f"Synthesis failed: {e}", file=sys.stderr)
        return EXIT_SYNTHESIS
    except TubeSynthError as e:
        logger.error(f"Run failed: {e}", exc_info=True)
        print(f"Run failed: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
