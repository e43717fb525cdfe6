"""
Command-line entry point: ``python -m fitbound <command> [flags]``.

Every command writes its artifacts to ``<out>/<command>/<tag>/``, points
``<out>/<command>/latest`` at that tag and appends one row to the run ledger.
Library code raises; this module alone turns exceptions into exit codes.
"""
import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

from pydantic import ValidationError

from . import __version__
from .complexity import (
    LOW_TRIALS,
    PosteriorSpec,
    complexity_lower_bound,
    complexity_upper_estimate,
    estimate_complexity,
    suggested_regularization_multiplier,
)
from .config import (
    JOBS,
    LOG_LEVEL,
    OUT_DIR,
    ComplexityConfig,
    CorrelateConfig,
    DiagnoseConfig,
    TrainRunConfig,
    VerifyConfig,
    load_config,
)
from .data_io import (
    load_checkpoint,
    read_dataset_csv,
    read_joint_csv,
    read_records_csv,
    save_checkpoint,
    write_dataset_csv,
    write_decomposition_csv,
    write_joint_csv,
    write_records_csv,
    write_report,
    write_table_csv,
)
from .db import build_engine, record_run
from .errors import ConfigurationError, ContractViolation, FitboundError, InvalidInputError, TrainingDivergedError
from .experiment import (
    ExperimentResult,
    architecture_names,
    compare_architectures,
    correlation_report,
    run_correlation_experiment,
)
from .fitdiag import decompose_dataset, fit_report, input_rows
from .model import ModelSpec
from .models import ComplexityReport
from .risk import expected_risk_bound, gen_error
from .verify import Suite, run_suites

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(name)s %(levelname)s %(message)s"
REPORT_FILE = "report.json"


@dataclass
class CommandResult:
    """What a command hands back to ``main``: exit code, stdout document and ledger fields."""

    exit_code: int
    document: Dict[str, Any]
    config: Dict[str, Any]
    summary: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    lines: List[str] = field(default_factory=list)


def _require(value: Optional[str], flag: str) -> str:
    if value is None:
        raise ConfigurationError(f"{flag} is required (flag or configuration file)")
    return value


def cmd_verify(args: argparse.Namespace, run_dir: Path) -> CommandResult:
    config = load_config(args.config, VerifyConfig, {"seed": args.seed}).with_trials(args.trials)
    suite = Suite(args.suite)
    reports = run_suites(suite, config, args.jobs)

    passed = all(report.passed for report in reports)
    runs_gen_bound = suite in (Suite.GEN_BOUND, Suite.ALL)
    body = {
        "passed": passed,
        "low_trials_warning": runs_gen_bound and config.gen_bound_trials < LOW_TRIALS,
        "suites": [report.model_dump(exclude={"tables"}) for report in reports],
    }
    document = write_report(run_dir / REPORT_FILE, body, "verify", config.model_dump())
    for report in reports:
        for name, rows in report.tables.items():
            write_table_csv(run_dir / f"{name}.csv", rows)

    lines = [f"{report.suite}: {'PASS' if report.passed else 'FAIL'}" for report in reports]
    for report in reports:
        lines += [f"  {check.name}: FAIL (margin {check.margin:.3g})" for check in report.checks if not check.passed]
        lines += [f"  warning: {w}" for w in report.warnings]
    return CommandResult(
        exit_code=0 if passed else ContractViolation.exit_code,
        document=document,
        config=config.model_dump(),
        summary={"passed": passed, "suites": {r.suite: r.passed for r in reports}},
        seed=config.seed,
        lines=lines,
    )


def cmd_complexity(args: argparse.Namespace, run_dir: Path) -> CommandResult:
    config = load_config(
        args.config,
        ComplexityConfig,
        {
            "dataset_path": args.dataset,
            "prior_alpha": args.prior_alpha,
            "num_samples": args.num_samples,
            "seed": args.seed,
        },
    )
    dataset = read_dataset_csv(_require(config.dataset_path, "--dataset"))
    spec = PosteriorSpec.from_counts(dataset.joint_counts(), config.prior_alpha)
    estimate = estimate_complexity(spec, config.num_samples, config.seed, args.jobs)
    upper = complexity_upper_estimate(spec)
    report = ComplexityReport(
        alphabet_size=int(spec.counts.size),
        n=spec.n,
        prior_alpha=[float(a) for a in spec.prior_alpha],
        estimate=estimate,
        lower_bound=complexity_lower_bound(spec),
        upper_reciprocal=None if upper is None else upper[0],
        upper_qmax=None if upper is None else upper[1],
        regularization_multiplier=suggested_regularization_multiplier(estimate.closed_form),
    )
    document = write_report(run_dir / REPORT_FILE, report, "complexity", config.model_dump())
    return CommandResult(
        exit_code=0,
        document=document,
        config=config.model_dump(),
        summary={"closed_form": estimate.closed_form, "mean": estimate.mean, "n": spec.n},
        seed=config.seed,
        lines=[
            f"complexity (closed form): {estimate.closed_form:.6f} nats",
            f"complexity (Monte Carlo): {estimate.mean:.6f} ± {estimate.std_error:.2g}",
            f"lower bound: {report.lower_bound:.6f}",
            f"regularization multiplier (heuristic): {report.regularization_multiplier:.4g}",
        ],
    )


def cmd_diagnose(args: argparse.Namespace, run_dir: Path) -> CommandResult:
    overrides: Dict[str, Any] = {
        "checkpoint_path": args.checkpoint,
        "dataset_path": args.dataset,
        "q_bar_path": args.q_bar,
        "delta": args.delta,
    }
    if args.loss is not None:
        overrides["loss"] = {"kind": args.loss, "l_max": args.l_max}
    config = load_config(args.config, DiagnoseConfig, overrides)

    checkpoint = load_checkpoint(_require(config.checkpoint_path, "--checkpoint"))
    spec, theta = checkpoint.spec, checkpoint.params()
    dataset = read_dataset_csv(_require(config.dataset_path, "--dataset"), num_classes=spec.num_classes)

    decompositions = decompose_dataset(spec, theta, dataset, per_param=config.with_g_min, jobs=args.jobs)
    report = fit_report(spec, theta, dataset, config.loss, decompositions, config.with_g_min)
    write_decomposition_csv(run_dir / "decomposition.csv", input_rows(decompositions))

    body: Dict[str, Any] = {"fit": report.model_dump()}
    lines = [
        f"fitting error: {report.fit:.6g} (normalized {report.fit_normalized:.6g})",
        f"bound sqrt(E[F + G]): {report.bound:.6g}",
    ]
    if report.g_min is not None:
        lines.append(f"G_M: {report.g_min:.6g}")
    q_bar = read_joint_csv(config.q_bar_path) if config.q_bar_path is not None else None
    if config.delta is not None:
        risk_bound = expected_risk_bound(spec, theta, dataset, config.delta, config.loss, q_bar=q_bar)
        body["risk_bound"] = risk_bound.model_dump()
        lines.append(f"expected risk bound (δ={config.delta}): {risk_bound.total_bound:.6g}")
        lines.append(f"model I(X;Y): {risk_bound.model_mutual_information:.6g} nats")
    if q_bar is not None:
        body["gen_error"] = gen_error(spec, theta, dataset, q_bar, config.loss)
        lines.append(f"generalization error: {body['gen_error']:.6g}")

    document = write_report(run_dir / REPORT_FILE, body, "diagnose", config.model_dump())
    return CommandResult(
        exit_code=0,
        document=document,
        config=config.model_dump(),
        summary={"fit": report.fit, "fit_normalized": report.fit_normalized, "bound": report.bound},
        seed=checkpoint.seed,
        lines=lines,
    )


def _train_one(config: TrainRunConfig, spec: ModelSpec, seed: int, prefix: str, run_dir: Path, jobs: int) -> ExperimentResult:
    records_path = run_dir / f"{prefix}records_seed{seed}.csv"
    try:
        result = run_correlation_experiment(spec, config.train, config.data, seed, config.display_constant, jobs)
    except TrainingDivergedError as e:
        if e.run is not None:
            write_records_csv(records_path, e.run.records)
            logger.error("Kept %d epoch records in %s", len(e.run.records), records_path)
        raise

    write_records_csv(records_path, result.run.records)
    save_checkpoint(run_dir / f"{prefix}checkpoint_seed{seed}.json", spec, result.run.theta, seed)
    write_report(run_dir / f"{prefix}correlation_seed{seed}.json", result.report, "train", config.model_dump())
    return result


def cmd_train(args: argparse.Namespace, run_dir: Path) -> CommandResult:
    seeds = [args.seed] if args.seed is not None else args.seeds
    config = load_config(args.config, TrainRunConfig, {"seeds": seeds})
    names = architecture_names(config.models)
    # a single architecture keeps unprefixed file names
    prefixes = [""] if len(names) == 1 else [f"{name}_" for name in names]
    overview = []
    comparisons = []
    for seed in config.seeds:
        results = []
        for spec, name, prefix in zip(config.models, names, prefixes):
            logger.info("Training %s with seed %d", name, seed)
            result = _train_one(config, spec, seed, prefix, run_dir, args.jobs)
            results.append(result)
            final = result.run.records[-1]
            overview.append(
                {
                    "architecture": name,
                    "seed": seed,
                    "final_train_loss": final.train_loss,
                    "final_test_accuracy": final.test_accuracy,
                    "stabilized_at": result.report.stabilized_at,
                    "r_accuracy_f": result.report.r_accuracy_f,
                    "r_accuracy_g": result.report.r_accuracy_g,
                }
            )

        # every architecture sees the same task for a given seed
        first = results[0]
        write_joint_csv(run_dir / f"q_bar_seed{seed}.csv", first.q_bar)
        write_dataset_csv(run_dir / f"train_seed{seed}.csv", first.train)
        write_dataset_csv(run_dir / f"test_seed{seed}.csv", first.test)
        if len(results) > 1:
            comparison = compare_architectures(results, config.models)
            write_report(run_dir / f"architectures_seed{seed}.json", comparison, "train", config.model_dump())
            comparisons.append(comparison.model_dump(include={"seed", "window", "cross_accuracy_g"}))

    body: Dict[str, Any] = {"runs": overview}
    if comparisons:
        body["architectures"] = comparisons
    document = write_report(run_dir / "summary.json", body, "train", config.model_dump())
    lines = [
        f"{row['architecture']} seed {row['seed']}: accuracy {row['final_test_accuracy']:.4f}, "
        f"r(acc, F) = {row['r_accuracy_f']}, r(acc, G) = {row['r_accuracy_g']}"
        for row in overview
    ]
    return CommandResult(
        exit_code=0,
        document=document,
        config=config.model_dump(),
        summary=body,
        seed=config.seeds[0],
        lines=lines,
    )


def cmd_correlate(args: argparse.Namespace, run_dir: Path) -> CommandResult:
    config = load_config(
        args.config,
        CorrelateConfig,
        {
            "records_path": args.records,
            "seed": args.seed,
            "stabilization_window": args.window,
            "stabilization_tolerance": args.tolerance,
            "display_constant": args.display_constant,
        },
    )
    columns = read_records_csv(_require(config.records_path, "--records"))
    report = correlation_report(
        columns,
        config.seed,
        config.stabilization_window,
        config.stabilization_tolerance,
        config.display_constant,
    )
    document = write_report(run_dir / REPORT_FILE, report, "correlate", config.model_dump())
    return CommandResult(
        exit_code=0,
        document=document,
        config=config.model_dump(),
        summary={"r_accuracy_f": report.r_accuracy_f, "r_accuracy_g": report.r_accuracy_g},
        seed=config.seed,
        lines=[
            f"stabilized at epoch: {report.stabilized_at}",
            f"r(accuracy, E[F]): {report.r_accuracy_f}",
            f"r(accuracy, E[G]): {report.r_accuracy_g}",
        ]
        + [f"warning: {w}" for w in report.warnings],
    )


COMMANDS: Dict[str, Callable[[argparse.Namespace, Path], CommandResult]] = {
    "verify": cmd_verify,
    "complexity": cmd_complexity,
    "diagnose": cmd_diagnose,
    "train": cmd_train,
    "correlate": cmd_correlate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file; flags override its values")
    common.add_argument("--seed", type=int, help="master seed in [0, 2^64)")
    common.add_argument("--out", default=OUT_DIR, help="output root (default: %(default)s)")
    common.add_argument("--jobs", type=int, default=JOBS, help="worker threads; results do not depend on it")
    common.add_argument("--tag", help="run directory name (default: UTC timestamp)")
    common.add_argument("--json", action="store_true", help="print the report JSON on stdout")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging on stderr")

    parser = argparse.ArgumentParser(prog="fitbound", description="Information-theoretic error bounds for classifiers")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    verify = sub.add_parser("verify", parents=[common], help="run verification suites")
    verify.add_argument("suite", nargs="?", default=Suite.ALL.value, choices=[s.value for s in Suite])
    verify.add_argument("--trials", type=int, help="Monte-Carlo trials for the tail and coverage suites")

    complexity = sub.add_parser("complexity", parents=[common], help="task complexity of a dataset")
    complexity.add_argument("--dataset", help="dataset CSV (f0,…,label)")
    complexity.add_argument("--prior-alpha", type=float, help="symmetric Dirichlet prior concentration")
    complexity.add_argument("--num-samples", type=int, help="Monte-Carlo posterior draws")

    diagnose = sub.add_parser("diagnose", parents=[common], help="fitting-error report for a checkpoint")
    diagnose.add_argument("--checkpoint", help="checkpoint JSON")
    diagnose.add_argument("--dataset", help="dataset CSV (f0,…,label)")
    diagnose.add_argument("--q-bar", help="ground-truth joint CSV (f0,…,label,probability)")
    diagnose.add_argument("--delta", type=float, help="confidence level for the expected-risk bound")
    diagnose.add_argument("--loss", choices=["softmax_cross_entropy", "clipped_cross_entropy", "zero_one"])
    diagnose.add_argument("--l-max", type=float, default=10.0, help="clip level for clipped_cross_entropy")

    train = sub.add_parser("train", parents=[common], help="train and correlate accuracy with F and G")
    train.add_argument("--seeds", type=int, nargs="+", help="one run per seed")

    correlate = sub.add_parser("correlate", parents=[common], help="recompute correlations from a records CSV")
    correlate.add_argument("--records", help="epoch-records CSV")
    correlate.add_argument("--window", type=int, help="stabilization window in epochs")
    correlate.add_argument("--tolerance", type=float, help="stabilization tolerance")
    correlate.add_argument("--display-constant", type=float, help="accuracy scaling used in the plot columns")
    return parser


def configure_logging(verbose: bool) -> None:
    level = logging.DEBUG if verbose else getattr(logging, LOG_LEVEL.upper(), logging.INFO)
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def _run_dir(out: str, command: str, tag: Optional[str]) -> Path:
    tag = tag or datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S%fZ")
    if Path(tag).name != tag or tag in ("", ".", "..", "latest"):
        raise InvalidInputError(f"invalid run tag {tag!r}")
    run_dir = Path(out) / command / tag
    run_dir.mkdir(parents=True, exist_ok=True)
    (Path(out) / command / "latest").write_text(tag + "\n")
    return run_dir


def _record(args: argparse.Namespace, run_dir: Optional[Path], result: Optional[CommandResult], exit_code: int, error: Optional[str]) -> None:
    try:
        engine = build_engine(out_dir=args.out)
    except Exception as e:
        logger.error("Run ledger unavailable: %s", e)
        return
    summary = dict(result.summary) if result is not None else {}
    if error is not None:
        summary["error"] = error
    record_run(
        engine,
        command=args.command,
        tag=run_dir.name if run_dir is not None else "",
        exit_code=exit_code,
        output_dir=str(run_dir) if run_dir is not None else "",
        config=result.config if result is not None else {},
        summary=summary,
        seed=result.seed if result is not None else args.seed,
    )


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)

    run_dir: Optional[Path] = None
    result: Optional[CommandResult] = None
    error: Optional[str] = None
    try:
        if args.jobs < 1:
            raise ConfigurationError(f"--jobs must be positive, got {args.jobs}")
        run_dir = _run_dir(args.out, args.command, args.tag)
        logger.info("Running %s into %s", args.command, run_dir)
        result = COMMANDS[args.command](args, run_dir)
        exit_code = result.exit_code
    except FitboundError as e:
        logger.error("%s failed: %s", args.command, e)
        error, exit_code = str(e), e.exit_code
    except ValidationError as e:
        logger.error("%s failed: invalid configuration: %s", args.command, e)
        error, exit_code = str(e), 2
    except OSError as e:
        logger.error("%s failed: %s", args.command, e)
        error, exit_code = str(e), 1

    if result is not None:
        if args.json:
            print(json.dumps(result.document, indent=2, default=str))
        else:
            for line in result.lines:
                print(line)
            print(f"artifacts: {run_dir}")
    elif error is not None:
        print(f"error: {error}", file=sys.stderr)

    _record(args, run_dir, result, exit_code, error)
    logger.info("%s finished with exit code %d", args.command, exit_code)
    return exit_code
