"""
Command-line harness for martnorm.

    python -m app validate --model m.json
    python -m app norm --model m.json --process Y --strategy finest
    python -m app drbsde solve --model m.json --instance main
    python -m app generate --kind zigzag --depth 6 --seed 42 --out inst.json
    python -m app suite --config configs/norm_equivalence.json --reproducible
    python -m app summary --csv norm_equivalence.csv

Exit codes: 0 on success, 1 on a computation error, 2 on a usage error.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from pydantic import ValidationError

from app.core.config import settings
from app.core.exceptions import MartnormError
from app.core.logging_setup import setup_logging
from app.models.filtration import StoppingTime
from app.schemas.generators import GeneratorSpec
from app.schemas.model import DrbsdeInstanceDocument
from app.schemas.suite import SuiteConfig
from app.services.decomposition import decomposition_service
from app.services.drbsde import drbsde_service
from app.services.filtration_core import filtration_service
from app.services.generators import generator_service, instance_fingerprint
from app.services.gexp import g_expectation_service
from app.services.model_io import LoadedModel, dump_document, load_document, load_model
from app.services.suite import SuiteRunner, report_summary, write_pilot_config

logger = logging.getLogger("martnorm.cli")

STRATEGIES = ("finest", "enumerate", "greedy")


def _emit(payload: Any, out: Optional[str]) -> None:
    if hasattr(payload, "model_dump"):
        payload = payload.model_dump(by_alias=True)
    text = json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False)
    print(text)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")
        logger.info(f"wrote {out}")


def _instance(loaded: LoadedModel, ref: Optional[str]):
    """An instance named in the model document, or one read from a separate JSON file"""
    if ref and ref.endswith(".json") and Path(ref).is_file():
        spec = DrbsdeInstanceDocument.model_validate_json(Path(ref).read_text(encoding="utf-8"))
        doc = loaded.doc.model_copy(update={"instances": {**loaded.doc.instances, ref: spec}})
        return LoadedModel(doc).instance(ref)
    return loaded.instance(ref)


# Handlers ----------------------------------------------------------------------


def cmd_validate(args) -> int:
    report = filtration_service.validate_model(load_document(args.model))
    _emit(report, args.out)
    return 0 if report.passed else 1


def cmd_norm(args) -> int:
    loaded = load_model(args.model)
    report = decomposition_service.norm_p(
        loaded.model, loaded.measure(args.measure), loaded.process(args.process),
        args.strategy, args.max_segments,
    )
    _emit(report, args.out)
    return 0


def cmd_decompose(args) -> int:
    loaded = load_model(args.model)
    model, measure, Y = loaded.model, loaded.measure(args.measure), loaded.process(args.process)
    dec = decomposition_service.doob_decompose(model, measure, Y)
    bracket = decomposition_service.quadratic_variation_energy(model, measure, dec.M)
    tv = decomposition_service.total_variation(model, dec.A).values[model.leaves]
    variation = filtration_service.leaf_expectation(model, measure, tv ** 2)
    _emit(dec.to_document(model, bracket, variation), args.out)
    return 0


def cmd_drbsde(args) -> int:
    loaded = load_model(args.model)
    model, measure = loaded.model, loaded.measure(args.measure)
    scheme = None if args.scheme == "auto" else args.scheme

    if args.action == "solve":
        solution = drbsde_service.solve(model, measure, _instance(loaded, args.instance), scheme)
        expected = filtration_service.leaf_expectation(model, measure, solution.leaf_variation())
        _emit(solution.to_document(expected), args.out)
    elif args.action == "estimate":
        _emit(drbsde_service.estimate_report(model, measure, _instance(loaded, args.instance), scheme), args.out)
    elif args.action == "difference":
        first, second = _instance(loaded, args.first), _instance(loaded, args.second)
        report = drbsde_service.difference_report(
            model, measure, first, second,
            drbsde_service.solve(model, measure, first, scheme),
            drbsde_service.solve(model, measure, second, scheme),
        )
        _emit(report, args.out)
    elif args.action == "sensitivity":
        report = drbsde_service.barrier_shift_sensitivity(
            model, measure, _instance(loaded, args.instance), tuple(args.ns), scheme
        )
        _emit(report, args.out)
    return 0


def cmd_gexp(args) -> int:
    loaded = load_model(args.model)
    model, family = loaded.model, loaded.family()
    Y = loaded.process(args.process)

    if args.action == "expectation":
        if args.at is None:
            _emit({"value": g_expectation_service.g_expectation(model, family, Y)}, args.out)
        else:
            at = StoppingTime.constant(model, args.at)
            base = loaded.measure(args.base)
            result = g_expectation_service.conditional_g_expectation(model, family, Y, at, base)
            _emit({"values": result.to_mapping(model)}, args.out)
    elif args.action == "classify":
        _emit(g_expectation_service.classify(model, family, Y), args.out)
    elif args.action == "norm":
        if args.kind == "cp":
            report = g_expectation_service.norm_cp(model, family, Y, args.strategy, args.max_segments)
        else:
            report = g_expectation_service.norm_g(model, family, Y, args.strategy, args.max_segments)
        _emit(report, args.out)
    elif args.action == "decompose":
        _emit(g_expectation_service.decomposition_family(model, family, Y), args.out)
    return 0


def cmd_generate(args) -> int:
    spec = GeneratorSpec(
        seed=args.seed,
        depth=args.depth,
        branching=args.branching,
        value_scale=args.value_scale,
        kind=args.kind,
        monotone=args.monotone,
        stride=args.stride,
        sigma_low=args.sigma_low,
        sigma_high=args.sigma_high,
    )
    doc = generator_service.random_instance(spec)
    if args.out:
        dump_document(doc, args.out)
        logger.info(f"wrote {args.kind} instance to {args.out} (sha256 {instance_fingerprint(doc)})")
    else:
        print(dump_document(doc))
    return 0


def cmd_suite(args) -> int:
    config = SuiteConfig.model_validate_json(Path(args.config).read_text(encoding="utf-8"))
    if args.workers:
        config = config.model_copy(update={"workers": args.workers})
    runner = SuiteRunner(config)

    if args.pilot:
        window = runner.pilot()
        target = args.out or str(Path(args.config).with_suffix(".pilot.json"))
        write_pilot_config(config, window, target)
        logger.info(f"pilot window for {config.check}: [{window[0]:.6g}, {window[1]:.6g}] -> {target}")
        return 0

    csv_path = args.out or config.csv
    text = runner.run(out=csv_path, reproducible=args.reproducible)
    if not csv_path:
        sys.stdout.write(text)
    summary = report_summary(text)
    _emit(summary, config.summary)
    if args.fail_on_violation and not summary.passed:
        logger.error(f"{len(summary.violating_seeds)} seed(s) outside the window")
        return 1
    return 0


def cmd_summary(args) -> int:
    summary = report_summary(Path(args.csv).read_text(encoding="utf-8"))
    _emit(summary, args.out)
    return 0


# Parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help="also write the JSON output to this path")
    common.add_argument("--log-level", default=None, help=f"logging level (default {settings.LOG_LEVEL})")

    parser = argparse.ArgumentParser(prog="martnorm", description="Semimartingale norms on finite filtrations.")
    sub = parser.add_subparsers(dest="command", required=True)

    def model_args(p, process=True):
        p.add_argument("--model", required=True, help="model JSON document")
        if process:
            p.add_argument("--process", required=True, help="process name in the model document")

    p = sub.add_parser("validate", parents=[common], help="check a model document")
    model_args(p, process=False)
    p.set_defaults(handler=cmd_validate)

    p = sub.add_parser("norm", parents=[common], help="sup norm and partition norm of a process")
    model_args(p)
    p.add_argument("--measure", default="ref")
    p.add_argument("--strategy", choices=STRATEGIES, default=settings.NORM_STRATEGY)
    p.add_argument("--max-segments", type=int, default=None)
    p.set_defaults(handler=cmd_norm)

    p = sub.add_parser("decompose", parents=[common], help="Doob decomposition of a process")
    model_args(p)
    p.add_argument("--measure", default="ref")
    p.set_defaults(handler=cmd_decompose)

    p = sub.add_parser("drbsde", help="doubly reflected backward equations")
    actions = p.add_subparsers(dest="action", required=True)
    for name in ("solve", "estimate", "difference", "sensitivity"):
        a = actions.add_parser(name, parents=[common])
        model_args(a, process=False)
        a.add_argument("--measure", default="ref")
        a.add_argument("--scheme", choices=("auto", "explicit", "picard"), default="auto")
        if name == "difference":
            a.add_argument("--first", required=True, help="instance name or instance JSON file")
            a.add_argument("--second", required=True, help="instance name or instance JSON file")
        else:
            a.add_argument("--instance", default=None, help="instance name or instance JSON file")
        if name == "sensitivity":
            a.add_argument("--ns", type=int, nargs="+", default=[2, 4, 8, 16])
        a.set_defaults(handler=cmd_drbsde)

    p = sub.add_parser("gexp", help="G-expectations over the model's measure family")
    actions = p.add_subparsers(dest="action", required=True)
    for name in ("expectation", "classify", "norm", "decompose"):
        a = actions.add_parser(name, parents=[common])
        model_args(a)
        if name == "expectation":
            a.add_argument("--at", type=int, default=None, help="condition on this level")
            a.add_argument("--base", default="ref", help="base measure for the conditional version")
        if name == "norm":
            a.add_argument("--kind", choices=("g", "cp"), default="g")
            a.add_argument("--strategy", choices=STRATEGIES, default=settings.NORM_STRATEGY)
            a.add_argument("--max-segments", type=int, default=None)
        a.set_defaults(handler=cmd_gexp)

    p = sub.add_parser("generate", parents=[common], help="write a seeded instance")
    p.add_argument("--kind", default="random_semimartingale",
                   choices=("random_semimartingale", "random_barriers", "zigzag", "equal_barriers",
                            "g_zigzag", "volatility_family"))
    p.add_argument("--depth", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--branching", type=int, default=2)
    p.add_argument("--value-scale", type=float, default=1.0)
    p.add_argument("--monotone", action="store_true")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--sigma-low", type=float, default=0.5, help="volatility_family: low volatility")
    p.add_argument("--sigma-high", type=float, default=1.0, help="volatility_family: high volatility")
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("suite", parents=[common], help="run a seeded check suite")
    p.add_argument("--config", required=True, help="suite config JSON")
    p.add_argument("--pilot", action="store_true", help="measure a window and write it into a config")
    p.add_argument("--reproducible", action="store_true", help="omit the timestamp header line")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--fail-on-violation", action="store_true")
    p.set_defaults(handler=cmd_suite)

    p = sub.add_parser("summary", parents=[common], help="aggregate a suite CSV")
    p.add_argument("--csv", required=True)
    p.set_defaults(handler=cmd_summary)

    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    setup_logging(args.log_level)
    try:
        return args.handler(args)
    except (MartnormError, ValidationError) as e:
        logger.error(str(e))
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
