"""Command-line entry point.

Exit codes: 0 on success, 1 on validation errors (malformed or invalid
experiment files, mismatched comparison inputs), 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ExperimentFormatError, parse_experiment_file, validate
from .runner import ExperimentError, compare_docs, report_json, run_experiment

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oxn", description="Run observability experiments against a simulated microservice mesh."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment file and emit a report")
    run.add_argument("file", help="experiment YAML file")
    run.add_argument("--out", metavar="DIR", help="directory for the report (and CSV exports)")
    run.add_argument("--parallel", type=int, default=1, metavar="N", help="concurrent runs")
    run.add_argument("--export-csv", action="store_true", help="write per-run response/span CSV files")
    run.add_argument(
        "--frozen-clock",
        action="store_true",
        help="omit wall-clock metadata so repeated runs are byte-identical",
    )

    compare = sub.add_parser("compare", help="diff two experiment reports")
    compare.add_argument("report_a", help="baseline report JSON")
    compare.add_argument("report_b", help="alternative report JSON")

    check = sub.add_parser("validate", help="parse and validate an experiment file")
    check.add_argument("file", help="experiment YAML file")
    return parser


def _load_spec(path: str):
    try:
        return parse_experiment_file(path)
    except FileNotFoundError:
        print(f"error: no such file: {path}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)
    except ExperimentFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        raise SystemExit(EXIT_VALIDATION)


def _cmd_run(args) -> int:
    spec = _load_spec(args.file)
    violations = validate(spec)
    if violations:
        for violation in violations:
            print(f"invalid: {violation}", file=sys.stderr)
        return EXIT_VALIDATION

    out_dir = Path(args.out) if args.out else None
    export_dir = out_dir / "csv" if (out_dir and args.export_csv) else None
    if args.export_csv and out_dir is None:
        print("error: --export-csv requires --out", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        report = run_experiment(
            spec,
            parallel=max(1, args.parallel),
            export_dir=export_dir,
            frozen_clock=args.frozen_clock,
        )
    except ExperimentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME

    text = report_json(report)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        report_path = out_dir / f"{spec.name}_report.json"
        report_path.write_text(text, encoding="utf-8")
        for fault, ratio in report.scores.fault_coverage.items():
            print(f"fault_coverage {fault}: {ratio}")
        print(f"ofo: {report.scores.ofo}")
        print(f"report: {report_path}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_compare(args) -> int:
    docs = []
    for path in (args.report_a, args.report_b):
        try:
            docs.append(json.loads(Path(path).read_text(encoding="utf-8")))
        except FileNotFoundError:
            print(f"error: no such file: {path}", file=sys.stderr)
            return EXIT_VALIDATION
        except json.JSONDecodeError as exc:
            print(f"error: {path} is not valid JSON: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
    try:
        comparison = compare_docs(docs[0], docs[1])
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    sys.stdout.write(json.dumps(comparison, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _cmd_validate(args) -> int:
    spec = _load_spec(args.file)
    violations = validate(spec)
    if violations:
        for violation in violations:
            print(f"invalid: {violation}")
        return EXIT_VALIDATION
    print(f"ok: {spec.name}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "compare":
            return _cmd_compare(args)
        return _cmd_validate(args)
    except SystemExit as exc:
        return int(exc.code or 0)


if __name__ == "__main__":
    sys.exit(main())
