"""Command line front end.

Exit codes: 0 when no requirement is violated (or the matrix matches
its expectations), 2 when violations or mismatches were found, 1 for
operational errors such as unreadable configs or corrupt traces.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import scenarios
from .errors import ChargesecError
from .runner import run_scenario
from .trace import TOOL_VERSION, load_trace
from .verdict import REQUIREMENTS, Report, Status, check_all

_STATUS_MARK = {
    Status.HOLDS: "holds",
    Status.CONDITIONAL: "conditional",
    Status.VIOLATED: "VIOLATED",
    Status.NOT_APPLICABLE: "n/a",
}


def _print_report(report: Report, verbose: bool) -> None:
    print(f"scenario: {report.scenario} (seed {report.seed})")
    for finding in report.ordered():
        mark = _STATUS_MARK[finding.status]
        line = f"  {finding.requirement:<5} {mark:<12}"
        if finding.evidence:
            line += f" {finding.evidence[0]}"
        print(line)
        if verbose:
            for extra in finding.evidence[1:]:
                print(f"        {extra}")
            if finding.witnesses:
                print(f"        witness events: {finding.witnesses}")
    congestion = report.congestion
    if congestion.get("allocations"):
        state = "ok" if congestion["ok"] else "BREACHED"
        print(f"  congestion: {state}")
        if verbose or not congestion["ok"]:
            for alloc in congestion["allocations"]:
                for breach in alloc["breaches"]:
                    print(f"        slot {breach['slot_start']}: allocated "
                          f"{breach['allocated_kw']} kW of {breach['allotted_kw']} "
                          f"kW allotted (attack events {breach['attack_witnesses']})")
    if report.redaction.get("redactions"):
        state = "ok" if report.redaction["ok"] else "BROKEN"
        print(f"  redaction: {state}")
        if verbose:
            for row in report.redaction["redactions"]:
                print(f"        {row['doc_id']}.{row['field']} by {row['actor']} "
                      f"({row['mode']}): verifies={row['verifies_after']}")


def _report_exit(report: Report) -> int:
    return 2 if report.any_violated else 0


def cmd_run(args: argparse.Namespace) -> int:
    config = scenarios.resolve(args.scenario)
    result = run_scenario(config, seed=args.seed, trace_path=args.trace)
    if args.json:
        print(json.dumps(result.report.as_dict(), indent=2, sort_keys=True))
    else:
        _print_report(result.report, args.verbose)
        if args.trace:
            print(f"trace written to {args.trace}")
    return _report_exit(result.report)


def cmd_verify_trace(args: argparse.Namespace) -> int:
    trace = load_trace(args.trace)
    report = check_all(trace)
    if args.json:
        print(json.dumps(report.as_dict(), indent=2, sort_keys=True))
    else:
        print(f"trace ok: {len(trace.events)} events")
        _print_report(report, args.verbose)
    return _report_exit(report)


def matrix_statuses(report: Report) -> dict:
    return {r: report.findings[r].status.value for r in REQUIREMENTS}


def run_matrix() -> dict:
    """All rows' statuses keyed by row name, in generation order."""
    out = {}
    for config in scenarios.matrix_rows():
        result = run_scenario(config)
        out[config.name] = matrix_statuses(result.report)
    return out


def default_expected_path():
    from importlib import resources
    return resources.files("chargesec") / "data" / "expected_matrix.json"


def cmd_matrix(args: argparse.Namespace) -> int:
    started = time.monotonic()
    actual = run_matrix()
    elapsed = time.monotonic() - started
    if args.write:
        Path(args.write).write_text(
            json.dumps(actual, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        print(f"{len(actual)} rows written to {args.write} ({elapsed:.1f}s)")
        return 0
    expected_src = args.expected
    if expected_src:
        expected = json.loads(Path(expected_src).read_text(encoding="utf-8"))
    else:
        expected = json.loads(default_expected_path().read_text(encoding="utf-8"))
    mismatches = []
    for name, statuses in actual.items():
        want = expected.get(name)
        if want != statuses:
            mismatches.append((name, want, statuses))
    extra = sorted(set(expected) - set(actual))
    if args.json:
        print(json.dumps({"rows": len(actual), "seconds": round(elapsed, 2),
                          "mismatches": [m[0] for m in mismatches],
                          "missing_rows": extra}, indent=2))
    else:
        print(f"{len(actual)} rows in {elapsed:.1f}s")
        for name, want, got in mismatches:
            print(f"  MISMATCH {name}")
            for r in REQUIREMENTS:
                w = (want or {}).get(r)
                g = got.get(r)
                if w != g:
                    print(f"    {r}: expected {w}, got {g}")
        for name in extra:
            print(f"  MISSING {name}")
        if not mismatches and not extra:
            print("all rows match expectations")
    return 2 if mismatches or extra else 0


def cmd_list(args: argparse.Namespace) -> int:
    for name in scenarios.builtin_names():
        if args.json:
            continue
        desc = scenarios.builtin_description(name).strip().replace("\n", " ")
        if len(desc) > 100:
            desc = desc[:97] + "..."
        print(f"{name:<28} {desc}")
    if args.json:
        print(json.dumps(scenarios.builtin_names(), indent=2))
    print(f"\nmatrix: {scenarios.matrix_size()} generated rows "
          f"(mx-<links>-<mechanism>-<protection>-<attack>)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chargesec",
        description="Simulate charging-ecosystem protocol flows under "
                    "attack and grade the security requirements they "
                    "are supposed to meet.")
    parser.add_argument("--version", action="version", version=TOOL_VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and grade it")
    p_run.add_argument("scenario",
                       help="built-in name, mx-... matrix row, or YAML path")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--trace", default=None, metavar="PATH",
                       help="write the JSONL trace here")
    p_run.add_argument("--json", action="store_true")
    p_run.add_argument("-v", "--verbose", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_vt = sub.add_parser("verify-trace",
                          help="recompute verdicts from a trace file")
    p_vt.add_argument("trace")
    p_vt.add_argument("--json", action="store_true")
    p_vt.add_argument("-v", "--verbose", action="store_true")
    p_vt.set_defaults(func=cmd_verify_trace)

    p_mx = sub.add_parser("matrix",
                          help="run the configuration matrix and compare "
                               "against expected verdicts")
    p_mx.add_argument("--expected", default=None, metavar="PATH")
    p_mx.add_argument("--write", default=None, metavar="PATH",
                      help="write actual verdicts instead of comparing")
    p_mx.add_argument("--json", action="store_true")
    p_mx.set_defaults(func=cmd_matrix)

    p_ls = sub.add_parser("list-scenarios", help="list built-in scenarios")
    p_ls.add_argument("--json", action="store_true")
    p_ls.set_defaults(func=cmd_list)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ChargesecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
