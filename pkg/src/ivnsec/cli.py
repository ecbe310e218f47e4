"""Command line: ``ivnsec validate <file>`` and ``ivnsec run <file> ...``.

Exit codes: 0 success, 2 invalid scenario or unreadable file, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

from .scenario import FIXTURES, Scenario, ScenarioInvalid, fixture_path, load_scenario, validate
from .simcore import build_summary, measure_timings, run, timing_stats, write_outputs
from .simcore.output import timings_csv

log = logging.getLogger("ivnsec")

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_RUNTIME = 3
OUT_ENV = "IVNSEC_OUT_DIR"


def parse_seed_range(text: str) -> List[int]:
    """``"A..B"`` (inclusive) or a comma-separated list."""
    m = re.fullmatch(r"\s*(\d+)\s*\.\.\s*(\d+)\s*", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if hi < lo:
            raise argparse.ArgumentTypeError(f"empty seed range {text}")
        return list(range(lo, hi + 1))
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed range {text!r}; use A..B") from None


def resolve_path(arg: str) -> Path:
    """A file path, or the name of a shipped fixture."""
    p = Path(arg)
    if not p.exists() and arg in FIXTURES:
        return fixture_path(arg)
    return p


def _print_errors(errors) -> None:
    for pointer, message in errors:
        print(f"{pointer or '/'}: {message}", file=sys.stderr)


def cmd_validate(args) -> int:
    path = resolve_path(args.file)
    try:
        errors = validate(path)
    except OSError as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if errors:
        _print_errors(errors)
        return EXIT_INVALID
    print(f"{path}: OK")
    return EXIT_OK


def _one(scn: Scenario, seed: int, out: Path) -> dict:
    result = run(scn, seed)
    timings = measure_timings(result)
    write_outputs(result, out, timings)
    summary = build_summary(result, timings)
    return {"seed": seed, "summary": summary, "timings": timings}


def _job(payload) -> dict:
    path, log_unknown, seed, out = payload
    scn = load_scenario(path)
    if log_unknown:
        scn = scn.with_log_unknown(True)
    return _one(scn, seed, Path(out))


def cmd_run(args) -> int:
    path = resolve_path(args.file)
    try:
        scn = load_scenario(path)
    except OSError as exc:
        print(f"cannot read {path}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except json.JSONDecodeError as exc:
        print(f"{path}: invalid JSON: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except ScenarioInvalid as exc:
        _print_errors(exc.errors)
        return EXIT_INVALID
    if args.log_unknown:
        scn = scn.with_log_unknown(True)
    if args.seeds is not None:
        seeds, sweep = args.seeds, True
    elif args.seed is not None:
        seeds, sweep = [args.seed], False
    else:
        seeds, sweep = list(scn.seeds), len(scn.seeds) > 1
    out = Path(args.out or os.environ.get(OUT_ENV) or Path("out") / scn.id)
    try:
        if not sweep:
            res = _one(scn, seeds[0], out)
            s = res["summary"]
            print(f"{scn.id} seed {seeds[0]}: {s['anomaly_reports']} anomaly reports, "
                  f"{s['acl_violations']} ACL violations -> {out}")
            return EXIT_OK
        jobs = [(str(path), args.log_unknown, seed, str(out / f"seed-{seed}")) for seed in seeds]
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                results = list(pool.map(_job, jobs))
        else:
            results = [_one(scn, seed, Path(o)) for _, _, seed, o in jobs]
    except Exception as exc:  # noqa: BLE001 - any failure inside a run maps to exit 3
        log.exception("run failed")
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    write_sweep(scn, results, out)
    print(f"{scn.id}: {len(results)} seeds -> {out}")
    return EXIT_OK


def write_sweep(scn: Scenario, results: Sequence[dict], out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    timings = [t for r in results for t in r["timings"]]
    (out / "timings.csv").write_text(timings_csv(timings))
    reports = [r["summary"]["anomaly_reports"] for r in results]
    summary = {
        "scenario": scn.id,
        "seeds": [r["seed"] for r in results],
        "anomaly_reports": {"min": min(reports), "mean": sum(reports) / len(reports), "max": max(reports)},
        "timing_stats": timing_stats(timings),
        "runs": [{"seed": r["seed"], "anomaly_reports": r["summary"]["anomaly_reports"],
                  "acl_violations": r["summary"]["acl_violations"],
                  "responses_observed": r["summary"]["responses_observed"]} for r in results],
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ivnsec", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("file", help="scenario path or shipped fixture name")
    v.set_defaults(func=cmd_validate)
    r = sub.add_parser("run", help="run a scenario")
    r.add_argument("file", help="scenario path or shipped fixture name")
    seeds = r.add_mutually_exclusive_group()
    seeds.add_argument("--seed", type=int, help="single seed")
    seeds.add_argument("--seeds", type=parse_seed_range, help="seed sweep, e.g. 1..100")
    r.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out/<scenario>)")
    r.add_argument("--log-unknown", action="store_true", help="log packet-ins that match no whitelist entry")
    r.add_argument("--jobs", type=int, default=1, help="parallel processes for sweeps")
    r.set_defaults(func=cmd_run)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
