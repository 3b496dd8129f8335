"""Command line for running and analyzing scheduling experiments."""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .harness import (
    DEFAULT_NOISE,
    GridSpec,
    run_ablation,
    run_grid,
    significance_report,
    summarize,
    summary_table,
    write_summary,
)
from .records import read_trial_records
from .scheduling import DIFFICULTIES
from .strategies import STRATEGIES


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"{text!r} must be positive")
    return value


def _positive_ints(text: str) -> list[int]:
    return [_positive_int(t) for t in text.split(",") if t.strip()]


def _choices(allowed):
    def parse(text: str) -> list[str]:
        items = [t.strip() for t in text.split(",") if t.strip()]
        bad = [t for t in items if t not in allowed]
        if bad or not items:
            raise argparse.ArgumentTypeError(f"invalid choice(s) {bad or text!r}; pick from {', '.join(allowed)}")
        return items

    return parse


def _noise(text: str) -> float:
    value = float(text)
    if not 0 <= value <= 1:
        raise argparse.ArgumentTypeError("noise must lie in [0, 1]")
    return value


@dataclass
class Command:
    name: str
    spec: GridSpec | None = None
    logs: list[Path] = field(default_factory=list)
    out: Path | None = None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="schedule-experiment", description=__doc__)
    parser.add_argument("--host", help="inference endpoint (default: $OLLAMA_HOST or http://localhost:11434)")
    parser.add_argument("--log-level", default="WARNING")
    sub = parser.add_subparsers(dest="command", metavar="{grid,ablation,scaling,analyze}")
    sub.required = True

    def common(p, strategies=True, agents="1,2,4", difficulties=",".join(DIFFICULTIES)):
        p.add_argument("--host", dest="sub_host", help=argparse.SUPPRESS)
        p.add_argument("--trials", type=_positive_int, default=30)
        if strategies:
            p.add_argument("--strategies", type=_choices(STRATEGIES), default=list(STRATEGIES))
        p.add_argument("--agents", type=_positive_ints, default=_positive_ints(agents))
        p.add_argument("--difficulties", "--difficulty", dest="difficulties",
                       type=_choices(tuple(DIFFICULTIES)), default=difficulties.split(","))
        p.add_argument("--max-ticks", type=_positive_int, default=50)
        p.add_argument("--out", type=Path, default=Path("results"))
        p.add_argument("--actor", choices=("heuristic", "inference"), default="heuristic")
        p.add_argument("--noise", type=_noise, default=DEFAULT_NOISE,
                       help="heuristic actor's careless-move probability")
        p.add_argument("--workers", type=_positive_int, default=1)
        p.add_argument("--timeout", type=float, default=120.0, help="inference request timeout (s)")

    common(sub.add_parser("grid", help="strategy comparison grid"))
    common(sub.add_parser("ablation", help="decay/inhibition/examples ablation"),
           strategies=False, agents="2", difficulties="easy")
    scaling = sub.add_parser("scaling", help="pressure-field agent-count scaling")
    common(scaling, strategies=False, difficulties="easy")
    analyze = sub.add_parser("analyze", help="summarize JSONL trial logs")
    analyze.add_argument("logs", nargs="+", type=Path)
    analyze.add_argument("--out", type=Path, default=None)
    return parser


def parse_cli(argv: list[str] | None = None) -> Command:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    if args.command == "analyze":
        return Command("analyze", logs=args.logs, out=args.out)
    strategies = getattr(args, "strategies", None) or ["pressure_field"]
    spec = GridSpec(
        trials=args.trials,
        strategies=strategies,
        agents=args.agents,
        difficulties=args.difficulties,
        max_ticks=args.max_ticks,
        host=args.sub_host or args.host,
        out=args.out,
        actor=args.actor,
        noise=args.noise,
        workers=args.workers,
        timeout=args.timeout,
    )
    return Command(args.command, spec=spec, out=args.out)


def main(argv: list[str] | None = None) -> int:
    cmd = parse_cli(argv)
    if cmd.name == "analyze":
        records = list(read_trial_records(cmd.logs))
        if not records:
            print("no records found", file=sys.stderr)
            return 1
        rows = write_summary(records, cmd.out) if cmd.out else summarize(records)
        print(summary_table(rows))
        print()
        print(significance_report(rows))
        return 0
    runner = run_ablation if cmd.name == "ablation" else run_grid
    records = runner(cmd.spec)
    rows = write_summary(records, cmd.spec.out)
    print(summary_table(rows))
    failed = sum(1 for r in records if r.error)
    if failed:
        print(f"{failed} trial(s) failed; see the log for details", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
