"""Experiment grids, ablations, and summary tables."""

from __future__ import annotations

import csv
import io
import itertools
import logging
import traceback
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .records import TrialRecord, write_trial_record
from .scheduling import DIFFICULTIES, generate_problem, problem_seed
from .stats import chi_square_independence, cohens_h, fisher_exact_2x2, wilson_ci
from .strategies import STRATEGIES, RunSettings, run_strategy

log = logging.getLogger(__name__)

DEFAULT_NOISE = 0.3

# name -> (decay, inhibition, examples)
ABLATIONS = {
    "full": (True, True, True),
    "no_decay": (False, True, True),
    "no_inhibition": (True, False, True),
    "no_examples": (True, True, False),
    "baseline": (False, False, False),
}


@dataclass
class GridSpec:
    trials: int = 30
    strategies: list[str] = field(default_factory=lambda: list(STRATEGIES))
    agents: list[int] = field(default_factory=lambda: [1, 2, 4])
    difficulties: list[str] = field(default_factory=lambda: list(DIFFICULTIES))
    max_ticks: int = 50
    host: str | None = None
    out: Path | None = None
    actor: str = "heuristic"
    noise: float = DEFAULT_NOISE
    workers: int = 1
    timeout: float = 120.0

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.max_ticks < 1:
            raise ValueError("max_ticks must be >= 1")
        if not self.agents or any(a < 1 for a in self.agents):
            raise ValueError("agent counts must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}")
        for d in self.difficulties:
            if d not in DIFFICULTIES:
                raise ValueError(f"unknown difficulty {d!r}")
        if self.actor not in ("heuristic", "inference"):
            raise ValueError(f"unknown actor {self.actor!r}")

    def settings(self) -> RunSettings:
        return RunSettings(
            max_ticks=self.max_ticks, actor=self.actor, noise=self.noise, host=self.host, timeout=self.timeout
        )


@dataclass(frozen=True)
class Job:
    strategy: str
    difficulty: str
    agents: int
    trial: int
    settings: RunSettings
    config: str = ""


def run_job(job: Job) -> TrialRecord:
    """Run one trial; any failure becomes a record carrying the error."""
    try:
        problem = generate_problem(job.trial, job.agents, job.difficulty)
        record = run_strategy(job.strategy, problem, job.agents, job.settings)
    except Exception as exc:
        log.error("trial %s/%s/%d/%d failed: %s", job.strategy, job.difficulty, job.agents, job.trial, exc)
        record = TrialRecord(
            strategy=job.strategy,
            difficulty=job.difficulty,
            agents=job.agents,
            seed=problem_seed(job.trial, job.agents),
            error="".join(traceback.format_exception_only(type(exc), exc)).strip(),
        )
    record.trial = job.trial
    record.config = job.config
    return record


def grid_jobs(spec: GridSpec) -> list[Job]:
    settings = spec.settings()
    return [
        Job(strategy, difficulty, agents, trial, settings)
        for difficulty, agents, trial, strategy in itertools.product(
            spec.difficulties, spec.agents, range(spec.trials), spec.strategies
        )
    ]


def ablation_jobs(spec: GridSpec) -> list[Job]:
    base = spec.settings()
    jobs = []
    for name, (decay, inhibition, examples) in ABLATIONS.items():
        settings = replace(base, decay_enabled=decay, inhibition_enabled=inhibition, examples_enabled=examples)
        for difficulty, agents, trial in itertools.product(spec.difficulties, spec.agents, range(spec.trials)):
            jobs.append(Job("pressure_field", difficulty, agents, trial, settings, name))
    return jobs


def _sort_key(r: TrialRecord):
    return (r.config, r.strategy, r.difficulty, r.agents, r.trial)


def execute(jobs: Sequence[Job], workers: int = 1, sink: Callable[[TrialRecord], None] | None = None) -> list[TrialRecord]:
    records = []
    if workers == 1:
        for job in jobs:
            record = run_job(job)
            records.append(record)
            if sink:
                sink(record)
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_job, job) for job in jobs]
            for future in as_completed(futures):
                record = future.result()
                records.append(record)
                if sink:
                    sink(record)
    return sorted(records, key=_sort_key)


def _jsonl_sink(path: Path | None):
    if path is None:
        return None, None
    path.parent.mkdir(parents=True, exist_ok=True)
    fh = open(path, "a", encoding="utf-8")
    return fh, (lambda record: write_trial_record(record, fh))


def _run(jobs, spec: GridSpec, log_name: str) -> list[TrialRecord]:
    fh, sink = _jsonl_sink(spec.out / log_name if spec.out else None)
    try:
        return execute(jobs, spec.workers, sink)
    finally:
        if fh:
            fh.close()


def run_grid(spec: GridSpec) -> list[TrialRecord]:
    return _run(grid_jobs(spec), spec, "grid.jsonl")


def run_ablation(spec: GridSpec) -> list[TrialRecord]:
    return _run(ablation_jobs(spec), spec, "ablation.jsonl")


# -- summaries ---------------------------------------------------------------------


@dataclass
class SummaryRow:
    strategy: str
    config: str
    difficulty: str
    n: int
    solved: int
    rate: float
    ci_lo: float
    ci_hi: float
    mean_ticks_to_solve: float | None
    mean_final_pressure: float | None
    prompt_tokens: int
    completion_tokens: int
    tokens_per_solve: float | None
    errors: int

    @property
    def label(self) -> str:
        return f"{self.strategy}[{self.config}]" if self.config else self.strategy


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def _row(strategy: str, config: str, difficulty: str, group: list[TrialRecord]) -> SummaryRow:
    solved = [r for r in group if r.solved]
    lo, hi = wilson_ci(len(solved), len(group))
    prompt = sum(r.prompt_tokens for r in group)
    completion = sum(r.completion_tokens for r in group)
    return SummaryRow(
        strategy=strategy,
        config=config,
        difficulty=difficulty,
        n=len(group),
        solved=len(solved),
        rate=len(solved) / len(group),
        ci_lo=lo,
        ci_hi=hi,
        mean_ticks_to_solve=_mean([r.total_ticks for r in solved]),
        mean_final_pressure=_mean([r.final_pressure for r in group if r.final_pressure is not None]),
        prompt_tokens=prompt,
        completion_tokens=completion,
        tokens_per_solve=(prompt + completion) / len(solved) if solved else None,
        errors=sum(1 for r in group if r.error),
    )


def summarize(records: Iterable[TrialRecord]) -> list[SummaryRow]:
    """Per (strategy, config, difficulty) rows, then one aggregate row per strategy/config."""
    records = list(records)
    if not records:
        raise ValueError("nothing to summarize")
    groups: dict[tuple[str, str, str], list[TrialRecord]] = {}
    for r in records:
        groups.setdefault((r.strategy, r.config, r.difficulty), []).append(r)
        groups.setdefault((r.strategy, r.config, "all"), []).append(r)
    order = {d: i for i, d in enumerate([*DIFFICULTIES, "all"])}
    strategy_order = {s: i for i, s in enumerate(STRATEGIES)}
    keys = sorted(groups, key=lambda k: (strategy_order.get(k[0], 99), k[1], order.get(k[2], 50), k[2]))
    return [_row(*key, groups[key]) for key in keys]


CSV_FIELDS = [
    "strategy", "config", "difficulty", "n", "solved", "rate", "ci_lo", "ci_hi",
    "mean_ticks_to_solve", "mean_final_pressure", "prompt_tokens", "completion_tokens",
    "tokens_per_solve", "errors",
]


def summary_csv(rows: Sequence[SummaryRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for row in rows:
        values = []
        for name in CSV_FIELDS:
            v = getattr(row, name)
            values.append("" if v is None else (f"{v:.6f}" if isinstance(v, float) else v))
        writer.writerow(values)
    return buf.getvalue()


def _fmt(v, pattern="{:.2f}") -> str:
    return "-" if v is None else pattern.format(v)


def summary_table(rows: Sequence[SummaryRow]) -> str:
    header = ["Strategy", "Difficulty", "Solved/N", "Rate", "95% Wilson CI", "Ticks", "Final P", "Tokens/solve"]
    body = [
        [
            row.label,
            row.difficulty,
            f"{row.solved}/{row.n}",
            f"{row.rate:.1%}",
            f"{row.ci_lo:.1%}-{row.ci_hi:.1%}",
            _fmt(row.mean_ticks_to_solve, "{:.1f}"),
            _fmt(row.mean_final_pressure),
            _fmt(row.tokens_per_solve, "{:.0f}"),
        ]
        for row in rows
    ]
    widths = [max(len(str(r[i])) for r in [header, *body]) for i in range(len(header))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(r, widths)).rstrip() for r in [header, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def significance_report(rows: Sequence[SummaryRow]) -> str:
    """Pairwise Fisher, omnibus chi-square and Cohen's h over aggregate rows."""
    agg = [r for r in rows if r.difficulty == "all"]
    lines = ["Significance (aggregate over difficulties)", ""]
    if len(agg) < 2:
        lines.append("fewer than two groups; nothing to compare")
        return "\n".join(lines)
    table = [[r.solved, r.n - r.solved] for r in agg]
    try:
        stat, p = chi_square_independence(table)
        lines.append(f"Omnibus chi-square: statistic={stat:.3f} dof={len(agg) - 1} p={p:.3g}")
    except ValueError as exc:
        lines.append(f"Omnibus chi-square: n/a ({exc})")
    lines += ["", "Pairwise Fisher exact (two-sided) and Cohen's h:"]
    for a, b in itertools.combinations(agg, 2):
        try:
            p = f"{fisher_exact_2x2(a.solved, a.n - a.solved, b.solved, b.n - b.solved):.3g}"
        except ValueError:
            p = "n/a"
        h = cohens_h(a.rate, b.rate)
        lines.append(f"  {a.label} vs {b.label}: p={p} h={h:+.2f}")
    return "\n".join(lines)


def write_summary(records: Sequence[TrialRecord], out: Path) -> list[SummaryRow]:
    rows = summarize(records)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.csv").write_text(summary_csv(rows), encoding="utf-8")
    (out / "summary.txt").write_text(summary_table(rows) + "\n", encoding="utf-8")
    (out / "significance.txt").write_text(significance_report(rows) + "\n", encoding="utf-8")
    return rows
