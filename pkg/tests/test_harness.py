import json
import subprocess
import sys

import pytest

from pressure_field import cli, harness
from pressure_field.harness import (
    ABLATIONS,
    GridSpec,
    ablation_jobs,
    execute,
    grid_jobs,
    run_ablation,
    run_grid,
    significance_report,
    summarize,
    summary_csv,
    summary_table,
)
from pressure_field.records import TrialRecord, read_trial_records, write_trial_record
from pressure_field.scheduling import generate_problem


# -- CLI -----------------------------------------------------------------------------


def test_parse_scaling_command():
    cmd = cli.parse_cli(["grid", "--trials", "30", "--strategies", "pressure_field", "--agents", "1,2,4",
                         "--difficulties", "easy", "--max-ticks", "50"])
    assert cmd.name == "grid"
    spec = cmd.spec
    assert (spec.trials, spec.strategies, spec.agents, spec.difficulties, spec.max_ticks) == (
        30, ["pressure_field"], [1, 2, 4], ["easy"], 50)


def test_parse_host_before_and_after_subcommand():
    assert cli.parse_cli(["--host", "http://a:1", "grid"]).spec.host == "http://a:1"
    assert cli.parse_cli(["grid", "--host", "http://b:2"]).spec.host == "http://b:2"


def test_parse_ablation_defaults():
    spec = cli.parse_cli(["ablation", "--trials", "3"]).spec
    assert spec.strategies == ["pressure_field"] and spec.agents == [2] and spec.difficulties == ["easy"]


@pytest.mark.parametrize("argv", [
    ["grid", "--agents", "0"],
    ["grid", "--trials", "-1"],
    ["grid", "--strategies", "pressure_field,mob"],
    ["grid", "--difficulties", "extreme"],
    ["grid", "--noise", "2"],
    ["grid", "--bogus"],
    [],
])
def test_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.parse_cli(argv)
    assert exc.value.code != 0
    assert "usage:" in capsys.readouterr().err


def test_console_script_no_subcommand():
    proc = subprocess.run([sys.executable, "-m", "pressure_field.cli"], capture_output=True, text=True)
    assert proc.returncode != 0
    assert "usage:" in proc.stderr


# -- grids -----------------------------------------------------------------------------


def test_grid_record_count_and_seeds(tmp_path):
    spec = GridSpec(trials=3, strategies=["pressure_field", "random"], agents=[2], difficulties=["easy"],
                    out=tmp_path, noise=0.3)
    records = run_grid(spec)
    assert len(records) == 6
    assert sorted({r.seed for r in records}) == [2, 1002, 2002]
    logged = list(read_trial_records([tmp_path / "grid.jsonl"]))
    assert sorted(r.canonical() for r in logged) == sorted(r.canonical() for r in records)
    for r in records:
        assert len(r.pressure_history) == r.total_ticks + 1
        assert not r.error


def test_grid_seeds_formula():
    jobs = grid_jobs(GridSpec(trials=30, strategies=["random"], agents=[2], difficulties=["easy"]))
    seeds = [generate_problem(j.trial, j.agents, j.difficulty).seed for j in jobs]
    assert seeds == [t * 1000 + 2 for t in range(30)]


def test_same_problem_across_strategies():
    jobs = grid_jobs(GridSpec(trials=1, agents=[4], difficulties=["hard"]))
    problems = {generate_problem(j.trial, j.agents, j.difficulty).to_json() for j in jobs}
    assert len(jobs) == 5 and len(problems) == 1


def test_ablation_configs():
    assert ABLATIONS["no_decay"] == (False, True, True)
    assert ABLATIONS["baseline"] == (False, False, False)
    jobs = ablation_jobs(GridSpec(trials=30, agents=[2], difficulties=["easy"]))
    assert len(jobs) == 150
    by_name = {j.config: j.settings for j in jobs}
    assert (by_name["no_inhibition"].decay_enabled, by_name["no_inhibition"].inhibition_enabled) == (True, False)
    assert not by_name["no_examples"].examples_enabled
    assert {j.strategy for j in jobs} == {"pressure_field"}


def test_run_ablation_writes_log(tmp_path):
    records = run_ablation(GridSpec(trials=1, agents=[2], difficulties=["easy"], out=tmp_path))
    assert sorted(r.config for r in records) == sorted(ABLATIONS)
    assert len((tmp_path / "ablation.jsonl").read_text().splitlines()) == 5


def test_failed_trial_is_recorded_and_run_continues(monkeypatch):
    real = harness.run_strategy

    def flaky(kind, problem, agents, settings):
        if problem.seed == 1001:
            raise RuntimeError("endpoint exploded")
        return real(kind, problem, agents, settings)

    monkeypatch.setattr(harness, "run_strategy", flaky)
    records = execute(grid_jobs(GridSpec(trials=3, strategies=["random"], agents=[1], difficulties=["easy"])))
    assert [bool(r.error) for r in records] == [False, True, False]
    assert "endpoint exploded" in records[1].error
    assert records[1].seed == 1001 and records[1].trial == 1


def test_parallel_matches_serial():
    jobs = grid_jobs(GridSpec(trials=2, strategies=["pressure_field", "hierarchical"], agents=[2],
                              difficulties=["easy"], noise=0.3))
    serial = [r.canonical() for r in execute(jobs, 1)]
    parallel = [r.canonical() for r in execute(jobs, 2)]
    assert serial == parallel


def test_cli_grid_and_analyze(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["grid", "--trials", "2", "--strategies", "pressure_field,random", "--agents", "1",
                     "--difficulties", "easy", "--out", str(out)]) == 0
    for name in ("grid.jsonl", "summary.csv", "summary.txt", "significance.txt"):
        assert (out / name).exists()
    capsys.readouterr()
    assert cli.main(["analyze", str(out / "grid.jsonl")]) == 0
    first = capsys.readouterr().out
    assert cli.main(["analyze", str(out / "grid.jsonl")]) == 0
    assert capsys.readouterr().out == first
    assert "pressure_field" in first and "Omnibus chi-square" in first


# -- records ----------------------------------------------------------------------------


def sample_record(**kw):
    base = dict(strategy="pressure_field", difficulty="easy", agents=2, trial=5, seed=5002, solved=True,
                total_ticks=2, pressure_history=[3.0, 1.0, 0.0], band_escalation_events=[(7, "a", "b")],
                final_model="qwen2.5:0.5b", prompt_tokens=10, completion_tokens=3, duration_s=0.25)
    base.update(kw)
    return TrialRecord(**base)


def test_record_round_trip(tmp_path):
    path = tmp_path / "log.jsonl"
    with open(path, "a", encoding="utf-8") as fh:
        write_trial_record(sample_record(), fh)
    line = path.read_text()
    assert line.count("\n") == 1
    assert json.loads(line)["schema"] == "v1"
    (back,) = read_trial_records([path])
    assert back == sample_record()


def test_distinct_files_do_not_interleave(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    with open(a, "a") as fa, open(b, "a") as fb:
        for i in range(5):
            write_trial_record(sample_record(trial=i), fa)
            write_trial_record(sample_record(trial=100 + i), fb)
    assert [r.trial for r in read_trial_records([a])] == list(range(5))
    assert [r.trial for r in read_trial_records([b])] == [100 + i for i in range(5)]


def test_truncated_tail_is_skipped(tmp_path):
    path = tmp_path / "log.jsonl"
    path.write_text(sample_record().to_json() + "\n" + sample_record().to_json()[:40])
    assert len(list(read_trial_records([path]))) == 1


def test_corrupt_middle_line_is_an_error(tmp_path):
    path = tmp_path / "log.jsonl"
    path.write_text("{broken\n" + sample_record().to_json() + "\n")
    with pytest.raises(ValueError):
        list(read_trial_records([path]))


def test_unknown_schema_rejected():
    data = sample_record().to_dict()
    data["schema"] = "v2"
    with pytest.raises(ValueError):
        TrialRecord.from_dict(data)


# -- summaries --------------------------------------------------------------------------


def _population(strategy, solved, n, tokens_total=0, difficulty="easy"):
    per = tokens_total // n
    return [TrialRecord(strategy=strategy, difficulty=difficulty, trial=i, solved=i < solved, total_ticks=10,
                        pressure_history=[1.0] * 11, prompt_tokens=per) for i in range(n)]


def test_summary_aggregate_row():
    rows = summarize(_population("pressure_field", 131, 270, tokens_total=166_700_000))
    agg = next(r for r in rows if r.difficulty == "all")
    assert (agg.solved, agg.n) == (131, 270)
    assert round(agg.rate, 3) == 0.485
    assert (round(agg.ci_lo, 3), round(agg.ci_hi, 3)) == (0.426, 0.545)
    assert agg.tokens_per_solve == pytest.approx(1.27e6, rel=5e-3)


def test_zero_solved_has_no_mean_ticks():
    (row, _) = summarize(_population("random", 0, 5))
    assert row.mean_ticks_to_solve is None and row.tokens_per_solve is None
    fields = summary_csv([row]).splitlines()[1].split(",")
    assert fields[8] == "" and fields[12] == ""
    assert summary_table([row]).splitlines()[2].split()[5] == "-"


def test_summary_requires_records():
    with pytest.raises(ValueError):
        summarize([])


def test_significance_report_mentions_pairs():
    records = _population("pressure_field", 26, 30) + _population("conversation", 10, 30)
    text = significance_report(summarize(records))
    assert "pressure_field vs conversation" in text
    assert "h=+1.16" in text


def test_summary_csv_header():
    rows = summarize(_population("random", 1, 3))
    header = summary_csv(rows).splitlines()[0].split(",")
    assert header[:8] == ["strategy", "config", "difficulty", "n", "solved", "rate", "ci_lo", "ci_hi"]


def test_grid_spec_validation():
    with pytest.raises(ValueError):
        GridSpec(trials=0)
    with pytest.raises(ValueError):
        GridSpec(strategies=["mob"])
    with pytest.raises(ValueError):
        GridSpec(actor="oracle")
