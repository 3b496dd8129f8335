import random

import pytest

from conftest import make_problem
from pressure_field.actors import HeuristicActor, ScriptedActor
from pressure_field.engine import NoProposal
from pressure_field.scheduling import Place, SchedulingDomain, generate_problem
from pressure_field.strategies import (
    MAX_TURNS,
    STRATEGIES,
    RunSettings,
    StrategyKind,
    actor_rng,
    parse_verdict,
    run_conversation,
    run_hierarchical,
    run_pressure_field,
    run_random,
    run_sequential,
    run_strategy,
    sequential_region,
)


def spy_factory(seen):
    """Actors that record the region they were shown and never propose."""

    class Spy(ScriptedActor):
        def propose(self, view):
            seen.append(view.region_id)
            return super().propose(view)

    return lambda problem, context, count: [Spy(f"spy-{k}", context=context) for k in range(count)]


def test_strategy_names():
    assert STRATEGIES == ("pressure_field", "conversation", "hierarchical", "sequential", "random")
    assert MAX_TURNS == 5


def test_sequential_region_cycle():
    assert [sequential_region(t) for t in (0, 19, 20, 23)] == [0, 19, 0, 3]


def test_sequential_visits_regions_in_order():
    seen = []
    settings = RunSettings(max_ticks=24, actor_factory=spy_factory(seen))
    run_sequential(generate_problem(0, 1, "easy"), settings)
    assert seen == list(range(20)) + [0, 1, 2, 3]


def test_random_regions_follow_seeded_stream():
    seen = []
    problem = generate_problem(4, 1, "easy")
    run_random(problem, RunSettings(max_ticks=15, actor_factory=spy_factory(seen)))
    rng = random.Random(f"{problem.seed}:regions")
    assert seen == [rng.randrange(20) for _ in range(15)]


def test_hierarchical_retries_unfixable_region():
    # Block 0 is full and double-books attendee 0 on every slot: no in-block
    # edit can help, so the argmax keeps choosing it and every patch fails.
    p = make_problem([8, 8], [(1, 4, (0, 1)), (2, 4, (0, 2))], placed={1: (0, 0, 0), 2: (1, 0, 0)})
    seen = []

    class Watch(HeuristicActor):
        def propose(self, view):
            seen.append(view.region_id)
            return super().propose(view)

    settings = RunSettings(max_ticks=6, actor_factory=lambda prob, ctx, n: [Watch(context=ctx)])
    record = run_hierarchical(p, settings)
    assert seen == [0] * 6
    assert record.patches_applied == 0 and record.patches_rejected == 6
    assert record.termination == "budget" and not record.solved


def test_hierarchical_stops_when_nothing_is_hot():
    meetings = [(i + 1, 4, (2 * i, 2 * i + 1)) for i in range(20)]
    placed = {i + 1: (0, i // 4, (i % 4) * 4) for i in range(20)}
    p = make_problem([10, 10], meetings, placed)
    # Solved already, so the loop never runs.
    assert run_hierarchical(p).termination == "solved"


def test_hierarchical_validates_but_sequential_does_not():
    problem = generate_problem(1, 1, "easy")
    settings = RunSettings(max_ticks=60, noise=1.0)
    hier = run_hierarchical(problem, settings)
    assert all(b <= a for a, b in zip(hier.pressure_history, hier.pressure_history[1:]))
    seq = run_sequential(problem, settings)
    assert any(b > a for a, b in zip(seq.pressure_history, seq.pressure_history[1:]))


class CountingRoles:
    def __init__(self, approve_on, context, fail_proposals=0):
        self.approve_on = approve_on
        self.context = context
        self.fail_proposals = fail_proposals
        self.turn = 0

    def coordinate(self, state, pressures):
        self.context.record_call()
        return 0

    def propose(self, state, rid, feedback):
        self.context.record_call()
        self.turn += 1
        if self.turn <= self.fail_proposals:
            raise NoProposal("unparseable")
        return Place(99, 0, 0, 0)

    def review(self, state, rid, edit):
        self.context.record_call()
        return self.turn == self.approve_on, "no"


@pytest.mark.parametrize("approve_on,fail,calls,proposed,rejected", [
    (1, 0, 3, 1, 1),      # approved edit still fails on apply (unknown meeting)
    (None, 0, 11, 5, 5),  # five rejected turns
    (None, 2, 9, 3, 5),   # two unparseable proposals skip the validator
])
def test_conversation_call_accounting(approve_on, fail, calls, proposed, rejected):
    problem = generate_problem(0, 1, "easy")
    record = run_conversation(problem, RunSettings(max_ticks=1),
                              roles=lambda d, ctx: CountingRoles(approve_on, ctx, fail))
    assert record.actor_calls == calls
    assert record.patches_proposed == proposed
    assert record.patches_rejected == rejected
    assert record.total_ticks == 1


def test_conversation_stand_in_solves_easy():
    record = run_conversation(generate_problem(0, 1, "easy"), RunSettings(max_ticks=50))
    assert record.solved
    assert record.strategy == "conversation"


@pytest.mark.parametrize("text,approved", [
    ("APPROVE", True), ("I approve this change.", True), ("REJECT: overlaps", False),
    ("Reject, do not approve", False), ("", False),
])
def test_parse_verdict(text, approved):
    assert parse_verdict(text)[0] is approved


def test_pressure_field_record_fields():
    problem = generate_problem(2, 2, "easy")
    record = run_pressure_field(problem, 2, RunSettings(noise=0.3))
    assert record.strategy == "pressure_field" and record.agents == 2
    assert record.seed == 2002 and record.trial == 2
    assert record.final_model == "qwen2.5:0.5b"
    assert record.pressure_history[0] == SchedulingDomain(problem).total_pressure(
        SchedulingDomain(problem).initial_state())
    assert all(b <= a for a, b in zip(record.pressure_history, record.pressure_history[1:]))


def test_pressure_field_escalates_when_stuck():
    problem = generate_problem(0, 2, "easy")
    settings = RunSettings(max_ticks=22, actor_factory=lambda p, ctx, n: [ScriptedActor(context=ctx)])
    record = run_pressure_field(problem, 1, settings)
    assert [e[0] for e in record.band_escalation_events] == [7, 14]
    assert [e[0] for e in record.model_escalation_events] == [21]
    assert record.final_model == "qwen2.5:1.5b"


@pytest.mark.parametrize("kind", STRATEGIES)
def test_every_strategy_deterministic(kind):
    problem = generate_problem(3, 2, "medium")
    a = run_strategy(kind, problem, 2, RunSettings(noise=0.3))
    b = run_strategy(kind, problem, 2, RunSettings(noise=0.3))
    assert a.canonical() == b.canonical()
    assert a.agents == 2


def test_unknown_strategy():
    with pytest.raises(ValueError):
        run_strategy("mob", generate_problem(0, 1), 1)
    assert StrategyKind("random") is StrategyKind.RANDOM


def test_actor_rng_streams_independent():
    assert actor_rng(5, 0).random() != actor_rng(5, 1).random()
    assert actor_rng(5, 0).random() == actor_rng(5, 0).random()
