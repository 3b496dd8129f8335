"""The five coordination strategies as trial runners.

All strategies share the same problem instance, block prompt, parser and
tick budget. They differ only in which region gets attention, how many
proposals run per tick, and what gate a patch must pass before it lands.
"""

from __future__ import annotations

import random
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

from .actors import HeuristicActor, TrialContext, build_prompt, parse_patch
from .engine import EditRejected, EngineConfig, NoProposal, TickReport, run_trial
from .inference import CONVERSATION_SAMPLING, InferenceActor, OllamaClient
from .records import TrialRecord
from .scheduling import N_REGIONS, Problem, SchedulingDomain, block_time_range, render_block_context


class StrategyKind(str, Enum):
    PRESSURE_FIELD = "pressure_field"
    CONVERSATION = "conversation"
    HIERARCHICAL = "hierarchical"
    SEQUENTIAL = "sequential"
    RANDOM = "random"


STRATEGIES = tuple(k.value for k in StrategyKind)
MAX_TURNS = 5
COORDINATOR_SHORTLIST = 5

ActorFactory = Callable[[Problem, TrialContext, int], list]


@dataclass
class RunSettings:
    max_ticks: int = 50
    actor: str = "heuristic"
    noise: float = 0.0
    host: str | None = None
    timeout: float = 120.0
    decay_enabled: bool = True
    inhibition_enabled: bool = True
    examples_enabled: bool = True
    focus: bool = True
    tau_act: float = 0.05
    actor_factory: ActorFactory | None = None
    report_sink: Callable[[TickReport], None] | None = field(default=None, repr=False)

    def engine_config(self, agents: int) -> EngineConfig:
        return EngineConfig(
            tau_act=self.tau_act,
            kappa=agents,
            fork_width_K=agents,
            max_ticks=self.max_ticks,
            decay_enabled=self.decay_enabled,
            inhibition_enabled=self.inhibition_enabled,
            examples_enabled=self.examples_enabled,
            regions_per_tick=agents if self.focus else None,
        )


def actor_rng(seed: int, index: int) -> random.Random:
    return random.Random(f"{seed}:actor:{index}")


def make_actors(problem: Problem, settings: RunSettings, context: TrialContext, count: int) -> list:
    if settings.actor_factory is not None:
        return settings.actor_factory(problem, context, count)
    if settings.actor == "heuristic":
        return [
            HeuristicActor(f"heuristic-{k}", settings.noise, actor_rng(problem.seed, k), context)
            for k in range(count)
        ]
    if settings.actor == "inference":
        client = OllamaClient(settings.host, settings.timeout)
        return [
            InferenceActor(f"llm-{k}", client, problem, context, actor_rng(problem.seed, k))
            for k in range(count)
        ]
    raise ValueError(f"unknown actor kind {settings.actor!r}")


def _finish(record: TrialRecord, problem: Problem, strategy: str, agents: int, context: TrialContext) -> TrialRecord:
    record.strategy = strategy
    record.difficulty = problem.difficulty
    record.agents = agents
    record.seed = problem.seed
    record.trial = problem.seed // 1000
    record.band_escalation_events = list(context.escalation.band_events)
    record.model_escalation_events = list(context.escalation.model_events)
    record.final_model = context.escalation.current_model
    record.prompt_tokens = context.usage.prompt
    record.completion_tokens = context.usage.completion
    record.actor_calls = context.calls
    return record


# -- pressure field -----------------------------------------------------------------


def run_pressure_field(problem: Problem, agents: int, settings: RunSettings | None = None) -> TrialRecord:
    if agents < 1:
        raise ValueError("agents must be >= 1")
    settings = settings or RunSettings()
    domain = SchedulingDomain(problem)
    state = domain.initial_state()
    context = TrialContext(examples_enabled=settings.examples_enabled)
    actors = make_actors(problem, settings, context, agents)

    def sink(report: TickReport) -> None:
        context.observe_report(report, state, domain)
        if settings.report_sink is not None:
            settings.report_sink(report)

    record = run_trial(state, actors, domain, settings.engine_config(agents), sink=sink)
    return _finish(record, problem, StrategyKind.PRESSURE_FIELD.value, agents, context)


# -- single-region baselines -----------------------------------------------------------


def _argmax_region(pressures: list[float]) -> int:
    # max() keeps the first maximum, i.e. the lowest region id on ties.
    return max(range(len(pressures)), key=lambda i: pressures[i])


def _single_region_run(
    problem: Problem,
    settings: RunSettings,
    strategy: str,
    choose: Callable[[list[float], int], int | None],
    validate: bool,
) -> TrialRecord:
    started = time.perf_counter()
    domain = SchedulingDomain(problem)
    state = domain.initial_state()
    context = TrialContext(examples_enabled=False)
    actor = make_actors(problem, settings, context, 1)[0]
    record = TrialRecord(pressure_history=[domain.total_pressure(state)])
    record.termination = "budget"
    while True:
        if domain.is_solved(state):
            record.termination = "solved"
            break
        if state.tick >= settings.max_ticks:
            break
        before = domain.total_pressure(state)
        pressures = domain.region_pressures(state)
        rid = choose(pressures, state.tick)
        if rid is None:
            record.termination = "quiescent"
            break
        _single_region_step(domain, state, actor, rid, validate, record)
        state.tick += 1
        after = domain.total_pressure(state)
        record.pressure_history.append(after)
        context.after_tick(state.tick, before - after)
    record.total_ticks = state.tick
    record.solved = domain.is_solved(state)
    record.duration_s = time.perf_counter() - started
    return _finish(record, problem, strategy, 1, context)


def _single_region_step(domain, state, actor, rid, validate, record) -> None:
    try:
        edit = actor.propose(domain.observe(state, rid))
    except NoProposal:
        record.patches_rejected += 1
        return
    record.patches_proposed += 1
    if validate:
        fork = state.clone()
        try:
            domain.apply(fork, edit, rid)
        except EditRejected:
            record.patches_rejected += 1
            return
        if domain.total_pressure(fork) >= domain.total_pressure(state):
            record.patches_rejected += 1
            return
    try:
        domain.apply(state, edit, rid)
    except EditRejected:
        record.patches_rejected += 1
        return
    record.patches_applied += 1


def run_hierarchical(problem: Problem, settings: RunSettings | None = None) -> TrialRecord:
    settings = settings or RunSettings()

    def choose(pressures, tick):
        rid = _argmax_region(pressures)
        return rid if pressures[rid] >= settings.tau_act else None

    return _single_region_run(problem, settings, StrategyKind.HIERARCHICAL.value, choose, validate=True)


def sequential_region(tick: int) -> int:
    return tick % N_REGIONS


def run_sequential(problem: Problem, settings: RunSettings | None = None) -> TrialRecord:
    settings = settings or RunSettings()
    return _single_region_run(
        problem, settings, StrategyKind.SEQUENTIAL.value, lambda p, t: sequential_region(t), validate=False
    )


def region_rng(seed: int) -> random.Random:
    return random.Random(f"{seed}:regions")


def run_random(problem: Problem, settings: RunSettings | None = None, rng: random.Random | None = None) -> TrialRecord:
    settings = settings or RunSettings()
    rng = rng or region_rng(problem.seed)
    return _single_region_run(
        problem, settings, StrategyKind.RANDOM.value, lambda p, t: rng.randrange(N_REGIONS), validate=False
    )


# -- conversation ------------------------------------------------------------------


class StandInRoles:
    """Offline conversation roles: argmax coordinator, heuristic proposer,
    pressure-checking validator. No model is consulted."""

    def __init__(self, domain: SchedulingDomain, proposer, context: TrialContext):
        self.domain = domain
        self.proposer = proposer
        self.context = context

    def coordinate(self, state, pressures) -> int:
        self.context.record_call()
        return _argmax_region(pressures)

    def propose(self, state, rid, feedback):
        return self.proposer.propose(self.domain.observe(state, rid))

    def review(self, state, rid, edit) -> tuple[bool, str]:
        self.context.record_call()
        fork = state.clone()
        try:
            self.domain.apply(fork, edit, rid)
        except EditRejected as exc:
            return False, f"invalid change ({exc.reason})"
        if self.domain.total_pressure(fork) < self.domain.total_pressure(state):
            return True, ""
        return False, "does not reduce gaps or conflicts"


_REGION_RE = re.compile(r"REGION\s*#?\s*(\d+)", re.IGNORECASE)


def parse_verdict(text: str) -> tuple[bool, str]:
    upper = text.upper()
    approve, reject = upper.find("APPROVE"), upper.find("REJECT")
    if approve >= 0 and (reject < 0 or approve < reject):
        return True, ""
    return False, text.strip()[:200] or "no verdict"


class InferenceRoles:
    """Coordinator, Proposer and Validator as prompts to a served model."""

    def __init__(self, domain: SchedulingDomain, actor: InferenceActor, context: TrialContext):
        self.domain = domain
        self.actor = actor
        self.context = context

    def _ask(self, prompt: str) -> str:
        return self.actor.complete(prompt, CONVERSATION_SAMPLING)

    def coordinate(self, state, pressures) -> int:
        ranked = sorted(range(len(pressures)), key=lambda i: (-pressures[i], i))[:COORDINATOR_SHORTLIST]
        lines = [
            "You coordinate a team that schedules meeting rooms.",
            "These time blocks have the highest pressure (more gaps or conflicts):",
        ]
        for rid in ranked:
            block = state.regions[rid].content
            lines.append(f"  Region {rid} ({block_time_range(block.day, block.index)}): pressure {pressures[rid]:.2f}")
        lines.append("Reply with the region to work on next in the format: REGION <number>")
        try:
            text = self._ask("\n".join(lines))
        except NoProposal:
            return ranked[0]
        match = _REGION_RE.search(text)
        if match and int(match.group(1)) in ranked:
            return int(match.group(1))
        return ranked[0]

    def propose(self, state, rid, feedback):
        view = self.domain.observe(state, rid)
        prompt = build_prompt(render_block_context(view), examples_enabled=False)
        if feedback:
            prompt += "\n\nValidator feedback on earlier proposals:\n" + "\n".join(f"  - {f}" for f in feedback)
        text = self._ask(prompt)
        return parse_patch(text, self.domain.rooms, self.actor.meeting_ids)

    def review(self, state, rid, edit) -> tuple[bool, str]:
        view = self.domain.observe(state, rid)
        prompt = "\n".join([
            "You review proposed meeting room schedule changes.",
            "",
            render_block_context(view),
            "",
            f"Proposed change: {self.domain.describe(edit)}",
            "",
            "Reply APPROVE if the change respects the constraints and improves the block,",
            "otherwise reply REJECT followed by a short reason.",
        ])
        try:
            return parse_verdict(self._ask(prompt))
        except NoProposal as exc:
            return False, f"validator unavailable ({exc.reason})"


def run_conversation(problem: Problem, settings: RunSettings | None = None, roles=None) -> TrialRecord:
    """Coordinator picks a region, then up to five Proposer/Validator turns.

    A patch lands when the Validator approves it; approval is the only gate.
    """
    settings = settings or RunSettings()
    started = time.perf_counter()
    domain = SchedulingDomain(problem)
    state = domain.initial_state()
    context = TrialContext(examples_enabled=False)
    if roles is None:
        actor = make_actors(problem, settings, context, 1)[0]
        if isinstance(actor, InferenceActor):
            roles = InferenceRoles(domain, actor, context)
        else:
            roles = StandInRoles(domain, actor, context)
    elif callable(roles):
        roles = roles(domain, context)
    record = TrialRecord(pressure_history=[domain.total_pressure(state)])
    record.termination = "budget"
    while True:
        if domain.is_solved(state):
            record.termination = "solved"
            break
        if state.tick >= settings.max_ticks:
            break
        before = domain.total_pressure(state)
        rid = roles.coordinate(state, domain.region_pressures(state))
        feedback: list[str] = []
        for _ in range(MAX_TURNS):
            try:
                edit = roles.propose(state, rid, feedback)
            except NoProposal as exc:
                record.patches_rejected += 1
                feedback.append(f"no usable proposal ({exc.reason})")
                continue
            record.patches_proposed += 1
            approved, note = roles.review(state, rid, edit)
            if not approved:
                record.patches_rejected += 1
                feedback.append(note)
                continue
            try:
                domain.apply(state, edit, rid)
                record.patches_applied += 1
            except EditRejected:
                record.patches_rejected += 1
            break
        state.tick += 1
        after = domain.total_pressure(state)
        record.pressure_history.append(after)
        context.after_tick(state.tick, before - after)
    record.total_ticks = state.tick
    record.solved = domain.is_solved(state)
    record.duration_s = time.perf_counter() - started
    return _finish(record, problem, StrategyKind.CONVERSATION.value, 1, context)


def run_strategy(kind: str, problem: Problem, agents: int, settings: RunSettings | None = None) -> TrialRecord:
    kind = StrategyKind(kind)
    if kind is StrategyKind.PRESSURE_FIELD:
        return run_pressure_field(problem, agents, settings)
    runner = {
        StrategyKind.CONVERSATION: run_conversation,
        StrategyKind.HIERARCHICAL: run_hierarchical,
        StrategyKind.SEQUENTIAL: run_sequential,
        StrategyKind.RANDOM: run_random,
    }[kind]
    record = runner(problem, settings)
    record.agents = agents
    return record
