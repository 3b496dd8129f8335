"""Patch proposers and the per-trial state they share.

Two kinds of actor sit behind the same ``propose(view) -> edit`` interface:
``HeuristicActor`` (no network, used for tests and offline grids) and
``InferenceActor`` in :mod:`pressure_field.inference`. Both report to a
``TrialContext`` that carries band/model escalation, pheromones and token
accounting between ticks.
"""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass, field
from typing import Container

from .engine import NoProposal, Provenance, TickReport
from .scheduling import (
    DAY_NAMES,
    DAY_START_MINUTES,
    SLOT_MINUTES,
    SLOTS_PER_DAY,
    BlockView,
    Place,
    Room,
    Swap,
    feasible_positions,
)

log = logging.getLogger(__name__)

SYSTEM_PROMPT = (
    "You optimize meeting room schedules. Given a schedule with gaps or conflicts,\n"
    "propose ONE change: move, swap, or reschedule a meeting to reduce gaps,\n"
    "overlaps, and utilization variance. Return ONLY your proposed change\n"
    "in the format: MOVE meeting_id TO room day start_time"
)
PROMPT_PREAMBLE = "You are a meeting room scheduler. Output schedules in the exact format requested."

MODEL_CHAIN = ("qwen2.5:0.5b", "qwen2.5:1.5b", "qwen2.5:3b")
STALL_TICKS = 7
PHEROMONE_DECAY = 0.95
PHEROMONE_FLOOR = 0.1
MAX_PROMPT_ENTRIES = 3


@dataclass(frozen=True)
class SamplingBand:
    name: str
    temperature: tuple[float, float]
    top_p: tuple[float, float]

    def sample(self, rng: random.Random) -> tuple[float, float]:
        return rng.uniform(*self.temperature), rng.uniform(*self.top_p)


BANDS = (
    SamplingBand("exploitation", (0.15, 0.35), (0.80, 0.90)),
    SamplingBand("balanced", (0.35, 0.55), (0.85, 0.95)),
    SamplingBand("exploration", (0.55, 0.85), (0.90, 0.98)),
)


@dataclass
class TokenUsage:
    prompt: int = 0
    completion: int = 0

    def add(self, other: "TokenUsage") -> None:
        if other.prompt < 0 or other.completion < 0:
            raise ValueError("token counts must be non-negative")
        self.prompt += other.prompt
        self.completion += other.completion

    @property
    def total(self) -> int:
        return self.prompt + self.completion


# -- escalation ----------------------------------------------------------------


@dataclass
class EscalationState:
    band: int = 0
    model: int = 0
    stall: int = 0
    models: tuple[str, ...] = MODEL_CHAIN
    band_events: list[tuple[int, str, str]] = field(default_factory=list)
    model_events: list[tuple[int, str, str]] = field(default_factory=list)

    @property
    def current_band(self) -> SamplingBand:
        return BANDS[self.band]

    @property
    def current_model(self) -> str:
        return self.models[self.model]


def escalate(esc: EscalationState, velocity: float, tick: int) -> EscalationState:
    """Advance the stall counter by one tick; ``velocity`` is P(t-1) - P(t).

    Seven consecutive zero-velocity ticks move to the next band. Seven more
    in the last band move to the next model and back to exploitation.
    """
    if velocity != 0:
        esc.stall = 0
        return esc
    esc.stall += 1
    if esc.stall < STALL_TICKS:
        return esc
    esc.stall = 0
    if esc.band < len(BANDS) - 1:
        esc.band_events.append((tick, BANDS[esc.band].name, BANDS[esc.band + 1].name))
        esc.band += 1
    elif esc.model < len(esc.models) - 1:
        esc.model_events.append((tick, esc.models[esc.model], esc.models[esc.model + 1]))
        esc.model += 1
        esc.band = 0
    return esc


# -- pheromones ----------------------------------------------------------------


@dataclass
class Pheromone:
    text: str
    weight: float
    seq: int


@dataclass
class PheromoneStore:
    positive: dict[int, list[Pheromone]] = field(default_factory=dict)
    negative: dict[int, list[Pheromone]] = field(default_factory=dict)
    _seq: int = 0

    def _decay(self) -> None:
        for table in (self.positive, self.negative):
            for region in list(table):
                kept = []
                for entry in table[region]:
                    entry.weight *= PHEROMONE_DECAY
                    if entry.weight >= PHEROMONE_FLOOR:
                        kept.append(entry)
                if kept:
                    table[region] = kept
                else:
                    del table[region]

    def _deposit(self, table, region: int, text: str) -> None:
        self._seq += 1
        table.setdefault(region, []).append(Pheromone(text, 1.0, self._seq))

    @staticmethod
    def _top(entries: list[Pheromone], limit: int) -> list[str]:
        ranked = sorted(entries, key=lambda e: (-e.weight, -e.seq))
        return [e.text for e in ranked[:limit]]

    def examples(self, region: int, limit: int = MAX_PROMPT_ENTRIES) -> list[str]:
        return self._top(self.positive.get(region, []), limit)

    def hints(self, region: int, limit: int = MAX_PROMPT_ENTRIES) -> list[str]:
        return self._top(self.negative.get(region, []), limit)


def pheromone_update(
    store: PheromoneStore,
    successes: list[tuple[int, str]],
    rejections: list[tuple[int, str]],
) -> PheromoneStore:
    """Age existing trails, then deposit this tick's outcomes at weight 1.0."""
    store._decay()
    for region, text in successes:
        store._deposit(store.positive, region, text)
    for region, hint in rejections:
        store._deposit(store.negative, region, hint)
    return store


# -- per-trial context -------------------------------------------------------------


@dataclass
class TrialContext:
    """State shared by a trial's actors, updated only between ticks."""

    escalation: EscalationState = field(default_factory=EscalationState)
    pheromones: PheromoneStore = field(default_factory=PheromoneStore)
    usage: TokenUsage = field(default_factory=TokenUsage)
    calls: int = 0
    examples_enabled: bool = True

    def record_call(self, usage: TokenUsage | None = None) -> None:
        self.calls += 1
        if usage is not None:
            self.usage.add(usage)

    def provenance(self, actor: str) -> Provenance:
        return Provenance(actor, self.escalation.current_band.name, self.escalation.current_model)

    def after_tick(self, tick: int, velocity: float) -> None:
        escalate(self.escalation, velocity, tick)

    def observe_report(self, report: TickReport, state, domain) -> None:
        """Engine sink: escalation plus pheromone deposits from one tick."""
        self.after_tick(report.tick + 1, report.pressure_before - report.pressure_after)
        successes = [(vp.patch.region_id, domain.describe(vp.patch.edit)) for vp in report.applied]
        rejections = []
        for vp in report.rejected:
            hint = domain.rejection_hint(state, vp.patch.region_id, vp.patch.edit)
            if hint:
                rejections.append((vp.patch.region_id, hint))
        pheromone_update(self.pheromones, successes, rejections)


# -- prompts and parsing -------------------------------------------------------


def build_prompt(block_context: str, examples: list[str] = (), hints: list[str] = (), examples_enabled: bool = True) -> str:
    parts = [PROMPT_PREAMBLE, "", block_context]
    if examples_enabled and examples:
        parts += ["", "Examples of successful changes:"]
        parts += [f"  {e}" for e in list(examples)[:MAX_PROMPT_ENTRIES]]
    if hints:
        parts += ["", "Hints for better scheduling:"]
        parts += [f"  {h}" for h in list(hints)[:MAX_PROMPT_ENTRIES]]
    return "\n".join(parts)


class PatchParseError(NoProposal):
    pass


_MOVE_RE = re.compile(
    r"\bMOVE\s+(?:meeting\s*)?#?(?P<meeting>\w+)\s+TO\s+(?:room\s*)?(?P<room>[A-Za-z0-9]+)"
    r"[\s,]+(?P<day>[A-Za-z]+)[\s,]+(?:at\s+)?(?P<time>[0-9:.apmAPM]+)",
    re.IGNORECASE,
)
_SWAP_RE = re.compile(
    r"\bSWAP\s+(?:meeting\s*)?#?(?P<first>\w+)\s+(?:WITH|AND)\s+(?:meeting\s*)?#?(?P<second>\w+)",
    re.IGNORECASE,
)
_TIME_RE = re.compile(r"^(\d{1,2}):(\d{2})$")


def _meeting_id(token: str, known: Container[int]) -> int:
    if not token.isdigit() or int(token) not in known:
        raise PatchParseError("unknown_meeting", f"unknown meeting {token!r}")
    return int(token)


def _room_index(token: str, rooms: list[Room]) -> int:
    for idx, room in enumerate(rooms):
        if token.upper() == room.name.upper():
            return idx
    raise PatchParseError("unknown_room", f"unknown room {token!r}")


def _day_index(token: str) -> int:
    token = token.lower()
    for idx, name in enumerate(DAY_NAMES):
        if len(token) >= 3 and name.lower().startswith(token):
            return idx
    raise PatchParseError("malformed_time", f"unknown day {token!r}")


def _slot_index(token: str) -> int:
    match = _TIME_RE.match(token.rstrip(".,;"))
    if not match:
        raise PatchParseError("malformed_time", f"bad time {token!r}")
    minutes = int(match.group(1)) * 60 + int(match.group(2)) - DAY_START_MINUTES
    if minutes < 0 or minutes % SLOT_MINUTES or minutes // SLOT_MINUTES >= SLOTS_PER_DAY:
        raise PatchParseError("malformed_time", f"time {token!r} is not a schedule slot")
    return minutes // SLOT_MINUTES


def parse_patch(text: str, rooms: list[Room], meetings: Container[int]):
    """Extract the first MOVE or SWAP directive from model output."""
    candidates = [m for m in (_MOVE_RE.search(text), _SWAP_RE.search(text)) if m]
    if not candidates:
        raise PatchParseError("no_directive", "no directive found")
    match = min(candidates, key=lambda m: m.start())
    if match.re is _SWAP_RE:
        return Swap(_meeting_id(match["first"], meetings), _meeting_id(match["second"], meetings))
    return Place(
        meeting=_meeting_id(match["meeting"], meetings),
        room=_room_index(match["room"], rooms),
        day=_day_index(match["day"]),
        slot=_slot_index(match["time"]),
    )


# -- heuristic actor -----------------------------------------------------------


def _conflicting_meetings(view: BlockView) -> list[int]:
    cells: dict[tuple[int, int], list[int]] = {}
    for meeting, _, start in view.assigned:
        for cell in range(start, start + meeting.duration):
            for person in meeting.attendees:
                cells.setdefault((person, cell), []).append(meeting.id)
    clashing = set()
    for ids in cells.values():
        if len(ids) > 1:
            clashing.update(ids)
    return sorted(clashing)


class HeuristicActor:
    """Greedy, network-free proposer.

    Schedules the largest fitting meeting at the earliest attendee-safe spot,
    otherwise relocates a double-booked meeting within the block. With
    probability ``noise`` it behaves carelessly instead: it picks uniformly
    among placements that only respect capacity and free room cells, so it
    can create double-bookings that an unvalidated strategy will keep.
    """

    def __init__(self, name: str = "heuristic", noise: float = 0.0, rng: random.Random | None = None,
                 context: TrialContext | None = None):
        if not 0.0 <= noise <= 1.0:
            raise ValueError("noise must lie in [0, 1]")
        self.name = name
        self.noise = noise
        self.rng = rng or random.Random(0)
        self.context = context

    def provenance(self) -> Provenance:
        if self.context is None:
            return Provenance(self.name)
        return self.context.provenance(self.name)

    def propose(self, view: BlockView):
        if self.context is not None:
            self.context.record_call()
        careless = self.noise > 0 and self.rng.random() < self.noise
        if careless:
            return self._careless(view)
        edit = self._schedule(view) or self._resolve_overlap(view)
        if edit is None:
            raise NoProposal("no_move", "no feasible improving move in this block")
        return edit

    def _schedule(self, view: BlockView):
        block, meetings = view.as_block(), view.meeting_index()
        for meeting in sorted(view.fitting, key=lambda m: (-len(m.attendees), m.id)):
            spots = feasible_positions(block, meeting, view.rooms, meetings, attendee_safe=True)
            if spots:
                room, start = min(spots, key=lambda s: (s[1], s[0]))
                return Place(meeting.id, room, view.day, start)
        return None

    def _resolve_overlap(self, view: BlockView):
        block, meetings = view.as_block(), view.meeting_index()
        for mid in _conflicting_meetings(view):
            spots = feasible_positions(block, meetings[mid], view.rooms, meetings, attendee_safe=True, skip={mid})
            spots = [s for s in spots if s != block.assignments[mid]]
            if spots:
                room, start = min(spots, key=lambda s: (s[1], s[0]))
                return Place(mid, room, view.day, start)
        return None

    def _careless(self, view: BlockView):
        block, meetings = view.as_block(), view.meeting_index()
        options = []
        for meeting in view.fitting:
            for room, start in feasible_positions(block, meeting, view.rooms, meetings, attendee_safe=False):
                options.append(Place(meeting.id, room, view.day, start))
        if not options:
            for meeting, room, start in view.assigned:
                for spot in feasible_positions(block, meeting, view.rooms, meetings, attendee_safe=False, skip={meeting.id}):
                    if spot != (room, start):
                        options.append(Place(meeting.id, spot[0], view.day, spot[1]))
        if not options:
            raise NoProposal("no_move", "block is full")
        return self.rng.choice(options)


class ScriptedActor:
    """Replays fixed outputs, or always fails when given none."""

    def __init__(self, name: str = "scripted", edits=None, reason: str = "scripted_failure",
                 context: TrialContext | None = None):
        self.name = name
        self.edits = list(edits or [])
        self.reason = reason
        self.context = context

    def provenance(self) -> Provenance:
        return self.context.provenance(self.name) if self.context else Provenance(self.name)

    def propose(self, view):
        if self.context is not None:
            self.context.record_call()
        if not self.edits:
            raise NoProposal(self.reason)
        return self.edits.pop(0)

