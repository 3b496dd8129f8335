"""Meeting-room scheduling domain.

The week is 5 days x 16 half-hour slots (08:00-16:00). Each day splits into
four 2-hour blocks, giving 20 regions. A meeting always sits wholly inside
one block, so every region's pressure depends on its own block only.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from .engine import ArtifactState, EditRejected, Region

DAYS = 5
SLOTS_PER_DAY = 16
BLOCK_SLOTS = 4
BLOCKS_PER_DAY = SLOTS_PER_DAY // BLOCK_SLOTS
N_REGIONS = DAYS * BLOCKS_PER_DAY
DAY_NAMES = ("Monday", "Tuesday", "Wednesday", "Thursday", "Friday")
DAY_START_MINUTES = 8 * 60
SLOT_MINUTES = 30

SCHEMA_VERSION = "v1"

# difficulty -> (rooms, meetings, pre-scheduled fraction)
DIFFICULTIES = {
    "easy": (3, 20, 0.70),
    "medium": (5, 40, 0.50),
    "hard": (5, 60, 0.30),
}

CAPACITY_RANGE = (4, 12)
DURATION_RANGE = (1, 4)
ATTENDEE_RANGE = (2, 5)
MAX_GENERATION_ATTEMPTS = 200


@dataclass(frozen=True)
class Room:
    name: str
    capacity: int

    @property
    def label(self) -> str:
        return f"Room {self.name}"


@dataclass(frozen=True)
class Meeting:
    id: int
    duration: int
    attendees: tuple[int, ...]


@dataclass(frozen=True)
class Placement:
    """Where a meeting sits: room index, day, and start slot within the day."""

    room: int
    day: int
    slot: int

    @property
    def region(self) -> int:
        return region_of(self.day, self.slot)


@dataclass
class Problem:
    rooms: list[Room]
    meetings: list[Meeting]
    pre_scheduled: dict[int, Placement]
    seed: int
    difficulty: str
    people: int = 0

    def meeting(self, meeting_id: int) -> Meeting:
        return self._by_id[meeting_id]

    def __post_init__(self):
        self._by_id = {m.id: m for m in self.meetings}

    def has_meeting(self, meeting_id: int) -> bool:
        return meeting_id in self._by_id

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA_VERSION,
            "seed": self.seed,
            "difficulty": self.difficulty,
            "people": self.people,
            "rooms": [{"name": r.name, "capacity": r.capacity} for r in self.rooms],
            "meetings": [
                {"id": m.id, "duration": m.duration, "attendees": list(m.attendees)}
                for m in self.meetings
            ],
            "pre_scheduled": [
                {"meeting": mid, "room": p.room, "day": p.day, "slot": p.slot}
                for mid, p in sorted(self.pre_scheduled.items())
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: dict) -> "Problem":
        if data.get("schema") != SCHEMA_VERSION:
            raise ValueError(f"unsupported problem schema {data.get('schema')!r}")
        return cls(
            rooms=[Room(r["name"], r["capacity"]) for r in data["rooms"]],
            meetings=[
                Meeting(m["id"], m["duration"], tuple(m["attendees"]))
                for m in data["meetings"]
            ],
            pre_scheduled={
                a["meeting"]: Placement(a["room"], a["day"], a["slot"])
                for a in data["pre_scheduled"]
            },
            seed=data["seed"],
            difficulty=data["difficulty"],
            people=data.get("people", 0),
        )


@dataclass
class Block:
    """Content of one region: meeting id -> (room, start slot within the day)."""

    day: int
    index: int
    assignments: dict[int, tuple[int, int]] = field(default_factory=dict)

    @property
    def first_slot(self) -> int:
        return self.index * BLOCK_SLOTS

    @property
    def end_slot(self) -> int:
        return self.first_slot + BLOCK_SLOTS


@dataclass(frozen=True)
class SignalVector:
    gap_ratio: float
    overlap_count: int
    util_var: float


@dataclass(frozen=True)
class PressureWeights:
    gaps: float = 1.0
    overlaps: float = 2.0
    util_var: float = 0.5
    unscheduled: float = 1.5


DEFAULT_WEIGHTS = PressureWeights()


# Edits. Place covers both "schedule from the pool" and "move within block".
@dataclass(frozen=True)
class Place:
    meeting: int
    room: int
    day: int
    slot: int


@dataclass(frozen=True)
class Swap:
    first: int
    second: int


def region_of(day: int, slot: int) -> int:
    return day * BLOCKS_PER_DAY + slot // BLOCK_SLOTS


def region_day_block(region_id: int) -> tuple[int, int]:
    return divmod(region_id, BLOCKS_PER_DAY)


def slot_time(slot: int) -> str:
    minutes = DAY_START_MINUTES + slot * SLOT_MINUTES
    return f"{minutes // 60:02d}:{minutes % 60:02d}"


def room_name(index: int) -> str:
    name = ""
    index += 1
    while index:
        index, rem = divmod(index - 1, 26)
        name = chr(ord("A") + rem) + name
    return name


# -- generation ---------------------------------------------------------------


def problem_seed(trial: int, agent_count: int) -> int:
    return trial * 1000 + agent_count


def generate_problem(trial: int, agent_count: int, difficulty: str = "easy") -> Problem:
    """Build a seeded problem whose full schedule is known to be conflict-free.

    Randomness comes from Python's ``random.Random`` (MT19937) seeded with the
    integer seed; its integer stream is stable across platforms and versions.
    """
    if trial < 0:
        raise ValueError("trial must be >= 0")
    if agent_count < 1:
        raise ValueError("agent_count must be >= 1")
    if difficulty not in DIFFICULTIES:
        raise ValueError(f"unknown difficulty {difficulty!r}")
    n_rooms, n_meetings, pre_fraction = DIFFICULTIES[difficulty]
    seed = problem_seed(trial, agent_count)
    rng = random.Random(seed)
    people = n_meetings // 2 + n_rooms

    for _ in range(MAX_GENERATION_ATTEMPTS):
        capacities = [rng.randint(*CAPACITY_RANGE) for _ in range(n_rooms)]
        if max(capacities) < ATTENDEE_RANGE[1]:
            continue
        rooms = [Room(room_name(i), c) for i, c in enumerate(capacities)]
        meetings = []
        for mid in range(1, n_meetings + 1):
            duration = rng.randint(*DURATION_RANGE)
            size = rng.randint(*ATTENDEE_RANGE)
            attendees = tuple(sorted(rng.sample(range(people), size)))
            meetings.append(Meeting(mid, duration, attendees))
        placements = _construct_schedule(rng, rooms, meetings)
        if placements is None:
            continue
        n_pre = round(n_meetings * pre_fraction)
        kept = sorted(rng.sample([m.id for m in meetings], n_pre))
        return Problem(
            rooms=rooms,
            meetings=meetings,
            pre_scheduled={mid: placements[mid] for mid in kept},
            seed=seed,
            difficulty=difficulty,
            people=people,
        )
    raise RuntimeError(
        f"could not construct a feasible schedule for seed {seed} "
        f"after {MAX_GENERATION_ATTEMPTS} attempts"
    )


def _construct_schedule(rng, rooms, meetings) -> dict[int, Placement] | None:
    blocks = [Block(*region_day_block(r)) for r in range(N_REGIONS)]
    by_id = {m.id: m for m in meetings}
    placements = {}
    for meeting in meetings:
        options = []
        for region, block in enumerate(blocks):
            for room, start in feasible_positions(block, meeting, rooms, by_id, attendee_safe=True):
                options.append((region, room, start))
        if not options:
            return None
        region, room, start = rng.choice(options)
        blocks[region].assignments[meeting.id] = (room, start)
        placements[meeting.id] = Placement(room, blocks[region].day, start)
    return placements


# -- geometry ----------------------------------------------------------------


def _cells(start: int, duration: int) -> range:
    return range(start, start + duration)


def room_busy(block: Block, meetings: dict[int, Meeting], room: int, skip=()) -> set[int]:
    busy = set()
    for mid, (r, start) in block.assignments.items():
        if r == room and mid not in skip:
            busy.update(_cells(start, meetings[mid].duration))
    return busy


def attendee_busy(block: Block, meetings: dict[int, Meeting], skip=()) -> dict[int, set[int]]:
    busy: dict[int, set[int]] = {}
    for mid, (_, start) in block.assignments.items():
        if mid in skip:
            continue
        for person in meetings[mid].attendees:
            busy.setdefault(person, set()).update(_cells(start, meetings[mid].duration))
    return busy


def feasible_positions(block, meeting, rooms, meetings, attendee_safe=True, skip=()):
    """(room, start) pairs in ``block`` where ``meeting`` can legally go.

    Legal means capacity fits, cells are free, and the meeting ends inside the
    block. With ``attendee_safe`` the placement also creates no double-booking.
    """
    people = attendee_busy(block, meetings, skip) if attendee_safe else {}
    out = []
    for room_idx, room in enumerate(rooms):
        if len(meeting.attendees) > room.capacity:
            continue
        busy = room_busy(block, meetings, room_idx, skip)
        for start in range(block.first_slot, block.end_slot - meeting.duration + 1):
            cells = set(_cells(start, meeting.duration))
            if cells & busy:
                continue
            if attendee_safe and any(cells & people.get(p, set()) for p in meeting.attendees):
                continue
            out.append((room_idx, start))
    return out


# -- sensors and pressure ----------------------------------------------------


def sense_block(block: Block, rooms: list[Room], meetings: dict[int, Meeting]) -> SignalVector:
    n_rooms = len(rooms)
    occupied = [0] * n_rooms
    bookings: dict[tuple[int, int], int] = {}
    for mid, (room, start) in block.assignments.items():
        meeting = meetings[mid]
        occupied[room] += meeting.duration
        for cell in _cells(start, meeting.duration):
            for person in meeting.attendees:
                bookings[person, cell] = bookings.get((person, cell), 0) + 1
    total_cells = n_rooms * BLOCK_SLOTS
    gap_ratio = (total_cells - sum(occupied)) / total_cells
    overlap_count = sum(count - 1 for count in bookings.values() if count > 1)
    fractions = [cells / BLOCK_SLOTS for cells in occupied]
    mean = sum(fractions) / n_rooms
    util_var = sum((f - mean) ** 2 for f in fractions) / n_rooms
    return SignalVector(gap_ratio, overlap_count, util_var)


def block_pressure(sig: SignalVector, w: PressureWeights = DEFAULT_WEIGHTS) -> float:
    # The unscheduled term belongs to total pressure only.
    return w.gaps * sig.gap_ratio + w.overlaps * sig.overlap_count + w.util_var * sig.util_var


@dataclass
class BlockView:
    """Everything an actor may see about one region."""

    region_id: int
    day: int
    index: int
    rooms: list[Room]
    assigned: list[tuple[Meeting, int, int]]
    fitting: list[Meeting]
    signals: SignalVector
    fitness: float = 0.0
    confidence: float = 0.0
    examples: list[str] = field(default_factory=list)
    hints: list[str] = field(default_factory=list)

    @property
    def first_slot(self) -> int:
        return self.index * BLOCK_SLOTS

    @property
    def end_slot(self) -> int:
        return self.first_slot + BLOCK_SLOTS

    def as_block(self) -> Block:
        return Block(self.day, self.index, {m.id: (room, start) for m, room, start in self.assigned})

    def meeting_index(self) -> dict[int, Meeting]:
        index = {m.id: m for m, _, _ in self.assigned}
        index.update((m.id, m) for m in self.fitting)
        return index


class SchedulingDomain:
    """Binds a Problem to the engine's domain interface."""

    def __init__(self, problem: Problem, weights: PressureWeights = DEFAULT_WEIGHTS):
        self.problem = problem
        self.weights = weights
        self.meetings = {m.id: m for m in problem.meetings}
        self.rooms = problem.rooms

    # state construction

    def initial_state(self) -> ArtifactState:
        blocks = [Block(*region_day_block(r)) for r in range(N_REGIONS)]
        for mid, p in sorted(self.problem.pre_scheduled.items()):
            blocks[p.region].assignments[mid] = (p.room, p.slot)
        unscheduled = sorted(set(self.meetings) - set(self.problem.pre_scheduled))
        regions = [Region(i, blocks[i]) for i in range(N_REGIONS)]
        return ArtifactState(regions=regions, shared=unscheduled)

    # sensing

    def sense(self, block: Block) -> SignalVector:
        return sense_block(block, self.rooms, self.meetings)

    def region_pressure(self, block: Block) -> float:
        return block_pressure(self.sense(block), self.weights)

    def region_pressures(self, state: ArtifactState) -> list[float]:
        return [self.region_pressure(r.content) for r in state.regions]

    def unscheduled_fraction(self, state: ArtifactState) -> float:
        return len(state.shared) / len(self.meetings)

    def total_pressure(self, state: ArtifactState) -> float:
        return sum(self.region_pressures(state)) + self.weights.unscheduled * self.unscheduled_fraction(state)

    def is_solved(self, state: ArtifactState) -> bool:
        if state.shared:
            return False
        return all(self.sense(r.content).overlap_count == 0 for r in state.regions)

    def fitting_meetings(self, state: ArtifactState, region_id: int) -> list[Meeting]:
        """Unscheduled meetings with at least one capacity- and cell-legal spot here."""
        block = state.regions[region_id].content
        out = []
        for mid in state.shared:
            meeting = self.meetings[mid]
            if feasible_positions(block, meeting, self.rooms, self.meetings, attendee_safe=False):
                out.append(meeting)
        return out

    def observe(self, state: ArtifactState, region_id: int) -> BlockView:
        region = state.regions[region_id]
        block = region.content
        assigned = [
            (self.meetings[mid], room, start)
            for mid, (room, start) in sorted(block.assignments.items())
        ]
        return BlockView(
            region_id=region_id,
            day=block.day,
            index=block.index,
            rooms=list(self.rooms),
            assigned=assigned,
            fitting=self.fitting_meetings(state, region_id),
            signals=self.sense(block),
            fitness=region.fitness,
            confidence=region.confidence,
        )

    # edits

    def claims(self, edit) -> frozenset:
        if isinstance(edit, Place):
            return frozenset({("meeting", edit.meeting)})
        if isinstance(edit, Swap):
            return frozenset({("meeting", edit.first), ("meeting", edit.second)})
        return frozenset()

    def apply(self, state: ArtifactState, edit, region_id: int | None = None) -> None:
        """Apply ``edit`` to ``state`` in place, or raise EditRejected untouched."""
        if isinstance(edit, Place):
            self._apply_place(state, edit, region_id)
        elif isinstance(edit, Swap):
            self._apply_swap(state, edit, region_id)
        else:
            raise EditRejected("unknown_edit", f"unsupported edit {edit!r}")

    def _locate(self, state: ArtifactState, meeting_id: int) -> int | None:
        for region in state.regions:
            if meeting_id in region.content.assignments:
                return region.id
        return None

    def _apply_place(self, state, edit: Place, region_id):
        meeting = self.meetings.get(edit.meeting)
        if meeting is None:
            raise EditRejected("unknown_meeting", f"no meeting {edit.meeting}")
        if not 0 <= edit.room < len(self.rooms):
            raise EditRejected("unknown_room", f"no room index {edit.room}")
        if not (0 <= edit.day < DAYS and 0 <= edit.slot < SLOTS_PER_DAY):
            raise EditRejected("slot_range", f"day {edit.day} slot {edit.slot} outside the week")
        target = region_of(edit.day, edit.slot)
        if region_id is not None and target != region_id:
            raise EditRejected("outside_region", f"slot lies in region {target}, not {region_id}")
        block = state.regions[target].content
        if edit.slot + meeting.duration > block.end_slot:
            raise EditRejected("block_boundary", "meeting would cross the block boundary")
        if len(meeting.attendees) > self.rooms[edit.room].capacity:
            raise EditRejected("capacity", "room capacity is smaller than attendee count")
        source = None
        if edit.meeting not in state.shared:
            source = self._locate(state, edit.meeting)
            if source != target:
                raise EditRejected("claimed", f"meeting {edit.meeting} is held by region {source}")
        busy = room_busy(block, self.meetings, edit.room, skip={edit.meeting})
        if busy & set(_cells(edit.slot, meeting.duration)):
            raise EditRejected("occupied", "room already booked for those slots")
        if source is None:
            state.shared.remove(edit.meeting)
        block.assignments[edit.meeting] = (edit.room, edit.slot)

    def _apply_swap(self, state, edit: Swap, region_id):
        if edit.first == edit.second:
            raise EditRejected("noop", "cannot swap a meeting with itself")
        for mid in (edit.first, edit.second):
            if mid not in self.meetings:
                raise EditRejected("unknown_meeting", f"no meeting {mid}")
        first_region = self._locate(state, edit.first)
        second_region = self._locate(state, edit.second)
        if first_region is None or second_region is None or first_region != second_region:
            raise EditRejected("claimed", "swap needs two meetings assigned in the same region")
        if region_id is not None and first_region != region_id:
            raise EditRejected("outside_region", f"meetings sit in region {first_region}")
        block = state.regions[first_region].content
        a, b = self.meetings[edit.first], self.meetings[edit.second]
        room_a, start_a = block.assignments[a.id]
        room_b, start_b = block.assignments[b.id]
        moved = {a.id: (room_b, start_b), b.id: (room_a, start_a)}
        for mid, (room, start) in moved.items():
            meeting = self.meetings[mid]
            if len(meeting.attendees) > self.rooms[room].capacity:
                raise EditRejected("capacity", f"meeting {mid} does not fit room {room_name(room)}")
            if start + meeting.duration > block.end_slot:
                raise EditRejected("block_boundary", f"meeting {mid} would cross the block boundary")
        trial = Block(block.day, block.index, {k: v for k, v in block.assignments.items() if k not in moved})
        for mid, (room, start) in moved.items():
            if room_busy(trial, self.meetings, room) & set(_cells(start, self.meetings[mid].duration)):
                raise EditRejected("occupied", "swapped meetings collide")
            trial.assignments[mid] = (room, start)
        block.assignments.update(moved)

    def edit_regions(self, state: ArtifactState, edit) -> set[int]:
        if isinstance(edit, Place):
            return {region_of(edit.day, edit.slot)}
        if isinstance(edit, Swap):
            return {r for r in (self._locate(state, edit.first),) if r is not None}
        return set()

    def rejection_hint(self, state: ArtifactState, region_id: int, edit) -> str | None:
        """Positive-language hint suggesting the emptiest room for the rejected meeting."""
        if not isinstance(edit, Place) or edit.meeting not in self.meetings:
            return None
        block = state.regions[region_id].content
        meeting = self.meetings[edit.meeting]
        best = None
        for room_idx, room in enumerate(self.rooms):
            if len(meeting.attendees) > room.capacity:
                continue
            free = BLOCK_SLOTS - len(room_busy(block, self.meetings, room_idx))
            if best is None or free > best[1]:
                best = (room_idx, free)
        if best is None:
            return None
        gain = self.weights.gaps * meeting.duration / (len(self.rooms) * BLOCK_SLOTS)
        return f"TIP: Schedule meetings in {self.rooms[best[0]].label} (improves by {gain:.2f})"

    def describe(self, edit) -> str:
        return render_edit(edit, self.rooms)


# -- prompt rendering --------------------------------------------------------


def block_time_range(day: int, index: int) -> str:
    first = index * BLOCK_SLOTS
    return f"{DAY_NAMES[day]} {slot_time(first)}-{slot_time(first + BLOCK_SLOTS)}"


def render_block_context(view: BlockView, fitting: list[Meeting] | None = None) -> str:
    """The per-block task text shared by every strategy's prompt."""
    fitting = view.fitting if fitting is None else fitting
    lines = [
        "Meeting Room Schedule Optimization.",
        "Goal: Schedule meetings to minimize gaps and avoid conflicts.",
        "",
        f"Time Block: {block_time_range(view.day, view.index)}",
        "",
        "Rooms:",
    ]
    lines += [f"  {room.label}: capacity {room.capacity}" for room in view.rooms]
    lines += ["", "Current assignments:"]
    if view.assigned:
        for meeting, room, start in sorted(view.assigned, key=lambda a: (a[2], a[1], a[0].id)):
            lines.append(
                f"  Meeting {meeting.id}: {view.rooms[room].label} "
                f"{slot_time(start)}-{slot_time(start + meeting.duration)}, "
                f"{len(meeting.attendees)} attendees"
            )
    else:
        lines.append("  (none)")
    lines += ["", "Unscheduled meetings that could fit in this block:"]
    if fitting:
        for meeting in fitting:
            lines.append(
                f"  Meeting {meeting.id}: {meeting.duration * SLOT_MINUTES}min, "
                f"{len(meeting.attendees)} attendees"
            )
    else:
        lines.append("  (none)")
    lines += [
        "",
        "Constraints:",
        "- No attendee can be in multiple meetings at the same time",
        "- Room capacity must fit attendees",
        "",
        "Output the schedule for this time block.",
    ]
    return "\n".join(lines)


def render_edit(edit, rooms: list[Room]) -> str:
    if isinstance(edit, Place):
        room = rooms[edit.room].label.replace(" ", "") if 0 <= edit.room < len(rooms) else f"Room{edit.room}"
        return f"MOVE {edit.meeting} TO {room} {DAY_NAMES[edit.day]} {slot_time(edit.slot)}"
    if isinstance(edit, Swap):
        return f"SWAP {edit.first} WITH {edit.second}"
    raise TypeError(f"cannot render {edit!r}")
