"""Domain-generic pressure-field tick loop.

The engine never looks inside region content. A domain object supplies
sensing, pressure, edit application, conflict keys, and the solved predicate;
actors turn a local observation into an edit.
"""

from __future__ import annotations

import copy
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Protocol, Sequence

from .records import TrialRecord

PRESSURE_TOLERANCE = 1e-9


class EditRejected(Exception):
    """A domain refused an edit. ``reason`` is a short machine-readable code."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(detail or reason)
        self.reason = reason
        self.detail = detail


class NoProposal(Exception):
    """An actor had nothing to offer (parse failure, transport error, no move)."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(detail or reason)
        self.reason = reason


class EngineError(RuntimeError):
    """An edit that passed on a fork failed on the real state."""


@dataclass
class Region:
    id: int
    content: Any
    fitness: float = 0.0
    confidence: float = 0.0
    inhibited_until: int = 0


@dataclass
class ArtifactState:
    regions: list[Region]
    shared: Any = None
    tick: int = 0

    def clone(self) -> "ArtifactState":
        return copy.deepcopy(self)


@dataclass
class EngineConfig:
    tau_act: float = 0.05
    lambda_f: float = 0.1
    lambda_g: float = 0.05
    delta_f: float = 0.3
    delta_g: float = 0.2
    kappa: int = 1
    tau_inh: int = 2
    fork_width_K: int = 1
    max_ticks: int = 50
    decay_enabled: bool = True
    inhibition_enabled: bool = True
    examples_enabled: bool = True
    # None: every actor proposes for every active region. An integer focuses
    # the tick on that many regions ranked by pressure * (1 - fitness).
    regions_per_tick: int | None = None

    def validate(self) -> None:
        if self.lambda_f < 0 or self.lambda_g < 0:
            raise ValueError("decay rates must be non-negative")
        if self.tau_inh < 0:
            raise ValueError("tau_inh must be non-negative")
        if self.kappa < 1 or self.fork_width_K < 1:
            raise ValueError("kappa and fork_width_K must be >= 1")
        if self.max_ticks < 0:
            raise ValueError("max_ticks must be non-negative")
        if not (0 <= self.delta_f <= 1 and 0 <= self.delta_g <= 1):
            raise ValueError("reinforcement boosts must lie in [0, 1]")
        if self.regions_per_tick is not None and self.regions_per_tick < 1:
            raise ValueError("regions_per_tick must be >= 1")
        if self.decay_enabled and self.inhibition_enabled and not self.stability_margin() > 0:
            raise ValueError(
                "delta_f must exceed 1 - exp(-lambda_f * tau_inh) "
                f"({1 - math.exp(-self.lambda_f * self.tau_inh):.4f})"
            )

    def stability_margin(self) -> float:
        return self.delta_f - (1 - math.exp(-self.lambda_f * self.tau_inh))


@dataclass(frozen=True)
class Provenance:
    actor: str
    band: str = ""
    model: str = ""
    index: int = 0


@dataclass
class Patch:
    region_id: int
    edit: Any
    provenance: Provenance
    claimed_resources: frozenset = frozenset()
    predicted_delta: float | None = None


@dataclass
class ValidatedPatch:
    patch: Patch
    actual_delta: float
    valid: bool
    reason: str = ""


@dataclass
class TickReport:
    tick: int
    pressure_before: float
    pressure_after: float
    region_pressures: list[float]
    region_pressures_after: list[float]
    active: list[int] = field(default_factory=list)
    proposals: int = 0
    failures: int = 0
    applied: list[ValidatedPatch] = field(default_factory=list)
    rejected: list[ValidatedPatch] = field(default_factory=list)
    dropped: int = 0

    @property
    def rejections(self) -> int:
        return self.failures + len(self.rejected)

    @property
    def quiescent(self) -> bool:
        return not self.active


class Domain(Protocol):
    def region_pressures(self, state: ArtifactState) -> list[float]: ...
    def total_pressure(self, state: ArtifactState) -> float: ...
    def observe(self, state: ArtifactState, region_id: int) -> Any: ...
    def apply(self, state: ArtifactState, edit: Any, region_id: int | None = None) -> None: ...
    def claims(self, edit: Any) -> frozenset: ...
    def is_solved(self, state: ArtifactState) -> bool: ...


class Actor(Protocol):
    name: str

    def propose(self, observation: Any) -> Any:
        """Return an edit or raise NoProposal."""

    def provenance(self) -> Provenance: ...


# -- phases ------------------------------------------------------------------


def decay_phase(state: ArtifactState, cfg: EngineConfig) -> ArtifactState:
    if not cfg.decay_enabled:
        return state
    keep_f = math.exp(-cfg.lambda_f)
    keep_g = math.exp(-cfg.lambda_g)
    for region in state.regions:
        region.fitness *= keep_f
        region.confidence *= keep_g
    return state


def is_inhibited(region: Region, tick: int) -> bool:
    return region.inhibited_until > tick


def activated_regions(state: ArtifactState, pressures: Sequence[float], cfg: EngineConfig) -> list[int]:
    if len(pressures) != len(state.regions):
        raise ValueError("need one pressure per region")
    return [
        region.id
        for region, pressure in zip(state.regions, pressures)
        if pressure >= cfg.tau_act
        and not (cfg.inhibition_enabled and is_inhibited(region, state.tick))
    ]


def focus_regions(state: ArtifactState, active: Sequence[int], pressures: Sequence[float], count: int) -> list[int]:
    """Pick ``count`` active regions, hottest first, discounting recently reinforced ones."""

    def priority(rid):
        return (-(pressures[rid] * (1.0 - state.regions[rid].fitness)), -pressures[rid], rid)

    return sorted(active, key=priority)[:count]


def collect_proposals(
    state: ArtifactState,
    active: Sequence[int],
    actors: Sequence[Actor],
    domain: Domain,
    pairs: Iterable[tuple[int, int]] | None = None,
) -> tuple[list[Patch], list[tuple[int, str, str]]]:
    """Ask actors for patches on active regions.

    ``pairs`` lists (region id, actor index) invocations; by default every
    actor is asked about every active region. Actor failures are returned,
    never raised.
    """
    if pairs is None:
        pairs = [(rid, k) for rid in active for k in range(len(actors))]
    patches: list[Patch] = []
    failures: list[tuple[int, str, str]] = []
    index = 0
    for rid, k in pairs:
        actor = actors[k]
        observation = domain.observe(state, rid)
        try:
            edit = actor.propose(observation)
        except NoProposal as exc:
            failures.append((rid, actor.name, exc.reason))
            continue
        prov = actor.provenance()
        patches.append(
            Patch(
                region_id=rid,
                edit=edit,
                provenance=Provenance(prov.actor, prov.band, prov.model, index),
                claimed_resources=frozenset(domain.claims(edit)),
            )
        )
        index += 1
    return patches, failures


def _validate_one(state: ArtifactState, patch: Patch, domain: Domain, baseline: float) -> ValidatedPatch:
    fork = state.clone()
    try:
        domain.apply(fork, patch.edit, patch.region_id)
    except EditRejected as exc:
        return ValidatedPatch(patch, 0.0, False, exc.reason)
    delta = domain.total_pressure(fork) - baseline
    if delta < 0:
        return ValidatedPatch(patch, delta, True)
    return ValidatedPatch(patch, delta, False, "no_improvement")


def validate_patches(
    state: ArtifactState, patches: Sequence[Patch], domain: Domain, cfg: EngineConfig
) -> list[ValidatedPatch]:
    """Validate each patch on its own fork; results keep the input order."""
    if not patches:
        return []
    baseline = domain.total_pressure(state)
    if cfg.fork_width_K == 1 or len(patches) == 1:
        return [_validate_one(state, p, domain, baseline) for p in patches]
    # Each worker clones before touching anything; the shared state is read-only.
    with ThreadPoolExecutor(max_workers=cfg.fork_width_K) as pool:
        return list(pool.map(lambda p: _validate_one(state, p, domain, baseline), patches))


def _selection_key(vp: ValidatedPatch):
    return (vp.actual_delta, vp.patch.region_id, vp.patch.provenance.index)


def select_patches(validated: Iterable[ValidatedPatch], cfg: EngineConfig) -> list[ValidatedPatch]:
    kept: list[ValidatedPatch] = []
    used_regions: set[int] = set()
    used_resources: set[Hashable] = set()
    for vp in sorted((v for v in validated if v.valid), key=_selection_key):
        if len(kept) >= cfg.kappa:
            break
        if vp.patch.region_id in used_regions:
            continue
        if vp.patch.claimed_resources & used_resources:
            continue
        kept.append(vp)
        used_regions.add(vp.patch.region_id)
        used_resources |= vp.patch.claimed_resources
    return kept


def apply_and_reinforce(
    state: ArtifactState, selected: Sequence[ValidatedPatch], cfg: EngineConfig, domain: Domain
) -> ArtifactState:
    for vp in selected:
        region = state.regions[vp.patch.region_id]
        try:
            domain.apply(state, vp.patch.edit, region.id)
        except EditRejected as exc:
            raise EngineError(
                f"edit passed on a fork but failed on the real state ({exc.reason})"
            ) from exc
        region.fitness = min(region.fitness + cfg.delta_f, 1.0)
        region.confidence = min(region.confidence + cfg.delta_g, 1.0)
        if cfg.inhibition_enabled:
            region.inhibited_until = state.tick + cfg.tau_inh
    return state


def _invocation_pairs(state, active, pressures, n_actors, cfg):
    if cfg.regions_per_tick is None:
        return None
    targets = focus_regions(state, active, pressures, cfg.regions_per_tick)
    if not targets:
        return []
    return [(targets[k % len(targets)], k) for k in range(n_actors)]


def tick(
    state: ArtifactState, actors: Sequence[Actor], domain: Domain, cfg: EngineConfig
) -> tuple[ArtifactState, TickReport]:
    if state.tick >= cfg.max_ticks:
        raise ValueError("tick budget exhausted")
    decay_phase(state, cfg)
    pressures = domain.region_pressures(state)
    before = domain.total_pressure(state)
    active = activated_regions(state, pressures, cfg)
    pairs = _invocation_pairs(state, active, pressures, len(actors), cfg)
    patches, failures = collect_proposals(state, active, actors, domain, pairs)
    validated = validate_patches(state, patches, domain, cfg)
    selected = select_patches(validated, cfg)
    apply_and_reinforce(state, selected, cfg, domain)
    after = domain.total_pressure(state)
    expected = before + sum(vp.actual_delta for vp in selected)
    if abs(after - expected) > PRESSURE_TOLERANCE * max(1.0, abs(before)):
        raise EngineError(f"applied patches were not additive: {after} != {expected}")
    report = TickReport(
        tick=state.tick,
        pressure_before=before,
        pressure_after=after,
        region_pressures=pressures,
        region_pressures_after=domain.region_pressures(state),
        active=active,
        proposals=len(patches),
        failures=len(failures),
        applied=selected,
        rejected=[vp for vp in validated if not vp.valid],
        dropped=sum(1 for vp in validated if vp.valid) - len(selected),
    )
    state.tick += 1
    return state, report


def _any_inhibited(state: ArtifactState, cfg: EngineConfig, at_tick: int) -> bool:
    return cfg.inhibition_enabled and any(is_inhibited(r, at_tick) for r in state.regions)


def run_trial(
    state: ArtifactState,
    actors: Sequence[Actor],
    domain: Domain,
    cfg: EngineConfig,
    sink: Callable[[TickReport], None] | None = None,
) -> TrialRecord:
    """Tick until solved, quiescent, or out of budget."""
    cfg.validate()
    if cfg.max_ticks < 1:
        raise ValueError("max_ticks must be >= 1")
    started = time.perf_counter()
    record = TrialRecord(pressure_history=[domain.total_pressure(state)])
    termination = "budget"
    while True:
        if domain.is_solved(state):
            termination = "solved"
            break
        if state.tick >= cfg.max_ticks:
            break
        state, report = tick(state, actors, domain, cfg)
        record.pressure_history.append(report.pressure_after)
        record.patches_proposed += report.proposals
        record.patches_applied += len(report.applied)
        record.patches_rejected += report.rejections
        if sink is not None:
            sink(report)
        # Quiet only because of inhibition is not quiescence.
        if report.quiescent and not _any_inhibited(state, cfg, report.tick):
            termination = "quiescent"
            break
    record.total_ticks = state.tick
    record.solved = domain.is_solved(state)
    record.termination = termination
    record.duration_s = time.perf_counter() - started
    return record
