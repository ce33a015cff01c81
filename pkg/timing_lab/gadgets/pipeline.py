"""Dataflow model of an out-of-order backend.

Instructions allocate in program order into a bounded reorder buffer, issue out
of order once their operands are complete and a functional unit of their kind
is free, and retire in order. A BRANCH may open a transient region that runs
until the branch resolves and is then squashed.
"""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Iterator, Optional, Sequence

from .exceptions import ConfigRejected, CyclicOrForwardDep, MissingAddress, NotABranch
from .rng import SeededRNG

logger = logging.getLogger(__name__)


class OpKind(str, Enum):
    ADD = 'ADD'
    MUL = 'MUL'
    DIV = 'DIV'
    LOAD = 'LOAD'
    PREFETCH = 'PREFETCH'
    BRANCH = 'BRANCH'
    CONST = 'CONST'

    @property
    def is_memory(self) -> bool:
        return self in (OpKind.LOAD, OpKind.PREFETCH)

    @property
    def pool(self) -> str:
        """Functional-unit pool the kind issues to"""
        return 'load' if self.is_memory else self.value.lower()


@dataclass(frozen=True)
class Instruction:
    id: int
    kind: OpKind
    deps: tuple[int, ...] = ()
    address: Optional[int] = None
    path_tag: Optional[str] = None
    transient: bool = False
    predicted_taken: bool = False
    squash_younger: bool = False

    def __post_init__(self):
        if self.address is not None and not self.kind.is_memory:
            raise ValueError(f"{self.kind.value} instruction {self.id} cannot carry an address")

    def on_path(self, tag: str) -> bool:
        return self.path_tag is not None and (self.path_tag == tag or self.path_tag.startswith(f"{tag}."))


@dataclass(frozen=True)
class Program:
    instructions: tuple[Instruction, ...] = ()

    def __len__(self):
        return len(self.instructions)

    def __iter__(self) -> Iterator[Instruction]:
        return iter(self.instructions)

    def __getitem__(self, index) -> Instruction:
        return self.instructions[index]

    def on_path(self, tag: str) -> list[Instruction]:
        return [ins for ins in self.instructions if ins.on_path(tag)]

    def loads_of(self, address: int) -> list[Instruction]:
        return [ins for ins in self.instructions if ins.kind.is_memory and ins.address == address]


class ProgramBuilder:
    """Appends instructions in program order and hands out their ids"""

    def __init__(self):
        self._instructions: list[Instruction] = []

    def __len__(self):
        return len(self._instructions)

    def emit(self, kind: OpKind, deps: Sequence[int] = (), address: Optional[int] = None,
             tag: Optional[str] = None, transient: bool = False, **extra) -> int:
        ins_id = len(self._instructions)
        self._instructions.append(Instruction(
            id=ins_id, kind=OpKind(kind), deps=tuple(deps), address=address,
            path_tag=tag, transient=transient, **extra,
        ))
        return ins_id

    def chain(self, kind: OpKind, count: int, deps: Sequence[int] = (), tag: Optional[str] = None,
              transient: bool = False) -> Optional[int]:
        """Emit ``count`` serially dependent ops; returns the tail id (None when count is 0)"""
        tail = None
        for _ in range(count):
            tail = self.emit(kind, deps, tag=tag, transient=transient)
            deps = (tail,)
        return tail

    def build(self) -> Program:
        return Program(tuple(self._instructions))


@dataclass(frozen=True)
class UnitSpec:
    latency: int
    count: int
    recip_throughput: int


@dataclass(frozen=True)
class MicroarchConfig:
    issue_width: int = 4
    rob_size: int = 224
    add_latency: int = 1
    add_units: int = 4
    add_recip_throughput: int = 1
    mul_latency: int = 3
    mul_units: int = 1
    mul_recip_throughput: int = 1
    div_latency: int = 9
    div_units: int = 1
    div_recip_throughput: int = 4
    load_units: int = 2
    load_recip_throughput: int = 1
    branch_latency: int = 1
    branch_units: int = 1
    branch_recip_throughput: int = 1
    const_latency: int = 1
    const_units: int = 4
    const_recip_throughput: int = 1
    l1_latency: int = 4
    llc_latency: int = 40
    dram_latency: int = 200
    transient_fill_persists: bool = True
    resolve_delay: int = 1
    load_jitter: int = 0
    flush_interval: int = 0
    flush_penalty: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.issue_width < 1:
            raise ConfigRejected("issue_width must be at least 1")
        if self.rob_size < self.issue_width:
            raise ConfigRejected(f"rob_size {self.rob_size} is smaller than issue_width {self.issue_width}")
        for f in fields(self):
            if f.name.endswith(('_latency', '_recip_throughput', '_units')) and getattr(self, f.name) < 1:
                raise ConfigRejected(f"{f.name} must be at least 1")
        if not self.l1_latency < self.llc_latency < self.dram_latency:
            raise ConfigRejected("memory latencies must increase from L1 to LLC to DRAM")
        if min(self.resolve_delay, self.load_jitter, self.flush_interval, self.flush_penalty) < 0:
            raise ConfigRejected("delays, jitter and flush settings cannot be negative")

    def unit(self, kind: OpKind) -> UnitSpec:
        pool = OpKind(kind).pool
        latency = getattr(self, f"{pool}_latency", self.l1_latency)
        return UnitSpec(latency, getattr(self, f"{pool}_units"), getattr(self, f"{pool}_recip_throughput"))

    def latency(self, kind: OpKind) -> int:
        return self.unit(kind).latency

    @property
    def mem_latency(self) -> dict:
        return {'L1': self.l1_latency, 'LLC': self.llc_latency, 'DRAM': self.dram_latency}


@dataclass
class InstructionTiming:
    id: int
    kind: OpKind
    path_tag: Optional[str]
    alloc_cycle: Optional[int] = None
    issue_cycle: Optional[int] = None
    complete_cycle: Optional[int] = None
    retire_cycle: Optional[int] = None
    squashed: bool = False
    release_cycle: Optional[int] = None
    latency: Optional[int] = None


@dataclass
class SimResult:
    timings: list[InstructionTiming]
    total_cycles: int
    cache_events: list = field(default_factory=list)
    miss_counts: dict = field(default_factory=dict)
    path_completion: dict = field(default_factory=dict)
    squash_cycle: Optional[int] = None
    flush_cycles: list = field(default_factory=list)

    def __getitem__(self, ins_id: int) -> InstructionTiming:
        return self.timings[ins_id]

    def issued(self, ins_id: int) -> bool:
        return self.timings[ins_id].issue_cycle is not None

    def max_rob_occupancy(self) -> int:
        """Peak allocated-but-unreleased entries; frees count before allocations in a cycle"""
        deltas = []
        for t in self.timings:
            if t.alloc_cycle is None:
                continue
            deltas.append((t.alloc_cycle, 1))
            if t.release_cycle is not None:
                deltas.append((t.release_cycle, -1))
        occupancy = peak = 0
        for _, step in sorted(deltas):
            occupancy += step
            peak = max(peak, occupancy)
        return peak


def validate_program(p: Program) -> None:
    for index, ins in enumerate(p):
        if ins.id != index:
            raise CyclicOrForwardDep(ins.id)
        for dep in ins.deps:
            if not 0 <= dep < ins.id:
                raise CyclicOrForwardDep(ins.id)
        if ins.kind.is_memory and ins.address is None:
            raise MissingAddress(ins.id)


def transient_region(p: Program, branch_id: int) -> range:
    """Contiguous transient instructions directly younger than the branch"""
    end = branch_id + 1
    while end < len(p) and p[end].transient:
        end += 1
    return range(branch_id + 1, end)


class _Scheduler:
    def __init__(self, program: Program, cfg: MicroarchConfig, cache, branch_id: Optional[int] = None):
        self.p = program
        self.cfg = cfg
        self.cache = cache
        self.n = len(program)
        self.rng = SeededRNG(cfg.seed)
        self.timings = [InstructionTiming(ins.id, ins.kind, ins.path_tag) for ins in program]
        self.dependents: list[list[int]] = [[] for _ in range(self.n)]
        self.pending = [len(set(ins.deps)) for ins in program]
        for ins in program:
            for dep in set(ins.deps):
                self.dependents[dep].append(ins.id)
        self.ready_time = [0] * self.n

        self.units = {}
        for ins in program:
            pool = ins.kind.pool
            if pool not in self.units:
                self.units[pool] = [0] * self.cfg.unit(ins.kind).count
        self.ready: dict[str, list[int]] = {pool: [] for pool in self.units}
        self.waiting: list[tuple[int, int]] = []

        self.branch_id = branch_id
        self.region = transient_region(program, branch_id) if branch_id is not None else range(0)
        self.squash_cycle: Optional[int] = None
        self.squashed_done = branch_id is None

        self.next_alloc = 0
        self.retire_ptr = 0
        self.rob_count = 0
        self.draining = False
        self.resume_at = 0
        self.next_flush = cfg.flush_interval if cfg.flush_interval else None
        self.flush_cycles: list[int] = []

    def _in_region(self, ins_id: int) -> bool:
        return ins_id in self.region

    def _make_ready(self, ins_id: int):
        heapq.heappush(self.waiting, (self.ready_time[ins_id], ins_id))

    def _note_branch_condition(self):
        if self.branch_id is None or self.squash_cycle is not None:
            return
        if self.pending[self.branch_id] == 0:
            self.squash_cycle = self.ready_time[self.branch_id] + self.cfg.resolve_delay

    def _squash(self, cycle: int):
        for ins_id in self.region:
            timing = self.timings[ins_id]
            timing.squashed = True
            if timing.alloc_cycle is not None:
                timing.release_cycle = cycle
                self.rob_count -= 1
        self.squashed_done = True
        if self.next_alloc < self.region.stop:
            self.next_alloc = self.region.stop
        logger.debug(f"squashed {len(self.region)} transient instructions at cycle {cycle}")

    def _retire(self, cycle: int):
        retired = 0
        while self.retire_ptr < self.n and retired < self.cfg.issue_width:
            timing = self.timings[self.retire_ptr]
            if timing.squashed:
                self.retire_ptr += 1
                continue
            if timing.complete_cycle is None or timing.complete_cycle > cycle:
                break
            if not self.squashed_done and self._in_region(self.retire_ptr):
                break
            timing.retire_cycle = cycle
            timing.release_cycle = cycle
            self.rob_count -= 1
            self.retire_ptr += 1
            retired += 1

    def _allocation_blocked(self, cycle: int) -> bool:
        if self.draining or cycle < self.resume_at:
            return True
        if not self.squashed_done and self.next_alloc >= self.region.stop and len(self.region):
            return True
        return False

    def _allocate(self, cycle: int):
        allocated = 0
        while (allocated < self.cfg.issue_width and self.next_alloc < self.n
               and self.rob_count < self.cfg.rob_size and not self._allocation_blocked(cycle)):
            ins_id = self.next_alloc
            self.next_alloc += 1
            self.timings[ins_id].alloc_cycle = cycle
            self.rob_count += 1
            allocated += 1
            if self.pending[ins_id] == 0:
                self._make_ready(ins_id)

    def _latency(self, ins: Instruction, cycle: int) -> int:
        if ins.kind is OpKind.PREFETCH:
            self.cache.access(ins.address, cycle=cycle, prefetch=True)
            return 1
        if ins.kind is OpKind.LOAD:
            if ins.transient and self.branch_id is not None and not self.cfg.transient_fill_persists:
                latency = self.cache.peek(ins.address, cycle=cycle)
            else:
                latency = self.cache.access(ins.address, cycle=cycle).latency
            if self.cfg.load_jitter:
                latency += self.rng.randint(-self.cfg.load_jitter, self.cfg.load_jitter)
            return max(1, latency)
        return self.cfg.latency(ins.kind)

    def _issue(self, cycle: int):
        while self.waiting and self.waiting[0][0] <= cycle:
            _, ins_id = heapq.heappop(self.waiting)
            heapq.heappush(self.ready[self.p[ins_id].kind.pool], ins_id)
        for pool, queue in self.ready.items():
            units = self.units[pool]
            while queue:
                ins_id = queue[0]
                if self.timings[ins_id].squashed:
                    heapq.heappop(queue)
                    continue
                free = next((u for u, at in enumerate(units) if at <= cycle), None)
                if free is None:
                    break
                heapq.heappop(queue)
                ins = self.p[ins_id]
                units[free] = cycle + self.cfg.unit(ins.kind).recip_throughput
                latency = self._latency(ins, cycle)
                timing = self.timings[ins_id]
                timing.issue_cycle = cycle
                timing.latency = latency
                timing.complete_cycle = cycle + latency
                for child in self.dependents[ins_id]:
                    self.ready_time[child] = max(self.ready_time[child], timing.complete_cycle)
                    self.pending[child] -= 1
                    if self.pending[child] == 0 and self.timings[child].alloc_cycle is not None:
                        self._make_ready(child)
                self._note_branch_condition()

    def _flush_step(self, cycle: int):
        if self.next_flush is not None and not self.draining and cycle >= self.next_flush:
            self.draining = True
            self.flush_cycles.append(cycle)
        if self.draining and self.rob_count == 0:
            self.draining = False
            self.resume_at = cycle + self.cfg.flush_penalty
            while self.next_flush <= self.resume_at:
                self.next_flush += self.cfg.flush_interval

    def _next_cycle(self, cycle: int) -> int:
        candidates = []
        if (self.next_alloc < self.n and self.rob_count < self.cfg.rob_size
                and not self._allocation_blocked(cycle)):
            candidates.append(cycle + 1)
        if cycle < self.resume_at:
            candidates.append(self.resume_at)
        if self.waiting:
            candidates.append(self.waiting[0][0])
        for pool, queue in self.ready.items():
            if queue:
                candidates.append(min(self.units[pool]))
        if self.retire_ptr < self.n:
            head = self.timings[self.retire_ptr]
            held = not self.squashed_done and self._in_region(self.retire_ptr)
            if head.complete_cycle is not None and not held:
                candidates.append(max(head.complete_cycle, cycle + 1))
            elif head.squashed:
                candidates.append(cycle + 1)
        if not self.squashed_done and self.squash_cycle is not None:
            candidates.append(self.squash_cycle)
        if self.next_flush is not None and not self.draining:
            candidates.append(self.next_flush)
        later = [c for c in candidates if c > cycle]
        if not later:
            raise RuntimeError(f"scheduler stalled at cycle {cycle} with {self.n - self.retire_ptr} unretired")
        return min(later)

    def run(self) -> SimResult:
        if self.branch_id is not None:
            self._note_branch_condition()
        cycle = 0
        while self.retire_ptr < self.n:
            if not self.squashed_done and self.squash_cycle is not None and cycle >= self.squash_cycle:
                self._squash(self.squash_cycle)
            self._retire(cycle)
            self._flush_step(cycle)
            self._allocate(cycle)
            self._issue(cycle)
            if self.retire_ptr >= self.n:
                break
            cycle = self._next_cycle(cycle)
        if not self.squashed_done and self.squash_cycle is not None:
            self._squash(self.squash_cycle)
        return self._result()

    def _result(self) -> SimResult:
        retired = [t.retire_cycle for t in self.timings if t.retire_cycle is not None]
        completion: dict[str, int] = {}
        for ins, timing in zip(self.p, self.timings):
            if ins.path_tag is None or timing.complete_cycle is None:
                continue
            for tag in {ins.path_tag, ins.path_tag.split('.')[0]}:
                completion[tag] = max(completion.get(tag, 0), timing.complete_cycle)
        return SimResult(
            timings=self.timings,
            total_cycles=max(retired, default=0),
            cache_events=list(self.cache.events),
            miss_counts=dict(self.cache.miss_counts),
            path_completion=completion,
            squash_cycle=self.squash_cycle if self.branch_id is not None else None,
            flush_cycles=self.flush_cycles,
        )


def simulate(p: Program, cfg: MicroarchConfig, cache) -> SimResult:
    validate_program(p)
    return _Scheduler(p, cfg, cache).run()


def simulate_transient(p: Program, branch_id: int, cfg: MicroarchConfig, cache) -> SimResult:
    validate_program(p)
    if not 0 <= branch_id < len(p) or p[branch_id].kind is not OpKind.BRANCH:
        raise NotABranch(branch_id)
    result = _Scheduler(p, cfg, cache, branch_id=branch_id).run()
    logger.debug(f"transient run: squash at {result.squash_cycle}, total {result.total_cycles}")
    return result
