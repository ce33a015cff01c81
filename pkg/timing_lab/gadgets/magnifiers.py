"""Magnifier gadgets: turn a one-bit cache or timing difference into a large delay.

Every magnifier reports a ``MagnifierReading`` that compares two runs (state 0
and state 1) round by round.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from itertools import permutations
from typing import Optional, Sequence

import numpy as np

from .builder import HEAD_TAG, Order
from .cache import CacheState, PlruTree, ReplacementPolicy, plru_evict_candidate, plru_update, prime_set
from .exceptions import ConfigRejected, NoPeriodicState
from .pipeline import MicroarchConfig, OpKind, Program, ProgramBuilder, simulate

logger = logging.getLogger(__name__)

PA_PATTERN = ('B', 'C', 'E', 'C', 'D', 'C')
REORDER_PATTERN = ('C', 'E', 'C', 'D', 'C', 'B')
LINE_NAMES = ('A', 'B', 'C', 'D', 'E', 'F1', 'F2')
FILLERS = ('F1', 'F2')


@dataclass
class MagnifierReading:
    rounds: int
    round_cycles_state0: list[int]
    round_cycles_state1: list[int]
    misses_state0: list[int]
    misses_state1: list[int]
    saturation_round: Optional[int] = None
    extra: dict = field(default_factory=dict)

    @property
    def cycles_state0(self) -> int:
        return self.round_cycles_state0[-1] if self.round_cycles_state0 else 0

    @property
    def cycles_state1(self) -> int:
        return self.round_cycles_state1[-1] if self.round_cycles_state1 else 0

    @property
    def delta(self) -> int:
        return self.cycles_state1 - self.cycles_state0

    @property
    def deltas(self) -> list[int]:
        return [b - a for a, b in zip(self.round_cycles_state0, self.round_cycles_state1)]

    @property
    def total_misses_state0(self) -> int:
        return sum(self.misses_state0)

    @property
    def total_misses_state1(self) -> int:
        return sum(self.misses_state1)

    def rows(self) -> list[dict]:
        return [
            {
                'round': r,
                'cycles_state0': c0,
                'cycles_state1': c1,
                'delta': c1 - c0,
                'misses_state0': m0,
                'misses_state1': m1,
            }
            for r, (c0, c1, m0, m1) in enumerate(zip(
                self.round_cycles_state0, self.round_cycles_state1, self.misses_state0, self.misses_state1,
            ))
        ]

    def summary(self) -> dict:
        return {
            'rounds': self.rounds,
            'cycles_state0': self.cycles_state0,
            'cycles_state1': self.cycles_state1,
            'delta': self.delta,
            'misses_state0': self.total_misses_state0,
            'misses_state1': self.total_misses_state1,
            'saturation_round': self.saturation_round,
            **self.extra,
        }


def saturation_round(deltas: Sequence[int]) -> Optional[int]:
    """First round from which the delta never changes again (None when it still moves at the end)"""
    if len(deltas) < 2:
        return None
    last = len(deltas) - 1
    while last > 0 and deltas[last - 1] == deltas[-1]:
        last -= 1
    return last if last < len(deltas) - 1 else None


def _cumulative(per_round_misses: Sequence[int], accesses: int, hit: int, miss: int) -> list[int]:
    misses = np.asarray(per_round_misses, dtype=np.int64)
    cycles = misses * miss + (accesses - misses) * hit
    return np.cumsum(cycles).tolist()


# Tree-PLRU magnifiers

@dataclass(frozen=True)
class PlruMagnifierSetup:
    set_index: int
    addresses: dict
    tree: PlruTree
    placement: tuple
    pattern: tuple
    sets: int = 64

    def address_of(self, name: str) -> int:
        return self.addresses[name]

    def __str__(self):
        return f"tree={self.tree} ways={','.join(str(p) for p in self.placement)}"


def _line_addresses(set_index: int, sets: int) -> dict:
    return {name: set_index + sets * (index + 1) for index, name in enumerate(LINE_NAMES)}


def _replay(tree: PlruTree, lines: tuple, sequence: Sequence[str]):
    """Run names through one PLRU set; returns (tree, lines, miss positions, evicted names)"""
    lines = list(lines)
    misses, evicted = [], []
    for position, name in enumerate(sequence):
        if name in lines:
            way = lines.index(name)
        else:
            misses.append(position)
            way = lines.index(None) if None in lines else plru_evict_candidate(tree)
            if lines[way] is not None:
                evicted.append(lines[way])
            lines[way] = name
        tree = plru_update(tree, way)
    return tree, tuple(lines), misses, evicted


def _singleton_positions(pattern: Sequence[str]) -> list[int]:
    return [i for i, name in enumerate(pattern) if pattern.count(name) == 1]


def _placements(resident: str, pool: Sequence[str], ways: int):
    for resident_way in range(ways):
        for others in permutations(pool, ways - 1):
            placement = list(others)
            placement.insert(resident_way, resident)
            yield tuple(placement)


def find_initial_plru_state(pattern: Sequence[str] = PA_PATTERN, resident_line: str = 'A', ways: int = 4,
                            set_index: int = 0, sets: int = 64) -> PlruMagnifierSetup:
    """Smallest (tree, placement) on which the pattern cycles without evicting the resident line.

    Accepted states miss exactly at the pattern's non-repeated letters in every
    period and come back to the same tree and placement after two periods.
    """
    pattern = tuple(pattern)
    expected = _singleton_positions(pattern)
    pool = sorted({'B', 'C', 'D', 'E'} - {resident_line})
    for tree_index in range(2 ** (ways - 1)):
        tree = PlruTree.from_index(ways, tree_index)
        for placement in sorted(_placements(resident_line, pool, ways)):
            t1, l1, m1, e1 = _replay(tree, placement, pattern)
            t2, l2, m2, e2 = _replay(t1, l1, pattern)
            if resident_line in e1 + e2 or len(expected) != 3:
                continue
            if m1 != expected or m2 != expected or (t2, l2) != (tree, placement):
                continue
            logger.debug(f"periodic PLRU state for {''.join(pattern)}: tree {tree} placement {placement}")
            return PlruMagnifierSetup(set_index, _line_addresses(set_index, sets), tree, placement, pattern, sets)
    raise NoPeriodicState(pattern)


def find_reorder_setup(pattern: Sequence[str] = REORDER_PATTERN, ways: int = 4, set_index: int = 0,
                       sets: int = 64) -> PlruMagnifierSetup:
    """Initial state where inserting A before B keeps A forever and B before A evicts it.

    Letters C, D, E and two filler lines may occupy the ways; A and B are
    absent until the racing gadget inserts them.
    """
    pattern = tuple(pattern)
    expected = _singleton_positions(pattern)
    pool = sorted(set(pattern) - {'A', 'B'}) + list(FILLERS)
    for tree_index in range(2 ** (ways - 1)):
        tree = PlruTree.from_index(ways, tree_index)
        for placement in sorted(permutations(pool, ways)):
            if _reorder_candidate_ok(tree, placement, pattern, expected):
                return PlruMagnifierSetup(set_index, _line_addresses(set_index, sets), tree, placement, pattern, sets)
    raise NoPeriodicState(pattern)


def _reorder_candidate_ok(tree, placement, pattern, expected) -> bool:
    if len(expected) != 3:
        return False
    state = _replay(tree, placement, ('A', 'B'))
    first = _replay(state[0], state[1], pattern)
    second = _replay(first[0], first[1], pattern)
    third = _replay(second[0], second[1], pattern)
    evictions = state[3] + first[3] + second[3] + third[3]
    if 'A' in evictions:
        return False
    if not (first[2] == second[2] == third[2] == expected):
        return False
    if (first[0], first[1]) != (third[0], third[1]):
        return False

    state = _replay(tree, placement, ('B', 'A'))
    first = _replay(state[0], state[1], pattern)
    second = _replay(first[0], first[1], pattern)
    third = _replay(second[0], second[1], pattern)
    return 'A' not in first[1] and not second[2] and not third[2]


def _stage_cache(setup: PlruMagnifierSetup, hit: int, miss: int, omit: Sequence[str] = ()) -> CacheState:
    ways = len(setup.placement)
    cache = CacheState(sets=setup.sets, ways=ways, policy=ReplacementPolicy.PLRU, hit_latency=hit,
                       miss_latency=miss, record_events=False)
    for way, name in enumerate(setup.placement):
        cache.install(setup.set_index, way, None if name in omit else setup.address_of(name))
    cache.set_tree(setup.set_index, setup.tree)
    return cache


def _walk_pattern(cache: CacheState, setup: PlruMagnifierSetup, rounds: int, watch: Optional[int] = None):
    """Per-round miss counts for ``rounds`` repetitions of the pattern.

    Once the set returns to a state seen at an earlier period boundary the
    remaining rounds are extrapolated from the cycle.
    """
    addresses = [setup.address_of(name) for name in setup.pattern]
    per_round: list[int] = []
    seen: dict = {}
    watched_resident = True
    while len(per_round) < rounds:
        key = (cache.tree(setup.set_index), cache.lines(setup.set_index))
        if key in seen:
            cycle = per_round[seen[key]:]
            remaining = rounds - len(per_round)
            per_round.extend((cycle * (remaining // len(cycle) + 1))[:remaining])
            break
        seen[key] = len(per_round)
        misses = 0
        for address in addresses:
            if not cache.access(address).hit:
                misses += 1
            if watch is not None and not cache.contains(watch):
                watched_resident = False
        per_round.append(misses)
    return per_round, watched_resident


@dataclass
class PlruRun:
    per_round_misses: list[int]
    round_cycles: list[int]
    resident_throughout: bool

    @property
    def cycles(self) -> int:
        return self.round_cycles[-1] if self.round_cycles else 0


def plru_pa_run(present: bool, rounds: int, setup: Optional[PlruMagnifierSetup] = None,
                hit: int = 4, miss: int = 200) -> PlruRun:
    setup = setup or find_initial_plru_state(PA_PATTERN)
    cache = _stage_cache(setup, hit, miss, omit=() if present else ('A',))
    for name in setup.pattern:
        cache.access(setup.address_of(name))
    watch = setup.address_of('A') if present else None
    per_round, resident = _walk_pattern(cache, setup, rounds, watch=watch)
    return PlruRun(per_round, _cumulative(per_round, len(setup.pattern), hit, miss), resident)


def run_plru_pa_magnifier(present: bool, rounds: int, setup: Optional[PlruMagnifierSetup] = None,
                          hit: int = 4, miss: int = 200) -> MagnifierReading:
    """State 0 is the absent baseline, state 1 the requested state"""
    setup = setup or find_initial_plru_state(PA_PATTERN)
    baseline = plru_pa_run(False, rounds, setup, hit, miss)
    measured = plru_pa_run(present, rounds, setup, hit, miss)
    return MagnifierReading(
        rounds=rounds,
        round_cycles_state0=baseline.round_cycles,
        round_cycles_state1=measured.round_cycles,
        misses_state0=baseline.per_round_misses,
        misses_state1=measured.per_round_misses,
        extra={'setup': str(setup), 'resident_throughout': measured.resident_throughout},
    )


def plru_reorder_run(order, rounds: int, setup: Optional[PlruMagnifierSetup] = None,
                     hit: int = 4, miss: int = 200) -> PlruRun:
    setup = setup or find_reorder_setup(REORDER_PATTERN)
    order = Order(order)
    cache = _stage_cache(setup, hit, miss)
    first, second = ('A', 'B') if order is Order.A_FIRST else ('B', 'A')
    cache.access(setup.address_of(first))
    cache.access(setup.address_of(second))
    per_round, resident = _walk_pattern(cache, setup, rounds, watch=setup.address_of('A'))
    return PlruRun(per_round, _cumulative(per_round, len(setup.pattern), hit, miss), resident)


def run_plru_reorder_magnifier(order, rounds: int, setup: Optional[PlruMagnifierSetup] = None,
                               hit: int = 4, miss: int = 200) -> MagnifierReading:
    """State 0 is the BFirst baseline, state 1 the requested order"""
    setup = setup or find_reorder_setup(REORDER_PATTERN)
    baseline = plru_reorder_run(Order.B_FIRST, rounds, setup, hit, miss)
    measured = plru_reorder_run(order, rounds, setup, hit, miss)
    return MagnifierReading(
        rounds=rounds,
        round_cycles_state0=baseline.round_cycles,
        round_cycles_state1=measured.round_cycles,
        misses_state0=baseline.per_round_misses,
        misses_state1=measured.per_round_misses,
        extra={'setup': str(setup), 'order': Order(order).value},
    )


# Arbitrary-replacement magnifier

GATE_TAG = 'path_b.gate'


@dataclass(frozen=True)
class ArbMagnifierConfig:
    n_sets: int = 32
    seq_len: int = 6
    par_len: int = 5
    prefetch_enabled: bool = True
    prefetch_distance: int = 11
    rounds: int = 1000
    misalign_delay: Optional[int] = None
    par_offset: Optional[int] = None
    sets: int = 64
    ways: int = 8
    policy: ReplacementPolicy = ReplacementPolicy.RANDOM
    hit_latency: int = 4
    miss_latency: int = 200
    rob_size: int = 224
    seed: int = 0
    max_prime_passes: int = 64

    @property
    def pairs(self) -> int:
        return self.n_sets // 2

    @property
    def first_par_tag(self) -> int:
        return self.seq_len + 1 if self.par_offset is None else self.par_offset

    @property
    def instructions_per_round(self) -> int:
        prefetches = self.seq_len if self.prefetch_enabled else 0
        return 2 * self.seq_len + self.par_len + prefetches

    @property
    def lead_rounds(self) -> int:
        return max(1, self.rob_size // self.instructions_per_round)

    def validate(self):
        if self.seq_len > self.ways:
            raise ConfigRejected(f"seq_len {self.seq_len} exceeds {self.ways} ways")
        if self.first_par_tag <= self.seq_len:
            raise ConfigRejected("SEQ and PAR lines overlap")
        if self.n_sets < 2 or self.n_sets % 2 or self.n_sets >= self.sets:
            raise ConfigRejected(f"n_sets must be even and within 2..{self.sets - 2}")
        if self.prefetch_enabled:
            if not self.lead_rounds < self.prefetch_distance < self.pairs:
                raise ConfigRejected(
                    f"prefetch distance {self.prefetch_distance} must exceed the ROB lead "
                    f"({self.lead_rounds}) and stay below {self.pairs} set pairs"
                )


def _seq_lines(cfg: ArbMagnifierConfig, set_index: int) -> list[int]:
    return [set_index + cfg.sets * k for k in range(1, cfg.seq_len + 1)]


def _par_lines(cfg: ArbMagnifierConfig, set_index: int) -> list[int]:
    start = cfg.first_par_tag
    return [set_index + cfg.sets * k for k in range(start, start + cfg.par_len)]


def _spare_lines(cfg: ArbMagnifierConfig) -> tuple[int, int]:
    """Head and gate lines, both in the first set no round walks"""
    base = cfg.n_sets + cfg.sets * (cfg.first_par_tag + cfg.par_len)
    return base, base + cfg.sets


def build_arbitrary_program(cfg: ArbMagnifierConfig, rounds: Optional[int] = None,
                            misalign_delay: Optional[int] = 0) -> Program:
    """Path_A walks the even SEQ sets and sprays PAR into the odd set Path_B walks in the same round.

    ``misalign_delay`` holds Path_B back from the head: None waits on a cold
    gate line (one miss), a positive count waits on that many ADDs.
    """
    cfg.validate()
    head_line, gate_line = _spare_lines(cfg)
    builder = ProgramBuilder()
    head = builder.emit(OpKind.LOAD, address=head_line, tag=HEAD_TAG)
    a_prev = b_prev = head
    if misalign_delay is None:
        b_prev = builder.emit(OpKind.LOAD, (head,), address=gate_line, tag=GATE_TAG)
    elif misalign_delay > 0:
        b_prev = builder.chain(OpKind.ADD, misalign_delay, (head,), tag=GATE_TAG)
    for r in range(cfg.rounds if rounds is None else rounds):
        pair = r % cfg.pairs
        a_set, b_set = 2 * pair, 2 * pair + 1
        a_tag, b_tag = f"path_a.r{r}", f"path_b.r{r}"
        for line in _seq_lines(cfg, a_set):
            a_prev = builder.emit(OpKind.LOAD, (a_prev,), address=line, tag=a_tag)
        for line in _par_lines(cfg, b_set):
            builder.emit(OpKind.LOAD, (a_prev,), address=line, tag=a_tag)
        round_start = b_prev
        for line in _seq_lines(cfg, b_set):
            b_prev = builder.emit(OpKind.LOAD, (b_prev,), address=line, tag=b_tag)
        if cfg.prefetch_enabled:
            ahead = 2 * ((r + cfg.prefetch_distance) % cfg.pairs) + 1
            for line in _seq_lines(cfg, ahead):
                builder.emit(OpKind.PREFETCH, (round_start,), address=line, tag=f"{b_tag}.prefetch")
    return builder.build()


def primed_arbitrary_cache(cfg: ArbMagnifierConfig) -> CacheState:
    """Cache with every SEQ set of the magnifier resident, filled by repeated passes"""
    cache = CacheState(sets=cfg.sets, ways=cfg.ways, policy=cfg.policy, hit_latency=cfg.hit_latency,
                       miss_latency=cfg.miss_latency, seed=cfg.seed, record_events=False)
    for set_index in range(cfg.n_sets):
        prime_set(cache, set_index, _seq_lines(cfg, set_index), cfg.max_prime_passes)
    return cache


def trace_arbitrary_run(cfg: ArbMagnifierConfig, micro: MicroarchConfig,
                        misalign_delay: Optional[int]) -> tuple[list[int], list[int]]:
    """Per-round Path_B completion cycles and SEQ misses from one simulated run"""
    program = build_arbitrary_program(cfg, misalign_delay=misalign_delay)
    result = simulate(program, micro, primed_arbitrary_cache(cfg))
    misses = [0] * cfg.rounds
    for ins, timing in zip(program, result.timings):
        if ins.kind is not OpKind.LOAD or not ins.path_tag or not ins.path_tag.startswith('path_b.r'):
            continue
        if timing.latency > cfg.hit_latency:
            misses[_round_of(ins.path_tag)[1]] += 1
    ends = [result.path_completion[f"path_b.r{r}"] for r in range(cfg.rounds)]
    return ends, misses


def run_arbitrary_magnifier(cfg: ArbMagnifierConfig, micro: Optional[MicroarchConfig] = None) -> MagnifierReading:
    """State 0 starts both paths together, state 1 holds Path_B back by ``misalign_delay``"""
    cfg.validate()
    micro = micro or MicroarchConfig(rob_size=cfg.rob_size, l1_latency=cfg.hit_latency,
                                     dram_latency=cfg.miss_latency)
    logger.info(f"arbitrary magnifier: {cfg.rounds} rounds over {cfg.n_sets} sets, "
                f"{cfg.policy.value} replacement, prefetch={cfg.prefetch_enabled}")
    aligned, aligned_misses = trace_arbitrary_run(cfg, micro, 0)
    misaligned, misaligned_misses = trace_arbitrary_run(cfg, micro, cfg.misalign_delay)
    deltas = [b - a for a, b in zip(aligned, misaligned)]
    return MagnifierReading(
        rounds=cfg.rounds,
        round_cycles_state0=aligned,
        round_cycles_state1=misaligned,
        misses_state0=aligned_misses,
        misses_state1=misaligned_misses,
        saturation_round=saturation_round(deltas),
        extra={
            'lead_rounds': cfg.lead_rounds,
            'misalign_delay': cfg.miss_latency if cfg.misalign_delay is None else cfg.misalign_delay,
            'policy': cfg.policy.value,
        },
    )


def monte_carlo_miss_prob(seq_len: int, par_len: int, ways: int, trials: int, seed: int = 0) -> float:
    """Fraction of trials where inserting PAR lines evicts at least one primed SEQ line.

    SEQ lines are primed into an empty random-replacement set, so the first
    ``ways - seq_len`` PAR lines land in invalid ways; every later insertion
    picks a uniformly random victim.
    """
    if seq_len > ways:
        raise ConfigRejected(f"seq_len {seq_len} exceeds {ways} ways")
    if trials < 1:
        raise ConfigRejected("trials must be positive")
    extra = max(0, par_len - (ways - seq_len))
    if extra == 0 or seq_len == 0:
        return 0.0
    generator = np.random.default_rng(seed)
    victims = generator.integers(0, ways, size=(trials, extra))
    return float(np.mean((victims < seq_len).any(axis=1)))


def closed_form_miss_prob(seq_len: int, par_len: int, ways: int) -> float:
    extra = max(0, par_len - (ways - seq_len))
    return 1.0 - ((ways - seq_len) / ways) ** extra


# Arithmetic-only magnifier

@dataclass(frozen=True)
class ArithMagnifierConfig:
    k_div: int = 4
    add_buffer_len: Optional[int] = None
    rounds: int = 200
    rob_guard: bool = True
    misalign_delay: Optional[int] = None


@dataclass(frozen=True)
class ArithStages:
    k_div: int
    mul_count: int
    buffer_a: int
    buffer_b: int

    @property
    def instructions_per_round(self) -> int:
        return self.mul_count + 2 * self.k_div + self.buffer_a + self.buffer_b


def arith_stages(cfg: ArithMagnifierConfig, micro: MicroarchConfig) -> ArithStages:
    """Size the racing stages so the MUL chain and the DIV chain take the same time.

    With the ROB guard the two ADD buffers of a round hold at least a full ROB
    between Path_B's last racing DIV and Path_A's next MUL, so Path_A cannot
    allocate its next racing stage until Path_B's stage has retired. The stage
    then grows until Path_A's parallel DIVs still hold the DIV unit when Path_B
    leaves its buffer.
    """
    if micro.div_units != 1 or micro.div_recip_throughput <= 1:
        raise ConfigRejected("the arithmetic magnifier needs a single, not fully pipelined DIV unit")
    rt = micro.div_recip_throughput
    k = cfg.k_div
    guard_len = 0
    if cfg.rob_guard:
        guard_len = max(cfg.add_buffer_len or 0, -(-(micro.rob_size - 1) // 2))
        while k * (micro.div_latency + rt) <= guard_len * micro.add_latency:
            k += 1
    mul_count = round(k * micro.div_latency / micro.mul_latency)
    residual = k * micro.div_latency - mul_count * micro.mul_latency
    if abs(residual) > 1:
        raise ConfigRejected(
            f"{mul_count} MULs ({mul_count * micro.mul_latency} cycles) cannot match "
            f"{k} DIVs ({k * micro.div_latency} cycles) within one cycle"
        )
    buffer = cfg.add_buffer_len
    if buffer is None:
        buffer = k * rt + micro.div_latency
    buffer = max(buffer, guard_len)
    return ArithStages(k, mul_count, buffer + max(residual, 0), buffer + max(-residual, 0))


def build_arith_program(cfg: ArithMagnifierConfig, micro: Optional[MicroarchConfig] = None,
                        delay: int = 0, rounds: Optional[int] = None, head_address: int = 0) -> Program:
    """Per round: A's MUL chain, A's parallel DIVs, B's DIV chain, then both ADD buffers.

    ``delay`` ADDs between the head and Path_B's first racing stage misalign the paths.
    """
    micro = micro or MicroarchConfig()
    stages = arith_stages(cfg, micro)
    builder = ProgramBuilder()
    head = builder.emit(OpKind.LOAD, address=head_address, tag=HEAD_TAG)
    a_prev = b_prev = head
    if delay:
        b_prev = builder.chain(OpKind.ADD, delay, (head,), tag='path_b.r0')
    for r in range(cfg.rounds if rounds is None else rounds):
        a_tag, b_tag = f"path_a.r{r}", f"path_b.r{r}"
        mul_tail = builder.chain(OpKind.MUL, stages.mul_count, (a_prev,), tag=a_tag)
        for _ in range(stages.k_div):
            builder.emit(OpKind.DIV, (mul_tail,), tag=a_tag)
        div_tail = builder.chain(OpKind.DIV, stages.k_div, (b_prev,), tag=b_tag)
        a_prev = builder.chain(OpKind.ADD, stages.buffer_a, (mul_tail,), tag=a_tag) or mul_tail
        b_prev = builder.chain(OpKind.ADD, stages.buffer_b, (div_tail,), tag=b_tag) or div_tail
    return builder.build()


@dataclass
class ArithTrace:
    """Per-round stage boundaries read back from one simulated run"""
    round_end: list[int]
    a_stage_start: list[int]
    b_stage_end: list[int]
    contended: list[int]
    flushes: int

    @property
    def stage_order_ok(self) -> bool:
        return all(a >= b for a, b in zip(self.a_stage_start[1:], self.b_stage_end))


def _round_of(tag: Optional[str]) -> tuple[Optional[str], int]:
    if not tag or '.' not in tag:
        return None, -1
    path, label = tag.split('.', 1)
    return path, int(label[1:])


def trace_arith_run(cfg: ArithMagnifierConfig, micro: MicroarchConfig, delay: int) -> ArithTrace:
    rounds = cfg.rounds
    program = build_arith_program(cfg, micro, delay=delay)
    cache = CacheState(hit_latency=micro.l1_latency, miss_latency=micro.dram_latency, record_events=False)
    result = simulate(program, micro, cache)

    a_start = [None] * rounds
    b_end = [0] * rounds
    contended = [0] * rounds
    for ins, timing in zip(program, result.timings):
        path, r = _round_of(ins.path_tag)
        if path == 'path_a' and ins.kind is OpKind.MUL:
            if a_start[r] is None or timing.issue_cycle < a_start[r]:
                a_start[r] = timing.issue_cycle
        elif path == 'path_b' and ins.kind is OpKind.DIV:
            b_end[r] = max(b_end[r], timing.complete_cycle)
            ready = max(result.timings[dep].complete_cycle for dep in ins.deps)
            contended[r] += timing.issue_cycle > ready
    round_end = [result.path_completion[f"path_b.r{r}"] for r in range(rounds)]
    return ArithTrace(round_end, a_start, b_end, contended, len(result.flush_cycles))


def run_arith_magnifier(cfg: ArithMagnifierConfig, micro: Optional[MicroarchConfig] = None) -> MagnifierReading:
    """Simulate the aligned and the misaligned program and compare Path_B round by round"""
    micro = micro or MicroarchConfig()
    stages = arith_stages(cfg, micro)
    delay = micro.div_latency if cfg.misalign_delay is None else cfg.misalign_delay
    logger.info(f"arith magnifier: k={stages.k_div} muls={stages.mul_count} buffer={stages.buffer_b} "
                f"guard={cfg.rob_guard} delay={delay} rounds={cfg.rounds}")
    aligned = trace_arith_run(cfg, micro, 0)
    misaligned = trace_arith_run(cfg, micro, delay)
    deltas = [b - a for a, b in zip(aligned.round_end, misaligned.round_end)]
    return MagnifierReading(
        rounds=cfg.rounds,
        round_cycles_state0=aligned.round_end,
        round_cycles_state1=misaligned.round_end,
        misses_state0=aligned.contended,
        misses_state1=misaligned.contended,
        saturation_round=saturation_round(deltas),
        extra={
            'k_div': stages.k_div,
            'mul_count': stages.mul_count,
            'add_buffer': stages.buffer_b,
            'misalign_delay': delay,
            'stage_order_ok': aligned.stage_order_ok and misaligned.stage_order_ok,
            'flushes': misaligned.flushes,
        },
    )


def required_rounds(delta_per_round: float, granularity: int) -> int:
    """Rounds needed before the accumulated delta spans one timer tick"""
    if delta_per_round <= 0:
        raise ConfigRejected("the magnifier does not accumulate a delta")
    return math.ceil(granularity / delta_per_round)
