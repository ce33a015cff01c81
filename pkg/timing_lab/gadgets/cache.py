"""Set-associative cache model with tree-PLRU, true LRU and seeded random replacement.

Addresses are line-granular integers. A line maps to set ``address % sets`` and
its tag is ``address // sets``; ways store the full line address.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .exceptions import PrimeFailed, WrongSet
from .rng import SeededRNG

logger = logging.getLogger(__name__)


class ReplacementPolicy(str, Enum):
    PLRU = 'plru'
    LRU = 'lru'
    RANDOM = 'random'


@dataclass(frozen=True)
class PlruTree:
    """Direction bits of a complete binary tree, stored in heap order.

    Node ``i`` has children ``2i+1`` and ``2i+2``; the leaves, left to right,
    are ways ``0..ways-1``. A bit of 0 points left, 1 points right.
    """
    ways: int
    bits: tuple[int, ...]

    def __post_init__(self):
        if self.ways < 1 or self.ways & (self.ways - 1):
            raise ValueError(f"PLRU needs a power-of-two way count, got {self.ways}")
        if len(self.bits) != self.ways - 1:
            raise ValueError(f"{self.ways}-way tree needs {self.ways - 1} bits, got {len(self.bits)}")

    @classmethod
    def empty(cls, ways: int) -> PlruTree:
        return cls(ways, (0,) * (ways - 1))

    @classmethod
    def from_index(cls, ways: int, index: int) -> PlruTree:
        """Tree whose bits, root first, spell ``index`` in binary (MSB = root)"""
        n = ways - 1
        return cls(ways, tuple((index >> (n - 1 - i)) & 1 for i in range(n)))

    def __str__(self):
        return ''.join(str(b) for b in self.bits)


def plru_evict_candidate(tree: PlruTree) -> int:
    node = 0
    internal = tree.ways - 1
    while node < internal:
        node = 2 * node + 1 + tree.bits[node]
    return node - internal


def plru_update(tree: PlruTree, way: int) -> PlruTree:
    """Point every node on the root-to-``way`` path away from ``way``"""
    if not 0 <= way < tree.ways:
        raise ValueError(f"way {way} outside a {tree.ways}-way tree")
    bits = list(tree.bits)
    node = way + tree.ways - 1
    while node > 0:
        parent = (node - 1) // 2
        bits[parent] = 1 if node == 2 * parent + 1 else 0
        node = parent
    return PlruTree(tree.ways, tuple(bits))


@dataclass(frozen=True)
class CacheConfig:
    sets: int = 64
    ways: int = 8
    policy: ReplacementPolicy = ReplacementPolicy.PLRU
    hit_latency: int = 4
    miss_latency: int = 200
    seed: int = 0
    levels: int = 1
    inclusive: bool = True
    llc_sets: int = 1024
    llc_ways: int = 16
    llc_latency: int = 40
    weak_fill: bool = False

    def __post_init__(self):
        if self.sets < 1 or self.ways < 1:
            raise ValueError("a cache needs at least one set and one way")
        if self.miss_latency <= self.hit_latency:
            raise ValueError("miss latency must exceed hit latency")
        if self.levels not in (1, 2):
            raise ValueError(f"levels must be 1 or 2, got {self.levels}")


@dataclass(frozen=True)
class AccessResult:
    hit: bool
    evicted: Optional[int]
    latency: int
    victim_way: Optional[int]
    level: str = 'L1'


@dataclass(frozen=True)
class CacheEvent:
    cycle: Optional[int]
    level: str
    set_index: int
    tag: int
    address: int
    hit: bool
    victim: Optional[int]


@dataclass
class _Set:
    lines: list
    tree: Optional[PlruTree] = None
    lru: list = field(default_factory=list)


class CacheState:
    """One cache level. Owns its sets, replacement metadata and event log."""

    def __init__(self, sets=64, ways=8, policy=ReplacementPolicy.PLRU, hit_latency=4,
                 miss_latency=200, seed=0, name='L1', weak_fill=False, record_events=True):
        self.sets = sets
        self.ways = ways
        self.policy = ReplacementPolicy(policy)
        self.hit_latency = hit_latency
        self.miss_latency = miss_latency
        self.name = name
        self.weak_fill = weak_fill
        self.record_events = record_events
        self.rng = SeededRNG(seed)
        self.events: list[CacheEvent] = []
        self.hits = 0
        self.misses = 0
        self._ready_at: dict[int, int] = {}
        self._sets = [self._new_set() for _ in range(sets)]

    @classmethod
    def from_config(cls, config: CacheConfig, **overrides):
        kwargs = dict(
            sets=config.sets, ways=config.ways, policy=config.policy,
            hit_latency=config.hit_latency, miss_latency=config.miss_latency,
            seed=config.seed, weak_fill=config.weak_fill,
        )
        kwargs.update(overrides)
        return cls(**kwargs)

    def _new_set(self) -> _Set:
        tree = PlruTree.empty(self.ways) if self.policy is ReplacementPolicy.PLRU else None
        return _Set(lines=[None] * self.ways, tree=tree, lru=list(range(self.ways)))

    # Inspection

    def set_index(self, address: int) -> int:
        return address % self.sets

    def lines(self, set_index: int) -> tuple:
        return tuple(self._sets[set_index].lines)

    def tree(self, set_index: int) -> Optional[PlruTree]:
        return self._sets[set_index].tree

    def contains(self, address: int) -> bool:
        return address in self._sets[self.set_index(address)].lines

    def way_of(self, address: int) -> Optional[int]:
        lines = self._sets[self.set_index(address)].lines
        return lines.index(address) if address in lines else None

    @property
    def miss_counts(self) -> dict:
        return {self.name: self.misses}

    # Direct state manipulation, used to stage magnifier setups

    def install(self, set_index: int, way: int, address: Optional[int]):
        if address is not None and self.set_index(address) != set_index:
            raise WrongSet(address, set_index)
        self._sets[set_index].lines[way] = address

    def set_tree(self, set_index: int, tree: PlruTree):
        self._sets[set_index].tree = tree

    def settle(self):
        """Forget in-flight fills; every resident line is ready from now on"""
        self._ready_at.clear()

    def invalidate(self, address: int) -> bool:
        entry = self._sets[self.set_index(address)]
        if address not in entry.lines:
            return False
        entry.lines[entry.lines.index(address)] = None
        self._ready_at.pop(address, None)
        return True

    # Replacement

    def _touch(self, entry: _Set, way: int):
        if self.policy is ReplacementPolicy.PLRU:
            entry.tree = plru_update(entry.tree, way)
        elif self.policy is ReplacementPolicy.LRU:
            entry.lru.remove(way)
            entry.lru.append(way)

    def _victim(self, entry: _Set) -> int:
        if self.policy is ReplacementPolicy.PLRU:
            return plru_evict_candidate(entry.tree)
        if self.policy is ReplacementPolicy.LRU:
            return entry.lru[0]
        return self.rng.integers(0, self.ways)

    def _fill_way(self, entry: _Set) -> int:
        for way, line in enumerate(entry.lines):
            if line is None:
                return way
        return self._victim(entry)

    def _log(self, cycle, address, hit, victim):
        if self.record_events:
            self.events.append(CacheEvent(
                cycle=cycle, level=self.name, set_index=self.set_index(address),
                tag=address // self.sets, address=address, hit=hit, victim=victim,
            ))

    def access(self, address: int, cycle: Optional[int] = None, prefetch: bool = False) -> AccessResult:
        """Demand access (or prefetch). ``cycle`` enables in-flight fill tracking."""
        entry = self._sets[self.set_index(address)]
        weak = prefetch and self.weak_fill
        if address in entry.lines:
            way = entry.lines.index(address)
            if not weak:
                self._touch(entry, way)
            latency = self.hit_latency
            if cycle is not None and address in self._ready_at:
                latency = max(latency, self._ready_at[address] - cycle)
            self.hits += 1
            self._log(cycle, address, True, None)
            return AccessResult(hit=True, evicted=None, latency=latency, victim_way=way, level=self.name)

        way = self._fill_way(entry)
        evicted = entry.lines[way]
        if evicted is not None:
            self._ready_at.pop(evicted, None)
        entry.lines[way] = address
        if weak:
            if self.policy is ReplacementPolicy.LRU:
                entry.lru.remove(way)
                entry.lru.insert(0, way)
        else:
            self._touch(entry, way)
        if cycle is not None:
            self._ready_at[address] = cycle + self.miss_latency
        self.misses += 1
        self._log(cycle, address, False, evicted)
        return AccessResult(hit=False, evicted=evicted, latency=self.miss_latency, victim_way=way, level=self.name)

    def peek(self, address: int, cycle: Optional[int] = None) -> int:
        """Latency an access would see, without changing any state"""
        if not self.contains(address):
            return self.miss_latency
        if cycle is not None and address in self._ready_at:
            return max(self.hit_latency, self._ready_at[address] - cycle)
        return self.hit_latency


class CacheHierarchy:
    """L1 backed by a last-level cache, optionally inclusive."""

    def __init__(self, l1: CacheState, llc: CacheState, dram_latency=200, inclusive=True):
        self.l1 = l1
        self.llc = llc
        self.dram_latency = dram_latency
        self.inclusive = inclusive
        self._ready_at: dict[int, int] = {}

    @classmethod
    def from_config(cls, config: CacheConfig):
        l1 = CacheState(config.sets, config.ways, config.policy, config.hit_latency,
                        config.llc_latency, seed=config.seed, name='L1', weak_fill=config.weak_fill)
        llc = CacheState(config.llc_sets, config.llc_ways, config.policy, config.llc_latency,
                         config.miss_latency, seed=config.seed + 1, name='LLC')
        return cls(l1, llc, dram_latency=config.miss_latency, inclusive=config.inclusive)

    @property
    def events(self) -> list[CacheEvent]:
        merged = self.l1.events + self.llc.events
        return sorted(merged, key=lambda e: (e.cycle if e.cycle is not None else -1))

    @property
    def miss_counts(self) -> dict:
        return {'L1': self.l1.misses, 'LLC': self.llc.misses}

    def contains(self, address: int) -> bool:
        return self.l1.contains(address)

    def access(self, address: int, cycle: Optional[int] = None, prefetch: bool = False) -> AccessResult:
        first = self.l1.access(address, cycle=cycle, prefetch=prefetch)
        if first.hit:
            latency = self.l1.hit_latency
            level = 'L1'
        else:
            second = self.llc.access(address, cycle=cycle)
            latency = second.latency
            level = 'LLC' if second.hit else 'DRAM'
            if self.inclusive and second.evicted is not None and self.l1.invalidate(second.evicted):
                logger.debug(f"back-invalidated line {second.evicted} from L1")
            if cycle is not None:
                self._ready_at[address] = cycle + latency
        if first.hit and cycle is not None and address in self._ready_at:
            latency = max(latency, self._ready_at[address] - cycle)
        return AccessResult(hit=first.hit, evicted=first.evicted, latency=latency,
                            victim_way=first.victim_way, level=level)

    def peek(self, address: int, cycle: Optional[int] = None) -> int:
        if self.l1.contains(address):
            if cycle is not None and address in self._ready_at:
                return max(self.l1.hit_latency, self._ready_at[address] - cycle)
            return self.l1.hit_latency
        if self.llc.contains(address):
            return self.llc.hit_latency
        return self.dram_latency


def build_cache(config: CacheConfig):
    if config.levels == 2:
        return CacheHierarchy.from_config(config)
    return CacheState.from_config(config)


def access(state: CacheState, address: int) -> AccessResult:
    return state.access(address)


def two_level_access(state: CacheHierarchy, address: int) -> AccessResult:
    return state.access(address)


def prime_set(state: CacheState, set_index: int, lines: Sequence[int], max_passes: int = 64) -> int:
    """Access ``lines`` in order until all are resident. Returns the pass count."""
    for line in lines:
        if state.set_index(line) != set_index:
            raise WrongSet(line, set_index)
    if len(set(lines)) > state.ways:
        raise PrimeFailed(set_index, 0)
    for passes in range(1, max_passes + 1):
        for line in lines:
            state.access(line)
        if all(state.contains(line) for line in lines):
            return passes
    logger.warning(f"priming set {set_index} gave up after {max_passes} passes")
    raise PrimeFailed(set_index, max_passes)
