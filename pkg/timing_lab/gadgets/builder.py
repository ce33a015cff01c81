"""Path construction and the two racing gadgets.

A path is one or more independent dependency chains. Embedding a path puts a
cold head load in front of it (every chain starts from the head through a
pre-extension op) and a terminator behind it (depending on every chain tail),
so the path starts exactly when the head miss returns.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

from .exceptions import (
    CrossPathDependency, DifferentSets, EmptyPath, ProbeNeverReferenced,
    SameAddress, UnsynchronizedStart,
)
from .pipeline import (
    MicroarchConfig, OpKind, Program, ProgramBuilder, SimResult,
    simulate, simulate_transient, validate_program,
)

logger = logging.getLogger(__name__)

HEAD_TAG = 'head'
PROBE_SUFFIX = 'probe'


@dataclass(frozen=True)
class ChainSpec:
    ops: tuple[tuple[OpKind, Optional[int]], ...]

    def __post_init__(self):
        for kind, address in self.ops:
            if OpKind(kind).is_memory and address is None:
                raise ValueError(f"{kind} in a chain needs an address")

    @classmethod
    def of(cls, kind: OpKind, count: int) -> ChainSpec:
        return cls(tuple((OpKind(kind), None) for _ in range(count)))

    @classmethod
    def pointer_chase(cls, addresses: Sequence[int], tail_kind: Optional[OpKind] = None,
                      tail_len: int = 0) -> ChainSpec:
        ops = [(OpKind.LOAD, a) for a in addresses]
        if tail_kind is not None:
            ops.extend((OpKind(tail_kind), None) for _ in range(tail_len))
        return cls(tuple(ops))

    def __len__(self):
        return len(self.ops)


@dataclass(frozen=True)
class PathSpec:
    chains: tuple[ChainSpec, ...]
    tag: str = 'path_b'

    @classmethod
    def single(cls, kind: OpKind, count: int, tag: str = 'path_b') -> PathSpec:
        return cls((ChainSpec.of(kind, count),), tag)

    def validate(self):
        if not self.chains or any(len(c) == 0 for c in self.chains):
            raise EmptyPath(self.tag)


@dataclass(frozen=True)
class EmbeddedExpression:
    head_miss_address: int
    target: PathSpec
    terminator_kind: OpKind = OpKind.ADD
    terminator_address: Optional[int] = None


class Order(str, Enum):
    A_FIRST = 'AFirst'
    B_FIRST = 'BFirst'


@dataclass(frozen=True)
class RaceOutcome:
    presence: Optional[bool] = None
    order: Optional[Order] = None
    tie: bool = False
    skew: int = 0
    result: Optional[SimResult] = field(default=None, compare=False, repr=False)

    @property
    def label(self) -> str:
        if self.presence is not None:
            return 'present' if self.presence else 'absent'
        return self.order.value + (' (tie)' if self.tie else '')


def _emit_chains(builder: ProgramBuilder, path: PathSpec, head_id: int, transient: bool = False,
                 pre_extension: bool = True) -> list[int]:
    path.validate()
    tails = []
    for chain in path.chains:
        deps = (head_id,)
        if pre_extension:
            deps = (builder.emit(OpKind.ADD, deps, tag=path.tag, transient=transient),)
        for kind, address in chain.ops:
            deps = (builder.emit(kind, deps, address=address, tag=path.tag, transient=transient),)
        tails.append(deps[0])
    return tails


def _emit_embedded(builder: ProgramBuilder, e: EmbeddedExpression, head_id: Optional[int] = None):
    if head_id is None:
        head_id = builder.emit(OpKind.LOAD, address=e.head_miss_address, tag=HEAD_TAG)
    tails = _emit_chains(builder, e.target, head_id)
    terminator = builder.emit(e.terminator_kind, tails, address=e.terminator_address, tag=e.target.tag)
    return head_id, terminator


def embed_expression(e: EmbeddedExpression) -> Program:
    builder = ProgramBuilder()
    _emit_embedded(builder, e)
    program = builder.build()
    validate_program(program)
    return program


def _reach(p: Program) -> list[frozenset]:
    """Base path tags each instruction depends on transitively, itself included"""
    reach = []
    for ins in p:
        tags = set()
        if ins.path_tag and ins.path_tag != HEAD_TAG:
            tags.add(ins.path_tag.split('.')[0])
        for dep in ins.deps:
            tags |= reach[dep]
        reach.append(frozenset(tags))
    return reach


def _roots(p: Program, ins_id: int) -> set[int]:
    roots, stack, seen = set(), [ins_id], set()
    while stack:
        current = stack.pop()
        if current in seen:
            continue
        seen.add(current)
        if not p[current].deps:
            roots.add(current)
        stack.extend(p[current].deps)
    return roots


def verify_race_program(p: Program, tag_a: str, tag_b: str) -> None:
    reach = _reach(p)
    for mine, other in ((tag_a, tag_b), (tag_b, tag_a)):
        for ins in p.on_path(mine):
            for dep in ins.deps:
                if other in reach[dep]:
                    raise CrossPathDependency(ins.id, dep)

    heads = {}
    for tag in (tag_a, tag_b):
        members = p.on_path(tag)
        if not members:
            raise UnsynchronizedStart(tag)
        heads[tag] = {
            r for r in _roots(p, members[0].id)
            if p[r].kind is OpKind.LOAD and not p[r].on_path(tag_a) and not p[r].on_path(tag_b)
        }
    if not heads[tag_a]:
        raise UnsynchronizedStart(tag_a)
    if not heads[tag_a] & heads[tag_b]:
        raise UnsynchronizedStart(tag_b)


def build_transient_pa_race(path_m: EmbeddedExpression, path_b: PathSpec, probe_address: int) -> Program:
    builder = ProgramBuilder()
    head, condition = _emit_embedded(builder, path_m)
    builder.emit(OpKind.BRANCH, (condition,), tag=path_m.target.tag,
                 predicted_taken=True, squash_younger=True)
    tails = _emit_chains(builder, path_b, head, transient=True, pre_extension=False)
    builder.emit(OpKind.LOAD, tails, address=probe_address, tag=f"{path_b.tag}.{PROBE_SUFFIX}", transient=True)
    program = builder.build()
    validate_program(program)
    verify_race_program(program, path_m.target.tag, path_b.tag)
    return program


def build_reorder_race(path_m: EmbeddedExpression, path_b: PathSpec, addr_a: int, addr_b: int,
                       sets: int = 64) -> Program:
    if addr_a == addr_b:
        raise SameAddress(addr_a)
    if addr_a % sets != addr_b % sets:
        raise DifferentSets(addr_a, addr_b)
    builder = ProgramBuilder()
    head, terminator = _emit_embedded(builder, path_m)
    builder.emit(OpKind.LOAD, (terminator,), address=addr_a, tag=f"{path_m.target.tag}.{PROBE_SUFFIX}")
    tails = _emit_chains(builder, path_b, head)
    joiner = builder.emit(OpKind.ADD, tails, tag=path_b.tag)
    builder.emit(OpKind.LOAD, (joiner,), address=addr_b, tag=f"{path_b.tag}.{PROBE_SUFFIX}")
    program = builder.build()
    validate_program(program)
    verify_race_program(program, path_m.target.tag, path_b.tag)
    return program


def _probes(p: Program) -> list:
    return [ins for ins in p if ins.path_tag and ins.path_tag.endswith(f".{PROBE_SUFFIX}")]


def _start_skew(p: Program, result: SimResult) -> int:
    starts = []
    for tag in {ins.path_tag.split('.')[0] for ins in p if ins.path_tag and ins.path_tag != HEAD_TAG}:
        first = p.on_path(tag)[0]
        if result[first.id].issue_cycle is not None:
            starts.append(result[first.id].issue_cycle)
    return max(starts) - min(starts) if len(starts) == 2 else 0


def run_race(p: Program, cfg: MicroarchConfig, cache) -> RaceOutcome:
    probes = _probes(p)
    if not probes:
        raise ProbeNeverReferenced(None)
    branch = next((ins for ins in p if ins.kind is OpKind.BRANCH and ins.squash_younger), None)

    if branch is not None:
        probe = probes[-1]
        result = simulate_transient(p, branch.id, cfg, cache)
        present = cache.contains(probe.address)
        logger.debug(f"presence race: squash {result.squash_cycle}, probe issued {result.issued(probe.id)}")
        return RaceOutcome(presence=present, skew=_start_skew(p, result), result=result)

    if len(probes) != 2:
        raise ProbeNeverReferenced(probes[0].address)
    addr_a, addr_b = probes[0].address, probes[1].address
    result = simulate(p, cfg, cache)
    fills = {}
    for position, event in enumerate(result.cache_events):
        if event.address in (addr_a, addr_b) and event.address not in fills:
            fills[event.address] = (event.cycle, position)
    for address in (addr_a, addr_b):
        if address not in fills:
            raise ProbeNeverReferenced(address)
    tie = fills[addr_a][0] == fills[addr_b][0]
    order = Order.A_FIRST if fills[addr_a] < fills[addr_b] else Order.B_FIRST
    if tie:
        logger.warning(f"reorder race tied at cycle {fills[addr_a][0]}; resolved {order.value} by age")
    return RaceOutcome(order=order, tie=tie, skew=_start_skew(p, result), result=result)


def extension_overhead(cfg: MicroarchConfig, cache_factory) -> int:
    """Cycles the pre-extension and terminator add to a path on an empty pipeline"""
    builder = ProgramBuilder()
    pre = builder.emit(OpKind.ADD)
    builder.emit(OpKind.ADD, (pre,))
    return simulate(builder.build(), cfg, cache_factory()).total_cycles
