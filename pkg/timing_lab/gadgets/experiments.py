"""End-to-end drivers: repetition cancellation, granularity sweeps, SpectreBack and the hit/miss classifier."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .builder import (
    ChainSpec, EmbeddedExpression, PathSpec,
    build_reorder_race, build_transient_pa_race, extension_overhead, run_race,
)
from .cache import CacheConfig, CacheHierarchy, CacheState, ReplacementPolicy
from .exceptions import CalibrationDegenerate, CalibrationImpossible, ConfigRejected, RobExceeded
from .magnifiers import PlruMagnifierSetup, find_reorder_setup, plru_reorder_run
from .pipeline import MicroarchConfig, OpKind, ProgramBuilder, simulate, simulate_transient
from .rng import SeededRNG

logger = logging.getLogger(__name__)

HEAD_ADDRESS = 1000 * 64
PROBE_ADDRESS = 1001 * 64 + 5


class CoarseTimer:
    """Timer that only reports multiples of ``granularity`` plus seeded jitter"""

    def __init__(self, granularity: int = 1, jitter: int = 0, seed: int = 0):
        if granularity < 1:
            raise ConfigRejected(f"timer granularity must be at least 1, got {granularity}")
        if jitter < 0:
            raise ConfigRejected("timer jitter cannot be negative")
        self.granularity = granularity
        self.jitter = jitter
        self.seed = seed
        self.rng = SeededRNG(seed)

    def read(self, cycles: int) -> int:
        if cycles < 0:
            raise ValueError(f"cannot time a negative interval ({cycles})")
        reading = (cycles // self.granularity) * self.granularity
        if self.jitter:
            reading += self.rng.randint(0, self.jitter)
        return reading

    def __repr__(self):
        return f"CoarseTimer(granularity={self.granularity}, jitter={self.jitter}, seed={self.seed})"


def coarse_read(t: CoarseTimer, cycles: int) -> int:
    return t.read(cycles)


def cycles_to_microseconds(cycles: int, clock_ghz: float) -> float:
    return round(cycles / (clock_ghz * 1000), 3)


# Repetition gadget

@dataclass
class StageTimeStack:
    flush: int = 0
    load: int = 0
    reload: int = 0

    @property
    def total(self) -> int:
        return self.flush + self.load + self.reload

    def as_dict(self) -> dict:
        return {'flush': self.flush, 'load': self.load, 'reload': self.reload, 'total': self.total}


@dataclass
class RepetitionReport:
    iterations: int
    use_racing_fix: bool
    same: StageTimeStack
    different: StageTimeStack

    @property
    def delta(self) -> int:
        """Different-address total minus same-address total"""
        return self.different.total - self.same.total

    def rows(self) -> list[dict]:
        same, diff = self.same.as_dict(), self.different.as_dict()
        return [
            {'stage': stage, 'same': same[stage], 'different': diff[stage], 'delta': diff[stage] - same[stage]}
            for stage in ('flush', 'load', 'reload', 'total')
        ]


def _load_stage(cache: CacheState, micro: MicroarchConfig, address: int,
                baseline: Optional[EmbeddedExpression]) -> int:
    """Cycles to load ``address``; with a baseline the load runs transiently behind it"""
    if baseline is None:
        builder = ProgramBuilder()
        builder.emit(OpKind.LOAD, address=address)
        program = builder.build()
        cycles = simulate(program, micro, cache).total_cycles
    else:
        program = build_transient_pa_race(baseline, PathSpec.single(OpKind.ADD, 1), address)
        cycles = run_race(program, micro, cache).result.total_cycles
    cache.settle()
    return cycles


def _repetition_run(iterations: int, same_address: bool, use_racing_fix: bool, micro: MicroarchConfig,
                    sets: int, ways: int) -> StageTimeStack:
    cache = CacheState(sets=sets, ways=ways, policy=ReplacementPolicy.LRU, hit_latency=micro.l1_latency,
                       miss_latency=micro.dram_latency, record_events=False)
    target = sets
    other = target + 1
    eviction_set = [target + sets * (k + 2) for k in range(ways)]
    baseline = None
    if use_racing_fix:
        # long enough for a missing load to finish inside the transient window
        divs = math.ceil((micro.dram_latency + 1) / micro.div_latency)
        baseline = EmbeddedExpression(target + sets * (ways + 2) + sets // 2,
                                      PathSpec.single(OpKind.DIV, divs, 'path_m'))

    stack = StageTimeStack()
    for _ in range(iterations):
        stack.flush += sum(cache.access(line).latency for line in eviction_set)
        stack.load += _load_stage(cache, micro, target if same_address else other, baseline)
        stack.reload += cache.access(target).latency
    return stack


def repetition_experiment(iterations: int, use_racing_fix: bool, micro: Optional[MicroarchConfig] = None,
                          sets: int = 64, ways: int = 8) -> RepetitionReport:
    """Flush + load + reload loop timed for the same-address and different-address cases.

    The load stage of the same-address case is slow exactly when its reload is
    fast, so the totals cancel. With the racing fix the load stage races a DIV
    chain longer than a miss and becomes constant time.
    """
    micro = micro or MicroarchConfig()
    logger.info(f"repetition: {iterations} iterations, racing fix {'on' if use_racing_fix else 'off'}")
    same = _repetition_run(iterations, True, use_racing_fix, micro, sets, ways)
    different = _repetition_run(iterations, False, use_racing_fix, micro, sets, ways)
    return RepetitionReport(iterations, use_racing_fix, same, different)


# Granularity sweep

@dataclass
class GranularityReport:
    ref_kind: OpKind
    target_kind: OpKind
    rows: list[tuple[int, int]] = field(default_factory=list)
    rob_bound: Optional[int] = None
    slope: Optional[float] = None
    granularity: Optional[int] = None
    ref_latency: int = 1

    @property
    def max_measurable_target(self) -> int:
        return self.rows[-1][0] if self.rows else 0

    @property
    def max_threshold_cycles(self) -> int:
        return max((r for _, r in self.rows), default=0) * self.ref_latency

    def table(self) -> list[dict]:
        return [{'target_len': t, 'ref_len': r} for t, r in self.rows]

    def summary(self) -> dict:
        return {
            'ref_kind': self.ref_kind.value,
            'target_kind': self.target_kind.value,
            'slope': None if self.slope is None else round(self.slope, 4),
            'granularity': self.granularity,
            'rob_bound': self.rob_bound,
            'max_measurable_target': self.max_measurable_target,
            'max_threshold_cycles': self.max_threshold_cycles,
        }


def _reference_throttled(program, result) -> bool:
    """True when a transient op was ready before the squash but had no ROB entry yet"""
    if result.squash_cycle is None:
        return False
    for ins in program:
        if not ins.transient or not ins.deps:
            continue
        completes = [result[dep].complete_cycle for dep in ins.deps]
        if any(c is None for c in completes):
            continue
        ready = max(completes)
        if ready >= result.squash_cycle:
            continue
        alloc = result[ins.id].alloc_cycle
        if alloc is None or alloc > ready:
            return True
    return False


def _presence(ref_kind: OpKind, ref_len: int, target_kind: OpKind, target_len: int,
              micro: MicroarchConfig) -> tuple[bool, bool]:
    """Race a reference chain against the target; returns (presence, throttled)"""
    target = EmbeddedExpression(HEAD_ADDRESS, PathSpec.single(target_kind, target_len, tag='path_m'))
    reference = PathSpec.single(ref_kind, ref_len, tag='path_b')
    program = build_transient_pa_race(target, reference, PROBE_ADDRESS)
    cache = CacheState(hit_latency=micro.l1_latency, miss_latency=micro.dram_latency, record_events=False)
    outcome = run_race(program, micro, cache)
    return bool(outcome.presence), _reference_throttled(program, outcome.result)


def minimal_ref_len(ref_kind: OpKind, target_kind: OpKind, target_len: int,
                    micro: Optional[MicroarchConfig] = None) -> int:
    """Smallest reference length that is still running when the target path squashes it.

    The reference runs in the transient window behind the target, so it only
    gets the ROB entries the target leaves free. A reference that had to wait
    for an entry measured the ROB instead of the target, and raises RobExceeded.
    """
    micro = micro or MicroarchConfig()
    high = micro.rob_size
    if _presence(ref_kind, high, target_kind, target_len, micro)[0]:
        raise RobExceeded(high + 1, micro.rob_size)
    low = 1
    while low < high:
        middle = (low + high) // 2
        if _presence(ref_kind, middle, target_kind, target_len, micro)[0]:
            low = middle + 1
        else:
            high = middle
    if _presence(ref_kind, low, target_kind, target_len, micro)[1]:
        raise RobExceeded(low, micro.rob_size)
    return low


def _longest_run(values: Sequence[int]) -> int:
    best = current = 0
    previous = None
    for value in values:
        current = current + 1 if value == previous else 1
        previous = value
        best = max(best, current)
    return best


def granularity_sweep(ref_kind: OpKind, target_kind: OpKind, max_target_len: int,
                      micro: Optional[MicroarchConfig] = None) -> GranularityReport:
    micro = micro or MicroarchConfig()
    ref_kind, target_kind = OpKind(ref_kind), OpKind(target_kind)
    report = GranularityReport(ref_kind, target_kind, ref_latency=micro.latency(ref_kind))
    logger.info(f"granularity sweep: {ref_kind.value} reference, {target_kind.value} target up to {max_target_len}")
    for target_len in range(1, max_target_len + 1):
        try:
            ref_len = minimal_ref_len(ref_kind, target_kind, target_len, micro)
        except RobExceeded as exc:
            report.rob_bound = exc.ref_len
            logger.warning(f"target length {target_len}: {exc}; stopping the sweep")
            break
        logger.debug(f"target {target_len} -> reference {ref_len}")
        report.rows.append((target_len, ref_len))

    fit = [(t, r) for t, r in report.rows if t >= 10] or report.rows
    if len(fit) >= 2:
        xs, ys = zip(*fit)
        report.slope = float(np.polyfit(xs, ys, 1)[0])
    unclamped = [r for _, r in report.rows if r > 1]
    report.granularity = _longest_run(unclamped) if unclamped else None
    return report


# SpectreBack

@dataclass
class BitTrialReport:
    trials: int
    correct: int
    samples: list[tuple[int, int, int]] = field(default_factory=list)
    threshold: float = 0.0
    calibration_means: tuple[float, float] = (0.0, 0.0)

    @property
    def accuracy(self) -> float:
        return self.correct / self.trials if self.trials else 0.0

    def readings(self, bit: int) -> list[int]:
        return [reading for secret, reading, _ in self.samples if secret == bit]

    @property
    def disjoint(self) -> bool:
        zeros, ones = self.readings(0), self.readings(1)
        if not zeros or not ones:
            return True
        return max(zeros) < min(ones) or max(ones) < min(zeros)

    def rows(self) -> list[dict]:
        return [
            {'trial': i, 'secret': secret, 'reading': reading, 'decoded': decoded}
            for i, (secret, reading, decoded) in enumerate(self.samples)
        ]


@dataclass(frozen=True)
class SpectreBackLayout:
    warm_lines: tuple[int, int] = (3 + 64 * 40, 5 + 64 * 40)
    head_address: int = HEAD_ADDRESS
    race_head_address: int = HEAD_ADDRESS + 64
    chain_adds: int = 4


def _leak_and_race(bit: int, layout: SpectreBackLayout, setup: PlruMagnifierSetup,
                   micro: MicroarchConfig, rounds: int) -> int:
    cache = CacheState(hit_latency=micro.l1_latency, miss_latency=micro.dram_latency)
    builder = ProgramBuilder()
    head = builder.emit(OpKind.LOAD, address=layout.head_address, tag='head')
    branch = builder.emit(OpKind.BRANCH, (head,), predicted_taken=True, squash_younger=True)
    builder.emit(OpKind.LOAD, address=layout.warm_lines[bit], transient=True, tag='leak')
    simulate_transient(builder.build(), branch, micro, cache)
    cache.settle()

    path_m = EmbeddedExpression(
        layout.race_head_address,
        PathSpec((ChainSpec.pointer_chase([layout.warm_lines[0]], OpKind.ADD, layout.chain_adds),), 'path_m'),
    )
    path_b = PathSpec((ChainSpec.pointer_chase([layout.warm_lines[1]], OpKind.ADD, layout.chain_adds + 2),), 'path_b')
    program = build_reorder_race(path_m, path_b, setup.address_of('A'), setup.address_of('B'), sets=cache.sets)
    outcome = run_race(program, micro, cache)
    magnified = plru_reorder_run(outcome.order, rounds, setup, micro.l1_latency, micro.dram_latency)
    return outcome.result.total_cycles + magnified.cycles


def spectre_back(secret_bits: Sequence[int], magnifier_rounds: int, timer: CoarseTimer,
                 micro: Optional[MicroarchConfig] = None, calibration_trials: int = 16,
                 swap_lines: bool = False, layout: Optional[SpectreBackLayout] = None) -> BitTrialReport:
    """Leak each bit through a transient load, amplify the resulting insertion order and read it coarsely.

    A calibration run with alternating known bits sets the decision threshold
    at the midpoint of the two class means.

    ``swap_lines`` makes a secret bit of b warm line 1 - b instead of line b.
    """
    micro = micro or MicroarchConfig()
    layout = layout or SpectreBackLayout()
    setup = find_reorder_setup()

    def measure(bit: int) -> int:
        leaked = 1 - bit if swap_lines else bit
        return timer.read(_leak_and_race(leaked, layout, setup, micro, magnifier_rounds))

    calibration = {0: [], 1: []}
    for i in range(calibration_trials):
        calibration[i % 2].append(measure(i % 2))
    mean0 = float(np.mean(calibration[0])) if calibration[0] else 0.0
    mean1 = float(np.mean(calibration[1])) if calibration[1] else 0.0
    if mean0 == mean1:
        raise CalibrationDegenerate(mean0)
    threshold = (mean0 + mean1) / 2
    high_bit = 1 if mean1 > mean0 else 0
    logger.info(f"spectre-back calibrated: means {mean0:.1f}/{mean1:.1f}, threshold {threshold:.1f}")

    report = BitTrialReport(trials=len(secret_bits), correct=0, threshold=threshold,
                            calibration_means=(mean0, mean1))
    for bit in secret_bits:
        bit = int(bit)
        reading = measure(bit)
        decoded = high_bit if reading > threshold else 1 - high_bit
        report.samples.append((bit, reading, decoded))
        report.correct += decoded == bit
    logger.info(f"spectre-back: {report.correct}/{report.trials} bits recovered")
    return report


# L1-hit versus LLC-miss classifier

class Prepared(str, Enum):
    L1_HIT = 'L1Hit'
    LLC_MISS = 'LLCMiss'


@dataclass
class ClassifierReport:
    trials: int
    correct: int
    ref_len: int
    threshold_cycles: int
    overhead: int = 0
    samples: list[tuple[str, str]] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return self.correct / self.trials if self.trials else 0.0

    def rows(self) -> list[dict]:
        return [{'trial': i, 'truth': truth, 'classified': guess} for i, (truth, guess) in enumerate(self.samples)]


def calibrate_reference(hit_latency: int, miss_latency: int, ref_latency: int, overhead: int) -> int:
    """Reference length that outlasts a hit-bound target but not a miss-bound one.

    ``overhead`` is what the target path adds on top of its load: the
    extensions around it plus the time the branch takes to resolve.
    """
    low = -(-(hit_latency + overhead) // ref_latency)
    high = -(-(miss_latency + overhead) // ref_latency) - 1
    if high < 1 or low > high:
        raise CalibrationImpossible(hit_latency, miss_latency)
    midpoint = (hit_latency + miss_latency) // 2
    return min(max((midpoint + overhead) // ref_latency, low), high)


def hit_miss_classifier(trials: int, prepared: Optional[Prepared] = None,
                        micro: Optional[MicroarchConfig] = None, seed: int = 0,
                        hit_latency: Optional[int] = None, miss_latency: Optional[int] = None) -> ClassifierReport:
    """Classify a line as L1-resident or memory-resident with a MUL-reference presence race.

    The load of the line is the target path; the MUL chain runs transiently
    behind it and only reaches its marker load when the target is slow, so a
    present marker reads as LLCMiss.

    ``prepared`` fixes the ground truth for every trial; left as None, each
    trial draws it from the seeded stream.
    """
    micro = micro or MicroarchConfig()
    hit = micro.l1_latency if hit_latency is None else hit_latency
    miss = micro.dram_latency if miss_latency is None else miss_latency
    config = CacheConfig(levels=2, hit_latency=micro.l1_latency, llc_latency=micro.llc_latency,
                         miss_latency=micro.dram_latency)
    overhead = extension_overhead(micro, lambda: CacheHierarchy.from_config(config)) + micro.resolve_delay
    ref_len = calibrate_reference(hit, miss, micro.mul_latency, overhead)
    rng = SeededRNG(seed)
    marker = PROBE_ADDRESS
    line = PROBE_ADDRESS + 64 * 7

    report = ClassifierReport(trials, 0, ref_len, ref_len * micro.mul_latency, overhead)
    for trial in range(trials):
        truth = Prepared(prepared) if prepared is not None else (Prepared.L1_HIT if rng.randint(0, 1) else Prepared.LLC_MISS)
        cache = CacheHierarchy.from_config(config)
        if truth is Prepared.L1_HIT:
            cache.access(line)
        target = EmbeddedExpression(HEAD_ADDRESS, PathSpec((ChainSpec.pointer_chase([line]),), 'path_m'))
        reference = PathSpec.single(OpKind.MUL, ref_len, tag='path_b')
        program = build_transient_pa_race(target, reference, marker)
        trial_micro = micro if not micro.load_jitter else replace(micro, seed=seed + trial)
        outcome = run_race(program, trial_micro, cache)
        guess = Prepared.LLC_MISS if outcome.presence else Prepared.L1_HIT
        report.samples.append((truth.value, guess.value))
        report.correct += guess is truth
    logger.info(f"classifier: {report.correct}/{trials} correct with a {ref_len}-MUL reference, "
                f"{overhead} cycles of overhead")
    return report
