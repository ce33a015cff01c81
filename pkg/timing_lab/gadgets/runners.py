"""One runner per subcommand: resolved config in, CSV rows and a summary out.

The CLI and the API both dispatch through ``SUBCOMMANDS`` so a run started
from either produces the same rows for the same config.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

from .builder import (
    EmbeddedExpression, PathSpec, build_reorder_race, build_transient_pa_race,
    extension_overhead, run_race,
)
from .cache import ReplacementPolicy, build_cache
from .config import ResolvedConfig
from .experiments import (
    HEAD_ADDRESS, PROBE_ADDRESS, CoarseTimer, Prepared, cycles_to_microseconds, granularity_sweep,
    hit_miss_classifier, repetition_experiment, spectre_back,
)
from .magnifiers import (
    ArbMagnifierConfig, ArithMagnifierConfig, MagnifierReading, closed_form_miss_prob, monte_carlo_miss_prob,
    required_rounds, run_arbitrary_magnifier, run_arith_magnifier, run_plru_pa_magnifier,
    run_plru_reorder_magnifier,
)
from .pipeline import OpKind
from .reporting import event_rows, timing_rows
from .rng import SeededRNG

logger = logging.getLogger(__name__)


@dataclass
class RunOutput:
    rows: list[dict]
    summary: dict = field(default_factory=dict)
    # extra CSV tables, written as <subcommand>.<name>.csv
    tables: dict[str, list[dict]] = field(default_factory=dict)


def _rounds(config: ResolvedConfig, default: int) -> int:
    return default if config.params.rounds is None else config.params.rounds


def _trials(config: ResolvedConfig, default: int) -> int:
    return default if config.params.trials is None else config.params.trials


def _magnifier_output(config: ResolvedConfig, reading: MagnifierReading) -> RunOutput:
    """Reading rows plus the delta in microseconds and the rounds one timer tick needs"""
    p = config.params
    summary = reading.summary()
    summary['delta_us'] = cycles_to_microseconds(reading.delta, p.clock_ghz)
    per_round = reading.delta / reading.rounds if reading.rounds else 0
    summary['rounds_per_tick'] = required_rounds(per_round, p.timer_granularity) if per_round > 0 else None
    return RunOutput(reading.rows(), summary)


def run_plru_pa(config: ResolvedConfig) -> RunOutput:
    reading = run_plru_pa_magnifier(config.params.present, _rounds(config, 1000),
                                    hit=config.micro.l1_latency, miss=config.micro.dram_latency)
    return _magnifier_output(config, reading)


def run_plru_reorder(config: ResolvedConfig) -> RunOutput:
    reading = run_plru_reorder_magnifier(config.params.order, _rounds(config, 1000),
                                         hit=config.micro.l1_latency, miss=config.micro.dram_latency)
    return _magnifier_output(config, reading)


def run_arbitrary(config: ResolvedConfig) -> RunOutput:
    p = config.params
    cfg = ArbMagnifierConfig(
        n_sets=p.n_sets, seq_len=p.seq_len, par_len=p.par_len,
        prefetch_enabled=p.prefetch_enabled, prefetch_distance=p.prefetch_distance,
        rounds=_rounds(config, 1000), misalign_delay=p.misalign_delay,
        sets=config.cache.sets, ways=config.cache.ways, policy=ReplacementPolicy(p.arb_policy),
        hit_latency=config.micro.l1_latency, miss_latency=config.micro.dram_latency,
        rob_size=config.micro.rob_size, seed=config.seed,
    )
    reading = run_arbitrary_magnifier(cfg, config.micro)
    return _magnifier_output(config, reading)


def run_arith(config: ResolvedConfig) -> RunOutput:
    p = config.params
    cfg = ArithMagnifierConfig(
        k_div=p.k_div, add_buffer_len=p.add_buffer_len, rounds=_rounds(config, 200),
        rob_guard=p.rob_guard, misalign_delay=p.misalign_delay,
    )
    reading = run_arith_magnifier(cfg, config.micro)
    return _magnifier_output(config, reading)


def run_repetition(config: ResolvedConfig) -> RunOutput:
    report = repetition_experiment(config.params.iterations, config.params.use_racing_fix, config.micro,
                                   sets=config.cache.sets, ways=config.cache.ways)
    return RunOutput(report.rows(), {
        'iterations': report.iterations,
        'use_racing_fix': report.use_racing_fix,
        'delta': report.delta,
    })


def run_granularity(config: ResolvedConfig) -> RunOutput:
    p = config.params
    report = granularity_sweep(OpKind(p.ref_kind.upper()), OpKind(p.target_kind.upper()),
                               p.max_target_len, config.micro)
    return RunOutput(report.table(), report.summary())


def run_spectre_back(config: ResolvedConfig) -> RunOutput:
    p = config.params
    secret = SeededRNG(config.seed).bits(p.secret_bits)
    timer = CoarseTimer(p.timer_granularity, p.timer_jitter, seed=config.seed)
    report = spectre_back(secret, _rounds(config, 4000), timer, config.micro,
                          calibration_trials=p.calibration_trials)
    return RunOutput(report.rows(), {
        'trials': report.trials,
        'correct': report.correct,
        'accuracy': report.accuracy,
        'threshold': report.threshold,
        'threshold_us': cycles_to_microseconds(report.threshold, p.clock_ghz),
        'disjoint': report.disjoint,
    })


def run_classify(config: ResolvedConfig) -> RunOutput:
    prepared = Prepared(config.params.prepared) if config.params.prepared else None
    report = hit_miss_classifier(_trials(config, 1000), prepared, config.micro, seed=config.seed)
    return RunOutput(report.rows(), {
        'trials': report.trials,
        'correct': report.correct,
        'accuracy': report.accuracy,
        'ref_len': report.ref_len,
        'threshold_cycles': report.threshold_cycles,
        'overhead': report.overhead,
    })


def run_miss_prob(config: ResolvedConfig) -> RunOutput:
    p = config.params
    trials = _trials(config, 100000)
    estimate = monte_carlo_miss_prob(p.seq_len, p.par_len, config.cache.ways, trials, seed=config.seed)
    exact = closed_form_miss_prob(p.seq_len, p.par_len, config.cache.ways)
    row = {
        'seq_len': p.seq_len, 'par_len': p.par_len, 'ways': config.cache.ways, 'trials': trials,
        'probability': estimate, 'closed_form': exact,
    }
    return RunOutput([row], {'probability': estimate, 'closed_form': exact})


def run_single_race(config: ResolvedConfig) -> RunOutput:
    p = config.params
    target = EmbeddedExpression(HEAD_ADDRESS, PathSpec.single(OpKind(p.target_kind.upper()), p.target_len, 'path_m'))
    reference = PathSpec.single(OpKind(p.ref_kind.upper()), p.ref_len, 'path_b')
    if p.race_kind == 'presence':
        program = build_transient_pa_race(target, reference, PROBE_ADDRESS)
    else:
        sets = config.cache.sets
        program = build_reorder_race(target, reference, PROBE_ADDRESS, PROBE_ADDRESS + sets, sets=sets)
    outcome = run_race(program, config.micro, build_cache(config.cache))
    summary = {
        'race_kind': p.race_kind,
        'outcome': outcome.label,
        'tie': outcome.tie,
        'skew': outcome.skew,
        'extension_overhead': extension_overhead(config.micro, lambda: build_cache(config.cache)),
        'total_cycles': outcome.result.total_cycles,
    }
    return RunOutput(timing_rows(outcome.result), summary,
                     tables={'events': event_rows(outcome.result.cache_events)})


SUBCOMMANDS: dict[str, Callable[[ResolvedConfig], RunOutput]] = {
    'plru-pa': run_plru_pa,
    'plru-reorder': run_plru_reorder,
    'arbitrary': run_arbitrary,
    'arith': run_arith,
    'repetition': run_repetition,
    'granularity': run_granularity,
    'spectre-back': run_spectre_back,
    'classify': run_classify,
    'miss-prob': run_miss_prob,
    'race': run_single_race,
}


def run_subcommand(name: str, config: ResolvedConfig) -> RunOutput:
    logger.info(f"running {name} (seed {config.seed}, config {config.config_hash()[:12]})")
    output = SUBCOMMANDS[name](config)
    logger.info(f"{name} finished: {output.summary}")
    return output
