from itertools import product

from django.test import SimpleTestCase
import numpy as np

from gadgets.cache import CacheState
from gadgets.exceptions import ConfigRejected, CyclicOrForwardDep, MissingAddress, NotABranch
from gadgets.pipeline import (
    Instruction, MicroarchConfig, OpKind, Program, ProgramBuilder, simulate, simulate_transient,
)


def reference_schedule(program, cfg):
    """Cycle-by-cycle list scheduler: retire, allocate, then issue oldest-ready per unit pool"""
    n = len(program)
    alloc, issue, complete, retire = [None] * n, [None] * n, [None] * n, [None] * n
    units = {}
    for ins in program:
        units.setdefault(ins.kind.pool, [0] * cfg.unit(ins.kind).count)
    next_alloc = retire_ptr = rob = 0
    cycle = 0
    while retire_ptr < n:
        retired = 0
        while retire_ptr < n and retired < cfg.issue_width and complete[retire_ptr] is not None \
                and complete[retire_ptr] <= cycle:
            retire[retire_ptr] = cycle
            retire_ptr += 1
            rob -= 1
            retired += 1
        allocated = 0
        while allocated < cfg.issue_width and next_alloc < n and rob < cfg.rob_size:
            alloc[next_alloc] = cycle
            next_alloc += 1
            rob += 1
            allocated += 1
        for i in range(n):
            if alloc[i] is None or issue[i] is not None:
                continue
            if any(complete[d] is None or complete[d] > cycle for d in program[i].deps):
                continue
            pool = units[program[i].kind.pool]
            free = next((u for u, at in enumerate(pool) if at <= cycle), None)
            if free is None:
                continue
            spec = cfg.unit(program[i].kind)
            pool[free] = cycle + spec.recip_throughput
            issue[i] = cycle
            complete[i] = cycle + spec.latency
        cycle += 1
    return alloc, issue, complete, retire


def random_dag(rng, size):
    builder = ProgramBuilder()
    for i in range(size):
        kind = OpKind.ADD if rng.integers(0, 2) else OpKind.MUL
        deps = [d for d in range(i) if rng.integers(0, 3) == 0]
        builder.emit(kind, deps)
    return builder.build()


def dag_from_masks(size, kind_mask, dep_mask):
    """Program whose op i is a MUL when bit i of kind_mask is set and whose deps come from dep_mask"""
    builder = ProgramBuilder()
    bit = 0
    for i in range(size):
        deps = []
        for d in range(i):
            if dep_mask >> bit & 1:
                deps.append(d)
            bit += 1
        builder.emit(OpKind.MUL if kind_mask >> i & 1 else OpKind.ADD, deps)
    return builder.build()


def all_dags(size):
    edges = size * (size - 1) // 2
    for kind_mask, dep_mask in product(range(1 << size), range(1 << edges)):
        yield dag_from_masks(size, kind_mask, dep_mask)


class SchedulerOracleTest(SimpleTestCase):
    """Event-driven scheduler against a plain cycle-stepping list scheduler"""

    def setUp(self):
        self.configs = [
            MicroarchConfig(),
            MicroarchConfig(issue_width=1, rob_size=2),
            MicroarchConfig(issue_width=2, rob_size=3, mul_recip_throughput=2, add_units=1),
        ]
        self.cache = CacheState()

    def assertMatchesReference(self, program, cfg):
        result = simulate(program, cfg, self.cache)
        alloc, issue, complete, retire = reference_schedule(program, cfg)
        self.assertEqual([t.alloc_cycle for t in result.timings], alloc)
        self.assertEqual([t.issue_cycle for t in result.timings], issue)
        self.assertEqual([t.complete_cycle for t in result.timings], complete)
        self.assertEqual([t.retire_cycle for t in result.timings], retire)
        self.assertEqual(result.total_cycles, max(retire))

    def test_every_dag_up_to_five_ops(self):
        """Test every ADD/MUL program of up to five ops, all kinds and all dependency sets"""
        for size in range(1, 6):
            for program in all_dags(size):
                for cfg in self.configs:
                    self.assertMatchesReference(program, cfg)

    def test_every_six_op_dependency_shape(self):
        """Test every dependency set of six ops, kinds cycling with the shape"""
        for dep_mask in range(1 << 15):
            program = dag_from_masks(6, dep_mask % 64, dep_mask)
            for cfg in self.configs[1:]:
                self.assertMatchesReference(program, cfg)

    def test_random_dags_match_reference(self):
        """Test random six-op programs on the default machine"""
        rng = np.random.default_rng(7)
        for _ in range(150):
            program = random_dag(rng, 6)
            self.assertMatchesReference(program, self.configs[0])


class SchedulerTimingTest(SimpleTestCase):
    """Hand-computed timings on the default machine"""

    def setUp(self):
        self.cfg = MicroarchConfig()

    def _chain(self, kind, count):
        builder = ProgramBuilder()
        builder.chain(kind, count)
        return simulate(builder.build(), self.cfg, CacheState())

    def test_dependent_chains(self):
        """Test serial chains take count times latency"""
        self.assertEqual(self._chain(OpKind.ADD, 10).total_cycles, 10)
        self.assertEqual(self._chain(OpKind.MUL, 5).total_cycles, 15)
        self.assertEqual(self._chain(OpKind.DIV, 3).total_cycles, 27)

    def test_div_unit_throughput(self):
        """Test independent DIVs are spaced by the reciprocal throughput"""
        builder = ProgramBuilder()
        for _ in range(3):
            builder.emit(OpKind.DIV)
        result = simulate(builder.build(), self.cfg, CacheState())
        self.assertEqual([t.issue_cycle for t in result.timings], [0, 4, 8])
        self.assertEqual(result.total_cycles, 17)

    def test_cold_load_then_hit(self):
        """Test a load misses once and a dependent load of the same line hits"""
        builder = ProgramBuilder()
        first = builder.emit(OpKind.LOAD, address=5)
        builder.emit(OpKind.LOAD, (first,), address=5)
        result = simulate(builder.build(), self.cfg, CacheState())
        self.assertEqual(result[0].complete_cycle, 200)
        self.assertEqual(result[1].complete_cycle, 204)
        self.assertEqual(result.miss_counts, {'L1': 1})

    def test_rob_capacity_blocks_allocation(self):
        """Test a full ROB holds younger ops until the head miss retires"""
        cfg = MicroarchConfig(rob_size=8)
        builder = ProgramBuilder()
        builder.emit(OpKind.LOAD, address=0)
        for _ in range(20):
            builder.emit(OpKind.ADD)
        result = simulate(builder.build(), cfg, CacheState())
        self.assertEqual(result[7].alloc_cycle, 1)
        self.assertEqual(result[8].alloc_cycle, 200)
        self.assertLessEqual(result.max_rob_occupancy(), 8)

    def test_path_completion_by_tag(self):
        """Test completion is tracked per tag and per base tag"""
        builder = ProgramBuilder()
        builder.chain(OpKind.ADD, 3, tag='path_a.r0')
        builder.chain(OpKind.ADD, 5, tag='path_a.r1')
        result = simulate(builder.build(), self.cfg, CacheState())
        self.assertEqual(result.path_completion['path_a.r0'], 3)
        self.assertEqual(result.path_completion['path_a'], 5)


class TransientExecutionTest(SimpleTestCase):
    """Branch-shadow execution and squash"""

    def setUp(self):
        self.cfg = MicroarchConfig()

    def _shadow_program(self, shadow_adds):
        builder = ProgramBuilder()
        head = builder.emit(OpKind.LOAD, address=0)
        branch = builder.emit(OpKind.BRANCH, (head,), predicted_taken=True, squash_younger=True)
        tail = builder.chain(OpKind.ADD, shadow_adds, transient=True)
        builder.emit(OpKind.LOAD, (tail,) if tail is not None else (), address=7, transient=True)
        return builder.build(), branch

    def test_short_shadow_leaves_a_fill(self):
        """Test a probe issued before the squash stays in the cache"""
        program, branch = self._shadow_program(0)
        cache = CacheState()
        result = simulate_transient(program, branch, self.cfg, cache)
        self.assertEqual(result.squash_cycle, 201)
        self.assertTrue(cache.contains(7))
        self.assertTrue(all(result[i].squashed for i in range(2, len(program))))
        self.assertIsNone(result[2].retire_cycle)

    def test_long_shadow_never_reaches_the_probe(self):
        """Test the squash cancels a probe still waiting on its chain"""
        program, branch = self._shadow_program(250)
        cache = CacheState()
        result = simulate_transient(program, branch, self.cfg, cache)
        self.assertFalse(cache.contains(7))
        self.assertFalse(result.issued(len(program) - 1))

    def test_fill_discarded_when_configured(self):
        """Test transient loads leave no trace without persistent fills"""
        program, branch = self._shadow_program(0)
        cache = CacheState()
        simulate_transient(program, branch, MicroarchConfig(transient_fill_persists=False), cache)
        self.assertFalse(cache.contains(7))

    def test_not_a_branch(self):
        """Test a non-branch id is rejected"""
        program, _ = self._shadow_program(1)
        with self.assertRaises(NotABranch):
            simulate_transient(program, 0, self.cfg, CacheState())


class FlushAndJitterTest(SimpleTestCase):
    """Periodic pipeline flushes and load jitter"""

    def _wide_program(self, count=200):
        builder = ProgramBuilder()
        for _ in range(count):
            builder.emit(OpKind.ADD)
        return builder.build()

    def test_flush_drains_and_delays(self):
        """Test a periodic flush stalls allocation until the ROB drains"""
        program = self._wide_program()
        plain = simulate(program, MicroarchConfig(), CacheState())
        flushed = simulate(program, MicroarchConfig(flush_interval=10, flush_penalty=5), CacheState())
        self.assertEqual(flushed.flush_cycles[0], 10)
        self.assertGreater(flushed.total_cycles, plain.total_cycles)

    def test_load_jitter_is_seeded(self):
        """Test jittered latencies stay in range and repeat for a seed"""
        builder = ProgramBuilder()
        builder.emit(OpKind.LOAD, address=3)
        program = builder.build()
        cfg = MicroarchConfig(load_jitter=5, seed=11)
        first = simulate(program, cfg, CacheState())[0].latency
        second = simulate(program, cfg, CacheState())[0].latency
        self.assertEqual(first, second)
        self.assertTrue(195 <= first <= 205)


class ProgramValidationTest(SimpleTestCase):
    """Program and config checks"""

    def test_forward_dependency(self):
        """Test a dependency on a younger op is rejected"""
        program = Program((Instruction(0, OpKind.ADD, deps=(1,)), Instruction(1, OpKind.ADD)))
        with self.assertRaises(CyclicOrForwardDep):
            simulate(program, MicroarchConfig(), CacheState())

    def test_self_dependency(self):
        """Test an op cannot depend on itself"""
        program = Program((Instruction(0, OpKind.ADD, deps=(0,)),))
        with self.assertRaises(CyclicOrForwardDep):
            simulate(program, MicroarchConfig(), CacheState())

    def test_load_without_address(self):
        """Test memory ops need an address"""
        program = Program((Instruction(0, OpKind.LOAD),))
        with self.assertRaises(MissingAddress):
            simulate(program, MicroarchConfig(), CacheState())

    def test_bad_machine(self):
        """Test the ROB must hold at least one allocation group"""
        with self.assertRaises(ConfigRejected):
            MicroarchConfig(issue_width=8, rob_size=4)
        with self.assertRaises(ConfigRejected):
            MicroarchConfig(llc_latency=300)
