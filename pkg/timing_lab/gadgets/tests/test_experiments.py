from django.test import SimpleTestCase

from gadgets.exceptions import CalibrationDegenerate, CalibrationImpossible, ConfigRejected, RobExceeded
from gadgets.experiments import (
    CoarseTimer, Prepared, calibrate_reference, coarse_read, cycles_to_microseconds, granularity_sweep,
    hit_miss_classifier, minimal_ref_len, repetition_experiment, spectre_back,
)
from gadgets.pipeline import MicroarchConfig, OpKind
from gadgets.rng import SeededRNG


class CoarseTimerTest(SimpleTestCase):
    """Coarse timer readings"""

    def test_floors_to_granularity(self):
        """Test readings are multiples of the granularity"""
        timer = CoarseTimer(100)
        self.assertEqual(coarse_read(timer, 250), 200)
        self.assertEqual(coarse_read(timer, 99), 0)
        self.assertEqual(coarse_read(timer, 300), 300)

    def test_jitter_bounds(self):
        """Test jitter adds at most the configured amount"""
        timer = CoarseTimer(100, jitter=30, seed=4)
        for _ in range(200):
            self.assertTrue(200 <= timer.read(250) <= 230)

    def test_invalid_timers(self):
        """Test zero granularity and negative intervals"""
        with self.assertRaises(ConfigRejected):
            CoarseTimer(0)
        with self.assertRaises(ValueError):
            CoarseTimer(10).read(-1)

    def test_microsecond_conversion(self):
        """Test cycle counts convert to microseconds at a given clock"""
        self.assertEqual(cycles_to_microseconds(10000, 2.0), 5.0)
        self.assertEqual(cycles_to_microseconds(3500, 3.5), 1.0)


class RepetitionTest(SimpleTestCase):
    """Flush, load, reload repetition gadget"""

    def test_without_fix_the_loop_cancels(self):
        """Test the same-address saving is paid back by the load stage"""
        for iterations in (1, 10, 50, 1000):
            report = repetition_experiment(iterations, use_racing_fix=False)
            self.assertEqual(report.delta, 196)

    def test_with_fix_the_difference_accumulates(self):
        """Test a constant-time load stage keeps the reload difference"""
        report = repetition_experiment(10, use_racing_fix=True)
        self.assertEqual(report.delta, 1960)
        rows = {row['stage']: row for row in report.rows()}
        self.assertEqual(rows['load']['delta'], 0)
        self.assertEqual(rows['reload']['delta'], 1960)
        self.assertEqual(rows['flush']['delta'], 0)

    def test_thousand_iterations(self):
        """Test the difference grows linearly over a long loop"""
        report = repetition_experiment(1000, use_racing_fix=True)
        self.assertEqual(report.delta, 196000)
        self.assertEqual(report.same.load, report.different.load)

    def test_racing_load_stage_is_constant(self):
        """Test the load stage costs the same whether the load hits or misses"""
        report = repetition_experiment(3, use_racing_fix=True)
        # cold baseline head on the first pass, cached afterwards
        self.assertEqual(report.same.load, 410 + 214 + 214)


class GranularityTest(SimpleTestCase):
    """Racing-gadget granularity"""

    def test_minimal_reference(self):
        """Test the reference must outlast the target by its extension and the branch resolve"""
        self.assertEqual(minimal_ref_len(OpKind.ADD, OpKind.ADD, 5), 8)
        self.assertEqual(minimal_ref_len(OpKind.ADD, OpKind.ADD, 1), 4)
        self.assertEqual(minimal_ref_len(OpKind.MUL, OpKind.ADD, 6), 3)

    def test_add_sweep(self):
        """Test an ADD reference tracks an ADD target one for one"""
        report = granularity_sweep(OpKind.ADD, OpKind.ADD, 40)
        self.assertEqual(len(report.rows), 40)
        self.assertIsNone(report.rob_bound)
        self.assertTrue(0.9 <= report.slope <= 1.1)
        self.assertLessEqual(report.granularity, 3)
        self.assertEqual(report.rows[-1], (40, 43))

    def test_mul_reference_on_add_targets(self):
        """Test a MUL reference steps once every three ADDs"""
        report = granularity_sweep(OpKind.MUL, OpKind.ADD, 40)
        self.assertEqual(len(report.rows), 40)
        self.assertLessEqual(report.granularity, 4)
        self.assertAlmostEqual(report.slope, 1 / 3, delta=0.05)
        self.assertEqual(report.rows[-1], (40, 15))

    def test_rob_bounds_the_reference(self):
        """Test the sweep stops where the reference would wait for ROB entries"""
        report = granularity_sweep(OpKind.ADD, OpKind.ADD, 70, MicroarchConfig(rob_size=64))
        self.assertEqual(report.max_measurable_target, 60)
        self.assertEqual(report.rob_bound, 63)
        self.assertEqual(report.summary()['rob_bound'], 63)

    def test_slow_reference_extends_range(self):
        """Test a MUL reference measures longer DIV targets on a small ROB"""
        micro = MicroarchConfig(rob_size=64)
        add_ref = granularity_sweep(OpKind.ADD, OpKind.DIV, 30, micro)
        mul_ref = granularity_sweep(OpKind.MUL, OpKind.DIV, 30, micro)
        self.assertEqual(add_ref.max_measurable_target, 6)
        self.assertEqual(mul_ref.max_measurable_target, 20)
        self.assertEqual(add_ref.max_threshold_cycles, 57)
        self.assertEqual(mul_ref.max_threshold_cycles, 183)
        self.assertGreaterEqual(mul_ref.max_measurable_target / add_ref.max_measurable_target, 2.5)
        self.assertGreaterEqual(mul_ref.max_threshold_cycles / add_ref.max_threshold_cycles, 2.5)
        self.assertIsNotNone(add_ref.rob_bound)
        self.assertIsNotNone(mul_ref.rob_bound)

    def test_rob_exceeded(self):
        """Test a target no fitting reference can outlast"""
        with self.assertRaises(RobExceeded):
            minimal_ref_len(OpKind.ADD, OpKind.DIV, 10, MicroarchConfig(rob_size=64))


class SpectreBackTest(SimpleTestCase):
    """SpectreBack bit recovery"""

    def setUp(self):
        self.secret = SeededRNG(3).bits(24)

    def test_recovers_every_bit(self):
        """Test a magnified race survives a coarse jittery timer"""
        secret = SeededRNG(3).bits(256)
        report = spectre_back(secret, 4000, CoarseTimer(10000, 2500, seed=1))
        self.assertEqual(report.accuracy, 1.0)
        self.assertTrue(report.disjoint)
        self.assertEqual(len(report.rows()), 256)

    def test_swapped_lines(self):
        """Test swapping the warm lines flips the readings but not the result"""
        plain = spectre_back(self.secret, 4000, CoarseTimer(10000))
        swapped = spectre_back(self.secret, 4000, CoarseTimer(10000), swap_lines=True)
        self.assertEqual(swapped.accuracy, 1.0)
        self.assertLess(plain.calibration_means[1], plain.calibration_means[0])
        self.assertGreater(swapped.calibration_means[1], swapped.calibration_means[0])

    def test_without_magnifier_it_guesses(self):
        """Test an unmagnified race is invisible to the coarse timer"""
        secret = SeededRNG(8).bits(200)
        report = spectre_back(secret, 0, CoarseTimer(10000, 2500, seed=2))
        self.assertLess(report.accuracy, 0.7)

    def test_degenerate_calibration(self):
        """Test identical calibration readings are reported"""
        with self.assertRaises(CalibrationDegenerate):
            spectre_back([0, 1], 0, CoarseTimer(10 ** 9))


class ClassifierTest(SimpleTestCase):
    """L1 hit versus memory classifier"""

    def test_calibration(self):
        """Test the reference length splits hit and miss latency"""
        self.assertEqual(calibrate_reference(4, 200, 3, 3), 35)
        self.assertEqual(calibrate_reference(4, 200, 3, 102), 68)
        with self.assertRaises(CalibrationImpossible):
            calibrate_reference(4, 6, 3, 3)

    def test_prepared_states(self):
        """Test both prepared states are recognised"""
        for prepared in Prepared:
            report = hit_miss_classifier(20, prepared)
            self.assertEqual(report.accuracy, 1.0)
            self.assertTrue(all(guess == prepared.value for _, guess in report.samples))

    def test_random_states(self):
        """Test seeded random ground truth"""
        report = hit_miss_classifier(60, seed=5)
        self.assertEqual(report.accuracy, 1.0)
        self.assertEqual(report.ref_len, 35)
        self.assertEqual(report.threshold_cycles, 105)
        self.assertEqual(report.overhead, 3)
        truths = {truth for truth, _ in report.samples}
        self.assertEqual(truths, {'L1Hit', 'LLCMiss'})

    def test_slow_branch_resolve(self):
        """Test the calibration follows a slower branch resolve"""
        micro = MicroarchConfig(resolve_delay=100)
        for prepared in Prepared:
            report = hit_miss_classifier(10, prepared, micro)
            self.assertEqual(report.accuracy, 1.0)
            self.assertEqual(report.overhead, 102)
            self.assertEqual(report.ref_len, 68)

    def test_load_jitter(self):
        """Test jittered loads still classify"""
        report = hit_miss_classifier(60, micro=MicroarchConfig(load_jitter=10), seed=2)
        self.assertGreaterEqual(report.accuracy, 0.99)

    def test_latencies_too_close(self):
        """Test a classifier cannot be built for nearly equal latencies"""
        with self.assertRaises(CalibrationImpossible):
            hit_miss_classifier(1, hit_latency=4, miss_latency=6)
