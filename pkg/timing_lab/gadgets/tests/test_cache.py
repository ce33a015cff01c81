from itertools import chain, permutations, product

from django.test import SimpleTestCase
import numpy as np

from gadgets.cache import (
    CacheConfig, CacheHierarchy, CacheState, PlruTree, ReplacementPolicy, build_cache,
    plru_evict_candidate, plru_update, prime_set,
)
from gadgets.exceptions import PrimeFailed, WrongSet


class FourWayPlru:
    """Hand-written three-bit PLRU automaton used as an oracle"""

    def __init__(self):
        self.root = self.left = self.right = 0
        self.lines = [None] * 4

    def victim(self):
        if self.root == 0:
            return 0 if self.left == 0 else 1
        return 2 if self.right == 0 else 3

    def touch(self, way):
        if way < 2:
            self.root = 1
            self.left = 1 if way == 0 else 0
        else:
            self.root = 0
            self.right = 1 if way == 2 else 0

    def access(self, line):
        if line in self.lines:
            way = self.lines.index(line)
            self.touch(way)
            return True, None
        way = self.lines.index(None) if None in self.lines else self.victim()
        evicted = self.lines[way]
        self.lines[way] = line
        self.touch(way)
        return False, evicted


class PlruTreeTest(SimpleTestCase):
    """Tree-PLRU bit manipulation"""

    def test_update_points_away(self):
        """Test touching a way makes the victim walk elsewhere"""
        tree = PlruTree.empty(4)
        self.assertEqual(plru_evict_candidate(tree), 0)
        tree = plru_update(tree, 0)
        self.assertEqual(tree.bits, (1, 1, 0))
        self.assertEqual(plru_evict_candidate(tree), 2)

    def test_from_index(self):
        """Test tree indices spell the bits root first"""
        self.assertEqual(str(PlruTree.from_index(4, 4)), '100')
        self.assertEqual(plru_evict_candidate(PlruTree.from_index(4, 4)), 2)

    def test_rejects_bad_geometry(self):
        """Test non power-of-two trees are refused"""
        with self.assertRaises(ValueError):
            PlruTree.empty(6)
        with self.assertRaises(ValueError):
            plru_update(PlruTree.empty(4), 4)

    def test_matches_automaton_exhaustively(self):
        """Test every access sequence of length six over five lines"""
        for sequence in product(range(5), repeat=6):
            self._compare(sequence)

    def test_matches_automaton_on_every_reachable_state(self):
        """Test every state reachable from any tree and placement, so sequences of any length agree"""
        empty = (None,) * 4
        starts = [(t, lines) for t in range(8) for lines in chain([empty], permutations(range(5), 4))]
        seen = set(starts)
        frontier = list(starts)
        while frontier:
            tree_index, lines = frontier.pop()
            for line in range(5):
                cache, oracle = self._machines(tree_index, lines)
                result = cache.access(line)
                self.assertEqual((result.hit, result.evicted), oracle.access(line), (tree_index, lines, line))
                tree = cache.tree(0)
                self.assertEqual(tree.bits, (oracle.root, oracle.left, oracle.right))
                self.assertEqual(list(cache.lines(0)), oracle.lines)
                state = (int(str(tree), 2), tuple(oracle.lines))
                if state not in seen:
                    seen.add(state)
                    frontier.append(state)
        self.assertGreater(len(seen), len(starts))

    def _machines(self, tree_index, lines):
        tree = PlruTree.from_index(4, tree_index)
        cache = CacheState(sets=1, ways=4, policy=ReplacementPolicy.PLRU)
        cache.set_tree(0, tree)
        for way, line in enumerate(lines):
            cache.install(0, way, line)
        oracle = FourWayPlru()
        oracle.root, oracle.left, oracle.right = tree.bits
        oracle.lines = list(lines)
        return cache, oracle

    def _compare(self, sequence):
        cache = CacheState(sets=1, ways=4, policy=ReplacementPolicy.PLRU)
        oracle = FourWayPlru()
        for line in sequence:
            result = cache.access(line)
            hit, evicted = oracle.access(line)
            self.assertEqual((result.hit, result.evicted), (hit, evicted), sequence)
        self.assertEqual(list(cache.lines(0)), oracle.lines)


class ReplacementPolicyTest(SimpleTestCase):
    """LRU and seeded random replacement"""

    def test_lru_evicts_least_recent(self):
        """Test LRU keeps the recently touched line"""
        cache = CacheState(sets=1, ways=2, policy=ReplacementPolicy.LRU)
        for line in (0, 1, 0):
            cache.access(line)
        result = cache.access(2)
        self.assertEqual(result.evicted, 1)
        self.assertTrue(cache.contains(0))

    def test_random_is_uniform_and_seeded(self):
        """Test random victims spread evenly and repeat for a seed"""
        def victims(seed):
            cache = CacheState(sets=1, ways=4, policy=ReplacementPolicy.RANDOM, seed=seed)
            for line in range(4):
                cache.access(line)
            return [cache.access(line).victim_way for line in range(4, 4004)]

        first = victims(9)
        self.assertEqual(first, victims(9))
        counts = np.bincount(first, minlength=4)
        for count in counts:
            self.assertTrue(800 < count < 1200)

    def test_weak_fill_lands_in_lru_position(self):
        """Test a weak prefetch fill is the next victim"""
        cache = CacheState(sets=1, ways=2, policy=ReplacementPolicy.LRU, weak_fill=True)
        cache.access(0)
        cache.access(1)
        cache.access(2, prefetch=True)
        self.assertFalse(cache.contains(0))
        cache.access(3)
        self.assertFalse(cache.contains(2))
        self.assertTrue(cache.contains(1))

    def test_in_flight_fill(self):
        """Test a hit on a line still being filled waits for the fill"""
        cache = CacheState()
        cache.access(64, cycle=0)
        self.assertEqual(cache.access(64, cycle=50).latency, 150)
        self.assertEqual(cache.peek(64, cycle=150), 50)
        cache.settle()
        self.assertEqual(cache.access(64, cycle=60).latency, 4)

    def test_set_mapping(self):
        """Test addresses map by modulo and tags by quotient"""
        cache = CacheState(sets=64)
        cache.access(130)
        event = cache.events[-1]
        self.assertEqual((event.set_index, event.tag), (2, 2))


class PrimeSetTest(SimpleTestCase):
    """Priming a set"""

    def test_prime_fills_set(self):
        """Test priming leaves every line resident"""
        cache = CacheState(sets=8, ways=4, policy=ReplacementPolicy.RANDOM, seed=1)
        lines = [3 + 8 * k for k in range(4)]
        passes = prime_set(cache, 3, lines)
        self.assertGreaterEqual(passes, 1)
        self.assertTrue(all(cache.contains(line) for line in lines))

    def test_prime_rejects_foreign_line(self):
        """Test a line from another set is refused"""
        with self.assertRaises(WrongSet):
            prime_set(CacheState(sets=8, ways=4), 3, [3, 4])

    def test_prime_rejects_too_many_lines(self):
        """Test more lines than ways cannot be primed"""
        with self.assertRaises(PrimeFailed):
            prime_set(CacheState(sets=8, ways=2), 0, [0, 8, 16])


class CacheHierarchyTest(SimpleTestCase):
    """Two-level hierarchy"""

    def test_latency_by_level(self):
        """Test DRAM, then L1, then LLC after an L1 eviction"""
        cache = build_cache(CacheConfig(levels=2, sets=1, ways=1, policy=ReplacementPolicy.LRU))
        self.assertIsInstance(cache, CacheHierarchy)
        self.assertEqual(cache.access(0).latency, 200)
        self.assertEqual(cache.access(0).latency, 4)
        cache.access(1)
        result = cache.access(0)
        self.assertEqual((result.latency, result.level), (40, 'LLC'))
        self.assertEqual(cache.miss_counts, {'L1': 3, 'LLC': 2})

    def test_inclusive_back_invalidation(self):
        """Test an LLC eviction removes the line from L1 only when inclusive"""
        for inclusive, expected in ((True, False), (False, True)):
            cache = build_cache(CacheConfig(levels=2, sets=1, ways=2, llc_sets=1, llc_ways=1,
                                            policy=ReplacementPolicy.LRU, inclusive=inclusive))
            cache.access(0)
            cache.access(1)
            self.assertEqual(cache.contains(0), expected)

    def test_bad_levels(self):
        """Test only one or two levels are modelled"""
        with self.assertRaises(ValueError):
            CacheConfig(levels=3)

    def test_events_carry_access_cycle(self):
        """Test both levels log the cycle of a timed access"""
        cache = build_cache(CacheConfig(levels=2))
        cache.access(70, cycle=12)
        self.assertEqual([(e.level, e.cycle) for e in cache.events], [('L1', 12), ('LLC', 12)])

    def test_llc_hit_waits_for_fill(self):
        """Test an LLC hit on a line still arriving from DRAM waits for it"""
        cache = build_cache(CacheConfig(levels=2, sets=1, ways=1, policy=ReplacementPolicy.LRU))
        cache.access(0, cycle=0)
        cache.access(1, cycle=10)
        self.assertEqual(cache.access(0, cycle=100).latency, 100)


class InstallTest(SimpleTestCase):
    """Direct line installation"""

    def setUp(self):
        self.cache = CacheState(sets=8, ways=4)

    def test_install_places_line(self):
        """Test an installed line is resident in the chosen way"""
        self.cache.install(3, 2, 11)
        self.assertEqual(self.cache.way_of(11), 2)

    def test_install_rejects_foreign_line(self):
        """Test installing a line into the wrong set names the line and set"""
        with self.assertRaises(WrongSet) as ctx:
            self.cache.install(3, 0, 12)
        self.assertEqual((ctx.exception.address, ctx.exception.set_index), (12, 3))
        self.assertIn('set 3', str(ctx.exception))
