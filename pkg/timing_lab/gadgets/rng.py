"""Seeded random streams shared by the cache policies, timers and experiments."""
from __future__ import annotations

import numpy as np


class SeededRNG:
    """Thin wrapper over a numpy Generator so every draw is attributable to a seed"""

    def __init__(self, seed: int):
        self._seed = int(seed)
        self._generator = np.random.default_rng(self._seed)

    @property
    def seed(self) -> int:
        return self._seed

    @property
    def generator(self) -> np.random.Generator:
        return self._generator

    def integers(self, low: int, high: int) -> int:
        """Uniform integer in [low, high)"""
        return int(self._generator.integers(low, high))

    def randint(self, low: int, high: int) -> int:
        """Uniform integer in [low, high], inclusive like random.randint"""
        return int(self._generator.integers(low, high + 1))

    def bits(self, count: int) -> list[int]:
        return [int(b) for b in self._generator.integers(0, 2, size=count)]

    def fork(self) -> SeededRNG:
        """Child stream with a derived seed for a sub-task"""
        return SeededRNG(int(self._generator.integers(0, 2**63 - 1)))

    def __repr__(self):
        return f"SeededRNG(seed={self._seed})"
