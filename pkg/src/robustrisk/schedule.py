"""Step-size schedules for the full-batch gradient descent paths."""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Schedule:
    """Learning rate with optional linear warmup and periodic doubling.

    ``lr(k) = base * min(1, (k+1)/warmup) * 2**min(k // double_every, doublings)``
    where the doubling count stops growing at step ``double_until``.
    """

    base: float
    warmup: int = 0
    double_every: int = 0
    double_until: int = 0

    def __call__(self, step):
        lr = self.base
        if self.warmup > 0 and step < self.warmup:
            lr *= (step + 1) / self.warmup
        if self.double_every > 0:
            lr *= 2.0 ** (min(step, self.double_until) // self.double_every)
        return lr


def snapshot_steps(steps, count=40):
    """Roughly log-spaced snapshot iterations in ``[0, steps]`` including both ends."""
    if steps < 1:
        raise ValueError("steps must be positive")
    grid = np.unique(np.round(np.geomspace(1, steps, max(count - 1, 1))).astype(int))
    return [0] + [int(s) for s in grid if 0 < s <= steps]
