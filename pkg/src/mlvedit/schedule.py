from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfigError


@dataclass(frozen=True)
class TimestepSchedule:
    """Descending sampling grid ``t_T = 1.0 > ... > t_0 = 0.0``.

    ``times[0]`` is ``t_T``; step ``i`` (0-based) integrates from
    ``times[i]`` to ``times[i + 1]``.
    """

    times: tuple[float, ...]

    def __post_init__(self):
        ts = self.times
        if len(ts) < 2:
            raise InvalidConfigError("schedule needs at least two times")
        if ts[0] != 1.0 or ts[-1] != 0.0:
            raise InvalidConfigError(f"schedule endpoints must be 1.0 and 0.0, got {ts[0]}, {ts[-1]}")
        if any(b >= a for a, b in zip(ts, ts[1:])):
            raise InvalidConfigError("schedule must be strictly decreasing")

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    def pairs(self):
        """Yield ``(step_index, t_i, t_{i-1})`` in integration order."""
        for i in range(self.steps):
            yield i, self.times[i], self.times[i + 1]


def make_schedule(steps: int) -> TimestepSchedule:
    if int(steps) != steps or steps < 1:
        raise InvalidConfigError(f"timestep count must be >= 1, got {steps}")
    times = np.linspace(1.0, 0.0, int(steps) + 1)
    times[0], times[-1] = 1.0, 0.0
    return TimestepSchedule(tuple(float(t) for t in times))
