"""Wall-clock components of the pipeline and the clocks that fill them.

Two clocks exist because two requirements pull apart: honest measurement
wants a monotonic wall clock, while reproducible report files need every
rerun to produce identical bytes. ``TickClock`` advances one nanosecond
per reading, so elapsed values count timed events deterministically;
``WallClock`` measures real seconds. Both report seconds.
"""

import time
from dataclasses import dataclass, field, replace


@dataclass
class TimingLedger:
    """Per-run cost accounting.

    t_op is the brute-force cost (operator executed on every lake
    dataset); t_simop the cost of executing it on the selected subset
    only; t_vec vectorization; t_sim similarity search; t_pred surrogate
    fit plus prediction.
    """

    t_op: float = 0.0
    t_simop: float = 0.0
    t_vec: float = 0.0
    t_sim: float = 0.0
    t_pred: float = 0.0
    n_operators_amortized: int = 1

    def validate(self) -> None:
        for name in ("t_op", "t_simop", "t_vec", "t_sim", "t_pred"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be >= 0")
        if self.n_operators_amortized < 1:
            raise ValueError("n_operators_amortized must be >= 1")

    def copy(self) -> "TimingLedger":
        return replace(self)


class WallClock:
    """Monotonic wall clock, nanosecond resolution, reported as seconds."""

    deterministic = False

    def now(self) -> float:
        return time.perf_counter_ns() * 1e-9


class TickClock:
    """Deterministic counter clock: each reading advances one nanosecond.

    Elapsed times count the clock readings that happened inside the
    interval, which makes timing-derived outputs byte-identical across
    reruns while still scaling with the amount of work performed.
    """

    deterministic = True

    def __init__(self):
        self._ticks = 0

    def now(self) -> float:
        value = self._ticks * 1e-9
        self._ticks += 1
        return value


def make_clock(mode: str):
    if mode == "wall":
        return WallClock()
    if mode == "tick":
        return TickClock()
    raise ValueError(f"unknown timing mode: {mode!r}")


@dataclass
class Stopwatch:
    """Context manager reading a clock on entry and exit."""

    clock: object
    elapsed: float = field(default=0.0, init=False)

    def __enter__(self):
        self._start = self.clock.now()
        return self

    def __exit__(self, *exc):
        self.elapsed = self.clock.now() - self._start
        return False
