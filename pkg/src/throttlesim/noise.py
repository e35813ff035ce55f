"""System noise: interrupts, context switches and a PHI-issuing background app.

All generators are pure functions of their config and seed.  Events are
merged into the machine's event queue by ``install``; an interrupt stalls the
target thread (its TSC keeps counting), an app burst time-shares the target
thread with a short PHI loop that goes through the normal PMU path.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .core import SYMBOL_LEVELS, InstructionClass

DEFAULT_LATENCY = {
    "interrupt": (2_000, 10_000),
    "context_switch": (10_000, 30_000),
}

_EVENT_STREAM = 0
_APP_STREAM = 1


@dataclass(frozen=True)
class NoiseConfig:
    event_rate: float = 0.0  # events per second
    event_kind: str = "interrupt"
    latency_range: Optional[Tuple[int, int]] = None  # ns; default depends on kind
    app_phi_rate: float = 0.0  # bursts per second
    app_burst_iterations: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.event_kind not in DEFAULT_LATENCY:
            raise ValueError(f"event_kind must be one of {sorted(DEFAULT_LATENCY)}")
        if self.event_rate < 0 or self.app_phi_rate < 0:
            raise ValueError("rates must be non-negative")
        lo, hi = self.latencies
        if not 0 < lo <= hi:
            raise ValueError(f"latency range must be positive and ordered, got {(lo, hi)}")
        if self.app_burst_iterations <= 0:
            raise ValueError("app bursts need at least one iteration")

    @property
    def latencies(self) -> Tuple[int, int]:
        return self.latency_range or DEFAULT_LATENCY[self.event_kind]


@dataclass(frozen=True)
class NoiseEvent:
    time: int
    kind: str
    latency: int
    target: Tuple[int, int]


@dataclass(frozen=True)
class AppBurst:
    time: int
    cls: InstructionClass
    iterations: int
    target: Tuple[int, int]


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream])


def _poisson_times(rng: np.random.Generator, rate: float, horizon: int) -> np.ndarray:
    n = rng.poisson(rate * horizon * 1e-9)
    return np.sort(rng.integers(0, horizon, size=n))


def schedule_events(cfg: NoiseConfig, horizon: int,
                    targets: Sequence[Tuple[int, int]] = ((0, 0),)) -> List[NoiseEvent]:
    """Poisson interrupt/context-switch arrivals over ``[0, horizon)`` ns."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if cfg.event_rate == 0:
        return []
    rng = _rng(cfg.seed, _EVENT_STREAM)
    times = _poisson_times(rng, cfg.event_rate, horizon)
    lo, hi = cfg.latencies
    lats = rng.integers(lo, hi + 1, size=times.size)
    who = rng.integers(0, len(targets), size=times.size)
    return [NoiseEvent(int(t), cfg.event_kind, int(l), tuple(targets[w]))
            for t, l, w in zip(times, lats, who)]


def app_phi_program(cfg: NoiseConfig, horizon: int,
                    target: Tuple[int, int] = (0, 0)) -> List[AppBurst]:
    """PHI bursts at Poisson times, each at a uniformly random level L1..L4."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    if cfg.app_phi_rate == 0:
        return []
    rng = _rng(cfg.seed, _APP_STREAM)
    times = _poisson_times(rng, cfg.app_phi_rate, horizon)
    levels = rng.integers(0, len(SYMBOL_LEVELS), size=times.size)
    return [AppBurst(int(t), SYMBOL_LEVELS[k], cfg.app_burst_iterations, tuple(target))
            for t, k in zip(times, levels)]


def apply_event(machine, event) -> None:
    """Apply one noise event or app burst to ``machine`` at the current time."""
    core, tid = event.target
    if isinstance(event, AppBurst):
        machine.inject(core, tid, event.cls, event.iterations)
    else:
        machine.stall(core, tid, event.latency)


def install(machine, events: Iterable) -> None:
    for ev in events:
        machine.at(ev.time, apply_event, machine, ev)


def dump_events_csv(events: Iterable, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time_ns", "kind", "latency_ns", "level", "core", "thread"])
        for ev in events:
            if isinstance(ev, AppBurst):
                w.writerow([ev.time, "app_phi", "", ev.cls.label, *ev.target])
            else:
                w.writerow([ev.time, ev.kind, ev.latency, "", *ev.target])
