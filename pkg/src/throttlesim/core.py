"""Physical core model: SMT threads, IDQ throttle gate, AVX power gates, TSC.

Two views of the same pipeline live here.  ``CoreState.step_cycle`` is the
literal cycle-by-cycle model.  ``deliveries`` / ``finish_cycle`` are the closed
forms the event-driven machine uses to jump over long stretches; the test
suite checks one against the other.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

#: One of every THROTTLE_WINDOW cycles delivers uops while the gate is active.
THROTTLE_WINDOW = 4


class Unit(enum.Enum):
    NONE = "none"
    AVX256 = "avx256"
    AVX512 = "avx512"


class InstructionClass(enum.Enum):
    """Instruction classes in increasing capacitance order.

    ``value`` is the order index; ``base_ipc`` and ``unit`` are fixed
    properties of the class, while the capacitance weight is machine data
    (see ``DEFAULT_CDYN`` and the harness calibration).
    """

    SCALAR_64B = 0
    L128B_LIGHT = 1
    L128B_HEAVY = 2
    L256B_LIGHT = 3
    L256B_HEAVY = 4
    L512B_LIGHT = 5
    L512B_HEAVY = 6

    @property
    def label(self) -> str:
        return _LABELS[self]

    @property
    def is_phi(self) -> bool:
        return self is not InstructionClass.SCALAR_64B

    @property
    def heavy(self) -> bool:
        return self.name.endswith("HEAVY")

    @property
    def base_ipc(self) -> int:
        return 2 if self is InstructionClass.SCALAR_64B else 1

    @property
    def unit(self) -> Unit:
        if self in (InstructionClass.L256B_LIGHT, InstructionClass.L256B_HEAVY):
            return Unit.AVX256
        if self in (InstructionClass.L512B_LIGHT, InstructionClass.L512B_HEAVY):
            return Unit.AVX512
        return Unit.NONE

    @classmethod
    def from_label(cls, label: str) -> "InstructionClass":
        for k, v in _LABELS.items():
            if v == label or k.name == label:
                return k
        raise KeyError(label)

    def __lt__(self, other):
        return self.value < other.value

    def __le__(self, other):
        return self.value <= other.value

    def __gt__(self, other):
        return self.value > other.value

    def __ge__(self, other):
        return self.value >= other.value


_LABELS = {
    InstructionClass.SCALAR_64B: "64b",
    InstructionClass.L128B_LIGHT: "128b_Light",
    InstructionClass.L128B_HEAVY: "128b_Heavy",
    InstructionClass.L256B_LIGHT: "256b_Light",
    InstructionClass.L256B_HEAVY: "256b_Heavy",
    InstructionClass.L512B_LIGHT: "512b_Light",
    InstructionClass.L512B_HEAVY: "512b_Heavy",
}

CLASS_ORDER: Tuple[InstructionClass, ...] = tuple(InstructionClass)
BASELINE = InstructionClass.SCALAR_64B

#: Default weights as produced by the bundled calibration (scalar == 1.0).
DEFAULT_CDYN: Dict[InstructionClass, float] = {
    InstructionClass.SCALAR_64B: 1.0,
    InstructionClass.L128B_LIGHT: 1.406,
    InstructionClass.L128B_HEAVY: 1.675,
    InstructionClass.L256B_LIGHT: 2.687,
    InstructionClass.L256B_HEAVY: 3.697,
    InstructionClass.L512B_LIGHT: 4.371,
    InstructionClass.L512B_HEAVY: 6.393,
}

#: The four intensity levels L1..L4 used to carry 2-bit symbols.
SYMBOL_LEVELS: Tuple[InstructionClass, ...] = (
    InstructionClass.L128B_HEAVY,
    InstructionClass.L256B_LIGHT,
    InstructionClass.L256B_HEAVY,
    InstructionClass.L512B_HEAVY,
)


def check_cdyn_table(table: Dict[InstructionClass, float]) -> None:
    vals = [table[c] for c in CLASS_ORDER]
    if any(b <= a for a, b in zip(vals, vals[1:])):
        raise ValueError(f"cdyn weights must be strictly increasing in class order: {vals}")


class ThrottleMode(enum.Enum):
    ENTIRE_CORE = "entire_core"
    PER_THREAD_IMPROVED = "per_thread_improved"


@dataclass
class ThrottleGate:
    active: bool = False
    mode: ThrottleMode = ThrottleMode.ENTIRE_CORE
    # applied at the next cycle boundary by step_cycle
    requested: Optional[bool] = None

    def gates(self, cls: Optional[InstructionClass]) -> bool:
        """Whether a thread currently executing ``cls`` is blocked by the gate."""
        if not self.active:
            return False
        if self.mode is ThrottleMode.ENTIRE_CORE:
            return True
        return cls is not None and cls.is_phi


@dataclass
class PowerGate:
    unit: Unit
    wake_latency: int = 8  # ns
    close_after: int = 650_000  # ns without use
    open: bool = False
    last_use: int = -(10 ** 18)

    def is_open(self, now: int) -> bool:
        return self.open and now - self.last_use < self.close_after


@dataclass
class CoreClock:
    freq_mhz: int

    @property
    def freq(self) -> float:
        return self.freq_mhz / 1000.0

    @property
    def cycle_time(self) -> float:
        return 1000.0 / self.freq_mhz

    def cycles_in(self, ns: int) -> int:
        return math.ceil(ns * self.freq_mhz / 1000)


@dataclass
class Phase:
    cls: InstructionClass
    iterations: int
    measure_tp: bool = False


@dataclass
class HardwareThread:
    id: int
    program: List[Phase] = field(default_factory=list)
    retired_uops: int = 0
    tsc: int = 0
    phase_idx: int = 0
    phase_left: int = -1
    stall_until: int = 0  # cycle

    @property
    def current(self) -> Optional[Phase]:
        if self.phase_idx < len(self.program):
            return self.program[self.phase_idx]
        return None


def read_tsc(thread: HardwareThread) -> int:
    return thread.tsc


def deliveries(c0: int, c1: int, gated: bool) -> int:
    """Number of delivery cycles in ``[c0, c1)``."""
    if c1 <= c0:
        return 0
    if not gated:
        return c1 - c0
    w = THROTTLE_WINDOW
    return -(-c1 // w) - (-(-c0 // w))


def finish_cycle(c0: int, uops: int, ipc: int, gated: bool) -> int:
    """Cycle boundary at which ``uops`` more uops have retired, starting at ``c0``."""
    if uops <= 0:
        return c0
    k = -(-uops // ipc)
    if not gated:
        return c0 + k
    w = THROTTLE_WINDOW
    first = -(-c0 // w) * w
    return first + w * (k - 1) + 1


@dataclass
class CoreState:
    """Cycle-level core.  ``cycle`` is the absolute cycle index of the next step."""

    id: int
    clock: CoreClock
    threads: List[HardwareThread] = field(
        default_factory=lambda: [HardwareThread(0), HardwareThread(1)])
    gate: ThrottleGate = field(default_factory=ThrottleGate)
    power_gates: Dict[Unit, PowerGate] = field(default_factory=lambda: {
        Unit.AVX256: PowerGate(Unit.AVX256), Unit.AVX512: PowerGate(Unit.AVX512)})
    cycle: int = 0
    gated_cycles: int = 0
    undelivered_cycles: int = 0

    def now_ns(self) -> int:
        return math.ceil(self.cycle * 1000 / self.clock.freq_mhz)

    def step_cycle(self, now: Optional[int] = None) -> Tuple[int, int]:
        """Advance one cycle; returns uops retired by thread 0 and thread 1."""
        if now is None:
            now = self.now_ns()
        if self.gate.requested is not None:
            self.gate.active = self.gate.requested
            self.gate.requested = None
        delivery_phase = self.cycle % THROTTLE_WINDOW == 0
        out = []
        any_delivered = False
        for th in self.threads:
            out.append(self._retire(th, now, delivery_phase))
            any_delivered |= out[-1] > 0
            th.tsc += 1
        if self.gate.active:
            self.gated_cycles += 1
            if not any_delivered:
                self.undelivered_cycles += 1
        self.cycle += 1
        return out[0], out[1]

    def _retire(self, th: HardwareThread, now: int, delivery_phase: bool) -> int:
        ph = th.current
        if ph is None or th.stall_until > self.cycle:
            return 0
        if th.phase_left < 0:
            th.phase_left = ph.iterations
            unit = ph.cls.unit
            if unit is not Unit.NONE:
                ready = powergate_wake(self, unit, now)
                if ready > now:
                    th.stall_until = self.cycle + self.clock.cycles_in(ready - now)
                    return 0
        if self.gate.gates(ph.cls) and not delivery_phase:
            return 0
        n = min(ph.cls.base_ipc, th.phase_left)
        th.phase_left -= n
        th.retired_uops += n
        unit = ph.cls.unit
        if unit is not Unit.NONE:
            self.power_gates[unit].last_use = now
        if th.phase_left == 0:
            th.phase_idx += 1
            th.phase_left = -1
        return n

    def run(self, cycles: int) -> List[Tuple[int, int]]:
        return [self.step_cycle() for _ in range(cycles)]


def powergate_wake(core: CoreState, unit: Unit, now: int) -> int:
    """Open ``unit``'s power gate if needed; returns the time the unit is usable."""
    pg = core.power_gates[unit]
    if pg.is_open(now):
        return now
    pg.open = True
    pg.last_use = now + pg.wake_latency
    return now + pg.wake_latency


def set_throttle(core: CoreState, active: bool) -> None:
    """Request a gate change; it takes effect at the next cycle boundary."""
    core.gate.requested = active


@dataclass(frozen=True)
class PhiRequest:
    core: int
    cls: InstructionClass
    time: int


def issue_phi(core_id: int, cls: InstructionClass, level: InstructionClass,
              now: int) -> Optional[PhiRequest]:
    """Power-level request for ``cls`` given the core's covered ``level``, if any."""
    if not cls.is_phi or cls <= level:
        return None
    return PhiRequest(core_id, cls, now)


def idq_undelivered_fraction(core: CoreState) -> float:
    """Fraction of gated cycles in which no uop left the IDQ."""
    if core.gated_cycles == 0:
        return 0.0
    return core.undelivered_cycles / core.gated_cycles


def classes_by_label(labels: Sequence[str]) -> List[InstructionClass]:
    return [InstructionClass.from_label(s) for s in labels]
