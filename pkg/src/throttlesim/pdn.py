"""Power delivery network: load-line drop, guardband arithmetic, VR transitions.

Units used throughout the package: millivolts, amperes, gigahertz, milliohms,
integer nanoseconds for simulation time and millivolts per microsecond for
regulator slew.  With these units ``mOhm * A == mV``.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, Optional

#: Amperes per (cdyn weight * mV * GHz).  Scalar 64b code has cdyn 1.0.
ICC_K = 1e-3


class ModelViolation(ValueError):
    """Raised when an input violates a physical precondition of the model."""


class LimitViolation(ModelViolation):
    """A voltage request falls outside the absolute regulator limits."""


@dataclass(frozen=True)
class LoadLineParams:
    r_ll: float = 2.0  # mOhm

    def __post_init__(self):
        if not self.r_ll > 0:
            raise ModelViolation(f"load-line resistance must be positive, got {self.r_ll}")


@dataclass(frozen=True)
class IccModel:
    icc_lkg: float = 0.0  # A

    def icc(self, cdyn: float, vcc: float, freq: float) -> float:
        """Supply current of a load with weight ``cdyn`` at ``vcc`` mV and ``freq`` GHz."""
        return cdyn * vcc * freq * ICC_K + self.icc_lkg


def load_voltage(vcc: float, icc: float, ll: LoadLineParams) -> float:
    """Voltage seen at the load: ``vcc - r_ll * icc``."""
    if icc < 0:
        raise ModelViolation(f"negative current {icc} A")
    return vcc - ll.r_ll * icc


def guardband_delta(cdyn_from: float, cdyn_to: float, vcc1: float, freq: float,
                    ll: LoadLineParams) -> float:
    """Extra supply voltage (mV) needed to move between two capacitance weights.

    Linear in ``freq``, ``vcc1``, ``ll.r_ll`` and in the weight difference, and
    antisymmetric in the weight pair.  A negative value is a legal step-down.
    """
    return (cdyn_to - cdyn_from) * vcc1 * freq * ll.r_ll * ICC_K


class VRKind(enum.Enum):
    SHARED_MOTHERBOARD = "mbvr"
    INTEGRATED = "ivr"
    PER_CORE_LDO = "ldo"

    @property
    def per_core(self) -> bool:
        return self is VRKind.PER_CORE_LDO


@dataclass
class Transition:
    core: Optional[int]
    request_time: int
    start: int
    end: int
    start_vcc: float
    target_vcc: float

    @property
    def step_up(self) -> bool:
        return self.target_vcc > self.start_vcc


@dataclass
class VRState:
    """One voltage regulator.

    Transitions are serialized: at most one is in flight and further requests
    wait in ``pending`` in arrival order.  ``command_latency_ns`` is paid only
    when a request finds the regulator idle; queued requests start the moment
    the previous transition ends.
    """

    kind: VRKind
    slew_rate: float  # mV/us
    current_vcc: float
    command_latency_ns: int = 0
    vcc_min: float = float("-inf")
    vcc_max: float = float("inf")
    active: Optional[Transition] = None
    pending: Deque[Transition] = field(default_factory=deque)
    completed: List[Transition] = field(default_factory=list)
    last_step: int = 0

    def __post_init__(self):
        if not self.slew_rate > 0:
            raise ModelViolation(f"slew rate must be positive, got {self.slew_rate}")

    @property
    def in_transition(self) -> bool:
        return self.active is not None

    @property
    def target_vcc(self) -> float:
        if self.pending:
            return self.pending[-1].target_vcc
        if self.active is not None:
            return self.active.target_vcc
        return self.current_vcc

    @property
    def transition_end(self) -> Optional[int]:
        return None if self.active is None else self.active.end

    def duration_ns(self, dv: float) -> int:
        return int(round(abs(dv) / self.slew_rate * 1000.0))

    def has_pending_step_up(self) -> bool:
        if self.active is not None and self.active.step_up:
            return True
        return any(t.step_up for t in self.pending)

    def voltage_at(self, t: int) -> float:
        """Output voltage at time ``t`` assuming no new requests."""
        tr = self.active
        if tr is None or t <= tr.start:
            return self.current_vcc if tr is None else tr.start_vcc
        if t >= tr.end:
            return tr.target_vcc
        frac = (t - tr.start) / (tr.end - tr.start)
        return tr.start_vcc + frac * (tr.target_vcc - tr.start_vcc)


def _chain_end(vr: VRState) -> tuple:
    """(time, voltage) at which the last queued transition completes."""
    if vr.pending:
        last = vr.pending[-1]
        return last.end, last.target_vcc
    return vr.active.end, vr.active.target_vcc


def _rechain(vr: VRState) -> None:
    t, v = vr.active.end, vr.active.target_vcc
    for tr in vr.pending:
        tr.start, tr.start_vcc = t, v
        tr.end = t + vr.duration_ns(tr.target_vcc - v)
        t, v = tr.end, tr.target_vcc


def vr_request(vr: VRState, core: Optional[int], target: float, now: int) -> int:
    """Ask the regulator to move to ``target`` mV; returns the predicted completion time."""
    if not vr.vcc_min <= target <= vr.vcc_max:
        raise LimitViolation(
            f"target {target:.3f} mV outside [{vr.vcc_min}, {vr.vcc_max}]")
    if now < vr.last_step:
        raise ModelViolation(f"request at {now} precedes last step {vr.last_step}")
    if vr.active is None:
        if target == vr.current_vcc:
            return now
        start = now + vr.command_latency_ns
        vr.active = Transition(core, now, start, start + vr.duration_ns(target - vr.current_vcc),
                               vr.current_vcc, target)
        return vr.active.end
    tr = Transition(core, now, 0, 0, 0.0, target)
    if vr.pending:
        # queued step-downs lose to a later step-up to a higher target
        kept = [p for p in vr.pending if not (not p.step_up and target > p.target_vcc)]
        if len(kept) != len(vr.pending):
            vr.pending = deque(kept)
            if vr.pending:
                _rechain(vr)
    end, v = _chain_end(vr)
    tr.start, tr.start_vcc = end, v
    tr.end = end + vr.duration_ns(target - v)
    vr.pending.append(tr)
    return tr.end


def vr_step(vr: VRState, now: int) -> List[Transition]:
    """Advance the regulator to ``now``; returns transitions completed, in order."""
    if now < vr.last_step:
        raise ModelViolation(f"time regression: {now} < {vr.last_step}")
    vr.last_step = now
    done = []
    while vr.active is not None and vr.active.end <= now:
        tr = vr.active
        vr.current_vcc = tr.target_vcc
        vr.completed.append(tr)
        done.append(tr)
        vr.active = vr.pending.popleft() if vr.pending else None
    if vr.active is not None and now > vr.active.start:
        tr = vr.active
        frac = (now - tr.start) / (tr.end - tr.start)
        vr.current_vcc = tr.start_vcc + frac * (tr.target_vcc - tr.start_vcc)
    return done
