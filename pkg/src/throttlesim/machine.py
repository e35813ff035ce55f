"""Event-driven multi-core machine.

Threads run *programs*: generators that yield operations (``Run``,
``Probe``, ``SyncWait``, ``Sleep``) and receive each operation's result.
Between events a thread's progress is computed in closed form from the
throttle-gate state, so millisecond-scale runs cost a handful of events
rather than millions of cycle steps.

Simulation time is integer nanoseconds.  All cores share one clock; thread
positions are tracked in integer cycles of that clock.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Generator, List, Optional, Tuple

import numpy as np

from .core import (THROTTLE_WINDOW, InstructionClass, PowerGate, ThrottleGate, ThrottleMode,
                   Unit, deliveries, finish_cycle, issue_phi)
from .pdn import VRKind
from .pmu import Action, Pmu, PmuConfig, make_vrs


# -- program operations -----------------------------------------------------

@dataclass
class Run:
    cls: InstructionClass
    iterations: int


@dataclass
class Probe:
    """Run ``cls`` in a loop timing every iteration; yields the throttling period.

    The loop stops ``quiet`` fast iterations after the last slow one, or after
    ``timeout_ns`` if nothing slow was seen, or at ``cap_ns`` regardless.
    """

    cls: InstructionClass
    timeout_ns: int = 20_000
    cap_ns: int = 60_000
    quiet: int = 64


@dataclass
class SyncWait:
    epoch_ns: int


@dataclass
class Sleep:
    ns: int


def sync_wait(now: int, epoch_len: int) -> int:
    """Next multiple of ``epoch_len`` at or after ``now``."""
    if epoch_len <= 0:
        raise ValueError("epoch length must be positive")
    return -(-now // epoch_len) * epoch_len


# -- activities on a thread's stack -----------------------------------------

@dataclass
class _RunAct:
    cls: InstructionClass
    left: int
    app: bool = False


@dataclass
class _ProbeAct:
    cls: InstructionClass
    start: int
    timeout: int
    cap: int
    quiet: int
    segments: List[Tuple[int, int, bool]] = field(default_factory=list)
    seen_slow: bool = False
    fast_since: int = 0
    start_ns: int = 0


@dataclass
class _StallAct:
    until: int  # cycle


@dataclass
class _SleepAct:
    until_ns: int


@dataclass
class ProbeRecord:
    thread: Tuple[int, int]
    cls: InstructionClass
    start_ns: int
    end_ns: int
    tp_cycles: int


class DomainClock:
    """Shared clock; converts between ns and absolute cycle indices."""

    def __init__(self, freq_mhz: int):
        self.freq_mhz = freq_mhz
        self.base_t = 0
        self.base_c = 0

    def cycle_at(self, t: int) -> int:
        if t <= self.base_t:
            return self.base_c
        return self.base_c + -(-(t - self.base_t) * self.freq_mhz // 1000)

    def time_of(self, c: int) -> int:
        if c <= self.base_c:
            return self.base_t
        return self.base_t + -(-(c - self.base_c) * 1000 // self.freq_mhz)

    def cycles_for(self, ns: int) -> int:
        return -(-ns * self.freq_mhz // 1000)

    def set_freq(self, t: int, freq_mhz: int) -> None:
        c = self.cycle_at(t)
        self.base_t, self.base_c = self.time_of(c), c
        self.freq_mhz = freq_mhz


class ThreadRt:
    def __init__(self, core: int, tid: int):
        self.core = core
        self.tid = tid
        self.cycle = 0
        self.stack: list = []
        self.program: Optional[Generator] = None
        self.version = 0
        self.retired = 0

    @property
    def top(self):
        return self.stack[-1] if self.stack else None

    def executing_cls(self) -> Optional[InstructionClass]:
        t = self.top
        if isinstance(t, (_RunAct, _ProbeAct)):
            return t.cls
        return None


class CoreRt:
    def __init__(self, cid: int, mode: ThrottleMode, wake_latency: int, close_after: int):
        self.id = cid
        self.gate = ThrottleGate(mode=mode)
        self.threads = [ThreadRt(cid, 0), ThreadRt(cid, 1)]
        self.power_gates = {u: PowerGate(u, wake_latency, close_after)
                            for u in (Unit.AVX256, Unit.AVX512)}
        self.throttle_log: List[List[Optional[int]]] = []
        self.wake_log: List[Tuple[int, int]] = []


@dataclass
class MachineParams:
    pmu: PmuConfig
    vr_kind: VRKind = VRKind.SHARED_MOTHERBOARD
    slew: float = 1.0  # mV/us
    vr_latency_ns: int = 0
    freq_mhz: int = 1400
    throttle_mode: ThrottleMode = ThrottleMode.ENTIRE_CORE
    wake_latency_ns: int = 8


class Machine:
    def __init__(self, params: MachineParams):
        self.params = params
        p = params.pmu
        self.clock = DomainClock(params.freq_mhz)
        self.vrs = make_vrs(params.vr_kind, p.n_cores, params.slew, params.vr_latency_ns, p.limits)
        self.pmu = Pmu(p, self.vrs, params.freq_mhz)
        if self.pmu.state.freq_mhz != params.freq_mhz:
            self.clock.freq_mhz = self.pmu.state.freq_mhz
        self.cores = [CoreRt(i, params.throttle_mode, params.wake_latency_ns, p.hysteresis_ns)
                      for i in range(p.n_cores)]
        self.now = 0
        self._q: list = []
        self._seq = 0
        self._hyst_sched: Dict[int, int] = {}
        self.probes: List[ProbeRecord] = []
        self.freq_log: List[Tuple[int, int]] = [(0, self.clock.freq_mhz)]
        self.noise_hits: List[Tuple[int, Tuple[int, int], int]] = []

    # -- public API -------------------------------------------------------
    def thread(self, core: int, tid: int) -> ThreadRt:
        return self.cores[core].threads[tid]

    def load(self, core: int, tid: int, program: Generator) -> None:
        th = self.thread(core, tid)
        th.program = program
        self._push(self.now, self._advance_program, th, None)

    def at(self, t: int, fn: Callable, *args) -> None:
        self._push(t, fn, *args)

    def run(self, until: Optional[int] = None) -> None:
        while self._q:
            t = self._q[0][0]
            if until is not None and t > until:
                break
            t, _, fn, args = heapq.heappop(self._q)
            self.now = t
            fn(*args)
        if until is not None and until > self.now:
            self.now = until

    def tsc(self, core: int, tid: int) -> int:
        return self.clock.cycle_at(self.now)

    def vcc(self, vr_idx: int = 0) -> float:
        return self.vrs[vr_idx].voltage_at(self.now)

    def throttle_periods(self, core: int) -> List[int]:
        return [e - s for s, e in self.cores[core].throttle_log if e is not None]

    # -- external perturbations ------------------------------------------
    def stall(self, core: int, tid: int, latency_ns: int) -> None:
        """Suspend whatever the thread is executing for ``latency_ns`` (TSC keeps running)."""
        th = self.thread(core, tid)
        if not isinstance(th.top, (_RunAct, _ProbeAct)):
            return
        self._advance(th, self.now)
        self.noise_hits.append((self.now, (core, tid), latency_ns))
        th.stack.append(_StallAct(th.cycle + self.clock.cycles_for(latency_ns)))
        self._schedule(th)

    def inject(self, core: int, tid: int, cls: InstructionClass, iterations: int) -> None:
        """Time-share the thread with a foreign PHI burst."""
        th = self.thread(core, tid)
        self._advance(th, self.now)
        self._start(th, _RunAct(cls, iterations * cls.base_ipc, app=True))

    # -- event queue ------------------------------------------------------
    def _push(self, t: int, fn: Callable, *args) -> None:
        self._seq += 1
        heapq.heappush(self._q, (t, self._seq, fn, args))

    # -- thread mechanics -------------------------------------------------
    def _gated(self, th: ThreadRt) -> bool:
        return self.cores[th.core].gate.gates(th.executing_cls())

    def _advance(self, th: ThreadRt, t: int) -> None:
        target = self.clock.cycle_at(t)
        if target <= th.cycle:
            return
        top = th.top
        if isinstance(top, _RunAct):
            gated = self._gated(th)
            ipc = top.cls.base_ipc
            got = min(deliveries(th.cycle, target, gated) * ipc, top.left)
            if got == top.left and got > 0:
                target = min(target, finish_cycle(th.cycle, top.left, ipc, gated))
            top.left -= got
            th.retired += got
        elif isinstance(top, _ProbeAct):
            gated = self._gated(th)
            top.segments.append((th.cycle, target, gated))
            th.retired += deliveries(th.cycle, target, gated) * top.cls.base_ipc
        elif isinstance(top, _StallAct):
            target = min(target, top.until)
        th.cycle = target

    def _schedule(self, th: ThreadRt) -> None:
        th.version += 1
        top = th.top
        t = None
        if isinstance(top, _RunAct):
            t = self.clock.time_of(finish_cycle(th.cycle, top.left, top.cls.base_ipc,
                                                self._gated(th)))
        elif isinstance(top, _ProbeAct):
            if self._gated(th):
                c = top.cap
            elif top.seen_slow:
                c = min(top.cap, max(top.fast_since, th.cycle) + top.quiet)
            else:
                c = min(top.cap, top.timeout)
            t = self.clock.time_of(max(c, th.cycle))
        elif isinstance(top, _StallAct):
            t = self.clock.time_of(top.until)
        elif isinstance(top, _SleepAct):
            t = top.until_ns
        if t is not None:
            self._push(max(t, self.now), self._on_thread_event, th, th.version)

    def _on_thread_event(self, th: ThreadRt, version: int) -> None:
        if version != th.version:
            return
        self._advance(th, self.now)
        top = th.top
        if isinstance(top, _RunAct):
            if top.left > 0:
                self._schedule(th)
                return
            th.stack.pop()
            self._end_run(th, top.cls)
            if top.app:
                self._resume(th)
                return
            self._advance_program(th, None)
        elif isinstance(top, _ProbeAct):
            if self._gated(th) and th.cycle < top.cap:
                self._schedule(th)
                return
            th.stack.pop()
            self._end_run(th, top.cls)
            tp = probe_tp(top)
            self.probes.append(ProbeRecord((th.core, th.tid), top.cls, top.start_ns,
                                           self.now, tp))
            self._advance_program(th, tp)
        elif isinstance(top, _StallAct):
            if th.cycle < top.until:
                self._schedule(th)
                return
            th.stack.pop()
            self._resume(th)
        elif isinstance(top, _SleepAct):
            th.stack.pop()
            if th.stack:
                self._resume(th)
            else:
                self._advance_program(th, None)

    def _resume(self, th: ThreadRt) -> None:
        top = th.top
        if top is None:
            self._advance_program(th, None)
            return
        if isinstance(top, _ProbeAct):
            top.seen_slow = True
            top.fast_since = th.cycle
        if isinstance(top, _SleepAct) and top.until_ns <= self.now:
            th.stack.pop()
            self._resume(th) if th.stack else self._advance_program(th, None)
            return
        self._schedule(th)

    def _end_run(self, th: ThreadRt, cls: InstructionClass) -> None:
        core = self.cores[th.core]
        if cls.unit is not Unit.NONE:
            core.power_gates[cls.unit].last_use = self.now
        if cls.is_phi:
            self.pmu.touch(th.core, self.now)
            self._sync_hysteresis()

    def _advance_program(self, th: ThreadRt, result) -> None:
        if th.program is None:
            return
        if th.stack:
            # a foreign burst finished while the program was between operations
            self._schedule(th)
            return
        try:
            op = th.program.send(result)
        except StopIteration:
            th.program = None
            return
        th.cycle = max(th.cycle, self.clock.cycle_at(self.now))
        if isinstance(op, Run):
            self._start(th, _RunAct(op.cls, op.iterations * op.cls.base_ipc))
        elif isinstance(op, Probe):
            c = th.cycle
            act = _ProbeAct(op.cls, c, c + self.clock.cycles_for(op.timeout_ns),
                            c + self.clock.cycles_for(op.cap_ns), op.quiet, fast_since=c,
                            start_ns=self.now)
            self._start(th, act)
        elif isinstance(op, SyncWait):
            th.stack.append(_SleepAct(sync_wait(self.now, op.epoch_ns)))
            self._schedule(th)
        elif isinstance(op, Sleep):
            th.stack.append(_SleepAct(self.now + op.ns))
            self._schedule(th)
        else:
            raise TypeError(f"unknown program operation {op!r}")

    def _start(self, th: ThreadRt, act) -> None:
        th.cycle = max(th.cycle, self.clock.cycle_at(self.now))
        core = self.cores[th.core]
        cls = act.cls
        th.stack.append(act)
        if isinstance(act, _ProbeAct) and self._gated(th):
            act.seen_slow = True
        if cls.unit is not Unit.NONE:
            pg = core.power_gates[cls.unit]
            if not pg.is_open(self.now):
                pg.open = True
                pg.last_use = self.now + pg.wake_latency
                core.wake_log.append((self.now, pg.wake_latency))
                th.stack.append(_StallAct(th.cycle + self.clock.cycles_for(pg.wake_latency)))
            else:
                pg.last_use = self.now
        req = issue_phi(th.core, cls, self.pmu.state.level(th.core), self.now)
        if req is not None:
            self._apply(self.pmu.on_phi_request(req.core, req.cls, req.time))
        elif cls.is_phi:
            self.pmu.touch(th.core, self.now)
        self._sync_hysteresis()
        self._schedule(th)

    # -- PMU plumbing -----------------------------------------------------
    def _apply(self, actions: List[Action]) -> None:
        for a in actions:
            if a.kind == "throttle":
                self._set_gate(a.target, a.value)
            elif a.kind == "vr":
                self._push(max(a.value, self.now), self._on_vr_event, a.target)
            elif a.kind == "freq":
                for core in self.cores:
                    for th in core.threads:
                        self._advance(th, self.now)
                self.clock.set_freq(self.now, a.value)
                self.freq_log.append((self.now, a.value))
                for core in self.cores:
                    for th in core.threads:
                        self._schedule(th)
        self._sync_hysteresis()

    def _set_gate(self, cid: int, active: bool) -> None:
        core = self.cores[cid]
        if core.gate.active == active:
            return
        for th in core.threads:
            self._advance(th, self.now)
        core.gate.active = active
        if active:
            core.throttle_log.append([self.now, None])
        elif core.throttle_log and core.throttle_log[-1][1] is None:
            core.throttle_log[-1][1] = self.now
        for th in core.threads:
            top = th.top
            if isinstance(top, _ProbeAct):
                if self._gated(th):
                    top.seen_slow = True
                else:
                    top.fast_since = th.cycle
            self._schedule(th)

    def _on_vr_event(self, vi: int) -> None:
        vr = self.vrs[vi]
        if vr.active is None or vr.active.end > self.now:
            return
        self._apply(self.pmu.on_vr_complete(vi, self.now))

    def _phi_active(self, cid: int) -> bool:
        for th in self.cores[cid].threads:
            for act in th.stack:
                if isinstance(act, (_RunAct, _ProbeAct)) and act.cls.is_phi:
                    return True
        return False

    def _sync_hysteresis(self) -> None:
        for c, dl in enumerate(self.pmu.state.deadline):
            if dl is not None and self._hyst_sched.get(c) != dl:
                self._hyst_sched[c] = dl
                self._push(dl, self._on_hysteresis, c, dl)

    def _on_hysteresis(self, cid: int, dl: int) -> None:
        if self.pmu.state.deadline[cid] != dl:
            return
        self._hyst_sched.pop(cid, None)
        self._apply(self.pmu.tick_hysteresis(cid, self.now, self._phi_active(cid)))


def iteration_completions(segments: List[Tuple[int, int, bool]]) -> np.ndarray:
    """Cycle at which each one-cycle probe iteration completes."""
    parts = []
    w = THROTTLE_WINDOW
    for a, b, gated in segments:
        if b <= a:
            continue
        if gated:
            first = -(-a // w) * w
            parts.append(np.arange(first, b, w, dtype=np.int64) + 1)
        else:
            parts.append(np.arange(a + 1, b + 1, dtype=np.int64))
    if not parts:
        return np.zeros(0, dtype=np.int64)
    return np.concatenate(parts)


def probe_tp(act: _ProbeAct, slow_factor: int = 2) -> int:
    """Throttling period seen by a probe loop: total time of iterations whose
    rdtsc delta reached ``slow_factor`` times the unthrottled latency (one cycle).

    The first iteration is a warm-up (it also absorbs any unit wake-up) and
    only serves as the timing reference.
    """
    done = iteration_completions(act.segments)
    if done.size < 2:
        return 0
    deltas = np.diff(done)
    return int(deltas[deltas >= slow_factor].sum())
