"""Central power-management unit.

The PMU turns per-core instruction-class demands into a domain voltage
target, serializes regulator transitions, holds raised voltage for a
hysteresis window, enforces the Icc/Vcc design limits by lowering the
shared clock, and drives the cores' throttle gates.

Methods return a list of ``Action`` tuples for the caller (the machine
scheduler) to apply; the PMU itself never touches core pipelines.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .core import BASELINE, CLASS_ORDER, DEFAULT_CDYN, InstructionClass, check_cdyn_table
from .pdn import (IccModel, LoadLineParams, ModelViolation, VRKind, VRState,
                  guardband_delta, vr_request, vr_step)

TOP = CLASS_ORDER[-1]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LimitsConfig:
    icc_max: float = 100.0  # A
    vcc_max: float = 1270.0  # mV
    vcc_min: float = 500.0  # mV
    tj_max: Optional[float] = None  # not modeled

    def __post_init__(self):
        if not self.vcc_min < self.vcc_max:
            raise ConfigError("vcc_min must be below vcc_max")
        if not self.icc_max > 0:
            raise ConfigError("icc_max must be positive")


@dataclass
class PmuConfig:
    n_cores: int = 2
    vf_table: Sequence[Tuple[int, float]] = ((1000, 700.0), (2000, 800.0))
    cdyn: Dict[InstructionClass, float] = field(default_factory=lambda: dict(DEFAULT_CDYN))
    ll: LoadLineParams = field(default_factory=LoadLineParams)
    icc: IccModel = field(default_factory=IccModel)
    limits: LimitsConfig = field(default_factory=LimitsConfig)
    hysteresis_ns: int = 650_000
    freq_step_mhz: int = 100
    min_freq_mhz: int = 800
    secure_mode: bool = False

    def __post_init__(self):
        check_cdyn_table(self.cdyn)

    def baseline(self, freq_mhz: int) -> float:
        xs, ys = zip(*self.vf_table)
        return float(np.interp(freq_mhz, xs, ys))

    def guardband(self, cls: InstructionClass, freq_mhz: int) -> float:
        vb = self.baseline(freq_mhz)
        return guardband_delta(self.cdyn[BASELINE], self.cdyn[cls], vb, freq_mhz / 1000.0, self.ll)

    def target(self, levels: Sequence[InstructionClass], freq_mhz: int) -> float:
        """Baseline plus the additive per-core guardbands of ``levels``."""
        return self.baseline(freq_mhz) + sum(self.guardband(c, freq_mhz) for c in levels)

    def domain_icc(self, levels: Sequence[InstructionClass], vcc: float, freq_mhz: int) -> float:
        total = sum(self.cdyn[c] for c in levels)
        return self.icc.icc(total, vcc, freq_mhz / 1000.0)


class Action(NamedTuple):
    kind: str  # "throttle" | "freq" | "vr"
    target: int  # core id, or vr index for "vr", or 0 for "freq"
    value: object  # bool, freq MHz, or predicted completion time


def enforce_limits(cfg: PmuConfig, freq_mhz: int,
                   levels: Sequence[InstructionClass]) -> Tuple[float, int]:
    """Highest frequency on the ``freq_step_mhz`` ladder at or below ``freq_mhz``
    whose voltage target and supply current both respect the limits.
    """
    f = freq_mhz
    while True:
        vcc = cfg.target(levels, f)
        if vcc <= cfg.limits.vcc_max and cfg.domain_icc(levels, vcc, f) <= cfg.limits.icc_max:
            return vcc, f
        f -= cfg.freq_step_mhz
        if f < cfg.min_freq_mhz:
            raise ConfigError(f"no admissible frequency at or above {cfg.min_freq_mhz} MHz "
                              f"for levels {[c.label for c in levels]}")


@dataclass
class PmuState:
    granted: List[InstructionClass]
    demanded: List[InstructionClass]
    deadline: List[Optional[int]]
    throttling: List[bool]
    freq_mhz: int
    requested_freq_mhz: int

    def level(self, core: int) -> InstructionClass:
        return max(self.granted[core], self.demanded[core])


class Pmu:
    """PMU bound to a set of regulators.

    ``vrs`` holds one shared regulator, or one per core for ``PER_CORE_LDO``.
    """

    def __init__(self, cfg: PmuConfig, vrs: List[VRState], freq_mhz: int):
        self.cfg = cfg
        self.vrs = vrs
        self.per_core = len(vrs) > 1
        n = cfg.n_cores
        if self.per_core and len(vrs) != n:
            raise ConfigError("per-core regulators need one VR per core")
        start = TOP if cfg.secure_mode else BASELINE
        vcc, f = enforce_limits(cfg, freq_mhz, [start] * n)
        self.state = PmuState([start] * n, [start] * n, [None] * n, [False] * n, f, freq_mhz)
        for i, vr in enumerate(vrs):
            vr.current_vcc = self.domain_target(i)
        self.limit_log: List[Tuple[int, float, float, int]] = []

    # -- topology helpers -------------------------------------------------
    def vr_index(self, core: int) -> int:
        return core if self.per_core else 0

    def domain_cores(self, vr_idx: int) -> List[int]:
        return [vr_idx] if self.per_core else list(range(self.cfg.n_cores))

    def levels(self) -> List[InstructionClass]:
        return [self.state.level(c) for c in range(self.cfg.n_cores)]

    def domain_target(self, vr_idx: int = 0) -> float:
        """Voltage the regulator ``vr_idx`` must supply for current demands."""
        lv = [self.state.level(c) for c in self.domain_cores(vr_idx)]
        return self.cfg.target(lv, self.state.freq_mhz)

    # -- events -----------------------------------------------------------
    def on_phi_request(self, core: int, cls: InstructionClass, now: int) -> List[Action]:
        st = self.state
        if self.cfg.secure_mode:
            return []
        st.deadline[core] = now + self.cfg.hysteresis_ns
        if cls <= st.level(core):
            return []
        st.demanded[core] = cls
        st.throttling[core] = True
        actions = [Action("throttle", core, True)]
        actions += self._admit(now)
        vi = self.vr_index(core)
        end = vr_request(self.vrs[vi], core, self.domain_target(vi), now)
        actions.append(Action("vr", vi, end))
        if end <= now:
            actions += self.on_vr_complete(vi, now)
        return actions

    def touch(self, core: int, now: int) -> None:
        """Record PHI execution on ``core`` without a new demand."""
        if not self.cfg.secure_mode and st_above_baseline(self.state, core):
            self.state.deadline[core] = now + self.cfg.hysteresis_ns

    def on_vr_complete(self, vr_idx: int, now: int) -> List[Action]:
        vr = self.vrs[vr_idx]
        vr_step(vr, now)
        actions = []
        if vr.active is not None:
            actions.append(Action("vr", vr_idx, vr.active.end))
        if vr.has_pending_step_up():
            return actions
        st = self.state
        cores = self.domain_cores(vr_idx)
        # after a frequency cut the rail is still above the new target; keep
        # throttling until the current drawn at the present voltage fits
        release = list(st.granted)
        for c in cores:
            release[c] = st.demanded[c]
        if self.cfg.domain_icc(release, vr.voltage_at(now), st.freq_mhz) > self.cfg.limits.icc_max:
            return actions
        for c in cores:
            if st.throttling[c]:
                st.granted[c] = st.demanded[c]
                st.throttling[c] = False
                actions.append(Action("throttle", c, False))
        return actions

    def tick_hysteresis(self, core: int, now: int, phi_active: bool = False) -> List[Action]:
        """Drop ``core`` back to baseline once its hysteresis deadline has passed."""
        st = self.state
        dl = st.deadline[core]
        if self.cfg.secure_mode or dl is None or dl > now:
            return []
        if phi_active or st.throttling[core]:
            st.deadline[core] = now + self.cfg.hysteresis_ns
            return []
        st.deadline[core] = None
        if st.level(core) is BASELINE:
            return []
        st.granted[core] = BASELINE
        st.demanded[core] = BASELINE
        actions = self._admit(now)
        vi = self.vr_index(core)
        end = vr_request(self.vrs[vi], None, self.domain_target(vi), now)
        actions.append(Action("vr", vi, end))
        return actions

    def _admit(self, now: int) -> List[Action]:
        st = self.state
        vcc, f = enforce_limits(self.cfg, st.requested_freq_mhz, self.levels())
        self.limit_log.append((now, vcc, self.cfg.domain_icc(self.levels(), vcc, f), f))
        if f != st.freq_mhz:
            st.freq_mhz = f
            return [Action("freq", 0, f)]
        return []


def st_above_baseline(st: PmuState, core: int) -> bool:
    return st.level(core) is not BASELINE


def make_vrs(kind: VRKind, n_cores: int, slew: float, latency_ns: int,
             limits: LimitsConfig) -> List[VRState]:
    count = n_cores if kind.per_core else 1
    return [VRState(kind, slew, limits.vcc_min, latency_ns, limits.vcc_min, limits.vcc_max)
            for _ in range(count)]


def virus_levels(cdyn: Dict[InstructionClass, float]) -> List[List[InstructionClass]]:
    """Group PHI classes into distinct guardband levels (equal weight => same level)."""
    levels: List[List[InstructionClass]] = []
    for c in CLASS_ORDER[1:]:
        if levels and cdyn[levels[-1][0]] == cdyn[c]:
            levels[-1].append(c)
        else:
            levels.append([c])
    return levels


__all__ = ["Action", "ConfigError", "LimitsConfig", "ModelViolation", "Pmu", "PmuConfig",
           "PmuState", "enforce_limits", "make_vrs", "virus_levels"]
