"""Fit the capacitance table and regulator slews to measured throttling periods.

Throttling period model for ``n`` cores issuing class ``c`` together from the
baseline level on a shared regulator::

    TP = latency + n * (cdyn_c - 1) * a(f) / slew,   a(f) = V(f) * f * r_ll * K

which is linear in ``latency`` and ``u_c = (cdyn_c - 1) / slew``.  The
overall scale (``slew`` versus ``cdyn``) is not identifiable from TPs alone,
so one class weight is pinned (``anchor_class``/``anchor_cdyn``) and the
slew follows from its fitted ``u``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..core import BASELINE, CLASS_ORDER, InstructionClass, check_cdyn_table
from ..machine import Machine, Probe
from ..pdn import ICC_K, VRKind
from .config import MachineConfig, targets_path


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TpTarget:
    cls: InstructionClass
    freq_mhz: int
    cores: int
    tp_us: float
    vr: VRKind = VRKind.SHARED_MOTHERBOARD


@dataclass
class FitPoint:
    target: TpTarget
    fitted_us: float
    simulated_us: float
    analytic_us: float
    transitions: int

    @property
    def rel_error(self) -> float:
        if self.target.tp_us == 0:
            return abs(self.simulated_us)
        return abs(self.simulated_us - self.target.tp_us) / self.target.tp_us

    @property
    def oracle_gap_ns(self) -> float:
        return abs(self.simulated_us - self.analytic_us) * 1000.0


@dataclass
class CalibratedParams:
    cdyn: Dict[InstructionClass, float]
    slew: Dict[VRKind, float]
    latency_ns: Dict[VRKind, int]
    points: List[FitPoint] = field(default_factory=list)
    tolerance: float = 0.01

    def max_rel_error(self) -> float:
        return max((p.rel_error for p in self.points if p.target.tp_us > 0), default=0.0)

    def oracle_ok(self) -> bool:
        return all(p.oracle_gap_ns <= p.transitions for p in self.points)

    def table_rows(self) -> List[dict]:
        return [{"class": p.target.cls.label, "freq_ghz": p.target.freq_mhz / 1000,
                 "cores": p.target.cores, "vr": p.target.vr.value,
                 "target_us": p.target.tp_us, "fitted_us": round(p.fitted_us, 4),
                 "simulated_us": round(p.simulated_us, 4),
                 "analytic_us": round(p.analytic_us, 4),
                 "rel_error": round(p.rel_error, 6)} for p in self.points]


def load_targets(path) -> List[TpTarget]:
    """Read ``class,freq_ghz,cores,tp_us[,vr]`` rows."""
    kinds = {k.value: k for k in VRKind}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                out.append(TpTarget(InstructionClass.from_label(row["class"].strip()),
                                    int(round(float(row["freq_ghz"]) * 1000)),
                                    int(row["cores"]), float(row["tp_us"]),
                                    kinds[(row.get("vr") or "mbvr").strip()]))
            except (KeyError, ValueError) as e:
                raise CalibrationError(f"bad target row {row}: {e}") from None
    return out


def ramp_mv_per_cdyn(cfg: MachineConfig, freq_mhz: int) -> float:
    """Guardband (mV) per unit of cdyn above baseline at ``freq_mhz``."""
    pmu = cfg.pmu_config(cdyn={c: 1.0 + c.value for c in CLASS_ORDER})
    return pmu.baseline(freq_mhz) * (freq_mhz / 1000.0) * cfg.r_ll * ICC_K


def fit_tp_model(cfg: MachineConfig, targets: List[TpTarget]) -> Tuple[float, Dict]:
    """Least-squares fit on the shared-regulator rows; returns (latency_us, {cls: u})."""
    rows = [t for t in targets if t.vr is VRKind.SHARED_MOTHERBOARD and t.cls is not BASELINE]
    classes = sorted({t.cls for t in rows}, key=lambda c: c.value)
    if len(rows) < len(classes) + 1:
        raise CalibrationError("not enough shared-regulator targets to fit")
    A = np.zeros((len(rows), 1 + len(classes)))
    b = np.zeros(len(rows))
    wts = np.zeros(len(rows))
    for i, t in enumerate(rows):
        A[i, 0] = 1.0
        A[i, 1 + classes.index(t.cls)] = t.cores * ramp_mv_per_cdyn(cfg, t.freq_mhz)
        b[i] = t.tp_us
        wts[i] = 1.0 / t.tp_us  # fit relative error
    sol, *_ = np.linalg.lstsq(A * wts[:, None], b * wts, rcond=None)
    return float(sol[0]), {c: float(sol[1 + j]) for j, c in enumerate(classes)}


def analytic_tp_us(cfg: MachineConfig, cdyn: Dict[InstructionClass, float], slew: float,
                   latency_ns: int, cls: InstructionClass, freq_mhz: int, cores: int) -> float:
    """Latency plus the queued guardband ramps divided by the slew (no rounding)."""
    if cls is BASELINE:
        return 0.0
    per_core = (cdyn[cls] - 1.0) * ramp_mv_per_cdyn(cfg, freq_mhz)
    return latency_ns / 1000.0 + cores * per_core / slew


def simulate_tp_us(cfg: MachineConfig, cls: InstructionClass, freq_mhz: int, cores: int,
                   vr: Optional[VRKind] = None) -> float:
    """Run ``cls`` on ``cores`` cores from reset; PMU-level throttle window of core 0."""
    m = Machine(cfg.machine_params(freq_mhz=freq_mhz, vr_kind=vr))

    def prog():
        yield Probe(cls)

    for c in range(cores):
        m.load(c, 0, prog())
    m.run()
    periods = m.throttle_periods(0)
    return periods[0] / 1000.0 if periods else 0.0


def calibrate_model(cfg: MachineConfig, targets: Optional[List[TpTarget]] = None,
                    verify: bool = True) -> CalibratedParams:
    if targets is None:
        targets = load_targets(targets_path(cfg))
    anchor = InstructionClass.from_label(cfg.anchor_class)
    latency_us, u = fit_tp_model(cfg, targets)
    if anchor not in u:
        raise CalibrationError(f"anchor class {anchor.label} has no targets")
    if latency_us < 0:
        raise CalibrationError(f"fitted regulator latency is negative ({latency_us:.3f} us)")
    w = u[anchor] / (cfg.anchor_cdyn - 1.0)  # 1/slew
    if not w > 0:
        raise CalibrationError("fitted slew is not positive")
    cdyn = {BASELINE: 1.0}
    for c in CLASS_ORDER[1:]:
        if c not in u:
            raise CalibrationError(f"no targets for class {c.label}")
        cdyn[c] = round(1.0 + u[c] / w, 3)
    try:
        check_cdyn_table(cdyn)
    except ValueError as e:
        raise CalibrationError(f"fitted cdyn table is not monotone: {e}") from None

    slew = {VRKind.SHARED_MOTHERBOARD: round(1.0 / w, 4)}
    latency = {VRKind.SHARED_MOTHERBOARD: int(round(latency_us * 1000)),
               VRKind.INTEGRATED: cfg.latency_for(VRKind.INTEGRATED),
               VRKind.PER_CORE_LDO: cfg.latency_for(VRKind.PER_CORE_LDO)}
    for kind in (VRKind.INTEGRATED, VRKind.PER_CORE_LDO):
        pts = [t for t in targets if t.vr is kind]
        if not pts:
            fixed = cfg.slew_for(kind)
            if fixed is None:
                raise CalibrationError(f"no targets or configured slew for {kind.value}")
            slew[kind] = fixed
            continue
        est = [(cdyn[t.cls] - 1) * t.cores * ramp_mv_per_cdyn(cfg, t.freq_mhz)
               / (t.tp_us - latency[kind] / 1000.0) for t in pts]
        slew[kind] = round(float(np.mean(est)), 4)

    params = CalibratedParams(cdyn, slew, latency, tolerance=cfg.tolerance)
    fitted_cfg = cfg.with_calibration(cdyn, slew, latency)
    for t in targets:
        an = analytic_tp_us(fitted_cfg, cdyn, slew[t.vr], latency[t.vr], t.cls,
                            t.freq_mhz, t.cores)
        sim = simulate_tp_us(fitted_cfg, t.cls, t.freq_mhz, t.cores, t.vr) if verify else an
        trans = t.cores if t.cls is not BASELINE else 0
        params.points.append(FitPoint(t, an, sim, an, trans))
    if verify:
        bad = [p for p in params.points if p.rel_error > cfg.tolerance]
        if bad:
            worst = max(bad, key=lambda p: p.rel_error)
            raise CalibrationError(
                f"{len(bad)} targets outside {cfg.tolerance:.1%}; worst {worst.target.cls.label} "
                f"@{worst.target.freq_mhz} MHz x{worst.target.cores}: "
                f"{worst.simulated_us:.3f} vs {worst.target.tp_us:.3f} us")
    return params


def calibrated_config(cfg: MachineConfig, verify: bool = False) -> MachineConfig:
    """``cfg`` with cdyn and slews filled in (fitting only what is missing)."""
    if cfg.cdyn is not None and all(cfg.slew_for(k) is not None for k in VRKind):
        return cfg
    params = calibrate_model(cfg, verify=verify)
    cdyn = cfg.cdyn_table or params.cdyn
    slew = {k: cfg.slew_for(k) or params.slew[k] for k in VRKind}
    return cfg.with_calibration(cdyn, slew, params.latency_ns)


def full_ramp_us(cfg: MachineConfig, vr: VRKind) -> float:
    """Baseline to 512b_Heavy on one core at 1.4 GHz: the reference full ramp."""
    return simulate_tp_us(cfg, InstructionClass.L512B_HEAVY, 1400, 1, vr)
