"""Experiment drivers.  Each returns an ``ExperimentReport``.

Experiments are deterministic functions of (config, seed, params).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..core import BASELINE, CLASS_ORDER, SYMBOL_LEVELS, InstructionClass
from ..covert import (ChannelKind, ThresholdCalibrationError, bit_errors, calibrate_thresholds, capacity_bound,
                      random_bits, run_transcript, sync_wait, training_tps)
from ..machine import Machine, Probe, Run, Sleep
from ..noise import AppBurst, NoiseConfig
from ..pdn import VRKind
from ..pmu import ConfigError
from .calibrate import calibrated_config, simulate_tp_us
from .config import MachineConfig

#: Throughputs (bits/s) of earlier timing channels used as comparison points.
PRIOR_CHANNELS_BPS = {"prior_20bps": 20.0, "prior_61bps": 61.0, "prior_122bps": 122.0}

MITIGATIONS = ("none", "per_core_vr", "improved_throttling", "secure_mode")


@dataclass
class ExperimentReport:
    experiment: str
    config: dict
    config_hash: str
    seed: int
    params: dict
    tables: Dict[str, List[dict]] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


class UnknownExperiment(KeyError):
    pass


# -- throttling-period characterization ------------------------------------

def tp_characterization_rows(cfg: MachineConfig, core_counts: Sequence[int] = (1, 2)
                             ) -> List[dict]:
    rows = []
    for f in cfg.freqs_mhz:
        for n in core_counts:
            for c in CLASS_ORDER:
                tp = simulate_tp_us(cfg, c, f, n)
                rows.append({"class": c.label, "freq_ghz": f / 1000, "cores": n,
                             "tp_us": round(tp, 4), "tp_cycles": int(round(tp * f))})
    return rows


def strictly_increasing(xs: Sequence[float]) -> bool:
    return all(b > a for a, b in zip(xs, xs[1:]))


def prewarm_rows(cfg: MachineConfig, freq_mhz: Optional[int] = None,
                 warm_iterations: int = 3000) -> List[dict]:
    """TP of a 512b_Heavy loop right after a loop of each lighter class."""
    f = freq_mhz or cfg.channel_freq_mhz
    rows = []
    for prev in CLASS_ORDER:
        m = Machine(cfg.machine_params(freq_mhz=f))
        out = {}

        def prog(prev=prev, out=out):
            yield Run(prev, warm_iterations)
            # let any throttle from the warm-up loop finish before probing
            yield Sleep(30_000)
            out["tp"] = yield Probe(InstructionClass.L512B_HEAVY)

        m.load(0, 0, prog())
        m.run()
        periods = m.throttle_periods(0)
        pmu_tp = periods[-1] if periods and prev < InstructionClass.L512B_HEAVY else 0
        rows.append({"preceding_class": prev.label, "freq_ghz": f / 1000,
                     "tp_cycles": out["tp"], "tp_us": round(pmu_tp / 1000, 4)})
    return rows


def count_plateaus(values: Sequence[float], min_sep: float) -> int:
    vs = sorted(values)
    return 1 + sum(1 for a, b in zip(vs, vs[1:]) if b - a > min_sep) if vs else 0


# -- covert-channel throughput and noise ------------------------------------

def throughput_rows(cfg: MachineConfig, n_bits: int, seed: int) -> Tuple[List[dict], dict]:
    bits = random_bits(n_bits, seed)
    rows, details = [], {}
    for k in ChannelKind:
        r = run_transcript(k, bits, cfg)
        f = cfg.channel_freq_mhz
        longest = max(tp * 1000 // f for tp in r.per_symbol_tp) + _loop_ns(cfg, f)
        rows.append({"channel": k.value, "bits": n_bits, "ber": r.ber,
                     "throughput_bps": round(r.throughput, 3),
                     **{f"ratio_vs_{name}": round(r.throughput / bps, 3)
                        for name, bps in PRIOR_CHANNELS_BPS.items()},
                     "capacity_bound_bps": round(capacity_bound(cfg, longest), 3)})
        details[k.value] = r
    return rows, details


def _loop_ns(cfg: MachineConfig, freq_mhz: int) -> int:
    """Unthrottled duration of the slowest sender loop."""
    cycles = max(cfg.channel.sender_iterations / c.base_ipc for c in SYMBOL_LEVELS)
    return int(np.ceil(cycles * 1000 / freq_mhz))


def noise_sweep_rows(cfg: MachineConfig, rates: Sequence[float], kinds: Sequence[str],
                     seeds: Sequence[int], n_bits: int,
                     thresholds: Optional[dict] = None) -> List[dict]:
    thresholds = thresholds or {k: calibrate_thresholds(k, cfg) for k in ChannelKind}
    rows = []
    for ev_kind in kinds:
        for rate in rates:
            for k in ChannelKind:
                bers = [run_transcript(k, random_bits(n_bits, s), cfg, thresholds=thresholds[k],
                                       noise=NoiseConfig(event_rate=rate, event_kind=ev_kind,
                                                         seed=s)).ber for s in seeds]
                rows.append({"event_kind": ev_kind, "rate_per_s": rate, "channel": k.value,
                             "seeds": len(seeds), "mean_ber": round(float(np.mean(bers)), 6),
                             "max_ber": round(float(np.max(bers)), 6)})
    return rows


def appphi_sweep_rows(cfg: MachineConfig, rates: Sequence[float], seeds: Sequence[int],
                      n_bits: int, thresholds: Optional[dict] = None) -> List[dict]:
    thresholds = thresholds or {k: calibrate_thresholds(k, cfg) for k in ChannelKind}
    rows = []
    for rate in rates:
        for k in ChannelKind:
            bers = [run_transcript(k, random_bits(n_bits, s), cfg, thresholds=thresholds[k],
                                   noise=NoiseConfig(app_phi_rate=rate, seed=s)).ber
                    for s in seeds]
            rows.append({"rate_per_s": rate, "channel": k.value, "seeds": len(seeds),
                         "mean_ber": round(float(np.mean(bers)), 6),
                         "max_ber": round(float(np.max(bers)), 6)})
    return rows


def app_level_grid(cfg: MachineConfig, kind: ChannelKind, symbols_per_cell: int = 20,
                   offset_ns: int = 500, iterations: int = 200,
                   thresholds=None) -> List[dict]:
    """Symbol error rate when an app PHI of each level overlaps each sent level.

    One app burst lands ``offset_ns`` after every symbol starts, on the
    sender's hardware thread.
    """
    thr = thresholds or calibrate_thresholds(kind, cfg)
    epoch = cfg.channel.epoch_ns
    first = sync_wait(1, epoch)
    rows = []
    for s in range(4):
        bits = format(s, "02b") * symbols_per_cell
        for lv, app_cls in enumerate(SYMBOL_LEVELS):
            bursts = [AppBurst(first + i * epoch + offset_ns, app_cls, iterations, kind.sender)
                      for i in range(symbols_per_cell)]
            r = run_transcript(kind, bits, cfg, thresholds=thr, extra_events=bursts)
            errs = sum(1 for d in r.symbols_decoded if d != s)
            rows.append({"channel": kind.value, "sent_level": s + 1, "app_level": lv + 1,
                         "symbols": symbols_per_cell,
                         "symbol_error_rate": errs / symbols_per_cell})
    return rows


# -- mitigations ------------------------------------------------------------

def mitigation_rows(cfg: MachineConfig, n_bits: int, seed: int,
                    training_repeats: int = 10) -> List[dict]:
    bits = random_bits(n_bits, seed)
    base_thr = {k: calibrate_thresholds(k, cfg) for k in ChannelKind}
    rows = []
    for mit in MITIGATIONS:
        mc = cfg if mit == "none" else cfg.with_mitigations(**{mit: True})
        for k in ChannelKind:
            r = run_transcript(k, bits, mc, thresholds=base_thr[k])
            tps = training_tps(k, mc, repeats=training_repeats)
            means = [float(np.mean(tps[s])) for s in range(4)]
            all_tps = np.concatenate([np.asarray(v, dtype=float) for v in tps.values()])
            try:
                calibrate_thresholds(k, mc, repeats=training_repeats)
                recal = True
            except ThresholdCalibrationError:
                recal = False
            distinct = len(set(means))
            if recal:
                status = "open"
            elif distinct == 4:
                status = "partial"
            else:
                status = "closed"
            rows.append({"mitigation": mit, "channel": k.value,
                         "ber_with_unmitigated_decoder": round(r.ber, 6),
                         "recalibration_succeeds": recal,
                         "distinct_tp_levels": distinct,
                         "tp_variance": round(float(np.var(all_tps)), 3),
                         "level_means_cycles": " ".join(f"{x:.0f}" for x in means),
                         "status": status})
    return rows


# -- electrical limits and guardband trace ----------------------------------

def limits_scenario(cfg: MachineConfig, request_mhz: Optional[int] = None,
                    active_cores: Optional[int] = None, cls=InstructionClass.L256B_HEAVY,
                    run_us: int = 200, sample_ns: int = 1000) -> Tuple[dict, List[dict]]:
    """AVX2 on ``active_cores`` cores at a requested frequency; samples every tick."""
    f0 = request_mhz or cfg.turbo_mhz or max(cfg.freqs_mhz)
    n = active_cores or cfg.turbo_active_cores or cfg.cores
    m = Machine(cfg.machine_params(freq_mhz=f0))
    iters = run_us * f0  # about run_us microseconds of unthrottled work

    def prog():
        yield Sleep(10_000)
        yield Run(cls, iters)

    for c in range(n):
        m.load(c, 0, prog())
    pmu_cfg = m.pmu.cfg
    trace: List[dict] = []
    horizon = 10_000 + run_us * 1000 * 4 + cfg.hysteresis_ns + 100_000

    def sample():
        st = m.pmu.state
        vcc = max(vr.voltage_at(m.now) for vr in m.vrs)
        icc = pmu_cfg.domain_icc(st.granted, vcc, st.freq_mhz)
        trace.append({"time_ns": m.now, "freq_ghz": st.freq_mhz / 1000, "vcc_mv": round(vcc, 3),
                      "icc_a": round(icc, 3), "throttled_cores": sum(st.throttling)})

    for t in range(0, horizon, sample_ns):
        m.at(t, sample)
    m.run()
    admitted = min(f for _, f in m.freq_log)
    worst_vcc = max(r["vcc_mv"] for r in trace)
    worst_icc = max(r["icc_a"] for r in trace)
    admits = [(v, i, f) for _, v, i, f in m.pmu.limit_log]
    result = {
        "requested_ghz": f0 / 1000, "active_cores": n, "class": cls.label,
        "admitted_ghz": admitted / 1000,
        "restored_ghz": m.pmu.state.freq_mhz / 1000,
        "vcc_max_mv": cfg.limits.vcc_max, "icc_max_a": cfg.limits.icc_max,
        "max_sampled_vcc_mv": worst_vcc, "max_sampled_icc_a": worst_icc,
        "max_admitted_vcc_mv": round(max(a[0] for a in admits), 3) if admits else None,
        "max_admitted_icc_a": round(max(a[1] for a in admits), 3) if admits else None,
        "within_limits": bool(worst_vcc <= cfg.limits.vcc_max and worst_icc <= cfg.limits.icc_max
                              and all(a[0] <= cfg.limits.vcc_max and a[1] <= cfg.limits.icc_max
                                      for a in admits)),
    }
    return result, trace


DEFAULT_PHASES = ((0, 400_000, 2_000_000), (1, 800_000, 1_600_000))  # (core, start us, end us)


def guardband_trace(cfg: MachineConfig, phases=DEFAULT_PHASES, freq_mhz: int = 2000,
                    cls=InstructionClass.L256B_HEAVY, sample_us: int = 10_000
                    ) -> Tuple[List[dict], List[dict]]:
    """Shared-regulator voltage while cores enter and leave an AVX2 phase."""
    m = Machine(cfg.machine_params(freq_mhz=freq_mhz, vr_kind=VRKind.SHARED_MOTHERBOARD))

    def prog(start_us, end_us):
        yield Sleep(start_us * 1000)
        yield Run(cls, (end_us - start_us) * freq_mhz)

    for core, a, b in phases:
        m.load(core, 0, prog(a, b))
    end = max(b for _, _, b in phases) * 1000 + cfg.hysteresis_ns + 400_000
    samples: List[dict] = []

    def sample():
        samples.append({"time_s": round(m.now / 1e9, 4), "vcc_mv": round(m.vcc(), 3),
                        "freq_ghz": m.pmu.state.freq_mhz / 1000})

    for t in range(0, end, sample_us * 1000):
        m.at(t, sample)
    m.run(until=end)
    steps = [{"start_s": round(tr.start / 1e9, 6), "end_s": round(tr.end / 1e9, 6),
              "from_mv": round(tr.start_vcc, 3), "to_mv": round(tr.target_vcc, 3),
              "delta_mv": round(tr.target_vcc - tr.start_vcc, 3)}
             for tr in m.vrs[0].completed]
    return samples, steps


# -- registry ---------------------------------------------------------------

DEFAULT_PARAMS: Dict[str, dict] = {
    "tp_characterization": {},
    "tp_prewarm": {},
    "throughput": {"bits": 1000},
    "ber_noise_sweep": {"bits": 1000, "seeds": 20, "rates": [10, 100, 1000, 3000],
                        "kinds": ["interrupt", "context_switch"]},
    "ber_appphi_sweep": {"bits": 1000, "seeds": 20, "rates": [10, 100, 1000, 10000],
                         "grid_symbols": 20},
    "mitigation_matrix": {"bits": 1000},
    "limits_demo": {},
    "guardband_trace": {},
}

EXPERIMENTS = tuple(DEFAULT_PARAMS)


def run_experiment(cfg: MachineConfig, experiment: str, seed: Optional[int] = None,
                   **overrides) -> ExperimentReport:
    if experiment not in DEFAULT_PARAMS:
        raise UnknownExperiment(experiment)
    seed = cfg.seed if seed is None else seed
    unknown = set(overrides) - set(DEFAULT_PARAMS[experiment])
    if unknown:
        raise ConfigError(f"unknown parameters for {experiment}: {sorted(unknown)}")
    params = {**DEFAULT_PARAMS[experiment], **overrides}
    cfg = calibrated_config(cfg)
    rep = ExperimentReport(experiment, cfg.to_dict(), cfg.hash(), seed, params)
    _RUNNERS[experiment](cfg, seed, params, rep)
    return rep


def _tp_characterization(cfg, seed, params, rep):
    rows = tp_characterization_rows(cfg)
    rep.tables["tp"] = rows
    mono = {}
    for f in cfg.freqs_mhz:
        for n in (1, 2):
            tps = [r["tp_us"] for r in rows if r["freq_ghz"] == f / 1000 and r["cores"] == n]
            mono[f"{f / 1000:.1f}GHz_{n}core"] = strictly_increasing(tps)
    rep.summary = {"monotone_in_class_order": mono,
                   "all_monotone": all(mono.values())}


def _tp_prewarm(cfg, seed, params, rep):
    rows = prewarm_rows(cfg)
    rep.tables["prewarm"] = rows
    tps = [r["tp_cycles"] for r in rows]
    rep.summary = {"strictly_decreasing": all(b < a for a, b in zip(tps, tps[1:])),
                   "plateaus": count_plateaus(tps, 0)}


def _throughput(cfg, seed, params, rep):
    rows, details = throughput_rows(cfg, params["bits"], seed)
    rep.tables["throughput"] = rows
    rep.summary = {
        "throughput_bps": {r["channel"]: r["throughput_bps"] for r in rows},
        "ber": {r["channel"]: r["ber"] for r in rows},
        "ratios": {r["channel"]: {n: r[f"ratio_vs_{n}"] for n in PRIOR_CHANNELS_BPS}
                   for r in rows},
        "symbol_cycle_ns": cfg.channel.epoch_ns,
    }
    for k, r in details.items():
        rep.tables[f"transcript_{k}"] = r.rows()


def _ber_noise(cfg, seed, params, rep):
    seeds = [seed + i for i in range(params["seeds"])]
    rows = noise_sweep_rows(cfg, params["rates"], params["kinds"], seeds, params["bits"])
    rep.tables["ber_noise"] = rows
    rep.summary = {"max_mean_ber": max(r["mean_ber"] for r in rows)}


def _ber_appphi(cfg, seed, params, rep):
    seeds = [seed + i for i in range(params["seeds"])]
    rows = appphi_sweep_rows(cfg, params["rates"], seeds, params["bits"])
    rep.tables["ber_appphi"] = rows
    grid = []
    for k in ChannelKind:
        grid += app_level_grid(cfg, k, params["grid_symbols"])
    rep.tables["app_level_grid"] = grid
    means = {}
    for r in rows:
        means.setdefault(r["channel"], []).append(r["mean_ber"])
    rep.summary = {
        "mean_ber_by_rate": {k: dict(zip(map(str, params["rates"]), v)) for k, v in means.items()},
        "errors_only_when_app_level_higher": all(
            (r["symbol_error_rate"] > 0) == (r["app_level"] > r["sent_level"]) for r in grid),
    }


def _mitigation(cfg, seed, params, rep):
    rows = mitigation_rows(cfg, params["bits"], seed)
    rep.tables["mitigation_matrix"] = rows
    rep.summary = {f"{r['mitigation']}/{r['channel']}": r["status"] for r in rows}


def _limits(cfg, seed, params, rep):
    res, trace = limits_scenario(cfg)
    rep.tables["limits_trace"] = trace
    rep.tables["limits"] = [res]
    rep.summary = res


def _guardband(cfg, seed, params, rep):
    samples, steps = guardband_trace(cfg)
    rep.tables["vcc_trace"] = samples
    rep.tables["steps"] = steps
    rep.summary = {"steps_mv": [s["delta_mv"] for s in steps],
                   "baseline_mv": samples[0]["vcc_mv"],
                   "peak_mv": max(s["vcc_mv"] for s in samples),
                   "frequencies_ghz": sorted({s["freq_ghz"] for s in samples})}


_RUNNERS: Dict[str, Callable] = {
    "tp_characterization": _tp_characterization,
    "tp_prewarm": _tp_prewarm,
    "throughput": _throughput,
    "ber_noise_sweep": _ber_noise,
    "ber_appphi_sweep": _ber_appphi,
    "mitigation_matrix": _mitigation,
    "limits_demo": _limits,
    "guardband_trace": _guardband,
}
