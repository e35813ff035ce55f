"""Machine configuration files.

Configs are INI files (``configparser``) with a fixed schema; unknown
sections or keys are rejected.  Frequencies are written in GHz, voltages in
mV, currents in A and times in the unit named by the key suffix.

Example::

    [machine]
    name = mobile
    cores = 2
    freqs_ghz = 1.0, 1.2, 1.4
    channel_freq_ghz = 1.4
    vr_kind = mbvr
    r_ll_mohm = 2.0
    icc_lkg_a = 13.0
    seed = 1

    [vf_table]
    1.0 = 700
    3.1 = 1050

    [cdyn]
    source = calibrate

See ``presets/*.ini`` for complete files.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from ..core import CLASS_ORDER, InstructionClass, ThrottleMode, check_cdyn_table
from ..machine import MachineParams
from ..pdn import IccModel, LoadLineParams, VRKind
from ..pmu import ConfigError, LimitsConfig, PmuConfig

_VR_NAMES = {k.value: k for k in VRKind}

SCHEMA: Dict[str, Optional[Dict[str, type]]] = {
    "machine": {
        "name": str, "cores": int, "freqs_ghz": list, "channel_freq_ghz": float,
        "vr_kind": str, "r_ll_mohm": float, "icc_lkg_a": float, "hysteresis_us": float,
        "wake_latency_ns": int, "freq_step_mhz": int, "min_freq_ghz": float, "seed": int,
        "turbo_ghz": float, "turbo_active_cores": int,
    },
    "vf_table": None,  # free keys: GHz -> mV
    "cdyn": None,  # source = calibrate | table, plus class labels
    "vr": {
        "mbvr_slew_mv_per_us": float, "ivr_slew_mv_per_us": float,
        "ldo_slew_mv_per_us": float, "mbvr_latency_ns": int, "ivr_latency_ns": int,
        "ldo_latency_ns": int,
    },
    "calibration": {"targets": str, "anchor_class": str, "anchor_cdyn": float,
                    "tolerance": float},
    "limits": {"icc_max_a": float, "vcc_max_mv": float, "vcc_min_mv": float,
               "tj_max_c": float},
    "mitigations": {"per_core_vr": bool, "improved_throttling": bool, "secure_mode": bool},
    "channel": {"epoch_us": float, "sender_iterations": int, "probe_timeout_us": float,
                "probe_cap_us": float, "probe_quiet": int, "crosscore_delay_cycles": int,
                "training_repeats": int, "min_gap_cycles": int},
}


@dataclass(frozen=True)
class Mitigations:
    per_core_vr: bool = False
    improved_throttling: bool = False
    secure_mode: bool = False


@dataclass(frozen=True)
class ChannelSettings:
    epoch_us: float = 690.0
    sender_iterations: int = 3000
    probe_timeout_us: float = 20.0
    probe_cap_us: float = 60.0
    probe_quiet: int = 64
    crosscore_delay_cycles: int = 200
    training_repeats: int = 50
    min_gap_cycles: int = 2000

    @property
    def epoch_ns(self) -> int:
        return int(round(self.epoch_us * 1000))


@dataclass(frozen=True)
class MachineConfig:
    name: str = "machine"
    cores: int = 2
    freqs_mhz: Tuple[int, ...] = (1000, 1200, 1400)
    channel_freq_mhz: int = 1400
    vr_kind: VRKind = VRKind.SHARED_MOTHERBOARD
    r_ll: float = 2.0
    icc_lkg: float = 0.0
    hysteresis_ns: int = 650_000
    wake_latency_ns: int = 8
    freq_step_mhz: int = 100
    min_freq_mhz: int = 800
    seed: int = 1
    turbo_mhz: Optional[int] = None  # frequency requested in the limits scenario
    turbo_active_cores: Optional[int] = None
    vf_table: Tuple[Tuple[int, float], ...] = ((1000, 700.0), (2000, 800.0))
    cdyn: Optional[Tuple[Tuple[str, float], ...]] = None  # None => calibrate
    slew: Tuple[Tuple[str, float], ...] = ()  # VR kind value -> mV/us; missing => calibrate
    vr_latency_ns: Tuple[Tuple[str, int], ...] = (("mbvr", 0), ("ivr", 0), ("ldo", 0))
    targets: Optional[str] = None
    anchor_class: str = "256b_Heavy"
    anchor_cdyn: float = 3.697
    tolerance: float = 0.01
    limits: LimitsConfig = field(default_factory=LimitsConfig)
    mitigations: Mitigations = field(default_factory=Mitigations)
    channel: ChannelSettings = field(default_factory=ChannelSettings)
    source: Optional[str] = None

    # -- derived views ----------------------------------------------------
    @property
    def effective_vr_kind(self) -> VRKind:
        return VRKind.PER_CORE_LDO if self.mitigations.per_core_vr else self.vr_kind

    @property
    def cdyn_table(self) -> Optional[Dict[InstructionClass, float]]:
        if self.cdyn is None:
            return None
        return {InstructionClass.from_label(k): v for k, v in self.cdyn}

    def slew_for(self, kind: VRKind) -> Optional[float]:
        return dict(self.slew).get(kind.value)

    def latency_for(self, kind: VRKind) -> int:
        return dict(self.vr_latency_ns).get(kind.value, 0)

    def with_mitigations(self, **flags) -> "MachineConfig":
        return replace(self, mitigations=replace(self.mitigations, **flags))

    def with_calibration(self, cdyn: Dict[InstructionClass, float],
                         slew: Dict[VRKind, float],
                         latency: Dict[VRKind, int]) -> "MachineConfig":
        return replace(
            self,
            cdyn=tuple((c.label, float(cdyn[c])) for c in CLASS_ORDER),
            slew=tuple(sorted((k.value, float(v)) for k, v in slew.items())),
            vr_latency_ns=tuple(sorted((k.value, int(v)) for k, v in latency.items())),
        )

    def pmu_config(self, cdyn: Optional[Dict[InstructionClass, float]] = None) -> PmuConfig:
        table = cdyn if cdyn is not None else self.cdyn_table
        if table is None:
            raise ConfigError("cdyn table not available; run calibration first")
        return PmuConfig(
            n_cores=self.cores, vf_table=self.vf_table, cdyn=dict(table),
            ll=LoadLineParams(self.r_ll), icc=IccModel(self.icc_lkg), limits=self.limits,
            hysteresis_ns=self.hysteresis_ns, freq_step_mhz=self.freq_step_mhz,
            min_freq_mhz=self.min_freq_mhz, secure_mode=self.mitigations.secure_mode)

    def machine_params(self, freq_mhz: Optional[int] = None,
                       vr_kind: Optional[VRKind] = None) -> MachineParams:
        kind = vr_kind or self.effective_vr_kind
        slew = self.slew_for(kind)
        if slew is None:
            raise ConfigError(f"no slew rate for {kind.value}; run calibration first")
        mode = (ThrottleMode.PER_THREAD_IMPROVED if self.mitigations.improved_throttling
                else ThrottleMode.ENTIRE_CORE)
        return MachineParams(pmu=self.pmu_config(), vr_kind=kind, slew=slew,
                             vr_latency_ns=self.latency_for(kind),
                             freq_mhz=freq_mhz or self.channel_freq_mhz,
                             throttle_mode=mode, wake_latency_ns=self.wake_latency_ns)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["vr_kind"] = self.vr_kind.value
        d.pop("source")
        return d

    def hash(self) -> str:
        """Stable digest of the semantic content (independent of file layout)."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- parsing ----------------------------------------------------------------

def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _parse(section: str, key: str, raw: str, typ: type):
    try:
        if typ is bool:
            return _parse_bool(raw)
        if typ is list:
            return [float(x) for x in raw.replace(",", " ").split()]
        return typ(raw.strip())
    except ValueError as e:
        raise ConfigError(f"[{section}] {key}: {e}") from None


def _ghz_to_mhz(g: float) -> int:
    return int(round(g * 1000))


def parse_config(text: str, source: Optional[str] = None) -> MachineConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep class labels case-sensitive
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(str(e)) from None
    vals: Dict[str, Dict[str, object]] = {}
    for sec in cp.sections():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]")
        keys = SCHEMA[sec]
        vals[sec] = {}
        for k, raw in cp.items(sec):
            if keys is None:
                vals[sec][k] = raw
                continue
            if k not in keys:
                raise ConfigError(f"unknown key {k!r} in [{sec}]")
            vals[sec][k] = _parse(sec, k, raw, keys[k])

    m = vals.get("machine", {})
    kw: Dict[str, object] = {"source": source}
    for k in ("name", "cores", "seed", "wake_latency_ns", "freq_step_mhz"):
        if k in m:
            kw[k] = m[k]
    if "r_ll_mohm" in m:
        kw["r_ll"] = m["r_ll_mohm"]
    if "icc_lkg_a" in m:
        kw["icc_lkg"] = m["icc_lkg_a"]
    if "hysteresis_us" in m:
        kw["hysteresis_ns"] = int(round(m["hysteresis_us"] * 1000))
    if "freqs_ghz" in m:
        kw["freqs_mhz"] = tuple(_ghz_to_mhz(g) for g in m["freqs_ghz"])
    if "channel_freq_ghz" in m:
        kw["channel_freq_mhz"] = _ghz_to_mhz(m["channel_freq_ghz"])
    if "turbo_ghz" in m:
        kw["turbo_mhz"] = _ghz_to_mhz(m["turbo_ghz"])
    if "turbo_active_cores" in m:
        kw["turbo_active_cores"] = m["turbo_active_cores"]
    if "min_freq_ghz" in m:
        kw["min_freq_mhz"] = _ghz_to_mhz(m["min_freq_ghz"])
    if "vr_kind" in m:
        if m["vr_kind"] not in _VR_NAMES:
            raise ConfigError(f"vr_kind must be one of {sorted(_VR_NAMES)}")
        kw["vr_kind"] = _VR_NAMES[m["vr_kind"]]

    if "vf_table" in vals:
        try:
            pts = sorted((_ghz_to_mhz(float(k)), float(v)) for k, v in vals["vf_table"].items())
        except ValueError as e:
            raise ConfigError(f"[vf_table]: {e}") from None
        if len(pts) < 1 or any(b[1] < a[1] for a, b in zip(pts, pts[1:])):
            raise ConfigError("[vf_table] must be non-empty and non-decreasing in voltage")
        kw["vf_table"] = tuple(pts)

    cd = dict(vals.get("cdyn", {}))
    src = cd.pop("source", "calibrate" if not cd else "table")
    if src == "table":
        try:
            table = {InstructionClass.from_label(k): float(v) for k, v in cd.items()}
        except (KeyError, ValueError) as e:
            raise ConfigError(f"[cdyn]: bad entry {e}") from None
        if set(table) != set(CLASS_ORDER):
            raise ConfigError("[cdyn] table must list all seven classes")
        try:
            check_cdyn_table(table)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        kw["cdyn"] = tuple((c.label, table[c]) for c in CLASS_ORDER)
    elif src != "calibrate" or cd:
        raise ConfigError("[cdyn] source must be 'calibrate' (no other keys) or 'table'")

    vr = vals.get("vr", {})
    kw["slew"] = tuple(sorted((k.split("_")[0], v) for k, v in vr.items() if "slew" in k))
    lat = dict(MachineConfig.vr_latency_ns)
    lat.update({k.split("_")[0]: v for k, v in vr.items() if "latency" in k})
    kw["vr_latency_ns"] = tuple(sorted(lat.items()))

    cal = vals.get("calibration", {})
    for k in ("targets", "anchor_class", "anchor_cdyn", "tolerance"):
        if k in cal:
            kw[k] = cal[k]

    lim = vals.get("limits", {})
    kw["limits"] = LimitsConfig(
        icc_max=lim.get("icc_max_a", 100.0), vcc_max=lim.get("vcc_max_mv", 1270.0),
        vcc_min=lim.get("vcc_min_mv", 500.0), tj_max=lim.get("tj_max_c"))
    kw["mitigations"] = Mitigations(**vals.get("mitigations", {}))
    kw["channel"] = ChannelSettings(**vals.get("channel", {}))
    cfg = MachineConfig(**kw)
    if cfg.cores < 1:
        raise ConfigError("cores must be >= 1")
    return cfg


PRESETS = ("mobile", "desktop")


def preset_text(name: str) -> str:
    try:
        return resources.files(__package__).joinpath("presets", f"{name}.ini").read_text()
    except FileNotFoundError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}") from None


def load_config(path_or_preset: Union[str, Path]) -> MachineConfig:
    """Load a config file, or a bundled preset by name (``mobile``, ``desktop``)."""
    p = Path(path_or_preset)
    if p.suffix == ".ini" or p.exists():
        try:
            text = p.read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {p}: {e}") from None
        return parse_config(text, source=str(p))
    return parse_config(preset_text(str(path_or_preset)), source=f"preset:{path_or_preset}")


def targets_path(cfg: MachineConfig) -> Path:
    bundled = Path(str(resources.files(__package__).joinpath("presets")))
    if cfg.targets is None:
        return bundled / "tp_targets.csv"
    p = Path(cfg.targets)
    if p.is_absolute():
        return p
    if cfg.source and not cfg.source.startswith("preset:"):
        return Path(cfg.source).parent / p
    return bundled / p
