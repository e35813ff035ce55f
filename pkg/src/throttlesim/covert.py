"""Covert channels carried by throttling periods.

Each symbol is two bits, sent once per epoch by running a loop of one of four
instruction classes (levels L1..L4).  The receiver times a probe loop with
the TSC and classifies the resulting throttling period (TP) against
thresholds learnt from a noiseless training run.

Three placements are supported:

* ``SAME_THREAD``: sender and receiver are the same hardware thread; the
  receiver's 512b_Heavy probe ramps from wherever the sender left the
  voltage, so a higher sender level gives a *shorter* TP.
* ``CROSS_SMT``: the receiver is the sibling thread running scalar code and
  is throttled together with the sender.
* ``CROSS_CORE``: the receiver, on another core, issues a 128b_Heavy loop
  shortly after the sender; its voltage transition queues behind the
  sender's on the shared regulator.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import SYMBOL_LEVELS, InstructionClass
from .machine import Machine, Probe, Run, Sleep, SyncWait, sync_wait
from .noise import AppBurst, NoiseConfig, NoiseEvent, app_phi_program, install, schedule_events

ERASURE = -1


class ChannelKind(enum.Enum):
    SAME_THREAD = "same_thread"
    CROSS_SMT = "cross_smt"
    CROSS_CORE = "cross_core"

    @property
    def sender(self) -> Tuple[int, int]:
        return (0, 0)

    @property
    def receiver(self) -> Tuple[int, int]:
        return {ChannelKind.SAME_THREAD: (0, 0), ChannelKind.CROSS_SMT: (0, 1),
                ChannelKind.CROSS_CORE: (1, 0)}[self]

    @property
    def probe_class(self) -> InstructionClass:
        return {ChannelKind.SAME_THREAD: InstructionClass.L512B_HEAVY,
                ChannelKind.CROSS_SMT: InstructionClass.SCALAR_64B,
                ChannelKind.CROSS_CORE: InstructionClass.L128B_HEAVY}[self]

    @property
    def inverted(self) -> bool:
        """Higher sender level gives a shorter receiver TP."""
        return self is ChannelKind.SAME_THREAD

    def threads(self) -> List[Tuple[int, int]]:
        return sorted({self.sender, self.receiver})


# -- symbol coding ----------------------------------------------------------

def encode_symbol(symbol: int, levels: Sequence[InstructionClass] = SYMBOL_LEVELS
                  ) -> InstructionClass:
    """2-bit value (0..3, i.e. 00..11) to the sender's instruction class."""
    if not 0 <= symbol < len(levels):
        raise ValueError(f"symbol out of range: {symbol}")
    return levels[symbol]


def bits_to_symbols(bits: str) -> List[int]:
    bits = "".join(bits.split())
    if len(bits) % 2 or set(bits) - {"0", "1"}:
        raise ValueError("bitstring must be an even-length string of 0/1")
    return [int(bits[i:i + 2], 2) for i in range(0, len(bits), 2)]


def symbols_to_bits(symbols: Sequence[int]) -> str:
    return "".join("--" if s == ERASURE else format(s, "02b") for s in symbols)


def bit_errors(sent: int, got: int) -> int:
    if got == ERASURE:
        return 2
    return bin(sent ^ got).count("1")


@dataclass(frozen=True)
class DecodeThresholds:
    """Cut points between TP ranges plus the symbol owning each range.

    ``order[i]`` is the symbol whose range is the i-th from the bottom.  The
    bottom range extends down to zero; TPs above ``upper`` are erasures.
    """

    cuts: Tuple[float, float, float]
    order: Tuple[int, int, int, int]
    means: Tuple[float, float, float, float]
    upper: float

    def __post_init__(self):
        if not self.cuts[0] < self.cuts[1] < self.cuts[2]:
            raise ValueError(f"cut points must be strictly increasing: {self.cuts}")
        if sorted(self.order) != [0, 1, 2, 3]:
            raise ValueError(f"order must be a permutation of the symbols: {self.order}")

    @classmethod
    def from_means(cls, level_means: Dict[int, float]) -> "DecodeThresholds":
        order = tuple(sorted(level_means, key=lambda s: level_means[s]))
        m = [float(level_means[s]) for s in order]
        cuts = tuple((a + b) / 2 for a, b in zip(m, m[1:]))
        return cls(cuts, order, tuple(m), m[-1] + (m[-1] - cuts[-1]))


def decode_symbol(tp_cycles: float, thr: DecodeThresholds) -> int:
    """Symbol whose range holds ``tp_cycles``; a value on a cut goes to the lower range."""
    if tp_cycles > thr.upper:
        return ERASURE
    idx = int(np.searchsorted(thr.cuts, tp_cycles, side="left"))
    return thr.order[idx]


# -- programs ---------------------------------------------------------------

def _align(epoch: int):
    # land on the first epoch boundary strictly after the program's start
    yield Sleep(1)
    yield SyncWait(epoch)


def sender_program(kind: ChannelKind, symbols: Sequence[int], iterations: int, epoch: int,
                   probe: Optional[Probe] = None, log: Optional[list] = None):
    """One PHI loop per epoch; on the same-thread channel the probe follows it."""
    yield from _align(epoch)
    for i, s in enumerate(symbols):
        if i:
            yield SyncWait(epoch)
        yield Run(encode_symbol(s), iterations)
        if kind is ChannelKind.SAME_THREAD:
            tp = yield probe
            log.append(tp)


def receiver_program(n: int, epoch: int, probe: Probe, delay_ns: int, log: list):
    yield from _align(epoch)
    for i in range(n):
        if i:
            yield SyncWait(epoch)
        if delay_ns:
            yield Sleep(delay_ns)
        tp = yield probe
        log.append(tp)


# -- running ----------------------------------------------------------------

@dataclass
class SymbolRun:
    tps: List[int]
    machine: Machine
    first_epoch_ns: int
    epoch_ns: int


def simulate_symbols(kind: ChannelKind, symbols: Sequence[int], cfg,
                     noise: Sequence = (), offsets: Tuple[int, int] = (0, 0),
                     freq_mhz: Optional[int] = None) -> SymbolRun:
    """Run sender and receiver for ``symbols``; returns receiver TPs in cycles.

    ``cfg`` is a calibrated ``MachineConfig``; ``noise`` is a list of
    ``NoiseEvent``/``AppBurst`` with absolute times.
    """
    ch = cfg.channel
    m = Machine(cfg.machine_params(freq_mhz=freq_mhz))
    epoch = ch.epoch_ns
    probe = Probe(kind.probe_class, int(ch.probe_timeout_us * 1000),
                  int(ch.probe_cap_us * 1000), ch.probe_quiet)
    log: List[int] = []
    sc, st = kind.sender
    s_prog = sender_program(kind, symbols, ch.sender_iterations, epoch, probe, log)
    m.at(offsets[0], m.load, sc, st, s_prog)
    if kind is not ChannelKind.SAME_THREAD:
        delay = 0
        if kind is ChannelKind.CROSS_CORE:
            delay = -(-ch.crosscore_delay_cycles * 1000 // m.clock.freq_mhz)
        rc, rt = kind.receiver
        r_prog = receiver_program(len(symbols), epoch, probe, delay, log)
        m.at(offsets[1], m.load, rc, rt, r_prog)
    install(m, noise)
    m.run()
    first = sync_wait(min(offsets) + 1, epoch)
    tps = list(log) + [0] * (len(symbols) - len(log))
    return SymbolRun(tps, m, first, epoch)


class ThresholdCalibrationError(RuntimeError):
    def __init__(self, msg: str, level_means: Dict[int, float]):
        super().__init__(msg)
        self.level_means = level_means


def training_tps(kind: ChannelKind, cfg, repeats: Optional[int] = None,
                 freq_mhz: Optional[int] = None) -> Dict[int, List[int]]:
    n = repeats or cfg.channel.training_repeats
    symbols = [s for _ in range(n) for s in range(4)]
    run = simulate_symbols(kind, symbols, cfg, freq_mhz=freq_mhz)
    out: Dict[int, List[int]] = {s: [] for s in range(4)}
    for s, tp in zip(symbols, run.tps):
        out[s].append(tp)
    return out


def calibrate_thresholds(kind: ChannelKind, cfg, repeats: Optional[int] = None,
                         freq_mhz: Optional[int] = None) -> DecodeThresholds:
    """Noiseless training run; thresholds at midpoints of adjacent level means.

    Raises ``ThresholdCalibrationError`` when two adjacent level means are not
    more than ``cfg.channel.min_gap_cycles`` apart.
    """
    tps = training_tps(kind, cfg, repeats, freq_mhz)
    means = {s: float(np.mean(v)) for s, v in tps.items()}
    ordered = sorted(means.values())
    gaps = np.diff(ordered)
    gap = cfg.channel.min_gap_cycles
    if np.any(gaps <= gap):
        raise ThresholdCalibrationError(
            f"{kind.value}: adjacent TP levels closer than {gap} cycles "
            f"(means {[round(x) for x in ordered]})", means)
    return DecodeThresholds.from_means(means)


@dataclass
class TranscriptResult:
    kind: ChannelKind
    bits_sent: str
    bits_decoded: str
    symbols_sent: List[int]
    symbols_decoded: List[int]
    per_symbol_tp: List[int]
    symbol_start_ns: List[int]
    ber: float
    throughput: float  # bits per second
    symbol_cycle_time: int  # ns
    thresholds: DecodeThresholds
    noise_hits: int = 0

    @property
    def erasures(self) -> int:
        return sum(1 for s in self.symbols_decoded if s == ERASURE)

    def rows(self) -> List[dict]:
        return [{"symbol_index": i, "sent_bits": format(s, "02b"), "tp_cycles": tp,
                 "decoded_bits": symbols_to_bits([d]), "wall_time_ns": t}
                for i, (s, d, tp, t) in enumerate(zip(self.symbols_sent, self.symbols_decoded,
                                                      self.per_symbol_tp,
                                                      self.symbol_start_ns))]


def score(kind: ChannelKind, sent: Sequence[int], tps: Sequence[int],
          thr: DecodeThresholds, epoch: int, first_ns: int) -> TranscriptResult:
    dec = [decode_symbol(tp, thr) for tp in tps]
    errors = sum(bit_errors(s, d) for s, d in zip(sent, dec))
    nbits = 2 * len(sent)
    wall = len(sent) * epoch
    return TranscriptResult(
        kind, symbols_to_bits(sent), symbols_to_bits(dec), list(sent), dec, list(tps),
        [first_ns + i * epoch for i in range(len(sent))],
        errors / nbits if nbits else 0.0, nbits / (wall * 1e-9) if wall else 0.0, epoch, thr)


def run_transcript(kind: ChannelKind, bits: str, cfg, noise: Optional[NoiseConfig] = None,
                   thresholds: Optional[DecodeThresholds] = None,
                   offsets: Tuple[int, int] = (0, 0), app_target: Optional[Tuple[int, int]] = None,
                   extra_events: Sequence = (), freq_mhz: Optional[int] = None
                   ) -> TranscriptResult:
    """Full sender/receiver co-simulation of ``bits``.

    Thresholds are learnt on ``cfg`` unless given (a decoder trained on a
    different machine, e.g. before a mitigation was enabled).
    """
    symbols = bits_to_symbols(bits)
    if thresholds is None:
        thresholds = calibrate_thresholds(kind, cfg, freq_mhz=freq_mhz)
    epoch = cfg.channel.epoch_ns
    horizon = (len(symbols) + 2) * epoch + max(offsets)
    events: List = list(extra_events)
    if noise is not None:
        events += schedule_events(noise, horizon, kind.threads())
        events += app_phi_program(noise, horizon, app_target or kind.sender)
    run = simulate_symbols(kind, symbols, cfg, events, offsets, freq_mhz)
    res = score(kind, symbols, run.tps, thresholds, epoch, run.first_epoch_ns)
    res.noise_hits = len(run.machine.noise_hits)
    return res


def random_bits(n: int, seed: int) -> str:
    rng = np.random.default_rng(seed)
    return "".join(map(str, rng.integers(0, 2, size=n)))


def capacity_bound(cfg, longest_send_ns: int) -> float:
    """Bits/s upper bound: two bits per (reset time + longest symbol transaction)."""
    return 2.0 / ((cfg.hysteresis_ns + longest_send_ns) * 1e-9)
