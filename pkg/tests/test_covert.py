import dataclasses

import numpy as np
import pytest
from hypothesis import given, strategies as st

from throttlesim.core import SYMBOL_LEVELS, InstructionClass
from throttlesim.covert import (ERASURE, ChannelKind, DecodeThresholds,
                                ThresholdCalibrationError, bit_errors, bits_to_symbols,
                                calibrate_thresholds, decode_symbol, encode_symbol, random_bits,
                                run_transcript, simulate_symbols, symbols_to_bits, training_tps)
from throttlesim.harness.calibrate import calibrated_config, simulate_tp_us
from throttlesim.harness.config import load_config
from throttlesim.machine import Machine, Probe

IC = InstructionClass


@pytest.fixture(scope="module")
def cfg():
    return calibrated_config(load_config("mobile"))


@pytest.fixture(scope="module")
def thresholds(cfg):
    return {k: calibrate_thresholds(k, cfg) for k in ChannelKind}


# -- coding -------------------------------------------------------------------

def test_symbol_mapping_endpoints():
    assert encode_symbol(0b00) is IC.L128B_HEAVY
    assert encode_symbol(0b11) is IC.L512B_HEAVY


def test_encoding_is_a_bijection():
    assert sorted(encode_symbol(s).value for s in range(4)) == sorted(
        c.value for c in SYMBOL_LEVELS)
    with pytest.raises(ValueError):
        encode_symbol(4)


@given(st.lists(st.integers(0, 3), max_size=50))
def test_bits_round_trip(symbols):
    assert bits_to_symbols(symbols_to_bits(symbols)) == symbols


def test_bad_bitstrings_rejected():
    for bad in ("1", "012", "10a1"):
        with pytest.raises(ValueError):
            bits_to_symbols(bad)


def test_bit_errors_counts_hamming_and_erasures():
    assert bit_errors(0b00, 0b11) == 2
    assert bit_errors(0b01, 0b00) == 1
    assert bit_errors(0b10, ERASURE) == 2


# -- decoding -------------------------------------------------------------------

def test_four_clusters_give_three_midpoints():
    thr = DecodeThresholds.from_means({0: 1000.0, 1: 4000.0, 2: 7000.0, 3: 12000.0})
    assert thr.cuts == (2500.0, 5500.0, 9500.0)
    assert thr.order == (0, 1, 2, 3)


def test_inverted_levels_decode_to_their_symbols():
    means = {0: 12000.0, 1: 7000.0, 2: 4000.0, 3: 1000.0}
    thr = DecodeThresholds.from_means(means)
    for s, m in means.items():
        assert decode_symbol(m, thr) == s


def test_boundaries_go_to_lower_range():
    means = {0: 1000.0, 1: 4000.0, 2: 7000.0, 3: 12000.0}
    thr = DecodeThresholds.from_means(means)
    for i, cut in enumerate(thr.cuts):
        assert decode_symbol(cut, thr) == thr.order[i]
        assert decode_symbol(np.nextafter(cut, np.inf), thr) == thr.order[i + 1]
    assert decode_symbol(0, thr) == 0
    assert decode_symbol(thr.upper, thr) == 3
    assert decode_symbol(thr.upper + 1, thr) == ERASURE


def test_threshold_validation():
    with pytest.raises(ValueError):
        DecodeThresholds((3.0, 2.0, 5.0), (0, 1, 2, 3), (0, 0, 0, 0), 10.0)
    with pytest.raises(ValueError):
        DecodeThresholds((1.0, 2.0, 5.0), (0, 1, 1, 3), (0, 0, 0, 0), 10.0)


# -- end to end ------------------------------------------------------------------

def test_training_is_noiseless(cfg):
    tps = training_tps(ChannelKind.CROSS_CORE, cfg, repeats=5)
    for v in tps.values():
        assert np.var(v) == 0


def test_same_thread_tp_shrinks_with_sender_level(cfg):
    tps = training_tps(ChannelKind.SAME_THREAD, cfg, repeats=2)
    means = [np.mean(tps[s]) for s in range(4)]
    assert means == sorted(means, reverse=True)


@pytest.mark.parametrize("kind", [ChannelKind.CROSS_SMT, ChannelKind.CROSS_CORE])
def test_cross_channels_tp_grows_with_sender_level(cfg, kind):
    tps = training_tps(kind, cfg, repeats=2)
    means = [np.mean(tps[s]) for s in range(4)]
    assert means == sorted(means)


def test_probe_without_sender_sees_its_own_full_ramp(cfg):
    f = cfg.channel_freq_mhz
    m = Machine(cfg.machine_params(freq_mhz=f))
    out = []

    def prog():
        out.append((yield Probe(IC.L512B_HEAVY, cap_ns=100_000)))

    m.load(0, 0, prog())
    m.run()
    expect = simulate_tp_us(cfg, IC.L512B_HEAVY, f, 1) * f
    # the power-gate wake falls in the untimed warm-up iteration
    slack = m.clock.cycles_for(m.params.wake_latency_ns) + 4
    assert out[0] == pytest.approx(expect, abs=slack)


@pytest.mark.parametrize("kind", list(ChannelKind))
def test_full_alphabet_sweep_is_error_free(cfg, thresholds, kind):
    symbols = [s for _ in range(100) for s in range(4)]
    res = run_transcript(kind, symbols_to_bits(symbols), cfg, thresholds=thresholds[kind])
    assert res.ber == 0.0
    assert res.symbols_decoded == symbols


def test_misaligned_start_does_not_change_ber(cfg, thresholds):
    bits = random_bits(200, 3)
    kind = ChannelKind.CROSS_CORE
    base = run_transcript(kind, bits, cfg, thresholds=thresholds[kind])
    epoch = cfg.channel.epoch_ns
    for off in [(0, epoch // 3), (epoch // 4, 0), (epoch // 2 - 1, 1000)]:
        shifted = run_transcript(kind, bits, cfg, thresholds=thresholds[kind], offsets=off)
        assert shifted.ber == base.ber == 0.0


def test_back_to_back_symbols_without_reset_fail(cfg):
    short = dataclasses.replace(cfg, channel=dataclasses.replace(cfg.channel, epoch_us=100.0))
    run = simulate_symbols(ChannelKind.CROSS_CORE, [3, 3], short)
    assert run.tps[0] > 0 and run.tps[1] == 0


def test_secure_mode_fails_threshold_calibration(cfg):
    secure = calibrated_config(cfg.with_mitigations(secure_mode=True))
    with pytest.raises(ThresholdCalibrationError) as err:
        calibrate_thresholds(ChannelKind.CROSS_CORE, secure, repeats=3)
    assert len(set(err.value.level_means.values())) == 1


def test_per_core_ldo_cross_core_is_chance(cfg, thresholds):
    ldo = calibrated_config(cfg.with_mitigations(per_core_vr=True))
    kind = ChannelKind.CROSS_CORE
    tps = training_tps(kind, ldo, repeats=3)
    assert len({tp for v in tps.values() for tp in v}) == 1
    res = run_transcript(kind, random_bits(1000, 1), ldo, thresholds=thresholds[kind])
    assert res.ber == pytest.approx(0.5, abs=0.06)


def test_throughput_is_two_bits_per_epoch(cfg, thresholds):
    res = run_transcript(ChannelKind.SAME_THREAD, random_bits(100, 0), cfg,
                         thresholds=thresholds[ChannelKind.SAME_THREAD])
    assert res.throughput == pytest.approx(2 / (cfg.channel.epoch_ns * 1e-9))
    assert res.symbol_cycle_time <= 690_000
