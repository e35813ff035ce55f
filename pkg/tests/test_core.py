import pytest
from hypothesis import given, strategies as st

from throttlesim.core import (BASELINE, CLASS_ORDER, DEFAULT_CDYN, SYMBOL_LEVELS, CoreClock,
                              CoreState, InstructionClass, Phase, ThrottleMode, Unit,
                              check_cdyn_table, deliveries, finish_cycle,
                              idq_undelivered_fraction, issue_phi, powergate_wake, set_throttle)

IC = InstructionClass


def _core(freq_mhz=1000, mode=ThrottleMode.ENTIRE_CORE):
    c = CoreState(0, CoreClock(freq_mhz))
    c.gate.mode = mode
    for pg in c.power_gates.values():
        pg.wake_latency = 0
    return c


def test_class_order_and_labels():
    assert list(CLASS_ORDER) == sorted(CLASS_ORDER)
    assert IC.from_label("256b_Heavy") is IC.L256B_HEAVY
    assert [c.label for c in SYMBOL_LEVELS] == ["128b_Heavy", "256b_Light", "256b_Heavy",
                                                "512b_Heavy"]
    assert not BASELINE.is_phi and all(c.is_phi for c in CLASS_ORDER[1:])


def test_cdyn_table_must_increase():
    check_cdyn_table(DEFAULT_CDYN)
    bad = dict(DEFAULT_CDYN)
    bad[IC.L256B_LIGHT] = bad[IC.L128B_HEAVY]
    with pytest.raises(ValueError):
        check_cdyn_table(bad)


def test_unthrottled_thread_retires_one_per_cycle():
    c = _core()
    c.threads[0].program = [Phase(IC.L128B_HEAVY, 5000)]
    retired = sum(a for a, _ in c.run(1000))
    assert retired == 1000


def test_entire_core_throttle_delivers_one_cycle_in_four():
    c = _core()
    c.threads[0].program = [Phase(IC.L256B_HEAVY, 10_000)]
    c.gate.active = True
    out = c.run(4000)
    assert sum(1 for a, _ in out if a) == 1000
    assert idq_undelivered_fraction(c) == pytest.approx(0.75)


def test_sibling_thread_slowed_to_a_quarter():
    c = _core()
    c.threads[0].program = [Phase(IC.L512B_HEAVY, 100_000)]
    c.threads[1].program = [Phase(IC.SCALAR_64B, 100_000)]
    free = sum(b for _, b in _core_run_free(4000))
    c.gate.active = True
    gated = sum(b for _, b in c.run(4000))
    assert gated * 4 == free


def _core_run_free(n):
    c = _core()
    c.threads[1].program = [Phase(IC.SCALAR_64B, 100_000)]
    return c.run(n)


def test_improved_throttling_leaves_scalar_sibling_alone():
    c = _core(mode=ThrottleMode.PER_THREAD_IMPROVED)
    c.threads[0].program = [Phase(IC.L512B_HEAVY, 100_000)]
    c.threads[1].program = [Phase(IC.SCALAR_64B, 100_000)]
    c.gate.active = True
    out = c.run(4000)
    assert sum(a for a, _ in out) == 1000
    assert sum(b for _, b in out) == 8000


def test_gate_request_takes_effect_at_next_cycle():
    c = _core()
    c.threads[0].program = [Phase(IC.L128B_HEAVY, 100)]
    set_throttle(c, True)
    set_throttle(c, False)
    c.run(40)
    assert c.gated_cycles == 0


@given(st.integers(0, 50), st.integers(1, 300), st.booleans())
def test_closed_form_matches_cycle_stepping(start, uops, gated):
    c = _core()
    c.cycle = start
    c.gate.active = gated
    c.threads[0].program = [Phase(IC.L128B_HEAVY, uops)]
    while c.threads[0].current is not None:
        c.step_cycle()
    assert c.cycle == finish_cycle(start, uops, 1, gated)
    assert deliveries(start, c.cycle, gated) >= uops


@given(st.integers(0, 100), st.integers(0, 100), st.booleans())
def test_deliveries_counts_delivery_cycles(c0, span, gated):
    c1 = c0 + span
    brute = sum(1 for x in range(c0, c1) if not gated or x % 4 == 0)
    assert deliveries(c0, c1, gated) == brute


def test_tsc_counts_cycles_across_throttle():
    c = _core()
    c.threads[0].program = [Phase(IC.L256B_HEAVY, 300)]
    c.run(300)
    free = c.threads[0].tsc
    c2 = _core()
    c2.threads[0].program = [Phase(IC.L256B_HEAVY, 300)]
    c2.gate.active = True
    while c2.threads[0].current is not None:
        c2.step_cycle()
    assert free == 300
    assert c2.threads[0].tsc == pytest.approx(4 * 300, abs=4)


def test_power_gate_wake_latency():
    c = CoreState(0, CoreClock(1000))
    assert powergate_wake(c, Unit.AVX256, 100) == 108
    assert powergate_wake(c, Unit.AVX256, 120) == 120


def test_issue_phi_only_above_covered_level():
    assert issue_phi(0, IC.SCALAR_64B, BASELINE, 0) is None
    assert issue_phi(0, IC.L128B_HEAVY, IC.L256B_LIGHT, 0) is None
    req = issue_phi(1, IC.L512B_HEAVY, IC.L256B_LIGHT, 7)
    assert (req.core, req.cls, req.time) == (1, IC.L512B_HEAVY, 7)
