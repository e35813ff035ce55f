"""Electrical limits and the per-core guardband staircase.

On the desktop preset an AVX2 loop at 4.9 GHz would need more than the 1.27 V
limit, so the PMU runs it at 4.8 GHz; on the mobile preset two AVX2 cores at
3.1 GHz would draw more than 29 A and drop to 2.2 GHz.  The guardband trace
shows the supply voltage stepping up once per AVX2 core and back down after
each core's hysteresis expires.
"""

from throttlesim.harness.calibrate import calibrated_config
from throttlesim.harness.config import load_config
from throttlesim.harness.experiments import guardband_trace, limits_scenario

for preset in ("desktop", "mobile"):
    cfg = calibrated_config(load_config(preset))
    res, _ = limits_scenario(cfg)
    print(f"{preset:<8} AVX2 x{res['active_cores']} requested {res['requested_ghz']} GHz -> "
          f"ran at {res['admitted_ghz']} GHz (peak {res['max_sampled_vcc_mv']:.1f} mV, "
          f"{res['max_sampled_icc_a']:.2f} A; limits {res['vcc_max_mv']} mV, {res['icc_max_a']} A)")

cfg = calibrated_config(load_config("desktop"))
samples, steps = guardband_trace(cfg)
print("\nGuardband steps on the desktop preset at 2 GHz:")
for s in steps:
    print(f"  t={s['start_s']:.3f} s  {s['from_mv']:.1f} -> {s['to_mv']:.1f} mV "
          f"({s['delta_mv']:+.2f} mV)")
