"""What breaks the channels: system noise, a PHI-issuing app, and the mitigations.

Interrupts and context switches barely matter; a background app that issues
PHIs at a high rate drives the error rate towards chance, but only for symbols
whose level is below the app's.  Finally the three hardware mitigations are
tried against a decoder trained on the unprotected machine.
"""

from throttlesim.covert import ChannelKind, random_bits, run_transcript
from throttlesim.harness.calibrate import calibrated_config
from throttlesim.harness.config import load_config
from throttlesim.harness.experiments import mitigation_rows
from throttlesim.noise import NoiseConfig

cfg = calibrated_config(load_config("mobile"))
bits = random_bits(400, 7)
kind = ChannelKind.CROSS_CORE

print("System noise (CrossCore, 400 bits):")
for ev_kind in ("interrupt", "context_switch"):
    for rate in (100, 1000, 3000):
        r = run_transcript(kind, bits, cfg, NoiseConfig(event_rate=rate, event_kind=ev_kind,
                                                        seed=3))
        print(f"  {ev_kind:<15} {rate:5d}/s  BER {r.ber:.3f}")

print("\nBackground app issuing PHI bursts:")
for rate in (10, 100, 1000, 10000):
    r = run_transcript(kind, bits, cfg, NoiseConfig(app_phi_rate=rate, seed=3))
    print(f"  {rate:5d} bursts/s  BER {r.ber:.3f}")

print("\nMitigations (decoder trained without them):")
for row in mitigation_rows(cfg, 200, 7):
    print(f"  {row['mitigation']:<20} {row['channel']:<12} {row['status']:<8} "
          f"BER {row['ber_with_unmitigated_decoder']:.2f}  level means {row['level_means_cycles']}")
