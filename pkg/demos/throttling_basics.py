"""How a power-hungry loop is throttled while the regulator ramps.

Runs one 256b_Heavy loop on an idle mobile machine, then the same loop on two
cores, and prints the throttle windows and the voltage the regulator settled at.
Afterwards it shows the multi-level structure: each class gets its own
throttling period, and a prior loop of a lighter class shortens the next one.
"""

from throttlesim.core import CLASS_ORDER, InstructionClass
from throttlesim.harness.calibrate import calibrated_config, simulate_tp_us
from throttlesim.harness.config import load_config
from throttlesim.harness.experiments import prewarm_rows
from throttlesim.machine import Machine, Run

cfg = calibrated_config(load_config("mobile"))


def avx2_on(cores, freq_mhz=1000):
    m = Machine(cfg.machine_params(freq_mhz=freq_mhz))
    for c in range(cores):
        m.load(c, 0, (op for op in [Run(InstructionClass.L256B_HEAVY, 40_000)]))
    m.run(until=30_000)
    return m


for cores in (1, 2):
    m = avx2_on(cores)
    windows = [m.throttle_periods(c)[0] / 1000 for c in range(cores)]
    print(f"AVX2 on {cores} core(s) at 1 GHz: throttled for "
          + ", ".join(f"{w:.2f} us" for w in windows)
          + f"; Vcc now {m.vcc():.1f} mV")

print("\nThrottling period from reset, 1 core (us):")
print("class        " + "  ".join(f"{f / 1000:.1f}GHz" for f in cfg.freqs_mhz))
for c in CLASS_ORDER:
    tps = [simulate_tp_us(cfg, c, f, 1) for f in cfg.freqs_mhz]
    print(f"{c.label:<12} " + "  ".join(f"{t:6.2f}" for t in tps))

print("\n512b_Heavy probe after a loop of the given class (cycles at 1.4 GHz):")
for row in prewarm_rows(cfg):
    print(f"  after {row['preceding_class']:<11} {row['tp_cycles']:6d}")
