"""Send a short text message over each of the three throttling channels.

The receiver first learns four TP ranges from a noiseless training run, then
decodes one 2-bit symbol per 690 us epoch.
"""

from throttlesim.covert import ChannelKind, run_transcript
from throttlesim.harness.calibrate import calibrated_config
from throttlesim.harness.config import load_config

cfg = calibrated_config(load_config("mobile"))
message = "current!"
bits = "".join(format(b, "08b") for b in message.encode())


def to_text(bitstring):
    out = []
    for i in range(0, len(bitstring), 8):
        chunk = bitstring[i:i + 8]
        out.append(chr(int(chunk, 2)) if "-" not in chunk else "?")
    return "".join(out)


for kind in ChannelKind:
    r = run_transcript(kind, bits, cfg)
    print(f"{kind.value:<12} sent {message!r} got {to_text(r.bits_decoded)!r}  "
          f"BER {r.ber:.3f}  {r.throughput:.0f} b/s")
    print("             TP per symbol (cycles): "
          + " ".join(str(t) for t in r.per_symbol_tp[:8]) + " ...")
