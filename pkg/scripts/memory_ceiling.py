"""How much of the pulse a memory-L receiver sees: AIR with the true (truncated) taps.

Evaluates the holdout AIR of the fig3a links using the physical response
truncated to L taps and the true noise variances, i.e. without any fitting.
With an alpha = 0.2 raised cosine at T/2 spacing the taps vanish at whole
symbol offsets, so L = 13 adds nothing over L = 11; the next non-zero tail
taps sit 3.5 symbols out and need L = 15. For PAM that residual ISI is
mostly a DC offset the auxiliary bias absorbs; for ASK it acts as noise and
caps the rate below log2(Q).

    python scripts/memory_ceiling.py --att 0 8 --L 7 9 11 13
"""

import argparse

import numpy as np

from ddair.constellation import SymbolBlock
from ddair.density import AuxChannelParams
from ddair.sweep import RatePoint, preset, simulate_link
from ddair.trellis import estimate_air


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--preset", default="fig3a")
    ap.add_argument("--att", nargs="+", type=float, default=[0.0, 8.0])
    ap.add_argument("--L", nargs="+", type=int, default=[7, 9, 11, 13])
    args = ap.parse_args()

    cfg = preset(args.preset)
    k = cfg.pilot_count
    rc = np.real(simulate_link(cfg, "PAM", 0.0, 0).response.truncated(31))
    print("response taps (T/2 spacing, centre +-15):", np.round(rc / rc.max(), 3).tolist())
    for kind in ("ASK", "PAM"):
        for att in args.att:
            point = RatePoint(cfg, kind, max(args.L), att, cfg.seeds[0])
            link = simulate_link(cfg, kind, att, point.capture_seed)
            x = np.asarray(link.symbols.symbols)
            c = link.symbols.constellation
            airs = []
            for L in args.L:
                p = AuxChannelParams(link.gain * link.response.truncated(L),
                                     var_pre=link.noise.var_pre, var_post=link.noise.var_post)
                airs.append(estimate_air(link.received[2 * k:], SymbolBlock(x[k:], c), p).air)
            print(f"{kind} {att:4.1f} dB  " + "  ".join(f"L={L}: {a:.3f}" for L, a in zip(args.L, airs)),
                  flush=True)


if __name__ == "__main__":
    main()
