"""Run the desk-scale Fig. 3 sweeps and print the ASK/PAM comparison.

    python scripts/fig3_sweeps.py --presets fig3a fig3b --L 3 7 11 --out results/

Each preset writes ``<out>/<preset>.csv`` (plus the plot-data JSON next to
it). Expect ~1.5 minutes per (preset, L) pair on one CPU at the default
n = 4000; more with ``--fit-iterations``.
"""

import argparse
import time
from pathlib import Path

from ddair.sweep import horizontal_gain, preset, run_sweep, series


def summarize(rows, L_values, rates=(1.5, 1.8)):
    att, _ = series(rows, rows[0].constellation, L_values[0])
    print("  att dB     " + " ".join(f"{a:6.1f}" for a in att))
    for L in L_values:
        for kind in ("ASK", "PAM"):
            _, air = series(rows, kind, L)
            print(f"  {kind} L={L:<3d}  " + " ".join(f"{v:6.3f}" for v in air))
    for L in L_values:
        gains = ", ".join(f"{horizontal_gain(rows, L, r):+.2f} dB @ {r}" for r in rates)
        print(f"  ASK-PAM horizontal gain L={L}: {gains}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--presets", nargs="+", default=["fig3a", "fig3b"])
    ap.add_argument("--L", nargs="+", type=int, default=[3, 11])
    ap.add_argument("--n", type=int, default=None, help="symbols per point (preset: 4000)")
    ap.add_argument("--fit-iterations", type=int, default=None)
    ap.add_argument("--seeds", nargs="+", type=int, default=[1])
    ap.add_argument("--out", default="results")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in args.presets:
        over = dict(L_values=tuple(args.L), seeds=tuple(args.seeds), output=str(out / f"{name}.csv"))
        if args.n is not None:
            over.update(n=args.n, pilot_count=args.n // 2)
        if args.fit_iterations is not None:
            over["fit_iterations"] = args.fit_iterations
        t0 = time.time()
        rows = run_sweep(preset(name, **over),
                         progress=lambda r: print(f"    {r.constellation} L={r.L} {r.attenuation_dB:4.1f} dB"
                                                  f" -> {r.air_bpcu:.3f}", flush=True))
        print(f"{name}: {len(rows)} rows in {time.time() - t0:.0f} s -> {out / (name + '.csv')}")
        summarize(rows, args.L)


if __name__ == "__main__":
    main()
