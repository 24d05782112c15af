"""Plot sweep CSVs in the style of Fig. 3: AIR vs attenuation, ASK solid, PAM dotted.

    python scripts/plot_fig3.py results/fig3a.csv results/fig3b.csv --png fig3.png

Without matplotlib the curves are printed as a table instead.
"""

import argparse

from ddair.sweep import read_csv, series

COLORS = {1: "tab:gray", 3: "tab:green", 5: "tab:orange", 7: "tab:red", 9: "tab:purple", 11: "tab:blue"}


def curves(rows):
    Ls = sorted({r.L for r in rows})
    for L in Ls:
        for kind in ("ASK", "PAM"):
            att, air = series(rows, kind, L)
            if len(att):
                yield kind, L, att, air


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("csv", nargs="+")
    ap.add_argument("--png", default=None, help="output image (default: show the window)")
    args = ap.parse_args()
    data = [(path, read_csv(path)) for path in args.csv]

    try:
        import matplotlib
        if args.png:
            matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        for path, rows in data:
            print(path)
            for kind, L, att, air in curves(rows):
                print(f"  {kind} L={L:<3d} " + " ".join(f"{a:g}:{v:.3f}" for a, v in zip(att, air)))
        return

    fig, axes = plt.subplots(1, len(data), figsize=(5 * len(data), 4), squeeze=False)
    for ax, (path, rows) in zip(axes[0], data):
        for kind, L, att, air in curves(rows):
            ax.plot(att, air, "-" if kind == "ASK" else ":", marker="o" if kind == "ASK" else "x",
                    color=COLORS.get(L, "k"), label=f"{kind} L={L}")
        ax.set_xlabel("attenuation (dB)")
        ax.set_ylabel("AIR (bpcu)")
        ax.set_title(path)
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    if args.png:
        fig.savefig(args.png, dpi=120)
    else:
        plt.show()


if __name__ == "__main__":
    main()
