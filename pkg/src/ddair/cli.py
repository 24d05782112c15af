"""Command line entry point: simulate, fit, rate, sweep, oracle.

Every flag may also come from a config file (``--config FILE``) holding
``key = value`` lines under bracketed section headers; keys are the long
flag names with dashes or underscores. Command line flags win.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from dataclasses import replace

import numpy as np

from . import io as ddio
from .channel import PulseParams, raised_cosine
from .constellation import make_constellation
from .density import AuxChannelParams
from .fitting import FitConfig, fit
from .sweep import (FIBERS, PRESETS, RatePoint, SweepConfig, preset, run_rate_point, run_sweep,
                    simulate_link)
from .sync import resample_to_2sps, synchronize
from .trellis import brute_force_log_marginal, estimate_air, forward_log_marginal

SYNC_PILOTS = 512


def _floats(s):
    return tuple(float(v) for v in str(s).replace(",", " ").split())


def _ints(s):
    return tuple(int(v) for v in str(s).replace(",", " ").split())


def _words(s):
    return tuple(str(s).replace(",", " ").split())


def _link_args(p, defaults=True):
    p.add_argument("--constellation", default="ASK" if defaults else None,
                   help="ASK or PAM (sweep: comma separated list)")
    p.add_argument("--Q", type=int, default=4 if defaults else None, help="constellation order")
    p.add_argument("--fiber", choices=sorted(FIBERS), default="B2B" if defaults else None)
    p.add_argument("--n", type=int, default=None, help="symbols per block")
    p.add_argument("--tx-snr-dB", type=float, default=None, help="transmitter SNR at launch (dB)")
    p.add_argument("--var-pre-rx", type=float, default=None,
                   help="pre-detection noise added after the attenuator (mW)")
    p.add_argument("--var-post", type=float, default=None, help="post-detection noise variance (mW^2)")
    p.add_argument("--launch-power-dBm", type=float, default=None)
    p.add_argument("--seed", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ddair", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", help="key = value config file with [section] headers")
    sub = ap.add_subparsers(dest="command", required=True)
    ap.commands = {}

    p = sub.add_parser("simulate", help="simulate a link and write a 2 SPS capture")
    ap.commands["simulate"] = p
    _link_args(p)
    p.add_argument("--attenuation-dB", type=float, default=0.0)
    p.add_argument("--out", required=True, help="capture file to write")
    p.add_argument("--symbols-out", required=True, help=".npy file for the transmitted symbols")

    p = sub.add_parser("fit", help="fit auxiliary parameters on the pilots of a capture")
    ap.commands["fit"] = p
    p.add_argument("--capture", required=True)
    p.add_argument("--symbols", required=True, help=".npy file of transmitted symbols")
    p.add_argument("--constellation", default="ASK")
    p.add_argument("--Q", type=int, default=4)
    p.add_argument("--L", type=int, default=3)
    p.add_argument("--pilots", type=int, default=5000)
    p.add_argument("--iterations", type=int, default=40)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--prior", choices=["none"] + sorted(FIBERS), default="none",
                   help="physical response used to initialize the taps")
    p.add_argument("--out", required=True, help="parameter file to write")

    p = sub.add_parser("rate", help="AIR of one rate point")
    ap.commands["rate"] = p
    p.add_argument("--params", help="evaluate this parameter file on --capture/--symbols")
    p.add_argument("--capture")
    p.add_argument("--symbols")
    p.add_argument("--skip", type=int, default=0, help="leading symbols to skip (the pilots)")
    _link_args(p)
    p.add_argument("--L", type=int, default=3)
    p.add_argument("--attenuation-dB", type=float, default=0.0)
    p.add_argument("--pilot-count", type=int, default=None)
    p.add_argument("--fit-iterations", type=int, default=None)

    p = sub.add_parser("sweep", help="attenuation sweep to CSV")
    ap.commands["sweep"] = p
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    _link_args(p, defaults=False)
    p.add_argument("--L-values", default=None, help="comma separated odd tap counts")
    p.add_argument("--attenuations-dB", default=None, help="comma separated attenuations")
    p.add_argument("--seeds", default=None)
    p.add_argument("--pilot-count", type=int, default=None)
    p.add_argument("--fit-iterations", type=int, default=None)
    p.add_argument("--fit-restarts", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True, help="CSV path; plot data goes next to it")

    p = sub.add_parser("oracle", help="forward recursion vs exhaustive enumeration")
    ap.commands["oracle"] = p
    p.add_argument("--instances", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-10)
    return ap


def _apply_config(ap, argv):
    """Parse twice: config file values become defaults, explicit flags override.

    Required flags are only enforced after the config file has been applied,
    so a file may supply them too.
    """
    required = {}
    for name, sub in ap.commands.items():
        for act in sub._actions:
            if act.required and act.option_strings:
                act.required = False
                required.setdefault(name, []).append(act)
    args = ap.parse_args(argv)
    if args.config:
        values = ddio.read_config(args.config)
        sub = ap.commands[args.command]
        # config keys arrive lower-cased
        known = {a.dest.lower(): a for a in sub._actions}
        defaults = {}
        for key, val in values.items():
            k = key.replace("-", "_").lower()
            if k in known:
                act = known[k]
                defaults[act.dest] = act.type(val) if act.type else val
        sub.set_defaults(**defaults)
        args = ap.parse_args(argv)
    missing = [a.option_strings[0] for a in required.get(args.command, ())
               if getattr(args, a.dest) is None]
    if missing:
        ap.commands[args.command].error("the following arguments are required: " + ", ".join(missing))
    return args


# --- helpers -------------------------------------------------------------------------------

def _sweep_config(args, base: SweepConfig | None = None) -> SweepConfig:
    cfg = base or SweepConfig()
    over = {}
    mapping = {"Q": "Q", "fiber": "fiber", "n": "n", "tx_snr_dB": "tx_snr_dB",
               "var_post": "var_post", "var_pre_rx": "var_pre_rx", "launch_power_dBm": "launch_power_dBm",
               "pilot_count": "pilot_count", "fit_iterations": "fit_iterations",
               "fit_restarts": "fit_restarts", "workers": "workers"}
    for src, dst in mapping.items():
        val = getattr(args, src, None)
        if val is not None:
            over[dst] = val
    if getattr(args, "constellation", None):
        over["constellations"] = _words(args.constellation)
    if getattr(args, "L_values", None):
        over["L_values"] = _ints(args.L_values)
    if getattr(args, "attenuations_dB", None):
        over["attenuations_dB"] = _floats(args.attenuations_dB)
    if getattr(args, "seeds", None):
        over["seeds"] = _ints(args.seeds)
    if "n" in over and "pilot_count" not in over and cfg.pilot_count + 100 > over["n"]:
        over["pilot_count"] = over["n"] // 2
    return replace(cfg, **over)


def load_aligned(capture_path, symbols, pulse: PulseParams | None = None):
    """2 SPS samples aligned to the symbol block.

    Phase-aligned 2 SPS captures are used as they are; anything else is
    synchronized on the first pilots and resampled.
    """
    samples, meta = ddio.read_capture(capture_path)
    if meta.is_complex:
        samples = np.abs(samples) ** 2
    n = len(symbols)
    if meta.phase_aligned and math.isclose(meta.sample_rate, 2 * meta.symbol_rate):
        if len(samples) < 2 * n:
            raise ValueError(f"capture holds {len(samples)} samples, need {2 * n}")
        return samples[:2 * n]
    pulse = pulse or PulseParams(symbol_rate=meta.symbol_rate)
    sps = meta.samples_per_symbol
    k = min(n, SYNC_PILOTS)
    t = np.arange(int(np.ceil(k * sps)))
    ref = np.zeros(len(t))
    for i, x in enumerate(symbols[:k]):
        ref += x * raised_cosine(t / sps - i, pulse.roll_off)
    res = synchronize(samples, ref**2)
    out = resample_to_2sps(samples, meta.sample_rate, meta.symbol_rate, res.delay, 2 * n)
    if out.first_index != 0 or len(out.samples) < 2 * n:
        raise ValueError(f"capture too short around the pilots: {out.trim} samples trimmed")
    return out.samples


# --- commands ------------------------------------------------------------------------------

def cmd_simulate(args):
    cfg = _sweep_config(args)
    n = args.n or cfg.n
    cfg = replace(cfg, n=n, pilot_count=min(cfg.pilot_count, n - 100))
    kind = _words(args.constellation)[0]
    link = simulate_link(cfg, kind, args.attenuation_dB, args.seed)
    ddio.write_capture(args.out, link.received, 2 * cfg.symbol_rate, cfg.symbol_rate,
                       phase_aligned=True)
    np.save(args.symbols_out, np.asarray(link.symbols.symbols))
    print(json.dumps({"capture": args.out, "symbols": args.symbols_out, "n": cfg.n,
                      "constellation": f"{cfg.Q}-{kind}", "attenuation_dB": args.attenuation_dB,
                      "units": {"sample_rate": "Sa/s", "symbol_rate": "Bd"}}))
    return 0


def cmd_fit(args):
    x = np.load(args.symbols)
    y = load_aligned(args.capture, x)
    const = make_constellation(args.constellation, args.Q)
    prior = None
    if args.prior != "none":
        from .channel import build_impulse_response
        prior = build_impulse_response(PulseParams(), FIBERS[args.prior])
    cfg = FitConfig(pilot_count=args.pilots, L_target=args.L, max_iterations=args.iterations,
                    tol=args.tol, restart_count=args.restarts, seed=args.seed)
    res = fit(x, y, cfg, const, physical_prior=prior)
    ddio.write_params(args.out, res.params,
                      {"pilot_air_bpcu": repr(res.pilot_air), "pilots": min(args.pilots, len(x)),
                       "constellation": const.name, "converged": res.converged})
    print(json.dumps({"params": args.out, "pilot_air_bpcu": res.pilot_air,
                      "initial_air_bpcu": res.initial_air, "iterations": len(res.trace) - 1}))
    return 0


def cmd_rate(args):
    if args.params:
        if not (args.capture and args.symbols):
            raise SystemExit("rate --params needs --capture and --symbols")
        params, extras = ddio.read_params(args.params)
        x = np.load(args.symbols)
        y = load_aligned(args.capture, x)
        const = make_constellation(_words(args.constellation)[0], args.Q)
        s = args.skip
        est = estimate_air(y[2 * s:], x[s:], params, const)
        print(json.dumps({"air_bpcu": est.air, "n": est.n, "L": est.L, "negative": est.negative}))
        return 0
    cfg = _sweep_config(args, SweepConfig(n=4000, pilot_count=2000))
    row = run_rate_point(RatePoint(cfg, _words(args.constellation)[0], args.L, args.attenuation_dB,
                                   args.seed))
    print(json.dumps(row.__dict__))
    return 0 if row.ok else 1


def cmd_sweep(args):
    base = preset(args.preset) if args.preset else SweepConfig()
    cfg = _sweep_config(args, base)
    cfg = replace(cfg, output=args.out)

    def progress(row):
        print(f"{row.constellation} L={row.L} att={row.attenuation_dB:g} dB seed={row.seed}: "
              f"air={row.air_bpcu:.4f} bpcu ({row.status})", file=sys.stderr, flush=True)

    rows = run_sweep(cfg, progress)
    failed = sum(not r.ok for r in rows)
    print(json.dumps({"rows": len(rows), "failed": failed, "csv": args.out}))
    return 0


def cmd_oracle(args):
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for i in range(args.instances):
        Q = (2, 4)[i % 2]
        n = (4, 5, 6)[i % 3]
        L = (1, 3, 5)[(i // 2) % 3]
        const = make_constellation(("ASK", "PAM")[(i // 6) % 2], Q)
        params = random_params(rng, L)
        y = rng.uniform(0, 3, 2 * n)
        f = forward_log_marginal(y, params, const, density="exact")
        b = brute_force_log_marginal(y, params, const)
        worst = max(worst, abs(f - b) / max(abs(b), 1e-300))
    ok = worst <= args.tol
    print(json.dumps({"instances": args.instances, "max_rel_error": worst, "pass": ok}))
    return 0 if ok else 1


def random_params(rng, L) -> AuxChannelParams:
    h = 0.6 * (rng.standard_normal(L) + 1j * rng.standard_normal(L))
    return AuxChannelParams(h, 0.2 * (rng.standard_normal(2) + 1j * rng.standard_normal(2)),
                            0.1 * rng.standard_normal(2), rng.uniform(0.01, 0.5, 2),
                            rng.uniform(0.01, 0.5, 2))


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "rate": cmd_rate, "sweep": cmd_sweep,
            "oracle": cmd_oracle}


def main(argv=None) -> int:
    ap = build_parser()
    args = _apply_config(ap, argv)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
