"""Rate-point simulation and attenuation sweeps (the ASK vs PAM comparison).

Each rate point simulates one capture, fits the auxiliary model on the
leading pilot symbols and reports the AIR on the remaining holdout.
Rows are independent work items; a failing row is recorded, not raised.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .channel import (B2B, SSMF_20KM, NoiseSpec, PulseParams, apply_channel, build_impulse_response,
                      mean_power, simulate_capture)
from .constellation import (KINDS, SymbolBlock, differential_precode, draw_symbols,
                            make_constellation, upsample)
from .density import DEFAULT_BRANCH_BUDGET, check_budget
from .fitting import FitConfig, cross_validate, fit

FIBERS = {"B2B": B2B, "SSMF_20KM": SSMF_20KM}
LAUNCH_POWER_DBM = {2: -3.2, 4: -3.2, 8: -5.0, 16: -5.0}
WORKERS_ENV = "DDAIR_WORKERS"
HOLDOUT_MIN = 100

CSV_COLUMNS = ("constellation", "Q", "L", "attenuation_dB", "launch_power_dBm", "air_bpcu",
               "pilot_air_bpcu", "n", "seed", "fit_id", "status")


@dataclass(frozen=True)
class SweepConfig:
    """One sweep: every (constellation, L, attenuation, seed) combination is a row.

    Noise: ``tx_snr_dB`` sets the pre-detection (transmitter) noise relative
    to the launch power; it is attenuated together with the signal.
    ``var_pre_rx`` (mW) is pre-detection noise added after the attenuator,
    e.g. the ASE of an optical preamplifier; it does not scale with the
    attenuation. ``var_post`` is the post-detection noise variance in mW^2.
    """

    constellations: tuple = ("ASK", "PAM")
    Q: int = 4
    L_values: tuple = (3, 7, 11)
    attenuations_dB: tuple = (0.0, 2.0, 4.0, 6.0, 8.0)
    n: int = 10000
    pilot_count: int = 5000
    seeds: tuple = (1,)
    fiber: str = "B2B"
    output: str | None = None
    launch_power_dBm: float | None = None
    tx_snr_dB: float = 22.0
    var_pre_rx: float = 0.0
    var_post: float = 1e-4
    roll_off: float = 0.2
    symbol_rate: float = 30e9
    precode: bool = True
    fit_iterations: int = 3
    fit_restarts: int = 1
    fit_tol: float = 1e-3
    budget: int = DEFAULT_BRANCH_BUDGET
    workers: int | None = None

    def __post_init__(self):
        for name in ("constellations", "L_values", "attenuations_dB", "seeds"):
            val = getattr(self, name)
            if isinstance(val, (str, int, float)):
                val = (val,)
            object.__setattr__(self, name, tuple(val))
            if not val:
                raise ValueError(f"{name} must be non-empty")
        for kind in self.constellations:
            if kind not in KINDS:
                raise ValueError(f"unknown constellation {kind!r}")
        if self.fiber not in FIBERS:
            raise ValueError(f"unknown fiber preset {self.fiber!r}, choose from {sorted(FIBERS)}")
        if self.n < self.pilot_count + HOLDOUT_MIN:
            raise ValueError(f"n must leave at least {HOLDOUT_MIN} holdout symbols after the pilots")
        if any(L < 1 or L % 2 != 1 for L in self.L_values):
            raise ValueError("L values must be positive odd integers")

    @property
    def power_dBm(self) -> float:
        if self.launch_power_dBm is not None:
            return self.launch_power_dBm
        return LAUNCH_POWER_DBM[self.Q]

    def rows(self):
        """Work items in canonical order."""
        return [RatePoint(self, kind, L, att, seed) for kind in self.constellations
                for L in self.L_values for att in self.attenuations_dB for seed in self.seeds]


# desk-scale noise: receiver-side pre-detection noise dominates, so the VOA
# sweeps the SNR; transmitter and thermal noise stay in the background
_FIG3 = dict(n=4000, pilot_count=2000, attenuations_dB=tuple(np.arange(0.0, 14.1, 2.0)),
             tx_snr_dB=30.0, var_pre_rx=4e-3, var_post=1e-6, fit_iterations=0)

PRESETS = {
    "fig3a": SweepConfig(Q=4, fiber="B2B", **_FIG3),
    "fig3b": SweepConfig(Q=4, fiber="SSMF_20KM", **_FIG3),
    "fig3c": SweepConfig(Q=8, fiber="B2B", **_FIG3),
}


def preset(name: str, **overrides) -> SweepConfig:
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}, choose from {sorted(PRESETS)}")
    return replace(PRESETS[name], **overrides)


@dataclass(frozen=True)
class RatePoint:
    config: SweepConfig
    kind: str
    L: int
    attenuation_dB: float
    seed: int

    @property
    def capture_seed(self) -> np.random.SeedSequence:
        # shared by every L so memory lengths are compared on identical data
        code = KINDS.index(self.kind)
        return np.random.SeedSequence([int(self.seed), self.config.Q, code,
                                       int(round(self.attenuation_dB * 1000))])

    @property
    def fit_id(self) -> str:
        cfg = {k: v for k, v in asdict(self.config).items() if k not in ("output", "workers")}
        blob = json.dumps([cfg, self.kind, self.L, float(self.attenuation_dB), int(self.seed)],
                          sort_keys=True, default=float)
        return hashlib.sha1(blob.encode()).hexdigest()[:12]


@dataclass(frozen=True)
class SweepRow:
    constellation: str
    Q: int
    L: int
    attenuation_dB: float
    launch_power_dBm: float
    air_bpcu: float
    pilot_air_bpcu: float
    n: int
    seed: int
    fit_id: str
    status: str = "ok"

    @property
    def ok(self) -> bool:
        return self.status == "ok"


# --- simulation ----------------------------------------------------------------------------

@dataclass
class SimulatedLink:
    symbols: SymbolBlock
    received: np.ndarray
    response: object
    noise: NoiseSpec
    gain: float = 1.0
    meta: dict = field(default_factory=dict)


def simulate_link(config: SweepConfig, kind: str, attenuation_dB: float, seed, n=None) -> SimulatedLink:
    """Discrete levels through pulse, fiber and attenuation, then square-law detection.

    Levels are scaled to the launch power; the transmitter noise is set by
    ``tx_snr_dB`` at launch and attenuated along with the signal.
    """
    n = config.n if n is None else n
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    sym_seed, noise_seed = ss.spawn(2)
    const = make_constellation(kind, config.Q)
    block = draw_symbols(const, n, np.random.default_rng(sym_seed))
    if config.precode and kind == "ASK":
        block = differential_precode(block)
    fiber = FIBERS[config.fiber].with_voa(attenuation_dB)
    pulse = PulseParams(config.roll_off, config.symbol_rate)
    resp = build_impulse_response(pulse, fiber)
    p_launch = 10 ** (config.power_dBm / 10)
    launch = apply_channel(upsample(block), build_impulse_response(pulse, B2B))
    gain = math.sqrt(p_launch / mean_power(launch))
    field_rx = gain * apply_channel(upsample(block), resp)
    att = 10 ** (-fiber.total_attenuation_dB / 10)
    var_pre = p_launch * 10 ** (-config.tx_snr_dB / 10) * att + config.var_pre_rx
    noise = NoiseSpec(var_pre=(var_pre, var_pre), var_post=(config.var_post, config.var_post))
    rx = simulate_capture(field_rx, noise, np.random.default_rng(noise_seed))
    return SimulatedLink(block, rx.samples, resp, noise, gain,
                         {"received_power_mW": p_launch * att})


# --- rate points ---------------------------------------------------------------------------

def run_rate_point(point: RatePoint) -> SweepRow:
    cfg = point.config
    base = dict(constellation=point.kind, Q=cfg.Q, L=point.L,
                attenuation_dB=float(point.attenuation_dB), launch_power_dBm=cfg.power_dBm,
                n=cfg.n, seed=int(point.seed), fit_id=point.fit_id)
    try:
        check_budget(cfg.Q, (point.L - 1) // 2, cfg.budget)
        link = simulate_link(cfg, point.kind, point.attenuation_dB, point.capture_seed)
        k = cfg.pilot_count
        x = np.asarray(link.symbols.symbols)
        y = link.received
        const = link.symbols.constellation
        fc = FitConfig(pilot_count=k, L_target=point.L, max_iterations=cfg.fit_iterations,
                       tol=cfg.fit_tol, restart_count=cfg.fit_restarts, seed=int(point.seed))
        result = fit(x[:k], y[:2 * k], fc, const, physical_prior=link.response,
                     block_ids=range(k))
        hold = cross_validate(result, y[2 * k:], x[k:], const, holdout_ids=range(k, cfg.n))
        return SweepRow(air_bpcu=float(hold.air), pilot_air_bpcu=float(result.pilot_air), **base)
    except Exception as exc:  # noqa: BLE001 - the row records the failure
        return SweepRow(air_bpcu=math.nan, pilot_air_bpcu=math.nan,
                        status=f"failed: {type(exc).__name__}: {exc}", **base)


def default_workers() -> int:
    val = os.environ.get(WORKERS_ENV)
    if val:
        try:
            return max(1, int(val))
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {val!r}") from None
    return 1


def run_sweep(config: SweepConfig, progress=None) -> list[SweepRow]:
    """All rows of the sweep in canonical order; writes CSV and plot data when
    ``config.output`` is set."""
    points = config.rows()
    workers = config.workers or default_workers()
    if workers <= 1:
        rows = []
        for p in points:
            rows.append(run_rate_point(p))
            if progress:
                progress(rows[-1])
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = []
            for row in pool.map(run_rate_point, points):
                rows.append(row)
                if progress:
                    progress(row)
    if config.output:
        write_csv(config.output, rows)
        write_plot_data(plot_data_path(config.output), rows)
    return rows


# --- output --------------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def read_csv(path) -> list[SweepRow]:
    types = {f.name: f.type for f in fields(SweepRow)}
    conv = {"int": int, "float": float, "str": str}
    out = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV columns {header}")
        for rec in reader:
            out.append(SweepRow(**{c: conv[types[c]](v) for c, v in zip(header, rec)}))
    return out


def plot_data_path(csv_path) -> str:
    root, _ = os.path.splitext(str(csv_path))
    return root + ".plot.json"


def series(rows, kind, L, seed=None):
    """(attenuations, holdout AIRs) of one curve, sorted by attenuation, failed rows dropped."""
    sel = [r for r in rows if r.constellation == kind and r.L == L and r.ok
           and (seed is None or r.seed == seed)]
    sel.sort(key=lambda r: r.attenuation_dB)
    return np.array([r.attenuation_dB for r in sel]), np.array([r.air_bpcu for r in sel])


def plot_data(rows) -> dict:
    groups = {}
    for r in rows:
        groups.setdefault((r.constellation, r.Q, r.L), []).append(r)
    out = []
    for (kind, Q, L), rs in sorted(groups.items()):
        rs = sorted(rs, key=lambda r: (r.attenuation_dB, r.seed))
        out.append({"constellation": kind, "Q": Q, "L": L,
                    "attenuation_dB": [r.attenuation_dB for r in rs],
                    "air_bpcu": [r.air_bpcu if r.ok else None for r in rs],
                    "seed": [r.seed for r in rs]})
    return {"x_label": "attenuation (dB)", "y_label": "AIR (bpcu)", "series": out}


def write_plot_data(path, rows):
    with open(path, "w") as fh:
        json.dump(plot_data(rows), fh, indent=1)


# --- trend metrics -------------------------------------------------------------------------

def attenuation_at_rate(att, air, rate) -> float:
    """Largest attenuation at which a curve still reaches ``rate`` (linear interpolation).

    NaN when the curve never reaches the rate; the largest grid point when
    it never falls below it.
    """
    att, air = np.asarray(att, float), np.asarray(air, float)
    above = air >= rate
    if not above.any():
        return math.nan
    k = int(np.max(np.nonzero(above)[0]))
    if k == len(att) - 1:
        return float(att[-1])
    a0, a1, r0, r1 = att[k], att[k + 1], air[k], air[k + 1]
    return float(a0 + (r0 - rate) * (a1 - a0) / (r0 - r1))


def horizontal_gain(rows, L, rate, first="ASK", second="PAM") -> float:
    """Extra attenuation (dB) ``first`` tolerates over ``second`` at the given AIR."""
    a1 = attenuation_at_rate(*series(rows, first, L), rate)
    a2 = attenuation_at_rate(*series(rows, second, L), rate)
    return a1 - a2
