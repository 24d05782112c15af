import json
import subprocess
import sys

import numpy as np
import pytest

from ddair.channel import PulseParams, raised_cosine
from ddair.cli import build_parser, load_aligned, main
from ddair.io import read_capture, read_params, write_capture
from ddair.sweep import read_csv


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out.strip().splitlines()
    return code, json.loads(out[-1])


def test_parser_has_all_commands():
    ap = build_parser()
    assert set(ap.commands) == {"simulate", "fit", "rate", "sweep", "oracle"}


def test_oracle(capsys):
    code, out = run(["oracle", "--instances", 12], capsys)
    assert code == 0 and out["pass"] and out["max_rel_error"] < 1e-10


def test_simulate_fit_rate(tmp_path, capsys):
    cap, sym, par = tmp_path / "c.bin", tmp_path / "x.npy", tmp_path / "p.txt"
    code, out = run(["simulate", "--constellation", "PAM", "--n", 1200, "--tx-snr-dB", 30,
                     "--var-post", 1e-6, "--out", cap, "--symbols-out", sym], capsys)
    assert code == 0
    y, meta = read_capture(cap)
    assert meta.phase_aligned and len(y) == 2400
    code, out = run(["fit", "--capture", cap, "--symbols", sym, "--constellation", "PAM",
                     "--L", 3, "--pilots", 800, "--iterations", 1, "--restarts", 1,
                     "--prior", "B2B", "--out", par], capsys)
    assert code == 0 and out["pilot_air_bpcu"] > 1.8
    params, extras = read_params(par)
    assert params.L == 3 and extras["constellation"] == "4-PAM"
    code, out = run(["rate", "--params", par, "--capture", cap, "--symbols", sym,
                     "--constellation", "PAM", "--skip", 800], capsys)
    assert code == 0 and out["n"] == 400 and 1.8 < out["air_bpcu"] <= 2.01


def test_rate_point_command(capsys):
    code, out = run(["rate", "--constellation", "PAM", "--L", 1, "--n", 600, "--pilot-count", 400,
                     "--fit-iterations", 0], capsys)
    assert code == 0 and out["status"] == "ok"


def test_rate_point_failure_exit_code(capsys):
    code, out = run(["rate", "--Q", 8, "--L", 13, "--n", 600, "--pilot-count", 400], capsys)
    assert code == 1 and "budget" in out["status"]


def test_sweep_with_config_file(tmp_path, capsys):
    cfg = tmp_path / "sweep.ini"
    cfg.write_text("[sweep]\nconstellation = PAM,ASK\nL-values = 1\nattenuations_dB = 0, 4\n"
                   "n = 600\npilot_count = 400\nfit-iterations = 0\nn_unknown = 3\n")
    out_csv = tmp_path / "s.csv"
    # the flag overrides the file
    code, out = run(["--config", cfg, "sweep", "--attenuations-dB", "2", "--out", out_csv], capsys)
    assert code == 0 and out["rows"] == 2 and out["failed"] == 0
    rows = read_csv(out_csv)
    assert {r.constellation for r in rows} == {"PAM", "ASK"}
    assert {r.attenuation_dB for r in rows} == {2.0}
    assert (tmp_path / "s.plot.json").exists()


def test_load_aligned_resamples_oversampled_capture(tmp_path, rng):
    # intensity of an RC-shaped PAM field at 8 samples per symbol, delayed by 40 samples
    x = rng.choice([0.0, 1.0, 2.0, 3.0], 700)
    sps, R = 8, 30e9
    t = np.arange(700 * sps)
    field = np.zeros(len(t))
    for i, v in enumerate(x):
        lo, hi = max(0, (i - 40) * sps), min(len(t), (i + 40) * sps)
        field[lo:hi] += v * raised_cosine(t[lo:hi] / sps - i, 0.2)
    cap = np.concatenate([np.zeros(40), field**2, np.zeros(400)])
    write_capture(tmp_path / "o.bin", cap, sps * R, R)
    y = load_aligned(tmp_path / "o.bin", x[:600], PulseParams(0.2, R))
    ref = field[::sps // 2][:1200] ** 2
    assert np.max(np.abs(y[40:1160] - ref[40:1160])) < 2e-2 * np.max(ref)


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "ddair", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "simulate" in r.stdout


def test_missing_subcommand():
    with pytest.raises(SystemExit):
        main([])


def test_config_file_may_supply_required_flags(tmp_path, capsys):
    out_csv = tmp_path / "c.csv"
    cfg = tmp_path / "c.ini"
    cfg.write_text(f"[sweep]\nconstellation = PAM\nL-values = 1\nattenuations-dB = 0\nn = 500\n"
                   f"pilot-count = 300\nfit-iterations = 0\nout = {out_csv}\n")
    code, out = run(["--config", cfg, "sweep"], capsys)
    assert code == 0 and out["rows"] == 1 and out_csv.exists()
    with pytest.raises(SystemExit):
        main(["sweep", "--n", "500"])
