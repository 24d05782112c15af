"""Capture files, auxiliary-parameter files and sweep config files.

Capture layout (little endian):

    magic     6 bytes  b"DDCAP1"
    pad       2 bytes
    sample_rate  f8    Sa/s
    symbol_rate  f8    Bd
    sample_count u8
    flags        u4    bit 0: complex payload, bit 1: phase aligned
    pad       4 bytes
    payload   sample_count f8 values (2x for complex, re/im interleaved)
"""

from __future__ import annotations

import configparser
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .density import AuxChannelParams

MAGIC = b"DDCAP1"
_HEADER = struct.Struct("<6s2xddQI4x")
FLAG_COMPLEX = 1
FLAG_PHASE_ALIGNED = 2


class CaptureError(ValueError):
    code = "capture_error"


class BadMagicError(CaptureError):
    code = "bad_magic"


class TruncatedPayloadError(CaptureError):
    code = "truncated_payload"


class RateInconsistencyError(CaptureError):
    code = "rate_inconsistency"


@dataclass(frozen=True)
class CaptureMeta:
    sample_rate: float  # Sa/s
    symbol_rate: float  # Bd
    sample_count: int
    is_complex: bool = False
    phase_aligned: bool = False

    @property
    def flags(self) -> int:
        return (FLAG_COMPLEX if self.is_complex else 0) | (FLAG_PHASE_ALIGNED if self.phase_aligned else 0)

    @property
    def samples_per_symbol(self) -> float:
        return self.sample_rate / self.symbol_rate

    def check(self):
        if not (self.symbol_rate > 0 and self.sample_rate >= 2 * self.symbol_rate):
            raise RateInconsistencyError(
                f"sample rate {self.sample_rate} Sa/s is below 2 x symbol rate {self.symbol_rate} Bd")


def write_capture(path, samples, sample_rate: float, symbol_rate: float,
                  phase_aligned: bool = False) -> CaptureMeta:
    samples = np.asarray(samples)
    is_complex = np.iscomplexobj(samples)
    meta = CaptureMeta(float(sample_rate), float(symbol_rate), len(samples), is_complex, phase_aligned)
    meta.check()
    if is_complex:
        payload = np.empty(2 * len(samples), dtype="<f8")
        payload[0::2] = samples.real
        payload[1::2] = samples.imag
    else:
        payload = samples.astype("<f8")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, meta.sample_rate, meta.symbol_rate, meta.sample_count, meta.flags))
        fh.write(payload.tobytes())
    return meta


def read_capture(path):
    """Returns (samples, CaptureMeta)."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) or raw[:len(MAGIC)] != MAGIC:
        raise BadMagicError(f"{path}: not a DDCAP1 capture")
    if len(raw) < _HEADER.size:
        raise TruncatedPayloadError(f"{path}: truncated header")
    _, fs, rs, count, flags = _HEADER.unpack_from(raw)
    meta = CaptureMeta(fs, rs, count, bool(flags & FLAG_COMPLEX), bool(flags & FLAG_PHASE_ALIGNED))
    meta.check()
    width = 2 if meta.is_complex else 1
    need = 8 * width * count
    body = raw[_HEADER.size:]
    if len(body) < need:
        raise TruncatedPayloadError(f"{path}: truncated payload, {len(body)} of {need} bytes")
    if len(body) > need:
        raise CaptureError(f"{path}: {len(body) - need} trailing bytes after the payload")
    vals = np.frombuffer(body, dtype="<f8").astype(float)
    samples = vals[0::2] + 1j * vals[1::2] if meta.is_complex else vals
    return samples, meta


# --- parameter files -----------------------------------------------------------------------

def _c(z: complex) -> str:
    return f"{float(np.real(z))!r},{float(np.imag(z))!r}"


def write_params(path, params: AuxChannelParams, extras: dict | None = None):
    """key = value text; complex values as "re,im"."""
    lines = ["# auxiliary channel parameters (index 0 on-symbol, 1 between-symbol)",
             f"L = {params.L}"]
    lines += [f"h_{j} = {_c(v)}" for j, v in enumerate(params.h)]
    for p in (0, 1):
        lines += [f"mu_pre_{p} = {_c(params.mu_pre[p])}",
                  f"mu_post_{p} = {float(params.mu_post[p])!r}",
                  f"var_pre_{p} = {float(params.var_pre[p])!r}",
                  f"var_post_{p} = {float(params.var_post[p])!r}"]
    for k, v in (extras or {}).items():
        lines.append(f"{k} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_complex(s: str) -> complex:
    parts = s.split(",")
    if len(parts) != 2:
        raise ValueError(f"complex values are written as re,im, got {s!r}")
    return complex(float(parts[0]), float(parts[1]))


def read_params(path):
    """Returns (AuxChannelParams, extras)."""
    kv = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        kv[k] = v
    try:
        L = int(kv.pop("L"))
        h = [_parse_complex(kv.pop(f"h_{j}")) for j in range(L)]
        mu_pre = [_parse_complex(kv.pop(f"mu_pre_{p}")) for p in (0, 1)]
        mu_post = [float(kv.pop(f"mu_post_{p}")) for p in (0, 1)]
        var_pre = [float(kv.pop(f"var_pre_{p}")) for p in (0, 1)]
        var_post = [float(kv.pop(f"var_post_{p}")) for p in (0, 1)]
    except KeyError as exc:
        raise ValueError(f"{path}: missing key {exc.args[0]}") from None
    return AuxChannelParams(np.array(h), mu_pre, mu_post, var_pre, var_post), kv


# --- config files --------------------------------------------------------------------------

def read_config(path, section: str | None = None) -> dict:
    """Flatten an INI-style file into {key: string}; later sections override earlier ones.

    With ``section`` only that section (plus DEFAULT) is read.
    """
    cp = configparser.ConfigParser(interpolation=None)
    with open(path) as fh:
        cp.read_file(fh)
    out = dict(cp.defaults())
    names = [section] if section else cp.sections()
    for name in names:
        if name not in cp:
            raise ValueError(f"{path}: no section [{name}]")
        out.update(cp[name])
    return out
