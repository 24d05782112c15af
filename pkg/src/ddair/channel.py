"""Simulated oversampled IM/DD link at 2 samples per symbol.

Field amplitudes are in sqrt(mW), intensities in mW. Every attenuation in dB
denotes intensity; field amplitudes scale by half of it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .constellation import UpsampledSequence

SPEED_OF_LIGHT = 299_792_458.0
SPS = 2


@dataclass(frozen=True)
class PulseParams:
    roll_off: float = 0.2
    symbol_rate: float = 30e9
    span: int = 32

    def __post_init__(self):
        if not 0.0 <= self.roll_off <= 1.0:
            raise ValueError("roll-off must lie in [0, 1]")
        if self.span < 2:
            raise ValueError("pulse span must be >= 2 symbols")
        if self.symbol_rate <= 0:
            raise ValueError("symbol rate must be positive")


@dataclass(frozen=True)
class FiberParams:
    length_km: float = 0.0
    dispersion: float = 17.0  # ps/(nm km)
    attenuation_per_km: float = 0.2  # dB/km
    wavelength_nm: float = 1550.0
    extra_attenuation_dB: float = 0.0  # VOA

    def __post_init__(self):
        if self.length_km < 0:
            raise ValueError("fiber length must be >= 0")
        if self.attenuation_per_km < 0 or self.extra_attenuation_dB < 0:
            raise ValueError("attenuations must be >= 0")

    @property
    def total_attenuation_dB(self) -> float:
        return self.length_km * self.attenuation_per_km + self.extra_attenuation_dB

    @property
    def beta2(self) -> float:
        """Group velocity dispersion in s^2/m."""
        D = self.dispersion * 1e-6  # ps/(nm km) -> s/m^2
        lam = self.wavelength_nm * 1e-9
        return -D * lam**2 / (2 * np.pi * SPEED_OF_LIGHT)

    def with_voa(self, attenuation_dB: float) -> "FiberParams":
        return FiberParams(self.length_km, self.dispersion, self.attenuation_per_km,
                           self.wavelength_nm, attenuation_dB)


B2B = FiberParams(length_km=0.0)
SSMF_20KM = FiberParams(length_km=20.0)


@dataclass(frozen=True)
class MZMParams:
    v_pi: float = 1.0
    bias: float = 1.0
    v_peak: float = 0.5
    transfer: str = "sine_field"

    def __post_init__(self):
        if self.v_pi <= 0:
            raise ValueError("v_pi must be positive")
        if self.transfer not in ("sine_field", "ideal_linear"):
            raise ValueError(f"unknown MZM transfer {self.transfer!r}")


@dataclass(frozen=True)
class NoiseSpec:
    """Period-2 noise and bias parameters; index 0 is the on-symbol phase."""

    var_pre: tuple = (0.0, 0.0)
    var_post: tuple = (0.0, 0.0)
    mu_pre: tuple = (0j, 0j)
    mu_post: tuple = (0.0, 0.0)

    def __post_init__(self):
        for name in ("var_pre", "var_post", "mu_pre", "mu_post"):
            if len(getattr(self, name)) != 2:
                raise ValueError(f"{name} needs one value per phase")
        if min(self.var_pre) < 0 or min(self.var_post) < 0:
            raise ValueError("noise variances must be >= 0")


@dataclass(frozen=True, eq=False)
class ImpulseResponse:
    taps: np.ndarray
    normalization: str = "peak"
    discarded_energy: float = 0.0

    def __post_init__(self):
        if len(self.taps) % 2 != 1:
            raise ValueError("impulse response needs an odd tap count")
        if not np.sum(np.abs(self.taps) ** 2) > 0:
            raise ValueError("impulse response has zero energy")

    @property
    def M(self) -> int:
        return len(self.taps)

    def truncated(self, L: int) -> np.ndarray:
        """Centered L-tap window."""
        if L % 2 != 1 or L < 1:
            raise ValueError("L must be a positive odd number")
        c = self.M // 2
        if L > self.M:
            out = np.zeros(L, dtype=complex)
            out[L // 2 - c:L // 2 + c + 1] = self.taps
            return out
        return self.taps[c - L // 2:c + L // 2 + 1].astype(complex)


@dataclass(frozen=True, eq=False)
class ReceivedBlock:
    samples: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.samples) % 2:
            raise ValueError("a received block has an even number of samples")

    @property
    def n(self) -> int:
        return len(self.samples) // 2

    @property
    def phase_labels(self) -> np.ndarray:
        """0 = on-symbol, 1 = between-symbol."""
        return np.tile([0, 1], self.n)

    def split(self, n_first: int) -> tuple["ReceivedBlock", "ReceivedBlock"]:
        k = 2 * n_first
        return (ReceivedBlock(self.samples[:k], dict(self.provenance, part="head")),
                ReceivedBlock(self.samples[k:], dict(self.provenance, part="tail")))


def raised_cosine(t, roll_off: float) -> np.ndarray:
    """RC pulse at times t (in symbol periods), peak 1 at t=0."""
    t = np.asarray(t, dtype=float)
    a = roll_off
    if a == 0:
        return np.sinc(t)
    denom = 1.0 - (2 * a * t) ** 2
    singular = np.isclose(np.abs(2 * a * t), 1.0, rtol=0, atol=1e-12)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.sinc(t) * np.cos(np.pi * a * t) / denom
    return np.where(singular, np.pi / 4 * np.sinc(1 / (2 * a)), out)


def raised_cosine_taps(pulse: PulseParams, samples_per_symbol: int = SPS) -> np.ndarray:
    half = pulse.span * samples_per_symbol // 2
    t = np.arange(-half, half + 1) / samples_per_symbol
    return raised_cosine(t, pulse.roll_off)


def cd_frequency_response(fiber: FiberParams, f) -> np.ndarray:
    """All-pass quadratic-phase response exp(j beta2 L w^2 / 2) at baseband frequency f (Hz)."""
    w = 2 * np.pi * np.asarray(f, dtype=float)
    return np.exp(0.5j * fiber.beta2 * fiber.length_km * 1e3 * w**2)


def rx_lowpass(f, bandwidth: float | None) -> np.ndarray:
    """4th-order low-pass magnitude, zero phase; bandwidth=None is wide open."""
    f = np.asarray(f, dtype=float)
    if bandwidth is None:
        return np.ones_like(f)
    if bandwidth <= 0:
        raise ValueError("receiver bandwidth must be positive")
    return 1.0 / np.sqrt(1.0 + (f / bandwidth) ** 8)


def build_impulse_response(pulse: PulseParams, fiber: FiberParams = B2B,
                           rx_bandwidth: float | None = None, M: int | None = None,
                           n_fft: int | None = None, energy_tol: float = 1e-6) -> ImpulseResponse:
    """Pulse, CD and receiver filter at T/2 spacing, scaled by the total attenuation.

    With ``M=None`` the window starts at 4*span+1 taps and grows until less
    than ``energy_tol`` of the response energy falls outside it.
    """
    rc = raised_cosine_taps(pulse)
    auto = M is None
    M = 4 * pulse.span + 1 if auto else M
    if M % 2 != 1:
        raise ValueError("M must be odd")
    if n_fft is None:
        n_fft = 1 << int(np.ceil(np.log2(max(8 * M, 1024))))
    if M > n_fft:
        raise ValueError(f"M={M} exceeds the transform length {n_fft}")

    buf = np.zeros(n_fft, dtype=complex)
    half = len(rc) // 2
    buf[:half + 1] = rc[half:]
    buf[-half:] = rc[:half]
    f = np.fft.fftfreq(n_fft, d=1.0 / (SPS * pulse.symbol_rate))
    spec = np.fft.fft(buf) * cd_frequency_response(fiber, f) * rx_lowpass(f, rx_bandwidth)
    resp = np.fft.fftshift(np.fft.ifft(spec))
    center = n_fft // 2
    energy = np.sum(np.abs(resp) ** 2)

    def window(m):
        return resp[center - m // 2:center + m // 2 + 1]

    taps = window(M)
    discarded = 1.0 - np.sum(np.abs(taps) ** 2) / energy
    while auto and discarded > energy_tol and M + 2 * pulse.span <= n_fft - 1:
        M += 2 * pulse.span
        taps = window(M)
        discarded = 1.0 - np.sum(np.abs(taps) ** 2) / energy
    gain = 10 ** (-fiber.total_attenuation_dB / 20)
    return ImpulseResponse(taps * gain, "peak", max(float(discarded), 0.0))


def mzm_field(v, mzm: MZMParams) -> np.ndarray:
    """Field transfer of the MZM for signal drive v around the configured bias.

    ``ideal_linear`` is the tangent of the sine transfer at the null point.
    """
    total = mzm.bias + np.asarray(v, dtype=float)
    if mzm.transfer == "sine_field":
        return np.cos(np.pi * total / (2 * mzm.v_pi))
    return 0.5 * np.pi * (1.0 - total / mzm.v_pi)


def drive_waveform(symbols, pulse: PulseParams, sps: int = 16) -> np.ndarray:
    """RC-shaped drive normalized so the outermost levels sit at +-1 at symbol instants."""
    symbols = np.asarray(symbols, dtype=float)
    up = np.zeros(len(symbols) * sps)
    up[::sps] = symbols / np.max(np.abs(symbols))
    taps = raised_cosine_taps(pulse, sps)
    return np.convolve(up, taps)[len(taps) // 2:len(taps) // 2 + len(up)]


def mean_power(field_samples) -> float:
    field_samples = np.asarray(field_samples)
    return float(np.mean(field_samples.real**2 + field_samples.imag**2))


def pam_bias_for_equal_power(waveform, mzm: MZMParams) -> float:
    """Bias of the half-swing (PAM) configuration matching the ASK mean power.

    The ASK reference is the null-point bias with full swing ``v_peak``.
    """
    ask = MZMParams(mzm.v_pi, mzm.v_pi, mzm.v_peak, mzm.transfer)
    target = mean_power(mzm_field(mzm.v_peak * waveform, ask))

    def excess(b):
        cfg = MZMParams(mzm.v_pi, b, mzm.v_peak, mzm.transfer)
        return mean_power(mzm_field(0.5 * mzm.v_peak * waveform, cfg)) - target

    return brentq(excess, 0.0, mzm.v_pi, xtol=1e-14)


def scale_to_launch_power(field_samples, target_dBm: float) -> np.ndarray:
    field_samples = np.asarray(field_samples)
    p = mean_power(field_samples)
    if p == 0:
        raise ValueError("cannot scale an all-zero field to a launch power")
    return field_samples * np.sqrt(10 ** (target_dBm / 10) / p)


def apply_channel(upsampled, response) -> np.ndarray:
    """Toeplitz channel H X' restricted to the 2n centered outputs (zero padding)."""
    x = upsampled.samples if isinstance(upsampled, UpsampledSequence) else np.asarray(upsampled)
    h = response.taps if isinstance(response, ImpulseResponse) else np.asarray(response)
    M = len(h)
    if M % 2 != 1:
        raise ValueError("impulse response needs an odd tap count")
    if M > len(x):
        raise ValueError(f"M={M} taps exceed the 2n={len(x)} block length")
    c = M // 2
    return np.convolve(x, h)[c:c + len(x)]


def simulate_capture(field_samples, noise: NoiseSpec, seed, provenance=None) -> ReceivedBlock:
    """y_k = |field_k + mu_pre[p] + n1|^2 + mu_post[p] + n2 with phase p = k mod 2."""
    f = np.asarray(field_samples, dtype=complex)
    if len(f) % 2:
        raise ValueError("field length must be even (2n)")
    n = len(f) // 2
    rng = np.random.default_rng(seed)
    var_pre = np.tile(np.asarray(noise.var_pre, dtype=float), n)
    var_post = np.tile(np.asarray(noise.var_post, dtype=float), n)
    n1 = np.sqrt(var_pre / 2) * (rng.standard_normal(2 * n) + 1j * rng.standard_normal(2 * n))
    n2 = np.sqrt(var_post) * rng.standard_normal(2 * n)
    z = f + np.tile(np.asarray(noise.mu_pre, dtype=complex), n) + n1
    y = z.real**2 + z.imag**2 + np.tile(np.asarray(noise.mu_post, dtype=float), n) + n2
    prov = {"seed": seed}
    prov.update(provenance or {})
    return ReceivedBlock(y, prov)
