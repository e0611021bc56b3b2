"""Multi-tone and OFDM signal synthesis, coherent spectral analysis, power accounting.

Conventions used throughout the package:

* Records are coherent: every tone/subcarrier frequency must land exactly on a
  DFT bin of the record.  Off-grid inputs raise ``NonCommensurateError`` rather
  than being windowed.
* One-sided spectra report *peak* tone amplitude in volts (an on-grid cosine of
  amplitude A shows up as a bin of magnitude A).  dBm conversion divides by
  sqrt(2) exactly once.  DC (and, for even-length records, the Nyquist bin)
  already hold RMS values.
* Reference impedance defaults to 50 ohms; zero bins are floored at a
  configurable dBm floor (default -200) so log-domain math stays finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AlignmentError,
    NonCommensurateError,
    RateNotMultipleError,
    SchemaError,
    UndersampledError,
    ZeroPowerError,
)

DEFAULT_IMPEDANCE = 50.0
DEFAULT_FLOOR_DBM = -200.0

_TWO_PI = 2.0 * math.pi


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# Tones
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Tone:
    """A single cosine: ``amplitude * cos(2*pi*frequency*t + phase)``.

    Amplitude is volts peak; phase is normalized to [0, 2*pi).
    """

    frequency: float
    amplitude: float
    phase: float = 0.0

    def __post_init__(self):
        if self.frequency <= 0:
            raise ValueError(f"tone frequency must be > 0, got {self.frequency}")
        if self.amplitude < 0:
            raise ValueError(f"tone amplitude must be >= 0, got {self.amplitude}")
        object.__setattr__(self, "phase", float(self.phase) % _TWO_PI)


@dataclass(frozen=True)
class ToneSet:
    """Ordered tones applied at one mixer port (``"IF"`` or ``"LO"``)."""

    port: str
    tones: tuple[Tone, ...]

    def __post_init__(self):
        if self.port not in ("IF", "LO"):
            raise ValueError(f"port must be 'IF' or 'LO', got {self.port!r}")
        object.__setattr__(self, "tones", tuple(self.tones))
        if len(self.tones) < 1:
            raise ValueError("a ToneSet needs at least one tone")
        freqs = [t.frequency for t in self.tones]
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise ValueError("tone frequencies must be strictly increasing")

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([t.frequency for t in self.tones])

    @property
    def amplitudes(self) -> np.ndarray:
        return np.array([t.amplitude for t in self.tones])

    def scaled(self, factor: float) -> "ToneSet":
        """Return a copy with every amplitude multiplied by ``factor``."""
        return ToneSet(self.port, tuple(
            Tone(t.frequency, t.amplitude * factor, t.phase) for t in self.tones))

    def scaled_to_power(self, p_dbm: float,
                        ref_impedance: float = DEFAULT_IMPEDANCE) -> "ToneSet":
        """Scale all amplitudes by a common factor so total average power hits
        ``p_dbm`` (the per-tone ratio of the template is preserved)."""
        p_now = input_power_dbm(self, ref_impedance)
        factor = 10.0 ** ((p_dbm - p_now) / 20.0)
        return self.scaled(factor)


def tone_set(port: str, freqs, amplitudes=None, phases=None) -> ToneSet:
    """Convenience builder from parallel sequences."""
    freqs = list(freqs)
    if amplitudes is None:
        amplitudes = [1.0] * len(freqs)
    elif np.isscalar(amplitudes):
        amplitudes = [float(amplitudes)] * len(freqs)
    if phases is None:
        phases = [0.0] * len(freqs)
    return ToneSet(port, tuple(Tone(f, a, p) for f, a, p in zip(freqs, amplitudes, phases)))


# ---------------------------------------------------------------------------
# Sampled signals and spectra
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampledSignal:
    """A real-valued coherent record.  ``grid_base`` is the DFT bin spacing."""

    sample_rate: float
    samples: np.ndarray

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)
        if samples.ndim != 1 or len(samples) < 2:
            raise ValueError("samples must be a 1-D array of length >= 2")
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    def __len__(self):
        return len(self.samples)

    @property
    def grid_base(self) -> float:
        return self.sample_rate / len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class Spectrum:
    """One-sided complex spectrum in the peak-amplitude convention."""

    bin_step: float
    bins: np.ndarray
    ref_impedance: float = DEFAULT_IMPEDANCE
    floor_dbm: float = DEFAULT_FLOOR_DBM
    nyquist_is_last: bool = False

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=complex)
        bins.setflags(write=False)
        object.__setattr__(self, "bins", bins)
        if bins.ndim != 1 or len(bins) < 2:
            raise ValueError("bins must be a 1-D array of length >= 2")

    def __len__(self):
        return len(self.bins)

    @property
    def frequencies(self) -> np.ndarray:
        return np.arange(len(self.bins)) * self.bin_step

    def _rms_amplitudes(self) -> np.ndarray:
        rms = np.abs(self.bins) / math.sqrt(2.0)
        rms[0] = abs(self.bins[0])  # DC is already an RMS value
        if self.nyquist_is_last:
            rms[-1] = abs(self.bins[-1])
        return rms

    @property
    def power_dbm(self) -> np.ndarray:
        """Per-bin average power in dBm, floored at ``floor_dbm``."""
        p_mw = self._rms_amplitudes() ** 2 / self.ref_impedance * 1e3
        floor_mw = 10.0 ** (self.floor_dbm / 10.0)
        return 10.0 * np.log10(np.maximum(p_mw, floor_mw))

    def bin_index(self, frequency: float, tol: float = 1e-6) -> int:
        """Index of the bin at ``frequency``; raises if off-grid."""
        ratio = frequency / self.bin_step
        k = int(round(ratio))
        if abs(ratio - k) > tol:
            raise NonCommensurateError(
                f"{frequency} Hz is not a multiple of the bin step {self.bin_step} Hz")
        if not 0 <= k < len(self.bins):
            raise NonCommensurateError(f"{frequency} Hz outside the spectrum range")
        return k

    def with_bins(self, bins: np.ndarray) -> "Spectrum":
        return Spectrum(self.bin_step, bins, self.ref_impedance,
                        self.floor_dbm, self.nyquist_is_last)


def power_dbm_of(complex_amplitudes: np.ndarray,
                 ref_impedance: float = DEFAULT_IMPEDANCE,
                 floor_dbm: float = DEFAULT_FLOOR_DBM) -> np.ndarray:
    """dBm of peak-convention complex amplitudes (no DC/Nyquist special case)."""
    p_mw = np.abs(np.asarray(complex_amplitudes)) ** 2 / 2.0 / ref_impedance * 1e3
    floor_mw = 10.0 ** (floor_dbm / 10.0)
    return 10.0 * np.log10(np.maximum(p_mw, floor_mw))


def _check_on_grid(frequency: float, grid_base: float):
    ratio = frequency / grid_base
    if abs(ratio - round(ratio)) > 1e-6:
        raise NonCommensurateError(
            f"{frequency} Hz does not sit on the {grid_base} Hz record grid")


def synth_multitone(tones: ToneSet, sample_rate: float, length: int) -> SampledSignal:
    """Sum of cosines on a coherent grid.

    Every tone frequency must be an integer multiple of ``sample_rate/length``
    and below Nyquist.
    """
    grid_base = sample_rate / length
    out = np.zeros(length)
    n = np.arange(length)
    for t in tones.tones:
        _check_on_grid(t.frequency, grid_base)
        if 2.0 * t.frequency >= sample_rate:
            raise UndersampledError(
                f"tone at {t.frequency} Hz needs sample rate > {2*t.frequency} Hz")
        out += t.amplitude * np.cos(_TWO_PI * t.frequency * n / sample_rate + t.phase)
    return SampledSignal(sample_rate, out)


def compute_spectrum(signal: SampledSignal,
                     ref_impedance: float = DEFAULT_IMPEDANCE,
                     floor_dbm: float = DEFAULT_FLOOR_DBM) -> Spectrum:
    """One-sided peak-amplitude spectrum of a real coherent record (no window)."""
    n = len(signal)
    x = np.fft.rfft(signal.samples)
    bins = x * (2.0 / n)
    bins[0] = x[0] / n
    even = n % 2 == 0
    if even:
        bins[-1] = x[-1] / n
    return Spectrum(signal.grid_base, bins, ref_impedance, floor_dbm,
                    nyquist_is_last=even)


def input_power_dbm(tones: ToneSet,
                    ref_impedance: float = DEFAULT_IMPEDANCE) -> float:
    """Total multi-tone average power delivered into ``ref_impedance``."""
    p_w = float(np.sum((tones.amplitudes / math.sqrt(2.0)) ** 2)) / ref_impedance
    return 10.0 * math.log10(p_w * 1e3)


def analytic_signal(samples: np.ndarray) -> np.ndarray:
    """Analytic signal of a real record via the frequency-domain mask."""
    x = np.asarray(samples, dtype=float)
    n = len(x)
    spec = np.fft.fft(x)
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1:n // 2] = 2.0
    else:
        h[1:(n + 1) // 2] = 2.0
    return np.fft.ifft(spec * h)


def compute_papr(samples, use_envelope: bool = True) -> float:
    """Peak-to-average power ratio in dB.

    Real inputs are converted to their analytic-signal envelope by default
    (a pure cosine then reads 0 dB; pass ``use_envelope=False`` for the raw
    real-sample ratio, which reads 3.01 dB on a cosine).
    """
    x = np.asarray(samples)
    if not np.iscomplexobj(x) and use_envelope:
        x = analytic_signal(x)
    p = np.abs(x) ** 2
    mean = float(np.mean(p))
    if mean == 0:
        raise ZeroPowerError("PAPR undefined for an all-zero signal")
    return 10.0 * math.log10(float(np.max(p)) / mean)


# ---------------------------------------------------------------------------
# OFDM frames
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OfdmFrameConfig:
    """Frame-level OFDM parameters (QPSK payload, frequency-comb radar use)."""

    carrier_if: float
    bandwidth: float
    subcarriers: int
    cp_length: int
    symbols: int
    avg_if_power: float
    seed: int = 0
    constellation: str = "QPSK"
    guard_center: int = 0

    def __post_init__(self):
        if self.constellation != "QPSK":
            raise ValueError("only QPSK payloads are supported")
        if self.subcarriers <= 0 or self.symbols <= 0:
            raise ValueError("subcarrier and symbol counts must be positive")
        if not 0 <= self.cp_length < self.subcarriers:
            raise ValueError("cp_length must satisfy 0 <= cp_length < subcarriers")
        if self.guard_center < 0 or self.guard_center >= self.subcarriers:
            raise ValueError("guard_center out of range")

    @property
    def subcarrier_spacing(self) -> float:
        return self.bandwidth / self.subcarriers

    @property
    def symbol_samples(self) -> int:
        return self.subcarriers + self.cp_length

    @property
    def symbol_duration(self) -> float:
        return self.symbol_samples / self.bandwidth

    @property
    def frame_samples(self) -> int:
        return self.symbols * self.symbol_samples


@dataclass(frozen=True)
class OfdmFrame:
    """Frequency-domain payload plus the scaled CP-OFDM baseband record.

    ``scale`` is the common factor applied to the raw synthesis so the
    complex-envelope average power (``mean|x|^2 / (2 R)``) equals
    ``config.avg_if_power``; it is kept so demodulation can undo it exactly.
    """

    config: OfdmFrameConfig
    symbol_grid: np.ndarray
    baseband: np.ndarray
    scale: float
    ref_impedance: float = DEFAULT_IMPEDANCE

    def __post_init__(self):
        for name in ("symbol_grid", "baseband"):
            arr = np.asarray(getattr(self, name), dtype=complex)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)


def _guard_indices(config: OfdmFrameConfig) -> np.ndarray:
    """FFT-order indices of the ``guard_center`` subcarriers closest to DC."""
    n = config.subcarriers
    offsets = np.fft.fftfreq(n, d=1.0 / n)  # signed subcarrier numbers
    order = np.argsort(np.abs(offsets), kind="stable")
    return order[:config.guard_center]


def frame_from_grid(config: OfdmFrameConfig, grid: np.ndarray,
                    ref_impedance: float = DEFAULT_IMPEDANCE) -> OfdmFrame:
    """Build the CP-OFDM baseband from an explicit frequency-domain grid.

    Grid rows are in FFT bin order (row 0 = DC, rows >= N/2 negative).
    """
    n, m = config.subcarriers, config.symbols
    grid = np.asarray(grid, dtype=complex)
    if grid.shape != (n, m):
        raise ValueError(f"grid must be {n}x{m}, got {grid.shape}")
    time_syms = np.fft.ifft(grid, axis=0) * n
    with_cp = np.concatenate([time_syms[n - config.cp_length:, :], time_syms], axis=0)
    baseband = with_cp.reshape(-1, order="F")
    p_avg_w = float(np.mean(np.abs(baseband) ** 2)) / 2.0 / ref_impedance
    if p_avg_w == 0:
        raise ZeroPowerError("cannot scale an all-zero frame to a target power")
    target_w = 10.0 ** ((config.avg_if_power - 30.0) / 10.0)
    scale = math.sqrt(target_w / p_avg_w)
    return OfdmFrame(config, grid, baseband * scale, scale, ref_impedance)


def generate_ofdm_frame(config: OfdmFrameConfig,
                        ref_impedance: float = DEFAULT_IMPEDANCE) -> OfdmFrame:
    """Seeded pseudorandom QPSK frame, scaled to ``avg_if_power``."""
    rng = np.random.default_rng(config.seed)
    n, m = config.subcarriers, config.symbols
    symbols = rng.integers(0, 4, size=(n, m))
    grid = np.exp(1j * (math.pi / 4.0 + math.pi / 2.0 * symbols))
    if config.guard_center:
        grid[_guard_indices(config), :] = 0.0
    return frame_from_grid(config, grid, ref_impedance)


def demodulate_frame(frame: OfdmFrame) -> np.ndarray:
    """Strip CPs and forward-DFT each symbol; inverts ``frame_from_grid``."""
    return demodulate_baseband(frame.baseband, frame.config, frame.scale)


def demodulate_baseband(baseband: np.ndarray, config: OfdmFrameConfig,
                        scale: float = 1.0) -> np.ndarray:
    """Recover the N x M symbol grid from a rate-B complex record."""
    n, m, cp = config.subcarriers, config.symbols, config.cp_length
    x = np.asarray(baseband, dtype=complex)
    if len(x) != config.frame_samples:
        raise AlignmentError(
            f"expected {config.frame_samples} baseband samples, got {len(x)}")
    syms = x.reshape((n + cp, m), order="F")[cp:, :]
    return np.fft.fft(syms, axis=0) / (n * scale)


def interpolate_complex(x: np.ndarray, factor: int) -> np.ndarray:
    """Exact band-limited interpolation of a periodic complex record
    (zero insertion plus an ideal low-pass, done in the frequency domain)."""
    x = np.asarray(x, dtype=complex)
    if factor == 1:
        return x.copy()
    nb = len(x)
    spec = np.fft.fft(x)
    padded = np.zeros(factor * nb, dtype=complex)
    half = nb // 2
    padded[:half] = spec[:half]
    padded[-(nb - half):] = spec[half:]
    return np.fft.ifft(padded) * factor


def frame_papr(frame: OfdmFrame, oversample: int = 4) -> float:
    """PAPR of the frame's continuous-time complex envelope, approximated by
    band-limited oversampling (rate-B samples miss inter-sample peaks)."""
    return compute_papr(interpolate_complex(frame.baseband, oversample))


def upconvert_to_if(frame: OfdmFrame, sample_rate: float) -> SampledSignal:
    """Band-limited interpolation to ``sample_rate`` and modulation onto the
    IF carrier: ``Re{x(t) exp(j 2 pi f_c t)}``."""
    cfg = frame.config
    b = cfg.bandwidth
    ratio = sample_rate / b
    factor = int(round(ratio))
    if abs(ratio - factor) > 1e-9 or factor < 1:
        raise RateNotMultipleError(
            f"sample rate {sample_rate} is not an integer multiple of B={b}")
    if sample_rate <= 2.0 * (cfg.carrier_if + b / 2.0):
        raise UndersampledError("sample rate too low for the IF passband")
    x_up = interpolate_complex(frame.baseband, factor)
    n = np.arange(len(x_up))
    carrier = np.exp(1j * _TWO_PI * cfg.carrier_if * n / sample_rate)
    return SampledSignal(sample_rate, np.real(x_up * carrier))


# ---------------------------------------------------------------------------
# CSV import/export
# ---------------------------------------------------------------------------

def save_signal_csv(signal: SampledSignal, path):
    lines = [f"# sample_rate_hz={_fmt(signal.sample_rate)}\n"]
    lines += [f"{_fmt(v)}\n" for v in signal.samples]
    with open(path, "w", newline="\n") as fh:
        fh.writelines(lines)


def load_signal_csv(path) -> SampledSignal:
    meta, rows = _read_csv_lines(path)
    if "sample_rate_hz" not in meta:
        raise SchemaError("missing '# sample_rate_hz=' header", line=1)
    samples = []
    for lineno, row in rows:
        try:
            samples.append(float(row))
        except ValueError:
            raise SchemaError(f"bad sample value {row!r}", line=lineno) from None
    return SampledSignal(meta["sample_rate_hz"], np.array(samples))


def save_spectrum_csv(spectrum: Spectrum, path):
    lines = [
        f"# bin_step_hz={_fmt(spectrum.bin_step)} "
        f"ref_impedance_ohms={_fmt(spectrum.ref_impedance)} "
        f"floor_dbm={_fmt(spectrum.floor_dbm)} "
        f"nyquist_is_last={int(spectrum.nyquist_is_last)}\n",
        "freq_hz,re,im\n",
    ]
    for k, v in enumerate(spectrum.bins):
        lines.append(f"{_fmt(k * spectrum.bin_step)},{_fmt(v.real)},{_fmt(v.imag)}\n")
    with open(path, "w", newline="\n") as fh:
        fh.writelines(lines)


def load_spectrum_csv(path) -> Spectrum:
    meta, rows = _read_csv_lines(path)
    for key in ("bin_step_hz", "ref_impedance_ohms"):
        if key not in meta:
            raise SchemaError(f"missing '# {key}=' header", line=1)
    bins = []
    for lineno, row in rows:
        parts = row.split(",")
        if parts[0] == "freq_hz":
            continue
        if len(parts) != 3:
            raise SchemaError("expected 'freq_hz,re,im'", line=lineno)
        try:
            bins.append(complex(float(parts[1]), float(parts[2])))
        except ValueError:
            raise SchemaError(f"bad complex value {row!r}", line=lineno) from None
    return Spectrum(meta["bin_step_hz"], np.array(bins),
                    meta["ref_impedance_ohms"],
                    meta.get("floor_dbm", DEFAULT_FLOOR_DBM),
                    bool(meta.get("nyquist_is_last", 0)))


def _read_csv_lines(path):
    """Split a CSV file into `# key=value` metadata and (lineno, row) pairs."""
    meta = {}
    rows = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                for token in line[1:].split():
                    if "=" in token:
                        key, val = token.split("=", 1)
                        try:
                            meta[key] = float(val)
                        except ValueError:
                            meta[key] = val
            else:
                rows.append((lineno, line))
    return meta, rows
