"""Frequency-comb OFDM radar validation chain.

One mixer, multi-tone LO: the IF OFDM waveform is upconverted through the
chosen mixer (ideal multiplier, fitted model, or surrogate device), passed
through a delay/Doppler two-target channel, downconverted from one comb copy,
and processed into a range-Doppler map by per-subcarrier spectral division.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import signals as sig
from .errors import (
    BandOverlapError,
    MaskCoversMapError,
    ZeroTxSymbolError,
)
from .model import MixerModel, eval_mixer
from .oracle import SurrogateDevice, surrogate_eval
from .signals import OfdmFrame, OfdmFrameConfig, SampledSignal, ToneSet

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class Target:
    delay: float        # seconds
    doppler: float      # Hz
    gain: float = 1.0

    def __post_init__(self):
        if self.delay < 0:
            raise ValueError("target delay must be >= 0")


@dataclass(frozen=True)
class RadarScenario:
    frame_config: OfdmFrameConfig
    lo_tones: ToneSet
    targets: tuple[Target, ...]
    tx_mixer: object = "ideal"       # "ideal" | MixerModel | SurrogateDevice
    rx_conversion: object = "ideal"  # "ideal" | MixerModel | SurrogateDevice
    processed_band: str = "lower_comb"
    noise_floor: float | None = None  # dBm/Hz, one-sided, at ref impedance
    noise_seed: int = 0
    sample_rate: float = 64e9
    zero_pad: int = 4
    mask_half_widths: tuple[int, int] = (3, 3)  # (range, Doppler) bins at pad 1

    def __post_init__(self):
        object.__setattr__(self, "targets", tuple(self.targets))
        if self.processed_band not in ("lower_comb", "upper_comb"):
            raise ValueError("processed_band must be 'lower_comb' or 'upper_comb'")
        if self.zero_pad < 1:
            raise ValueError("zero_pad must be >= 1")
        half_rate = 1.0 / (2.0 * self.frame_config.symbol_duration)
        for t in self.targets:
            if abs(t.doppler) >= half_rate:
                raise ValueError(
                    f"target Doppler {t.doppler} Hz exceeds half the symbol rate")

    @property
    def selected_lo(self):
        """(frequency, amplitude) of the LO tone whose copy is processed."""
        tones = self.lo_tones.tones
        tone = tones[0] if self.processed_band == "lower_comb" else tones[-1]
        return tone.frequency, tone.amplitude


@dataclass(frozen=True)
class RangeDopplerMap:
    power: np.ndarray        # dB, peak-normalized, range x Doppler
    range_axis: np.ndarray   # meters
    doppler_axis: np.ndarray  # Hz

    def __post_init__(self):
        for name in ("power", "range_axis", "doppler_axis"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.power.shape != (len(self.range_axis), len(self.doppler_axis)):
            raise ValueError("axes do not match the power matrix")


@dataclass(frozen=True)
class RadarMetrics:
    sinr: float
    pslr: float
    islr: float
    peak_positions: tuple[tuple[int, int], ...]


def _band_rotation(signal: SampledSignal, bands, angle: float) -> SampledSignal:
    """Rotate all one-sided bins inside the given (low, high) Hz bands."""
    if angle == 0.0:
        return signal
    n = len(signal)
    spec = np.fft.rfft(signal.samples)
    freqs = np.arange(len(spec)) * signal.grid_base
    mask = np.zeros(len(spec), dtype=bool)
    for lo, hi in bands:
        mask |= (freqs >= lo) & (freqs <= hi)
    spec[mask] *= np.exp(1j * angle)
    return SampledSignal(signal.sample_rate, np.fft.irfft(spec, n))


def _copy_bands(lo_tones: ToneSet, cfg: OfdmFrameConfig):
    return [(f + cfg.carrier_if - cfg.bandwidth / 2.0,
             f + cfg.carrier_if + cfg.bandwidth / 2.0)
            for f in lo_tones.frequencies]


def comb_upconvert(if_signal: SampledSignal, lo_tones: ToneSet, mixer,
                   frame_config: OfdmFrameConfig | None = None,
                   p_in_dbm: float | None = None) -> SampledSignal:
    """Single-mixer comb upconversion of a real IF record.

    ``mixer`` is ``"ideal"`` (pure multiplier), a fitted ``MixerModel``, or a
    ``SurrogateDevice``.  When the frame config and IF input power are given,
    the power-dependent phase of the device/model is applied as one uniform
    rotation of each comb copy band (per-subcarrier phase is out of scope).
    """
    v_lo = sig.synth_multitone(lo_tones, if_signal.sample_rate, len(if_signal))
    if mixer == "ideal":
        return SampledSignal(if_signal.sample_rate,
                             if_signal.samples * v_lo.samples)
    if isinstance(mixer, MixerModel):
        out = eval_mixer(mixer, if_signal, v_lo)
        if frame_config is not None and p_in_dbm is not None and mixer.phase:
            theta = float(np.mean([poly(p_in_dbm)
                                   for poly in mixer.phase.values()]))
            out = _band_rotation(out, _copy_bands(lo_tones, frame_config), theta)
        return out
    if isinstance(mixer, SurrogateDevice):
        out = surrogate_eval(mixer, if_signal, v_lo)
        if frame_config is not None and p_in_dbm is not None:
            theta = mixer.phase_offset(p_in_dbm)
            out = _band_rotation(out, _copy_bands(lo_tones, frame_config), theta)
        return out
    raise TypeError(f"unsupported mixer {mixer!r}")


def apply_channel(rf: SampledSignal, targets,
                  noise_floor: float | None = None,
                  noise_seed: int = 0,
                  ref_impedance: float = sig.DEFAULT_IMPEDANCE) -> SampledSignal:
    """Delay/Doppler channel on the analytic signal.

    Delay is a frequency-domain phase ramp (fractional delays allowed),
    Doppler a continuous frequency shift.  Optional white noise is added at a
    one-sided density of ``noise_floor`` dBm/Hz into ``ref_impedance``.
    """
    n = len(rf)
    fs = rf.sample_rate
    analytic = sig.analytic_signal(rf.samples)
    spec = np.fft.fft(analytic)
    freqs = np.fft.fftfreq(n, d=1.0 / fs)
    t = np.arange(n) / fs
    out = np.zeros(n)
    for tgt in targets:
        shifted = np.fft.ifft(spec * np.exp(-2j * math.pi * freqs * tgt.delay))
        if tgt.doppler:
            shifted = shifted * np.exp(2j * math.pi * tgt.doppler * t)
        out += tgt.gain * np.real(shifted)
    if noise_floor is not None:
        n0_w = 10.0 ** ((noise_floor - 30.0) / 10.0)
        sigma = math.sqrt(n0_w * ref_impedance * fs / 2.0)
        rng = np.random.default_rng(noise_seed)
        out = out + sigma * rng.standard_normal(n)
    return SampledSignal(fs, out)


def _decimate_to_baseband(z: np.ndarray, factor: int, nb: int) -> np.ndarray:
    """Ideal low-pass to half the baseband rate plus decimation, via an exact
    frequency-domain crop (inverse of ``signals.interpolate_complex``)."""
    spec = np.fft.fft(z)
    half = nb // 2
    cropped = np.empty(nb, dtype=complex)
    cropped[:half] = spec[:half]
    cropped[half:] = spec[len(z) - (nb - half):]
    return np.fft.ifft(cropped) / factor


def downconvert_and_demod(rf: SampledSignal, scenario: RadarScenario,
                          frame: OfdmFrame) -> np.ndarray:
    """Select one comb copy, downconvert to baseband rate B, strip CPs and
    DFT each symbol.  Ideal loopback returns the transmitted grid exactly."""
    cfg = scenario.frame_config
    b = cfg.bandwidth
    spacings = np.diff(scenario.lo_tones.frequencies)
    if len(spacings) and np.min(spacings) < b:
        raise BandOverlapError(
            f"comb spacing {np.min(spacings)} Hz < bandwidth {b} Hz: "
            "the copies cannot be separated")
    fs = rf.sample_rate
    factor = int(round(fs / b))
    f_lo_sel, a_sel = scenario.selected_lo
    n = np.arange(len(rf))
    rx = scenario.rx_conversion
    if rx == "ideal":
        f_sel = f_lo_sel + cfg.carrier_if
        z = rf.samples * np.exp(-2j * math.pi * f_sel * n / fs)
    else:
        lo_single = ToneSet("LO", (scenario.lo_tones.tones[
            0 if scenario.processed_band == "lower_comb" else -1],))
        v_lo = sig.synth_multitone(lo_single, fs, len(rf))
        if isinstance(rx, MixerModel):
            mixed = eval_mixer(rx, rf, v_lo)
        elif isinstance(rx, SurrogateDevice):
            mixed = surrogate_eval(rx, rf, v_lo)
        else:
            raise TypeError(f"unsupported rx conversion {rx!r}")
        # real mixing lands the copy at the IF carrier; finish complex
        z = mixed.samples * np.exp(-2j * math.pi * cfg.carrier_if * n / fs)
        # real mixing by cos halves the amplitude relative to the complex LO
        z = z * (2.0 / a_sel if isinstance(rx, SurrogateDevice) else 2.0)
    baseband = _decimate_to_baseband(z, factor, cfg.frame_samples)
    # undo the known deterministic chain gain (ideal path: A_LO/4 from the
    # product-to-sum split; device paths share the same convention so the
    # map normalization stays comparable)
    gain = frame.scale * a_sel / 4.0
    return sig.demodulate_baseband(baseband / gain, cfg)


def range_doppler(f_tx: np.ndarray, f_rx: np.ndarray,
                  config: OfdmFrameConfig, zero_pad: int = 1):
    """Spectral-division range-Doppler processing.

    Element-wise division, IDFT across subcarriers (range), DFT across
    symbols (Doppler, shifted to center zero), both zero-padded.
    Returns the peak-normalized dB map and the complex map before
    magnitude-squaring.
    """
    f_tx = np.asarray(f_tx, dtype=complex)
    f_rx = np.asarray(f_rx, dtype=complex)
    if f_tx.shape != f_rx.shape:
        raise ValueError("grids must share a shape")
    if np.any(f_tx == 0):
        raise ZeroTxSymbolError("transmitted grid contains zero symbols")
    d = f_rx / f_tx
    n, m = d.shape
    rng_prof = np.fft.ifft(d, n=n * zero_pad, axis=0) * zero_pad
    cmap = np.fft.fft(rng_prof, n=m * zero_pad, axis=1)
    cmap = np.fft.fftshift(cmap, axes=1)
    power = np.abs(cmap) ** 2
    peak = power.max()
    if peak == 0:
        raise ZeroTxSymbolError("all-zero received grid")
    power_db = 10.0 * np.log10(np.maximum(power / peak, 1e-300))
    n_pad, m_pad = n * zero_pad, m * zero_pad
    range_axis = SPEED_OF_LIGHT * np.arange(n_pad) / (2.0 * config.bandwidth * zero_pad)
    t_sym = config.symbol_duration
    doppler_axis = (np.arange(m_pad) - m_pad // 2) / (m_pad * t_sym)
    return RangeDopplerMap(power_db, range_axis, doppler_axis), cmap


def _mainlobe_bounds(cut: np.ndarray, peak: int):
    """Indices of the first local minima on each side of ``peak``."""
    left = peak
    while left > 0 and cut[left - 1] < cut[left]:
        left -= 1
    right = peak
    while right < len(cut) - 1 and cut[right + 1] < cut[right]:
        right += 1
    return left, right


def image_metrics(rdm: RangeDopplerMap, n_targets: int,
                  mask_half_widths: tuple[int, int] = (3, 3)) -> RadarMetrics:
    """Image SINR plus Doppler-cut PSLR/ISLR for the strongest target.

    Peaks are found by iterative max-and-mask.  The SINR mask covers, per
    target, the full range row and Doppler column through its peak plus a
    rectangle of the given half-widths; SINR is the strongest peak over the
    mean of what remains.
    """
    if n_targets < 1:
        raise ValueError("n_targets must be >= 1")
    power = 10.0 ** (rdm.power / 10.0)
    n_r, n_d = power.shape
    hr, hd = mask_half_widths
    mask = np.zeros_like(power, dtype=bool)
    peaks = []
    work = power.copy()
    for _ in range(n_targets):
        if np.all(mask):
            raise MaskCoversMapError("masks cover the whole map")
        work[mask] = -1.0
        r, dpp = np.unravel_index(int(np.argmax(work)), work.shape)
        peaks.append((int(r), int(dpp)))
        mask[r, :] = True
        mask[:, dpp] = True
        mask[max(0, r - hr):r + hr + 1, max(0, dpp - hd):dpp + hd + 1] = True
    if np.all(mask):
        raise MaskCoversMapError("masks cover the whole map")
    strongest = peaks[0]
    sinr = 10.0 * math.log10(power[strongest] / float(np.mean(power[~mask])))

    cut = power[strongest[0], :]
    pk = strongest[1]
    left, right = _mainlobe_bounds(cut, pk)
    side = np.concatenate([cut[:left], cut[right + 1:]])
    if len(side) == 0:
        pslr = -math.inf
        islr = -math.inf
    else:
        pslr = 10.0 * math.log10(max(float(np.max(side)), 1e-300) / cut[pk])
        main_energy = float(np.sum(cut[left:right + 1]))
        islr = 10.0 * math.log10(max(float(np.sum(side)), 1e-300) / main_energy)
    return RadarMetrics(float(sinr), float(pslr), float(islr), tuple(peaks))


def run_scenario(scenario: RadarScenario, seed: int | None = None):
    """Full chain: frame, comb upconversion, channel, demod, RDM, metrics."""
    cfg = scenario.frame_config
    if seed is not None:
        cfg = OfdmFrameConfig(cfg.carrier_if, cfg.bandwidth, cfg.subcarriers,
                              cfg.cp_length, cfg.symbols, cfg.avg_if_power,
                              seed=seed, guard_center=cfg.guard_center)
    frame = sig.generate_ofdm_frame(cfg)
    if_signal = sig.upconvert_to_if(frame, scenario.sample_rate)
    rf = comb_upconvert(if_signal, scenario.lo_tones, scenario.tx_mixer,
                        frame_config=cfg, p_in_dbm=cfg.avg_if_power)
    rf = apply_channel(rf, scenario.targets, scenario.noise_floor,
                       scenario.noise_seed)
    f_rx = downconvert_and_demod(rf, scenario, frame)
    rdm, _ = range_doppler(frame.symbol_grid, f_rx, cfg, scenario.zero_pad)
    hw = (scenario.mask_half_widths[0] * scenario.zero_pad,
          scenario.mask_half_widths[1] * scenario.zero_pad)
    metrics = image_metrics(rdm, max(1, len(scenario.targets)), hw)
    return rdm, metrics, frame, f_rx
