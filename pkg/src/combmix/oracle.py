"""Synthetic reference device and characterization sweeps.

The surrogate stands in for circuit-level simulation or bench measurements:
a smooth odd limiter on each port around an ideal multiplier, linear port
leakage, and a power-dependent phase rotation of the fundamental products.
Its exact shape is fixed here so fits against it are reproducible:

    sat(x; s) = s * tanh(x / s)        (sat'(0) = 1)

    out = sat(gm_gain * v_IF; gm_sat) * sat(v_LO; lo_sat)
          + if_leak * v_IF + lo_leak * v_LO

Because both limiters are odd, the surrogate generates no even-order
products, matching the double-balanced topology it imitates.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import signals as sig
from .errors import AlignmentError, LengthMismatchError, RateMismatchError, SchemaError
from .model import FundamentalMap, fundamental_map
from .signals import SampledSignal, Spectrum, ToneSet, Tone

_FMT = "%.17g"


def _fmt(x) -> str:
    return format(float(x), ".17g")


@dataclass(frozen=True)
class SurrogateDevice:
    """Parameter set of the synthetic saturating mixer."""

    gm_gain: float = 6.2
    gm_sat: float = 1.2
    lo_sat: float = 0.45
    if_leak: float = 0.02
    lo_leak: float = 0.05
    am_pm_slope: float = 0.02      # rad per dBm above the threshold
    am_pm_threshold: float = -12.0  # dBm

    def __post_init__(self):
        if self.gm_sat <= 0 or self.lo_sat <= 0:
            raise ValueError("saturation knees must be positive")
        if self.if_leak < 0 or self.lo_leak < 0:
            raise ValueError("leak gains must be non-negative")

    def phase_offset(self, p_in_dbm: float) -> float:
        """AM-PM rotation of fundamental products at the given input power."""
        return self.am_pm_slope * max(0.0, p_in_dbm - self.am_pm_threshold)


def _sat(x: np.ndarray, knee: float) -> np.ndarray:
    return knee * np.tanh(x / knee)


def rotate_bins(signal: SampledSignal, bin_indices, angle: float) -> SampledSignal:
    """Rotate selected one-sided DFT bins of a real record by ``angle``."""
    n = len(signal)
    spec = np.fft.rfft(signal.samples)
    rot = np.exp(1j * angle)
    for k in bin_indices:
        spec[k] = spec[k] * rot
    return SampledSignal(signal.sample_rate, np.fft.irfft(spec, n))


def surrogate_eval(dev: SurrogateDevice, v_if: SampledSignal,
                   v_lo: SampledSignal,
                   fundamentals: FundamentalMap | None = None,
                   p_in_dbm: float | None = None) -> SampledSignal:
    """Run the surrogate.  When ``fundamentals`` and ``p_in_dbm`` are given,
    the AM-PM rotation is applied spectrally to those bins."""
    if len(v_if) != len(v_lo):
        raise LengthMismatchError(f"{len(v_if)} vs {len(v_lo)} samples")
    if v_if.sample_rate != v_lo.sample_rate:
        raise RateMismatchError(f"{v_if.sample_rate} vs {v_lo.sample_rate} S/s")
    out = _sat(dev.gm_gain * v_if.samples, dev.gm_sat) * _sat(v_lo.samples, dev.lo_sat)
    out = out + dev.if_leak * v_if.samples + dev.lo_leak * v_lo.samples
    result = SampledSignal(v_if.sample_rate, out)
    if fundamentals is not None and p_in_dbm is not None:
        angle = dev.phase_offset(p_in_dbm)
        if angle != 0.0:
            result = rotate_bins(result, fundamentals.bin_indices, angle)
    return result


@dataclass(frozen=True)
class ReferenceDataset:
    """Power-sweep reference curves plus one full spectrum, ready for fitting."""

    power_grid: np.ndarray
    y_f: np.ndarray
    y_im3: np.ndarray
    p_in_ref: float
    s_r: Spectrum
    phase_curves: dict            # fundamental bin -> unwrapped radians per power
    if_template: ToneSet
    lo_tones: ToneSet
    fund_freq: float
    im3_freq: float
    sample_rate: float
    length: int
    ref_impedance: float = sig.DEFAULT_IMPEDANCE

    def __post_init__(self):
        for name in ("power_grid", "y_f", "y_im3"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = len(self.power_grid)
        if len(self.y_f) != n or len(self.y_im3) != n:
            raise AlignmentError("y_f/y_im3 must match the power grid length")
        for k, curve in self.phase_curves.items():
            if len(curve) != n:
                raise AlignmentError(f"phase curve for bin {k} misaligned")
        if not np.any(np.isclose(self.power_grid, self.p_in_ref)):
            raise AlignmentError("p_in_ref must be a power grid point")


def characterize(dev: SurrogateDevice, if_template: ToneSet, lo_tones: ToneSet,
                 power_grid, p_in_ref: float, sample_rate: float, length: int,
                 ref_impedance: float = sig.DEFAULT_IMPEDANCE,
                 fund_freq: float | None = None,
                 im3_freq: float | None = None,
                 sideband: str = "upper") -> ReferenceDataset:
    """Input power sweep of the surrogate: AM-AM / IM3 curves, one full
    spectrum at ``p_in_ref``, and unwrapped fundamental-bin phase curves."""
    power_grid = np.asarray(power_grid, dtype=float)
    fif = if_template.frequencies
    flo = lo_tones.frequencies
    if fund_freq is None:
        fund_freq = flo[0] + fif[0]
    if im3_freq is None:
        if len(fif) < 2:
            raise ValueError("default IM3 product needs two IF tones")
        im3_freq = 2.0 * fif[0] - fif[1] + flo[0]

    v_lo = sig.synth_multitone(lo_tones, sample_rate, length)
    n_bins = length // 2 + 1
    bin_step = sample_rate / length
    fund = fundamental_map(if_template, lo_tones, bin_step, n_bins, sideband)

    y_f = np.empty(len(power_grid))
    y_im3 = np.empty(len(power_grid))
    raw_phases = {e.bin_index: np.empty(len(power_grid)) for e in fund.entries}
    s_r = None
    for i, p in enumerate(power_grid):
        scaled = if_template.scaled_to_power(p, ref_impedance)
        v_if = sig.synth_multitone(scaled, sample_rate, length)
        out = surrogate_eval(dev, v_if, v_lo, fundamentals=fund, p_in_dbm=p)
        spec = sig.compute_spectrum(out, ref_impedance)
        pdbm = spec.power_dbm
        y_f[i] = pdbm[spec.bin_index(fund_freq)]
        y_im3[i] = pdbm[spec.bin_index(im3_freq)]
        for k in raw_phases:
            raw_phases[k][i] = np.angle(spec.bins[k])
        if np.isclose(p, p_in_ref):
            s_r = spec
    if s_r is None:
        raise AlignmentError("p_in_ref must be a power grid point")
    phase_curves = {k: np.unwrap(v) for k, v in raw_phases.items()}
    return ReferenceDataset(power_grid, y_f, y_im3, float(p_in_ref), s_r,
                            phase_curves, if_template, lo_tones,
                            float(fund_freq), float(im3_freq),
                            float(sample_rate), int(length), ref_impedance)


# ---------------------------------------------------------------------------
# Surrogate config persistence
# ---------------------------------------------------------------------------

def save_surrogate(dev: SurrogateDevice, path):
    doc = {k: getattr(dev, k) for k in (
        "gm_gain", "gm_sat", "lo_sat", "if_leak", "lo_leak",
        "am_pm_slope", "am_pm_threshold")}
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_surrogate(path) -> SurrogateDevice:
    with open(path) as fh:
        return SurrogateDevice(**json.load(fh))


# ---------------------------------------------------------------------------
# Reference CSV
# ---------------------------------------------------------------------------

def _tones_token(tones: ToneSet) -> str:
    return ";".join(f"{_fmt(t.frequency)}:{_fmt(t.amplitude)}:{_fmt(t.phase)}"
                    for t in tones.tones)


def _tones_from_token(token: str, port: str) -> ToneSet:
    tones = []
    for part in token.split(";"):
        f, a, p = (float(v) for v in part.split(":"))
        tones.append(Tone(f, a, p))
    return ToneSet(port, tuple(tones))


def save_reference_csv(ds: ReferenceDataset, path):
    lines = [
        "# schema=combmix-reference-v1\n",
        f"# p_in_ref_dbm={_fmt(ds.p_in_ref)}\n",
        f"# sample_rate_hz={_fmt(ds.sample_rate)} length={ds.length}\n",
        f"# ref_impedance_ohms={_fmt(ds.ref_impedance)}\n",
        f"# fund_freq_hz={_fmt(ds.fund_freq)} im3_freq_hz={_fmt(ds.im3_freq)}\n",
        f"# if_tones={_tones_token(ds.if_template)}\n",
        f"# lo_tones={_tones_token(ds.lo_tones)}\n",
        "[SWEEP]\n",
        "p_in_dbm,y_f_dbm,y_im3_dbm\n",
    ]
    for p, yf, y3 in zip(ds.power_grid, ds.y_f, ds.y_im3):
        lines.append(f"{_fmt(p)},{_fmt(yf)},{_fmt(y3)}\n")
    lines.append("[SPECTRUM]\n")
    lines.append(f"# bin_step_hz={_fmt(ds.s_r.bin_step)} "
                 f"floor_dbm={_fmt(ds.s_r.floor_dbm)} "
                 f"nyquist_is_last={int(ds.s_r.nyquist_is_last)}\n")
    lines.append("freq_hz,re,im\n")
    for k, v in enumerate(ds.s_r.bins):
        lines.append(f"{_fmt(k * ds.s_r.bin_step)},{_fmt(v.real)},{_fmt(v.imag)}\n")
    if ds.phase_curves:
        lines.append("[PHASE]\n")
        lines.append("bin,p_in_dbm,phase_rad\n")
        for k in sorted(ds.phase_curves):
            for p, ph in zip(ds.power_grid, ds.phase_curves[k]):
                lines.append(f"{k},{_fmt(p)},{_fmt(ph)}\n")
    with open(path, "w", newline="\n") as fh:
        fh.writelines(lines)


def load_reference_csv(path) -> ReferenceDataset:
    meta: dict = {}
    section = None
    sweep_rows, spec_rows, phase_rows = [], [], []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                for token in line[1:].split():
                    if "=" in token:
                        key, val = token.split("=", 1)
                        meta[key] = val
                continue
            if line.startswith("["):
                section = line.strip("[]")
                if section not in ("SWEEP", "SPECTRUM", "PHASE"):
                    raise SchemaError(f"unknown section {section!r}", line=lineno)
                continue
            if section == "SWEEP":
                if line.startswith("p_in_dbm"):
                    continue
                sweep_rows.append((lineno, line))
            elif section == "SPECTRUM":
                if line.startswith("freq_hz"):
                    continue
                spec_rows.append((lineno, line))
            elif section == "PHASE":
                if line.startswith("bin,"):
                    continue
                phase_rows.append((lineno, line))
            else:
                raise SchemaError("data before any section marker", line=lineno)

    def need(key):
        if key not in meta:
            raise SchemaError(f"missing metadata key {key!r}", line=1)
        return meta[key]

    if not sweep_rows:
        raise SchemaError("empty or missing [SWEEP] section")
    if not spec_rows:
        raise SchemaError("empty or missing [SPECTRUM] section")

    def parse(lineno, line, n_fields):
        parts = line.split(",")
        if len(parts) != n_fields:
            raise SchemaError(f"expected {n_fields} fields, got {len(parts)}",
                              line=lineno)
        try:
            return [float(v) for v in parts]
        except ValueError:
            raise SchemaError(f"bad numeric value in {line!r}", line=lineno) from None

    sweep = np.array([parse(ln, row, 3) for ln, row in sweep_rows])
    bins = np.array([complex(r, i) for _, r, i in
                     (parse(ln, row, 3) for ln, row in spec_rows)])
    s_r = Spectrum(float(need("bin_step_hz")), bins,
                   float(need("ref_impedance_ohms")),
                   float(meta.get("floor_dbm", sig.DEFAULT_FLOOR_DBM)),
                   bool(int(meta.get("nyquist_is_last", "0"))))
    power_grid = sweep[:, 0]
    phase_curves: dict = {}
    if phase_rows:
        per_bin: dict = {}
        for ln, row in phase_rows:
            b, p, ph = parse(ln, row, 3)
            per_bin.setdefault(int(b), []).append((p, ph))
        for b, pairs in per_bin.items():
            if len(pairs) != len(power_grid):
                raise AlignmentError(
                    f"phase curve for bin {b} has {len(pairs)} points, "
                    f"power grid has {len(power_grid)}")
            phase_curves[b] = np.array([ph for _, ph in pairs])
    return ReferenceDataset(
        power_grid, sweep[:, 1], sweep[:, 2],
        float(need("p_in_ref_dbm")), s_r, phase_curves,
        _tones_from_token(need("if_tones"), "IF"),
        _tones_from_token(need("lo_tones"), "LO"),
        float(need("fund_freq_hz")), float(need("im3_freq_hz")),
        float(need("sample_rate_hz")), int(need("length")),
        float(need("ref_impedance_ohms")))
