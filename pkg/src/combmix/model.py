"""Multibox behavioral mixer: odd-order polynomial cores around an ideal
multiplier, additive sidebranch polynomials, and a power-dependent spectral
phase block, plus JSON persistence of fitted models."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import signals as sig
from .errors import (
    BoundViolationError,
    EvenOrderError,
    LengthMismatchError,
    MissingPhasePolynomialError,
    RateMismatchError,
    SchemaMismatchError,
)
from .signals import SampledSignal, Spectrum, ToneSet

MODEL_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PolynomialBlock:
    """Memoryless odd-order polynomial; ``coefficients[i]`` weighs x^(2i+1)."""

    coefficients: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "coefficients",
                           tuple(float(c) for c in self.coefficients))

    @property
    def orders(self) -> tuple[int, ...]:
        return tuple(2 * i + 1 for i in range(len(self.coefficients)))

    @property
    def max_order(self) -> int:
        return 2 * len(self.coefficients) - 1 if self.coefficients else 0

    def is_zero(self) -> bool:
        return all(c == 0.0 for c in self.coefficients)


@dataclass(frozen=True)
class PhasePolynomial:
    """Power-dependent phase offset: ``dphi(P) = sum_l theta[l] * P**l``
    with P in dBm."""

    coefficients: tuple[float, ...]
    power_unit: str = "dBm"

    def __post_init__(self):
        object.__setattr__(self, "coefficients",
                           tuple(float(c) for c in self.coefficients))

    def __call__(self, p_in_dbm: float) -> float:
        return float(np.polynomial.polynomial.polyval(p_in_dbm, self.coefficients)) \
            if self.coefficients else 0.0


@dataclass(frozen=True)
class FundamentalEntry:
    bin_index: int
    if_index: int
    lo_index: int
    sign: int  # +1: f_LO + f_IF, -1: f_LO - f_IF


@dataclass(frozen=True)
class FundamentalMap:
    """Bins designated as fundamental mix products ``f_LO,j +/- f_IF,i``."""

    entries: tuple[FundamentalEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        idx = [e.bin_index for e in self.entries]
        if len(set(idx)) != len(idx):
            raise ValueError("fundamental bin indices must be distinct")

    @property
    def bin_indices(self) -> tuple[int, ...]:
        return tuple(e.bin_index for e in self.entries)


def fundamental_map(if_tones: ToneSet, lo_tones: ToneSet, bin_step: float,
                    n_bins: int, sideband: str = "upper") -> FundamentalMap:
    """Designate one sideband's worth of (i, j) products as fundamentals."""
    if sideband not in ("upper", "lower"):
        raise ValueError("sideband must be 'upper' or 'lower'")
    sign = 1 if sideband == "upper" else -1
    entries = []
    seen = set()
    for j, flo in enumerate(lo_tones.frequencies):
        for i, fif in enumerate(if_tones.frequencies):
            freq = flo + sign * fif
            k = int(round(freq / bin_step))
            if abs(freq / bin_step - k) > 1e-6 or not 0 <= k < n_bins:
                continue
            if k in seen:
                continue
            seen.add(k)
            entries.append(FundamentalEntry(k, i, j, sign))
    return FundamentalMap(tuple(entries))


@dataclass(frozen=True)
class MixerModel:
    """Fitted multibox mixer: IF/LO cores, IF/LO sidebranches, phase block."""

    core_if: PolynomialBlock
    core_lo: PolynomialBlock
    side_if: PolynomialBlock
    side_lo: PolynomialBlock
    phase: dict = field(default_factory=dict)  # bin index -> PhasePolynomial
    bounds: dict = field(default_factory=dict)  # block name -> [(lo, hi), ...]
    fit_metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("core_if", "core_lo", "side_if", "side_lo"):
            block = getattr(self, name)
            pairs = self.bounds.get(name)
            if pairs is None:
                continue
            if len(pairs) != len(block.coefficients):
                raise BoundViolationError(
                    f"{name}: {len(pairs)} bound pairs for "
                    f"{len(block.coefficients)} coefficients")
            for c, (lo, hi) in zip(block.coefficients, pairs):
                if not lo <= c <= hi:
                    raise BoundViolationError(
                        f"{name} coefficient {c} outside [{lo}, {hi}]")


def eval_poly(block: PolynomialBlock, samples: np.ndarray) -> np.ndarray:
    """Sample-wise odd polynomial: ``sum_i c_i x^(2i+1)``."""
    x = np.asarray(samples, dtype=float)
    out = np.zeros_like(x)
    x2 = x * x
    term = x.copy()
    for c in block.coefficients:
        if c != 0.0:
            out += c * term
        term = term * x2
    return out


def eval_mixer(model: MixerModel, v_if: SampledSignal,
               v_lo: SampledSignal) -> SampledSignal:
    """Time-domain mixer output (phase block excluded; see ``apply_phase``)."""
    if len(v_if) != len(v_lo):
        raise LengthMismatchError(f"{len(v_if)} vs {len(v_lo)} samples")
    if v_if.sample_rate != v_lo.sample_rate:
        raise RateMismatchError(
            f"{v_if.sample_rate} vs {v_lo.sample_rate} S/s")
    out = eval_poly(model.core_if, v_if.samples) * eval_poly(model.core_lo, v_lo.samples)
    if not model.side_if.is_zero():
        out = out + eval_poly(model.side_if, v_if.samples)
    if not model.side_lo.is_zero():
        out = out + eval_poly(model.side_lo, v_lo.samples)
    return SampledSignal(v_if.sample_rate, out)


def _signed_combos(freqs: np.ndarray, order: int):
    """All (frequency, coefficient-tuple) of exactly ``order`` signed picks."""
    n = len(freqs)
    for counts in itertools.product(range(order + 1), repeat=n):
        if sum(counts) != order:
            continue
        # each tone index i contributes m_i in {-c..c} with |m_i| <= c and
        # parity of c; enumerate signed totals per tone
        per_tone = []
        for c in counts:
            vals = list(range(-c, c + 1, 2))
            per_tone.append(vals)
        for ms in itertools.product(*per_tone):
            yield float(np.dot(ms, freqs)), tuple(ms)


def enumerate_products(if_tones: ToneSet | None, lo_tones: ToneSet | None,
                       max_order: int, kind: str,
                       nyquist: float | None = None) -> list[tuple[float, str]]:
    """Theoretical product frequencies of the mixer topology.

    ``kind="core"`` pairs one odd-order IF factor group with one odd-order LO
    factor group (each group order <= max_order); ``kind="sidebranch"`` takes
    single-port odd-order combinations (leakage, harmonics, intra-port IMD).
    DC and anything at/above ``nyquist`` are dropped; duplicates merged.
    """
    if max_order < 1 or max_order % 2 == 0:
        raise EvenOrderError(f"max_order must be odd and >= 1, got {max_order}")
    if kind not in ("core", "sidebranch"):
        raise ValueError("kind must be 'core' or 'sidebranch'")
    found: dict[float, str] = {}

    def describe(ms, tones, label):
        parts = []
        for i, m in enumerate(ms):
            if m:
                parts.append(f"{m:+d}*{label}[{i}]")
        return "".join(parts)

    if kind == "core":
        fif = if_tones.frequencies
        flo = lo_tones.frequencies
        for p in range(1, max_order + 1, 2):
            for q in range(1, max_order + 1, 2):
                for f1, m1 in _signed_combos(fif, p):
                    for f2, m2 in _signed_combos(flo, q):
                        f = abs(f1 + f2)
                        if f <= 0 or (nyquist is not None and f >= nyquist):
                            continue
                        key = round(f, 3)
                        if key not in found:
                            found[key] = (describe(m1, fif, "f_IF")
                                          + describe(m2, flo, "f_LO"))
    else:
        for tones, label in ((if_tones, "f_IF"), (lo_tones, "f_LO")):
            if tones is None:
                continue
            freqs = tones.frequencies
            for p in range(1, max_order + 1, 2):
                for f, ms in _signed_combos(freqs, p):
                    f = abs(f)
                    if f <= 0 or (nyquist is not None and f >= nyquist):
                        continue
                    key = round(f, 3)
                    if key not in found:
                        found[key] = describe(ms, freqs, label)
    return sorted(found.items())


def apply_phase(model: MixerModel, spec: Spectrum,
                fundamentals: FundamentalMap, p_in: float,
                strict: bool = True) -> Spectrum:
    """Rotate each fundamental bin by its fitted power-dependent phase."""
    bins = np.array(spec.bins)
    for entry in fundamentals.entries:
        k = entry.bin_index
        if not 0 <= k < len(bins):
            raise MissingPhasePolynomialError(f"bin {k} outside the spectrum")
        poly = model.phase.get(k)
        if poly is None:
            if strict:
                raise MissingPhasePolynomialError(
                    f"no phase polynomial for fundamental bin {k}")
            continue
        bins[k] = bins[k] * np.exp(1j * poly(p_in))
    return spec.with_bins(bins)


def sweep_am_am(model: MixerModel, if_template: ToneSet, lo_tones: ToneSet,
                power_grid, fund_freq: float, im3_freq: float,
                sample_rate: float, length: int,
                ref_impedance: float = sig.DEFAULT_IMPEDANCE):
    """Fundamental and IM3 output power (dBm) over an input power sweep."""
    power_grid = np.asarray(power_grid, dtype=float)
    if np.any(np.diff(power_grid) <= 0):
        raise ValueError("power grid must be strictly ascending")
    v_lo = sig.synth_multitone(lo_tones, sample_rate, length)
    f_f = np.empty(len(power_grid))
    f_im3 = np.empty(len(power_grid))
    for i, p in enumerate(power_grid):
        scaled = if_template.scaled_to_power(p, ref_impedance)
        v_if = sig.synth_multitone(scaled, sample_rate, length)
        spec = sig.compute_spectrum(eval_mixer(model, v_if, v_lo), ref_impedance)
        pdbm = spec.power_dbm
        f_f[i] = pdbm[spec.bin_index(fund_freq)]
        f_im3[i] = pdbm[spec.bin_index(im3_freq)]
    return f_f, f_im3


def extract_p1db(power_grid, y_f) -> float:
    """Input-referred 1 dB compression point of an AM-AM curve.

    The linear reference is a least-squares line over the lowest 25% of the
    grid; the crossing of the 1 dB gap is refined by local linear
    interpolation.  Returns ``nan`` when the curve never compresses by 1 dB.
    """
    power_grid = np.asarray(power_grid, dtype=float)
    y_f = np.asarray(y_f, dtype=float)
    n_ref = max(2, int(math.ceil(len(power_grid) * 0.25)))
    slope, intercept = np.polyfit(power_grid[:n_ref], y_f[:n_ref], 1)
    gap = (slope * power_grid + intercept) - y_f
    below = np.nonzero(gap >= 1.0)[0]
    if len(below) == 0:
        return float("nan")
    i = below[0]
    if i == 0:
        return float(power_grid[0])
    frac = (1.0 - gap[i - 1]) / (gap[i] - gap[i - 1])
    return float(power_grid[i - 1] + frac * (power_grid[i] - power_grid[i - 1]))


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def model_to_document(model: MixerModel) -> dict:
    return {
        "schema_version": MODEL_SCHEMA_VERSION,
        "core_if": list(model.core_if.coefficients),
        "core_lo": list(model.core_lo.coefficients),
        "side_if": list(model.side_if.coefficients),
        "side_lo": list(model.side_lo.coefficients),
        "phase": {str(k): list(v.coefficients) for k, v in sorted(model.phase.items())},
        "bounds": {k: [list(p) for p in v] for k, v in sorted(model.bounds.items())},
        "fit_metadata": model.fit_metadata,
    }


def model_from_document(doc: dict) -> MixerModel:
    if doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise SchemaMismatchError(
            f"unsupported model schema version {doc.get('schema_version')!r}")
    try:
        phase = {int(k): PhasePolynomial(tuple(v))
                 for k, v in doc.get("phase", {}).items()}
        bounds = {k: [tuple(p) for p in v] for k, v in doc.get("bounds", {}).items()}
        return MixerModel(
            core_if=PolynomialBlock(tuple(doc["core_if"])),
            core_lo=PolynomialBlock(tuple(doc["core_lo"])),
            side_if=PolynomialBlock(tuple(doc["side_if"])),
            side_lo=PolynomialBlock(tuple(doc["side_lo"])),
            phase=phase,
            bounds=bounds,
            fit_metadata=doc.get("fit_metadata", {}),
        )
    except KeyError as exc:
        raise SchemaMismatchError(f"missing model field {exc}") from None


def save_model(model: MixerModel, path):
    with open(path, "w", newline="\n") as fh:
        json.dump(model_to_document(model), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> MixerModel:
    with open(path) as fh:
        return model_from_document(json.load(fh))
