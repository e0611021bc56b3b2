"""Three-stage spectrum-domain model fitting.

Stage 1 fits the core polynomial coefficients (IF and LO jointly) to the
fundamental/IM3 power-sweep curves plus a thresholded spectral loss; stage 2
fits the sidebranch polynomials against the complex sum with the core frozen;
stage 3 extracts per-bin phase polynomials by least squares.

The local search is a bounded Nelder-Mead descent (scipy) wrapped so that no
objective evaluation leaves the box constraints and the best-so-far trace is
monotone.  Multi-start: start 1 is a deterministic small-signal gain estimate,
the rest are drawn uniformly inside the box from per-start seeded streams, so
results are reproducible and schedule-independent.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import minimize

from . import signals as sig
from .errors import (
    GridMismatchError,
    InsufficientPointsError,
    NoProgressWarning,
    OffGridProductError,
)
from .model import (
    MixerModel,
    PhasePolynomial,
    PolynomialBlock,
    enumerate_products,
    fundamental_map,
)
from .oracle import ReferenceDataset
from .signals import Spectrum


@dataclass(frozen=True)
class BinSets:
    """Index sets driving the spectral terms of the fit."""

    b_core: tuple[int, ...]
    b_strong: tuple[int, ...]
    b_weak: tuple[int, ...]
    b_side: tuple[int, ...]
    tau_s: float
    tau_w: float
    freq_limits: tuple[float, float] | None = None

    def __post_init__(self):
        strong, weak = set(self.b_strong), set(self.b_weak)
        if strong & weak:
            raise ValueError("strong and weak bin sets must be disjoint")
        if not (strong | weak) <= set(self.b_core):
            raise ValueError("strong/weak bins must come from the core set")


def select_bins(s_r: Spectrum, products_core, products_side,
                tau_s: float, tau_w: float,
                freq_limits: tuple[float, float] | None = None) -> BinSets:
    """Classify theoretical product bins by reference power thresholds.

    Core bins at or above ``tau_s`` are strong, between the thresholds weak,
    below ``tau_w`` dropped from the loss.  Sidebranch bins exclude anything
    already claimed by the core list; reference bins at the floor stay in,
    pinning spurious sidebranch products down during the stage-2 fit.
    """
    if tau_w > tau_s:
        raise ValueError(f"tau_w ({tau_w}) must be <= tau_s ({tau_s})")
    pdbm = s_r.power_dbm

    def to_bins(freqs):
        out = []
        for f in freqs:
            if freq_limits is not None and not freq_limits[0] <= f <= freq_limits[1]:
                continue
            try:
                out.append(s_r.bin_index(f))
            except Exception as exc:
                raise OffGridProductError(str(exc)) from None
        return sorted(set(out))

    b_core = to_bins(products_core)
    b_strong = tuple(b for b in b_core if pdbm[b] >= tau_s)
    b_weak = tuple(b for b in b_core if tau_w <= pdbm[b] < tau_s)
    core_set = set(b_core)
    b_side = tuple(b for b in to_bins(products_side) if b not in core_set)
    return BinSets(tuple(b_core), b_strong, b_weak, b_side, tau_s, tau_w,
                   freq_limits)


def spectral_loss(s_p: Spectrum, s_r: Spectrum, bins: BinSets,
                  w_s: float, w_w: float) -> float:
    """Strong bins: two-sided dBm error norm; weak bins penalize only
    overshoot above the reference."""
    if len(s_p) != len(s_r) or s_p.bin_step != s_r.bin_step:
        raise GridMismatchError("predicted and reference spectra differ in grid")
    return _spectral_loss_dbm(s_p.power_dbm, s_r.power_dbm, bins, w_s, w_w)


def _spectral_loss_dbm(p_dbm, r_dbm, bins: BinSets, w_s, w_w) -> float:
    loss = 0.0
    if bins.b_strong and w_s:
        ks = np.asarray(bins.b_strong)
        loss += w_s * float(np.linalg.norm(p_dbm[ks] - r_dbm[ks]))
    if bins.b_weak and w_w:
        kw = np.asarray(bins.b_weak)
        loss += w_w * float(np.linalg.norm(np.maximum(0.0, p_dbm[kw] - r_dbm[kw])))
    return loss


@dataclass(frozen=True)
class FitConfig:
    """Everything Algorithm control: orders, weights, thresholds, box, search."""

    k_core: int = 3
    k_side: int = 2
    n_phase: int = 3
    w_f: float = 1.0
    w_im3: float = 1.0
    w_s: float = 1.0
    w_w: float = 1.0
    tau_s: float = -35.0
    tau_w: float = -70.0
    freq_limits: tuple[float, float] | None = None
    bounds_core: tuple | None = None   # 2*k_core (lo, hi) pairs, a then b
    bounds_side: tuple | None = None   # 2*k_side pairs, gamma then kappa
    n_starts: int = 8
    seed: int = 0
    reg_lambda: float = 0.0
    tolerance: float = 1e-6
    max_evals: int = 4000
    complex_sidebranch: bool = False

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        for w in (self.w_f, self.w_im3, self.w_s, self.w_w, self.reg_lambda):
            if w < 0:
                raise ValueError("weights and lambda must be non-negative")
        if self.bounds_core is None:
            object.__setattr__(self, "bounds_core",
                               tuple((-20.0, 20.0) for _ in range(2 * self.k_core)))
        else:
            object.__setattr__(self, "bounds_core",
                               tuple(tuple(p) for p in self.bounds_core))
        if self.bounds_side is None:
            object.__setattr__(self, "bounds_side",
                               tuple((-5.0, 5.0) for _ in range(2 * self.k_side)))
        else:
            object.__setattr__(self, "bounds_side",
                               tuple(tuple(p) for p in self.bounds_side))
        if len(self.bounds_core) != 2 * self.k_core:
            raise ValueError("bounds_core must hold 2*k_core pairs")
        if len(self.bounds_side) != 2 * self.k_side:
            raise ValueError("bounds_side must hold 2*k_side pairs")
        for lo, hi in self.bounds_core + self.bounds_side:
            if lo > hi:
                raise ValueError(f"bound pair ({lo}, {hi}) inverted")


@dataclass
class FitReport:
    """Everything the fit produced, plus enough to audit it."""

    alpha_opt: np.ndarray
    gamma_opt: np.ndarray
    kappa_opt: np.ndarray
    theta_opt: dict
    start_traces: list            # per start: monotone best-so-far objective
    start_finals: list
    final_objective: float
    losses: dict
    wall_time: float


class SweepContext:
    """Precomputed odd-power bases and DFT kernels for fast objective evals.

    The IF drive at power P is a common scaling of the template record, so
    v^(2k+1) at any power is a scalar multiple of the precomputed template
    power; the whole AM-AM sweep then reduces to small matrix products.
    """

    def __init__(self, refs: ReferenceDataset, cfg: FitConfig):
        self.refs = refs
        self.cfg = cfg
        n = refs.length
        fs = refs.sample_rate
        k_max = max(cfg.k_core, cfg.k_side)
        x_if = sig.synth_multitone(refs.if_template, fs, n).samples
        x_lo = sig.synth_multitone(refs.lo_tones, fs, n).samples
        self.if_pow = np.stack([x_if ** (2 * k + 1) for k in range(k_max)])
        self.lo_pow = np.stack([x_lo ** (2 * k + 1) for k in range(k_max)])
        p_template = sig.input_power_dbm(refs.if_template, refs.ref_impedance)
        # per-power amplitude scale of the IF template
        self.scales = 10.0 ** ((refs.power_grid - p_template) / 20.0)
        self.ref_scale = 10.0 ** ((refs.p_in_ref - p_template) / 20.0)
        odd = 2 * np.arange(k_max) + 1
        self.scale_pow = self.scales[:, None] ** odd[None, :]      # P x K
        self.ref_scale_pow = self.ref_scale ** odd                 # K

        grid_base = fs / n
        self.fund_bin = int(round(refs.fund_freq / grid_base))
        self.im3_bin = int(round(refs.im3_freq / grid_base))
        t = np.arange(n)
        self.kern_curves = self._kernel(t, n, [self.fund_bin, self.im3_bin])
        self._kern_cache: dict = {}
        self._n = n
        self._t = t

    def _kernel(self, t, n, bins) -> np.ndarray:
        k = np.asarray(bins)
        return (2.0 / n) * np.exp(-2j * math.pi * np.outer(t, k) / n)

    def kernel_for(self, bins: tuple) -> np.ndarray:
        if bins not in self._kern_cache:
            self._kern_cache[bins] = self._kernel(self._t, self._n, list(bins))
        return self._kern_cache[bins]

    def split_alpha(self, alpha: np.ndarray):
        k = self.cfg.k_core
        return np.asarray(alpha[:k]), np.asarray(alpha[k:2 * k])

    def lo_waveform(self, b_coeffs: np.ndarray) -> np.ndarray:
        return b_coeffs @ self.lo_pow[:len(b_coeffs)]

    def core_sweep_bins(self, alpha: np.ndarray):
        """Fundamental/IM3 complex amplitudes over the full power grid."""
        a, b = self.split_alpha(alpha)
        k = len(a)
        s_lo = self.lo_waveform(b)
        eff = self.scale_pow[:, :k] * a[None, :]          # P x K
        s_if = eff @ self.if_pow[:k]                      # P x N
        return (s_if * s_lo[None, :]) @ self.kern_curves  # P x 2 complex

    def core_waveform_ref(self, alpha: np.ndarray) -> np.ndarray:
        """Core time-domain output at the reference input power."""
        a, b = self.split_alpha(alpha)
        k = len(a)
        s_if = (a * self.ref_scale_pow[:k]) @ self.if_pow[:k]
        return s_if * self.lo_waveform(b)

    def core_bins_ref(self, alpha: np.ndarray, bins: tuple) -> np.ndarray:
        return self.core_waveform_ref(alpha) @ self.kernel_for(bins)

    def side_basis_ref(self, bins: tuple):
        """Complex spectra of the unit sidebranch basis functions at p_in_ref,
        evaluated at ``bins``: columns gamma_k then kappa_k."""
        kern = self.kernel_for(bins)
        ks = self.cfg.k_side
        cols = [self.ref_scale_pow[k] * (self.if_pow[k] @ kern) for k in range(ks)]
        cols += [self.lo_pow[k] @ kern for k in range(ks)]
        return np.stack(cols, axis=1)  # |bins| x 2K_s


def _regularizer(coeffs: np.ndarray, orders: np.ndarray, lam: float) -> float:
    if lam == 0.0:
        return 0.0
    return lam * float(np.sum((coeffs * 3.0 ** orders) ** 2))


def core_objective(alpha: np.ndarray, refs: ReferenceDataset, bins: BinSets,
                   cfg: FitConfig, ctx: SweepContext) -> float:
    """Weighted curve error plus spectral loss at the reference power plus the
    optional order-scaled regularizer."""
    curves = ctx.core_sweep_bins(alpha)
    pdbm = sig.power_dbm_of(curves, refs.ref_impedance, refs.s_r.floor_dbm)
    obj = 0.0
    if cfg.w_f:
        obj += cfg.w_f * float(np.linalg.norm(pdbm[:, 0] - refs.y_f))
    if cfg.w_im3:
        obj += cfg.w_im3 * float(np.linalg.norm(pdbm[:, 1] - refs.y_im3))
    loss_bins = tuple(sorted(set(bins.b_strong) | set(bins.b_weak)))
    if loss_bins and (cfg.w_s or cfg.w_w):
        amps = ctx.core_bins_ref(alpha, loss_bins)
        p = sig.power_dbm_of(amps, refs.ref_impedance, refs.s_r.floor_dbm)
        pred = dict(zip(loss_bins, p))
        r_dbm = refs.s_r.power_dbm
        if bins.b_strong and cfg.w_s:
            diff = [pred[b] - r_dbm[b] for b in bins.b_strong]
            obj += cfg.w_s * float(np.linalg.norm(diff))
        if bins.b_weak and cfg.w_w:
            over = [max(0.0, pred[b] - r_dbm[b]) for b in bins.b_weak]
            obj += cfg.w_w * float(np.linalg.norm(over))
    odd = np.array([2 * (i % cfg.k_core) + 1 for i in range(2 * cfg.k_core)])
    obj += _regularizer(np.asarray(alpha), odd, cfg.reg_lambda)
    return obj


def _bounded_descent(func, x0, bounds, tolerance, max_evals):
    """Nelder-Mead inside the box; returns (x, best value, best-so-far trace).

    Evaluations are clipped into the box before being scored, so the search
    never leaves the feasible set; the trace is the running minimum.
    """
    lb = np.array([b[0] for b in bounds])
    ub = np.array([b[1] for b in bounds])
    x0 = np.clip(np.asarray(x0, dtype=float), lb, ub)
    trace = []
    best = [math.inf, x0.copy()]

    def wrapped(x):
        x = np.clip(x, lb, ub)
        v = func(x)
        if v < best[0]:
            best[0] = v
            best[1] = x.copy()
        trace.append(best[0])
        return v

    if np.all(lb == ub):
        wrapped(x0)
        return best[1], best[0], trace
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        minimize(wrapped, x0, method="Nelder-Mead",
                 bounds=list(zip(lb, ub)),
                 options={"fatol": tolerance, "xatol": tolerance,
                          "maxfev": max_evals, "adaptive": len(x0) > 4})
    return best[1], best[0], trace


def _deterministic_core_start(refs: ReferenceDataset, cfg: FitConfig,
                              ctx: SweepContext) -> np.ndarray:
    """Linear small-signal estimate from the lowest-power y_F point:
    b1 = 1, a1 chosen so a1*b1*A_IF1*A_LO1/2 reproduces the output tone."""
    x = np.zeros(2 * cfg.k_core)
    p_out_w = 10.0 ** ((refs.y_f[0] - 30.0) / 10.0)
    a_out = math.sqrt(2.0 * refs.ref_impedance * p_out_w)
    scale0 = 10.0 ** ((refs.power_grid[0]
                       - sig.input_power_dbm(refs.if_template, refs.ref_impedance))
                      / 20.0)
    a_if1 = refs.if_template.tones[0].amplitude * scale0
    a_lo1 = refs.lo_tones.tones[0].amplitude
    x[cfg.k_core] = 1.0  # b1
    x[0] = 2.0 * a_out / (a_if1 * a_lo1)
    return x


def _start_points(x_det, bounds, n_starts, seed):
    lb = np.array([b[0] for b in bounds])
    ub = np.array([b[1] for b in bounds])
    starts = [np.clip(x_det, lb, ub)]
    for s in range(1, n_starts):
        rng = np.random.default_rng([seed, s])
        starts.append(lb + rng.random(len(lb)) * (ub - lb))
    return starts


def fit_core(refs: ReferenceDataset, bins: BinSets, cfg: FitConfig,
             ctx: SweepContext | None = None):
    """Algorithm stage 1: multi-start bounded fit of the core coefficients."""
    if ctx is None:
        ctx = SweepContext(refs, cfg)
    func = lambda x: core_objective(x, refs, bins, cfg, ctx)
    x_det = _deterministic_core_start(refs, cfg, ctx)
    starts = _start_points(x_det, cfg.bounds_core, cfg.n_starts, cfg.seed)
    results = []
    improved = False
    for x0 in starts:
        f0 = func(np.clip(x0, [b[0] for b in cfg.bounds_core],
                          [b[1] for b in cfg.bounds_core]))
        x, fbest, trace = _bounded_descent(func, x0, cfg.bounds_core,
                                           cfg.tolerance, cfg.max_evals)
        improved = improved or fbest < f0
        results.append((x, fbest, trace))
    if not improved:
        warnings.warn("no start improved on its initialization",
                      NoProgressWarning)
    best = min(range(len(results)), key=lambda i: results[i][1])
    alpha_opt = results[best][0]
    return alpha_opt, {
        "start_traces": [r[2] for r in results],
        "start_finals": [r[1] for r in results],
        "objective": results[best][1],
    }


def fit_sidebranch(alpha_opt: np.ndarray, refs: ReferenceDataset,
                   bins: BinSets, cfg: FitConfig,
                   ctx: SweepContext | None = None):
    """Algorithm stage 2: fit sidebranch polynomials against the complex sum
    of the frozen core and the sidebranch spectra, in the dBm domain (or the
    complex-linear domain when ``cfg.complex_sidebranch``)."""
    ks = cfg.k_side
    if not bins.b_side:
        zeros = np.zeros(ks)
        return zeros.copy(), zeros.copy(), 0.0
    if ctx is None:
        ctx = SweepContext(refs, cfg)
    b_side = tuple(bins.b_side)
    y_core = ctx.core_bins_ref(alpha_opt, b_side)
    basis = ctx.side_basis_ref(b_side)
    y_ref_bins = refs.s_r.bins[list(b_side)]
    r_dbm = refs.s_r.power_dbm[list(b_side)]

    def func(x):
        y = y_core + basis @ x
        if cfg.complex_sidebranch:
            return float(np.linalg.norm(y - y_ref_bins))
        p = sig.power_dbm_of(y, refs.ref_impedance, refs.s_r.floor_dbm)
        return float(np.linalg.norm(p - r_dbm))

    starts = _start_points(np.zeros(2 * ks), cfg.bounds_side,
                           cfg.n_starts, cfg.seed + 1)
    best_x, best_f = None, math.inf
    for x0 in starts:
        x, fbest, _ = _bounded_descent(func, x0, cfg.bounds_side,
                                       cfg.tolerance, cfg.max_evals)
        if fbest < best_f:
            best_x, best_f = x, fbest
    return best_x[:ks].copy(), best_x[ks:].copy(), best_f


def fit_phase(refs: ReferenceDataset, n_phase: int) -> dict:
    """Algorithm stage 3: per-bin least-squares phase polynomials of the
    unwrapped phase change relative to the smallest-power grid point."""
    if not refs.phase_curves:
        return {}
    if len(refs.power_grid) < n_phase:
        raise InsufficientPointsError(
            f"{len(refs.power_grid)} sweep points cannot support a degree-"
            f"{n_phase - 1} phase polynomial")
    out = {}
    for k, curve in sorted(refs.phase_curves.items()):
        dphi = np.asarray(curve) - curve[0]
        coeffs = np.polynomial.polynomial.polyfit(refs.power_grid, dphi,
                                                  n_phase - 1)
        out[int(k)] = PhasePolynomial(tuple(coeffs))
    return out


def default_bin_sets(refs: ReferenceDataset, cfg: FitConfig) -> BinSets:
    """Enumerate theoretical core/sidebranch products for the reference tone
    configuration and classify them against the reference spectrum."""
    nyquist = refs.sample_rate / 2.0
    core = enumerate_products(refs.if_template, refs.lo_tones,
                              2 * cfg.k_core - 1, "core", nyquist)
    side = enumerate_products(refs.if_template, refs.lo_tones,
                              2 * cfg.k_side - 1, "sidebranch", nyquist)
    return select_bins(refs.s_r, [f for f, _ in core], [f for f, _ in side],
                       cfg.tau_s, cfg.tau_w, cfg.freq_limits)


def run_algorithm1(refs: ReferenceDataset, cfg: FitConfig,
                   bins: BinSets | None = None):
    """Full staged fit; returns the assembled model and a report."""
    t0 = time.perf_counter()
    if bins is None:
        bins = default_bin_sets(refs, cfg)
    ctx = SweepContext(refs, cfg)
    try:
        alpha_opt, core_info = fit_core(refs, bins, cfg, ctx)
    except Exception as exc:
        raise type(exc)(f"core fitting step failed: {exc}") from exc
    try:
        gamma_opt, kappa_opt, side_resid = fit_sidebranch(
            alpha_opt, refs, bins, cfg, ctx)
    except Exception as exc:
        raise type(exc)(f"sidebranch fitting step failed: {exc}") from exc
    try:
        theta_opt = fit_phase(refs, cfg.n_phase)
    except Exception as exc:
        raise type(exc)(f"phase fitting step failed: {exc}") from exc

    final_obj = core_objective(alpha_opt, refs, bins, cfg, ctx)
    curves = ctx.core_sweep_bins(alpha_opt)
    pdbm = sig.power_dbm_of(curves, refs.ref_impedance, refs.s_r.floor_dbm)
    phase_resid = {}
    for k, poly in theta_opt.items():
        curve = np.asarray(refs.phase_curves[k]) - refs.phase_curves[k][0]
        fitted = np.array([poly(p) for p in refs.power_grid])
        phase_resid[k] = float(np.sqrt(np.mean((fitted - curve) ** 2)))
    losses = {
        "curve_f_rms": float(np.sqrt(np.mean((pdbm[:, 0] - refs.y_f) ** 2))),
        "curve_im3_rms": float(np.sqrt(np.mean((pdbm[:, 1] - refs.y_im3) ** 2))),
        "sidebranch_residual": float(side_resid),
        "phase_rms": phase_resid,
    }
    kc, ks = cfg.k_core, cfg.k_side
    model = MixerModel(
        core_if=PolynomialBlock(tuple(alpha_opt[:kc])),
        core_lo=PolynomialBlock(tuple(alpha_opt[kc:])),
        side_if=PolynomialBlock(tuple(gamma_opt)),
        side_lo=PolynomialBlock(tuple(kappa_opt)),
        phase=theta_opt,
        bounds={
            "core_if": [tuple(p) for p in cfg.bounds_core[:kc]],
            "core_lo": [tuple(p) for p in cfg.bounds_core[kc:]],
            "side_if": [tuple(p) for p in cfg.bounds_side[:ks]],
            "side_lo": [tuple(p) for p in cfg.bounds_side[ks:]],
        },
        fit_metadata={
            "seed": cfg.seed,
            "n_starts": cfg.n_starts,
            "weights": {"w_f": cfg.w_f, "w_im3": cfg.w_im3,
                        "w_s": cfg.w_s, "w_w": cfg.w_w},
            "thresholds": {"tau_s": bins.tau_s, "tau_w": bins.tau_w},
            "reg_lambda": cfg.reg_lambda,
            "tolerance": cfg.tolerance,
            "max_evals": cfg.max_evals,
            "p_in_ref_dbm": refs.p_in_ref,
            "fundamental_bins": sorted(theta_opt),
            "timestamp": None,
        },
    )
    report = FitReport(
        alpha_opt=np.asarray(alpha_opt),
        gamma_opt=np.asarray(gamma_opt),
        kappa_opt=np.asarray(kappa_opt),
        theta_opt=theta_opt,
        start_traces=core_info["start_traces"],
        start_finals=core_info["start_finals"],
        final_objective=final_obj,
        losses=losses,
        wall_time=time.perf_counter() - t0,
    )
    return model, report


def report_to_document(report: FitReport) -> dict:
    return {
        "alpha_opt": list(map(float, report.alpha_opt)),
        "gamma_opt": list(map(float, report.gamma_opt)),
        "kappa_opt": list(map(float, report.kappa_opt)),
        "theta_opt": {str(k): list(v.coefficients)
                      for k, v in sorted(report.theta_opt.items())},
        "start_finals": list(map(float, report.start_finals)),
        "final_objective": float(report.final_objective),
        "losses": report.losses,
        # wall time is deliberately not serialized: equal (config, seed) reruns
        # must produce byte-identical documents
    }


def save_report_trace_csv(report: FitReport, path):
    """One column per start: monotone best-so-far objective values."""
    n = max(len(t) for t in report.start_traces) if report.start_traces else 0
    header = ",".join(f"start_{i}" for i in range(len(report.start_traces)))
    lines = [header + "\n"]
    for row in range(n):
        vals = []
        for t in report.start_traces:
            vals.append(format(t[min(row, len(t) - 1)], ".17g") if t else "")
        lines.append(",".join(vals) + "\n")
    with open(path, "w", newline="\n") as fh:
        fh.writelines(lines)
