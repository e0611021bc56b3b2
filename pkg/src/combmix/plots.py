"""SVG figure rendering for the command-line report path.

Every figure has a CSV twin written by the caller, so plots are purely
for human inspection.  Rendering is deterministic: the Agg backend, a
fixed hash salt, and no embedded timestamps.
"""

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "combmix"

import matplotlib.pyplot as plt
import numpy as np

# Dropping the creation date keeps reruns byte-identical.
_SAVE_KW = {"format": "svg", "metadata": {"Date": None}}


def plot_sweep_curves(path, power_grid, y_f, y_im3, model_f=None,
                      model_im3=None, p1db=None):
    """Fundamental and IM3 output power versus input power.

    Reference curves are drawn as markers; model curves, when given, as
    solid lines.  The 1 dB compression point is annotated when known.
    """
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ax.plot(power_grid, y_f, "o", ms=4, color="tab:blue", label="fundamental (ref)")
    ax.plot(power_grid, y_im3, "s", ms=4, color="tab:red", label="IM3 (ref)")
    if model_f is not None:
        ax.plot(power_grid, model_f, "-", color="tab:blue", label="fundamental (model)")
    if model_im3 is not None:
        ax.plot(power_grid, model_im3, "-", color="tab:red", label="IM3 (model)")
    if p1db is not None and np.isfinite(p1db):
        ax.axvline(p1db, color="gray", ls="--", lw=1)
        ax.annotate("P1dB = %.2f dBm" % p1db, xy=(p1db, ax.get_ylim()[0]),
                    xytext=(4, 10), textcoords="offset points", fontsize=8)
    ax.set_xlabel("input power per sweep point (dBm)")
    ax.set_ylabel("output power (dBm)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_spectrum_overlay(path, freqs, ref_dbm, model_dbm=None, floor=-120.0):
    """Output spectrum at the reference input power, stem style."""
    freqs = np.asarray(freqs, dtype=float)
    ref_dbm = np.asarray(ref_dbm, dtype=float)
    keep = ref_dbm > floor
    if model_dbm is not None:
        keep = keep | (np.asarray(model_dbm) > floor)
    fig, ax = plt.subplots(figsize=(6.8, 4.2))
    ax.vlines(freqs[keep] / 1e9, floor, ref_dbm[keep], color="tab:blue",
              lw=1.2, label="reference")
    if model_dbm is not None:
        model_dbm = np.asarray(model_dbm, dtype=float)
        ax.plot(freqs[keep] / 1e9, model_dbm[keep], "x", ms=5,
                color="tab:red", label="model")
    ax.set_ylim(floor, None)
    ax.set_xlabel("frequency (GHz)")
    ax.set_ylabel("power (dBm)")
    ax.grid(True, alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def plot_range_doppler(path, rdm, dynamic_range=60.0):
    """Range-Doppler map heatmap, clipped to a dynamic range below the peak."""
    peak = float(np.max(rdm.power))
    fig, ax = plt.subplots(figsize=(6.0, 4.6))
    im = ax.pcolormesh(rdm.doppler_axis / 1e3, rdm.range_axis, rdm.power,
                       vmin=peak - dynamic_range, vmax=peak,
                       shading="nearest", cmap="viridis", rasterized=True)
    ax.set_xlabel("Doppler (kHz)")
    ax.set_ylabel("range (m)")
    fig.colorbar(im, ax=ax, label="power (dB)")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
