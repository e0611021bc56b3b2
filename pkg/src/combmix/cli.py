"""Command-line front end for the mixer modeling and radar pipeline.

Four subcommands tie the library together:

  characterize   sweep a surrogate device and write a reference dataset
  fit            run the staged fit against a reference dataset
  radar          run an OFDM radar scenario through a chosen TX mixer
  validate       run the invariant suite on a saved model document

Every run writes a manifest (command, seed, input digests) before any
result file, and all CSV/JSON outputs are byte-reproducible for equal
configs and seeds.  Each SVG figure has a CSV twin next to it.

Exit codes: 0 success, 1 validation error (bad config, bad schema,
violated precondition), 2 runtime failure.
"""

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__, plots
from . import signals as sig
from .errors import CombmixError, SchemaError
from .fit import (FitConfig, default_bin_sets, report_to_document,
                  run_algorithm1, save_report_trace_csv)
from .model import (MixerModel, eval_mixer, extract_p1db, load_model,
                    model_from_document, model_to_document, save_model,
                    sweep_am_am)
from .oracle import (SurrogateDevice, characterize, load_reference_csv,
                     load_surrogate, save_reference_csv)
from .radar import RadarScenario, Target, run_scenario


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; bad usage is a validation error."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


# ---------------------------------------------------------------------------
# Config loading and validation
# ---------------------------------------------------------------------------

def _key_line(text: str, key: str):
    """Best-effort line number of a key in the raw config text."""
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), start=1):
        if needle in line:
            return i
    return None


def load_config(path) -> tuple[dict, str]:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise SchemaError(f"cannot read config {path}: {exc}")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: {exc.msg}", line=exc.lineno)
    if not isinstance(doc, dict):
        raise SchemaError(f"{path}: top level must be an object", line=1)
    return doc, text


def _require(doc: dict, text: str, key: str, kind, path: str):
    if key not in doc:
        raise SchemaError(f"{path}: missing required key '{key}'")
    val = doc[key]
    if kind is float and isinstance(val, int):
        val = float(val)
    if not isinstance(val, kind):
        raise SchemaError(
            f"{path}: key '{key}' has wrong type (expected {kind.__name__})",
            line=_key_line(text, key))
    return val


def _tones_from_config(doc: dict, port: str, text: str, path: str):
    freqs = _require(doc, text, "frequencies", list, path)
    amps = doc.get("amplitudes")
    phases = doc.get("phases")
    tones = sig.tone_set(port, freqs, amps, phases)
    if "total_power_dbm" in doc:
        tones = tones.scaled_to_power(float(doc["total_power_dbm"]))
    return tones


def parse_power_grid(token: str) -> np.ndarray:
    """`lo:step:hi` inclusive, e.g. -30:1:0."""
    parts = token.split(":")
    if len(parts) != 3:
        raise SchemaError(f"power grid '{token}' is not of the form lo:step:hi")
    lo, step, hi = (float(p) for p in parts)
    if step <= 0 or hi < lo:
        raise SchemaError(f"power grid '{token}' must ascend with step > 0")
    n = int(round((hi - lo) / step))
    grid = lo + step * np.arange(n + 1)
    return grid[grid <= hi + 1e-9]


def _mixer_from_spec(spec, base_dir: str):
    """'ideal', a surrogate config path, or a model document path."""
    if spec == "ideal":
        return "ideal", "ideal"
    path = spec if os.path.isabs(spec) else os.path.join(base_dir, spec)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise SchemaError(f"cannot read mixer spec {spec}: {exc}")
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{spec}: {exc.msg}", line=exc.lineno)
    if "schema_version" in doc:
        return model_from_document(doc), path
    if "gm_gain" in doc:
        return SurrogateDevice(**doc), path
    raise SchemaError(f"{spec}: neither a model document nor a surrogate config")


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(doc: dict, path):
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_manifest(out_dir, command, config_path, seed, inputs):
    """Record what went into a run; written before any result file."""
    manifest = {
        "command": command,
        "config_path": os.path.abspath(config_path) if config_path else None,
        "seed": seed,
        "output_dir": os.path.abspath(out_dir),
        "tool_version": __version__,
        "input_digests": {os.path.abspath(p): _digest(p)
                          for p in inputs if p and os.path.exists(p)},
    }
    write_json(manifest, os.path.join(out_dir, "manifest.json"))


def _prepare_out(path):
    os.makedirs(path, exist_ok=True)
    return path


def _fmt(x) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------------------
# characterize
# ---------------------------------------------------------------------------

def cmd_characterize(args) -> int:
    doc, text = load_config(args.config)
    base = os.path.dirname(os.path.abspath(args.config))

    dev_spec = doc.get("device", {})
    inputs = [args.config]
    if isinstance(dev_spec, str):
        dev_path = dev_spec if os.path.isabs(dev_spec) else os.path.join(base, dev_spec)
        dev = load_surrogate(dev_path)
        inputs.append(dev_path)
    elif isinstance(dev_spec, dict):
        try:
            dev = SurrogateDevice(**dev_spec)
        except TypeError as exc:
            raise SchemaError(f"{args.config}: bad device parameters: {exc}",
                              line=_key_line(text, "device"))
    else:
        raise SchemaError(f"{args.config}: 'device' must be a path or an object",
                          line=_key_line(text, "device"))

    if_tones = _tones_from_config(
        _require(doc, text, "if_tones", dict, args.config), "IF", text, args.config)
    lo_tones = _tones_from_config(
        _require(doc, text, "lo_tones", dict, args.config), "LO", text, args.config)
    if args.power_grid:
        grid = parse_power_grid(args.power_grid)
    else:
        grid = parse_power_grid(_require(doc, text, "power_grid", str, args.config))
    p_in_ref = _require(doc, text, "p_in_ref", float, args.config)
    sample_rate = _require(doc, text, "sample_rate", float, args.config)
    length = _require(doc, text, "length", int, args.config)

    out = _prepare_out(args.out)
    write_manifest(out, "characterize", args.config, args.seed, inputs)

    refs = characterize(dev, if_tones, lo_tones, grid, p_in_ref,
                        sample_rate, length)
    save_reference_csv(refs, os.path.join(out, "reference.csv"))
    with open(os.path.join(out, "curves.csv"), "w", newline="\n") as fh:
        fh.write("p_in_dbm,fund_dbm,im3_dbm\n")
        for p, f, m in zip(refs.power_grid, refs.y_f, refs.y_im3):
            fh.write(f"{_fmt(p)},{_fmt(f)},{_fmt(m)}\n")
    sig.save_spectrum_csv(refs.s_r, os.path.join(out, "spectrum.csv"))

    p1 = extract_p1db(refs.power_grid, refs.y_f)
    plots.plot_sweep_curves(os.path.join(out, "curves.svg"),
                            refs.power_grid, refs.y_f, refs.y_im3, p1db=p1)
    freqs = np.arange(len(refs.s_r.bins)) * refs.s_r.bin_step
    plots.plot_spectrum_overlay(os.path.join(out, "spectrum.svg"),
                                freqs, refs.s_r.power_dbm)
    print(f"characterize: {len(grid)} sweep points, "
          f"P1dB = {p1:.2f} dBm, outputs in {out}")
    return 0


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------

def _fit_config_from(doc: dict, text: str, path: str,
                     seed, starts) -> FitConfig:
    sub = doc.get("fit", {})
    if not isinstance(sub, dict):
        raise SchemaError(f"{path}: 'fit' must be an object",
                          line=_key_line(text, "fit"))
    allowed = {f for f in FitConfig.__dataclass_fields__}
    unknown = set(sub) - allowed
    if unknown:
        key = sorted(unknown)[0]
        raise SchemaError(f"{path}: unknown fit option '{key}'",
                          line=_key_line(text, key))
    kwargs = dict(sub)
    if seed is not None:
        kwargs["seed"] = seed
    if starts is not None:
        kwargs["n_starts"] = starts
    cfg = FitConfig(**kwargs)
    if cfg.tau_w > cfg.tau_s:
        raise SchemaError(
            f"{path}: tau_w ({cfg.tau_w}) must not exceed tau_s ({cfg.tau_s})",
            line=_key_line(text, "tau_w"))
    return cfg


def cmd_fit(args) -> int:
    doc, text = load_config(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    ref_rel = _require(doc, text, "reference", str, args.config)
    ref_path = ref_rel if os.path.isabs(ref_rel) else os.path.join(base, ref_rel)
    cfg = _fit_config_from(doc, text, args.config, args.seed, args.starts)

    refs = load_reference_csv(ref_path)
    out = _prepare_out(args.out)
    write_manifest(out, "fit", args.config, cfg.seed, [args.config, ref_path])

    model, report = run_algorithm1(refs, cfg)
    save_model(model, os.path.join(out, "model.json"))
    write_json(report_to_document(report), os.path.join(out, "report.json"))
    save_report_trace_csv(report, os.path.join(out, "trace.csv"))

    g_f, g_im3 = sweep_am_am(model, refs.if_template, refs.lo_tones,
                             refs.power_grid, refs.fund_freq, refs.im3_freq,
                             refs.sample_rate, refs.length)
    p1 = extract_p1db(refs.power_grid, g_f)
    plots.plot_sweep_curves(os.path.join(out, "curves.svg"),
                            refs.power_grid, refs.y_f, refs.y_im3,
                            model_f=g_f, model_im3=g_im3, p1db=p1)
    with open(os.path.join(out, "curves.csv"), "w", newline="\n") as fh:
        fh.write("p_in_dbm,ref_fund_dbm,ref_im3_dbm,model_fund_dbm,model_im3_dbm\n")
        for row in zip(refs.power_grid, refs.y_f, refs.y_im3, g_f, g_im3):
            fh.write(",".join(_fmt(v) for v in row) + "\n")

    v_if = sig.synth_multitone(refs.if_template.scaled_to_power(refs.p_in_ref),
                               refs.sample_rate, refs.length)
    v_lo = sig.synth_multitone(refs.lo_tones, refs.sample_rate, refs.length)
    spec_m = sig.compute_spectrum(eval_mixer(model, v_if, v_lo),
                                  refs.ref_impedance)
    p_model = spec_m.power_dbm
    p_ref = refs.s_r.power_dbm
    freqs = np.arange(len(p_ref)) * refs.s_r.bin_step
    plots.plot_spectrum_overlay(os.path.join(out, "spectrum.svg"),
                                freqs, p_ref, p_model)
    with open(os.path.join(out, "spectrum.csv"), "w", newline="\n") as fh:
        fh.write("freq_hz,ref_dbm,model_dbm\n")
        for f, r, m in zip(freqs, p_ref, p_model):
            fh.write(f"{_fmt(f)},{_fmt(r)},{_fmt(m)}\n")

    bins = default_bin_sets(refs, cfg)
    with open(os.path.join(out, "residuals.csv"), "w", newline="\n") as fh:
        fh.write("bin,freq_hz,set,ref_dbm,model_dbm,error_db\n")
        for name, members in (("strong", bins.b_strong), ("weak", bins.b_weak)):
            for b in members:
                fh.write(f"{b},{_fmt(freqs[b])},{name},{_fmt(p_ref[b])},"
                         f"{_fmt(p_model[b])},{_fmt(p_model[b] - p_ref[b])}\n")
    bs = list(bins.b_strong)
    rms_bs = float(np.sqrt(np.mean((p_model[bs] - p_ref[bs]) ** 2))) if bs else 0.0
    print(f"fit: curve RMS f/IM3 = {report.losses['curve_f_rms']:.3f}/"
          f"{report.losses['curve_im3_rms']:.3f} dB, "
          f"strong-bin spectral RMS = {rms_bs:.3f} dB, outputs in {out}")
    return 0


# ---------------------------------------------------------------------------
# radar
# ---------------------------------------------------------------------------

def _scenario_from_config(doc, text, path, base, mixer_spec,
                          mixer_base=None):
    fr = _require(doc, text, "frame", dict, path)
    try:
        frame_cfg = sig.OfdmFrameConfig(**fr)
    except TypeError as exc:
        raise SchemaError(f"{path}: bad frame parameters: {exc}",
                          line=_key_line(text, "frame"))
    lo_tones = _tones_from_config(
        _require(doc, text, "lo_tones", dict, path), "LO", text, path)
    raw_targets = _require(doc, text, "targets", list, path)
    if not raw_targets:
        raise SchemaError(f"{path}: at least one target is required",
                          line=_key_line(text, "targets"))
    targets = []
    for t in raw_targets:
        if not isinstance(t, dict) or "delay" not in t:
            raise SchemaError(f"{path}: each target needs at least 'delay'",
                              line=_key_line(text, "targets"))
        targets.append(Target(float(t["delay"]), float(t.get("doppler", 0.0)),
                              float(t.get("gain", 1.0))))
    if mixer_spec is None:
        mixer, mixer_path = _mixer_from_spec(doc.get("tx_mixer", "ideal"), base)
    else:
        # command-line mixer choices resolve relative to the caller, not
        # the config file
        mixer, mixer_path = _mixer_from_spec(mixer_spec,
                                             mixer_base or os.getcwd())
    scenario = RadarScenario(
        frame_config=frame_cfg,
        lo_tones=lo_tones,
        targets=tuple(targets),
        tx_mixer=mixer,
        noise_floor=doc.get("noise_floor"),
        noise_seed=int(doc.get("noise_seed", 0)),
        sample_rate=float(doc.get("sample_rate", 64e9)),
        zero_pad=int(doc.get("zero_pad", 4)),
    )
    return scenario, mixer_path


def _save_rdm_csv(rdm, path):
    with open(path, "w", newline="\n") as fh:
        fh.write("# rows=range cols=doppler power_db\n")
        fh.write("range_m\\doppler_hz," +
                 ",".join(_fmt(v) for v in rdm.doppler_axis) + "\n")
        for r, row in zip(rdm.range_axis, rdm.power):
            fh.write(_fmt(r) + "," + ",".join(_fmt(v) for v in row) + "\n")


def _metrics_doc(metrics) -> dict:
    return {
        "sinr_db": metrics.sinr,
        "pslr_db": metrics.pslr,
        "islr_db": metrics.islr,
        "peak_positions": [list(p) for p in metrics.peak_positions],
    }


def _run_radar_once(scenario, seed, out, tag=""):
    rdm, metrics, _, _ = run_scenario(scenario, seed=seed)
    suffix = f"_{tag}" if tag else ""
    _save_rdm_csv(rdm, os.path.join(out, f"rdm{suffix}.csv"))
    plots.plot_range_doppler(os.path.join(out, f"rdm{suffix}.svg"), rdm)
    write_json(_metrics_doc(metrics), os.path.join(out, f"metrics{suffix}.json"))
    return metrics


def cmd_radar(args) -> int:
    doc, text = load_config(args.config)
    base = os.path.dirname(os.path.abspath(args.config))
    out = _prepare_out(args.out)

    if args.compare:
        spec_a, spec_b = args.compare
        scen_a, path_a = _scenario_from_config(doc, text, args.config, base, spec_a)
        scen_b, path_b = _scenario_from_config(doc, text, args.config, base, spec_b)
        inputs = [args.config]
        inputs += [p for p in (path_a, path_b) if p != "ideal"]
        write_manifest(out, "radar", args.config, args.seed, inputs)
        m_a = _run_radar_once(scen_a, args.seed, out, "a")
        m_b = _run_radar_once(scen_b, args.seed, out, "b")
        deltas = {
            "mixer_a": spec_a,
            "mixer_b": spec_b,
            "delta_sinr_db": m_b.sinr - m_a.sinr,
            "delta_pslr_db": m_b.pslr - m_a.pslr,
            "delta_islr_db": m_b.islr - m_a.islr,
        }
        write_json(deltas, os.path.join(out, "deltas.json"))
        print(f"radar compare: dSINR = {deltas['delta_sinr_db']:+.3f} dB, "
              f"dPSLR = {deltas['delta_pslr_db']:+.3f} dB, "
              f"dISLR = {deltas['delta_islr_db']:+.3f} dB, outputs in {out}")
        return 0

    scenario, mixer_path = _scenario_from_config(doc, text, args.config, base, None)
    inputs = [args.config] + ([mixer_path] if mixer_path != "ideal" else [])
    write_manifest(out, "radar", args.config, args.seed, inputs)
    metrics = _run_radar_once(scenario, args.seed, out)
    print(f"radar: SINR = {metrics.sinr:.2f} dB, PSLR = {metrics.pslr:.2f} dB, "
          f"ISLR = {metrics.islr:.2f} dB, outputs in {out}")
    return 0


# ---------------------------------------------------------------------------
# validate
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    """Invariant suite on a model document: schema, odd orders, bounds
    containment, phase evaluability, serialization round trip."""
    model = load_model(args.config)
    problems = []
    for name in ("core_if", "core_lo", "side_if", "side_lo"):
        block = getattr(model, name)
        box = model.bounds.get(name)
        if box is None:
            continue
        for i, (c, (lo, hi)) in enumerate(zip(block.coefficients, box)):
            if not lo <= c <= hi:
                problems.append(f"{name}[{i}] = {c} outside [{lo}, {hi}]")
    for k, poly in model.phase.items():
        val = poly(0.0)
        if not np.isfinite(val):
            problems.append(f"phase polynomial for bin {k} is not finite")
    doc = model_to_document(model)
    doc2 = model_to_document(model_from_document(doc))
    if json.dumps(doc, sort_keys=True) != json.dumps(doc2, sort_keys=True):
        problems.append("document round trip is not stable")
    if problems:
        for p in problems:
            print(f"validate: FAIL {p}")
        return 1
    print(f"validate: OK {args.config} (schema {doc['schema_version']}, "
          f"{len(model.phase)} phase polynomials)")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="combmix",
                     description="Behavioral mixer fitting and OFDM radar validation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, needs_out=True):
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        if needs_out:
            p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("characterize", help="sweep a device into a reference dataset")
    common(p)
    p.add_argument("--power-grid", default=None, metavar="LO:STEP:HI",
                   help="override the sweep grid, e.g. -30:1:0")
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("fit", help="fit a mixer model to a reference dataset")
    common(p)
    p.add_argument("--starts", type=int, default=None,
                   help="override the number of optimizer starts")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("radar", help="run an OFDM radar scenario")
    common(p)
    p.add_argument("--compare", nargs=2, metavar=("MIXER_A", "MIXER_B"),
                   help="run two TX mixers ('ideal', surrogate config, or "
                        "model document) and emit metric deltas")
    p.set_defaults(func=cmd_radar)

    p = sub.add_parser("validate", help="check the invariants of a model document")
    p.add_argument("--config", required=True, help="model document path")
    p.set_defaults(func=cmd_validate)
    return parser


def _join_grid_flag(argv):
    """Fold `--power-grid -30:1:0` into one token; argparse would otherwise
    read the leading-dash grid value as an option."""
    out = []
    it = iter(argv)
    for tok in it:
        if tok == "--power-grid":
            val = next(it, None)
            if val is None:
                out.append(tok)
            else:
                out.append(f"--power-grid={val}")
        else:
            out.append(tok)
    return out


def main(argv=None) -> int:
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    try:
        args = parser.parse_args(_join_grid_flag(argv))
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (SchemaError, CombmixError, ValueError) as exc:
        line = getattr(exc, "line", None)
        where = f" (line {line})" if line else ""
        print(f"combmix {args.command}: validation error{where}: {exc}",
              file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"combmix {args.command}: runtime failure: "
              f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
