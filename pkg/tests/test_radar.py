"""OFDM radar chain: upconversion comb, channel, processing, metrics."""

import numpy as np
import pytest

from combmix import signals as sig
from combmix.errors import (BandOverlapError, MaskCoversMapError,
                            ZeroTxSymbolError)
from combmix.radar import (RadarScenario, Target, apply_channel,
                           comb_upconvert, image_metrics, range_doppler,
                           run_scenario)

FS = 64e9


@pytest.fixture(scope="module")
def frame_cfg():
    return sig.OfdmFrameConfig(carrier_if=1e9, bandwidth=500e6,
                               subcarriers=256, cp_length=32, symbols=32,
                               avg_if_power=-13.0, seed=5)


@pytest.fixture(scope="module")
def lo_tones():
    return sig.tone_set("LO", [9e9, 9.5e9]).scaled_to_power(3.0103)


def _scenario(frame_cfg, lo_tones, targets, **kw):
    return RadarScenario(frame_config=frame_cfg, lo_tones=lo_tones,
                         targets=tuple(targets), **kw)


def test_comb_places_copies_at_every_lo_tone(frame_cfg, lo_tones):
    frame = sig.generate_ofdm_frame(frame_cfg)
    if_sig = sig.upconvert_to_if(frame, FS)
    rf = comb_upconvert(if_sig, lo_tones, "ideal")
    spec = np.abs(np.fft.rfft(rf.samples))
    df = FS / len(rf)
    for f_lo in lo_tones.frequencies:
        for side in (-1.0, 1.0):
            center = int(round((f_lo + side * 1e9) / df))
            band = spec[center - 100:center + 100]
            floor = np.median(spec)
            assert np.max(band) > 100 * floor


def test_ideal_loopback_is_exact(frame_cfg, lo_tones):
    scenario = _scenario(frame_cfg, lo_tones, [Target(0.0, 0.0, 1.0)])
    rdm, metrics, frame, f_rx = run_scenario(scenario)
    evm = np.sqrt(np.mean(np.abs(f_rx - frame.symbol_grid) ** 2)
                  / np.mean(np.abs(frame.symbol_grid) ** 2))
    assert evm < 1e-8
    r, d = metrics.peak_positions[0]
    assert rdm.range_axis[r] == pytest.approx(0.0, abs=1e-9)
    assert rdm.doppler_axis[d] == pytest.approx(0.0, abs=1e-9)


def test_on_bin_target_localizes_exactly(frame_cfg, lo_tones):
    t_sym = frame_cfg.symbol_duration
    doppler_bin = 1.0 / (frame_cfg.symbols * t_sym)
    range_bin_m = 299792458.0 / (2.0 * frame_cfg.bandwidth)
    delay_bins = 12
    dopp_bins = 3
    target = Target(delay_bins / frame_cfg.bandwidth,
                    dopp_bins * doppler_bin, 1.0)
    scenario = _scenario(frame_cfg, lo_tones, [target], zero_pad=1,
                         mask_half_widths=(2, 2))
    rdm, metrics, _, _ = run_scenario(scenario)
    r, d = metrics.peak_positions[0]
    assert rdm.range_axis[r] == pytest.approx(delay_bins * range_bin_m, rel=1e-12)
    assert rdm.doppler_axis[d] == pytest.approx(dopp_bins * doppler_bin, rel=1e-12)


def test_apply_channel_superposes_targets(frame_cfg, lo_tones):
    frame = sig.generate_ofdm_frame(frame_cfg)
    rf = comb_upconvert(sig.upconvert_to_if(frame, FS), lo_tones, "ideal")
    t1 = Target(8e-9, 0.0, 1.0)
    t2 = Target(24e-9, 0.0, 0.5)
    both = apply_channel(rf, [t1, t2])
    a = apply_channel(rf, [t1])
    b = apply_channel(rf, [t2])
    np.testing.assert_allclose(both.samples, a.samples + b.samples,
                               rtol=0, atol=1e-12)


def test_noise_floor_is_seeded(frame_cfg, lo_tones):
    frame = sig.generate_ofdm_frame(frame_cfg)
    rf = comb_upconvert(sig.upconvert_to_if(frame, FS), lo_tones, "ideal")
    a = apply_channel(rf, [Target(0.0, 0.0)], noise_floor=-170.0, noise_seed=4)
    b = apply_channel(rf, [Target(0.0, 0.0)], noise_floor=-170.0, noise_seed=4)
    c = apply_channel(rf, [Target(0.0, 0.0)], noise_floor=-170.0, noise_seed=5)
    np.testing.assert_array_equal(a.samples, b.samples)
    assert np.any(a.samples != c.samples)


def test_overlapping_comb_bands_rejected(frame_cfg):
    close = sig.tone_set("LO", [9e9, 9.25e9]).scaled_to_power(3.0103)
    scenario = _scenario(frame_cfg, close, [Target(0.0, 0.0)])
    with pytest.raises(BandOverlapError):
        run_scenario(scenario)


def test_range_doppler_rejects_zero_tx_symbols(frame_cfg):
    grid = np.ones((8, 4), dtype=complex)
    grid[3, 2] = 0.0
    with pytest.raises(ZeroTxSymbolError):
        range_doppler(grid, grid, frame_cfg)


def test_image_metrics_mask_exhaustion(frame_cfg, lo_tones):
    scenario = _scenario(frame_cfg, lo_tones, [Target(0.0, 0.0)], zero_pad=1)
    rdm, _, _, _ = run_scenario(scenario)
    with pytest.raises(MaskCoversMapError):
        image_metrics(rdm, n_targets=4,
                      mask_half_widths=(rdm.power.shape[0],
                                        rdm.power.shape[1]))


def test_metrics_find_both_targets(frame_cfg, lo_tones):
    t_sym = frame_cfg.symbol_duration
    dbin = 1.0 / (frame_cfg.symbols * t_sym)
    targets = [Target(16e-9, 2.5 * dbin, 1.0), Target(40e-9, -1.5 * dbin, 0.5)]
    scenario = _scenario(frame_cfg, lo_tones, targets, zero_pad=2)
    rdm, metrics, _, _ = run_scenario(scenario)
    assert len(metrics.peak_positions) == 2
    assert metrics.pslr < -10.0
    assert metrics.sinr > 30.0
    ranges = sorted(rdm.range_axis[r] for r, _ in metrics.peak_positions)
    c = 299792458.0
    expect = sorted(c * t.delay / 2.0 for t in targets)
    for got, want in zip(ranges, expect):
        assert got == pytest.approx(want, abs=c / (2 * frame_cfg.bandwidth))
