"""Surrogate device and reference dataset persistence."""

import numpy as np
import pytest

from combmix import signals as sig
from combmix.errors import AlignmentError
from combmix.oracle import (ReferenceDataset, SurrogateDevice, characterize,
                            load_reference_csv, load_surrogate,
                            save_reference_csv, save_surrogate,
                            surrogate_eval)

FS = 64e9
N = 12800


@pytest.fixture(scope="module")
def setup():
    dev = SurrogateDevice()
    if_t = sig.tone_set("IF", [0.995e9, 1.005e9], [1.0, 1.0])
    lo_t = sig.tone_set("LO", [9e9, 9.5e9], [1.0, 1.0]).scaled_to_power(3.0103)
    return dev, if_t, lo_t


def test_surrogate_is_linear_at_small_signal(setup):
    dev, if_t, lo_t = setup
    v_lo = sig.synth_multitone(lo_t, FS, N)
    v1 = sig.synth_multitone(if_t.scaled_to_power(-60.0), FS, N)
    v2 = sig.synth_multitone(if_t.scaled_to_power(-54.0), FS, N)
    y1 = surrogate_eval(dev, v1, v_lo)
    y2 = surrogate_eval(dev, v2, v_lo)
    s1 = sig.compute_spectrum(y1).power_dbm
    s2 = sig.compute_spectrum(y2).power_dbm
    k = sig.compute_spectrum(y1).bin_index(9e9 + 0.995e9)
    # 6 dB more drive -> 6 dB more fundamental, deep in the linear region
    assert s2[k] - s1[k] == pytest.approx(6.0, abs=1e-3)


def test_characterize_shapes_and_reference_point(setup):
    dev, if_t, lo_t = setup
    grid = np.arange(-30.0, 0.5, 2.0)
    refs = characterize(dev, if_t, lo_t, grid, -8.0, FS, N)
    assert len(refs.y_f) == len(grid) == len(refs.y_im3)
    assert refs.p_in_ref == -8.0
    assert refs.fund_freq == 9e9 + 0.995e9
    assert refs.im3_freq == 2 * 0.995e9 - 1.005e9 + 9e9
    for curve in refs.phase_curves.values():
        assert len(curve) == len(grid)


def test_characterize_requires_ref_on_grid(setup):
    dev, if_t, lo_t = setup
    with pytest.raises(AlignmentError):
        characterize(dev, if_t, lo_t, np.arange(-30.0, 0.5, 2.0), -7.5, FS, N)


def test_surrogate_json_round_trip(tmp_path, setup):
    dev = setup[0]
    path = tmp_path / "dev.json"
    save_surrogate(dev, path)
    back = load_surrogate(path)
    assert back == dev


def test_reference_csv_round_trip(tmp_path, setup):
    dev, if_t, lo_t = setup
    grid = np.arange(-20.0, 0.5, 5.0)
    refs = characterize(dev, if_t, lo_t, grid, -10.0, FS, N)
    path = tmp_path / "ref.csv"
    save_reference_csv(refs, path)
    back = load_reference_csv(path)
    np.testing.assert_array_equal(back.power_grid, refs.power_grid)
    np.testing.assert_array_equal(back.y_f, refs.y_f)
    np.testing.assert_array_equal(back.y_im3, refs.y_im3)
    np.testing.assert_array_equal(back.s_r.bins, refs.s_r.bins)
    assert back.if_template == refs.if_template
    assert back.lo_tones == refs.lo_tones
    assert set(back.phase_curves) == set(refs.phase_curves)
    for k in refs.phase_curves:
        np.testing.assert_array_equal(back.phase_curves[k],
                                      refs.phase_curves[k])
    assert (back.fund_freq, back.im3_freq) == (refs.fund_freq, refs.im3_freq)
    assert (back.sample_rate, back.length) == (refs.sample_rate, refs.length)


def test_dataset_validates_alignment(setup):
    dev, if_t, lo_t = setup
    grid = np.arange(-20.0, 0.5, 5.0)
    refs = characterize(dev, if_t, lo_t, grid, -10.0, FS, N)
    with pytest.raises(AlignmentError):
        ReferenceDataset(refs.power_grid, refs.y_f[:-1], refs.y_im3,
                         refs.p_in_ref, refs.s_r, refs.phase_curves,
                         refs.if_template, refs.lo_tones, refs.fund_freq,
                         refs.im3_freq, refs.sample_rate, refs.length)


def test_am_pm_rotation_kicks_in_above_threshold(setup):
    dev, if_t, lo_t = setup
    v_lo = sig.synth_multitone(lo_t, FS, N)
    grid = np.array([-30.0, -5.0])
    refs = characterize(dev, if_t, lo_t, grid, -5.0, FS, N)
    k = next(iter(refs.phase_curves))
    lo_phase, hi_phase = refs.phase_curves[k]
    expected = dev.am_pm_slope * (-5.0 - dev.am_pm_threshold)
    assert hi_phase - lo_phase == pytest.approx(expected, abs=1e-2)
