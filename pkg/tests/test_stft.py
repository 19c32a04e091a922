import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from faultsig.stft import StftConfig, Window, band_energy, dominant_frequency, spectral_peaks, stft


def direct_dft(frame):
    """O(n^2) one-sided DFT, written out sample by sample."""
    n = len(frame)
    out = np.zeros(n // 2 + 1, dtype=complex)
    for k in range(n // 2 + 1):
        acc = 0j
        for m in range(n):
            acc += frame[m] * np.exp(-2j * np.pi * k * m / n)
        out[k] = acc
    return out


def sine(fs, f, n, amp=1.0):
    return amp * np.sin(2 * np.pi * f * np.arange(n) / fs)


def test_config_validation():
    with pytest.raises(ValueError):
        StftConfig(window_len=100)
    with pytest.raises(ValueError):
        StftConfig(window_len=4)
    with pytest.raises(ValueError):
        StftConfig(window_len=64, hop=0)
    with pytest.raises(ValueError):
        StftConfig(window_len=64, hop=65)
    cfg = StftConfig(64)
    assert cfg.hop == 32 and cfg.window is Window.HANN


def test_frame_count_and_bins():
    s = stft(np.zeros(1000), 100.0, StftConfig(128, 50))
    assert s.n_frames == (1000 - 128) // 50 + 1
    assert s.n_bins == 65
    np.testing.assert_array_equal(np.diff(s.bin_freqs_hz), np.full(64, 100.0 / 128))
    assert s.frame_times_s[0] == pytest.approx(0.64)


def test_dc_rectangular():
    s = stft(np.ones(256), 1.0, StftConfig(64, 64, Window.RECTANGULAR))
    np.testing.assert_allclose(s.magnitudes[:, 0], 64.0)
    np.testing.assert_allclose(s.magnitudes[:, 1:], 0.0, atol=1e-12)


def test_bin_centred_tone_peak():
    s = stft(sine(1024.0, 50.0, 4096), 1024.0, StftConfig(1024, 512, Window.HANN))
    assert np.all(np.argmax(s.magnitudes, axis=1) == 50)


def test_leakage_matches_direct_dft():
    x = sine(1000.0, 50.0, 1024)
    cfg = StftConfig(256, 128, Window.HANN)
    s = stft(x, 1000.0, cfg)
    w = Window.HANN.samples(256)
    for f in range(s.n_frames):
        frame = x[f * 128 : f * 128 + 256] * w
        oracle = np.abs(direct_dft(frame))
        np.testing.assert_allclose(s.magnitudes[f], oracle, atol=1e-9)
        assert np.argmax(s.magnitudes[f]) == 13
        assert s.magnitudes[f, 12] > 0.1 * s.magnitudes[f, 13]
        assert s.magnitudes[f, 14] > 0.1 * s.magnitudes[f, 13]


def test_window_shapes_are_periodic():
    n = 16
    k = np.arange(n)
    np.testing.assert_allclose(Window.HANN.samples(n), 0.5 - 0.5 * np.cos(2 * np.pi * k / n))
    np.testing.assert_allclose(Window.HAMMING.samples(n), 0.54 - 0.46 * np.cos(2 * np.pi * k / n))
    np.testing.assert_array_equal(Window.RECTANGULAR.samples(n), np.ones(n))


def test_signal_shorter_than_window():
    with pytest.raises(ValueError, match="shorter"):
        stft(np.zeros(100), 10.0, StftConfig(128))
    with pytest.raises(ValueError):
        stft(np.zeros((2, 300)), 10.0, StftConfig(128))


def test_zero_padding_refines_bins():
    s = stft(sine(1000.0, 50.0, 512), 1000.0, StftConfig(256, 128, zero_pad_to=1024))
    assert s.n_bins == 513
    assert s.bin_spacing_hz == pytest.approx(1000.0 / 1024)


def test_phases_recover_complex_spectrum():
    x = np.random.default_rng(0).standard_normal(128)
    s = stft(x, 1.0, StftConfig(64, 32))
    frame = x[32:96] * Window.HANN.samples(64)
    np.testing.assert_allclose(s.complex[1], np.fft.rfft(frame), atol=1e-10)


@settings(max_examples=20, deadline=None)
@given(
    x=arrays(np.float64, 96, elements=st.floats(-10, 10, allow_nan=False)),
    window=st.sampled_from(list(Window)),
)
def test_parseval_per_frame(x, window):
    cfg = StftConfig(32, 16, window)
    s = stft(x, 1.0, cfg)
    w = window.samples(32)
    for f in range(s.n_frames):
        seg = x[f * 16 : f * 16 + 32] * w
        time_energy = 32 * np.sum(seg**2)
        if time_energy < 1e-12:
            continue
        assert s.frame_energy()[f] == pytest.approx(time_energy, rel=1e-6)


@settings(max_examples=20, deadline=None)
@given(
    x=arrays(np.float64, 64, elements=st.floats(-5, 5, allow_nan=False)),
    alpha=st.floats(0.01, 100),
)
def test_linearity(x, alpha):
    a = stft(alpha * x, 1.0, StftConfig(16, 8)).magnitudes
    b = alpha * stft(x, 1.0, StftConfig(16, 8)).magnitudes
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-9 * alpha * (1 + np.abs(x).max()) * 16)


def test_hop_shift_moves_frames():
    fs, hop = 800.0, 32
    x = sine(fs, 25.0, 2048)  # period 32 samples divides the hop
    s0 = stft(x, fs, StftConfig(128, hop))
    s1 = stft(x[hop:], fs, StftConfig(128, hop))
    np.testing.assert_allclose(s1.magnitudes, s0.magnitudes[1 : 1 + s1.n_frames], atol=1e-9)


# -- band_energy ----------------------------------------------------------------


def test_full_band_equals_frame_total():
    x = np.random.default_rng(1).standard_normal(512)
    s = stft(x, 100.0, StftConfig(64))
    np.testing.assert_allclose(band_energy(s, 0.0, 50.0), (s.magnitudes**2).sum(axis=1))


def test_empty_band_is_zero():
    s = stft(sine(1000.0, 50.0, 1024), 1000.0, StftConfig(256))
    # bins are 3.90625 Hz apart; nothing falls in [10.0, 11.0]
    np.testing.assert_array_equal(band_energy(s, 10.0, 11.0), 0.0)


def test_tone_band_holds_energy():
    x = sine(1000.0, 50.0, 2048)
    s = stft(x, 1000.0, StftConfig(256, 128))
    frac = band_energy(s, 40.0, 60.0) / (s.magnitudes**2).sum(axis=1)
    assert np.all(frac >= 0.95)


@pytest.mark.parametrize("lo,hi", [(60, 40), (-1, 10), (10, 600)])
def test_band_errors(lo, hi):
    s = stft(np.zeros(256), 1000.0, StftConfig(64))
    with pytest.raises(ValueError):
        band_energy(s, lo, hi)


# -- spectral_peaks -------------------------------------------------------------


def test_single_tone_peak():
    s = stft(sine(1000.0, 50.0, 1024), 1000.0, StftConfig(256))
    (freq, _), = spectral_peaks(s, 0, 1)
    assert freq == pytest.approx(13 * 1000.0 / 256)


def test_two_tone_order():
    fs = 1024.0
    x = sine(fs, 50.0, 1024) + sine(fs, 150.0, 1024, 0.5)
    s = stft(x, fs, StftConfig(1024, 1024))
    peaks = spectral_peaks(s, 0, 2)
    assert [p[0] for p in peaks] == [50.0, 150.0]
    # oracle magnitudes: Hann window halves a bin-centred tone's N/2 peak
    assert peaks[0][1] == pytest.approx(1024 / 4, rel=1e-9)
    assert peaks[1][1] == pytest.approx(0.5 * 1024 / 4, rel=1e-9)


def test_peak_ties_go_to_lower_frequency():
    fs = 64.0
    x = sine(fs, 8.0, 64) + sine(fs, 20.0, 64)
    s = stft(x, fs, StftConfig(64, 64, Window.RECTANGULAR))
    assert [f for f, _ in spectral_peaks(s, 0, 2)] == [8.0, 20.0]


def test_peaks_padding_boundary():
    x = np.random.default_rng(2).standard_normal(64)
    s = stft(x, 64.0, StftConfig(64, 64))
    maxima = spectral_peaks(s, 0, s.n_bins)
    assert len(maxima) < s.n_bins
    mags = [m for _, m in maxima]
    assert mags == sorted(mags, reverse=True)
    padded = spectral_peaks(s, 0, s.n_bins, pad=True)
    assert len(padded) == s.n_bins
    assert padded[: len(maxima)] == maxima
    assert sorted(f for f, _ in padded) == list(s.bin_freqs_hz)


def test_peak_errors():
    s = stft(np.zeros(128), 1.0, StftConfig(64))
    with pytest.raises(IndexError):
        spectral_peaks(s, 5, 1)
    with pytest.raises(ValueError):
        spectral_peaks(s, 0, 0)
    with pytest.raises(ValueError):
        spectral_peaks(s, 0, 100)


def test_dominant_frequency_skips_dc():
    x = 3.0 + sine(1000.0, 50.0, 2048)
    s = stft(x, 1000.0, StftConfig(256, 128, Window.RECTANGULAR))
    assert dominant_frequency(s) == 0.0
    assert abs(dominant_frequency(s, min_hz=1.0) - 50.0) <= s.bin_spacing_hz
