import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.io import wavfile
from scipy.signal.windows import hamming

from fewshot_ser import features as F
from fewshot_ser.errors import InputError

SR = 16000


def sine(freq, seconds=1.0, amp=1.0, sr=SR):
    t = np.arange(int(seconds * sr)) / sr
    return F.AudioClip(amp * np.sin(2 * np.pi * freq * t), sr)


def test_frame_count_one_second():
    frames = F.frame_signal(F.AudioClip(np.zeros(SR), SR))
    assert frames.shape == (98, 400)  # floor((16000 - 400) / 160) + 1


def test_exactly_one_frame():
    assert len(F.frame_signal(F.AudioClip(np.ones(400), SR))) == 1


def test_short_clip_rejected():
    with pytest.raises(InputError):
        F.frame_signal(F.AudioClip(np.ones(384), SR))  # 24 ms


def test_frames_are_hamming_windowed():
    frames = F.frame_signal(F.AudioClip(np.ones(800), SR))
    np.testing.assert_allclose(frames[0], hamming(400, sym=False))


def test_zcr_bounds():
    win = hamming(400, sym=False)
    assert F.extract_llds(np.ones(400) * win, SR)[1] == 0.0
    alternating = np.where(np.arange(400) % 2 == 0, 1.0, -1.0) * win
    assert F.extract_llds(alternating, SR)[1] == 1.0


@pytest.mark.parametrize("freq", [100.0, 200.0, 400.0])
def test_sine_pitch(freq):
    frames = F.frame_signal(sine(freq))
    llds = np.array([F.extract_llds(f, SR) for f in frames])
    assert np.all(np.abs(llds[:, 3] - freq) <= 0.05 * freq)
    assert np.all(llds[:, 2] > 0.9)


def test_silence_is_unvoiced():
    lld = F.extract_llds(np.zeros(400), SR)
    assert lld[2] == 0.0 and lld[3] == 0.0
    assert lld[0] == pytest.approx(np.log(F.ENERGY_FLOOR))


def test_white_noise_mostly_unvoiced():
    rng = np.random.default_rng(0)
    frames = F.frame_signal(F.AudioClip(rng.normal(size=SR), SR))
    f0 = np.array([F.extract_llds(f, SR)[3] for f in frames])
    assert np.mean(f0 == 0) > 0.8


@settings(max_examples=20, deadline=None)
@given(scale=st.floats(0.05, 20.0), seed=st.integers(0, 1000))
def test_scaling_leaves_zcr_and_shifts_log_energy(scale, seed):
    rng = np.random.default_rng(seed)
    frame = rng.normal(size=400) * hamming(400, sym=False)
    a, b = F.extract_llds(frame, SR), F.extract_llds(scale * frame, SR)
    assert a[1] == b[1]
    # log mean-square energy moves by log(scale**2)
    assert b[0] - a[0] == pytest.approx(2 * np.log(scale), abs=1e-6)


def test_mel_filterbank_shape_and_coverage():
    fb = F.mel_filterbank(512, SR)
    assert fb.shape == (26, 257)
    assert (fb >= 0).all() and (fb <= 1).all()
    assert (fb.sum(axis=1) > 0).all()


def test_functionals_constant_series():
    out = F.functionals(np.tile(np.arange(16.0), (5, 1)))
    np.testing.assert_array_equal(out[:16], np.arange(16.0))
    assert not out[16:].any()


def test_functionals_hand_statistics():
    llds = np.zeros((3, 16))
    llds[:, 0] = [1, 2, 3]
    out = F.functionals(llds)
    assert out[0] == pytest.approx(2.0)
    assert out[16] == pytest.approx(np.sqrt(2 / 3), abs=1e-4)  # 0.8165
    assert out[32] == pytest.approx(1.0)
    assert out[48] == pytest.approx(0.0)


def test_functionals_needs_two_frames():
    with pytest.raises(InputError):
        F.functionals(np.zeros((1, 16)))


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 30), seed=st.integers(0, 10_000))
def test_functionals_length(n, seed):
    llds = np.random.default_rng(seed).normal(size=(n, 16))
    assert F.functionals(llds).shape == (64,)


def test_extract_clip_is_64_dim_and_deterministic():
    rng = np.random.default_rng(3)
    clip = F.AudioClip(0.3 * rng.normal(size=SR // 2) + 0.5 * sine(150, 0.5).samples, SR)
    a, b = F.extract_clip(clip), F.extract_clip(clip)
    assert a.shape == (64,)
    assert a.tobytes() == b.tobytes()
    assert np.isfinite(a).all()


def test_read_wav(tmp_path):
    data = (0.5 * sine(220, 0.1).samples * 32767).astype(np.int16)
    path = tmp_path / "a.wav"
    wavfile.write(path, SR, data)
    clip = F.read_wav(path)
    assert clip.sample_rate == SR
    np.testing.assert_allclose(clip.samples, data / 32768.0)


def test_read_wav_rejects_stereo(tmp_path):
    path = tmp_path / "s.wav"
    wavfile.write(path, SR, np.zeros((100, 2), dtype=np.int16))
    with pytest.raises(InputError):
        F.read_wav(path)


def test_standardizer_hand_case():
    stats = F.fit_standardizer([[0.0], [2.0]])
    assert stats.mean[0] == 1.0 and stats.std[0] == 1.0
    assert F.apply_standardizer(stats, [0.0])[0] == -1.0


def test_standardizer_degenerate_dims():
    x = np.ones((4, 3))
    stats = F.fit_standardizer(x)
    assert stats.degenerate == [0, 1, 2]
    np.testing.assert_array_equal(stats.std, 1.0)
    assert not F.apply_standardizer(stats, x).any()


def test_standardizer_needs_two_vectors():
    with pytest.raises(InputError):
        F.fit_standardizer([[1.0, 2.0]])


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(2, 40))
def test_standardize_twice_is_idempotent(seed, n):
    rng = np.random.default_rng(seed)
    x = rng.normal(loc=5, scale=3, size=(n, 6))
    z = F.apply_standardizer(F.fit_standardizer(x), x)
    assert np.all(np.abs(z.mean(0)) < 1e-9)
    again = F.fit_standardizer(z)
    np.testing.assert_allclose(again.mean, 0, atol=1e-9)
    np.testing.assert_allclose(again.std, 1, atol=1e-9)
