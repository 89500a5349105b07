# Copyright 2024 The lowdata-audio Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

import numpy as np
import pytest
import soundfile as sf
from numpy.testing import assert_allclose, assert_array_equal

from lowdata_audio.errors import ArgumentError
from lowdata_audio.frontend import (
    MEL128,
    MEL64,
    LogCompression,
    clip_mel,
    compress,
    deltas,
    get_preset,
    load_wave,
    mel_filterbank,
    mel_project,
    mfcc_from_power,
    mfcc_vector,
    repeat_pad,
    sample_patch,
    stft_power,
    windowed_predict,
    write_wave
)
from lowdata_audio.models import StftConfig


def test_stft_shape():
    power = stft_power(np.zeros(5000), MEL128.stft)
    assert power.shape == (513, 8)
    assert_array_equal(power, 0.0)


def test_stft_rejects_short_waves():
    with pytest.raises(ArgumentError):
        stft_power(np.zeros(1023), MEL128.stft)


def test_stft_of_a_bin_centered_sine():
    cfg = MEL128.stft
    k = 50
    t = np.arange(cfg.window_size * 10) / cfg.sample_rate
    wave = np.sin(2.0 * np.pi * k * cfg.sample_rate / cfg.window_size * t)
    power = stft_power(wave, cfg)
    assert np.all(power.argmax(axis=0) == k)
    share = power[k - 1:k + 2].sum(axis=0) / power.sum(axis=0)
    assert np.all(share > 0.9)


def test_mel_filterbank_properties():
    weights = mel_filterbank(128, 1024, 44100)
    assert weights.shape == (128, 513)
    assert np.all(weights >= 0)
    assert np.all(weights.sum(axis=1) > 0)
    assert np.count_nonzero(weights[:, 400]) <= 2
    assert not weights.flags.writeable


def test_mel_filterbank_rejects_too_many_bands():
    with pytest.raises(ArgumentError):
        mel_filterbank(600, 1024, 44100)


def test_presets():
    assert get_preset("mel64") is MEL64
    assert (MEL128.n_mels, MEL128.n_frames, MEL128.hop_frames) == (128, 128, 43)
    with pytest.raises(ArgumentError):
        get_preset("mel32")
    with pytest.raises(ArgumentError):
        StftConfig(window_size=256, hop_size=512, sample_rate=16000)


def test_log_learn_starts_near_its_documented_values():
    c = LogCompression.log_learn()
    assert c.alpha == pytest.approx(1096.63, abs=0.01)
    assert c.beta == pytest.approx(1.3133, abs=0.01)
    assert [p.name for p in c.parameters()] == ["compress/pre_alpha", "compress/pre_beta"]


def test_compress_values():
    mel = np.array([[0.0, 1.0], [9.0, 99.0]])
    assert_allclose(compress(mel, LogCompression.fixed(1.0, 1.0)).data, np.log(mel + 1.0))
    assert_allclose(compress(mel, LogCompression.log_eps()).data, np.log(mel + 1e-10))
    with pytest.raises(ArgumentError):
        compress(-mel - 1.0, LogCompression.log_eps())
    with pytest.raises(ArgumentError):
        LogCompression.fixed(0.0, 1.0)
    with pytest.raises(ArgumentError):
        LogCompression.from_name("log-log")


def test_repeat_pad_tiles_columns():
    spec = np.arange(12.0).reshape(3, 4)
    padded = repeat_pad(spec, 10)
    assert padded.shape == (3, 10)
    for j in range(10):
        assert_array_equal(padded[:, j], spec[:, j % 4])
    assert repeat_pad(spec, 3) is spec
    with pytest.raises(ArgumentError):
        repeat_pad(np.zeros((3, 0)), 5)


def test_sample_patch_cuts_a_window_of_the_spectrogram(rng):
    for _ in range(200):
        frames = int(rng.integers(128, 400))
        spec = rng.random((128, frames))
        patch = sample_patch(spec, 128, rng, label=3, clip_id="x")
        assert 0 <= patch.offset_frames <= frames - 128
        assert_array_equal(patch.values, spec[:, patch.offset_frames:patch.offset_frames + 128])
        assert patch.label == 3


def test_sample_patch_rejects_narrow_spectrograms(rng):
    with pytest.raises(ArgumentError):
        sample_patch(np.zeros((128, 100)), 128, rng)


def test_windowed_predict_on_a_ten_second_clip():
    calls = []

    def model(window):
        calls.append(window.shape)
        posterior = np.zeros(4)
        posterior[len(calls) % 4] = 1.0
        return posterior

    frames = (16000 * 10 - 400) // 160 + 1
    assert frames == 998
    posterior = windowed_predict(np.zeros((64, frames)), model, MEL64.n_frames, MEL64.hop_frames)
    assert len(calls) == 10
    assert set(calls) == {(64, 96)}
    assert posterior.sum() == pytest.approx(1.0)


def test_mfcc_vector_shape(rng):
    vector = mfcc_vector(rng.standard_normal(44100), MEL128.stft)
    assert vector.shape == (120,)
    assert np.all(np.isfinite(vector))


def test_mfcc_of_a_constant_spectrogram_has_no_variation():
    vector = mfcc_from_power(np.ones((513, 20)), MEL128.stft)
    assert_allclose(vector[20:], 0.0, atol=1e-12)


def test_mfcc_requires_enough_frames():
    with pytest.raises(ArgumentError):
        mfcc_from_power(np.ones((513, 8)), MEL128.stft)


def test_deltas_of_a_ramp_are_constant_inside():
    ramp = np.arange(30.0)[None, :]
    assert_allclose(deltas(ramp)[0, 4:-4], 1.0)


def test_wave_round_trip_and_resampling(tmp_path, rng):
    wave = 0.5 * np.sin(2.0 * np.pi * 440.0 * np.arange(16000) / 16000)
    path = str(tmp_path / "a.wav")
    write_wave(path, wave, 16000)
    assert_allclose(load_wave(path, 16000), wave, atol=1.0 / 32767)

    write_wave(path, rng.uniform(-0.5, 0.5, 44100), 44100)
    assert load_wave(path, 16000).shape == (16000,)


def test_clip_mel_pads_short_clips(rng):
    mel = clip_mel(rng.standard_normal(22050), MEL128)
    assert mel.shape == (128, 128)
    tiny = clip_mel(rng.standard_normal(100), MEL128)
    assert tiny.shape == (128, 128)
    assert_array_equal(tiny, np.repeat(tiny[:, :1], 128, axis=1))
    with pytest.raises(ArgumentError):
        clip_mel(np.zeros(0), MEL128)


def test_clip_mel_keeps_one_patch_of_a_three_second_clip(rng):
    wave = rng.standard_normal(3 * 44100)
    power = stft_power(wave, MEL128.stft)
    assert power.shape[1] == 129
    mel = clip_mel(wave, MEL128)
    assert mel.shape == (128, 128)
    assert_allclose(mel, mel_project(power, 128, MEL128.stft)[:, :128])
    assert clip_mel(rng.standard_normal(4 * 44100), MEL128).shape == (128, 172)


def test_deltas_match_the_regression_formula(rng):
    x = rng.standard_normal((3, 20))
    padded = np.pad(x, ((0, 0), (4, 4)), mode="edge")
    expected = sum(n * (padded[:, 4 + n:24 + n] - padded[:, 4 - n:24 - n]) for n in range(1, 5)) / 60.0
    assert_allclose(deltas(x), expected, atol=1e-10)


def test_mel_filterbank_triangles_peak_at_one():
    weights = mel_filterbank(64, 400, 16000)
    assert weights.dtype == np.float64
    assert weights.max() <= 1.0 + 1e-12
    assert np.all(weights.sum(axis=1) > 0)


def test_load_wave_averages_channels(tmp_path):
    left = 0.5 * np.ones(1000)
    path = str(tmp_path / "stereo.wav")
    sf.write(path, np.stack([left, -0.25 * np.ones(1000)], axis=1), 16000, subtype="PCM_16")
    assert_allclose(load_wave(path, 16000), 0.125, atol=1e-4)
