"""Acceptance gate: one test per release criterion, at stated tolerances."""

import time

import numpy as np
import pytest

from neuco import dsp
from neuco.feature_store import (
    SslFrameSequence,
    build_pool,
    knn_match,
    load_feature_file,
    save_feature_file,
)
from neuco.harmonics import (
    SampleF0,
    apply_ltv,
    max_harmonics,
    sine_excitation,
    upsample_f0,
)
from neuco.pipeline import ConversionJob, convert, coverage_study, stage_match
from neuco.synth import SynthConfig, build_model, build_discriminator
from neuco.synth.checkpoint import load_checkpoint, save_checkpoint
from neuco.synth.train import gradient_check, make_toy_batch, train_toy

from conftest import TINY

FS = 24000


class TestKnnOracle:
    def test_matches_exhaustive_search(self):
        """20+ randomized pools, exact indices, values to 1e-6 relative."""
        start = time.time()
        rng = np.random.default_rng(0)
        for trial in range(21):
            n_pool = int(rng.integers(50, 5001))
            n_query = int(rng.integers(10, 60))
            k = int(rng.choice([1, 4, 8]))
            pool_keys = rng.normal(size=(n_pool, 32)).astype(np.float32)
            pool_vals = rng.normal(size=(n_pool, 16)).astype(np.float32)
            query_keys = rng.normal(size=(n_query, 32)).astype(np.float32)
            # a few exact duplicates exercise the lowest-index tie-break
            query_keys[0] = pool_keys[min(5, n_pool - 1)]
            pool = build_pool([SslFrameSequence(
                keys=pool_keys, values=pool_vals,
                utterance_id="p", speaker_id="s")])
            query = SslFrameSequence(
                keys=query_keys,
                values=rng.normal(size=(n_query, 16)).astype(np.float32),
                utterance_id="q", speaker_id="s")
            result = knn_match(query, pool, k)

            qu = query_keys.astype(np.float64)
            qu /= np.linalg.norm(qu, axis=1, keepdims=True)
            pu = pool_keys.astype(np.float64)
            pu /= np.linalg.norm(pu, axis=1, keepdims=True)
            sims = qu @ pu.T
            expected_idx = np.argsort(-sims, axis=1, kind="stable")[:, :k]
            np.testing.assert_array_equal(result.neighbor_indices,
                                          expected_idx)
            expected_vals = pool_vals.astype(np.float64)[expected_idx].mean(1)
            np.testing.assert_allclose(result.matched_values, expected_vals,
                                       rtol=1e-6, atol=1e-6)
        assert time.time() - start < 10.0


class TestExcitationClosedForms:
    def test_two_harmonic_start(self):
        p = sine_excitation(SampleF0(f0=np.full(4, 6000.0), sample_rate=FS))
        assert max_harmonics(6000.0, FS) == 2
        assert p[0] == pytest.approx(-0.5, abs=1e-5)
        assert p[1] == pytest.approx(0.0, abs=1e-5)

    def test_harmonic_count_at_100hz(self):
        assert max_harmonics(100.0, FS) == 120


class TestAntiAliasing:
    def test_energy_above_nyquist_band(self):
        start = time.time()
        f0s = upsample_f0(np.full(100, 220.0), FS)   # 1 s
        p = sine_excitation(f0s)
        spectrum = np.abs(np.fft.rfft(p * np.hanning(p.size)))
        freqs = np.fft.rfftfreq(p.size, 1.0 / FS)
        peak = spectrum.max()
        above = spectrum[freqs >= 12000.0]
        assert 20 * np.log10(above.max() / peak) < -60.0
        assert time.time() - start < 5.0


class TestLtvFiltering:
    def test_identity_filter_exact(self):
        x = np.random.default_rng(0).normal(size=1200)
        filters = np.zeros((5, 16))
        filters[:, 0] = 1.0
        np.testing.assert_array_equal(apply_ltv(x, filters, 240), x)

    def test_zero_filter_exact(self):
        x = np.random.default_rng(1).normal(size=1200)
        np.testing.assert_array_equal(apply_ltv(x, np.zeros((5, 16)), 240), 0.0)

    def test_single_frame_matches_direct_convolution(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=512)
        h = rng.normal(size=(1, 16))
        np.testing.assert_allclose(apply_ltv(x, h, 512),
                                   np.convolve(x, h[0])[:512], atol=1e-6)

    def test_linearity_over_100_trials(self):
        for trial in range(100):
            rng = np.random.default_rng(trial)
            x, y = rng.normal(size=(2, 720))
            filters = rng.normal(size=(3, 12))
            a, b = rng.normal(size=2)
            lhs = apply_ltv(a * x + b * y, filters, 240)
            rhs = a * apply_ltv(x, filters, 240) + b * apply_ltv(y, filters, 240)
            np.testing.assert_allclose(lhs, rhs, atol=1e-6)


class TestAWeighting:
    def tone(self, freq, amp=0.5, seconds=1.0):
        t = np.arange(int(seconds * FS)) / FS
        return amp * np.sin(2 * np.pi * freq * t)

    def mean_loudness(self, audio):
        loud = dsp.a_weighted_loudness(audio, FS)
        return float(np.mean(loud[5:-5]))    # drop window edge frames

    def test_1khz_vs_100hz_separation(self):
        diff = self.mean_loudness(self.tone(1000.0)) - \
            self.mean_loudness(self.tone(100.0))
        assert diff == pytest.approx(1.91, abs=0.3)

    def test_amplitude_doubling(self):
        diff = self.mean_loudness(self.tone(1000.0, amp=0.8)) - \
            self.mean_loudness(self.tone(1000.0, amp=0.4))
        assert diff == pytest.approx(np.log10(4.0), abs=1e-3)


class TestGradientCheck:
    def test_tiny_synthesizer(self):
        start = time.time()
        model = build_model(TINY, seed=0)
        assert model.parameter_count <= 5000
        batch = make_toy_batch(TINY, 4, seed=0)
        report = gradient_check(model, batch, n_samples=120, eps=1e-4, seed=0)
        assert report["n_checked"] >= 100
        assert report["max_rel_error"] < 1e-4, report["worst_param"]
        assert time.time() - start < 60.0

    def test_with_discriminator(self):
        model = build_model(TINY, seed=1)
        disc, disc_params = build_discriminator(seed=2)
        batch = make_toy_batch(TINY, 4, seed=1)
        report = gradient_check(model, batch, disc, disc_params,
                                n_samples=120, eps=1e-4, seed=1)
        assert report["n_checked"] >= 100
        assert report["max_rel_error"] < 1e-4, report["worst_param"]


class TestToyOverfit:
    def test_200_steps_halve_generator_loss(self):
        start = time.time()
        config = SynthConfig(value_dim=8, base_channels=8, ltv_taps=8)
        model = build_model(config, seed=0)
        batch = make_toy_batch(config, 100, seed=0)   # 1 s at 10 ms frames
        model, history = train_toy(model, batch, 200, lr=0.003)
        first, last = history[0]["g_total"], history[-1]["g_total"]
        assert last <= 0.5 * first
        assert time.time() - start < 600.0


class TestEndToEnd:
    def make_job(self, fixture_dir, out_path, **overrides):
        kwargs = dict(
            source_audio=str(fixture_dir / "source.wav"),
            source_features=str(fixture_dir / "source.ncsf"),
            reference_features=(str(fixture_dir / "reference.ncsf"),),
            checkpoint=str(fixture_dir / "model.ncsm"),
            output=str(out_path),
            k=4, seed=0, pitch_shift="off",
        )
        kwargs.update(overrides)
        return ConversionJob(**kwargs)

    def test_bit_identical_across_runs(self, fixture_dir, tmp_path):
        payloads = []
        for run in range(2):
            out = tmp_path / f"run{run}.wav"
            convert(self.make_job(fixture_dir, out))
            payloads.append(out.read_bytes())
        assert payloads[0] == payloads[1]

    def test_self_conversion_k1_reproduces_values(self, fixture_dir):
        source = load_feature_file(fixture_dir / "source.ncsf")
        matched, result = stage_match(source, build_pool([source]), k=1)
        np.testing.assert_array_equal(matched.values, source.values)
        np.testing.assert_array_equal(
            result.neighbor_indices[:, 0], np.arange(source.n_frames))


def clustered_pool(chunk_specs, key_dim, seed=0):
    """Each chunk introduces `new` unseen one-hot key directions and pads
    with repeats of direction 0, so prefix pools gain exactly `new`
    distinct matchable frames per chunk."""
    rng = np.random.default_rng(seed)
    keys = []
    center = 0
    for n_frames, new in chunk_specs:
        chunk = np.zeros((n_frames, key_dim), dtype=np.float32)
        for i in range(new):
            chunk[i, center] = 1.0
            center += 1
        chunk[new:, 0] = 1.0
        keys.append(chunk)
    keys = np.concatenate(keys)
    values = rng.normal(size=(keys.shape[0], 4)).astype(np.float32)
    seq = SslFrameSequence(keys=keys, values=values, utterance_id="ref",
                           speaker_id="tgt")
    return seq, center


class TestCoverageTrend:
    def test_diminishing_gains_over_nested_prefixes(self):
        # 20 ms frames: 5/10/30/60/90 s = 250/500/1500/3000/4500 frames
        ref, n_centers = clustered_pool(
            [(250, 200), (250, 120), (1000, 60), (1500, 30), (1500, 10)],
            key_dim=512)
        query_keys = np.zeros((n_centers, 512), dtype=np.float32)
        query_keys[np.arange(n_centers), np.arange(n_centers)] = 1.0
        query = SslFrameSequence(
            keys=query_keys, values=np.ones((n_centers, 4), np.float32),
            utterance_id="q", speaker_id="s")
        reports = coverage_study(query, [ref], [5, 10, 30, 60, 90], k=1)
        distinct = np.array([r.distinct_matched_frames for r in reports])
        assert distinct.tolist() == [200, 320, 380, 410, 420]
        increments = np.diff(distinct)
        assert np.all(np.diff(distinct) >= 0)
        assert np.all(np.diff(increments) <= 0)


class TestFormatRoundTrips:
    def test_feature_files(self, tmp_path):
        rng = np.random.default_rng(0)
        for trial in range(100):
            n = int(rng.integers(1, 40))
            seq = SslFrameSequence(
                keys=rng.normal(size=(n, int(rng.integers(1, 20)))
                                ).astype(np.float32),
                values=rng.normal(size=(n, int(rng.integers(1, 20)))
                                  ).astype(np.float32),
                utterance_id=f"utt{trial}",
                speaker_id=f"spk{trial % 7}",
                frame_period_ms=float(rng.choice([10.0, 20.0])),
            )
            path = tmp_path / "seq.ncsf"
            save_feature_file(seq, path)
            loaded = load_feature_file(path)
            np.testing.assert_array_equal(loaded.keys, seq.keys)
            np.testing.assert_array_equal(loaded.values, seq.values)
            assert loaded.utterance_id == seq.utterance_id
            assert loaded.speaker_id == seq.speaker_id
            assert loaded.frame_period_ms == seq.frame_period_ms
            save_feature_file(loaded, tmp_path / "seq2.ncsf")
            assert (tmp_path / "seq.ncsf").read_bytes() == \
                (tmp_path / "seq2.ncsf").read_bytes()

    def test_dsp_tracks(self, tmp_path):
        rng = np.random.default_rng(1)
        for trial in range(100):
            n = int(rng.integers(1, 200))
            f0 = np.abs(rng.normal(200, 50, size=n)).astype(np.float32)
            f0[rng.random(n) < 0.3] = 0.0
            track = dsp.DspTrack(
                f0=f0,
                loudness=rng.normal(-2, 1, size=n).astype(np.float32),
                sample_rate_src=int(rng.choice([16000, 24000, 48000])))
            path = tmp_path / "t.ncdt"
            dsp.save_dsp_track(track, path)
            loaded = dsp.load_dsp_track(path)
            np.testing.assert_array_equal(loaded.f0, track.f0)
            np.testing.assert_array_equal(loaded.loudness, track.loudness)
            assert loaded.sample_rate_src == track.sample_rate_src
            dsp.save_dsp_track(loaded, tmp_path / "t2.ncdt")
            assert (tmp_path / "t.ncdt").read_bytes() == \
                (tmp_path / "t2.ncdt").read_bytes()

    def test_checkpoints(self, tmp_path):
        for trial in range(100):
            model = build_model(TINY, seed=trial)
            path = tmp_path / "m.ncsm"
            save_checkpoint(model, path)
            loaded = load_checkpoint(path)
            assert loaded.config == model.config
            assert sorted(loaded.params) == sorted(model.params)
            for name, tensor in model.params.items():
                np.testing.assert_array_equal(loaded.params[name], tensor)
            save_checkpoint(loaded, tmp_path / "m2.ncsm")
            assert (tmp_path / "m.ncsm").read_bytes() == \
                (tmp_path / "m2.ncsm").read_bytes()
