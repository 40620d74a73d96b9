"""Extractor behavior, NCSF conformance, and CLI exit codes."""

import json
import struct
import warnings

import numpy as np
import pytest
from scipy.io import wavfile

from sslx.cli import main
from sslx.extract import SetupError, extract_file, load_encoder, read_audio
from sslx.manifest import ExtractionManifest, ManifestItem, load_manifest
from sslx.ncsf import write_ncsf
from sslx.pitch import track_pitch, write_pitch_text

from conftest import write_tone


class TestNcsfWriter:
    def test_byte_layout(self, tmp_path):
        keys = np.arange(6, dtype=np.float32).reshape(2, 3)
        values = np.arange(4, dtype=np.float32).reshape(2, 2) + 10
        path = tmp_path / "x.ncsf"
        write_ncsf(path, keys, values, "utt", "spk", 20.0)
        raw = path.read_bytes()
        assert raw[:4] == b"NCSF"
        version, flags = struct.unpack_from("<HH", raw, 4)
        assert (version, flags) == (1, 0)
        n, kd, vd = struct.unpack_from("<III", raw, 8)
        assert (n, kd, vd) == (2, 3, 2)
        (period,) = struct.unpack_from("<f", raw, 20)
        assert period == 20.0
        assert raw[24:29] == b"\x03\x00utt"
        assert raw[29:34] == b"\x03\x00spk"
        body = np.frombuffer(raw[34:], dtype="<f4")
        np.testing.assert_array_equal(body[:6], keys.ravel())
        np.testing.assert_array_equal(body[6:], values.ravel())

    def test_frame_mismatch_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_ncsf(tmp_path / "x.ncsf", np.zeros((2, 3), np.float32),
                       np.zeros((3, 3), np.float32), "u", "s")

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_ncsf(tmp_path / "x.ncsf", np.zeros((0, 3), np.float32),
                       np.zeros((0, 3), np.float32), "u", "s")

    def test_non_finite_rejected(self, tmp_path):
        keys = np.full((1, 2), np.nan, np.float32)
        with pytest.raises(ValueError):
            write_ncsf(tmp_path / "x.ncsf", keys,
                       np.zeros((1, 2), np.float32), "u", "s")


class TestManifest:
    def test_round_trip(self, manifest_dir):
        manifest = load_manifest(manifest_dir / "manifest.json")
        assert len(manifest.items) == 2
        assert manifest.value_layer == 6
        assert manifest.key_layers == 5
        assert manifest.output_path(manifest.items[0]).endswith("a.ncsf")

    def test_output_dir_override(self, manifest_dir, tmp_path):
        manifest = load_manifest(manifest_dir / "manifest.json",
                                 output_dir=str(tmp_path / "elsewhere"))
        assert "elsewhere" in manifest.output_dir

    def test_duplicate_utterance_rejected(self):
        item = ManifestItem(audio="a.wav", utterance_id="u", speaker_id="s")
        with pytest.raises(ValueError):
            ExtractionManifest(items=(item, item), output_dir="out")

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ExtractionManifest(items=(), output_dir="out")


class TestReadAudio:
    def test_int16_wav(self, tmp_path):
        t = np.arange(16000) / 16000.0
        audio = (0.5 * np.sin(2 * np.pi * 220 * t) * 32767).astype(np.int16)
        wavfile.write(tmp_path / "x.wav", 16000, audio)
        out = read_audio(tmp_path / "x.wav")
        assert out.size == 16000
        assert np.max(np.abs(out)) <= 1.0

    def test_resamples_to_16k(self, tmp_path):
        write_tone(tmp_path / "x.wav", seconds=1.0, rate=48000)
        out = read_audio(tmp_path / "x.wav")
        assert out.size == 16000

    def test_empty_rejected(self, tmp_path):
        wavfile.write(tmp_path / "e.wav", 16000, np.zeros(0, np.float32))
        with pytest.raises(ValueError):
            read_audio(tmp_path / "e.wav")


class TestEncoder:
    def test_missing_directory_is_setup_error(self, tmp_path):
        with pytest.raises(SetupError):
            load_encoder(str(tmp_path / "nope"))

    def test_missing_weights_is_setup_error(self, tmp_path):
        (tmp_path / "empty").mkdir()
        with pytest.raises(SetupError):
            load_encoder(str(tmp_path / "empty"))

    def test_hash_is_stable(self, encoder_dir):
        a = load_encoder(str(encoder_dir))
        b = load_encoder(str(encoder_dir))
        assert a.checkpoint_hash == b.checkpoint_hash
        assert len(a.checkpoint_hash) == 12

    def test_layer_selection_oracle(self, encoder_dir, tmp_path):
        """keys/values match a direct forward pass layer reduction."""
        import torch

        write_tone(tmp_path / "x.wav", seconds=0.5)
        encoder = load_encoder(str(encoder_dir))
        keys, values = extract_file(encoder, tmp_path / "x.wav")
        wave = torch.from_numpy(read_audio(tmp_path / "x.wav")[None, :]).float()
        hidden = encoder.model(wave, output_hidden_states=True).hidden_states
        np.testing.assert_array_equal(values, hidden[6][0].numpy())
        expected_keys = torch.stack(hidden[-5:]).mean(0)[0].numpy()
        np.testing.assert_allclose(keys, expected_keys, atol=1e-6)

    def test_out_of_range_layers_rejected(self, encoder_dir, tmp_path):
        write_tone(tmp_path / "x.wav", seconds=0.5)
        encoder = load_encoder(str(encoder_dir))
        with pytest.raises(ValueError):
            extract_file(encoder, tmp_path / "x.wav", value_layer=99)
        with pytest.raises(ValueError):
            extract_file(encoder, tmp_path / "x.wav", key_layers=99)


class TestConformance:
    def test_two_second_wav(self, encoder_dir, tmp_path):
        """2 s / 16 kHz in -> 1024-dim NCSF with ~100 frames that the
        conversion pipeline loads cleanly."""
        from neuco.feature_store import load_feature_file

        write_tone(tmp_path / "x.wav", seconds=2.0)
        encoder = load_encoder(str(encoder_dir))
        keys, values = extract_file(encoder, tmp_path / "x.wav")
        out = tmp_path / "x.ncsf"
        write_ncsf(out, keys, values, "x@" + encoder.checkpoint_hash, "spk")

        with warnings.catch_warnings():
            warnings.simplefilter("error")
            seq = load_feature_file(out)
        assert seq.key_dim == 1024
        assert seq.value_dim == 1024
        assert seq.frame_period_ms == 20.0
        assert abs(seq.n_frames - 100) <= 2
        assert seq.utterance_id.endswith(encoder.checkpoint_hash)

    def test_deterministic(self, encoder_dir, tmp_path):
        write_tone(tmp_path / "x.wav")
        encoder = load_encoder(str(encoder_dir))
        a = extract_file(encoder, tmp_path / "x.wav")
        b = extract_file(encoder, tmp_path / "x.wav")
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])


class TestPitchExport:
    def test_tone_tracked(self, tmp_path):
        write_tone(tmp_path / "x.wav", seconds=1.0, freq=220.0)
        f0 = track_pitch(read_audio(tmp_path / "x.wav"), 16000)
        assert f0.size == 100          # 10 ms grid
        voiced = f0[f0 > 0]
        assert voiced.size > 80
        assert np.median(np.abs(voiced - 220.0)) < 3.0

    def test_silence_unvoiced(self):
        f0 = track_pitch(np.zeros(16000), 16000)
        np.testing.assert_array_equal(f0, 0.0)

    def test_text_format(self, tmp_path):
        path = tmp_path / "f0.txt"
        write_pitch_text(np.array([220.0, 0.0, 230.5]), path)
        lines = path.read_text().splitlines()
        assert lines == ["220.0000", "0.0000", "230.5000"]


class TestCli:
    def test_full_run(self, encoder_dir, manifest_dir, capsys):
        code = main(["--manifest", str(manifest_dir / "manifest.json"),
                     "--encoder", str(encoder_dir), "--pitch"])
        assert code == 0
        out = manifest_dir / "out"
        assert (out / "a.ncsf").exists()
        assert (out / "b.ncsf").exists()
        assert (out / "a.f0.txt").exists()
        assert "extracted 2 of 2" in capsys.readouterr().out

    def test_partial_failure(self, encoder_dir, manifest_dir, tmp_path,
                             capsys):
        wavfile.write(manifest_dir / "empty.wav", 16000,
                      np.zeros(0, np.float32))
        manifest = json.loads((manifest_dir / "manifest.json").read_text())
        manifest["items"].append({"audio": str(manifest_dir / "empty.wav"),
                                  "utterance_id": "bad",
                                  "speaker_id": "alice"})
        path = manifest_dir / "partial.json"
        path.write_text(json.dumps(manifest))
        code = main(["--manifest", str(path), "--encoder", str(encoder_dir)])
        captured = capsys.readouterr()
        assert code == 1
        assert (manifest_dir / "out" / "a.ncsf").exists()
        assert not (manifest_dir / "out" / "bad.ncsf").exists()
        assert "failed: bad" in captured.err

    def test_bad_encoder_is_exit_two(self, manifest_dir, tmp_path, capsys):
        code = main(["--manifest", str(manifest_dir / "manifest.json"),
                     "--encoder", str(tmp_path / "missing")])
        assert code == 2

    def test_no_hash_tag(self, encoder_dir, manifest_dir):
        from neuco.feature_store import load_feature_file

        code = main(["--manifest", str(manifest_dir / "manifest.json"),
                     "--encoder", str(encoder_dir), "--no-hash-tag"])
        assert code == 0
        seq = load_feature_file(manifest_dir / "out" / "a.ncsf")
        assert seq.utterance_id == "a"
        assert seq.speaker_id == "alice"
