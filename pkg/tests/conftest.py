"""Shared fixtures: a tiny model checkpoint and a 2 s synthetic utterance."""

import numpy as np
import pytest

from neuco import audio_io
from neuco.feature_store import SslFrameSequence, save_feature_file
from neuco.synth import SynthConfig, build_model, save_checkpoint

FS = 24000
TINY = SynthConfig(value_dim=4, base_channels=4, ltv_taps=4)


def make_fixture_audio(seconds=2.0, freq=220.0, fs=FS):
    t = np.arange(int(seconds * fs)) / fs
    return (0.4 * np.sin(2 * np.pi * freq * t)).astype(np.float64)


def make_fixture_features(n_frames=100, value_dim=TINY.value_dim, key_dim=8,
                          utterance="src", speaker="spk", seed=0):
    rng = np.random.default_rng(seed)
    return SslFrameSequence(
        keys=rng.normal(size=(n_frames, key_dim)).astype(np.float32),
        values=rng.normal(size=(n_frames, value_dim)).astype(np.float32),
        utterance_id=utterance, speaker_id=speaker,
    )


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    """Audio, features, and a checkpoint for a 2 s pipeline run."""
    root = tmp_path_factory.mktemp("fixtures")
    audio_io.write_wav(root / "source.wav", make_fixture_audio(), FS)

    source = make_fixture_features(utterance="src", seed=1)
    save_feature_file(source, root / "source.ncsf")
    reference = make_fixture_features(n_frames=150, utterance="ref",
                                      speaker="tgt", seed=2)
    save_feature_file(reference, root / "reference.ncsf")

    model = build_model(TINY, seed=3)
    save_checkpoint(model, root / "model.ncsm")
    return root
