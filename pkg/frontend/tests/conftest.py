"""Shared fixtures: a random-weight encoder with the real output shape."""

import json

import numpy as np
import pytest
from scipy.io import wavfile


@pytest.fixture(scope="session")
def encoder_dir(tmp_path_factory):
    """Save a small random-weight encoder: 1024-dim states, 7 layers."""
    import torch
    from transformers import WavLMConfig, WavLMModel

    torch.manual_seed(0)
    config = WavLMConfig(
        hidden_size=1024,
        num_hidden_layers=7,
        num_attention_heads=16,
        intermediate_size=64,
    )
    model = WavLMModel(config)
    root = tmp_path_factory.mktemp("encoder")
    model.save_pretrained(root)
    return root


def write_tone(path, seconds=2.0, freq=220.0, rate=16000):
    t = np.arange(int(seconds * rate)) / rate
    audio = (0.4 * np.sin(2 * np.pi * freq * t)).astype(np.float32)
    wavfile.write(path, rate, audio)
    return path


@pytest.fixture()
def manifest_dir(tmp_path):
    """A two-item manifest over freshly written tones."""
    write_tone(tmp_path / "a.wav")
    write_tone(tmp_path / "b.wav", freq=330.0)
    manifest = {
        "output_dir": str(tmp_path / "out"),
        "items": [
            {"audio": str(tmp_path / "a.wav"),
             "utterance_id": "a", "speaker_id": "alice"},
            {"audio": str(tmp_path / "b.wav"),
             "utterance_id": "b", "speaker_id": "alice"},
        ],
    }
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest))
    return tmp_path
