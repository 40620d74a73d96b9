"""Encoder loading and per-file feature extraction.

Audio is resampled to 16 kHz, run through the pretrained encoder, and the
hidden states are reduced to one key/value pair per 20 ms frame: values
are one fixed transformer layer, keys the elementwise mean of the trailing
layers. The encoder checkpoint hash is appended to each utterance id for
provenance.
"""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile
from scipy.signal import resample_poly

from .manifest import ExtractionManifest, ManifestItem
from .ncsf import write_ncsf

log = logging.getLogger("sslx")

ENCODER_RATE = 16000
FRAME_PERIOD_MS = 20.0

_WEIGHT_FILES = ("model.safetensors", "pytorch_model.bin")


class SetupError(RuntimeError):
    """Encoder weights missing or unusable; nothing can be extracted."""


@dataclass(frozen=True)
class Encoder:
    model: object
    device: str
    checkpoint_hash: str
    n_hidden_states: int


def _hash_weights(encoder_dir: str) -> str:
    for name in _WEIGHT_FILES:
        path = os.path.join(encoder_dir, name)
        if os.path.exists(path):
            digest = hashlib.sha256()
            with open(path, "rb") as f:
                for chunk in iter(lambda: f.read(1 << 20), b""):
                    digest.update(chunk)
            return digest.hexdigest()[:12]
    raise SetupError(f"no weight file in {encoder_dir!r} "
                     f"(looked for {', '.join(_WEIGHT_FILES)})")


def load_encoder(encoder_dir: str, device: str = "cpu") -> Encoder:
    """Load the pretrained encoder from a local directory; never downloads."""
    if not os.path.isdir(encoder_dir):
        raise SetupError(f"encoder directory {encoder_dir!r} does not exist")
    checkpoint_hash = _hash_weights(encoder_dir)
    import torch
    from transformers import WavLMModel

    try:
        model = WavLMModel.from_pretrained(encoder_dir)
    except Exception as exc:
        raise SetupError(f"cannot load encoder from {encoder_dir!r}: {exc}")
    model.eval()
    model.to(device)
    torch.set_grad_enabled(False)
    return Encoder(
        model=model,
        device=device,
        checkpoint_hash=checkpoint_hash,
        n_hidden_states=model.config.num_hidden_layers + 1,
    )


def read_audio(path) -> np.ndarray:
    """Decode to mono float at the encoder rate."""
    if str(path).lower().endswith(".flac"):
        try:
            import soundfile
        except ImportError:
            raise ValueError("FLAC input needs the soundfile package")
        audio, rate = soundfile.read(path, dtype="float64")
    else:
        rate, audio = wavfile.read(path)
        if audio.dtype == np.int16:
            audio = audio / 32768.0
        elif audio.dtype == np.int32:
            audio = audio / 2147483648.0
        else:
            audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim == 2:
        audio = audio.mean(axis=1)
    if audio.size == 0:
        raise ValueError(f"{path}: empty audio")
    if rate != ENCODER_RATE:
        from math import gcd
        g = gcd(int(rate), ENCODER_RATE)
        audio = resample_poly(audio, ENCODER_RATE // g, rate // g)
    return np.asarray(audio, dtype=np.float64)


def extract_file(encoder: Encoder, audio_path,
                 value_layer: int = 6, key_layers: int = 5):
    """Audio file -> (keys, values) float32 matrices, one row per 20 ms."""
    if value_layer >= encoder.n_hidden_states:
        raise ValueError(
            f"value_layer {value_layer} out of range for an encoder with "
            f"{encoder.n_hidden_states} hidden states")
    if key_layers > encoder.n_hidden_states:
        raise ValueError(
            f"key_layers {key_layers} exceeds the encoder's "
            f"{encoder.n_hidden_states} hidden states")
    import torch

    audio = read_audio(audio_path)
    wave = torch.from_numpy(audio[None, :]).float().to(encoder.device)
    out = encoder.model(wave, output_hidden_states=True)
    hidden = out.hidden_states           # tuple of [1, T, dim]
    values = hidden[value_layer][0].cpu().numpy().astype(np.float32)
    tail = torch.stack(hidden[-key_layers:]).mean(dim=0)
    keys = tail[0].cpu().numpy().astype(np.float32)
    return keys, values


def run_manifest(manifest: ExtractionManifest, encoder: Encoder,
                 hash_tag: bool = True):
    """Extract every item; per-file failures are recorded, not fatal.

    Returns (written_paths, errors) where errors maps each failed item's
    utterance id to the error message.
    """
    os.makedirs(manifest.output_dir, exist_ok=True)
    written = []
    errors = {}
    for item in manifest.items:
        out_path = manifest.output_path(item)
        try:
            keys, values = extract_file(encoder, item.audio,
                                        manifest.value_layer,
                                        manifest.key_layers)
            utterance = item.utterance_id
            if hash_tag:
                utterance += "@" + encoder.checkpoint_hash
            write_ncsf(out_path, keys, values, utterance, item.speaker_id,
                       FRAME_PERIOD_MS)
            written.append(out_path)
            log.info("wrote %s: %d frames", out_path, keys.shape[0])
        except (OSError, ValueError) as exc:
            errors[item.utterance_id] = str(exc)
            log.error("skipping %s: %s", item.audio, exc)
    return written, errors
