"""Extraction manifest: which audio maps to which NCSF output.

A manifest is a JSON object with an `items` list; each item names one
input audio file plus its utterance and speaker ids. Every item maps to
exactly one output path, `<output_dir>/<utterance_id>.ncsf`.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field


@dataclass(frozen=True)
class ManifestItem:
    audio: str
    utterance_id: str
    speaker_id: str


@dataclass(frozen=True)
class ExtractionManifest:
    items: tuple
    output_dir: str
    value_layer: int = 6      # transformer hidden state used as values
    key_layers: int = 5       # trailing hidden states averaged into keys

    def __post_init__(self):
        if not self.items:
            raise ValueError("manifest lists no items")
        if self.value_layer < 1:
            raise ValueError("value_layer must be >= 1")
        if self.key_layers < 1:
            raise ValueError("key_layers must be >= 1")
        seen = {}
        for item in self.items:
            if not item.utterance_id or not item.speaker_id:
                raise ValueError(
                    f"item {item.audio!r} needs utterance_id and speaker_id")
            if item.utterance_id in seen:
                raise ValueError(
                    f"duplicate utterance_id {item.utterance_id!r}: outputs "
                    f"would collide")
            seen[item.utterance_id] = item

    def output_path(self, item: ManifestItem) -> str:
        return os.path.join(self.output_dir, item.utterance_id + ".ncsf")


def load_manifest(path, output_dir=None) -> ExtractionManifest:
    """Parse a JSON manifest; `output_dir` overrides the file's value."""
    with open(path) as f:
        raw = json.load(f)
    if not isinstance(raw, dict) or "items" not in raw:
        raise ValueError(f"{path}: expected an object with an 'items' list")
    items = tuple(
        ManifestItem(
            audio=entry["audio"],
            utterance_id=entry["utterance_id"],
            speaker_id=entry["speaker_id"],
        )
        for entry in raw["items"]
    )
    out = output_dir or raw.get("output_dir")
    if not out:
        raise ValueError("no output_dir in manifest or on the command line")
    return ExtractionManifest(
        items=items,
        output_dir=out,
        value_layer=int(raw.get("value_layer", 6)),
        key_layers=int(raw.get("key_layers", 5)),
    )
