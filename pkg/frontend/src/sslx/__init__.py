"""Offline SSL feature extraction frontend.

Runs a pretrained speech encoder over audio files listed in a manifest and
writes NCSF feature files (per-frame key/value vectors) consumed by the
conversion pipeline. Shares no code with the pipeline; the NCSF byte
layout is the only contract.
"""

from .manifest import ExtractionManifest, ManifestItem, load_manifest
from .ncsf import write_ncsf
from .extract import load_encoder, extract_file, run_manifest

__all__ = [
    "ExtractionManifest",
    "ManifestItem",
    "load_manifest",
    "write_ncsf",
    "load_encoder",
    "extract_file",
    "run_manifest",
]
