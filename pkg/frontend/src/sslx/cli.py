"""Command-line entry point for batch feature extraction.

Exit codes: 0 all items extracted, 1 partial failure (some items written,
some failed), 2 setup or usage errors (nothing written).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .extract import (
    ENCODER_RATE,
    SetupError,
    load_encoder,
    read_audio,
    run_manifest,
)
from .manifest import load_manifest
from .pitch import track_pitch, write_pitch_text

log = logging.getLogger("sslx")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="sslx",
        description="Extract SSL features from audio into NCSF files")
    parser.add_argument("--manifest", required=True,
                        help="JSON manifest of audio/utterance/speaker items")
    parser.add_argument("--encoder", required=True,
                        help="local directory with pretrained encoder weights")
    parser.add_argument("--output-dir",
                        help="overrides the manifest's output_dir")
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--pitch", action="store_true",
                        help="also export a plain-text pitch track per item")
    parser.add_argument("--no-hash-tag", action="store_true",
                        help="do not append the encoder hash to utterance ids")
    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        manifest = load_manifest(args.manifest, args.output_dir)
        encoder = load_encoder(args.encoder, args.device)
    except (OSError, ValueError, SetupError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    written, errors = run_manifest(manifest, encoder,
                                   hash_tag=not args.no_hash_tag)
    if args.pitch:
        for item in manifest.items:
            if item.utterance_id in errors:
                continue
            try:
                audio = read_audio(item.audio)
                f0 = track_pitch(audio, ENCODER_RATE)
                out = os.path.join(manifest.output_dir,
                                   item.utterance_id + ".f0.txt")
                write_pitch_text(f0, out)
            except (OSError, ValueError) as exc:
                errors[item.utterance_id] = str(exc)

    for utterance, message in errors.items():
        print(f"failed: {utterance}: {message}", file=sys.stderr)
    print(f"extracted {len(written)} of {len(manifest.items)} items")
    if errors and written:
        return 1
    if errors:
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
