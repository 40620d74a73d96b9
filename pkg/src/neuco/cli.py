"""Command-line entry point: every pipeline stage as a subcommand.

Exit codes: 0 success, 1 validation/format/training errors (single-line
machine-parsable message on stderr), 2 usage errors. Log verbosity via
NEUCO_LOG={error|info|debug}. An optional key=value config file supplies
defaults; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import audio_io, dsp, harmonics as hg, pipeline
from .errors import CorruptionError, FormatError, NeucoError, ValidationError
from .feature_store import (
    build_pool,
    knn_match,
    load_feature_file,
    prematch_training_features,
    save_feature_file,
)
from .synth import (
    SynthConfig,
    build_discriminator,
    build_model,
    load_checkpoint,
    save_checkpoint,
    train_toy,
    make_toy_batch,
)
from .synth.model import FRAME_TO_SAMPLE

log = logging.getLogger("neuco")

_ERROR_CODES = {
    ValidationError: "validation",
    FormatError: "format",
    CorruptionError: "corruption",
}


def _setup_logging():
    level_name = os.environ.get("NEUCO_LOG", "error").lower()
    level = {"error": logging.ERROR, "info": logging.INFO,
             "debug": logging.DEBUG}.get(level_name, logging.ERROR)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def _load_config_defaults(argv):
    """Pre-scan for --config and turn its key=value pairs into defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    defaults = {}
    if known.config:
        with open(known.config) as f:
            for lineno, line in enumerate(f, 1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValidationError(
                        f"{known.config}:{lineno}: expected key=value")
                key, value = line.split("=", 1)
                defaults[key.strip().replace("-", "_")] = value.strip()
    return defaults


def _read_pool_sequences(reference_paths, manifest):
    paths = list(reference_paths or [])
    if manifest:
        with open(manifest) as f:
            paths += [line.strip() for line in f if line.strip()]
    if not paths:
        raise ValidationError("no reference feature files given")
    return [load_feature_file(p) for p in paths], paths


def cmd_extract_dsp(args):
    track = pipeline.stage_extract_dsp(
        args.audio, tuple(args.pitch_track or ()),
        f0_range=(args.f0_min, args.f0_max))
    dsp.save_dsp_track(track, args.output)
    print(f"wrote {args.output}: {track.n_frames} frames")


def cmd_build_pool(args):
    sequences, paths = _read_pool_sequences(args.reference, None)
    pool = build_pool(sequences)
    with open(args.output, "w") as f:
        for p in paths:
            f.write(os.path.abspath(p) + "\n")
    print(f"wrote {args.output}: {pool.n_frames} frames, "
          f"key_dim={pool.key_dim}, value_dim={pool.value_dim}")


def cmd_match(args):
    source = load_feature_file(args.source)
    sequences, _ = _read_pool_sequences(args.reference, args.pool)
    pool = build_pool(sequences)
    matched, result = pipeline.stage_match(source, pool, args.k)
    save_feature_file(matched, args.output)
    if args.provenance:
        with open(args.provenance, "w") as f:
            json.dump(pipeline._provenance(result, 1.0, _FakeJob(args.k)),
                      f, indent=2, sort_keys=True)
    print(f"wrote {args.output}: {matched.n_frames} matched frames")


class _FakeJob:
    def __init__(self, k):
        self.k = k
        self.seed = 0


def cmd_prematch(args):
    target = load_feature_file(args.target)
    sequences, _ = _read_pool_sequences(args.pool_file, None)
    pool = build_pool(sequences)
    out = prematch_training_features(target, pool, args.k)
    save_feature_file(out, args.output)
    print(f"wrote {args.output}: {out.n_frames} pre-matched frames")


def cmd_harmonics(args):
    """Debug dump of the excitation signals for inspection."""
    matched = load_feature_file(args.features)
    track = dsp.load_dsp_track(args.dsp)
    model = load_checkpoint(args.checkpoint)
    # the aligned/excitation path without the synthesizer forward
    aligned = dsp.align_streams(matched.values, track)
    f0 = pipeline.apply_pitch_shift(aligned.f0, args.pitch_shift)
    from .synth import estimate_ltv_filters
    h1, h2 = estimate_ltv_filters(aligned.values, aligned.loudness, model)
    signals = hg.generate(f0, model.config.sample_rate_out, h1, h2,
                          FRAME_TO_SAMPLE, args.seed)
    audio_io.write_wav(args.output, signals.p, model.config.sample_rate_out)
    stereo = args.output.replace(".wav", "") + ".s.wav"
    # 2-channel dump of s[n]
    from scipy.io import wavfile
    wavfile.write(stereo, model.config.sample_rate_out,
                  np.asarray(signals.s.T, dtype=np.float32))
    print(f"wrote {args.output} and {stereo}: {signals.p.size} samples")


def cmd_synthesize(args):
    matched = load_feature_file(args.features)
    track = dsp.load_dsp_track(args.dsp)
    model = load_checkpoint(args.checkpoint)
    audio, aligned = pipeline.stage_synthesize(matched, track, model,
                                               args.seed, args.pitch_shift)
    audio_io.write_wav(args.output, audio, model.config.sample_rate_out)
    print(f"wrote {args.output}: {audio.size} samples "
          f"({aligned.n_frames} frames)")


def cmd_train_toy(args):
    config = SynthConfig(value_dim=args.value_dim,
                         base_channels=args.channels,
                         ltv_taps=args.ltv_taps)
    model = build_model(config, seed=args.seed)
    disc, disc_params = build_discriminator(seed=args.seed + 1)
    batch = make_toy_batch(config, args.frames, seed=args.seed)

    records = []

    def log_step(step, report):
        line = json.dumps({"step": step, **{k: float(v) for k, v in report.items()}})
        records.append(line)
        log.info("train step %d: %s", step, report)

    model, history = train_toy(model, batch, args.steps, lr=args.lr,
                               disc=disc, disc_params=disc_params,
                               log_fn=log_step)
    if args.log:
        with open(args.log, "w") as f:
            f.write("\n".join(records) + "\n")
    save_checkpoint(model, args.output)
    first, last = history[0]["g_total"], history[-1]["g_total"]
    print(f"wrote {args.output}: {model.parameter_count} params, "
          f"loss {first:.4f} -> {last:.4f}")


def cmd_coverage(args):
    source = load_feature_file(args.source)
    sequences, _ = _read_pool_sequences(args.reference, args.pool)
    durations = [float(d) for d in args.durations.split(",")]
    reports = pipeline.coverage_study(source, sequences, durations, args.k)
    out = [report.__dict__ for report in reports]
    print(json.dumps(out, indent=2))


def cmd_convert(args):
    pitch_shift = args.pitch_shift
    if pitch_shift not in ("auto", "off"):
        pitch_shift = float(pitch_shift)
    job = pipeline.ConversionJob(
        source_audio=args.source_audio,
        source_features=args.source_features,
        reference_features=tuple(args.reference),
        reference_audio=args.reference_audio,
        pitch_tracks=tuple(args.pitch_track or ()),
        checkpoint=args.checkpoint,
        output=args.output,
        k=args.k,
        seed=args.seed,
        pitch_shift=pitch_shift,
        f0_range=(args.f0_min, args.f0_max),
    )
    audio, provenance = pipeline.convert(job)
    print(f"wrote {args.output}: {audio.size} samples, "
          f"shift factor {provenance['shift_factor']:.6g}")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="neuco",
        description="Neural-concatenative singing voice conversion pipeline")
    parser.add_argument("--config", help="key=value defaults file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract-dsp", help="audio -> NCDT pitch/loudness track")
    p.add_argument("--audio", required=True)
    p.add_argument("--pitch-track", action="append",
                   help="external plain-text pitch track (repeatable, max 3)")
    p.add_argument("--f0-min", type=float, default=50.0)
    p.add_argument("--f0-max", type=float, default=1000.0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_extract_dsp)

    p = sub.add_parser("build-pool", help="NCSF files -> pool manifest")
    p.add_argument("--reference", action="append", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_build_pool)

    p = sub.add_parser("match", help="kNN-replace source features from a pool")
    p.add_argument("--source", required=True)
    p.add_argument("--reference", action="append")
    p.add_argument("--pool", help="pool manifest from build-pool")
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--output", required=True)
    p.add_argument("--provenance")
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("prematch", help="same-speaker training pre-matching")
    p.add_argument("--target", required=True)
    p.add_argument("--pool-file", action="append", required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_prematch)

    p = sub.add_parser("harmonics", help="debug dump of excitation signals")
    p.add_argument("--features", required=True)
    p.add_argument("--dsp", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pitch-shift", type=float, default=1.0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_harmonics)

    p = sub.add_parser("synthesize", help="matched features + DSP -> WAV")
    p.add_argument("--features", required=True)
    p.add_argument("--dsp", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pitch-shift", type=float, default=1.0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_synthesize)

    p = sub.add_parser("train-toy", help="toy-scale seeded training run")
    p.add_argument("--value-dim", type=int, default=16)
    p.add_argument("--channels", type=int, default=8)
    p.add_argument("--ltv-taps", type=int, default=64)
    p.add_argument("--frames", type=int, default=100)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--log")
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("coverage", help="pool-usage reports over duration prefixes")
    p.add_argument("--source", required=True)
    p.add_argument("--reference", action="append")
    p.add_argument("--pool")
    p.add_argument("--durations", default="5,10,30,60,90")
    p.add_argument("--k", type=int, default=4)
    p.set_defaults(func=cmd_coverage)

    p = sub.add_parser("convert", help="end-to-end conversion")
    p.add_argument("--source-audio", required=True)
    p.add_argument("--source-features", required=True)
    p.add_argument("--reference", action="append", required=True)
    p.add_argument("--reference-audio")
    p.add_argument("--pitch-track", action="append")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pitch-shift", default="auto")
    p.add_argument("--f0-min", type=float, default=50.0)
    p.add_argument("--f0-max", type=float, default=1000.0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_convert)

    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    _setup_logging()
    parser = build_parser()
    try:
        defaults = _load_config_defaults(argv)
        if defaults:
            for action in parser._subparsers._group_actions[0].choices.values():
                known = {a.dest for a in action._actions}
                action.set_defaults(**{k: v for k, v in defaults.items()
                                       if k in known})
        args = parser.parse_args(argv)
        args.func(args)
        return 0
    except NeucoError as exc:
        code = "error"
        for cls, name in _ERROR_CODES.items():
            if isinstance(exc, cls):
                code = name
                break
        print(f"error: code={code} msg={exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: code=io msg={exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
