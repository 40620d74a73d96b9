"""End-to-end conversion and the reference-duration coverage study.

Each stage is a pure function over in-memory types; `convert` composes the
same stage functions the CLI subcommands expose, so a staged run over
intermediate files reproduces its output bit-exactly.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from . import audio_io, dsp, harmonics as hg
from .errors import ValidationError
from .feature_store import MatchingPool, MatchResult, SslFrameSequence, build_pool, knn_match
from .synth import estimate_ltv_filters, forward
from .synth.model import FRAME_TO_SAMPLE, SynthModel

log = logging.getLogger("neuco")

ANALYSIS_RATE = 24000


@dataclass(frozen=True)
class ConversionJob:
    source_audio: str
    source_features: str
    reference_features: tuple
    checkpoint: str
    output: str
    reference_audio: str | None = None
    pitch_tracks: tuple = ()
    k: int = 4
    seed: int = 0
    pitch_shift: str | float = "auto"   # "auto" | "off" | fixed scalar
    f0_range: tuple = (50.0, 1000.0)

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be >= 1")
        if len(self.pitch_tracks) > 3:
            raise ValidationError("at most three external pitch tracks")


@dataclass(frozen=True)
class CoverageReport:
    pool_duration: float
    pool_frames: int
    distinct_matched_frames: int
    coverage_ratio: float
    mean_top1_similarity: float


def stage_extract_dsp(audio_path, pitch_track_paths=(), f0_range=(50.0, 1000.0),
                      analysis_rate=ANALYSIS_RATE) -> dsp.DspTrack:
    """Audio file -> f0/loudness track on the 10 ms grid."""
    if len(pitch_track_paths) > 3:
        raise ValidationError("at most three external pitch tracks")
    audio, rate = audio_io.read_wav(audio_path)
    audio = audio_io.resample(audio, rate, analysis_rate)
    internal = dsp.detect_pitch(audio, analysis_rate, f0_range=f0_range)
    # with three external trackers the ensemble is theirs alone; otherwise
    # the built-in detector fills one slot
    tracks = [] if len(pitch_track_paths) == 3 else [internal]
    n = internal.size
    for path in pitch_track_paths:
        ext = dsp.load_pitch_text(path)
        # external trackers may differ by a frame or two at the edge
        if abs(ext.size - n) > 2:
            raise ValidationError(
                f"pitch track {path} has {ext.size} frames, expected about {n}")
        n = min(ext.size, n)
        tracks.append(ext)
    tracks = [t[:n] for t in tracks]
    f0 = dsp.median_pitch_ensemble(tracks)
    loud = dsp.a_weighted_loudness(audio, analysis_rate)[: f0.size]
    f0 = f0[: loud.size]
    return dsp.DspTrack(f0=f0, loudness=loud, sample_rate_src=analysis_rate)


def stage_match(source: SslFrameSequence, pool: MatchingPool, k: int):
    """kNN replacement; returns the matched sequence plus the raw result."""
    result = knn_match(source, pool, k)
    matched = SslFrameSequence(
        keys=source.keys,
        values=result.matched_values,
        utterance_id=source.utterance_id,
        speaker_id=pool.speaker_id,
        frame_period_ms=source.frame_period_ms,
    )
    return matched, result


def apply_pitch_shift(f0, factor: float):
    f0 = np.asarray(f0, dtype=np.float64)
    out = f0.copy()
    out[f0 > 0] = f0[f0 > 0] * factor
    return out


def stage_synthesize(matched: SslFrameSequence, track: dsp.DspTrack,
                     model: SynthModel, seed: int, shift_factor: float = 1.0):
    """Aligned features -> harmonic excitation -> waveform."""
    if matched.value_dim != model.config.value_dim:
        raise ValidationError(
            f"feature value_dim {matched.value_dim} does not match checkpoint "
            f"value_dim {model.config.value_dim}")
    aligned = dsp.align_streams(matched.values, track)
    f0 = apply_pitch_shift(aligned.f0, shift_factor)
    h1, h2 = estimate_ltv_filters(aligned.values, aligned.loudness, model)
    signals = hg.generate(f0, model.config.sample_rate_out, h1, h2,
                          FRAME_TO_SAMPLE, seed)
    audio = forward(model, aligned.values, signals.s, aligned.loudness)
    return np.asarray(audio, dtype=np.float32), aligned


def resolve_shift_factor(job: ConversionJob, source_track: dsp.DspTrack) -> float:
    if job.pitch_shift == "off":
        return 1.0
    if isinstance(job.pitch_shift, (int, float)):
        factor = float(job.pitch_shift)
        if factor <= 0:
            raise ValidationError("fixed pitch-shift factor must be positive")
        return factor
    if job.pitch_shift == "auto":
        if not job.reference_audio:
            raise ValidationError(
                "pitch_shift=auto needs reference audio to measure target pitch")
        ref_track = stage_extract_dsp(job.reference_audio,
                                      f0_range=job.f0_range)
        return dsp.pitch_shift_factor(source_track.f0, ref_track.f0)
    raise ValidationError(f"unknown pitch_shift mode {job.pitch_shift!r}")


def _provenance(result: MatchResult, shift_factor: float, job: ConversionJob):
    return {
        "shift_factor": shift_factor,
        "k": job.k,
        "seed": job.seed,
        "frames": [
            [
                {"utterance": origin[0], "frame": origin[1], "similarity": sim}
                for origin, sim in frame
            ]
            for frame in result.neighbor_origins
        ],
    }


def convert(job: ConversionJob, model: SynthModel = None):
    """Run the full pipeline; writes the output WAV and a provenance JSON."""
    from .feature_store import load_feature_file
    from .synth import load_checkpoint

    def _stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            raise ValidationError(f"[{name}] {exc}") from exc

    source = _stage("load-features", load_feature_file, job.source_features)
    refs = [_stage("load-features", load_feature_file, p)
            for p in job.reference_features]
    pool = _stage("build-pool", build_pool, refs)
    if model is None:
        model = _stage("load-checkpoint", load_checkpoint, job.checkpoint)
    if source.value_dim != model.config.value_dim:
        raise ValidationError(
            f"[convert] feature value_dim {source.value_dim} does not match "
            f"checkpoint value_dim {model.config.value_dim}")

    matched, result = _stage("match", stage_match, source, pool, job.k)
    track = _stage("extract-dsp", stage_extract_dsp, job.source_audio,
                   job.pitch_tracks, job.f0_range)
    shift = _stage("pitch-shift", resolve_shift_factor, job, track)
    audio, aligned = _stage("synthesize", stage_synthesize,
                            matched, track, model, job.seed, shift)

    audio_io.write_wav(job.output, audio, model.config.sample_rate_out)
    provenance = _provenance(result, shift, job)
    prov_path = job.output + ".provenance.json"
    directory = os.path.dirname(os.path.abspath(prov_path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".json.tmp")
    try:
        with os.fdopen(fd, "w") as f:
            json.dump(provenance, f, indent=2, sort_keys=True)
        os.replace(tmp, prov_path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    log.info("convert: wrote %s (%d samples, shift factor %.6g)",
             job.output, audio.size, shift)
    return audio, provenance


def coverage_study(source: SslFrameSequence, references, durations, k: int):
    """Pool-usage reports over leading reference prefixes of given durations."""
    pool_full = build_pool(list(references))
    frame_period_s = source.frame_period_ms / 1000.0
    total_frames = pool_full.n_frames

    reports = []
    for duration in durations:
        n_frames = int(round(duration / frame_period_s))
        if n_frames > total_frames:
            raise ValidationError(
                f"duration {duration}s needs {n_frames} frames but the "
                f"reference has only {total_frames}")
        if n_frames < k:
            raise ValidationError(
                f"duration {duration}s yields {n_frames} frames, fewer than k={k}")
        prefix = MatchingPool(
            keys=pool_full.keys[:n_frames],
            values=pool_full.values[:n_frames],
            origins=pool_full.origins[:n_frames],
            speaker_id=pool_full.speaker_id,
            _unit_keys=pool_full._unit_keys[:n_frames],
        )
        result = knn_match(source, prefix, k)
        distinct = int(np.unique(result.neighbor_indices).size)
        top1 = float(np.mean([frame[0][1] for frame in result.neighbor_origins]))
        reports.append(CoverageReport(
            pool_duration=n_frames * frame_period_s,
            pool_frames=n_frames,
            distinct_matched_frames=distinct,
            coverage_ratio=distinct / n_frames,
            mean_top1_similarity=top1,
        ))
    return reports
