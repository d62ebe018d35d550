"""Dataset generation, validation, feature extraction, and scoring.

Generation streams the 48 kHz simulation through per-segment buffers:
each scheduled pass-by is rendered once and mixed (in schedule order, so
the reduction order is fixed and reruns are bit-identical) into the one
or two segments its 30 s window overlaps; completed segments are
resampled to 16 kHz, written as multichannel WAV, and their feature
tensors extracted, before later segments are rendered. Peak memory thus
stays independent of the dataset length.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from . import __version__
from .composer import (
    CATEGORY_NAMES,
    VehicleEvent,
    sample_schedule,
    segment_label_counts,
    segment_provenance,
    render_event,
    mix_into,
)
from .config import GenerationConfig
from .errors import ConfigurationError, DomainError, ValidationError
from .evaluation import EvalReport, evaluate_counts
from .features import (
    FrameParams,
    compute_segment_features,
    load_features,
    resample_to_16k,
    save_features,
)
from .manifest import (
    MANIFEST_NAME,
    ManifestWriter,
    SegmentRecord,
    event_to_record,
    read_manifest,
    write_dataset_info,
    write_manifest,
)
from .util import derive_seed

log = logging.getLogger("trafficsynth")

INT16_SCALE = 4096.0  # stored int16 counts = pressure * INT16_SCALE

_SCHEDULE_STREAM = 0
_RENDER_STREAM = 1


def _audio_name(k: int) -> str:
    return f"segments/segment_{k:06d}.wav"


def _feature_name(k: int) -> str:
    return f"features/segment_{k:06d}.npz"


def write_segment_wav(path: Path, audio: np.ndarray, sample_rate: int, audio_format: str) -> None:
    """audio is (channels, samples); WAV stores samples x channels."""
    path.parent.mkdir(parents=True, exist_ok=True)
    data = audio.T
    if audio_format == "float32":
        wavfile.write(path, sample_rate, data.astype(np.float32))
    elif audio_format == "int16":
        scaled = np.clip(data * INT16_SCALE, -32768, 32767)
        wavfile.write(path, sample_rate, scaled.astype(np.int16))
    else:
        raise ConfigurationError(f"unsupported audio format {audio_format}")


def read_segment_wav(path: Path) -> tuple[int, np.ndarray]:
    """Returns (rate, float channels-first audio); int16 is unscaled to pressure."""
    rate, data = wavfile.read(path)
    if data.ndim == 1:
        data = data[:, None]
    audio = data.T.astype(np.float64)
    if data.dtype == np.int16:
        audio /= INT16_SCALE
    return int(rate), audio


@dataclass
class _RenderJob:
    event: VehicleEvent
    event_index: int
    seed: int
    config: GenerationConfig


def _render_job(job: _RenderJob) -> tuple[int, int, np.ndarray]:
    cfg = job.config
    start, rec = render_event(
        job.event,
        job.event_index,
        job.seed,
        cfg.array,
        cfg.environment,
        cfg.sim_sample_rate,
        lanes=cfg.lanes,
        event_duration_s=cfg.event_duration_s,
    )
    return job.event_index, start, rec.channels


class _SegmentFlusher:
    """Finalizes one 48 kHz segment buffer to disk (audio + features)."""

    def __init__(self, config: GenerationConfig, out_dir: Path):
        self.config = config
        self.out_dir = out_dir
        self.in_flight: list[Path] = []

    def flush(self, k: int, buffer_48k: np.ndarray, counts, events) -> SegmentRecord:
        cfg = self.config
        audio16 = resample_to_16k(buffer_48k, cfg.sim_sample_rate)
        expected = int(round(cfg.segment_len_s * cfg.dataset_sample_rate))
        if audio16.shape[1] != expected:
            raise DomainError(f"segment {k}: resampled to {audio16.shape[1]} samples, expected {expected}")

        audio_rel = _audio_name(k)
        audio_path = self.out_dir / audio_rel
        self.in_flight = [audio_path]
        write_segment_wav(audio_path, audio16, cfg.dataset_sample_rate, cfg.audio_format)

        feature_rel = None
        if cfg.features.enabled:
            feature_rel = _feature_name(k)
            feature_path = self.out_dir / feature_rel
            self.in_flight.append(feature_path)
            gcc, spec = compute_segment_features(
                audio16, cfg.features.frame_len, cfg.features.hop, cfg.features.max_lag
            )
            save_features(feature_path, gcc, spec)

        record = SegmentRecord(
            segment_index=k,
            counts=tuple(int(c) for c in counts),
            events=tuple(events),
            audio_path=audio_rel,
            feature_path=feature_rel,
            sample_rate=cfg.dataset_sample_rate,
            num_channels=cfg.array.num_mics,
            duration_s=cfg.segment_len_s,
            audio_format=cfg.audio_format,
        )
        self.in_flight = []
        return record

    def cleanup(self) -> None:
        for path in self.in_flight:
            path.unlink(missing_ok=True)


def generate_dataset(
    config: GenerationConfig,
    output_dir: str | Path,
    *,
    labels_only: bool = False,
) -> Path:
    """Generate a labeled dataset; returns the manifest path.

    The output directory must be empty (or absent). On failure, files of
    the segment being written are removed so the manifest never references
    missing data.
    """
    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if any(out_dir.iterdir()):
        raise ConfigurationError(f"output directory {out_dir} is not empty")

    t0 = time.monotonic()
    total_s = config.total_duration_s
    schedule = sample_schedule(config.profile, total_s, derive_seed(config.seed, _SCHEDULE_STREAM))
    n_segments = config.num_segments
    counts = segment_label_counts(schedule, total_s, config.segment_len_s)
    prov = segment_provenance(schedule, n_segments, config.segment_len_s, config.event_duration_s)
    events_for = [
        [event_to_record(i, schedule[i]) for i in prov[k]] for k in range(n_segments)
    ]
    log.info("schedule: %d events over %.2f h", len(schedule), config.hours)

    manifest_path = out_dir / MANIFEST_NAME
    if labels_only:
        records = [
            SegmentRecord(
                segment_index=k,
                counts=tuple(int(c) for c in counts[k]),
                events=tuple(events_for[k]),
                audio_path=None,
                feature_path=None,
                sample_rate=config.dataset_sample_rate,
                num_channels=config.array.num_mics,
                duration_s=config.segment_len_s,
                audio_format=config.audio_format,
            )
            for k in range(n_segments)
        ]
        write_manifest(manifest_path, records)
        _write_info(config, out_dir, len(schedule), labels_only=True)
        log.info("labels-only manifest with %d segments in %.1f s", n_segments, time.monotonic() - t0)
        return manifest_path

    seg_samples = int(round(config.segment_len_s * config.sim_sample_rate))
    n_mics = config.array.num_mics
    render_seed = derive_seed(config.seed, _RENDER_STREAM)
    flusher = _SegmentFlusher(config, out_dir)
    buffers: dict[int, np.ndarray] = {}
    next_flush = 0

    def flush_through(k_done: int, writer: ManifestWriter) -> None:
        nonlocal next_flush
        while next_flush < min(k_done, n_segments):
            buf = buffers.pop(next_flush, None)
            if buf is None:
                buf = np.zeros((n_mics, seg_samples))
            record = flusher.flush(next_flush, buf, counts[next_flush], events_for[next_flush])
            writer.append(record)
            if (next_flush + 1) % 10 == 0 or next_flush + 1 == n_segments:
                log.info("segment %d/%d done (%.1f s elapsed)", next_flush + 1, n_segments, time.monotonic() - t0)
            next_flush += 1

    jobs = (
        _RenderJob(event, i, render_seed, config) for i, event in enumerate(schedule)
    )

    try:
        with ManifestWriter(manifest_path) as writer:
            if config.workers > 1:
                with ProcessPoolExecutor(max_workers=config.workers) as pool:
                    results = pool.map(_render_job, jobs, chunksize=1)
                    _consume(results, flush_through, buffers, seg_samples, n_mics, n_segments, writer)
            else:
                _consume(map(_render_job, jobs), flush_through, buffers, seg_samples, n_mics, n_segments, writer)
            flush_through(n_segments, writer)
    except BaseException:
        flusher.cleanup()
        manifest_path.unlink(missing_ok=True)
        raise

    _write_info(config, out_dir, len(schedule), labels_only=False)
    log.info("dataset complete: %d segments in %.1f s", n_segments, time.monotonic() - t0)
    return manifest_path


def _consume(results, flush_through, buffers, seg_samples, n_mics, n_segments, writer) -> None:
    total = n_segments * seg_samples
    for _, start, channels in results:
        flush_through(start // seg_samples, writer)
        lo = max(0, start)
        hi = min(total, start + channels.shape[1])
        k = lo // seg_samples
        while k * seg_samples < hi and k < n_segments:
            if k not in buffers:
                buffers[k] = np.zeros((n_mics, seg_samples))
            seg_view = buffers[k]
            base = k * seg_samples
            mix_into(seg_view, start - base, channels)
            k += 1


def _write_info(config: GenerationConfig, out_dir: Path, n_events: int, labels_only: bool) -> None:
    info = {
        "generator": f"trafficsynth {__version__}",
        "seed": config.seed,
        "hours": config.hours,
        "num_segments": config.num_segments,
        "num_events": n_events,
        "segment_len_s": config.segment_len_s,
        "sample_rate": config.dataset_sample_rate,
        "audio_format": config.audio_format,
        "labels_only": labels_only,
        "manifest": MANIFEST_NAME,
        "category_order": list(CATEGORY_NAMES),
    }
    write_dataset_info(out_dir, info)


def extract_features(
    manifest_path: str | Path,
    frame_len: int,
    hop: int,
    max_lag: int,
) -> int:
    """(Re)compute feature files for every audio-bearing manifest record.

    Rewrites the manifest atomically with updated feature paths; returns
    the number of segments processed.
    """
    manifest_path = Path(manifest_path)
    records = read_manifest(manifest_path)
    root = manifest_path.parent
    FrameParams(frame_len, hop, max_lag)  # validate before touching files

    updated = []
    done = 0
    for rec in records:
        if rec.audio_path is None:
            updated.append(rec)
            continue
        rate, audio = read_segment_wav(root / rec.audio_path)
        if rate != rec.sample_rate:
            raise ValidationError(f"{rec.audio_path}: sample rate {rate} != manifest {rec.sample_rate}")
        gcc, spec = compute_segment_features(audio, frame_len, hop, max_lag)
        feature_rel = rec.feature_path or _feature_name(rec.segment_index)
        save_features(root / feature_rel, gcc, spec)
        updated.append(
            SegmentRecord(
                segment_index=rec.segment_index,
                counts=rec.counts,
                events=rec.events,
                audio_path=rec.audio_path,
                feature_path=feature_rel,
                sample_rate=rec.sample_rate,
                num_channels=rec.num_channels,
                duration_s=rec.duration_s,
                audio_format=rec.audio_format,
            )
        )
        done += 1
    write_manifest(manifest_path, updated)
    return done


def validate_dataset(manifest_path: str | Path) -> list[str]:
    """Check a dataset for consistency; returns a list of violations."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    problems: list[str] = []
    records = read_manifest(manifest_path)
    if not records:
        return ["manifest is empty"]

    indices = [r.segment_index for r in records]
    if indices != list(range(len(records))):
        problems.append("segment indices are not contiguous from 0")

    seen_events: dict[int, dict] = {}
    totals = np.zeros(4, dtype=int)
    feature_meta_ref: dict | None = None

    for rec in records:
        seg_lo = rec.segment_index * rec.duration_s
        seg_hi = seg_lo + rec.duration_s
        recount = np.zeros(4, dtype=int)
        for ev in rec.events:
            cat = CATEGORY_NAMES.index(f"{ev['class']}_{ev['direction']}")
            if seg_lo <= ev["cpa_time_s"] < seg_hi:
                recount[cat] += 1
            prior = seen_events.setdefault(ev["event_id"], ev)
            if prior != ev:
                problems.append(f"segment {rec.segment_index}: event {ev['event_id']} inconsistent across records")
        if tuple(recount) != tuple(rec.counts):
            delta = np.asarray(rec.counts) - recount
            problems.append(
                f"segment {rec.segment_index}: label {list(rec.counts)} does not match "
                f"provenance recount {recount.tolist()} (delta {delta.tolist()})"
            )
        totals += np.asarray(rec.counts)

        if rec.audio_path is not None:
            audio_path = root / rec.audio_path
            if not audio_path.exists():
                problems.append(f"segment {rec.segment_index}: missing audio file {rec.audio_path}")
            else:
                try:
                    rate, data = wavfile.read(audio_path, mmap=True)
                    n, ch = (data.shape[0], 1) if data.ndim == 1 else data.shape
                    if rate != rec.sample_rate:
                        problems.append(f"segment {rec.segment_index}: rate {rate} != {rec.sample_rate}")
                    if ch != rec.num_channels:
                        problems.append(f"segment {rec.segment_index}: {ch} channels != {rec.num_channels}")
                    if n != int(round(rec.duration_s * rec.sample_rate)):
                        problems.append(f"segment {rec.segment_index}: {n} samples != {rec.duration_s} s")
                except ValueError as exc:
                    problems.append(f"segment {rec.segment_index}: unreadable WAV: {exc}")

        if rec.feature_path is not None:
            feature_path = root / rec.feature_path
            if not feature_path.exists():
                problems.append(f"segment {rec.segment_index}: missing feature file {rec.feature_path}")
            else:
                try:
                    gcc, spec, meta = load_features(feature_path)
                    framing = {k: meta[k] for k in ("frame_len", "hop", "max_lag", "sample_rate")}
                    if feature_meta_ref is None:
                        feature_meta_ref = framing
                    elif framing != feature_meta_ref:
                        problems.append(f"segment {rec.segment_index}: framing differs from the rest of the dataset")
                    if list(gcc.values.shape) != meta["gcc_shape"] or list(spec.values.shape) != meta["spec_shape"]:
                        problems.append(f"segment {rec.segment_index}: tensor shapes do not match their header")
                    if gcc.values.shape[1] != spec.values.shape[1]:
                        problems.append(f"segment {rec.segment_index}: feature tensors are not frame-aligned")
                    n_expected = FrameParams(**framing).num_frames(int(round(rec.duration_s * rec.sample_rate)))
                    if gcc.values.shape[1] != n_expected:
                        problems.append(
                            f"segment {rec.segment_index}: {gcc.values.shape[1]} frames, expected {n_expected}"
                        )
                except (ConfigurationError, ValidationError, ValueError, KeyError) as exc:
                    problems.append(f"segment {rec.segment_index}: bad feature file: {exc}")

    per_event = np.zeros(4, dtype=int)
    n_records = len(records)
    horizon = n_records * records[0].duration_s
    for ev in seen_events.values():
        if 0.0 <= ev["cpa_time_s"] < horizon:
            per_event[CATEGORY_NAMES.index(f"{ev['class']}_{ev['direction']}")] += 1
    if not np.array_equal(per_event, totals):
        problems.append(
            f"label conservation violated: totals {totals.tolist()} != distinct events {per_event.tolist()}"
        )
    return problems


def load_predictions(path: str | Path) -> dict[int, np.ndarray]:
    """Read a predictions file: JSONL of {segment_index, prediction[4]}."""
    preds: dict[int, np.ndarray] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
                idx = int(doc["segment_index"])
                values = np.asarray(doc["prediction"], dtype=float)
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise ValidationError(f"{path}:{lineno}: bad prediction record: {exc}") from exc
            if values.shape != (4,):
                raise ValidationError(f"{path}:{lineno}: prediction must hold 4 values")
            preds[idx] = values
    return preds


def score_predictions(
    predictions_path: str | Path,
    manifest_path: str | Path,
    merge_mode: str = "mean",
) -> EvalReport:
    """Join predictions to manifest labels by segment id and score them."""
    records = read_manifest(manifest_path)
    preds = load_predictions(predictions_path)
    missing = [r.segment_index for r in records if r.segment_index not in preds]
    if missing:
        head = ", ".join(str(m) for m in missing[:20])
        more = "" if len(missing) <= 20 else f" (+{len(missing) - 20} more)"
        raise DomainError(f"predictions missing for segment ids: {head}{more}")
    raw = np.stack([preds[r.segment_index] for r in records])
    labels = np.asarray([r.counts for r in records], dtype=int)
    return evaluate_counts(raw, labels, merge_mode=merge_mode)
