"""Dataset manifest: line-delimited JSON, one record per segment."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .composer import VehicleEvent
from .errors import ValidationError
from .propagation import Direction
from .sources import VehicleClass

MANIFEST_NAME = "manifest.jsonl"
DATASET_INFO_NAME = "dataset.json"


@dataclass(frozen=True)
class SegmentRecord:
    """One manifest line. Paths are relative to the manifest's directory."""

    segment_index: int
    counts: tuple[int, int, int, int]
    events: tuple[dict, ...]
    audio_path: str | None
    feature_path: str | None
    sample_rate: int
    num_channels: int
    duration_s: float
    audio_format: str

    def to_json(self) -> str:
        doc = {
            "segment_index": self.segment_index,
            "counts": list(self.counts),
            "events": [dict(e) for e in self.events],
            "audio_path": self.audio_path,
            "feature_path": self.feature_path,
            "sample_rate": self.sample_rate,
            "num_channels": self.num_channels,
            "duration_s": self.duration_s,
            "audio_format": self.audio_format,
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "SegmentRecord":
        doc = json.loads(line)
        return cls(
            segment_index=int(doc["segment_index"]),
            counts=tuple(int(c) for c in doc["counts"]),
            events=tuple(doc["events"]),
            audio_path=doc["audio_path"],
            feature_path=doc.get("feature_path"),
            sample_rate=int(doc["sample_rate"]),
            num_channels=int(doc["num_channels"]),
            duration_s=float(doc["duration_s"]),
            audio_format=doc.get("audio_format", "float32"),
        )


def event_to_record(event_id: int, event: VehicleEvent) -> dict:
    return {
        "event_id": event_id,
        "class": event.vehicle_class.value,
        "direction": event.direction.value,
        "speed_kmh": round(event.speed_kmh, 6),
        "cpa_time_s": round(event.cpa_time_s, 6),
    }


def event_from_record(doc: dict) -> tuple[int, VehicleEvent]:
    return int(doc["event_id"]), VehicleEvent(
        vehicle_class=VehicleClass(doc["class"]),
        direction=Direction(doc["direction"]),
        speed_kmh=float(doc["speed_kmh"]),
        cpa_time_s=float(doc["cpa_time_s"]),
    )


def write_manifest(path: str | Path, records: list[SegmentRecord]) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
    tmp.replace(path)


def read_manifest(path: str | Path) -> list[SegmentRecord]:
    path = Path(path)
    records = []
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    records.append(SegmentRecord.from_json(line))
                except (KeyError, ValueError, json.JSONDecodeError) as exc:
                    raise ValidationError(f"{path}:{lineno}: bad manifest record: {exc}") from exc
    except OSError as exc:
        raise OSError(f"cannot read manifest {path}: {exc}") from exc
    return records


class ManifestWriter:
    """Append-only writer keeping records in segment-index order."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = open(self.path, "w")
        self._next_index = 0

    def append(self, record: SegmentRecord) -> None:
        if record.segment_index != self._next_index:
            raise ValidationError(
                f"manifest records must be appended in order "
                f"(got {record.segment_index}, expected {self._next_index})"
            )
        self._fh.write(record.to_json() + "\n")
        self._fh.flush()
        self._next_index += 1

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "ManifestWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_dataset_info(directory: str | Path, info: dict) -> None:
    Path(directory, DATASET_INFO_NAME).write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")


def read_dataset_info(directory: str | Path) -> dict:
    return json.loads(Path(directory, DATASET_INFO_NAME).read_text())
