"""JSON Lines corpus manifests: one utterance per line.

Each line carries ``utterance_id``, ``speaker_id``, ``session_id``,
``label`` and any subset of the stream path keys ``spectrogram``,
``embeddings``, ``text`` (paths relative to the manifest file).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from ctaser.features.seqf import SeqfFormatError, read_seqf_header

STREAM_KEYS = ("spectrogram", "embeddings", "text")
_REQUIRED_KEYS = ("utterance_id", "speaker_id", "session_id", "label")


class ManifestError(ValueError):
    """Structurally unreadable manifest (bad JSON, missing required keys)."""


@dataclass
class ManifestRecord:
    utterance_id: str
    speaker_id: str
    session_id: str
    label: str
    streams: dict  # stream name -> path relative to the manifest
    line_no: int = 0


@dataclass
class ValidationReport:
    issues: list = field(default_factory=list)  # (line_no, message)

    @property
    def ok(self) -> bool:
        return not self.issues

    def add(self, line_no: int, message: str) -> None:
        self.issues.append((line_no, message))

    def __str__(self):
        if self.ok:
            return "manifest valid"
        return "\n".join(f"line {ln}: {msg}" for ln, msg in self.issues)


@dataclass
class Manifest:
    path: Path
    records: list

    @property
    def root(self) -> Path:
        return self.path.parent

    def stream_path(self, record: ManifestRecord, stream: str) -> Path:
        return self.root / record.streams[stream]

    @property
    def speakers(self):
        return sorted({r.speaker_id for r in self.records})

    @property
    def sessions(self):
        return sorted({r.session_id for r in self.records})


def load_manifest(path, classes, check_files: bool = True) -> tuple[Manifest, ValidationReport]:
    """Parse a manifest, validating labels, id uniqueness, and stream files.

    Malformed lines raise :class:`ManifestError` with the line number;
    semantic problems (duplicate ids, unknown labels, missing or unreadable
    files) are collected in the returned :class:`ValidationReport`.
    """
    path = Path(path)
    class_set = set(classes)
    records = []
    report = ValidationReport()
    seen_ids = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"{path}: line {line_no}: malformed JSON ({e.msg})") from e
            if not isinstance(obj, dict):
                raise ManifestError(f"{path}: line {line_no}: expected a JSON object")
            missing = [k for k in _REQUIRED_KEYS if k not in obj]
            if missing:
                raise ManifestError(f"{path}: line {line_no}: missing keys {missing}")
            rec = ManifestRecord(
                utterance_id=str(obj["utterance_id"]),
                speaker_id=str(obj["speaker_id"]),
                session_id=str(obj["session_id"]),
                label=str(obj["label"]),
                streams={k: obj[k] for k in STREAM_KEYS if k in obj},
                line_no=line_no,
            )
            if rec.utterance_id in seen_ids:
                report.add(
                    line_no,
                    f"duplicate utterance_id {rec.utterance_id!r} (first seen on line {seen_ids[rec.utterance_id]})",
                )
            else:
                seen_ids[rec.utterance_id] = line_no
            if rec.label not in class_set:
                report.add(line_no, f"label {rec.label!r} not in configured classes {sorted(class_set)}")
            if check_files:
                for stream, rel in rec.streams.items():
                    fpath = path.parent / rel
                    if not fpath.is_file():
                        report.add(line_no, f"{stream} file not found: {rel}")
                        continue
                    try:
                        read_seqf_header(fpath)
                    except SeqfFormatError as e:
                        report.add(line_no, f"{stream} file unreadable: {e}")
            records.append(rec)
    return Manifest(path=path, records=records), report


def write_manifest(path, records) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = {
                "utterance_id": rec.utterance_id,
                "speaker_id": rec.speaker_id,
                "session_id": rec.session_id,
                "label": rec.label,
            }
            obj.update(rec.streams)
            fh.write(json.dumps(obj, sort_keys=False) + "\n")
