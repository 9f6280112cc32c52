"""Corpus loading and length-bucketed padded batching."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ctaser.features.manifest import load_manifest
from ctaser.features.seqf import read_seqf
from ctaser.tensor import Tensor


class DataError(ValueError):
    """Corpus contents are inconsistent with the requested configuration."""


@dataclass
class LoadedUtterance:
    utterance_id: str
    speaker_id: str
    session_id: str
    label_idx: int
    streams: dict  # stream name -> np.ndarray (embeddings: (N, m, d); others: (m, d))


@dataclass
class Corpus:
    utterances: list
    classes: list
    stream_dims: dict  # stream -> (n_blocks, feature_dim)
    manifest_path: Path

    def __len__(self):
        return len(self.utterances)

    @property
    def speakers(self):
        return sorted({u.speaker_id for u in self.utterances})


def load_corpus(manifest_path, classes, streams, blocks=None) -> Corpus:
    """Read every required stream of every utterance into memory.

    ``blocks`` (1-based) selects a subset of embedding channels.  Any
    utterance missing a required stream, any stream with inconsistent
    feature geometry, and any manifest validation issue is a hard error
    before training starts.
    """
    manifest, report = load_manifest(manifest_path, classes, check_files=False)
    if not report.ok:
        raise DataError(f"manifest invalid:\n{report}")
    class_idx = {c: i for i, c in enumerate(classes)}
    streams = list(streams)

    utterances = []
    dims = {}
    for rec in manifest.records:
        loaded = {}
        for stream in streams:
            if stream not in rec.streams:
                raise DataError(f"utterance {rec.utterance_id!r} has no {stream!r} stream")
            arr = read_seqf(manifest.stream_path(rec, stream))
            if stream == "embeddings":
                if arr.ndim != 3:
                    raise DataError(f"{rec.utterance_id}: embeddings must be 3-D, got {arr.shape}")
                if blocks is not None:
                    if max(blocks) > arr.shape[0]:
                        raise DataError(
                            f"{rec.utterance_id}: block {max(blocks)} requested but file has {arr.shape[0]}"
                        )
                    arr = arr[[b - 1 for b in blocks]]
                geom = (arr.shape[0], arr.shape[2])
            else:
                if arr.ndim != 2:
                    raise DataError(f"{rec.utterance_id}: {stream} must be 2-D, got {arr.shape}")
                geom = (1, arr.shape[1])
            if stream in dims and dims[stream] != geom:
                raise DataError(
                    f"{rec.utterance_id}: {stream} geometry {geom} differs from {dims[stream]}"
                )
            dims[stream] = geom
            loaded[stream] = arr
        utterances.append(
            LoadedUtterance(
                utterance_id=rec.utterance_id,
                speaker_id=rec.speaker_id,
                session_id=rec.session_id,
                label_idx=class_idx[rec.label],
                streams=loaded,
            )
        )
    if not utterances:
        raise DataError(f"{manifest_path}: empty manifest")
    return Corpus(utterances=utterances, classes=list(classes), stream_dims=dims,
                  manifest_path=Path(manifest_path))


@dataclass
class Batch:
    utterance_ids: list
    labels: np.ndarray  # (B,) int
    streams: dict       # name -> (np.ndarray padded, bool mask (B, m))

    def tensors(self, dtype=np.float32) -> dict:
        return {name: (Tensor(data, dtype=dtype), mask) for name, (data, mask) in self.streams.items()}


def _seq_len(utt: LoadedUtterance, stream: str) -> int:
    arr = utt.streams[stream]
    return arr.shape[1] if arr.ndim == 3 else arr.shape[0]


def make_batches(corpus: Corpus, indices, batch_size: int, streams=None) -> list:
    """Group ``indices`` into padded batches of similar primary-stream length."""
    if streams is None:
        streams = sorted(corpus.stream_dims)
    primary = streams[0]
    order = sorted(indices, key=lambda i: (_seq_len(corpus.utterances[i], primary), i))
    batches = []
    for lo in range(0, len(order), batch_size):
        chunk = [corpus.utterances[i] for i in order[lo : lo + batch_size]]
        data = {}
        for stream in streams:
            lens = [_seq_len(u, stream) for u in chunk]
            m = max(lens)
            mask = np.zeros((len(chunk), m), dtype=bool)
            first = chunk[0].streams[stream]
            if first.ndim == 3:
                n, _, d = first.shape
                arr = np.zeros((len(chunk), n, m, d), dtype=np.float32)
                for b, (u, ln) in enumerate(zip(chunk, lens)):
                    arr[b, :, :ln] = u.streams[stream]
                    mask[b, :ln] = True
            else:
                d = first.shape[1]
                arr = np.zeros((len(chunk), m, d), dtype=np.float32)
                for b, (u, ln) in enumerate(zip(chunk, lens)):
                    arr[b, :ln] = u.streams[stream]
                    mask[b, :ln] = True
            data[stream] = (arr, mask)
        batches.append(
            Batch(
                utterance_ids=[u.utterance_id for u in chunk],
                labels=np.array([u.label_idx for u in chunk], dtype=int),
                streams=data,
            )
        )
    return batches
