"""Synthetic planted-salience corpus generator.

Every utterance is i.i.d. unit Gaussian noise of shape
(n_channels, m, feature_dim).  The class is encoded by adding a fixed
class-specific unit direction, scaled by ``signal_scale``, into one
class-specific channel over one random contiguous time segment.  Channel
attention therefore has to find the right channel and temporal attention
the right segment, which makes both attention directions behaviorally
testable with known ground truth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ctaser.features.manifest import Manifest, ManifestRecord, write_manifest
from ctaser.features.seqf import write_seqf


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 4
    n_channels: int = 8
    feature_dim: int = 16
    len_mean: float = 24.0
    len_std: float = 4.0
    salience_len: int = 8
    signal_scale: float = 3.0
    seed: int = 7
    n_speakers: int = 10
    utterances_per_speaker: int = 50

    def __post_init__(self):
        for name in ("n_classes", "n_channels", "feature_dim", "salience_len", "n_speakers", "utterances_per_speaker"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.len_mean <= self.salience_len:
            raise ValueError("len_mean must exceed salience_len")
        if self.n_speakers % 2 != 0:
            raise ValueError("n_speakers must be even (two speakers per session)")

    @property
    def min_len(self) -> int:
        return self.salience_len + 1

    @property
    def class_names(self):
        return [f"class{k}" for k in range(self.n_classes)]


def class_channel_map(spec: SynthSpec) -> np.ndarray:
    """Deterministic class -> planted-channel assignment (distinct while possible)."""
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(spec.n_channels)
    return np.array([perm[k % spec.n_channels] for k in range(spec.n_classes)])


def generate_synth_corpus(spec: SynthSpec, out_dir) -> tuple[Manifest, dict]:
    """Write feature files + manifest + planted ground truth under ``out_dir``.

    Returns the manifest and the ground-truth dict (class->channel map and
    per-utterance planted channel/segment), which is also saved as
    ``planted.json`` for oracle checks.
    """
    out_dir = Path(out_dir)
    feat_dir = out_dir / "feats"
    feat_dir.mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(spec.seed)
    directions = rng.standard_normal((spec.n_classes, spec.feature_dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    channels = class_channel_map(spec)

    records = []
    planted = {}
    utt = 0
    for s in range(spec.n_speakers):
        speaker = f"spk{s:02d}"
        session = f"ses{s // 2:02d}"
        for j in range(spec.utterances_per_speaker):
            label_idx = j % spec.n_classes
            m = int(round(rng.normal(spec.len_mean, spec.len_std)))
            m = max(spec.min_len, m)
            data = rng.standard_normal((spec.n_channels, m, spec.feature_dim))
            start = int(rng.integers(0, m - spec.salience_len + 1))
            chan = int(channels[label_idx])
            data[chan, start : start + spec.salience_len, :] += spec.signal_scale * directions[label_idx]
            utt_id = f"utt{utt:05d}"
            rel = f"feats/{utt_id}.seqf"
            write_seqf(out_dir / rel, data.astype(np.float32))
            records.append(
                ManifestRecord(
                    utterance_id=utt_id,
                    speaker_id=speaker,
                    session_id=session,
                    label=spec.class_names[label_idx],
                    streams={"embeddings": rel},
                )
            )
            planted[utt_id] = {"channel": chan, "start": start, "len": spec.salience_len}
            utt += 1

    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest_path, records)
    truth = {
        "class_channels": {spec.class_names[k]: int(channels[k]) for k in range(spec.n_classes)},
        "utterances": planted,
    }
    with open(out_dir / "planted.json", "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=1)
    return Manifest(path=manifest_path, records=records), truth


def detect_salient_channel(data: np.ndarray, window: int) -> int:
    """Energy heuristic: channel whose best length-``window`` segment has the
    largest mean-vector energy.

    Independent of any model; used as the recovery oracle for generated
    corpora.
    """
    n_channels, m, _ = data.shape
    window = min(window, m)
    # sliding window mean via cumulative sums, per channel
    csum = np.cumsum(data, axis=1)
    pad = np.zeros((n_channels, 1, data.shape[2]), dtype=csum.dtype)
    csum = np.concatenate([pad, csum], axis=1)
    win_mean = (csum[:, window:] - csum[:, :-window]) / window
    energy = (win_mean**2).sum(axis=2)  # (n_channels, m - window + 1)
    return int(np.argmax(energy.max(axis=1)))
