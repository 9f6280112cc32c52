"""Leave-one-speaker-out cross-validation, training loops, cross-corpus eval.

Fold layout: every session holds exactly two speakers.  One fold per
speaker: that speaker is the test set, the partner speaker of the same
session validates, and all other sessions train.  Speaker leakage is
checked at plan time and is a hard error.
"""

from __future__ import annotations

import dataclasses
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ctaser.config import RunConfig, config_from_dict
from ctaser.fusion import WfRnn, build_model
from ctaser.layers import cross_entropy
from ctaser.tensor import no_grad
from ctaser.trainer.checkpoint import restore_model, save_checkpoint
from ctaser.trainer.data import Corpus, load_corpus, make_batches
from ctaser.trainer.metrics import confusion_matrix, uar
from ctaser.trainer.optim import Adam, PlateauScheduler, TrainingError


class PlanError(ValueError):
    """Fold plan cannot be built (layout or speaker-leakage violation)."""


class EvalError(ValueError):
    """Checkpoints and evaluation corpus are incompatible."""


@dataclass(frozen=True)
class Fold:
    index: int
    session: str
    test_speaker: str
    val_speaker: str
    train_speakers: tuple


def build_fold_plan(speaker_sessions) -> list:
    """One fold per speaker from (speaker_id, session_id) pairs."""
    by_speaker = {}
    by_session = {}
    for speaker, session in speaker_sessions:
        by_speaker.setdefault(speaker, set()).add(session)
        by_session.setdefault(session, set()).add(speaker)
    for speaker, sessions in sorted(by_speaker.items()):
        if len(sessions) > 1:
            raise PlanError(f"speaker {speaker!r} appears in multiple sessions {sorted(sessions)}")
    for session, speakers in sorted(by_session.items()):
        if len(speakers) != 2:
            raise PlanError(f"session {session!r} has {len(speakers)} speakers, need exactly 2")
    if len(by_session) < 2:
        raise PlanError(f"need at least 2 sessions, got {len(by_session)}")

    folds = []
    for session in sorted(by_session):
        a, b = sorted(by_session[session])
        train = tuple(s for ses in sorted(by_session) if ses != session for s in sorted(by_session[ses]))
        for test, val in ((a, b), (b, a)):
            fold = Fold(index=len(folds), session=session, test_speaker=test,
                        val_speaker=val, train_speakers=train)
            if set(fold.train_speakers) & {fold.test_speaker, fold.val_speaker}:
                raise PlanError(f"speaker leakage in fold {fold.index}")
            folds.append(fold)
    return folds


def _fold_rngs(seed: int, fold_index: int):
    ss = np.random.SeedSequence([seed, fold_index]).spawn(3)
    return tuple(np.random.default_rng(s) for s in ss)


def evaluate(model, batches, n_classes: int):
    """Mean loss, labels, and argmax predictions over padded batches."""
    total, count = 0.0, 0
    labels, preds = [], []
    with no_grad():
        for batch in batches:
            out = model.forward(batch.tensors(), training=False)
            loss = cross_entropy(out.logits, batch.labels)
            total += loss.item() * len(batch.labels)
            count += len(batch.labels)
            labels.extend(batch.labels.tolist())
            preds.extend(np.argmax(out.probs.data, axis=1).tolist())
    return total / max(count, 1), labels, preds


def train_fold(corpus: Corpus, cfg: RunConfig, fold: Fold):
    """Train one fold to max_epochs; returns (best param snapshot, report)."""
    tc, mc = cfg.train, cfg.model
    n_classes = len(tc.classes)
    init_rng, shuffle_rng, dropout_rng = _fold_rngs(tc.seed, fold.index)

    groups = {"train": [], "val": [], "test": []}
    train_set = set(fold.train_speakers)
    for i, utt in enumerate(corpus.utterances):
        if utt.speaker_id == fold.test_speaker:
            groups["test"].append(i)
        elif utt.speaker_id == fold.val_speaker:
            groups["val"].append(i)
        elif utt.speaker_id in train_set:
            groups["train"].append(i)
        else:
            raise PlanError(f"speaker {utt.speaker_id!r} not covered by fold {fold.index}")
    if fold.val_speaker == fold.test_speaker:
        # degenerate single-split training: the held-out speaker plays both roles
        groups["val"] = list(groups["test"])
    streams = sorted(corpus.stream_dims)
    batches = {k: make_batches(corpus, idx, tc.batch_size, streams) for k, idx in groups.items()}

    model = build_model(mc, corpus.stream_dims, n_classes, init_rng)
    params = model.parameters()
    opt = Adam(params, tc.beta1, tc.beta2, tc.eps)
    sched = PlateauScheduler(tc.lr0, tc.plateau_patience, tc.lr_factor)

    lr = tc.lr0
    best_score, best_snapshot, best_epoch, best_metrics = None, None, 0, {}
    history = []
    for epoch in range(1, tc.max_epochs + 1):
        for bi in shuffle_rng.permutation(len(batches["train"])):
            batch = batches["train"][bi]
            out = model.forward(batch.tensors(), training=True, rng=dropout_rng)
            loss = cross_entropy(out.logits, batch.labels)
            opt.zero_grad()
            loss.backward()
            opt.step(lr)
        val_loss, vl, vp = evaluate(model, batches["val"], n_classes)
        val_uar = uar(vl, vp, n_classes)
        if isinstance(model, WfRnn):
            w = model.block_weights()
            if w.min() < 0 or abs(w.sum() - 1.0) > 1e-5:
                raise TrainingError(f"block weights left the simplex: {w}")
        score = val_loss if tc.select == "loss" else -val_uar
        if best_score is None or score < best_score:
            best_score = score
            best_snapshot = {name: p.data.copy() for name, p in params.items()}
            best_epoch = epoch
            best_metrics = {"val_loss": val_loss, "val_uar": val_uar}
        history.append({"epoch": epoch, "val_loss": val_loss, "val_uar": val_uar, "lr": lr})
        lr = sched.observe(val_loss)

    for name, p in params.items():
        p.data = best_snapshot[name].copy()
    test_loss, tl, tp = evaluate(model, batches["test"], n_classes)
    report = {
        "fold": fold.index,
        "session": fold.session,
        "test_speaker": fold.test_speaker,
        "val_speaker": fold.val_speaker,
        "best_epoch": best_epoch,
        "best_val_loss": best_metrics.get("val_loss"),
        "best_val_uar": best_metrics.get("val_uar"),
        "test_loss": test_loss,
        "uar": uar(tl, tp, n_classes),
        "confusion": confusion_matrix(tl, tp, n_classes).tolist(),
        "history": history,
    }
    return best_snapshot, report


def _cv_fold_job(args):
    manifest_path, raw_cfg, fold, out_dir = args
    cfg = config_from_dict(raw_cfg)
    corpus = load_corpus(manifest_path, cfg.train.classes, cfg.model.streams, cfg.model.blocks)
    snapshot, report = train_fold(corpus, cfg, fold)
    _save_fold_checkpoint(out_dir, cfg, corpus, fold, snapshot, report)
    return report


def _save_fold_checkpoint(out_dir, cfg, corpus, fold, snapshot, report):
    selection = {
        "criterion": cfg.train.select,
        "epoch": report["best_epoch"],
        "val_loss": report["best_val_loss"],
        "val_uar": report["best_val_uar"],
        "fold": fold.index,
        "test_speaker": fold.test_speaker,
        "val_speaker": fold.val_speaker,
    }
    save_checkpoint(Path(out_dir) / f"fold_{fold.index:02d}", snapshot, cfg,
                    corpus.stream_dims, selection)


def run_cv(manifest_path, cfg: RunConfig, out_dir, threads: int = 1) -> dict:
    """Full leave-one-speaker-out CV; writes per-fold checkpoints and report.json."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = load_corpus(manifest_path, cfg.train.classes, cfg.model.streams, cfg.model.blocks)
    folds = build_fold_plan((u.speaker_id, u.session_id) for u in corpus.utterances)

    if threads > 1:
        jobs = [(str(manifest_path), cfg.to_dict(), fold, str(out_dir)) for fold in folds]
        with ProcessPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(_cv_fold_job, jobs))
    else:
        reports = []
        for fold in folds:
            snapshot, report = train_fold(corpus, cfg, fold)
            _save_fold_checkpoint(out_dir, cfg, corpus, fold, snapshot, report)
            reports.append(report)

    uars = [r["uar"] for r in reports]
    report = {
        "kind": "cross_validation",
        "manifest": str(manifest_path),
        "classes": cfg.train.classes,
        "seed": cfg.train.seed,
        "selection": cfg.train.select,
        "absent_class_policy": "classes absent from a fold's test labels are excluded from the UAR mean",
        "n_folds": len(folds),
        "folds": reports,
        "mean_uar": float(np.mean(uars)),
        "std_uar": float(np.std(uars)),
    }
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)
    return report


def list_checkpoints(parent) -> list:
    parent = Path(parent)
    if (parent / "params.json").exists():
        return [parent]
    dirs = sorted(d for d in parent.iterdir() if d.is_dir() and (d / "params.json").exists())
    if not dirs:
        raise EvalError(f"{parent}: no checkpoints found")
    return dirs


def cross_eval(checkpoints_dir, manifest_path, out_dir=None) -> dict:
    """Evaluate every per-fold best model on the whole target corpus."""
    dirs = list_checkpoints(checkpoints_dir)
    results = []
    corpus = None
    for d in dirs:
        model, cfg, stream_dims, selection = restore_model(d)
        if corpus is None:
            target_labels = _manifest_labels(manifest_path)
            if set(cfg.train.classes) != target_labels:
                raise EvalError(
                    f"label sets differ: checkpoints use {sorted(cfg.train.classes)}, "
                    f"corpus has {sorted(target_labels)}"
                )
            corpus = load_corpus(manifest_path, cfg.train.classes, cfg.model.streams, cfg.model.blocks)
            if corpus.stream_dims != stream_dims:
                raise EvalError(
                    f"feature geometry differs: checkpoints expect {stream_dims}, "
                    f"corpus has {corpus.stream_dims}"
                )
            batches = make_batches(corpus, range(len(corpus)), cfg.train.batch_size)
            n_classes = len(cfg.train.classes)
        loss, labels, preds = evaluate(model, batches, n_classes)
        results.append(
            {
                "checkpoint": str(d),
                "selection": selection,
                "loss": loss,
                "uar": uar(labels, preds, n_classes),
                "confusion": confusion_matrix(labels, preds, n_classes).tolist(),
            }
        )
    uars = [r["uar"] for r in results]
    report = {
        "kind": "cross_corpus_eval",
        "manifest": str(manifest_path),
        "n_models": len(results),
        "models": results,
        "mean_uar": float(np.mean(uars)),
        "std_uar": float(np.std(uars)),
    }
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=1)
    return report


def _manifest_labels(manifest_path) -> set:
    labels = set()
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                labels.add(str(json.loads(line).get("label")))
    return labels


def train_single(manifest_path, cfg: RunConfig, out_dir, val_speaker: str | None = None) -> dict:
    """Train one model on the whole corpus (minus an optional held-out
    validation speaker) and checkpoint the best epoch."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = load_corpus(manifest_path, cfg.train.classes, cfg.model.streams, cfg.model.blocks)
    speakers = corpus.speakers
    if val_speaker is None:
        val_speaker = speakers[-1]
    if val_speaker not in speakers:
        raise EvalError(f"validation speaker {val_speaker!r} not in corpus (has {speakers})")
    train_speakers = tuple(s for s in speakers if s != val_speaker)
    if not train_speakers:
        raise EvalError("no speakers left to train on")
    # single split expressed as a degenerate fold: validation doubles as test
    fold = Fold(index=0, session="train", test_speaker=val_speaker,
                val_speaker=val_speaker, train_speakers=train_speakers)
    snapshot, report = train_fold(corpus, cfg, fold)
    selection = {
        "criterion": cfg.train.select,
        "epoch": report["best_epoch"],
        "val_loss": report["best_val_loss"],
        "val_uar": report["best_val_uar"],
        "val_speaker": val_speaker,
    }
    save_checkpoint(out_dir / "model", snapshot, cfg, corpus.stream_dims, selection)
    report = {"kind": "train", "manifest": str(manifest_path), "val_speaker": val_speaker, **report}
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1)
    return report
