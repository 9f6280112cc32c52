"""Command-line interface.

Exit codes: 0 success, 1 check/assertion failure, 2 usage error,
3 IO/format error.  Every command prints its resolved configuration and
seed, and records a provenance manifest of its inputs and outputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from ctaser.bench import bench_attention, format_table
from ctaser.config import MODEL_KINDS, ConfigError, load_config
from ctaser.features.lmfb import AudioFormatError, LmfbConfig, extract_lmfb, load_wav
from ctaser.features.manifest import ManifestError, load_manifest
from ctaser.features.seqf import SeqfFormatError, read_seqf, write_seqf
from ctaser.features.synth import SynthSpec, generate_synth_corpus
from ctaser.gradcheck import DEFAULT_DIMS, parse_dims, run_gradcheck
from ctaser.tensor import MaskError, ShapeError, Tensor, no_grad
from ctaser.trainer.checkpoint import CheckpointError, restore_model
from ctaser.trainer.cv import EvalError, PlanError, cross_eval, run_cv, train_single
from ctaser.trainer.data import DataError
from ctaser.trainer.metrics import MetricError
from ctaser.trainer.optim import TrainingError

USAGE_ERROR = 2
IO_ERROR = 3
CHECK_FAILED = 1

_IO_ERRORS = (SeqfFormatError, AudioFormatError, ManifestError, ConfigError, DataError,
              CheckpointError, FileNotFoundError, IsADirectoryError, NotADirectoryError,
              PermissionError, tomllib.TOMLDecodeError)
_CHECK_ERRORS = (PlanError, TrainingError, EvalError, MetricError, MaskError, ShapeError)


def default_threads() -> int:
    env = os.environ.get("CTASER_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return 1


def write_provenance(path: Path, command: str, args: argparse.Namespace,
                     inputs: dict, outputs: dict, seed) -> None:
    record = {
        "command": command,
        "argv": sys.argv[1:] if sys.argv else [],
        "options": {k: v for k, v in vars(args).items() if k != "func"},
        "seed": seed,
        "inputs": {k: str(v) for k, v in inputs.items()},
        "outputs": {k: str(v) for k, v in outputs.items()},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=1)


def announce(config: dict, seed) -> None:
    print(f"resolved config: {json.dumps(config, sort_keys=True)}")
    print(f"seed: {seed}")


# ----------------------------------------------------------------------
# commands


def cmd_lmfb(args) -> int:
    cfg = LmfbConfig(normalize=args.normalize)
    announce(dataclasses.asdict(cfg), None)
    pcm = load_wav(args.wav, cfg.sample_rate_hz)
    feats = extract_lmfb(pcm, cfg)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_seqf(out, feats.data)
    print(f"wrote {out} with shape {list(feats.shape)}")
    write_provenance(out.with_suffix(out.suffix + ".prov.json"), "lmfb", args,
                     {"wav": args.wav}, {"seqf": out}, None)
    return 0


def cmd_synth(args) -> int:
    raw = tomllib.loads(Path(args.spec).read_text(encoding="utf-8"))
    known = {f.name for f in dataclasses.fields(SynthSpec)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown synth spec keys {unknown}")
    spec = SynthSpec(**raw)
    announce(dataclasses.asdict(spec), spec.seed)
    manifest, _ = generate_synth_corpus(spec, args.out_dir)
    _, report = load_manifest(manifest.path, spec.class_names)
    if not report.ok:
        print(f"generated manifest failed validation:\n{report}", file=sys.stderr)
        return CHECK_FAILED
    print(f"wrote {len(manifest.records)} utterances under {args.out_dir}")
    write_provenance(Path(args.out_dir) / "run_manifest.json", "synth", args,
                     {"spec": args.spec}, {"manifest": manifest.path, "out_dir": args.out_dir},
                     spec.seed)
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    announce(cfg.to_dict(), cfg.train.seed)
    report = train_single(args.manifest, cfg, args.out, val_speaker=args.val_speaker)
    print(f"best epoch {report['best_epoch']}: val loss {report['best_val_loss']:.4f}, "
          f"val UAR {report['best_val_uar']:.4f}")
    write_provenance(Path(args.out) / "run_manifest.json", "train", args,
                     {"config": args.config, "manifest": args.manifest},
                     {"checkpoint": Path(args.out) / "model", "report": Path(args.out) / "report.json"},
                     cfg.train.seed)
    return 0


def cmd_cv(args) -> int:
    cfg = load_config(args.config)
    announce(cfg.to_dict(), cfg.train.seed)
    report = run_cv(args.manifest, cfg, args.out, threads=args.threads)
    for fold in report["folds"]:
        print(f"fold {fold['fold']:2d} test={fold['test_speaker']} "
              f"UAR {fold['uar']:.4f} (best epoch {fold['best_epoch']})")
    print(f"mean UAR {report['mean_uar']:.4f} +- {report['std_uar']:.4f} "
          f"over {report['n_folds']} folds")
    write_provenance(Path(args.out) / "run_manifest.json", "cv", args,
                     {"config": args.config, "manifest": args.manifest},
                     {"report": Path(args.out) / "report.json", "checkpoints": args.out},
                     cfg.train.seed)
    return 0


def cmd_eval(args) -> int:
    report = cross_eval(args.checkpoints, args.manifest, args.out)
    announce({"checkpoints": str(args.checkpoints)}, None)
    for entry in report["models"]:
        print(f"{entry['checkpoint']}: UAR {entry['uar']:.4f}")
    print(f"mean UAR {report['mean_uar']:.4f} +- {report['std_uar']:.4f} "
          f"over {report['n_models']} models")
    write_provenance(Path(args.out) / "run_manifest.json", "eval", args,
                     {"checkpoints": args.checkpoints, "manifest": args.manifest},
                     {"report": Path(args.out) / "report.json"}, None)
    return 0


def cmd_gradcheck(args) -> int:
    try:
        dims = parse_dims(args.dims)
    except ValueError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return USAGE_ERROR
    announce({"model": args.model, "dims": dims, "corrupt_adjoint": args.corrupt_adjoint},
             args.seed)
    err = run_gradcheck(args.model, dims, seed=args.seed, corrupt_adjoint=args.corrupt_adjoint)
    status = "PASS" if err < args.tolerance else "FAIL"
    print(f"{args.model}: max relative gradient error {err:.3e} "
          f"(tolerance {args.tolerance:g}) {status}")
    return 0 if status == "PASS" else CHECK_FAILED


def cmd_attn_dump(args) -> int:
    model, cfg, stream_dims, selection = restore_model(args.checkpoint)
    if cfg.model.model not in ("cta", "cta_nornn"):
        print(f"usage error: checkpoint holds a {cfg.model.model!r} model; "
              f"attention dumps need cta or cta_nornn", file=sys.stderr)
        return USAGE_ERROR
    announce(cfg.to_dict(), cfg.train.seed)
    arr = read_seqf(args.utterance)
    if arr.ndim != 3:
        raise DataError(f"{args.utterance}: expected a (N, m, d) embedding stack, got {arr.shape}")
    if (arr.shape[0], arr.shape[2]) != stream_dims["embeddings"]:
        raise EvalError(f"{args.utterance}: geometry {(arr.shape[0], arr.shape[2])} does not match "
                        f"checkpoint {stream_dims['embeddings']}")
    batch = {"embeddings": (Tensor(arr[None, ...]), np.ones((1, arr.shape[1]), dtype=bool))}
    with no_grad():
        out = model.forward(batch, training=False)
    attn = out.attention
    dump = {
        "utterance": str(args.utterance),
        "model": cfg.model.model,
        "classes": cfg.train.classes,
        "probs": out.probs.data[0].tolist(),
        "n_heads": len(attn.channel_attn),
        "heads": [
            {
                "channel_attn": attn.channel_attn[j].data[0].tolist(),
                "time_attn": attn.time_attn[j].data[0].tolist(),
                "matrix": attn.matrices[j].data[0].tolist(),
            }
            for j in range(len(attn.channel_attn))
        ],
        "pooled": attn.pooled.data[0].tolist(),
    }
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "attn.json", "w", encoding="utf-8") as fh:
        json.dump(dump, fh, indent=1)
    print(f"wrote {out_dir / 'attn.json'} ({dump['n_heads']} heads, "
          f"matrix {len(dump['heads'][0]['matrix'])}x{len(dump['heads'][0]['matrix'][0])})")
    write_provenance(out_dir / "run_manifest.json", "attn-dump", args,
                     {"checkpoint": args.checkpoint, "utterance": args.utterance},
                     {"attn": out_dir / "attn.json"}, cfg.train.seed)
    return 0


def cmd_bench_attn(args) -> int:
    n_list = [int(x) for x in args.n_list.split(",") if x]
    if not n_list:
        print("usage error: --N-list must name at least one channel count", file=sys.stderr)
        return USAGE_ERROR
    announce({"N_list": n_list, "m": args.m, "d": args.d, "heads": args.heads,
              "head_dim": args.head_dim, "batch": args.batch, "reps": args.reps},
             args.seed)
    rows = bench_attention(n_list, m=args.m, d_h=args.d, n_heads=args.heads,
                           d_head=args.head_dim, batch=args.batch, reps=args.reps,
                           seed=args.seed)
    table = format_table(rows)
    print(table, end="")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "bench.tsv").write_text(table, encoding="utf-8")
    write_provenance(out_dir / "run_manifest.json", "bench-attn", args, {},
                     {"table": out_dir / "bench.tsv"}, args.seed)
    return 0


# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ctaser",
        description="Sequence classification with factorized channel/temporal attention",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lmfb", help="extract log mel filterbank features from a WAV file")
    p.add_argument("--wav", required=True)
    p.add_argument("--out", required=True, help="output SEQF path")
    p.add_argument("--normalize", action="store_true", help="per-utterance mean/variance normalization")
    p.set_defaults(func=cmd_lmfb)

    p = sub.add_parser("synth", help="generate a planted-salience synthetic corpus")
    p.add_argument("--spec", required=True, help="TOML file of SynthSpec fields")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model on a manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val-speaker", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("cv", help="leave-one-speaker-out cross-validation")
    p.add_argument("--config", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threads", type=int, default=default_threads())
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("eval", help="evaluate fold checkpoints on another corpus")
    p.add_argument("--checkpoints", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of all model gradients")
    p.add_argument("--model", choices=MODEL_KINDS, default="cta")
    p.add_argument("--dims", default=None,
                   help=f"comma list of k=v overrides for {sorted(DEFAULT_DIMS)}")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--corrupt-adjoint", action="store_true",
                   help="inject a wrong adjoint (negative control; must FAIL)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("attn-dump", help="dump per-head attention for one utterance")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--utterance", required=True, help="SEQF embedding stack file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attn_dump)

    p = sub.add_parser("bench-attn", help="time factorized vs flat attention")
    p.add_argument("--N-list", dest="n_list", default="4,8,16")
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--d", type=int, default=64)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--head-dim", type=int, default=64)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--reps", type=int, default=11)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_attn)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _IO_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return IO_ERROR
    except _CHECK_ERRORS as e:
        print(f"check failed: {e}", file=sys.stderr)
        return CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
