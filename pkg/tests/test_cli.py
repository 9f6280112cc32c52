"""End-to-end CLI behavior: flags, exit codes, provenance, output schemas."""

import json

import numpy as np
import pytest

from ctaser.cli import main
from ctaser.features import SynthSpec, generate_synth_corpus, read_seqf, write_wav

TINY_DIMS = "N=2,m=3,d_e=3,hidden=2,heads=1,head_dim=2,classes=2,batch=1"

SPEC_TOML = """\
n_classes = 3
n_channels = 2
feature_dim = 4
len_mean = 10.0
len_std = 2.0
salience_len = 4
signal_scale = 4.0
seed = 5
n_speakers = 4
utterances_per_speaker = 6
"""

CONFIG_TOML = """\
model = "cta"
streams = ["embeddings"]
hidden = 4
layers = 1
dropout = 0.0
heads = 2
head_dim = 4
batch_size = 8
max_epochs = 2
lr0 = 3e-3
plateau_patience = 1
seed = 3
classes = ["class0", "class1", "class2"]
"""


@pytest.fixture()
def corpus_dir(tmp_path):
    spec = SynthSpec(n_classes=3, n_channels=2, feature_dim=4, len_mean=10.0, len_std=2.0,
                     salience_len=4, signal_scale=4.0, seed=5, n_speakers=4,
                     utterances_per_speaker=6)
    generate_synth_corpus(spec, tmp_path / "corpus")
    (tmp_path / "config.toml").write_text(CONFIG_TOML, encoding="utf-8")
    return tmp_path


class TestLmfbCommand:
    def test_wav_to_seqf(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        wav = tmp_path / "a.wav"
        write_wav(wav, rng.uniform(-0.3, 0.3, 16000), 16000)
        out = tmp_path / "a.seqf"
        assert main(["lmfb", "--wav", str(wav), "--out", str(out)]) == 0
        assert read_seqf(out).shape == (98, 80)
        assert (tmp_path / "a.seqf.prov.json").exists()
        printed = capsys.readouterr().out
        assert "resolved config" in printed and "seed" in printed

    def test_wrong_rate_exits_3(self, tmp_path):
        wav = tmp_path / "b.wav"
        write_wav(wav, np.zeros(8000), 8000)
        assert main(["lmfb", "--wav", str(wav), "--out", str(tmp_path / "b.seqf")]) == 3

    def test_silence_is_log_floor(self, tmp_path):
        wav = tmp_path / "c.wav"
        write_wav(wav, np.zeros(4000), 16000)
        out = tmp_path / "c.seqf"
        assert main(["lmfb", "--wav", str(wav), "--out", str(out)]) == 0
        np.testing.assert_allclose(read_seqf(out), np.log(1e-10), rtol=1e-6)

    def test_missing_wav_exits_3(self, tmp_path):
        assert main(["lmfb", "--wav", str(tmp_path / "no.wav"), "--out", str(tmp_path / "x.seqf")]) == 3


class TestSynthCommand:
    def test_deterministic_and_validated(self, tmp_path):
        spec = tmp_path / "spec.toml"
        spec.write_text(SPEC_TOML, encoding="utf-8")
        assert main(["synth", "--spec", str(spec), "--out-dir", str(tmp_path / "a")]) == 0
        assert main(["synth", "--spec", str(spec), "--out-dir", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "manifest.jsonl").read_bytes()
        b = (tmp_path / "b" / "manifest.jsonl").read_bytes()
        assert a == b
        assert (tmp_path / "a" / "run_manifest.json").exists()

    def test_unknown_spec_key_exits_3(self, tmp_path):
        spec = tmp_path / "spec.toml"
        spec.write_text(SPEC_TOML + 'bogus_knob = 3\n', encoding="utf-8")
        assert main(["synth", "--spec", str(spec), "--out-dir", str(tmp_path / "x")]) == 3


class TestCvAndEvalCommands:
    def test_cv_then_eval(self, corpus_dir):
        manifest = corpus_dir / "corpus" / "manifest.jsonl"
        cv_out = corpus_dir / "cv"
        rc = main(["cv", "--config", str(corpus_dir / "config.toml"),
                   "--manifest", str(manifest), "--out", str(cv_out)])
        assert rc == 0
        report = json.loads((cv_out / "report.json").read_text())
        assert report["n_folds"] == 4
        assert (cv_out / "fold_00" / "params.json").exists()
        assert (cv_out / "run_manifest.json").exists()

        ev_out = corpus_dir / "ev"
        rc = main(["eval", "--checkpoints", str(cv_out), "--manifest", str(manifest),
                   "--out", str(ev_out)])
        assert rc == 0
        ev = json.loads((ev_out / "report.json").read_text())
        assert ev["n_models"] == 4

    def test_speaker_leakage_exits_1(self, corpus_dir):
        manifest = corpus_dir / "corpus" / "manifest.jsonl"
        lines = manifest.read_text().strip().split("\n")
        corrupted = []
        for line in lines:
            obj = json.loads(line)
            if obj["speaker_id"] == "spk01":
                obj["session_id"] = "ses01"  # spk01 now spans two sessions
            corrupted.append(json.dumps(obj))
        bad = corpus_dir / "corpus" / "bad.jsonl"
        bad.write_text("\n".join(corrupted) + "\n", encoding="utf-8")
        rc = main(["cv", "--config", str(corpus_dir / "config.toml"),
                   "--manifest", str(bad), "--out", str(corpus_dir / "cvbad")])
        assert rc == 1

    def test_train_command(self, corpus_dir):
        manifest = corpus_dir / "corpus" / "manifest.jsonl"
        rc = main(["train", "--config", str(corpus_dir / "config.toml"),
                   "--manifest", str(manifest), "--out", str(corpus_dir / "t"),
                   "--val-speaker", "spk03"])
        assert rc == 0
        assert (corpus_dir / "t" / "model" / "config.json").exists()


class TestGradcheckCommand:
    def test_passes_and_exits_0(self, capsys):
        assert main(["gradcheck", "--model", "cta_nornn", "--dims", TINY_DIMS, "--seed", "1"]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_corrupted_adjoint_exits_1(self, capsys):
        rc = main(["gradcheck", "--model", "cta_nornn", "--dims", TINY_DIMS,
                   "--seed", "1", "--corrupt-adjoint"])
        assert rc == 1
        assert "FAIL" in capsys.readouterr().out

    def test_bad_dim_key_exits_2(self):
        assert main(["gradcheck", "--model", "cta", "--dims", "nope=3"]) == 2


class TestAttnDumpCommand:
    def test_schema_and_sums(self, corpus_dir):
        manifest = corpus_dir / "corpus" / "manifest.jsonl"
        cv_out = corpus_dir / "cv1"
        assert main(["cv", "--config", str(corpus_dir / "config.toml"),
                     "--manifest", str(manifest), "--out", str(cv_out)]) == 0
        utt = corpus_dir / "corpus" / "feats" / "utt00000.seqf"
        dump_out = corpus_dir / "dump"
        rc = main(["attn-dump", "--checkpoint", str(cv_out / "fold_00"),
                   "--utterance", str(utt), "--out", str(dump_out)])
        assert rc == 0
        dump = json.loads((dump_out / "attn.json").read_text())
        assert set(dump) >= {"utterance", "model", "classes", "probs", "n_heads", "heads", "pooled"}
        for head in dump["heads"]:
            A = np.array(head["matrix"])
            assert abs(A.sum() - 1.0) < 1e-5
            assert abs(sum(head["channel_attn"]) - 1.0) < 1e-5
            assert abs(sum(head["time_attn"]) - 1.0) < 1e-5
            n, m = len(head["channel_attn"]), len(head["time_attn"])
            assert A.shape == (m, n)

    def test_non_cta_checkpoint_exits_2(self, corpus_dir):
        manifest = corpus_dir / "corpus" / "manifest.jsonl"
        cfg = corpus_dir / "rnn.toml"
        cfg.write_text(CONFIG_TOML.replace('model = "cta"', 'model = "rnn"')
                       .replace('streams = ["embeddings"]', 'streams = ["embeddings"]\nblocks = [1]'),
                       encoding="utf-8")
        out = corpus_dir / "t_rnn"
        assert main(["train", "--config", str(cfg), "--manifest", str(manifest),
                     "--out", str(out), "--val-speaker", "spk03"]) == 0
        rc = main(["attn-dump", "--checkpoint", str(out / "model"),
                   "--utterance", str(corpus_dir / "corpus" / "feats" / "utt00000.seqf"),
                   "--out", str(corpus_dir / "dump2")])
        assert rc == 2


class TestBenchCommand:
    def test_table_schema(self, tmp_path):
        rc = main(["bench-attn", "--N-list", "1,2", "--m", "16", "--d", "8",
                   "--heads", "1", "--head-dim", "4", "--batch", "1", "--reps", "2",
                   "--out", str(tmp_path)])
        assert rc == 0
        lines = (tmp_path / "bench.tsv").read_text().strip().split("\n")
        assert lines[0].split("\t") == ["N", "m", "d_h", "heads", "flat_ms", "cta_ms", "ratio"]
        assert len(lines) == 3
        first = lines[1].split("\t")
        assert first[0] == "1" and len(first) == 7
