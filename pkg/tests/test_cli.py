import json

import pytest

from qalign.cli import main, parse_config_file
from qalign.corpus import load_dataset, save_records
from qalign.errors import InputError, NumericError
from synth import make_records


@pytest.fixture
def dataset(tmp_path):
    records = make_records(12, seed=0, language="hi", context_words=5)
    records += make_records(6, seed=1, language="ta", id_prefix="t", context_words=5)
    path = tmp_path / "data.jsonl"
    save_records(records, path)
    return path, records


class TestSplit:
    def test_happy_path_and_idempotence(self, dataset, tmp_path):
        path, records = dataset
        args = ["split", "--input", str(path), "--test-size", "4", "--val-size", "3",
                "--seed", "0", "--out", str(tmp_path / "splits")]
        assert main(args) == 0
        out = tmp_path / "splits"
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["sizes"] == {"train": 11, "validation": 3, "test": 4}
        first = {name: (out / name).read_bytes()
                 for name in ("train.jsonl", "validation.jsonl", "test.jsonl", "manifest.json")}
        assert main(args) == 0
        for name, blob in first.items():
            assert (out / name).read_bytes() == blob

    def test_missing_input_exit_2(self, tmp_path, capsys):
        code = main(["split", "--input", str(tmp_path / "nope.jsonl"),
                     "--test-size", "1", "--val-size", "1", "--out", str(tmp_path)])
        assert code == 2
        assert "nope.jsonl" in capsys.readouterr().err

    def test_default_sizes_are_100(self):
        from qalign.cli import build_parser

        args = build_parser().parse_args(["split", "--input", "x", "--out", "y"])
        assert args.test_size == 100 and args.val_size == 100 and args.seed == 0


class TestAugment:
    def test_identity_plan_zero_drops(self, dataset, tmp_path):
        path, records = dataset
        plan = {
            "plans": [
                {"source": "hi", "target": "en", "kind": "translation",
                 "chain": [{"adapter": "identity", "source": "hi", "target": "en"}]}
            ]
        }
        plan_path = tmp_path / "plan.json"
        plan_path.write_text(json.dumps(plan))
        out = tmp_path / "aug"
        assert main(["augment", "--input", str(path), "--plan", str(plan_path),
                     "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["totals"]["dropped"] == 0
        assert report["totals"]["attempted"] == 12  # only hi records
        combined = load_dataset(out / "augmented.jsonl")
        assert len(combined) == 18 + 12  # originals + hi variants

    def test_pivot_plan_with_shift_adapters(self, dataset, tmp_path):
        path, _ = dataset
        plan = {
            "plans": [
                {"source": "hi", "target": "bn", "kind": "translation",
                 "chain": [
                     {"adapter": "shift", "offset": 64, "source": "hi", "target": "en"},
                     {"adapter": "shift", "offset": 64, "source": "en", "target": "bn"},
                 ]},
                {"source": "hi", "target": "mr", "kind": "transliteration",
                 "chain": [{"adapter": "shift", "offset": 128, "source": "hi", "target": "mr"}]},
            ]
        }
        plan_path = tmp_path / "plan.json"
        plan_path.write_text(json.dumps(plan))
        out = tmp_path / "aug"
        assert main(["augment", "--input", str(path), "--plan", str(plan_path),
                     "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        assert report["cells"]["bn/translation"]["succeeded"] == 12
        assert report["cells"]["mr/transliteration"]["succeeded"] == 12

    def test_missing_adapter_file_exit_3(self, dataset, tmp_path, capsys):
        path, _ = dataset
        plan = {
            "plans": [
                {"source": "hi", "target": "en", "kind": "translation",
                 "chain": [{"adapter": "file", "source": "hi", "target": "en"}]}
            ]
        }
        plan_path = tmp_path / "plan.json"
        plan_path.write_text(json.dumps(plan))
        code = main(["augment", "--input", str(path), "--plan", str(plan_path),
                     "--adapters", str(tmp_path), "--out", str(tmp_path / "aug")])
        assert code == 3
        assert "hi-en.jsonl" in capsys.readouterr().err

    def test_bad_plan_exit_2(self, dataset, tmp_path):
        path, _ = dataset
        plan_path = tmp_path / "plan.json"
        plan_path.write_text('{"plans": []}')
        assert main(["augment", "--input", str(path), "--plan", str(plan_path),
                     "--out", str(tmp_path / "aug")]) == 2


def write_config(path, **keys):
    lines = ["# test configuration"]
    for key, value in keys.items():
        lines.append(f"{key.replace('__', '.')} = {value}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


TINY_TRAIN = dict(
    features__max_length=24,
    features__doc_stride=4,
    encoder__d_model=8,
    encoder__n_layers=2,
    encoder__n_heads=2,
    encoder__d_ffn=16,
    encoder__max_positions=48,
    encoder__tap_layer=1,
    train__batch_size=4,
    train__max_steps=6,
    train__learning_rate=0.001,
    train__contrastive_interval=3,
    train__max_contrastive_steps=6,
    train__eval_interval=3,
    vocab__size=120,
)


class TestTraining:
    def test_pretrain_then_finetune_then_evaluate(self, dataset, tmp_path):
        path, records = dataset
        cfg_path = tmp_path / "run.cfg"
        write_config(cfg_path, data__train=path, data__validation=path, **TINY_TRAIN)

        s2 = tmp_path / "stage2"
        assert main(["pretrain", "--config", str(cfg_path), "--out", str(s2)]) == 0
        run = json.loads((s2 / "run.json").read_text())
        assert run["best_step"] >= 1
        assert (s2 / "vocab.txt").is_file()
        assert (s2 / "eval_curve.csv").is_file()

        s3 = tmp_path / "stage3"
        assert main(["finetune", "--config", str(cfg_path), "--out", str(s3),
                     "--set", f"init.checkpoint={run['best_checkpoint']}",
                     "--set", f"vocab.path={s2 / 'vocab.txt'}"]) == 0
        run3 = json.loads((s3 / "run.json").read_text())

        report_path = tmp_path / "report.json"
        assert main(["evaluate", "--checkpoint", run3["best_checkpoint"],
                     "--vocab", str(s3 / "vocab.txt"), "--input", str(path),
                     "--out", str(report_path),
                     "--per-record", str(tmp_path / "per_record.csv"),
                     "--set", "features.max_length=24", "--set", "features.doc_stride=4"]) == 0
        report = json.loads(report_path.read_text())
        assert "overall" in report and "per_language" in report
        assert set(report["per_language"]) == {"hi", "ta"}
        assert (tmp_path / "per_record.csv").read_text().startswith("id,language,gold,pred")

    def test_w_zero_matches_contrastive_off_column(self, dataset, tmp_path):
        path, _ = dataset
        cfg_path = tmp_path / "run.cfg"
        write_config(cfg_path, data__train=path, **TINY_TRAIN)
        out = tmp_path / "w0"
        assert main(["finetune", "--config", str(cfg_path), "--out", str(out),
                     "--set", "train.w_contrastive=0"]) == 0
        log = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
        assert all(e["l_total"] == e["l_task"] for e in log)

    def test_resume_round_trip(self, dataset, tmp_path):
        path, _ = dataset
        cfg_path = tmp_path / "run.cfg"
        write_config(cfg_path, data__train=path, data__validation=path, **TINY_TRAIN)
        out = tmp_path / "resumable"
        assert main(["finetune", "--config", str(cfg_path), "--out", str(out),
                     "--set", "train.max_steps=3"]) == 0
        assert main(["finetune", "--config", str(cfg_path), "--out", str(out),
                     "--resume"]) == 0
        log = [json.loads(l) for l in (out / "train_log.jsonl").read_text().splitlines()]
        assert [e["step"] for e in log] == list(range(1, 7))

    def test_missing_train_path_exit_2(self, tmp_path):
        cfg_path = tmp_path / "run.cfg"
        write_config(cfg_path, **TINY_TRAIN)
        assert main(["pretrain", "--config", str(cfg_path), "--out", str(tmp_path)]) == 2

    def test_numeric_failure_exit_4(self, dataset, tmp_path, monkeypatch, capsys):
        path, _ = dataset
        cfg_path = tmp_path / "run.cfg"
        write_config(cfg_path, data__train=path, **TINY_TRAIN)

        import qalign.cli as cli_module

        def boom(*args, **kwargs):
            raise NumericError("non-finite gradient in tensor 'qa.weight'")

        monkeypatch.setattr(cli_module, "train", boom)
        code = main(["finetune", "--config", str(cfg_path), "--out", str(tmp_path / "x")])
        assert code == 4
        assert "qa.weight" in capsys.readouterr().err


class TestEvaluateCommand:
    def test_nonexistent_checkpoint_exit_2(self, dataset, tmp_path):
        path, _ = dataset
        assert main(["evaluate", "--checkpoint", str(tmp_path / "nope"),
                     "--vocab", str(tmp_path / "v.txt"), "--input", str(path),
                     "--out", str(tmp_path / "r.json")]) == 2


class TestInspect:
    def test_dataset_histogram(self, dataset, capsys):
        path, _ = dataset
        assert main(["inspect", "--input", str(path)]) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["records"] == 18
        assert out["languages"] == {"hi": 12, "ta": 6}

    def test_no_target_exit_2(self):
        assert main(["inspect"]) == 2


class TestConfigFile:
    def test_comments_and_spacing(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("# comment\ntrain.seed = 5  # trailing\n\nencoder.d_model=32\n")
        parsed = parse_config_file(cfg)
        assert parsed == {"train.seed": "5", "encoder.d_model": "32"}

    def test_unknown_key_rejected(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("train.sede = 5\n")
        with pytest.raises(InputError, match="sede"):
            parse_config_file(cfg)

    def test_malformed_line_rejected(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("just some words\n")
        with pytest.raises(InputError, match="key = value"):
            parse_config_file(cfg)

    def test_override_wins(self, dataset, tmp_path, capsys):
        path, _ = dataset
        cfg_path = tmp_path / "run.cfg"
        write_config(cfg_path, data__train=path, **TINY_TRAIN)
        out = tmp_path / "o"
        assert main(["pretrain", "--config", str(cfg_path), "--out", str(out),
                     "--set", "train.max_steps=2", "--set", "train.eval_interval=2",
                     "--set", "train.contrastive_interval=2"]) == 0
        log = (out / "train_log.jsonl").read_text().splitlines()
        assert len(log) == 2

    def test_bad_override_exit_2(self, dataset, tmp_path):
        path, _ = dataset
        cfg_path = tmp_path / "run.cfg"
        write_config(cfg_path, data__train=path, **TINY_TRAIN)
        assert main(["pretrain", "--config", str(cfg_path), "--out", str(tmp_path),
                     "--set", "train.max_steps"]) == 2
