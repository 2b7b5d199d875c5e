import json

import pytest

from dtrans import checkpoint
from dtrans.attention import ConfigError
from dtrans.cli import build_parser, main, worker_count
from dtrans.config import RunConfig, load_config

TINY = ["--mode", "dtrans", "--layers", "1", "--heads", "2", "--d-model", "16", "--d-ff", "32",
        "--k", "4", "--batch-size", "16", "--max-steps", "30", "--patience", "30",
        "--valid-interval", "10", "--warmup", "10", "--seed", "0"]


def error_line(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    assert main(["synth", "--out", str(root / "data")]) == 0
    assert main(["train", "--data", str(root / "data"), "--out", str(root / "run"), *TINY]) == 0
    return root


class TestAbstract:
    RAW = 'int grade = getGrade(student);\nString s = "hi" + name;\n'

    def test_ids_and_maps(self, tmp_path):
        (tmp_path / "in.txt").write_text(self.RAW)
        assert main(["abstract", "--input", str(tmp_path / "in.txt"), "--out", str(tmp_path / "o.txt")]) == 0
        lines = (tmp_path / "o.txt").read_text().splitlines()
        assert lines[0] == "int VAR_1 = METHOD_1 ( VAR_2 ) ;"
        assert lines[1] == "VAR_1 VAR_2 = STRING_1 + VAR_3 ;"
        maps = [json.loads(l) for l in (tmp_path / "o.txt.map").read_text().splitlines()]
        assert maps[0] == {"VAR_1": "grade", "METHOD_1": "getGrade", "VAR_2": "student"}

    def test_rerun_byte_identical(self, tmp_path):
        (tmp_path / "in.txt").write_text(self.RAW)
        for name in ("a", "b"):
            main(["abstract", "--input", str(tmp_path / "in.txt"), "--out", str(tmp_path / name)])
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
        assert (tmp_path / "a.map").read_bytes() == (tmp_path / "b.map").read_bytes()

    def test_empty_input(self, tmp_path):
        (tmp_path / "in.txt").write_text("")
        assert main(["abstract", "--input", str(tmp_path / "in.txt"), "--out", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o").read_text() == ""

    def test_bad_line_skipped(self, tmp_path, caplog):
        (tmp_path / "in.txt").write_text('x = "open;\ny = 1;\n')
        assert main(["abstract", "--input", str(tmp_path / "in.txt"), "--out", str(tmp_path / "o")]) == 0
        assert (tmp_path / "o").read_text() == "VAR_1 = INT_1 ;\n"
        assert "line 1" in caplog.text

    def test_split_directory(self, tmp_path):
        raw = tmp_path / "raw"
        raw.mkdir()
        (raw / "train.src").write_text("a = b;\n")
        (raw / "train.tgt").write_text("a = c;\n")
        assert main(["abstract", "--input", str(raw), "--out", str(tmp_path / "abs")]) == 0
        assert (tmp_path / "abs" / "train.src").read_text() == "VAR_1 = VAR_2 ;\n"
        assert (tmp_path / "abs" / "train.tgt").read_text() == "VAR_1 = VAR_3 ;\n"


class TestMask:
    def test_prints_matrix(self, capsys, tmp_path):
        assert main(["mask", "a = 0 ; b ;", "--png", str(tmp_path / "m.png")]) == 0
        assert capsys.readouterr().out.splitlines() == ["111100"] * 4 + ["000011"] * 2
        assert (tmp_path / "m.png").stat().st_size > 0

    def test_lex_error(self, capsys):
        assert main(["mask", '"open']) == 2
        assert error_line(capsys)["error"] == "LexError"


class TestConfig:
    def test_precedence(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"layers": 3, "beam": 4, "warmup": 50}))
        cfg = load_config(p, {"layers": 2, "beam": None})
        assert cfg.layers == 2          # flag beats file
        assert cfg.beam == 4            # file beats default
        assert cfg.warmup == 50
        assert cfg.d_model == RunConfig().d_model  # default

    def test_precedence_through_parser(self, tmp_path):
        from dtrans.cli import run_config
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"k": 7, "heads": 4, "seed": 9}))
        args = build_parser().parse_args(["train", "--config", str(p), "--k", "3"])
        cfg = run_config(args)
        assert (cfg.k, cfg.heads, cfg.seed, cfg.layers) == (3, 4, 9, 6)

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"layer": 3}))
        with pytest.raises(ConfigError, match="layer"):
            load_config(p)

    def test_type_checked(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"layers": "3"}))
        with pytest.raises(ConfigError, match="integer"):
            load_config(p)

    def test_invalid_values(self):
        with pytest.raises(ConfigError):
            load_config(None, {"heads": 3})

    def test_error_is_one_json_line(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text("[1, 2]")
        assert main(["train", "--config", str(p)]) == 2
        err = error_line(capsys)
        assert err["error"] == "ConfigError" and "flat JSON" in err["message"]

    def test_threads(self, monkeypatch):
        monkeypatch.setenv("DTRANS_THREADS", "1")
        assert worker_count() == 1


class TestEndToEnd:
    def test_train_outputs(self, trained):
        run = trained / "run"
        for name in ("best.ckpt", "last.ckpt", "vocab.txt", "config.json", "train_log.jsonl",
                     "train_curves.png"):
            assert (run / name).exists(), name
        log = [json.loads(l) for l in (run / "train_log.jsonl").read_text().splitlines()]
        assert [r["step"] for r in log] == list(range(1, 31))

    def test_reproducible(self, trained, tmp_path):
        assert main(["train", "--data", str(trained / "data"), "--out", str(tmp_path), *TINY]) == 0
        for name in ("best.ckpt", "last.ckpt", "train_log.jsonl", "vocab.txt"):
            assert (tmp_path / name).read_bytes() == (trained / "run" / name).read_bytes(), name

    def test_eval(self, trained, capsys):
        out = trained / "eval"
        assert main(["eval", "--data", str(trained / "data"), "--checkpoint",
                     str(trained / "run" / "best.ckpt"), "--beam", "2", "--max-decode-len", "40",
                     "--out", str(out)]) == 0
        rep = json.loads((out / "eval_test.json").read_text())
        assert rep["total"] == 16 and rep["mode"] == "dtrans"
        assert 0.0 <= rep["bleu4"] <= 1.0
        assert (out / "eval_test.png").exists()
        rows = (out / "pred_test.tsv").read_text().splitlines()
        assert rows[0].split("\t") == ["index", "exact_match", "prediction", "gold"] and len(rows) == 17
        assert "Exact Match" in capsys.readouterr().out

    def test_predict_top_b(self, trained, tmp_path):
        src = (trained / "data" / "test.src").read_text().splitlines()[:2]
        (tmp_path / "in.txt").write_text("\n".join(src) + "\n")
        assert main(["predict", "--checkpoint", str(trained / "run" / "best.ckpt"), "--input",
                     str(tmp_path / "in.txt"), "--beam", "3", "--max-decode-len", "30", "--top-b",
                     "--out", str(tmp_path / "p.tsv")]) == 0
        rows = [l.split("\t") for l in (tmp_path / "p.tsv").read_text().splitlines()]
        assert len(rows) == 6 and [r[:2] for r in rows[:3]] == [["0", "0"], ["0", "1"], ["0", "2"]]
        scores = [float(r[2]) for r in rows[:3]]
        assert scores == sorted(scores, reverse=True)

    def test_resume(self, trained, tmp_path):
        args = ["train", "--data", str(trained / "data"), "--out", str(tmp_path), *TINY]
        args[args.index("--max-steps") + 1] = "40"
        args[args.index("--patience") + 1] = "40"
        assert main(args + ["--resume", str(trained / "run" / "last.ckpt")]) == 0
        log = [json.loads(l) for l in (tmp_path / "train_log.jsonl").read_text().splitlines()]
        assert [r["step"] for r in log] == list(range(31, 41))

    def test_mode_conflict(self, trained, tmp_path, capsys):
        (tmp_path / "in.txt").write_text("VAR_1 = VAR_2 ;\n")
        code = main(["predict", "--checkpoint", str(trained / "run" / "best.ckpt"), "--mode", "absolute",
                     "--input", str(tmp_path / "in.txt")])
        assert code == 2
        err = error_line(capsys)
        assert err["error"] == "ConfigError" and "conflicts" in err["message"]

    def test_vocab_mismatch(self, trained, tmp_path, capsys):
        (tmp_path / "v.txt").write_text("<pad>\n<s>\n</s>\n<unk>\nfoo\n")
        code = main(["eval", "--data", str(trained / "data"), "--checkpoint",
                     str(trained / "run" / "best.ckpt"), "--vocab", str(tmp_path / "v.txt")])
        assert code == 2
        assert error_line(capsys)["error"] == "VocabMismatchError"
        from dtrans.cli import VocabMismatchError
        assert issubclass(VocabMismatchError, checkpoint.VersionError)

    def test_missing_checkpoint(self, tmp_path, capsys):
        assert main(["eval", "--data", str(tmp_path), "--checkpoint", str(tmp_path / "nope.ckpt")]) == 2
        assert error_line(capsys)["error"] == "FileNotFoundError"


class TestTools:
    def test_gradcheck(self, capsys, tmp_path):
        assert main(["gradcheck", "--mode", "relative", "--out", str(tmp_path / "g.json")]) == 0
        printed = json.loads(capsys.readouterr().out)
        assert printed["relative"] < 1e-4
        assert "per_param" in json.loads((tmp_path / "g.json").read_text())["relative"]

    def test_bench(self, capsys, tmp_path):
        assert main(["bench-mask", "--n", "16", "32", "--trials", "2", "--out", str(tmp_path)]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0] == "n,trials,naive_median_s,vectorized_median_s,speedup" and len(lines) == 3
        assert (tmp_path / "bench_mask.csv").exists() and (tmp_path / "bench_mask.png").exists()

    def test_synth_deterministic(self, tmp_path):
        main(["synth", "--out", str(tmp_path / "a")])
        main(["synth", "--out", str(tmp_path / "b")])
        for split in ("train", "valid", "test"):
            for ext in ("src", "tgt"):
                a = (tmp_path / "a" / f"{split}.{ext}").read_bytes()
                assert a == (tmp_path / "b" / f"{split}.{ext}").read_bytes()
        assert len((tmp_path / "a" / "train.src").read_text().splitlines()) == 64
