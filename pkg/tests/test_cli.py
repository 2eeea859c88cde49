import json

import pytest

from mder.cli import build_parser, main
from mder.corpus import (
    builtin_grammar,
    generate_synthetic,
    load_corpus,
    write_corpus,
)

from util import tiny_grammar

TINY_CONFIG = {
    "model": {"d_r": 4, "d_c": 12, "d_h": 12, "k": 4, "d_q": 8, "m_max": 80},
    "train": {"batch_size": 8, "learning_rate": 0.01, "dropout": 0.0,
              "max_epochs": 4, "patience": 4},
}


@pytest.fixture
def workdir(tmp_path):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps(TINY_CONFIG))
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


class TestHelp:
    def test_every_documented_flag_appears(self, capsys):
        parser = build_parser()
        helps = [parser.format_help()]
        for action in parser._subparsers._group_actions:
            helps.extend(p.format_help() for p in action.choices.values())
        blob = "\n".join(helps)
        for flag in (
            "--config", "--seed", "--lexicon-dir", "--ablation", "--multiplier",
            "--repeats", "--min-edge-weight", "--top-k", "--alias-file",
            "--exclude-file",
        ):
            assert flag in blob, flag

    def test_unknown_flag_exits_nonzero(self, capsys):
        assert run("synth", "--does-not-exist") != 0


class TestCorpusCommands:
    def test_prepare(self, workdir, capsys):
        src = workdir / "raw.txt"
        src.write_text("One sentence. Two sentences.\n\nThird here.")
        out = workdir / "prep.jsonl"
        assert run("prepare", src, "--out", out) == 0
        corpus = load_corpus(out)
        assert [s.text for s in corpus] == [
            "One sentence.",
            "Two sentences.",
            "Third here.",
        ]
        assert (workdir / "prep.jsonl.run.json").exists()

    def test_synth_split_mix(self, workdir):
        synth = workdir / "synth.jsonl"
        assert run("synth", "--n", 40, "--seed", 3, "--out", synth) == 0
        assert len(load_corpus(synth)) == 40

        assert run("split", synth, "--out-dir", workdir / "folds", "--seed", 1) == 0
        train_fold = load_corpus(workdir / "folds" / "synth-train.jsonl")
        val_fold = load_corpus(workdir / "folds" / "synth-val.jsonl")
        test_fold = load_corpus(workdir / "folds" / "synth-test.jsonl")
        assert (len(train_fold), len(val_fold), len(test_fold)) == (28, 4, 8)

        other = workdir / "other.jsonl"
        write_corpus(generate_synthetic(builtin_grammar("cv"), 30, 0, "cv"), other)
        mixed = workdir / "mixed.jsonl"
        assert run("mix", synth, other, "--per-area", 20, "--seed", 0,
                   "--out", mixed) == 0
        assert len(load_corpus(mixed)) == 40

    def test_synth_with_grammar_file(self, workdir):
        grammar_path = workdir / "grammar.json"
        grammar_path.write_text(json.dumps(tiny_grammar().to_dict()))
        out = workdir / "g.jsonl"
        assert run("synth", "--grammar", grammar_path, "--n", 10, "--out", out) == 0
        assert len(load_corpus(out)) == 10

    def test_augment_cli(self, workdir):
        src = workdir / "src.jsonl"
        write_corpus(generate_synthetic(tiny_grammar(), 20, 1, "a"), src)
        out = workdir / "big.jsonl"
        assert run("augment", src, out, "--multiplier", 2, "--seed", 5) == 0
        assert len(load_corpus(out)) == 40

    def test_data_dir_env(self, workdir, monkeypatch):
        monkeypatch.setenv("MDER_DATA_DIR", str(workdir))
        assert run("synth", "--n", 5, "--out", "envtest.jsonl") == 0
        assert (workdir / "envtest.jsonl").exists()


class TestPipeline:
    @pytest.fixture
    def folds(self, workdir):
        corpus = generate_synthetic(tiny_grammar(), 60, seed=4, name="pipe")
        paths = {}
        for name, lo, hi in (("train", 0, 44), ("val", 44, 52), ("test", 52, 60)):
            p = workdir / f"{name}.jsonl"
            from mder.corpus import Corpus

            write_corpus(Corpus(name, corpus.sentences[lo:hi]), p)
            paths[name] = p
        return paths

    def test_train_eval_predict(self, workdir, folds, capsys):
        ckpt = workdir / "model.ckpt"
        rc = run(
            "train", "--train", folds["train"], "--val", folds["val"],
            "--out", ckpt, "--config", workdir / "config.json", "--seed", 0,
        )
        assert rc == 0
        out = capsys.readouterr().out
        first = json.loads(out.splitlines()[0])
        assert {"epoch", "train_loss", "val_f1", "seconds"} <= set(first)
        assert ckpt.exists()
        assert (workdir / "model.ckpt.report.json").exists()

        report_path = workdir / "eval.json"
        rc = run("eval", "--checkpoint", ckpt, "--corpus", folds["test"],
                 "--out", report_path)
        assert rc == 0
        report = json.loads(report_path.read_text())
        assert "f1" in report and "run_config" in report

        pred_path = workdir / "pred.jsonl"
        rc = run("predict", "--checkpoint", ckpt, "--in", folds["test"],
                 "--out", pred_path)
        assert rc == 0
        lines = pred_path.read_text().strip().splitlines()
        assert len(lines) == 8
        for line in lines:
            obj = json.loads(line)
            assert set(obj) == {"text", "entities"}

        agg = workdir / "agg.json"
        assert run("report", report_path, "--out", agg) == 0
        assert json.loads(agg.read_text())["reports"][0]["f1"] == report["f1"]

        agg_csv = workdir / "agg.csv"
        assert run("report", report_path, "--out", agg_csv) == 0
        lines = agg_csv.read_text().strip().splitlines()
        assert lines[0] == "source,precision,recall,f1"
        assert (workdir / "agg.csv.run.json").exists()

    def test_train_with_ablation_and_repeats(self, workdir, folds):
        ckpt = workdir / "ablated.ckpt"
        rc = run(
            "train", "--train", folds["train"], "--val", folds["val"],
            "--test", folds["test"], "--repeats", 2, "--ablation", "cnn", "crf",
            "--out", ckpt, "--config", workdir / "config.json",
        )
        assert rc == 0
        report = json.loads((workdir / "ablated.ckpt.report.json").read_text())
        assert report["test_aggregate"]["runs"] == 2
        assert "f1_of_mean_pr" in report["test_aggregate"]

        from mder.model import load_checkpoint

        model, _, meta = load_checkpoint(ckpt)
        assert meta["ablation"]["use_cnn"] is False
        assert meta["ablation"]["use_crf"] is False

    def test_grid_smoke(self, workdir):
        a = workdir / "a.jsonl"
        b = workdir / "b.jsonl"
        write_corpus(generate_synthetic(builtin_grammar("nlp"), 30, 0, "a"), a)
        write_corpus(generate_synthetic(builtin_grammar("cv"), 30, 1, "b"), b)
        out = workdir / "grid.json"
        rc = run("grid", a, b, "--out", out, "--config", workdir / "config.json")
        assert rc == 0
        report = json.loads(out.read_text())
        assert report["rows"] == ["a", "b"]
        assert len(report["f1"]) == 2
        assert len(report["mean"]) == 2


class TestMine:
    def test_mine_outputs(self, workdir):
        papers = workdir / "papers.jsonl"
        records = [
            {"paper_id": "p1", "year": 2019, "methods": ["SVM", "LSTM", "CNN"],
             "datasets": ["UCI"]},
            {"paper_id": "p2", "year": 2019, "methods": ["SVM", "LSTM"],
             "datasets": ["UCI", "MNIST"]},
            {"paper_id": "p3", "year": 2019, "methods": ["SVM", "LSTM"],
             "datasets": []},
            {"paper_id": "p4", "year": 2009, "methods": ["SVM", "DT"],
             "datasets": ["UCI"]},
        ]
        papers.write_text("\n".join(json.dumps(r) for r in records))
        out_dir = workdir / "mined"
        rc = run("mine", "--papers", papers, "--out-dir", out_dir,
                 "--min-edge-weight", 2, "--top-k", 5)
        assert rc == 0
        graph = json.loads((out_dir / "methods-2019.json").read_text())
        ids = {n["id"] for n in graph["nodes"]}
        assert ids == {"svm", "lstm"}  # weight-3 edge survives the filter
        assert (out_dir / "methods-2019.graphml").exists()
        rankings = (out_dir / "method-centrality.csv").read_text().splitlines()
        assert rankings[0] == "year,rank,entity,score"
        freq = (out_dir / "dataset-frequency.csv").read_text()
        assert "2019,uci,2" in freq

    def test_mine_with_alias_and_exclude(self, workdir):
        papers = workdir / "papers.jsonl"
        papers.write_text(json.dumps(
            {"paper_id": "p", "year": 2019,
             "methods": ["SVMs", "LSTM", "junk"], "datasets": []}
        ))
        alias = workdir / "alias.tsv"
        alias.write_text("SVMs\tsvm\n")
        exclude = workdir / "exclude.txt"
        exclude.write_text("junk\n")
        out_dir = workdir / "mined2"
        rc = run("mine", "--papers", papers, "--out-dir", out_dir,
                 "--alias-file", alias, "--exclude-file", exclude)
        assert rc == 0
        graph = json.loads((out_dir / "methods-2019.json").read_text())
        assert {n["id"] for n in graph["nodes"]} == {"svm", "lstm"}


class TestErrors:
    def test_missing_file_gives_json_error(self, workdir, capsys):
        rc = run("split", workdir / "absent.jsonl", "--out-dir", workdir)
        assert rc == 2
        err = json.loads(capsys.readouterr().err.strip())
        assert err["type"] == "FileNotFoundError"

    def test_bad_ratio_gives_json_error(self, workdir, capsys):
        src = workdir / "c.jsonl"
        write_corpus(generate_synthetic(tiny_grammar(), 10, 0, "c"), src)
        rc = run("split", src, "--ratio", "1:2", "--out-dir", workdir)
        assert rc == 2
        err = json.loads(capsys.readouterr().err.strip())
        assert err["type"] == "ConfigurationError"

    def test_per_area_too_large(self, workdir, capsys):
        src = workdir / "small.jsonl"
        write_corpus(generate_synthetic(tiny_grammar(), 5, 0, "small"), src)
        rc = run("mix", src, "--per-area", 10, "--seed", 0,
                 "--out", workdir / "m.jsonl")
        assert rc == 2
        err = json.loads(capsys.readouterr().err.strip())
        assert err["type"] == "CorpusSizeError"
        assert "small" in err["error"]
