import json
from dataclasses import replace

import numpy as np
import pytest

from socialseq.cli import main
from socialseq.dataset import Dataset, LayoutManifest, ManifestEntry, load_dataset, save_dataset
from socialseq.model import load_model
from socialseq.splits import load_split_suite


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """One small pipeline shared by the read-only CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    ds = root / "corpus.dat"
    splits = root / "splits.json"
    model = root / "model.bin"
    assert run(["synth", "--out", ds, "--sequences", "54", "--users", "3",
                "--days-per-user", "3", "--min-len", "2", "--max-len", "5",
                "--domain-sep", "2.5", "--relation-sep", "2.5",
                "--noise", "0.4", "--seed", "0"]) == 0
    assert run(["split", "--dataset", ds, "--out", splits,
                "--candidates", "64", "--cv", "2", "--seed", "0"]) == 0
    assert run(["train", "--dataset", ds, "--split", splits, "--out", model,
                "--arch", "mt-td", "--hidden", "12", "--iterations", "6",
                "--seed", "1"]) == 0
    return {"root": root, "dataset": ds, "splits": splits, "model": model}


class TestSynthAndSplit:
    def test_artifacts_exist_and_validate(self, workdir):
        ds = load_dataset(workdir["dataset"])
        assert len(ds.sequences) == 54
        assert ds.meta["toolkit_version"]
        assert ds.meta["config_hash"]
        suite = load_split_suite(workdir["splits"])
        assert len(suite.inner) == 2

    def test_synth_requires_a_target(self, tmp_path, capsys):
        assert run(["synth", "--sequences", "5"]) == 2

    def test_split_rejects_missing_dataset(self, tmp_path):
        assert run(["split", "--dataset", tmp_path / "nope.dat",
                    "--out", tmp_path / "s.json"]) == 1

    def test_split_file_byte_stable(self, workdir, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        for out in (a, b):
            assert run(["split", "--dataset", workdir["dataset"], "--out", out,
                        "--candidates", "32", "--cv", "2", "--seed", "5"]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_artifacts_embed_provenance(self, workdir, tmp_path):
        # config hash + seed + toolkit version in every artifact kind
        ds = load_dataset(workdir["dataset"])
        for key in ("config_hash", "seed", "toolkit_version"):
            assert key in ds.meta
        suite_meta = json.loads(open(workdir["splits"]).read())["meta"]
        for key in ("config_hash", "seed", "toolkit_version"):
            assert key in suite_meta
        _, header = load_model(workdir["model"])
        for key in ("config_hash", "seed", "toolkit_version"):
            assert key in header
        history_meta = json.loads(open(str(workdir["model"]) + ".history.jsonl").readline())
        for key in ("config_hash", "seed", "toolkit_version"):
            assert key in history_meta


class TestTrainEval:
    def test_model_and_history_written(self, workdir):
        model, header = load_model(workdir["model"])
        assert header["config_hash"]
        history_path = str(workdir["model"]) + ".history.jsonl"
        lines = [json.loads(l) for l in open(history_path)]
        assert lines[0]["config"]["arch"] == "mt-td"
        assert len(lines) == 1 + 6

    def test_eval_reproduces_recorded_best_selection(self, workdir, tmp_path, capsys):
        history_path = str(workdir["model"]) + ".history.jsonl"
        meta = json.loads(open(history_path).readline())
        out = tmp_path / "report.json"
        assert run(["eval", "--model", workdir["model"], "--dataset", workdir["dataset"],
                    "--split", workdir["splits"], "--side", "cv-val", "--cv-index", "0",
                    "--mode", "relation-direct", "--out", out]) == 0
        report = json.loads(out.read_text())
        assert report["macro_f1"] == meta["best_selection"]

    def test_eval_modes_on_mt_model(self, workdir, tmp_path):
        for mode in ("relation-direct", "domain-direct", "domain-inferred"):
            out = tmp_path / f"{mode}.json"
            assert run(["eval", "--model", workdir["model"],
                        "--dataset", workdir["dataset"], "--mode", mode,
                        "--out", out]) == 0
            report = json.loads(out.read_text())
            n = 9 if mode == "relation-direct" else 5
            assert len(report["confusion"]) == n

    def test_train_determinism_byte_identical(self, workdir, tmp_path):
        args = ["--dataset", workdir["dataset"], "--split", workdir["splits"],
                "--arch", "st-rel", "--hidden", "8", "--iterations", "4",
                "--seed", "7", "--augment-multiplier", "1"]
        m1, m2 = tmp_path / "m1.bin", tmp_path / "m2.bin"
        assert run(["train", *args, "--out", m1]) == 0
        assert run(["train", *args, "--out", m2]) == 0
        assert m1.read_bytes() == m2.read_bytes()
        h1 = (str(m1) + ".history.jsonl", str(m2) + ".history.jsonl")
        assert open(h1[0], "rb").read() == open(h1[1], "rb").read()

    def test_same_manifest_dataset_accepted(self, workdir, tmp_path):
        other = tmp_path / "other.dat"
        assert run(["synth", "--out", other, "--sequences", "18", "--users", "3",
                    "--days-per-user", "2", "--max-len", "4", "--noise", "2.0",
                    "--seed", "9"]) == 0
        assert run(["eval", "--model", workdir["model"], "--dataset", other]) == 0

    def test_manifest_hash_mismatch_refused(self, workdir, tmp_path):
        ds = load_dataset(workdir["dataset"])
        renamed = LayoutManifest(tuple(
            replace(e, name="acts") if e.name == "activities" else e
            for e in ds.manifest.entries
        ))
        other = tmp_path / "renamed.dat"
        save_dataset(other, Dataset(manifest=renamed, sequences=ds.sequences,
                                    meta=ds.meta))
        assert run(["eval", "--model", workdir["model"], "--dataset", other]) == 2

    def test_cv_index_out_of_range(self, workdir, tmp_path):
        assert run(["train", "--dataset", workdir["dataset"],
                    "--split", workdir["splits"], "--cv-index", "5",
                    "--out", tmp_path / "m.bin"]) == 2


class TestPredict:
    def test_emits_all_probability_groups(self, workdir, tmp_path):
        out = tmp_path / "preds.jsonl"
        assert run(["predict", "--model", workdir["model"],
                    "--dataset", workdir["dataset"], "--out", out]) == 0
        lines = [json.loads(l) for l in open(out)]
        assert len(lines) == 1 + 54
        for row in lines[1:]:
            assert len(row["relation_probs"]) == 9
            assert len(row["domain_probs"]) == 5
            assert len(row["domain_inferred"]) == 5
            assert abs(sum(row["relation_probs"]) - 1.0) < 1e-9
            assert abs(sum(row["domain_inferred"]) - 1.0) < 1e-6
            assert row["relation_pred"]
            assert row["domain_pred"]


class TestAugmentCommand:
    def test_augment_extends_train_side_only(self, workdir, tmp_path):
        out = tmp_path / "augmented.dat"
        assert run(["augment", "--dataset", workdir["dataset"],
                    "--split", workdir["splits"], "--out", out,
                    "--multiplier", "1", "--sigma", "0.01", "--seed", "3"]) == 0
        ds = load_dataset(out)
        suite = load_split_suite(workdir["splits"])
        originals = [s for s in ds.sequences if s.origin is None]
        augmented = [s for s in ds.sequences if s.origin is not None]
        train_keys = set(tuple(k) for k in suite.outer.train_groups)
        assert len(originals) == 54
        assert augmented
        by_id = {s.id: s for s in originals}
        for a in augmented:
            assert a.group_key in train_keys
            src = by_id[a.origin]
            assert a.relation == src.relation
            assert a.frames.shape == src.frames.shape


class TestIngest:
    def test_raw_corpus_round_trip(self, tmp_path, capsys):
        raw = tmp_path / "raw"
        ds_path = tmp_path / "ingested.dat"
        splits_path = tmp_path / "splits.json"
        assert run(["synth", "--raw-dir", raw, "--sequences", "24", "--users", "2",
                    "--days-per-user", "3", "--min-len", "3", "--max-len", "6",
                    "--seed", "4"]) == 0
        assert (raw / "manifest.json").exists()
        assert (raw / "sequences.json").exists()
        assert run(["split", "--sequences", raw / "sequences.json",
                    "--out", splits_path, "--candidates", "64", "--cv", "2",
                    "--seed", "0"]) == 0
        assert run(["ingest", "--raw-dir", raw, "--out", ds_path,
                    "--split", splits_path]) == 0
        captured = capsys.readouterr().out
        assert "total width: 459" in captured
        ds = load_dataset(ds_path)
        assert len(ds.sequences) == 24
        assert all(s.frames.shape[1] == 459 for s in ds.sequences)
        assert (tmp_path / "ingested.dat.pca").exists()

    def test_ingest_bit_stable(self, tmp_path):
        raw = tmp_path / "raw"
        assert run(["synth", "--raw-dir", raw, "--sequences", "12", "--users", "2",
                    "--days-per-user", "2", "--min-len", "5", "--max-len", "7",
                    "--seed", "5"]) == 0
        a, b = tmp_path / "a.dat", tmp_path / "b.dat"
        assert run(["ingest", "--raw-dir", raw, "--out", a]) == 0
        assert run(["ingest", "--raw-dir", raw, "--out", b]) == 0
        assert a.read_bytes() == b.read_bytes()

    def test_inconsistent_label_rejected(self, tmp_path):
        raw = tmp_path / "raw"
        assert run(["synth", "--raw-dir", raw, "--sequences", "10", "--seed", "6",
                    "--min-len", "2", "--max-len", "3"]) == 0
        seq_path = raw / "sequences.json"
        meta = json.loads(seq_path.read_text())
        meta["sequences"][0]["relation"] = "lovers"
        meta["sequences"][0]["domain"] = "attachment"
        seq_path.write_text(json.dumps(meta))
        assert run(["ingest", "--raw-dir", raw, "--out", tmp_path / "x.dat"]) == 2


class TestBenchmarkCommand:
    def test_emits_all_rows(self, tmp_path, capsys):
        ds = tmp_path / "bench.dat"
        splits = tmp_path / "splits.json"
        out = tmp_path / "rows.jsonl"
        assert run(["synth", "--out", ds, "--sequences", "36", "--users", "3",
                    "--days-per-user", "2", "--min-len", "2", "--max-len", "4",
                    "--domain-sep", "2.0", "--relation-sep", "2.0", "--seed", "8"]) == 0
        assert run(["split", "--dataset", ds, "--out", splits,
                    "--candidates", "32", "--cv", "2", "--seed", "1"]) == 0
        assert run(["benchmark", "--dataset", ds, "--split", splits,
                    "--hidden", "8", "--iterations", "2", "--seed", "0",
                    "--out", out]) == 0
        table = capsys.readouterr().out
        for task in ("REL", "DOM", "DOM-INF"):
            for strat in ("ST", "MT-IND", "MT-TD"):
                assert f"{task}-{strat}" in table
        rows = [json.loads(l) for l in open(out)][1:]
        assert len(rows) == 9
        assert all(r["error"] is None for r in rows)

    def test_default_attribute_groups(self, tmp_path, capsys):
        ds = tmp_path / "bench.dat"
        splits = tmp_path / "splits.json"
        assert run(["synth", "--out", ds, "--sequences", "27", "--users", "3",
                    "--days-per-user", "2", "--min-len", "2", "--max-len", "3",
                    "--seed", "10"]) == 0
        assert run(["split", "--dataset", ds, "--out", splits,
                    "--candidates", "32", "--cv", "1", "--seed", "0"]) == 0
        out = tmp_path / "rows.jsonl"
        assert run(["benchmark", "--dataset", ds, "--split", splits,
                    "--hidden", "6", "--iterations", "1", "--seed", "0",
                    "--groups", "default", "--out", out]) == 0
        rows = [json.loads(l) for l in open(out)][1:]
        subsets = {r["subset"] for r in rows}
        assert subsets == {"FACE", "BODY", "CTX", "ALL"}
        assert len(rows) == 9 * 4
        table = capsys.readouterr().out
        assert "REL-MT-TD/FACE" in table


class TestConfigFile:
    def test_config_file_defaults_and_flag_override(self, tmp_path):
        ds = tmp_path / "c.dat"
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"sequences": 18, "seed": 12, "max_len": 4}))
        assert run(["synth", "--config", cfg, "--out", ds, "--seed", "13"]) == 0
        loaded = load_dataset(ds)
        assert len(loaded.sequences) == 18  # from config
        assert loaded.meta["seed"] == 13  # flag wins

    def test_unknown_config_key_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"bogus": 1}))
        assert run(["synth", "--config", cfg, "--out", tmp_path / "x.dat"]) == 2
