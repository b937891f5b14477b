import json

import pytest

from rebus import corpus, seqmine
from rebus.bundle import load_bundle
from rebus.cli import main
from rebus.synthetic import planted_chains, to_events


@pytest.fixture(scope="module")
def event_file(tmp_path_factory):
    d, _ = planted_chains(num_users=150, seed=3)
    path = tmp_path_factory.mktemp("events") / "events.tsv"
    with open(path, "w") as fh:
        fh.write("user\titem\ttimestamp\n")
        for e in to_events(d):
            fh.write(f"{e.user_key}\t{e.item_key}\t{e.timestamp}\n")
    return path


@pytest.fixture(scope="module")
def prepared(event_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["prepare", str(event_file), "--out", str(out)]) == 0
    return out


def test_prepare_outputs(prepared):
    assert (prepared / "dataset.rebusdata").exists()
    assert (prepared / "dataset.json").exists()
    manifest = json.loads((prepared / "split.json").read_text())
    d = corpus.load_dataset(prepared / "dataset.rebusdata")
    assert manifest["num_users"] == d.num_users == 150
    assert manifest["dataset_sha256"] == corpus.dataset_hash(d)
    run = json.loads((prepared / "run.json").read_text())
    assert run["command"] == "prepare"


def test_prepare_recent_and_cold_start(event_file, tmp_path):
    assert main(["prepare", str(event_file), "--out", str(tmp_path / "r"), "--recent", "5"]) == 0
    d = corpus.load_dataset(tmp_path / "r" / "dataset.rebusdata")
    assert max(len(s) for s in d.sequences) == 5
    assert main(["prepare", str(event_file), "--out", str(tmp_path / "c"), "--cold-start"]) == 0
    assert (tmp_path / "c" / "split.json").exists()


def test_mine_running_example(tmp_path):
    # the three running-example sequences, each padded with two extra items to survive splitting
    seqs = [[1, 2, 3, 2, 2, 4, 5, 8, 9], [4, 5, 1, 8, 9], [2, 4, 5, 8, 9]]
    d = corpus.Dataset.from_sequences(seqs, 10)
    corpus.save_dataset(d, tmp_path / "toy.rebusdata")
    out = tmp_path / "pats" / "patterns.tsv"
    assert main(["mine", str(tmp_path / "toy.rebusdata"), "--min-count", "2", "--max-size", "2",
                 "--out", str(out)]) == 0
    f = seqmine.load_patterns(out.read_text())
    assert (d.item_keys.index("4"), d.item_keys.index("5")) in f


def test_train_evaluate_recommend(prepared, tmp_path, capsys):
    run = tmp_path / "run"
    assert main(["train", str(prepared), "--out", str(run), "--max-epochs", "2", "--seed", "4"]) == 0
    b = load_bundle(run / "model.rebusmodel")
    assert b.params.num_items == 30 and b.patterns is not None
    assert json.loads((run / "run.json").read_text())["seed"] == 4
    assert (run / "train_log.csv").read_text().count("\n") == 3
    out = tmp_path / "eval"
    assert main(["evaluate", str(prepared), "--model", str(run / "model.rebusmodel"),
                 "--pattern-stats", "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert rep["num_users"] == 150 and 0 <= rep["auc"] <= 1
    assert (out / "pattern_stats.csv").read_text().startswith("dataset,A,B,C,D,E,F,G")
    assert len((out / "top_items.tsv").read_text().splitlines()) == 150
    capsys.readouterr()
    assert main(["recommend", str(run / "model.rebusmodel"), "--history", "0,1,2", "-n", "4"]) == 0
    recs = capsys.readouterr().out.split()
    assert len(recs) == 4 and not {"0", "1", "2"} & set(recs)
    hist = tmp_path / "hist.txt"
    key = corpus.load_dataset(prepared / "dataset.rebusdata").item_keys[0]
    hist.write_text(f"{key}\n")
    assert main(["recommend", str(run / "model.rebusmodel"), "--history-file", str(hist),
                 "--dataset", str(prepared), "-n", "3"]) == 0


def test_pop_baseline_evaluation(prepared, tmp_path):
    assert main(["evaluate", str(prepared), "--baseline", "pop", "--on", "valid", "--out", str(tmp_path)]) == 0
    assert "AUC" in (tmp_path / "report.csv").read_text()


def test_config_precedence(prepared, tmp_path):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text("[hyper]\nk = 4\nalpha = 0.5\n[train]\nmax_epochs = 1\nbatch_size = 64\n")
    out = tmp_path / "run"
    assert main(["train", str(prepared), "--config", str(cfg), "--k", "6", "--out", str(out)]) == 0
    run = json.loads((out / "run.json").read_text())
    assert run["hyper"]["k"] == 6 and run["hyper"]["alpha"] == 0.5
    assert run["train"]["batch_size"] == 64 and run["train"]["learning_rate"] == 0.001
    js = tmp_path / "cfg.json"
    js.write_text(json.dumps({"max_epochs": 1, "mode": "st"}))
    assert main(["train", str(prepared), "--config", str(js), "--out", str(out)]) == 0
    assert json.loads((out / "run.json").read_text())["hyper"]["mode"] == "st"


def test_mc_order_training_stores_no_patterns(prepared, tmp_path):
    assert main(["train", str(prepared), "--mc-order", "2", "--max-epochs", "1", "--out", str(tmp_path)]) == 0
    assert load_bundle(tmp_path / "model.rebusmodel").patterns is None


def test_invalid_input_exit_codes(tmp_path, prepared, capsys):
    empty = tmp_path / "empty.tsv"
    empty.write_text("a\tx\t1\n")
    assert main(["prepare", str(empty), "--out", str(tmp_path / "o")]) == 2
    assert "no qualifying users" in capsys.readouterr().err
    bad = tmp_path / "bad.tsv"
    bad.write_text("a\tx\t1\nb\n")
    assert main(["prepare", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "line 2" in capsys.readouterr().err
    assert main(["prepare", str(tmp_path / "missing.tsv")]) == 2
    assert main(["train", str(prepared), "--alpha", "2", "--out", str(tmp_path / "t")]) == 2
    cfg = tmp_path / "c.json"
    cfg.write_text('{"nonsense": 1}')
    assert main(["train", str(prepared), "--config", str(cfg), "--out", str(tmp_path / "t")]) == 2
    assert main(["evaluate", str(prepared), "--out", str(tmp_path / "e")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2
