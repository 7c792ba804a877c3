import json
import multiprocessing as mp
import re

import pytest

from newsbench.bench import (
    ConfigError,
    RunResult,
    StoreError,
    config_from_dict,
    config_hash,
    load_config,
    persist,
    read_store,
    reference_results,
    render_leaderboard,
    resolve_variants,
    run_experiment,
    verify_dataset,
)
from newsbench.bench.cli import main
from newsbench.bench.leaderboard import LeaderboardError, select_best
from newsbench.green import EmissionRecord, compute_apc, get_intensity, get_profile
from newsbench.synthetic import write_synthetic_mind
from newsbench.zoo import VariantSpec, enumerate_grid

SYNTH = {"n_topics": 3, "articles_per_topic": 12, "n_users": 30, "n_train": 90, "n_dev": 40}


def quick_config(tmp_path, variants, **extra):
    raw = {
        "dataset": {"name": "synthetic", "synthetic": SYNTH},
        "variants": variants,
        "train": {"learning_rate": 5e-3, "max_epochs": 1},
        "seeds": [0],
        "plm": {"d_plm": 32},
        "pretrain": {"plm": {"d_plm": 32}, "epochs": 1, "batch_size": 16},
        "output_dir": str(tmp_path),
    }
    raw.update(extra)
    return config_from_dict(raw)


def fake_result(base="NAML", kind="ID", auc=60.0, co2e=10.0, val=None, dataset="toy", h=None):
    spec = VariantSpec(base, kind)
    rec = EmissionRecord.from_duration("train", co2e / (0.35 * 722), get_profile("rtx3090"),
                                       get_intensity("rtx3090"))
    seed = {"seed": 0, "auc": auc, "mrr": 30.0, "ndcg5": 31.0, "val_auc": auc if val is None else val,
            "emissions": [rec.to_dict()], "encode_stats": {}}
    return RunResult(spec, dataset, h or config_hash({"s": spec.name, "auc": auc, "d": dataset}), [seed])


# -- config ----------------------------------------------------------------------------

def test_minimal_config_gets_defaults(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text("dataset:\n  train_dir: /data/train\n  dev_dir: /data/dev\nvariants: NAML-PREC\n")
    cfg = load_config(path)
    assert cfg.variants == (VariantSpec("NAML", "PREC"),)
    assert cfg.seeds == (0, 1, 2, 3, 4)
    assert cfg.embed_dim == 64
    assert (cfg.train.learning_rate, cfg.train.batch_size) == (1e-4, 64)
    assert (cfg.hardware_profile, cfg.carbon_intensity, cfg.emissions) == ("rtx3090", "rtx3090", "train_only")


def test_json_config_is_accepted(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps({"dataset": {"synthetic": {}}, "variants": ["DIN-ID", "BST-TEXT"]}))
    assert len(load_config(path).variants) == 2


def test_off_grid_learning_rate_warns(caplog):
    cfg = config_from_dict({"dataset": {"synthetic": {}}, "train": {"learning_rate": 3e-4}})
    assert cfg.train.learning_rate == 3e-4
    assert "outside the default grid" in caplog.text


def test_unknown_keys_are_listed():
    with pytest.raises(ConfigError, match="lr_sched"):
        config_from_dict({"dataset": {"synthetic": {}}, "lr_sched": "cosine"})
    with pytest.raises(ConfigError, match="momentum"):
        config_from_dict({"dataset": {"synthetic": {}}, "train": {"momentum": 0.9}})


@pytest.mark.parametrize("raw", [
    {"emissions": "everything"},
    {"hardware_profile": "tpu-v9"},
    {"carbon_intensity": "mars"},
    {"variants": "NAML-GPT"},
    {"variants": []},
    {"seeds": []},
])
def test_invalid_values_rejected(raw):
    with pytest.raises(ConfigError):
        config_from_dict({"dataset": {"synthetic": {}}, **raw})


def test_dataset_paths_required():
    with pytest.raises(ConfigError):
        config_from_dict({"dataset": {"name": "x"}})


def test_env_overrides_paths_only(monkeypatch):
    monkeypatch.setenv("NEWSBENCH_TRAIN_DIR", "/env/train")
    monkeypatch.setenv("NEWSBENCH_DEV_DIR", "/env/dev")
    monkeypatch.setenv("NEWSBENCH_OUTPUT_DIR", "/env/out")
    cfg = config_from_dict({"dataset": {"train_dir": "/a", "dev_dir": "/b"}})
    assert (cfg.dataset.train_dir, cfg.dataset.dev_dir, cfg.output_dir) == ("/env/train", "/env/dev", "/env/out")


def test_full_selector_is_the_grid():
    assert resolve_variants("all") == tuple(enumerate_grid())


def test_spec_hash_is_canonical():
    a = config_from_dict({"dataset": {"synthetic": {"seed": 1, "n_users": 5}}, "seeds": [0]})
    b = config_from_dict({"seeds": [0], "dataset": {"synthetic": {"n_users": 5, "seed": 1}}})
    spec = VariantSpec("NAML", "ID")
    assert a.spec_hash(spec) == b.spec_hash(spec)
    c = config_from_dict({"dataset": {"synthetic": {"seed": 2, "n_users": 5}}, "seeds": [0]})
    assert a.spec_hash(spec) != c.spec_hash(spec)
    assert a.spec_hash(spec) != a.spec_hash(VariantSpec("NAML", "TEXT"))


# -- store -----------------------------------------------------------------------------

def test_persist_round_trip(tmp_path):
    store = tmp_path / "r.ndjson"
    r = fake_result()
    persist(r, store)
    assert read_store(store) == {r.config_hash: r}


def test_distinct_and_repeated_hashes(tmp_path):
    store = tmp_path / "r.ndjson"
    a, b = fake_result(auc=60.0), fake_result(auc=70.0)
    persist(a, store)
    persist(b, store)
    assert len(read_store(store)) == 2
    newer = fake_result(auc=80.0, h=a.config_hash)
    persist(newer, store)
    got = read_store(store)
    assert len(got) == 2 and got[a.config_hash].mean["auc"] == 80.0


def test_unwritable_store(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(StoreError):
        persist(fake_result(), blocker / "sub" / "r.ndjson")


def test_aggregates_recompute_from_seeds():
    r = fake_result()
    r.per_seed.append({**r.per_seed[0], "seed": 1, "auc": 70.0})
    assert r.mean["auc"] == 65.0 and r.std["auc"] == 5.0
    assert RunResult.from_dict(json.loads(json.dumps(r.to_dict()))).mean == r.mean


def _append_many(args):
    store, k = args
    for i in range(25):
        persist(fake_result(auc=float(k * 100 + i)), store)


def test_concurrent_appenders(tmp_path):
    store = tmp_path / "r.ndjson"
    with mp.get_context("fork").Pool(4) as pool:
        pool.map(_append_many, [(store, k) for k in range(4)])
    lines = store.read_text().splitlines()
    assert len(lines) == 100
    assert all(json.loads(line) for line in lines)


# -- runner ----------------------------------------------------------------------------

def test_full_grid_smoke(tmp_path):
    cfg = quick_config(tmp_path, "all")
    outcome = run_experiment(cfg)
    assert outcome.ok, outcome.summary()
    assert len(outcome.results) == 30
    assert outcome.tables_built == 2
    stored = read_store(cfg.store_path)
    assert len(stored) == 30
    for r in stored.values():
        enc = r.per_seed[0]["encode_stats"]["total_content_encodes"]
        assert (enc == 0) == r.spec.is_oleo
        if r.spec.variant_kind == "PREC":
            assert {e.phase for e in r.shared_emissions} == {"pretrain", "encode_once"}
        if r.spec.variant_kind == "BERT_OLEO":
            assert {e.phase for e in r.shared_emissions} == {"encode_once"}
    again = run_experiment(cfg)
    assert (len(again.results), len(again.skipped)) == (0, 30)


def test_interrupted_grid_resumes(tmp_path):
    variants = [f"{b}-ID" for b in ("NAML", "LSTUR", "NRMS", "BST", "DCN", "DIN")] + ["NAML-TEXT", "DCN-TEXT"]
    cfg = quick_config(tmp_path, variants)
    seen = []

    def stop_after_seven(result):
        seen.append(result)
        if len(seen) == 7:
            raise KeyboardInterrupt

    with pytest.raises(KeyboardInterrupt):
        run_experiment(cfg, on_result=stop_after_seven)
    assert len(read_store(cfg.store_path)) == 7
    resumed = run_experiment(cfg)
    assert len(resumed.skipped) == 7
    assert [r.spec.name for r in resumed.results] == ["DCN-TEXT"]
    assert len(read_store(cfg.store_path)) == 8


def test_failing_spec_does_not_stop_the_grid(tmp_path, monkeypatch):
    import newsbench.bench.runner as runner

    real = runner.run_seeds

    def sometimes(spec, *a, **kw):
        if spec.name == "NRMS-ID":
            raise RuntimeError("diverged")
        return real(spec, *a, **kw)

    monkeypatch.setattr(runner, "run_seeds", sometimes)
    cfg = quick_config(tmp_path, ["NAML-ID", "NRMS-ID", "DIN-ID"])
    outcome = run_experiment(cfg)
    assert [r.spec.name for r in outcome.results] == ["NAML-ID", "DIN-ID"]
    assert "NRMS-ID" in outcome.failures and not outcome.ok
    assert "FAILED NRMS-ID" in outcome.summary()


# -- leaderboard -----------------------------------------------------------------------

def test_empty_store_is_an_error(tmp_path):
    with pytest.raises(LeaderboardError):
        render_leaderboard(tmp_path / "none.ndjson")


def test_single_result_table(tmp_path):
    store = tmp_path / "r.ndjson"
    persist(fake_result(auc=61.234, co2e=12.0), store)
    text = render_leaderboard(store)
    assert "61.23" in text
    assert "**" not in text and "_61" not in text
    assert "Imp." not in text
    assert "validation AUC" in text


def test_best_bold_second_underlined():
    results = [fake_result(kind="ID", auc=55.0, co2e=20.0), fake_result(kind="TEXT", auc=60.0, co2e=40.0),
               fake_result(kind="PLM_NR", auc=62.0, co2e=200.0)]
    text = render_leaderboard(results=results)
    rows = {tuple(c.strip() for c in line.strip("|").split("|")[:2]): line.strip("|").split("|")[2].strip()
            for line in text.splitlines() if line.startswith("| ") and "Family" not in line}
    assert rows[("PLM-NR", "AUC")] == "**62.00**"
    assert rows[("Text-based", "AUC")] == "_60.00_"
    assert rows[("ID-based", "AUC")] == "55.00"
    assert rows[("ID-based", "CO2E")] == "**20**"
    assert rows[("Text-based", "CO2E")] == "_40_"


def test_ties_share_bold_with_a_note():
    results = [fake_result(kind="BERT_OLEO", auc=60.0, co2e=22.0), fake_result(kind="PREC", auc=62.0, co2e=22.0)]
    text = render_leaderboard(results=results)
    assert text.count("**22**") == 2
    assert "Note: tie for best CO2E in toy/NAML: BERT (OLEO), PREC (OLEO)" in text
    assert text == render_leaderboard(results=list(reversed(results)))


def test_best_of_several_runs_by_validation():
    results = [fake_result(auc=70.0, val=50.0), fake_result(auc=60.0, val=65.0)]
    assert select_best(results)[("toy", "NAML", "ID")].auc == 60.0


def test_total_mode_adds_shared_cost():
    r = fake_result(kind="PREC", co2e=10.0)
    r.shared_emissions = [EmissionRecord("pretrain", 0, 0, 5.0)]
    assert r.co2e("train_only") == pytest.approx(10.0)
    assert r.co2e("total") == pytest.approx(15.0)
    assert select_best([r], "total")[("toy", "NAML", "PREC")].co2e == pytest.approx(15.0)


def _cell_rows(text):
    out = {}
    for line in text.splitlines():
        if line.startswith("| ") and "Family" not in line:
            cells = [c.strip() for c in line.strip().strip("|").split("|")]
            out[(cells[0], cells[1])] = [re.sub(r"[*_%,]", "", c) for c in cells[2:]]
    return out


def test_rendered_numbers_are_faithful():
    results = reference_results()
    rows = _cell_rows(render_leaderboard(results=results))
    cells = select_best(results)
    labels = {"ID": "ID-based", "TEXT": "Text-based", "PLM_NR": "PLM-NR", "BERT_OLEO": "BERT (OLEO)",
              "PREC": "PREC (OLEO)"}
    columns = [(ds, b) for ds in ("MIND-small", "MIND-large") for b in ("NAML", "LSTUR", "NRMS", "BST", "DCN", "DIN")]
    for (ds, base, kind), cell in cells.items():
        j = columns.index((ds, base))
        assert float(rows[(labels[kind], "AUC")][j]) == round(cell.auc, 2)
        assert float(rows[(labels[kind], "ApC")][j]) == round(compute_apc(cell.auc, cell.co2e), 2)
        assert float(rows[(labels[kind], "CO2E")][j]) == round(cell.co2e)


# -- dataset verification --------------------------------------------------------------

def test_verify_synthetic_skips_comparison(tmp_path, capsys):
    train, dev = write_synthetic_mind(tmp_path, seed=0)
    report = verify_dataset(train, dev)
    assert report.passed is None
    assert "comparison skipped" in capsys.readouterr().out


def test_verify_flags_a_wrong_mind_small(tmp_path, capsys):
    train, dev = write_synthetic_mind(tmp_path / "MINDsmall", seed=0)
    report = verify_dataset(train, dev)
    assert report.dataset == "MIND-small" and report.passed is False
    assert "n_news" in report.mismatches
    assert main(["verify", "--train-dir", str(train), "--dev-dir", str(dev)]) == 1


def test_verify_unreadable(tmp_path):
    with pytest.raises(OSError):
        verify_dataset(tmp_path / "nope", tmp_path / "nope")


# -- command line ----------------------------------------------------------------------

def test_cli_pipeline(tmp_path, capsys):
    out = tmp_path / "out"
    common = ["--synthetic", "--output-dir", str(out), "--seeds", "0", "--max-epochs", "1",
              "--learning-rate", "0.005"]
    assert main(["prepare", *common, "--shard-format", "binary"]) == 0
    assert (out / "shards" / "train.matching.bin").exists()
    cfg_path = tmp_path / "exp.yaml"
    cfg_path.write_text("pretrain:\n  epochs: 1\n  plm:\n    d_plm: 32\nplm:\n  d_plm: 32\n")
    assert main(["pretrain", *common, "--config", str(cfg_path), "--out", str(tmp_path / "enc.pt")]) == 0
    assert main(["encode", *common, "--config", str(cfg_path), "--encoder", str(tmp_path / "enc.pt"),
                 "--out", str(tmp_path / "t.nemb")]) == 0
    assert main(["train", *common, "--config", str(cfg_path), "--variants", "DIN-PREC",
                 "--table", str(tmp_path / "t.nemb")]) == 0
    assert main(["grid", *common, "--variants", "NAML-ID", "DCN-TEXT"]) == 0
    assert main(["leaderboard", "--store", str(out / "results.ndjson")]) == 0
    text = capsys.readouterr().out
    assert "synthetic DIN" in text and "synthetic DCN" in text


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["leaderboard", "--store", str(tmp_path / "missing.ndjson")]) == 1
    assert main(["grid", "--synthetic", "--variants", "NAML-NOPE"]) == 1
    assert main(["train", "--synthetic", "--variants", "NAML-ID", "DIN-ID"]) == 2
    assert main(["leaderboard", "--inject-reference-table"]) == 0
    assert "2992%" in capsys.readouterr().out
