import math

import numpy as np
import pytest
import torch

import newsbench.training as training
from newsbench.data import NewsArticle
from newsbench.green import EmissionLedger
from newsbench.metrics import MetricReport
from newsbench.synthetic import make_synthetic_corpus
from newsbench.training import (
    AggregateError,
    EpochRecord,
    PretrainConfig,
    RunTrace,
    TrainConfig,
    TrainingError,
    aggregate,
    count_encodes,
    ctr_loss,
    encode_once,
    grid_configs,
    load_checkpoint,
    load_pretrained,
    matching_loss,
    pretrain_content_encoder,
    run_seeds,
    save_pretrained,
    train_end_to_end,
    train_oleo,
)
from newsbench.zoo import PLMConfig, VariantSpec

from conftest import random_table

FAST = TrainConfig(learning_rate=5e-3, batch_size=64, max_epochs=2, patience=2)
TINY_PRETRAIN = PretrainConfig(plm=PLMConfig(d_plm=32), epochs=2, batch_size=16)


def analytic_encodes(impressions, task, k_neg=4, l_max=30):
    """Content encodes one end-to-end epoch must issue: history items plus the candidate group, per sample."""
    total = 0
    for imp in impressions:
        h = min(len(imp.history), l_max)
        if task == "matching":
            total += sum(h + 1 + k_neg for _, lab in imp.candidates if lab == 1)
        else:
            total += sum(h + 1 for _ in imp.candidates)
    return total


def test_default_config_and_grid():
    cfg = TrainConfig()
    assert (cfg.learning_rate, cfg.max_epochs, cfg.patience) == (1e-4, 10, 3)
    assert len(grid_configs()) == 36


def test_off_grid_values_warn(caplog):
    TrainConfig(learning_rate=3e-4)
    assert "outside the default grid" in caplog.text
    with pytest.raises(TrainingError):
        TrainConfig(task="regression")


def test_matching_loss_by_hand():
    logits = torch.tensor([[2.0, 1.0, 0.0], [0.0, 0.0, 0.0]])
    expected = (-math.log(math.exp(2) / (math.exp(2) + math.exp(1) + 1)) + math.log(3)) / 2
    assert matching_loss(logits).item() == pytest.approx(expected, rel=1e-6)


def test_ctr_loss_by_hand():
    logits = torch.tensor([[0.0], [2.0]])
    labels = torch.tensor([[1.0], [0.0]])
    p = 1 / (1 + math.exp(-2))
    expected = (-math.log(0.5) - math.log(1 - p)) / 2
    assert ctr_loss(logits, labels).item() == pytest.approx(expected, rel=1e-6)


def test_count_encodes_hand_example():
    epoch = EpochRecord(1, 0.0, {}, 1000, 100, 500, 100, 1.0, 0.1)
    stats = count_encodes(epoch, 10)
    assert (stats.total_content_encodes, stats.per_article_mean) == (1000, 100.0)
    zero = count_encodes(EpochRecord(1, 0.0, {}, 0, 100, 500, 100, 1.0, 0.1), 10)
    assert (zero.total_content_encodes, zero.per_article_mean) == (0, 0.0)
    with pytest.raises(TrainingError):
        count_encodes(epoch, 0)


@pytest.mark.parametrize("base", ["NRMS", "DIN"])
@pytest.mark.parametrize("kind", ["ID", "TEXT"])
def test_end_to_end_encode_identity(small_bundle, base, kind):
    spec = VariantSpec(base, kind)
    _, trace = train_end_to_end(spec, small_bundle, FAST)
    expected = analytic_encodes(small_bundle.train, spec.task)
    assert [e.total_content_encodes for e in trace.epochs] == [expected] * len(trace.epochs)
    assert count_encodes(trace.epochs[0], len(small_bundle.articles)).per_article_mean >= 1


def test_plm_end_to_end_encode_identity(small_bundle):
    _, trace = train_end_to_end(VariantSpec("NAML", "PLM_NR"), small_bundle,
                                TrainConfig(learning_rate=1e-3, max_epochs=1), plm=PLMConfig(d_plm=32))
    assert trace.epochs[0].total_content_encodes == analytic_encodes(small_bundle.train, "matching")


def test_oleo_issues_no_encodes_and_keeps_table(small_bundle):
    table = random_table(small_bundle)
    before = table.to_bytes()
    model, trace = train_oleo(VariantSpec("DCN", "BERT_OLEO"), table, small_bundle, FAST)
    assert all(e.total_content_encodes == 0 for e in trace.epochs)
    assert all(e.scorer_calls > 0 for e in trace.epochs)
    assert table.to_bytes() == before
    assert model.content.table_bytes() == table.rows_for(small_bundle.news_index, len(small_bundle.news_index)).tobytes()


def test_paradigms_refuse_the_wrong_kind(small_bundle):
    with pytest.raises(TrainingError):
        train_end_to_end(VariantSpec("NAML", "PREC"), small_bundle, FAST)
    with pytest.raises(TrainingError):
        train_oleo(VariantSpec("NAML", "TEXT"), random_table(small_bundle), small_bundle, FAST)


def test_same_seed_same_result(small_bundle):
    spec = VariantSpec("LSTUR", "TEXT")
    m1, t1 = train_end_to_end(spec, small_bundle, FAST)
    m2, t2 = train_end_to_end(spec, small_bundle, FAST)
    assert [e.val for e in t1.epochs] == [e.val for e in t2.epochs]
    for p, q in zip(m1.state_dict().values(), m2.state_dict().values()):
        assert torch.equal(p, q)


def test_early_stopping_restores_best_epoch(small_bundle, monkeypatch, tmp_path):
    scripted = iter([60.0, 70.0, 65.0, 64.0, 90.0])
    snapshots = []

    def fake_eval(model, impressions, batch_size=256, l_max=30):
        snapshots.append({k: v.clone() for k, v in model.state_dict().items()})
        return MetricReport(next(scripted), 0.0, 0.0, 1, 0)

    monkeypatch.setattr(training, "evaluate_model", fake_eval)
    cfg = TrainConfig(learning_rate=5e-3, max_epochs=5, patience=2)
    model, trace = train_end_to_end(VariantSpec("NAML", "ID"), small_bundle, cfg, checkpoint_dir=tmp_path,
                                    config_hash="abc123")
    assert [e.epoch for e in trace.epochs] == [1, 2, 3, 4]
    assert trace.best_epoch == 2
    for k, v in model.state_dict().items():
        assert torch.equal(v, snapshots[1][k])
    ckpt = load_checkpoint(trace.checkpoint)
    assert (ckpt["config_hash"], ckpt["epoch"], ckpt["metrics"]["auc"]) == ("abc123", 2, 70.0)


def test_trace_round_trip(small_bundle):
    _, trace = train_end_to_end(VariantSpec("DCN", "ID"), small_bundle, FAST)
    back = RunTrace.from_ndjson(trace.to_ndjson())
    assert back == trace
    assert [e.epoch for e in trace.epochs] == list(range(1, len(trace.epochs) + 1))
    assert all(v >= 0 for v in trace.phase_seconds.values())


def test_ledger_gets_train_and_evaluate_phases(small_bundle):
    ledger = EmissionLedger()
    train_end_to_end(VariantSpec("NAML", "ID"), small_bundle, FAST, ledger=ledger)
    phases = [r.phase for r in ledger.records]
    assert phases.count("train") == phases.count("evaluate") == 2


# -- pretraining and encode-once ---------------------------------------------------------

@pytest.fixture(scope="module")
def corpus():
    articles, _, _ = make_synthetic_corpus(n_topics=4, articles_per_topic=25, seed=1)
    return articles


@pytest.fixture(scope="module")
def pretrained(corpus):
    ledger = EmissionLedger()
    return pretrain_content_encoder(corpus, TINY_PRETRAIN, ledger), ledger


def test_pretrain_loss_does_not_increase(pretrained):
    encoder, _ = pretrained
    assert len(encoder.losses) == 2
    assert encoder.losses[1] <= encoder.losses[0] * 1.02


def test_pretrain_records_its_phase(pretrained):
    _, ledger = pretrained
    [rec] = ledger.records
    assert rec.phase == "pretrain" and rec.duration_hours > 0


def test_pretrained_encoding_is_deterministic(pretrained, corpus):
    encoder, _ = pretrained
    assert np.array_equal(encoder.encode(corpus[0]), encoder.encode(corpus[0]))


def test_pretrain_rejects_tiny_corpus(corpus):
    with pytest.raises(TrainingError):
        pretrain_content_encoder([], TINY_PRETRAIN)
    with pytest.raises(TrainingError):
        pretrain_content_encoder(corpus[:5], TINY_PRETRAIN)


def test_other_objectives_plug_in(corpus):
    for name in ("mlm", "contrastive"):
        cfg = PretrainConfig(plm=PLMConfig(d_plm=32), epochs=1, batch_size=50, objective=name)
        assert np.isfinite(pretrain_content_encoder(corpus, cfg).losses[0])


def test_encode_once_contract(pretrained, corpus):
    encoder, _ = pretrained
    ten = corpus[:10]
    before = encoder.invocation_counter
    ledger = EmissionLedger()
    table = encode_once(encoder, ten, ledger)
    assert encoder.invocation_counter - before == 10
    assert len(table) == 10 and table.provenance == "pretrained_encoder"
    for art in ten:
        assert np.array_equal(table.lookup(art.news_id), encoder.encode(art))
    assert encode_once(encoder, ten).to_bytes() == table.to_bytes()
    assert [r.phase for r in ledger.records] == ["encode_once"]


def test_encode_once_rejects_duplicates(pretrained, corpus):
    encoder, _ = pretrained
    with pytest.raises(TrainingError):
        encode_once(encoder, [corpus[0], corpus[0]])


def test_pretrained_save_load(pretrained, corpus, tmp_path):
    encoder, _ = pretrained
    back = load_pretrained(save_pretrained(encoder, tmp_path / "enc.pt"))
    assert np.array_equal(back.encode(corpus[3]), encoder.encode(corpus[3]))
    assert back.losses == encoder.losses


# -- seeds -------------------------------------------------------------------------------

def test_run_seeds_aggregates(small_bundle):
    cfg = TrainConfig(learning_rate=5e-3, max_epochs=1)
    agg = run_seeds(VariantSpec("NAML", "ID"), small_bundle, cfg, seeds=[1, 2])
    aucs = [r.test.auc for r in agg.per_seed]
    assert agg.mean["auc"] == pytest.approx(sum(aucs) / 2)
    assert agg.std["auc"] == pytest.approx(abs(aucs[0] - aucs[1]) / 2)
    one = aggregate(agg.spec, agg.per_seed[:1])
    assert one.std["auc"] == 0.0
    assert all(any(e.phase == "evaluate" for e in r.emissions) for r in agg.per_seed)


def test_run_seeds_lists_failed_seeds(small_bundle, monkeypatch):
    real = training.train_variant

    def flaky(spec, data, cfg, *args, **kwargs):
        if cfg.seed in (3, 5):
            raise RuntimeError("boom")
        return real(spec, data, cfg, *args, **kwargs)

    monkeypatch.setattr(training, "train_variant", flaky)
    with pytest.raises(AggregateError) as err:
        run_seeds(VariantSpec("NAML", "ID"), small_bundle, TrainConfig(max_epochs=1), seeds=[3, 4, 5])
    assert sorted(err.value.failed) == [3, 5]
    with pytest.raises(TrainingError):
        run_seeds(VariantSpec("NAML", "ID"), small_bundle, TrainConfig(max_epochs=1), seeds=[])


def test_articles_are_plain_records():
    a = NewsArticle("N1", "c", "s", "t")
    assert a.title_tokens == ()
