import math

import pytest

from driftlab.agents import init_lm, init_params, train_lm
from driftlab.autodiff import Rng
from driftlab.errors import ContractError, DataError
from driftlab.game import CorpusPair, DistributionSpec, PairKind, make_eval_set, make_game
from driftlab.metrics import (
    CSV_FIELDS,
    MetricsRecord,
    MetricsWriter,
    MovingAverage,
    bleu_corpus,
    eval_pipeline,
    read_metrics_csv,
    real_nll_metric,
    write_metrics_csv,
)
from driftlab.optim import Adam
from driftlab.training import supervised_step

from conftest import TINY_VOCAB


def brute_force_bleu(hyps, refs):
    """Independent corpus BLEU: explicit n-gram lists, add-one for zero counts at n >= 2."""
    hyp_len = sum(len(h) for h in hyps)
    ref_len = sum(len(r) for r in refs)
    max_n = max(1, min(4, min(len(h) for h in hyps)))
    logs = []
    for n in range(1, max_n + 1):
        num = den = 0
        for h, r in zip(hyps, refs):
            h_grams = [tuple(h[i:i + n]) for i in range(len(h) - n + 1)]
            r_grams = [tuple(r[i:i + n]) for i in range(len(r) - n + 1)]
            den += len(h_grams)
            for gram in set(h_grams):
                num += min(h_grams.count(gram), r_grams.count(gram))
        if num == 0:
            if n == 1:
                return 0.0
            num, den = num + 1, den + 1
        logs.append(math.log(num / den))
    bp = 1.0 if hyp_len >= ref_len else math.exp(1 - ref_len / hyp_len)
    return 100 * bp * math.exp(sum(logs) / max_n)


def test_bleu_matches_brute_force_oracle():
    rng = Rng(0)
    for _ in range(50):
        hyps, refs = [], []
        for _ in range(5):
            hyps.append(rng.integers(6, size=int(rng.integers(4, 9))).tolist())
            refs.append(rng.integers(6, size=int(rng.integers(4, 9))).tolist())
        assert bleu_corpus(hyps, refs) == pytest.approx(brute_force_bleu(hyps, refs), abs=1e-12)


def test_bleu_identity_and_disjoint():
    corpus = [[1, 2, 3, 4], [5, 6, 7, 8, 9]]
    assert bleu_corpus(corpus, corpus) == pytest.approx(100.0, abs=1e-12)
    assert bleu_corpus([[1, 2, 3, 4]], [[5, 6, 7, 8]]) == 0.0


def test_bleu_is_order_invariant():
    hyps = [[1, 2, 3, 4], [2, 2, 3, 1], [4, 3, 2, 1, 0]]
    refs = [[1, 2, 3, 5], [2, 3, 3, 1], [4, 3, 2, 0, 1]]
    assert bleu_corpus(hyps, refs) == pytest.approx(bleu_corpus(hyps[::-1], refs[::-1]), abs=1e-12)


def test_bleu_short_hypotheses_cap_the_order():
    assert bleu_corpus([[1]], [[1]]) == pytest.approx(100.0)
    assert bleu_corpus([[1, 2]], [[1, 3]]) > 0


def test_bleu_errors_and_empty_hypotheses():
    with pytest.raises(DataError):
        bleu_corpus([], [])
    with pytest.raises(DataError):
        bleu_corpus([[1]], [[1], [2]])
    assert bleu_corpus([[]], [[1, 2]]) == 0.0


def test_metrics_record_ranges():
    MetricsRecord(step=0, bleu_tgt=0.0, bleu_pvt=100.0, nll=0.0, real_nll=1.0, grad_cos_raw=-1.0)
    with pytest.raises(ContractError):
        MetricsRecord(step=0, bleu_tgt=101.0, bleu_pvt=0.0, nll=0.0, real_nll=0.0)
    with pytest.raises(ContractError):
        MetricsRecord(step=0, bleu_tgt=0.0, bleu_pvt=0.0, nll=-0.1, real_nll=0.0)
    with pytest.raises(ContractError):
        MetricsRecord(step=0, bleu_tgt=0.0, bleu_pvt=0.0, nll=0.0, real_nll=0.0, grad_cos_ma100=1.5)


def test_eval_pipeline_has_no_side_effects(tiny_world):
    _, data, pretrained, _ = tiny_world
    before = (pretrained.sender.content_hash(), pretrained.receiver.content_hash())
    record = eval_pipeline(pretrained.sender, pretrained.receiver, data.eval_set, pretrained.lm)
    assert (pretrained.sender.content_hash(), pretrained.receiver.content_hash()) == before
    assert 0 <= record.bleu_tgt <= 100 and 0 <= record.bleu_pvt <= 100
    assert record.nll >= 0 and record.real_nll >= 0


def test_eval_metrics_do_not_depend_on_batch_size(tiny_world):
    _, data, pretrained, _ = tiny_world
    big = eval_pipeline(pretrained.sender, pretrained.receiver, data.eval_set, pretrained.lm, batch_size=128)
    small = eval_pipeline(pretrained.sender, pretrained.receiver, data.eval_set, pretrained.lm, batch_size=3)
    assert small.nll == pytest.approx(big.nll, abs=1e-9)
    assert small.real_nll == pytest.approx(big.real_nll, abs=1e-9)
    assert small.bleu_pvt == pytest.approx(big.bleu_pvt, abs=1e-12)


def test_real_nll_rejects_empty_set(agents):
    with pytest.raises(DataError):
        real_nll_metric(agents[0], [])


def frozen_lm(vocab, sentences):
    lm = init_lm(0, vocab, hidden=8)
    train_lm(lm, sentences, epochs=0, rng=Rng(0))
    return lm


def test_pipeline_overfit_to_its_eval_set_scores_100(game):
    eval_set = make_eval_set(game, DistributionSpec(length_range=(4, 4)), 4, Rng(0))
    sender = init_params(0, TINY_VOCAB, TINY_VOCAB, hidden=16)
    receiver = init_params(1, TINY_VOCAB, TINY_VOCAB, hidden=16)
    jobs = [
        (sender, [CorpusPair(e.src, e.gold_pvt, PairKind.SRC_PVT) for e in eval_set]),
        (receiver, [CorpusPair(e.gold_pvt, e.gold_tgt, PairKind.PVT_TGT) for e in eval_set]),
    ]
    for params, pairs in jobs:
        opt = Adam(params.parameters(), lr=1e-2)
        for _ in range(500):
            supervised_step(params, pairs, opt)
    record = eval_pipeline(sender, receiver, eval_set, frozen_lm(TINY_VOCAB, [e.gold_pvt for e in eval_set]))
    assert record.bleu_pvt == pytest.approx(100.0)
    assert record.bleu_tgt == pytest.approx(100.0)
    assert record.real_nll < 0.01


def test_untrained_agents_score_near_zero_grounding():
    game = make_game(seed=0, vocab_size=20)
    uniform = DistributionSpec(zipf_exponent=0.0)
    eval_set = make_eval_set(game, uniform, 500, Rng(3))
    sender = init_params(0, 20, 20, hidden=32)
    receiver = init_params(1, 20, 20, hidden=32)
    record = eval_pipeline(sender, receiver, eval_set, frozen_lm(20, [e.gold_pvt for e in eval_set]))
    assert record.bleu_pvt < 5


def test_moving_average_window():
    avg = MovingAverage(window=100)
    avg.add(0, 1.0)
    avg.add(50, 0.0)
    assert avg.average == pytest.approx(0.5)
    avg.add(100, None)
    assert avg.latest is None
    assert avg.average == pytest.approx(0.0)
    assert MovingAverage().average is None


def test_metrics_csv_round_trip_and_schema(tmp_path):
    records = [
        MetricsRecord(step=0, bleu_tgt=10.0, bleu_pvt=90.0, nll=1.5, real_nll=0.25, method="s2p", seed=2),
        MetricsRecord(step=5, bleu_tgt=12.5, bleu_pvt=80.0, nll=1.75, real_nll=0.3, grad_cos_raw=-0.2,
                      grad_cos_ma100=0.1, method="s2p", seed=2),
    ]
    path = tmp_path / "metrics.csv"
    write_metrics_csv(path, records)
    assert path.read_text().splitlines()[0] == ",".join(CSV_FIELDS)
    assert path.read_text().splitlines()[1].endswith(",,")
    assert read_metrics_csv(path) == records

    (tmp_path / "bad.csv").write_text("step,bleu\n0,1\n")
    with pytest.raises(DataError):
        read_metrics_csv(tmp_path / "bad.csv")


def test_metrics_writer_appends_csv_and_jsonl(tmp_path):
    writer = MetricsWriter(tmp_path)
    writer.append(MetricsRecord(step=0, bleu_tgt=1.0, bleu_pvt=2.0, nll=0.5, real_nll=0.5, method="sil"))
    writer.append(MetricsRecord(step=4, bleu_tgt=1.0, bleu_pvt=2.0, nll=0.5, real_nll=0.5, method="sil"))
    assert len(read_metrics_csv(writer.csv_path)) == 2
    assert len(writer.jsonl_path.read_text().splitlines()) == 2
