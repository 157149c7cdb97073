import numpy as np
import pytest

from driftlab.agents import batch_nll, greedy_decode, init_params
from driftlab.autodiff import Rng, Tape, backward, no_grad
from driftlab.errors import DataError, ParameterError
from driftlab.game import CorpusPair, PairBatcher, PairKind
from driftlab.training import (
    AgentOptimizers,
    build_teacher_dataset,
    corpus_nll,
    finetune,
    grad_conflict_probe,
    gumbel_run,
    gumbel_step,
    imitate,
    interactive_loss,
    mixdata_run,
    pretrain,
    s2p_run,
    s2p_step,
    sil_run,
    ssil_run,
    supervised_step,
)
from driftlab.optim import Adam

from conftest import TINY_VOCAB, tiny_finetune


def snapshot(*stores):
    return [store.flatten().copy() for store in stores]


def test_interactive_loss_reaches_both_agents(agents, task_pairs):
    sender, receiver = agents
    with Tape():
        loss = interactive_loss(sender, receiver, task_pairs, 0.5, Rng(0))
        backward(loss)
    assert loss.item() >= 0
    assert np.any(sender.flat_grad() != 0)
    assert np.any(receiver.flat_grad() != 0)


def test_s2p_with_zero_alpha_is_a_gumbel_step(tiny_world):
    _, _, pretrained, data = tiny_world
    batches = (data.pretrain_sender_pairs[:4], data.pretrain_receiver_pairs[:4])
    batch = PairBatcher(data.task_pairs).sample(4, Rng(0))
    cfg = tiny_finetune(method="gumbel")

    a = (pretrained.sender.clone(), pretrained.receiver.clone())
    b = (pretrained.sender.clone(), pretrained.receiver.clone())
    gumbel_step(*a, batch, 0.5, Rng(1), AgentOptimizers.fresh(*a, cfg))
    s2p_step(*b, batch, batches, 0.0, 0.5, Rng(1), AgentOptimizers.fresh(*b, cfg))
    for x, y in zip(snapshot(*a), snapshot(*b)):
        assert np.array_equal(x, y)


def test_s2p_loss_decomposes(tiny_world):
    _, _, pretrained, data = tiny_world
    sender, receiver = pretrained.sender.clone(), pretrained.receiver.clone()
    batch = PairBatcher(data.task_pairs).sample(4, Rng(0))
    sup = (PairBatcher(data.pretrain_sender_pairs).sample(4, Rng(1)),
           PairBatcher(data.pretrain_receiver_pairs).sample(4, Rng(2)))
    metrics = s2p_step(sender, receiver, batch, sup, 0.7, 0.5, Rng(3),
                       AgentOptimizers.fresh(sender, receiver, tiny_finetune(method="s2p")))
    assert metrics.total == pytest.approx(metrics.interactive + 0.7 * metrics.supervised, abs=1e-12)
    assert metrics.supervised > 0
    with pytest.raises(ParameterError):
        s2p_step(sender, receiver, batch, sup, -1.0, 0.5, Rng(3),
                 AgentOptimizers.fresh(sender, receiver, tiny_finetune(method="s2p")))


def test_grad_probe_self_mode_is_one(agents, task_pairs):
    sender, receiver = agents
    value = grad_conflict_probe(sender, receiver, task_pairs, [], 0.5, Rng(0), self_probe=True)
    assert value == pytest.approx(1.0, abs=1e-12)


def test_grad_probe_leaves_agents_untouched(tiny_world):
    _, _, pretrained, data = tiny_world
    sender, receiver = pretrained.sender.clone(), pretrained.receiver.clone()
    before = snapshot(sender, receiver)
    task = PairBatcher(data.task_pairs).sample(4, Rng(0))
    pre = PairBatcher(data.pretrain_sender_pairs).sample(4, Rng(1))
    value = grad_conflict_probe(sender, receiver, task, pre, 0.5, Rng(2))
    assert -1.0 <= value <= 1.0
    for x, y in zip(before, snapshot(sender, receiver)):
        assert np.array_equal(x, y)
    assert all(p.grad is None for p in sender.parameters() + receiver.parameters())


def test_pretrain_zero_epochs_leaves_agents_unchanged(agents, task_pairs):
    sender, receiver = agents
    before = snapshot(sender, receiver)
    result = pretrain(sender, receiver, task_pairs, task_pairs, 0, Rng(0))
    assert result.epoch_losses == {"sender": [], "receiver": []}
    for x, y in zip(before, snapshot(sender, receiver)):
        assert np.array_equal(x, y)


def test_pretrain_rejects_empty_corpus(agents, task_pairs):
    with pytest.raises(DataError):
        pretrain(*agents, [], task_pairs, 1, Rng(0))


def test_pretrain_loss_decreases(tiny_world):
    _, _, pretrained, _ = tiny_world
    losses = pretrained.summary["epoch_losses"]["sender"]
    assert losses[-1] < losses[0]


def test_teacher_dataset_is_greedy_teacher_output(tiny_world):
    _, data, pretrained, _ = tiny_world
    sources = data.task_pairs[:10]
    dataset = build_teacher_dataset(pretrained.sender, pretrained.receiver, sources)
    assert len(dataset) == 10
    for sender_pair, receiver_pair in zip(dataset.sender_pairs, dataset.receiver_pairs):
        pvt = tuple(greedy_decode(pretrained.sender, sender_pair.source).tokens[0].tolist())
        assert sender_pair.target == pvt
        assert receiver_pair.source == pvt
        assert receiver_pair.kind is PairKind.PVT_TGT
    gold = build_teacher_dataset(pretrained.sender, pretrained.receiver, sources, receiver_target="gold")
    assert {p.target for p in gold.receiver_pairs} <= {p.target for p in sources}


def test_imitation_lowers_student_nll_on_teacher_data(tiny_world):
    _, data, pretrained, _ = tiny_world
    teacher = pretrained.sender.clone()
    student = pretrained.sender.clone()
    student.unflatten(Rng(0).uniform(-0.08, 0.08, size=student.flatten().size))
    dataset = build_teacher_dataset(teacher, pretrained.receiver, data.task_pairs[:24])
    before = corpus_nll(student, dataset.sender_pairs)
    imitate(student, dataset.sender_pairs, 20, 8, Rng(1), Adam(student.parameters(), lr=1e-2))
    assert corpus_nll(student, dataset.sender_pairs) < before


def test_imitate_validates_beta(agents, task_pairs):
    with pytest.raises(ParameterError):
        imitate(agents[0], task_pairs, 1, 4, Rng(0), Adam(agents[0].parameters()), beta=1.5)


def _run(fn, pretrained, data, cfg):
    return fn(pretrained.sender.clone(), pretrained.receiver.clone(), data, cfg)


def assert_same_run(a, b):
    assert [r.step for r in a.records] == [r.step for r in b.records]
    for x, y in zip(a.records, b.records):
        assert (x.bleu_tgt, x.bleu_pvt, x.nll, x.real_nll) == (y.bleu_tgt, y.bleu_pvt, y.nll, y.real_nll)
        assert x.grad_cos_raw == y.grad_cos_raw
    for x, y in zip(snapshot(a.sender, a.receiver), snapshot(b.sender, b.receiver)):
        assert np.array_equal(x, y)


def test_s2p_run_with_zero_alpha_equals_gumbel_run(tiny_world):
    _, _, pretrained, data = tiny_world
    gumbel = _run(gumbel_run, pretrained, data, tiny_finetune(method="gumbel"))
    s2p = _run(s2p_run, pretrained, data, tiny_finetune(method="s2p", alpha=0.0))
    assert_same_run(gumbel, s2p)


SIL_SCHEDULE = dict(k1=5, k2=3, k2_prime=3)


def test_ssil_with_zero_alpha_equals_sil(tiny_world):
    _, _, pretrained, data = tiny_world
    sil = _run(sil_run, pretrained, data, tiny_finetune(method="sil", **SIL_SCHEDULE))
    ssil = _run(ssil_run, pretrained, data, tiny_finetune(method="ssil", alpha=0.0, **SIL_SCHEDULE))
    assert_same_run(sil, ssil)


def test_mixdata_with_zero_beta_equals_sil(tiny_world):
    _, _, pretrained, data = tiny_world
    sil = _run(sil_run, pretrained, data, tiny_finetune(method="sil", **SIL_SCHEDULE))
    mix = _run(mixdata_run, pretrained, data, tiny_finetune(method="mixdata", beta=0.0, **SIL_SCHEDULE))
    assert_same_run(sil, mix)


def test_sil_spends_exactly_the_step_budget(tiny_world):
    _, _, pretrained, data = tiny_world
    result = _run(sil_run, pretrained, data, tiny_finetune(method="sil", **SIL_SCHEDULE))
    assert result.interactive_steps == 12
    assert result.iterations == 3
    assert result.records[0].step == 0
    assert result.records[-1].step == 12
    steps = [r.step for r in result.records]
    assert steps == sorted(steps)


def test_sil_teacher_never_touches_student(tiny_world):
    _, _, pretrained, data = tiny_world
    student = (pretrained.sender.clone(), pretrained.receiver.clone())
    before = snapshot(*student)
    sil_run(*student, data, tiny_finetune(
        method="sil", k1=4, k2=0, k2_prime=0, allow_zero_imitation=True, total_steps=8,
    ))
    for x, y in zip(before, snapshot(*student)):
        assert np.array_equal(x, y)


def test_zero_imitation_gives_flat_metrics(tiny_world):
    _, _, pretrained, data = tiny_world
    result = _run(sil_run, pretrained, data, tiny_finetune(
        method="sil", k1=4, k2=0, k2_prime=0, allow_zero_imitation=True,
    ))
    first = result.records[0]
    for record in result.records[1:]:
        assert (record.bleu_tgt, record.bleu_pvt, record.nll, record.real_nll) == \
            (first.bleu_tgt, first.bleu_pvt, first.nll, first.real_nll)


def test_probe_values_are_logged_in_range(tiny_world):
    _, _, pretrained, data = tiny_world
    result = _run(s2p_run, pretrained, data, tiny_finetune(method="s2p", alpha=1.0))
    logged = [r.grad_cos_raw for r in result.records[1:]]
    assert all(v is not None and -1.0 <= v <= 1.0 for v in logged)
    assert all(r.method == "s2p" and r.seed == 7 for r in result.records)


def test_mixdata_full_pretraining_fraction_runs(tiny_world):
    _, _, pretrained, data = tiny_world
    result = _run(mixdata_run, pretrained, data, tiny_finetune(method="mixdata", beta=1.0, **SIL_SCHEDULE))
    assert result.records[-1].step == 12


def test_finetune_works_on_copies(tiny_world):
    _, _, pretrained, data = tiny_world
    before = pretrained.sender.content_hash()
    seen = []
    result = finetune(data, tiny_finetune(method="gumbel"), on_eval=lambda r, s, q: seen.append(r.step))
    assert pretrained.sender.content_hash() == before
    assert seen == [r.step for r in result.records] == [0, 4, 8, 12]


def test_sampled_teacher_data_uses_the_rng(tiny_world):
    _, data, pretrained, _ = tiny_world
    sources = data.task_pairs[:16]
    a = build_teacher_dataset(pretrained.sender, pretrained.receiver, sources, sampling="sample", rng=Rng(1))
    b = build_teacher_dataset(pretrained.sender, pretrained.receiver, sources, sampling="sample", rng=Rng(1))
    assert a.sender_pairs == b.sender_pairs
    with pytest.raises(ParameterError):
        build_teacher_dataset(pretrained.sender, pretrained.receiver, sources, sampling="sample")


def test_supervised_batches_mix_lengths(tiny_world):
    _, _, pretrained, data = tiny_world
    pairs = data.pretrain_sender_pairs[:10]
    assert len({len(p) for p in pairs}) > 1
    assert batch_nll(pretrained.sender, pairs).item() > 0


def test_nll_decreases_monotonically_over_early_steps(agents, task_pairs):
    sender, _ = agents
    corpus = task_pairs[:10]
    opt = Adam(sender.parameters(), lr=1e-3)
    history = [corpus_nll(sender, corpus)]
    for _ in range(50):
        supervised_step(sender, corpus, opt)
        history.append(corpus_nll(sender, corpus))
    assert all(later <= earlier + 1e-6 for earlier, later in zip(history, history[1:]))
    assert history[-1] < history[0]


def test_interactive_loss_reaches_sender_embeddings(agents, task_pairs):
    sender, receiver = agents
    with Tape():
        backward(interactive_loss(sender, receiver, task_pairs[:4], 0.5, Rng(0)))
    assert np.any(sender["enc_embed"].grad != 0)
    assert np.any(sender["dec_embed"].grad != 0)


def test_noiseless_relay_overfits_a_single_pair():
    sender = init_params(0, TINY_VOCAB, TINY_VOCAB, hidden=16)
    receiver = init_params(1, TINY_VOCAB, TINY_VOCAB, hidden=16)
    pair = [CorpusPair((0, 1, 2, 3), (5, 4, 3, 2), PairKind.SRC_TGT)]
    opt = Adam(sender.parameters() + receiver.parameters(), lr=1e-2)
    for _ in range(500):
        opt.zero_grad()
        with Tape():
            backward(interactive_loss(sender, receiver, pair, 1.0, None))
        opt.step()
    with no_grad():
        assert interactive_loss(sender, receiver, pair, 1.0, None).item() < 0.01
