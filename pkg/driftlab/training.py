"""
Pretraining and interactive finetuning schedules.

    gumbel   interactive loss only
    s2p      interactive loss + alpha × supervised loss on pretraining data
    sil      teacher copies trained interactively, students imitate the teacher's data
    ssil     sil whose teacher uses the s2p loss
    mixdata  sil whose student batches mix in a beta fraction of pretraining pairs

Every stochastic choice of a run draws from its own named stream (see
``RunStreams``), so a method with its extra term switched off replays the
simpler method step for step.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from tqdm import tqdm

from .agents import (
    LMParams,
    Seq2SeqParams,
    batch_nll,
    greedy_decode,
    gumbel_decode,
    nll_from_inputs,
)
from .autodiff import Rng, StraightThroughReplay, Tape, Tensor, backward, grad_cosine, no_grad
from .config import FinetuneConfig
from .errors import DataError, ParameterError, UndefinedCosineError
from .game import (
    CorpusPair,
    DistributionSpec,
    EvalExample,
    GameSpec,
    PairBatcher,
    PairKind,
    group_by_length,
    sample_corpus,
    stack_pairs,
)
from .metrics import MetricsRecord, MovingAverage, eval_pipeline
from .optim import Adam

logger = logging.getLogger(__name__)

EvalCallback = Callable[[MetricsRecord, Seq2SeqParams, Seq2SeqParams], None]


# --------------------------------------------------------------------------- #
# Types
# --------------------------------------------------------------------------- #
@dataclass
class StepMetrics:
    """Loss decomposition of one update: total = interactive + alpha × supervised."""
    total: float
    interactive: float
    supervised: float = 0.0
    alpha: float = 0.0


@dataclass
class AgentOptimizers:
    sender: Adam
    receiver: Adam

    @classmethod
    def fresh(cls, sender: Seq2SeqParams, receiver: Seq2SeqParams, cfg: FinetuneConfig) -> "AgentOptimizers":
        def make(params: Seq2SeqParams) -> Adam:
            return Adam(
                params.parameters(), lr=cfg.lr, betas=tuple(cfg.adam_betas), eps=cfg.adam_eps,
                grad_clip=cfg.grad_clip,
            )
        return cls(make(sender), make(receiver))

    def zero_grad(self) -> None:
        self.sender.zero_grad()
        self.receiver.zero_grad()

    def step(self) -> None:
        self.sender.step()
        self.receiver.step()


@dataclass
class PretrainResult:
    sender_nll: float
    receiver_nll: float
    epoch_losses: dict[str, list[float]] = field(default_factory=dict)


@dataclass
class TeacherDataset:
    """
    Pairs decoded by the current teacher.

    sender_pairs:   (src, teacher pivot) for the student sender
    receiver_pairs: (teacher pivot, teacher or gold target) for the student receiver
    """
    sender_pairs: list[CorpusPair]
    receiver_pairs: list[CorpusPair]

    def __len__(self) -> int:
        return len(self.sender_pairs)


@dataclass
class FinetuneData:
    """Everything a finetuning run reads but never modifies."""
    game: GameSpec
    task_pairs: list[CorpusPair]
    pretrain_sender_pairs: list[CorpusPair]
    pretrain_receiver_pairs: list[CorpusPair]
    eval_set: list[EvalExample]
    lm: LMParams
    task_distribution: DistributionSpec
    pretrain_sender: Optional[Seq2SeqParams] = None
    pretrain_receiver: Optional[Seq2SeqParams] = None


@dataclass
class RunStreams:
    """Independent random streams of one finetuning run."""
    noise: Rng
    task: Rng
    pretrain: Rng
    probe: Rng
    teacher_data: Rng
    imitation: Rng
    mixing: Rng

    @classmethod
    def from_seed(cls, seed: int) -> "RunStreams":
        base = Rng(seed).derive("finetune")
        return cls(
            noise=base.derive("noise"),
            task=base.derive("task"),
            pretrain=base.derive("pretrain"),
            probe=base.derive("probe"),
            teacher_data=base.derive("teacher-data"),
            imitation=base.derive("imitation"),
            mixing=base.derive("mixing"),
        )


@dataclass
class FinetuneResult:
    records: list[MetricsRecord]
    sender: Seq2SeqParams
    receiver: Seq2SeqParams
    interactive_steps: int = 0
    iterations: int = 0


# --------------------------------------------------------------------------- #
# Supervised pretraining
# --------------------------------------------------------------------------- #
def supervised_step(params: Seq2SeqParams, pairs: Sequence[CorpusPair], opt: Adam) -> float:
    opt.zero_grad()
    with Tape():
        loss = batch_nll(params, pairs)
        backward(loss)
    opt.step()
    return loss.item()


def corpus_nll(params: Seq2SeqParams, pairs: Sequence[CorpusPair]) -> float:
    """Token-weighted teacher-forced NLL over a corpus, nothing recorded."""
    with no_grad():
        return batch_nll(params, pairs).item()


def pretrain(
    sender: Seq2SeqParams,
    receiver: Seq2SeqParams,
    sender_corpus: Sequence[CorpusPair],
    receiver_corpus: Sequence[CorpusPair],
    epochs: int,
    rng: Rng,
    lr: float = 3e-3,
    batch_size: int = 32,
    grad_clip: Optional[float] = 5.0,
    valid_sender: Optional[Sequence[CorpusPair]] = None,
    valid_receiver: Optional[Sequence[CorpusPair]] = None,
    progress: bool = False,
) -> PretrainResult:
    """
    Teacher-forced supervised training of both agents.

    Args:
        sender, receiver: agents, updated in place
        sender_corpus: src→pvt pairs
        receiver_corpus: pvt→tgt pairs
        epochs: passes over each corpus; 0 leaves the agents untouched
        rng: batching stream
        valid_sender, valid_receiver: held-out pairs for the reported NLLs
            (the training corpora are used when omitted)

    Returns:
        PretrainResult with per-direction validation NLL and mean loss per epoch

    Raises:
        DataError: a corpus is empty
    """
    if not sender_corpus or not receiver_corpus:
        raise DataError("pretraining needs nonempty src→pvt and pvt→tgt corpora")
    losses: dict[str, list[float]] = {"sender": [], "receiver": []}
    jobs = [
        ("sender", sender, PairBatcher(list(sender_corpus)), rng.derive("sender")),
        ("receiver", receiver, PairBatcher(list(receiver_corpus)), rng.derive("receiver")),
    ]
    for role, params, batcher, stream in jobs:
        opt = Adam(params.parameters(), lr=lr, grad_clip=grad_clip)
        for epoch in tqdm(range(epochs), desc=f"pretrain {role}", disable=not progress):
            batch_losses = [supervised_step(params, batch, opt) for batch in batcher.epoch(batch_size, stream)]
            losses[role].append(float(np.mean(batch_losses)))
            logger.info(f"pretrain {role} epoch {epoch + 1}/{epochs}: loss {losses[role][-1]:.4f}")

    result = PretrainResult(
        sender_nll=corpus_nll(sender, valid_sender or sender_corpus),
        receiver_nll=corpus_nll(receiver, valid_receiver or receiver_corpus),
        epoch_losses=losses,
    )
    logger.info(f"pretraining done: sender NLL {result.sender_nll:.4f}, receiver NLL {result.receiver_nll:.4f}")
    return result


# --------------------------------------------------------------------------- #
# Interactive losses and steps
# --------------------------------------------------------------------------- #
def interactive_loss(
    sender: Seq2SeqParams,
    receiver: Seq2SeqParams,
    pairs: Sequence[CorpusPair],
    tau: float,
    rng: Optional[Rng],
    replay: Optional[StraightThroughReplay] = None,
) -> Tensor:
    """
    Cross-entropy of the gold targets after the sender → receiver relay.

    The sender decodes a pivot through Gumbel straight-through samples and
    the receiver reads those differentiable one-hot rows, so the loss reaches
    the parameters of both agents.

    Args:
        pairs: equal-length (src, gold tgt) pairs
        rng: Gumbel noise stream, ``None`` for noiseless decoding
    """
    src, tgt = stack_pairs(pairs)
    message = gumbel_decode(sender, src, tau, rng, replay)
    return nll_from_inputs(receiver, message.onehots, tgt)


def gumbel_step(
    sender: Seq2SeqParams,
    receiver: Seq2SeqParams,
    task_batch: Sequence[CorpusPair],
    tau: float,
    rng: Optional[Rng],
    opt: AgentOptimizers,
) -> StepMetrics:
    opt.zero_grad()
    with Tape():
        loss = interactive_loss(sender, receiver, task_batch, tau, rng)
        backward(loss)
    opt.step()
    value = loss.item()
    return StepMetrics(total=value, interactive=value)


def s2p_step(
    sender: Seq2SeqParams,
    receiver: Seq2SeqParams,
    task_batch: Sequence[CorpusPair],
    pretrain_batches: tuple[Sequence[CorpusPair], Sequence[CorpusPair]],
    alpha: float,
    tau: float,
    rng: Optional[Rng],
    opt: AgentOptimizers,
) -> StepMetrics:
    """
    One supervised-selfplay update of both agents.

    The sender minimizes L_int + alpha × NLL(src→pvt) and the receiver
    L_int + alpha × NLL(pvt→tgt). The supervised terms touch disjoint
    parameters, so one backward pass of the summed loss serves both.

    Args:
        pretrain_batches: (src→pvt batch, pvt→tgt batch) from the pretraining corpora

    Raises:
        ParameterError: alpha < 0
    """
    if alpha < 0:
        raise ParameterError(f"alpha must be >= 0, got {alpha}")
    if alpha == 0:
        return gumbel_step(sender, receiver, task_batch, tau, rng, opt)
    sender_batch, receiver_batch = pretrain_batches
    opt.zero_grad()
    with Tape():
        l_int = interactive_loss(sender, receiver, task_batch, tau, rng)
        l_sup = batch_nll(sender, sender_batch) + batch_nll(receiver, receiver_batch)
        total = l_int + l_sup * alpha
        backward(total)
    opt.step()
    return StepMetrics(total=total.item(), interactive=l_int.item(), supervised=l_sup.item(), alpha=alpha)


def grad_conflict_probe(
    sender: Seq2SeqParams,
    receiver: Seq2SeqParams,
    task_batch: Sequence[CorpusPair],
    pretrain_batch: Sequence[CorpusPair],
    tau: float,
    rng: Optional[Rng],
    self_probe: bool = False,
) -> Optional[float]:
    """
    Cosine between the sender gradients of the interactive and supervised losses.

    Both gradients are taken at the same parameter point; nothing is updated
    and all gradients are cleared afterwards. ``self_probe`` replaces the
    supervised loss by a second, identically seeded interactive loss (cosine 1).

    Returns:
        cosine in [-1, 1], or None when either gradient vanishes
    """
    replay_rng = rng.clone() if (self_probe and rng is not None) else None
    sender.zero_grad()
    receiver.zero_grad()
    with Tape():
        backward(interactive_loss(sender, receiver, task_batch, tau, rng))
    g_int = sender.flat_grad()
    sender.zero_grad()
    receiver.zero_grad()
    with Tape():
        if self_probe:
            backward(interactive_loss(sender, receiver, task_batch, tau, replay_rng))
        else:
            backward(batch_nll(sender, pretrain_batch))
    g_sup = sender.flat_grad()
    sender.zero_grad()
    receiver.zero_grad()
    try:
        return grad_cosine(g_int, g_sup)
    except UndefinedCosineError:
        logger.debug("gradient probe skipped: zero gradient")
        return None


# --------------------------------------------------------------------------- #
# Imitation
# --------------------------------------------------------------------------- #
def imitation_step(student: Seq2SeqParams, pairs: Sequence[CorpusPair], opt: Adam) -> float:
    """One supervised update on (possibly mixed-length) imitation pairs."""
    return supervised_step(student, pairs, opt)


def imitate(
    student: Seq2SeqParams,
    teacher_pairs: Sequence[CorpusPair],
    steps: int,
    batch_size: int,
    rng: Rng,
    opt: Adam,
    pretrain_pairs: Optional[Sequence[CorpusPair]] = None,
    beta: float = 0.0,
    mix_rng: Optional[Rng] = None,
) -> list[float]:
    """
    ``steps`` supervised updates of ``student`` on teacher data.

    Each batch takes round(beta × batch_size) pairs from ``pretrain_pairs``
    (drawn with ``mix_rng``) and the rest from ``teacher_pairs``; beta = 0
    never touches the mixing stream.

    Raises:
        ParameterError: beta outside [0, 1]
    """
    if not 0.0 <= beta <= 1.0:
        raise ParameterError(f"beta must lie in [0, 1], got {beta}")
    n_pre = int(round(beta * batch_size))
    if n_pre and not pretrain_pairs:
        raise DataError("beta > 0 needs pretraining pairs to mix in")
    teacher = PairBatcher(list(teacher_pairs))
    pretrain_batcher = PairBatcher(list(pretrain_pairs)) if n_pre else None
    losses = []
    for _ in range(steps):
        batch = teacher.sample(batch_size - n_pre, rng) if n_pre < batch_size else []
        if pretrain_batcher is not None:
            batch = batch + pretrain_batcher.sample_any(n_pre, mix_rng)
        losses.append(imitation_step(student, batch, opt))
    return losses


def build_teacher_dataset(
    teacher_sender: Seq2SeqParams,
    teacher_receiver: Seq2SeqParams,
    sources: Sequence[CorpusPair],
    receiver_target: str = "teacher",
    sampling: str = "greedy",
    rng: Optional[Rng] = None,
) -> TeacherDataset:
    """
    Decode task sources with the teacher pipeline.

    Args:
        sources: (src, gold tgt) pairs; gold targets are used only when
            ``receiver_target == "gold"``
        sampling: "greedy" (argmax) or "sample" (categorical draws from ``rng``)
    """
    if sampling == "sample" and rng is None:
        raise ParameterError("teacher sampling needs an rng")

    def decode(params: Seq2SeqParams, tokens: np.ndarray) -> np.ndarray:
        if sampling == "greedy":
            return greedy_decode(params, tokens).tokens
        with no_grad():
            return gumbel_decode(params, tokens, 1.0, rng).tokens

    sender_pairs, receiver_pairs = [], []
    for group in group_by_length(sources):
        src, gold = stack_pairs(group)
        pvt = decode(teacher_sender, src)
        tgt = gold if receiver_target == "gold" else decode(teacher_receiver, pvt)
        for s, p, t in zip(src.tolist(), pvt.tolist(), tgt.tolist()):
            sender_pairs.append(CorpusPair(tuple(s), tuple(p), PairKind.SRC_PVT))
            receiver_pairs.append(CorpusPair(tuple(p), tuple(t), PairKind.PVT_TGT))
    return TeacherDataset(sender_pairs, receiver_pairs)


# --------------------------------------------------------------------------- #
# Runs
# --------------------------------------------------------------------------- #
class _RunLoop:
    """Shared bookkeeping of one run: batches, probes, evaluations, progress."""

    def __init__(self, data: FinetuneData, cfg: FinetuneConfig, on_eval: Optional[EvalCallback]):
        self.data = data
        self.cfg = cfg
        self.on_eval = on_eval
        self.streams = RunStreams.from_seed(cfg.seed)
        self.task = PairBatcher(list(data.task_pairs))
        self.pretrain_sender = PairBatcher(list(data.pretrain_sender_pairs))
        self.pretrain_receiver = PairBatcher(list(data.pretrain_receiver_pairs))
        self.grad_cos = MovingAverage(cfg.grad_cos_window)
        self.records: list[MetricsRecord] = []
        self.student_version = 0
        self._cached: Optional[tuple[int, MetricsRecord]] = None
        self.bar = tqdm(total=cfg.total_steps, desc=cfg.method, disable=not cfg.progress)

    @property
    def noise(self) -> Optional[Rng]:
        return self.streams.noise if self.cfg.gumbel_noise else None

    def task_batch(self) -> list[CorpusPair]:
        return self.task.sample(self.cfg.batch_size, self.streams.task)

    def pretrain_batches(self) -> tuple[list[CorpusPair], list[CorpusPair]]:
        rng = self.streams.pretrain
        return (
            self.pretrain_sender.sample(self.cfg.batch_size, rng),
            self.pretrain_receiver.sample(self.cfg.batch_size, rng),
        )

    def maybe_probe(self, sender: Seq2SeqParams, receiver: Seq2SeqParams, step: int) -> None:
        if step % self.cfg.probe_interval:
            return
        rng = self.streams.probe
        task_batch = self.task.sample(self.cfg.batch_size, rng)
        pretrain_batch = self.pretrain_sender.sample(self.cfg.batch_size, rng)
        noise = rng if self.cfg.gumbel_noise else None
        value = grad_conflict_probe(sender, receiver, task_batch, pretrain_batch, self.cfg.tau, noise)
        self.grad_cos.add(step, value)

    def interactive_update(
        self, sender: Seq2SeqParams, receiver: Seq2SeqParams, opt: AgentOptimizers, alpha: Optional[float],
    ) -> StepMetrics:
        batch = self.task_batch()
        if alpha is None:
            return gumbel_step(sender, receiver, batch, self.cfg.tau, self.noise, opt)
        return s2p_step(sender, receiver, batch, self.pretrain_batches(), alpha, self.cfg.tau, self.noise, opt)

    def evaluate(self, sender: Seq2SeqParams, receiver: Seq2SeqParams, step: int) -> MetricsRecord:
        if self._cached is not None and self._cached[0] == self.student_version:
            base = self._cached[1]
        else:
            base = eval_pipeline(sender, receiver, self.data.eval_set, self.data.lm, step=step)
            self._cached = (self.student_version, base)
        record = replace(
            base,
            step=step,
            method=self.cfg.method,
            seed=self.cfg.seed,
            grad_cos_raw=self.grad_cos.latest,
            grad_cos_ma100=self.grad_cos.average,
        )
        self.records.append(record)
        logger.info(
            f"[{record.method} seed {record.seed}] step {step}: bleu_tgt {record.bleu_tgt:.2f} "
            f"bleu_pvt {record.bleu_pvt:.2f} nll {record.nll:.3f} real_nll {record.real_nll:.3f}"
        )
        if self.on_eval is not None:
            self.on_eval(record, sender, receiver)
        return record

    def close(self) -> None:
        self.bar.close()


def _selfplay_run(
    sender: Seq2SeqParams,
    receiver: Seq2SeqParams,
    data: FinetuneData,
    cfg: FinetuneConfig,
    alpha: Optional[float],
    on_eval: Optional[EvalCallback],
) -> FinetuneResult:
    loop = _RunLoop(data, cfg, on_eval)
    opt = AgentOptimizers.fresh(sender, receiver, cfg)
    loop.evaluate(sender, receiver, 0)
    for step in range(cfg.total_steps):
        loop.maybe_probe(sender, receiver, step)
        metrics = loop.interactive_update(sender, receiver, opt, alpha)
        loop.student_version += 1
        loop.bar.update(1)
        loop.bar.set_postfix(loss=f"{metrics.total:.3f}")
        if (step + 1) % cfg.eval_interval == 0 or step + 1 == cfg.total_steps:
            loop.evaluate(sender, receiver, step + 1)
    loop.close()
    return FinetuneResult(loop.records, sender, receiver, interactive_steps=cfg.total_steps)


def gumbel_run(sender, receiver, data: FinetuneData, cfg: FinetuneConfig, on_eval: Optional[EvalCallback] = None):
    """Vanilla interactive finetuning; agents are updated in place."""
    return _selfplay_run(sender, receiver, data, cfg, None, on_eval)


def s2p_run(sender, receiver, data: FinetuneData, cfg: FinetuneConfig, on_eval: Optional[EvalCallback] = None):
    """Supervised selfplay with weight ``cfg.alpha``; agents are updated in place."""
    cfg = cfg.resolved()
    return _selfplay_run(sender, receiver, data, cfg, cfg.alpha, on_eval)


def _check_schedule(cfg: FinetuneConfig) -> None:
    if cfg.k1 is None or cfg.k1 <= 0:
        raise ParameterError(f"k1 must be a positive integer, got {cfg.k1}")
    for name in ("k2", "k2_prime"):
        value = getattr(cfg, name)
        if value is None or value < 0 or (value == 0 and not cfg.allow_zero_imitation):
            raise ParameterError(f"{name} must be a positive integer, got {value}")


def _iterated_run(
    student_sender: Seq2SeqParams,
    student_receiver: Seq2SeqParams,
    data: FinetuneData,
    cfg: FinetuneConfig,
    alpha: Optional[float],
    beta: float,
    on_eval: Optional[EvalCallback],
) -> FinetuneResult:
    _check_schedule(cfg)
    loop = _RunLoop(data, cfg, on_eval)
    streams = loop.streams
    student_opt = AgentOptimizers.fresh(student_sender, student_receiver, cfg)
    loop.evaluate(student_sender, student_receiver, 0)

    consumed = iterations = 0
    while consumed < cfg.total_steps:
        k1 = min(cfg.k1, cfg.total_steps - consumed)
        teacher_sender, teacher_receiver = student_sender.clone(), student_receiver.clone()
        teacher_opt = AgentOptimizers.fresh(teacher_sender, teacher_receiver, cfg)
        for i in range(k1):
            loop.maybe_probe(teacher_sender, teacher_receiver, consumed)
            metrics = loop.interactive_update(teacher_sender, teacher_receiver, teacher_opt, alpha)
            consumed += 1
            loop.bar.update(1)
            loop.bar.set_postfix(loss=f"{metrics.total:.3f}")
            if consumed % cfg.eval_interval == 0 and consumed < cfg.total_steps and i != k1 - 1:
                loop.evaluate(student_sender, student_receiver, consumed)

        sources = sample_corpus(
            data.game, data.task_distribution, cfg.teacher_dataset_size, PairKind.SRC_TGT, streams.teacher_data,
        )
        dataset = build_teacher_dataset(
            teacher_sender, teacher_receiver, sources, cfg.receiver_target, cfg.teacher_sampling,
            streams.teacher_data,
        )
        imitate(
            student_sender, dataset.sender_pairs, cfg.k2, cfg.batch_size, streams.imitation, student_opt.sender,
            data.pretrain_sender_pairs, beta, streams.mixing,
        )
        imitate(
            student_receiver, dataset.receiver_pairs, cfg.k2_prime, cfg.batch_size, streams.imitation,
            student_opt.receiver, data.pretrain_receiver_pairs, beta, streams.mixing,
        )
        iterations += 1
        loop.student_version += 1
        logger.debug(f"iteration {iterations}: {consumed}/{cfg.total_steps} interactive steps")
        loop.evaluate(student_sender, student_receiver, consumed)
    loop.close()
    return FinetuneResult(
        loop.records, student_sender, student_receiver, interactive_steps=consumed, iterations=iterations,
    )


def sil_run(student_sender, student_receiver, data: FinetuneData, cfg: FinetuneConfig,
            on_eval: Optional[EvalCallback] = None) -> FinetuneResult:
    """
    Iterated learning: duplicate the students into a teacher, finetune the
    teacher for k1 interactive steps, decode a teacher dataset, let the
    students imitate it for k2 (sender) and k2' (receiver) steps, evaluate,
    repeat until ``total_steps`` interactive steps are spent.

    Raises:
        ParameterError: k1, k2 or k2' not positive
    """
    return _iterated_run(student_sender, student_receiver, data, cfg.resolved(), None, 0.0, on_eval)


def ssil_run(student_sender, student_receiver, data: FinetuneData, cfg: FinetuneConfig,
             on_eval: Optional[EvalCallback] = None) -> FinetuneResult:
    """``sil_run`` whose teacher is trained with the s2p loss (weight ``cfg.alpha``)."""
    cfg = cfg.resolved()
    if cfg.alpha is None or cfg.alpha < 0:
        raise ParameterError(f"alpha must be >= 0, got {cfg.alpha}")
    return _iterated_run(student_sender, student_receiver, data, cfg, cfg.alpha, 0.0, on_eval)


def mixdata_run(student_sender, student_receiver, data: FinetuneData, cfg: FinetuneConfig,
                on_eval: Optional[EvalCallback] = None) -> FinetuneResult:
    """``sil_run`` whose imitation batches hold a ``cfg.beta`` fraction of pretraining pairs."""
    cfg = cfg.resolved()
    if cfg.beta is None or not 0.0 <= cfg.beta <= 1.0:
        raise ParameterError(f"beta must lie in [0, 1], got {cfg.beta}")
    return _iterated_run(student_sender, student_receiver, data, cfg, None, cfg.beta, on_eval)


RUNNERS = {
    "gumbel": gumbel_run,
    "s2p": s2p_run,
    "sil": sil_run,
    "ssil": ssil_run,
    "mixdata": mixdata_run,
}


def finetune(data: FinetuneData, cfg: FinetuneConfig, on_eval: Optional[EvalCallback] = None) -> FinetuneResult:
    """
    Finetune copies of the pretrained agents with ``cfg.method``.

    Raises:
        DataError: ``data`` carries no pretrained agents
    """
    if data.pretrain_sender is None or data.pretrain_receiver is None:
        raise DataError("finetuning needs pretrained sender and receiver agents")
    logger.info(f"finetune {cfg.method} seed {cfg.seed}: {cfg.total_steps} interactive steps")
    return RUNNERS[cfg.method](
        data.pretrain_sender.clone(), data.pretrain_receiver.clone(), data, cfg.resolved(), on_eval,
    )
