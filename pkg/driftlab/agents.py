"""
Sender, receiver and frozen pivot language model.

Sender (src→pvt) and receiver (pvt→tgt) are Elman encoder-decoders with
tanh cells. Inputs are one-hot rows multiplied by an embedding table, so the
decoder can consume either constant one-hots (teacher forcing, greedy
decoding) or differentiable Gumbel straight-through one-hots. Output length
always equals input length.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .autodiff import (
    Rng,
    StraightThroughReplay,
    Tape,
    Tensor,
    add,
    backward,
    cross_entropy,
    flatten_grads,
    gumbel_softmax_st,
    matmul,
    no_grad,
    onehot,
    tanh,
)
from .errors import ContractError, DataError, ParameterError, TargetIndexError
from .game import CorpusPair, PairBatcher, PairKind, group_by_length, stack_pairs
from .optim import Adam

INIT_SCALE = 0.08


class ParamStore:
    """Ordered, named collection of parameter tensors."""

    def __init__(self, tensors: dict[str, Tensor]):
        self.tensors = dict(tensors)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def flat_grad(self) -> np.ndarray:
        return flatten_grads(self.parameters())

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.data.reshape(-1) for t in self.tensors.values()])

    def unflatten(self, vector: np.ndarray) -> None:
        """Load values from a flat vector in canonical order."""
        vector = np.asarray(vector, dtype=np.float64).reshape(-1)
        if vector.size != sum(t.size for t in self.tensors.values()):
            raise ParameterError(f"flat vector has {vector.size} entries, store needs {self.flatten().size}")
        offset = 0
        for t in self.tensors.values():
            t.data[...] = vector[offset:offset + t.size].reshape(t.shape)
            offset += t.size

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.tensors.items():
            if name not in state:
                raise ParameterError(f"missing parameter '{name}'")
            value = np.asarray(state[name], dtype=np.float64)
            if value.shape != t.shape:
                raise ParameterError(f"parameter '{name}' has shape {value.shape}, expected {t.shape}")
            t.data[...] = value

    def content_hash(self) -> str:
        digest = hashlib.sha256()
        for name, t in self.tensors.items():
            digest.update(name.encode("utf-8"))
            digest.update(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
        return digest.hexdigest()


class Seq2SeqParams(ParamStore):
    """Encoder-decoder parameters; canonical order is the construction order."""

    @property
    def vocab_in(self) -> int:
        return self["enc_embed"].shape[0]

    @property
    def vocab_out(self) -> int:
        return self["out_proj"].shape[1]

    @property
    def hidden(self) -> int:
        return self["enc_embed"].shape[1]

    def clone(self) -> "Seq2SeqParams":
        return Seq2SeqParams({n: Tensor(t.data.copy(), requires_grad=True, name=n) for n, t in self.tensors.items()})


class LMParams(ParamStore):
    """Recurrent next-token model over the pivot vocabulary."""

    def __init__(self, tensors: dict[str, Tensor], freeze_hash: Optional[str] = None):
        super().__init__(tensors)
        self.freeze_hash = freeze_hash

    @property
    def vocab(self) -> int:
        return self["embed"].shape[0]

    @property
    def frozen(self) -> bool:
        return self.freeze_hash is not None

    def freeze(self) -> str:
        for t in self.tensors.values():
            t.requires_grad = False
            t.grad = None
        self.freeze_hash = self.content_hash()
        return self.freeze_hash

    def check_frozen(self) -> None:
        if self.freeze_hash is None:
            raise ContractError("language model is not frozen")
        if self.content_hash() != self.freeze_hash:
            raise ContractError("frozen language model was modified after freezing")


@dataclass
class DecodeOutput:
    """
    Decoded sequences.

    tokens: B×T ids
    onehots: per-step B×V differentiable one-hot rows (Gumbel path only)
    log_probs: B×T log-probabilities of the emitted tokens under the model
    """
    tokens: np.ndarray
    onehots: Optional[list[Tensor]]
    log_probs: np.ndarray


# --------------------------------------------------------------------------- #
# Construction
# --------------------------------------------------------------------------- #
def _uniform(rng: Rng, shape: tuple[int, ...], name: str) -> Tensor:
    return Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape), requires_grad=True, name=name)


def init_params(seed: int, vocab_in: int, vocab_out: int, hidden: int = 32) -> Seq2SeqParams:
    """Uniform(−0.08, 0.08) initialization, deterministic in ``seed``."""
    if min(vocab_in, vocab_out, hidden) < 1:
        raise ParameterError(f"dimensions must be >= 1, got {vocab_in}, {vocab_out}, {hidden}")
    rng = Rng(seed).derive("seq2seq-init")
    d = hidden
    shapes = {
        "enc_embed": (vocab_in, d),
        "enc_w_in": (d, d),
        "enc_w_rec": (d, d),
        "enc_bias": (d,),
        "dec_bos": (1, d),
        "dec_embed": (vocab_out, d),
        "dec_w_in": (d, d),
        "dec_w_rec": (d, d),
        "dec_w_ctx": (d, d),
        "dec_bias": (d,),
        "out_proj": (d, vocab_out),
        "out_bias": (vocab_out,),
    }
    return Seq2SeqParams({name: _uniform(rng, shape, name) for name, shape in shapes.items()})


def init_lm(seed: int, vocab: int, hidden: int = 32) -> LMParams:
    if min(vocab, hidden) < 1:
        raise ParameterError(f"dimensions must be >= 1, got {vocab}, {hidden}")
    rng = Rng(seed).derive("lm-init")
    d = hidden
    shapes = {
        "bos": (1, d),
        "embed": (vocab, d),
        "w_in": (d, d),
        "w_rec": (d, d),
        "bias": (d,),
        "out_proj": (d, vocab),
        "out_bias": (vocab,),
    }
    return LMParams({name: _uniform(rng, shape, name) for name, shape in shapes.items()})


# --------------------------------------------------------------------------- #
# Forward passes
# --------------------------------------------------------------------------- #
def _as_batch(tokens, vocab: int, what: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(tokens, dtype=np.int64))
    if arr.ndim != 2:
        raise ContractError(f"{what}: expected a sequence or a B×T batch, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() >= vocab):
        raise TargetIndexError(f"{what}: token id outside [0, {vocab})")
    return arr


def _constant_inputs(tokens: np.ndarray, vocab: int) -> list[Tensor]:
    return [Tensor(onehot(tokens[:, t], vocab)) for t in range(tokens.shape[1])]


def _log_probs(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def encode(params: Seq2SeqParams, inputs: Sequence[Tensor]) -> Tensor:
    """Run the encoder over per-step B×V_in one-hot rows; returns the final state."""
    batch = inputs[0].shape[0]
    h = Tensor(np.zeros((batch, params.hidden)))
    for x in inputs:
        e = matmul(x, params["enc_embed"])
        pre = add(add(matmul(e, params["enc_w_in"]), matmul(h, params["enc_w_rec"])), params["enc_bias"])
        h = tanh(pre)
    return h


def _decoder_step(params: Seq2SeqParams, prev: Optional[Tensor], h: Tensor, ctx: Tensor):
    if prev is None:
        e = matmul(Tensor(np.ones((h.shape[0], 1))), params["dec_bos"])
    else:
        e = matmul(prev, params["dec_embed"])
    pre = add(matmul(e, params["dec_w_in"]), matmul(h, params["dec_w_rec"]))
    pre = add(add(pre, matmul(ctx, params["dec_w_ctx"])), params["dec_bias"])
    h = tanh(pre)
    logits = add(matmul(h, params["out_proj"]), params["out_bias"])
    return h, logits


def nll_from_inputs(params: Seq2SeqParams, inputs: Sequence[Tensor], tgt: np.ndarray) -> Tensor:
    """Teacher-forced per-token mean NLL of ``tgt`` given (possibly differentiable) input rows."""
    if len(inputs) != tgt.shape[1]:
        raise ContractError(f"output length {tgt.shape[1]} differs from input length {len(inputs)}")
    ctx = encode(params, inputs)
    h, prev, total = ctx, None, None
    for t in range(tgt.shape[1]):
        h, logits = _decoder_step(params, prev, h, ctx)
        step_loss = cross_entropy(logits, tgt[:, t])
        total = step_loss if total is None else total + step_loss
        prev = Tensor(onehot(tgt[:, t], params.vocab_out))
    return total * (1.0 / tgt.shape[1])


def nll_teacher_forced(params: Seq2SeqParams, src, tgt) -> Tensor:
    """
    Per-token mean NLL of ``tgt`` given ``src`` with the decoder fed gold tokens.

    Args:
        params: encoder-decoder parameters
        src: source ids, one sequence or a B×T batch
        tgt: target ids, same shape as ``src``

    Raises:
        ContractError: source and target lengths differ
    """
    src = _as_batch(src, params.vocab_in, "source")
    tgt = _as_batch(tgt, params.vocab_out, "target")
    if src.shape != tgt.shape:
        raise ContractError(f"source {src.shape} and target {tgt.shape} must have equal shapes")
    return nll_from_inputs(params, _constant_inputs(src, params.vocab_in), tgt)


def batch_nll(params: Seq2SeqParams, pairs: Sequence[CorpusPair]) -> Tensor:
    """Token-weighted mean NLL over pairs of mixed lengths."""
    if not pairs:
        raise DataError("empty batch")
    total_tokens = sum(len(p) for p in pairs)
    loss = None
    for group in group_by_length(pairs):
        src, tgt = stack_pairs(group)
        part = nll_teacher_forced(params, src, tgt) * (src.size / total_tokens)
        loss = part if loss is None else loss + part
    return loss


def _decode(
    params: Seq2SeqParams,
    src: np.ndarray,
    tau: Optional[float],
    rng: Optional[Rng],
    replay: Optional[StraightThroughReplay],
) -> DecodeOutput:
    inputs = _constant_inputs(src, params.vocab_in)
    length = len(inputs)
    ctx = encode(params, inputs)
    h, prev = ctx, None
    tokens, log_probs, rows = [], [], []
    for _ in range(length):
        h, logits = _decoder_step(params, prev, h, ctx)
        logp = _log_probs(logits.data)
        if tau is None:
            ids = logp.argmax(axis=-1)
            prev = Tensor(onehot(ids, params.vocab_out))
        else:
            prev = gumbel_softmax_st(logits, tau, rng, replay)
            ids = prev.data.argmax(axis=-1)
            rows.append(prev)
        tokens.append(ids)
        log_probs.append(logp[np.arange(ids.shape[0]), ids])
    return DecodeOutput(
        tokens=np.stack(tokens, axis=1),
        onehots=rows if tau is not None else None,
        log_probs=np.stack(log_probs, axis=1),
    )


def greedy_decode(params: Seq2SeqParams, src) -> DecodeOutput:
    """Deterministic argmax decoding; nothing is recorded on any tape."""
    src = _as_batch(src, params.vocab_in, "source")
    with no_grad():
        return _decode(params, src, None, None, None)


def gumbel_decode(
    params: Seq2SeqParams,
    src,
    tau: float,
    rng: Optional[Rng],
    replay: Optional[StraightThroughReplay] = None,
) -> DecodeOutput:
    """
    Differentiable decoding through Gumbel straight-through samples.

    Each emitted one-hot row is fed to the next decoder step and returned in
    ``onehots`` for downstream consumers. ``rng=None`` forces the noise to zero.

    Raises:
        ParameterError: tau <= 0
    """
    if not tau > 0:
        raise ParameterError(f"gumbel temperature must be positive, got {tau}")
    src = _as_batch(src, params.vocab_in, "source")
    return _decode(params, src, tau, rng, replay)


# --------------------------------------------------------------------------- #
# Language model
# --------------------------------------------------------------------------- #
def lm_loss(lm: LMParams, tokens) -> Tensor:
    """Differentiable per-token mean NLL of a B×T batch (training path)."""
    tokens = _as_batch(tokens, lm.vocab, "lm tokens")
    batch, length = tokens.shape
    h = Tensor(np.zeros((batch, lm["embed"].shape[1])))
    e = matmul(Tensor(np.ones((batch, 1))), lm["bos"])
    total = None
    for t in range(length):
        h = tanh(add(add(matmul(e, lm["w_in"]), matmul(h, lm["w_rec"])), lm["bias"]))
        logits = add(matmul(h, lm["out_proj"]), lm["out_bias"])
        step_loss = cross_entropy(logits, tokens[:, t])
        total = step_loss if total is None else total + step_loss
        e = matmul(Tensor(onehot(tokens[:, t], lm.vocab)), lm["embed"])
    return total * (1.0 / length)


def lm_nll(lm: LMParams, tokens) -> float:
    """
    Per-token NLL (nats) of pivot tokens under the frozen language model.

    Raises:
        ContractError: the model is not frozen
    """
    lm.check_frozen()
    with no_grad():
        return lm_loss(lm, tokens).item()


def train_lm(
    lm: LMParams,
    sentences: Sequence[Sequence[int]],
    epochs: int,
    rng: Rng,
    lr: float = 3e-3,
    batch_size: int = 32,
    grad_clip: Optional[float] = 5.0,
) -> str:
    """Fit the language model on pivot sentences, then freeze it; returns the freeze hash."""
    if lm.frozen:
        raise ContractError("language model is already frozen")
    if not sentences:
        raise DataError("empty language-model corpus")
    # both sides carry the sentence; only the batching is reused
    pairs = [CorpusPair(tuple(s), tuple(s), PairKind.SRC_PVT) for s in sentences]
    batcher = PairBatcher(pairs)
    opt = Adam(lm.parameters(), lr=lr, grad_clip=grad_clip)
    for _ in range(epochs):
        for batch in batcher.epoch(batch_size, rng):
            tokens, _ = stack_pairs(batch)
            opt.zero_grad()
            with Tape():
                backward(lm_loss(lm, tokens))
            opt.step()
    return lm.freeze()
