"""
Finite-difference self-test of the autodiff engine.

Each check compares analytic gradients against central differences at random
parameter coordinates. The full sender → receiver pipeline is checked through
``StraightThroughReplay``, whose replayed forward has exactly the
straight-through gradient as its true derivative.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .agents import init_lm, init_params, lm_loss, nll_teacher_forced
from .autodiff import Rng, StraightThroughReplay, Tape, Tensor, backward, no_grad
from .errors import ParameterError
from .game import CorpusPair, PairKind
from .training import interactive_loss

logger = logging.getLogger(__name__)

DEFAULT_PROBES = 20
DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    probes: int


@dataclass
class GradcheckReport:
    results: list[GradcheckResult] = field(default_factory=list)
    tolerance: float = DEFAULT_TOLERANCE
    seconds: float = 0.0

    @property
    def max_rel_error(self) -> float:
        return max((r.max_rel_error for r in self.results), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-5)


def numeric_gradient_check(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    rng: Rng,
    probes: int = DEFAULT_PROBES,
    h: float = DEFAULT_STEP,
) -> float:
    """
    Max relative error between analytic and central-difference gradients.

    Args:
        loss_fn: recomputes a scalar loss from the current values of ``params``
        params: tensors to differentiate; coordinates are probed uniformly
            over their concatenation
        rng: probe selection stream
        probes: number of coordinates checked
        h: finite-difference step
    """
    if probes < 1 or h <= 0:
        raise ParameterError(f"need probes >= 1 and h > 0, got {probes}, {h}")
    params = list(params)
    for p in params:
        p.grad = None
    with Tape():
        backward(loss_fn())
    analytic = [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]

    sizes = np.array([p.size for p in params])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    worst = 0.0
    for flat in rng.integers(int(sizes.sum()), size=probes):
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        index = np.unravel_index(int(flat - offsets[k]), params[k].shape)
        original = params[k].data[index]
        with no_grad():
            params[k].data[index] = original + h
            plus = loss_fn().item()
            params[k].data[index] = original - h
            minus = loss_fn().item()
        params[k].data[index] = original
        worst = max(worst, relative_error(float(analytic[k][index]), (plus - minus) / (2 * h)))
    for p in params:
        p.grad = None
    return worst


def _leaf(rng: Rng, *shape: int) -> Tensor:
    return Tensor(rng.uniform(-1.0, 1.0, size=shape), requires_grad=True)


def _weighted(out: Tensor, w: np.ndarray) -> Tensor:
    return ad.sum(ad.mul(out, Tensor(w)))


def _op_checks(rng: Rng) -> dict[str, tuple[Callable[[], Tensor], list[Tensor]]]:
    a, b = _leaf(rng, 3, 4), _leaf(rng, 3, 4)
    m1, m2 = _leaf(rng, 3, 5), _leaf(rng, 5, 4)
    row = _leaf(rng, 4)
    v1, v2 = _leaf(rng, 6), _leaf(rng, 6)
    logits = _leaf(rng, 4, 7)
    w34 = rng.uniform(-1.0, 1.0, size=(3, 4))
    w47 = rng.uniform(-1.0, 1.0, size=(4, 7))
    targets = rng.integers(7, size=4)
    return {
        "add": (lambda: _weighted(ad.add(a, row), w34), [a, row]),
        "sub": (lambda: _weighted(ad.sub(a, b), w34), [a, b]),
        "mul": (lambda: _weighted(ad.mul(a, b), w34), [a, b]),
        "scale": (lambda: _weighted(ad.scale(a, -1.7), w34), [a]),
        "matmul": (lambda: _weighted(ad.matmul(m1, m2), w34), [m1, m2]),
        "tanh": (lambda: _weighted(ad.tanh(a), w34), [a]),
        "sum": (lambda: ad.sum(ad.mul(a, a)), [a]),
        "mean": (lambda: ad.mean(ad.mul(a, b)), [a, b]),
        "dot": (lambda: ad.dot(v1, v2), [v1, v2]),
        "log_softmax": (lambda: _weighted(ad.log_softmax(logits), w47), [logits]),
        "softmax": (lambda: _weighted(ad.softmax(logits), w47), [logits]),
        "cross_entropy": (lambda: ad.cross_entropy(logits, targets), [logits]),
    }


def _replayed(fn: Callable[[StraightThroughReplay], Tensor]) -> Callable[[], Tensor]:
    replay = StraightThroughReplay()
    with no_grad():
        fn(replay)
    replay.rewind()

    def loss_fn() -> Tensor:
        replay.rewind()
        return fn(replay)
    return loss_fn


def run_gradcheck(
    seed: int = 0,
    probes: int = DEFAULT_PROBES,
    h: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
    vocab: int = 6,
    hidden: int = 8,
    gumbel_rows: int = 3,
) -> GradcheckReport:
    """
    Check every differentiable op, the agents' losses and the Gumbel pipeline.

    ``gumbel_rows`` sets how many logit vectors the straight-through check draws.
    """
    started = time.perf_counter()
    rng = Rng(seed).derive("gradcheck")
    report = GradcheckReport(tolerance=tolerance)

    checks = _op_checks(rng.derive("ops"))

    st_logits = _leaf(rng, gumbel_rows, vocab)
    st_weights = rng.uniform(-1.0, 1.0, size=(gumbel_rows, vocab))
    noise_rng = rng.derive("gumbel")
    checks["gumbel_softmax_st"] = (
        _replayed(lambda r: _weighted(ad.gumbel_softmax_st(st_logits, 0.5, noise_rng, r), st_weights)),
        [st_logits],
    )

    sender = init_params(seed + 1, vocab, vocab, hidden)
    receiver = init_params(seed + 2, vocab, vocab, hidden)
    lm = init_lm(seed + 3, vocab, hidden)
    src = rng.integers(vocab, size=(3, 4))
    tgt = rng.integers(vocab, size=(3, 4))
    checks["seq2seq_nll"] = (lambda: nll_teacher_forced(sender, src, tgt), sender.parameters())
    checks["lm_loss"] = (lambda: lm_loss(lm, tgt), lm.parameters())

    pairs = [CorpusPair(tuple(s), tuple(t), PairKind.SRC_TGT) for s, t in zip(src.tolist(), tgt.tolist())]
    pipe_rng = rng.derive("pipeline")
    checks["gumbel_pipeline"] = (
        _replayed(lambda r: interactive_loss(sender, receiver, pairs, 0.5, pipe_rng, r)),
        sender.parameters() + receiver.parameters(),
    )

    for name, (loss_fn, params) in checks.items():
        error = numeric_gradient_check(loss_fn, params, rng.derive(f"probe-{name}"), probes, h)
        report.results.append(GradcheckResult(name, error, probes))
        logger.info(f"gradcheck {name}: max relative error {error:.2e}")
    report.seconds = time.perf_counter() - started
    return report
