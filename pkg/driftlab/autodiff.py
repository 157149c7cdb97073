"""
Reverse-mode automatic differentiation over dense float64 tensors.

Operations executed while a ``Tape`` is active are recorded together with a
backward rule; ``backward(loss)`` replays the tape in reverse order and
accumulates gradients into ``Tensor.grad``. Outside a tape (or inside
``no_grad()``) operations are plain numpy computations.

    with Tape():
        loss = cross_entropy(matmul(x, w), targets)
        backward(loss)
    w.grad  # populated
"""

from __future__ import annotations

import copy
import threading
import zlib
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import (
    ContractError,
    DimensionError,
    NumericError,
    ParameterError,
    TargetIndexError,
    UndefinedCosineError,
)

GUMBEL_CLAMP = 1e-12


class Rng:
    """
    Seeded random stream (numpy PCG64, a permuted congruential generator).

    Every stochastic operation in driftlab takes an explicit Rng. Independent
    streams for one run are obtained with ``derive(name)``, so consuming one
    stream never shifts another.
    """

    algorithm = "PCG64"

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(path)
        entropy = [self.seed & 0xFFFFFFFFFFFFFFFF, *self.path]
        self._gen = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))

    def derive(self, name: str) -> "Rng":
        """Independent child stream keyed by ``name``."""
        return Rng(self.seed, self.path + (zlib.crc32(name.encode("utf-8")),))

    def clone(self) -> "Rng":
        """Copy with identical internal state; both copies yield the same stream."""
        other = Rng.__new__(Rng)
        other.seed = self.seed
        other.path = self.path
        other._gen = copy.deepcopy(self._gen)
        return other

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: Optional[int] = None, size=None):
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size=None, p=None) -> np.ndarray:
        return self._gen.choice(n, size=size, p=p)

    def __repr__(self) -> str:
        return f"Rng({self.algorithm}, seed={self.seed}, path={self.path})"


class Tensor:
    """A float64 array that may take part in a recorded computation."""

    __slots__ = ("data", "requires_grad", "grad", "tape", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.tape: Optional[Tape] = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other) -> "Tensor":
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other) -> "Tensor":
        return sub(self, _lift(other))

    def __rsub__(self, other) -> "Tensor":
        return sub(_lift(other), self)

    def __mul__(self, other) -> "Tensor":
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, _lift(other))

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"


@dataclass
class _Record:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tape:
    """Ordered record of differentiable operations; use as a context manager."""

    def __init__(self):
        self.records: list[_Record] = []

    def record(self, inputs: tuple[Tensor, ...], output: Tensor, backward_rule) -> None:
        self.records.append(_Record(inputs, output, backward_rule))

    def __len__(self) -> int:
        return len(self.records)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()


_local = threading.local()


def _stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> Optional[Tape]:
    stack = _stack()
    return stack[-1] if stack else None


@contextmanager
def no_grad() -> Iterator[None]:
    """Suspend recording, even inside an enclosing Tape."""
    stack = _stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


def _lift(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], backward_rule) -> Tensor:
    tape = active_tape()
    if tape is None or not any(t.requires_grad for t in inputs):
        return Tensor(data)
    out = Tensor(data, requires_grad=True)
    out.tape = tape
    tape.record(inputs, out, backward_rule)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_finite(x: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{op}: input contains NaN or infinite values")


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def _softmax_vjp(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    return y * (g - (g * y).sum(axis=-1, keepdims=True))


# --------------------------------------------------------------------------- #
# Elementwise and linear algebra
# --------------------------------------------------------------------------- #
def add(a: Tensor, b: Tensor) -> Tensor:
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def scale(a: Tensor, factor: float) -> Tensor:
    return _result(a.data * factor, (a,), lambda g: (g * factor,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    Matrix product of an m×k and a k×n tensor.

    Raises:
        DimensionError: if either input is not 2-D or the inner dimensions differ
    """
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return _result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _result(y, (a,), lambda g: (g * (1.0 - y * y),))


def sum(a: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return _result(np.asarray(a.data.sum()), (a,), lambda g: (np.full(a.shape, float(g)),))


def mean(a: Tensor) -> Tensor:
    n = a.size
    return _result(np.asarray(a.data.mean()), (a,), lambda g: (np.full(a.shape, float(g) / n),))


def dot(a: Tensor, b: Tensor) -> Tensor:
    return sum(mul(a, b))


# --------------------------------------------------------------------------- #
# Normalizations and losses
# --------------------------------------------------------------------------- #
def log_softmax(logits: Tensor) -> Tensor:
    """Log-probabilities over the last dimension, stabilized by max-subtraction."""
    x = logits.data
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError(f"log_softmax needs a last dimension >= 1, got {logits.shape}")
    _check_finite(x, "log_softmax")
    z = x - x.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    probs = np.exp(out)
    return _result(out, (logits,), lambda g: (g - probs * g.sum(axis=-1, keepdims=True),))


def softmax(logits: Tensor) -> Tensor:
    _check_finite(logits.data, "softmax")
    y = _softmax(logits.data)
    return _result(y, (logits,), lambda g: (_softmax_vjp(y, g),))


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """
    Mean negative log-likelihood of ``targets`` under row-wise softmax(logits).

    Args:
        logits: B×V tensor
        targets: B integer class indices

    Raises:
        TargetIndexError: a target is outside [0, V)
    """
    if logits.data.ndim != 2:
        raise DimensionError(f"cross_entropy expects B×V logits, got {logits.shape}")
    batch, vocab = logits.shape
    targets = np.asarray(targets, dtype=np.int64).reshape(-1)
    if targets.shape[0] != batch:
        raise DimensionError(f"cross_entropy: {batch} rows but {targets.shape[0]} targets")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise TargetIndexError(f"cross_entropy: target outside [0, {vocab})")
    _check_finite(logits.data, "cross_entropy")
    x = logits.data
    z = x - x.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    rows = np.arange(batch)
    loss = -logp[rows, targets].mean()

    def backward_rule(g):
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        return (grad * (float(g) / batch),)

    return _result(np.asarray(loss), (logits,), backward_rule)


# --------------------------------------------------------------------------- #
# Gumbel straight-through
# --------------------------------------------------------------------------- #
class StraightThroughReplay:
    """
    Records Gumbel draws on the first pass and replays them afterwards.

    In replay mode ``gumbel_softmax_st`` returns ``hard₀ + y_soft(θ) − y_soft₀``,
    whose value at the recorded point equals the one-hot sample and whose true
    derivative equals the straight-through gradient. Finite differences of a
    replayed pipeline therefore check the straight-through backward.
    """

    def __init__(self):
        self._draws: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = []
        self._cursor = 0
        self.frozen = False

    def rewind(self) -> None:
        if self._draws:
            self.frozen = True
        self._cursor = 0

    def store(self, noise: np.ndarray, hard: np.ndarray, soft: np.ndarray) -> None:
        self._draws.append((noise, hard, soft))

    def next(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if self._cursor >= len(self._draws):
            raise ContractError("replay exhausted: the pipeline drew more samples than recorded")
        draw = self._draws[self._cursor]
        self._cursor += 1
        return draw


def sample_gumbel(shape, rng: Rng) -> np.ndarray:
    """g = −log(−log(u)), u ~ Uniform(0, 1) clamped to [1e-12, 1 − 1e-12]."""
    u = np.clip(rng.uniform(0.0, 1.0, size=shape), GUMBEL_CLAMP, 1.0 - GUMBEL_CLAMP)
    return -np.log(-np.log(u))


def gumbel_softmax_st(
    logits: Tensor,
    tau: float,
    rng: Optional[Rng],
    replay: Optional[StraightThroughReplay] = None,
) -> Tensor:
    """
    Gumbel-softmax straight-through sample over the last dimension.

    Forward returns the exact one-hot at argmax(y_soft) with
    y_soft = softmax((logits + g) / tau); backward treats the output as y_soft.

    Args:
        logits: ...×V tensor
        tau: temperature, > 0
        rng: noise source; ``None`` forces the noise to zero
        replay: optional recorder used by finite-difference checks

    Raises:
        ParameterError: tau <= 0
    """
    if not tau > 0:
        raise ParameterError(f"gumbel temperature must be positive, got {tau}")
    x = logits.data
    _check_finite(x, "gumbel_softmax_st")

    replaying = replay is not None and replay.frozen
    if replaying:
        noise, hard0, soft0 = replay.next()
    elif rng is None:
        noise = np.zeros_like(x)
    else:
        noise = sample_gumbel(x.shape, rng)

    y_soft = _softmax((x + noise) / tau)
    if replaying:
        out = hard0 + (y_soft - soft0)
    else:
        index = y_soft.argmax(axis=-1)
        out = np.zeros_like(y_soft)
        np.put_along_axis(out, index[..., None], 1.0, axis=-1)
        if replay is not None:
            replay.store(noise, out.copy(), y_soft.copy())

    return _result(out, (logits,), lambda g: (_softmax_vjp(y_soft, g) / tau,))


# --------------------------------------------------------------------------- #
# Backward pass and gradient utilities
# --------------------------------------------------------------------------- #
def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=np.float64).reshape(t.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def backward(loss: Tensor) -> None:
    """
    Populate ``grad`` of every requires_grad tensor reachable from ``loss``.

    Gradients accumulate additively; zero them between optimizer steps.

    Raises:
        ContractError: loss is not a scalar or was not recorded on a tape
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is None:
        raise ContractError("loss was not recorded on a tape")

    pending: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    tensors: dict[int, Tensor] = {id(loss): loss}
    for record in reversed(loss.tape.records):
        g = pending.pop(id(record.output), None)
        if g is None:
            continue
        _accumulate(record.output, g)
        tensors.pop(id(record.output), None)
        for tensor, grad in zip(record.inputs, record.backward(g)):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in pending:
                pending[key] = pending[key] + grad
            else:
                pending[key] = grad
                tensors[key] = tensor
    # what is left are leaves (parameters)
    for key, g in pending.items():
        _accumulate(tensors[key], g)


def flatten_grads(tensors: Sequence[Tensor]) -> np.ndarray:
    """Concatenate gradients in the given order; missing grads count as zeros."""
    parts = [
        (t.grad if t.grad is not None else np.zeros(t.shape)).reshape(-1) for t in tensors
    ]
    return np.concatenate(parts) if parts else np.zeros(0)


def grad_cosine(g1: np.ndarray, g2: np.ndarray) -> float:
    """
    Cosine similarity of two flattened gradient vectors.

    Raises:
        DimensionError: lengths differ
        UndefinedCosineError: either vector has zero norm
    """
    g1 = np.asarray(g1, dtype=np.float64).reshape(-1)
    g2 = np.asarray(g2, dtype=np.float64).reshape(-1)
    if g1.shape != g2.shape:
        raise DimensionError(f"grad_cosine length mismatch: {g1.size} vs {g2.size}")
    n1 = np.linalg.norm(g1)
    n2 = np.linalg.norm(g2)
    if n1 == 0.0 or n2 == 0.0:
        raise UndefinedCosineError("cosine undefined for a zero gradient")
    return float(np.clip(np.dot(g1, g2) / (n1 * n2), -1.0, 1.0))


def onehot(ids, vocab: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    return np.eye(vocab)[ids]
