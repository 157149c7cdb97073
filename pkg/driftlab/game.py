"""
Synthetic pivot-translation game.

Three toy languages (source, pivot, target) realize one shared concept
space through random bijective lexicons; the target language additionally
reverses word order. Corpora are drawn from a Zipf distribution over
concepts whose rank order can be permuted, which gives a "generic"
pretraining distribution and a frequency-shifted "task" distribution.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .autodiff import Rng
from .errors import ConceptIndexError, DataError, ParameterError, VocabularyError


class Language(str, Enum):
    SRC = "src"
    PVT = "pvt"
    TGT = "tgt"

    @property
    def prefix(self) -> str:
        return {"src": "s", "pvt": "p", "tgt": "t"}[self.value]


class PairKind(str, Enum):
    SRC_PVT = "src-pvt"
    PVT_TGT = "pvt-tgt"
    SRC_TGT = "src-tgt"

    @property
    def source(self) -> Language:
        return Language(self.value.split("-")[0])

    @property
    def target(self) -> Language:
        return Language(self.value.split("-")[1])


@dataclass(frozen=True)
class GameSpec:
    """Concept space of size V and one lexicon (concept → token id) per language."""
    vocab_size: int
    src_lexicon: tuple[int, ...]
    pvt_lexicon: tuple[int, ...]
    tgt_lexicon: tuple[int, ...]
    reverse_target: bool = True
    seed: int = 0

    def __post_init__(self):
        for which in Language:
            lexicon = self.lexicon(which)
            if sorted(lexicon.tolist()) != list(range(self.vocab_size)):
                raise ParameterError(f"{which.value} lexicon is not a bijection on 0..{self.vocab_size - 1}")

    def lexicon(self, which: Language | str) -> np.ndarray:
        which = Language(which)
        return np.asarray(getattr(self, f"{which.value}_lexicon"), dtype=np.int64)

    def inverse(self, which: Language | str) -> np.ndarray:
        return np.argsort(self.lexicon(which))

    def token_name(self, token: int, which: Language | str) -> str:
        width = max(2, len(str(self.vocab_size - 1)))
        return f"{Language(which).prefix}{int(token):0{width}d}"

    def parse_token(self, text: str, which: Language | str) -> int:
        which = Language(which)
        if not text.startswith(which.prefix) or not text[1:].isdigit():
            raise VocabularyError(f"'{text}' is not a {which.value} token")
        token = int(text[1:])
        if token >= self.vocab_size:
            raise VocabularyError(f"'{text}' is outside the {which.value} vocabulary")
        return token

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size,
            "src_lexicon": list(self.src_lexicon),
            "pvt_lexicon": list(self.pvt_lexicon),
            "tgt_lexicon": list(self.tgt_lexicon),
            "reverse_target": self.reverse_target,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GameSpec":
        return cls(
            vocab_size=int(data["vocab_size"]),
            src_lexicon=tuple(data["src_lexicon"]),
            pvt_lexicon=tuple(data["pvt_lexicon"]),
            tgt_lexicon=tuple(data["tgt_lexicon"]),
            reverse_target=bool(data.get("reverse_target", True)),
            seed=int(data.get("seed", 0)),
        )


@dataclass(frozen=True)
class DistributionSpec:
    """
    Permuted Zipf distribution over concepts.

    ``rank_permutation[r]`` is the concept holding frequency rank ``r``;
    ``None`` means the identity (concept c has rank c).
    """
    zipf_exponent: float = 1.0
    rank_permutation: Optional[tuple[int, ...]] = None
    length_range: tuple[int, int] = (4, 8)

    def __post_init__(self):
        low, high = self.length_range
        if low < 1 or high < low:
            raise ParameterError(f"invalid length range {self.length_range}")
        if self.rank_permutation is not None:
            n = len(self.rank_permutation)
            if sorted(self.rank_permutation) != list(range(n)):
                raise ParameterError("rank_permutation is not a bijection")

    @classmethod
    def shifted(
        cls,
        vocab_size: int,
        seed: int,
        zipf_exponent: float = 1.0,
        length_range: tuple[int, int] = (4, 8),
    ) -> "DistributionSpec":
        """Seeded random rank permutation whose most frequent concept is not concept 0."""
        perm = Rng(seed).derive("rank-permutation").permutation(vocab_size)
        if perm[0] == 0:
            perm[[0, 1]] = perm[[1, 0]]
        return cls(zipf_exponent, tuple(int(c) for c in perm), tuple(length_range))

    def probabilities(self, vocab_size: int) -> np.ndarray:
        ranks = np.arange(1, vocab_size + 1, dtype=np.float64)
        weights = ranks ** (-self.zipf_exponent)
        weights /= weights.sum()
        if self.rank_permutation is None:
            return weights
        if len(self.rank_permutation) != vocab_size:
            raise ParameterError(
                f"rank_permutation has {len(self.rank_permutation)} entries, game has {vocab_size} concepts"
            )
        probs = np.empty(vocab_size)
        probs[np.asarray(self.rank_permutation)] = weights
        return probs


@dataclass(frozen=True)
class CorpusPair:
    source: tuple[int, ...]
    target: tuple[int, ...]
    kind: PairKind

    def __post_init__(self):
        if not self.source or len(self.source) != len(self.target):
            raise DataError(
                f"corpus pair sides must be nonempty and equally long ({len(self.source)} vs {len(self.target)})"
            )

    def __len__(self) -> int:
        return len(self.source)


@dataclass(frozen=True)
class EvalExample:
    """A task source with both gold references."""
    src: tuple[int, ...]
    gold_pvt: tuple[int, ...]
    gold_tgt: tuple[int, ...]


def make_game(seed: int, vocab_size: int = 20, reverse_target: bool = True) -> GameSpec:
    """
    Draw the three lexicons as uniform random permutations.

    Raises:
        ParameterError: vocab_size < 2
    """
    if vocab_size < 2:
        raise ParameterError(f"the game needs at least 2 concepts, got {vocab_size}")
    rng = Rng(seed).derive("lexicons")
    src, pvt, tgt = (tuple(int(t) for t in rng.permutation(vocab_size)) for _ in range(3))
    return GameSpec(vocab_size, src, pvt, tgt, reverse_target, seed)


def render(concepts: Sequence[int], which: Language | str, spec: GameSpec) -> np.ndarray:
    """
    Surface realization of a concept sequence in one language.

    Raises:
        ConceptIndexError: a concept id is outside [0, V)
    """
    which = Language(which)
    concepts = np.asarray(concepts, dtype=np.int64).reshape(-1)
    if concepts.size and (concepts.min() < 0 or concepts.max() >= spec.vocab_size):
        raise ConceptIndexError(f"concept id outside [0, {spec.vocab_size})")
    tokens = spec.lexicon(which)[concepts]
    if which is Language.TGT and spec.reverse_target:
        tokens = tokens[::-1]
    return tokens.copy()


def to_concepts(tokens: Sequence[int], which: Language | str, spec: GameSpec) -> np.ndarray:
    """Invert ``render``."""
    which = Language(which)
    tokens = _validate_tokens(tokens, which, spec)
    if which is Language.TGT and spec.reverse_target:
        tokens = tokens[::-1]
    return spec.inverse(which)[tokens]


def _validate_tokens(tokens, which: Language, spec: GameSpec) -> np.ndarray:
    if len(tokens) and isinstance(tokens[0], str):
        tokens = [spec.parse_token(t, which) for t in tokens]
    tokens = np.asarray(tokens, dtype=np.int64).reshape(-1)
    if tokens.size and (tokens.min() < 0 or tokens.max() >= spec.vocab_size):
        raise VocabularyError(f"token id outside the {which.value} vocabulary of size {spec.vocab_size}")
    return tokens


def gold_translate(src_tokens: Sequence[int], spec: GameSpec) -> tuple[np.ndarray, np.ndarray]:
    """
    Gold pivot and target renderings of a source sentence.

    Raises:
        VocabularyError: a token is not a valid source token
    """
    concepts = to_concepts(src_tokens, Language.SRC, spec)
    return render(concepts, Language.PVT, spec), render(concepts, Language.TGT, spec)


def sample_concepts(dist: DistributionSpec, vocab_size: int, size: int, rng: Rng) -> np.ndarray:
    return rng.choice(vocab_size, size=size, p=dist.probabilities(vocab_size))


def _sample_meanings(spec: GameSpec, dist: DistributionSpec, n: int, rng: Rng) -> list[np.ndarray]:
    if n < 1:
        raise ParameterError(f"corpus size must be >= 1, got {n}")
    low, high = dist.length_range
    lengths = rng.integers(low, high + 1, size=n)
    flat = sample_concepts(dist, spec.vocab_size, int(lengths.sum()), rng)
    return np.split(flat, np.cumsum(lengths)[:-1])


def sample_corpus(
    spec: GameSpec,
    dist: DistributionSpec,
    n: int,
    kind: PairKind | str,
    rng: Rng,
) -> list[CorpusPair]:
    """
    Draw ``n`` parallel pairs: lengths uniform in ``dist.length_range``,
    concepts i.i.d. from the permuted Zipf distribution.
    """
    kind = PairKind(kind)
    return [
        CorpusPair(
            tuple(int(t) for t in render(m, kind.source, spec)),
            tuple(int(t) for t in render(m, kind.target, spec)),
            kind,
        )
        for m in _sample_meanings(spec, dist, n, rng)
    ]


def make_eval_set(spec: GameSpec, dist: DistributionSpec, n: int, rng: Rng) -> list[EvalExample]:
    examples = []
    for m in _sample_meanings(spec, dist, n, rng):
        examples.append(EvalExample(
            tuple(int(t) for t in render(m, Language.SRC, spec)),
            tuple(int(t) for t in render(m, Language.PVT, spec)),
            tuple(int(t) for t in render(m, Language.TGT, spec)),
        ))
    return examples


# --------------------------------------------------------------------------- #
# Batching
# --------------------------------------------------------------------------- #
def group_by_length(pairs: Sequence[CorpusPair]) -> list[list[CorpusPair]]:
    """Split pairs into equal-length groups, ordered by first appearance."""
    groups: dict[int, list[CorpusPair]] = {}
    for pair in pairs:
        groups.setdefault(len(pair), []).append(pair)
    return list(groups.values())


def stack_pairs(pairs: Sequence[CorpusPair]) -> tuple[np.ndarray, np.ndarray]:
    """B×T source and target id arrays of an equal-length group."""
    if not pairs:
        raise DataError("cannot stack an empty batch")
    lengths = {len(p) for p in pairs}
    if len(lengths) != 1:
        raise DataError(f"pairs of mixed lengths {sorted(lengths)} cannot be stacked")
    src = np.array([p.source for p in pairs], dtype=np.int64)
    tgt = np.array([p.target for p in pairs], dtype=np.int64)
    return src, tgt


@dataclass
class PairBatcher:
    """Samples equal-length minibatches from a corpus."""
    pairs: list[CorpusPair]
    _buckets: dict[int, list[int]] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.pairs:
            raise DataError("empty corpus")
        self.pairs = list(self.pairs)
        self._buckets = defaultdict(list)
        for i, pair in enumerate(self.pairs):
            self._buckets[len(pair)].append(i)

    def __len__(self) -> int:
        return len(self.pairs)

    def sample(self, batch_size: int, rng: Rng) -> list[CorpusPair]:
        """Pick a random anchor pair, then ``batch_size`` pairs of its length."""
        anchor = self.pairs[int(rng.integers(len(self.pairs)))]
        bucket = self._buckets[len(anchor)]
        picks = rng.integers(len(bucket), size=batch_size)
        return [self.pairs[bucket[i]] for i in picks]

    def sample_any(self, k: int, rng: Rng) -> list[CorpusPair]:
        """``k`` pairs uniformly at random, any lengths."""
        if k <= 0:
            return []
        return [self.pairs[i] for i in rng.integers(len(self.pairs), size=k)]

    def epoch(self, batch_size: int, rng: Rng) -> Iterator[list[CorpusPair]]:
        """One shuffled pass over the corpus in equal-length batches."""
        batches = []
        for length in sorted(self._buckets):
            bucket = self._buckets[length]
            order = rng.permutation(len(bucket))
            for start in range(0, len(bucket), batch_size):
                batches.append([self.pairs[bucket[i]] for i in order[start:start + batch_size]])
        for i in rng.permutation(len(batches)):
            yield batches[i]


# --------------------------------------------------------------------------- #
# Corpus files: one pair per line, "src<TAB>tgt<TAB>kind"
# --------------------------------------------------------------------------- #
def write_corpus(path: str | Path, pairs: Sequence[CorpusPair], spec: GameSpec) -> None:
    lines = []
    for pair in pairs:
        src = " ".join(spec.token_name(t, pair.kind.source) for t in pair.source)
        tgt = " ".join(spec.token_name(t, pair.kind.target) for t in pair.target)
        lines.append(f"{src}\t{tgt}\t{pair.kind.value}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def read_corpus(path: str | Path, spec: GameSpec) -> list[CorpusPair]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Corpus file not found: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise DataError(f"{path}: not valid UTF-8 ({e.reason} at byte {e.start})") from e
    pairs = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(fields)}")
        try:
            kind = PairKind(fields[2])
        except ValueError:
            raise DataError(f"{path}:{lineno}: unknown pair kind '{fields[2]}'") from None
        src = tuple(spec.parse_token(t, kind.source) for t in fields[0].split())
        tgt = tuple(spec.parse_token(t, kind.target) for t in fields[1].split())
        pairs.append(CorpusPair(src, tgt, kind))
    return pairs


def write_game(path: str | Path, spec: GameSpec) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")


def read_game(path: str | Path) -> GameSpec:
    return GameSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
