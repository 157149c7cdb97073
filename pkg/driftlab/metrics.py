"""
Task and grounding measurements.

    bleu_tgt   task score: BLEU of generated targets vs gold targets
    bleu_pvt   grounding score: BLEU of generated pivots vs gold pivots
    nll        frozen-LM NLL of generated pivots (nats/token)
    real_nll   sender NLL of gold pivots given the source (nats/token)
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter, deque
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .agents import LMParams, Seq2SeqParams, greedy_decode, lm_loss, nll_teacher_forced
from .autodiff import no_grad
from .errors import ContractError, DataError
from .game import EvalExample

MAX_ORDER = 4
CSV_FIELDS = [
    "step", "method", "seed", "bleu_tgt", "bleu_pvt", "nll", "real_nll", "grad_cos_raw", "grad_cos_ma100",
]


@dataclass
class MetricsRecord:
    step: int
    bleu_tgt: float
    bleu_pvt: float
    nll: float
    real_nll: float
    grad_cos_raw: Optional[float] = None
    grad_cos_ma100: Optional[float] = None
    method: str = ""
    seed: int = 0

    def __post_init__(self):
        for name in ("bleu_tgt", "bleu_pvt"):
            if not 0.0 <= getattr(self, name) <= 100.0:
                raise ContractError(f"{name}={getattr(self, name)} outside [0, 100]")
        for name in ("nll", "real_nll"):
            if not getattr(self, name) >= 0.0:
                raise ContractError(f"{name}={getattr(self, name)} is negative")
        for name in ("grad_cos_raw", "grad_cos_ma100"):
            value = getattr(self, name)
            if value is not None and not -1.0 <= value <= 1.0:
                raise ContractError(f"{name}={value} outside [-1, 1]")

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in CSV_FIELDS}


# --------------------------------------------------------------------------- #
# BLEU
# --------------------------------------------------------------------------- #
def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_corpus(hypotheses: Sequence[Sequence], references: Sequence[Sequence]) -> float:
    """
    Corpus-level BLEU in [0, 100] with one reference per hypothesis.

    Clipped n-gram precisions are pooled over the corpus for n up to
    min(4, shortest hypothesis length) (at least 1). A zero match count for
    n >= 2 is smoothed to 1 / (count + 1); a zero unigram match count gives 0.
    Brevity penalty: exp(min(0, 1 − ref_len / hyp_len)).

    Raises:
        DataError: empty corpus or mismatched list lengths
    """
    if not hypotheses:
        raise DataError("BLEU of an empty corpus")
    if len(hypotheses) != len(references):
        raise DataError(f"{len(hypotheses)} hypotheses but {len(references)} references")
    hypotheses = [list(h) for h in hypotheses]
    references = [list(r) for r in references]
    hyp_len = sum(len(h) for h in hypotheses)
    ref_len = sum(len(r) for r in references)
    if hyp_len == 0:
        return 0.0

    max_order = max(1, min(MAX_ORDER, min(len(h) for h in hypotheses)))
    log_precision = 0.0
    for n in range(1, max_order + 1):
        matches = total = 0
        for hyp, ref in zip(hypotheses, references):
            hyp_counts = _ngrams(hyp, n)
            ref_counts = _ngrams(ref, n)
            matches += sum(min(c, ref_counts[g]) for g, c in hyp_counts.items())
            total += max(0, len(hyp) - n + 1)
        if matches == 0:
            if n == 1:
                return 0.0
            matches, total = 1, total + 1
        log_precision += math.log(matches / total)

    brevity = math.exp(min(0.0, 1.0 - ref_len / hyp_len))
    return 100.0 * brevity * math.exp(log_precision / max_order)


# --------------------------------------------------------------------------- #
# Pipeline evaluation
# --------------------------------------------------------------------------- #
def _length_groups(eval_set: Sequence[EvalExample], batch_size: int) -> list[list[EvalExample]]:
    groups: dict[int, list[EvalExample]] = {}
    for example in eval_set:
        groups.setdefault(len(example.src), []).append(example)
    chunks = []
    for group in groups.values():
        for start in range(0, len(group), batch_size):
            chunks.append(group[start:start + batch_size])
    return chunks


def real_nll_metric(sender: Seq2SeqParams, eval_set: Sequence[EvalExample], batch_size: int = 128) -> float:
    """Token-weighted mean NLL of the gold pivots given the sources under ``sender``."""
    if not eval_set:
        raise DataError("empty evaluation set")
    total, tokens = 0.0, 0
    with no_grad():
        for chunk in _length_groups(eval_set, batch_size):
            src = np.array([e.src for e in chunk])
            pvt = np.array([e.gold_pvt for e in chunk])
            total += nll_teacher_forced(sender, src, pvt).item() * pvt.size
            tokens += pvt.size
    return total / tokens


def eval_pipeline(
    sender: Seq2SeqParams,
    receiver: Seq2SeqParams,
    eval_set: Sequence[EvalExample],
    lm: LMParams,
    step: int = 0,
    batch_size: int = 128,
) -> MetricsRecord:
    """
    Greedy sender → greedy receiver evaluation of the whole pipeline.

    Agents are only read; nothing is recorded or updated.
    """
    if not eval_set:
        raise DataError("empty evaluation set")
    lm.check_frozen()
    pivots, targets, gold_pvt, gold_tgt = [], [], [], []
    nll_sum = 0.0
    with no_grad():
        for chunk in _length_groups(eval_set, batch_size):
            src = np.array([e.src for e in chunk])
            pvt = greedy_decode(sender, src).tokens
            tgt = greedy_decode(receiver, pvt).tokens
            # equal lengths: the chunk mean is the mean of its sentence NLLs
            nll_sum += lm_loss(lm, pvt).item() * len(chunk)
            pivots.extend(pvt.tolist())
            targets.extend(tgt.tolist())
            gold_pvt.extend(list(e.gold_pvt) for e in chunk)
            gold_tgt.extend(list(e.gold_tgt) for e in chunk)
    return MetricsRecord(
        step=step,
        bleu_tgt=bleu_corpus(targets, gold_tgt),
        bleu_pvt=bleu_corpus(pivots, gold_pvt),
        nll=nll_sum / len(eval_set),
        real_nll=real_nll_metric(sender, eval_set, batch_size),
    )


class MovingAverage:
    """Mean of the values logged within the last ``window`` steps."""

    def __init__(self, window: int = 100):
        self.window = window
        self._values: deque[tuple[int, float]] = deque()
        self.latest: Optional[float] = None

    def add(self, step: int, value: Optional[float]) -> None:
        self.latest = value
        if value is not None:
            self._values.append((step, value))
        while self._values and self._values[0][0] <= step - self.window:
            self._values.popleft()

    @property
    def average(self) -> Optional[float]:
        if not self._values:
            return None
        return float(np.clip(np.mean([v for _, v in self._values]), -1.0, 1.0))


# --------------------------------------------------------------------------- #
# Trajectory files
# --------------------------------------------------------------------------- #
def _csv_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


class MetricsWriter:
    """Appends records to ``metrics.csv`` and ``metrics.jsonl`` as they arrive."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.csv_path = self.directory / "metrics.csv"
        self.jsonl_path = self.directory / "metrics.jsonl"
        self.csv_path.write_text(",".join(CSV_FIELDS) + "\n", encoding="utf-8")
        self.jsonl_path.write_text("", encoding="utf-8")

    def append(self, record: MetricsRecord) -> None:
        row = record.to_dict()
        with self.csv_path.open("a", encoding="utf-8") as f:
            f.write(",".join(_csv_value(row[k]) for k in CSV_FIELDS) + "\n")
        with self.jsonl_path.open("a", encoding="utf-8") as f:
            f.write(json.dumps(row) + "\n")


def write_metrics_csv(path: str | Path, records: Sequence[MetricsRecord]) -> None:
    lines = [",".join(CSV_FIELDS)]
    for record in records:
        row = record.to_dict()
        lines.append(",".join(_csv_value(row[k]) for k in CSV_FIELDS))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_metrics_csv(path: str | Path) -> list[MetricsRecord]:
    """
    Raises:
        DataError: the header differs from the metrics schema
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Metrics file not found: {path}")
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != CSV_FIELDS:
            raise DataError(f"{path}: unexpected columns {reader.fieldnames}")
        records = []
        for row in reader:
            records.append(MetricsRecord(
                step=int(row["step"]),
                method=row["method"],
                seed=int(row["seed"]),
                bleu_tgt=float(row["bleu_tgt"]),
                bleu_pvt=float(row["bleu_pvt"]),
                nll=float(row["nll"]),
                real_nll=float(row["real_nll"]),
                grad_cos_raw=float(row["grad_cos_raw"]) if row["grad_cos_raw"] else None,
                grad_cos_ma100=float(row["grad_cos_ma100"]) if row["grad_cos_ma100"] else None,
            ))
    return records
