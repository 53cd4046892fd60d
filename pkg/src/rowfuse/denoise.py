"""Training-data denoising via a false-positive detector.

Answer-bearing blocks are noisy supervision: when several blocks of a
question's table contain the answer string, only one actually supports
the question. The pipeline here:

  1. partition questions by answer-block multiplicity (exactly one,
     two-or-more, zero);
  2. for each single-answer question, mine the highest-BM25 non-answer
     block of its table as a training negative;
  3. train a binary scorer on those clean positive/negative pairs with
     binary cross-entropy;
  4. denoise the multi-answer questions by keeping only their
     highest-scoring answer block.

The scorer is linear over hashed features of the question paired with
the block text. Bag-of-token features of the concatenation alone are
additive in question and block, which makes the ranking among a
question's candidate blocks question-independent; the feature map
therefore adds question-token x block-token conjunction features and
token-overlap features so the score can depend on how the two texts
interact.

Detector file format ("FPDX", little-endian): magic, u32 version,
u32 feature dimension, f32 bias, f32 weights[dimension].

Denoised dataset records (line-delimited JSON):
    {"question_id", "chosen_block", "provenance", "score"}
where provenance is "D1-kept" or "D2plus-denoised" and score is the
detector score for denoised instances, null for pass-through ones.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import FusedBlock, QAInstance
from .jsonl import read_records, write_records
from .sparse import Bm25Index, bm25_scores
from .text import SparseVector, hash_index, normalize_counts, token_counts, tokenize

logger = logging.getLogger(__name__)

MAGIC = b"FPDX"
VERSION = 1

SCORE_CLAMP = 1e-7

DEFAULT_DIMENSION = 1 << 15


class NoNegativeAvailable(ValueError):
    """Every block of the question's table contains the answer."""


class DetectorFormatError(ValueError):
    """Detector file is corrupt or has an unsupported version."""


@dataclass
class DatasetPartition:
    """Disjoint cover of the input by answer-block multiplicity."""

    single_answer: list[QAInstance] = field(default_factory=list)
    multi_answer: list[QAInstance] = field(default_factory=list)
    no_answer: list[QAInstance] = field(default_factory=list)


def partition_dataset(instances: list[QAInstance]) -> DatasetPartition:
    """Split by |answer_blocks|: exactly one, two or more, zero."""
    partition = DatasetPartition()
    for inst in instances:
        count = len(inst.answer_blocks)
        if count == 1:
            partition.single_answer.append(inst)
        elif count >= 2:
            partition.multi_answer.append(inst)
        else:
            partition.no_answer.append(inst)
    return partition


def pair_features(question: str, block_text: str, dimension: int) -> SparseVector:
    """Unit-norm hashed features of a (question, block) pair.

    Combines unigram+bigram counts of "question [SEP] block" with
    question-token x block-token conjunctions ("x:" namespace, set
    semantics), per-token overlap indicators ("o:"), and one overlap-size
    feature ("o#") whose weight is the number of shared distinct tokens.
    """
    q_tokens = tokenize(question)
    b_tokens = tokenize(block_text)
    counts = token_counts(q_tokens + ["[SEP]"] + b_tokens, dimension)
    q_set = set(q_tokens)
    b_set = set(b_tokens)
    for tq in q_set:
        for tb in b_set:
            i = hash_index("x:" + tq + "\x1f" + tb, dimension)
            counts[i] = counts.get(i, 0.0) + 1.0
    shared = q_set & b_set
    for tok in shared:
        i = hash_index("o:" + tok, dimension)
        counts[i] = counts.get(i, 0.0) + 1.0
    if shared:
        i = hash_index("o#", dimension)
        counts[i] = counts.get(i, 0.0) + float(len(shared))
    return normalize_counts(counts, dimension)


@dataclass
class Detector:
    """Linear scorer over pair features; score = sigmoid(w . x + c)."""

    weights: np.ndarray  # (dimension,) float32 after training
    bias: float
    dimension: int

    def score_features(self, feats: SparseVector) -> float:
        idx, vals = feats.as_arrays()
        w = np.asarray(self.weights, dtype=np.float64)
        return _sigmoid(float(w[idx] @ vals) + self.bias)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def bce_loss(score: float, label: float) -> float:
    """Binary cross-entropy with the score clamped to keep the loss finite."""
    s = min(max(score, SCORE_CLAMP), 1.0 - SCORE_CLAMP)
    return -(label * math.log(s) + (1.0 - label) * math.log(1.0 - s))


def pair_loss(weights: np.ndarray, bias: float, feats: SparseVector, label: float) -> float:
    """BCE of one pair as a pure function of the parameters (for gradient checks)."""
    idx, vals = feats.as_arrays()
    s = _sigmoid(float(np.asarray(weights, dtype=np.float64)[idx] @ vals) + bias)
    return bce_loss(s, label)


def pair_grads(weights: np.ndarray, bias: float, feats: SparseVector,
               label: float) -> tuple[float, dict[int, float], float]:
    """(loss, sparse d/dw, d/dc) for one pair; d/dw holds only touched indices."""
    idx, vals = feats.as_arrays()
    s = _sigmoid(float(np.asarray(weights, dtype=np.float64)[idx] @ vals) + bias)
    err = s - label
    return bce_loss(s, label), {int(i): err * v for i, v in zip(idx, vals)}, err


def mine_detector_negative(instance: QAInstance, index: Bm25Index) -> str:
    """The non-answer block of the question's table with the highest BM25
    score for the question; all scores zero falls back to the lowest
    ordinal, and ties break by ordinal."""
    answer_set = set(instance.answer_blocks)
    candidates = [bid for bid in instance.block_ids if bid not in answer_set]
    if not candidates:
        raise NoNegativeAvailable(
            f"question {instance.question_id!r}: every block contains the answer"
        )
    scores = bm25_scores(index, instance.question)
    best_id = None
    best_key: tuple[float, int] | None = None
    for bid in candidates:
        ordinal = index.ordinal_of(bid)
        key = (-scores.get(ordinal, 0.0), ordinal)
        if best_key is None or key < best_key:
            best_key = key
            best_id = bid
    assert best_id is not None
    return best_id


@dataclass
class DetectorTrainConfig:
    epochs: int = 6
    batch: int = 32
    learning_rate: float = 1.0
    seed: int = 13
    dimension: int = DEFAULT_DIMENSION


@dataclass
class DetectorTrainStats:
    epoch_losses: list[float] = field(default_factory=list)
    pairs: int = 0
    skipped_no_negative: int = 0

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else math.nan


def train_detector(
    single_answer: list[QAInstance],
    index: Bm25Index,
    blocks_by_id: dict[str, FusedBlock],
    config: DetectorTrainConfig | None = None,
) -> tuple[Detector, DetectorTrainStats]:
    """Train the scorer on one positive and one mined negative per question.

    Questions whose table offers no negative are skipped and counted.
    Minibatch SGD, seeded shuffling; weights rounded to float32 at the end
    so the in-memory detector matches its serialized form.
    """
    config = config or DetectorTrainConfig()
    stats = DetectorTrainStats()

    pairs: list[tuple[SparseVector, float]] = []
    for inst in single_answer:
        try:
            negative_id = mine_detector_negative(inst, index, blocks_by_id)
        except NoNegativeAvailable:
            stats.skipped_no_negative += 1
            continue
        positive_id = inst.answer_blocks[0]
        pairs.append((pair_features(inst.question,
                                    blocks_by_id[positive_id].linearized_text,
                                    config.dimension), 1.0))
        pairs.append((pair_features(inst.question,
                                    blocks_by_id[negative_id].linearized_text,
                                    config.dimension), 0.0))
    stats.pairs = len(pairs)
    if len(pairs) < 100:  # 50 usable questions, two pairs each
        raise ValueError(
            f"detector training needs >= 50 usable questions, got {len(pairs) // 2}"
        )
    if stats.skipped_no_negative:
        logger.info("detector training skipped %d questions with no minable negative",
                    stats.skipped_no_negative)

    rng = np.random.default_rng(config.seed)
    weights = np.zeros(config.dimension, dtype=np.float64)
    bias = 0.0
    order = np.arange(len(pairs))
    for _ in range(config.epochs):
        rng.shuffle(order)
        total = 0.0
        for start in range(0, len(order), config.batch):
            batch = order[start:start + config.batch]
            grad_w: dict[int, float] = {}
            grad_c = 0.0
            for j in batch:
                feats, label = pairs[j]
                loss, gw, gc = pair_grads(weights, bias, feats, label)
                total += loss
                for i, g in gw.items():
                    grad_w[i] = grad_w.get(i, 0.0) + g
                grad_c += gc
            scale = config.learning_rate / len(batch)
            for i, g in grad_w.items():
                weights[i] -= scale * g
            bias -= scale * grad_c
        stats.epoch_losses.append(total / len(order))

    detector = Detector(
        weights=weights.astype(np.float32),
        bias=float(np.float32(bias)),
        dimension=config.dimension,
    )
    return detector, stats


def detector_score(detector: Detector, question: str, block: FusedBlock) -> float:
    """Question-block relevance score in (0, 1); higher means more relevant."""
    return detector.score_features(
        pair_features(question, block.linearized_text, detector.dimension))


@dataclass(frozen=True)
class DenoisedInstance:
    instance: QAInstance
    chosen_block: str
    provenance: str  # "D1-kept" | "D2plus-denoised"
    score: float | None


@dataclass
class DenoisedDataset:
    """One chosen answer block per surviving question."""

    instances: list[DenoisedInstance]
    dropped_no_answer: int = 0


def denoise(partition: DatasetPartition, detector: Detector,
            blocks_by_id: dict[str, FusedBlock],
            index: Bm25Index | None = None) -> DenoisedDataset:
    """Keep the argmax-score answer block per multi-answer question.

    Single-answer questions pass through with their unique answer block
    (detector not consulted); zero-answer questions are dropped with a
    logged count. Ties break by block ordinal (index order when an index
    is given, else table row order).
    """
    out: list[DenoisedInstance] = []
    for inst in partition.single_answer:
        out.append(DenoisedInstance(inst, inst.answer_blocks[0], "D1-kept", None))
    for inst in partition.multi_answer:
        best_id = None
        best_key: tuple[float, int] | None = None
        for position, bid in enumerate(inst.answer_blocks):
            ordinal = index.ordinal_of(bid) if index is not None else position
            score = detector_score(detector, inst.question, blocks_by_id[bid])
            key = (-score, ordinal)
            if best_key is None or key < best_key:
                best_key = key
                best_id = bid
        assert best_id is not None and best_key is not None
        out.append(DenoisedInstance(inst, best_id, "D2plus-denoised", -best_key[0]))
    if partition.no_answer:
        logger.info("denoise dropped %d questions with no answer-bearing block",
                    len(partition.no_answer))
    return DenoisedDataset(instances=out, dropped_no_answer=len(partition.no_answer))


def write_denoised(dataset: DenoisedDataset, path: str | Path) -> None:
    write_records(path, (
        {
            "question_id": item.instance.question_id,
            "chosen_block": item.chosen_block,
            "provenance": item.provenance,
            "score": item.score,
        }
        for item in dataset.instances
    ))


def read_denoised(path: str | Path) -> dict[str, str]:
    """Map question_id -> chosen_block from a denoised dataset file."""
    chosen: dict[str, str] = {}
    for _, rec in read_records(path):
        chosen[str(rec["question_id"])] = str(rec["chosen_block"])
    return chosen


def save_detector(detector: Detector, path: str | Path) -> None:
    path = Path(path)
    out = [MAGIC, struct.pack("<II", VERSION, detector.dimension)]
    out.append(struct.pack("<f", detector.bias))
    out.append(np.ascontiguousarray(detector.weights, dtype="<f4").tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(out))
    tmp.replace(path)


def load_detector(path: str | Path) -> Detector:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise DetectorFormatError(f"{path}: not a detector file")
    version, dimension = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise DetectorFormatError(f"{path}: unsupported detector version {version}")
    offset = 4 + struct.calcsize("<II")
    (bias,) = struct.unpack_from("<f", data, offset)
    offset += 4
    weights = np.frombuffer(data, dtype="<f4", count=dimension, offset=offset).copy()
    return Detector(weights=weights, bias=float(bias), dimension=dimension)
