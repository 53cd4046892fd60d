"""Rank-aware encoding of numeric table columns.

Questions like "which entry has the lowest prize" need information a
single row cannot carry: where its value sits within the whole column.
This module extracts numeric columns (numbers or dates), linearizes them
with a [C_SEP] marker per value, and trains a small encoder whose
per-value output embeds that rank information.

Training attaches two linear heads (max and min) on top of the encoder.
Per column and per head, the head's logits at the marker positions go
through a softmax and are scored with cross-entropy against the one-hot
label at the extreme value's marker. After training the heads are
removable; only the representation map is used downstream, frozen.

The per-value input features are [z, tanh(mean/1000), tanh(std/1000),
min(n, 64)/64] where z is the value's column z-score (population std,
guarded to 1 when zero). Min/max indicator features are deliberately
absent: they would leak the training label.

Encoder file format ("RATE", little-endian):
    magic     4 bytes  b"RATE"
    version   u32      currently 1
    feat_dim  u32      input feature width (4)
    hidden    u32      hidden layer width
    r         u32      embedding dimension
    heads     u8       1 when the max/min heads are present
    weights   f32 blobs in order: W1 (hidden x feat_dim), b1 (hidden),
              W2 (r x hidden), b2 (r), then if heads: w_max (r), c_max,
              w_min (r), c_min
"""

from __future__ import annotations

import math
import re
import struct
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .corpus import Table

MAGIC = b"RATE"
VERSION = 1

FEATURE_DIM = 4

# Fraction of non-empty cells that must parse for a column to qualify.
NUMERIC_THRESHOLD = 0.8

_EPOCH = date(1970, 1, 1)

_NUMBER_RE = re.compile(r"^[+-]?(?:\d+(?:\.\d*)?|\.\d+)$")
_CURRENCY = "$€£¥"

_MONTHS = {
    name: i + 1
    for i, name in enumerate([
        "january", "february", "march", "april", "may", "june", "july",
        "august", "september", "october", "november", "december",
    ])
}
_MONTH_DAY_YEAR_RE = re.compile(r"^([a-z]+)\s+(\d{1,2}),\s*(\d{4})$")
_ISO_RE = re.compile(r"^(\d{4})-(\d{2})-(\d{2})$")
_YEAR_RE = re.compile(r"^\d{4}$")


class UntrainedEncoderError(RuntimeError):
    """Operation requires a trained encoder."""


class EncoderFormatError(ValueError):
    """Encoder file is corrupt or has an unsupported version."""


@dataclass(frozen=True)
class NumericColumn:
    """A table column whose cells parse as numbers or dates.

    ``values`` holds (row_index, raw cell string, parsed value); cells
    that fail to parse are dropped, so row indices may be sparse.
    """

    table_id: str
    column_index: int
    header: str
    values: list[tuple[int, str, float]]
    kind: str  # "number" | "date"

    def parsed(self) -> np.ndarray:
        return np.array([v for _, _, v in self.values], dtype=np.float64)


@dataclass(frozen=True)
class RankTokenSequence:
    """Whitespace-tokenizable linearization with one [C_SEP] marker per value."""

    text: str
    marker_positions: list[int]


def parse_number(cell: str) -> float | None:
    """Parse a numeric cell: sign and decimal point accepted, percent sign,
    currency symbols, and comma thousands separators stripped."""
    s = cell.strip()
    if not s:
        return None
    for ch in _CURRENCY:
        s = s.replace(ch, "")
    s = s.replace(",", "").replace("%", "").strip()
    if _NUMBER_RE.match(s):
        return float(s)
    return None


def parse_date(cell: str) -> float | None:
    """Parse a date cell to days since 1970-01-01.

    Accepted shapes: ISO "YYYY-MM-DD", bare "YYYY" (January 1st), and
    "Month D, YYYY" with an English month name.
    """
    s = cell.strip().lower()
    if not s:
        return None
    m = _ISO_RE.match(s)
    if m:
        try:
            d = date(int(m.group(1)), int(m.group(2)), int(m.group(3)))
        except ValueError:
            return None
        return float((d - _EPOCH).days)
    if _YEAR_RE.match(s):
        return float((date(int(s), 1, 1) - _EPOCH).days)
    m = _MONTH_DAY_YEAR_RE.match(s)
    if m and m.group(1) in _MONTHS:
        try:
            d = date(int(m.group(3)), _MONTHS[m.group(1)], int(m.group(2)))
        except ValueError:
            return None
        return float((d - _EPOCH).days)
    return None


def extract_numeric_columns(table: Table) -> list[NumericColumn]:
    """Columns where >= 80% of non-empty cells parse as numbers, or failing
    that as dates; non-parsing cells are dropped and columns with fewer
    than 2 parsed values are excluded."""
    columns: list[NumericColumn] = []
    for col in range(len(table.header)):
        cells = [(i, row[col]) for i, row in enumerate(table.rows)]
        nonempty = [(i, c) for i, c in cells if c.strip()]
        if not nonempty:
            continue
        for kind, parser in (("number", parse_number), ("date", parse_date)):
            parsed = [(i, c, parser(c)) for i, c in nonempty]
            good = [(i, c, v) for i, c, v in parsed
                    if v is not None and math.isfinite(v)]
            if len(good) >= NUMERIC_THRESHOLD * len(nonempty) and len(good) >= 2:
                columns.append(NumericColumn(
                    table_id=table.table_id,
                    column_index=col,
                    header=table.header[col],
                    values=good,
                    kind=kind,
                ))
                break
    return columns


def linearize_column(column: NumericColumn) -> RankTokenSequence:
    """"[C_SEP] <header> is <raw>" per value in row order, single-space
    joined, with the whitespace-token index of each marker recorded."""
    parts: list[str] = []
    positions: list[int] = []
    token_count = 0
    for _, raw, _ in column.values:
        positions.append(token_count)
        chunk = f"[C_SEP] {column.header} is {raw}"
        parts.append(chunk)
        token_count += len(chunk.split())
    return RankTokenSequence(text=" ".join(parts), marker_positions=positions)


def column_features(column: NumericColumn) -> np.ndarray:
    """Per-value feature matrix (n x 4): z-score with population std
    (guarded to 1 when zero), squashed column mean and std, squashed count."""
    values = column.parsed()
    n = len(values)
    if n < 2:
        raise ValueError(f"column needs >= 2 parsed values, got {n}")
    mean = float(values.mean())
    std = float(values.std())
    safe_std = std if std > 0 else 1.0
    z = (values - mean) / safe_std
    feats = np.empty((n, FEATURE_DIM), dtype=np.float64)
    feats[:, 0] = z
    feats[:, 1] = math.tanh(mean / 1000.0)
    feats[:, 2] = math.tanh(std / 1000.0)
    feats[:, 3] = min(n, 64) / 64.0
    return feats


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------

@dataclass
class RankEncoder:
    """One-hidden-layer map from per-value features to an r-dim embedding,
    plus the max/min heads kept from training (detachable)."""

    w1: np.ndarray  # (hidden, FEATURE_DIM)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (r, hidden)
    b2: np.ndarray  # (r,)
    w_max: np.ndarray | None = None  # (r,)
    c_max: float = 0.0
    w_min: np.ndarray | None = None  # (r,)
    c_min: float = 0.0
    trained: bool = False

    @property
    def r(self) -> int:
        return self.w2.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    def has_heads(self) -> bool:
        return self.w_max is not None and self.w_min is not None

    def detach_heads(self) -> None:
        """Drop the training-only heads, keeping the representation map."""
        self.w_max = None
        self.w_min = None
        self.c_max = 0.0
        self.c_min = 0.0

    def params(self) -> dict[str, np.ndarray]:
        out = {
            "w1": np.asarray(self.w1, dtype=np.float64),
            "b1": np.asarray(self.b1, dtype=np.float64),
            "w2": np.asarray(self.w2, dtype=np.float64),
            "b2": np.asarray(self.b2, dtype=np.float64),
        }
        if self.has_heads():
            out["w_max"] = np.asarray(self.w_max, dtype=np.float64)
            out["c_max"] = np.array([self.c_max], dtype=np.float64)
            out["w_min"] = np.asarray(self.w_min, dtype=np.float64)
            out["c_min"] = np.array([self.c_min], dtype=np.float64)
        return out


def embed_features(params: dict[str, np.ndarray], feats: np.ndarray) -> np.ndarray:
    """Forward pass to embeddings: tanh hidden layer, linear output."""
    hidden = np.tanh(feats @ params["w1"].T + params["b1"])
    return hidden @ params["w2"].T + params["b2"]


def rank_embeddings(encoder: RankEncoder, column: NumericColumn) -> np.ndarray:
    """One r-dim embedding per column value (per marker), heads not applied."""
    if not encoder.trained:
        raise UntrainedEncoderError("rank encoder has not been trained")
    return embed_features(encoder.params(), column_features(column))


def head_loss(logits: np.ndarray, target: int) -> float:
    """Cross-entropy of the softmax over one head's marker logits against
    a one-hot target; exact ln(n) for uniform logits."""
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max()
    return float(np.log(np.exp(shifted).sum()) - shifted[target])


def column_loss(params: dict[str, np.ndarray], feats: np.ndarray,
                i_max: int, i_min: int) -> float:
    """Sum of the max-head and min-head cross-entropies for one column."""
    emb = embed_features(params, feats)
    l_max = emb @ params["w_max"] + params["c_max"][0]
    l_min = emb @ params["w_min"] + params["c_min"][0]
    return head_loss(l_max, i_max) + head_loss(l_min, i_min)


def column_loss_and_grads(
    params: dict[str, np.ndarray], feats: np.ndarray, i_max: int, i_min: int,
) -> tuple[float, dict[str, np.ndarray]]:
    """Analytic gradients of column_loss w.r.t. every parameter."""
    pre = feats @ params["w1"].T + params["b1"]
    hidden = np.tanh(pre)
    emb = hidden @ params["w2"].T + params["b2"]

    grads: dict[str, np.ndarray] = {}
    d_emb = np.zeros_like(emb)
    loss = 0.0
    for head, target in (("max", i_max), ("min", i_min)):
        w = params[f"w_{head}"]
        logits = emb @ w + params[f"c_{head}"][0]
        shifted = logits - logits.max()
        exp = np.exp(shifted)
        probs = exp / exp.sum()
        loss += float(np.log(exp.sum()) - shifted[target])
        d_logits = probs.copy()
        d_logits[target] -= 1.0
        grads[f"w_{head}"] = emb.T @ d_logits
        grads[f"c_{head}"] = np.array([d_logits.sum()])
        d_emb += np.outer(d_logits, w)

    grads["w2"] = d_emb.T @ hidden
    grads["b2"] = d_emb.sum(axis=0)
    d_hidden = d_emb @ params["w2"]
    d_pre = d_hidden * (1.0 - hidden * hidden)
    grads["w1"] = d_pre.T @ feats
    grads["b1"] = d_pre.sum(axis=0)
    return loss, grads


def extreme_indices(column: NumericColumn) -> tuple[int, int] | None:
    """Positions (within the column's value list) of the max and min values,
    or None when either extreme is tied (skipped during training)."""
    values = column.parsed()
    i_max = int(values.argmax())
    i_min = int(values.argmin())
    if (values == values[i_max]).sum() > 1 or (values == values[i_min]).sum() > 1:
        return None
    return i_max, i_min


@dataclass
class RankTrainConfig:
    r: int = 16
    hidden: int = 32
    epochs: int = 10
    batch: int = 32
    learning_rate: float = 0.2
    seed: int = 13


@dataclass
class RankTrainStats:
    epoch_losses: list[float] = field(default_factory=list)
    columns_used: int = 0
    columns_skipped_ties: int = 0


def _init_params(config: RankTrainConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    def glorot(shape: tuple[int, ...]) -> np.ndarray:
        fan = sum(shape)
        return rng.normal(0.0, math.sqrt(2.0 / fan), size=shape)

    return {
        "w1": glorot((config.hidden, FEATURE_DIM)),
        "b1": np.zeros(config.hidden),
        "w2": glorot((config.r, config.hidden)),
        "b2": np.zeros(config.r),
        "w_max": glorot((config.r,)),
        "c_max": np.zeros(1),
        "w_min": glorot((config.r,)),
        "c_min": np.zeros(1),
    }


def train_rank_encoder(
    columns: list[NumericColumn],
    config: RankTrainConfig | None = None,
) -> tuple[RankEncoder, RankTrainStats]:
    """Train the representation map and both heads with seeded minibatch SGD.

    Columns with tied extrema are skipped (their one-hot labels would be
    ill-defined). Heads are retained on the returned encoder so it can be
    evaluated; callers may detach them. Weights are rounded to float32 at
    the end so the in-memory encoder matches its serialized form exactly.
    """
    config = config or RankTrainConfig()
    stats = RankTrainStats()
    usable: list[tuple[np.ndarray, int, int]] = []
    for column in columns:
        extremes = extreme_indices(column)
        if extremes is None:
            stats.columns_skipped_ties += 1
            continue
        usable.append((column_features(column), extremes[0], extremes[1]))
    stats.columns_used = len(usable)
    if len(usable) < 100:
        raise ValueError(
            f"rank encoder training needs >= 100 usable columns, got {len(usable)}"
        )

    rng = np.random.default_rng(config.seed)
    params = _init_params(config, rng)

    order = np.arange(len(usable))
    for _ in range(config.epochs):
        rng.shuffle(order)
        total = 0.0
        for start in range(0, len(order), config.batch):
            batch = order[start:start + config.batch]
            grad_acc = {k: np.zeros_like(v) for k, v in params.items()}
            batch_loss = 0.0
            for j in batch:
                feats, i_max, i_min = usable[j]
                loss, grads = column_loss_and_grads(params, feats, i_max, i_min)
                batch_loss += loss
                for key, g in grads.items():
                    grad_acc[key] += g
            scale = config.learning_rate / len(batch)
            for key in params:
                params[key] -= scale * grad_acc[key]
            total += batch_loss
        stats.epoch_losses.append(total / len(order))

    encoder = RankEncoder(
        w1=params["w1"].astype(np.float32),
        b1=params["b1"].astype(np.float32),
        w2=params["w2"].astype(np.float32),
        b2=params["b2"].astype(np.float32),
        w_max=params["w_max"].astype(np.float32),
        c_max=float(params["c_max"].astype(np.float32)[0]),
        w_min=params["w_min"].astype(np.float32),
        c_min=float(params["c_min"].astype(np.float32)[0]),
        trained=True,
    )
    return encoder, stats


def head_accuracy(encoder: RankEncoder, columns: list[NumericColumn]) -> tuple[float, float]:
    """Argmax accuracy of the max and min heads against direct min/max."""
    if not encoder.has_heads():
        raise UntrainedEncoderError("heads have been detached")
    params = encoder.params()
    hit_max = hit_min = total = 0
    for column in columns:
        feats = column_features(column)
        emb = embed_features(params, feats)
        values = column.parsed()
        total += 1
        if int((emb @ params["w_max"] + params["c_max"][0]).argmax()) == int(values.argmax()):
            hit_max += 1
        if int((emb @ params["w_min"] + params["c_min"][0]).argmax()) == int(values.argmin()):
            hit_min += 1
    if total == 0:
        raise ValueError("no columns to evaluate")
    return hit_max / total, hit_min / total


# ---------------------------------------------------------------------------
# Synthetic columns for standalone encoder training
# ---------------------------------------------------------------------------

def sample_columns(n_columns: int, seed: int) -> list[NumericColumn]:
    """Deterministic random numeric columns spanning varied sizes and scales.

    Values within a column are distinct so extrema are never tied.
    """
    rng = np.random.default_rng(seed)
    headers = ["alpha", "beta", "gamma", "delta", "metric", "score",
               "total", "amount", "level", "index"]
    columns: list[NumericColumn] = []
    for c in range(n_columns):
        n = int(rng.integers(2, 13))
        scale = 10.0 ** rng.uniform(-1, 4)
        kind = rng.integers(0, 3)
        if kind == 0:
            values = rng.uniform(0, scale, size=n)
        elif kind == 1:
            values = rng.normal(0, scale, size=n)
        else:
            values = np.round(rng.uniform(0, scale, size=n))
        while len(np.unique(values)) < n:
            values = values + rng.uniform(0, 1e-6 * max(scale, 1.0), size=n)
        header = headers[int(rng.integers(0, len(headers)))]
        columns.append(NumericColumn(
            table_id=f"synth-{c}",
            column_index=0,
            header=header,
            values=[(i, f"{v:.6g}", float(v)) for i, v in enumerate(values)],
            kind="number",
        ))
    return columns


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def encoder_bytes(encoder: RankEncoder) -> bytes:
    """Serialized form; also the unit compared by the freeze contract."""
    heads = encoder.has_heads()
    out = [MAGIC, struct.pack("<IIIIB", VERSION, FEATURE_DIM,
                              encoder.hidden, encoder.r, int(heads))]
    arrays = [encoder.w1, encoder.b1, encoder.w2, encoder.b2]
    if heads:
        arrays += [encoder.w_max, np.array([encoder.c_max]),
                   encoder.w_min, np.array([encoder.c_min])]
    for arr in arrays:
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def save_rank_encoder(encoder: RankEncoder, path: str | Path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(encoder_bytes(encoder))
    tmp.replace(path)


def load_rank_encoder(path: str | Path) -> RankEncoder:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] != MAGIC:
        raise EncoderFormatError(f"{path}: not a rank encoder file")
    version, feat_dim, hidden, r, heads = struct.unpack_from("<IIIIB", data, 4)
    if version != VERSION:
        raise EncoderFormatError(f"{path}: unsupported encoder version {version}")
    if feat_dim != FEATURE_DIM:
        raise EncoderFormatError(f"{path}: feature width {feat_dim} != {FEATURE_DIM}")
    offset = 4 + struct.calcsize("<IIIIB")

    def read(shape: tuple[int, ...]) -> np.ndarray:
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        return arr.reshape(shape).copy()

    w1 = read((hidden, feat_dim))
    b1 = read((hidden,))
    w2 = read((r, hidden))
    b2 = read((r,))
    encoder = RankEncoder(w1=w1, b1=b1, w2=w2, b2=b2, trained=True)
    if heads:
        encoder.w_max = read((r,))
        encoder.c_max = float(read((1,))[0])
        encoder.w_min = read((r,))
        encoder.c_min = float(read((1,))[0])
    return encoder
