"""Deep Averaging Network sentence encoder.

A sentence vector is the mean of its in-vocabulary word vectors passed
through a two-layer dense tail. Pooling sums unique rows in row order with
weights count/total, which makes the result bit-identical under token
permutation and uniform duplication.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from xlsent.align import LinearMap
from xlsent.embed_store import EmbeddingTable
from xlsent.errors import DataFormatError
from xlsent.lexicon import apply_negation_remap
from xlsent.neural import FeedForwardNet, TrainSpec, build_net, forward, identity_net, load_net, save_net, train

logger = logging.getLogger(__name__)

OOV_POLICIES = ("skip", "zero_on_empty")


@dataclass(eq=False)
class DanEncoder:
    tail: FeedForwardNet
    oov_policy: str = "skip"

    def __post_init__(self):
        if len(self.tail.layers) != 2:
            raise ValueError(f"DAN tail must have exactly 2 layers, got {len(self.tail.layers)}")
        if self.oov_policy not in OOV_POLICIES:
            raise ValueError(f"unknown oov_policy {self.oov_policy!r}")

    @property
    def in_dim(self):
        return self.tail.in_dim

    @property
    def out_dim(self):
        return self.tail.out_dim


def new_encoder(dim=100, hidden=100, out=100, activation="tanh", seed=0) -> DanEncoder:
    return DanEncoder(build_net([dim, hidden, out], [activation, activation], seed=seed))


def identity_encoder(dim=100) -> DanEncoder:
    """Tail of two identity layers: the encoder returns the pooled vector."""
    return DanEncoder(identity_net(dim, 2))


@dataclass(frozen=True)
class ScoredSentencePair:
    tokens_a: tuple
    tokens_b: tuple
    gold_score: float

    def __post_init__(self):
        object.__setattr__(self, "tokens_a", tuple(self.tokens_a))
        object.__setattr__(self, "tokens_b", tuple(self.tokens_b))
        if not self.tokens_a or not self.tokens_b:
            raise ValueError("both sentences of a pair must be non-empty")
        if not 0.0 <= self.gold_score <= 5.0:
            raise ValueError(f"gold score {self.gold_score} outside [0, 5]")


def load_sts(path, remap=True) -> list[ScoredSentencePair]:
    """TSV rows ``score<TAB>sentence_a<TAB>sentence_b``."""
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise DataFormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
            try:
                score = float(fields[0])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: score {fields[0]!r} is not a number") from None
            a, b = fields[1].split(), fields[2].split()
            if remap:
                a, b = apply_negation_remap(a), apply_negation_remap(b)
            try:
                pairs.append(ScoredSentencePair(a, b, score))
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    return pairs


def pool(table: EmbeddingTable, tokens, m: LinearMap | None = None):
    """Mean of the (optionally mapped) vectors of in-vocabulary tokens.

    Returns (vector, coverage); an all-OOV sentence gives the zero vector.
    """
    if len(tokens) == 0:
        raise ValueError("cannot encode an empty token list")
    counts = {}
    for tok in tokens:
        i = table._index.get(tok)
        if i is not None:
            counts[i] = counts.get(i, 0) + 1
    found = sum(counts.values())
    coverage = found / len(tokens)
    dim = table.dim
    if not found:
        return np.zeros(dim), 0.0
    rows = np.array(sorted(counts), dtype=np.int64)
    weights = np.array([counts[i] for i in rows], dtype=np.float64) / found
    vectors = table.vectors[rows]
    if m is not None:
        if m.dim != dim:
            raise ValueError(f"map dim {m.dim} != table dim {dim}")
        vectors = vectors @ m.matrix
    return weights @ vectors, coverage


def encode(encoder: DanEncoder, table: EmbeddingTable, tokens, m: LinearMap | None = None):
    """Sentence vector and token coverage; coverage 0 flags an all-OOV sentence.

    OOV tokens are always left out of the mean. For an all-OOV sentence the
    ``skip`` policy returns the zero vector, ``zero_on_empty`` feeds a zero
    pooled vector through the tail.
    """
    pooled, coverage = pool(table, tokens, m)
    if coverage == 0 and encoder.oov_policy == "skip":
        return np.zeros(encoder.out_dim), 0.0
    out, _ = forward(encoder.tail, pooled, "infer")
    return out, coverage


def encode_many(encoder, table, sentences, m=None):
    vecs, cov = zip(*(encode(encoder, table, s, m) for s in sentences)) if sentences else ((), ())
    return np.array(vecs).reshape(len(sentences), encoder.out_dim), np.array(cov)


@dataclass
class StsReport:
    loss_trace: list = field(default_factory=list)
    pairs_used: int = 0
    pairs_skipped: int = 0


def train_sts(encoder: DanEncoder, table: EmbeddingTable, pairs, spec: TrainSpec):
    """Fit the tail so cosine(encode(a), encode(b)) regresses onto gold/5.

    Word vectors stay frozen; pairs with an all-OOV side are skipped.
    Returns (new encoder, StsReport).
    """
    if not pairs:
        raise ValueError("no sentence pairs to train on")
    if spec.loss != "mse_of_cosine":
        raise ValueError("train_sts requires loss='mse_of_cosine'")
    if encoder.in_dim != table.dim:
        raise ValueError(f"encoder input dim {encoder.in_dim} != table dim {table.dim}")
    data = []
    skipped = 0
    for p in pairs:
        a, ca = pool(table, p.tokens_a)
        b, cb = pool(table, p.tokens_b)
        if ca == 0 or cb == 0:
            skipped += 1
            continue
        data.append((np.stack([a, b]), p.gold_score / 5.0))
    if skipped:
        logger.warning("train_sts: skipped %d pairs with an all-OOV side", skipped)
    if not data:
        raise ValueError("every pair has an all-OOV side")
    report = StsReport([], len(data), skipped)
    if spec.epochs == 0:
        return encoder, report
    tail, trace = train(encoder.tail, data, spec)
    report.loss_trace = trace
    return DanEncoder(tail, encoder.oov_policy), report


def save_encoder(encoder: DanEncoder, prefix):
    return save_net(encoder.tail, prefix)


def load_encoder(prefix, oov_policy="skip") -> DanEncoder:
    return DanEncoder(load_net(prefix), oov_policy)
