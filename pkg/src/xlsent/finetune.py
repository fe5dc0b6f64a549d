"""Vocabulary expansion and skip-gram negative-sampling continuation training."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from xlsent.embed_store import EmbeddingTable
from xlsent.errors import DataFormatError, NumericalError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Corpus:
    sentences: tuple
    language: str | None = None

    def __post_init__(self):
        sentences = tuple(tuple(s) for s in self.sentences)
        for i, s in enumerate(sentences):
            for tok in s:
                if not isinstance(tok, str) or not tok:
                    raise ValueError(f"sentence {i}: empty or non-string token {tok!r}")
        object.__setattr__(self, "sentences", sentences)

    def counts(self) -> Counter:
        return Counter(tok for s in self.sentences for tok in s)

    @property
    def n_tokens(self):
        return sum(len(s) for s in self.sentences)


def load_corpus(path, language=None) -> Corpus:
    """One sentence per line, tokens separated by spaces. Blank lines are kept
    as empty sentences so line numbers stay aligned with parallel files."""
    sentences = []
    try:
        with open(path, encoding="utf-8") as f:
            for line in f:
                sentences.append(line.split())
    except UnicodeDecodeError as exc:
        raise DataFormatError(f"{path}: not valid UTF-8: {exc}") from exc
    return Corpus(sentences, language)


@dataclass(frozen=True)
class SgnsConfig:
    window: int = 5
    min_count: int = 5
    negatives: int = 5
    epochs: int = 5
    initial_lr: float = 0.025
    final_lr: float = 0.0001
    seed: int = 1
    subsample_threshold: float | None = None

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.min_count < 1:
            raise ValueError("min_count must be >= 1")
        if self.negatives < 1:
            raise ValueError("negatives must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.initial_lr > self.final_lr > 0:
            raise ValueError("need initial_lr > final_lr > 0")


@dataclass(frozen=True)
class ExpandReport:
    kept: int
    added: int
    rejected_below_min_count: int

    def to_dict(self):
        return asdict(self)


def expand_vocabulary(table: EmbeddingTable, corpus: Corpus, min_count: int = 5, seed: int = 1):
    """Append corpus tokens seen at least `min_count` times.

    New rows are drawn uniformly from [-0.5/dim, 0.5/dim] and appended in
    descending corpus frequency (ties by first appearance). Existing rows are
    never touched. Returns (table, report).
    """
    counts = corpus.counts()
    new = [tok for tok in counts if tok not in table]
    added = [tok for tok in new if counts[tok] >= min_count]
    rejected = len(new) - len(added)
    added.sort(key=lambda tok: -counts[tok])  # stable: first appearance breaks ties
    rng = np.random.default_rng(seed)
    half = 0.5 / table.dim
    rows = rng.uniform(-half, half, size=(len(added), table.dim))
    report = ExpandReport(len(table), len(added), rejected)
    if not added:
        return table, report
    out = table.replace(
        tokens=table.tokens + tuple(added),
        vectors=np.vstack([table.vectors, rows]),
    )
    logger.info("expanded vocabulary: %s", report)
    return out, report


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def finetune_sgns(table: EmbeddingTable, corpus: Corpus, config: SgnsConfig):
    """Continue training `table` with skip-gram negative sampling.

    The table's rows are the input vectors; a zero-initialized context matrix
    is used for the outputs and discarded afterwards. Training is sequential
    SGD over center positions, with one joint update per center covering all
    of its context words and their negatives. Returns (table, loss_trace)
    where the trace holds the mean per-pair loss of each epoch.
    """
    if config.epochs == 0:
        return table, []

    counts = corpus.counts()
    effective = [tok for tok in counts if counts[tok] >= config.min_count]
    missing = [tok for tok in effective if tok not in table]
    if missing:
        raise ValueError(
            f"{len(missing)} corpus tokens with count >= min_count are not in the table "
            f"(e.g. {missing[0]!r}); run expand_vocabulary first"
        )
    if not effective:
        raise ValueError("no corpus token reaches min_count; nothing to train on")

    rows = np.array([table.index(tok) for tok in effective])
    freq = np.array([counts[tok] for tok in effective], dtype=np.float64)
    noise = freq ** 0.75
    noise_cdf = np.cumsum(noise / noise.sum())
    noise_cdf[-1] = 1.0
    local = {tok: i for i, tok in enumerate(effective)}
    sentences = [np.array([local[t] for t in s if t in local], dtype=np.int64) for s in corpus.sentences]
    sentences = [s for s in sentences if len(s) > 1]
    if not sentences:
        raise ValueError("effective corpus has no sentence with two or more trainable tokens")

    keep_prob = None
    if config.subsample_threshold:
        f = freq / freq.sum()
        t = config.subsample_threshold
        keep_prob = np.minimum(1.0, (np.sqrt(f / t) + 1) * t / f)

    rng = np.random.default_rng(config.seed)
    w_in = np.array(table.vectors[rows])
    w_out = np.zeros_like(w_in)
    k = config.negatives
    window = config.window
    total_steps = config.epochs * sum(len(s) for s in sentences)
    lr_span = config.initial_lr - config.final_lr
    step = 0
    trace = []

    for _ in range(config.epochs):
        loss_sum = 0.0
        n_pairs = 0
        for sent in sentences:
            if keep_prob is not None:
                sent = sent[rng.random(len(sent)) < keep_prob[sent]]
            n = len(sent)
            for i in range(n):
                lr = config.initial_lr - lr_span * step / max(total_steps - 1, 1)
                step += 1
                ctx = np.concatenate([sent[max(0, i - window):i], sent[i + 1:i + 1 + window]])
                if ctx.size == 0:
                    continue
                negs = np.searchsorted(noise_cdf, rng.random((ctx.size, k)), side="right")
                negs = np.minimum(negs, len(effective) - 1)
                targets = np.concatenate([ctx[:, None], negs], axis=1).ravel()
                labels = np.zeros((ctx.size, k + 1))
                labels[:, 0] = 1.0
                weight = np.ones((ctx.size, k + 1))
                weight[:, 1:] = negs != ctx[:, None]
                labels = labels.ravel()
                weight = weight.ravel()

                center = sent[i]
                v = w_in[center]
                u = w_out[targets]
                logits = u @ v
                signed = np.where(labels > 0, logits, -logits)
                loss_sum -= float(np.sum(weight * _log_sigmoid(signed)))
                n_pairs += ctx.size
                g = (labels - _sigmoid(logits)) * weight * lr
                grad_in = g @ u
                np.add.at(w_out, targets, g[:, None] * v[None, :])
                w_in[center] = v + grad_in
        mean_loss = loss_sum / max(n_pairs, 1)
        if not np.isfinite(mean_loss) or not np.all(np.isfinite(w_in)):
            raise NumericalError("SGNS training diverged (non-finite loss or weights)")
        trace.append(mean_loss)
        logger.debug("sgns epoch loss %.6f", mean_loss)

    vectors = np.array(table.vectors)
    vectors[rows] = w_in
    return table.replace(vectors=vectors), trace
