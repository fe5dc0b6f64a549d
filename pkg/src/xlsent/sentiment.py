"""Polarity classifier over DAN sentence vectors, trained on one language and applied to others."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field

import numpy as np

from xlsent.align import LinearMap
from xlsent.embed_store import EmbeddingTable
from xlsent.errors import DataFormatError
from xlsent.lexicon import apply_negation_remap
from xlsent.neural import FeedForwardNet, TrainSpec, build_net, count_params, forward, softmax, train
from xlsent.sent_encoder import DanEncoder, encode, encode_many

logger = logging.getLogger(__name__)

LABELS = ("neg", "pos")
CLASSIFIER_HIDDEN = 300
DEFAULT_DROPOUT = 0.5


@dataclass(frozen=True)
class LabeledSentence:
    tokens: tuple
    label: str
    language: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if not self.tokens:
            raise ValueError("labeled sentence has no tokens")
        if self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")


_LABEL_ALIASES = {"neg": "neg", "negative": "neg", "0": "neg", "pos": "pos", "positive": "pos", "1": "pos"}


def load_labeled(path, language=None, remap=True) -> list[LabeledSentence]:
    """TSV rows ``label<TAB>token token ...`` with labels neg/pos (or 0/1)."""
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise DataFormatError(f"{path}:{lineno}: expected 'label<TAB>tokens'")
            label = _LABEL_ALIASES.get(fields[0].strip().lower())
            if label is None:
                raise DataFormatError(f"{path}:{lineno}: unknown label {fields[0]!r}")
            tokens = fields[1].split()
            if not tokens:
                raise DataFormatError(f"{path}:{lineno}: no tokens")
            out.append(LabeledSentence(apply_negation_remap(tokens) if remap else tokens, label, language))
    return out


def binarize_rating(rating: float, neg_max=2.0, pos_min=4.0):
    """Star rating to polarity: <= neg_max is neg, >= pos_min is pos, else None."""
    if rating <= neg_max:
        return "neg"
    if rating >= pos_min:
        return "pos"
    return None


def load_rated(path, language=None, remap=True, neg_max=2.0, pos_min=4.0) -> list[LabeledSentence]:
    """Review TSV rows ``rating<TAB>token token ...``; middle ratings are dropped."""
    out = []
    dropped = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise DataFormatError(f"{path}:{lineno}: expected 'rating<TAB>tokens'")
            try:
                rating = float(fields[0])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: rating {fields[0]!r} is not a number") from None
            label = binarize_rating(rating, neg_max, pos_min)
            tokens = fields[1].split()
            if label is None or not tokens:
                dropped += 1
                continue
            out.append(LabeledSentence(apply_negation_remap(tokens) if remap else tokens, label, language))
    if dropped:
        logger.info("%s: dropped %d neutral or empty reviews", path, dropped)
    return out


def mix_sources(sources, caps=None, seed=0) -> list[LabeledSentence]:
    """Concatenate labeled sources (each optionally capped) and shuffle under seed."""
    caps = caps or [None] * len(sources)
    merged = []
    for data, cap in zip(sources, caps):
        merged.extend(data if cap is None else data[:cap])
    order = np.random.default_rng(seed).permutation(len(merged))
    return [merged[i] for i in order]


def encoder_id(encoder: DanEncoder) -> str:
    h = hashlib.sha256()
    for arr, _ in encoder.tail.parameters():
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


@dataclass(eq=False)
class SentimentModel:
    classifier: FeedForwardNet
    encoder_ref: str
    label_order: tuple = LABELS

    def __post_init__(self):
        if self.classifier.out_dim != 2:
            raise ValueError("sentiment classifier must have 2 outputs")
        self.label_order = tuple(self.label_order)


def build_classifier(in_dim=100, hidden=CLASSIFIER_HIDDEN, dropout_rate=DEFAULT_DROPOUT,
                     activation="relu", seed=0) -> FeedForwardNet:
    """in_dim -> hidden -> hidden -> 2, dropout on the input of the output layer."""
    return build_net([in_dim, hidden, hidden, 2], [activation, activation, "identity"],
                     dropout_rate=dropout_rate, dropout_position=2, seed=seed)


@dataclass
class ClassifierReport:
    loss_trace: list = field(default_factory=list)
    train_accuracy: list = field(default_factory=list)
    n_examples: int = 0
    n_params: int = 0

    def to_dict(self):
        return dict(loss_trace=self.loss_trace, train_accuracy=self.train_accuracy,
                    n_examples=self.n_examples, n_params=self.n_params)


def train_classifier(encoder: DanEncoder, table: EmbeddingTable, data, spec: TrainSpec,
                     classifier: FeedForwardNet | None = None):
    """Train the classifier on frozen sentence vectors. Returns (model, report).

    The report's accuracy entry for each epoch is measured in infer mode after
    that epoch.
    """
    if not data:
        raise ValueError("empty sentiment training set")
    if spec.loss != "softmax_cross_entropy":
        raise ValueError("train_classifier requires loss='softmax_cross_entropy'")
    labels = np.array([LABELS.index(s.label) for s in data])
    if len(set(labels.tolist())) < 2:
        raise ValueError("training data contains a single class")
    x, coverage = encode_many(encoder, table, [s.tokens for s in data])
    if np.any(coverage == 0):
        logger.warning("train_classifier: %d sentences are fully OOV", int(np.sum(coverage == 0)))
    net = classifier if classifier is not None else build_classifier(encoder.out_dim, seed=spec.seed)
    dataset = list(zip(x, labels))
    report = ClassifierReport(n_examples=len(data), n_params=count_params(net))
    # one epoch at a time so per-epoch accuracy can be recorded; the shuffling
    # stream is seeded per epoch from the TrainSpec seed
    seeds = np.random.default_rng(spec.seed).integers(0, 2**63 - 1, size=spec.epochs)
    for epoch_seed in seeds:
        net, trace = train(net, dataset, TrainSpec(spec.loss, 1, spec.batch_size, spec.learning_rate, int(epoch_seed)))
        report.loss_trace.extend(trace)
        logits, _ = forward(net, x, "infer")
        report.train_accuracy.append(float(np.mean(np.argmax(logits, axis=1) == labels)))
    return SentimentModel(net, encoder_id(encoder)), report


@dataclass(frozen=True)
class Prediction:
    label: str
    probabilities: np.ndarray
    coverage: float

    @property
    def low_confidence(self) -> bool:
        return self.coverage == 0

    def to_dict(self, tokens=None):
        d = {"label": self.label, "p_neg": float(self.probabilities[0]), "p_pos": float(self.probabilities[1]),
             "coverage": self.coverage, "low_confidence": self.low_confidence}
        if tokens is not None:
            d = {"tokens": list(tokens), **d}
        return d


def predict(model: SentimentModel, encoder: DanEncoder, table: EmbeddingTable, m: LinearMap | None, tokens) -> Prediction:
    """Label and class probabilities for one sentence; exact ties go to neg."""
    vec, coverage = encode(encoder, table, tokens, m)
    logits, _ = forward(model.classifier, vec, "infer")
    probs = softmax(logits)
    label = model.label_order[int(np.argmax(logits))]
    return Prediction(label, probs, coverage)
