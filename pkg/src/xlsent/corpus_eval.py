"""Parallel corpora, annotation projection and the precision/recall/F1 harness."""

from __future__ import annotations

from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from xlsent._io import read_json
from xlsent.errors import DataFormatError
from xlsent.finetune import load_corpus
from xlsent.sentiment import LABELS, LabeledSentence


@dataclass(frozen=True)
class ParallelCorpus:
    languages: tuple
    sentences: dict

    def __post_init__(self):
        langs = tuple(self.languages)
        if set(langs) != set(self.sentences):
            raise ValueError("languages and sentence keys disagree")
        sizes = {lang: len(self.sentences[lang]) for lang in langs}
        if len(set(sizes.values())) > 1:
            raise ValueError(f"parallel corpus is not aligned: sentence counts {sizes}")
        object.__setattr__(self, "languages", langs)
        object.__setattr__(self, "sentences", {l: [tuple(s) for s in self.sentences[l]] for l in langs})

    def __len__(self):
        return len(self.sentences[self.languages[0]]) if self.languages else 0


def load_parallel(manifest) -> ParallelCorpus:
    """Manifest JSON ``{"languages": [...], "files": {lang: path}}``.

    Relative paths resolve against the manifest's directory.
    """
    manifest = Path(manifest)
    meta = read_json(manifest)
    try:
        langs = meta["languages"]
        files = meta["files"]
    except KeyError as exc:
        raise DataFormatError(f"{manifest}: missing key {exc}") from None
    sentences = {}
    for lang in langs:
        if lang not in files:
            raise DataFormatError(f"{manifest}: no file for language {lang!r}")
        path = Path(files[lang])
        if not path.is_absolute():
            path = manifest.parent / path
        sentences[lang] = list(load_corpus(path, lang).sentences)
    try:
        return ParallelCorpus(langs, sentences)
    except ValueError as exc:
        raise DataFormatError(f"{manifest}: {exc}") from None


def load_index_labels(path) -> list[tuple[int, str]]:
    """TSV rows ``sentence_index<TAB>label`` (0-based indices)."""
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 2:
                raise DataFormatError(f"{path}:{lineno}: expected 'index<TAB>label'")
            try:
                out.append((int(fields[0]), fields[1].strip()))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: index {fields[0]!r} is not an integer") from None
    return out


def project_labels(corpus: ParallelCorpus, labels, source_lang: str) -> dict:
    """Copy sentence-level labels onto every language of an aligned corpus."""
    if source_lang not in corpus.languages:
        raise ValueError(f"source language {source_lang!r} not in corpus")
    assigned = {}
    for idx, label in labels:
        if not 0 <= idx < len(corpus):
            raise ValueError(f"sentence index {idx} out of range [0, {len(corpus)})")
        if label not in LABELS:
            raise ValueError(f"unknown label {label!r} at index {idx}")
        if assigned.get(idx, label) != label:
            raise ValueError(f"conflicting labels for sentence {idx}: {assigned[idx]!r} vs {label!r}")
        assigned.setdefault(idx, label)
    out = {}
    for lang in corpus.languages:
        rows = []
        for idx, label in assigned.items():
            tokens = corpus.sentences[lang][idx]
            if not tokens:
                raise ValueError(f"labelled sentence {idx} is empty in {lang!r}")
            rows.append(LabeledSentence(tokens, label, lang))
        out[lang] = rows
    return out


def corpus_stats(corpus: ParallelCorpus) -> dict:
    return {lang: {"tokens": sum(len(s) for s in corpus.sentences[lang]),
                   "sentences": sum(1 for s in corpus.sentences[lang] if s)}
            for lang in corpus.languages}


@dataclass(frozen=True)
class LabelMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class EvalReport:
    per_label: dict
    accuracy: float
    confusion: tuple  # confusion[gold][pred], rows/cols in LABELS order

    @property
    def support(self):
        return {lab: m.support for lab, m in self.per_label.items()}

    @property
    def total(self):
        return sum(sum(r) for r in self.confusion)

    def to_dict(self):
        return {
            "per_label": {lab: vars(m).copy() for lab, m in self.per_label.items()},
            "accuracy": self.accuracy,
            "support": self.support,
            "confusion": [list(r) for r in self.confusion],
            "labels": list(LABELS),
        }


def _ratio(num, den):
    return num / den if den else 0.0


def evaluate(predictions, gold) -> EvalReport:
    if len(predictions) != len(gold):
        raise ValueError(f"{len(predictions)} predictions vs {len(gold)} gold labels")
    if not gold:
        raise ValueError("nothing to evaluate")
    for lab in list(predictions) + list(gold):
        if lab not in LABELS:
            raise ValueError(f"label {lab!r} outside {LABELS}")
    conf = np.zeros((2, 2), dtype=int)
    for p, g in zip(predictions, gold):
        conf[LABELS.index(g), LABELS.index(p)] += 1
    per_label = {}
    for i, lab in enumerate(LABELS):
        tp = conf[i, i]
        precision = _ratio(tp, conf[:, i].sum())
        recall = _ratio(tp, conf[i, :].sum())
        f1 = _ratio(2 * precision * recall, precision + recall)
        per_label[lab] = LabelMetrics(float(precision), float(recall), float(f1), int(conf[i, :].sum()))
    accuracy = float(np.trace(conf) / conf.sum())
    return EvalReport(per_label, accuracy, tuple(tuple(int(v) for v in r) for r in conf))


def round_half_up(x: float, places: int = 2) -> str:
    q = Decimal(1).scaleb(-places)
    return str(Decimal(repr(float(x))).quantize(q, rounding=ROUND_HALF_UP))


def format_row(report: EvalReport) -> str:
    """One-line summary: ``neg P R F, pos P R F, accuracy A``."""
    parts = []
    for lab in LABELS:
        m = report.per_label[lab]
        parts.append(f"{lab} {round_half_up(m.precision)} {round_half_up(m.recall)} {round_half_up(m.f1)}")
    parts.append(f"accuracy {round_half_up(report.accuracy)}")
    return ", ".join(parts)


def format_table(reports: dict) -> str:
    """Aligned plain-text table, one block of rows per language."""
    header = ("Language", "Label", "Precision", "Recall", "F1-Score", "Accuracy")
    rows = []
    for lang, rep in reports.items():
        for i, lab in enumerate(LABELS):
            m = rep.per_label[lab]
            rows.append((lang if i == 0 else "", lab, round_half_up(m.precision), round_half_up(m.recall),
                         round_half_up(m.f1), round_half_up(rep.accuracy) if i == 0 else ""))
    widths = [max(len(r[c]) for r in [header] + rows) for c in range(len(header))]
    fmt = lambda r: "  ".join(v.ljust(w) for v, w in zip(r, widths)).rstrip()
    lines = [fmt(header), fmt(tuple("-" * w for w in widths))] + [fmt(r) for r in rows]
    return "\n".join(lines) + "\n"


def format_tsv(reports: dict) -> str:
    lines = ["language\tlabel\tprecision\trecall\tf1\tsupport\taccuracy"]
    for lang, rep in reports.items():
        for lab in LABELS:
            m = rep.per_label[lab]
            lines.append(f"{lang}\t{lab}\t{m.precision:.6f}\t{m.recall:.6f}\t{m.f1:.6f}\t{m.support}\t{rep.accuracy:.6f}")
    return "\n".join(lines) + "\n"
