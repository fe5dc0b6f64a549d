"""Bilingual translation lexicons: loading, merging, splitting and negation remapping."""

from __future__ import annotations

import logging
import math
import warnings
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from xlsent._io import atomic_write_text
from xlsent.errors import DataFormatError

logger = logging.getLogger(__name__)

BASE = "base"
PREDICTED = "predicted"
PROVENANCES = (BASE, PREDICTED)

DEFAULT_NEGATION_REMAP = (("no", "nt"), ("not", "nt"))


class EmptyLexiconWarning(UserWarning):
    pass


class DuplicatePairWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LexiconPair:
    source: str
    target: str
    provenance: str = BASE


@dataclass(frozen=True)
class BilingualLexicon:
    """Directed (source lemma, target lemma) pairs with provenance.

    Pairs are unique on (source, target); construct through `from_pairs` to
    deduplicate arbitrary input.
    """

    source_lang: str
    target_lang: str
    pairs: tuple = ()

    def __post_init__(self):
        pairs = tuple(p if isinstance(p, LexiconPair) else LexiconPair(*p) for p in self.pairs)
        seen = set()
        for p in pairs:
            if not p.source.strip() or not p.target.strip():
                raise ValueError(f"empty lemma in pair {p}")
            if p.provenance not in PROVENANCES:
                raise ValueError(f"unknown provenance {p.provenance!r}")
            key = (p.source, p.target)
            if key in seen:
                raise ValueError(f"duplicate pair {key}")
            seen.add(key)
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def from_pairs(cls, source_lang, target_lang, pairs, provenance=BASE):
        """Build a lexicon, dropping repeated pairs. Returns (lexicon, n_duplicates)."""
        out = {}
        duplicates = 0
        for p in pairs:
            if not isinstance(p, LexiconPair):
                p = LexiconPair(p[0].strip(), p[1].strip(), p[2] if len(p) > 2 else provenance)
            key = (p.source, p.target)
            if key in out:
                duplicates += 1
                continue
            out[key] = p
        return cls(source_lang, target_lang, tuple(out.values())), duplicates

    def __len__(self):
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def source_lemmas(self) -> list[str]:
        """Distinct source lemmas in first-appearance order."""
        return list(dict.fromkeys(p.source for p in self.pairs))

    def by_source(self) -> dict[str, list[str]]:
        out = {}
        for p in self.pairs:
            out.setdefault(p.source, []).append(p.target)
        return out

    def invert(self) -> BilingualLexicon:
        return BilingualLexicon(
            self.target_lang,
            self.source_lang,
            tuple(LexiconPair(p.target, p.source, p.provenance) for p in self.pairs),
        )

    def with_pairs(self, extra, provenance=BASE) -> BilingualLexicon:
        """Append (source, target) pairs that are not already present."""
        lex, _ = BilingualLexicon.from_pairs(
            self.source_lang, self.target_lang,
            list(self.pairs) + [LexiconPair(s, t, provenance) for s, t in extra],
        )
        return lex

    def counts(self) -> dict:
        base = sum(p.provenance == BASE for p in self.pairs)
        return {"base": base, "predicted": len(self.pairs) - base, "total": len(self.pairs)}


def load_pairs(path, format="tsv", *, source_lang="src", target_lang="tgt", provenance=BASE, return_report=False):
    """Read a TSV or XML dictionary.

    TSV holds one ``source<TAB>target`` per line. XML holds ``<e>`` entries
    under one root, each with an ``<l>`` lemma and one or more ``<t>``
    translations.
    """
    path = Path(path)
    if format == "tsv":
        raw = _read_tsv(path)
    elif format == "xml":
        raw = _read_xml(path)
    else:
        raise ValueError(f"unknown lexicon format {format!r}")
    lexicon, duplicates = BilingualLexicon.from_pairs(
        source_lang, target_lang, [(s, t, provenance) for s, t in raw]
    )
    if not raw:
        warnings.warn(f"{path}: lexicon is empty", EmptyLexiconWarning, stacklevel=2)
    if duplicates:
        warnings.warn(f"{path}: {duplicates} duplicate pairs dropped", DuplicatePairWarning, stacklevel=2)
    report = {"path": str(path), "pairs": len(lexicon), "duplicates": duplicates}
    return (lexicon, report) if return_report else lexicon


def _read_tsv(path):
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not fields[0].strip() or not fields[1].strip():
                raise DataFormatError(f"{path}:{lineno}: expected 'source<TAB>target', got {line!r}")
            pairs.append((fields[0].strip(), fields[1].strip()))
    return pairs


def _read_xml(path):
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as exc:
        if Path(path).read_text(encoding="utf-8").strip() == "":
            return []
        raise DataFormatError(f"{path}: malformed XML: {exc}") from exc
    pairs = []
    for n, entry in enumerate(root.iter("e"), 1):
        lemmas = entry.findall("l")
        if len(lemmas) != 1 or not (lemmas[0].text or "").strip():
            raise DataFormatError(f"{path}: entry #{n} needs exactly one non-empty <l> element")
        translations = entry.findall("t")
        if not translations:
            raise DataFormatError(f"{path}: entry #{n} ({lemmas[0].text.strip()!r}) has no <t> element")
        for t in translations:
            text = (t.text or "").strip()
            if not text:
                raise DataFormatError(f"{path}: entry #{n} has an empty <t> element")
            pairs.append((lemmas[0].text.strip(), text))
    return pairs


def save_pairs(lexicon: BilingualLexicon, path) -> None:
    atomic_write_text(path, "".join(f"{p.source}\t{p.target}\n" for p in lexicon.pairs))


def merge(base: BilingualLexicon, predicted: BilingualLexicon) -> BilingualLexicon:
    """Union of a base and a predicted lexicon; `base` wins on overlap."""
    if (base.source_lang, base.target_lang) != (predicted.source_lang, predicted.target_lang):
        raise ValueError(
            f"language pair mismatch: {base.source_lang}->{base.target_lang} "
            f"vs {predicted.source_lang}->{predicted.target_lang}"
        )
    out = {}
    for p in base.pairs:
        out[(p.source, p.target)] = LexiconPair(p.source, p.target, BASE)
    for p in predicted.pairs:
        out.setdefault((p.source, p.target), LexiconPair(p.source, p.target, PREDICTED))
    return BilingualLexicon(base.source_lang, base.target_lang, tuple(out.values()))


def split_train_test(lexicon: BilingualLexicon, test_fraction: float, seed: int):
    """Partition by source lemma so no lemma's pairs straddle the split.

    The test side receives ``round(test_fraction * n_lemmas)`` lemmas
    (half-up), clamped so both sides keep at least one lemma.
    """
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    lemmas = lexicon.source_lemmas()
    if len(lemmas) < 2:
        raise ValueError("need at least 2 source lemmas to split")
    n_test = int(math.floor(test_fraction * len(lemmas) + 0.5))
    n_test = min(max(n_test, 1), len(lemmas) - 1)
    order = np.random.default_rng(seed).permutation(len(lemmas))
    test_lemmas = {lemmas[i] for i in order[:n_test]}
    train = tuple(p for p in lexicon.pairs if p.source not in test_lemmas)
    test = tuple(p for p in lexicon.pairs if p.source in test_lemmas)
    return (
        BilingualLexicon(lexicon.source_lang, lexicon.target_lang, train),
        BilingualLexicon(lexicon.source_lang, lexicon.target_lang, test),
    )


def apply_negation_remap(tokens, remap=DEFAULT_NEGATION_REMAP) -> list[str]:
    """Replace whole tokens matching a `from` entry (case-insensitive) by its `to`."""
    table = {src.lower(): dst for src, dst in remap}
    return [table.get(tok.lower(), tok) for tok in tokens]
