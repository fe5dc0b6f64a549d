"""Supervised orthogonal Procrustes alignment with CSLS refinement.

Embeddings are row vectors and a map acts as ``x -> x @ W``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from xlsent._io import atomic_write_json, read_json
from xlsent.embed_store import (
    EmbeddingTable,
    load_matrix,
    mean_topk_similarity,
    save_matrix,
    top_k_indices,
    unit_rows,
)
from xlsent.errors import NumericalError
from xlsent.lexicon import BilingualLexicon

logger = logging.getLogger(__name__)

ORTHO_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class LinearMap:
    matrix: np.ndarray
    source_lang: str | None = None
    target_lang: str | None = None
    orthogonal: bool = True

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"map matrix must be square, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise NumericalError("map matrix has non-finite entries")
        m.flags.writeable = False
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self):
        return self.matrix.shape[0]

    def orthogonality_error(self) -> float:
        return float(np.max(np.abs(self.matrix.T @ self.matrix - np.eye(self.dim))))

    def inverse(self) -> LinearMap:
        """Transpose, which inverts an orthogonal map."""
        if not self.orthogonal:
            raise ValueError("only orthogonal maps are inverted by transposition")
        return LinearMap(self.matrix.T, self.target_lang, self.source_lang, True)

    @classmethod
    def identity(cls, dim, source_lang=None, target_lang=None):
        return cls(np.eye(dim), source_lang, target_lang, True)


def apply_map(m: LinearMap, table: EmbeddingTable) -> EmbeddingTable:
    if table.dim != m.dim:
        raise ValueError(f"table dim {table.dim} != map dim {m.dim}")
    lang = m.target_lang if m.target_lang is not None else table.lang
    return table.replace(vectors=table.vectors @ m.matrix, lang=lang)


def compose(first: LinearMap, second: LinearMap) -> LinearMap:
    """Map a->c from a->b followed by b->c."""
    if first.dim != second.dim:
        raise ValueError(f"dim mismatch: {first.dim} vs {second.dim}")
    if first.target_lang is not None and second.source_lang is not None and first.target_lang != second.source_lang:
        raise ValueError(f"cannot compose {first.source_lang}->{first.target_lang} with {second.source_lang}->{second.target_lang}")
    return LinearMap(first.matrix @ second.matrix, first.source_lang, second.target_lang,
                     first.orthogonal and second.orthogonal)


def save_map(m: LinearMap, prefix) -> None:
    prefix = Path(prefix)
    save_matrix(m.matrix, prefix.with_name(prefix.name + ".matrix.txt"))
    atomic_write_json(prefix.with_name(prefix.name + ".json"), {
        "source_lang": m.source_lang, "target_lang": m.target_lang, "orthogonal": m.orthogonal,
    })


def load_map(prefix) -> LinearMap:
    prefix = Path(prefix)
    meta = read_json(prefix.with_name(prefix.name + ".json"))
    return LinearMap(load_matrix(prefix.with_name(prefix.name + ".matrix.txt")),
                     meta["source_lang"], meta["target_lang"], meta["orthogonal"])


# ---------------------------------------------------------------------------
# Procrustes


def procrustes_matrices(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Orthogonal W minimizing ||x W - y||_F: W = U V^T with x^T y = U S V^T."""
    u, _, vt = np.linalg.svd(x.T @ y)
    return u @ vt


@dataclass(frozen=True)
class ResolvedPairs:
    source_rows: np.ndarray
    target_rows: np.ndarray
    dropped: int


def resolve_pairs(source: EmbeddingTable, target: EmbeddingTable, dictionary: BilingualLexicon) -> ResolvedPairs:
    src, tgt = [], []
    dropped = 0
    for p in dictionary.pairs:
        i = source._index.get(p.source)
        j = target._index.get(p.target)
        if i is None or j is None:
            dropped += 1
            continue
        src.append(i)
        tgt.append(j)
    return ResolvedPairs(np.array(src, dtype=np.int64), np.array(tgt, dtype=np.int64), dropped)


def _fit_rows(source, target, src_rows, tgt_rows, source_lang, target_lang):
    if len(src_rows) < source.dim:
        raise NumericalError(
            f"only {len(src_rows)} resolvable dictionary pairs; Procrustes needs at least dim={source.dim}"
        )
    w = procrustes_matrices(source.vectors[src_rows], target.vectors[tgt_rows])
    return LinearMap(w, source_lang, target_lang, True)


def procrustes_fit(source: EmbeddingTable, target: EmbeddingTable, dictionary: BilingualLexicon) -> LinearMap:
    if source.dim != target.dim:
        raise ValueError(f"dim mismatch: source {source.dim}, target {target.dim}")
    resolved = resolve_pairs(source, target, dictionary)
    if resolved.dropped:
        logger.info("procrustes: dropped %d unresolvable pairs of %d", resolved.dropped, len(dictionary))
    return _fit_rows(source, target, resolved.source_rows, resolved.target_rows,
                     source.lang or dictionary.source_lang, target.lang or dictionary.target_lang)


# ---------------------------------------------------------------------------
# refinement


@dataclass(frozen=True)
class AlignConfig:
    refinement_iterations: int = 5
    csls_k: int = 10
    induction_vocab: int = 10000
    seed: int = 1
    retrieval: str = "csls"

    def __post_init__(self):
        if self.refinement_iterations < 0:
            raise ValueError("refinement_iterations must be >= 0")
        if self.csls_k < 1 or self.induction_vocab < 1:
            raise ValueError("csls_k and induction_vocab must be positive")
        if self.retrieval not in ("csls", "cosine"):
            raise ValueError(f"unknown retrieval {self.retrieval!r}")


@dataclass
class RefineTrace:
    sizes: list = field(default_factory=list)
    stopped_early: bool = False


def _best_rows(a_unit, b_unit, pen_a, pen_b, chunk=2048):
    """For each row of a, the index of the best-scoring row of b (first on ties)."""
    out = np.empty(a_unit.shape[0], dtype=np.int64)
    for start in range(0, a_unit.shape[0], chunk):
        sims = 2 * (a_unit[start:start + chunk] @ b_unit.T) - pen_b[None, :]
        if pen_a is not None:
            sims -= pen_a[start:start + chunk, None]
        out[start:start + chunk] = np.argmax(sims, axis=1)
    return out


def induce_dictionary(mapped_src: np.ndarray, tgt: np.ndarray, retrieval="csls", k=10):
    """Mutual nearest neighbours between two row sets. Returns (src_rows, tgt_rows)."""
    s_unit, t_unit = unit_rows(mapped_src), unit_rows(tgt)
    if retrieval == "cosine":
        zs, zt = np.zeros(len(s_unit)), np.zeros(len(t_unit))
        fwd = _best_rows(s_unit, t_unit, None, zt)
        bwd = _best_rows(t_unit, s_unit, None, zs)
    else:
        r_t = mean_topk_similarity(s_unit, t_unit, k)
        r_s = mean_topk_similarity(t_unit, s_unit, k)
        fwd = _best_rows(s_unit, t_unit, r_t, r_s)
        bwd = _best_rows(t_unit, s_unit, r_s, r_t)
    src_rows = np.flatnonzero(bwd[fwd] == np.arange(len(fwd)))
    return src_rows, fwd[src_rows]


def refine(m: LinearMap, source: EmbeddingTable, target: EmbeddingTable, config: AlignConfig):
    """Alternate mutual-neighbour dictionary induction and Procrustes fitting.

    Induction looks only at the first `induction_vocab` rows on each side, so
    both tables must be frequency-ranked. Returns (map, RefineTrace); when an
    induced dictionary is smaller than dim the previous map is kept and
    `stopped_early` is set.
    """
    if not (source.rank_by_frequency and target.rank_by_frequency):
        raise ValueError("refine requires frequency-ranked tables (rank_by_frequency=True)")
    trace = RefineTrace()
    src_head = source.head(config.induction_vocab)
    tgt_head = target.head(config.induction_vocab)
    k = min(config.csls_k, len(src_head), len(tgt_head))
    for it in range(config.refinement_iterations):
        mapped = src_head.vectors @ m.matrix
        src_rows, tgt_rows = induce_dictionary(mapped, tgt_head.vectors, config.retrieval, k)
        trace.sizes.append(len(src_rows))
        if len(src_rows) < source.dim:
            logger.warning("refinement iteration %d induced only %d pairs (< dim %d); stopping",
                           it + 1, len(src_rows), source.dim)
            trace.stopped_early = True
            break
        m = _fit_rows(src_head, tgt_head, src_rows, tgt_rows, m.source_lang, m.target_lang)
        logger.info("refinement iteration %d: %d induced pairs", it + 1, len(src_rows))
    return m, trace


# ---------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class TranslationMetrics:
    pairs_evaluated: int
    pairs_dropped: int
    lemmas_evaluated: int
    p_at: dict

    def to_dict(self):
        return {
            "pairs_evaluated": self.pairs_evaluated,
            "pairs_dropped": self.pairs_dropped,
            "lemmas_evaluated": self.lemmas_evaluated,
            "p_at": {str(k): v for k, v in self.p_at.items()},
        }


def evaluate_translation(m: LinearMap, source: EmbeddingTable, target: EmbeddingTable, test: BilingualLexicon,
                         k_values=(1, 5, 10), retrieval="csls", csls_k=10) -> TranslationMetrics:
    """Precision@k of word translation over the test lexicon's source lemmas.

    A lemma counts as correct at k when any of its gold translations is among
    the top-k retrieved target tokens.
    """
    if retrieval not in ("csls", "cosine"):
        raise ValueError(f"unknown retrieval {retrieval!r}")
    resolved = resolve_pairs(source, target, test)
    if len(resolved.source_rows) == 0:
        raise ValueError("no test pair resolves in both vocabularies")
    gold = {}
    for i, j in zip(resolved.source_rows, resolved.target_rows):
        gold.setdefault(int(i), set()).add(int(j))
    queries = np.array(sorted(gold))
    k_values = sorted(set(int(k) for k in k_values))
    if k_values[0] < 1:
        raise ValueError("k values must be positive")
    kmax = min(k_values[-1], len(target))

    tgt_unit = unit_rows(target.vectors)
    q_unit = unit_rows(source.vectors[queries] @ m.matrix)
    r_src = r_tgt = None
    if retrieval == "csls":
        k = min(csls_k, len(source), len(target))
        r_src = mean_topk_similarity(tgt_unit, unit_rows(source.vectors @ m.matrix), k)
        r_tgt = mean_topk_similarity(q_unit, tgt_unit, k)

    hits = {k: 0 for k in k_values}
    chunk = 1024
    for start in range(0, len(queries), chunk):
        sims = q_unit[start:start + chunk] @ tgt_unit.T
        if r_src is not None:
            sims = 2 * sims - r_tgt[start:start + chunk, None] - r_src[None, :]
        for row, qi in zip(sims, queries[start:start + chunk]):
            ranked = top_k_indices(row, kmax)
            first = next((r for r, j in enumerate(ranked, 1) if int(j) in gold[int(qi)]), None)
            for k in k_values:
                if first is not None and first <= k:
                    hits[k] += 1
    n = len(queries)
    return TranslationMetrics(len(resolved.source_rows), resolved.dropped, n, {k: hits[k] / n for k in k_values})
