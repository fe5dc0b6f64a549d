"""PCA reduction and dictionary cloning of a pivot-language embedding table."""

from __future__ import annotations

import logging
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from xlsent._io import atomic_write_json, read_json
from xlsent.embed_store import EmbeddingTable, load_matrix, save_matrix
from xlsent.lexicon import BilingualLexicon

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class PcaModel:
    """Column-centering mean plus `d_in x d_out` orthonormal components.

    `explained_variance` uses the unbiased (n - 1) estimator, so it equals the
    sample variance of each projected column on the fitting table.
    """

    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    @property
    def d_in(self):
        return self.components.shape[0]

    @property
    def d_out(self):
        return self.components.shape[1]


def pca_fit(table: EmbeddingTable, target_dim: int) -> PcaModel:
    n, d = table.vectors.shape
    if target_dim < 1 or target_dim > d:
        raise ValueError(f"target_dim must be in [1, {d}], got {target_dim}")
    if n < 2:
        raise ValueError(f"PCA needs at least 2 rows, got {n}")
    mean = table.vectors.mean(axis=0)
    centered = table.vectors - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:target_dim].T.copy()
    # target_dim may exceed the number of singular vectors when n < d
    if components.shape[1] < target_dim:
        components = _complete_basis(components, target_dim)
        s = np.concatenate([s, np.zeros(target_dim - len(s))])
    idx = np.argmax(np.abs(components), axis=0)
    signs = np.sign(components[idx, np.arange(target_dim)])
    signs[signs == 0] = 1.0
    components *= signs
    variance = s[:target_dim] ** 2 / (n - 1)
    return PcaModel(mean, components, variance)


def _complete_basis(q, target_dim):
    d = q.shape[0]
    basis = [q[:, j] for j in range(q.shape[1])]
    for e in np.eye(d):
        if len(basis) == target_dim:
            break
        v = e - sum(np.dot(e, b) * b for b in basis)
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            basis.append(v / norm)
    return np.stack(basis, axis=1)


def pca_apply(model: PcaModel, table: EmbeddingTable) -> EmbeddingTable:
    if table.dim != model.d_in:
        raise ValueError(f"table dim {table.dim} != PCA input dim {model.d_in}")
    projected = (table.vectors - model.mean) @ model.components
    return table.replace(vectors=projected.reshape(len(table), model.d_out))


def save_pca(model: PcaModel, prefix) -> None:
    """Write `<prefix>.components.txt` plus a `<prefix>.json` sidecar."""
    prefix = Path(prefix)
    save_matrix(model.components, prefix.with_name(prefix.name + ".components.txt"))
    atomic_write_json(prefix.with_name(prefix.name + ".json"), {
        "d_in": model.d_in,
        "d_out": model.d_out,
        "mean": model.mean.tolist(),
        "explained_variance": model.explained_variance.tolist(),
    })


def load_pca(prefix) -> PcaModel:
    prefix = Path(prefix)
    meta = read_json(prefix.with_name(prefix.name + ".json"))
    components = load_matrix(prefix.with_name(prefix.name + ".components.txt"))
    if components.shape != (meta["d_in"], meta["d_out"]):
        raise ValueError(f"{prefix}: component shape {components.shape} disagrees with sidecar")
    return PcaModel(np.array(meta["mean"]), components, np.array(meta["explained_variance"]))


@dataclass(frozen=True)
class CloneReport:
    pairs_used: int
    pairs_skipped_oov: int
    pairs_skipped_multiword: int
    resulting_vocab: int
    collisions: int

    def to_dict(self):
        return asdict(self)


def _is_multiword(lemma):
    return any(ch.isspace() for ch in lemma)


def clone_via_lexicon(pivot: EmbeddingTable, lexicon: BilingualLexicon, skip_multiword: bool = True):
    """Build a table for the lexicon's target language from pivot vectors.

    Each target lemma gets the mean of the pivot vectors of every pivot lemma
    translated to it. Rows are ordered by the earliest contributing pivot row,
    so the pivot's frequency ranking carries over. Returns (table, report).
    """
    if len(lexicon) == 0:
        raise ValueError("cannot clone through an empty lexicon")
    if pivot.lang is not None and lexicon.source_lang != pivot.lang:
        raise ValueError(
            f"lexicon source language {lexicon.source_lang!r} does not match pivot table {pivot.lang!r}"
        )
    sources = {}
    used = oov = multiword = 0
    for pair in lexicon.pairs:
        if skip_multiword and (_is_multiword(pair.source) or _is_multiword(pair.target)):
            multiword += 1
            continue
        row = pivot._index.get(pair.source)
        if row is None:
            oov += 1
            continue
        if _is_multiword(pair.target):
            # tokens with whitespace cannot be serialized
            multiword += 1
            continue
        used += 1
        sources.setdefault(pair.target, set()).add(row)
    if not sources:
        raise ValueError("no lexicon pair matched the pivot vocabulary; refusing to build an empty table")

    order = sorted(sources, key=lambda lemma: (min(sources[lemma]), lemma))
    vectors = np.empty((len(order), pivot.dim))
    for i, lemma in enumerate(order):
        rows = sorted(sources[lemma])
        vectors[i] = pivot.vectors[rows].mean(axis=0)
    collisions = sum(len(r) > 1 for r in sources.values())
    table = EmbeddingTable(order, vectors, rank_by_frequency=pivot.rank_by_frequency, lang=lexicon.target_lang)
    report = CloneReport(used, oov, multiword, len(order), collisions)
    logger.info("cloned %s -> %s: %s", lexicon.source_lang, lexicon.target_lang, report)
    return table, report
