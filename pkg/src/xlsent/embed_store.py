"""Dense word-embedding tables: text-format IO, normalization and retrieval.

The on-disk format is the word2vec text layout::

    <count> <dim>
    token v1 v2 ... v_dim

Tables are immutable; every transformation returns a new table.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from xlsent._io import atomic_write_text
from xlsent.errors import DataFormatError

logger = logging.getLogger(__name__)

NORMALIZE_MODES = ("l2", "center_then_l2")


class DuplicateTokenWarning(UserWarning):
    pass


@dataclass(frozen=True)
class NeighborHit:
    token: str
    score: float
    rank: int


@dataclass(frozen=True)
class LoadReport:
    path: str
    declared_count: int
    rows_read: int
    duplicates: int

    @property
    def count_mismatch(self) -> bool:
        return self.declared_count != self.rows_read


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """Ordered vocabulary plus a row-per-token float64 matrix.

    `rank_by_frequency` is True when row order reflects descending corpus
    frequency, which the refinement step relies on. `lang` is an optional
    language code used to sanity-check lexicon direction.
    """

    tokens: tuple
    vectors: np.ndarray
    rank_by_frequency: bool = True
    lang: str | None = None
    _index: dict = field(init=False, repr=False, compare=False)

    def __init__(self, tokens, vectors, rank_by_frequency=True, lang=None, dim=None):
        tokens = tuple(tokens)
        vectors = np.array(vectors, dtype=np.float64, copy=True)
        if vectors.ndim == 1 and vectors.size == 0:
            if dim is None:
                raise ValueError("dim is required for an empty table")
            vectors = vectors.reshape(0, dim)
        if vectors.ndim != 2:
            raise ValueError(f"vectors must be 2-D, got shape {vectors.shape}")
        if dim is not None and vectors.shape[1] != dim:
            raise ValueError(f"vectors have dim {vectors.shape[1]}, expected {dim}")
        if vectors.shape[1] < 1:
            raise ValueError("dim must be positive")
        if vectors.shape[0] != len(tokens):
            raise ValueError(f"{len(tokens)} tokens but {vectors.shape[0]} rows")
        if not np.all(np.isfinite(vectors)):
            bad = int(np.argwhere(~np.isfinite(vectors))[0, 0])
            raise ValueError(f"non-finite value in row for token {tokens[bad]!r}")
        index = {}
        for i, tok in enumerate(tokens):
            if not isinstance(tok, str) or not tok:
                raise ValueError(f"invalid token at row {i}: {tok!r}")
            if tok in index:
                raise ValueError(f"duplicate token {tok!r}")
            index[tok] = i
        vectors.flags.writeable = False
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "rank_by_frequency", bool(rank_by_frequency))
        object.__setattr__(self, "lang", lang)
        object.__setattr__(self, "_index", index)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def index(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise KeyError(f"unknown token {token!r}") from None

    def get(self, token, default=None):
        i = self._index.get(token)
        return default if i is None else self.vectors[i]

    def vector(self, token: str) -> np.ndarray:
        return self.vectors[self.index(token)]

    def replace(self, **changes) -> EmbeddingTable:
        kwargs = dict(
            tokens=self.tokens,
            vectors=self.vectors,
            rank_by_frequency=self.rank_by_frequency,
            lang=self.lang,
            dim=self.dim,
        )
        kwargs.update(changes)
        if "vectors" in changes:
            kwargs["dim"] = None if len(np.shape(changes["vectors"])) == 2 else self.dim
        return EmbeddingTable(**kwargs)

    def head(self, n: int) -> EmbeddingTable:
        """First `n` rows (the most frequent ones when frequency-ranked)."""
        n = min(n, len(self))
        return self.replace(tokens=self.tokens[:n], vectors=self.vectors[:n])

    def equals(self, other: EmbeddingTable) -> bool:
        """Bit-exact comparison of vocabulary and values."""
        return self.tokens == other.tokens and np.array_equal(self.vectors, other.vectors)


# ---------------------------------------------------------------------------
# text format


def _check_token(token, where):
    if not token or any(ch.isspace() for ch in token):
        raise DataFormatError(f"{where}: token {token!r} is empty or contains whitespace")


def load_text_format(path, *, lang=None, rank_by_frequency=True, return_report=False):
    """Read a word2vec text file.

    Duplicate tokens keep their first row; the duplicate count and any
    mismatch between the declared and actual row counts are reported through
    a `DuplicateTokenWarning` and the optional `LoadReport`.
    """
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        if isinstance(exc, FileNotFoundError):
            raise
        raise DataFormatError(f"{path}: cannot read file: {exc}") from exc

    tokens = []
    rows = []
    seen = set()
    duplicates = 0
    with fh:
        try:
            header = fh.readline()
        except UnicodeDecodeError as exc:
            raise DataFormatError(f"{path}: not valid UTF-8: {exc}") from exc
        parts = header.split()
        if len(parts) != 2:
            raise DataFormatError(f"{path}:1: header must be '<count> <dim>', got {header.strip()!r}")
        try:
            declared, dim = int(parts[0]), int(parts[1])
        except ValueError:
            raise DataFormatError(f"{path}:1: header values must be integers") from None
        if declared < 0 or dim <= 0:
            raise DataFormatError(f"{path}:1: header must hold a count >= 0 and a positive dim")

        lineno = 1
        while True:
            lineno += 1
            try:
                line = fh.readline()
            except UnicodeDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: not valid UTF-8: {exc}") from exc
            if not line:
                break
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.rstrip(" ").split(" ")
            token, values = fields[0], fields[1:]
            _check_token(token, f"{path}:{lineno}")
            if len(values) != dim:
                raise DataFormatError(
                    f"{path}:{lineno}: row length {len(values)} != dim {dim} (token {token!r})"
                )
            try:
                row = [float(v) for v in values]
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-numeric value for token {token!r}") from None
            if not all(math.isfinite(v) for v in row):
                raise DataFormatError(f"{path}:{lineno}: non-finite value for token {token!r}")
            if token in seen:
                duplicates += 1
                continue
            seen.add(token)
            tokens.append(token)
            rows.append(row)

    report = LoadReport(str(path), declared, len(tokens) + duplicates, duplicates)
    if duplicates:
        warnings.warn(f"{path}: {duplicates} duplicate tokens ignored (first kept)", DuplicateTokenWarning, stacklevel=2)
    if report.count_mismatch:
        logger.warning("%s: header declares %d rows, file has %d", path, declared, report.rows_read)
    vectors = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    table = EmbeddingTable(tokens, vectors, rank_by_frequency=rank_by_frequency, lang=lang)
    return (table, report) if return_report else table


def format_text(table: EmbeddingTable, fmt: str = ".6f") -> str:
    lines = [f"{len(table)} {table.dim}"]
    for token, row in zip(table.tokens, table.vectors):
        _check_token(token, "save")
        lines.append(token + " " + " ".join(format(v, fmt) for v in row))
    return "\n".join(lines) + "\n"


def save_text_format(table: EmbeddingTable, path, fmt: str = ".6f") -> None:
    """Write `table` in the format read by `load_text_format` (6 decimals by default)."""
    atomic_write_text(path, format_text(table, fmt))


def save_matrix(matrix, path) -> None:
    """Store a bare matrix in the text format, rows labelled by index.

    Values are written at full double precision so model parameters
    round-trip exactly.
    """
    matrix = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
    tokens = [str(i) for i in range(matrix.shape[0])]
    table = EmbeddingTable(tokens, matrix, rank_by_frequency=False, dim=matrix.shape[1])
    save_text_format(table, path, fmt=".17g")


def load_matrix(path) -> np.ndarray:
    table = load_text_format(path, rank_by_frequency=False)
    if list(table.tokens) != [str(i) for i in range(len(table))]:
        raise DataFormatError(f"{path}: matrix rows must be labelled 0..n-1")
    return np.array(table.vectors)


# ---------------------------------------------------------------------------
# normalization and retrieval


def normalize(table: EmbeddingTable, mode: str = "l2") -> EmbeddingTable:
    if mode not in NORMALIZE_MODES:
        raise ValueError(f"unknown normalization mode {mode!r}")
    x = np.array(table.vectors)
    if mode == "center_then_l2" and len(table):
        x = x - x.mean(axis=0, keepdims=True)
    norms = np.linalg.norm(x, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ValueError(f"cannot l2-normalize zero-norm row for token {table.tokens[zero[0]]!r}")
    return table.replace(vectors=x / norms[:, None])


def unit_rows(x: np.ndarray) -> np.ndarray:
    """Row-normalize; all-zero rows stay zero."""
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)


def top_k_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores; ties go to the lower index."""
    return np.argsort(-scores, kind="stable")[:k]


def _hits(tokens, scores, k):
    return [NeighborHit(tokens[i], float(scores[i]), r) for r, i in enumerate(top_k_indices(scores, k), 1)]


def cosine_knn(table: EmbeddingTable, query, k: int) -> list[NeighborHit]:
    query = np.asarray(query, dtype=np.float64)
    if query.shape != (table.dim,):
        raise ValueError(f"query has shape {query.shape}, table dim is {table.dim}")
    if k < 1 or k > len(table):
        raise ValueError(f"k must be in [1, {len(table)}], got {k}")
    qn = np.linalg.norm(query)
    if qn == 0:
        raise ValueError("query vector has zero norm")
    scores = unit_rows(table.vectors) @ (query / qn)
    return _hits(table.tokens, scores, k)


def mean_topk_similarity(queries: np.ndarray, keys: np.ndarray, k: int, chunk: int = 4096) -> np.ndarray:
    """Mean cosine of each query row to its `k` most similar key rows.

    Both arguments must already be unit-normalized.
    """
    n_keys = keys.shape[0]
    if k < 1 or k > n_keys:
        raise ValueError(f"k_csls={k} must be in [1, {n_keys}]")
    out = np.empty(queries.shape[0])
    for start in range(0, queries.shape[0], chunk):
        sims = queries[start:start + chunk] @ keys.T
        if k < n_keys:
            part = np.partition(sims, n_keys - k, axis=1)[:, n_keys - k:]
        else:
            part = sims
        out[start:start + chunk] = part.mean(axis=1)
    return out


def csls_scores(src_unit: np.ndarray, tgt_unit: np.ndarray, k_csls: int, *, r_src=None, r_tgt=None) -> np.ndarray:
    """CSLS matrix between unit-normalized source and target rows.

    ``2 cos(x, y) - r_tgt(x) - r_src(y)`` where `r_tgt(x)` is the mean cosine
    of x to its k_csls nearest target rows and `r_src(y)` the converse.
    Precomputed penalties may be passed when the full tables are larger than
    the rows being scored.
    """
    if r_tgt is None:
        r_tgt = mean_topk_similarity(src_unit, tgt_unit, k_csls)
    if r_src is None:
        r_src = mean_topk_similarity(tgt_unit, src_unit, k_csls)
    return 2 * (src_unit @ tgt_unit.T) - r_tgt[:, None] - r_src[None, :]


def csls_knn(source: EmbeddingTable, target: EmbeddingTable, source_token: str, k: int, k_csls: int) -> list[NeighborHit]:
    if source.dim != target.dim:
        raise ValueError(f"dim mismatch: source {source.dim}, target {target.dim}")
    if k_csls < 1 or k_csls > len(source) or k_csls > len(target):
        raise ValueError(f"k_csls={k_csls} exceeds the row count of a table ({len(source)}, {len(target)})")
    if k < 1 or k > len(target):
        raise ValueError(f"k must be in [1, {len(target)}], got {k}")
    x = unit_rows(source.vector(source_token)[None, :])
    src_unit = unit_rows(source.vectors)
    tgt_unit = unit_rows(target.vectors)
    r_tgt = mean_topk_similarity(x, tgt_unit, k_csls)
    r_src = mean_topk_similarity(tgt_unit, src_unit, k_csls)
    scores = csls_scores(x, tgt_unit, k_csls, r_src=r_src, r_tgt=r_tgt)[0]
    return _hits(target.tokens, scores, k)
