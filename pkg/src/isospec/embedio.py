"""Loading and preprocessing of word embeddings in word2vec text format.

A file looks like::

    <n> <d>
    token v1 v2 ... vd
    ...

Rows are assumed to be sorted by frequency (the fastText convention), so
truncating to the first ``limit`` rows keeps the most frequent words.
"""

from __future__ import annotations

import gzip
import io
import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

_SEPARATORS = re.compile(r"[ \t]+")

__all__ = [
    "EmbeddingFormatError",
    "EmbeddingSpace",
    "ZeroNormError",
    "lang_id_from_path",
    "length_normalize",
    "load_embeddings",
    "mean_center",
    "preprocess",
]


class EmbeddingFormatError(ValueError):
    """Malformed embedding file. Carries the path and 1-based line number."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        self.path = None if path is None else str(path)
        self.line = line
        where = ""
        if self.path is not None:
            where = self.path if line is None else f"{self.path}:{line}"
            where += ": "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)


class ZeroNormError(ValueError):
    """A row with zero Euclidean norm cannot be length-normalized."""

    def __init__(self, token: str, index: int):
        self.token = token
        self.index = index
        super().__init__(f"zero-norm vector for token {token!r} (row {index})")


@dataclass(frozen=True)
class EmbeddingSpace:
    """An immutable ``n x d`` embedding matrix plus its vocabulary.

    ``length_normalized`` and ``mean_centered`` record which preprocessing
    steps were applied, in order; they do not promise that both invariants
    hold at once (centering after normalizing breaks unit norms).

    The matrix is copied unless it is already a read-only float64 array,
    which is adopted as is so large spaces are not duplicated.
    """

    lang_id: str
    vocab: tuple[str, ...]
    matrix: np.ndarray
    length_normalized: bool = False
    mean_centered: bool = False
    duplicates_skipped: int = field(default=0, compare=False)

    def __post_init__(self) -> None:
        matrix = self.matrix
        if not (isinstance(matrix, np.ndarray) and matrix.dtype == np.float64 and not matrix.flags.writeable):
            matrix = np.array(matrix, dtype=np.float64, copy=True)
        if matrix.ndim != 2:
            raise ValueError(f"embedding matrix must be 2-D, got shape {matrix.shape}")
        n, d = matrix.shape
        if n < 1 or d < 1:
            raise ValueError(f"embedding matrix must be non-empty, got shape {matrix.shape}")
        vocab = tuple(self.vocab)
        if len(vocab) != n:
            raise ValueError(f"vocabulary has {len(vocab)} tokens but matrix has {n} rows")
        if len(set(vocab)) != n:
            raise ValueError("vocabulary contains duplicate tokens")
        if not np.isfinite(matrix).all():
            bad = int(np.argwhere(~np.isfinite(matrix))[0, 0])
            raise ValueError(f"non-finite value in vector for token {vocab[bad]!r}")
        matrix.flags.writeable = False
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "vocab", vocab)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def d(self) -> int:
        return self.matrix.shape[1]

    @property
    def flags(self) -> dict[str, bool]:
        return {"length_normalized": self.length_normalized, "mean_centered": self.mean_centered}

    def head(self, rows: int) -> EmbeddingSpace:
        """The first ``rows`` rows (the most frequent words)."""
        rows = min(rows, self.n)
        return replace(self, vocab=self.vocab[:rows], matrix=self.matrix[:rows])


def lang_id_from_path(path: str | Path) -> str:
    """``wiki.en.vec.gz`` -> ``wiki.en``."""
    name = Path(path).name
    for suffix in (".gz", ".vec", ".txt"):
        if name.endswith(suffix) and len(name) > len(suffix):
            name = name[: -len(suffix)]
    return name


def _split_fields(line: str) -> list[str]:
    # ASCII separators only: real .vec files carry tokens with U+00A0, U+3000, ...
    fields = line.rstrip(" \t\r\n").split(" ")
    if "" in fields or "\t" in line:
        fields = [f for f in _SEPARATORS.split(line.strip(" \t\r\n")) if f]
    return fields


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _open_text(path: Path) -> io.TextIOBase:
    if path.name.endswith(".gz"):
        return gzip.open(path, "rt", encoding="utf-8", newline="\n")
    return open(path, "r", encoding="utf-8", newline="\n")


def load_embeddings(
    path: str | Path,
    limit: int | None = None,
    expect_dim: int | None = None,
    lang_id: str | None = None,
) -> EmbeddingSpace:
    """Read a word2vec text file, keeping the first ``limit`` unique tokens.

    Args:
        path: ``.vec``/``.txt`` file, or gzip-compressed if it ends in ``.gz``.
        limit: maximum number of rows to keep; ``None`` keeps all of them.
        expect_dim: if given, the header dimensionality must equal it.
        lang_id: tag for the space; defaults to the file name stem.

    Returns:
        An :class:`EmbeddingSpace` with both preprocessing flags unset.

    Raises:
        EmbeddingFormatError: bad header, wrong field count, unparsable or
            non-finite value, truncated file, or dimensionality mismatch.
        OSError: the file cannot be opened.
    """
    path = Path(path)
    if limit is not None and limit < 1:
        raise ValueError(f"limit must be positive, got {limit}")
    if expect_dim is not None and expect_dim < 1:
        raise ValueError(f"expect_dim must be positive, got {expect_dim}")

    with _open_text(path) as fh:
        header = fh.readline()
        parts = header.split()
        try:
            if len(parts) != 2:
                raise ValueError
            n_header, d = int(parts[0]), int(parts[1])
        except ValueError:
            raise EmbeddingFormatError(
                f"expected header '<n> <d>', got {header.strip()[:60]!r}", path, 1
            ) from None
        if n_header < 1 or d < 1:
            raise EmbeddingFormatError(f"header counts must be positive, got {n_header} {d}", path, 1)
        if expect_dim is not None and d != expect_dim:
            raise EmbeddingFormatError(f"dimensionality {d} does not match expected {expect_dim}", path, 1)

        keep = n_header if limit is None else min(n_header, limit)
        matrix = np.empty((keep, d), dtype=np.float64)
        vocab: list[str] = []
        seen: set[str] = set()
        duplicates = 0
        lineno = 1
        rows_read = 0
        for line in fh:
            lineno += 1
            if len(vocab) >= keep:
                break
            fields = _split_fields(line)
            if not fields:
                raise EmbeddingFormatError("empty line", path, lineno)
            if len(fields) != d + 1:
                raise EmbeddingFormatError(
                    f"expected {d + 1} fields (token + {d} values), got {len(fields)}", path, lineno
                )
            rows_read += 1
            token = fields[0]
            if token in seen:
                duplicates += 1
                continue
            try:
                row = np.array(fields[1:], dtype=np.float64)
            except ValueError:
                raise EmbeddingFormatError(f"unparsable value in vector for {token!r}", path, lineno) from None
            if not np.isfinite(row).all():
                raise EmbeddingFormatError(f"non-finite value in vector for {token!r}", path, lineno)
            matrix[len(vocab)] = row
            vocab.append(token)
            seen.add(token)
        else:
            if len(vocab) < keep and rows_read < n_header:
                raise EmbeddingFormatError(
                    f"header announces {n_header} rows but file ends after {rows_read}", path, lineno
                )

    if not vocab:
        raise EmbeddingFormatError("no usable rows", path)
    if duplicates:
        logger.warning("%s: skipped %d duplicate token(s)", path, duplicates)
    return EmbeddingSpace(
        lang_id=lang_id if lang_id is not None else lang_id_from_path(path),
        vocab=tuple(vocab),
        matrix=_frozen(matrix if len(vocab) == keep else matrix[: len(vocab)].copy()),
        duplicates_skipped=duplicates,
    )


def length_normalize(space: EmbeddingSpace) -> EmbeddingSpace:
    """Scale every row to unit Euclidean norm."""
    norms = np.linalg.norm(space.matrix, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        i = int(zero[0])
        raise ZeroNormError(space.vocab[i], i)
    return replace(space, matrix=_frozen(space.matrix / norms[:, None]), length_normalized=True)


def mean_center(space: EmbeddingSpace) -> EmbeddingSpace:
    """Subtract the column means, so every column averages to zero."""
    centered = space.matrix - space.matrix.mean(axis=0)
    return replace(space, matrix=_frozen(centered), mean_centered=True)


def preprocess(space: EmbeddingSpace, normalize: bool = True, center: bool = True) -> EmbeddingSpace:
    """The canonical pipeline: length-normalize, then mean-center."""
    if normalize and not space.length_normalized:
        space = length_normalize(space)
    if center and not space.mean_centered:
        space = mean_center(space)
    return space
