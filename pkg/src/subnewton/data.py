"""Dataset ingestion and sparse matrix kernels.

Datasets are binary classification problems: a CSR design matrix of feature
rows paired with labels in {-1, +1}. The on-disk format is LIBSVM text
(``label idx:val idx:val ...`` with 1-based indices); indices are 0-based
internally. A deterministic synthetic generator provides test problems with a
controlled singular-value spread.
"""

import io
import warnings
from dataclasses import dataclass, field
from typing import IO, Iterable, Optional, Union

import numpy as np

from .rng import stream


class LibsvmParseError(ValueError):
    """Malformed LIBSVM input. Carries the 1-based line number."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class DimensionError(ValueError):
    """Operand shapes (or declared dimensions) do not match."""


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Immutable CSR matrix.

    ``row_offsets`` has length ``n_rows + 1``; row ``i`` owns the slice
    ``[row_offsets[i], row_offsets[i+1])`` of ``col_indices``/``values``.
    Column indices are strictly increasing within each row.
    """

    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        offsets = np.ascontiguousarray(self.row_offsets, dtype=np.int64)
        cols = np.ascontiguousarray(self.col_indices, dtype=np.int64)
        vals = np.ascontiguousarray(self.values, dtype=np.float64)
        if offsets.shape != (self.n_rows + 1,):
            raise ValueError("row_offsets must have length n_rows + 1")
        if offsets[0] != 0 or offsets[-1] != len(vals):
            raise ValueError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(offsets) < 0):
            raise ValueError("row_offsets must be nondecreasing")
        if len(cols) != len(vals):
            raise ValueError("col_indices and values must have equal length")
        if len(cols) and (cols.min() < 0 or cols.max() >= self.n_cols):
            raise ValueError("column index out of range")
        if len(cols) > 1:
            # adjacent pairs must increase except across row boundaries
            mask = np.ones(len(cols) - 1, dtype=bool)
            interior = offsets[1:-1]
            interior = interior[(interior > 0) & (interior < len(cols))]
            mask[interior - 1] = False
            if np.any(np.diff(cols)[mask] <= 0):
                bad = int(np.nonzero((np.diff(cols) <= 0) & mask)[0][0])
                row = int(np.searchsorted(offsets, bad, side="right")) - 1
                raise ValueError(
                    f"row {row}: column indices not strictly increasing")
        for arr in (offsets, cols, vals):
            arr.flags.writeable = False
        object.__setattr__(self, "row_offsets", offsets)
        object.__setattr__(self, "col_indices", cols)
        object.__setattr__(self, "values", vals)
        # row id per stored entry, for bincount-based products
        object.__setattr__(
            self, "_row_ids", np.repeat(np.arange(self.n_rows), np.diff(offsets))
        )

    @property
    def nnz(self) -> int:
        return len(self.values)

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        """Column indices and values of row ``i`` (views)."""
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[lo:hi], self.values[lo:hi]

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols))
        out[self._row_ids, self.col_indices] = self.values
        return out

    def row_norms_sq(self) -> np.ndarray:
        """Squared Euclidean norm of every row."""
        return np.bincount(self._row_ids, weights=self.values**2,
                           minlength=self.n_rows)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SparseMatrix):
            return NotImplemented
        return (self.n_rows == other.n_rows and self.n_cols == other.n_cols
                and np.array_equal(self.row_offsets, other.row_offsets)
                and np.array_equal(self.col_indices, other.col_indices)
                and np.array_equal(self.values, other.values))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix (n x p) plus labels in {-1, +1}."""

    features: SparseMatrix
    labels: np.ndarray

    def __post_init__(self):
        labels = np.ascontiguousarray(self.labels, dtype=np.float64)
        if labels.shape != (self.features.n_rows,):
            raise ValueError("labels length must equal the number of feature rows")
        if len(labels) and not np.all(np.abs(labels) == 1.0):
            raise ValueError("labels must be exactly -1 or +1")
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.features.n_rows

    @property
    def n_features(self) -> int:
        return self.features.n_cols

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.features == other.features and np.array_equal(
            self.labels, other.labels)


def _as_lines(source: Union[str, IO[str], Iterable[str]]) -> Iterable[str]:
    if isinstance(source, str):
        return io.StringIO(source)
    return source


def parse_libsvm(source, expected_dim: Optional[int] = None,
                 strict: bool = False) -> Dataset:
    """Parse LIBSVM text into a :class:`Dataset`.

    ``source`` may be a string, an open text file, or any iterable of lines.
    Indices are 1-based in the text and converted to 0-based. Text after
    ``#`` on a line is ignored. Labels other than -1/+1 are remapped by sign
    (0 maps to -1), with a single aggregate warning.

    With ``expected_dim`` the column count is fixed and any larger index is a
    :class:`DimensionError`; otherwise it is the largest index seen. An empty
    input is an error only when ``strict`` is set and ``expected_dim`` is
    absent (the width would be unknowable).
    """
    offsets = [0]
    cols: list[int] = []
    vals: list[float] = []
    labels: list[float] = []
    max_col = -1
    remapped = 0

    for lineno, raw in enumerate(_as_lines(source), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise LibsvmParseError(lineno, f"bad label token {tokens[0]!r}") from None
        if label != 1.0 and label != -1.0:
            remapped += 1
        labels.append(1.0 if label > 0 else -1.0)

        prev = -1
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise LibsvmParseError(lineno, f"expected idx:val, got {tok!r}")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise LibsvmParseError(lineno, f"non-numeric token {tok!r}") from None
            if idx < 1:
                raise LibsvmParseError(lineno, f"index {idx} is not positive")
            if idx - 1 <= prev:
                raise LibsvmParseError(
                    lineno, f"feature indices not strictly increasing at {tok!r}")
            if expected_dim is not None and idx > expected_dim:
                raise DimensionError(
                    f"line {lineno}: index {idx} exceeds declared dimension "
                    f"{expected_dim}")
            prev = idx - 1
            cols.append(prev)
            vals.append(val)
        max_col = max(max_col, prev)
        offsets.append(len(cols))

    if not labels and expected_dim is None and strict:
        raise LibsvmParseError(0, "empty input with unknown dimension")
    if remapped:
        warnings.warn(f"{remapped} label(s) outside {{-1,+1}} remapped by sign",
                      stacklevel=2)

    n_cols = expected_dim if expected_dim is not None else max_col + 1
    features = SparseMatrix(
        n_rows=len(labels), n_cols=n_cols,
        row_offsets=np.asarray(offsets, dtype=np.int64),
        col_indices=np.asarray(cols, dtype=np.int64),
        values=np.asarray(vals, dtype=np.float64))
    return Dataset(features=features, labels=np.asarray(labels))


def serialize_libsvm(dataset: Dataset) -> str:
    """Emit LIBSVM text (1-based indices, 17 significant digits).

    Inverse of :func:`parse_libsvm`: parsing the output reproduces the
    dataset exactly, including stored zeros.
    """
    A = dataset.features
    out = []
    for i in range(A.n_rows):
        cols, vals = A.row(i)
        parts = ["+1" if dataset.labels[i] > 0 else "-1"]
        parts.extend(f"{c + 1}:{v:.17g}" for c, v in zip(cols, vals))
        out.append(" ".join(parts))
    return "\n".join(out) + ("\n" if out else "")


def spmv(A: SparseMatrix, x: np.ndarray) -> np.ndarray:
    """A @ x for CSR ``A``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A.n_cols,):
        raise DimensionError(f"x has shape {x.shape}, expected ({A.n_cols},)")
    return np.bincount(A._row_ids, weights=A.values * x[A.col_indices],
                       minlength=A.n_rows)


def spmv_t(A: SparseMatrix, y: np.ndarray) -> np.ndarray:
    """A.T @ y for CSR ``A``."""
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (A.n_rows,):
        raise DimensionError(f"y has shape {y.shape}, expected ({A.n_rows},)")
    return np.bincount(A.col_indices, weights=A.values * y[A._row_ids],
                       minlength=A.n_cols)


def dense_to_sparse(M: np.ndarray) -> SparseMatrix:
    """Store a dense matrix in CSR form, keeping every entry (zeros included)."""
    M = np.asarray(M, dtype=np.float64)
    n, p = M.shape
    return SparseMatrix(
        n_rows=n, n_cols=p,
        row_offsets=np.arange(n + 1, dtype=np.int64) * p,
        col_indices=np.tile(np.arange(p, dtype=np.int64), n),
        values=M.ravel().copy())


def synth_logistic(n: int, p: int, condition_target: float, seed: int) -> Dataset:
    """Generate a synthetic logistic problem with controlled conditioning.

    The design is Gaussian-derived: an orthonormal n x p basis drawn from a
    Gaussian matrix, rescaled so the singular values are geometrically spaced
    with ratio exactly ``condition_target``, then randomly rotated. Labels are
    drawn from the logistic model under a planted weight vector. Pure function
    of its arguments.
    """
    if not (n >= p >= 1):
        raise ValueError("need n >= p >= 1")
    if condition_target < 1:
        raise ValueError("condition_target must be >= 1")
    rng = stream(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((n, p)))
    V, _ = np.linalg.qr(rng.standard_normal((p, p)))
    sigma = np.geomspace(condition_target, 1.0, p)
    A = (Q * sigma) @ V.T
    # planted vector scaled against the mean row norm so margins are O(1)
    x_star = rng.standard_normal(p) / np.sqrt(np.mean(sigma**2) * p / n)
    z = A @ x_star
    prob = 1.0 / (1.0 + np.exp(-np.clip(z, -40, 40)))
    labels = np.where(rng.random(n) < prob, 1.0, -1.0)
    return Dataset(features=dense_to_sparse(A), labels=labels)


def max_abs_scale(dataset: Dataset) -> Dataset:
    """Rescale each feature column by its maximum absolute value.

    Columns that are entirely zero are left untouched. Used by the CLI's
    optional normalization pass.
    """
    A = dataset.features
    col_max = np.zeros(A.n_cols)
    np.maximum.at(col_max, A.col_indices, np.abs(A.values))
    scale = np.where(col_max > 0, col_max, 1.0)
    features = SparseMatrix(
        n_rows=A.n_rows, n_cols=A.n_cols, row_offsets=A.row_offsets,
        col_indices=A.col_indices, values=A.values / scale[A.col_indices])
    return Dataset(features=features, labels=dataset.labels)
