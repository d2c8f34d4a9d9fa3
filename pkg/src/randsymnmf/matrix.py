"""Symmetric matrix storage, Matrix Market I/O and the shared linear-algebra kernels."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

SYMMETRY_RTOL = 1e-12
GENERAL_SYMMETRY_RTOL = 1e-9


class MatrixFormatError(ValueError):
    """Raised when an input matrix cannot be read or violates a structural requirement."""


def _max_abs(data) -> float:
    if sp.issparse(data):
        return float(abs(data).max()) if data.nnz else 0.0
    return float(np.max(np.abs(data))) if data.size else 0.0


def _asymmetry(data) -> float:
    diff = data - data.T
    return _max_abs(diff)


class SymmetricMatrix:
    """An immutable symmetric m x m matrix held densely or as CSR with both triangles stored.

    Parameters
    ----------
    data : ndarray or scipy sparse matrix
        Square symmetric values. Sparse input is converted to CSR.
    check : bool
        Validate symmetry to ``SYMMETRY_RTOL`` relative to the largest entry.
    """

    def __init__(self, data, check: bool = True):
        if sp.issparse(data):
            data = sp.csr_matrix(data, dtype=np.float64)
            data.sum_duplicates()
            data.eliminate_zeros()
        else:
            data = np.array(data, dtype=np.float64, copy=True)
            if data.ndim != 2:
                raise MatrixFormatError("matrix must be two-dimensional")
        if data.shape[0] != data.shape[1]:
            raise MatrixFormatError(f"matrix must be square, got {data.shape}")
        if data.shape[0] < 1:
            raise MatrixFormatError("matrix dimension must be at least 1")
        if check:
            scale = _max_abs(data)
            if _asymmetry(data) > SYMMETRY_RTOL * max(scale, np.finfo(float).tiny):
                raise MatrixFormatError("asymmetric input")
        if not sp.issparse(data):
            data.setflags(write=False)
        self._data = data
        if sp.issparse(data):
            self.fro_norm_sq = float(np.dot(data.data, data.data))
        else:
            self.fro_norm_sq = float(np.einsum("ij,ij->", data, data))

    @property
    def data(self):
        return self._data

    @property
    def dim(self) -> int:
        return self._data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self._data.shape

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self._data)

    @property
    def nnz(self) -> int:
        if self.is_sparse:
            return self._data.nnz
        return int(np.count_nonzero(self._data))

    def max(self) -> float:
        if self.is_sparse:
            if self._data.nnz == 0:
                return 0.0
            top = float(self._data.data.max())
            # implicit zeros participate in the max
            if self._data.nnz < self.dim * self.dim:
                top = max(top, 0.0)
            return top
        return float(self._data.max())

    def min(self) -> float:
        if self.is_sparse:
            if self._data.nnz == 0:
                return 0.0
            low = float(self._data.data.min())
            if self._data.nnz < self.dim * self.dim:
                low = min(low, 0.0)
            return low
        return float(self._data.min())

    def mean(self) -> float:
        return float(self._data.sum()) / (self.dim * self.dim)

    def toarray(self) -> np.ndarray:
        if self.is_sparse:
            return self._data.toarray()
        return np.array(self._data)

    def __matmul__(self, other):
        return multiply_dense(self, other)

    def __repr__(self) -> str:
        kind = "sparse" if self.is_sparse else "dense"
        return f"SymmetricMatrix(dim={self.dim}, {kind}, fro_norm_sq={self.fro_norm_sq:.6g})"


class LowRankOperator:
    """Factored m x m operator ``U @ core @ U.T`` or ``U @ right``.

    Products are always evaluated right to left so no m x m array is formed.
    ``core`` may be given as a length-l vector (diagonal) or an l x l matrix.
    """

    def __init__(self, basis: np.ndarray, core: np.ndarray | None = None, right: np.ndarray | None = None):
        basis = np.asarray(basis, dtype=np.float64)
        if basis.ndim != 2:
            raise ValueError("basis must be a matrix")
        m, l = basis.shape
        if l > m:
            raise ValueError(f"rank {l} exceeds dimension {m}")
        if (core is None) == (right is None):
            raise ValueError("give exactly one of core or right")
        if core is not None:
            core = np.asarray(core, dtype=np.float64)
            if core.ndim == 1 and core.shape[0] != l or core.ndim == 2 and core.shape != (l, l):
                raise ValueError("core shape does not match basis")
        if right is not None:
            right = np.asarray(right, dtype=np.float64)
            if right.shape != (l, m):
                raise ValueError(f"right factor must be {(l, m)}, got {right.shape}")
        self.basis = basis
        self.core = core
        self.right = right
        self.fro_norm_sq = self._fro_norm_sq()

    @property
    def dim(self) -> int:
        return self.basis.shape[0]

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return (self.dim, self.dim)

    def _core_apply(self, Z: np.ndarray) -> np.ndarray:
        if self.core.ndim == 1:
            return self.core[:, None] * Z
        return self.core @ Z

    def _fro_norm_sq(self) -> float:
        ut_u = self.basis.T @ self.basis
        if self.right is not None:
            return float(np.sum(ut_u * (self.right @ self.right.T)))
        core = np.diag(self.core) if self.core.ndim == 1 else self.core
        left = core @ ut_u
        return float(np.sum(left * left.T))

    def matmul(self, B: np.ndarray) -> np.ndarray:
        if B.shape[0] != self.dim:
            raise ValueError(f"dimension mismatch: operator {self.shape}, operand {B.shape}")
        if self.right is not None:
            return self.basis @ (self.right @ B)
        return self.basis @ self._core_apply(self.basis.T @ B)

    def __matmul__(self, other):
        return self.matmul(other)

    def mean(self) -> float:
        ones = np.ones((self.dim, 1))
        return float(np.sum(self.matmul(ones))) / (self.dim * self.dim)

    def toarray(self) -> np.ndarray:
        """Materialize the operator (small instances and tests only)."""
        return self.matmul(np.eye(self.dim))


def multiply_dense(A, B: np.ndarray) -> np.ndarray:
    """Return ``A @ B`` as a dense array for a symmetric matrix or low-rank operator ``A``."""
    B = np.asarray(B, dtype=np.float64)
    if isinstance(A, LowRankOperator):
        return A.matmul(B)
    if isinstance(A, SymmetricMatrix):
        if B.shape[0] != A.dim:
            raise ValueError(f"dimension mismatch: matrix {A.shape}, operand {B.shape}")
        out = A.data @ B
        return np.asarray(out)
    raise TypeError(f"unsupported operator type {type(A).__name__}")


def gram(F: np.ndarray) -> np.ndarray:
    """``F.T @ F``, symmetrized so the result is exactly symmetric."""
    G = F.T @ F
    return (G + G.T) / 2


def gather_rows(M, plan):
    """Weighted row gather ``S @ M`` for a sampling plan.

    Row j of the result is ``plan.weights[j] * M[plan.indices[j], :]``. Sparse
    inputs (``SymmetricMatrix`` in CSR form or scipy sparse) return CSR so the
    cost stays proportional to the nonzeros of the selected rows.
    """
    data = M.data if isinstance(M, SymmetricMatrix) else M
    idx = plan.indices
    weights = plan.weights
    nrows = data.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= nrows):
        raise IndexError("sampling plan index out of range")
    if sp.issparse(data):
        csr = data if sp.isspmatrix_csr(data) else sp.csr_matrix(data)
        start = csr.indptr[idx]
        lengths = csr.indptr[idx + 1] - start
        indptr = np.zeros(idx.size + 1, dtype=csr.indptr.dtype)
        np.cumsum(lengths, out=indptr[1:])
        # position of every selected nonzero in the source arrays
        pos = np.arange(indptr[-1]) - np.repeat(indptr[:-1] - start, lengths)
        return sp.csr_matrix((csr.data[pos] * np.repeat(weights, lengths), csr.indices[pos], indptr),
                             shape=(idx.size, csr.shape[1]))
    data = np.asarray(data)
    return weights[:, None] * data[idx]


def load_matrix_market(path) -> SymmetricMatrix:
    """Read a real symmetric matrix from a Matrix Market file.

    Coordinate files become sparse storage, array files dense. Files with a
    ``general`` header are checked for symmetry (1e-9 relative) and then
    symmetrized to remove round-off.
    """
    path = Path(path)
    try:
        _, _, _, fmt, field, symmetry = scipy.io.mminfo(str(path))
    except OSError:
        raise
    except Exception as exc:  # malformed header
        raise MatrixFormatError(f"cannot parse {path}: {exc}") from exc
    if field == "complex":
        raise MatrixFormatError("complex matrices are not supported")
    if symmetry not in ("general", "symmetric"):
        raise MatrixFormatError(f"unsupported symmetry '{symmetry}'")
    try:
        data = scipy.io.mmread(str(path))
    except Exception as exc:
        raise MatrixFormatError(f"cannot parse {path}: {exc}") from exc
    if data.shape[0] != data.shape[1]:
        raise MatrixFormatError(f"matrix must be square, got {data.shape}")
    if sp.issparse(data):
        data = sp.csr_matrix(data, dtype=np.float64)
    else:
        data = np.asarray(data, dtype=np.float64)
    if symmetry == "general":
        scale = _max_abs(data)
        if _asymmetry(data) > GENERAL_SYMMETRY_RTOL * max(scale, np.finfo(float).tiny):
            raise MatrixFormatError("asymmetric input")
        data = (data + data.T) / 2
    return SymmetricMatrix(data, check=False)


def normalize_graph(A: SymmetricMatrix) -> SymmetricMatrix:
    """Symmetric degree normalization ``D^-1/2 A D^-1/2`` with the diagonal removed.

    Isolated vertices (zero degree) keep all-zero rows.
    """
    if A.min() < 0:
        raise ValueError("graph normalization requires nonnegative entries")
    data = A.data
    degrees = np.asarray(data.sum(axis=1)).ravel()
    inv_sqrt = np.zeros_like(degrees)
    nonzero = degrees > 0
    inv_sqrt[nonzero] = 1.0 / np.sqrt(degrees[nonzero])
    if A.is_sparse:
        scale = sp.diags(inv_sqrt)
        out = sp.csr_matrix(scale @ data @ scale)
        out.setdiag(0.0)
        out.eliminate_zeros()
    else:
        out = inv_sqrt[:, None] * data * inv_sqrt[None, :]
        np.fill_diagonal(out, 0.0)
        out = (out + out.T) / 2
    return SymmetricMatrix(out, check=False)


def write_dense(path, F: np.ndarray) -> None:
    """Write a dense matrix as Matrix Market array (``.mtx``) or CSV, using '%.17g'."""
    path = Path(path)
    F = np.asarray(F, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    if path.suffix.lower() == ".mtx":
        lines = ["%%MatrixMarket matrix array real general", f"{F.shape[0]} {F.shape[1]}"]
        # array format is column-major
        lines.extend("%.17g" % v for v in F.T.ravel())
    else:
        lines = [",".join("%.17g" % v for v in row) for row in F]
    path.write_text("\n".join(lines) + "\n")


def read_dense(path) -> np.ndarray:
    """Read a dense matrix written by :func:`write_dense` (or any Matrix Market array file)."""
    path = Path(path)
    if path.suffix.lower() == ".mtx":
        data = scipy.io.mmread(str(path))
        if sp.issparse(data):
            data = data.toarray()
        return np.asarray(data, dtype=np.float64)
    data = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    return data
