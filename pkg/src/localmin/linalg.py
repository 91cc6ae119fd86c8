"""Dense matrix kernels: numerical rank, column-space bases and projections.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 stored in
row-major (C) order. Projectors are never formed densely; a
:class:`ProjectorBasis` keeps a thin orthonormal basis ``Q`` and applies
``Q (Q^T v)`` or ``v - Q (Q^T v)``.
"""
from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EPS = np.finfo(np.float64).eps


class CutoffCriterion(enum.Enum):
    """Singular-value cutoff used to decide numerical rank."""

    PRESS = "press"
    GOLUB = "golub"
    LAPACK = "lapack"

    @classmethod
    def parse(cls, value: "CutoffCriterion | str") -> "CutoffCriterion":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower()
        aliases = {
            "press": cls.PRESS, "pressetal": cls.PRESS,
            "golub": cls.GOLUB, "golubvanloan": cls.GOLUB,
            "lapack": cls.LAPACK,
        }
        try:
            return aliases[key.replace("_", "").replace("-", "")]
        except KeyError:
            raise ValueError(f"unknown cutoff criterion {value!r}") from None


DEFAULT_CUTOFF = CutoffCriterion.PRESS


class MatrixFormatError(ValueError):
    """A matrix file could not be parsed. Carries the path and the offset of the failure."""

    def __init__(self, path, offset, message):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{self.path}: at {offset}: {message}")


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return ``a`` as a finite 2-D float64 C-ordered array."""
    m = np.asarray(a, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} has non-finite entries")
    return np.ascontiguousarray(m)


def cutoff_value(M: np.ndarray, criterion: CutoffCriterion = DEFAULT_CUTOFF,
                 singular_values: np.ndarray | None = None) -> float:
    """Absolute singular-value threshold for ``M`` under ``criterion``."""
    criterion = CutoffCriterion.parse(criterion)
    rows, cols = M.shape
    if M.size == 0:
        return 0.0
    if criterion is CutoffCriterion.GOLUB:
        return 0.5 * float(np.abs(M).sum(axis=1).max()) * EPS
    if singular_values is None:
        singular_values = np.linalg.svd(M, compute_uv=False)
    smax = float(singular_values[0]) if singular_values.size else 0.0
    if criterion is CutoffCriterion.PRESS:
        return 0.5 * smax * EPS * np.sqrt(rows + cols + 1.0)
    return smax * EPS


def numerical_rank(M, criterion: CutoffCriterion | str = DEFAULT_CUTOFF) -> tuple[int, float]:
    """Number of singular values strictly above the criterion's cutoff.

    Returns ``(rank, cutoff)``. An empty matrix has rank 0 and cutoff 0.
    """
    M = as_matrix(M)
    if M.size == 0:
        return 0, 0.0
    s = np.linalg.svd(M, compute_uv=False)
    cut = cutoff_value(M, criterion, s)
    return int(np.count_nonzero(s > cut)), cut


@dataclass(frozen=True)
class ProjectorBasis:
    """Thin orthonormal basis of a column space, plus how it was truncated."""

    ambient_dim: int
    basis: np.ndarray
    cutoff_used: float = 0.0
    criterion: CutoffCriterion = DEFAULT_CUTOFF
    discarded_singular_values: tuple[float, ...] = field(default=())

    @property
    def rank(self) -> int:
        return self.basis.shape[1]

    @classmethod
    def empty(cls, ambient_dim: int, criterion=DEFAULT_CUTOFF) -> "ProjectorBasis":
        return cls(ambient_dim, np.zeros((ambient_dim, 0)), 0.0, CutoffCriterion.parse(criterion))


def column_space_basis(M, criterion: CutoffCriterion | str = DEFAULT_CUTOFF,
                       cutoff: float | None = None) -> ProjectorBasis:
    """Orthonormal basis of the numerical column space of ``M``.

    ``cutoff`` overrides the criterion's threshold with an absolute value.
    """
    M = as_matrix(M)
    criterion = CutoffCriterion.parse(criterion)
    rows = M.shape[0]
    if M.size == 0:
        return ProjectorBasis.empty(rows, criterion)
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    cut = cutoff_value(M, criterion, s) if cutoff is None else float(cutoff)
    keep = s > cut
    return ProjectorBasis(
        ambient_dim=rows,
        basis=np.ascontiguousarray(U[:, keep]),
        cutoff_used=cut,
        criterion=criterion,
        discarded_singular_values=tuple(float(x) for x in s[~keep]),
    )


def _check_dim(b: ProjectorBasis, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[0] != b.ambient_dim:
        raise ValueError(f"vector length {v.shape[0]} != ambient dimension {b.ambient_dim}")
    return v


def project(b: ProjectorBasis, v) -> np.ndarray:
    """Orthogonal projection of ``v`` (a vector or a stack of columns) onto span(b)."""
    v = _check_dim(b, v)
    Q = b.basis
    if Q.shape[1] == 0:
        return np.zeros_like(v)
    return Q @ (Q.T @ v)


def project_null(b: ProjectorBasis, v) -> np.ndarray:
    """Projection of ``v`` onto the orthogonal complement of span(b)."""
    v = _check_dim(b, v)
    Q = b.basis
    if Q.shape[1] == 0:
        return v.copy()
    return v - Q @ (Q.T @ v)


def _orthogonalize(Q: np.ndarray, B: np.ndarray) -> np.ndarray:
    # two classical passes ("twice is enough")
    if Q.shape[1] == 0:
        return B.copy()
    R = B - Q @ (Q.T @ B)
    return R - Q @ (Q.T @ R)


def extend_basis(b: ProjectorBasis, new_block, criterion: CutoffCriterion | str = DEFAULT_CUTOFF,
                 cutoff: float | None = None) -> ProjectorBasis:
    """Basis of span(b) + span(new_block), with ``b``'s columns as a prefix.

    The block is orthogonalized against ``b`` (with one re-orthogonalization
    pass) and the residual's singular directions above the cutoff are appended.
    Without an explicit ``cutoff`` the threshold is the criterion applied to the
    raw ``new_block``, so directions already in span(b) are rejected.
    """
    B = as_matrix(new_block, "new_block")
    criterion = CutoffCriterion.parse(criterion)
    if B.shape[0] != b.ambient_dim:
        raise ValueError(f"block has {B.shape[0]} rows, basis ambient dimension is {b.ambient_dim}")
    if B.shape[1] == 0:
        return b
    if cutoff is None:
        cutoff = cutoff_value(B, criterion)
    R = _orthogonalize(b.basis, B)
    U, s, _ = np.linalg.svd(R, full_matrices=False)
    keep = s > cutoff
    discarded = tuple(float(x) for x in s[~keep])
    if not keep.any():
        return ProjectorBasis(b.ambient_dim, b.basis, float(cutoff), criterion, discarded)
    fresh = _orthogonalize(b.basis, U[:, keep])
    fresh, _ = np.linalg.qr(fresh)
    return ProjectorBasis(
        ambient_dim=b.ambient_dim,
        basis=np.ascontiguousarray(np.hstack([b.basis, fresh])),
        cutoff_used=float(cutoff),
        criterion=criterion,
        discarded_singular_values=discarded,
    )


def kron_identity_basis(b: ProjectorBasis, copies: int) -> ProjectorBasis:
    """Basis of the column space of ``I_copies (x) M`` given a basis of ``M``."""
    Q = np.kron(np.eye(copies), b.basis)
    return ProjectorBasis(b.ambient_dim * copies, Q, b.cutoff_used, b.criterion,
                          b.discarded_singular_values * copies)


def residual_energy(M, Y, criterion: CutoffCriterion | str = DEFAULT_CUTOFF) -> float:
    """``0.5 * ||P_N[M] Y||_F^2``: the least-squares optimum of regressing Y on M."""
    Y = as_matrix(Y, "Y")
    M = as_matrix(M, "M") if np.size(M) else np.zeros((Y.shape[0], 0))
    if M.shape[0] != Y.shape[0]:
        raise ValueError(f"basis has {M.shape[0]} rows, Y has {Y.shape[0]}")
    R = project_null(column_space_basis(M, criterion), Y)
    return 0.5 * float(np.sum(R * R))


# -- serialization ---------------------------------------------------------

_HEADER = struct.Struct("<II")


def write_csv(path, M) -> None:
    """Write one row per line with 17 significant digits (round-trips float64)."""
    M = as_matrix(M)
    with open(path, "w") as fh:
        for row in M:
            fh.write(",".join(format(float(x), ".17g") for x in row))
            fh.write("\n")


def read_csv(path) -> np.ndarray:
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(tok) for tok in line.split(",")]
            except ValueError as exc:
                raise MatrixFormatError(path, f"line {lineno}", str(exc)) from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise MatrixFormatError(path, f"line {lineno}", f"expected {width} values, got {len(row)}")
            if not all(np.isfinite(row)):
                raise MatrixFormatError(path, f"line {lineno}", "non-finite value")
            rows.append(row)
    if not rows:
        return np.zeros((0, 0))
    return np.array(rows, dtype=np.float64)


def write_binary(path, M) -> None:
    """Little-endian ``u32 rows, u32 cols`` header, then float64 entries row-major."""
    M = as_matrix(M)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(*M.shape))
        fh.write(M.astype("<f8").tobytes(order="C"))


def read_binary(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise MatrixFormatError(path, "byte 0", "truncated header")
    rows, cols = _HEADER.unpack_from(data, 0)
    need = _HEADER.size + 8 * rows * cols
    if len(data) != need:
        raise MatrixFormatError(path, f"byte {min(len(data), need)}",
                                f"expected {need} bytes for {rows}x{cols}, found {len(data)}")
    M = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(rows, cols).astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(M.ravel()))
    if bad.size:
        raise MatrixFormatError(path, f"byte {_HEADER.size + 8 * int(bad[0])}", "non-finite value")
    return M


def read_matrix(path) -> np.ndarray:
    """Read CSV or binary depending on the file suffix (``.bin`` means binary)."""
    return read_binary(path) if str(path).endswith(".bin") else read_csv(path)


def write_matrix(path, M) -> None:
    if str(path).endswith(".bin"):
        write_binary(path, M)
    else:
        write_csv(path, M)
