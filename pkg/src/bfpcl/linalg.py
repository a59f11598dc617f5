"""Dense matrix kernels: thin SVD and Frobenius norm.

Matrices are plain 2-D ``float64`` numpy arrays.  The SVD is delegated to
LAPACK (``numpy.linalg.svd``) and post-processed into a deterministic sign
convention so that repeated calls and different callers agree exactly.
"""

from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError, NumericalError


class SvdResult(NamedTuple):
    U: np.ndarray  # (rows, r), orthonormal columns
    S: np.ndarray  # (r,), non-increasing, non-negative
    V: np.ndarray  # (cols, r), orthonormal columns


def as_matrix(Z, name="Z"):
    """Validate and return ``Z`` as a finite 2-D float64 array."""
    Z = np.asarray(Z, dtype=np.float64)
    if Z.ndim != 2:
        raise InvalidInputError(f"{name} must be 2-D, got shape {Z.shape}")
    if not np.all(np.isfinite(Z)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return Z


def svd_thin(Z) -> SvdResult:
    """Thin SVD ``Z = U diag(S) V^T`` with ``r = min(rows, cols)``.

    Each left singular vector is sign-flipped so that its entry of largest
    magnitude is positive; the matching right vector is flipped with it.
    """
    Z = as_matrix(Z)
    if Z.shape[0] < 1 or Z.shape[1] < 1:
        raise InvalidInputError(f"Z must be non-empty, got shape {Z.shape}")
    try:
        U, S, Vt = np.linalg.svd(Z, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        # LAPACK gesdd does not expose its sweep count.
        raise NumericalError(f"SVD did not converge: {exc}", iterations=None) from exc
    pivot = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[pivot, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    U = U * signs
    V = Vt.T * signs
    return SvdResult(U, S, V)


def frobenius_norm(Z) -> float:
    Z = as_matrix(Z)
    return float(np.sqrt(np.sum(Z * Z)))
