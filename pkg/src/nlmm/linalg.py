"""Orthogonalization and truncation helpers shared by the basis builders."""

import warnings

import numpy as np
from scipy import linalg as la

# column dropped if its post-projection norm falls below this fraction
# of its pre-projection norm
DEFLATION_TOL = 1e-10


class RankWarning(UserWarning):
    """Requested order exceeds the numerical rank of a column collection."""


def lu_factor(M, check_finite=True):
    """LU factorization without scipy's singularity warning.

    Callers test the pivots themselves (see ``_is_singular_lu``).
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", la.LinAlgWarning)
        return la.lu_factor(M, check_finite=check_finite)


def gram_schmidt_append(V, idx, tol=DEFLATION_TOL):
    """Orthonormalize column `idx` of `V` against columns ``0..idx-1``.

    Modified Gram-Schmidt with one full reorthogonalization pass. The
    leading `idx` columns are assumed orthonormal already.

    Parameters
    ----------
    V : (n, k) ndarray
        Column collection; column `idx` is overwritten in a copy.
    idx : int
        Zero-based index of the column to orthonormalize.
    tol : float
        Relative breakdown tolerance.

    Returns
    -------
    V : (n, k) ndarray
        Copy of the input with column `idx` replaced.
    flagged : bool
        True if the column is numerically dependent on its predecessors.
        A flagged column is left unnormalized so that callers can drop it.
    """
    V = np.array(V, dtype=float, copy=True)
    w = V[:, idx].copy()
    norm0 = np.linalg.norm(w)
    if norm0 == 0.0:
        return V, True
    for _ in range(2):
        for j in range(idx):
            w -= (V[:, j] @ w) * V[:, j]
    norm1 = np.linalg.norm(w)
    if norm1 < tol * norm0:
        V[:, idx] = w
        return V, True
    V[:, idx] = w / norm1
    return V, False


def orthonormalize(V, tol=DEFLATION_TOL):
    """Orthonormalize all columns of `V` in order, dropping dependent ones.

    Returns
    -------
    Q : (n, r) ndarray
        Orthonormal basis of ``span(V)``.
    R : (r, k) ndarray
        Coefficients with ``V ≈ Q @ R``; upper triangular when nothing
        was dropped.
    kept : list of int
        Indices of the columns of `V` that contributed a new direction.
    """
    V = np.asarray(V, dtype=float)
    n, k = V.shape
    Q = np.empty((n, 0))
    kept = []
    for j in range(k):
        W = np.column_stack([Q, V[:, j]])
        W, flagged = gram_schmidt_append(W, Q.shape[1], tol)
        if not flagged:
            Q = W
            kept.append(j)
    R = Q.T @ V
    return Q, R, kept


def numerical_rank(s, shape):
    """Rank from singular values `s` of a matrix with the given shape."""
    if len(s) == 0 or s[0] == 0.0:
        return 0
    tol = max(shape) * np.finfo(float).eps * s[0]
    return int(np.sum(s > tol))


def svd_deflate(V, r_defl=None, sv_tol=None):
    """Truncate a column collection to its dominant left singular vectors.

    Exactly one of `r_defl` and `sv_tol` may be given. With neither, all
    numerically nonzero directions are kept.

    Returns
    -------
    U : (n, r) ndarray
        Orthonormal basis.
    s : (min(n, k),) ndarray
        All singular values of `V`, non-increasing.
    """
    if r_defl is not None and sv_tol is not None:
        raise ValueError("give at most one of r_defl and sv_tol")
    V = np.asarray(V, dtype=float)
    if V.ndim != 2 or V.shape[1] == 0:
        raise ValueError("cannot deflate an empty column collection")
    U, s, _ = la.svd(V, full_matrices=False, lapack_driver="gesvd")
    rank = numerical_rank(s, V.shape)
    if r_defl is not None:
        if r_defl < 1:
            raise ValueError(f"r_defl must be positive, got {r_defl}")
        r = r_defl
        if r > rank:
            warnings.warn(f"r_defl={r_defl} exceeds numerical rank {rank}; "
                          f"truncating to {rank}", RankWarning, stacklevel=2)
            r = rank
    elif sv_tol is not None:
        r = int(np.sum(s >= sv_tol * s[0])) if s[0] > 0 else 0
        r = min(r, rank)
    else:
        r = rank
    if r == 0:
        raise ValueError("column collection has numerical rank zero")
    return _fix_signs(U[:, :r]), s


def _fix_signs(U):
    # largest-magnitude entry of each column made positive, so output is
    # reproducible across LAPACK builds
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


def projector_distance(V1, V2):
    """Frobenius distance between the orthogonal projectors onto two spans.

    Both inputs must have orthonormal columns.
    """
    V1 = np.asarray(V1)
    V2 = np.asarray(V2)
    # ||P1 - P2||_F^2 = ||(I - P2) V1||_F^2 + ||(I - P1) V2||_F^2; the
    # trace form cancels catastrophically near zero
    a = np.linalg.norm(V1 - V2 @ (V2.T @ V1))
    b = np.linalg.norm(V2 - V1 @ (V1.T @ V2))
    return float(np.hypot(a, b))


def orthonormality_error(V):
    """``||V^T V - I||_F``."""
    V = np.asarray(V)
    return float(np.linalg.norm(V.T @ V - np.eye(V.shape[1])))
