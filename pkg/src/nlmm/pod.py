"""Proper orthogonal decomposition from simulated snapshots."""

import warnings

import numpy as np

from .integrate import Trajectory
from .linalg import RankWarning, svd_deflate
from .systems import Method, ReducedBasis


def snapshot_matrix(traj, stride=1):
    """States at every `stride`-th step as columns of an ``(n, K)`` matrix.

    The first sample is always included; the last only when the stride
    lands on it, except that ``stride >= steps`` gives ``[first, last]``.
    """
    stride = int(stride)
    if stride < 1:
        raise ValueError(f"stride must be at least 1, got {stride}")
    if traj.states is None:
        raise ValueError("trajectory carries no state samples")
    N = traj.steps
    idx = list(range(0, N + 1, stride))
    if stride >= N and N > 0 and idx[-1] != N:
        idx.append(N)
    return np.ascontiguousarray(traj.states[idx].T)


def load_snapshots(path, stride=1):
    """Snapshot matrix from a state CSV written by :meth:`Trajectory.to_csv`."""
    return snapshot_matrix(Trajectory.from_csv(path), stride)


def pod_basis(snapshots, r_defl=None, sv_tol=None):
    """Leading left singular vectors of the snapshot matrix.

    Parameters
    ----------
    snapshots : (n, K) array_like
        Snapshot columns. No mean is subtracted.
    r_defl : int, optional
        Basis size. Truncated with a :class:`RankWarning` if it exceeds
        the numerical rank.
    sv_tol : float, optional
        Relative singular value cutoff, used instead of `r_defl`.

    Returns
    -------
    ReducedBasis
        Tagged ``Method.POD``; all singular values are attached.
    """
    X = np.asarray(snapshots, dtype=float)
    if X.ndim != 2 or X.shape[1] < 1:
        raise ValueError(f"need an (n, K) snapshot matrix with K >= 1, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("snapshots contain non-finite entries")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RankWarning)
        U, s = svd_deflate(X, r_defl, sv_tol)
    for w in caught:
        warnings.warn(str(w.message), RankWarning, stacklevel=2)
    prov = [("snapshot", j) for j in range(X.shape[1])]
    return ReducedBasis(U, Method.POD, prov, s)
