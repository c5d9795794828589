"""Proper orthogonal decomposition of snapshot matrices.

A snapshot matrix stacks full-order solution states column by column.  The
POD basis consists of the leading left singular vectors; because the number
of snapshots ``n`` is much smaller than the state dimension ``N``, the SVD
is computed from the symmetric eigendecomposition of the n-by-n Gram matrix
``S.T @ S``, which costs O(N n^2 + n^3) and avoids factoring the tall side.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateSpectrumError

__all__ = [
    "SnapshotMatrix",
    "PodBasis",
    "truncated_svd",
    "relative_information_content",
    "choose_rank",
    "pod_project",
    "pod_projection_error",
]


@dataclass(frozen=True)
class SnapshotMatrix:
    """Column-stacked solution states with their design parameters.

    ``data`` is N-by-n (state dimension by sample count); ``params`` is
    n-by-p, row i holding the design-parameter vector of column i.
    """

    data: np.ndarray
    params: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        params = np.asarray(self.params, dtype=float)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError(f"snapshot matrix must be 2-D and nonempty, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError("snapshot matrix contains non-finite entries")
        if params.ndim != 2 or params.shape[0] != data.shape[1]:
            raise ValueError(
                f"need one parameter vector per column: {params.shape[0]} != {data.shape[1]}"
            )
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "params", params)

    @property
    def n_states(self):
        return self.data.shape[0]

    @property
    def n_samples(self):
        return self.data.shape[1]

    @property
    def n_params(self):
        return self.params.shape[1]


@dataclass(frozen=True)
class PodBasis:
    """Rank-k orthonormal basis plus the full singular-value spectrum."""

    vectors: np.ndarray  # N x k, orthonormal columns
    singular_values: np.ndarray  # length n, nonincreasing
    k: int = field(init=False)

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=float)
        sigma = np.asarray(self.singular_values, dtype=float)
        if vectors.ndim != 2:
            raise ValueError("basis vectors must form a 2-D matrix")
        if np.any(sigma < 0) or np.any(np.diff(sigma) > 1e-12 * max(sigma[0], 1.0)):
            raise ValueError("singular values must be nonnegative and nonincreasing")
        gram = vectors.T @ vectors
        if np.max(np.abs(gram - np.eye(vectors.shape[1]))) > 1e-10:
            raise ValueError("basis columns are not orthonormal to 1e-10")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "singular_values", sigma)
        object.__setattr__(self, "k", vectors.shape[1])


def truncated_svd(S, k):
    """Truncated SVD of a snapshot matrix via the Gram-matrix route.

    Right vectors come from the symmetric eigendecomposition of S.T S; the
    left block S V is re-orthonormalized with a QR factorization, which
    restores machine-precision orthonormality for trailing singular values
    (where the squared condition number of the Gram matrix bites) while
    preserving every leading subspace span.

    Parameters
    ----------
    S : SnapshotMatrix or (N, n) array
    k : int
        Number of left/right singular vectors to return, 1 <= k <= n.

    Returns
    -------
    U_k : (N, k) array with orthonormal columns.
    sigma : (n,) array of all singular values, nonincreasing.
    V_k : (n, k) array with orthonormal columns.
    """
    A = S.data if isinstance(S, SnapshotMatrix) else np.asarray(S, dtype=float)
    if A.ndim != 2:
        raise ValueError("expected a 2-D snapshot array")
    if not np.all(np.isfinite(A)):
        raise DataError("snapshot matrix contains non-finite entries")
    N, n = A.shape
    if not 1 <= k <= n:
        raise ValueError(f"rank k={k} outside valid range [1, {n}]")
    if n > N:
        raise ValueError(f"snapshot matrix must be tall (N >= n), got {A.shape}")

    gram = A.T @ A
    gram = 0.5 * (gram + gram.T)
    evals, evecs = np.linalg.eigh(gram)  # ascending
    V = evecs[:, np.argsort(evals)[::-1]]

    W = A @ V  # = U diag(sigma) up to eigensolver error
    U, R = np.linalg.qr(W, mode="reduced")
    diag = np.diagonal(R).copy()
    U[:, diag < 0] = -U[:, diag < 0]
    sigma = np.abs(diag)

    # eigensolver noise can swap near-equal trailing values; restore order
    # stably so ties keep the eigendecomposition output order
    perm = np.argsort(-sigma, kind="stable")
    if not np.array_equal(perm, np.arange(n)):
        U, V, sigma = U[:, perm], V[:, perm], sigma[perm]

    # sign convention: largest-magnitude entry of each left vector positive
    for j in range(n):
        pivot = np.argmax(np.abs(U[:, j]))
        if U[pivot, j] < 0:
            U[:, j] = -U[:, j]
            V[:, j] = -V[:, j]

    return U[:, :k].copy(), sigma, V[:, :k].copy()


def pod_basis(S, k):
    """Convenience wrapper bundling `truncated_svd` output into a PodBasis."""
    U_k, sigma, _ = truncated_svd(S, k)
    return PodBasis(U_k, sigma)


def _validate_sigma(sigma):
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 1 or sigma.size < 1:
        raise ValueError("sigma must be a nonempty 1-D array")
    if np.any(sigma < 0) or np.any(np.diff(sigma) > 1e-12 * max(sigma[0], 1.0)):
        raise ValueError("sigma must be nonnegative and nonincreasing")
    if not np.any(sigma > 0):
        raise DegenerateSpectrumError("all singular values are zero")
    return sigma


def relative_information_content(sigma, k):
    """Fraction of the spectrum's mass captured by the first k modes."""
    sigma = _validate_sigma(sigma)
    if not 1 <= k <= sigma.size:
        raise ValueError(f"rank k={k} outside valid range [1, {sigma.size}]")
    return float(np.sum(sigma[:k]) / np.sum(sigma))


def choose_rank(sigma, epsilon):
    """Smallest rank whose information content reaches ``epsilon``."""
    sigma = _validate_sigma(sigma)
    if not 0.0 <= epsilon < 1.0:
        raise ValueError(f"epsilon must lie in [0, 1), got {epsilon}")
    fractions = np.cumsum(sigma) / np.sum(sigma)
    return int(np.searchsorted(fractions, epsilon) + 1)


def pod_project(basis, x):
    """Orthogonal projection of a state vector onto the basis span."""
    x = np.asarray(x, dtype=float)
    Psi = basis.vectors
    if x.shape != (Psi.shape[0],):
        raise ValueError(f"state length {x.shape} does not match basis rows {Psi.shape[0]}")
    return Psi @ (Psi.T @ x)


def pod_projection_error(S, basis):
    """Summed squared relative reconstruction error over all snapshots.

    For each column x_i the residual of the projection Psi Psi^T x_i is
    normalized by ||x_i||^2 and the normalized terms are summed.
    """
    A = S.data if isinstance(S, SnapshotMatrix) else np.asarray(S, dtype=float)
    norms_sq = np.sum(A * A, axis=0)
    zero = np.flatnonzero(norms_sq == 0.0)
    if zero.size:
        raise DataError(f"snapshot column {zero[0]} has zero norm; relative error undefined")
    coeffs = basis.vectors.T @ A
    residual = A - basis.vectors @ coeffs
    return float(np.sum(np.sum(residual * residual, axis=0) / norms_sq))
