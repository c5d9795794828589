"""Gaussian process regression with Matern / RBF kernels.

One model maps a p-dimensional design-parameter vector to a single scalar
output.  Inputs are standardized to zero mean and unit variance per
dimension; the mean function is the constant mean of the training outputs.
The kernel length scale is fitted by maximizing the log marginal likelihood
with an adaptive-step gradient ascent on log(l), restarted from several
log-uniform draws.
"""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.spatial.distance import cdist

from .errors import IllConditionedKernelError

__all__ = [
    "KernelSpec",
    "GprModel",
    "matern_kernel",
    "rbf_kernel",
    "standardize_inputs",
    "log_marginal_likelihood",
    "fit",
    "predict_mean",
]

_SUPPORTED_NU = (0.5, 1.5, 2.5)
_MAX_JITTER = 1e-4

SQRT3 = math.sqrt(3.0)
SQRT5 = math.sqrt(5.0)


@dataclass(frozen=True)
class KernelSpec:
    """Stationary kernel description: family, length scale, smoothness."""

    family: str = "matern"
    length_scale: float = 1.0
    nu: float = 2.5

    def __post_init__(self):
        if self.family not in ("matern", "rbf"):
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not self.length_scale > 0:
            raise ValueError(f"length scale must be positive, got {self.length_scale}")
        if self.family == "matern" and self.nu not in _SUPPORTED_NU:
            raise ValueError(f"nu must be one of {_SUPPORTED_NU}, got {self.nu}")

    def with_length_scale(self, l):
        return KernelSpec(self.family, float(l), self.nu)

    def __call__(self, d):
        if self.family == "rbf":
            return rbf_kernel(d, self.length_scale)
        return matern_kernel(d, self.length_scale, self.nu)

    def grad_log_l(self, d):
        """d kappa / d log(l) at distance d (elementwise)."""
        r = np.asarray(d, dtype=float) / self.length_scale
        if self.family == "rbf":
            return r * r * np.exp(-0.5 * r * r)
        if self.nu == 0.5:
            return r * np.exp(-r)
        if self.nu == 1.5:
            return 3.0 * r * r * np.exp(-SQRT3 * r)
        return (5.0 * r * r / 3.0) * (1.0 + SQRT5 * r) * np.exp(-SQRT5 * r)


def matern_kernel(d, l, nu):
    """Matern covariance at distance d for half-integer smoothness nu."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distances must be nonnegative")
    if not l > 0:
        raise ValueError(f"length scale must be positive, got {l}")
    if nu not in _SUPPORTED_NU:
        raise ValueError(f"nu must be one of {_SUPPORTED_NU}, got {nu}")
    r = d / l
    if nu == 0.5:
        out = np.exp(-r)
    elif nu == 1.5:
        out = (1.0 + SQRT3 * r) * np.exp(-SQRT3 * r)
    else:
        out = (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) * np.exp(-SQRT5 * r)
    return out if out.ndim else float(out)


def rbf_kernel(d, l):
    """Squared-exponential covariance exp(-d^2 / (2 l^2))."""
    d = np.asarray(d, dtype=float)
    if not l > 0:
        raise ValueError(f"length scale must be positive, got {l}")
    out = np.exp(-0.5 * (d / l) ** 2)
    return out if out.ndim else float(out)


def standardize_inputs(raw):
    """Shift/scale every input dimension to its standard score.

    Returns (Z, mean, std).  Constant columns get std recorded as 1 so the
    transform maps them to zeros instead of dividing by zero.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    mean = raw.mean(axis=0)
    std = raw.std(axis=0)
    std = np.where(std > 0.0, std, 1.0)
    return (raw - mean) / std, mean, std


@dataclass(frozen=True)
class GprModel:
    """Fitted regression model; immutable, safe for concurrent prediction."""

    z_mean: np.ndarray
    z_std: np.ndarray
    Z: np.ndarray  # standardized training inputs, n x p
    y_mean: float
    alpha: np.ndarray  # (K + sigma^2 I)^{-1} (y - y_mean)
    chol: np.ndarray  # lower Cholesky factor of K + sigma^2 I
    kernel: KernelSpec
    noise: float
    log_likelihood: float = field(default=float("nan"))

    @property
    def n_inputs(self):
        return self.Z.shape[1]


def _kernel_matrix(kernel, Z, Zq=None):
    D = cdist(Z if Zq is None else Zq, Z)
    return kernel(D)


def _chol_with_jitter(K, noise, warn=True):
    """Cholesky of K + jitter*I, escalating jitter x10 up to 1e-4."""
    n = K.shape[0]
    jitter = max(noise, 0.0)
    while True:
        try:
            L = cholesky(K + jitter * np.eye(n), lower=True)
            if jitter > noise and warn:
                warnings.warn(
                    f"kernel matrix required jitter {jitter:.1e} (configured noise {noise:.1e})",
                    RuntimeWarning,
                    stacklevel=3,
                )
            return L, jitter
        except np.linalg.LinAlgError:
            nxt = max(jitter, 1e-10) * 10.0
            if nxt > _MAX_JITTER:
                raise IllConditionedKernelError(
                    f"Cholesky failed even with jitter {jitter:.1e} (max {_MAX_JITTER:.0e})"
                ) from None
            jitter = nxt


def _lml_from_chol(L, resid):
    n = resid.size
    a = cho_solve((L, True), resid)
    return float(
        -0.5 * resid @ a - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2.0 * math.pi)
    )


def log_marginal_likelihood(Z, y, kernel, noise):
    """Log marginal likelihood of outputs y under the kernel prior.

    ``Z`` holds (standardized) training inputs row-wise; the constant mean
    of y is subtracted, matching the model used by `fit`.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    y = np.asarray(y, dtype=float)
    K = _kernel_matrix(kernel, Z)
    L, _ = _chol_with_jitter(K, noise, warn=False)
    return _lml_from_chol(L, y - y.mean())


def _lml_and_grad(D, resid, kernel, noise):
    """Likelihood and its derivative w.r.t. log length scale.

    Returns (-inf, 0) when the kernel matrix is numerically indefinite at
    this length scale, or so ill-conditioned that the jitter-level error at
    the training points (exactly noise * |alpha|) would approach the
    noiseless-interpolation contract; either way the trial point is
    rejected as numerically meaningless.
    """
    K = kernel(D)
    try:
        L = cholesky(K + noise * np.eye(K.shape[0]), lower=True)
    except np.linalg.LinAlgError:
        return -np.inf, 0.0
    a = cho_solve((L, True), resid)
    # jitter-only noise promises noiseless interpolation; larger configured
    # noise is honest regression and exempt from the guard
    if 0 < noise <= 1e-8 and noise * np.abs(a).max() > 1e-7 * max(1.0, np.abs(resid).max()):
        return -np.inf, 0.0
    lml = float(
        -0.5 * resid @ a
        - np.sum(np.log(np.diag(L)))
        - 0.5 * resid.size * math.log(2.0 * math.pi)
    )
    dK = kernel.grad_log_l(D)
    Kinv = cho_solve((L, True), np.eye(K.shape[0]))
    grad = 0.5 * (a @ dK @ a - np.sum(Kinv * dK))
    return lml, float(grad)


def _ascend(D, resid, kernel, noise, log_l0, max_iter=200, gtol=1e-8):
    """Adaptive-step gradient ascent on log(l); returns (best_log_l, best_lml)."""
    log_l = log_l0
    f, g = _lml_and_grad(D, resid, kernel.with_length_scale(math.exp(log_l)), noise)
    best_log_l, best_f = log_l, f
    step = 0.1
    for _ in range(max_iter):
        if not np.isfinite(f) or abs(g) <= gtol or step < 1e-14:
            break
        trial = log_l + step * np.sign(g)
        f_t, g_t = _lml_and_grad(
            D, resid, kernel.with_length_scale(math.exp(trial)), noise
        )
        if f_t > f:
            log_l, f, g = trial, f_t, g_t
            step *= 1.5
            if f > best_f:
                best_log_l, best_f = log_l, f
        else:
            step *= 0.5
    return best_log_l, best_f


def fit(inputs, outputs, kernel=None, noise=1e-10, restarts=8, seed=0):
    """Fit a GPR model, maximizing marginal likelihood over the length scale.

    Parameters
    ----------
    inputs : (n, p) array of raw design parameters.
    outputs : (n,) array of scalar targets.
    kernel : KernelSpec, optional
        Family/smoothness to use; its length scale is the starting point and
        is re-optimized. Defaults to Matern nu=2.5.
    noise : float
        Observation noise variance added to the kernel diagonal.
    restarts : int
        Number of log-uniform restarts for the length-scale search over
        [1e-2, 1e2] in standardized-input units.
    seed : int
        Seed for the restart draws; fitting is deterministic per seed.
    """
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    outputs = np.asarray(outputs, dtype=float).ravel()
    if inputs.shape[0] != outputs.size:
        raise ValueError(
            f"input rows {inputs.shape[0]} do not match output count {outputs.size}"
        )
    if not (np.all(np.isfinite(inputs)) and np.all(np.isfinite(outputs))):
        raise ValueError("training data contain non-finite values")
    if kernel is None:
        kernel = KernelSpec()

    # canonical row order makes the whole fit (and therefore prediction)
    # exactly invariant under permutations of the training set
    order = np.lexsort(inputs.T[::-1])
    inputs = inputs[order]
    outputs = outputs[order]

    Z, z_mean, z_std = standardize_inputs(inputs)
    y_mean = float(outputs.mean())
    resid = outputs - y_mean
    D = cdist(Z, Z)

    rng = np.random.default_rng(seed)
    starts = [math.log(kernel.length_scale)]
    starts.extend(rng.uniform(math.log(1e-2), math.log(1e2), size=restarts))

    search_noise = noise
    while True:
        best_log_l, best_f = starts[0], -np.inf
        for log_l0 in starts:
            cand_log_l, cand_f = _ascend(D, resid, kernel, search_noise, log_l0)
            if cand_f > best_f:
                best_log_l, best_f = cand_log_l, cand_f
        if np.isfinite(best_f):
            break
        nxt = max(search_noise, 1e-10) * 10.0
        if nxt > _MAX_JITTER:
            raise IllConditionedKernelError(
                "no length scale in the search range produced a positive-definite "
                f"kernel, even with jitter {search_noise:.1e}"
            )
        warnings.warn(
            f"kernel search required jitter {nxt:.1e} (configured noise {noise:.1e})",
            RuntimeWarning,
            stacklevel=2,
        )
        search_noise = nxt
    noise = search_noise

    fitted = kernel.with_length_scale(math.exp(best_log_l))
    K = fitted(D)
    L, jitter = _chol_with_jitter(K, noise)
    alpha = cho_solve((L, True), resid)
    return GprModel(
        z_mean=z_mean,
        z_std=z_std,
        Z=Z,
        y_mean=y_mean,
        alpha=alpha,
        chol=L,
        kernel=fitted,
        noise=jitter,
        log_likelihood=_lml_from_chol(L, resid),
    )


def predict_mean(model, z_star):
    """Posterior-mean prediction at one query point (or a batch of rows)."""
    z_star = np.asarray(z_star, dtype=float)
    single = z_star.ndim == 1
    Zq = np.atleast_2d(z_star)
    if Zq.shape[1] != model.n_inputs:
        raise ValueError(
            f"query dimension {Zq.shape[1]} does not match model inputs {model.n_inputs}"
        )
    Zq = (Zq - model.z_mean) / model.z_std
    Kq = _kernel_matrix(model.kernel, model.Z, Zq)
    out = model.y_mean + Kq @ model.alpha
    return float(out[0]) if single else out
