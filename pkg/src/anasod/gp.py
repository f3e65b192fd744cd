"""Gaussian-process surrogate over encodings.

Matern 5/2 kernel with a shared (or per-dimension) lengthscale, an output
scale and Gaussian observation noise, all box-constrained.  Targets are
log-transformed and standardized before fitting; hyperparameters maximize the
log marginal likelihood by multi-start L-BFGS-B on log-parameters with
analytic gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize
from scipy.stats import norm

from .errors import InvalidInputError, InvalidTargetError, NumericalError

LENGTHSCALE_BOUNDS = (0.01, 0.5)
OUTPUTSCALE_BOUNDS = (0.5, 5.0)
NOISE_BOUNDS = (1e-6, 1e-1)
JITTERS = (0.0, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
SD_FLOOR = 1e-12  # predictive sds at or below this are treated as exact
SQRT5 = math.sqrt(5.0)


@dataclass(frozen=True)
class GPHyperparams:
    lengthscale: tuple[float, ...]
    outputscale: float
    noise_var: float
    ard: bool = False

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscale, dtype=float))
        if not self.ard and ls.size != 1:
            raise InvalidInputError("a shared-lengthscale kernel takes exactly one lengthscale")
        object.__setattr__(self, "lengthscale", tuple(float(v) for v in ls))
        object.__setattr__(self, "outputscale", float(self.outputscale))
        object.__setattr__(self, "noise_var", float(self.noise_var))

    def projected(self) -> "GPHyperparams":
        """Clip every parameter into its box."""
        return replace(
            self,
            lengthscale=tuple(float(np.clip(v, *LENGTHSCALE_BOUNDS)) for v in self.lengthscale),
            outputscale=float(np.clip(self.outputscale, *OUTPUTSCALE_BOUNDS)),
            noise_var=float(np.clip(self.noise_var, *NOISE_BOUNDS)),
        )

    def in_bounds(self) -> bool:
        lo, hi = LENGTHSCALE_BOUNDS
        return (
            all(lo <= v <= hi for v in self.lengthscale)
            and OUTPUTSCALE_BOUNDS[0] <= self.outputscale <= OUTPUTSCALE_BOUNDS[1]
            and NOISE_BOUNDS[0] <= self.noise_var <= NOISE_BOUNDS[1]
        )

    def as_vector(self) -> np.ndarray:
        return np.array([*self.lengthscale, self.outputscale, self.noise_var])

    @classmethod
    def from_vector(cls, theta: np.ndarray, ard: bool) -> "GPHyperparams":
        theta = np.asarray(theta, dtype=float)
        return cls(tuple(theta[:-2]), theta[-2], theta[-1], ard)


# ---------------------------------------------------------------------------
# kernel
# ---------------------------------------------------------------------------


def _scaled_sqdist(A: np.ndarray, B: np.ndarray, ls: np.ndarray) -> np.ndarray:
    As = A / ls
    Bs = B / ls
    d2 = As @ Bs.T
    d2 *= -2.0
    d2 += (As * As).sum(1)[:, None]
    d2 += (Bs * Bs).sum(1)[None, :]
    return np.maximum(d2, 0.0, out=d2)


def matern52(A: np.ndarray, B: np.ndarray, lengthscale, outputscale: float) -> np.ndarray:
    """``s * (1 + u + u^2/3) * exp(-u)`` with ``u = sqrt(5) * ||a - b|| / l``."""
    ls = np.asarray(lengthscale, dtype=float)
    u = _scaled_sqdist(A, B, ls)
    np.sqrt(u, out=u)
    u *= SQRT5
    # in place: pool-sized matrices make temporaries the bottleneck
    poly = u * u
    poly /= 3.0
    poly += u
    poly += 1.0
    np.negative(u, out=u)
    np.exp(u, out=u)
    poly *= u
    poly *= outputscale
    return poly


def _kernel_and_grads(X: np.ndarray, hp: GPHyperparams):
    """Kernel matrix with noise, plus dK/dtheta for (lengthscales..., outputscale, noise)."""
    ls = np.asarray(hp.lengthscale)
    s = hp.outputscale
    n = X.shape[0]
    u = SQRT5 * np.sqrt(_scaled_sqdist(X, X, ls))
    e = np.exp(-u)
    base = (1.0 + u + u * u / 3.0) * e
    K = s * base + hp.noise_var * np.eye(n)
    grads = []
    common = s * e * (1.0 + u) * 5.0 / 3.0
    if hp.ard:
        for d in range(ls.size):
            diff2 = (X[:, d][:, None] - X[:, d][None, :]) ** 2
            grads.append(common * diff2 / ls[d] ** 3)
    else:
        # d/dl of s(1+u+u^2/3)e^{-u} = s e^{-u} u^2 (1+u) / (3 l)
        grads.append(s * e * u * u * (1.0 + u) / (3.0 * ls[0]))
    grads.append(base)
    grads.append(np.eye(n))
    return K, grads


def _cholesky(K: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor with escalating diagonal jitter."""
    n = K.shape[0]
    for jitter in JITTERS:
        try:
            L = cholesky(K + jitter * np.eye(n), lower=True, check_finite=True)
            return L, jitter
        except (np.linalg.LinAlgError, ValueError):
            continue
    raise NumericalError(f"kernel matrix not positive definite even with jitter {JITTERS[-1]}")


def log_marginal_likelihood(
    hp: GPHyperparams, X: np.ndarray, z: np.ndarray, return_grad: bool = False
):
    """Zero-mean GP log marginal likelihood of standardized targets ``z``.

    With ``return_grad`` also returns dLML/dtheta in the natural parameters,
    ordered as :meth:`GPHyperparams.as_vector`.
    """
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    n = X.shape[0]
    K, grads = _kernel_and_grads(X, hp)
    L, _ = _cholesky(K)
    alpha = cho_solve((L, True), z)
    lml = -0.5 * z @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * math.log(2 * math.pi)
    if not return_grad:
        return float(lml)
    Kinv = cho_solve((L, True), np.eye(n))
    W = np.outer(alpha, alpha) - Kinv
    g = np.array([0.5 * np.sum(W * dK) for dK in grads])
    return float(lml), g


# ---------------------------------------------------------------------------
# model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GPModel:
    train_inputs: np.ndarray  # (n, k), inputs in [0, 1]^k
    train_targets_raw: np.ndarray  # (n,), validation errors (percent)
    transform_state: tuple[float, float]  # (mean, sd) of log targets
    hyperparams: GPHyperparams
    chol: np.ndarray  # lower Cholesky factor of K + jitter
    alpha: np.ndarray  # K^{-1} z
    jitter: float
    chol_inv: np.ndarray  # L^{-1}, so pool variances reduce to one matmul

    @property
    def z(self) -> np.ndarray:
        return transform_targets(self.train_targets_raw, self.transform_state)

    @property
    def best_z(self) -> float:
        """Incumbent for EI: the lowest transformed training target."""
        return float(np.min(self.z))

    @property
    def dim(self) -> int:
        return self.train_inputs.shape[1]


def transform_targets(y: np.ndarray, state: tuple[float, float]) -> np.ndarray:
    mu, sd = state
    return (np.log(y) - mu) / sd


def _transform_state(y: np.ndarray) -> tuple[float, float]:
    logy = np.log(y)
    mu = float(np.mean(logy))
    sd = float(np.std(logy))
    if not np.isfinite(sd) or sd < 1e-12:
        sd = 1.0
    return mu, sd


def _map_inputs(X) -> np.ndarray:
    # Min-max mapping with fixed bounds [0, 1] per coordinate; encodings already
    # live there, so this is a validated identity.
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("inputs must be finite")
    return X


def build_model(X, y, hp: GPHyperparams) -> GPModel:
    """Condition a GP with fixed hyperparameters on ``(X, y)``."""
    X = _map_inputs(X)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.size or y.size == 0:
        raise InvalidInputError(f"got {X.shape[0]} inputs and {y.size} targets")
    if np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise InvalidTargetError("targets must be positive and finite for the log transform")
    if hp.ard and len(hp.lengthscale) != X.shape[1]:
        raise InvalidInputError("ARD needs one lengthscale per input dimension")
    state = _transform_state(y)
    z = transform_targets(y, state)
    K, _ = _kernel_and_grads(X, hp)
    L, jitter = _cholesky(K)
    alpha = cho_solve((L, True), z)
    L_inv = solve_triangular(L, np.eye(L.shape[0]), lower=True)
    return GPModel(X, y, state, hp, L, alpha, jitter, L_inv)


def fit(
    X,
    y,
    rng: np.random.Generator | None = None,
    *,
    ard: bool = False,
    restarts: int = 3,
    hyperparams: GPHyperparams | None = None,
) -> GPModel:
    """Fit hyperparameters by maximizing the log marginal likelihood, then condition.

    Starts from ``restarts`` log-uniform draws inside the bounds plus a fixed
    mid-box point.  Passing ``hyperparams`` skips optimization.
    """
    X = _map_inputs(X)
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != y.size or y.size == 0:
        raise InvalidInputError(f"got {X.shape[0]} inputs and {y.size} targets")
    if np.any(~np.isfinite(y)) or np.any(y <= 0):
        raise InvalidTargetError("targets must be positive and finite for the log transform")
    if hyperparams is not None:
        return build_model(X, y, hyperparams.projected())

    rng = rng if rng is not None else np.random.default_rng(0)
    z = transform_targets(y, _transform_state(y))
    n_ls = X.shape[1] if ard else 1
    bounds = [LENGTHSCALE_BOUNDS] * n_ls + [OUTPUTSCALE_BOUNDS, NOISE_BOUNDS]
    log_lo = np.log([b[0] for b in bounds])
    log_hi = np.log([b[1] for b in bounds])

    def objective(log_theta):
        hp = GPHyperparams.from_vector(np.exp(log_theta), ard)
        try:
            lml, g = log_marginal_likelihood(hp, X, z, return_grad=True)
        except NumericalError:
            return 1e25, np.zeros_like(log_theta)
        # chain rule to log-space; minimize the negative
        return -lml, -g * np.exp(log_theta)

    starts = [0.5 * (log_lo + log_hi)]
    starts += [rng.uniform(log_lo, log_hi) for _ in range(restarts)]
    best_val, best_theta = np.inf, None
    for x0 in starts:
        res = minimize(
            objective, x0, jac=True, method="L-BFGS-B", bounds=list(zip(log_lo, log_hi))
        )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val, best_theta = res.fun, res.x
    if best_theta is None or best_val >= 1e25:
        raise NumericalError("log marginal likelihood could not be evaluated at any start")
    hp = GPHyperparams.from_vector(np.exp(np.clip(best_theta, log_lo, log_hi)), ard).projected()
    return build_model(X, y, hp)


def predict_latent(model: GPModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of the latent function in transformed space."""
    Xq = _map_inputs(X)
    if Xq.shape[1] != model.dim:
        raise InvalidInputError(f"query has dimension {Xq.shape[1]}, model expects {model.dim}")
    hp = model.hyperparams
    Ks = matern52(Xq, model.train_inputs, hp.lengthscale, hp.outputscale)
    mean = Ks @ model.alpha
    v = Ks @ model.chol_inv.T
    var = hp.outputscale - np.einsum("ij,ij->i", v, v)
    return mean, np.maximum(var, 0.0)


def predict(model: GPModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance of the validation error in percent units.

    The transformed-space Gaussian is pushed through the inverse
    standardization and ``exp``, so the reported moments are log-normal.
    """
    m, v = predict_latent(model, X)
    mu, sd = model.transform_state
    log_mean = mu + sd * m
    log_var = sd * sd * v
    mean = np.exp(log_mean + 0.5 * log_var)
    var = np.expm1(log_var) * np.exp(2.0 * log_mean + log_var)
    return mean, np.maximum(var, 0.0)


# ---------------------------------------------------------------------------
# expected improvement
# ---------------------------------------------------------------------------


def ei_from_moments(mean, sd, incumbent: float) -> np.ndarray:
    """Closed-form EI for minimization: ``E[max(incumbent - Z, 0)]``, ``Z ~ N(mean, sd^2)``."""
    mean = np.asarray(mean, dtype=float)
    sd = np.asarray(sd, dtype=float)
    diff = incumbent - mean
    out = np.maximum(diff, 0.0)
    pos = sd > SD_FLOOR
    if np.any(pos):
        zz = diff[pos] / sd[pos]
        out = out.astype(float, copy=True)
        out[pos] = diff[pos] * norm.cdf(zz) + sd[pos] * norm.pdf(zz)
    return np.maximum(out, 0.0)


def expected_improvement(model: GPModel, X, incumbent: float | None = None, chunk: int = 8192) -> np.ndarray:
    """EI of each row of ``X`` in transformed target space.

    ``incumbent`` defaults to the best transformed training target.
    """
    inc = model.best_z if incumbent is None else float(incumbent)
    Xq = _map_inputs(X)
    out = np.empty(Xq.shape[0])
    for start in range(0, Xq.shape[0], chunk):
        m, v = predict_latent(model, Xq[start : start + chunk])
        out[start : start + chunk] = ei_from_moments(m, np.sqrt(v), inc)
    return out


def expected_improvement_grad(model: GPModel, x, incumbent: float | None = None) -> tuple[float, np.ndarray]:
    """EI at a single point and its gradient with respect to the input."""
    inc = model.best_z if incumbent is None else float(incumbent)
    x = np.asarray(x, dtype=float).ravel()
    if x.size != model.dim:
        raise InvalidInputError(f"query has dimension {x.size}, model expects {model.dim}")
    hp = model.hyperparams
    ls = np.asarray(hp.lengthscale)
    Xt = model.train_inputs
    diff = x[None, :] - Xt  # (n, k)
    u = SQRT5 * np.sqrt(np.maximum(((diff / ls) ** 2).sum(1), 0.0))
    e = np.exp(-u)
    ks = hp.outputscale * (1.0 + u + u * u / 3.0) * e
    # dk/dx = -s e^{-u} (1+u) * 5/3 * (x - x_j) / l^2
    dks = -(hp.outputscale * e * (1.0 + u) * 5.0 / 3.0)[:, None] * diff / (ls * ls)
    mean = float(ks @ model.alpha)
    dmean = dks.T @ model.alpha
    Kinv_ks = cho_solve((model.chol, True), ks)
    var = max(hp.outputscale - float(ks @ Kinv_ks), 0.0)
    sd = math.sqrt(var)
    d = inc - mean
    if sd <= SD_FLOOR:
        return max(d, 0.0), (-dmean if d > 0 else np.zeros_like(x))
    dvar = -2.0 * dks.T @ Kinv_ks
    dsd = dvar / (2.0 * sd)
    zz = d / sd
    cdf, pdf = norm.cdf(zz), norm.pdf(zz)
    ei = d * cdf + sd * pdf
    grad = -cdf * dmean + pdf * dsd
    return float(max(ei, 0.0)), grad
