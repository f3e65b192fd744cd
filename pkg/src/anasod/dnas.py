"""Bilevel gradient search over a shared operation distribution, on toy losses.

A :class:`ToyBilevelProblem` gives every operation ``i`` a training loss and
a validation loss that are shifted quadratics in the weights ``w``.  Mixing
over ``Cat(p)`` is done in expectation, so both losses are linear in ``p``::

    L(p, w) = sum_i p_i * (a_i * ||w - c_i||^2 + b_i)

:func:`run_dnas` alternates a projected step on ``p`` against the validation
loss with a gradient step on ``w`` against the training loss.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .encoding import Architecture, CellSpec, check_encoding, decode_stochastic
from .errors import DivergenceError, InvalidInputError, StepSizeError

MAX_LR_HALVINGS = 10
DIVERGENCE_LOSS = 1e6
OPTIMUM_GRID = 20  # resolution of the grid search that locates a random problem's optimum


@dataclass(frozen=True)
class _QuadLosses:
    curvature: np.ndarray  # (k,)
    centres: np.ndarray  # (k, d)
    offsets: np.ndarray  # (k,)

    def per_op(self, w: np.ndarray) -> np.ndarray:
        return self.curvature * np.sum((w - self.centres) ** 2, axis=1) + self.offsets

    def weight_grad(self, p: np.ndarray, w: np.ndarray) -> np.ndarray:
        return 2.0 * np.sum((p * self.curvature)[:, None] * (w - self.centres), axis=0)


@dataclass(frozen=True)
class ToyBilevelProblem:
    """Per-operation shifted quadratics, mixed linearly by the encoding.

    ``optimal_encoding`` minimizes the validation loss at the best-responding
    weights ``w*(p) = argmin_w L_train(p, w)``.
    """

    train: _QuadLosses
    val: _QuadLosses
    optimal_encoding: np.ndarray = field(repr=False)

    def __post_init__(self):
        k = self.train.curvature.size
        for q in (self.train, self.val):
            if q.curvature.shape != (k,) or q.offsets.shape != (k,) or q.centres.shape[0] != k:
                raise InvalidInputError("per-op arrays must share the leading dimension k")
            if np.any(q.curvature < 0):
                raise InvalidInputError("curvatures must be non-negative")
        if self.train.centres.shape != self.val.centres.shape:
            raise InvalidInputError("train and val centres must have the same shape")

    @property
    def k(self) -> int:
        return self.train.curvature.size

    @property
    def weight_dim(self) -> int:
        return self.train.centres.shape[1]

    def train_loss(self, p, w) -> float:
        return float(np.dot(p, self.train.per_op(np.asarray(w, dtype=float))))

    def val_loss(self, p, w) -> float:
        return float(np.dot(p, self.val.per_op(np.asarray(w, dtype=float))))

    def val_grad_encoding(self, p, w) -> np.ndarray:
        """Gradient of ``L_val`` in ``p`` (the per-op validation losses)."""
        return self.val.per_op(np.asarray(w, dtype=float))

    def train_grad_weights(self, p, w) -> np.ndarray:
        return self.train.weight_grad(np.asarray(p, dtype=float), np.asarray(w, dtype=float))

    def best_response(self, p) -> np.ndarray:
        """``argmin_w L_train(p, w)``: curvature-weighted mean of the centres."""
        p = np.asarray(p, dtype=float)
        wts = p * self.train.curvature
        if not wts.sum() > 0:
            return np.zeros(self.weight_dim)
        return wts @ self.train.centres / wts.sum()


def _problem(train: _QuadLosses, val: _QuadLosses, optimum=None) -> ToyBilevelProblem:
    if optimum is None:
        optimum = _grid_optimum(train, val)
    return ToyBilevelProblem(train, val, np.asarray(optimum, dtype=float))


def _grid_optimum(train: _QuadLosses, val: _QuadLosses) -> np.ndarray:
    k = train.curvature.size
    tmp = ToyBilevelProblem(train, val, np.full(k, 1.0 / k))
    best, best_val = None, np.inf
    for bars in itertools.combinations(range(OPTIMUM_GRID + k - 1), k - 1):
        edges = (-1, *bars, OPTIMUM_GRID + k - 1)
        p = np.diff(edges) - 1
        p = p / OPTIMUM_GRID
        v = tmp.val_loss(p, tmp.best_response(p))
        if v < best_val:
            best, best_val = p, v
    return best


def constant_problem(costs) -> ToyBilevelProblem:
    """Each op has a weight-independent loss ``costs[i]`` for both levels."""
    c = np.asarray(costs, dtype=float)
    if c.ndim != 1 or c.size < 1:
        raise InvalidInputError("costs must be a non-empty vector")
    zero = np.zeros(c.size)
    losses = _QuadLosses(zero, np.zeros((c.size, 1)), c)
    return _problem(losses, losses, np.eye(c.size)[int(np.argmin(c))])


def random_constant_problem(k: int, rng: np.random.Generator) -> ToyBilevelProblem:
    """Constant-per-op problem with costs drawn uniformly from [0.5, 2]."""
    return constant_problem(rng.uniform(0.5, 2.0, size=k))


def free_op_problem(k: int, weight_dim: int, rng: np.random.Generator, free_op: int = 0) -> ToyBilevelProblem:
    """One op is free to train (zero training loss) but validates badly.

    The other ops share a quadratic with a common centre and differ by a
    small offset, so the best encoding puts all mass on the lowest offset.
    The free op's validation loss is that same quadratic plus 5, so it is
    the worst op on validation at every ``w``.
    """
    if not 0 <= free_op < k or k < 2:
        raise InvalidInputError("need k >= 2 and 0 <= free_op < k")
    centre = rng.normal(size=weight_dim)
    curv = np.ones(k)
    curv[free_op] = 0.0
    centres = np.tile(centre, (k, 1))
    offsets = rng.uniform(0.1, 0.5, size=k)
    train_off = offsets.copy()
    train_off[free_op] = 0.0
    val_off = offsets + 0.5
    val_off[free_op] = 5.0
    train = _QuadLosses(curv, centres, train_off)
    val = _QuadLosses(np.ones(k), centres, val_off)
    others = [i for i in range(k) if i != free_op]
    best = others[int(np.argmin(val_off[others]))]
    return _problem(train, val, np.eye(k)[best])


def random_quadratic_problem(
    k: int, weight_dim: int, rng: np.random.Generator, aligned: bool = False
) -> ToyBilevelProblem:
    """Random curvatures, centres and offsets.

    With ``aligned=True`` validation and training losses share curvature and
    centres, so the weight step cannot raise the validation loss.
    """
    train = _QuadLosses(rng.uniform(0.5, 2.0, size=k), rng.normal(size=(k, weight_dim)), rng.uniform(0, 1, size=k))
    if aligned:
        val = _QuadLosses(train.curvature, train.centres, rng.uniform(0, 1, size=k))
    else:
        val = _QuadLosses(rng.uniform(0.5, 2.0, size=k), rng.normal(size=(k, weight_dim)), rng.uniform(0, 1, size=k))
    return _problem(train, val)


@dataclass
class DnasState:
    encoding: np.ndarray
    weights: np.ndarray
    step: int
    lr_encoding: float
    lr_weights: float


def mirror_step(p, grad, lr: float) -> np.ndarray:
    """``p - lr * grad`` clamped at zero and renormalized.

    If clamping zeroes every coordinate the step is retried with half the
    learning rate, up to ``MAX_LR_HALVINGS`` times.
    """
    p = check_encoding(p)
    g = np.asarray(grad, dtype=float)
    if g.shape != p.shape or not np.all(np.isfinite(g)):
        raise InvalidInputError("grad must be a finite vector matching p")
    if not lr > 0:
        raise InvalidInputError("lr must be positive")
    for _ in range(MAX_LR_HALVINGS + 1):
        q = np.maximum(p - lr * g, 0.0)
        total = q.sum()
        if total > 0:
            q = q / total
            # fold the rounding residue into the largest coordinate
            i = int(np.argmax(q))
            q[i] += 1.0 - q.sum()
            return q
        lr /= 2.0
    raise StepSizeError(f"step collapsed the encoding even at lr={lr * 2:g}")


def run_dnas(
    problem: ToyBilevelProblem,
    epochs: int,
    lrs: tuple[float, float] = (0.5, 0.1),
    rng: np.random.Generator | None = None,
    on_step: Callable[[DnasState], None] | None = None,
) -> tuple[np.ndarray, list[tuple[float, float]]]:
    """Alternate an encoding step on ``L_val`` and a weight step on ``L_train``.

    The encoding starts uniform and the weights start at standard normal
    draws from ``rng``.  The encoding step uses the gradient of ``L_val``
    restricted to the current face of the simplex: the raw gradient minus
    its mean over the ops with nonzero mass.  A constant added to every
    per-op loss therefore leaves the trajectory unchanged.
    Returns the final encoding and per-epoch ``(L_train, L_val)``.
    """
    if epochs < 1:
        raise InvalidInputError("epochs must be >= 1")
    lr_p, lr_w = lrs
    if not (lr_p > 0 and lr_w > 0):
        raise InvalidInputError("learning rates must be positive")
    rng = rng if rng is not None else np.random.default_rng()
    state = DnasState(
        encoding=np.full(problem.k, 1.0 / problem.k),
        weights=rng.normal(size=problem.weight_dim),
        step=0,
        lr_encoding=lr_p,
        lr_weights=lr_w,
    )
    history: list[tuple[float, float]] = []
    for epoch in range(epochs):
        g = problem.val_grad_encoding(state.encoding, state.weights)
        g = g - g[state.encoding > 0].mean()
        state.encoding = mirror_step(state.encoding, g, state.lr_encoding)
        state.weights = state.weights - state.lr_weights * problem.train_grad_weights(state.encoding, state.weights)
        state.step = epoch + 1
        losses = (problem.train_loss(state.encoding, state.weights), problem.val_loss(state.encoding, state.weights))
        history.append(losses)
        if on_step is not None:
            on_step(state)
        if not all(np.isfinite(losses)) or max(abs(x) for x in losses) > DIVERGENCE_LOSS:
            raise DivergenceError(
                f"loss exceeded {DIVERGENCE_LOSS:g} at epoch {epoch + 1}", state.encoding.copy(), history
            )
    return state.encoding, history


def sample_final(p, spec: CellSpec, count: int, rng: np.random.Generator) -> list[Architecture]:
    """Draw ``count`` cells with each block's op sampled from ``Cat(p)``."""
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    return [decode_stochastic(p, spec, rng) for _ in range(count)]
