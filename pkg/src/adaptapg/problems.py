"""Composite objectives ``f = h + psi`` and their proximal primitives.

A :class:`CompositeProblem` pairs a smooth oracle ``h`` (value, gradient,
smoothness constant ``L`` and optionally the true strong convexity ``mu``)
with a penalty ``psi`` whose proximal operator is cheap.  Iterates are flat
float arrays; matrix-valued problems carry their shape on the penalty.
"""

from __future__ import annotations

import dataclasses
import hashlib
import math
from typing import Optional

import numpy as np
import scipy.sparse as sp

__all__ = [
    "EvaluationError",
    "SmoothOracle",
    "Quadratic",
    "LeastSquares",
    "Logistic",
    "SVMDual",
    "MaskedSquares",
    "Penalty",
    "ZeroPenalty",
    "L1Penalty",
    "NuclearPenalty",
    "BoxIndicator",
    "CompositeProblem",
    "gradient_map",
    "reduced_gradient",
    "prox_l1",
    "prox_nuclear",
    "prox_box",
    "composite_value",
    "estimate_L",
    "content_hash",
]


class EvaluationError(ArithmeticError):
    """Raised when an oracle returns non-finite values."""


def _as_point(x) -> np.ndarray:
    return np.asarray(x, dtype=float).ravel()


# ---------------------------------------------------------------------------
# smooth oracles
# ---------------------------------------------------------------------------


class SmoothOracle:
    """Base class for the smooth part ``h``.

    Subclasses implement :meth:`value_and_grad` and set ``L`` (and ``mu`` when
    the strong convexity constant is known exactly).
    """

    L: float
    mu: Optional[float] = None
    dim: Optional[int] = None

    def value_and_grad(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError

    def value(self, x: np.ndarray) -> float:
        return self.value_and_grad(x)[0]

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.value_and_grad(x)[1]

    def __call__(self, x):
        return self.value(_as_point(x))

    def _state(self) -> tuple:
        """Arrays and scalars that fully determine the oracle (for hashing)."""
        raise NotImplementedError

    def _check_constants(self):
        if not (self.L > 0 and math.isfinite(self.L)):
            raise ValueError(f"smoothness constant must be positive, got {self.L}")
        if self.mu is not None and not (0 < self.mu <= self.L * (1 + 1e-12)):
            raise ValueError(f"need 0 < mu <= L, got mu={self.mu}, L={self.L}")


class Quadratic(SmoothOracle):
    """``h(x) = h_star + 0.5 (x - x_star)^T Q (x - x_star)``.

    ``Q`` is given either through its eigenvalues and an orthonormal basis
    (columns of ``basis``) or, with ``basis=None``, as ``diag(eigenvalues)``.
    Values are computed from ``x - x_star`` directly so that ``h - h_star``
    carries no cancellation error.
    """

    def __init__(self, eigenvalues, x_star, h_star=0.0, basis=None):
        self.eigenvalues = np.asarray(eigenvalues, dtype=float)
        self.x_star = _as_point(x_star)
        self.h_star = float(h_star)
        self.basis = None if basis is None else np.asarray(basis, dtype=float)
        if self.eigenvalues.ndim != 1 or self.eigenvalues.size != self.x_star.size:
            raise ValueError("eigenvalues and x_star must have the same length")
        self.dim = self.x_star.size
        self.L = float(self.eigenvalues.max())
        self.mu = float(self.eigenvalues.min())
        self._check_constants()

    def excess(self, x) -> float:
        """``h(x) - h_star`` without cancellation."""
        d = self._coords(_as_point(x) - self.x_star)
        return 0.5 * float(np.dot(self.eigenvalues * d, d))

    def _coords(self, d):
        return d if self.basis is None else self.basis.T @ d

    def value_and_grad(self, x):
        d = x - self.x_star
        c = self._coords(d)
        lc = self.eigenvalues * c
        g = lc if self.basis is None else self.basis @ lc
        return self.h_star + 0.5 * float(np.dot(lc, c)), g

    def _state(self):
        return (self.eigenvalues, self.x_star, self.h_star,
                np.zeros(0) if self.basis is None else self.basis)


class LeastSquares(SmoothOracle):
    """``h(w) = 0.5 ||X w - y||^2`` (unscaled)."""

    def __init__(self, X, y, L=None):
        self.X = X
        self.y = np.asarray(y, dtype=float)
        self.dim = X.shape[1]
        self.L = float(L) if L is not None else estimate_L(X, gram=True)
        self._check_constants()

    def value_and_grad(self, w):
        r = self.X @ w - self.y
        return 0.5 * float(r @ r), np.asarray(self.X.T @ r).ravel()

    def _state(self):
        return (_matrix_bytes(self.X), self.y, self.L)


class Logistic(SmoothOracle):
    """``h(w) = sum_i log(1 + exp(-y_i x_i^T w)) + lam ||w||^2``.

    The ridge term lives inside ``h`` so that ``h`` is ``2 lam``-strongly
    convex.  ``L = ||X||_op^2 / 4 + 2 lam``.
    """

    def __init__(self, X, y, lam, L=None):
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        self.X = X
        self.y = np.asarray(y, dtype=float)
        self.lam = float(lam)
        self.dim = X.shape[1]
        if L is None:
            L = estimate_L(X, gram=True, scale=0.25, shift=2.0 * self.lam)
        self.L = float(L)
        self.mu = None
        self._check_constants()

    def value_and_grad(self, w):
        z = -self.y * np.asarray(self.X @ w).ravel()
        loss = float(np.sum(np.logaddexp(0.0, z)))
        s = -self.y * _sigmoid(z)
        g = np.asarray(self.X.T @ s).ravel() + 2.0 * self.lam * w
        return loss + self.lam * float(w @ w), g

    def _state(self):
        return (_matrix_bytes(self.X), self.y, self.lam, self.L)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class SVMDual(SmoothOracle):
    """Dual of the L2-regularised hinge loss.

    ``h(a) = ||X^T diag(y) a||^2 / (2C) - 1^T a``, to be paired with the
    indicator of ``[0, 1]^m``.  ``L = ||X||_op^2 / C``.
    """

    def __init__(self, X, y, C=1.0, L=None):
        if C <= 0:
            raise ValueError("C must be positive")
        self.X = X
        self.y = np.asarray(y, dtype=float)
        self.C = float(C)
        self.dim = X.shape[0]
        self.L = float(L) if L is not None else estimate_L(X, gram=True, scale=1.0 / self.C)
        self._check_constants()

    def value_and_grad(self, a):
        u = np.asarray(self.X.T @ (self.y * a)).ravel()
        val = float(u @ u) / (2.0 * self.C) - float(a.sum())
        g = self.y * np.asarray(self.X @ u).ravel() / self.C - 1.0
        return val, g

    def _state(self):
        return (_matrix_bytes(self.X), self.y, self.C, self.L)


class MaskedSquares(SmoothOracle):
    """``h(X) = sum_{(i,j) in Omega} (X_ij - Y_ij)^2`` on a flattened matrix.

    ``L = 2`` exactly (the Hessian is twice a 0/1 diagonal).
    """

    def __init__(self, shape, rows, cols, values):
        self.shape = tuple(int(s) for s in shape)
        self.rows = np.asarray(rows, dtype=np.int64)
        self.cols = np.asarray(cols, dtype=np.int64)
        self.values = np.asarray(values, dtype=float)
        self._flat = np.ravel_multi_index((self.rows, self.cols), self.shape)
        self.dim = self.shape[0] * self.shape[1]
        self.L = 2.0 if self.rows.size else 1.0
        self._check_constants()

    def value_and_grad(self, x):
        r = x[self._flat] - self.values
        g = np.zeros_like(x)
        g[self._flat] = 2.0 * r
        return float(r @ r), g

    def _state(self):
        return (np.asarray(self.shape), self.rows, self.cols, self.values)


def _matrix_bytes(X):
    if sp.issparse(X):
        X = X.tocsr()
        return (np.asarray(X.shape), X.indptr, X.indices, X.data)
    return np.ascontiguousarray(X, dtype=float)


# ---------------------------------------------------------------------------
# penalties and their proximal operators
# ---------------------------------------------------------------------------


def prox_l1(v, threshold):
    """Soft thresholding ``sign(v) * max(|v| - threshold, 0)``."""
    if threshold < 0:
        raise ValueError(f"threshold must be nonnegative, got {threshold}")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


def prox_nuclear(v, threshold, shape=None):
    """Singular value soft thresholding of ``v`` viewed as a matrix.

    ``v`` may be a 2-D array or a flat array together with ``shape``; the
    result has the same layout as the input.
    """
    if threshold < 0:
        raise ValueError(f"threshold must be nonnegative, got {threshold}")
    v = np.asarray(v, dtype=float)
    if v.ndim == 2:
        M, flat = v, False
    elif shape is not None:
        M, flat = v.reshape(shape), True
    else:
        raise ValueError("prox_nuclear needs a matrix or shape metadata")
    try:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise EvaluationError(f"SVD did not converge: {exc}") from exc
    s = np.maximum(s - threshold, 0.0)
    out = (U * s) @ Vt
    return out.ravel() if flat else out


def prox_box(v, lo, hi):
    """Coordinate-wise projection onto ``[lo, hi]``."""
    if lo > hi:
        raise ValueError(f"empty box: lo={lo} > hi={hi}")
    return np.clip(np.asarray(v, dtype=float), lo, hi)


class Penalty:
    """Base class for ``psi``.

    ``prox(v, step)`` returns the minimiser of ``psi(x) + step/2 ||x - v||^2``.
    """

    def __call__(self, x) -> float:
        raise NotImplementedError

    def prox(self, v: np.ndarray, step: float) -> np.ndarray:
        raise NotImplementedError

    def _state(self) -> tuple:
        return ()


class ZeroPenalty(Penalty):
    def __call__(self, x):
        return 0.0

    def prox(self, v, step):
        return v


class L1Penalty(Penalty):
    def __init__(self, lam):
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        self.lam = float(lam)

    def __call__(self, x):
        return self.lam * float(np.abs(x).sum())

    def prox(self, v, step):
        return prox_l1(v, self.lam / step)

    def _state(self):
        return (self.lam,)


class NuclearPenalty(Penalty):
    def __init__(self, lam, shape):
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        self.lam = float(lam)
        self.shape = tuple(int(s) for s in shape)

    def __call__(self, x):
        s = np.linalg.svd(np.reshape(x, self.shape), compute_uv=False)
        return self.lam * float(s.sum())

    def prox(self, v, step):
        return prox_nuclear(v, self.lam / step, shape=self.shape)

    def _state(self):
        return (self.lam, np.asarray(self.shape))


class BoxIndicator(Penalty):
    """Indicator of ``[lo, hi]^n``: 0 inside, ``+inf`` outside."""

    def __init__(self, lo=0.0, hi=1.0):
        if lo > hi:
            raise ValueError(f"empty box: lo={lo} > hi={hi}")
        self.lo = float(lo)
        self.hi = float(hi)

    def __call__(self, x):
        x = np.asarray(x)
        if np.all(x >= self.lo) and np.all(x <= self.hi):
            return 0.0
        return math.inf

    def prox(self, v, step):
        return prox_box(v, self.lo, self.hi)

    def _state(self):
        return (self.lo, self.hi)


# ---------------------------------------------------------------------------
# composite problem
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True, eq=False)
class CompositeProblem:
    """``f = smooth + penalty`` with optional ground truth.

    Instances are immutable and can be shared between concurrent solver runs.
    """

    smooth: SmoothOracle
    penalty: Penalty = dataclasses.field(default_factory=ZeroPenalty)
    f_star: Optional[float] = None
    x_star: Optional[np.ndarray] = None
    name: str = "problem"
    dim: Optional[int] = None
    meta: dict = dataclasses.field(default_factory=dict, compare=False)

    reference_tol = 1e-8

    def __post_init__(self):
        if self.x_star is not None:
            object.__setattr__(self, "x_star", _as_point(self.x_star))
            if self.dim is None:
                object.__setattr__(self, "dim", self.x_star.size)
        if self.dim is None:
            object.__setattr__(self, "dim", self.smooth.dim)
        if self.f_star is not None and self.x_star is not None:
            fx = self.value(self.x_star)
            if abs(fx - self.f_star) > self.reference_tol * (1 + abs(self.f_star)):
                raise ValueError(
                    f"f(x_star)={fx!r} disagrees with f_star={self.f_star!r}")

    @property
    def L(self) -> float:
        return self.smooth.L

    @property
    def mu(self) -> Optional[float]:
        return self.smooth.mu

    def value(self, x) -> float:
        return composite_value(self, x)

    def with_reference(self, f_star: float) -> "CompositeProblem":
        return dataclasses.replace(self, f_star=float(f_star))

    def excess(self, x) -> float:
        """``f(x) - f_star``, cancellation-free for exact spectral quadratics."""
        if self.f_star is None:
            raise ValueError("f_star unknown")
        if (isinstance(self.smooth, Quadratic) and isinstance(self.penalty, ZeroPenalty)
                and self.f_star == self.smooth.h_star):
            return self.smooth.excess(x)
        return self.value(x) - self.f_star


def composite_value(problem: CompositeProblem, x) -> float:
    """``h(x) + psi(x)``; ``+inf`` outside the domain of ``psi``."""
    x = _as_point(x)
    p = problem.penalty(x)
    if p == math.inf:
        return math.inf
    return problem.smooth.value(x) + p


def _checked_grad(problem, y):
    val, g = problem.smooth.value_and_grad(y)
    if not (math.isfinite(val) and np.all(np.isfinite(g))):
        raise EvaluationError(
            f"non-finite smooth oracle at iterate with norm {np.linalg.norm(y):.3e}"
            f" (h={val!r})")
    return val, g


def gradient_map(problem: CompositeProblem, y, alpha: float) -> np.ndarray:
    """``T_alpha(y) = prox_{psi/alpha}(y - grad h(y) / alpha)``."""
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    y = _as_point(y)
    _, g = _checked_grad(problem, y)
    return problem.penalty.prox(y - g / alpha, alpha)


def reduced_gradient(problem: CompositeProblem, y, alpha: float) -> np.ndarray:
    """``g_alpha(y) = alpha (y - T_alpha(y))``."""
    y = _as_point(y)
    return alpha * (y - gradient_map(problem, y, alpha))


# ---------------------------------------------------------------------------
# smoothness constant
# ---------------------------------------------------------------------------


def estimate_L(op, *, gram=False, scale=1.0, shift=0.0, safety=1.01,
               tol=1e-6, max_iter=10_000, seed=0) -> float:
    """Largest eigenvalue of a Hessian surrogate by power iteration.

    Parameters
    ----------
    op : array, sparse matrix or LinearOperator
        Symmetric PSD matrix whose top eigenvalue is wanted.  With ``gram=True`` ``op`` is a design matrix ``X`` and the
        operator is ``X^T X``.
    scale, shift : float
        Result is ``safety * (scale * lambda_max + shift)``.
    safety : float
        Multiplicative margin so that the descent lemma survives estimation
        error.

    Raises
    ------
    RuntimeError
        If the Rayleigh quotient has not stabilised to ``tol`` after
        ``max_iter`` iterations.
    """
    n = op.shape[1]
    if gram:
        def apply(v):
            return np.asarray(op.T @ (op @ v)).ravel()
    else:
        def apply(v):
            return np.asarray(op @ v).ravel()
    rng = np.random.Generator(np.random.PCG64(seed))
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    lam_old = 0.0
    for _ in range(max_iter):
        w = apply(v)
        lam = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            lam = 0.0
            break
        v = w / nw
        if abs(lam - lam_old) <= tol * abs(lam):
            break
        lam_old = lam
    else:
        raise RuntimeError(f"power iteration stagnated after {max_iter} iterations")
    # one more Rayleigh quotient on the final vector
    lam = max(lam, float(v @ apply(v)))
    return safety * (scale * lam + shift)


def content_hash(problem: CompositeProblem) -> str:
    """SHA-256 over the exact bytes defining ``problem`` (ground truth excluded)."""
    h = hashlib.sha256()

    def feed(obj):
        if isinstance(obj, tuple):
            for o in obj:
                feed(o)
        elif isinstance(obj, np.ndarray):
            a = np.ascontiguousarray(obj)
            h.update(str(a.dtype).encode())
            h.update(str(a.shape).encode())
            h.update(a.tobytes())
        else:
            h.update(repr(obj).encode())

    feed(type(problem.smooth).__name__)
    feed(problem.smooth._state())
    feed(type(problem.penalty).__name__)
    feed(problem.penalty._state())
    return h.hexdigest()
