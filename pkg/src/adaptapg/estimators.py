"""Online strong-convexity estimates built from a known optimal value."""

from __future__ import annotations

import math
from typing import Optional

from .problems import CompositeProblem, _as_point, _checked_grad

__all__ = [
    "Converged",
    "degeneracy_threshold",
    "hat_mu",
    "hat_mu_from",
    "MuEstimator",
    "mu_local",
]


class Converged(Exception):
    """The iterate already sits at reference precision; no estimate exists.

    Solvers treat this as a successful stop rather than an error.
    """

    def __init__(self, gap, message=None):
        self.gap = gap
        super().__init__(message or f"gap {gap!r} below degeneracy threshold")


def degeneracy_threshold(f_star: float) -> float:
    return 1e-14 * (1.0 + abs(f_star))


def hat_mu_from(gmap_sq_norm: float, gap: float, f_star: float) -> float:
    """``||g_L(y)||^2 / (2 (f(y) - f_star))`` from precomputed pieces."""
    if not gap > degeneracy_threshold(f_star):
        raise Converged(gap)
    return gmap_sq_norm / (2.0 * gap)


def hat_mu(problem: CompositeProblem, y, f_star: Optional[float] = None,
           L: Optional[float] = None) -> float:
    """Raw strong-convexity estimate at ``y``.

    Uses the reduced gradient with curvature ``L`` (the problem's constant by
    default).  Raises :class:`Converged` when ``f(y) - f_star`` is at or below
    :func:`degeneracy_threshold`.
    """
    if f_star is None:
        f_star = problem.f_star
    if f_star is None:
        raise ValueError("hat_mu needs f_star")
    L = problem.L if L is None else L
    y = _as_point(y)
    _, g = _checked_grad(problem, y)
    t = problem.penalty.prox(y - g / L, L)
    gm = L * (y - t)
    if problem.f_star is not None and f_star == problem.f_star:
        gap = problem.excess(y)
    else:
        gap = problem.value(y) - f_star
    return hat_mu_from(float(gm @ gm), gap, f_star)


class MuEstimator:
    """Running minimum of raw estimates, capped at ``mu0``.

    ``mu0=None`` disables the cap (the first raw estimate then sets the
    running value).
    """

    def __init__(self, mu0: Optional[float] = None):
        if mu0 is not None and not mu0 > 0:
            raise ValueError("mu0 must be positive")
        self.mu0 = mu0
        self.current_min = math.inf if mu0 is None else float(mu0)
        self.history: list[tuple[int, float, float]] = []

    def update(self, raw: float, k: Optional[int] = None) -> float:
        if not raw > 0:
            raise ValueError(f"raw estimate must be positive, got {raw!r}")
        self.current_min = min(self.current_min, float(raw))
        self.history.append((len(self.history) if k is None else k, float(raw),
                             self.current_min))
        return self.current_min

    @property
    def current(self) -> float:
        return self.current_min


def mu_local(problem: CompositeProblem, x, x_star=None, f_star=None) -> float:
    """Local strong convexity seen by the estimate sequence at ``x``.

    ``2 [f* - f(T_L x) - g_L(x)^T (x* - x) - ||g_L(x)||^2 / (2L)] / ||x - x*||^2``
    """
    x_star = problem.x_star if x_star is None else _as_point(x_star)
    f_star = problem.f_star if f_star is None else f_star
    if x_star is None or f_star is None:
        raise ValueError("mu_local needs x_star and f_star")
    x = _as_point(x)
    L = problem.L
    d = x - x_star
    dist2 = float(d @ d)
    if not dist2 > degeneracy_threshold(f_star):
        raise Converged(dist2, f"||x - x*||^2 = {dist2!r} below degeneracy threshold")
    _, g = _checked_grad(problem, x)
    t = problem.penalty.prox(x - g / L, L)
    gm = L * (x - t)
    if problem.f_star is not None and f_star == problem.f_star:
        neg_gap_t = -problem.excess(t)
    else:
        neg_gap_t = f_star - problem.value(t)
    num = neg_gap_t + float(gm @ d) - float(gm @ gm) / (2.0 * L)
    return 2.0 * num / dist2
