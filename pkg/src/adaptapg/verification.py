"""Ground-truth quadratics and executable convergence-bound checkers.

Each ``check_*`` function takes a :class:`~adaptapg.solvers.Trace` plus the
ground truth of the problem it was run on and returns a :class:`Report`:
one :class:`CheckRow` per inequality instance, with the absolute slack that
was allowed.  Checkers raise :class:`PreconditionError` rather than return a
vacuous pass when the statement's hypotheses do not hold.
"""

from __future__ import annotations

import copy
import csv
import dataclasses
import io
import math
from typing import Iterable, Optional

import numpy as np
from scipy.stats import ortho_group

from .estimators import Converged, hat_mu
from .problems import CompositeProblem, Quadratic, ZeroPenalty, _as_point
from .solvers import SolverConfig, Trace, pgd

__all__ = [
    "PreconditionError",
    "CheckRow",
    "Report",
    "SpectralQuadratic",
    "make_spectral",
    "finite_diff_grad",
    "gd_estimator_bound_rhs",
    "gd_estimator_envelope",
    "mu_cap",
    "synthetic_mu_sequence",
    "check_prop1",
    "check_prop2",
    "check_prop4",
    "check_p1",
    "check_p2",
    "check_lemma4",
    "check_lemma5",
    "check_lemma6",
    "check_equivalence",
    "check_gd_estimator",
    "check_spectral_propagation",
    "corrupt_trace",
]

DEFAULT_SLACK = 1e-9


class PreconditionError(ValueError):
    """The statement being checked does not apply to this trace/problem."""


@dataclasses.dataclass(frozen=True)
class CheckRow:
    check: str
    k: int
    lhs: float
    rhs: float
    slack: float

    @property
    def passed(self) -> bool:
        return bool(self.lhs <= self.rhs + self.slack)


@dataclasses.dataclass
class Report:
    rows: list = dataclasses.field(default_factory=list)
    skipped: list = dataclasses.field(default_factory=list)

    def add(self, check, k, lhs, rhs, slack):
        self.rows.append(CheckRow(check, int(k), float(lhs), float(rhs), float(slack)))

    def extend(self, other: "Report") -> "Report":
        self.rows.extend(other.rows)
        self.skipped.extend(other.skipped)
        return self

    @property
    def violations(self) -> list:
        return [r for r in self.rows if not r.passed]

    @property
    def ok(self) -> bool:
        return not self.violations

    def checks(self) -> list:
        return list(dict.fromkeys(r.check for r in self.rows))

    def summary(self) -> str:
        lines = []
        for name in self.checks():
            rows = [r for r in self.rows if r.check == name]
            bad = [r for r in rows if not r.passed]
            status = "PASS" if not bad else "FAIL"
            line = f"{status}  {name}: {len(rows)} rows, {len(bad)} violations"
            if bad:
                worst = max(bad, key=lambda r: r.lhs - r.rhs)
                line += (f" (worst k={worst.k}: lhs={worst.lhs:.6g} >"
                         f" rhs={worst.rhs:.6g})")
            lines.append(line)
        for name, why in self.skipped:
            lines.append(f"SKIP  {name}: {why}")
        return "\n".join(lines)

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("check", "k", "lhs", "rhs", "slack", "pass"))
        for r in self.rows:
            w.writerow((r.check, r.k, repr(r.lhs), repr(r.rhs), repr(r.slack),
                        int(r.passed)))
        text = buf.getvalue()
        if path is None:
            return text
        with open(path, "w", newline="") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# spectral quadratics
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True, eq=False)
class SpectralQuadratic:
    """``h(x) = f_star + 0.5 (x - x*)^T B diag(lam) B^T (x - x*)``."""

    eigenvalues: np.ndarray
    x_star: np.ndarray
    f_star: float = 0.0
    basis: Optional[np.ndarray] = None

    @property
    def mu(self) -> float:
        return float(self.eigenvalues.min())

    @property
    def L(self) -> float:
        return float(self.eigenvalues.max())

    def coords(self, x) -> np.ndarray:
        """Coordinates of ``x - x*`` in the eigenbasis."""
        d = _as_point(x) - self.x_star
        return d if self.basis is None else self.basis.T @ d

    def oracle(self) -> Quadratic:
        return Quadratic(self.eigenvalues, self.x_star, self.f_star, self.basis)

    def problem(self, name="spectral") -> CompositeProblem:
        return CompositeProblem(self.oracle(), ZeroPenalty(), f_star=self.f_star,
                                x_star=self.x_star, name=name)


def make_spectral(eigenvalues, x_star=None, f_star=0.0, seed=None, basis="identity"):
    """Build a spectral quadratic and its composite problem.

    ``basis="random"`` draws a Haar-random orthonormal basis from ``seed``;
    a missing ``x_star`` is drawn standard normal from the same seed.
    """
    lam = np.asarray(eigenvalues, dtype=float).ravel()
    if lam.size == 0 or np.any(lam <= 0) or not np.all(np.isfinite(lam)):
        raise ValueError("eigenvalues must be positive and finite")
    rng = np.random.Generator(np.random.PCG64(seed))
    n = lam.size
    if x_star is None:
        x_star = rng.standard_normal(n)
    x_star = _as_point(x_star)
    if x_star.size != n:
        raise ValueError("x_star has the wrong dimension")
    B = None
    if basis == "random":
        B = np.eye(1) if n == 1 else ortho_group.rvs(n, random_state=rng)
    elif basis != "identity":
        B = np.asarray(basis, dtype=float)
    q = SpectralQuadratic(lam, x_star, float(f_star), B)
    return q, q.problem()


def finite_diff_grad(fun, x, h_step=None) -> np.ndarray:
    """Central differences, step ``1e-6 (1 + ||x||)`` unless given."""
    x = _as_point(x)
    if h_step is None:
        h_step = 1e-6 * (1.0 + np.linalg.norm(x))
    if not h_step > 0:
        raise ValueError("h_step must be positive")
    g = np.empty_like(x)
    e = np.zeros_like(x)
    for i in range(x.size):
        e[i] = h_step
        g[i] = (fun(x + e) - fun(x - e)) / (2.0 * h_step)
        e[i] = 0.0
    return g


def _omega1_sq(q: SpectralQuadratic, y0) -> float:
    c = q.coords(y0)
    mask = q.eigenvalues == q.mu
    return float(np.sum(c[mask] ** 2))


def _lambda2(q: SpectralQuadratic) -> float:
    rest = q.eigenvalues[q.eigenvalues > q.mu]
    if rest.size == 0:
        raise PreconditionError("all eigenvalues equal mu; lambda_2 undefined")
    return float(rest.min())


def gd_estimator_bound_rhs(q: SpectralQuadratic, y0, k: int) -> float:
    """``(||y0-x*||^2/w1^2) (l2 - mu) (l2/mu) ((1 - l2/L)/(1 - mu/L))^(2k)``."""
    mu, L = q.mu, q.L
    lam2 = _lambda2(q)
    w1 = _omega1_sq(q, y0)
    if w1 == 0.0:
        raise PreconditionError("y0 - x* has no component on the mu-eigenspace")
    if mu == L:
        raise PreconditionError("mu == L")
    c = q.coords(y0)
    ratio = (1.0 - lam2 / L) / (1.0 - mu / L)
    return float(c @ c) / w1 * (lam2 - mu) * (lam2 / mu) * ratio ** (2 * k)


def gd_estimator_envelope(q: SpectralQuadratic, y0, k: int) -> float:
    """Same geometric rate with ``L (L - mu)`` in place of ``l2 (l2 - mu)``.

    Holds for any spectrum: each component ``i >= 2`` contributes at most
    ``lam_i (lam_i - mu) w_i^2 r_i^(2k) / (mu w_1^2 r_1^(2k))`` with
    ``r_i <= r_2``.
    """
    mu, L = q.mu, q.L
    lam2 = _lambda2(q)
    w1 = _omega1_sq(q, y0)
    if w1 == 0.0:
        raise PreconditionError("y0 - x* has no component on the mu-eigenspace")
    c = q.coords(y0)
    ratio = (1.0 - lam2 / L) / (1.0 - mu / L)
    return float(c @ c) / w1 * (L - mu) * (L / mu) * ratio ** (2 * k)


# ---------------------------------------------------------------------------
# synthetic upper-estimate sequences
# ---------------------------------------------------------------------------


def mu_cap(mu: float, mu0: float, L: float) -> float:
    """Largest admissible ``C`` for ``mu_k - mu <= C/(k+1)^2``."""
    r = math.sqrt(mu0 / L)
    return mu * (1.0 - r) / (3.0 * r)


def synthetic_mu_sequence(mu, mu0, L, length, C=None) -> list:
    """``mu_0 = mu0`` and ``mu_k = min(mu0, mu + C/(k+1)^2)`` for ``k >= 1``.

    ``C`` defaults to :func:`mu_cap`.  The sequence is non-increasing.
    """
    if not 0 < mu <= mu0 <= L:
        raise ValueError(f"need 0 < mu <= mu0 <= L, got {mu}, {mu0}, {L}")
    if C is None:
        C = mu_cap(mu, mu0, L)
    if C < 0:
        raise ValueError("C must be nonnegative")
    return [float(mu0)] + [min(float(mu0), mu + C / (k + 1) ** 2) for k in range(1, length)]


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _ground_truth(problem: CompositeProblem, need_mu=True):
    if problem.x_star is None or problem.f_star is None:
        raise PreconditionError("x_star and f_star are required")
    if need_mu and problem.mu is None:
        raise PreconditionError("exact strong convexity mu is required")
    return problem.x_star, problem.f_star, problem.mu


def _slack(f_star, rel):
    return rel * (1.0 + abs(f_star))


def _dist2(x, x_star):
    d = x - x_star
    return float(d @ d)


def _gaps(trace: Trace):
    out = []
    for r in trace.records:
        if r.gap is None:
            raise PreconditionError("trace has no gaps (f_star unknown during the run)")
        out.append(r.gap)
    return out


def _need_xs(trace: Trace, n):
    if trace.xs is None or len(trace.xs) < n:
        raise PreconditionError("trace lacks x-iterates; rerun with store_iterates=True")


def _need_model(trace: Trace):
    if not trace.A:
        raise PreconditionError(f"{trace.solver} keeps no estimate-sequence model")


def _error_terms(trace, x_star, mu, upto):
    """``e_i = a_i (mu_i - mu) ||x_i - x*||^2`` for ``i < upto``."""
    return [trace.a[i] * (trace.mus[i] - mu) * _dist2(trace.xs[i], x_star)
            for i in range(upto)]


# ---------------------------------------------------------------------------
# checkers
# ---------------------------------------------------------------------------


def check_prop1(trace: Trace, problem: CompositeProblem, slack=DEFAULT_SLACK) -> Report:
    """``f(y_k) - f* <= (f(x0) - f* + mu/2 ||x0 - x*||^2) (1 - sqrt(mu/L))^k``."""
    x_star, f_star, mu = _ground_truth(problem)
    L = trace.L
    rate = 1.0 - math.sqrt(mu / L)
    c0 = problem.excess(trace.x0) + 0.5 * mu * _dist2(trace.x0, x_star)
    s = _slack(f_star, slack)
    rep = Report()
    for r, gap in zip(trace.records, _gaps(trace)):
        rep.add("prop1", r.k, gap, c0 * rate ** r.k, s)
    return rep


def check_prop2(trace: Trace, problem: CompositeProblem, slack=DEFAULT_SLACK,
                a_rtol=1e-10) -> Report:
    """Gap bound with the upper-estimate error sum, plus the product form of ``A_k``."""
    x_star, f_star, mu = _ground_truth(problem)
    _need_model(trace)
    K = len(trace.records)
    _need_xs(trace, K)
    mus = trace.mus[:K]
    if any(m < mu * (1 - 1e-12) for m in mus):
        raise PreconditionError("sequence is not an upper bound on mu")
    if any(b > a * (1 + 1e-15) for a, b in zip(mus, mus[1:])):
        raise PreconditionError("sequence is not non-increasing")
    L = trace.L
    gaps = _gaps(trace)
    d0 = _dist2(trace.x0, x_star)
    head = problem.excess(trace.x0) + 0.5 * trace.a[0] * mu * d0
    errs = _error_terms(trace, x_star, mu, K)
    s = _slack(f_star, slack)
    rep = Report()
    acc = 0.0
    prod = 1.0
    for k in range(K):
        acc += errs[k]
        A = trace.A[k]
        rep.add("prop2", k, gaps[k], head / A + 0.5 * acc / A, s)
        if k > 0:
            prod /= 1.0 - math.sqrt(min(mus[k] / L, 1 - 1e-9))
        rep.add("prop2.A_product", k, abs(A - prod) / prod, a_rtol, 0.0)
    return rep


def check_prop4(trace: Trace, problem: CompositeProblem, slack=DEFAULT_SLACK) -> Report:
    """``f(y_k) - f* <= 5 C0 / (2 A_k)`` and ``A_k >= (1 - sqrt(mu/L))^-k``.

    Refuses (``PreconditionError``) unless the used sequence satisfies
    ``0 <= mu_k - mu <= C/(k+1)^2`` for ``k >= 1`` with ``C`` at or below the
    admissible cap.
    """
    x_star, f_star, mu = _ground_truth(problem)
    _need_model(trace)
    K = len(trace.records)
    L = trace.L
    mus = trace.mus[:K]
    mu0 = mus[0]
    if not mu <= mu0 <= L:
        raise PreconditionError("need mu <= mu0 <= L")
    cap = mu_cap(mu, mu0, L)
    used = max([(m - mu) * (k + 1) ** 2 for k, m in enumerate(mus) if k >= 1], default=0.0)
    if any(m < mu * (1 - 1e-12) for m in mus[1:]):
        raise PreconditionError("sequence drops below mu")
    if any(b > a * (1 + 1e-15) for a, b in zip(mus, mus[1:])):
        raise PreconditionError("sequence is not non-increasing")
    if used > cap * (1 + 1e-9) + 1e-300:
        raise PreconditionError(
            f"sequence constant C={used:.6g} exceeds the admissible cap {cap:.6g}")
    d0 = _dist2(trace.x0, x_star)
    gap0 = problem.excess(trace.x0)
    C0 = max((mu0 - mu) * d0, 2.0 * gap0 + mu * d0)
    rate = 1.0 - math.sqrt(mu / L)
    s = _slack(f_star, slack)
    rep = Report()
    for k, gap in enumerate(_gaps(trace)):
        A = trace.A[k]
        rep.add("prop4.gap", k, gap, 2.5 * C0 / A, s)
        # A_k (1 - sqrt(mu/L))^k >= 1, written as lhs <= rhs
        rep.add("prop4.A_growth", k, 1.0, A * rate ** k, 1e-12)
    return rep


def check_p1(trace: Trace, problem: CompositeProblem, slack=1e-8) -> Report:
    """``m_k(x*) <= A_k f* + sum_{i=1..k} a_i/2 (mu_i - mu) ||x_i - x*||^2``."""
    x_star, f_star, mu = _ground_truth(problem)
    _need_model(trace)
    K = len(trace.records)
    if trace.m_at_xstar[0] is None:
        raise PreconditionError("model was not tracked at x*")
    exact = all(m == mu for m in trace.mus[1:K])
    if not exact:
        _need_xs(trace, K)
    s = _slack(f_star, slack)
    rep = Report()
    acc = 0.0
    for k in range(K):
        if k >= 1 and not exact:
            acc += 0.5 * trace.a[k] * (trace.mus[k] - mu) * _dist2(trace.xs[k], x_star)
        rep.add("P1", k, trace.m_at_xstar[k], acc, s)
    return rep


def check_p2(trace: Trace, problem: CompositeProblem, slack=1e-8) -> Report:
    """``A_k f(y_k) <= f(x0) - f* + min phi_k`` (both sides shifted by ``A_k f*``)."""
    if problem.f_star is None:
        raise PreconditionError("f_star is required")
    _need_model(trace)
    f_star = problem.f_star
    gap0 = problem.excess(trace.x0)
    s = _slack(f_star, slack)
    rep = Report()
    for k, gap in enumerate(_gaps(trace)):
        rep.add("P2", k, trace.A[k] * gap, gap0 + trace.phi_star[k], s)
    return rep


def check_lemma4(trace: Trace, rtol=1e-12) -> Report:
    """``a_{k+1}/A_k = sqrt(k_{k+1})/(1 - sqrt(k_{k+1})) <= C1`` (no slack)."""
    _need_model(trace)
    L = trace.L
    r0 = math.sqrt(trace.mus[0] / L)
    C1 = r0 / (1.0 - r0)
    rep = Report()
    for k in range(len(trace.A) - 1):
        s = math.sqrt(min(trace.mus[k + 1] / L, 1 - 1e-9))
        formula = s / (1.0 - s)
        ratio = trace.a[k + 1] / trace.A[k]
        rep.add("lemma4.ratio_identity", k, abs(ratio - formula) / formula, rtol, 0.0)
        rep.add("lemma4.bound", k, formula, C1, 0.0)
    return rep


def check_lemma5(trace: Trace, problem: CompositeProblem, slack=DEFAULT_SLACK) -> Report:
    """Distance bound on the extrapolated sequence ``x_{k+1}``."""
    x_star, f_star, mu = _ground_truth(problem)
    _need_model(trace)
    n = len(trace.A)
    _need_xs(trace, n)
    d0 = _dist2(trace.x0, x_star)
    head = 2.0 * problem.excess(trace.x0) + 0.5 * trace.a[0] * mu * d0
    errs = _error_terms(trace, x_star, mu, n)
    s = _slack(f_star, slack)
    rep = Report()
    acc = 0.0
    for k in range(n - 1):
        acc += errs[k]
        A = trace.A[k]
        rep.add("lemma5", k, _dist2(trace.xs[k + 1], x_star),
                head / (A * mu) + acc / (A * mu), s)
    return rep


def check_lemma6(trace: Trace, problem: CompositeProblem, slack=DEFAULT_SLACK) -> Report:
    """``a_k (mu_k - mu) ||x_k - x*||^2 <= C0/(k+1)^2``."""
    x_star, f_star, mu = _ground_truth(problem)
    _need_model(trace)
    n = len(trace.A)
    _need_xs(trace, n)
    d0 = _dist2(trace.x0, x_star)
    a0, mu0 = trace.a[0], trace.mus[0]
    C0 = max(a0 * (mu0 - mu) * d0, 2.0 * problem.excess(trace.x0) + a0 * mu * d0)
    s = _slack(f_star, slack)
    rep = Report()
    for k, e in enumerate(_error_terms(trace, x_star, mu, n)):
        rep.add("lemma6", k, e, C0 / (k + 1) ** 2, s)
    return rep


def check_equivalence(t1: Trace, t2: Trace, rtol=1e-8) -> Report:
    """Relative deviation between the ``y_k`` of two runs."""
    if t1.ys is None or t2.ys is None:
        raise PreconditionError("both traces need stored iterates")
    rep = Report()
    for k, (a, b) in enumerate(zip(t1.ys, t2.ys)):
        scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
        rep.add("equivalence", k, np.linalg.norm(a - b) / scale, rtol, 0.0)
    return rep


def check_gd_estimator(q: SpectralQuadratic, y0, iters=200, slack=1e-10) -> Report:
    """Estimator on fixed-step gradient descent versus its geometric bound.

    Rows ``gd_estimator.bound`` use :func:`gd_estimator_bound_rhs`; the envelope rows
    check ``mu - slack <= hat_mu <= L + slack``; ``gd_estimator.envelope_lmax`` uses
    :func:`gd_estimator_envelope`.
    """
    if q.basis is not None:
        raise PreconditionError("the bound is checked with the identity basis only")
    problem = q.problem()
    trace = pgd(problem, y0, SolverConfig(max_iters=iters, store_iterates=True))
    mu, L = q.mu, q.L
    rep = Report()
    for k, y in enumerate(trace.ys):
        try:
            m = hat_mu(problem, y)
        except Converged:
            rep.skipped.append(("gd_estimator", f"converged at k={k}"))
            break
        rep.add("gd_estimator.bound", k, m - mu, gd_estimator_bound_rhs(q, y0, k),
                slack * (1.0 + mu))
        rep.add("gd_estimator.envelope_lo", k, mu - m, 0.0, slack)
        rep.add("gd_estimator.envelope_hi", k, m - L, 0.0, slack)
        rep.add("gd_estimator.envelope_lmax", k, m - mu, gd_estimator_envelope(q, y0, k),
                slack * (1.0 + mu))
    return rep


def check_spectral_propagation(trace: Trace, q: SpectralQuadratic, atol=1e-12) -> Report:
    """PGD on an identity-basis quadratic: ``(y_k - x*)_i = (1 - l_i/L)^k (y_0 - x*)_i``."""
    if q.basis is not None:
        raise PreconditionError("identity basis required")
    if trace.ys is None:
        raise PreconditionError("trace lacks stored iterates")
    d0 = trace.x0 - q.x_star
    r = 1.0 - q.eigenvalues / trace.L
    rep = Report()
    for k, y in enumerate(trace.ys):
        err = np.max(np.abs((y - q.x_star) - r ** k * d0))
        rep.add("spectral_propagation", k, err, 0.0, atol * (1.0 + np.max(np.abs(d0))))
    return rep


def corrupt_trace(trace: Trace, factor=10.0) -> Trace:
    """Copy of ``trace`` with every gap (and objective) inflated ``factor`` times."""
    bad = copy.deepcopy(trace)
    for r in bad.records:
        if r.gap is not None:
            r.gap *= factor
            r.f_y = trace.f_star + r.gap
    return bad


def run_all(checks: Iterable[Report]) -> Report:
    rep = Report()
    for c in checks:
        rep.extend(c)
    return rep
