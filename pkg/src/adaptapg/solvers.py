"""Proximal gradient schemes with a shared trace contract.

Every solver takes ``(problem, x0, ..., config)`` and returns a
:class:`Trace`.  Row ``k`` of a trace describes the output iterate ``y_k``:
its objective, primal gap (when ``f_star`` is known), the norm of the reduced
gradient ``g_L(y_k)`` and, for the adaptive schemes, the strong-convexity
estimate computed from ``y_k``.

Solvers
-------
pgd                    proximal gradient descent, ``y <- T_L(y)``
apg_known_mu           constant momentum from a known ``mu``
apg_estimate_sequence  the same iterates through explicit quadratic models
adapt_apg              estimate-sequence scheme with a varying ``mu_k``
adapt_apg_v2           momentum recomputed from the online estimate
fista                  ``t``-sequence momentum, no strong convexity
apg_restart            ``fista`` restarted whenever the gap drops below ``eps``
"""

from __future__ import annotations

import csv
import dataclasses
import io
import math
import time
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .estimators import Converged, MuEstimator, hat_mu_from
from .problems import CompositeProblem, EvaluationError, _as_point, _checked_grad

__all__ = [
    "KnownMu",
    "ExternalSequence",
    "OnlineEstimator",
    "SolverConfig",
    "IterationRecord",
    "Trace",
    "DivergenceError",
    "EstimateSequenceState",
    "es_update",
    "pgd",
    "apg_known_mu",
    "apg_estimate_sequence",
    "adapt_apg",
    "adapt_apg_v2",
    "fista",
    "apg_restart",
    "SOLVERS",
    "CSV_HEADER",
]

KAPPA_MAX = 1.0 - 1e-9
DIVERGENCE_FACTOR = 1e6
CSV_HEADER = ("k", "f", "gap", "mu_hat", "mu_running", "A_k", "gmap_norm",
              "restarted", "wall_ns")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class KnownMu:
    value: float


@dataclasses.dataclass(frozen=True)
class ExternalSequence:
    """Strong-convexity values supplied from outside.

    ``values`` is a sequence (index ``i`` gives ``mu_i``; the last entry is
    repeated past the end) or a callable ``i -> mu_i``.  ``mu_0`` anchors the
    initial model; ``mu_{k+1}`` drives iteration ``k``.
    """

    values: Union[Sequence[float], Callable[[int], float]]

    def __call__(self, i: int) -> float:
        if callable(self.values):
            return float(self.values(i))
        return float(self.values[min(i, len(self.values) - 1)])


@dataclasses.dataclass(frozen=True)
class OnlineEstimator:
    """Running-min estimate from ``f_star``; ``mu0=None`` means ``L/2``."""

    mu0: Optional[float] = None


MuInput = Union[KnownMu, ExternalSequence, OnlineEstimator, None]


@dataclasses.dataclass(frozen=True)
class SolverConfig:
    """Run controls shared by all solvers.

    ``record_every`` only thins CSV output; traces always hold every row.
    ``store_iterates`` keeps the ``x_k``/``y_k`` vectors for the bound
    checkers.
    """

    max_iters: int = 1000
    gap_tol: Optional[float] = None
    gmap_tol: Optional[float] = None
    record_every: int = 1
    mu_input: MuInput = None
    store_iterates: bool = False
    classical_t: bool = False

    def __post_init__(self):
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")
        if self.gap_tol is not None and not self.gap_tol > 0:
            raise ValueError("gap_tol must be positive")
        if self.gmap_tol is not None and not self.gmap_tol > 0:
            raise ValueError("gmap_tol must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class IterationRecord:
    k: int
    f_y: float
    gap: Optional[float]
    mu_hat: Optional[float]
    mu_k: Optional[float]
    A_k: Optional[float]
    norm_gmap: float
    restarted: bool
    wall_ns: int


@dataclasses.dataclass
class Trace:
    """Per-iteration records of one solver run.

    Besides ``records`` a trace carries the scalar model quantities of the
    estimate-sequence solvers (``a``, ``mus``, ``A``, ``phi_star``,
    ``m_at_xstar``; index ``k`` refers to iteration ``k``) and, when iterates
    are stored, ``xs``/``ys``.  ``phi_star`` and ``m_at_xstar`` are offset by
    ``-A_k * f_ref`` where ``f_ref`` is ``f_star`` when known and 0 otherwise.
    """

    solver: str
    x0: np.ndarray
    f_star: Optional[float]
    L: float
    records: list = dataclasses.field(default_factory=list)
    status: str = "running"
    message: str = ""
    y: Optional[np.ndarray] = None
    xs: Optional[list] = None
    ys: Optional[list] = None
    a: list = dataclasses.field(default_factory=list)
    mus: list = dataclasses.field(default_factory=list)
    A: list = dataclasses.field(default_factory=list)
    phi_star: list = dataclasses.field(default_factory=list)
    m_at_xstar: list = dataclasses.field(default_factory=list)
    restarts: list = dataclasses.field(default_factory=list)
    params: dict = dataclasses.field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    @property
    def iterations(self) -> int:
        return self.records[-1].k if self.records else 0

    def gaps(self) -> np.ndarray:
        return np.array([np.nan if r.gap is None else r.gap for r in self.records])

    def objective(self) -> np.ndarray:
        return np.array([r.f_y for r in self.records])

    def iterations_to(self, tol: float) -> Optional[int]:
        """First ``k`` with ``gap <= tol`` (``None`` if never reached)."""
        for r in self.records:
            if r.gap is not None and r.gap <= tol:
                return r.k
        return None

    def csv_rows(self, record_every: int = 1, timing: bool = False):
        last = len(self.records) - 1
        for i, r in enumerate(self.records):
            if r.k % record_every and i != last:
                continue
            yield (
                str(r.k),
                _fmt(r.f_y),
                "" if r.gap is None else _fmt(max(r.gap, 0.0)),
                _fmt(r.mu_hat),
                _fmt(r.mu_k),
                _fmt(r.A_k),
                _fmt(r.norm_gmap),
                "1" if r.restarted else "0",
                str(r.wall_ns) if timing else "",
            )

    def to_csv(self, path_or_buf=None, record_every: int = 1, timing: bool = False):
        """Write the trace in the fixed CSV schema; returns the text if no target."""
        buf = io.StringIO() if path_or_buf is None else None
        own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
        fh = buf if buf is not None else (
            open(path_or_buf, "w", newline="") if own else path_or_buf)
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            w.writerows(self.csv_rows(record_every, timing))
        finally:
            if own:
                fh.close()
        return buf.getvalue() if buf is not None else None


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


class DivergenceError(RuntimeError):
    """Objective became non-finite or blew up; ``trace`` holds the rows so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace

    @property
    def last_record(self):
        return self.trace.records[-1] if self.trace and self.trace.records else None


# ---------------------------------------------------------------------------
# shared machinery
# ---------------------------------------------------------------------------


class _Eval:
    """Everything a solver needs about one output iterate ``y``."""

    __slots__ = ("y", "f", "gap", "f_rel", "t", "gm_sq")

    def __init__(self, problem: CompositeProblem, y: np.ndarray, L: float):
        val, g = _checked_grad(problem, y)
        self.y = y
        psi = problem.penalty(y)
        self.f = val + psi
        self.t = problem.penalty.prox(y - g / L, L)
        gm = L * (y - self.t)
        self.gm_sq = float(gm @ gm)
        if problem.f_star is None:
            self.gap = None
            self.f_rel = self.f
        else:
            self.gap = problem.excess(y) if math.isfinite(self.f) else math.inf
            self.f_rel = self.gap


def _tmap(problem, x, L):
    _, g = _checked_grad(problem, x)
    return problem.penalty.prox(x - g / L, L)


class _Run:
    def __init__(self, name, problem: CompositeProblem, x0, config: SolverConfig, **params):
        self.problem = problem
        self.config = config
        self.L = problem.L
        x0 = _as_point(x0)
        self.trace = Trace(solver=name, x0=x0.copy(), f_star=problem.f_star, L=self.L,
                           params=dict(params))
        if config.store_iterates:
            self.trace.xs = []
            self.trace.ys = []
        self.start = time.perf_counter_ns()
        self.f0 = None
        self.gap0 = None

    def evaluate(self, y) -> _Eval:
        try:
            return _Eval(self.problem, y, self.L)
        except EvaluationError as exc:
            self.trace.status = "diverged"
            raise DivergenceError(str(exc), self.trace) from exc

    def record(self, k, ev: _Eval, *, mu_hat=None, mu_k=None, A_k=None,
               restarted=False) -> bool:
        """Append row ``k``; returns True when the run must stop."""
        rec = IterationRecord(k=k, f_y=ev.f, gap=ev.gap, mu_hat=mu_hat, mu_k=mu_k,
                              A_k=A_k, norm_gmap=math.sqrt(ev.gm_sq),
                              restarted=restarted,
                              wall_ns=time.perf_counter_ns() - self.start)
        tr = self.trace
        tr.records.append(rec)
        tr.y = ev.y
        if tr.ys is not None:
            tr.ys.append(ev.y.copy())
        if not math.isfinite(ev.f):
            tr.status = "diverged"
            raise DivergenceError(f"non-finite objective at k={k}: {ev.f!r}", tr)
        if self.f0 is None:
            self.f0 = ev.f
            self.gap0 = ev.gap
        else:
            scale = self.gap0 if self.gap0 is not None else 1.0 + abs(self.f0)
            if ev.f - self.f0 > DIVERGENCE_FACTOR * max(scale, 1e-300):
                tr.status = "diverged"
                raise DivergenceError(
                    f"objective rose from {self.f0!r} to {ev.f!r} at k={k}", tr)
        cfg = self.config
        if cfg.gap_tol is not None and ev.gap is not None and ev.gap <= cfg.gap_tol:
            tr.status = "gap_tol"
            return True
        if cfg.gmap_tol is not None and math.sqrt(ev.gm_sq) <= cfg.gmap_tol:
            tr.status = "gmap_tol"
            return True
        if k >= cfg.max_iters:
            tr.status = "max_iters"
            return True
        return False

    def converged(self, k, ev, exc: Converged):
        self.record(k, ev)
        self.trace.status = "converged"
        self.trace.message = str(exc)

    def push_x(self, x):
        if self.trace.xs is not None:
            self.trace.xs.append(np.array(x, copy=True))


def _require_f_star(problem, who):
    if problem.f_star is None:
        raise ValueError(f"{who} needs f_star on the problem")


def _kappa(mu, L):
    return min(mu / L, KAPPA_MAX)


# ---------------------------------------------------------------------------
# proximal gradient descent
# ---------------------------------------------------------------------------


def pgd(problem: CompositeProblem, x0, config: SolverConfig = SolverConfig()) -> Trace:
    run = _Run("pgd", problem, x0, config)
    ev = run.evaluate(run.trace.x0)
    for k in range(config.max_iters + 1):
        if run.record(k, ev):
            break
        ev = run.evaluate(ev.t)
    return run.trace


# ---------------------------------------------------------------------------
# two-sequence momentum schemes
# ---------------------------------------------------------------------------


def apg_known_mu(problem: CompositeProblem, x0, mu: Optional[float] = None,
                 config: SolverConfig = SolverConfig()) -> Trace:
    """Constant momentum ``beta = (1 - sqrt(mu/L)) / (1 + sqrt(mu/L))``."""
    mu = problem.mu if mu is None else mu
    if mu is None or not 0 < mu <= problem.L:
        raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={problem.L}")
    L = problem.L
    s = math.sqrt(_kappa(mu, L))
    beta = (1.0 - s) / (1.0 + s)
    run = _Run("apg_known_mu", problem, x0, config, mu=mu)
    y_prev = y = run.trace.x0
    ev = run.evaluate(y)
    run.push_x(y)
    for k in range(config.max_iters + 1):
        if run.record(k, ev):
            break
        x = y + beta * (y - y_prev)
        run.push_x(x)
        y_prev, y = y, _tmap(problem, x, L)
        ev = run.evaluate(y)
    return run.trace


def _t_next(t, classical):
    return (1.0 + math.sqrt(1.0 + (4.0 * t * t if classical else t * t))) / 2.0


def fista(problem: CompositeProblem, x0, config: SolverConfig = SolverConfig()) -> Trace:
    """Momentum ``beta_k = (t_k - 1) / t_{k+1}`` with ``t_0 = 1``.

    By default ``t_{k+1} = (1 + sqrt(1 + t_k^2)) / 2``; ``config.classical_t``
    switches to the ``1 + 4 t_k^2`` form.
    """
    L = problem.L
    run = _Run("fista", problem, x0, config, classical_t=config.classical_t)
    y_prev = y = run.trace.x0
    t = 1.0
    ev = run.evaluate(y)
    run.push_x(y)
    for k in range(config.max_iters + 1):
        if run.record(k, ev):
            break
        t_new = _t_next(t, config.classical_t)
        beta = (t - 1.0) / t_new
        x = y + beta * (y - y_prev)
        run.push_x(x)
        y_prev, y = y, _tmap(problem, x, L)
        t = t_new
        ev = run.evaluate(y)
    return run.trace


def apg_restart(problem: CompositeProblem, x0, gamma: float,
                config: SolverConfig = SolverConfig()) -> Trace:
    """``fista`` restarted from ``y_{k+1}`` whenever ``f(y_{k+1}) - f* <= eps``.

    ``eps`` starts at ``f(y_0) - f*`` and shrinks by ``exp(-gamma)`` at each
    restart.  ``trace.restarts`` lists ``(k, eps_at_trigger, gap)`` where
    ``k`` indexes the iterate that triggered.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    _require_f_star(problem, "apg_restart")
    L = problem.L
    decay = math.exp(-gamma)
    run = _Run("apg_restart", problem, x0, config, gamma=gamma,
               classical_t=config.classical_t)
    y_prev = y = run.trace.x0
    t = 1.0
    ev = run.evaluate(y)
    eps = ev.gap
    restarted = False
    run.push_x(y)
    for k in range(config.max_iters + 1):
        if run.record(k, ev, restarted=restarted):
            break
        t_new = _t_next(t, config.classical_t)
        beta = (t - 1.0) / t_new
        x = y + beta * (y - y_prev)
        y_new = _tmap(problem, x, L)
        ev = run.evaluate(y_new)
        restarted = ev.gap <= eps
        if restarted:
            run.trace.restarts.append((k + 1, eps, ev.gap))
            t_new = 1.0
            x = y_new
            y = y_new
            eps = decay * eps
        run.push_x(x)
        y_prev, y = y, y_new
        t = t_new
    return run.trace


def adapt_apg_v2(problem: CompositeProblem, x0, f_star: Optional[float] = None,
                 config: SolverConfig = SolverConfig()) -> Trace:
    """Momentum recomputed each step from the running-min estimate.

    ``mu_k = min_{i<=k} hat_mu(y_i)``; the estimate is uncapped unless
    ``config.mu_input`` is an :class:`OnlineEstimator` with explicit ``mu0``.
    """
    if f_star is not None:
        problem = problem.with_reference(f_star)
    _require_f_star(problem, "adapt_apg_v2")
    L = problem.L
    f_star = problem.f_star
    mu0 = config.mu_input.mu0 if isinstance(config.mu_input, OnlineEstimator) else None
    est = MuEstimator(mu0)
    run = _Run("adapt_apg_v2", problem, x0, config, mu0=mu0)
    y_prev = y = run.trace.x0
    ev = run.evaluate(y)
    run.push_x(y)
    for k in range(config.max_iters + 1):
        try:
            raw = hat_mu_from(ev.gm_sq, ev.gap, f_star)
        except Converged as exc:
            run.converged(k, ev, exc)
            break
        mu_k = est.update(raw, k)
        if run.record(k, ev, mu_hat=raw, mu_k=mu_k):
            break
        s = math.sqrt(_kappa(mu_k, L))
        beta = (1.0 - s) / (1.0 + s)
        x = y + beta * (y - y_prev)
        run.push_x(x)
        y_prev, y = y, _tmap(problem, x, L)
        ev = run.evaluate(y)
    return run.trace


# ---------------------------------------------------------------------------
# estimate-sequence schemes
# ---------------------------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class EstimateSequenceState:
    """Canonical form of ``phi_k = m_k + (a_0 mu_0 / 2) ||. - x_0||^2``.

    ``phi_k(x) = phi_star + (S/2) ||x - v||^2``.  ``phi_star`` and
    ``m_at_xstar`` are stored minus ``A * f_ref`` so that they stay O(1) as
    ``A`` grows geometrically.
    """

    A: float
    a_next: float
    S: float
    v: np.ndarray
    phi_star: float = 0.0
    m_at_xstar: Optional[float] = None
    x_star: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, x0, mu0, a0=1.0, x_star=None):
        x0 = _as_point(x0)
        return cls(A=a0, a_next=a0, S=a0 * mu0, v=x0.copy(), phi_star=0.0,
                   m_at_xstar=None if x_star is None else 0.0,
                   x_star=None if x_star is None else _as_point(x_star))


def es_update(state: EstimateSequenceState, a_next: float, mu_next: float,
              x_next, g, model_const: float) -> EstimateSequenceState:
    """Add ``a_next (l(x) + mu_next/2 ||x - x_next||^2)`` to the model.

    ``l(x) = model_const + g^T (x - x_next)``; ``model_const`` is
    ``f(T_L x_next) + ||g||^2 / (2L)`` minus ``f_ref``, matching the offset
    convention of the state.
    """
    if not (a_next > 0 and mu_next > 0):
        raise ValueError("a_next and mu_next must be positive")
    x_next = _as_point(x_next)
    g = _as_point(g)
    am = a_next * mu_next
    S_new = state.S + am
    v_new = (state.S * state.v + am * x_next - a_next * g) / S_new
    dv = v_new - state.v
    dx = v_new - x_next
    phi = (state.phi_star + 0.5 * state.S * float(dv @ dv)
           + a_next * (model_const + float(g @ dx) + 0.5 * mu_next * float(dx @ dx)))
    m_star = state.m_at_xstar
    if state.x_star is not None:
        ds = state.x_star - x_next
        m_star = m_star + a_next * (model_const + float(g @ ds)
                                    + 0.5 * mu_next * float(ds @ ds))
    return EstimateSequenceState(A=state.A + a_next, a_next=a_next, S=S_new, v=v_new,
                                 phi_star=phi, m_at_xstar=m_star, x_star=state.x_star)


def _es_solve(name, problem: CompositeProblem, x0, config: SolverConfig,
              mu0: float, next_mu, estimator: Optional[MuEstimator], **params):
    """Shared loop for the constant and adaptive estimate-sequence schemes.

    ``next_mu(k, mu_prev)`` supplies ``mu_{k+1}`` in external mode; with an
    ``estimator`` the value comes from ``y_k`` instead.
    """
    L = problem.L
    run = _Run(name, problem, x0, config, mu0=mu0, **params)
    tr = run.trace
    x_star = problem.x_star if problem.f_star is not None else None
    state = EstimateSequenceState.initial(tr.x0, mu0, x_star=x_star)
    y = tr.x0
    ev = run.evaluate(y)
    run.push_x(y)
    tr.a.append(1.0)
    tr.mus.append(mu0)
    tr.A.append(state.A)
    tr.phi_star.append(state.phi_star)
    tr.m_at_xstar.append(state.m_at_xstar)
    mu_prev = mu0
    for k in range(config.max_iters + 1):
        raw = None
        if estimator is not None:
            try:
                raw = hat_mu_from(ev.gm_sq, ev.gap, problem.f_star)
            except Converged as exc:
                run.converged(k, ev, exc)
                break
            mu_next = estimator.update(raw, k)
        else:
            mu_next = next_mu(k, mu_prev)
        if run.record(k, ev, mu_hat=raw, mu_k=mu_next, A_k=state.A):
            break
        s = math.sqrt(_kappa(mu_next, L))
        a_next = s / (1.0 - s) * state.A
        tau = a_next / (state.A + a_next)
        x = (tau * state.v + y) / (1.0 + tau)
        t = _tmap(problem, x, L)
        g = L * (x - t)
        ev = run.evaluate(t)
        c = ev.f_rel + float(g @ g) / (2.0 * L)
        state = es_update(state, a_next, mu_next, x, g, c)
        run.push_x(x)
        tr.a.append(a_next)
        tr.mus.append(mu_next)
        tr.A.append(state.A)
        tr.phi_star.append(state.phi_star)
        tr.m_at_xstar.append(state.m_at_xstar)
        y = t
        mu_prev = mu_next
    return tr


def apg_estimate_sequence(problem: CompositeProblem, x0, mu: Optional[float] = None,
                          config: SolverConfig = SolverConfig()) -> Trace:
    """Known-``mu`` scheme written through explicit quadratic lower models."""
    mu = problem.mu if mu is None else mu
    if mu is None or not 0 < mu <= problem.L:
        raise ValueError(f"need 0 < mu <= L, got mu={mu}, L={problem.L}")
    return _es_solve("apg_estimate_sequence", problem, x0, config, mu,
                     lambda k, prev: mu, None, mu=mu)


def adapt_apg(problem: CompositeProblem, x0, config: SolverConfig) -> Trace:
    """Estimate-sequence scheme driven by a sequence of upper estimates of ``mu``.

    ``config.mu_input`` selects the source: an :class:`ExternalSequence`
    (running min enforced) or an :class:`OnlineEstimator` (needs ``f_star``;
    ``mu0`` defaults to ``L/2``).  At iteration ``k`` the value ``mu_{k+1}``
    sets ``kappa_k = mu_{k+1} / L``; the online estimate of ``mu_{k+1}`` comes
    from ``y_k``.
    """
    src = config.mu_input
    L = problem.L
    if isinstance(src, KnownMu):
        src = ExternalSequence([src.value])
    if isinstance(src, ExternalSequence):
        mu0 = src(0)
        if not mu0 > 0:
            raise ValueError("mu sequence must be positive")

        def next_mu(k, prev):
            m = src(k + 1)
            if not m > 0:
                raise ValueError(f"mu sequence must be positive, got mu_{k + 1}={m}")
            return min(prev, m)

        return _es_solve("adapt_apg", problem, x0, config, mu0, next_mu, None,
                         mode="external")
    if isinstance(src, OnlineEstimator):
        _require_f_star(problem, "adapt_apg (online)")
        mu0 = L / 2.0 if src.mu0 is None else src.mu0
        return _es_solve("adapt_apg", problem, x0, config, mu0, None, MuEstimator(mu0),
                         mode="online")
    raise ValueError("adapt_apg needs config.mu_input = ExternalSequence or OnlineEstimator")


SOLVERS = {
    "pgd": pgd,
    "apg_known_mu": apg_known_mu,
    "apg_estimate_sequence": apg_estimate_sequence,
    "adapt_apg": adapt_apg,
    "adapt_apg_v2": adapt_apg_v2,
    "fista": fista,
    "apg_restart": apg_restart,
}
