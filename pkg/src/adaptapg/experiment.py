"""Reference optimal values, experiment runs and verification batteries."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import datetime
import math
from pathlib import Path
from typing import Optional

import numpy as np

from . import data
from .problems import CompositeProblem, _as_point, _checked_grad, content_hash
from .solvers import (
    DivergenceError,
    ExternalSequence,
    OnlineEstimator,
    SolverConfig,
    Trace,
    adapt_apg,
    adapt_apg_v2,
    apg_estimate_sequence,
    apg_known_mu,
    apg_restart,
    fista,
    pgd,
)
from . import verification as V

__all__ = [
    "ReferenceError",
    "ReferenceRecord",
    "compute_reference",
    "ExperimentConfig",
    "ExperimentResult",
    "load_config",
    "run_experiment",
    "SOLVER_NAMES",
    "SUMMARY_THRESHOLDS",
    "verify",
    "BATTERIES",
]

SOLVER_NAMES = ("pgd", "fista", "apg_known_mu", "apg_restart", "adapt_apg", "adapt_apg_v2",
                "apg_estimate_sequence")
DEFAULT_SOLVERS = ("pgd", "fista", "apg_known_mu", "apg_restart", "adapt_apg", "adapt_apg_v2")
SUMMARY_THRESHOLDS = (1e-4, 1e-8, 1e-12)
SUMMARY_HEADER = ("solver", "status", "iterations", "iters_to_1e-4", "iters_to_1e-8",
                  "iters_to_1e-12", "final_gap", "error")


# ---------------------------------------------------------------------------
# reference values
# ---------------------------------------------------------------------------


class ReferenceError(RuntimeError):
    """The reference run hit its iteration cap without a certificate."""


@dataclasses.dataclass(frozen=True)
class ReferenceRecord:
    hash: str
    f_star: float
    cert: float
    solver: str
    iters: int
    timestamp: str

    FIELDS = ("hash", "f_star", "cert", "solver", "iters", "timestamp")

    def to_line(self) -> str:
        return ",".join((self.hash, repr(self.f_star), repr(self.cert), self.solver,
                         str(self.iters), self.timestamp))

    @classmethod
    def from_line(cls, line: str) -> "ReferenceRecord":
        parts = line.strip().split(",")
        if len(parts) != 6:
            raise ValueError(f"malformed reference line: {line!r}")
        h, f, c, s, it, ts = parts
        return cls(h, float(f), float(c), s, int(it), ts)


def _restarted_fista(problem: CompositeProblem, x0, tol, max_iters):
    """Classical FISTA, momentum reset whenever the objective goes up.

    Returns ``(f_min, certificate, iterations)``; the certificate is the
    smallest reduced-gradient norm seen.
    """
    L = problem.L
    y = _as_point(x0).copy()
    x = y.copy()
    t = 1.0
    f_prev = problem.value(y)
    f_min = f_prev
    cert = math.inf
    for k in range(1, max_iters + 1):
        _, g = _checked_grad(problem, x)
        y_new = problem.penalty.prox(x - g / L, L)
        f_new = problem.value(y_new)
        if not math.isfinite(f_new):
            raise ReferenceError(f"non-finite objective at iteration {k}")
        if f_new > f_prev and t > 1.0:
            # discard the step and restart from y without momentum
            t = 1.0
            x = y
            continue
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        x = y_new + ((t - 1.0) / t_new) * (y_new - y)
        y, t, f_prev = y_new, t_new, f_new
        f_min = min(f_min, f_new)
        _, gy = _checked_grad(problem, y)
        gm = L * (y - problem.penalty.prox(y - gy / L, L))
        cert = min(cert, float(np.linalg.norm(gm)))
        if cert <= tol:
            return f_min, cert, k
    raise ReferenceError(
        f"no certificate after {max_iters} iterations (best ||g_L|| = {cert:.3e}, tol {tol:.1e})")


def _solve_reference(problem: CompositeProblem, x0, tol, max_iters):
    """Run the reference solver; returns ``(f_star, cert, solver, iters)``."""
    if problem.mu is not None:
        bare = dataclasses.replace(problem, f_star=None, x_star=None)
        tr = apg_known_mu(bare, x0, problem.mu, SolverConfig(max_iters=max_iters, gmap_tol=tol))
        if tr.status != "gmap_tol":
            best = min(r.norm_gmap for r in tr.records)
            raise ReferenceError(
                f"no certificate after {max_iters} iterations (best ||g_L|| = {best:.3e})")
        return (float(tr.objective().min()), tr.records[-1].norm_gmap, "apg_known_mu",
                tr.iterations)
    f, cert, iters = _restarted_fista(problem, x0, tol, max_iters)
    return f, cert, "fista_restarted", iters


def compute_reference(problem: CompositeProblem, tol: float = 1e-8,
                      cache_dir=None, max_iters: int = 10**6, x0=None) -> ReferenceRecord:
    """Numerical ``f*`` certified by ``||g_L(y)|| <= tol``.

    With ``cache_dir`` the record is stored in ``<cache_dir>/<hash>`` and a
    later call for the same problem reads it back without iterating (as long
    as the stored certificate meets ``tol``).
    """
    if not tol > 0:
        raise ValueError("reference tolerance must be positive")
    h = content_hash(problem)
    path = None
    if cache_dir is not None:
        path = Path(cache_dir) / h
        if path.is_file():
            rec = ReferenceRecord.from_line(path.read_text())
            if rec.hash == h and rec.cert <= tol:
                return rec
    x0 = np.zeros(problem.dim) if x0 is None else _as_point(x0)
    f, cert, solver, iters = _solve_reference(problem, x0, tol, max_iters)
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")
    rec = ReferenceRecord(h, f, cert, solver, int(iters), stamp)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(rec.to_line() + "\n")
    return rec


# ---------------------------------------------------------------------------
# experiment configuration
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class ExperimentConfig:
    """Flat experiment description.

    Config-file keys (``key = value``, ``#`` comments; lists comma separated):
    ``preset``, ``solvers``, ``gammas``, ``mu``, ``max_iters``, ``gap_tol``,
    ``out_dir``, ``seed``, ``ref_tol``, ``data_dir``, ``synthetic_fallback``,
    ``record_every``, ``timing``.
    """

    preset: str = "spectral"
    solvers: tuple = DEFAULT_SOLVERS
    gammas: tuple = (1.0,)
    mu: Optional[float] = None
    max_iters: int = 1000
    gap_tol: Optional[float] = None
    out_dir: str = "out"
    seed: int = 0
    ref_tol: float = 1e-8
    data_dir: Optional[str] = None
    synthetic_fallback: bool = False
    record_every: int = 1
    timing: bool = False

    def __post_init__(self):
        self.solvers = tuple(self.solvers)
        self.gammas = tuple(float(g) for g in self.gammas)
        if not self.solvers:
            raise ValueError("at least one solver is required")
        unknown = [s for s in self.solvers if s not in SOLVER_NAMES]
        if unknown:
            raise ValueError(f"unknown solver(s) {unknown}; known: {', '.join(SOLVER_NAMES)}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.gap_tol is not None and not self.gap_tol > 0:
            raise ValueError("gap_tol must be positive")
        if not self.ref_tol > 0:
            raise ValueError("ref_tol must be positive")
        if any(not g > 0 for g in self.gammas):
            raise ValueError("gammas must be positive")

    def replace(self, **overrides) -> "ExperimentConfig":
        return dataclasses.replace(self, **{k: v for k, v in overrides.items()
                                            if v is not None})


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_list(s: str) -> tuple:
    return tuple(p.strip() for p in s.split(",") if p.strip())


def _optional(conv):
    def parse(s):
        return None if s.strip().lower() in ("", "none") else conv(s)
    return parse


_KEY_TYPES = {
    "preset": str,
    "solvers": _parse_list,
    "gammas": lambda s: tuple(float(g) for g in _parse_list(s)),
    "mu": _optional(float),
    "max_iters": int,
    "gap_tol": _optional(float),
    "out_dir": str,
    "seed": int,
    "ref_tol": float,
    "data_dir": _optional(str),
    "synthetic_fallback": _parse_bool,
    "record_every": int,
    "timing": _parse_bool,
}


def parse_config_text(text: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    parser.optionxform = str
    parser.read_string("[experiment]\n" + text)
    out = {}
    for key, raw in parser["experiment"].items():
        if key not in _KEY_TYPES:
            raise ValueError(f"unknown config key {key!r}; known: {', '.join(_KEY_TYPES)}")
        try:
            out[key] = _KEY_TYPES[key](raw)
        except ValueError as exc:
            raise ValueError(f"bad value for {key!r}: {exc}") from None
    return out


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read a flat ``key = value`` file; non-``None`` overrides win."""
    values = parse_config_text(Path(path).read_text()) if path is not None else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**values)


# ---------------------------------------------------------------------------
# experiment runs
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class ExperimentResult:
    problem: CompositeProblem
    reference: Optional[ReferenceRecord]
    files: dict
    summary: list
    traces: dict


def _fmt_gamma(g: float) -> str:
    return repr(float(g))


def _jobs(cfg: ExperimentConfig):
    for name in cfg.solvers:
        if name == "apg_restart":
            for g in cfg.gammas:
                yield f"apg_restart_gamma{_fmt_gamma(g)}", name, g
        else:
            yield name, name, None


def _run_one(name, gamma, problem, x0, cfg: ExperimentConfig, solver_cfg: SolverConfig):
    mu = cfg.mu if cfg.mu is not None else problem.mu
    if name == "pgd":
        return pgd(problem, x0, solver_cfg)
    if name == "fista":
        return fista(problem, x0, solver_cfg)
    if name == "apg_known_mu":
        if mu is None:
            raise ValueError("apg_known_mu needs mu (config key 'mu')")
        return apg_known_mu(problem, x0, mu, solver_cfg)
    if name == "apg_estimate_sequence":
        if mu is None:
            raise ValueError("apg_estimate_sequence needs mu (config key 'mu')")
        return apg_estimate_sequence(problem, x0, mu, solver_cfg)
    if name == "apg_restart":
        return apg_restart(problem, x0, gamma, solver_cfg)
    if name == "adapt_apg":
        return adapt_apg(problem, x0,
                         dataclasses.replace(solver_cfg, mu_input=OnlineEstimator()))
    if name == "adapt_apg_v2":
        return adapt_apg_v2(problem, x0, config=solver_cfg)
    raise ValueError(f"unknown solver {name!r}")


def _summary_row(label, trace: Optional[Trace], error: str):
    if trace is None or not trace.records:
        return (label, "error", "", "", "", "", "", error)
    hits = [trace.iterations_to(t) for t in SUMMARY_THRESHOLDS]
    last = trace.records[-1].gap
    return (label, trace.status, str(trace.iterations),
            *("" if h is None else str(h) for h in hits),
            "" if last is None else repr(max(float(last), 0.0)), error)


def build_problem(cfg: ExperimentConfig) -> CompositeProblem:
    return data.preset(cfg.preset, data_dir=cfg.data_dir,
                       synthetic_fallback=cfg.synthetic_fallback, seed=cfg.seed)


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Run every configured solver from ``x0 = 0`` and write CSV traces.

    Output in ``cfg.out_dir``: one ``<solver>.csv`` per run (restart runs are
    suffixed with their ``gamma``), ``summary.csv`` with iterations to the
    gap thresholds, and the reference cache under ``refs/``.  A diverging or
    failing solver is recorded in the summary and the others still run.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    problem = build_problem(cfg)
    ref = None
    if problem.f_star is None:
        ref = compute_reference(problem, cfg.ref_tol, cache_dir=out / "refs")
        problem = problem.with_reference(ref.f_star)
    x0 = np.zeros(problem.dim)
    solver_cfg = SolverConfig(max_iters=cfg.max_iters, gap_tol=cfg.gap_tol,
                              record_every=cfg.record_every)
    files, summary, traces = {}, [], {}
    for label, name, gamma in _jobs(cfg):
        trace, error = None, ""
        try:
            trace = _run_one(name, gamma, problem, x0, cfg, solver_cfg)
        except DivergenceError as exc:
            trace, error = exc.trace, str(exc)
        except (ValueError, ArithmeticError) as exc:
            error = str(exc)
        if trace is not None:
            path = out / f"{label}.csv"
            trace.to_csv(path, record_every=cfg.record_every, timing=cfg.timing)
            files[label] = path
            traces[label] = trace
        summary.append(_summary_row(label, trace, error))
    spath = out / "summary.csv"
    with open(spath, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_HEADER)
        w.writerows(summary)
    files["summary"] = spath
    return ExperimentResult(problem, ref, files, summary, traces)


# ---------------------------------------------------------------------------
# verification batteries
# ---------------------------------------------------------------------------


def _attempt(report: V.Report, name: str, fn):
    try:
        report.extend(fn())
    except V.PreconditionError as exc:
        report.skipped.append((name, str(exc)))


def spectral_battery(seed: int = 0, n: int = 50, mu: float = 1.0, L: float = 100.0,
                     iters: int = 500, gd_instances: int = 30) -> V.Report:
    """Every bound checker on exact spectral quadratics."""
    g = data.rng(seed)
    problem = data.gen_spectral_instance(n, mu, L, seed=seed)
    x0 = problem.x_star + g.standard_normal(n)
    store = SolverConfig(max_iters=iters, store_iterates=True)
    rep = V.Report()

    t_apg = apg_known_mu(problem, x0, mu, store)
    t_es = apg_estimate_sequence(problem, x0, mu, store)
    _attempt(rep, "prop1", lambda: V.check_prop1(t_apg, problem))
    _attempt(rep, "equivalence", lambda: V.check_equivalence(t_apg, t_es))
    _attempt(rep, "P1", lambda: V.check_p1(t_es, problem))
    _attempt(rep, "P2", lambda: V.check_p2(t_es, problem))
    _attempt(rep, "prop2", lambda: V.check_prop2(t_es, problem))

    seq = V.synthetic_mu_sequence(mu, L / 2.0, L, iters + 2)
    t_syn = adapt_apg(problem, x0, dataclasses.replace(
        store, max_iters=min(iters, 300), mu_input=ExternalSequence(seq)))
    for name, fn in (("prop2", V.check_prop2), ("prop4", V.check_prop4),
                     ("lemma5", V.check_lemma5), ("lemma6", V.check_lemma6),
                     ("P1", V.check_p1), ("P2", V.check_p2)):
        _attempt(rep, name, lambda fn=fn: fn(t_syn, problem))
    _attempt(rep, "lemma4", lambda: V.check_lemma4(t_syn))

    t_online = adapt_apg(problem, x0, dataclasses.replace(store, mu_input=OnlineEstimator()))
    _attempt(rep, "lemma4", lambda: V.check_lemma4(t_online))
    _attempt(rep, "P2", lambda: V.check_p2(t_online, problem))

    for i in range(gd_instances):
        q, y0 = gd_estimator_instance(seed, i)
        _attempt(rep, "gd_estimator", lambda q=q, y0=y0: V.check_gd_estimator(q, y0, iters=200))

    q = V.make_spectral(np.sort(np.exp(g.uniform(0.0, np.log(L), n))), seed=seed)[0]
    t_pgd = pgd(q.problem(), q.x_star + g.standard_normal(n),
                SolverConfig(max_iters=200, store_iterates=True))
    _attempt(rep, "spectral_propagation", lambda: V.check_spectral_propagation(t_pgd, q))

    detected = not V.check_prop1(V.corrupt_trace(t_apg), problem).ok
    rep.add("self_test.corrupted_trace_detected", 0, 0.0 if detected else 1.0, 0.0, 0.0)
    return rep


def gd_estimator_instance(seed: int, index: int, n: int = 20):
    """Random identity-basis quadratic with ``lambda_2 > mu`` and ``omega_1 != 0``."""
    g = data.rng([seed, index, 3])
    mu = float(np.exp(g.uniform(np.log(0.01), np.log(1.0))))
    L = float(np.exp(g.uniform(np.log(10.0), np.log(1000.0))))
    inner = np.exp(g.uniform(np.log(mu), np.log(L), n - 2))
    lam = np.sort(np.concatenate([[mu], inner, [L]]))
    lam[1] = max(lam[1], mu * 1.01)
    lam.sort()
    q, _ = V.make_spectral(lam, g.standard_normal(n), 0.0)
    return q, q.x_star + g.standard_normal(n)


def composite_battery(preset: str = "synthetic-lasso", seed: int = 0, iters: int = 2000,
                      ref_tol: float = 1e-8, data_dir=None, synthetic_fallback=False,
                      cache_dir=None) -> V.Report:
    """Checks that need only ``f*``; everything requiring ``x*`` or ``mu`` is skipped."""
    problem = data.preset(preset, data_dir=data_dir, synthetic_fallback=synthetic_fallback,
                          seed=seed)
    if problem.f_star is None:
        ref = compute_reference(problem, ref_tol, cache_dir=cache_dir)
        problem = problem.with_reference(ref.f_star)
    x0 = np.zeros(problem.dim)
    cfg = SolverConfig(max_iters=iters, store_iterates=True, mu_input=OnlineEstimator())
    rep = V.Report()
    t_online = adapt_apg(problem, x0, cfg)
    _attempt(rep, "lemma4", lambda: V.check_lemma4(t_online))
    _attempt(rep, "P2", lambda: V.check_p2(t_online, problem))
    for name, fn in (("prop1", V.check_prop1), ("prop2", V.check_prop2),
                     ("prop4", V.check_prop4), ("P1", V.check_p1),
                     ("lemma5", V.check_lemma5), ("lemma6", V.check_lemma6)):
        _attempt(rep, name, lambda fn=fn: fn(t_online, problem))
    # running estimates must be positive and non-increasing
    prev = math.inf
    for r in t_online.records:
        if r.mu_k is not None:
            rep.add("estimator.monotone", r.k, r.mu_k, prev, 0.0)
            rep.add("estimator.positive", r.k, -r.mu_k, 0.0, 0.0)
            prev = r.mu_k
    return rep


BATTERIES = {"spectral": spectral_battery, "composite": composite_battery}


def verify(battery: str = "spectral", **kwargs) -> V.Report:
    try:
        fn = BATTERIES[battery]
    except KeyError:
        raise ValueError(f"unknown battery {battery!r}; known: {', '.join(BATTERIES)}") from None
    return fn(**kwargs)
