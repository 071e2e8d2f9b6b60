"""Dataset loading and synthetic instance generators.

All randomness goes through ``numpy.random.Generator(PCG64(seed))``
(algorithm identifier ``"PCG64"``), so instances are reproducible from the
seed alone.
"""

from __future__ import annotations

import dataclasses
import io
import os
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.sparse as sp

from .problems import (
    BoxIndicator,
    CompositeProblem,
    L1Penalty,
    LeastSquares,
    Logistic,
    MaskedSquares,
    NuclearPenalty,
    SVMDual,
    ZeroPenalty,
    prox_nuclear,
)
from .verification import make_spectral

RNG_ALGORITHM = "PCG64"

__all__ = [
    "RNG_ALGORITHM",
    "LibsvmParseError",
    "DesignMatrix",
    "ObservationSet",
    "load_libsvm",
    "dump_libsvm",
    "standardize",
    "rng",
    "gen_spectral_instance",
    "gen_matrix_completion",
    "gen_lasso",
    "lasso_lambda_max",
    "PRESETS",
    "DATASET_SHAPES",
    "preset",
]


def rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


class LibsvmParseError(ValueError):
    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclasses.dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Feature matrix (dense array or CSR) plus one label per row."""

    X: Union[np.ndarray, sp.csr_matrix]
    labels: np.ndarray

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def n(self) -> int:
        return self.X.shape[1]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.X)

    @property
    def dense(self) -> np.ndarray:
        return self.X.toarray() if self.is_sparse else np.asarray(self.X)


@dataclasses.dataclass(frozen=True, eq=False)
class ObservationSet:
    """Observed entries ``Y[rows[i], cols[i]] = values[i]`` of a ``shape`` matrix."""

    shape: tuple
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray


def load_libsvm(path, n_features: Optional[int] = None) -> DesignMatrix:
    """Parse ``label idx:val idx:val ...`` lines (1-based, increasing indices).

    Blank lines and ``#`` comments are ignored.  The column count is the
    largest index seen unless ``n_features`` is given.
    """
    if isinstance(path, io.TextIOBase):
        lines = path.read().splitlines()
    else:
        with open(path) as fh:
            lines = fh.read().splitlines()
    labels, indptr, indices, data = [], [0], [], []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            labels.append(float(tokens[0]))
        except ValueError:
            raise LibsvmParseError(lineno, f"bad label {tokens[0]!r}") from None
        prev = 0
        for tok in tokens[1:]:
            idx, sep, val = tok.partition(":")
            if not sep:
                raise LibsvmParseError(lineno, f"malformed token {tok!r}")
            try:
                j = int(idx)
                v = float(val)
            except ValueError:
                raise LibsvmParseError(lineno, f"malformed token {tok!r}") from None
            if j < 1:
                raise LibsvmParseError(lineno, f"index {j} is not 1-based")
            if j <= prev:
                raise LibsvmParseError(lineno, f"index {j} not increasing")
            if not np.isfinite(v):
                raise LibsvmParseError(lineno, f"non-finite value in {tok!r}")
            prev = j
            indices.append(j - 1)
            data.append(v)
        indptr.append(len(indices))
    if not labels:
        raise LibsvmParseError(0, "empty file")
    n = max(indices, default=-1) + 1
    if n_features is not None:
        if n_features < n:
            raise ValueError(f"n_features={n_features} smaller than max index {n}")
        n = n_features
    X = sp.csr_matrix((np.asarray(data, dtype=float), np.asarray(indices, dtype=np.int64),
                       np.asarray(indptr, dtype=np.int64)), shape=(len(labels), n))
    return DesignMatrix(X, np.asarray(labels, dtype=float))


def dump_libsvm(dm: DesignMatrix, path=None) -> Optional[str]:
    """Inverse of :func:`load_libsvm`; explicit zeros are dropped."""
    X = sp.csr_matrix(dm.X)
    X.eliminate_zeros()
    X.sort_indices()
    out = []
    for i in range(X.shape[0]):
        lo, hi = X.indptr[i], X.indptr[i + 1]
        feats = " ".join(f"{j + 1}:{float(v)!r}" for j, v in zip(X.indices[lo:hi], X.data[lo:hi]))
        lab = repr(float(dm.labels[i]))
        out.append(f"{lab} {feats}".rstrip())
    text = "\n".join(out) + "\n"
    if path is None:
        return text
    with open(path, "w") as fh:
        fh.write(text)
    return None


def standardize(X) -> np.ndarray:
    """Zero-mean, unit-variance columns (constant columns are left centred)."""
    X = X.toarray() if sp.issparse(X) else np.array(X, dtype=float)
    X = X - X.mean(axis=0)
    sd = X.std(axis=0)
    sd[sd == 0] = 1.0
    return X / sd


# ---------------------------------------------------------------------------
# synthetic generators
# ---------------------------------------------------------------------------


def gen_spectral_instance(n, mu, L, seed=0, basis="identity") -> CompositeProblem:
    """Quadratic with spectrum ``{mu, L}`` plus log-uniform interior, ``f* = 0``.

    For ``n = 1`` the single eigenvalue is ``L``.
    """
    if not 0 < mu <= L:
        raise ValueError("need 0 < mu <= L")
    g = rng(seed)
    if n == 1:
        lam = np.array([float(L)])
    else:
        inner = np.exp(g.uniform(np.log(mu), np.log(L), n - 2))
        lam = np.sort(np.concatenate([[mu], inner, [L]]))
    x_star = g.standard_normal(n)
    _, problem = make_spectral(lam, x_star, 0.0, seed=int(g.integers(2**32)), basis=basis)
    return dataclasses.replace(problem, name=f"spectral-n{n}",
                               meta={"mu": mu, "L": L, "seed": seed})


def gen_matrix_completion(d=30, rank=5, n_obs=200, lam=0.01, seed=0) -> CompositeProblem:
    """``sum_{Omega} (X_ij - Y_ij)^2 + lam ||X||_*`` with a rank-``rank`` ``Y``.

    ``Y = U V^T`` with standard normal ``d x rank`` factors; ``Omega`` is drawn
    without replacement.  Ground truth is attached when it has a closed form
    (``rank = 0``, or every entry observed).
    """
    if not 0 <= n_obs <= d * d:
        raise ValueError(f"n_obs={n_obs} must lie in [0, d^2={d * d}]")
    g = rng(seed)
    U = g.standard_normal((d, rank))
    V = g.standard_normal((d, rank))
    Y = U @ V.T
    flat = np.sort(g.choice(d * d, size=n_obs, replace=False))
    rows, cols = np.unravel_index(flat, (d, d))
    obs = ObservationSet((d, d), rows, cols, Y[rows, cols])
    smooth = MaskedSquares((d, d), rows, cols, obs.values)
    penalty = NuclearPenalty(lam, (d, d))
    f_star = x_star = None
    if rank == 0:
        f_star, x_star = 0.0, np.zeros(d * d)
    elif n_obs == d * d:
        # minimiser of ||X - Y||^2 + lam ||X||_* is SVT(Y, lam/2)
        X = prox_nuclear(Y, lam / 2.0)
        x_star = X.ravel()
        f_star = float(np.sum((X - Y) ** 2)) + penalty(x_star)
    return CompositeProblem(smooth, penalty, f_star=f_star, x_star=x_star,
                            name=f"matrix-completion-d{d}-r{rank}",
                            meta={"shape": (d, d), "observations": obs, "lam": lam,
                                  "seed": seed})


def lasso_lambda_max(A, b) -> float:
    """Smallest ``lam`` for which ``x = 0`` solves the LASSO."""
    return float(np.max(np.abs(A.T @ b)))


def gen_lasso(m=100, n=200, sparsity=20, noise_sd=0.1, lam=1.0, seed=0) -> CompositeProblem:
    """``0.5 ||A x - b||^2 + lam ||x||_1`` with Gaussian ``A`` and sparse truth."""
    if not 0 <= sparsity <= n:
        raise ValueError("need 0 <= sparsity <= n")
    g = rng(seed)
    A = g.standard_normal((m, n))
    coef = np.zeros(n)
    support = g.choice(n, size=sparsity, replace=False)
    coef[support] = g.standard_normal(sparsity)
    b = A @ coef + noise_sd * g.standard_normal(m)
    smooth = LeastSquares(A, b)
    f_star = x_star = None
    if lam == 0 and noise_sd == 0 and m >= n and np.linalg.matrix_rank(A) == n:
        f_star, x_star = 0.0, coef
    penalty = L1Penalty(lam) if lam > 0 else ZeroPenalty()
    return CompositeProblem(smooth, penalty, f_star=f_star, x_star=x_star,
                            name=f"lasso-{m}x{n}",
                            meta={"planted": coef, "lam": lam, "seed": seed})


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

# Shapes used by the synthetic stand-ins when the real files are absent.
DATASET_SHAPES = {"musk": (6598, 166), "madelon": (2000, 500), "sonar": (208, 60)}

# loss -> regularisation per dataset
_TABLE = {
    "musk": {"ls": None, "logit": 100.0, "lasso": 100.0, "svm": 1.0},
    "madelon": {"ls": None, "logit": 1000.0, "lasso": 800.0, "svm": 1.0},
    "sonar": {"ls": None, "logit": 0.004, "lasso": 1.0, "svm": 1.0},
}

# fraction of lambda_max giving roughly 20% support on the default instance
SYNTHETIC_LASSO_FRACTION = 0.012

PRESETS = {
    **{f"{ds}-{loss}": {"dataset": ds, "loss": loss, "reg": reg}
       for ds, row in _TABLE.items() for loss, reg in row.items()},
    "matrix-completion": {"generator": "matrix_completion", "d": 30, "rank": 5,
                          "n_obs": 200, "lam": 0.01},
    "synthetic-lasso": {"generator": "lasso", "m": 100, "n": 200, "sparsity": 20,
                        "noise_sd": 0.1, "fraction": SYNTHETIC_LASSO_FRACTION},
    "spectral": {"generator": "spectral", "n": 50, "mu": 1.0, "L": 100.0},
}


def _find_dataset(name, data_dir):
    if data_dir is None:
        data_dir = os.environ.get("ADAPTAPG_DATA")
    if data_dir is None:
        return None
    for cand in (name, f"{name}.libsvm", f"{name}.txt", f"{name}_scale"):
        p = Path(data_dir) / cand
        if p.is_file():
            return p
    return None


def _synthetic_dataset(name, seed) -> DesignMatrix:
    m, n = DATASET_SHAPES[name]
    g = rng([seed, sum(map(ord, name))])
    X = g.standard_normal((m, n))
    w = g.standard_normal(n)
    y = np.sign(X @ w + 0.5 * np.sqrt(n) * g.standard_normal(m))
    y[y == 0] = 1.0
    return DesignMatrix(X, y)


def preset(name, data_dir=None, synthetic_fallback=False, seed=0,
           standardize_features=True) -> CompositeProblem:
    """Configured problem for a named experiment; ``f_star`` is left unset.

    Dataset presets read ``<data_dir>/<dataset>`` (LIBSVM text).  With
    ``synthetic_fallback`` a Gaussian stand-in of the same shape is used when
    the file is missing.
    """
    try:
        spec = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; known: {', '.join(sorted(PRESETS))}") from None
    gen = spec.get("generator")
    if gen == "matrix_completion":
        p = gen_matrix_completion(spec["d"], spec["rank"], spec["n_obs"], spec["lam"], seed)
        return dataclasses.replace(p, name=name)
    if gen == "lasso":
        base = gen_lasso(spec["m"], spec["n"], spec["sparsity"], spec["noise_sd"], 0.0, seed)
        lam = spec["fraction"] * lasso_lambda_max(base.smooth.X, base.smooth.y)
        p = gen_lasso(spec["m"], spec["n"], spec["sparsity"], spec["noise_sd"], lam, seed)
        return dataclasses.replace(p, name=name, meta={**p.meta, "lam": lam})
    if gen == "spectral":
        p = gen_spectral_instance(spec["n"], spec["mu"], spec["L"], seed)
        return dataclasses.replace(p, name=name)

    ds, loss, reg = spec["dataset"], spec["loss"], spec["reg"]
    path = _find_dataset(ds, data_dir)
    if path is not None:
        dm = load_libsvm(path)
        source = str(path)
    elif synthetic_fallback:
        dm = _synthetic_dataset(ds, seed)
        source = "synthetic"
    else:
        raise FileNotFoundError(
            f"dataset {ds!r} not found (data_dir={data_dir!r}); "
            "pass synthetic_fallback=True to use a generated stand-in")
    X = standardize(dm.X) if standardize_features else dm.X
    y = dm.labels
    labels = np.unique(y)
    if loss in ("logit", "svm") and not set(labels) <= {-1.0, 1.0}:
        # map two-class labels onto {-1, +1}
        if labels.size != 2:
            raise ValueError(f"{ds}: expected two classes, got {labels.size}")
        y = np.where(y == labels[1], 1.0, -1.0)
    if loss == "ls":
        smooth, penalty = LeastSquares(X, y), ZeroPenalty()
    elif loss == "logit":
        smooth, penalty = Logistic(X, y, reg), ZeroPenalty()
    elif loss == "lasso":
        smooth, penalty = LeastSquares(X, y), L1Penalty(reg)
    else:
        smooth, penalty = SVMDual(X, y, C=reg), BoxIndicator(0.0, 1.0)
    meta = {"dataset": ds, "loss": loss, "reg": reg, "source": source,
            "standardized": standardize_features, "labels": "as given"}
    return CompositeProblem(smooth, penalty, name=name, meta=meta)
