import numpy as np
import pytest

from adaptapg import L1Penalty, NuclearPenalty, SolverConfig, fista
from adaptapg import data
from adaptapg.problems import content_hash
from adaptapg.verification import finite_diff_grad


def test_rng_is_pcg64():
    assert data.RNG_ALGORITHM == "PCG64"
    assert isinstance(data.rng(0).bit_generator, np.random.PCG64)
    assert data.rng(5).standard_normal() == data.rng(5).standard_normal()


def test_libsvm_single_line(tmp_path):
    f = tmp_path / "a.txt"
    f.write_text("1 1:0.5 3:2\n")
    dm = data.load_libsvm(f)
    np.testing.assert_array_equal(dm.dense, [[0.5, 0.0, 2.0]])
    np.testing.assert_array_equal(dm.labels, [1.0])


def test_libsvm_two_rows(tmp_path):
    f = tmp_path / "b.txt"
    f.write_text("+1 2:1\n-1 1:1\n")
    dm = data.load_libsvm(f)
    assert (dm.m, dm.n) == (2, 2) and dm.is_sparse
    np.testing.assert_array_equal(dm.dense, [[0, 1], [1, 0]])
    np.testing.assert_array_equal(dm.labels, [1, -1])


@pytest.mark.parametrize("text,line", [
    ("1 1:0.5 x:2\n", 1),
    ("1 1:0.5\n1 3:1 2:1\n", 2),
    ("1 0:1\n", 1),
    ("abc 1:1\n", 1),
    ("1 1:nan\n", 1),
])
def test_libsvm_errors_carry_line_numbers(tmp_path, text, line):
    f = tmp_path / "bad.txt"
    f.write_text(text)
    with pytest.raises(data.LibsvmParseError) as info:
        data.load_libsvm(f)
    assert info.value.lineno == line


def test_libsvm_empty_file(tmp_path):
    f = tmp_path / "e.txt"
    f.write_text("\n")
    with pytest.raises(data.LibsvmParseError):
        data.load_libsvm(f)


def test_libsvm_round_trip(tmp_path, gen):
    X = gen.standard_normal((12, 7)) * (gen.uniform(size=(12, 7)) < 0.4)
    y = np.sign(gen.standard_normal(12))
    f = tmp_path / "r.txt"
    data.dump_libsvm(data.DesignMatrix(X, y), f)
    dm = data.load_libsvm(f, n_features=7)
    np.testing.assert_array_equal(dm.dense, X)
    np.testing.assert_array_equal(dm.labels, y)
    assert data.dump_libsvm(dm) == f.read_text()


def test_standardize_columns(gen):
    X = gen.normal(3.0, 5.0, (50, 4))
    Z = data.standardize(X)
    np.testing.assert_allclose(Z.mean(0), 0.0, atol=1e-12)
    np.testing.assert_allclose(Z.std(0), 1.0)


def test_spectral_instance():
    p = data.gen_spectral_instance(1, 1.0, 1.0)
    assert p.mu == p.L == 1.0
    p1 = data.gen_spectral_instance(50, 1.0, 100.0, seed=4)
    p2 = data.gen_spectral_instance(50, 1.0, 100.0, seed=4)
    assert content_hash(p1) == content_hash(p2)
    eigs = p1.smooth.eigenvalues
    assert eigs.min() == 1.0 and eigs.max() == 100.0
    with pytest.raises(ValueError):
        data.gen_spectral_instance(3, 2.0, 1.0)


def test_spectral_instance_invariants(gen):
    p = data.gen_spectral_instance(20, 0.5, 30.0, seed=9, basis="random")
    x = gen.standard_normal(20)
    np.testing.assert_allclose(p.smooth.grad(x), finite_diff_grad(p.smooth.value, x),
                               rtol=1e-5, atol=1e-6)
    y = gen.standard_normal(20)
    fx, gx = p.smooth.value_and_grad(x)
    assert p.smooth.value(y) <= fx + gx @ (y - x) + 0.5 * p.L * (y - x) @ (y - x) + 1e-9


def test_matrix_completion_preset_parameters():
    p = data.preset("matrix-completion")
    assert isinstance(p.penalty, NuclearPenalty) and p.penalty.lam == 0.01
    assert p.dim == 900 and p.L == 2.0
    obs = p.meta["observations"]
    assert len(set(zip(obs.rows.tolist(), obs.cols.tolist()))) == 200
    assert p.f_star is None


def test_matrix_completion_edge_cases():
    with pytest.raises(ValueError):
        data.gen_matrix_completion(d=3, n_obs=10)
    p = data.gen_matrix_completion(d=6, rank=0, n_obs=10)
    assert p.f_star == 0.0 and not p.x_star.any()
    full = data.gen_matrix_completion(d=6, rank=2, n_obs=36, lam=0.5)
    # the closed-form minimiser is a fixed point of the proximal gradient step
    from adaptapg import gradient_map
    np.testing.assert_allclose(gradient_map(full, full.x_star, full.L), full.x_star,
                               atol=1e-10)
    tr = fista(full, np.zeros(36), SolverConfig(max_iters=3000, classical_t=True))
    assert tr.objective().min() == pytest.approx(full.f_star, abs=1e-9)


def test_lasso_generator():
    p = data.gen_lasso(m=60, n=20, sparsity=5, noise_sd=0.0, lam=0.0, seed=1)
    assert p.f_star == 0.0
    np.testing.assert_allclose(p.value(p.x_star), 0.0, atol=1e-20)
    q = data.gen_lasso(seed=2)
    assert isinstance(q.penalty, L1Penalty) and q.f_star is None
    assert content_hash(q) == content_hash(data.gen_lasso(seed=2))
    A = q.smooth.X
    assert q.L == pytest.approx(np.linalg.eigvalsh(A.T @ A).max(), rel=1e-2)
    assert q.L >= np.linalg.eigvalsh(A.T @ A).max() * (1 - 1e-4)
    with pytest.raises(ValueError):
        data.gen_lasso(n=5, sparsity=6)


def test_synthetic_lasso_support_near_twenty_percent():
    p = data.preset("synthetic-lasso")
    tr = fista(p, np.zeros(p.dim), SolverConfig(max_iters=20000, gmap_tol=1e-10,
                                                classical_t=True))
    frac = np.count_nonzero(tr.y) / p.dim
    assert 0.15 <= frac <= 0.25


@pytest.mark.parametrize("name,reg", [("madelon-lasso", 800.0), ("sonar-logit", 0.004),
                                      ("musk-svm", 1.0), ("musk-logit", 100.0),
                                      ("madelon-logit", 1000.0), ("sonar-lasso", 1.0)])
def test_table_presets(name, reg):
    assert data.PRESETS[name]["reg"] == reg


def test_dataset_preset_with_fallback_and_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        data.preset("sonar-svm", data_dir=tmp_path)
    p = data.preset("sonar-svm", data_dir=tmp_path, synthetic_fallback=True)
    assert p.dim == 208 and p.meta["source"] == "synthetic"
    assert p.penalty.lo == 0.0 and p.penalty.hi == 1.0
    # a real file is preferred over the stand-in; labels are mapped to +-1
    g = data.rng(0)
    X = g.standard_normal((20, 5))
    lab = np.where(g.uniform(size=20) < 0.5, 1.0, 2.0)
    data.dump_libsvm(data.DesignMatrix(X, lab), tmp_path / "sonar")
    p = data.preset("sonar-logit", data_dir=tmp_path)
    assert p.meta["source"].endswith("sonar") and p.dim == 5
    assert set(np.unique(p.smooth.y)) == {-1.0, 1.0}


def test_unknown_preset():
    with pytest.raises(KeyError):
        data.preset("nope")
