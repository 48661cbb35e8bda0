import numpy as np

from bcf3l.core_data import RngSpec, make_rng
from bcf3l import simgen


def softmax_rows(s):
    e = np.exp(s - s.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def test_covariate_moments():
    rng = make_rng(RngSpec(101))
    X = simgen.gen_covariates(100_000, rng)
    sds = X[:, :3].std(axis=0, ddof=1)
    assert (np.abs(sds / np.array([1.0, 2.0, 3.0]) - 1.0) < 0.02).all()
    assert abs(X[:, 3].mean() - 0.7) < 0.01
    assert abs(X[:, 4].mean() - 0.5) < 0.01
    assert set(np.unique(X[:, 3])) <= {0.0, 1.0}


def test_covariates_minimal_and_deterministic():
    assert simgen.gen_covariates(1, make_rng(RngSpec(102))).shape == (1, 5)
    a = simgen.gen_covariates(50, make_rng(RngSpec(103)))
    b = simgen.gen_covariates(50, make_rng(RngSpec(103)))
    np.testing.assert_array_equal(a, b)


def test_treatment_scores_formula():
    X = np.array([[1.0, 2.0, 3.0, 1.0, 0.0]])
    s = simgen.treatment_scores(X)
    np.testing.assert_allclose(s, [[3.0, 0.8 - 1.0, 1.0 - 0.3 + 1.0]])


def test_symmetric_scores_give_uniform_levels():
    # x chosen so all three scores are equal (0.7 each)
    row = np.array([-0.3, 1.0, 3.0, 0.0, 0.0])
    s = simgen.treatment_scores(row[None, :])
    assert np.ptp(s) < 1e-12
    X = np.tile(row, (100_000, 1))
    T = simgen.assign_treatment_s12(X, make_rng(RngSpec(104)))
    freq = np.bincount(T, minlength=3) / X.shape[0]
    assert np.abs(freq - 1 / 3).max() < 0.01


def test_treatment_frequencies_match_softmax_probabilities():
    rng = make_rng(RngSpec(105))
    X = simgen.gen_covariates(100_000, rng)
    T = simgen.assign_treatment_s12(X, rng)
    P = softmax_rows(simgen.treatment_scores(X))
    freq = np.bincount(T, minlength=3) / X.shape[0]
    assert np.abs(freq - P.mean(axis=0)).max() < 0.01


def test_scenario1_formulas_and_reconstruction():
    rng = make_rng(RngSpec(106))
    data = simgen.gen_scenario1(400, 0.0, rng)
    x1, x2, x3, x4, x5 = data.X.T
    np.testing.assert_allclose(data.true_tau01, 0.2 * x4, atol=1e-12)
    np.testing.assert_allclose(
        data.true_tau12, 1.0 + 0.2 * x2 * x5 + 0.7 * x1 * x4, atol=1e-12
    )
    np.testing.assert_allclose(
        data.true_mu,
        2.0 - np.exp(x1 / 3.0) + 1.5 * x4 * x5 - 2.0 * (1 - x4) * (1 - x5),
        atol=1e-12,
    )
    recon = (
        data.true_mu
        + data.true_tau01 * (data.T > 0)
        + data.true_tau12 * (data.T > 1)
    )
    np.testing.assert_allclose(data.Y, recon, atol=1e-12)
    assert (data.true_tau01[x4 == 1] == 0.2).all()
    both_zero = (x2 * x5 == 0) & (x1 * x4 == 0)
    assert np.allclose(data.true_tau12[both_zero], 1.0)


def test_scenario2_formulas():
    rng = make_rng(RngSpec(107))
    data = simgen.gen_scenario2(400, 0.0, rng)
    x1, x2, x3, x4, x5 = data.X.T
    np.testing.assert_allclose(data.true_tau01, 0.1 * x2, atol=1e-12)
    np.testing.assert_allclose(
        data.true_tau12, 1.0 + 0.5 * np.abs(x3) + 0.7 * x2 * x4, atol=1e-12
    )
    np.testing.assert_allclose(
        data.true_mu,
        2.0 - np.abs(x1 / 3.0 - 1.0) + 1.5 * x4 * x5 - 2.0 * (1 - x4) * (1 - x5),
        atol=1e-12,
    )
    # plug-in: mu at x1=3, x4=x5=0 equals 0
    mu = 2.0 - abs(3.0 / 3.0 - 1.0) + 0.0 - 2.0
    assert mu == 0.0
    recon = (
        data.true_mu
        + data.true_tau01 * (data.T > 0)
        + data.true_tau12 * (data.T > 1)
    )
    np.testing.assert_allclose(data.Y, recon, atol=1e-12)


def test_null_scenario_zero_truth():
    rng = make_rng(RngSpec(108))
    data = simgen.gen_null_scenario(200, 0.0, rng)
    assert (data.true_tau01 == 0).all()
    assert (data.true_tau12 == 0).all()
    np.testing.assert_allclose(data.Y, data.true_mu, atol=1e-12)
    assert data.extras["null"] is True


def test_sparse_loadings_recipe():
    rng = make_rng(RngSpec(109))
    lam = simgen.make_sparse_loadings(20, 4, rng)
    nz = lam[lam != 0]
    assert lam.shape == (20, 4)
    assert (lam == 0).sum() == 80 // 5  # one fifth exactly
    assert ((np.abs(nz) >= 0.6) & (np.abs(nz) <= 1.0)).all()
    assert (nz < 0).any() and (nz > 0).any()


def test_scenario3_structure_and_truth():
    rng = make_rng(RngSpec(110))
    data = simgen.gen_scenario3(500, sigma_eps=0.0, rng=rng)
    assert data.Z.shape == (500, 20)
    assert data.true_loadings.shape == (20, 4)
    assert data.T.shape == (500, 4)
    x1, x2, x3 = data.X[:, 0], data.X[:, 1], data.X[:, 2]
    np.testing.assert_allclose(
        data.true_tau01,
        np.column_stack([0.5 * x1, 0.2 * x1, -0.2 * x3, 0.2 * x2]),
        atol=1e-12,
    )
    np.testing.assert_allclose(
        data.true_tau12,
        np.column_stack([0.1 * x2, 0.3 * x3, -x2 / 3.0, 0.4 * x1]),
        atol=1e-12,
    )
    # factor-1 tau01 at x1 = 2 equals 1.0 by the formula
    np.testing.assert_allclose(0.5 * 2.0, 1.0)
    recon = np.full(500, 2.0)
    for j in range(4):
        recon = (
            recon
            + data.true_tau01[:, j] * (data.T[:, j] > 0)
            + data.true_tau12[:, j] * (data.T[:, j] > 1)
        )
    np.testing.assert_allclose(data.Y, recon, atol=1e-12)
    # tertile balance per factor
    for j in range(4):
        counts = np.bincount(data.T[:, j], minlength=3)
        assert np.abs(counts - 500 / 3).max() <= 1.0
    # Z reconstructs from scores and loadings up to the psi noise
    noise = data.Z - data.true_scores @ data.true_loadings.T
    assert abs(noise.var() - 0.2) < 0.02


def test_scenario_determinism():
    a = simgen.gen_scenario3(100, rng=make_rng(RngSpec(111)))
    b = simgen.gen_scenario3(100, rng=make_rng(RngSpec(111)))
    np.testing.assert_array_equal(a.Y, b.Y)
    np.testing.assert_array_equal(a.Z, b.Z)
    np.testing.assert_array_equal(a.T, b.T)
