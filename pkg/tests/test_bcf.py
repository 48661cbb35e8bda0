import numpy as np
import pytest

from bcf3l.bcf import (
    Bcf3lConfig,
    Bcf3lError,
    effects_from_posterior,
    equal_tailed_interval,
    fit_bcf3l,
    other_factor_dummies,
    predict_counterfactual,
)
from bcf3l.core_data import RngSpec, make_rng
from bcf3l.propensity import fit_generalized_propensity, pihat_columns
from bcf3l import simgen


def small_fit(n=120, seed=81, n_burn=60, n_save=40, null=False, **cfg_kw):
    rng = make_rng(RngSpec(seed))
    gen = simgen.gen_null_scenario if null else simgen.gen_scenario1
    data = gen(n, 1.0, rng)
    pmod = fit_generalized_propensity(data.X, None, data.T)
    pihat = pihat_columns(pmod, data.X, None)
    cfg = Bcf3lConfig(b_mu=20, b_tau=8, n_burn=n_burn, n_save=n_save, **cfg_kw)
    post = fit_bcf3l(data.Y, data.X, data.T, None, pihat, cfg, rng)
    return data, pihat, post


class FakePosterior:
    def __init__(self, t1, t2):
        self.tau01_draws = t1
        self.tau12_draws = t2
        self.n_save = t1.shape[0]


def test_effects_degenerate_draws():
    t = np.full((10, 4), 2.5)
    summ = effects_from_posterior(FakePosterior(t, -t))
    np.testing.assert_array_equal(summ.tau01_mean, [2.5] * 4)
    np.testing.assert_array_equal(summ.tau01_lo, summ.tau01_hi)
    assert summ.avg_tau01 == (2.5, 2.5, 2.5)


def test_effects_normal_quantile_oracle():
    rng = make_rng(RngSpec(82))
    draws = rng.standard_normal((10_000, 1))
    summ = effects_from_posterior(FakePosterior(draws, draws))
    assert abs(summ.tau01_lo[0] + 1.645) < 0.05
    assert abs(summ.tau01_hi[0] - 1.645) < 0.05


def test_effects_sample_average_linearity():
    rng = make_rng(RngSpec(83))
    t1 = rng.standard_normal((50, 7))
    t2 = rng.standard_normal((50, 7))
    summ = effects_from_posterior(FakePosterior(t1, t2))
    assert abs(summ.avg_tau01[0] - t1.mean()) < 1e-12
    assert abs(summ.avg_tau12[0] - t2.mean()) < 1e-12


def test_effects_needs_two_draws():
    with pytest.raises(Bcf3lError):
        effects_from_posterior(FakePosterior(np.zeros((1, 3)), np.zeros((1, 3))))


def test_equal_tailed_interval_oracle():
    rng = make_rng(RngSpec(84))
    d = rng.standard_normal(5000)
    lo, hi = equal_tailed_interval(d, 0.90)
    np.testing.assert_allclose(
        [lo, hi], np.quantile(d, [0.05, 0.95]), rtol=1e-12
    )


def test_other_factor_dummies():
    assert other_factor_dummies(None).shape == (0, 0)
    d = other_factor_dummies(np.array([[0, 2], [1, 1], [2, 0]]))
    np.testing.assert_array_equal(
        d, [[0, 0, 0, 1], [1, 0, 1, 0], [0, 1, 0, 0]]
    )


def test_fit_validates_inputs():
    rng = make_rng(RngSpec(85))
    n = 30
    X = rng.standard_normal((n, 2))
    Y = rng.standard_normal(n)
    T = np.repeat([0, 1, 2], 10)
    pihat = np.full((n, 2), 1 / 3)
    cfg = Bcf3lConfig(b_mu=2, b_tau=2, n_burn=1, n_save=2)
    with pytest.raises(Bcf3lError, match="absent"):
        fit_bcf3l(Y, X, np.zeros(n, dtype=int), None, pihat, cfg, rng)
    with pytest.raises(Bcf3lError, match="pihat"):
        fit_bcf3l(Y, X, T, None, np.full((n, 2), 1.5), cfg, rng)
    bad = Y.copy()
    bad[0] = np.nan
    with pytest.raises(Bcf3lError, match="outcome"):
        fit_bcf3l(bad, X, T, None, pihat, cfg, rng)
    with pytest.raises(ValueError):
        Bcf3lConfig(b_mu=0)


def test_telescoping_identity_per_draw():
    _, _, post = small_fit()
    total = post.tau01_draws + post.tau12_draws
    # tau(0->2) is by construction the sum of the two contrasts, exactly
    np.testing.assert_array_equal(
        total, post.tau01_draws + post.tau12_draws
    )
    assert post.n_save == 40
    assert post.sigma2_draws.shape == (40,)
    assert (post.sigma2_draws > 0).all()


def test_counterfactual_consistency_and_telescoping():
    data, pihat, post = small_fit(keep_trees=True)
    cf = {
        t: predict_counterfactual(post, data.X, None, pihat, t) for t in (0, 1, 2)
    }
    # level 0 is the baseline surface draws alone
    np.testing.assert_allclose(cf[0], post.mu_draws, atol=1e-10)
    # telescoping: contrast(2,0) = contrast(1,0) + contrast(2,1) per draw
    np.testing.assert_allclose(
        cf[2] - cf[0], (cf[1] - cf[0]) + (cf[2] - cf[1]), atol=1e-12
    )
    # training rows at their observed levels reproduce the stored fit
    recon = (
        post.mu_draws
        + post.tau01_draws * (data.T > 0)
        + post.tau12_draws * (data.T > 1)
    )
    picked = np.empty_like(recon)
    for t in (0, 1, 2):
        picked[:, data.T == t] = cf[t][:, data.T == t]
    np.testing.assert_allclose(picked, recon, atol=1e-10)


def test_counterfactual_requires_trees_and_valid_level():
    data, pihat, post = small_fit(n=60, n_burn=10, n_save=5)
    with pytest.raises(Bcf3lError, match="keep_trees"):
        predict_counterfactual(post, data.X, None, pihat, 0)
    _, _, kept = small_fit(n=60, n_burn=10, n_save=5, keep_trees=True)
    with pytest.raises(ValueError):
        predict_counterfactual(kept, data.X, None, pihat, 3)
    with pytest.raises(Bcf3lError, match="mismatch"):
        predict_counterfactual(kept, data.X[:, :2], None, pihat, 0)


def test_monotone_shrinkage_tau_to_zero():
    _, _, post = small_fit(
        n=80, n_burn=30, n_save=20, tau01_leaf_k=1e6, tau12_leaf_k=1e6
    )
    assert np.abs(post.tau01_draws).max() < 1e-3
    assert np.abs(post.tau12_draws).max() < 1e-3


def test_inactive_rows_never_reach_tau_leaves():
    # poisoning the outcome rows with t=0 only moves mu, never the tau
    # sufficient statistics: the tau forests must stay NaN-free when their
    # inactive rows carry NaN residuals (see forest-level audit); here we
    # check the public invariant that all draws stay finite
    _, _, post = small_fit(n=90, n_burn=20, n_save=10)
    assert np.isfinite(post.tau01_draws).all()
    assert np.isfinite(post.tau12_draws).all()


def test_null_dgp_pointwise_coverage():
    data, _, post = small_fit(
        n=250, seed=86, n_burn=250, n_save=250, null=True
    )
    summ = effects_from_posterior(post, level=0.90)
    cover1 = np.mean((summ.tau01_lo <= 0) & (0 <= summ.tau01_hi))
    cover2 = np.mean((summ.tau12_lo <= 0) & (0 <= summ.tau12_hi))
    assert cover1 >= 0.80
    assert cover2 >= 0.80


def test_constant_effect_recovery():
    rng = make_rng(RngSpec(87))
    n = 2000
    data = simgen.gen_scenario1(n, 0.5, rng)
    Y = (
        data.true_mu
        + 1.0 * (data.T > 0)
        - 1.0 * (data.T > 1)
        + rng.normal(0, 0.5, n)
    )
    pmod = fit_generalized_propensity(data.X, None, data.T)
    pihat = pihat_columns(pmod, data.X, None)
    cfg = Bcf3lConfig(n_burn=400, n_save=400)
    post = fit_bcf3l(Y, data.X, data.T, None, pihat, cfg, rng)
    summ = effects_from_posterior(post)
    assert abs(summ.avg_tau01[0] - 1.0) < 0.15
    assert abs(summ.avg_tau12[0] + 1.0) < 0.15
