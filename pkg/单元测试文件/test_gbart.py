"""
gbart 单元测试
"""
import os
import sys
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from core.dataset import Dataset
from core.trees import Leaf, Branch
from core.gbart import (
    BartPrior,
    GbartRunConfig,
    GbartState,
    prepare_gbart_data,
    sample_tree_prior,
    prior_all_empty_probability,
    prior_check,
    leaf_log_marginal,
    tree_log_marginal,
    grow_prior_log_ratio,
    grow_proposal_log_ratio,
    prune_proposal_log_ratio,
    forest_fits,
    forest_predict,
    initial_state,
    is_all_empty,
    gibbs_sweep,
    fit_gbart,
)


def linear_data(n=30, seed=31, nonlinear=0.0):
    """带截距的线性（可加二次项）数据"""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n, 2))
    y = 1.0 + x @ np.array([2.0, -1.0]) + nonlinear * x[:, 0] ** 2 + rng.standard_normal(n)
    return Dataset(np.column_stack([np.ones(n), x]), y, ["intercept", "x1", "x2"])


def tree_structure_log_prior(prior, node, depth=0):
    """只看拓扑的树先验对数概率"""
    q = prior.split_probability(depth)
    if isinstance(node, Leaf):
        return np.log1p(-q)
    return (np.log(q) + tree_structure_log_prior(prior, node.left, depth + 1)
            + tree_structure_log_prior(prior, node.right, depth + 1))


class TestBartPrior:
    """测试森林先验"""

    def test_split_probability(self):
        prior = BartPrior()
        assert prior.split_probability(0) == pytest.approx(0.95)
        assert prior.split_probability(1) == pytest.approx(0.95 / 3, abs=1e-5)

    def test_no_split_probability(self):
        """测试单棵树无分裂的概率为 1 - a"""
        prior = BartPrior(num_trees=1, branch_a=0.95)
        assert 1.0 - prior.split_probability(0) == pytest.approx(0.05)

    def test_zero_a_always_leaf(self):
        prior = BartPrior(num_trees=1, branch_a=0.0)
        rng = np.random.default_rng(0)
        assert all(isinstance(sample_tree_prior(prior, [[0.0, 1.0]], rng), Leaf) for _ in range(200))

    @pytest.mark.parametrize("trees, a, expected", [(1, 0.95, 0.05), (0, 0.95, 1.0), (2, 0.5, 0.25)])
    def test_all_empty_probability(self, trees, a, expected):
        prior = BartPrior(num_trees=trees, branch_a=a)
        assert prior_all_empty_probability(prior) == pytest.approx(expected)

    def test_leaf_variance(self):
        assert BartPrior(num_trees=4, sigma_mu=2.0).leaf_variance == pytest.approx(1.0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            BartPrior(branch_a=1.0)
        with pytest.raises(ValueError):
            BartPrior(num_trees=-1)
        with pytest.raises(ValueError):
            BartPrior(sigma_mu=0.0)

    def test_no_eligible_predictor(self):
        with pytest.raises(ValueError):
            sample_tree_prior(BartPrior(num_trees=1), [[1.0, 1.0]], np.random.default_rng(0))


class TestPriorCheck:
    """测试先验的蒙特卡洛检查"""

    def test_two_trees_half(self):
        prior = BartPrior(num_trees=2, branch_a=0.5)
        result = prior_check(prior, [[0.0, 1.0]], 4000, np.random.default_rng(1))
        entry = result["all_empty"]
        assert entry["expected"] == pytest.approx(0.25)
        assert abs(entry["empirical"] - 0.25) < 4 * entry["se"]
        assert abs(result["no_split"]["empirical"] - 0.5) < 4 * result["no_split"]["se"]
        assert result["depth1_split"]["expected"] == pytest.approx(0.5 / 3)

    def test_single_tree_no_split_at_default_a(self):
        """测试 T=1、a=0.95 时 1e4 次抽样的无分裂比例落在 0.05 的 3 个标准误内"""
        prior = BartPrior(num_trees=1, branch_a=0.95)
        result = prior_check(prior, [[0.0, 1.0], [-2.0, 2.0]], 10_000, np.random.default_rng(41))
        entry = result["no_split"]
        assert entry["expected"] == pytest.approx(0.05)
        assert entry["draws"] == 10_000
        assert abs(entry["empirical"] - 0.05) <= 3 * entry["se"]
        assert entry["within_3se"]

    def test_five_trees_all_empty(self):
        """测试 T=5、a=0.5 时全空森林比例与 (1-a)^T = 0.03125 相差不超过 3 个标准误"""
        prior = BartPrior(num_trees=5, branch_a=0.5)
        expected = prior_all_empty_probability(prior)
        assert expected == pytest.approx(0.03125)
        result = prior_check(prior, [[0.0, 1.0]], 10_000, np.random.default_rng(42))
        entry = result["all_empty"]
        assert entry["expected"] == pytest.approx(expected)
        assert abs(entry["empirical"] - expected) <= 3 * entry["se"]
        assert entry["within_3se"]

    def test_invalid_draws(self):
        with pytest.raises(ValueError):
            prior_check(BartPrior(), [[0.0, 1.0]], 0, np.random.default_rng(0))


class TestLeafMarginal:
    """测试叶子积分似然"""

    def test_dense_oracle(self):
        """测试与 N(0, s2 I + tau2 11^T) 的稠密对数密度一致"""
        rng = np.random.default_rng(2)
        r = rng.standard_normal(7)
        s2, tau2 = 0.6, 0.3
        covariance = s2 * np.eye(7) + tau2 * np.ones((7, 7))
        expected = stats.multivariate_normal(np.zeros(7), covariance).logpdf(r)
        assert leaf_log_marginal(r, s2, tau2) == pytest.approx(expected, abs=1e-10)

    def test_tree_sum_over_leaves(self):
        rng = np.random.default_rng(3)
        X = rng.uniform(size=(20, 1))
        r = rng.standard_normal(20)
        tree = Branch(0, 0.5, Leaf(), Leaf())
        left = X[:, 0] < 0.5
        expected = leaf_log_marginal(r[left], 1.0, 0.2) + leaf_log_marginal(r[~left], 1.0, 0.2)
        assert tree_log_marginal(tree, X, r, 1.0, 0.2) == pytest.approx(expected)


class TestProposalRatios:
    """测试 GROW/PRUNE 比值"""

    TREES = [
        Leaf(),
        Branch(0, 0.5, Leaf(), Leaf()),
        Branch(0, 0.5, Branch(1, 0.2, Leaf(), Leaf()), Leaf()),
        Branch(0, 0.5, Branch(1, 0.2, Leaf(), Leaf()), Branch(1, 0.7, Leaf(), Leaf())),
    ]

    def test_reciprocal(self):
        """测试正向 GROW 与反向 PRUNE 的提议比互为倒数"""
        for before, after in zip(self.TREES, self.TREES[1:]):
            assert grow_proposal_log_ratio(before, after) == pytest.approx(
                -prune_proposal_log_ratio(after, before))

    def test_first_grow(self):
        # 单叶子：L = 1；分裂后 W' = 1
        assert grow_proposal_log_ratio(self.TREES[0], self.TREES[1]) == pytest.approx(0.0)

    def test_prior_ratio_matches_tree_prior(self):
        """测试 GROW 的先验比等于树先验概率之比"""
        prior = BartPrior()
        for before, after, depth in [(self.TREES[0], self.TREES[1], 0), (self.TREES[1], self.TREES[2], 1)]:
            direct = tree_structure_log_prior(prior, after) - tree_structure_log_prior(prior, before)
            assert grow_prior_log_ratio(prior, depth) == pytest.approx(direct)


class TestForestPredict:
    """测试森林预测"""

    def test_all_empty_forest(self):
        state = GbartState([Leaf(0.5), Leaf(-0.2), Leaf(0.1)], np.zeros(2), 1.0)
        assert_allclose(forest_predict(state, np.ones((4, 2))), np.full(4, 0.4))

    def test_step_function(self):
        state = GbartState([Branch(0, 0.5, Leaf(-1.0), Leaf(1.0))], np.zeros(1), 1.0)
        assert_allclose(forest_predict(state, np.array([[0.1], [0.49], [0.5], [0.9]])), [-1, -1, 1, 1])

    def test_duplicate_rows(self):
        state = GbartState([Branch(1, 0.0, Leaf(2.0), Leaf(3.0))], np.array([1.0, 1.0]), 1.0)
        X = np.array([[0.3, -1.0], [0.3, -1.0]])
        prediction = forest_predict(state, X)
        assert prediction[0] == prediction[1]

    def test_rescaling(self):
        state = GbartState([Leaf(0.25)], np.array([0.0]), 1.0, y_shift=10.0, y_scale=4.0)
        assert_allclose(forest_predict(state, np.array([[3.0]])), [11.0])

    def test_dimension_mismatch(self):
        state = GbartState([], np.zeros(3), 1.0)
        with pytest.raises(ValueError):
            forest_predict(state, np.ones((2, 2)))


class TestIsAllEmpty:
    """测试全空森林判断"""

    def test_leaves(self):
        assert is_all_empty([Leaf(0.0), Leaf(1.0)])

    def test_one_branch(self):
        assert not is_all_empty([Leaf(0.0), Branch(0, 0.0, Leaf(), Leaf())])

    def test_no_trees(self):
        assert is_all_empty([])


class TestPrepareData:
    """测试标准化与先验标定"""

    def test_standardized_range(self):
        gdata = prepare_gbart_data(linear_data())
        assert gdata.y.min() == pytest.approx(-0.5)
        assert gdata.y.max() == pytest.approx(0.5)
        assert gdata.intercept_index == 0
        assert list(gdata.split_vars) == [1, 2]

    def test_sigma_prior_quantile(self):
        """测试 P(sigma < sigma_hat) 等于 sigma_quantile"""
        gdata = prepare_gbart_data(linear_data(), sigma_nu=3.0, sigma_quantile=0.9)
        prior = stats.invgamma(gdata.sigma_nu / 2, scale=gdata.sigma_nu * gdata.sigma_lambda / 2)
        assert prior.cdf(gdata.sigma_hat ** 2) == pytest.approx(0.9)

    def test_rank_deficient(self):
        data = linear_data()
        X = np.column_stack([data.X, data.X[:, 1]])
        with pytest.raises(ValueError):
            prepare_gbart_data(Dataset(X, data.y))

    def test_missing_intercept(self):
        data = linear_data()
        with pytest.raises(ValueError):
            prepare_gbart_data(Dataset(data.X[:, 1:], data.y))

    def test_bart_needs_no_intercept(self):
        data = linear_data()
        gdata = prepare_gbart_data(Dataset(data.X[:, 1:], data.y), linear_component=False)
        assert gdata.intercept_index is None


class TestGibbsSweep:
    """测试单次扫描"""

    def test_tree_fit_cache_consistent(self):
        """测试缓存的树取值与重新计算一致"""
        gdata = prepare_gbart_data(linear_data(n=40, nonlinear=2.0))
        prior = BartPrior(num_trees=10)
        state = initial_state(gdata, prior)
        rng = np.random.default_rng(4)
        for _ in range(30):
            state = gibbs_sweep(state, gdata, prior, rng)
        assert_allclose(state.tree_fits, forest_fits(state.forest, gdata.X))
        assert state.sigma > 0

    def test_frozen_forest(self):
        gdata = prepare_gbart_data(linear_data())
        prior = BartPrior(num_trees=3)
        state = initial_state(gdata, prior)
        state = gibbs_sweep(state, gdata, prior, np.random.default_rng(5), update_trees=False)
        assert is_all_empty(state)
        assert all(tree.value == 0.0 for tree in state.forest)


class TestFitGbart:
    """测试整条链"""

    def test_chain_layout(self):
        run_config = GbartRunConfig(iterations=20, burn_in=5)
        chain = fit_gbart(linear_data(), BartPrior(num_trees=5), run_config, np.random.default_rng(6))
        assert len(chain) == 15
        assert list(chain.scalars) == ["sigma", "all_empty", "r2"]
        assert chain.beta.shape == (15, 3)
        assert chain.mu_mean.shape == (30,)
        assert chain.metadata["sampler"] == "gbart"

    def test_deterministic(self):
        run_config = GbartRunConfig(iterations=15, burn_in=5, store_mu=True)
        a = fit_gbart(linear_data(), BartPrior(num_trees=5), run_config, np.random.default_rng(7))
        b = fit_gbart(linear_data(), BartPrior(num_trees=5), run_config, np.random.default_rng(7))
        assert np.array_equal(a.beta, b.beta)
        assert np.array_equal(a.scalar("sigma"), b.scalar("sigma"))
        assert np.array_equal(a.mu_draws, b.mu_draws)

    def test_bart_baseline(self):
        data = linear_data()
        run_config = GbartRunConfig(iterations=10, burn_in=0, linear_component=False)
        chain = fit_gbart(Dataset(data.X[:, 1:], data.y), BartPrior(num_trees=5), run_config,
                          np.random.default_rng(8))
        assert chain.metadata["sampler"] == "bart"
        assert np.all(chain.beta == 0.0)

    def test_constant_response_fixed_sigma(self):
        """测试 y 为常数且噪声尺度很小时预测约等于该常数"""
        data = linear_data()
        constant = Dataset(data.X, np.full(data.n, 3.7), data.columns)
        run_config = GbartRunConfig(iterations=30, burn_in=10, fixed_sigma=1e-4)
        chain = fit_gbart(constant, BartPrior(num_trees=5), run_config, np.random.default_rng(9))
        assert_allclose(chain.mu_mean, 3.7, atol=1e-2)
        assert_allclose(chain.scalar("sigma"), 1e-4)

    @pytest.mark.parametrize("update_trees", [True, False])
    def test_affine_response_equivariance(self, update_trees):
        """测试同一种子下 Y -> cY + d（c > 0）时 mu 的后验均值变为 c mu + d"""
        data = linear_data()
        c, d = 3.5, -2.0
        shifted = Dataset(data.X, c * data.y + d, data.columns)
        run_config = GbartRunConfig(iterations=25, burn_in=5, update_trees=update_trees)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            base = fit_gbart(data, BartPrior(num_trees=5), run_config, np.random.default_rng(12))
            moved = fit_gbart(shifted, BartPrior(num_trees=5), run_config, np.random.default_rng(12))
        scale = np.max(np.abs(c * base.mu_mean + d))
        assert_allclose(moved.mu_mean, c * base.mu_mean + d, rtol=0, atol=1e-10 * scale)
        assert_allclose(moved.scalar("sigma"), c * base.scalar("sigma"), rtol=1e-9)

    def test_rank_error(self):
        data = linear_data()
        X = np.column_stack([data.X, 2 * data.X[:, 2]])
        with pytest.raises(ValueError):
            fit_gbart(Dataset(X, data.y), BartPrior(num_trees=2), GbartRunConfig(iterations=2, burn_in=0),
                      np.random.default_rng(0))

    def test_frozen_forest_matches_conjugate_regression(self):
        """测试森林固定为空时 beta 的前两阶矩与正态-逆伽马共轭回归一致"""
        data = linear_data(n=30)
        n, p = data.X.shape
        run_config = GbartRunConfig(iterations=10500, burn_in=500, update_trees=False)
        with pytest.warns(UserWarning):
            chain = fit_gbart(data, BartPrior(num_trees=3), run_config, np.random.default_rng(10))

        sigma_prior = chain.metadata["sigma_prior"]
        nu = sigma_prior["nu"]
        lam = sigma_prior["lambda"] * sigma_prior["y_scale"] ** 2
        xtx_inv = np.linalg.inv(data.X.T @ data.X)
        beta_hat = xtx_inv @ data.X.T @ data.y
        rss = float(np.sum((data.y - data.X @ beta_hat) ** 2))
        expected_var = np.diag(xtx_inv) * (nu * lam / 2 + rss / 2) / (nu / 2 + (n - p) / 2 - 1)

        draws = chain.beta
        m = len(chain)
        mean_se = np.sqrt(expected_var / m)
        assert np.all(np.abs(draws.mean(axis=0) - beta_hat) < 3 * mean_se)
        # 学生 t 边际的方差估计标准误（含峰度修正）
        dof = nu + n - p
        var_se = expected_var * np.sqrt((2.0 + 6.0 / (dof - 4)) / (m - 1))
        assert np.all(np.abs(draws.var(axis=0, ddof=1) - expected_var) < 3 * var_se)

    def test_nonlinear_data_grows_trees(self):
        run_config = GbartRunConfig(iterations=60, burn_in=20)
        chain = fit_gbart(linear_data(n=80, nonlinear=3.0), BartPrior(num_trees=10), run_config,
                          np.random.default_rng(11))
        assert not chain.scalar("all_empty").all()
        assert set(chain.metadata["acceptance_rates"]) == {"grow", "prune"}
