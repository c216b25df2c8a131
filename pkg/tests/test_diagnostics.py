import numpy as np
import pytest

from mdbc.diagnostics import (
    check_score_identity,
    contraction_experiment,
    default_level,
    displacement_scaling,
    estimate_score_second_moment,
    martingale_checks,
    verify_level_conditions,
)
from mdbc.errors import InputError
from mdbc.grids import grid_density
from mdbc.models import gaussian_mixture
from mdbc.models.gmm import theta_from_moments
from mdbc.resample import ResampleConfig


def bimodal_truth(sep=2.0, sd=0.7):
    model = gaussian_mixture(2, 1)
    theta = theta_from_moments(
        model.spec, [0.5, 0.5], [[-sep], [sep]], [[[sd**2]], [[sd**2]]]
    )
    return model, theta


class TestScoreIdentity:
    def test_deterministic_given_seed(self):
        model, theta = bimodal_truth()
        a = check_score_identity(model, theta, n_mc=500, seed=3)
        b = check_score_identity(model, theta, n_mc=500, seed=3)
        assert np.array_equal(a.mean, b.mean)
        assert a.max_abs_z == b.max_abs_z

    def test_requires_enough_draws(self):
        model, theta = bimodal_truth()
        with pytest.raises(InputError):
            check_score_identity(model, theta, n_mc=10)

    def test_constant_zero_coordinate_passes(self):
        # single-component mixture: the weight-logit score is identically zero
        model = gaussian_mixture(1, 1)
        theta = theta_from_moments(model.spec, [1.0], [[0.0]], [[[1.0]]])
        res = check_score_identity(model, theta, n_mc=500, seed=0)
        assert res.stderr[0] == 0.0
        assert res.max_abs_z <= 5.0

    def test_shift_moves_z(self):
        model, theta = bimodal_truth()
        res = check_score_identity(model, theta, n_mc=2000, seed=1, score_shift=0.5)
        assert res.max_abs_z > 5.0


class TestLevelSelection:
    def test_default_level_between_valley_and_peak(self):
        model, theta = bimodal_truth()
        g = grid_density(model, theta, [(-6.0, 6.0)], 1024)
        c = default_level(g)
        assert 0 < c < g.values.max()
        conditions = verify_level_conditions(g, c, 0.01)
        assert conditions["k_at_level"] == 2
        assert conditions["components_stable"]
        assert conditions["saddle_below_level"]

    def test_unimodal_raises(self):
        model = gaussian_mixture(1, 1)
        theta = theta_from_moments(model.spec, [1.0], [[0.0]], [[[1.0]]])
        g = grid_density(model, theta, [(-5.0, 5.0)], 512)
        with pytest.raises(InputError):
            default_level(g)


class TestMartingaleChecksShape:
    def test_zero_steps_trivially_pass(self):
        model, theta = bimodal_truth()
        cfg = ResampleConfig(n_train=100, n_steps=0, n_chains=5, seed=0)
        rep = martingale_checks(model, theta, cfg, n_chains=5, n_mc_vhat=300, n_vhat_chains=1)
        assert rep.l2_mean == 0.0
        assert rep.cauchy_mean == 0.0
        assert rep.drift_max_z == 0.0
        assert rep.passed()

    def test_vhat_positive_and_bounds_scale(self):
        model, theta = bimodal_truth()
        cfg = ResampleConfig(n_train=400, n_steps=50, n_chains=20, eta0=0.05, seed=1)
        rep = martingale_checks(model, theta, cfg, n_chains=20, n_mc_vhat=300, n_vhat_chains=1)
        assert rep.v_hat > 0
        assert rep.l2_bound == pytest.approx(rep.v_hat * 0.05**2 / 399)
        assert rep.cauchy_bound == pytest.approx(rep.v_hat * 0.05**2 / (400 + 50 - 1))

    def test_second_moment_seeded(self):
        model, theta = bimodal_truth()
        a = estimate_score_second_moment(model, theta, n_mc=400, seed=9)
        b = estimate_score_second_moment(model, theta, n_mc=400, seed=9)
        assert a == b


class TestDisplacementScaling:
    def test_ratio_tracks_inverse_n(self):
        model, theta = bimodal_truth(sep=1.5, sd=1.0)
        cfg = ResampleConfig(n_train=100, n_steps=2000, n_chains=60, eta0=0.02, seed=2)
        small, large, ratio, expected = displacement_scaling(
            model, theta, cfg, n_small=100, n_large=2000, n_chains=60
        )
        assert small > large > 0
        assert expected / 3 <= ratio <= expected * 3


class TestContractionExperiment:
    def test_null_resampling_matches_fit_error(self):
        # N=0 disables resampling: every distance equals the fit error, so no
        # chain exceeds eps_tilde = 2 * fit_error
        model, theta = bimodal_truth()
        rep = contraction_experiment(
            model, theta, gaussian_mixture(2, 1),
            [400], box=[(-6.0, 6.0)], resolution=256,
            resample_opts={"n_steps": 0, "n_chains": 10, "eta0": 0.02},
            seed=3,
        )
        arm = rep.arms[0]
        assert arm.frac_dist_exceed == 0.0
        assert rep.k_true == 2

    def test_report_serializes(self):
        model, theta = bimodal_truth()
        rep = contraction_experiment(
            model, theta, gaussian_mixture(2, 1),
            [200, 400], box=[(-6.0, 6.0)], resolution=256,
            resample_opts={"n_steps": 50, "n_chains": 10, "eta0": 0.02},
            seed=4,
        )
        doc = rep.to_dict()
        assert doc["k_true"] == 2
        assert len(doc["arms"]) == 2
        assert {"n_train", "fit_error", "eps_tilde", "frac_dist_exceed",
                "frac_k_mismatch", "mean_discrepancy"} <= set(doc["arms"][0])

    def test_replications_pool_chains(self):
        model, theta = bimodal_truth()
        rep = contraction_experiment(
            model, theta, gaussian_mixture(2, 1),
            [300], box=[(-6.0, 6.0)], resolution=256,
            resample_opts={"n_steps": 20, "n_chains": 5, "eta0": 0.02},
            n_replications=2, seed=5,
        )
        assert rep.arms[0].mean_discrepancy is not None
