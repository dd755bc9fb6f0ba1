
import numpy as np
import pytest
from scipy import stats

from conftest import brute_force_poisson_p1_mean
from mixbayes import numerics as nm
from mixbayes.errors import NumericalError, UnsupportedFamilyError, ValidationError
from mixbayes.exact import exact_posterior_mean
from mixbayes.mcmc import (
    ChainConfig,
    allocation_log_probs,
    gibbs_latent_class,
    gibbs_normal_mixture,
    gibbs_sampler,
    gibbs_t_mixture,
    latent_scale_params,
    mh_acceptance_ratio,
    mh_mixture,
    nu_log_target,
    nu_metropolis_step,
    read_trace_csv,
    sample_allocations,
    trace_log_likelihood,
)
from mixbayes.model import (
    Dataset,
    MixtureParams,
    Normal,
    NormalPrior,
    Poisson,
    PoissonPrior,
    StudentT,
    StudentTPrior,
    observed_log_likelihood,
    simulate_mixture,
)

X6 = Dataset.counts([0, 1, 1, 3, 5, 6])
ASYM = PoissonPrior.make(2, alpha=[1.0, 2.0], rate=0.5)


class TestChainConfig:
    def test_defaults(self):
        c = ChainConfig(iterations=1000)
        assert c.burnin == 100
        assert c.n_retained == 900

    def test_thinning(self):
        c = ChainConfig(iterations=105, burnin=5, thin=10)
        assert c.n_retained == 10
        assert [t for t in range(105) if c.retained(t)][:3] == [5, 15, 25]

    @pytest.mark.parametrize("kw", [dict(iterations=0), dict(iterations=10, burnin=10), dict(thin=0), dict(rw_scale=0.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            ChainConfig(**kw)


class TestAllocations:
    def test_probabilities_are_normalised(self):
        p = MixtureParams([0.3, 0.7], [[1.0], [4.0]])
        lp = allocation_log_probs(Poisson(), p, X6)
        assert np.allclose(np.exp(lp).sum(1), 1.0)
        x = X6.values
        num = 0.3 * stats.poisson.pmf(x, 1.0)
        ref = num / (num + 0.7 * stats.poisson.pmf(x, 4.0))
        assert np.allclose(np.exp(lp[:, 0]), ref)

    def test_zero_density_everywhere_names_the_observation(self):
        p = MixtureParams([1.0, 0.0], [[0.0, 1.0], [5.0, 1.0]])
        data = Dataset.real([0.0, 1e200])
        with pytest.raises(NumericalError, match="observation 1"):
            sample_allocations(Normal(False), p, data, nm.make_rng(0))

    def test_sampled_frequencies(self):
        p = MixtureParams([0.5, 0.5], [[1.0], [3.0]])
        data = Dataset.counts([2] * 20000)
        z = sample_allocations(Poisson(), p, data, nm.make_rng(1))
        ref = stats.poisson.pmf(2, 1.0) / (stats.poisson.pmf(2, 1.0) + stats.poisson.pmf(2, 3.0))
        assert abs(np.mean(z == 0) - ref) < 0.01


class TestGibbs:
    def test_deterministic_under_seed(self):
        cfg = ChainConfig(iterations=300, seed=9)
        a = gibbs_sampler(X6, 2, Poisson(), ASYM, cfg)
        b = gibbs_sampler(X6, 2, Poisson(), ASYM, cfg)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.components, b.components)
        assert np.array_equal(a.allocations, b.allocations)
        c = gibbs_sampler(X6, 2, Poisson(), ASYM, ChainConfig(iterations=300, seed=10))
        assert not np.array_equal(a.weights, c.weights)

    def test_draws_are_in_open_simplex(self):
        tr = gibbs_sampler(X6, 3, Poisson(), PoissonPrior.make(3, alpha=0.2), ChainConfig(iterations=2000))
        assert np.all(tr.weights > 0)
        assert np.allclose(tr.weights.sum(1), 1.0)
        assert tr.allocations.shape == (len(tr), X6.n)

    def test_stored_log_likelihood(self):
        tr = gibbs_sampler(X6, 2, Poisson(), ASYM, ChainConfig(iterations=50))
        for t in (0, 10, len(tr) - 1):
            assert tr.loglik[t] == pytest.approx(observed_log_likelihood(Poisson(), tr.draw(t), X6), rel=1e-12)

    def test_posterior_mean_of_weight(self):
        tr = gibbs_sampler(X6, 2, Poisson(), ASYM, ChainConfig(iterations=40_000, seed=3))
        exact = brute_force_poisson_p1_mean([0, 1, 1, 3, 5, 6], [1.0, 2.0], 1.0, 0.5)
        se = nm.batch_means_stderr(tr.weights[:, 0])
        assert abs(tr.weights[:, 0].mean() - exact) < 4 * se

    def test_rates_mean_matches_exact(self):
        tr = gibbs_sampler(X6, 2, Poisson(), ASYM, ChainConfig(iterations=40_000, seed=4))
        _, comp = exact_posterior_mean(X6, 2, Poisson(), ASYM)
        for j in range(2):
            col = tr.components[:, j, 0]
            assert abs(col.mean() - comp[j, 0]) < 4 * nm.batch_means_stderr(col)

    def test_initial_point_is_used(self):
        init = MixtureParams([0.5, 0.5], [[0.5], [5.0]])
        a = gibbs_sampler(X6, 2, Poisson(), ASYM, ChainConfig(iterations=20, burnin=0), initial=init)
        b = gibbs_sampler(X6, 2, Poisson(), ASYM, ChainConfig(iterations=20, burnin=0))
        assert not np.array_equal(a.weights, b.weights)

    def test_student_t_is_not_conjugate(self):
        with pytest.raises(UnsupportedFamilyError):
            gibbs_sampler(Dataset.real([0.0, 1.0]), 2, StudentT(), None, ChainConfig(iterations=10))

    def test_normal_mixture_recovers_separated_means(self):
        truth = MixtureParams([0.4, 0.6], [[-3.0, 1.0], [3.0, 1.0]])
        data, _ = simulate_mixture(Normal(True), truth, 400, nm.make_rng(2))
        tr = gibbs_normal_mixture(data, 2, NormalPrior.make(2), ChainConfig(iterations=2000, seed=1))
        mu = np.sort(tr.components[:, :, 0].mean(0))
        assert mu == pytest.approx([-3.0, 3.0], abs=0.3)
        assert np.all(tr.components[:, 0, 1] == tr.components[:, 1, 1])

    def test_latent_class_runs(self, small_binary):
        tr = gibbs_latent_class(small_binary, 2, config=ChainConfig(iterations=200))
        assert tr.components.shape == (180, 2, 3)
        assert np.all((tr.components > 0) & (tr.components < 1))


class TestTraceIO:
    def test_csv_round_trip(self, tmp_path):
        tr = gibbs_sampler(X6, 2, Poisson(), ASYM, ChainConfig(iterations=100))
        path = tmp_path / "trace.csv"
        tr.to_csv(path)
        back = read_trace_csv(path, Poisson(), 2)
        assert np.array_equal(back.weights, tr.weights)
        assert np.array_equal(back.components, tr.components)
        assert np.array_equal(back.loglik, tr.loglik)
        assert np.array_equal(back.iters, tr.iters)
        assert path.read_text().splitlines()[0] == "iter,p.1,p.2,lambda.1,lambda.2,loglik"

    def test_relabeled_flag_survives(self, tmp_path):
        from dataclasses import replace

        tr = replace(gibbs_sampler(X6, 2, Poisson(), ASYM, ChainConfig(iterations=20)), relabeled=True)
        tr.to_csv(tmp_path / "t.csv")
        assert read_trace_csv(tmp_path / "t.csv", Poisson(), 2).relabeled

    def test_batched_log_likelihood(self):
        rng = nm.make_rng(0)
        w = rng.dirichlet([1, 1, 1], 5)
        comps = rng.gamma(2.0, 1.0, (5, 3, 1))
        ll = trace_log_likelihood(Poisson(), w, comps, X6, chunk_cells=20)
        for t in range(5):
            assert ll[t] == pytest.approx(observed_log_likelihood(Poisson(), MixtureParams(w[t], comps[t]), X6))


class TestStudentT:
    def test_latent_scale_at_the_mean(self):
        shape, scale = latent_scale_params(1.5, 1.5, 2.0, 7.0)
        assert shape == 4.0 and scale == 3.5

    def test_latent_scale_conditional_is_proportional_to_joint(self):
        """IG(shape, scale) must match N(x | mu, V sigma2) IG(V | nu/2, nu/2) up to a constant in V."""
        x, mu, s2, nu = 0.7, -0.2, 1.3, 4.0
        shape, scale = latent_scale_params(x, mu, s2, nu)
        V = np.array([0.3, 1.0, 2.5])
        joint = stats.norm(mu, np.sqrt(V * s2)).logpdf(x) + stats.invgamma(nu / 2, scale=nu / 2).logpdf(V)
        cond = stats.invgamma(shape, scale=scale).logpdf(V)
        assert np.ptp(joint - cond) < 1e-10

    def test_nu_target_without_data_is_gamma_prior(self):
        prior = StudentTPrior.make(1, 0.0, 1.0, alpha_nu=5.0, beta_nu=2.0)
        nu = np.array([0.5, 2.0, 9.0])
        diff = nu_log_target(nu, 0, 0.0, 0.0, prior) - stats.gamma(5.0, scale=0.5).logpdf(nu)
        assert np.ptp(diff) < 1e-10
        assert nu_log_target(np.array([-1.0]), 0, 0.0, 0.0, prior)[0] == -np.inf

    def test_nu_target_matches_product_of_densities(self):
        """Full conditional is prior x prod IG(V_i | nu/2, nu/2) up to a constant in nu."""
        prior = StudentTPrior.make(1, 0.0, 1.0)
        V = np.array([0.4, 1.2, 0.9, 3.0])
        nu = np.array([1.0, 3.0, 12.0])
        ref = np.array([stats.invgamma(v / 2, scale=v / 2).logpdf(V).sum() for v in nu])
        ref += stats.gamma(prior.alpha_nu, scale=1 / prior.beta_nu).logpdf(nu)
        got = nu_log_target(nu, 4, np.log(V).sum(), (1 / V).sum(), prior)
        assert np.ptp(got - ref) < 1e-9

    def test_empty_component_nu_follows_prior(self):
        prior = StudentTPrior.make(2, 0.0, 1.0, alpha_nu=5.0, beta_nu=2.0)
        rng = nm.make_rng(0)
        V = np.ones(3)
        z = np.zeros(3, dtype=np.int64)  # component 1 (0-based) is empty
        nu = np.array([2.0, 2.0])
        draws = np.empty(100_000)
        for t in range(draws.size):
            nu, _ = nu_metropolis_step(nu, V, z, prior, rng, scale=1.0)
            draws[t] = nu[1]
        se = nm.batch_means_stderr(draws[1000:])
        assert abs(draws[1000:].mean() - 2.5) < 3 * se

    def test_proposal_equal_to_current_has_unit_ratio(self):
        prior = PoissonPrior.make(2)
        pt = (np.log([0.5, 1.5]), np.log([1.0, 2.0]))
        assert mh_acceptance_ratio(Poisson(), prior, X6, pt, pt, 2) == 0.0

    def test_known_nu_chain(self):
        data = Dataset.real(nm.make_rng(0).standard_t(5, 200))
        tr = gibbs_t_mixture(data, 2, nu_known=[3.0, 8.0], config=ChainConfig(iterations=200, store_latent_scales=True))
        assert np.all(tr.components[:, :, 2] == [3.0, 8.0])
        assert tr.latent_scales.shape == (180, 200)
        assert np.all(tr.latent_scales > 0)
        assert tr.acceptance == {}

    def test_unknown_nu_chain_reports_acceptance(self):
        data = Dataset.real(nm.make_rng(1).standard_t(5, 100))
        cfg = ChainConfig(iterations=300, seed=2)
        a = gibbs_t_mixture(data, 2, config=cfg)
        b = gibbs_t_mixture(data, 2, config=cfg)
        assert 0.0 <= a.acceptance["nu"] <= 1.0
        assert np.array_equal(a.components, b.components)


class TestMetropolisHastings:
    def test_rates_in_unit_interval_and_deterministic(self):
        cfg = ChainConfig(iterations=500, seed=5)
        a = mh_mixture(X6, 2, Poisson(), ASYM, cfg)
        b = mh_mixture(X6, 2, Poisson(), ASYM, cfg)
        assert set(a.acceptance) == {"weights", "lambda"}
        assert all(0.0 <= r <= 1.0 for r in a.acceptance.values())
        assert np.array_equal(a.weights, b.weights)
        assert a.allocations is None

    def test_posterior_mean_of_weight(self):
        tr = mh_mixture(X6, 2, Poisson(), ASYM, ChainConfig(iterations=60_000, seed=6))
        exact = brute_force_poisson_p1_mean([0, 1, 1, 3, 5, 6], [1.0, 2.0], 1.0, 0.5)
        se = nm.batch_means_stderr(tr.weights[:, 0])
        assert abs(tr.weights[:, 0].mean() - exact) < 4 * se

    def test_bad_initial_point(self):
        init = MixtureParams([0.5, 0.5], [[0.0, 1.0], [0.0, 1.0]])
        data = Dataset.real([0.0, 1e200])
        with pytest.raises(NumericalError):
            mh_mixture(data, 2, Normal(False), NormalPrior.make(2), ChainConfig(iterations=10), initial=init)

    def test_student_t_blocks(self):
        data = Dataset.real(nm.make_rng(3).standard_t(4, 60))
        prior = StudentTPrior.default(2, data)
        tr = mh_mixture(data, 2, StudentT(), prior, ChainConfig(iterations=300))
        assert set(tr.acceptance) == {"weights", "mu", "sigma2", "nu"}

    def test_target_density_is_proper_in_weight_coordinates(self):
        """With no likelihood information the log-w target integrates like Gamma(alpha, 1) draws."""
        prior = PoissonPrior.make(2, alpha=[2.0, 3.0])
        data = Dataset.counts([0])
        tr = mh_mixture(data, 2, Poisson(), prior, ChainConfig(iterations=40_000, seed=1))
        # posterior of p given one zero observation, computed exactly
        pw, _ = exact_posterior_mean(data, 2, Poisson(), prior)
        se = nm.batch_means_stderr(tr.weights[:, 0])
        assert abs(tr.weights[:, 0].mean() - pw[0]) < 4 * se
