"""Gibbs and Metropolis-Hastings samplers for finite mixtures."""

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import gammaln

from . import numerics as nm
from .errors import NumericalError, UnsupportedFamilyError, UsageError, ValidationError
from .model import (
    BernoulliProduct,
    MixtureParams,
    Normal,
    StudentT,
    StudentTPrior,
    component_log_densities,
    sample_prior,
)


@dataclass(frozen=True)
class ChainConfig:
    """Run-length, seed and proposal settings for one chain.

    ``burnin`` defaults to 10% of ``iterations``; ``iterations`` counts the
    burn-in sweeps.  Retained draws are sweeps ``burnin, burnin + thin, ...``.
    """

    iterations: int = 10_000
    burnin: int | None = None
    thin: int = 1
    seed: int = 0
    rw_scale: float = 0.1
    rw_scale_nu: float = 5.0
    store_allocations: bool = True
    store_latent_scales: bool = False

    def __post_init__(self):
        if self.burnin is None:
            object.__setattr__(self, "burnin", self.iterations // 10)
        if self.iterations < 1 or not 0 <= self.burnin < self.iterations:
            raise ValidationError("need iterations >= 1 and 0 <= burnin < iterations")
        if self.thin < 1:
            raise ValidationError("thin must be >= 1")
        if not (self.rw_scale > 0 and self.rw_scale_nu > 0):
            raise ValidationError("random-walk scales must be positive")

    @property
    def n_retained(self):
        return -(-(self.iterations - self.burnin) // self.thin)

    def retained(self, t):
        return t >= self.burnin and (t - self.burnin) % self.thin == 0


@dataclass
class Trace:
    """Retained MCMC draws.

    ``weights`` is ``(T, J)``, ``components`` ``(T, J, k)``, ``loglik`` the
    observed log-likelihood of every draw.  ``allocations`` ``(T, n)`` and
    ``latent_scales`` ``(T, n)`` are present when requested.
    """

    family: object
    weights: np.ndarray
    components: np.ndarray
    loglik: np.ndarray
    iters: np.ndarray
    allocations: np.ndarray = None
    latent_scales: np.ndarray = None
    acceptance: dict = field(default_factory=dict)
    config: ChainConfig = None
    relabeled: bool = False

    def __len__(self):
        return self.weights.shape[0]

    @property
    def J(self):
        return self.weights.shape[1]

    def draw(self, t):
        return MixtureParams(self.weights[t], self.components[t])

    @property
    def draws(self):
        return [self.draw(t) for t in range(len(self))]

    def columns(self):
        return [f"p.{j + 1}" for j in range(self.J)] + self.family.columns(self.J)

    def flat(self):
        """``(T, P)`` matrix of the scalar parameters named by :meth:`columns`."""
        rows = [self.family.flatten(c) for c in self.components]
        return np.column_stack([self.weights, np.array(rows)])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            if self.relabeled:
                fh.write("# relabeled=true\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter"] + self.columns() + ["loglik"])
            for it, row, ll in zip(self.iters, self.flat(), self.loglik):
                w.writerow([int(it)] + [repr(float(v)) for v in row] + [repr(float(ll))])

    def allocations_to_csv(self, path):
        if self.allocations is None:
            raise UsageError("trace has no stored allocations")
        np.savetxt(path, self.allocations, fmt="%d", delimiter=",")


def read_trace_csv(path, family, J):
    """Load a trace written by :meth:`Trace.to_csv` (allocations not included)."""
    relabeled = False
    rows = []
    with open(path, newline="") as fh:
        lines = [ln for ln in fh]
    body = []
    for ln in lines:
        if ln.startswith("#"):
            relabeled = relabeled or "relabeled=true" in ln
        else:
            body.append(ln)
    reader = csv.reader(body)
    header = next(reader)
    for r in reader:
        rows.append([float(v) for v in r])
    a = np.array(rows)
    if a.ndim != 2 or a.shape[1] != len(header):
        raise ValidationError(f"malformed trace file {path}")
    iters = a[:, 0].astype(int)
    weights = a[:, 1 : 1 + J]
    comps = np.array([family.unflatten(r, J) for r in a[:, 1 + J : -1]])
    return Trace(family, weights, comps, a[:, -1], iters, relabeled=relabeled)


class _Recorder:
    """Collects retained draws; log-likelihoods and invariants are checked at the end."""

    def __init__(self, config, J, k, n):
        T = config.n_retained
        self.config = config
        self.weights = np.empty((T, J))
        self.components = np.empty((T, J, k))
        self.iters = np.empty(T, dtype=np.int64)
        self.allocations = np.empty((T, n), dtype=np.int64) if config.store_allocations else None
        self.latent = np.empty((T, n)) if config.store_latent_scales else None
        self.i = 0

    def record(self, t, p, comps, z=None, V=None):
        if not self.config.retained(t):
            return
        i = self.i
        self.weights[i] = p
        self.components[i] = comps
        self.iters[i] = t
        if self.allocations is not None:
            if z is None:
                raise UsageError("this sampler does not produce allocations")
            self.allocations[i] = z
        if self.latent is not None:
            if V is None:
                raise UsageError("this sampler does not produce latent scales")
            self.latent[i] = V
        self.i += 1

    def trace(self, family, data, acceptance=None):
        w = self.weights
        bad = np.flatnonzero(
            ~(np.all(w > 0, axis=1) & np.all(np.isfinite(w), axis=1) & (np.abs(w.sum(1) - 1) < 1e-9))
        )
        if bad.size:
            raise NumericalError(f"retained draw {int(bad[0])} left the open simplex: {w[bad[0]]}")
        for i in range(len(w)):
            family.check_components(self.components[i])
        return Trace(
            family, w, self.components, trace_log_likelihood(family, w, self.components, data),
            self.iters, self.allocations, self.latent, acceptance or {}, self.config,
        )


def trace_log_likelihood(family, weights, components, data, chunk_cells=4_000_000):
    """Observed log-likelihood of each of a stack of draws."""
    T, J = weights.shape
    out = np.empty(T)
    step = max(1, chunk_cells // max(1, data.n * J))
    for a in range(0, T, step):
        lf = family.log_densities_batch(components[a : a + step], data)
        with np.errstate(divide="ignore"):
            lf = lf + np.log(weights[a : a + step])[:, None, :]
        out[a : a + step] = nm.log_sum_exp_rows(lf, axis=2).sum(1)
    return out


# ---------------------------------------------------------------------------
# allocation step


def allocation_log_probs(family, params, data):
    """Normalised ``log P(z_i = j | x_i, p, theta)`` as an ``(n, J)`` array."""
    lf = component_log_densities(family, params, data)
    with np.errstate(divide="ignore"):
        lp = lf + np.log(params.weights)[None, :]
    norm = nm.log_sum_exp_rows(lp, axis=1)
    bad = np.flatnonzero(~np.isfinite(norm))
    if bad.size:
        raise NumericalError(f"every component has zero density at observation {int(bad[0])}")
    return lp - norm[:, None]


def sample_allocations(family, params, data, rng):
    """Draw every ``z_i`` from ``P(z_i = j) proportional to p_j f(x_i | theta_j)``."""
    return nm.sample_categorical_log(allocation_log_probs(family, params, data), rng)


def _draw_allocations(family, p, comps, data, rng):
    # hot-loop version of sample_allocations without re-validating the parameters
    with np.errstate(divide="ignore"):
        lp = family.log_densities(comps, data) + np.log(p)[None, :]
    m = lp.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(m)):
        i = int(np.flatnonzero(~np.isfinite(m[:, 0]))[0])
        raise NumericalError(f"every component has zero density at observation {i}")
    w = np.exp(lp - m)
    cdf = np.cumsum(w, axis=1)
    u = rng.random(lp.shape[0]) * cdf[:, -1]
    return np.minimum((cdf < u[:, None]).sum(axis=1), lp.shape[1] - 1)


def _uniform_allocation(n, J, rng):
    return rng.integers(0, J, n)


def _dirichlet(alpha, rng):
    if alpha.size == 1:
        return np.ones(1)
    p = rng.dirichlet(alpha)
    return p / p.sum()


# ---------------------------------------------------------------------------
# conjugate Gibbs


def gibbs_sampler(data, J, family, prior, config, initial=None):
    """Data-augmentation Gibbs sampler for conjugate families.

    Each sweep draws the allocations, then the weights from
    ``D(alpha + n)``, then the component parameters from their complete-data
    conditional.  Without ``initial`` the chain starts from a uniformly
    random allocation.
    """
    if not family.gibbs_conjugate:
        raise UnsupportedFamilyError(f"no conjugate Gibbs sampler for {family.name}")
    family.check_data(data)
    if data.n == 0:
        raise UsageError("no observations")
    rng = nm.make_rng(config.seed)
    alpha = np.asarray(prior.alpha, dtype=float)
    rec = _Recorder(config, J, family.k, data.n)

    if initial is None:
        z = _uniform_allocation(data.n, J, rng)
        stats = family.suff_stats(data, z, J)
        p = _dirichlet(alpha + stats["n"], rng)
        comps = family.sample_conditional(prior, stats, rng)
    else:
        p, comps = initial.weights.copy(), initial.components.copy()

    for t in range(config.iterations):
        z = _draw_allocations(family, p, comps, data, rng)
        stats = family.suff_stats(data, z, J)
        p = _dirichlet(alpha + stats["n"], rng)
        comps = family.sample_conditional(prior, stats, rng)
        rec.record(t, p, comps, z)
    return rec.trace(family, data)


def gibbs_normal_mixture(data, J, prior=None, config=None, shared_variance=True, initial=None):
    """Gibbs sampler for normal mixtures with the conjugate prior of :class:`NormalPrior`.

    The variance is drawn from its conditional with the means integrated
    out, then each mean given the variance, so means and variance move as a
    block.
    """
    from .model import NormalPrior

    if data.n == 0:
        raise UsageError("no observations")
    prior = prior or NormalPrior.make(J)
    return gibbs_sampler(data, J, Normal(shared_variance), prior, config or ChainConfig(), initial)


def gibbs_latent_class(data, J, prior=None, config=None, initial=None):
    """Gibbs sampler for the latent class (Bernoulli-product) model."""
    from .model import BernoulliPrior

    family = BernoulliProduct(data.width)
    prior = prior or BernoulliPrior.make(J, data.width)
    return gibbs_sampler(data, J, family, prior, config or ChainConfig(), initial)


# ---------------------------------------------------------------------------
# Student-t mixtures


def latent_scale_params(x, mu, sigma2, nu):
    """Inverse-gamma ``(shape, scale)`` of ``V_i`` given its component."""
    return 0.5 * (1.0 + nu), 0.5 * (x - mu) ** 2 / sigma2 + 0.5 * nu


def nu_log_target(nu, n_j, sum_log_v, sum_inv_v, prior):
    """Unnormalised log full conditional of one degrees-of-freedom parameter."""
    nu = np.asarray(nu, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        half = 0.5 * nu
        lt = n_j * (half * np.log(half) - gammaln(half))
        lt = lt - (half + 1.0) * sum_log_v - half * sum_inv_v
        lt = lt + (prior.alpha_nu - 1.0) * np.log(nu) - prior.beta_nu * nu
    return np.where(nu > 0, lt, -np.inf)


def nu_metropolis_step(nu, V, z, prior, rng, scale=5.0):
    """One random-walk step on ``log nu_j`` for every component.

    The log-scale proposal contributes the Jacobian ``nu'/nu`` to the ratio.
    Returns the new vector and the per-component acceptance flags.
    """
    nu = np.asarray(nu, dtype=float)
    J = nu.size
    n_j = np.bincount(z, minlength=J)
    slv = np.bincount(z, weights=np.log(V), minlength=J)
    siv = np.bincount(z, weights=1.0 / V, minlength=J)
    prop = nu * np.exp(scale * rng.standard_normal(J))
    log_r = (
        nu_log_target(prop, n_j, slv, siv, prior) + np.log(prop)
        - nu_log_target(nu, n_j, slv, siv, prior) - np.log(nu)
    )
    log_r = np.where(np.isfinite(log_r), log_r, -np.inf)
    accept = np.log(rng.random(J)) < log_r
    return np.where(accept, prop, nu), accept


def gibbs_t_mixture(data, J, prior=None, nu_known=None, config=None, initial=None):
    """Gibbs sampler for Student-t mixtures using the normal scale-mixture form.

    ``x_i | V_i, z_i = j ~ N(mu_j, V_i sigma2_j)`` with
    ``V_i ~ IG(nu_j/2, nu_j/2)``.  With ``nu_known`` the degrees of freedom
    are fixed; otherwise each sweep ends with :func:`nu_metropolis_step`.
    """
    config = config or ChainConfig()
    family = StudentT()
    family.check_data(data)
    if data.n == 0:
        raise UsageError("no observations")
    prior = prior or StudentTPrior.default(J, data)
    if not isinstance(prior, StudentTPrior):
        raise ValidationError("gibbs_t_mixture needs a StudentTPrior")
    rng = nm.make_rng(config.seed)
    x = data.values
    alpha = np.asarray(prior.alpha, dtype=float)
    mu_var = 2.0 * prior.sigma0_sq
    rec = _Recorder(config, J, 3, data.n)

    if nu_known is not None:
        nu = np.broadcast_to(np.asarray(nu_known, dtype=float), (J,)).copy()
        if np.any(nu <= 0):
            raise ValidationError("degrees of freedom must be positive")
    if initial is None:
        z = _uniform_allocation(data.n, J, rng)
        V = np.ones(data.n)
        if nu_known is None:
            nu = rng.gamma(prior.alpha_nu, 1.0 / prior.beta_nu, J)
        n_j = np.bincount(z, minlength=J)
        p = _dirichlet(alpha + n_j, rng)
        mu = np.array([x[z == j].mean() if n_j[j] else prior.mu0 for j in range(J)])
        s2 = np.array([x[z == j].var() if n_j[j] > 1 else prior.sigma0_sq for j in range(J)])
        s2 = np.maximum(s2, 1e-6 * prior.sigma0_sq)
    else:
        p = initial.weights.copy()
        mu, s2 = initial.components[:, 0].copy(), initial.components[:, 1].copy()
        if nu_known is None:
            nu = initial.components[:, 2].copy()

    accepted = np.zeros(J)
    for t in range(config.iterations):
        z = _draw_allocations(family, p, np.column_stack([mu, s2, nu]), data, rng)
        shape, scale = latent_scale_params(x, mu[z], s2[z], nu[z])
        V = scale / rng.gamma(shape)
        n_j = np.bincount(z, minlength=J)
        p = _dirichlet(alpha + n_j, rng)

        resid = np.bincount(z, weights=(x - mu[z]) ** 2 / V, minlength=J)
        s2 = (prior.beta_sigma + 0.5 * resid) / rng.gamma(prior.alpha_sigma + 0.5 * n_j)

        siv = np.bincount(z, weights=1.0 / V, minlength=J)
        sxv = np.bincount(z, weights=x / V, minlength=J)
        denom = s2 + mu_var * siv
        mean = (prior.mu0 * s2 + mu_var * sxv) / denom
        var = mu_var * s2 / denom
        mu = rng.normal(mean, np.sqrt(var))

        if nu_known is None:
            nu, acc = nu_metropolis_step(nu, V, z, prior, rng, config.rw_scale_nu)
            accepted += acc
        rec.record(t, p, np.column_stack([mu, s2, nu]), z, V)
    acceptance = {} if nu_known is not None else {"nu": float(accepted.sum() / (J * config.iterations))}
    return rec.trace(family, data, acceptance)


# ---------------------------------------------------------------------------
# random-walk Metropolis-Hastings


def _mh_log_target(family, prior, data, lw, u, J):
    """Log target in the sampler's coordinates ``(log w, u)``.

    Weights are overparameterised as ``p_j = w_j / sum(w)`` with
    ``w_j ~ Gamma(alpha_j, 1)``, which induces exactly the Dirichlet prior on
    ``p``; ``log w`` and ``u`` are unconstrained, so the target carries the
    Jacobians of both maps.
    """
    comps = family.from_unconstrained(u, J)
    if not np.all(np.isfinite(comps)):
        return -np.inf, None
    logp = lw - nm.log_sum_exp(lw)
    try:
        lf = family.log_densities(comps, data)
    except ValidationError:
        return -np.inf, None
    ll = float(nm.log_sum_exp_rows(lf + logp[None, :], axis=1).sum())
    lp = family.log_prior_components(prior, comps) + family.log_jacobian(comps)
    lpw = float(np.sum(prior.alpha * lw - np.exp(lw)))
    val = ll + lp + lpw
    return (val if np.isfinite(val) else -np.inf), ll


def mh_mixture(data, J, family, prior, config=None, initial=None, max_init_tries=1000):
    """Random-walk Metropolis-Hastings on unconstrained coordinates.

    Blocks are updated in turn: the log-weights ``log w`` first, then each
    parameter block of the family (means, log-variances, log-rates, ...).
    Every block uses a Gaussian step of scale ``config.rw_scale`` except
    degrees of freedom, which use ``config.rw_scale_nu``.
    """
    config = config or ChainConfig()
    family.check_data(data)
    if data.n == 0:
        raise UsageError("no observations")
    rng = nm.make_rng(config.seed)
    # random-walk chains carry no allocations
    rec = _Recorder(replace(config, store_allocations=False, store_latent_scales=False), J, family.k, data.n)

    if initial is None:
        for _ in range(max_init_tries):
            start = sample_prior(family, prior, J, rng)
            lw = np.log(start.weights)
            u = family.to_unconstrained(start.components)
            cur, _ = _mh_log_target(family, prior, data, lw, u, J)
            if np.isfinite(cur):
                break
        else:
            raise NumericalError("could not find a starting point with positive likelihood")
    else:
        lw = np.log(initial.weights)
        u = family.to_unconstrained(initial.components)
        cur, _ = _mh_log_target(family, prior, data, lw, u, J)
        if not np.isfinite(cur):
            raise NumericalError("zero likelihood or prior at the initial point")

    blocks = ([("weights", None, False)] if J > 1 else []) + family.blocks(J)
    accepted = {name: 0 for name, _, _ in blocks}
    for t in range(config.iterations):
        for name, idx, nu_scale in blocks:
            scale = config.rw_scale_nu if nu_scale else config.rw_scale
            if idx is None:
                lw_new = lw + scale * rng.standard_normal(J)
                u_new = u
            else:
                lw_new = lw
                u_new = u.copy()
                u_new[idx] = u[idx] + scale * rng.standard_normal(idx.size)
            new, _ = _mh_log_target(family, prior, data, lw_new, u_new, J)
            if np.log(rng.random()) < new - cur:
                lw, u, cur = lw_new, u_new, new
                accepted[name] += 1
        w = np.exp(lw - lw.max())
        rec.record(t, w / w.sum(), family.from_unconstrained(u, J))
    acceptance = {k: v / config.iterations for k, v in accepted.items()}
    return rec.trace(family, data, acceptance)


def mh_acceptance_ratio(family, prior, data, current, proposal, J):
    """``log r`` for moving between two points given in sampler coordinates.

    ``current`` and ``proposal`` are ``(log w, u)`` pairs; symmetric
    random-walk proposals cancel, so only the target ratio remains.
    """
    a, _ = _mh_log_target(family, prior, data, *current, J)
    b, _ = _mh_log_target(family, prior, data, *proposal, J)
    return b - a


def with_seed(config, seed):
    return replace(config, seed=seed)
