"""Mixture families, parameters, priors and likelihoods.

A mixture with ``J`` components is described by a :class:`MixtureParams`
(weights plus a ``(J, k)`` array of component parameters) together with a
:class:`ComponentFamily` that knows how to read that array.  Allocations are
plain integer arrays with labels ``0 .. J-1``.

Each family also carries its complete-data conjugate posterior: given an
allocation ``z`` the posterior of ``(p, theta)`` factorises into a Dirichlet
on the weights and standard conjugate laws on the component parameters.  The
Gibbs samplers draw from these laws and the Rao-Blackwellised Chib estimator
evaluates their densities, so both sides share a single implementation of
the block factorisation.
"""

import hashlib
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, xlogy

from . import numerics as nm
from .errors import UnsupportedFamilyError, UsageError, ValidationError

DATA_KINDS = ("univariate-real", "univariate-count", "multinomial-rows", "binary-matrix")


# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True, eq=False)
class Dataset:
    """Observations ``x_1..x_n`` of one of the supported kinds.

    ``values`` is 1-d for univariate kinds and ``(n, m)`` / ``(n, d)`` for
    multinomial rows and binary matrices.  ``totals`` holds the per-row
    totals ``d_i`` of multinomial rows (they may differ between rows).
    """

    kind: str
    values: np.ndarray
    totals: np.ndarray = None

    def __post_init__(self):
        if self.kind not in DATA_KINDS:
            raise ValidationError(f"unknown data kind {self.kind!r}")
        v = np.array(self.values)
        if self.kind == "univariate-real":
            v = v.astype(float)
            if v.ndim != 1 or not np.all(np.isfinite(v)):
                raise ValidationError("univariate-real data must be a finite 1-d array")
        elif self.kind == "univariate-count":
            if v.ndim != 1 or np.any(v < 0) or np.any(v != np.floor(v)):
                raise ValidationError("count data must be nonnegative integers")
            v = v.astype(np.int64)
        else:
            if v.ndim != 2 or v.shape[1] < 1:
                raise ValidationError(f"{self.kind} data must be a 2-d array")
            if np.any(v < 0) or np.any(v != np.floor(v)):
                raise ValidationError(f"{self.kind} entries must be nonnegative integers")
            v = v.astype(np.int64)
            if self.kind == "binary-matrix" and np.any(v > 1):
                raise ValidationError("binary-matrix entries must be 0 or 1")
        totals = None
        if self.kind == "multinomial-rows":
            totals = v.sum(axis=1)
            if self.totals is not None and not np.array_equal(np.asarray(self.totals), totals):
                raise ValidationError("multinomial rows do not sum to their stated totals")
            totals.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "totals", totals)

    @property
    def n(self):
        return self.values.shape[0]

    @property
    def width(self):
        return 1 if self.values.ndim == 1 else self.values.shape[1]

    def checksum(self):
        h = hashlib.sha256(self.kind.encode())
        h.update(np.ascontiguousarray(self.values).tobytes())
        h.update(str(self.values.shape).encode())
        return h.hexdigest()

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and self.kind == other.kind
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
        )

    def subset(self, index):
        return Dataset(self.kind, self.values[np.asarray(index)])

    @classmethod
    def real(cls, values):
        return cls("univariate-real", values)

    @classmethod
    def counts(cls, values):
        return cls("univariate-count", values)

    @classmethod
    def multinomial(cls, rows):
        return cls("multinomial-rows", rows)

    @classmethod
    def binary(cls, rows):
        return cls("binary-matrix", rows)


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True, eq=False)
class MixtureParams:
    """Weights on the simplex plus a ``(J, k)`` array of component parameters.

    Zero weights are representable (they are on the boundary of the prior
    support and get log prior ``-inf``); negative weights or weights that do
    not sum to one are rejected.
    """

    weights: np.ndarray
    components: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).ravel()
        c = np.array(self.components, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        if w.size < 1 or c.ndim != 2 or c.shape[0] != w.size:
            raise ValidationError(
                f"need J weights and J component rows, got {w.shape} and {c.shape}"
            )
        if np.any(w < 0) or not np.all(np.isfinite(w)) or abs(w.sum() - 1.0) > 1e-12 * max(1, w.size):
            raise ValidationError(f"weights are not a probability vector: {w!r}")
        if not np.all(np.isfinite(c)):
            raise ValidationError("component parameters must be finite")
        w.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "components", c)

    @property
    def J(self):
        return self.weights.size

    def permute(self, perm):
        """Component ``l`` of the result is component ``perm[l]`` of ``self``."""
        perm = np.asarray(perm)
        return MixtureParams(self.weights[perm], self.components[perm])

    def is_interior(self):
        return bool(np.all(self.weights > 0))

    def __eq__(self, other):
        return (
            isinstance(other, MixtureParams)
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.components, other.components)
        )

    def __repr__(self):
        return f"MixtureParams(weights={self.weights.tolist()}, components={self.components.tolist()})"


def validate_allocation(z, n, J):
    z = np.asarray(z)
    if z.shape != (n,):
        raise ValidationError(f"allocation must have length {n}, got shape {z.shape}")
    if z.size and (z.min() < 0 or z.max() >= J or not np.issubdtype(z.dtype, np.integer)):
        raise ValidationError(f"allocation labels must be integers in 0..{J - 1}")
    return z


def allocation_counts(z, J):
    return np.bincount(np.asarray(z), minlength=J)


# ---------------------------------------------------------------------------
# priors


def _as_vec(v, J, name):
    a = np.broadcast_to(np.asarray(v, dtype=float), (J,)).copy()
    _check_proper(name, a)
    return a


def _check_proper(name, a):
    a = np.asarray(a, dtype=float)
    if not (np.all(np.isfinite(a)) and np.all(a > 0)):
        raise ValidationError(
            f"{name}: hyperparameters must be strictly positive and finite "
            "(improper priors are not allowed for mixtures)"
        )


@dataclass(frozen=True, eq=False)
class PoissonPrior:
    """Dirichlet(alpha) on weights, Gamma(shape_j, rate_j) on each rate.

    ``shape = 1`` gives the exponential ``Exp(rate_j)`` prior.
    """

    alpha: np.ndarray
    rate: np.ndarray
    shape: np.ndarray

    @classmethod
    def make(cls, J, alpha=1.0, rate=1.0, shape=1.0):
        return cls(_as_vec(alpha, J, "alpha"), _as_vec(rate, J, "rate"), _as_vec(shape, J, "shape"))


@dataclass(frozen=True, eq=False)
class MultinomialPrior:
    """Dirichlet(alpha) on weights, Dirichlet(q_alpha[j]) on each profile."""

    alpha: np.ndarray
    q_alpha: np.ndarray

    @classmethod
    def make(cls, J, m, alpha=1.0, q_alpha=0.5):
        qa = np.broadcast_to(np.asarray(q_alpha, dtype=float), (J, m)).copy()
        _check_proper("q_alpha", qa)
        return cls(_as_vec(alpha, J, "alpha"), qa)


@dataclass(frozen=True, eq=False)
class BernoulliPrior:
    """Dirichlet(alpha) on weights, Beta(a[j,v], b[j,v]) on each q_jv."""

    alpha: np.ndarray
    a: np.ndarray
    b: np.ndarray

    @classmethod
    def make(cls, J, d, alpha=1.0, a=0.5, b=0.5):
        aa = np.broadcast_to(np.asarray(a, dtype=float), (J, d)).copy()
        bb = np.broadcast_to(np.asarray(b, dtype=float), (J, d)).copy()
        _check_proper("a", aa)
        _check_proper("b", bb)
        return cls(_as_vec(alpha, J, "alpha"), aa, bb)


@dataclass(frozen=True, eq=False)
class NormalPrior:
    """Conjugate prior for normal mixtures.

    ``p ~ D(alpha)``, ``mu_j | sigma2 ~ N(mean, var_ratio * sigma2)`` and the
    precision ``1/sigma2 ~ Gamma(prec_shape, prec_rate)``.  The defaults are
    ``D(1,..,1)``, ``N(0, 10 sigma2)`` and ``Exp(1/2)``.
    """

    alpha: np.ndarray
    mean: float = 0.0
    var_ratio: float = 10.0
    prec_shape: float = 1.0
    prec_rate: float = 0.5

    @classmethod
    def make(cls, J, alpha=1.0, mean=0.0, var_ratio=10.0, prec_shape=1.0, prec_rate=0.5):
        _check_proper("normal prior", [var_ratio, prec_shape, prec_rate])
        if not math.isfinite(mean):
            raise ValidationError("prior mean must be finite")
        return cls(_as_vec(alpha, J, "alpha"), float(mean), float(var_ratio), float(prec_shape), float(prec_rate))


@dataclass(frozen=True, eq=False)
class StudentTPrior:
    """Prior for Student-t mixtures.

    ``mu_j ~ N(mu0, 2 sigma0_sq)``, ``sigma2_j ~ IG(alpha_sigma, beta_sigma)``,
    ``nu_j ~ Gamma(alpha_nu, beta_nu)`` (rate parameterisation) and
    ``p ~ D(alpha)``.
    """

    alpha: np.ndarray
    mu0: float
    sigma0_sq: float
    alpha_sigma: float = 1.0
    beta_sigma: float = 1.0
    alpha_nu: float = 5.0
    beta_nu: float = 2.0

    @classmethod
    def make(cls, J, mu0, sigma0_sq, alpha=1.0, alpha_sigma=1.0, beta_sigma=1.0, alpha_nu=5.0, beta_nu=2.0):
        _check_proper("student-t prior", [sigma0_sq, alpha_sigma, beta_sigma, alpha_nu, beta_nu])
        if not math.isfinite(mu0):
            raise ValidationError("mu0 must be finite")
        return cls(
            _as_vec(alpha, J, "alpha"), float(mu0), float(sigma0_sq),
            float(alpha_sigma), float(beta_sigma), float(alpha_nu), float(beta_nu),
        )

    @classmethod
    def default(cls, J, data, **kw):
        x = np.asarray(data.values, dtype=float)
        return cls.make(J, float(x.mean()), float(x.var()), **kw)


def log_dirichlet(p, alpha):
    """Dirichlet log density w.r.t. the first J-1 coordinates (0 when J=1)."""
    p = np.asarray(p, dtype=float)
    alpha = np.asarray(alpha, dtype=float)
    if p.shape[-1] == 1:
        return np.zeros(p.shape[:-1]) if p.ndim > 1 else 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        out = gammaln(alpha.sum(-1)) - gammaln(alpha).sum(-1) + ((alpha - 1) * np.log(p)).sum(-1)
    out = np.where(np.all(p > 0, axis=-1), out, -np.inf)
    return out if np.ndim(out) else float(out)


def _log_gamma_pdf(x, shape, rate):
    with np.errstate(divide="ignore", invalid="ignore"):
        return shape * np.log(rate) - gammaln(shape) + (shape - 1) * np.log(x) - rate * x


def _log_beta_pdf(x, a, b):
    with np.errstate(divide="ignore", invalid="ignore"):
        return gammaln(a + b) - gammaln(a) - gammaln(b) + (a - 1) * np.log(x) + (b - 1) * np.log1p(-x)


def _log_normal_pdf(x, mean, var):
    # far-tail points overflow to -inf, which is the right log density
    with np.errstate(over="ignore"):
        return -0.5 * (nm.LOG_2PI + np.log(var)) - 0.5 * (x - mean) ** 2 / var


# ---------------------------------------------------------------------------
# families


class ComponentFamily:
    """Behaviour shared by every component family.

    Subclasses define the component parameter columns and implement the
    per-observation log densities, the prior and (where one exists) the
    complete-data conjugate posterior.
    """

    name = "abstract"
    data_kind = None
    conjugate_discrete = False
    gibbs_conjugate = False

    # per-component parameter columns and which of them are positive scales
    param_names = ()
    log_scale_columns = ()

    def __eq__(self, other):
        return type(self) is type(other) and self.__dict__ == other.__dict__

    def __hash__(self):
        return hash((type(self), tuple(sorted(self.__dict__.items()))))

    def __repr__(self):
        args = ", ".join(f"{k}={v!r}" for k, v in self.__dict__.items())
        return f"{type(self).__name__}({args})"

    @property
    def k(self):
        return len(self.param_names)

    def check_data(self, data):
        if data.kind != self.data_kind:
            raise ValidationError(f"{self.name} mixtures need {self.data_kind} data, got {data.kind}")

    def check_components(self, components):
        c = np.asarray(components, dtype=float)
        if c.ndim != 2 or c.shape[1] != self.k:
            raise ValidationError(f"{self.name} components must have shape (J, {self.k}), got {c.shape}")
        return c

    def log_densities(self, components, data):
        """``(n, J)`` array of ``log f(x_i | theta_j)``."""
        raise NotImplementedError

    def log_prior_components(self, prior, components):
        raise NotImplementedError

    def sample_prior_components(self, prior, J, rng):
        raise NotImplementedError

    def simulate(self, components, z, rng, totals=None):
        raise NotImplementedError

    def default_prior(self, J, data=None):
        raise NotImplementedError

    def log_densities_batch(self, components, data):
        """``(D, n, J)`` log densities for a stack of ``D`` component arrays."""
        return np.stack([self.log_densities(c, data) for c in components])

    def sample_prior_batch(self, prior, J, size, rng):
        """``(size, J, k)`` independent draws of the component parameters."""
        return np.stack([self.sample_prior_components(prior, J, rng) for _ in range(size)])

    # flat views used by traces and reports
    def columns(self, J):
        return [f"{name}.{j + 1}" for name in self.param_names for j in range(J)]

    def flatten(self, components):
        return np.asarray(components, dtype=float).T.ravel()

    def unflatten(self, row, J):
        return np.asarray(row, dtype=float).reshape(self.k, J).T

    # unconstrained coordinates (random-walk proposals, Gaussian auxiliaries)
    def to_unconstrained(self, components):
        raise NotImplementedError

    def from_unconstrained(self, u, J):
        raise NotImplementedError

    def log_jacobian(self, components):
        """``log |d theta / d u|`` at ``components``."""
        raise NotImplementedError

    def blocks(self, J):
        """Random-walk blocks as ``(name, index array into the flat u, use_nu_scale)``."""
        raise NotImplementedError

    def relabel_features(self, components):
        c = np.array(components, dtype=float)
        for col in self.log_scale_columns:
            c[:, col] = np.log(c[:, col])
        return c

    # complete-data conjugate posterior
    def suff_stats(self, data, z, J):
        raise UnsupportedFamilyError(f"{self.name} has no conjugate complete-data posterior")

    def sample_conditional(self, prior, stats, rng):
        raise UnsupportedFamilyError(f"{self.name} has no conjugate complete-data posterior")

    def conditional_log_density(self, prior, stats, components):
        raise UnsupportedFamilyError(f"{self.name} has no conjugate complete-data posterior")


class Poisson(ComponentFamily):
    name = "poisson"
    data_kind = "univariate-count"
    conjugate_discrete = True
    gibbs_conjugate = True
    param_names = ("lambda",)
    log_scale_columns = (0,)

    def check_components(self, components):
        c = super().check_components(components)
        if np.any(c <= 0):
            raise ValidationError("Poisson rates must be positive")
        return c

    def log_densities(self, components, data):
        lam = self.check_components(components)[:, 0]
        x = data.values.astype(float)[:, None]
        return xlogy(x, lam[None, :]) - lam[None, :] - gammaln(x + 1.0)

    def log_densities_batch(self, components, data):
        lam = np.asarray(components)[:, None, :, 0]
        x = data.values.astype(float)[None, :, None]
        return xlogy(x, lam) - lam - gammaln(x + 1.0)

    def sample_prior_batch(self, prior, J, size, rng):
        return rng.gamma(prior.shape, 1.0 / prior.rate, (size, J))[..., None]

    def default_prior(self, J, data=None):
        return PoissonPrior.make(J)

    def log_prior_components(self, prior, components):
        lam = components[:, 0]
        if np.any(lam <= 0):
            return -np.inf
        return float(_log_gamma_pdf(lam, prior.shape, prior.rate).sum())

    def sample_prior_components(self, prior, J, rng):
        return rng.gamma(prior.shape, 1.0 / prior.rate)[:, None]

    def simulate(self, components, z, rng, totals=None):
        return rng.poisson(np.asarray(components)[z, 0])

    def to_unconstrained(self, components):
        return np.log(np.asarray(components)[:, 0])

    def from_unconstrained(self, u, J):
        return np.exp(np.asarray(u))[:, None]

    def log_jacobian(self, components):
        return float(np.log(np.asarray(components)[:, 0]).sum())

    def blocks(self, J):
        return [("lambda", np.arange(J), False)]

    # conjugate machinery: R(x) = x
    def stat_vectors(self, data):
        return data.values.astype(np.int64)[:, None]

    def log_stat_weights(self, prior, counts, stats):
        """Per-component log K-ratio for arrays of counts (E, J) and stats (E, J, 1)."""
        S = stats[..., 0].astype(float)
        n = counts.astype(float)
        a, b = prior.shape, prior.rate
        return (a * np.log(b) - gammaln(a) + gammaln(a + S) - (a + S) * np.log(b + n)).sum(-1)

    def data_log_constant(self, data):
        return -float(gammaln(data.values.astype(float) + 1.0).sum())

    def suff_stats(self, data, z, J):
        x = data.values.astype(float)
        return {"n": np.bincount(z, minlength=J), "S": np.bincount(z, weights=x, minlength=J)}

    def stats_batch(self, data, Z, J):
        onehot = _onehot(Z, J)
        x = data.values.astype(float)
        return {"n": onehot.sum(1), "S": np.einsum("tij,i->tj", onehot, x)}

    def sample_conditional(self, prior, stats, rng):
        shape = prior.shape + stats["S"]
        rate = prior.rate + stats["n"]
        return rng.gamma(shape, 1.0 / rate)[:, None]

    def conditional_log_density(self, prior, stats, components):
        lam = components[..., 0]
        return _log_gamma_pdf(lam, prior.shape + stats["S"], prior.rate + stats["n"]).sum(-1)

    def posterior_mean_given_stats(self, prior, counts, stats):
        return ((prior.shape + stats[..., 0]) / (prior.rate + counts))[..., None]


class Multinomial(ComponentFamily):
    """Multinomial profile ``q_j`` over ``m`` modalities."""

    name = "multinomial"
    data_kind = "multinomial-rows"
    conjugate_discrete = True
    gibbs_conjugate = True

    def __init__(self, m):
        if int(m) < 2:
            raise ValidationError("a multinomial family needs m >= 2 modalities")
        self.m = int(m)

    @property
    def param_names(self):
        return tuple(f"q{v + 1}" for v in range(self.m))

    def columns(self, J):
        return [f"q.{j + 1}.{v + 1}" for j in range(J) for v in range(self.m)]

    def flatten(self, components):
        return np.asarray(components, dtype=float).ravel()

    def unflatten(self, row, J):
        return np.asarray(row, dtype=float).reshape(J, self.m)

    def check_data(self, data):
        super().check_data(data)
        if data.width != self.m:
            raise ValidationError(f"expected {self.m} columns, got {data.width}")

    def check_components(self, components):
        c = super().check_components(components)
        if np.any(c < 0) or np.any(np.abs(c.sum(1) - 1) > 1e-10):
            raise ValidationError("multinomial profiles must lie on the simplex")
        return c

    def log_densities(self, components, data):
        q = self.check_components(components)
        x = data.values.astype(float)
        const = gammaln(x.sum(1) + 1.0) - gammaln(x + 1.0).sum(1)
        with np.errstate(divide="ignore"):
            logq = np.log(q)
        ll = np.where(x[:, None, :] > 0, x[:, None, :] * logq[None, :, :], 0.0).sum(-1)
        return ll + const[:, None]

    def log_densities_batch(self, components, data):
        x = data.values.astype(float)
        const = gammaln(x.sum(1) + 1.0) - gammaln(x + 1.0).sum(1)
        with np.errstate(divide="ignore"):
            logq = np.log(np.asarray(components))  # (D, J, m)
        out = np.zeros((logq.shape[0], data.n, logq.shape[1]))
        for v in range(self.m):
            xv = x[None, :, v, None]
            out += np.where(xv > 0, xv * logq[:, None, :, v], 0.0)
        return out + const[None, :, None]

    def sample_prior_batch(self, prior, J, size, rng):
        return np.stack([rng.dirichlet(a, size) for a in prior.q_alpha], axis=1)

    def default_prior(self, J, data=None):
        return MultinomialPrior.make(J, self.m)

    def log_prior_components(self, prior, components):
        return float(np.sum([log_dirichlet(q, a) for q, a in zip(components, prior.q_alpha)]))

    def sample_prior_components(self, prior, J, rng):
        return np.array([rng.dirichlet(a) for a in prior.q_alpha])

    def simulate(self, components, z, rng, totals=None):
        return np.array([rng.multinomial(int(t), components[j]) for j, t in zip(z, totals)])

    def to_unconstrained(self, components):
        q = np.asarray(components)
        return (np.log(q[:, :-1]) - np.log(q[:, -1:])).ravel()

    def from_unconstrained(self, u, J):
        u = np.asarray(u).reshape(J, self.m - 1)
        full = np.concatenate([u, np.zeros((J, 1))], axis=1)
        full -= full.max(1, keepdims=True)
        e = np.exp(full)
        return e / e.sum(1, keepdims=True)

    def log_jacobian(self, components):
        return float(np.log(np.asarray(components)).sum())

    def blocks(self, J):
        return [("q", np.arange(J * (self.m - 1)), False)]

    def relabel_features(self, components):
        return np.array(components, dtype=float)

    def stat_vectors(self, data):
        return data.values.astype(np.int64)

    def log_stat_weights(self, prior, counts, stats):
        S = stats.astype(float)
        a = prior.q_alpha
        per = (
            gammaln(a.sum(-1)) - gammaln(a).sum(-1)
            + gammaln(a + S).sum(-1) - gammaln(a.sum(-1) + S.sum(-1))
        )
        return per.sum(-1)

    def data_log_constant(self, data):
        x = data.values.astype(float)
        return float((gammaln(x.sum(1) + 1.0) - gammaln(x + 1.0).sum(1)).sum())

    def suff_stats(self, data, z, J):
        x = data.values.astype(float)
        S = np.zeros((J, self.m))
        np.add.at(S, z, x)
        return {"n": np.bincount(z, minlength=J), "S": S}

    def stats_batch(self, data, Z, J):
        onehot = _onehot(Z, J)
        return {"n": onehot.sum(1), "S": np.einsum("tij,iv->tjv", onehot, data.values.astype(float))}

    def sample_conditional(self, prior, stats, rng):
        return np.array([rng.dirichlet(a) for a in prior.q_alpha + stats["S"]])

    def conditional_log_density(self, prior, stats, components):
        a = prior.q_alpha + stats["S"]
        q = np.asarray(components)
        with np.errstate(divide="ignore"):
            out = gammaln(a.sum(-1)) - gammaln(a).sum(-1) + ((a - 1) * np.log(q)).sum(-1)
        return out.sum(-1)

    def posterior_mean_given_stats(self, prior, counts, stats):
        a = prior.q_alpha + stats
        return a / a.sum(-1, keepdims=True)


class BernoulliProduct(ComponentFamily):
    """Latent class component: product of ``d`` independent Bernoullis."""

    name = "bernoulli"
    data_kind = "binary-matrix"
    conjugate_discrete = True
    gibbs_conjugate = True

    def __init__(self, d):
        if int(d) < 1:
            raise ValidationError("a Bernoulli-product family needs d >= 1 variables")
        self.d = int(d)

    @property
    def param_names(self):
        return tuple(f"q{v + 1}" for v in range(self.d))

    def columns(self, J):
        return [f"q.{j + 1}.{v + 1}" for j in range(J) for v in range(self.d)]

    def flatten(self, components):
        return np.asarray(components, dtype=float).ravel()

    def unflatten(self, row, J):
        return np.asarray(row, dtype=float).reshape(J, self.d)

    def check_data(self, data):
        super().check_data(data)
        if data.width != self.d:
            raise ValidationError(f"expected {self.d} binary columns, got {data.width}")

    def check_components(self, components):
        c = super().check_components(components)
        if np.any(c < 0) or np.any(c > 1):
            raise ValidationError("Bernoulli probabilities must lie in [0, 1]")
        return c

    def log_densities(self, components, data):
        q = self.check_components(components)
        x = data.values.astype(float)
        with np.errstate(divide="ignore"):
            lq, l1q = np.log(q), np.log1p(-q)
        a = np.where(x[:, None, :] > 0, lq[None], 0.0)
        b = np.where(x[:, None, :] < 1, l1q[None], 0.0)
        return (a + b).sum(-1)

    def log_densities_batch(self, components, data):
        with np.errstate(divide="ignore"):
            lq = np.log(np.asarray(components))  # (D, J, d)
            l1q = np.log1p(-np.asarray(components))
        x = data.values.astype(float)
        return np.einsum("iv,djv->dij", x, lq) + np.einsum("iv,djv->dij", 1.0 - x, l1q)

    def sample_prior_batch(self, prior, J, size, rng):
        return rng.beta(prior.a, prior.b, (size, J, self.d))

    def default_prior(self, J, data=None):
        return BernoulliPrior.make(J, self.d)

    def log_prior_components(self, prior, components):
        q = np.asarray(components)
        if np.any(q <= 0) or np.any(q >= 1):
            return -np.inf
        return float(_log_beta_pdf(q, prior.a, prior.b).sum())

    def sample_prior_components(self, prior, J, rng):
        return rng.beta(prior.a, prior.b)

    def simulate(self, components, z, rng, totals=None):
        q = np.asarray(components)[z]
        return (rng.random(q.shape) < q).astype(np.int64)

    def to_unconstrained(self, components):
        q = np.asarray(components)
        return (np.log(q) - np.log1p(-q)).ravel()

    def from_unconstrained(self, u, J):
        u = np.asarray(u).reshape(J, self.d)
        return 1.0 / (1.0 + np.exp(-u))

    def log_jacobian(self, components):
        q = np.asarray(components)
        return float((np.log(q) + np.log1p(-q)).sum())

    def blocks(self, J):
        return [("q", np.arange(J * self.d), False)]

    def relabel_features(self, components):
        return np.array(components, dtype=float)

    def stat_vectors(self, data):
        return data.values.astype(np.int64)

    def log_stat_weights(self, prior, counts, stats):
        s = stats.astype(float)
        nj = counts.astype(float)[..., None]
        a, b = prior.a, prior.b
        per = (
            gammaln(a + b) - gammaln(a) - gammaln(b)
            + gammaln(a + s) + gammaln(b + nj - s) - gammaln(a + b + nj)
        )
        return per.sum((-1, -2))

    def data_log_constant(self, data):
        return 0.0

    def suff_stats(self, data, z, J):
        x = data.values.astype(float)
        s = np.zeros((J, self.d))
        np.add.at(s, z, x)
        return {"n": np.bincount(z, minlength=J), "S": s}

    def stats_batch(self, data, Z, J):
        onehot = _onehot(Z, J)
        return {"n": onehot.sum(1), "S": np.einsum("tij,iv->tjv", onehot, data.values.astype(float))}

    def sample_conditional(self, prior, stats, rng):
        nj = stats["n"][:, None]
        return rng.beta(prior.a + stats["S"], prior.b + nj - stats["S"])

    def conditional_log_density(self, prior, stats, components):
        nj = stats["n"][..., None]
        s = stats["S"]
        return _log_beta_pdf(np.asarray(components), prior.a + s, prior.b + nj - s).sum((-1, -2))

    def posterior_mean_given_stats(self, prior, counts, stats):
        nj = counts[..., None]
        return (prior.a + stats) / (prior.a + prior.b + nj)


class Normal(ComponentFamily):
    """Normal components; columns ``(mu, sigma2)``.

    With ``shared_variance`` every row carries the same ``sigma2``.  The prior
    density is expressed in the precision ``1/sigma2`` (the coordinate in
    which the conjugate prior is stated), and so is the complete-data
    posterior density; both sides of any ratio use the same coordinates.
    """

    name = "normal"
    data_kind = "univariate-real"
    gibbs_conjugate = True
    param_names = ("mu", "sigma2")
    log_scale_columns = (1,)

    def __init__(self, shared_variance=True):
        self.shared_variance = bool(shared_variance)

    def columns(self, J):
        mus = [f"mu.{j + 1}" for j in range(J)]
        if self.shared_variance:
            return mus + ["sigma2"]
        return mus + [f"sigma2.{j + 1}" for j in range(J)]

    def flatten(self, components):
        c = np.asarray(components, dtype=float)
        if self.shared_variance:
            return np.concatenate([c[:, 0], c[:1, 1]])
        return c.T.ravel()

    def unflatten(self, row, J):
        row = np.asarray(row, dtype=float)
        if self.shared_variance:
            return np.column_stack([row[:J], np.full(J, row[J])])
        return row.reshape(2, J).T

    def check_components(self, components):
        c = super().check_components(components)
        if np.any(c[:, 1] <= 0):
            raise ValidationError("normal variances must be positive")
        if self.shared_variance and np.any(c[:, 1] != c[0, 1]):
            raise ValidationError("shared-variance normal mixture with unequal variances")
        return c

    def log_densities(self, components, data):
        c = self.check_components(components)
        x = data.values[:, None]
        return _log_normal_pdf(x, c[None, :, 0], c[None, :, 1])

    def log_densities_batch(self, components, data):
        c = np.asarray(components)
        x = data.values[None, :, None]
        return _log_normal_pdf(x, c[:, None, :, 0], c[:, None, :, 1])

    def sample_prior_batch(self, prior, J, size, rng):
        if self.shared_variance:
            s2 = np.repeat(1.0 / rng.gamma(prior.prec_shape, 1.0 / prior.prec_rate, (size, 1)), J, axis=1)
        else:
            s2 = 1.0 / rng.gamma(prior.prec_shape, 1.0 / prior.prec_rate, (size, J))
        mu = rng.normal(prior.mean, np.sqrt(prior.var_ratio * s2))
        return np.stack([mu, s2], axis=-1)

    def default_prior(self, J, data=None):
        return NormalPrior.make(J)

    def log_prior_components(self, prior, components):
        c = np.asarray(components)
        mu, s2 = c[:, 0], c[:, 1]
        if np.any(s2 <= 0):
            return -np.inf
        eta = 1.0 / s2
        mu_part = _log_normal_pdf(mu, prior.mean, prior.var_ratio * s2).sum()
        if self.shared_variance:
            return float(_log_gamma_pdf(eta[0], prior.prec_shape, prior.prec_rate) + mu_part)
        return float(_log_gamma_pdf(eta, prior.prec_shape, prior.prec_rate).sum() + mu_part)

    def sample_prior_components(self, prior, J, rng):
        if self.shared_variance:
            s2 = np.full(J, 1.0 / rng.gamma(prior.prec_shape, 1.0 / prior.prec_rate))
        else:
            s2 = 1.0 / rng.gamma(prior.prec_shape, 1.0 / prior.prec_rate, J)
        mu = rng.normal(prior.mean, np.sqrt(prior.var_ratio * s2))
        return np.column_stack([mu, s2])

    def simulate(self, components, z, rng, totals=None):
        c = np.asarray(components)[z]
        return rng.normal(c[:, 0], np.sqrt(c[:, 1]))

    def to_unconstrained(self, components):
        c = np.asarray(components)
        if self.shared_variance:
            return np.concatenate([c[:, 0], np.log(c[:1, 1])])
        return np.concatenate([c[:, 0], np.log(c[:, 1])])

    def from_unconstrained(self, u, J):
        u = np.asarray(u)
        if self.shared_variance:
            return np.column_stack([u[:J], np.full(J, np.exp(u[J]))])
        return np.column_stack([u[:J], np.exp(u[J:])])

    def log_jacobian(self, components):
        # density is stated in the precision: |d eta / d log sigma2| = eta
        s2 = np.asarray(components)[:, 1]
        if self.shared_variance:
            return float(-np.log(s2[0]))
        return float(-np.log(s2).sum())

    def blocks(self, J):
        nvar = 1 if self.shared_variance else J
        return [("mu", np.arange(J), False), ("sigma2", np.arange(J, J + nvar), False)]

    def suff_stats(self, data, z, J):
        x = data.values
        return {
            "n": np.bincount(z, minlength=J),
            "sx": np.bincount(z, weights=x, minlength=J),
            "sxx": np.bincount(z, weights=x * x, minlength=J),
        }

    def stats_batch(self, data, Z, J):
        onehot = _onehot(Z, J)
        x = data.values
        return {
            "n": onehot.sum(1),
            "sx": np.einsum("tij,i->tj", onehot, x),
            "sxx": np.einsum("tij,i->tj", onehot, x * x),
        }

    def _precision_posterior(self, prior, stats):
        n = stats["n"].astype(float)
        sx, sxx = stats["sx"], stats["sxx"]
        safe = np.where(n > 0, n, 1.0)
        ss_within = np.where(n > 0, sxx - sx * sx / safe, 0.0)
        shrink = np.where(n > 0, (sx - n * prior.mean) ** 2 / (safe * (1.0 + prior.var_ratio * n)), 0.0)
        per = np.maximum(ss_within, 0.0) + shrink
        if self.shared_variance:
            shape = prior.prec_shape + 0.5 * n.sum(-1)
            rate = prior.prec_rate + 0.5 * per.sum(-1)
        else:
            shape = prior.prec_shape + 0.5 * n
            rate = prior.prec_rate + 0.5 * per
        return shape, rate

    def _mean_posterior(self, prior, stats):
        tau = stats["n"] + 1.0 / prior.var_ratio
        return (stats["sx"] + prior.mean / prior.var_ratio) / tau, tau

    def sample_conditional(self, prior, stats, rng):
        shape, rate = self._precision_posterior(prior, stats)
        J = stats["n"].shape[-1]
        eta = rng.gamma(shape, 1.0 / rate)
        s2 = np.full(J, 1.0 / eta) if self.shared_variance else 1.0 / eta
        m, tau = self._mean_posterior(prior, stats)
        mu = rng.normal(m, np.sqrt(s2 / tau))
        return np.column_stack([mu, s2])

    def conditional_log_density(self, prior, stats, components):
        c = np.asarray(components)
        mu, s2 = c[..., 0], c[..., 1]
        shape, rate = self._precision_posterior(prior, stats)
        if self.shared_variance:
            eta_part = _log_gamma_pdf(1.0 / s2[..., 0], shape, rate)
        else:
            eta_part = _log_gamma_pdf(1.0 / s2, shape, rate).sum(-1)
        m, tau = self._mean_posterior(prior, stats)
        return eta_part + _log_normal_pdf(mu, m, s2 / tau).sum(-1)


class StudentT(ComponentFamily):
    """Location-scale Student-t components; columns ``(mu, sigma2, nu)``."""

    name = "student_t"
    data_kind = "univariate-real"
    param_names = ("mu", "sigma2", "nu")
    log_scale_columns = (1, 2)

    def check_components(self, components):
        c = super().check_components(components)
        if np.any(c[:, 1:] <= 0):
            raise ValidationError("t scales and degrees of freedom must be positive")
        return c

    def log_densities(self, components, data):
        c = self.check_components(components)
        return nm.student_t_logpdf(data.values[:, None], c[None, :, 2], c[None, :, 0], c[None, :, 1])

    def log_densities_batch(self, components, data):
        c = np.asarray(components)[:, None, :, :]
        return nm.student_t_logpdf(data.values[None, :, None], c[..., 2], c[..., 0], c[..., 1])

    def sample_prior_batch(self, prior, J, size, rng):
        mu = rng.normal(prior.mu0, math.sqrt(2.0 * prior.sigma0_sq), (size, J))
        s2 = prior.beta_sigma / rng.gamma(prior.alpha_sigma, 1.0, (size, J))
        nu = rng.gamma(prior.alpha_nu, 1.0 / prior.beta_nu, (size, J))
        return np.stack([mu, s2, nu], axis=-1)

    def default_prior(self, J, data=None):
        if data is None:
            raise UsageError("the Student-t default prior is centred on the data; pass data")
        return StudentTPrior.default(J, data)

    def log_prior_components(self, prior, components):
        c = np.asarray(components)
        mu, s2, nu = c[:, 0], c[:, 1], c[:, 2]
        if np.any(s2 <= 0) or np.any(nu <= 0):
            return -np.inf
        lp = _log_normal_pdf(mu, prior.mu0, 2.0 * prior.sigma0_sq).sum()
        lp += (
            prior.alpha_sigma * math.log(prior.beta_sigma) - gammaln(prior.alpha_sigma)
            - (prior.alpha_sigma + 1) * np.log(s2) - prior.beta_sigma / s2
        ).sum()
        lp += _log_gamma_pdf(nu, prior.alpha_nu, prior.beta_nu).sum()
        return float(lp)

    def sample_prior_components(self, prior, J, rng):
        mu = rng.normal(prior.mu0, math.sqrt(2.0 * prior.sigma0_sq), J)
        s2 = prior.beta_sigma / rng.gamma(prior.alpha_sigma, 1.0, J)
        nu = rng.gamma(prior.alpha_nu, 1.0 / prior.beta_nu, J)
        return np.column_stack([mu, s2, nu])

    def simulate(self, components, z, rng, totals=None):
        c = np.asarray(components)[z]
        return c[:, 0] + np.sqrt(c[:, 1]) * rng.standard_t(c[:, 2])

    def to_unconstrained(self, components):
        c = np.asarray(components)
        return np.concatenate([c[:, 0], np.log(c[:, 1]), np.log(c[:, 2])])

    def from_unconstrained(self, u, J):
        u = np.asarray(u).reshape(3, J)
        return np.column_stack([u[0], np.exp(u[1]), np.exp(u[2])])

    def log_jacobian(self, components):
        c = np.asarray(components)
        return float(np.log(c[:, 1]).sum() + np.log(c[:, 2]).sum())

    def blocks(self, J):
        return [
            ("mu", np.arange(J), False),
            ("sigma2", np.arange(J, 2 * J), False),
            ("nu", np.arange(2 * J, 3 * J), True),
        ]


def _onehot(Z, J):
    Z = np.asarray(Z)
    return (Z[..., None] == np.arange(J)).astype(float)


FAMILIES = {
    "poisson": Poisson,
    "multinomial": Multinomial,
    "bernoulli": BernoulliProduct,
    "normal": Normal,
    "student_t": StudentT,
}


def family_for(name, data=None, **kw):
    """Build a family from its name, inferring ``m``/``d`` from ``data``."""
    if name not in FAMILIES:
        raise ValidationError(f"unknown family {name!r}; choose from {sorted(FAMILIES)}")
    if name == "multinomial":
        return Multinomial(kw.get("m") or data.width)
    if name == "bernoulli":
        return BernoulliProduct(kw.get("d") or data.width)
    if name == "normal":
        return Normal(kw.get("shared_variance", True))
    return FAMILIES[name]()


# ---------------------------------------------------------------------------
# likelihoods and prior


def component_log_densities(family, params, data):
    family.check_data(data)
    return family.log_densities(params.components, data)


def observed_log_likelihood(family, params, data):
    """``sum_i log sum_j p_j f(x_i | theta_j)`` in O(nJ) operations."""
    lf = component_log_densities(family, params, data)
    with np.errstate(divide="ignore"):
        logp = np.log(params.weights)
    return float(nm.log_sum_exp_rows(lf + logp[None, :], axis=1).sum())


def complete_log_likelihood(family, params, data, z):
    """``sum_i [log p_{z_i} + log f(x_i | theta_{z_i})]``."""
    z = validate_allocation(z, data.n, params.J)
    lf = component_log_densities(family, params, data)
    with np.errstate(divide="ignore"):
        logp = np.log(params.weights)
    return float((logp[z] + lf[np.arange(data.n), z]).sum())


def log_prior(family, prior, params):
    """Log prior density: Dirichlet on weights plus the component prior."""
    if np.asarray(prior.alpha).size != params.J:
        raise ValidationError(f"prior is for {np.asarray(prior.alpha).size} components, params have {params.J}")
    family.check_components(params.components)
    lw = log_dirichlet(params.weights, prior.alpha)
    if lw == -np.inf:
        return -np.inf
    return float(lw + family.log_prior_components(prior, params.components))


def sample_prior(family, prior, J, rng):
    w = rng.dirichlet(prior.alpha) if J > 1 else np.ones(1)
    return MixtureParams(w / w.sum(), family.sample_prior_components(prior, J, rng))


def simulate_mixture(family, params, n, rng, totals=None):
    """Draw ``n`` observations and their labels from a mixture."""
    z = rng.choice(params.J, size=n, p=params.weights)
    x = family.simulate(params.components, z, rng, totals=totals)
    return Dataset(family.data_kind, x), z
