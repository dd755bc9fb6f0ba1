"""Log-space arithmetic, standard log-densities, samplers and the RNG contract.

All random draws in the package come from :func:`make_rng`, which wraps
numpy's PCG64 bit generator.  PCG64 is a fixed, documented algorithm
(O'Neill 2014, 128-bit LCG state with an XSL-RR output permutation), so a
given 64-bit seed reproduces the same stream on every platform for a fixed
numpy release.

Distribution parameterisations used throughout:

=================  ==========================  ===============================
family id          params                      density
=================  ==========================  ===============================
poisson            (rate,)                     rate^x e^-rate / x!
bernoulli          (prob,)                     prob^x (1-prob)^(1-x)
multinomial        (probs,)                    d!/prod(x!) prod(probs^x)
normal             (mean, var)
student_t          (df, loc, scale2)           location-scale t
gamma              (shape, rate)
exponential        (rate,)
inv_gamma          (shape, scale)              scale^a/G(a) x^(-a-1) e^(-scale/x)
beta               (a, b)
dirichlet          (alpha,)                    w.r.t. Lebesgue on the first J-1 coords
chi2               (df,)
inv_chi2           (df,)                       law of 1/X, X ~ chi2(df)
scaled_inv_chi2    (df, scale2)                inv_gamma(df/2, df*scale2/2)
=================  ==========================  ===============================
"""

import math

import numpy as np
from scipy.special import gammaln, xlogy

from .errors import NumericalError, UsageError, ValidationError

LOG_2PI = math.log(2.0 * math.pi)


def make_rng(seed):
    """Return the package's PCG64 generator for a 64-bit unsigned seed."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ValidationError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def log_sum_exp(terms):
    """Stable ``log(sum(exp(terms)))``.

    Returns ``-inf`` exactly when every term is ``-inf``.
    """
    t = np.asarray(terms, dtype=float).ravel()
    if t.size == 0:
        raise UsageError("log_sum_exp of an empty sequence")
    if np.isnan(t).any():
        raise NumericalError("log_sum_exp received NaN")
    m = t.max()
    if m == -np.inf:
        return -np.inf
    if m == np.inf:
        return np.inf
    return float(m + math.log(np.exp(t - m).sum()))


def log_mean_exp(terms):
    t = np.asarray(terms, dtype=float).ravel()
    return log_sum_exp(t) - math.log(t.size)


def log_sum_exp_rows(a, axis=-1):
    """Vectorised log-sum-exp along ``axis`` (all -inf slices give -inf)."""
    a = np.asarray(a, dtype=float)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def batch_means_stderr(x, n_batches=50):
    """Standard error of the mean of a correlated series by batch means."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 2:
        return float("nan")
    n_batches = max(2, min(n_batches, n))
    size = n // n_batches
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


# ---------------------------------------------------------------------------
# parameter checks


def _positive(name, *vals):
    for v in vals:
        a = np.asarray(v, dtype=float)
        if not (np.all(np.isfinite(a)) and np.all(a > 0)):
            raise ValidationError(f"{name}: parameters must be positive and finite, got {v!r}")


def _simplex(name, p, atol=1e-10):
    p = np.asarray(p, dtype=float)
    if p.ndim != 1 or p.size < 1 or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ValidationError(f"{name}: not a probability vector: {p!r}")
    if abs(p.sum() - 1.0) > atol:
        raise ValidationError(f"{name}: probabilities sum to {p.sum()!r}, not 1")
    return p


def _unit_interval(name, q):
    q = float(q)
    if not 0.0 <= q <= 1.0:
        raise ValidationError(f"{name}: probability outside [0, 1]: {q!r}")
    return q


# ---------------------------------------------------------------------------
# log densities


def _lp_poisson(params, x):
    (rate,) = params
    _positive("poisson", rate)
    if x < 0 or x != math.floor(x):
        return -np.inf
    return float(xlogy(x, rate) - rate - gammaln(x + 1.0))


def _lp_bernoulli(params, x):
    q = _unit_interval("bernoulli", params[0])
    if x not in (0, 1):
        return -np.inf
    with np.errstate(divide="ignore"):
        return float(np.log(q) if x == 1 else np.log1p(-q))


def _lp_multinomial(params, x):
    p = _simplex("multinomial", params[0])
    x = np.asarray(x, dtype=float)
    if x.shape != p.shape or np.any(x < 0) or np.any(x != np.floor(x)):
        return -np.inf
    if np.any((p == 0) & (x > 0)):
        return -np.inf
    return float(gammaln(x.sum() + 1.0) - gammaln(x + 1.0).sum() + xlogy(x, p).sum())


def _lp_normal(params, x):
    mean, var = params
    _positive("normal variance", var)
    return float(-0.5 * (LOG_2PI + math.log(var)) - 0.5 * (x - mean) ** 2 / var)


def student_t_logpdf(x, df, loc, scale2):
    """Vectorised location-scale Student-t log density."""
    z2 = (np.asarray(x, dtype=float) - loc) ** 2 / scale2
    return (
        gammaln(0.5 * (df + 1.0))
        - gammaln(0.5 * df)
        - 0.5 * np.log(np.pi * df * scale2)
        - 0.5 * (df + 1.0) * np.log1p(z2 / df)
    )


def _lp_student_t(params, x):
    df, loc, scale2 = params
    _positive("student_t", df, scale2)
    return float(student_t_logpdf(x, df, loc, scale2))


def _lp_gamma(params, x):
    shape, rate = params
    _positive("gamma", shape, rate)
    if x < 0:
        return -np.inf
    if x == 0:
        if shape == 1:
            return math.log(rate)
        return np.inf if shape < 1 else -np.inf
    return float(shape * math.log(rate) - gammaln(shape) + (shape - 1) * math.log(x) - rate * x)


def _lp_exponential(params, x):
    return _lp_gamma((1.0, params[0]), x)


def _lp_inv_gamma(params, x):
    shape, scale = params
    _positive("inv_gamma", shape, scale)
    if x <= 0:
        return -np.inf
    return float(shape * math.log(scale) - gammaln(shape) - (shape + 1) * math.log(x) - scale / x)


def _lp_beta(params, x):
    a, b = params
    _positive("beta", a, b)
    if not 0 < x < 1:
        return -np.inf
    return float(
        gammaln(a + b) - gammaln(a) - gammaln(b) + (a - 1) * math.log(x) + (b - 1) * math.log1p(-x)
    )


def _lp_dirichlet(params, x):
    alpha = np.asarray(params[0], dtype=float)
    _positive("dirichlet", alpha)
    x = np.asarray(x, dtype=float)
    if x.shape != alpha.shape or np.any(x <= 0) or abs(x.sum() - 1.0) > 1e-10:
        return -np.inf
    return float(gammaln(alpha.sum()) - gammaln(alpha).sum() + ((alpha - 1) * np.log(x)).sum())


def _lp_chi2(params, x):
    (df,) = params
    return _lp_gamma((0.5 * df, 0.5), x)


def _lp_inv_chi2(params, x):
    (df,) = params
    return _lp_inv_gamma((0.5 * df, 0.5), x)


def _lp_scaled_inv_chi2(params, x):
    df, scale2 = params
    _positive("scaled_inv_chi2", df, scale2)
    return _lp_inv_gamma((0.5 * df, 0.5 * df * scale2), x)


_LOG_DENSITIES = {
    "poisson": _lp_poisson,
    "bernoulli": _lp_bernoulli,
    "multinomial": _lp_multinomial,
    "normal": _lp_normal,
    "student_t": _lp_student_t,
    "gamma": _lp_gamma,
    "exponential": _lp_exponential,
    "inv_gamma": _lp_inv_gamma,
    "beta": _lp_beta,
    "dirichlet": _lp_dirichlet,
    "chi2": _lp_chi2,
    "inv_chi2": _lp_inv_chi2,
    "scaled_inv_chi2": _lp_scaled_inv_chi2,
}

FAMILIES = tuple(_LOG_DENSITIES)


def log_density(family, params, x):
    """Log density (or mass) of ``x`` under the named distribution.

    Raises :class:`ValidationError` for invalid parameters and returns
    ``-inf`` for points outside the support.
    """
    try:
        fn = _LOG_DENSITIES[family]
    except KeyError:
        raise ValidationError(f"unknown distribution {family!r}") from None
    return fn(tuple(params), x)


# ---------------------------------------------------------------------------
# samplers


def sample_distribution(family, params, rng, size=None):
    """Draw from the named distribution using ``rng`` (a numpy Generator)."""
    params = tuple(params)
    if family == "poisson":
        _positive(family, params[0])
        return rng.poisson(params[0], size)
    if family == "bernoulli":
        q = _unit_interval(family, params[0])
        return (rng.random(size) < q).astype(int)
    if family == "multinomial":
        p = _simplex(family, params[0])
        return rng.multinomial(int(params[1]) if len(params) > 1 else 1, p, size)
    if family == "normal":
        mean, var = params
        _positive(family, var)
        return rng.normal(mean, math.sqrt(var), size)
    if family == "student_t":
        df, loc, scale2 = params
        _positive(family, df, scale2)
        return loc + math.sqrt(scale2) * rng.standard_t(df, size)
    if family == "gamma":
        shape, rate = params
        _positive(family, shape, rate)
        return rng.gamma(shape, 1.0 / rate, size)
    if family == "exponential":
        _positive(family, params[0])
        return rng.exponential(1.0 / params[0], size)
    if family == "inv_gamma":
        shape, scale = params
        _positive(family, shape, scale)
        return scale / rng.gamma(shape, 1.0, size)
    if family == "beta":
        a, b = params
        _positive(family, a, b)
        return rng.beta(a, b, size)
    if family == "dirichlet":
        alpha = np.asarray(params[0], dtype=float)
        _positive(family, alpha)
        return rng.dirichlet(alpha, size)
    if family == "chi2":
        _positive(family, params[0])
        return rng.chisquare(params[0], size)
    if family == "inv_chi2":
        _positive(family, params[0])
        return 1.0 / rng.chisquare(params[0], size)
    if family == "scaled_inv_chi2":
        df, scale2 = params
        _positive(family, df, scale2)
        return df * scale2 / rng.chisquare(df, size)
    raise ValidationError(f"unknown distribution {family!r}")


def sample_categorical_log(logp, rng):
    """One categorical draw per row of an (n, J) array of log weights."""
    logp = np.asarray(logp, dtype=float)
    w = np.exp(logp - logp.max(axis=1, keepdims=True))
    cdf = np.cumsum(w, axis=1)
    u = rng.random(logp.shape[0]) * cdf[:, -1]
    z = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(z, logp.shape[1] - 1)
