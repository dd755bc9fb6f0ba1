"""Marginal likelihood (evidence) estimators for finite mixtures.

Chib's candidate identity ``m(x) = f(x | lam) pi(lam) / pi(lam | x)`` holds at
any point ``lam``.  The posterior ordinate is estimated by Rao-Blackwellisation
over the sampled allocations,

    pi_hat(lam | x) = 1/T sum_t pi(lam | x, z_t),

and the symmetrised version additionally averages over component
permutations of ``lam``:

    pi_hat(lam | x) = 1/(T |P|) sum_{sigma in P} sum_t pi(sigma(lam) | x, z_t).

When the chain has not visited the ``J!`` modes the plain estimate is off
by roughly ``log J!``; the symmetrised one is not.  Gelfand-Dey reciprocal
importance sampling and naive prior Monte Carlo are provided as
cross-checks, and :func:`exact_evidence` returns closed forms where they
exist.

All estimates here include every data constant (for instance ``1/x_i!``), so
they are directly comparable with ``exact_log_marginal(...,
include_data_constant=True)``.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from . import numerics as nm
from .errors import NumericalError, UnsupportedFamilyError, UsageError, ValidationError
from .exact import DEFAULT_ENTRY_CAP, exact_log_marginal
from .model import MixtureParams, Normal, log_dirichlet, log_prior, observed_log_likelihood, validate_allocation
from .relabel import all_permutations, approximate_map, reorder_trace

METHODS = ("chib-plain", "chib-symmetrized", "gelfand-dey", "prior-mc", "exact")
FULL_PERMUTATION_LIMIT = 720
DEFAULT_PERM_SAMPLE = 100


@dataclass(frozen=True)
class EvidenceResult:
    """One log marginal likelihood estimate.

    ``mixing_discrepancy`` is filled in on symmetrised Chib results and equals
    symmetrised minus plain on the same trace.
    """

    log_marginal: float
    method: str
    J: int
    permutations_used: int = 1
    mc_stderr: float = None
    mixing_discrepancy: float = None
    n_draws: int = None
    warning: str = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValidationError(f"unknown evidence method {self.method!r}")
        if not 1 <= self.permutations_used <= math.factorial(self.J):
            raise ValidationError("permutations_used must lie in [1, J!]")


# ---------------------------------------------------------------------------
# helpers


def _log_mean_with_se(terms):
    """``log mean exp(terms)`` and its delta-method standard error (batch means)."""
    terms = np.asarray(terms, dtype=float)
    if terms.size == 0:
        raise UsageError("no terms to average")
    m = terms.max()
    if not np.isfinite(m):
        raise NumericalError("every term is zero")
    scaled = np.exp(terms - m)
    mean = scaled.mean()
    se = nm.batch_means_stderr(scaled) / mean if terms.size > 1 else float("nan")
    return float(m + math.log(mean)), float(se)


def _iid_log_mean_with_se(terms):
    terms = np.asarray(terms, dtype=float)
    m = terms.max()
    if not np.isfinite(m):
        raise NumericalError("every term is zero")
    scaled = np.exp(terms - m)
    mean = scaled.mean()
    se = scaled.std(ddof=1) / math.sqrt(terms.size) / mean if terms.size > 1 else float("nan")
    return float(m + math.log(mean)), float(se)


def choose_permutations(J, perm_sample=None, seed=0):
    """Permutations used for symmetrisation, identity first.

    All ``J!`` permutations when ``J! <= 720`` and no sample size is given;
    otherwise the identity plus ``perm_sample - 1`` (default 99) distinct
    uniformly drawn permutations.
    """
    total = math.factorial(J)
    if perm_sample is None:
        if total <= FULL_PERMUTATION_LIMIT:
            return all_permutations(J)
        perm_sample = DEFAULT_PERM_SAMPLE
    if perm_sample < 1:
        raise UsageError("perm_sample must be at least 1")
    if perm_sample >= total:
        return all_permutations(J)
    rng = nm.make_rng(seed)
    chosen = [tuple(range(J))]
    seen = set(chosen)
    while len(chosen) < perm_sample:
        p = tuple(int(v) for v in rng.permutation(J))
        if p not in seen:
            seen.add(p)
            chosen.append(p)
    return np.array(chosen, dtype=np.int64)


# ---------------------------------------------------------------------------
# Chib


def rb_conditional_log_density(family, prior, params, z, data):
    """``log pi(p, theta | x, z)`` under the sampler's block factorisation.

    The density is ``D(p; alpha + n)`` times the family's complete-data
    conditional (for normal mixtures: Gamma on the precision, then normals
    on the means given the variance).  Points outside the support give
    ``-inf``.
    """
    z = validate_allocation(z, data.n, params.J)
    family.check_data(data)
    stats = family.suff_stats(data, z, params.J)
    alpha = np.asarray(prior.alpha, dtype=float)
    lw = log_dirichlet(params.weights, alpha + stats["n"])
    with np.errstate(divide="ignore", invalid="ignore"):
        lc = family.conditional_log_density(prior, stats, params.components)
    out = float(lw + lc)
    return out if not math.isnan(out) else -np.inf


def rb_terms(trace, data, prior, lambda_star, perms, chunk=2000):
    """``(P, T)`` array of ``log pi(sigma_p(lambda_star) | x, z_t)``."""
    if trace.allocations is None:
        raise UsageError("Chib's estimator needs a trace with stored allocations")
    family = trace.family
    if not family.gibbs_conjugate:
        raise UnsupportedFamilyError(f"no closed-form complete-data posterior for {family.name}")
    alpha = np.asarray(prior.alpha, dtype=float)
    T = len(trace)
    out = np.empty((len(perms), T))
    for a in range(0, T, chunk):
        stats = family.stats_batch(data, trace.allocations[a : a + chunk], trace.J)
        post_alpha = alpha[None, :] + stats["n"]
        for k, perm in enumerate(perms):
            lam = lambda_star.permute(perm)
            with np.errstate(divide="ignore", invalid="ignore"):
                v = log_dirichlet(np.broadcast_to(lam.weights, post_alpha.shape), post_alpha)
                v = v + family.conditional_log_density(prior, stats, lam.components)
            out[k, a : a + chunk] = np.where(np.isnan(v), -np.inf, v)
    return out


def resolve_lambda_star(trace, data, prior, lambda_star=None):
    """The evaluation point for Chib's identity.

    ``None`` or ``"map"`` selects the approximate MAP draw; ``"posterior-mean"``
    the component-wise mean of the MAP-relabeled trace; a
    :class:`MixtureParams` is used as given.
    """
    if lambda_star is None or lambda_star == "map":
        return approximate_map(trace, data, prior).params
    if lambda_star == "posterior-mean":
        relabeled = reorder_trace(trace, approximate_map(trace, data, prior))
        w = relabeled.weights.mean(0)
        comps = relabeled.components.mean(0)
        if trace.family.name == "multinomial":
            comps = comps / comps.sum(1, keepdims=True)
        return MixtureParams(w / w.sum(), comps)
    if isinstance(lambda_star, MixtureParams):
        return lambda_star
    raise ValidationError(f"lambda_star must be 'map', 'posterior-mean' or MixtureParams, got {lambda_star!r}")


def _chib_from_terms(loglik, lprior, terms):
    # per-iteration averages over permutations, then over iterations
    per_t = nm.log_sum_exp_rows(terms, axis=0) - math.log(terms.shape[0])
    log_post, se = _log_mean_with_se(per_t)
    return loglik + lprior - log_post, se


def chib_estimate(trace, data, prior, lambda_star=None, symmetrize=True, perm_sample=None, seed=0):
    """Chib's estimate of ``log m(x)`` from a Gibbs trace with allocations.

    ``lambda_star`` defaults to the approximate MAP draw of the trace (see
    :func:`resolve_lambda_star`).  Permutations act on ``lambda_star``; the
    allocations are left as sampled.  ``seed`` only matters when
    permutations are subsampled.
    """
    lambda_star = resolve_lambda_star(trace, data, prior, lambda_star)
    if lambda_star.J != trace.J:
        raise ValidationError("lambda_star and trace disagree on J")
    perms = choose_permutations(trace.J, perm_sample, seed) if symmetrize else all_permutations(trace.J)[:1]
    loglik = observed_log_likelihood(trace.family, lambda_star, data)
    lprior = log_prior(trace.family, prior, lambda_star)
    if not (np.isfinite(loglik) and np.isfinite(lprior)):
        raise NumericalError("lambda_star has zero likelihood or prior density")
    terms = rb_terms(trace, data, prior, lambda_star, perms)
    est, se = _chib_from_terms(loglik, lprior, terms)
    method = "chib-symmetrized" if symmetrize else "chib-plain"
    return EvidenceResult(est, method, trace.J, len(perms), se, n_draws=len(trace))


def chib_pair(trace, data, prior, lambda_star=None, perm_sample=None, seed=0):
    """Plain and symmetrised Chib estimates from one trace, sharing ``lambda_star``.

    The symmetrised result carries ``mixing_discrepancy`` (symmetrised minus
    plain).
    """
    lambda_star = resolve_lambda_star(trace, data, prior, lambda_star)
    perms = choose_permutations(trace.J, perm_sample, seed)
    loglik = observed_log_likelihood(trace.family, lambda_star, data)
    lprior = log_prior(trace.family, prior, lambda_star)
    if not (np.isfinite(loglik) and np.isfinite(lprior)):
        raise NumericalError("lambda_star has zero likelihood or prior density")
    terms = rb_terms(trace, data, prior, lambda_star, perms)
    plain_est, plain_se = _chib_from_terms(loglik, lprior, terms[:1])
    sym_est, sym_se = _chib_from_terms(loglik, lprior, terms)
    plain = EvidenceResult(plain_est, "chib-plain", trace.J, 1, plain_se, n_draws=len(trace))
    sym = EvidenceResult(
        sym_est, "chib-symmetrized", trace.J, len(perms), sym_se,
        mixing_discrepancy=sym_est - plain_est, n_draws=len(trace),
    )
    return plain, sym


# ---------------------------------------------------------------------------
# Gelfand-Dey


def unconstrained_coords(family, weights, components):
    """Map ``(p, theta)`` (batched on the leading axis) to ``(alr(p), u(theta))``."""
    weights = np.atleast_2d(weights)
    comps = np.asarray(components)
    if comps.ndim == 2:
        comps = comps[None]
    alr = np.log(weights[:, :-1]) - np.log(weights[:, -1:])
    u = np.array([family.to_unconstrained(c) for c in comps])
    return np.concatenate([alr, u.reshape(len(u), -1)], axis=1)


def log_coordinate_jacobian(family, weights, components):
    """``log |d phi / d lambda|`` with ``lambda`` in the prior's own coordinates."""
    weights = np.atleast_2d(weights)
    comps = np.asarray(components)
    if comps.ndim == 2:
        comps = comps[None]
    lw = -np.log(weights).sum(1) if weights.shape[1] > 1 else np.zeros(len(weights))
    return lw - np.array([family.log_jacobian(c) for c in comps])


@dataclass(frozen=True)
class GaussianAuxiliary:
    """Multivariate normal density on the unconstrained coordinates.

    As a density on ``(p, theta)`` it carries the Jacobian of the coordinate
    map.  With ``perms`` it is averaged over component permutations, which
    keeps it a normalised density while matching a label-switching posterior.
    """

    family: object
    J: int
    mean: np.ndarray
    cov: np.ndarray
    perms: np.ndarray = None

    @classmethod
    def fit(cls, trace, symmetrize=True, scale=1.0):
        phi = unconstrained_coords(trace.family, trace.weights, trace.components)
        mean = phi.mean(0)
        cov = np.atleast_2d(np.cov(phi, rowvar=False)) * scale
        cov = cov + 1e-10 * np.eye(len(mean)) * max(1.0, np.trace(cov) / len(mean))
        perms = None
        if symmetrize and trace.J > 1:
            perms = all_permutations(trace.J) if math.factorial(trace.J) <= FULL_PERMUTATION_LIMIT else None
        return cls(trace.family, trace.J, mean, cov, perms)

    def _log_normal(self, phi):
        d = len(self.mean)
        chol = np.linalg.cholesky(self.cov)
        sol = np.linalg.solve(chol, (phi - self.mean).T)
        return -0.5 * (sol**2).sum(0) - np.log(np.diag(chol)).sum() - 0.5 * d * nm.LOG_2PI

    def log_density(self, weights, components):
        weights = np.atleast_2d(weights)
        comps = np.asarray(components)
        if comps.ndim == 2:
            comps = comps[None]
        jac = log_coordinate_jacobian(self.family, weights, comps)
        perms = self.perms if self.perms is not None else np.arange(self.J)[None]
        vals = np.stack([
            self._log_normal(unconstrained_coords(self.family, weights[:, p], comps[:, p]))
            for p in perms
        ])
        return nm.log_sum_exp_rows(vals, axis=0) - math.log(len(perms)) + jac


def gelfand_dey(trace, data, prior, auxiliary=None, fit_trace=None):
    """Reciprocal importance sampling estimate of ``log m(x)``.

    ``1/m_hat = 1/T sum_t g(lam_t) / (f(x | lam_t) pi(lam_t))``.  Without an
    explicit ``auxiliary`` a permutation-averaged Gaussian is fitted to the
    MAP-relabeled trace (or to ``fit_trace``).  The estimator can have
    infinite variance when ``g`` has heavier tails than the posterior, which
    the result notes in ``warning``.
    """
    if len(trace) == 0:
        raise UsageError("empty trace")
    if auxiliary is None:
        if fit_trace is None:
            fit_trace = reorder_trace(trace, approximate_map(trace, data, prior))
        auxiliary = GaussianAuxiliary.fit(fit_trace)
    lpost = trace.loglik + np.array([log_prior(trace.family, prior, trace.draw(t)) for t in range(len(trace))])
    bad = np.flatnonzero(~np.isfinite(lpost))
    if bad.size:
        raise NumericalError(f"draw {int(bad[0])} has zero likelihood or prior density")
    lg = auxiliary.log_density(trace.weights, trace.components)
    log_inv, se = _log_mean_with_se(lg - lpost)
    return EvidenceResult(
        -log_inv, "gelfand-dey", trace.J, 1, se, n_draws=len(trace),
        warning="reciprocal importance sampling may have infinite variance",
    )


# ---------------------------------------------------------------------------
# prior Monte Carlo


def prior_monte_carlo(data, J, family, prior, draws, seed=0, chunk=None):
    """Average the likelihood over ``draws`` independent prior draws."""
    if draws < 1:
        raise UsageError("need at least one prior draw")
    family.check_data(data)
    rng = nm.make_rng(seed)
    alpha = np.asarray(prior.alpha, dtype=float)
    chunk = chunk or max(1, 2_000_000 // max(1, data.n * J))
    ll = np.empty(draws)
    for a in range(0, draws, chunk):
        size = min(chunk, draws - a)
        w = rng.dirichlet(alpha, size) if J > 1 else np.ones((size, 1))
        comps = family.sample_prior_batch(prior, J, size, rng)
        with np.errstate(divide="ignore"):
            lf = family.log_densities_batch(comps, data) + np.log(w)[:, None, :]
        ll[a : a + size] = nm.log_sum_exp_rows(lf, axis=2).sum(1)
    est, se = _iid_log_mean_with_se(ll)
    return EvidenceResult(est, "prior-mc", J, 1, se, n_draws=draws)


# ---------------------------------------------------------------------------
# closed forms


def normal_single_log_marginal(data, prior):
    """Closed-form ``log m(x)`` of a single normal under the conjugate prior."""
    x = np.asarray(data.values, dtype=float)
    n = x.size
    k = prior.var_ratio
    xbar = x.mean()
    ss = ((x - xbar) ** 2).sum()
    a_n = prior.prec_shape + 0.5 * n
    b_n = prior.prec_rate + 0.5 * (ss + n * (xbar - prior.mean) ** 2 / (1.0 + k * n))
    return float(
        -0.5 * n * nm.LOG_2PI - 0.5 * math.log1p(k * n)
        + prior.prec_shape * math.log(prior.prec_rate) - gammaln(prior.prec_shape)
        + gammaln(a_n) - a_n * math.log(b_n)
    )


def exact_evidence(data, J, family, prior, cap=DEFAULT_ENTRY_CAP):
    """Exact ``log m(x)`` (data constants included) where a closed form exists.

    Discrete conjugate families use full enumeration; a single normal
    component uses the normal-gamma integral.
    """
    if getattr(family, "conjugate_discrete", False):
        v = exact_log_marginal(data, J, family, prior, include_data_constant=True, cap=cap)
        return EvidenceResult(v, "exact", J)
    if isinstance(family, Normal) and J == 1:
        return EvidenceResult(normal_single_log_marginal(data, prior), "exact", 1)
    raise UnsupportedFamilyError(f"no exact evidence for {family.name} with J={J}")


# ---------------------------------------------------------------------------
# diagnostics and reports


@dataclass(frozen=True)
class MixingDiagnostic:
    delta: float
    log_j_factorial: float
    verdict: str  # single-mode | mixed | partial

    def describe(self):
        return (
            f"symmetrized - plain = {self.delta:.4f} (log J! = {self.log_j_factorial:.4f}): {self.verdict}"
        )


def mixing_diagnostic(plain, symmetrized, J, tol=0.05):
    """Classify how many of the ``J!`` label modes the chain visited.

    ``single-mode`` when the gap is within ``tol`` of ``log J!``, ``mixed``
    when it is within ``tol`` of zero, ``partial`` otherwise.
    """
    delta = symmetrized.log_marginal - plain.log_marginal
    ref = math.lgamma(J + 1)
    if abs(delta - ref) < tol:
        verdict = "single-mode"
    elif abs(delta) < tol:
        verdict = "mixed"
    else:
        verdict = "partial"
    return MixingDiagnostic(float(delta), ref, verdict)


@dataclass(frozen=True)
class EvidenceRow:
    J: int
    results: tuple
    diagnostic: MixingDiagnostic = None
    exact: float = None

    def best(self):
        for method in ("exact", "chib-symmetrized", "gelfand-dey", "prior-mc", "chib-plain"):
            for r in self.results:
                if r.method == method:
                    return r
        raise UsageError("row has no results")


def recommend_J(rows):
    """``J`` with the largest preferred estimate (first on ties)."""
    if not rows:
        raise UsageError("no evidence rows")
    best = max(rows, key=lambda r: (r.best().log_marginal, -r.J))
    return best.J


def evidence_table_rows(rows):
    """Flat records (J, method, log_marginal, ...) for CSV export."""
    out = []
    for row in rows:
        for r in row.results:
            out.append({
                "J": row.J,
                "method": r.method,
                "log_marginal": r.log_marginal,
                "mc_stderr": "" if r.mc_stderr is None else r.mc_stderr,
                "permutations_used": r.permutations_used,
                "mixing_discrepancy": "" if r.mixing_discrepancy is None else r.mixing_discrepancy,
                "verdict": row.diagnostic.verdict if (row.diagnostic and r.method == "chib-symmetrized") else "",
                "exact": "" if row.exact is None else row.exact,
            })
    return out


def evidence_report(rows):
    """Plain-text evidence table with the recommended ``J``."""
    lines = [f"{'J':>3}  {'method':<17} {'log_marginal':>14} {'mc_se':>10} {'perms':>6}  notes"]
    for row in rows:
        for r in row.results:
            se = "" if r.mc_stderr is None or not np.isfinite(r.mc_stderr) else f"{r.mc_stderr:.4f}"
            note = ""
            if r.method == "chib-symmetrized" and row.diagnostic is not None:
                note = row.diagnostic.describe()
            lines.append(f"{row.J:>3}  {r.method:<17} {r.log_marginal:>14.4f} {se:>10} {r.permutations_used:>6}  {note}")
        if row.exact is not None and not any(r.method == "exact" for r in row.results):
            lines.append(f"{row.J:>3}  {'exact (oracle)':<17} {row.exact:>14.4f}")
    lines.append(f"recommended J: {recommend_J(rows)}")
    return "\n".join(lines) + "\n"


def evidence_sweep(data, family_factory, prior_factory, J_values, config, prior_mc_draws=0,
                   perm_sample=None, exact_cap=10**6, lambda_star=None):
    """Estimate the evidence for every ``J`` in ``J_values``.

    ``family_factory()`` returns the family and ``prior_factory(J)`` the prior.
    ``J = 1`` uses the exact value when one exists.  Otherwise a conjugate
    Gibbs chain is run with ``config`` and both Chib estimates are reported;
    for discrete families the exact value is attached when enumeration fits
    under ``exact_cap``.
    """
    from .errors import ResourceLimitError
    from .mcmc import gibbs_sampler

    if not J_values:
        raise UsageError("empty range of J")
    rows = []
    for J in J_values:
        family = family_factory()
        prior = prior_factory(J)
        exact = None
        try:
            if J == 1 or getattr(family, "conjugate_discrete", False):
                exact = exact_evidence(data, J, family, prior, cap=exact_cap).log_marginal
        except (UnsupportedFamilyError, ResourceLimitError):
            exact = None
        if J == 1 and exact is not None:
            rows.append(EvidenceRow(J, (EvidenceResult(exact, "exact", 1),), exact=exact))
            continue
        trace = gibbs_sampler(data, J, family, prior, config)
        plain, sym = chib_pair(trace, data, prior, lambda_star, perm_sample=perm_sample, seed=config.seed)
        results = [plain, sym]
        if prior_mc_draws:
            results.append(prior_monte_carlo(data, J, family, prior, prior_mc_draws, seed=config.seed))
        rows.append(EvidenceRow(J, tuple(results), mixing_diagnostic(plain, sym, J), exact))
    return rows
