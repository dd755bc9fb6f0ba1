"""Shared fixtures and independent brute-force oracles.

The oracles here do not call into ``mixbayes.exact``: they enumerate all
``J**n`` allocations with ``itertools.product`` and integrate each one in
closed form with ``scipy.special.gammaln`` written out from scratch.
"""

import itertools
import math

import numpy as np
import pytest
from scipy.special import gammaln, logsumexp

from mixbayes.model import BernoulliPrior, Dataset, PoissonPrior


def _log_dirichlet_multinomial(alpha, counts):
    alpha = np.asarray(alpha, dtype=float)
    counts = np.asarray(counts, dtype=float)
    return (gammaln(alpha.sum()) - gammaln(alpha.sum() + counts.sum())
            + np.sum(gammaln(alpha + counts) - gammaln(alpha)))


def brute_force_stats(x, J):
    """``{counts + sums: multiplicity}`` over all ``J**n`` allocations of a count sample."""
    out = {}
    for z in itertools.product(range(J), repeat=len(x)):
        counts = [0] * J
        sums = [0] * J
        for xi, zi in zip(x, z):
            counts[zi] += 1
            sums[zi] += int(xi)
        key = tuple(counts) + tuple(sums)
        out[key] = out.get(key, 0) + 1
    return out


def brute_force_poisson_log_marginal(x, J, alpha, shape, rate):
    """Full log marginal (data constant included) by summing over allocations."""
    x = np.asarray(x)
    alpha = np.broadcast_to(np.asarray(alpha, float), (J,))
    shape = np.broadcast_to(np.asarray(shape, float), (J,))
    rate = np.broadcast_to(np.asarray(rate, float), (J,))
    terms = []
    for z in itertools.product(range(J), repeat=len(x)):
        z = np.array(z)
        lw = _log_dirichlet_multinomial(alpha, np.bincount(z, minlength=J))
        for j in range(J):
            nj = np.sum(z == j)
            sj = x[z == j].sum()
            lw += shape[j] * math.log(rate[j]) - gammaln(shape[j]) + gammaln(shape[j] + sj) - (shape[j] + sj) * math.log(rate[j] + nj)
        terms.append(lw)
    return float(logsumexp(terms) - gammaln(x + 1.0).sum())


def brute_force_bernoulli_log_marginal(rows, J, alpha, a, b):
    rows = np.asarray(rows)
    n, d = rows.shape
    alpha = np.broadcast_to(np.asarray(alpha, float), (J,))
    terms = []
    for z in itertools.product(range(J), repeat=n):
        z = np.array(z)
        lw = _log_dirichlet_multinomial(alpha, np.bincount(z, minlength=J))
        for j in range(J):
            sel = rows[z == j]
            nj = sel.shape[0]
            ones = sel.sum(axis=0)
            lw += np.sum(gammaln(a + b) - gammaln(a) - gammaln(b)
                         + gammaln(a + ones) + gammaln(b + nj - ones) - gammaln(a + b + nj))
        terms.append(lw)
    return float(logsumexp(terms))


def brute_force_poisson_p1_mean(x, alpha, shape, rate):
    """Exact ``E[p_1 | x]`` for a two-component Poisson mixture by enumeration."""
    x = np.asarray(x)
    alpha = np.asarray(alpha, float)
    lws, means = [], []
    for z in itertools.product(range(2), repeat=len(x)):
        z = np.array(z)
        counts = np.bincount(z, minlength=2)
        lw = _log_dirichlet_multinomial(alpha, counts)
        for j in range(2):
            nj, sj = counts[j], x[z == j].sum()
            lw += shape * math.log(rate) - gammaln(shape) + gammaln(shape + sj) - (shape + sj) * math.log(rate + nj)
        lws.append(lw)
        means.append((alpha[0] + counts[0]) / (alpha.sum() + len(x)))
    lws = np.array(lws)
    w = np.exp(lws - logsumexp(lws))
    return float(w @ np.array(means))


@pytest.fixture
def small_counts():
    return Dataset.counts([0, 1, 1, 3, 5, 6])


@pytest.fixture
def poisson_prior_2():
    return PoissonPrior.make(2, alpha=1.0, rate=0.5, shape=1.0)


@pytest.fixture
def small_binary():
    return Dataset.binary([[1, 0, 1], [1, 1, 1], [0, 0, 0], [0, 1, 0], [1, 1, 0], [0, 0, 1]])


@pytest.fixture
def bernoulli_prior_2():
    return BernoulliPrior.make(2, 3)


# one line per acceptance criterion, echoed again in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
