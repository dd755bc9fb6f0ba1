"""Exact posterior computation for discrete conjugate mixtures.

For Poisson, Multinomial and Bernoulli-product components, the posterior
weight of an allocation ``z`` depends on ``z`` only through the sufficient
statistic ``(n, S)`` (component counts and accumulated component statistics).
The number of allocations sharing a statistic is computed by the layer-by-layer
book-keeping recursion

    mu_1(e_j, R(x_1) e_j) = 1,
    mu_n(n, S) = sum_j mu_{n-1}(n - e_j, S - R(x_n) e_j),

with exact (arbitrary precision) integer multiplicities.  Everything else in
this module (marginal likelihood, posterior of the weights, component
marginals, most likely partitions) is a weighted sum over that table.

Data-only factors such as ``1/prod(x_i!)`` are left out of the weights and
the marginal likelihood unless ``include_data_constant=True`` is passed.
They cancel in Bayes factors.
"""

import math
from dataclasses import dataclass
from operator import add

import numpy as np
from scipy.special import gammaln

from . import numerics as nm
from .errors import ResourceLimitError, UnsupportedFamilyError, UsageError, ValidationError
from .model import Poisson

DEFAULT_ENTRY_CAP = 10**7


def partition_class_count(n, J):
    """Number of count vectors ``(n_1..n_J)`` summing to ``n``: C(n+J-1, n)."""
    if n < 0 or J < 1:
        raise UsageError("need n >= 0 and J >= 1")
    return math.comb(n + J - 1, n)


@dataclass(frozen=True)
class SufficientStat:
    """Component counts ``n_j`` and accumulated statistics ``S_j`` (rows of ``stats``)."""

    counts: tuple
    stats: tuple  # J tuples, each of length s

    @property
    def key(self):
        return self.counts + tuple(v for row in self.stats for v in row)

    def __lt__(self, other):
        return self.key < other.key


class StatTable:
    """Distinct sufficient statistics of a dataset with their multiplicities.

    Entries are kept in lexicographic order of ``(counts, stats)``.
    ``multiplicities`` are Python ints, so ``sum(multiplicities) == J**n``
    holds exactly.
    """

    def __init__(self, family, J, n, s, entries):
        self.family = family
        self.J = J
        self.n = n
        self.s = s
        keys = sorted(entries)
        self.multiplicities = [entries[k] for k in keys]
        arr = np.array(keys, dtype=np.int64).reshape(len(keys), J + J * s)
        self.counts = arr[:, :J]
        self.stats = arr[:, J:].reshape(len(keys), J, s)
        self._keys = keys

    def __len__(self):
        return len(self.multiplicities)

    def __iter__(self):
        for i in range(len(self)):
            yield self.stat(i), self.multiplicities[i]

    def stat(self, i):
        return SufficientStat(
            tuple(int(c) for c in self.counts[i]),
            tuple(tuple(int(v) for v in row) for row in self.stats[i]),
        )

    def as_dict(self):
        """``{key tuple: multiplicity}`` with keys ``counts + flattened stats``."""
        return dict(zip(self._keys, self.multiplicities))

    def total(self):
        return sum(self.multiplicities)

    def distinct_counts(self):
        return len({tuple(r) for r in self.counts.tolist()})

    def log_multiplicities(self):
        return np.array([math.log(m) for m in self.multiplicities])

    def log_weights(self, prior):
        """Per-allocation log weight of every entry (multiplicity excluded)."""
        return _log_weights(self.family, prior, self.counts, self.stats)

    def to_csv(self, path, prior=None):
        J, s = self.J, self.s
        header = [f"n_{j + 1}" for j in range(J)]
        header += [f"S_{j + 1}" if s == 1 else f"S_{j + 1}_{v + 1}" for j in range(J) for v in range(s)]
        header.append("multiplicity")
        lw = self.log_weights(prior) if prior is not None else None
        if lw is not None:
            header.append("log_weight")
        with open(path, "w", newline="\n") as fh:
            fh.write(",".join(header) + "\n")
            for i, key in enumerate(self._keys):
                row = [str(v) for v in key] + [str(self.multiplicities[i])]
                if lw is not None:
                    row.append(repr(float(lw[i])))
                fh.write(",".join(row) + "\n")


def _require_discrete(family):
    if not getattr(family, "conjugate_discrete", False):
        raise UnsupportedFamilyError(
            f"exact enumeration needs a conjugate discrete family, not {family.name}"
        )


def enumerate_stats(data, J, family, cap=DEFAULT_ENTRY_CAP):
    """Run the multiplicity recursion over the observations of ``data``.

    Raises :class:`ResourceLimitError` as soon as a layer holds more than
    ``cap`` distinct statistics.
    """
    _require_discrete(family)
    family.check_data(data)
    if data.n < 1:
        raise UsageError("need at least one observation")
    if J < 1:
        raise UsageError("need J >= 1")
    R = family.stat_vectors(data)
    s = R.shape[1]
    width = J + J * s

    def deltas(r):
        out = []
        for j in range(J):
            d = [0] * width
            d[j] = 1
            for v in range(s):
                d[J + j * s + v] = int(r[v])
            out.append(tuple(d))
        return out

    layer = {}
    for d in deltas(R[0]):
        layer[d] = layer.get(d, 0) + 1
    for i in range(1, data.n):
        dl = deltas(R[i])
        new = {}
        get = new.get
        for key, mult in layer.items():
            for d in dl:
                k = tuple(map(add, key, d))
                new[k] = get(k, 0) + mult
        if len(new) > cap:
            raise ResourceLimitError(cap)
        layer = new
    return StatTable(family, J, data.n, s, layer)


def _log_weight_dirichlet(alpha, counts):
    alpha = np.asarray(alpha, dtype=float)
    n = counts.astype(float)
    return (
        gammaln(alpha.sum()) - gammaln(alpha).sum()
        + gammaln(alpha + n).sum(-1) - gammaln(alpha.sum() + n.sum(-1))
    )


def _log_weights(family, prior, counts, stats):
    if np.asarray(prior.alpha).size != counts.shape[-1]:
        raise ValidationError("prior and statistic disagree on the number of components")
    return _log_weight_dirichlet(prior.alpha, counts) + family.log_stat_weights(prior, counts, stats)


def partition_log_weight(family, stat, prior):
    """Unnormalised log posterior weight of one allocation with statistic ``stat``.

    This is the log of ``int prod_i p_{z_i} f(x_i | theta_{z_i}) dpi(p, theta)``
    with the data-only factor ``prod_i h(x_i)`` removed.
    """
    _require_discrete(family)
    counts = np.asarray(stat.counts, dtype=np.int64)
    stats = np.asarray(stat.stats, dtype=np.int64)
    if stats.ndim == 1:
        stats = stats[:, None]
    if stats.shape[0] != counts.size:
        raise ValidationError("counts and stats disagree on J")
    return float(_log_weights(family, prior, counts[None], stats[None])[0])


def _table(data, J, family, table, cap):
    if table is None:
        return enumerate_stats(data, J, family, cap=cap)
    if table.J != J or table.n != data.n:
        raise ValidationError("supplied table does not match data/J")
    return table


def _log_masses(table, prior):
    return table.log_multiplicities() + table.log_weights(prior)


def exact_log_marginal(data, J, family, prior, include_data_constant=False, table=None, cap=DEFAULT_ENTRY_CAP):
    """Exact log marginal likelihood ``log sum_(n,S) mu(n,S) omega(n,S)``."""
    table = _table(data, J, family, table, cap)
    out = nm.log_sum_exp(_log_masses(table, prior))
    if include_data_constant:
        out += family.data_log_constant(data)
    return out


def _normalised_masses(table, prior):
    lm = _log_masses(table, prior)
    return np.exp(lm - nm.log_sum_exp(lm))


def exact_weight_posterior(data, family, prior, grid, table=None, cap=DEFAULT_ENTRY_CAP):
    """Exact posterior density of ``p = p_1`` for a two-component model.

    The posterior is the mixture over statistics of
    ``Beta(n_1 + alpha_1, n_2 + alpha_2)`` densities weighted by the
    normalised partition masses.
    """
    J = np.asarray(prior.alpha).size
    if J != 2:
        raise UnsupportedFamilyError("the exact weight posterior is implemented for J = 2 only")
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= 0) or np.any(grid >= 1):
        raise ValidationError("grid points must lie in (0, 1)")
    table = _table(data, 2, family, table, cap)
    w = _normalised_masses(table, prior)
    a = prior.alpha[0] + table.counts[:, 0]
    b = prior.alpha[1] + table.counts[:, 1]
    logb = gammaln(a + b) - gammaln(a) - gammaln(b)
    lg = np.log(grid)[None, :]
    l1g = np.log1p(-grid)[None, :]
    dens = np.exp(logb[:, None] + (a[:, None] - 1) * lg + (b[:, None] - 1) * l1g)
    return w @ dens


def exact_component_marginal(data, family, prior, component, grid, table=None, cap=DEFAULT_ENTRY_CAP):
    """Exact marginal posterior density of the Poisson rate ``lambda_component`` (0-based)."""
    if not isinstance(family, Poisson):
        raise UnsupportedFamilyError("component marginals are implemented for Poisson mixtures")
    J = np.asarray(prior.alpha).size
    if not 0 <= component < J:
        raise ValidationError(f"component must be in 0..{J - 1}")
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= 0):
        raise ValidationError("grid must be positive")
    table = _table(data, J, family, table, cap)
    w = _normalised_masses(table, prior)
    shape = prior.shape[component] + table.stats[:, component, 0]
    rate = prior.rate[component] + table.counts[:, component]
    lg = np.log(grid)[None, :]
    logd = (
        (shape * np.log(rate) - gammaln(shape))[:, None]
        + (shape[:, None] - 1) * lg
        - rate[:, None] * grid[None, :]
    )
    return w @ np.exp(logd)


def exact_posterior_mean(data, J, family, prior, table=None, cap=DEFAULT_ENTRY_CAP):
    """Posterior means of the weights and component parameters.

    Computed as the mass-weighted average of the conditional posterior means
    ``E[p, theta | x, z]`` over the statistic table.
    """
    table = _table(data, J, family, table, cap)
    w = _normalised_masses(table, prior)
    alpha = np.asarray(prior.alpha, dtype=float)
    pw = (alpha + table.counts) / (alpha.sum() + table.n)
    comp = family.posterior_mean_given_stats(prior, table.counts, table.stats)
    return w @ pw, np.tensordot(w, comp, axes=1)


@dataclass(frozen=True)
class RankedPartition:
    stat: SufficientStat
    multiplicity: int
    log_weight: float
    log_mass: float  # log(multiplicity * weight / m(x))


def top_partitions(data, J, family, prior, k, table=None, cap=DEFAULT_ENTRY_CAP):
    """The ``k`` statistics with the largest per-allocation weight.

    Ties are broken by lexicographic order of the statistic.
    """
    if k < 1:
        raise UsageError("k must be at least 1")
    table = _table(data, J, family, table, cap)
    lw = table.log_weights(prior)
    lmass = table.log_multiplicities() + lw
    lm = nm.log_sum_exp(lmass)
    # table rows are already in lexicographic order, so a stable sort keeps ties ordered
    order = np.argsort(-lw, kind="stable")[:k]
    return [
        RankedPartition(table.stat(i), table.multiplicities[i], float(lw[i]), float(lmass[i] - lm))
        for i in order
    ]


def exact_report(data, J, family, prior, k=5, table=None, cap=DEFAULT_ENTRY_CAP):
    """Plain-text summary of an exact analysis."""
    table = _table(data, J, family, table, cap)
    lines = [
        f"family: {family.name}",
        f"observations: {data.n}",
        f"components: {J}",
        f"distinct statistics: {len(table)}",
        f"distinct count vectors: {table.distinct_counts()} (bound {partition_class_count(data.n, J)})",
        f"total allocations: {table.total()}",
        f"log marginal (data constant omitted): {exact_log_marginal(data, J, family, prior, table=table):.10f}",
        f"log marginal (full): {exact_log_marginal(data, J, family, prior, True, table=table):.10f}",
        f"top {k} partitions by per-allocation weight:",
    ]
    for r in top_partitions(data, J, family, prior, k, table=table):
        lines.append(
            f"  counts={r.stat.counts} stats={r.stat.stats} multiplicity={r.multiplicity} "
            f"log_weight={r.log_weight:.6f} posterior_mass={math.exp(r.log_mass):.6g}"
        )
    return "\n".join(lines) + "\n"
