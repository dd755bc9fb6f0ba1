"""Post-hoc relabeling of MCMC output toward an approximate MAP point.

The posterior of an exchangeable mixture is invariant under the ``J!``
permutations of component labels, so raw component averages are
meaningless when the chain switches labels.  Here every draw is replaced by
the permutation of its components that lies closest to a reference draw,
by default the retained draw with the highest log posterior.
"""

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nm
from .errors import UnsupportedFamilyError, UsageError, ValidationError
from .model import MixtureParams, log_prior

MAX_EXHAUSTIVE_J = 8
METRICS = ("euclidean", "euclidean-natural")


@dataclass(frozen=True)
class ReferencePoint:
    params: MixtureParams
    source_index: int
    log_posterior: float


def log_posterior_values(trace, prior):
    """Unnormalised log posterior of every draw (stored log-likelihood plus log prior)."""
    lp = np.array([log_prior(trace.family, prior, trace.draw(t)) for t in range(len(trace))])
    return trace.loglik + lp


def approximate_map(trace, data, prior):
    """The retained draw with the largest log posterior (first one on ties)."""
    if len(trace) == 0:
        raise UsageError("cannot take the MAP of an empty trace")
    lpost = log_posterior_values(trace, prior)
    if not np.any(np.isfinite(lpost)):
        raise ValidationError("no draw has a finite log posterior")
    i = int(np.argmax(lpost))
    return ReferencePoint(trace.draw(i), i, float(lpost[i]))


def all_permutations(J):
    """Every permutation of ``0..J-1`` as a ``(J!, J)`` array, identity first."""
    return np.array(list(itertools.permutations(range(J))), dtype=np.int64).reshape(-1, J)


def _features(family, weights, components, metric, include_weights):
    comps = np.asarray(components, dtype=float)
    if metric == "euclidean":
        comps = comps.copy()
        for col in family.log_scale_columns:
            comps[..., col] = np.log(comps[..., col])
    elif metric != "euclidean-natural":
        raise ValidationError(f"unknown distance {metric!r}; choose from {METRICS}")
    if include_weights:
        comps = np.concatenate([np.asarray(weights)[..., None], comps], axis=-1)
    return comps


def best_permutations(trace, reference, metric="euclidean", include_weights=True, chunk_cells=4_000_000):
    """Index of the closest permutation for every draw, as a ``(T, J)`` array.

    Row ``t`` is ``perm`` such that component ``l`` of the reordered draw is
    component ``perm[l]`` of the original.  The search is exhaustive and
    ties go to the earliest permutation in lexicographic order, so the
    identity wins whenever it is optimal.
    """
    J = trace.J
    if reference.params.J != J:
        raise ValidationError(f"reference has {reference.params.J} components, trace has {J}")
    if J > MAX_EXHAUSTIVE_J:
        raise UnsupportedFamilyError(f"exhaustive relabeling is limited to J <= {MAX_EXHAUSTIVE_J}")
    perms = all_permutations(J)
    fam = trace.family
    ref = _features(fam, reference.params.weights, reference.params.components, metric, include_weights)
    draws = _features(fam, trace.weights, trace.components, metric, include_weights)
    # cost[t, l, j]: squared distance of draw component j placed at reference slot l
    cost = ((draws[:, None, :, :] - ref[None, :, None, :]) ** 2).sum(-1)
    out = np.empty((len(trace), J), dtype=np.int64)
    step = max(1, chunk_cells // len(perms))
    slots = np.arange(J)
    for a in range(0, len(trace), step):
        c = cost[a : a + step]
        total = c[:, slots[None, :], perms].sum(-1)  # (chunk, P)
        out[a : a + step] = perms[np.argmin(total, axis=1)]
    return out


def reorder_trace(trace, reference, metric="euclidean", include_weights=True):
    """Permute every draw's components to be closest to ``reference``.

    Stored allocations are relabeled consistently and the per-draw
    log-likelihood is carried over unchanged.
    """
    if len(trace) == 0:
        raise UsageError("empty trace")
    perms = best_permutations(trace, reference, metric, include_weights)
    rows = np.arange(len(trace))[:, None]
    weights = trace.weights[rows, perms]
    components = trace.components[rows, perms]
    allocations = None
    if trace.allocations is not None:
        inverse = np.argsort(perms, axis=1)
        allocations = np.take_along_axis(inverse, trace.allocations, axis=1)
    return replace(
        trace, weights=weights, components=components, allocations=allocations, relabeled=True
    )


@dataclass(frozen=True)
class PointEstimates:
    names: tuple
    mean: np.ndarray
    sd: np.ndarray
    mcse: np.ndarray

    def as_dict(self):
        return {n: (float(m), float(s)) for n, m, s in zip(self.names, self.mean, self.sd)}

    def format(self):
        width = max(len(n) for n in self.names)
        lines = [f"{'parameter':<{width}}  {'mean':>14}  {'sd':>12}  {'mc_se':>12}"]
        for n, m, s, e in zip(self.names, self.mean, self.sd, self.mcse):
            lines.append(f"{n:<{width}}  {m:>14.6g}  {s:>12.6g}  {e:>12.6g}")
        return "\n".join(lines) + "\n"


def point_estimates(trace):
    """Empirical posterior means and standard deviations of every scalar parameter.

    The trace should already be reordered; ``mcse`` uses batch means.
    """
    if len(trace) == 0:
        raise UsageError("empty trace")
    flat = trace.flat()
    mean = flat.mean(axis=0)
    sd = flat.std(axis=0, ddof=1) if len(trace) > 1 else np.zeros(flat.shape[1])
    mcse = np.array([nm.batch_means_stderr(col) for col in flat.T])
    return PointEstimates(tuple(trace.columns()), mean, sd, mcse)


def n_permutations(J):
    return math.factorial(J)
