"""Command-line interface: ``mixbayes {exact,sample,evidence,relabel,simulate}``.

Every run is driven by a flat configuration of dotted keys (see
``DEFAULTS``).  Values come from the defaults, then an optional JSON file
(``--config``, nested objects or dotted keys), then ``--set key=value``
pairs, then the dedicated flags.  Unknown keys are rejected.

Exit codes: 0 success, 1 usage, 2 data or validation, 3 numerical or
resource failure.
"""

import argparse
import csv
import json
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import datasets as ds
from .errors import (
    DataError,
    MixBayesError,
    NumericalError,
    ResourceLimitError,
    UnsupportedFamilyError,
    UsageError,
    ValidationError,
)
from .evidence import evidence_report, evidence_sweep, evidence_table_rows, recommend_J
from .exact import enumerate_stats, exact_component_marginal, exact_report, exact_weight_posterior
from .mcmc import ChainConfig, gibbs_sampler, gibbs_t_mixture, mh_mixture, read_trace_csv
from .model import (
    BernoulliPrior,
    MultinomialPrior,
    NormalPrior,
    PoissonPrior,
    StudentTPrior,
    family_for,
)
from .relabel import approximate_map, point_estimates, reorder_trace

DEFAULTS = {
    "model.family": None,
    "model.J": 2,
    "model.sharedVariance": True,
    "prior.alpha": 1.0,
    "prior.rate": 1.0,
    "prior.shape": 1.0,
    "prior.qAlpha": 0.5,
    "prior.a": 0.5,
    "prior.b": 0.5,
    "prior.mean": 0.0,
    "prior.varRatio": 10.0,
    "prior.precShape": 1.0,
    "prior.precRate": 0.5,
    "prior.mu0": None,
    "prior.sigma0Sq": None,
    "prior.alphaSigma": 1.0,
    "prior.betaSigma": 1.0,
    "prior.alphaNu": 5.0,
    "prior.betaNu": 2.0,
    "mcmc.sampler": "gibbs",
    "mcmc.iterations": 10000,
    "mcmc.burnin": None,
    "mcmc.thin": 1,
    "mcmc.seed": 0,
    "mcmc.rwScale": 0.1,
    "mcmc.rwScaleNu": 5.0,
    "mcmc.nuKnown": None,
    "mcmc.storeAllocations": True,
    "mcmc.chains": 1,
    "data.path": None,
    "data.bundled": None,
    "data.kind": None,
    "data.scale": None,
    "output.dir": "out",
    "output.formats": ["csv"],
    "output.histogramBins": 50,
    "exact.topK": 5,
    "exact.gridPoints": 199,
    "exact.cap": 10**7,
    "evidence.jMin": 1,
    "evidence.jMax": 5,
    "evidence.priorMcDraws": 0,
    "evidence.permSample": None,
    "evidence.lambdaStar": "map",
    "relabel.trace": None,
    "relabel.distance": "euclidean",
    "relabel.includeWeights": True,
    "simulate.benchmark": "t",
    "simulate.n": None,
    "simulate.seed": 0,
}

BUNDLED = {"galaxy": ("galaxy.txt", "univariate-real"), "stouffer_toby": ("stouffer_toby.csv", "binary-matrix")}
FAMILY_KIND = {
    "poisson": "univariate-count",
    "multinomial": "multinomial-rows",
    "bernoulli": "binary-matrix",
    "normal": "univariate-real",
    "student_t": "univariate-real",
}
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3


# ---------------------------------------------------------------------------
# configuration


def _flatten(obj, prefix=""):
    out = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(_flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def build_config(config_path=None, overrides=()):
    """Merge defaults, a JSON file and ``key=value`` overrides; reject unknown keys."""
    cfg = dict(DEFAULTS)
    updates = {}
    if config_path:
        try:
            raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"config file not found: {config_path}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{config_path}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise UsageError(f"{config_path}: top level must be an object")
        updates.update(_flatten(raw))
    for item in overrides:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        updates[k.strip()] = _parse_value(v)
    unknown = sorted(set(updates) - set(DEFAULTS))
    if unknown:
        raise UsageError(f"unknown configuration keys: {', '.join(unknown)}")
    cfg.update(updates)
    return cfg


def _int(cfg, key, minimum=None):
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ValidationError(f"{key} must be an integer, got {v!r}")
    v = int(v)
    if minimum is not None and v < minimum:
        raise ValidationError(f"{key} must be >= {minimum}")
    return v


def chain_config(cfg, seed=None):
    burnin = cfg["mcmc.burnin"]
    return ChainConfig(
        iterations=_int(cfg, "mcmc.iterations", 1),
        burnin=None if burnin is None else _int(cfg, "mcmc.burnin", 0),
        thin=_int(cfg, "mcmc.thin", 1),
        seed=_int(cfg, "mcmc.seed", 0) if seed is None else seed,
        rw_scale=float(cfg["mcmc.rwScale"]),
        rw_scale_nu=float(cfg["mcmc.rwScaleNu"]),
        store_allocations=bool(cfg["mcmc.storeAllocations"]),
    )


def load_data(cfg):
    """Dataset named by ``data.bundled`` or ``data.path`` (+ ``data.kind``)."""
    bundled, path = cfg["data.bundled"], cfg["data.path"]
    if bundled and path:
        raise UsageError("set only one of data.bundled and data.path")
    if bundled:
        if bundled not in BUNDLED:
            raise ValidationError(f"unknown bundled dataset {bundled!r}; choose from {sorted(BUNDLED)}")
        name, kind = BUNDLED[bundled]
        path = ds.bundled_path(name)
    elif path:
        kind = cfg["data.kind"] or FAMILY_KIND.get(cfg["model.family"])
        if kind is None:
            raise UsageError("data.kind is required when model.family is unset")
    else:
        raise UsageError("no data: set data.path or data.bundled")
    if not Path(path).is_file():
        raise DataError(f"data file not found: {path}")
    data = ds.load_dataset(path, kind, scale=cfg["data.scale"])
    return data, ds.manifest_for(path, data)


def resolve_family(cfg, data):
    name = cfg["model.family"]
    if name is None:
        name = {"univariate-count": "poisson", "binary-matrix": "bernoulli",
                "multinomial-rows": "multinomial", "univariate-real": "normal"}[data.kind]
    return family_for(name, data, shared_variance=bool(cfg["model.sharedVariance"]))


def build_prior(cfg, family, J, data):
    alpha = cfg["prior.alpha"]
    name = family.name
    if name == "poisson":
        return PoissonPrior.make(J, alpha, cfg["prior.rate"], cfg["prior.shape"])
    if name == "multinomial":
        return MultinomialPrior.make(J, family.m, alpha, cfg["prior.qAlpha"])
    if name == "bernoulli":
        return BernoulliPrior.make(J, family.d, alpha, cfg["prior.a"], cfg["prior.b"])
    if name == "normal":
        return NormalPrior.make(
            J, alpha, cfg["prior.mean"], cfg["prior.varRatio"], cfg["prior.precShape"], cfg["prior.precRate"]
        )
    x = np.asarray(data.values, dtype=float)
    mu0 = float(x.mean()) if cfg["prior.mu0"] is None else float(cfg["prior.mu0"])
    s0 = float(x.var()) if cfg["prior.sigma0Sq"] is None else float(cfg["prior.sigma0Sq"])
    return StudentTPrior.make(
        J, mu0, s0, alpha, cfg["prior.alphaSigma"], cfg["prior.betaSigma"], cfg["prior.alphaNu"], cfg["prior.betaNu"]
    )


# ---------------------------------------------------------------------------
# output helpers


def _outdir(cfg):
    out = Path(cfg["output.dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_manifest(path, command, cfg, data_manifest=None, extra=None):
    lines = [
        f"command: {command}",
        f"mixbayes: {__version__}",
        f"python: {platform.python_version()}",
        f"numpy: {np.__version__}",
        f"scipy: {scipy.__version__}",
        "rng: numpy PCG64",
        f"seed: {cfg['mcmc.seed']}",
    ]
    if data_manifest is not None:
        lines.append(data_manifest.format().rstrip("\n"))
    for k, v in (extra or {}).items():
        lines.append(f"{k}: {v}")
    lines.append("config: " + json.dumps(cfg, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_grid(path, header, grid, values):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for g, v in zip(grid, values):
            w.writerow([repr(float(g)), repr(float(v))])


def write_histograms(outdir, trace, bins):
    """One ``hist_<param>.csv`` per scalar parameter with bin edges and counts."""
    for name, col in zip(trace.columns(), trace.flat().T):
        counts, edges = np.histogram(col, bins=bins)
        with open(outdir / f"hist_{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["left", "right", "count"])
            for lo, hi, c in zip(edges[:-1], edges[1:], counts):
                w.writerow([repr(float(lo)), repr(float(hi)), int(c)])


# ---------------------------------------------------------------------------
# commands


def cmd_exact(cfg, out=sys.stdout):
    data, manifest = load_data(cfg)
    family = resolve_family(cfg, data)
    if not family.conjugate_discrete:
        raise UnsupportedFamilyError(f"exact inference needs a discrete conjugate family, not {family.name}")
    J = _int(cfg, "model.J", 1)
    prior = build_prior(cfg, family, J, data)
    outdir = _outdir(cfg)
    table = enumerate_stats(data, J, family, cap=_int(cfg, "exact.cap", 1))
    table.to_csv(outdir / "stats_table.csv", prior)
    report = exact_report(data, J, family, prior, k=_int(cfg, "exact.topK", 1), table=table)
    npts = _int(cfg, "exact.gridPoints", 2)
    if J == 2:
        grid = (np.arange(npts) + 0.5) / npts
        write_grid(outdir / "weight_posterior.csv", ["p", "density"], grid,
                   exact_weight_posterior(data, family, prior, grid, table=table))
        if family.name == "poisson":
            top = max(1.0, float(np.max(data.values))) * 3.0 + 5.0
            rates = (np.arange(npts) + 0.5) * top / npts
            for c in range(2):
                write_grid(outdir / f"component_{c + 1}_marginal.csv", ["lambda", "density"], rates,
                           exact_component_marginal(data, family, prior, c, rates, table=table))
    (outdir / "summary.txt").write_text(report, encoding="utf-8")
    write_manifest(outdir / "manifest.txt", "exact", cfg, manifest)
    out.write(report)
    return EXIT_OK


def _run_chain(args):
    cfg, seed = args
    data, _ = load_data(cfg)
    family = resolve_family(cfg, data)
    J = _int(cfg, "model.J", 1)
    prior = build_prior(cfg, family, J, data)
    config = chain_config(cfg, seed)
    sampler = cfg["mcmc.sampler"]
    if sampler == "mh":
        return mh_mixture(data, J, family, prior, config), prior
    if sampler != "gibbs":
        raise ValidationError(f"mcmc.sampler must be 'gibbs' or 'mh', got {sampler!r}")
    if family.name == "student_t":
        return gibbs_t_mixture(data, J, prior, cfg["mcmc.nuKnown"], config), prior
    return gibbs_sampler(data, J, family, prior, config), prior


def _write_chain(outdir, trace, data, prior, cfg, bins):
    trace.to_csv(outdir / "trace.csv")
    if trace.allocations is not None:
        trace.allocations_to_csv(outdir / "allocations.csv")
    ref = approximate_map(trace, data, prior)
    relabeled = reorder_trace(trace, ref, cfg["relabel.distance"], bool(cfg["relabel.includeWeights"]))
    relabeled.to_csv(outdir / "trace_relabeled.csv")
    est = point_estimates(relabeled)
    write_histograms(outdir, relabeled, bins)
    lines = [
        f"draws: {len(trace)}",
        f"reference draw (approximate MAP): iteration {int(trace.iters[ref.source_index])}, "
        f"log posterior {ref.log_posterior:.6f}",
    ]
    if trace.acceptance:
        lines.append("acceptance: " + ", ".join(f"{k}={v:.4f}" for k, v in trace.acceptance.items()))
    text = "\n".join(lines) + "\n" + est.format()
    (outdir / "summary.txt").write_text(text, encoding="utf-8")
    return est, text


def cmd_sample(cfg, out=sys.stdout):
    data, manifest = load_data(cfg)
    chains = _int(cfg, "mcmc.chains", 1)
    seed = _int(cfg, "mcmc.seed", 0)
    outdir = _outdir(cfg)
    bins = _int(cfg, "output.histogramBins", 1)
    jobs = [(cfg, seed + c) for c in range(chains)]
    if chains == 1:
        results = [_run_chain(jobs[0])]
    else:
        with ProcessPoolExecutor(max_workers=chains) as pool:
            results = list(pool.map(_run_chain, jobs))
    if chains == 1:
        trace, prior = results[0]
        _, text = _write_chain(outdir, trace, data, prior, cfg, bins)
    else:
        ests = []
        parts = []
        for c, (trace, prior) in enumerate(results):
            sub = outdir / f"chain_{c + 1}"
            sub.mkdir(exist_ok=True)
            est, t = _write_chain(sub, trace, data, prior, cfg, bins)
            ests.append(est)
            parts.append(f"chain {c + 1} (seed {seed + c})\n{t}")
        means = np.array([e.mean for e in ests])
        pooled = [f"pooled over {chains} chains", f"{'parameter':<12} {'mean':>14} {'between-chain sd':>18}"]
        for i, name in enumerate(ests[0].names):
            pooled.append(f"{name:<12} {means[:, i].mean():>14.6g} {means[:, i].std(ddof=1):>18.6g}")
        text = "\n".join(parts) + "\n" + "\n".join(pooled) + "\n"
        (outdir / "summary.txt").write_text(text, encoding="utf-8")
    write_manifest(outdir / "manifest.txt", "sample", cfg, manifest, {"chains": chains})
    out.write(text)
    return EXIT_OK


def cmd_evidence(cfg, out=sys.stdout):
    data, manifest = load_data(cfg)
    family = resolve_family(cfg, data)
    j_min, j_max = _int(cfg, "evidence.jMin", 1), _int(cfg, "evidence.jMax", 1)
    if j_max < j_min:
        raise ValidationError("evidence.jMax must be >= evidence.jMin")
    perm = cfg["evidence.permSample"]
    rows = evidence_sweep(
        data,
        lambda: resolve_family(cfg, data),
        lambda J: build_prior(cfg, family, J, data),
        list(range(j_min, j_max + 1)),
        chain_config(cfg),
        prior_mc_draws=_int(cfg, "evidence.priorMcDraws", 0),
        perm_sample=None if perm is None else _int(cfg, "evidence.permSample", 1),
        lambda_star=cfg["evidence.lambdaStar"],
    )
    outdir = _outdir(cfg)
    records = evidence_table_rows(rows)
    with open(outdir / "evidence.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(records[0]), lineterminator="\n")
        w.writeheader()
        for r in records:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in r.items()})
    report = evidence_report(rows)
    (outdir / "summary.txt").write_text(report, encoding="utf-8")
    write_manifest(outdir / "manifest.txt", "evidence", cfg, manifest, {"recommended_J": recommend_J(rows)})
    out.write(report)
    return EXIT_OK


def cmd_relabel(cfg, out=sys.stdout):
    path = cfg["relabel.trace"]
    if not path:
        raise UsageError("relabel needs relabel.trace (or --trace)")
    if not Path(path).is_file():
        raise DataError(f"trace file not found: {path}")
    data, manifest = load_data(cfg)
    family = resolve_family(cfg, data)
    J = _int(cfg, "model.J", 1)
    prior = build_prior(cfg, family, J, data)
    trace = read_trace_csv(path, family, J)
    outdir = _outdir(cfg)
    ref = approximate_map(trace, data, prior)
    relabeled = reorder_trace(trace, ref, cfg["relabel.distance"], bool(cfg["relabel.includeWeights"]))
    relabeled.to_csv(outdir / "trace_relabeled.csv")
    est = point_estimates(relabeled)
    write_histograms(outdir, relabeled, _int(cfg, "output.histogramBins", 1))
    text = f"reference draw: row {ref.source_index}, log posterior {ref.log_posterior:.6f}\n" + est.format()
    (outdir / "summary.txt").write_text(text, encoding="utf-8")
    write_manifest(outdir / "manifest.txt", "relabel", cfg, manifest, {"trace": path})
    out.write(text)
    return EXIT_OK


def cmd_simulate(cfg, out=sys.stdout):
    bench = cfg["simulate.benchmark"]
    seed = _int(cfg, "simulate.seed", 0)
    n = cfg["simulate.n"]
    outdir = _outdir(cfg)
    if bench == "t":
        data, z, truth = ds.simulate_t_benchmark(2000 if n is None else _int(cfg, "simulate.n", 1), seed)
        fname = "data.txt"
        cols = ["mu", "sigma2", "nu"]
    elif bench == "multinomial":
        data, z, truth = ds.simulate_multinomial_example(50 if n is None else _int(cfg, "simulate.n", 1), seed=seed)
        fname = "data.csv"
        cols = [f"q{v + 1}" for v in range(truth.components.shape[1])]
    else:
        raise ValidationError(f"simulate.benchmark must be 't' or 'multinomial', got {bench!r}")
    ds.write_dataset(data, outdir / fname)
    np.savetxt(outdir / "labels.txt", z, fmt="%d")
    lines = ["component,weight," + ",".join(cols)]
    for j, (w, c) in enumerate(zip(truth.weights, truth.components), 1):
        lines.append(f"{j},{float(w)!r}," + ",".join(repr(float(v)) for v in c))
    (outdir / "truth.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_manifest(outdir / "manifest.txt", "simulate", cfg, ds.manifest_for(outdir / fname, data))
    out.write(f"wrote {data.n} observations to {outdir / fname}\n")
    return EXIT_OK


COMMANDS = {
    "exact": cmd_exact,
    "sample": cmd_sample,
    "evidence": cmd_evidence,
    "relabel": cmd_relabel,
    "simulate": cmd_simulate,
}


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


FLAG_KEYS = {
    "family": "model.family",
    "J": "model.J",
    "data": "data.path",
    "bundled": "data.bundled",
    "kind": "data.kind",
    "scale": "data.scale",
    "iterations": "mcmc.iterations",
    "burnin": "mcmc.burnin",
    "thin": "mcmc.thin",
    "seed": "mcmc.seed",
    "sampler": "mcmc.sampler",
    "chains": "mcmc.chains",
    "out": "output.dir",
    "j_min": "evidence.jMin",
    "j_max": "evidence.jMax",
    "trace": "relabel.trace",
    "benchmark": "simulate.benchmark",
}


def make_parser():
    parser = _Parser(prog="mixbayes", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"mixbayes {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one key")
        p.add_argument("--family", choices=sorted(FAMILY_KIND))
        p.add_argument("--J", type=int)
        p.add_argument("--data", help="data file path")
        p.add_argument("--bundled", choices=sorted(BUNDLED))
        p.add_argument("--kind")
        p.add_argument("--scale", type=_parse_value, help="'raw', 'standardize' or a divisor")
        p.add_argument("--iterations", type=int)
        p.add_argument("--burnin", type=int)
        p.add_argument("--thin", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--sampler", choices=["gibbs", "mh"])
        p.add_argument("--chains", type=int)
        p.add_argument("--out", help="output directory")
        p.add_argument("--j-min", dest="j_min", type=int)
        p.add_argument("--j-max", dest="j_max", type=int)
        p.add_argument("--trace", help="trace CSV to relabel")
        p.add_argument("--benchmark", choices=["t", "multinomial"])
    return parser


def exit_code_for(exc):
    if isinstance(exc, (ResourceLimitError, NumericalError)):
        return EXIT_NUMERICAL
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    if isinstance(exc, (ValidationError, UnsupportedFamilyError)):
        return EXIT_DATA
    return EXIT_NUMERICAL


def main(argv=None, out=None, err=None):
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        args = make_parser().parse_args(argv)
        cfg = build_config(args.config, args.set)
        for attr, key in FLAG_KEYS.items():
            v = getattr(args, attr)
            if v is not None:
                cfg[key] = v
        return COMMANDS[args.command](cfg, out)
    except MixBayesError as exc:
        err.write(f"mixbayes: error: {exc}\n")
        return exit_code_for(exc)
    except OSError as exc:
        err.write(f"mixbayes: error: {exc}\n")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
