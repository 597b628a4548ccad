"""Command-line interface.

Commands
--------
weights                 control-variate weights of a chain
thin                    run a thinning method, write the selected points
metrics                 score thinning methods (or a written subsample) against the chain
compare                 ``metrics`` over every applicable method
experiment-truncnorm    estimator comparison on a truncated-normal Gibbs chain
simulate                write a synthetic chain file

Every command is a pure function of its inputs, flags and ``--seed``;
floats are written with 17 significant digits.
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial

import numpy as np

from . import control_variates as cvs
from . import metrics as qm
from . import samplers, thinning
from .chainio import ingest_chain, write_chain
from .errors import CubeThinError, InvalidRange, MissingScores, ParseError

logger = logging.getLogger("cubethin")

METHODS = ("cube-full", "cube-diagonal", "cube-gibbs", "thin", "stein-greedy")
METRICS = ("ksd", "ed", "star")

DEFAULTS = {
    "input": None,
    "method": "cube-full",
    "M": 100,
    "burnin": 0,
    "seed": 0,
    "replicates": 1,
    "metrics": "ksd,ed,star",
    "out": ".",
    "workers": 1,
    "target": None,
    "ref_max": 5000,
    "bandwidth": None,
    "boxes": 4096,
    "ed_drop_ref": False,
    "subsample": None,
    "order": "random",
    "dim": 5,
    "N": 20000,
    "cv_form": "increment",
    "kind": "gaussian-ar",
    "rho": 0.5,
    "offset": 0.0,
    "binary": False,
}


def fmt(x):
    return "%.17g" % x


def stream(seed, *key):
    """Independent generator for ``key`` under the master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    print(f"wrote {path} ({len(rows)} rows)")


# -- configuration ---------------------------------------------------------


@dataclass
class RunConfig:
    input: str = None
    method: str = "cube-full"
    M: int = 100
    burnin: int = 0
    seed: int = 0
    replicates: int = 1
    metrics: tuple = METRICS
    out: str = "."
    workers: int = 1
    target: str = None
    ref_max: int = 5000
    bandwidth: float = None
    boxes: int = 4096
    ed_drop_ref: bool = False
    subsample: str = None
    order: str = "random"
    dim: int = 5
    N: int = 20000
    cv_form: str = "increment"
    kind: str = "gaussian-ar"
    rho: float = 0.5
    offset: float = 0.0
    binary: bool = False

    def __post_init__(self):
        if int(self.M) < 1:
            raise InvalidRange("-M must be at least 1")
        if int(self.burnin) < 0:
            raise InvalidRange("--burnin must be nonnegative")
        if int(self.replicates) < 1:
            raise InvalidRange("--replicates must be at least 1")
        if int(self.workers) < 1:
            raise InvalidRange("--workers must be at least 1")
        if isinstance(self.metrics, str):
            self.metrics = tuple(m.strip() for m in self.metrics.split(",") if m.strip())
        unknown = set(self.metrics) - set(METRICS)
        if unknown:
            raise InvalidRange(f"unknown metric(s) {sorted(unknown)}; choose from {','.join(METRICS)}")

    @property
    def methods(self):
        names = tuple(m.strip() for m in str(self.method).split(",") if m.strip())
        for m in names:
            if m not in METHODS:
                raise InvalidRange(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
        return names


def load_config(args):
    """Defaults, then the JSON ``--config`` file, then explicit flags."""
    merged = dict(DEFAULTS)
    given = {k: v for k, v in vars(args).items() if k not in ("command", "config", "func")}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ParseError(exc.strerror or str(exc), args.config) from None
        except json.JSONDecodeError as exc:
            raise ParseError(exc.msg, args.config, exc.lineno) from None
        if not isinstance(data, dict):
            raise ParseError("config must be a JSON object", args.config)
        data = {k.replace("-", "_"): v for k, v in data.items()}
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ParseError(f"unknown config key(s) {sorted(unknown)}", args.config)
        merged.update(data)
    merged.update(given)
    return RunConfig(**merged)


def _load_target(path):
    if path is None:
        raise InvalidRange("cube-gibbs needs --target with mu and Sigma")
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return samplers.TruncatedNormalTarget(data["mu"], data["Sigma"])
    except OSError as exc:
        raise ParseError(exc.strerror or str(exc), path) from None
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"target file needs mu and Sigma ({exc})", path) from None


def _chain(cfg):
    if cfg.input is None:
        raise InvalidRange("--input is required")
    chain = ingest_chain(cfg.input)
    if cfg.burnin >= chain.N:
        raise InvalidRange(f"--burnin {cfg.burnin} leaves no states (N={chain.N})")
    return chain


# -- method runs -------------------------------------------------------------


@dataclass
class Selection:
    """Selected points of one run, as indices into the full chain."""

    indices: np.ndarray
    signs: np.ndarray
    magnitude: float
    omega: float = 1.0
    landing_units: int = 0
    max_cv_residual: float = 0.0


def control_variates(chain, method, target=None, cv_form="increment"):
    if method == "cube-full":
        return cvs.score_cv_full(chain)
    if method == "cube-diagonal":
        return cvs.score_cv_diagonal(chain)
    if method == "cube-gibbs":
        return cvs.gibbs_cv_truncnorm(chain, target.mu, target.Sigma, form=cv_form)
    raise InvalidRange(f"{method} has no control variates")


@dataclass
class _Context:
    """What a replicate needs; shipped to worker processes."""

    chain: cvs.Chain
    burnin: int
    M: int
    seed: int
    order: str
    bandwidth: float
    cv: dict
    weights: dict


def _run(ctx, method, r):
    post = ctx.chain.after_burnin(ctx.burnin)
    b = ctx.burnin
    if method == "thin":
        idx = thinning.standard_thin(post, 0, ctx.M)
        return Selection(idx + b, np.ones(ctx.M, dtype=np.int64), 1.0 / ctx.M)
    if method == "stein-greedy":
        idx = thinning.stein_thin_greedy(post, ctx.M, ctx.bandwidth)
        return Selection(idx + b, np.ones(ctx.M, dtype=np.int64), 1.0 / ctx.M)
    cv = ctx.cv[method]
    sub = thinning.cube_thin(post, cv, ctx.M, stream(ctx.seed, 0, r), weights=ctx.weights[method], order=ctx.order)
    scale = 1.0 + np.abs(cv.values).max(axis=0)
    return Selection(
        sub.indices + b,
        sub.signs,
        sub.magnitude,
        sub.omega,
        sub.residual,
        float(np.abs(sub.cv_residuals / scale).max()),
    )


def _context(cfg, chain, methods):
    post = chain.after_burnin(cfg.burnin)
    target = _load_target(cfg.target) if "cube-gibbs" in methods else None
    cv, weights = {}, {}
    for m in methods:
        if m.startswith("cube-"):
            cv[m] = control_variates(post, m, target, cfg.cv_form)
            weights[m] = cvs.cv_weights(cv[m])
    if not 1 <= cfg.M < post.N:
        raise InvalidRange(f"-M must lie in [1, {post.N}) after burn-in")
    bandwidth = cfg.bandwidth
    if "stein-greedy" in methods and bandwidth is None:
        bandwidth = qm.median_bandwidth(post.states, seed=stream(cfg.seed, 3))
    return _Context(chain, cfg.burnin, cfg.M, cfg.seed, cfg.order, bandwidth, cv, weights)


def _map(fn, items, workers):
    """Ordered map, in a process pool when ``workers > 1``."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _task(ctx, job):
    method, r = job
    return _run(ctx, method, r)


# -- commands ---------------------------------------------------------------


def cmd_weights(cfg):
    chain = _chain(cfg)
    method = cfg.methods[0]
    if not method.startswith("cube-"):
        raise InvalidRange("weights needs a control-variate method (cube-full, cube-diagonal, cube-gibbs)")
    post = chain.after_burnin(cfg.burnin)
    target = _load_target(cfg.target) if method == "cube-gibbs" else None
    ws = cvs.cv_weights(control_variates(post, method, target, cfg.cv_form))
    os.makedirs(cfg.out, exist_ok=True)
    rows = [(cfg.burnin + n, float(w)) for n, w in enumerate(ws.weights)]
    _write_csv(os.path.join(cfg.out, "weights.csv"), ["index", "weight"], rows)
    return 0


def cmd_thin(cfg):
    chain = _chain(cfg)
    methods = cfg.methods
    ctx = _context(cfg, chain, methods)
    jobs = [(m, r) for m in methods for r in range(cfg.replicates)]
    results = _map(partial(_task, ctx), jobs, cfg.workers)
    os.makedirs(cfg.out, exist_ok=True)
    points, summary = [], []
    for (m, r), sel in zip(jobs, results):
        for i, s in zip(sel.indices, sel.signs):
            points.append((m, r, int(i), int(s), float(sel.magnitude)))
        summary.append(
            (m, r, cfg.seed, cfg.M, float(sel.omega), int(sel.landing_units > 0), sel.landing_units, float(sel.max_cv_residual))
        )
    _write_csv(os.path.join(cfg.out, "subsample.csv"), ["method", "replicate", "index", "sign", "magnitude"], points)
    _write_csv(
        os.path.join(cfg.out, "thin_summary.csv"),
        ["method", "replicate", "seed", "M", "omega", "landed", "landing_units", "max_cv_residual"],
        summary,
    )
    return 0


def reference_indices(n, cap):
    """Evenly spaced indices capping a reference sample at ``cap`` points."""
    if cap is None or cap <= 0 or n <= cap:
        return np.arange(n)
    return thinning.standard_thin(n, 0, cap)


@dataclass
class _Scorer:
    chain: cvs.Chain
    burnin: int
    metrics: tuple
    ref_idx: np.ndarray
    bandwidth: float
    boxes: int
    seed: int
    drop_ref: bool

    def score(self, sel, r):
        post = self.chain.after_burnin(self.burnin)
        X = self.chain.states[sel.indices]
        weights = sel.magnitude * sel.signs
        nu = qm.EmpiricalSignedMeasure(X, weights)
        ref = qm.EmpiricalSignedMeasure.uniform(post.states[self.ref_idx])
        out = {}
        if "ksd" in self.metrics:
            out["ksd"] = qm.ksd(X, self.chain.scores[sel.indices], self.bandwidth, sel.signs)
        if "ed" in self.metrics:
            out["ed"] = qm.energy_distance(nu, ref, drop_ref_term=self.drop_ref)
        if "star" in self.metrics:
            out["star"] = qm.star_discrepancy(nu, ref, self.boxes, stream(self.seed, 1, r))
        return out


def _score_task(scorer, item):
    sel, r = item
    return scorer.score(sel, r)


def _read_subsample(path):
    groups = {}
    try:
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip().split(",")
            need = ["method", "replicate", "index", "sign", "magnitude"]
            if header != need:
                raise ParseError(f"expected header {','.join(need)}", path, 1)
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                parts = line.strip().split(",")
                if len(parts) != 5:
                    raise ParseError("expected 5 fields", path, lineno)
                try:
                    key = (parts[0], int(parts[1]))
                    groups.setdefault(key, []).append((int(parts[2]), int(parts[3]), float(parts[4])))
                except ValueError:
                    raise ParseError("malformed row", path, lineno) from None
    except OSError as exc:
        raise ParseError(exc.strerror or str(exc), path) from None
    out = []
    for key in sorted(groups):
        rows = np.array(groups[key])
        out.append((key, Selection(rows[:, 0].astype(np.int64), rows[:, 1].astype(np.int64), float(rows[0, 2]))))
    return out


def _metrics(cfg, methods):
    chain = _chain(cfg)
    if "ksd" in cfg.metrics and not chain.has_scores:
        raise MissingScores("ksd requested but the chain file has no scores")
    post = chain.after_burnin(cfg.burnin)
    ref_idx = reference_indices(post.N, cfg.ref_max)
    bandwidth = cfg.bandwidth
    if bandwidth is None and ("ksd" in cfg.metrics or "stein-greedy" in methods):
        bandwidth = qm.median_bandwidth(post.states[ref_idx], seed=stream(cfg.seed, 3))
    scorer = _Scorer(chain, cfg.burnin, cfg.metrics, ref_idx, bandwidth, cfg.boxes, cfg.seed, cfg.ed_drop_ref)

    if cfg.subsample is not None:
        labelled = _read_subsample(cfg.subsample)
        for (m, r), sel in labelled:
            if sel.indices.min() < cfg.burnin or sel.indices.max() >= chain.N:
                raise ParseError(f"index outside the post-burn-in chain ({m}, replicate {r})", cfg.subsample)
    else:
        cfg_bw = RunConfig(**{**cfg.__dict__, "bandwidth": bandwidth})
        ctx = _context(cfg_bw, chain, methods)
        jobs = [(m, r) for m in methods for r in range(cfg.replicates)]
        sels = _map(partial(_task, ctx), jobs, cfg.workers)
        labelled = list(zip(jobs, sels))

    scores = _map(partial(_score_task, scorer), [(sel, r) for (m, r), sel in labelled], cfg.workers)
    rows = []
    for ((m, r), _), sc in zip(labelled, scores):
        rows.append((m, r) + tuple(float(sc[k]) if k in sc else "" for k in METRICS))
    os.makedirs(cfg.out, exist_ok=True)
    header = ["method", "replicate", "ksd", "energy_distance", "star_discrepancy"]
    _write_csv(os.path.join(cfg.out, "metrics.csv"), header, rows)
    return 0


def cmd_metrics(cfg):
    return _metrics(cfg, cfg.methods)


def cmd_compare(cfg, explicit_method=False):
    """All methods the chain supports unless ``--method`` was given."""
    if explicit_method:
        return _metrics(cfg, cfg.methods)
    chain = _chain(cfg)
    methods = ["thin"]
    if chain.has_scores:
        methods = ["cube-full", "cube-diagonal", "thin", "stein-greedy"]
    if cfg.target is not None:
        methods.insert(0, "cube-gibbs")
    return _metrics(cfg, tuple(methods))


ESTIMATORS = ("usualEstim", "thinEstim", "regressionEstim", "cubeEstim")


@dataclass
class _Experiment:
    target: samplers.TruncatedNormalTarget
    N: int
    M: int
    seed: int
    cv_form: str
    order: str


def experiment_replicate(exp, r):
    """Four estimates of the target mean from one fresh Gibbs chain."""
    rng = stream(exp.seed, 0, r)
    chain = samplers.truncnorm_gibbs(exp.target, exp.N, rng).to_chain()
    X = chain.states
    cv = cvs.gibbs_cv_truncnorm(chain, exp.target.mu, exp.target.Sigma, form=exp.cv_form)
    ws = cvs.cv_weights(cv)
    sub = thinning.cube_thin(chain, cv, exp.M, rng, weights=ws, order=exp.order)
    return {
        "usualEstim": X.mean(axis=0),
        "thinEstim": X[thinning.standard_thin(chain, 0, exp.M)].mean(axis=0),
        "regressionEstim": ws.weights @ X,
        "cubeEstim": sub.magnitude * (sub.signs @ X[sub.indices]),
    }


def experiment_target(d, seed):
    return samplers.random_truncnorm_target(int(d), stream(seed, 2))


def cmd_experiment_truncnorm(cfg):
    if cfg.dim < 1 or cfg.N < 2:
        raise InvalidRange("--dim must be >= 1 and -N >= 2")
    if not 1 <= cfg.M < cfg.N:
        raise InvalidRange("-M must lie in [1, N)")
    target = experiment_target(cfg.dim, cfg.seed)
    exp = _Experiment(target, int(cfg.N), int(cfg.M), cfg.seed, cfg.cv_form, cfg.order)
    results = _map(partial(experiment_replicate, exp), range(cfg.replicates), cfg.workers)
    rows = []
    for r, est in enumerate(results):
        for name in ESTIMATORS:
            for i, v in enumerate(est[name]):
                rows.append((r, i, name, float(v)))
    os.makedirs(cfg.out, exist_ok=True)
    _write_csv(os.path.join(cfg.out, "experiment.csv"), ["replicate", "component", "estimator", "value"], rows)
    with open(os.path.join(cfg.out, "target.json"), "w", encoding="utf-8") as fh:
        json.dump({"mu": target.mu.tolist(), "Sigma": target.Sigma.tolist()}, fh)
        fh.write("\n")
    return 0


def cmd_simulate(cfg):
    """Synthetic chains: a Gaussian AR(1) chain with scores, or a truncated-normal Gibbs chain."""
    rng = stream(cfg.seed, 4)
    d, N = int(cfg.dim), int(cfg.N)
    os.makedirs(cfg.out, exist_ok=True)
    if cfg.kind == "gaussian-ar":
        mu = rng.standard_normal(d)
        Sigma = samplers.random_spd(d, rng) + np.eye(d)
        x0 = mu + cfg.offset * np.sqrt(np.diag(Sigma))
        chain = samplers.gaussian_ar_chain(mu, Sigma, N, rng, rho=cfg.rho, x0=x0)
    elif cfg.kind == "truncnorm-gibbs":
        target = experiment_target(d, cfg.seed)
        mu, Sigma = target.mu, target.Sigma
        chain = samplers.truncnorm_gibbs(target, N, rng).to_chain()
    else:
        raise InvalidRange(f"unknown --kind {cfg.kind!r}")
    path = os.path.join(cfg.out, "chain.bin" if cfg.binary else "chain.csv")
    write_chain(chain, path, binary=cfg.binary)
    print(f"wrote {path} ({N} rows)")
    with open(os.path.join(cfg.out, "target.json"), "w", encoding="utf-8") as fh:
        json.dump({"mu": np.asarray(mu).tolist(), "Sigma": np.asarray(Sigma).tolist()}, fh)
        fh.write("\n")
    return 0


# -- argument parsing ----------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON file of option values; flags take precedence")
    common.add_argument("--input", help="chain file (text or CBTH1 binary)")
    common.add_argument("--method", help=f"one or more of {', '.join(METHODS)}, comma separated")
    common.add_argument("-M", type=int, help="subsample size (default 100)")
    common.add_argument("--burnin", type=int, help="states dropped before weighting (default 0)")
    common.add_argument("--seed", type=int, help="master seed (default 0)")
    common.add_argument("--replicates", type=int, help="independent replicates (default 1)")
    common.add_argument("--metrics", help="subset of ksd,ed,star (default all)")
    common.add_argument("--out", help="output directory (default .)")
    common.add_argument("--workers", type=int, help="worker processes for replicates (default 1)")
    common.add_argument("--target", help="JSON file with mu and Sigma, for cube-gibbs")
    common.add_argument("--cv-form", dest="cv_form", choices=("increment", "state"), help="Gibbs control-variate form")
    common.add_argument("--order", choices=("random", "given"), help="unit order in the cube flight")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="cubethin", description="Compress MCMC output by cube thinning.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("weights", parents=[common], argument_default=argparse.SUPPRESS, help="write control-variate weights")
    sub.add_parser("thin", parents=[common], argument_default=argparse.SUPPRESS, help="run thinning methods")
    for name in ("metrics", "compare"):
        helptext = "score thinning methods against the chain" if name == "metrics" else "score every applicable method"
        p = sub.add_parser(name, parents=[common], argument_default=argparse.SUPPRESS, help=helptext)
        p.add_argument("--ref-max", dest="ref_max", type=int, help="cap on reference points (default 5000)")
        p.add_argument("--bandwidth", type=float, help="Stein kernel bandwidth (default median heuristic)")
        p.add_argument("--boxes", type=int, help="boxes for the star discrepancy (default 4096)")
        p.add_argument("--ed-drop-ref", dest="ed_drop_ref", action="store_true", help="omit the reference-only energy term")
        if name == "metrics":
            p.add_argument("--subsample", help="score this subsample.csv instead of running methods")
    p = sub.add_parser("experiment-truncnorm", parents=[common], argument_default=argparse.SUPPRESS, help="truncated-normal estimator comparison")
    p.add_argument("--dim", type=int, help="dimension (default 5)")
    p.add_argument("-N", type=int, help="Gibbs iterations per replicate (default 20000)")
    p = sub.add_parser("simulate", parents=[common], argument_default=argparse.SUPPRESS, help="write a synthetic chain")
    p.add_argument("--kind", choices=("gaussian-ar", "truncnorm-gibbs"), help="chain type")
    p.add_argument("--dim", type=int, help="dimension (default 5)")
    p.add_argument("-N", type=int, help="chain length (default 20000)")
    p.add_argument("--rho", type=float, help="AR(1) coefficient (default 0.5)")
    p.add_argument("--offset", type=float, help="start this many sds from the mean (default 0)")
    p.add_argument("--binary", action="store_true", help="write the binary format")
    return parser


COMMANDS = {
    "weights": cmd_weights,
    "thin": cmd_thin,
    "metrics": cmd_metrics,
    "experiment-truncnorm": cmd_experiment_truncnorm,
    "simulate": cmd_simulate,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    verbose = getattr(args, "verbose", False)
    if hasattr(args, "verbose"):
        del args.verbose
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args)
        if args.command == "compare":
            return cmd_compare(cfg, explicit_method=hasattr(args, "method"))
        return COMMANDS[args.command](cfg)
    except (CubeThinError, ValueError, OSError) as exc:
        print(f"cubethin {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
