"""Command-line front end and experiment runner.

Single-shot subcommands cover the library surface (simulate, filter, verify,
fit, hmc, compare-pf, eval-baselines); `run` drives a config-described
experiment end to end: simulate replicates, filter, calibrate, sample, and
write the comparison tables as CSV artifacts.

Configs are TOML (JSON works as a drop-in mirror of the same structure).
Replicates fan out over worker processes; every worker renders its own rows
to a string and the parent concatenates the sections in replicate order, so
artifacts are byte-identical for any --threads value. Per-replicate seeds are
derived by hashing the master seed with the replicate index (and a task tag,
so e.g. the optimizer never shares a stream with the simulator).

Exit codes: 0 success, 2 malformed config or input, 3 numeric failure,
4 oracle residual above tolerance.
"""

import argparse
import csv
import dataclasses
import io
import json
import os
import sys
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

import numpy as np

from .baselines import (Degenerate, accuracy, cross_entropy, pf_loglik,
                        previous_guess, random_baseline)
from .cal import SupportViolation, cal_filter, cal_loglik, save_filter
from .exact import (TooLarge, ZeroLikelihood, enumerate_approx_model_loglik,
                    exact_forward_loglik)
from .infer import (HmcConfig, NonFinite, OptimConfig, constrained_vector,
                    fit_mle, free_coordinate_labels, grad_loglik, hmc_sample,
                    save_chain, save_fit_trace)
from .models import (ConfigError, MissingCommunity, OutOfDomain, ParseError,
                     load_covariates, save_covariates, with_intercept)
from .probcore import RngStream
from .simulate import (COVARIATE_KINDS, generate_covariates, load_latent,
                       load_observations, save_latent, save_observations,
                       simulate, sir_covariate_views)
from .zoo import ZOO, decoupled, get_model

ORACLE_TOL = 1e-10

_TASKS = ("simulate", "filter", "fit", "hmc", "pf", "baselines")

# default covariate recipe per model; "sir-views" draws the paired
# true-position / centroid tables from one stream
_MODEL_KIND = {
    "homog-sis": "gaussian-scalar",
    "spatial-sis": "spatial-mixture",
    "community-sis": "community",
    "sir-wellspec": "sir-views",
    "sir-misspec": "sir-views",
    "sis-logistic": "gaussian-intercept",
    "seir-logistic": "gaussian-intercept",
    "culling-sir": "synthetic-farms",
}

_KINDS = tuple(COVARIATE_KINDS) + ("gaussian-intercept", "sir-views")


def derived_seed(master: int, *parts) -> int:
    """Deterministic 32-bit seed from the master seed and context tags."""
    return zlib.crc32(":".join([str(master), *map(str, parts)]).encode())


def covariates_for(model: str, kind: str | None, N: int, rng: RngStream):
    kind = _MODEL_KIND[model] if kind is None else kind
    if kind == "sir-views":
        well, mis = sir_covariate_views(N, rng)
        return mis if model == "sir-misspec" else well
    if kind == "gaussian-intercept":
        return with_intercept(generate_covariates("gaussian-scalar", N, rng))
    return generate_covariates(kind, N, rng)


def ingest(cov_path, obs_path, spec=None):
    """Load a covariates/observations file pair and cross-validate it."""
    W = load_covariates(cov_path)
    Y = load_observations(obs_path)
    if Y.shape[1] != W.N:
        raise ParseError(
            f"{obs_path}: observations cover {Y.shape[1]} individuals, "
            f"covariates file has {W.N}"
        )
    if spec is not None:
        spec.validate_covariates(W)
        bad = np.argwhere(Y > spec.M)
        if bad.size:
            t, n = bad[0]
            raise ParseError(
                f"{obs_path}: observation index {Y[t, n]} out of range for "
                f"M={spec.M} at t={t + 1}, n={n}"
            )
    return W, Y


# ---------------------------------------------------------------------------
# experiment config


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    h: float
    params: dict
    frozen: tuple | None  # replaces the model's default frozen set when given
    kind: str | None
    sizes: tuple[int, ...]
    T: int
    replicates: int
    seed: int
    tasks: tuple[str, ...]
    fit: dict
    hmc: dict
    pf: dict
    baselines: dict
    out_dir: str

    def template(self, spec):
        frozen = None if self.frozen is None else tuple(self.frozen)
        return spec.make_params(frozen=frozen, **self.params)


def _section(obj, name, path) -> dict:
    block = obj.pop(name, {})
    if not isinstance(block, dict):
        raise ConfigError(f"{path}: [{name}] must be a table")
    return block


def _block_kwargs(cls, block, where):
    allowed = {f.name for f in dataclasses.fields(cls)} - {"seed"}
    unknown = sorted(set(block) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    return dict(block)


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        raw = fh.read()
    if str(path).endswith(".json"):
        obj = json.loads(raw.decode())
    else:
        obj = tomllib.loads(raw.decode())

    model_blk = _section(obj, "model", path)
    data_blk = _section(obj, "data", path)
    tasks_blk = _section(obj, "tasks", path)
    fit_blk = _section(obj, "fit", path)
    hmc_blk = _section(obj, "hmc", path)
    pf_blk = _section(obj, "pf", path)
    base_blk = _section(obj, "baselines", path)
    out_blk = _section(obj, "output", path)
    obj.pop("title", None)
    if obj:
        raise ConfigError(f"{path}: unknown sections {sorted(obj)}")

    name = model_blk.pop("name", None)
    if not isinstance(name, str):
        raise ConfigError(f"{path}: [model] name is required")
    h = float(model_blk.pop("h", 1.0))
    params = model_blk.pop("params", {})
    frozen = model_blk.pop("frozen", None)
    if model_blk:
        raise ConfigError(f"{path}: unknown [model] keys {sorted(model_blk)}")

    sizes = data_blk.pop("N", None)
    sizes = tuple(sizes) if isinstance(sizes, list) else (sizes,)
    T = data_blk.pop("T", None)
    replicates = int(data_blk.pop("replicates", 1))
    seed = int(data_blk.pop("seed", 0))
    kind = data_blk.pop("kind", None)
    if data_blk:
        raise ConfigError(f"{path}: unknown [data] keys {sorted(data_blk)}")
    if not all(isinstance(n, int) and n >= 1 for n in sizes):
        raise ConfigError(f"{path}: [data] N must be a positive integer or list")
    if not (isinstance(T, int) and T >= 1):
        raise ConfigError(f"{path}: [data] T must be a positive integer")
    if replicates < 1:
        raise ConfigError(f"{path}: [data] replicates must be >= 1")
    if kind is not None and kind not in _KINDS:
        raise ConfigError(f"{path}: unknown covariate kind {kind!r}")

    tasks = tuple(tasks_blk.pop("run", ["simulate"]))
    if tasks_blk:
        raise ConfigError(f"{path}: unknown [tasks] keys {sorted(tasks_blk)}")
    bad = [t for t in tasks if t not in _TASKS]
    if bad or not tasks:
        raise ConfigError(f"{path}: [tasks] run must be a non-empty subset of {_TASKS}")
    tasks = tuple(t for t in _TASKS if t in tasks)  # canonical order

    for blk, label in ((fit_blk, "fit"), (hmc_blk, "hmc"), (pf_blk, "pf"),
                       (base_blk, "baselines")):
        if "seed" in blk:
            raise ConfigError(f"{path}: [{label}] seed is derived from [data] seed")

    cfg = ExperimentConfig(
        model=name, h=h, params=dict(params),
        frozen=None if frozen is None else tuple(frozen),
        kind=kind, sizes=sizes, T=T, replicates=replicates, seed=seed,
        tasks=tasks, fit=dict(fit_blk), hmc=dict(hmc_blk), pf=dict(pf_blk),
        baselines=dict(base_blk),
        out_dir=str(out_blk.get("dir", "artifacts")),
    )
    _validate_config(cfg, path)
    return cfg


def _validate_config(cfg: ExperimentConfig, path) -> None:
    spec = get_model(cfg.model, cfg.h)  # raises on unknown model
    cfg.template(spec)  # raises on unknown or out-of-domain parameters
    if "fit" in cfg.tasks:
        OptimConfig(**_block_kwargs(OptimConfig, cfg.fit, f"{path}: [fit]"))
    if "hmc" in cfg.tasks:
        HmcConfig(**_block_kwargs(HmcConfig, cfg.hmc, f"{path}: [hmc]"))
    if "pf" in cfg.tasks:
        known = {"particles", "runs", "methods", "timing"}
        unknown = sorted(set(cfg.pf) - known)
        if unknown:
            raise ConfigError(f"{path}: unknown [pf] keys {unknown}")
        if len(cfg.sizes) > 1 or cfg.replicates > 1:
            raise ConfigError(
                f"{path}: the pf task runs on a single dataset; use one N "
                "and replicates = 1"
            )
        for m in cfg.pf.get("methods", ["bootstrap"]):
            if m not in ("bootstrap", "auxiliary"):
                raise ConfigError(f"{path}: unknown pf method {m!r}")
    if "baselines" in cfg.tasks:
        known = {"uncertain", "certain", "misspec"}
        unknown = sorted(set(cfg.baselines) - known)
        if unknown:
            raise ConfigError(f"{path}: unknown [baselines] keys {unknown}")
        if cfg.baselines.get("misspec") and cfg.model != "sir-wellspec":
            raise ConfigError(
                f"{path}: [baselines] misspec pairs the sir-wellspec model "
                "with its centroid-kernel partner"
            )


def find_config(name_or_path) -> str:
    """Resolve a config argument: a real file wins, then a bundled name."""
    if os.path.exists(name_or_path):
        return str(name_or_path)
    base = str(name_or_path)
    if not base.endswith(".toml"):
        base += ".toml"
    bundled = resources.files("calepi").joinpath("configs", os.path.basename(base))
    if bundled.is_file():
        return str(bundled)
    raise ConfigError(f"no config file or bundled config named {name_or_path!r}")


# ---------------------------------------------------------------------------
# experiment runner


def _rows_to_csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf).writerows(rows)
    return buf.getvalue()


def _replicate_job(cfg: ExperimentConfig, N: int, rep: int, idx: int) -> dict:
    spec = get_model(cfg.model, cfg.h)
    theta = cfg.template(spec)
    rng_w = RngStream(derived_seed(cfg.seed, idx, "covariates"), (0,))
    misspec = bool(cfg.baselines.get("misspec")) and "baselines" in cfg.tasks
    if misspec:
        W, W_mis = sir_covariate_views(N, rng_w)
    else:
        W = covariates_for(cfg.model, cfg.kind, N, rng_w)
    X, Y = simulate(spec, W, theta, cfg.T,
                    RngStream(derived_seed(cfg.seed, idx, "simulate"), (0,)))

    sections = {}
    if "simulate" in cfg.tasks:
        sections["data_latent.csv"] = _rows_to_csv(
            [N, rep, t, n, int(X[t, n])]
            for t in range(X.shape[0]) for n in range(N)
        )
        sections["data_obs.csv"] = _rows_to_csv(
            [N, rep, t + 1, n, int(Y[t, n])]
            for t in range(Y.shape[0]) for n in range(N)
        )

    fo = None
    if "filter" in cfg.tasks or "baselines" in cfg.tasks:
        fo = cal_filter(spec, W, Y, theta, store=True)
    if "filter" in cfg.tasks:
        rows = []
        for t in range(cfg.T):
            for n in range(N):
                for i in range(spec.M):
                    rows.append([
                        N, rep, t + 1, n, i,
                        repr(float(fo.pi_pred[t, n, i])),
                        repr(float(fo.mu[t, n, i])),
                        repr(float(fo.pi_filt[t + 1, n, i])),
                    ])
                rows.append([N, rep, t + 1, n, spec.M, "",
                             repr(float(fo.mu[t, n, spec.M])), ""])
        sections["filter.csv"] = _rows_to_csv(rows)

    if "fit" in cfg.tasks:
        oc = OptimConfig(**cfg.fit, seed=derived_seed(cfg.seed, idx, "fit"))
        res = fit_mle(spec, W, Y, oc, template=theta)
        lls, its = res.trace
        sections["fit_trace.csv"] = _rows_to_csv(
            [N, rep, i, repr(float(lls[i])), *(repr(float(v)) for v in its[i])]
            for i in range(len(lls))
        )
        estimate = tuple(float(v) for v in constrained_vector(res.theta))
        sections["estimates.csv"] = _rows_to_csv(
            [[N, rep, repr(res.loglik), *(repr(v) for v in estimate)]]
        )
        sections["__estimates__"] = [(N, rep, res.loglik, estimate)]

    if "hmc" in cfg.tasks:
        hc = HmcConfig(**cfg.hmc, seed=derived_seed(cfg.seed, idx, "hmc"))
        res = hmc_sample(spec, W, Y, hc, theta0=theta)
        sections["chain.csv"] = _rows_to_csv(
            [N, rep, i, repr(float(res.loglik[i])),
             *(repr(float(v)) for v in res.iterates[i]),
             int(res.accepted[i]), repr(float(res.step_sizes[i]))]
            for i in range(len(res.loglik))
        )

    if "baselines" in cfg.tasks:
        rows = _metric_rows(cfg, spec, theta, N, rep, X, Y, fo,
                            W_mis if misspec else None)
        sections["metrics.csv"] = _rows_to_csv(rows)
    return sections


def _metric_rows(cfg, spec, theta, N, rep, X, Y, fo, W_mis):
    # score on the unreported cells: on reported ones every classifier echoes
    # the report, so those cells carry no comparison signal
    mask = Y == 0
    truth = X[1:][mask][:, None]
    uncertain = float(cfg.baselines.get("uncertain", 0.34))
    certain = float(cfg.baselines.get("certain", 0.99))
    columns = [
        random_baseline(Y, spec.M),
        previous_guess(Y, spec.M, uncertain),
        previous_guess(Y, spec.M, certain),
        fo.pi_filt[1:],
    ]
    if W_mis is not None:
        partner = get_model("sir-misspec", cfg.h)
        theta_mis = partner.make_params(**cfg.params)
        columns.append(cal_filter(partner, W_mis, Y, theta_mis, store=True).pi_filt[1:])
    columns = [p[mask][:, None, :] for p in columns]
    return [
        [N, rep, "cross_entropy",
         *(repr(float(cross_entropy(truth, p))) for p in columns)],
        [N, rep, "accuracy",
         *(repr(float(accuracy(truth, p))) for p in columns)],
    ]


def _pf_job(cfg: ExperimentConfig, method: str, P: int, run: int) -> dict:
    spec = get_model(cfg.model, cfg.h)
    theta = cfg.template(spec)
    N = cfg.sizes[0]
    W = covariates_for(cfg.model, cfg.kind, N,
                       RngStream(derived_seed(cfg.seed, 0, "covariates"), (0,)))
    _, Y = simulate(spec, W, theta, cfg.T,
                    RngStream(derived_seed(cfg.seed, 0, "simulate"), (0,)))
    timing = cfg.pf.get("timing", True)
    start = time.perf_counter()
    if method == "cal":
        ll = cal_loglik(spec, W, Y, theta)
    else:
        rng = RngStream(derived_seed(cfg.seed, "pf", method, P, run), (0,))
        ll, _ = pf_loglik(spec, W, Y, theta, P, rng,
                          auxiliary=(method == "auxiliary"))
    elapsed = time.perf_counter() - start
    row = [method, P, run, repr(float(ll)),
           repr(elapsed) if timing else ""]
    return {"pf_compare.csv": _rows_to_csv([row])}


def _run_job(job):
    kind, rest = job[0], job[1:]
    return _replicate_job(*rest) if kind == "rep" else _pf_job(*rest)


def _artifact_headers(cfg: ExperimentConfig) -> dict:
    labels = free_coordinate_labels(cfg.template(get_model(cfg.model, cfg.h)))
    metric_cols = ["Random", "Prev. uncertain", "Prev. certain", "CAL"]
    if cfg.baselines.get("misspec"):
        metric_cols.append("CAL missp.")
    return {
        "data_latent.csv": ["N", "rep", "t", "n", "state_index"],
        "data_obs.csv": ["N", "rep", "t", "n", "obs_index"],
        "filter.csv": ["N", "rep", "t", "n", "state_index",
                       "pi_pred", "mu", "pi_filt"],
        "fit_trace.csv": ["N", "rep", "iter", "loglik", *labels],
        "estimates.csv": ["N", "rep", "loglik", *labels],
        "chain.csv": ["N", "rep", "iter", "loglik", *labels,
                      "accepted", "step_size"],
        "pf_compare.csv": ["method", "P", "run", "loglik", "seconds"],
        "metrics.csv": ["N", "rep", "metric", *metric_cols],
    }


def run_experiment(cfg: ExperimentConfig, threads: int = 1,
                   out_dir: str | None = None) -> list[str]:
    """Execute every configured task and write merged artifacts; returns the
    paths written."""
    if threads < 1:
        raise ConfigError(f"threads must be >= 1, got {threads}")
    jobs = []
    idx = 0
    rep_tasks = [t for t in cfg.tasks if t != "pf"]
    if rep_tasks:
        for N in cfg.sizes:
            for rep in range(cfg.replicates):
                jobs.append(("rep", cfg, N, rep, idx))
                idx += 1
    if "pf" in cfg.tasks:
        jobs.append(("pf", cfg, "cal", 0, 0))
        runs = int(cfg.pf.get("runs", 10))
        for method in cfg.pf.get("methods", ["bootstrap"]):
            for P in cfg.pf.get("particles", [512]):
                for run in range(runs):
                    jobs.append(("pf", cfg, method, int(P), run))

    if threads == 1:
        results = [_run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_job, jobs))

    sections: dict[str, list[str]] = {}
    estimates = []
    for res in results:
        estimates.extend(res.pop("__estimates__", []))
        for name, text in res.items():
            sections.setdefault(name, []).append(text)

    out = cfg.out_dir if out_dir is None else out_dir
    os.makedirs(out, exist_ok=True)
    headers = _artifact_headers(cfg)
    written = []
    for name in headers:
        if name not in sections:
            continue
        path = os.path.join(out, name)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(headers[name])
            for text in sections[name]:
                fh.write(text)
            if name == "estimates.csv":
                for row in _estimate_summaries(cfg, estimates):
                    wr.writerow(row)
        written.append(path)
    return written


def _estimate_summaries(cfg, estimates):
    """Mean and sample-std rows per population size, appended after the
    per-replicate estimates."""
    rows = []
    for N in cfg.sizes:
        block = np.array([[e[2], *e[3]] for e in estimates if e[0] == N])
        if block.size == 0:
            continue
        mean = block.mean(axis=0)
        std = (block.std(axis=0, ddof=1) if block.shape[0] > 1
               else np.zeros(block.shape[1]))
        rows.append([N, "mean", *(repr(float(v)) for v in mean)])
        rows.append([N, "std", *(repr(float(v)) for v in std)])
    return rows


# ---------------------------------------------------------------------------
# oracle verification


def _theta_in_box(spec, gen):
    vals = {}
    for name in spec.param_names:
        lo, hi = spec.param_box[name]
        v = np.asarray(spec.default_params[name])
        draw = gen.uniform(lo, hi, size=v.shape)
        vals[name] = float(draw) if v.ndim == 0 else draw
    return spec.make_params().with_values(**vals)


def verify_oracles(trials: int, seed: int) -> list[tuple[str, float]]:
    """Max residuals of the filter against its independent oracles: the
    per-individual enumeration of the approximate model, the exact forward
    pass on decoupled models, and the tangent-carrying value path."""
    names = list(ZOO)
    identity = decouple = dualval = 0.0
    for trial in range(trials):
        name = names[trial % len(names)]
        spec = get_model(name)
        gen = RngStream(derived_seed(seed, "verify", trial), (0,)).generator
        N = 1 + trial % 3
        T = 1 + trial % 4
        W = covariates_for(name, None, N,
                           RngStream(derived_seed(seed, "verify-cov", trial), (0,)))
        theta_sim = _theta_in_box(spec, gen)
        theta = _theta_in_box(spec, gen)
        _, Y = simulate(spec, W, theta_sim, T,
                        RngStream(derived_seed(seed, "verify-sim", trial), (0,)))

        ll = cal_loglik(spec, W, Y, theta)
        enum = enumerate_approx_model_loglik(spec, W, Y, theta)
        identity = max(identity, abs(ll - enum) / max(abs(ll), 1.0))

        # the exact-forward oracle needs data the decoupled model can produce
        dspec = decoupled(spec)
        _, Yd = simulate(dspec, W, theta_sim, T,
                         RngStream(derived_seed(seed, "verify-dec", trial), (0,)))
        lld = cal_loglik(dspec, W, Yd, theta)
        exact = exact_forward_loglik(dspec, W, Yd, theta)
        decouple = max(decouple, abs(lld - exact))

        llv, _ = grad_loglik(spec, W, Y, theta)
        dualval = max(dualval, abs(llv - ll))
    return [
        ("enumeration identity (rel)", identity),
        ("decoupled exactness (abs)", decouple),
        ("dual value path (abs)", dualval),
    ]


# ---------------------------------------------------------------------------
# subcommands


def _parse_assignments(pairs) -> dict:
    out = {}
    for item in pairs or []:
        name, eq, raw = item.partition("=")
        if not eq:
            raise ConfigError(f"expected name=value, got {item!r}")
        try:
            out[name] = json.loads(raw)
        except json.JSONDecodeError:
            raise ConfigError(f"bad value for {name}: {raw!r}") from None
    return out


def _theta_from_args(spec, args):
    frozen = None
    if getattr(args, "freeze", None) is not None:
        frozen = tuple(s for s in args.freeze.split(",") if s)
    theta = spec.make_params(frozen=frozen)
    if getattr(args, "params_file", None):
        theta = theta.update_from_json(args.params_file)
    return theta.with_values(**_parse_assignments(args.set))


def _out_path(args, name: str) -> str:
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def cmd_simulate(args) -> int:
    spec = get_model(args.model)
    theta = _theta_from_args(spec, args)
    W = covariates_for(args.model, args.kind, args.N,
                       RngStream(derived_seed(args.seed, "covariates"), (0,)))
    X, Y = simulate(spec, W, theta, args.T,
                    RngStream(derived_seed(args.seed, "simulate"), (0,)))
    save_covariates(W, _out_path(args, "covariates.csv"))
    save_latent(X, _out_path(args, "data_latent.csv"))
    save_observations(Y, _out_path(args, "data_obs.csv"))
    theta.to_json(_out_path(args, "params.json"))
    counts = np.bincount(X[-1], minlength=spec.M)
    occupancy = ", ".join(f"{s}={c}" for s, c in zip(spec.state_names, counts))
    print(f"simulated {args.model}: N={args.N} T={args.T} -> {args.out} "
          f"(final {occupancy})")
    return 0


def cmd_filter(args) -> int:
    spec = get_model(args.model)
    W, Y = ingest(args.covariates, args.obs, spec)
    theta = _theta_from_args(spec, args)
    fo = cal_filter(spec, W, Y, theta, store=args.store_filter)
    print(f"loglik {fo.loglik!r}  (N={W.N}, T={Y.shape[0]})")
    if args.store_filter:
        path = _out_path(args, "filter.csv")
        save_filter(fo, path)
        print(f"wrote {path}")
    return 0


def cmd_verify(args) -> int:
    report = verify_oracles(args.trials, args.seed)
    print(f"oracle residuals ({args.trials} trials, tolerance {ORACLE_TOL:g}):")
    failed = False
    for label, residual in report:
        ok = residual <= ORACLE_TOL
        failed = failed or not ok
        print(f"  {label:<28} {residual:.3e}  {'OK' if ok else 'FAIL'}")
    return 4 if failed else 0


def cmd_fit(args) -> int:
    spec = get_model(args.model)
    W, Y = ingest(args.covariates, args.obs, spec)
    theta = _theta_from_args(spec, args)
    oc = OptimConfig(learning_rate=args.learning_rate, iterations=args.iterations,
                     restarts=args.restarts, seed=args.seed)
    res = fit_mle(spec, W, Y, oc, template=theta)
    path = _out_path(args, "fit_trace.csv")
    save_fit_trace(res, path)
    fitted = ", ".join(f"{k}={v:.4g}" for k, v in
                       zip(res.labels, constrained_vector(res.theta)))
    print(f"loglik {res.loglik!r} at restart {res.best}: {fitted}")
    print(f"wrote {path}")
    return 0


def cmd_hmc(args) -> int:
    spec = get_model(args.model)
    W, Y = ingest(args.covariates, args.obs, spec)
    theta = _theta_from_args(spec, args)
    hc = HmcConfig(leapfrog_steps=args.leapfrog_steps, step_size=args.step_size,
                   iterations=args.iterations, burn_in=args.burn_in,
                   thinning=args.thinning, adapt_window=args.adapt_window,
                   prior_mean=args.prior_mean, prior_var=args.prior_var,
                   seed=args.seed)
    res = hmc_sample(spec, W, Y, hc, theta0=theta)
    path = _out_path(args, "chain.csv")
    save_chain(res, path)
    post = res.constrained()
    means = ", ".join(f"{k}={v:.4g}" for k, v in zip(res.labels, post.mean(0)))
    print(f"acceptance {res.acceptance_rate:.3f}, {post.shape[0]} kept draws")
    print(f"posterior means: {means}")
    print(f"wrote {path}")
    return 0


def cmd_compare_pf(args) -> int:
    spec = get_model(args.model)
    W, Y = ingest(args.covariates, args.obs, spec)
    theta = _theta_from_args(spec, args)
    methods = [m for m in args.methods.split(",") if m]
    for m in methods:
        if m not in ("bootstrap", "auxiliary"):
            raise ConfigError(f"unknown pf method {m!r}")
    particles = [int(p) for p in args.particles.split(",") if p]
    path = _out_path(args, "pf_compare.csv")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["method", "P", "run", "loglik", "seconds"])
        start = time.perf_counter()
        ll = cal_loglik(spec, W, Y, theta)
        wr.writerow(["cal", 0, 0, repr(float(ll)), repr(time.perf_counter() - start)])
        for method in methods:
            for P in particles:
                for run in range(args.runs):
                    rng = RngStream(derived_seed(args.seed, "pf", method, P, run), (0,))
                    start = time.perf_counter()
                    ll, _ = pf_loglik(spec, W, Y, theta, P, rng,
                                      auxiliary=(method == "auxiliary"))
                    wr.writerow([method, P, run, repr(float(ll)),
                                 repr(time.perf_counter() - start)])
    print(f"wrote {path} ({len(methods)} methods x {len(particles)} particle "
          f"counts x {args.runs} runs)")
    return 0


def cmd_eval_baselines(args) -> int:
    spec = get_model(args.model)
    W, Y = ingest(args.covariates, args.obs, spec)
    X = load_latent(args.latent)
    if X.shape != (Y.shape[0] + 1, Y.shape[1]):
        raise ParseError(
            f"{args.latent}: latent shape {X.shape} does not extend "
            f"observations {Y.shape} by the initial time"
        )
    theta = _theta_from_args(spec, args)
    fo = cal_filter(spec, W, Y, theta, store=True)
    # unreported cells only; reported ones are echoed by every classifier
    mask = Y == 0
    truth = X[1:][mask][:, None]
    columns = {
        "Random": random_baseline(Y, spec.M),
        "Prev. uncertain": previous_guess(Y, spec.M, args.uncertain),
        "Prev. certain": previous_guess(Y, spec.M, args.certain),
        "CAL": fo.pi_filt[1:],
    }
    picked = [p[mask][:, None, :] for p in columns.values()]
    path = _out_path(args, "metrics.csv")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["N", "rep", "metric", *columns])
        wr.writerow([W.N, 0, "cross_entropy",
                     *(repr(float(cross_entropy(truth, p))) for p in picked)])
        wr.writerow([W.N, 0, "accuracy",
                     *(repr(float(accuracy(truth, p))) for p in picked)])
    print(f"wrote {path}")
    return 0


def cmd_run(args) -> int:
    cfg = load_config(find_config(args.config))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    written = run_experiment(cfg, threads=args.threads, out_dir=args.out)
    for path in written:
        print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_dataset_flags(p):
    p.add_argument("--model", required=True, help="zoo model name")
    p.add_argument("--covariates", required=True, help="covariates CSV")
    p.add_argument("--obs", required=True, help="observations CSV")
    _add_param_flags(p)


def _add_param_flags(p):
    p.add_argument("--params-file", help="JSON file of parameter values")
    p.add_argument("--set", action="append", metavar="NAME=VALUE",
                   help="override one parameter (repeatable)")
    p.add_argument("--freeze", help="comma-separated frozen parameter names "
                                    "(replaces the model default)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="calepi",
        description="Simulate, filter, and calibrate individual-based "
                    "epidemic models.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--out", default=".", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common],
                       help="draw one synthetic dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--kind", choices=_KINDS, help="covariate recipe "
                   "(default: the model's usual one)")
    p.add_argument("-N", type=int, required=True)
    p.add_argument("-T", type=int, required=True)
    _add_param_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("filter", parents=[common],
                       help="run the approximate filter on a dataset")
    _add_dataset_flags(p)
    p.add_argument("--store-filter", action="store_true",
                   help="write the filtered distributions to filter.csv")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("verify", parents=[common],
                       help="check the filter against its exact oracles")
    p.add_argument("--trials", type=int, default=24)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("fit", parents=[common],
                       help="maximum-likelihood calibration")
    _add_dataset_flags(p)
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--iterations", type=int, default=500)
    p.add_argument("--restarts", type=int, default=10)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("hmc", parents=[common], help="posterior sampling")
    _add_dataset_flags(p)
    p.add_argument("--leapfrog-steps", type=int, default=10)
    p.add_argument("--step-size", type=float, default=0.1)
    p.add_argument("--iterations", type=int, default=20000)
    p.add_argument("--burn-in", type=int, default=5000)
    p.add_argument("--thinning", type=int, default=5)
    p.add_argument("--adapt-window", type=int, default=1000)
    p.add_argument("--prior-mean", type=float, default=0.0)
    p.add_argument("--prior-var", type=float, default=100.0)
    p.set_defaults(func=cmd_hmc)

    p = sub.add_parser("compare-pf", parents=[common],
                       help="particle-filter log-likelihood replicates")
    _add_dataset_flags(p)
    p.add_argument("--particles", default="512,2048",
                   help="comma-separated particle counts")
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--methods", default="bootstrap",
                   help="comma-separated subset of bootstrap,auxiliary")
    p.set_defaults(func=cmd_compare_pf)

    p = sub.add_parser("eval-baselines", parents=[common],
                       help="classification metrics against the baselines")
    _add_dataset_flags(p)
    p.add_argument("--latent", required=True, help="true latent states CSV")
    p.add_argument("--uncertain", type=float, default=0.34)
    p.add_argument("--certain", type=float, default=0.99)
    p.set_defaults(func=cmd_eval_baselines)

    p = sub.add_parser("run", parents=[common],
                       help="run a config-described experiment")
    p.add_argument("config", help="config file path or bundled config name")
    p.set_defaults(func=cmd_run)
    # only override the config's seed and output dir when given explicitly
    p.set_defaults(seed=None, out=None)
    return parser


_CONFIG_FAILURES = (ConfigError, ParseError, OutOfDomain, TooLarge,
                    MissingCommunity, tomllib.TOMLDecodeError,
                    json.JSONDecodeError, OSError)
_NUMERIC_FAILURES = (NonFinite, SupportViolation, Degenerate, ZeroLikelihood,
                     FloatingPointError)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except _CONFIG_FAILURES as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except _NUMERIC_FAILURES as err:
        print(f"numeric failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
