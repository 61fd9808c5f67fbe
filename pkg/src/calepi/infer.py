"""Gradient-based calibration: parameter transforms, forward-mode gradients
of the filter log-likelihood, multi-start Adam ascent, and a leapfrog HMC
sampler with acceptance-band step-size adaptation.

All gradients are taken with respect to the unconstrained coordinates of the
free parameters, concatenated in declaration order: log scale for positive
entries, logit scale for unit-interval entries, identity otherwise.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import dual as dn
from .cal import SupportViolation, _check_observations, run_filter
from .models import ConfigError, Covariates, ModelSpec, OutOfDomain, ParamVector
from .probcore import RngStream


class NonFinite(RuntimeError):
    """The objective or its gradient left the representable range."""


# ---------------------------------------------------------------------------
# constrained <-> unconstrained


def free_coordinate_labels(theta: ParamVector) -> tuple[str, ...]:
    """One label per unconstrained coordinate, vector entries suffixed."""
    labels = []
    for name in theta.free_names:
        k = theta.size_of(name)
        if k == 1 and np.ndim(theta.values[name]) == 0:
            labels.append(name)
        else:
            labels.extend(f"{name}_{j}" for j in range(k))
    return tuple(labels)


def constrained_vector(theta: ParamVector) -> np.ndarray:
    """Free entries concatenated in declaration order, natural scale."""
    parts = [np.atleast_1d(np.asarray(theta.values[n], dtype=float))
             for n in theta.free_names]
    return np.concatenate(parts) if parts else np.zeros(0)


def free_coordinate_domains(theta: ParamVector) -> tuple[str, ...]:
    """Domain tag per unconstrained coordinate, matching the label order."""
    doms = []
    for name in theta.free_names:
        doms.extend([theta.domains[name]] * theta.size_of(name))
    return tuple(doms)


def transform(theta: ParamVector) -> np.ndarray:
    """Map the free entries to unconstrained reals."""
    theta.check_domains()
    out = []
    for name in theta.free_names:
        v = np.atleast_1d(np.asarray(theta.values[name], dtype=float))
        dom = theta.domains[name]
        if dom == "positive":
            out.append(np.log(v))
        elif dom == "unit":
            if np.any(v <= 0.0) or np.any(v >= 1.0):
                raise OutOfDomain(
                    f"{name}={theta.values[name]} sits on the unit boundary; "
                    "only interior values have an unconstrained image"
                )
            out.append(np.log(v) - np.log1p(-v))
        else:
            out.append(v)
    return np.concatenate(out) if out else np.zeros(0)


def untransform(theta: ParamVector, phi) -> ParamVector:
    """Inverse of transform: rebuild a ParamVector from unconstrained values."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (theta.n_free,):
        raise ConfigError(
            f"expected {theta.n_free} unconstrained values, got shape {phi.shape}"
        )
    vals = {}
    i = 0
    with np.errstate(over="ignore"):
        for name in theta.free_names:
            k = theta.size_of(name)
            seg = phi[i:i + k]
            i += k
            dom = theta.domains[name]
            if dom == "positive":
                v = np.exp(seg)
            elif dom == "unit":
                v = 1.0 / (1.0 + np.exp(-seg))
            else:
                v = seg.copy()
            vals[name] = float(v[0]) if np.ndim(theta.values[name]) == 0 else v
    return theta.with_values(**vals)


def transform_log_jacobian(theta: ParamVector, phi) -> float:
    """log |d theta / d phi| of the untransform map at phi."""
    phi = np.asarray(phi, dtype=float)
    total = 0.0
    i = 0
    for name in theta.free_names:
        k = theta.size_of(name)
        seg = phi[i:i + k]
        i += k
        dom = theta.domains[name]
        if dom == "positive":
            total += float(seg.sum())
        elif dom == "unit":
            # log sigma'(x) = -x - 2 log(1 + exp(-x)), stable on both tails
            total += float(np.sum(-np.abs(seg) - 2.0 * np.log1p(np.exp(-np.abs(seg)))))
    return total


def _seeded_params(theta: ParamVector) -> dict:
    """Parameter dict with dual numbers carrying d(theta)/d(phi) tangents."""
    P = theta.n_free
    params = theta.as_dict()
    i = 0
    for name in theta.free_names:
        v = np.asarray(theta.values[name], dtype=float)
        flat = np.atleast_1d(v)
        dom = theta.domains[name]
        if dom == "positive":
            slope = flat
        elif dom == "unit":
            slope = flat * (1.0 - flat)
        else:
            slope = np.ones_like(flat)
        tan = np.zeros((P,) + v.shape)
        flat_tan = tan.reshape(P, -1)
        for j in range(flat.size):
            flat_tan[i + j, j] = slope[j]
        params[name] = dn.Dual(v.copy(), tan)
        i += flat.size
    return params


def grad_loglik(spec: ModelSpec, W: Covariates, Y: np.ndarray,
                theta: ParamVector) -> tuple[float, np.ndarray]:
    """Filter log-likelihood and its gradient in unconstrained coordinates."""
    theta.check_domains()
    spec.validate_covariates(W)
    Y = _check_observations(spec, W, Y)
    if theta.n_free == 0:
        total, *_ = run_filter(spec, W, Y, theta.as_dict(), store=False)
        return float(total), np.zeros(0)
    total, *_ = run_filter(spec, W, Y, _seeded_params(theta), store=False)
    return float(total.val), np.array(total.tan, dtype=float)


# ---------------------------------------------------------------------------
# Adam ascent


@dataclass
class AdamState:
    """Bias-corrected moment accumulators for one optimization run."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0


def adam_update(phi, grad, state: AdamState, learning_rate,
                beta1=0.9, beta2=0.999, eps=1e-8) -> np.ndarray:
    """One ascent step along the bias-corrected Adam direction."""
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * grad
    state.v = beta2 * state.v + (1.0 - beta2) * grad * grad
    mhat = state.m / (1.0 - beta1 ** state.step)
    vhat = state.v / (1.0 - beta2 ** state.step)
    return phi + learning_rate * mhat / (np.sqrt(vhat) + eps)


@dataclass(frozen=True)
class OptimConfig:
    learning_rate: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    iterations: int = 500
    restarts: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.restarts < 1:
            raise ConfigError("restarts must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("moment decays must lie in [0, 1)")
        if not self.eps > 0:
            raise ConfigError("eps must be > 0")


@dataclass(frozen=True)
class FitResult:
    theta: ParamVector
    loglik: float
    best: int
    labels: tuple[str, ...]
    # per restart: loglik trace (iterations+1,) and constrained iterates
    # (iterations+1, P), row 0 being the random initialization
    logliks: list
    iterates: list

    @property
    def trace(self) -> tuple[np.ndarray, np.ndarray]:
        return self.logliks[self.best], self.iterates[self.best]


def fit_mle(spec: ModelSpec, W: Covariates, Y: np.ndarray, config: OptimConfig,
            template: ParamVector | None = None) -> FitResult:
    """Multi-start Adam ascent of the filter log-likelihood.

    Each restart starts from standard-Gaussian unconstrained coordinates;
    the restart with the highest final log-likelihood wins. Frozen entries
    of the template are held at their given values throughout.
    """
    template = spec.make_params() if template is None else template
    P = template.n_free
    logliks, iterates, finals, thetas = [], [], [], []
    for r in range(config.restarts):
        gen = RngStream(config.seed, (r,)).generator
        phi = gen.standard_normal(P)
        state = AdamState(np.zeros(P), np.zeros(P))
        lls = np.empty(config.iterations + 1)
        its = np.empty((config.iterations + 1, P))
        for it in range(config.iterations):
            theta = untransform(template, phi)
            # overflow on a diverging iterate is caught right below
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    ll, g = grad_loglik(spec, W, Y, theta)
            except SupportViolation as err:
                raise NonFinite(
                    f"zero-probability observation at restart {r}, "
                    f"iteration {it}: {err}"
                ) from err
            if not (math.isfinite(ll) and np.isfinite(g).all()):
                raise NonFinite(
                    f"non-finite objective at restart {r}, iteration {it}: "
                    f"loglik={ll!r}, phi={np.array2string(phi, precision=4)}"
                )
            lls[it] = ll
            its[it] = constrained_vector(theta)
            phi = adam_update(phi, g, state, config.learning_rate,
                              config.beta1, config.beta2, config.eps)
        theta = untransform(template, phi)
        ll = float(run_filter(spec, W, Y, theta.as_dict(), store=False)[0])
        if not math.isfinite(ll):
            raise NonFinite(
                f"non-finite objective at restart {r}, final iterate: loglik={ll!r}"
            )
        lls[config.iterations] = ll
        its[config.iterations] = constrained_vector(theta)
        logliks.append(lls)
        iterates.append(its)
        finals.append(ll)
        thetas.append(theta)
    best = int(np.argmax(finals))
    return FitResult(
        theta=thetas[best],
        loglik=finals[best],
        best=best,
        labels=free_coordinate_labels(template),
        logliks=logliks,
        iterates=iterates,
    )


# ---------------------------------------------------------------------------
# Hamiltonian Monte Carlo


@dataclass(frozen=True)
class HmcConfig:
    leapfrog_steps: int = 10
    step_size: float = 0.1
    iterations: int = 20000
    burn_in: int = 5000
    thinning: int = 5
    adapt_window: int = 1000
    accept_low: float = 0.55
    accept_high: float = 0.75
    adjust: float = 0.35
    prior_mean: float = 0.0
    prior_var: float = 100.0
    seed: int = 0

    def __post_init__(self):
        if self.leapfrog_steps < 1:
            raise ConfigError("leapfrog_steps must be >= 1")
        if not self.step_size > 0:
            raise ConfigError("step_size must be > 0")
        if self.iterations < 1 or not 0 <= self.burn_in < self.iterations:
            raise ConfigError("need iterations >= 1 and 0 <= burn_in < iterations")
        if self.thinning < 1 or self.adapt_window < 1:
            raise ConfigError("thinning and adapt_window must be >= 1")
        if not 0.0 < self.accept_low < self.accept_high < 1.0:
            raise ConfigError("acceptance band must satisfy 0 < low < high < 1")
        if not 0.0 < self.adjust < 1.0:
            raise ConfigError("adjust factor must lie in (0, 1)")
        if not np.all(np.asarray(self.prior_var) > 0):
            raise ConfigError("prior variance must be > 0")


@dataclass(frozen=True)
class HmcResult:
    phi: np.ndarray          # (n_samples, P) unconstrained draws, thinned
    labels: tuple[str, ...]
    template: ParamVector
    loglik: np.ndarray       # (iterations,) data log-likelihood per iteration
    accepted: np.ndarray     # (iterations,) bool
    step_sizes: np.ndarray   # (iterations,) step size in force at each step
    iterates: np.ndarray     # (iterations, P) constrained coordinates

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean())

    def constrained(self) -> np.ndarray:
        """Thinned post-burn-in samples mapped back to constrained space."""
        out = np.empty_like(self.phi)
        for i, row in enumerate(self.phi):
            out[i] = constrained_vector(untransform(self.template, row))
        return out


def hmc_sample(spec: ModelSpec, W: Covariates, Y: np.ndarray, config: HmcConfig,
               theta0: ParamVector) -> HmcResult:
    """Leapfrog sampler for the unconstrained posterior of the free entries.

    The target is the filter log-likelihood plus independent Gaussian priors
    on the natural-scale parameters plus the log-Jacobian of the unconstraining
    map. Every adapt_window steps the step size shrinks by the adjust factor
    if the window's acceptance rate fell below the band, and grows by it if
    above. A non-finite state at the start of the chain is an error; a
    trajectory that leaves the finite range (or the observations' support)
    is abandoned and counted as a rejection.
    """
    theta0.check_domains()
    P = theta0.n_free
    if P == 0:
        raise ConfigError("no free parameters to sample")
    pm = np.broadcast_to(np.asarray(config.prior_mean, dtype=float), (P,))
    pv = np.broadcast_to(np.asarray(config.prior_var, dtype=float), (P,))
    doms = free_coordinate_domains(theta0)
    pos = np.array([d == "positive" for d in doms])
    unit = np.array([d == "unit" for d in doms])

    def eval_state(phi):
        theta = untransform(theta0, phi)
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                ll, g = grad_loglik(spec, W, Y, theta)
        except SupportViolation:
            return -np.inf, -np.inf, np.full(P, np.nan)
        x = constrained_vector(theta)
        lp = (ll - 0.5 * float(((x - pm) ** 2 / pv).sum())
              + transform_log_jacobian(theta0, phi))
        slope = np.where(pos, x, np.where(unit, x * (1.0 - x), 1.0))
        jac_g = np.where(pos, 1.0, np.where(unit, 1.0 - 2.0 * x, 0.0))
        return ll, lp, g - (x - pm) / pv * slope + jac_g

    gen = RngStream(config.seed, (0,)).generator
    phi = transform(theta0)
    ll, lp, grad = eval_state(phi)
    if not (math.isfinite(lp) and np.isfinite(grad).all()):
        raise NonFinite(f"non-finite posterior at the initial state: {lp!r}")

    step = config.step_size
    n_iter = config.iterations
    lls = np.empty(n_iter)
    accepted = np.zeros(n_iter, dtype=bool)
    steps = np.empty(n_iter)
    iterates = np.empty((n_iter, P))
    kept = []
    window_hits = 0
    for i in range(n_iter):
        steps[i] = step
        mom = gen.standard_normal(P)
        h0 = -lp + 0.5 * float(mom @ mom)
        q, p, g = phi, mom, grad
        ok = True
        for _ in range(config.leapfrog_steps):
            p = p + 0.5 * step * g
            q = q + step * p
            ll_new, lp_new, g = eval_state(q)
            if not (math.isfinite(lp_new) and np.isfinite(g).all()):
                ok = False
                break
            p = p + 0.5 * step * g
        if ok:
            h1 = -lp_new + 0.5 * float(p @ p)
            if math.log(gen.uniform()) < h0 - h1:
                phi, ll, lp, grad = q, ll_new, lp_new, g
                accepted[i] = True
                window_hits += 1
        lls[i] = ll
        iterates[i] = constrained_vector(untransform(theta0, phi))
        if i >= config.burn_in and (i - config.burn_in) % config.thinning == 0:
            kept.append(phi.copy())
        if (i + 1) % config.adapt_window == 0:
            rate = window_hits / config.adapt_window
            if rate < config.accept_low:
                step *= 1.0 - config.adjust
            elif rate > config.accept_high:
                step *= 1.0 + config.adjust
            window_hits = 0
    return HmcResult(
        phi=np.asarray(kept),
        labels=free_coordinate_labels(theta0),
        template=theta0,
        loglik=lls,
        accepted=accepted,
        step_sizes=steps,
        iterates=iterates,
    )


# ---------------------------------------------------------------------------
# trace output


def save_fit_trace(result: FitResult, path) -> None:
    """Winning restart's trajectory: iteration, objective, parameters."""
    lls, its = result.trace
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iter", "loglik", *result.labels])
        for i in range(len(lls)):
            wr.writerow([i, repr(float(lls[i])),
                         *(repr(float(v)) for v in its[i])])


def save_chain(result: HmcResult, path) -> None:
    """Full chain history with acceptance flags and step sizes."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["iter", "loglik", *result.labels, "accepted", "step_size"])
        for i in range(len(result.loglik)):
            wr.writerow([
                i,
                repr(float(result.loglik[i])),
                *(repr(float(v)) for v in result.iterates[i]),
                int(result.accepted[i]),
                repr(float(result.step_sizes[i])),
            ])
