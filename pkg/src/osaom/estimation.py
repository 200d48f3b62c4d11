"""Method-of-moments estimation by Robbins-Monro stochastic approximation.

Parameters are laid out as ``[rates (period, dependent) ..., effect thetas ...]``
and the statistics vector the same way: per period and dependent the amount
of change (Hamming distance for networks, total ``|dz|`` for behavior), then
per effect the sum over actors and periods of the effect statistic at the end
of each period.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .data import BehaviorConstants, PanelDataset, impute_for_simulation
from .dynamics import Model, ModelState, run_period
from .effects import DEPENDENTS, EffectSpec, StatContext, statistics

log = logging.getLogger(__name__)


class EstimationError(RuntimeError):
    pass


class UntestableError(EstimationError):
    pass


class DegenerateDataWarning(UserWarning):
    pass


MIN_RATE = 1e-3


@dataclass
class EstimationOptions:
    n1: int | None = None
    n_subphases: int = 4
    gain: float = 0.2
    n2_multiplier: float = 2.0
    n3: int = 4000
    n3_derivative: int = 200
    derivative: str = "fd"
    diagonalize: float = 0.2
    seed: int = 0
    max_retries: int = 2
    threads: int = 1
    conv_tol: float = 0.1
    max_ratio_tol: float = 0.25


def _seeds(seed: int, tag: int, *shape: int) -> np.ndarray:
    count = int(np.prod(shape))
    ss = np.random.SeedSequence([int(seed), int(tag)])
    return ss.generate_state(max(count, 1), np.uint32)[:count].astype(np.int64).reshape(shape)


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


class MomentProblem:
    """Observed targets and simulated statistics for one panel and effect list."""

    def __init__(self, panel: PanelDataset, effects: Sequence[EffectSpec],
                 constants: BehaviorConstants | None = None):
        self.raw = panel
        self.panel = panel if panel.is_complete else impute_for_simulation(panel)
        self.model = Model.build(effects, self.panel, constants)
        self.effects = self.model.effects
        self.n_periods = panel.n_waves - 1
        self.n_rates = 3 * self.n_periods
        self.starts = [ModelState.from_panel(self.panel, m) for m in range(self.n_periods)]
        self.targets = self.statistics([
            ModelState.from_panel(self.panel, m + 1) for m in range(self.n_periods)])

    @property
    def n_params(self) -> int:
        return self.n_rates + len(self.effects)

    @property
    def param_names(self) -> list[str]:
        names = [f"rate:{d}:period{m + 1}" for m in range(self.n_periods) for d in DEPENDENTS]
        return names + [e.name for e in self.effects]

    def split(self, params: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        params = np.asarray(params, dtype=float)
        return params[:self.n_rates].reshape(self.n_periods, 3), params[self.n_rates:]

    def _masked(self, state: ModelState, wave: int) -> tuple[StatContext, np.ndarray]:
        obs_t = self.panel.observed_ties[wave]
        obs_b = self.panel.observed_behavior[wave]
        ctx = StatContext(
            weak=np.where(obs_t, state.weak, 0.0),
            strong=np.where(obs_t, state.strong, 0.0),
            z=np.where(obs_b, state.z, self.panel.behavior[wave]),
            behavior=self.model.constants,
            actor_covariates=self.panel.actor_covariates,
            dyadic_covariates=self.panel.dyadic_covariates,
        )
        return ctx, obs_b

    def statistics(self, ends: Sequence[ModelState]) -> np.ndarray:
        """Statistic vector for period end states (simulated or observed)."""
        out = np.zeros(self.n_params)
        for m, end in enumerate(ends):
            start = self.starts[m]
            both_t = self.panel.observed_ties[m] & self.panel.observed_ties[m + 1]
            both_b = self.panel.observed_behavior[m] & self.panel.observed_behavior[m + 1]
            out[3 * m] = np.sum(both_t & (end.weak != start.weak))
            out[3 * m + 1] = np.sum(both_t & (end.strong != start.strong))
            out[3 * m + 2] = np.sum(np.abs(end.z - start.z)[both_b])
            ctx, obs_b = self._masked(end, m + 1)
            for k, e in enumerate(self.effects):
                s = statistics(e, ctx)
                if e.dependent == "behavior":
                    s = s[obs_b]
                out[self.n_rates + k] += s.sum()
        return out

    def simulate(self, params: np.ndarray, seeds: np.ndarray, scores: bool = False,
                 threads: int = 1):
        """Simulated statistics, one row per seed row (``seeds`` is runs x periods).

        With ``scores`` also returns the score-function rows (derivative of the
        path log-likelihood for each parameter).
        """
        rates, theta = self.split(params)
        n = self.panel.n
        model = self.model

        def one(seed_row):
            ends, g = [], np.zeros(self.n_params)
            for m in range(self.n_periods):
                r = run_period(self.starts[m], model, theta, rates[m], seed_row[m], scores=scores)
                ends.append(r.state)
                if scores:
                    g[3 * m:3 * m + 3] = r.steps / rates[m] - n
                    g[self.n_rates:] += r.scores
            return self.statistics(ends), g

        rows = _map(one, list(np.atleast_2d(seeds)), threads)
        S = np.array([r[0] for r in rows])
        if scores:
            return S, np.array([r[1] for r in rows])
        return S

    def derivative_fd(self, params: np.ndarray, seeds: np.ndarray, threads: int = 1):
        """Centered finite-difference derivative with common random numbers.

        Returns ``(D, S_center_estimate)``; the center estimate averages the
        plus and minus runs, which share seeds.
        """
        p = self.n_params
        params = np.asarray(params, dtype=float)
        eps = 0.1 * np.maximum(np.abs(params), 1.0)
        eps[:self.n_rates] = np.minimum(eps[:self.n_rates], 0.5 * params[:self.n_rates])
        D = np.zeros((p, p))
        center = np.zeros(p)
        for k in range(p):
            step = np.zeros(p)
            step[k] = eps[k]
            plus = self.simulate(params + step, seeds, threads=threads)
            minus = self.simulate(params - step, seeds, threads=threads)
            D[:, k] = (plus - minus).mean(axis=0) / (2 * eps[k])
            center += (plus + minus).mean(axis=0) / 2
        return D, center / p

    def derivative_score(self, params: np.ndarray, seeds: np.ndarray, threads: int = 1):
        S, G = self.simulate(params, seeds, scores=True, threads=threads)
        D = (S - S.mean(axis=0)).T @ G / len(S)
        return D, S.mean(axis=0), S

    def initial_params(self) -> np.ndarray:
        """Rates from observed change, density from log-odds of ties, other effects 0."""
        panel = self.panel
        n = panel.n
        rates = np.zeros((self.n_periods, 3))
        for m in range(self.n_periods):
            both = panel.observed_ties[m] & panel.observed_ties[m + 1]
            nd = max(both.sum(), 1)
            for d, x in enumerate((panel.weak, panel.strong)):
                h = min(np.sum(both & (x[m] != x[m + 1])) / nd, 0.45)
                rates[m, d] = -0.5 * n * np.log(1 - 2 * h)
            ob = panel.observed_behavior[m] & panel.observed_behavior[m + 1]
            dz = np.abs(panel.behavior[m + 1] - panel.behavior[m])[ob]
            rates[m, 2] = 2.0 * dz.mean() if dz.size else 0.0
        rates = np.maximum(rates, 0.1)
        theta = np.zeros(len(self.effects))
        obs = panel.observed_ties[:-1]
        weak_density = panel.weak[:-1][obs].mean() if obs.any() else 0.5
        strong_share = panel.strong[:-1][obs].sum() / max(panel.weak[:-1][obs].sum(), 1)
        for k, e in enumerate(self.effects):
            if e.kind == "density":
                p = weak_density if e.dependent == "weak" else strong_share
                p = float(np.clip(p, 0.01, 0.99))
                theta[k] = np.log(p / (1 - p))
        return np.concatenate([rates.ravel(), theta])


@dataclass
class EstimationResult:
    param_names: list[str]
    estimates: np.ndarray
    se: np.ndarray
    t_conv: np.ndarray
    max_ratio: float
    derivative: np.ndarray
    stat_cov: np.ndarray
    cov: np.ndarray
    targets: np.ndarray
    converged: bool
    n_periods: int
    seed: int
    messages: list[str] = field(default_factory=list)

    @property
    def n_rates(self) -> int:
        return 3 * self.n_periods

    @property
    def effect_names(self) -> list[str]:
        return self.param_names[self.n_rates:]

    @property
    def theta(self) -> np.ndarray:
        return self.estimates[self.n_rates:]

    @property
    def rates(self) -> np.ndarray:
        return self.estimates[:self.n_rates].reshape(self.n_periods, 3)

    def index(self, name: str) -> int:
        return self.param_names.index(name)

    def table(self) -> list[dict]:
        rows = []
        for k, name in enumerate(self.param_names):
            z = self.estimates[k] / self.se[k] if self.se[k] > 0 else np.nan
            p = 2 * stats.norm.sf(abs(z)) if np.isfinite(z) else np.nan
            rows.append(dict(effect=name, estimate=self.estimates[k], se=self.se[k],
                             t_conv=self.t_conv[k], p=p, stars=significance_stars(p)))
        return rows


def significance_stars(p: float) -> str:
    if not np.isfinite(p):
        return ""
    for cut, mark in ((0.001, "***"), (0.01, "**"), (0.05, "*"), (0.1, "+")):
        if p < cut:
            return mark
    return ""


def _solve_step(D: np.ndarray, dev: np.ndarray, diagonalize: float) -> np.ndarray:
    Dm = (1 - diagonalize) * D + diagonalize * np.diag(np.diag(D))
    return np.linalg.solve(Dm, dev)


def _check_derivative(D: np.ndarray, names: list[str]) -> None:
    """Raise naming the parameters involved if ``D`` is (near) singular."""
    scale = np.sqrt(np.abs(np.diag(D))) + 1e-300
    Dn = D / scale[:, None] / scale[None, :]
    sv = np.linalg.svd(Dn, compute_uv=True)
    if not np.all(np.isfinite(D)) or sv[1][-1] < 1e-8 * max(sv[1][0], 1e-300) \
            or np.any(np.diag(D) == 0):
        null = np.abs(sv[2][-1])
        involved = [names[k] for k in np.argsort(-null)[:3] if null[k] > 0.1]
        if np.any(np.diag(D) == 0):
            involved = [names[k] for k in np.flatnonzero(np.diag(D) == 0)]
        raise EstimationError(
            "derivative matrix is singular; near-collinear or inert parameters: "
            + ", ".join(involved))


def _clamp_rates(new: np.ndarray, old: np.ndarray, n_rates: int) -> np.ndarray:
    r = new[:n_rates]
    bad = r <= 0
    r[bad] = old[:n_rates][bad] * 0.1
    new[:n_rates] = np.maximum(r, MIN_RATE)
    return new


def _phase1(prob: MomentProblem, params: np.ndarray, opts: EstimationOptions, tag: int):
    p = prob.n_params
    n1 = opts.n1 or (7 + 3 * p)
    seeds = _seeds(opts.seed, tag, n1, prob.n_periods)
    if opts.derivative == "score":
        D, mean, _ = prob.derivative_score(params, seeds, opts.threads)
    else:
        D, mean = prob.derivative_fd(params, seeds, opts.threads)
    _check_derivative(D, prob.param_names)
    dev = mean - prob.targets
    new = params - 0.5 * _solve_step(D, dev, opts.diagonalize)
    return _clamp_rates(new, params, prob.n_rates), D


def _phase2(prob: MomentProblem, params: np.ndarray, D: np.ndarray,
            opts: EstimationOptions, tag: int, first_subphase: int = 0) -> np.ndarray:
    p = prob.n_params
    theta = params.copy()
    Dm = (1 - opts.diagonalize) * D + opts.diagonalize * np.diag(np.diag(D))
    Dinv = np.linalg.inv(Dm)
    for sub in range(first_subphase, opts.n_subphases):
        gain = opts.gain / 2 ** sub
        n_min = int(opts.n2_multiplier * 2 ** (4 * sub / 3) * (7 + p))
        n_max = n_min + 200
        seeds = _seeds(opts.seed, tag * 100 + sub, n_max, prob.n_periods)
        acc = np.zeros(p)
        prev = None
        flipped = np.zeros(p, bool)
        it = 0
        for it in range(n_max):
            S = prob.simulate(theta, seeds[it:it + 1])[0]
            dev = S - prob.targets
            if prev is not None:
                flipped |= np.sign(dev) * np.sign(prev) < 0
            prev = dev
            step = gain * (Dinv @ dev)
            big = np.max(np.abs(step) / np.maximum(np.abs(theta), 1.0))
            if big > 1.0:
                step /= big
            theta = _clamp_rates(theta - step, theta, prob.n_rates)
            acc += theta
            if it + 1 >= n_min and flipped.all():
                break
        theta = acc / (it + 1)
        log.debug("subphase %d: %d iterations", sub + 1, it + 1)
    return theta


def _phase3(prob: MomentProblem, params: np.ndarray, opts: EstimationOptions, tag: int):
    seeds = _seeds(opts.seed, tag, opts.n3, prob.n_periods)
    if opts.derivative == "score":
        D, _, S = prob.derivative_score(params, seeds, opts.threads)
    else:
        S = prob.simulate(params, seeds, threads=opts.threads)
        nd = min(opts.n3_derivative, opts.n3)
        D, _ = prob.derivative_fd(params, seeds[:nd], opts.threads)
    dev = S - prob.targets
    mean = dev.mean(axis=0)
    sd = dev.std(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_conv = np.where(sd > 0, mean / sd, np.where(mean == 0, 0.0, np.inf))
    sigma = np.cov(S, rowvar=False)
    live = sd > 0
    if live.any():
        sub = sigma[np.ix_(live, live)]
        max_ratio = float(np.sqrt(max(mean[live] @ np.linalg.pinv(sub) @ mean[live], 0.0)))
    else:
        max_ratio = 0.0
    if not np.all(live):
        max_ratio = max(max_ratio, float(np.max(np.abs(t_conv))))
    return D, sigma, t_conv, max_ratio


def estimate(panel: PanelDataset, effects: Sequence[EffectSpec],
             options: EstimationOptions | None = None,
             constants: BehaviorConstants | None = None,
             start: np.ndarray | None = None,
             phases: tuple[int, ...] = (1, 2, 3)) -> EstimationResult:
    """Fit rates and effect parameters by the method of moments.

    ``constants`` overrides the pooled behavior centering constants;
    ``start`` overrides the initial parameter vector; ``phases=(3,)`` only
    evaluates convergence and standard errors at ``start``.
    """
    opts = options or EstimationOptions()
    prob = MomentProblem(panel, effects, constants)
    messages = []
    if np.any(prob.targets[:prob.n_rates] == 0):
        zero = [prob.param_names[k] for k in np.flatnonzero(prob.targets[:prob.n_rates] == 0)]
        msg = "degenerate data: no observed change for " + ", ".join(zero)
        warnings.warn(msg, DegenerateDataWarning, stacklevel=2)
        messages.append(msg)
    params = prob.initial_params() if start is None else np.asarray(start, float).copy()
    D = None
    converged = False
    best = None
    attempts = 1 + (opts.max_retries if 2 in phases else 0)
    for attempt in range(attempts):
        tag = 10 * attempt
        if 1 in phases and attempt == 0:
            params, D = _phase1(prob, params, opts, tag + 1)
        if 2 in phases:
            if D is None:
                raise EstimationError("phase 2 needs a derivative estimate from phase 1")
            # a retry restarts near the solution: only the last, smallest-gain subphase
            first = 0 if attempt == 0 else opts.n_subphases - 1
            params = _phase2(prob, params, D, opts, tag + 2, first)
        D3, sigma, t_conv, max_ratio = _phase3(prob, params, opts, tag + 3)
        converged = bool(np.all(np.abs(t_conv) < opts.conv_tol) and max_ratio < opts.max_ratio_tol)
        log.info("attempt %d: max |t| = %.3f, max ratio = %.3f", attempt + 1,
                 np.max(np.abs(t_conv)), max_ratio)
        if converged or best is None or max_ratio < best[4]:
            best = (params.copy(), D3, sigma, t_conv, max_ratio)
        if converged:
            break
        D = D3
    params, D3, sigma, t_conv, max_ratio = best
    converged = bool(np.all(np.abs(t_conv) < opts.conv_tol) and max_ratio < opts.max_ratio_tol)
    try:
        Dinv = np.linalg.inv(D3)
        cov = Dinv @ sigma @ Dinv.T
    except np.linalg.LinAlgError:
        cov = np.full((prob.n_params, prob.n_params), np.nan)
        messages.append("derivative matrix at the estimate is singular")
    se = np.sqrt(np.clip(np.diag(cov), 0, None))
    if not converged:
        messages.append("estimation did not converge")
    return EstimationResult(
        param_names=prob.param_names, estimates=params, se=se, t_conv=t_conv,
        max_ratio=max_ratio, derivative=D3, stat_cov=sigma, cov=cov,
        targets=prob.targets, converged=converged, n_periods=prob.n_periods,
        seed=opts.seed, messages=messages)


@dataclass
class ScoreTestResult:
    effect: str
    statistic: float
    p_value: float
    deviation: float


def score_test(panel: PanelDataset, fitted: EstimationResult, effects: Sequence[EffectSpec],
               extra_effect: EffectSpec, n_sims: int = 1000, seed: int = 0,
               derivative: str = "score", constants: BehaviorConstants | None = None,
               threads: int = 1) -> ScoreTestResult:
    """Score-type test of ``extra_effect`` having parameter 0, at the fitted estimate.

    The deviation of the extra statistic is corrected for its covariation with
    the fitted statistics through the derivative matrix, then standardized.
    """
    if extra_effect.name in fitted.effect_names:
        raise ValueError(f"{extra_effect.name} is already in the fitted model")
    prob = MomentProblem(panel, list(effects) + [extra_effect], constants)
    params = np.concatenate([fitted.estimates, [0.0]])
    seeds = _seeds(seed, 7001, n_sims, prob.n_periods)
    if derivative == "score":
        D, _, S = prob.derivative_score(params, seeds, threads)
    else:
        S = prob.simulate(params, seeds, threads=threads)
        D, _ = prob.derivative_fd(params, seeds, threads)
    dev = S.mean(axis=0) - prob.targets
    sigma = np.cov(S, rowvar=False)
    if sigma[-1, -1] <= 1e-12:
        raise UntestableError(f"{extra_effect.name}: statistic does not vary across simulations")
    D11, D21 = D[:-1, :-1], D[-1:, :-1]
    try:
        gamma = D21 @ np.linalg.inv(D11)
    except np.linalg.LinAlgError as exc:
        raise UntestableError(f"{extra_effect.name}: fitted derivative is singular") from exc
    d_adj = dev[-1] - (gamma @ dev[:-1])[0]
    b = np.concatenate([-gamma[0], [1.0]])
    var = float(b @ sigma @ b)
    if var <= 1e-12 * max(sigma[-1, -1], 1.0):
        raise UntestableError(f"{extra_effect.name} is collinear with the fitted effects")
    z = d_adj / np.sqrt(var)
    return ScoreTestResult(extra_effect.name, float(z), float(2 * stats.norm.sf(abs(z))),
                           float(d_adj))


@dataclass
class WaldTestResult:
    statistic: float
    df: int
    p_value: float


def chi2_p_value(statistic: float, df: int) -> float:
    return float(stats.chi2.sf(statistic, df))


def wald_test(fitted: EstimationResult, subset: Sequence[int | str]) -> WaldTestResult:
    """Joint test that the selected parameters are all zero."""
    idx = [fitted.index(s) if isinstance(s, str) else int(s) for s in subset]
    if not idx:
        raise ValueError("empty parameter subset")
    theta = fitted.estimates[idx]
    cov = fitted.cov[np.ix_(idx, idx)]
    try:
        if np.linalg.cond(cov) > 1e12:
            raise np.linalg.LinAlgError
        w = float(theta @ np.linalg.solve(cov, theta))
    except np.linalg.LinAlgError as exc:
        names = ", ".join(fitted.param_names[k] for k in idx)
        raise EstimationError(f"covariance of {names} is singular") from exc
    return WaldTestResult(w, len(idx), chi2_p_value(w, len(idx)))


AUXILIARY = ("indegree", "outdegree", "behavior")


def auxiliary_statistic(kind: str, ctx: StatContext, obs_b: np.ndarray, network: str,
                        n_levels: int, max_degree: int = 8) -> np.ndarray:
    """Cumulative distribution counts (RSiena-style) of degrees or behavior."""
    if kind == "behavior":
        z = ctx.z[obs_b]
        return np.array([(z <= v).sum() for v in range(1, n_levels)], float)
    x = ctx.network(network)
    deg = x.sum(0) if kind == "indegree" else x.sum(1)
    return np.array([(deg <= k).sum() for k in range(max_degree + 1)], float)


@dataclass
class GofResult:
    auxiliary: str
    distance: float
    p_value: float
    observed: np.ndarray
    simulated_mean: np.ndarray


def gof(panel: PanelDataset, fitted: EstimationResult, effects: Sequence[EffectSpec],
        auxiliary: str = "indegree", network: str = "weak", n_sims: int = 500,
        seed: int = 0, constants: BehaviorConstants | None = None,
        threads: int = 1) -> GofResult:
    """Mahalanobis distance of an observed auxiliary statistic from its simulated distribution."""
    if auxiliary not in AUXILIARY:
        raise ValueError(f"auxiliary must be one of {AUXILIARY}")
    if not fitted.converged:
        warnings.warn("goodness of fit on a non-converged fit", RuntimeWarning, stacklevel=2)
    prob = MomentProblem(panel, effects, constants)
    rates, theta = prob.split(fitted.estimates)
    levels = prob.panel.n_levels

    def aux(ends):
        parts = []
        for m, end in enumerate(ends):
            ctx, obs_b = prob._masked(end, m + 1)
            parts.append(auxiliary_statistic(auxiliary, ctx, obs_b, network, levels))
        return np.concatenate(parts)

    observed = aux([ModelState.from_panel(prob.panel, m + 1) for m in range(prob.n_periods)])
    seeds = _seeds(seed, 9001, n_sims, prob.n_periods)

    def one(row):
        return aux([run_period(prob.starts[m], prob.model, theta, rates[m], row[m]).state
                    for m in range(prob.n_periods)])

    sims = np.array(_map(one, list(seeds), threads))
    mu = sims.mean(axis=0)
    prec = np.linalg.pinv(np.cov(sims, rowvar=False), hermitian=True)

    def dist(v):
        d = v - mu
        return float(max(d @ prec @ d, 0.0))

    d_obs = dist(observed)
    d_sim = np.array([dist(v) for v in sims])
    p = (1 + np.sum(d_sim >= d_obs - 1e-9)) / (1 + n_sims)
    return GofResult(auxiliary, d_obs, float(p), observed, mu)
