"""Panel data containers and preprocessing.

Networks are stored as float arrays with ``nan`` marking a missing tie
variable; behavior is stored as a ``(waves, n)`` float array on the integer
grid ``1..n_levels`` with ``nan`` for missing. Observation masks survive
imputation so estimation targets can ignore imputed entries.
"""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


class ConfigError(ValueError):
    """Invalid run configuration or model specification."""


class DataError(ValueError):
    """Malformed or inconsistent input data."""


N_LEVELS = 13


@dataclass(frozen=True)
class OrderedNetworkPair:
    """Weak and strong tie layers for one wave; strong ties nest inside weak ones."""

    weak: np.ndarray
    strong: np.ndarray

    def __post_init__(self):
        if self.weak.shape != self.strong.shape or self.weak.ndim != 2:
            raise DataError("weak and strong networks must be square and of equal shape")
        bad = nesting_violations(self.weak, self.strong)
        if bad:
            i, j = bad[0]
            raise DataError(f"strong tie ({i}, {j}) has no matching weak tie")

    @property
    def n(self) -> int:
        return self.weak.shape[0]


def nesting_violations(lower: np.ndarray, upper: np.ndarray) -> list[tuple[int, int]]:
    """Dyads observed in both layers where the upper tie exists without the lower one.

    Written pairwise so a further level can be checked against its parent.
    """
    both = ~np.isnan(lower) & ~np.isnan(upper)
    bad = both & (upper == 1) & (lower == 0)
    return [tuple(map(int, ij)) for ij in np.argwhere(bad)]


@dataclass(frozen=True)
class ActorCovariate:
    values: np.ndarray
    categorical: bool = False

    @property
    def mean(self) -> float:
        if self.categorical:
            return 0.0
        return float(np.nanmean(self.values))

    @property
    def range(self) -> float:
        if self.categorical:
            return 1.0
        r = float(np.nanmax(self.values) - np.nanmin(self.values))
        return r if r > 0 else 1.0

    def similarity_mean(self) -> float:
        if self.categorical:
            return 0.0
        return mean_similarity(self.values[None, :], self.range)


def mean_similarity(values: np.ndarray, value_range: float) -> float:
    """Mean of ``1 - |v_i - v_j| / range`` over ordered pairs i != j observed in the same row.

    ``values`` is ``(waves, n)``; pairs are pooled across rows.
    """
    total, count = 0.0, 0
    for row in np.atleast_2d(values):
        v = row[~np.isnan(row)]
        m = len(v)
        if m < 2:
            continue
        sim = 1.0 - np.abs(v[:, None] - v[None, :]) / value_range
        total += sim.sum() - m  # drop the diagonal, where sim == 1
        count += m * (m - 1)
    return total / count if count else 0.0


@dataclass(frozen=True)
class PanelDataset:
    """Longitudinal observations of an ordered network pair plus one behavior.

    ``weak`` and ``strong`` are ``(waves, n, n)``; ``behavior`` is ``(waves, n)``.
    ``observed_ties`` / ``observed_behavior`` default to the non-nan pattern and
    are kept unchanged by :func:`impute_for_simulation`.
    """

    actors: tuple[str, ...]
    weak: np.ndarray
    strong: np.ndarray
    behavior: np.ndarray
    n_levels: int = N_LEVELS
    actor_covariates: Mapping[str, ActorCovariate] = field(default_factory=dict)
    dyadic_covariates: Mapping[str, np.ndarray] = field(default_factory=dict)
    observed_ties: np.ndarray | None = None
    observed_behavior: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.actors)
        if n < 2:
            raise DataError("a panel needs at least two actors")
        if len(set(self.actors)) != n:
            raise DataError("actor identifiers must be unique")
        waves = self.weak.shape[0]
        if waves < 2:
            raise DataError("a panel needs at least two waves")
        if self.weak.shape != (waves, n, n) or self.strong.shape != (waves, n, n):
            raise DataError(f"network arrays must have shape ({waves}, {n}, {n})")
        if self.behavior.shape != (waves, n):
            raise DataError(f"behavior must have shape ({waves}, {n})")
        for m in range(waves):
            for name, x in (("weak", self.weak[m]), ("strong", self.strong[m])):
                vals = x[~np.isnan(x)]
                if not np.isin(vals, (0, 1)).all():
                    raise DataError(f"{name} network at wave {m + 1} has non-binary entries")
            OrderedNetworkPair(self.weak[m], self.strong[m])
        z = self.behavior[~np.isnan(self.behavior)]
        if z.size and (not np.all(z == np.round(z)) or z.min() < 1 or z.max() > self.n_levels):
            raise DataError(f"behavior values must be integers in 1..{self.n_levels}")
        for name, cov in self.actor_covariates.items():
            if cov.values.shape != (n,):
                raise DataError(f"actor covariate {name!r} has wrong length")
        for name, w in self.dyadic_covariates.items():
            if w.shape != (n, n):
                raise DataError(f"dyadic covariate {name!r} has wrong shape")
            if np.any(np.diag(w) != 0):
                raise DataError(f"dyadic covariate {name!r} has a nonzero diagonal")
        if self.observed_ties is None:
            obs = ~(np.isnan(self.weak) | np.isnan(self.strong))
            obs[:, np.arange(n), np.arange(n)] = False
            object.__setattr__(self, "observed_ties", obs)
        if self.observed_behavior is None:
            object.__setattr__(self, "observed_behavior", ~np.isnan(self.behavior))

    @property
    def n(self) -> int:
        return len(self.actors)

    @property
    def n_waves(self) -> int:
        return self.weak.shape[0]

    def wave(self, m: int) -> OrderedNetworkPair:
        return OrderedNetworkPair(self.weak[m], self.strong[m])

    @property
    def is_complete(self) -> bool:
        return not (np.isnan(self.weak).any() or np.isnan(self.strong).any()
                    or np.isnan(self.behavior).any())

    def behavior_constants(self) -> "BehaviorConstants":
        z = np.where(self.observed_behavior, self.behavior, np.nan)
        vals = z[~np.isnan(z)]
        if vals.size == 0:
            return BehaviorConstants(mean=(1 + self.n_levels) / 2,
                                     range=float(self.n_levels - 1), sim_mean=0.0)
        rng = float(vals.max() - vals.min())
        if rng <= 0:
            rng = 1.0
        return BehaviorConstants(mean=float(vals.mean()), range=rng,
                                 sim_mean=mean_similarity(z, rng))

    def permuted(self, perm: Sequence[int]) -> "PanelDataset":
        """Relabel actors: new actor ``k`` is old actor ``perm[k]``."""
        p = np.asarray(perm)
        return PanelDataset(
            actors=tuple(self.actors[k] for k in p),
            weak=self.weak[:, p][:, :, p],
            strong=self.strong[:, p][:, :, p],
            behavior=self.behavior[:, p],
            n_levels=self.n_levels,
            actor_covariates={k: ActorCovariate(c.values[p], c.categorical)
                              for k, c in self.actor_covariates.items()},
            dyadic_covariates={k: w[p][:, p] for k, w in self.dyadic_covariates.items()},
            observed_ties=self.observed_ties[:, p][:, :, p],
            observed_behavior=self.observed_behavior[:, p],
        )


@dataclass(frozen=True)
class BehaviorConstants:
    """Pooled centering constants: mean z, range of z, mean similarity."""

    mean: float
    range: float
    sim_mean: float


def dichotomize(ratings: np.ndarray, weak_cutoff: int, strong_cutoff: int) -> OrderedNetworkPair:
    """Split an ordinal 0..7 rating matrix into nested weak/strong binary networks."""
    if not (0 <= weak_cutoff <= strong_cutoff <= 7):
        raise ConfigError(
            f"cutoffs must satisfy 0 <= weak <= strong <= 7, got ({weak_cutoff}, {strong_cutoff})")
    r = np.asarray(ratings, dtype=float)
    missing = np.isnan(r)
    weak = np.where(missing, np.nan, (r >= weak_cutoff).astype(float))
    strong = np.where(missing, np.nan, (r >= strong_cutoff).astype(float))
    np.fill_diagonal(weak, 0.0)
    np.fill_diagonal(strong, 0.0)
    return OrderedNetworkPair(weak, strong)


def aggregate_behavior(
    daily_ratings: Iterable[tuple[str, dt.date, float]],
    actors: Sequence[str],
    window_days: int,
    wave_date: dt.date,
) -> np.ndarray:
    """Mean rating per actor over ``[wave_date - window_days, wave_date)``.

    Actors without ratings in the window get ``nan``.
    """
    if window_days <= 0:
        raise ConfigError("window_days must be positive")
    start = wave_date - dt.timedelta(days=window_days)
    index = {a: k for k, a in enumerate(actors)}
    sums = np.zeros(len(actors))
    counts = np.zeros(len(actors))
    for actor, day, value in daily_ratings:
        k = index.get(actor)
        if k is None or not (start <= day < wave_date):
            continue
        sums[k] += value
        counts[k] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, sums / counts, np.nan)


def recode_behavior(mean):
    """Round a 1..7 mean to the nearest half point and map it onto 1..13.

    Quarter values round up (``2.25 -> 2.5``). Accepts scalars or arrays;
    ``nan`` passes through.
    """
    m = np.asarray(mean, dtype=float)
    obs = ~np.isnan(m)
    if np.any((m[obs] < 1) | (m[obs] > 7)):
        raise DataError("behavior means must lie in [1, 7]")
    # work on the doubled value so half points become integers; the small
    # offset keeps 2.3 * 2 = 4.6 from drifting across the .5 boundary
    doubled = np.floor(np.round(m * 2, 9) + 0.5)
    out = np.where(obs, doubled - 1, np.nan)
    if out.ndim == 0:
        return int(out) if obs else float("nan")
    return out


def impute_for_simulation(panel: PanelDataset) -> PanelDataset:
    """Fill missing entries so simulation can start from every wave.

    Wave 1: missing ties become 0 and missing behavior the grid midpoint.
    Later waves carry the previous (possibly imputed) value forward. The
    observation masks are kept so imputed entries stay out of the targets.
    """
    weak = panel.weak.copy()
    strong = panel.strong.copy()
    z = panel.behavior.copy()
    mid = float(round((1 + panel.n_levels) / 2))
    for m in range(panel.n_waves):
        if m == 0:
            weak[0] = np.where(np.isnan(weak[0]), 0.0, weak[0])
            strong[0] = np.where(np.isnan(strong[0]), 0.0, strong[0])
            z[0] = np.where(np.isnan(z[0]), mid, z[0])
        else:
            weak[m] = np.where(np.isnan(weak[m]), weak[m - 1], weak[m])
            strong[m] = np.where(np.isnan(strong[m]), strong[m - 1], strong[m])
            z[m] = np.where(np.isnan(z[m]), z[m - 1], z[m])
        # carried-forward values can break nesting; the imputed side gives way
        clash = (strong[m] == 1) & (weak[m] == 0)
        weak_imputed = np.isnan(panel.weak[m])
        weak[m][clash & weak_imputed] = 1.0
        strong[m][clash & ~weak_imputed] = 0.0
        np.fill_diagonal(weak[m], 0.0)
        np.fill_diagonal(strong[m], 0.0)
    return PanelDataset(
        actors=panel.actors,
        weak=weak,
        strong=strong,
        behavior=z,
        n_levels=panel.n_levels,
        actor_covariates=panel.actor_covariates,
        dyadic_covariates=panel.dyadic_covariates,
        observed_ties=panel.observed_ties,
        observed_behavior=panel.observed_behavior,
    )
