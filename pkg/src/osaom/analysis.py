"""Selection table, tie-level transition counts and panel descriptives."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import PanelDataset

LEVELS = ("none", "weak", "strong")


@dataclass(frozen=True)
class SelectionTable:
    """Gain ``g[a, b]`` to an ego at level ``levels[a]`` from choosing an alter at ``levels[b]``."""

    levels: tuple[float, ...]
    gains: np.ndarray
    theta_ego: float
    theta_alter: float
    theta_sim: float
    mean: float
    value_range: float
    sim_mean: float

    def gain(self, ego_level, alter_level) -> float:
        return float(self.gains[self.levels.index(ego_level), self.levels.index(alter_level)])


def selection_gain(theta_ego, theta_alter, theta_sim, mean, value_range, sim_mean, z_ego, z_alter):
    """Ego-alter gain of the objective from the ego, alter and similarity effects."""
    z_ego = np.asarray(z_ego, dtype=float)
    z_alter = np.asarray(z_alter, dtype=float)
    return (theta_ego * (z_ego - mean)
            + theta_alter * (z_alter - mean)
            + theta_sim * (1.0 - np.abs(z_ego - z_alter) / value_range - sim_mean))


def selection_table(theta_ego: float, theta_alter: float, theta_sim: float, mean: float,
                    value_range: float, sim_mean: float, levels: Sequence[float]) -> SelectionTable:
    if value_range <= 0:
        raise ValueError("value_range must be positive")
    lv = np.asarray(levels, dtype=float)
    gains = selection_gain(theta_ego, theta_alter, theta_sim, mean, value_range, sim_mean,
                           lv[:, None], lv[None, :])
    return SelectionTable(tuple(levels), gains, theta_ego, theta_alter, theta_sim,
                          mean, value_range, sim_mean)


def tie_levels(weak: np.ndarray, strong: np.ndarray) -> np.ndarray:
    """0 = no tie, 1 = weak only, 2 = strong; ``nan`` stays ``nan``."""
    return weak + strong


@dataclass(frozen=True)
class TransitionCounts:
    per_period: np.ndarray  # (periods, 3, 3), rows = origin level
    pooled: np.ndarray


def transition_counts(panel: PanelDataset) -> TransitionCounts:
    """Counts of dyads moving between none / weak-only / strong across consecutive waves.

    Dyads not observed at both waves are left out.
    """
    periods = []
    for m in range(panel.n_waves - 1):
        both = panel.observed_ties[m] & panel.observed_ties[m + 1]
        a = tie_levels(panel.weak[m], panel.strong[m])[both].astype(int)
        b = tie_levels(panel.weak[m + 1], panel.strong[m + 1])[both].astype(int)
        c = np.zeros((3, 3), dtype=int)
        np.add.at(c, (a, b), 1)
        periods.append(c)
    per = np.array(periods)
    return TransitionCounts(per, per.sum(axis=0))


def jaccard(x0: np.ndarray, x1: np.ndarray, observed: np.ndarray | None = None) -> float:
    """Stable ties over ties present at either wave, on dyads observed at both."""
    if observed is None:
        observed = ~(np.isnan(x0) | np.isnan(x1))
        np.fill_diagonal(observed, False)
    a = (x0 == 1) & observed
    b = (x1 == 1) & observed
    union = np.sum(a | b)
    return float(np.sum(a & b) / union) if union else float("nan")


@dataclass(frozen=True)
class Descriptives:
    density: dict[str, np.ndarray]
    average_degree: dict[str, np.ndarray]
    jaccard: dict[str, np.ndarray]
    missing_ties: np.ndarray
    missing_behavior: np.ndarray


def descriptives(panel: PanelDataset) -> Descriptives:
    n = panel.n
    density, degree, jac = {}, {}, {}
    for name, x in (("weak", panel.weak), ("strong", panel.strong)):
        dens, deg = [], []
        for m in range(panel.n_waves):
            obs = panel.observed_ties[m]
            dens.append(x[m][obs].sum() / obs.sum() if obs.any() else np.nan)
            # a row counts as observed when any of its off-diagonal dyads is observed
            rows = obs.any(axis=1)
            deg.append(np.nansum(np.where(obs, x[m], 0), axis=1)[rows].mean() if rows.any() else np.nan)
        density[name] = np.array(dens)
        degree[name] = np.array(deg)
        jac[name] = np.array([
            jaccard(x[m], x[m + 1], panel.observed_ties[m] & panel.observed_ties[m + 1])
            for m in range(panel.n_waves - 1)])
    offdiag = n * (n - 1)
    missing_t = 1 - panel.observed_ties.sum(axis=(1, 2)) / offdiag
    missing_b = 1 - panel.observed_behavior.mean(axis=1)
    return Descriptives(density, degree, jac, missing_t, missing_b)
