"""Bundled synthetic panel generator.

Fixture source for tests and the recovery and calibration scripts. The
default generator is the recovery model: on each network density -2.0 and
reciprocity 1.5, behavior linear 0 and quadratic -0.2, all rates 4.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import BehaviorConstants, N_LEVELS, PanelDataset
from .dynamics import Model, ModelState, run_period
from .effects import EffectSpec

DEFAULT_EFFECTS = {
    "weak:density": -2.0,
    "weak:recip": 1.5,
    "strong:density": -2.0,
    "strong:recip": 1.5,
    "behavior:linear": 0.0,
    "behavior:quad": -0.2,
}


@dataclass
class Generator:
    n: int = 40
    n_waves: int = 3
    effects: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_EFFECTS))
    rates: tuple[float, float, float] = (4.0, 4.0, 4.0)
    n_levels: int = N_LEVELS
    burn_in: float = 0.0
    initial_density: float = 0.15
    initial_strong_share: float = 0.4
    initial_mutual_share: float = 0.5
    actor_covariates: dict = field(default_factory=dict)
    dyadic_covariates: dict = field(default_factory=dict)

    @property
    def constants(self) -> BehaviorConstants:
        """Centering used while generating: grid midpoint and full grid range."""
        k = self.n_levels
        grid = np.arange(1, k + 1, dtype=float)
        sim = 1 - np.abs(grid[:, None] - grid[None, :]) / (k - 1)
        return BehaviorConstants(mean=(1 + k) / 2, range=float(k - 1), sim_mean=float(sim.mean()))

    @property
    def specs(self) -> list[EffectSpec]:
        return [EffectSpec.parse(name) for name in self.effects]

    def initial_state(self, rng: np.random.Generator) -> ModelState:
        """Random nested start: a share of tied dyads mutual, strong ties drawn
        dyad-wise among weak ties, behavior around the grid midpoint."""
        n = self.n
        iu = np.triu_indices(n, 1)
        tied = rng.random(len(iu[0])) < self.initial_density / (1 - self.initial_mutual_share / 2)
        mutual = tied & (rng.random(len(tied)) < self.initial_mutual_share)
        forward = rng.random(len(tied)) < 0.5
        weak = np.zeros((n, n))
        weak[iu[0][mutual], iu[1][mutual]] = 1
        weak[iu[1][mutual], iu[0][mutual]] = 1
        asym = tied & ~mutual
        a, b = iu[0][asym], iu[1][asym]
        f = forward[asym]
        weak[np.where(f, a, b), np.where(f, b, a)] = 1
        pick = rng.random(len(iu[0])) < self.initial_strong_share
        strong_sym = np.zeros((n, n))
        strong_sym[iu[0][pick], iu[1][pick]] = 1
        strong_sym = strong_sym + strong_sym.T
        strong = weak * strong_sym
        mid = (1 + self.n_levels) / 2
        z = np.clip(np.round(rng.normal(mid, 1.5, n)), 1, self.n_levels)
        return ModelState(weak, strong, z, self.n_levels)

    def generate(self, seed: int) -> PanelDataset:
        n, waves = self.n, self.n_waves
        actors = tuple(str(k + 1) for k in range(n))
        rng = np.random.default_rng(seed)
        empty = np.zeros((2, n, n))
        z0 = np.full((2, n), float(round((1 + self.n_levels) / 2)))
        shell = PanelDataset(actors, empty, empty, z0, self.n_levels,
                             self.actor_covariates, self.dyadic_covariates)
        model = Model.build(self.specs, shell, self.constants)
        theta = np.array(list(self.effects.values()), dtype=float)
        state = self.initial_state(rng)
        seeds = rng.integers(0, 2 ** 31, size=waves)
        if self.burn_in > 0:
            state = run_period(state, model, theta, self.rates, seeds[0], horizon=self.burn_in).state
        weak, strong, z = [state.weak], [state.strong], [state.z]
        for m in range(1, waves):
            state = run_period(state, model, theta, self.rates, seeds[m]).state
            weak.append(state.weak)
            strong.append(state.strong)
            z.append(state.z)
        return PanelDataset(actors, np.array(weak), np.array(strong), np.array(z),
                            self.n_levels, self.actor_covariates, self.dyadic_covariates)
