"""Continuous-time mini-step dynamics for the ordered network pair and behavior."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels as K
from .data import BehaviorConstants, ConfigError, PanelDataset
from .effects import DEPENDENTS, BEHAVIOR_COVARIATE, EffectSpec, StatContext

DEP_INDEX = {d: k for k, d in enumerate(DEPENDENTS)}


class SimulationError(RuntimeError):
    """Numerical failure during simulation (e.g. a non-finite objective)."""


@dataclass
class ModelState:
    weak: np.ndarray
    strong: np.ndarray
    z: np.ndarray
    n_levels: int
    elapsed: float = 0.0

    @classmethod
    def from_panel(cls, panel: PanelDataset, wave: int) -> "ModelState":
        if np.isnan(panel.weak[wave]).any() or np.isnan(panel.behavior[wave]).any():
            raise ValueError("panel has missing values; run impute_for_simulation first")
        return cls(panel.weak[wave].astype(float), panel.strong[wave].astype(float),
                   panel.behavior[wave].astype(float), panel.n_levels)

    @property
    def n(self) -> int:
        return self.weak.shape[0]

    def copy(self) -> "ModelState":
        return ModelState(self.weak.copy(), self.strong.copy(), self.z.copy(),
                          self.n_levels, self.elapsed)


@dataclass(frozen=True)
class MiniStep:
    """One actor's option: toggle tie to ``target`` or move behavior by ``target``.

    ``target is None`` is the no-change option.
    """

    actor: int
    dependent: str
    target: int | None = None

    def apply(self, state: ModelState) -> ModelState:
        new = state.copy()
        if self.target is None:
            return new
        if self.dependent == "behavior":
            new.z[self.actor] += self.target
        else:
            x = new.weak if self.dependent == "weak" else new.strong
            x[self.actor, self.target] = 1.0 - x[self.actor, self.target]
        return new


def permitted_choices(state: ModelState, i: int, dependent: str) -> list[MiniStep]:
    """Options open to actor ``i``, ordered as the kernel orders them (no-change last)."""
    if dependent == "behavior":
        moves = [d for d in (-1, 1) if 1 <= state.z[i] + d <= state.n_levels]
        return [MiniStep(i, dependent, d) for d in moves] + [MiniStep(i, dependent)]
    out = []
    for j in range(state.n):
        if j == i:
            continue
        if dependent == "weak":
            if state.weak[i, j] == 1 and state.strong[i, j] == 1:
                continue
        elif state.weak[i, j] == 0:
            continue
        out.append(MiniStep(i, dependent, j))
    return out + [MiniStep(i, dependent)]


@dataclass
class Model:
    """Effects bound to a panel's covariates and behavior constants, ready for the kernel."""

    effects: tuple[EffectSpec, ...]
    n_levels: int
    constants: BehaviorConstants
    covariate_names: tuple[str, ...]
    dyadic_names: tuple[str, ...]
    V: np.ndarray
    D: np.ndarray
    _structure: tuple = field(repr=False, default=())

    @classmethod
    def build(cls, effects: Sequence[EffectSpec], panel: PanelDataset,
              constants: BehaviorConstants | None = None) -> "Model":
        effects = tuple(effects)
        names = [e.name for e in effects]
        if len(set(names)) != len(names):
            raise ConfigError("duplicate effects in model")
        for e in effects:
            e.check_against(panel)
        constants = constants or panel.behavior_constants()
        cov_names = tuple(panel.actor_covariates)
        dy_names = tuple(panel.dyadic_covariates)
        n = panel.n
        V = np.array([panel.actor_covariates[c].values for c in cov_names], dtype=float) \
            if cov_names else np.zeros((0, n))
        D = np.array([panel.dyadic_covariates[c] for c in dy_names], dtype=float) \
            if dy_names else np.zeros((0, n, n))
        structure = []
        for dep in DEPENDENTS:
            idx = [k for k, e in enumerate(effects) if e.dependent == dep]
            codes = np.zeros(len(idx), np.int64)
            ip = np.zeros((len(idx), 3), np.int64)
            fp = np.zeros((len(idx), 3))
            for r, k in enumerate(idx):
                e = effects[k]
                if dep == "behavior":
                    codes[r] = K.BEHAVIOR_CODES[e.kind]
                    if e.covariate in ("weak", "strong"):
                        ip[r, 0] = 0 if e.covariate == "weak" else 1
                    elif e.covariate is not None:
                        ip[r, 0] = 2 + dy_names.index(e.covariate)
                    fp[r] = (constants.mean, constants.range, constants.sim_mean)
                    continue
                codes[r] = K.NETWORK_CODES[e.kind]
                if e.kind in ("egoX", "altX", "simX", "sameX"):
                    if e.covariate == BEHAVIOR_COVARIATE:
                        ip[r, 0] = -1
                        fp[r] = (constants.mean, constants.range, constants.sim_mean)
                    else:
                        cov = panel.actor_covariates[e.covariate]
                        ip[r, 0] = cov_names.index(e.covariate)
                        fp[r] = (cov.mean, cov.range, cov.similarity_mean())
                elif e.kind in ("dyadX", "partnerFriend", "friendPartner",
                                "coupleFourCycle", "coupleFourCycleSameGender"):
                    ip[r, 2] = dy_names.index(e.covariate)
                    if e.interaction is not None:
                        ip[r, 1] = cov_names.index(e.interaction)
            structure.append((np.array(idx, np.int64), codes, ip, fp))
        return cls(effects, panel.n_levels, constants, cov_names, dy_names, V, D, tuple(structure))

    def indices(self, dependent: str) -> np.ndarray:
        return self._structure[DEP_INDEX[dependent]][0]

    def packed(self, theta: np.ndarray) -> tuple:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (len(self.effects),):
            raise ValueError(f"expected {len(self.effects)} parameters, got {theta.shape}")
        return tuple((codes, ip, fp, theta[idx].copy()) for idx, codes, ip, fp in self._structure)

    def context(self, state: ModelState, panel: PanelDataset) -> StatContext:
        return StatContext(state.weak, state.strong, state.z, self.constants,
                           panel.actor_covariates, panel.dyadic_covariates)


def _candidates(model: Model, packs, state: ModelState, i: int, dependent: str):
    if dependent == "behavior":
        return K.behavior_candidates(i, model.n_levels, state.weak, state.strong, state.z,
                                     packs[2], model.D)
    dep = DEP_INDEX[dependent]
    return K.network_candidates(dep, i, state.weak, state.strong, state.z, packs[dep],
                                model.V, model.D)


def choice_probabilities(state: ModelState, i: int, dependent: str, model: Model,
                         theta: np.ndarray) -> tuple[list[MiniStep], np.ndarray]:
    """Multinomial-logit probabilities over the permitted mini steps of actor ``i``."""
    packs = model.packed(theta)
    targets, deltas = _candidates(model, packs, state, i, dependent)
    th = packs[DEP_INDEX[dependent]][3]
    with np.errstate(invalid="ignore", over="ignore"):
        contrib = deltas * th
        f = contrib.sum(axis=1)
    if not np.all(np.isfinite(f)):
        bad = np.where(~np.isfinite(contrib).all(axis=0))[0]
        names = [model.effects[model.indices(dependent)[b]].name for b in bad]
        raise SimulationError(f"non-finite objective for actor {i}: {', '.join(names)}")
    f = f - f.max()
    p = np.exp(f)
    p /= p.sum()
    steps = [MiniStep(i, dependent, None if t == (0 if dependent == "behavior" else -1) else int(t))
             for t in targets]
    return steps, p


@dataclass
class PeriodRun:
    state: ModelState
    steps: np.ndarray
    scores: np.ndarray | None
    events: np.ndarray | None


def run_period(start: ModelState, model: Model, theta: np.ndarray, rates: Sequence[float],
               seed: int, *, horizon: float = 1.0, scores: bool = False,
               log_capacity: int = 0) -> PeriodRun:
    """Simulate one period from ``start`` (which is not modified)."""
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (3,) or np.any(rates <= 0) or not np.all(np.isfinite(rates)):
        raise ValueError("rates must be three positive finite numbers")
    packs = model.packed(theta)
    state = start.copy()
    score_buf = np.zeros(len(model.effects) if scores else 0)
    log = np.zeros((log_capacity, 5))
    counts, nlog = K.simulate(state.weak, state.strong, state.z, state.n_levels, rates,
                              packs[0], packs[1], packs[2], model.V, model.D,
                              int(seed) % (2 ** 32), float(horizon), score_buf, log)
    state.elapsed = start.elapsed + horizon
    if scores:
        # reorder kernel (dependent-blocked) scores to model effect order
        ordered = np.zeros(len(model.effects))
        ordered[np.concatenate([s[0] for s in model._structure])] = score_buf
        score_buf = ordered
    return PeriodRun(state, counts, score_buf if scores else None,
                     log[:min(nlog, log_capacity)] if log_capacity else None)


def simulate_period(start: ModelState, model: Model, theta: np.ndarray,
                    rates: Sequence[float], seed: int) -> ModelState:
    """End state after one unit of simulated time."""
    return run_period(start, model, theta, rates, seed).state


@dataclass(frozen=True)
class Violation:
    kind: str
    i: int
    j: int = -1

    def __str__(self):
        where = f"({self.i}, {self.j})" if self.j >= 0 else f"actor {self.i}"
        return f"{self.kind} at {where}"


def validate_state(state: ModelState) -> Violation | None:
    """First violated invariant (diagonal, nesting, behavior grid) or ``None``."""
    diag = np.flatnonzero((np.diag(state.weak) != 0) | (np.diag(state.strong) != 0))
    if diag.size:
        return Violation("nonzero diagonal", int(diag[0]), int(diag[0]))
    bad = np.argwhere(state.strong > state.weak)
    if bad.size:
        return Violation("strong tie without weak tie", int(bad[0, 0]), int(bad[0, 1]))
    off = np.flatnonzero((state.z < 1) | (state.z > state.n_levels) | (state.z != np.round(state.z)))
    if off.size:
        return Violation("behavior off grid", int(off[0]))
    return None


def fuzz_nesting(state: ModelState, model: Model, theta: np.ndarray, rates: Sequence[float],
                 seed: int, n_steps: int) -> int:
    """Run ``n_steps`` mini steps on a copy of ``state``; count invalid intermediate states."""
    s = state.copy()
    packs = model.packed(theta)
    return int(K.fuzz_check(s.weak, s.strong, s.z, s.n_levels, np.asarray(rates, float),
                            packs[0], packs[1], packs[2], model.V, model.D, int(seed), n_steps))

