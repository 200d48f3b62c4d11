"""Effect catalogue and full effect statistics.

Every effect is identified by a short string (``recip``, ``transTrip``,
``avSim``...) and belongs to one dependent variable: the weak network, the
strong network, or the behavior. Statistics here are evaluated on whole
states with numpy; the simulation kernel uses incremental change statistics
(:mod:`osaom._kernels`) that are tested against these.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .data import ActorCovariate, BehaviorConstants, ConfigError, DataError, PanelDataset

DEPENDENTS = ("weak", "strong", "behavior")
BEHAVIOR_COVARIATE = "beh"

NETWORK_KINDS = (
    "density", "recip", "transTrip", "transRecTrip", "inPop", "outPop", "outAct",
    "egoX", "altX", "simX", "sameX", "dyadX",
    "partnerFriend", "friendPartner", "coupleFourCycle", "coupleFourCycleSameGender",
    "mutualWithLower",
)
BEHAVIOR_KINDS = ("linear", "quad", "recipDeg", "denseTriads", "avSim", "outIsolate")

ALIASES = {"outdegree": "density"}

_ACTOR_COV_KINDS = {"egoX", "altX", "simX", "sameX"}
_PARTNER_KINDS = {"partnerFriend", "friendPartner", "coupleFourCycle", "coupleFourCycleSameGender"}
_NETREF_KINDS = {"recipDeg", "denseTriads", "avSim", "outIsolate"}

_SPEC_RE = re.compile(r"^\s*(?:(\w+)\s*:\s*)?(\w+)\s*(?:\(\s*([^,()\s]+)\s*(?:,\s*([^,()\s]+)\s*)?\))?\s*$")


@dataclass(frozen=True)
class EffectSpec:
    """One effect in an objective function.

    ``covariate`` names an actor covariate (or ``beh`` for the behavior
    variable), a dyadic covariate such as the partnership matrix, or, for
    behavior effects, the network the statistic reads (``weak``/``strong``/a
    dyadic covariate). ``interaction`` is the gender covariate of the
    same-gender four-cycle effect.
    """

    dependent: str
    kind: str
    covariate: str | None = None
    interaction: str | None = None

    def __post_init__(self):
        kind = ALIASES.get(self.kind, self.kind)
        object.__setattr__(self, "kind", kind)
        if self.dependent not in DEPENDENTS:
            raise ConfigError(f"unknown dependent variable {self.dependent!r}")
        if self.dependent == "behavior":
            if kind not in BEHAVIOR_KINDS:
                raise ConfigError(f"unknown behavior effect {kind!r}")
            if kind in _NETREF_KINDS and self.covariate is None:
                object.__setattr__(self, "covariate", "weak")
        else:
            if kind not in NETWORK_KINDS:
                raise ConfigError(f"unknown network effect {kind!r}")
            if kind == "mutualWithLower" and self.dependent != "strong":
                raise ConfigError("mutualWithLower is only defined on the strong network")
            needs_cov = kind in _ACTOR_COV_KINDS | _PARTNER_KINDS | {"dyadX"}
            if needs_cov and self.covariate is None:
                raise ConfigError(f"effect {kind!r} needs a covariate")
            if kind == "coupleFourCycleSameGender" and self.interaction is None:
                raise ConfigError("coupleFourCycleSameGender needs (partner, gender) covariates")

    @property
    def name(self) -> str:
        args = [a for a in (self.covariate, self.interaction) if a is not None]
        suffix = f"({','.join(args)})" if args else ""
        return f"{self.dependent}:{self.kind}{suffix}"

    def __str__(self):
        return self.name

    @classmethod
    def parse(cls, text: str, dependent: str | None = None) -> "EffectSpec":
        """Parse ``[dep:]kind[(cov[,inter])]``."""
        m = _SPEC_RE.match(text)
        if not m:
            raise ConfigError(f"cannot parse effect {text!r}")
        dep, kind, cov, inter = m.groups()
        dep = dep or dependent
        if dep is None:
            raise ConfigError(f"effect {text!r} does not name its dependent variable")
        return cls(dep, kind, cov, inter)

    def check_against(self, panel: PanelDataset) -> None:
        """Raise if a referenced covariate does not exist or has the wrong type."""
        kind, cov = self.kind, self.covariate
        if self.dependent == "behavior":
            if kind in _NETREF_KINDS and cov not in ("weak", "strong") \
                    and cov not in panel.dyadic_covariates:
                raise ConfigError(f"{self.name}: unknown network {cov!r}")
            return
        if kind in _ACTOR_COV_KINDS and cov != BEHAVIOR_COVARIATE:
            if cov not in panel.actor_covariates:
                raise ConfigError(f"{self.name}: unknown actor covariate {cov!r}")
            if kind != "sameX" and panel.actor_covariates[cov].categorical:
                raise ConfigError(f"{self.name}: categorical covariates only support sameX")
        if kind in _PARTNER_KINDS | {"dyadX"} and cov not in panel.dyadic_covariates:
            raise ConfigError(f"{self.name}: unknown dyadic covariate {cov!r}")
        if kind == "coupleFourCycleSameGender" and self.interaction not in panel.actor_covariates:
            raise ConfigError(f"{self.name}: unknown actor covariate {self.interaction!r}")


@dataclass
class StatContext:
    """Everything a statistic may read: both networks, behavior, covariates."""

    weak: np.ndarray
    strong: np.ndarray
    z: np.ndarray
    behavior: BehaviorConstants
    actor_covariates: Mapping[str, ActorCovariate]
    dyadic_covariates: Mapping[str, np.ndarray]

    @classmethod
    def from_panel(cls, panel: PanelDataset, wave: int,
                   constants: BehaviorConstants | None = None) -> "StatContext":
        return cls(
            weak=np.nan_to_num(panel.weak[wave]),
            strong=np.nan_to_num(panel.strong[wave]),
            z=panel.behavior[wave].copy(),
            behavior=constants or panel.behavior_constants(),
            actor_covariates=panel.actor_covariates,
            dyadic_covariates=panel.dyadic_covariates,
        )

    def network(self, ref: str) -> np.ndarray:
        if ref == "weak":
            return self.weak
        if ref == "strong":
            return self.strong
        return self.dyadic_covariates[ref]

    def covariate(self, name: str) -> tuple[np.ndarray, float, float, float, bool]:
        """(values, mean, range, similarity mean, categorical) for an actor covariate."""
        if name == BEHAVIOR_COVARIATE:
            c = self.behavior
            return self.z, c.mean, c.range, c.sim_mean, False
        cov = self.actor_covariates[name]
        return cov.values, cov.mean, cov.range, cov.similarity_mean(), cov.categorical


def _same(v: np.ndarray) -> np.ndarray:
    same = (v[:, None] == v[None, :]).astype(float)
    np.fill_diagonal(same, 0.0)
    return same


def dense_triad_counts(x: np.ndarray) -> np.ndarray:
    """Per actor, the number of unordered triads it belongs to with at least 5 of 6 ties."""
    n = x.shape[0]
    s = x + x.T
    tot = s[:, :, None] + s[:, None, :] + s[None, :, :]  # tot[i, j, h]
    idx = np.arange(n)
    valid = (idx[None, :, None] < idx[None, None, :]) \
        & (idx[:, None, None] != idx[None, :, None]) \
        & (idx[:, None, None] != idx[None, None, :])
    return ((tot >= 5) & valid).sum(axis=(1, 2)).astype(float)


def network_statistics(spec: EffectSpec, ctx: StatContext) -> np.ndarray:
    """Statistic ``s_ik`` for every actor ``i`` on the spec's own network."""
    if spec.dependent == "behavior":
        raise ConfigError(f"{spec.name} is a behavior effect")
    if spec.dependent == "strong" and np.any(ctx.strong > ctx.weak):
        raise DataError("strong network has ties outside the weak network")
    x = ctx.weak if spec.dependent == "weak" else ctx.strong
    kind = spec.kind
    outdeg = x.sum(1)
    if kind == "density":
        return outdeg
    if kind == "recip":
        return (x * x.T).sum(1)
    if kind == "transTrip":
        return (x * (x @ x)).sum(1)
    if kind == "transRecTrip":
        return (x * x.T * (x @ x)).sum(1)
    if kind == "inPop":
        return x @ x.sum(0)
    if kind == "outPop":
        return x @ outdeg
    if kind == "outAct":
        return outdeg ** 2
    if kind in _ACTOR_COV_KINDS:
        v, mean, rng, sim_mean, _ = ctx.covariate(spec.covariate)
        centered = np.nan_to_num(v - mean)
        if kind == "egoX":
            return centered * outdeg
        if kind == "altX":
            return x @ centered
        if kind == "simX":
            sim = 1.0 - np.abs(v[:, None] - v[None, :]) / rng - sim_mean
            return (x * np.nan_to_num(sim)).sum(1)
        return (x * _same(v)).sum(1)
    if kind == "dyadX":
        return (x * ctx.dyadic_covariates[spec.covariate]).sum(1)
    if kind in _PARTNER_KINDS:
        p = ctx.dyadic_covariates[spec.covariate]
        if kind == "partnerFriend":
            return (x * (p @ x)).sum(1)
        if kind == "friendPartner":
            return (x * (x @ p)).sum(1)
        closure = x * (p @ x @ p)
        if kind == "coupleFourCycleSameGender":
            closure = closure * _same(ctx.actor_covariates[spec.interaction].values)
        return closure.sum(1)
    if kind == "mutualWithLower":
        return (ctx.strong * ctx.weak.T).sum(1)
    raise ConfigError(f"unknown network effect {kind!r}")


def behavior_statistics(spec: EffectSpec, ctx: StatContext) -> np.ndarray:
    """Statistic ``s_ik`` of a behavior effect for every actor ``i``."""
    if spec.dependent != "behavior":
        raise ConfigError(f"{spec.name} is not a behavior effect")
    c = ctx.behavior
    z = ctx.z
    zc = z - c.mean
    kind = spec.kind
    if kind == "linear":
        return zc
    if kind == "quad":
        return zc ** 2
    x = ctx.network(spec.covariate)
    if kind == "recipDeg":
        return zc * (x * x.T).sum(1)
    if kind == "denseTriads":
        return zc * dense_triad_counts(x)
    outdeg = x.sum(1)
    if kind == "avSim":
        sim = 1.0 - np.abs(z[:, None] - z[None, :]) / c.range - c.sim_mean
        total = (x * sim).sum(1)
        out = np.zeros_like(total)
        np.divide(total, outdeg, out=out, where=outdeg > 0)
        return out
    if kind == "outIsolate":
        return z * (outdeg == 0)
    raise ConfigError(f"unknown behavior effect {kind!r}")


def statistics(spec: EffectSpec, ctx: StatContext) -> np.ndarray:
    if spec.dependent == "behavior":
        return behavior_statistics(spec, ctx)
    return network_statistics(spec, ctx)


def network_statistic(spec: EffectSpec, i: int, ctx: StatContext) -> float:
    return float(network_statistics(spec, ctx)[i])


def behavior_statistic(spec: EffectSpec, i: int, ctx: StatContext) -> float:
    return float(behavior_statistics(spec, ctx)[i])


def objective(effects: list[EffectSpec], theta: np.ndarray, i: int, ctx: StatContext) -> float:
    """``f_i = sum_k theta_k s_ik`` over the given effects (one dependent)."""
    return float(sum(t * statistics(e, ctx)[i] for e, t in zip(effects, theta)))
