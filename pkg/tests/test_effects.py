import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from osaom import _kernels as K
from osaom.data import BehaviorConstants, ConfigError, DataError
from osaom.dynamics import DEP_INDEX, Model, ModelState, permitted_choices
from osaom.effects import (EffectSpec, StatContext, dense_triad_counts, network_statistics,
                           statistics)

from oracles import INTEGER_KINDS, catalogue, oracle, panel_from_ctx, random_instance

C0 = BehaviorConstants(7.0, 12.0, 0.5)


def ctx_of(weak, strong=None, z=None, covs=None, dyadic=None, constants=C0):
    n = len(weak)
    weak = np.asarray(weak, float)
    strong = np.zeros((n, n)) if strong is None else np.asarray(strong, float)
    z = np.full(n, 7.0) if z is None else np.asarray(z, float)
    return StatContext(weak, strong, z, constants, covs or {}, dyadic or {})


def test_empty_network_all_statistics_zero():
    rng = np.random.default_rng(3)
    ctx = random_instance(rng, 5)
    ctx.weak[:] = 0
    ctx.strong[:] = 0
    for spec in catalogue():
        if spec.dependent == "behavior" or spec.kind in ("egoX",):
            continue
        assert np.all(statistics(spec, ctx) == 0), spec.name


def test_single_transitive_triple():
    x = np.zeros((3, 3))
    x[0, 1] = x[0, 2] = x[2, 1] = 1
    s = network_statistics(EffectSpec("weak", "transTrip"), ctx_of(x))
    assert s[0] == 1
    assert s[1] == 0 and s[2] == 0


def test_couple_four_cycle_fixture():
    # couples (0,1) and (2,3); tie 1->3 present and candidate 0->2
    p = np.zeros((4, 4))
    p[0, 1] = p[1, 0] = p[2, 3] = p[3, 2] = 1
    x = np.zeros((4, 4))
    x[1, 3] = 1
    x[0, 2] = 1
    s = network_statistics(EffectSpec("weak", "coupleFourCycle", "partner"),
                           ctx_of(x, dyadic={"partner": p}))
    assert s[0] == 1


def test_outdegree_isolate_values():
    x = np.zeros((3, 3))
    ctx = ctx_of(x, z=[4, 5, 6])
    spec = EffectSpec("behavior", "outIsolate", "weak")
    assert statistics(spec, ctx)[0] == 4
    x[0, 1] = 1
    assert statistics(spec, ctx_of(x, z=[4, 5, 6]))[0] == 0


def test_dense_triads_complete_triad():
    x = np.ones((3, 3)) - np.eye(3)
    assert list(dense_triad_counts(x)) == [1, 1, 1]
    x[0, 1] = 0  # five ties still dense
    assert list(dense_triad_counts(x)) == [1, 1, 1]
    x[1, 0] = 0
    assert list(dense_triad_counts(x)) == [0, 0, 0]


def test_recip_degree_zero_without_mutual_ties():
    x = np.zeros((3, 3))
    x[0, 1] = x[1, 2] = 1
    s = statistics(EffectSpec("behavior", "recipDeg", "weak"), ctx_of(x, z=[10, 3, 1]))
    assert np.all(s == 0)


def test_transitive_reciprocated_triplet_requires_reciprocation():
    x = np.zeros((3, 3))
    x[0, 1] = x[0, 2] = x[2, 1] = 1
    spec = EffectSpec("weak", "transRecTrip")
    assert network_statistics(spec, ctx_of(x))[0] == 0
    x[1, 0] = 1
    assert network_statistics(spec, ctx_of(x))[0] == 1


@pytest.mark.parametrize("seed", range(40))
def test_engine_matches_enumeration_oracle(seed):
    rng = np.random.default_rng(seed)
    ctx = random_instance(rng, int(rng.integers(3, 7)))
    for spec in catalogue():
        eng = statistics(spec, ctx)
        ref = np.array([oracle(spec, ctx, i) for i in range(len(ctx.z))])
        if spec.kind in INTEGER_KINDS:
            assert np.array_equal(eng, ref), spec.name
        else:
            np.testing.assert_allclose(eng, ref, rtol=0, atol=1e-12, err_msg=spec.name)


def _full_stats(specs, ctx, i):
    return np.array([statistics(s, ctx)[i] for s in specs])


@pytest.mark.parametrize("seed", range(25))
def test_kernel_change_statistics_match_full_differences(seed):
    """Per-candidate deltas from the kernel equal recomputed statistic differences."""
    rng = np.random.default_rng(100 + seed)
    n = int(rng.integers(3, 7))
    ctx = random_instance(rng, n)
    specs = catalogue()
    panel = panel_from_ctx(ctx)
    model = Model.build(specs, panel, ctx.behavior)
    theta = np.zeros(len(specs))
    packs = model.packed(theta)
    state = ModelState(ctx.weak.copy(), ctx.strong.copy(), ctx.z.copy(), 13)
    for dep in ("weak", "strong", "behavior"):
        idx = model.indices(dep)
        dep_specs = [specs[k] for k in idx]
        for i in range(n):
            if dep == "behavior":
                targets, deltas = K.behavior_candidates(i, 13, state.weak, state.strong, state.z,
                                                        packs[2], model.D)
            else:
                targets, deltas = K.network_candidates(DEP_INDEX[dep], i, state.weak, state.strong,
                                                       state.z, packs[DEP_INDEX[dep]], model.V,
                                                       model.D)
            steps = permitted_choices(state, i, dep)
            assert len(steps) == len(targets)
            base = _full_stats(dep_specs, model.context(state, panel), i)
            for step, row in zip(steps, deltas):
                after = step.apply(state)
                new = _full_stats(dep_specs, model.context(after, panel), i)
                np.testing.assert_allclose(row, new - base, atol=1e-9,
                                           err_msg=f"{dep} actor {i} step {step.target}")


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31 - 1), n=st.integers(3, 7))
def test_statistics_permutation_equivariant(seed, n):
    rng = np.random.default_rng(seed)
    ctx = random_instance(rng, n)
    perm = rng.permutation(n)
    pctx = StatContext(ctx.weak[perm][:, perm], ctx.strong[perm][:, perm], ctx.z[perm],
                       ctx.behavior,
                       {k: type(c)(c.values[perm], c.categorical) for k, c in ctx.actor_covariates.items()},
                       {k: w[perm][:, perm] for k, w in ctx.dyadic_covariates.items()})
    for spec in catalogue():
        np.testing.assert_allclose(statistics(spec, pctx), statistics(spec, ctx)[perm],
                                   atol=1e-12, err_msg=spec.name)


def test_strong_statistics_reject_unnested_state():
    weak = np.zeros((3, 3))
    strong = np.zeros((3, 3))
    strong[0, 1] = 1
    with pytest.raises(DataError):
        network_statistics(EffectSpec("strong", "density"), ctx_of(weak, strong))


@pytest.mark.parametrize("text,dep,name", [
    ("density", "weak", "weak:density"),
    ("outdegree", "strong", "strong:density"),
    ("strong:egoX(beh)", None, "strong:egoX(beh)"),
    ("behavior:avSim", None, "behavior:avSim(weak)"),
    ("weak:coupleFourCycleSameGender(partner, gender)", None,
     "weak:coupleFourCycleSameGender(partner,gender)"),
])
def test_parse_names(text, dep, name):
    assert EffectSpec.parse(text, dep).name == name
    assert EffectSpec.parse(name).name == name


@pytest.mark.parametrize("text", [
    "weak:mutualWithLower", "weak:egoX", "behavior:transTrip", "friends:density",
    "weak:coupleFourCycleSameGender(partner)", "weak:noSuchEffect", "density(", "density",
])
def test_invalid_specs_raise(text):
    with pytest.raises(ConfigError):
        EffectSpec.parse(text)


def test_unknown_covariate_rejected_by_model():
    rng = np.random.default_rng(0)
    panel = panel_from_ctx(random_instance(rng, 4))
    with pytest.raises(ConfigError, match="nope"):
        Model.build([EffectSpec("weak", "egoX", "nope")], panel)
    with pytest.raises(ConfigError, match="categorical"):
        Model.build([EffectSpec("weak", "altX", "gender")], panel)
