"""Command-line front end: ``osaom <command> --config run.ini``.

Exit codes: 0 success, 1 configuration / data / numerical error,
2 usage error (argparse), 3 estimation finished without converging
(outputs are still written).
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import descriptives, selection_table, transition_counts
from .data import BehaviorConstants, ConfigError, DataError, PanelDataset
from .dynamics import Model, ModelState, SimulationError, run_period
from .effects import DEPENDENTS, EffectSpec
from .estimation import (AUXILIARY, EstimationError, EstimationOptions, estimate, gof,
                         score_test, wald_test)
from .io import (format_number, load_effects, load_panel, new_config, read_config,
                 read_result, write_matrix, write_result, write_table)
from .synthetic import DEFAULT_EFFECTS, Generator

log = logging.getLogger("osaom")

OUTPUT_ENV = "OSAOM_OUTPUT_DIR"
EXIT_OK, EXIT_ERROR, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 1, 2, 3


class NotConverged(Exception):
    pass


def _category(exc: Exception) -> str:
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, (DataError, OSError)):
        return "data"
    if isinstance(exc, (EstimationError, SimulationError, np.linalg.LinAlgError, FloatingPointError)):
        return "numerical"
    return "config"


def _seed(args, cp) -> int:
    if args.seed is not None:
        return args.seed
    # [run] first: a manifest stores the seed that was actually used there
    for section in ("run", "estimation", "simulate"):
        if cp is not None and section in cp and "seed" in cp[section]:
            return cp[section].getint("seed")
    return 0


def _output_dir(args, cp) -> Path:
    out = args.out or os.environ.get(OUTPUT_ENV)
    if out is None and cp is not None and "run" in cp and "output_dir" in cp["run"]:
        out = cp["run"]["output_dir"]
    path = Path(out or "osaom-out")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _constants(cp) -> BehaviorConstants | None:
    if cp is None or "centering" not in cp:
        return None
    c = cp["centering"]
    try:
        return BehaviorConstants(float(c["mean"]), float(c["range"]), float(c["sim_mean"]))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"[centering] needs numeric mean, range and sim_mean: {exc}") from None


def _options(cp, seed: int, threads: int) -> EstimationOptions:
    kw = {}
    if cp is not None and "estimation" in cp:
        fields = {f.name: f for f in dataclasses.fields(EstimationOptions)}
        for key, raw in cp["estimation"].items():
            if key.startswith("_") or key == "seed":
                continue
            if key not in fields:
                raise ConfigError(f"unknown estimation option {key!r}")
            default = getattr(EstimationOptions(), key)
            try:
                kw[key] = raw if isinstance(default, str) else (
                    float(raw) if isinstance(default, float) else int(raw))
            except ValueError:
                raise ConfigError(f"estimation option {key}: bad value {raw!r}") from None
    return EstimationOptions(seed=seed, threads=threads, **kw)


def _write_manifest(out: Path, args, cp, seed: int, started: float, extra: dict | None = None):
    m = new_config()
    m["run"] = {"command": args.command, "argv": " ".join(args.argv), "seed": str(seed),
                "version": __version__, "threads": str(args.threads),
                "wall_time": f"{time.perf_counter() - started:.3f}"}
    if extra:
        m["run"].update({k: str(v) for k, v in extra.items()})
    if cp is not None:
        for section in cp.sections():
            if section == "run":
                continue
            m[section] = {k: v for k, v in cp[section].items()
                          if k != "_dir" and k not in cp["DEFAULT"]}
        if "_dir" in cp["DEFAULT"]:
            m["run"]["config_dir"] = cp["DEFAULT"]["_dir"]
    with open(out / "manifest.ini", "w") as fh:
        m.write(fh)


def _parameters(cp, effects: list[EffectSpec], n_periods: int):
    """Effect parameters and per-period rates from ``[parameters]``."""
    sec = cp["parameters"] if "parameters" in cp else {}
    theta = np.zeros(len(effects))
    for k, e in enumerate(effects):
        if e.name in sec:
            theta[k] = float(sec[e.name])
        elif e.name in DEFAULT_EFFECTS:
            theta[k] = DEFAULT_EFFECTS[e.name]
    rates = np.full((n_periods, 3), 4.0)
    for d, dep in enumerate(DEPENDENTS):
        if f"rate:{dep}" in sec:
            rates[:, d] = float(sec[f"rate:{dep}"])
        for m in range(n_periods):
            key = f"rate:{dep}:period{m + 1}"
            if key in sec:
                rates[m, d] = float(sec[key])
    if np.any(rates <= 0):
        raise ConfigError("rates must be positive")
    return theta, rates


def cmd_describe(args, cp, out: Path, seed: int) -> int:
    panel = load_panel(cp)
    d = descriptives(panel)
    rows = []
    for m in range(panel.n_waves):
        rows.append([f"wave{m + 1}", d.density["weak"][m], d.density["strong"][m],
                     d.average_degree["weak"][m], d.average_degree["strong"][m],
                     d.missing_ties[m], d.missing_behavior[m]])
    write_table(out / "descriptives.tsv",
                ["wave", "density_weak", "density_strong", "avgdeg_weak", "avgdeg_strong",
                 "missing_ties", "missing_behavior"], rows)
    write_table(out / "jaccard.tsv", ["period", "weak", "strong"],
                [[f"{m + 1}-{m + 2}", d.jaccard["weak"][m], d.jaccard["strong"][m]]
                 for m in range(panel.n_waves - 1)])
    tc = transition_counts(panel)
    levels = ("none", "weak", "strong")
    trows = []
    for label, c in [(f"{m + 1}-{m + 2}", tc.per_period[m]) for m in range(len(tc.per_period))] \
            + [("pooled", tc.pooled)]:
        for a in range(3):
            trows.append([label, levels[a]] + [int(v) for v in c[a]])
    write_table(out / "transitions.tsv", ["period", "from", "to_none", "to_weak", "to_strong"], trows)
    return EXIT_OK


def _write_panel(out: Path, weak, strong, z, cp_model, constants, actors) -> None:
    out.mkdir(parents=True, exist_ok=True)
    names_w, names_s = [], []
    for m in range(len(weak)):
        write_matrix(out / f"weak_w{m + 1}.txt", weak[m])
        write_matrix(out / f"strong_w{m + 1}.txt", strong[m])
        names_w.append(f"weak_w{m + 1}.txt")
        names_s.append(f"strong_w{m + 1}.txt")
    write_matrix(out / "behavior.txt", np.array(z).T)
    p = new_config()
    p["data"] = {"weak": " ".join(names_w), "strong": " ".join(names_s),
                 "behavior": "behavior.txt"}
    if cp_model is not None:
        p["model"] = dict(cp_model)
    if constants is not None:
        p["centering"] = {"mean": format_number(constants.mean),
                          "range": format_number(constants.range),
                          "sim_mean": format_number(constants.sim_mean)}
    with open(out / "panel.ini", "w") as fh:
        p.write(fh)


def cmd_simulate(args, cp, out: Path, seed: int) -> int:
    sim = cp["simulate"] if "simulate" in cp else {}
    reps = args.replications or int(sim.get("replications", 1))
    if "model" in cp:
        effects = load_effects(cp)
    else:
        effects = [EffectSpec.parse(k) for k in DEFAULT_EFFECTS]
    model_section = {dep: " ".join(str(e).split(":", 1)[1] for e in effects if e.dependent == dep)
                     for dep in DEPENDENTS}
    ss = np.random.SeedSequence(seed)
    rep_seeds = [int(s.generate_state(1)[0] & 0x7FFFFFFF) for s in ss.spawn(reps)]

    if "data" in cp:
        panel = load_panel(cp)
        from .data import impute_for_simulation
        panel = impute_for_simulation(panel)
        constants = _constants(cp) or panel.behavior_constants()
        model = Model.build(effects, panel, constants)
        theta, rates = _parameters(cp, effects, panel.n_waves - 1)
        for r, rs in enumerate(rep_seeds):
            rng = np.random.default_rng(rs)
            state = ModelState.from_panel(panel, 0)
            weak, strong, z, events = [state.weak], [state.strong], [state.z], []
            for m in range(panel.n_waves - 1):
                run = run_period(state, model, theta, rates[m], int(rng.integers(2 ** 31)),
                                 log_capacity=200000 if args.event_log else 0)
                state = run.state
                weak.append(state.weak)
                strong.append(state.strong)
                z.append(state.z)
                if args.event_log:
                    events.extend([m + 1] + list(e) for e in run.events)
            rdir = out / f"rep{r + 1}"
            _write_panel(rdir, weak, strong, z, model_section, constants, panel.actors)
            if args.event_log:
                _write_events(rdir / "events.tsv", events)
    else:
        n_waves = int(sim.get("n_waves", 3))
        theta, rates = _parameters(cp, effects, n_waves - 1)
        shape = {k: float(sim[k]) for k in ("initial_density", "initial_strong_share",
                                              "initial_mutual_share") if k in sim}
        gen = Generator(n=int(sim.get("n", 40)), n_waves=n_waves,
                        effects={e.name: float(t) for e, t in zip(effects, theta)},
                        rates=tuple(rates[0]), **shape)
        for r, rs in enumerate(rep_seeds):
            panel = gen.generate(rs)
            _write_panel(out / f"rep{r + 1}", panel.weak, panel.strong, panel.behavior,
                         model_section, gen.constants, panel.actors)
    return EXIT_OK


def _write_events(path: Path, events) -> None:
    deps = DEPENDENTS
    rows = [[int(e[0]), format_number(e[1]), deps[int(e[2])], int(e[3]), int(e[4]), int(e[5])]
            for e in events]
    write_table(path, ["period", "time", "dependent", "actor", "target", "value"], rows)


def _result_rows(res):
    return [[r["effect"], format_number(r["estimate"]), format_number(r["se"]),
             format_number(r["t_conv"]), format_number(r["p"]), r["stars"]]
            for r in res.table()]


def cmd_estimate(args, cp, out: Path, seed: int) -> int:
    panel = load_panel(cp)
    effects = load_effects(cp)
    opts = _options(cp, seed, args.threads)
    constants = _constants(cp)
    res = estimate(panel, effects, opts, constants=constants)
    used = constants or panel.behavior_constants()
    write_table(out / "estimates.tsv", ["effect", "estimate", "se", "t_conv", "p", "sig"],
                _result_rows(res))
    write_result(out / "result.ini", res, used)
    for msg in res.messages:
        log.warning(msg)
    log.info("max convergence ratio %.4f, converged=%s", res.max_ratio, res.converged)
    if not res.converged:
        raise NotConverged(f"max convergence ratio {res.max_ratio:.3f}")
    return EXIT_OK


def _need_result(args):
    if not args.result:
        raise ConfigError("--result is required")
    return read_result(args.result)


def cmd_score_test(args, cp, out: Path, seed: int) -> int:
    if not args.effect:
        raise ConfigError("--effect is required")
    panel = load_panel(cp)
    effects = load_effects(cp)
    fitted, constants = _need_result(args)
    rows = []
    for k, text in enumerate(args.effect):
        extra = EffectSpec.parse(text)
        r = score_test(panel, fitted, effects, extra, n_sims=args.sims or 1000, seed=seed + k,
                       derivative=args.derivative, constants=_constants(cp) or constants,
                       threads=args.threads)
        rows.append([r.effect, format_number(r.statistic), format_number(r.p_value),
                     format_number(r.deviation)])
    write_table(out / "score_test.tsv", ["effect", "z", "p", "deviation"], rows)
    return EXIT_OK


def cmd_wald_test(args, cp, out: Path, seed: int) -> int:
    if not args.params:
        raise ConfigError("--params is required")
    fitted, _ = _need_result(args)
    for name in args.params:
        if name not in fitted.param_names:
            raise ConfigError(f"unknown parameter {name!r}")
    r = wald_test(fitted, args.params)
    write_table(out / "wald_test.tsv", ["parameters", "chi2", "df", "p"],
                [[" ".join(args.params), format_number(r.statistic), r.df,
                  format_number(r.p_value)]])
    return EXIT_OK


def cmd_gof(args, cp, out: Path, seed: int) -> int:
    panel = load_panel(cp)
    effects = load_effects(cp)
    fitted, constants = _need_result(args)
    r = gof(panel, fitted, effects, auxiliary=args.auxiliary, network=args.network,
            n_sims=args.sims or 500, seed=seed, constants=_constants(cp) or constants,
            threads=args.threads)
    write_table(out / "gof.tsv", ["auxiliary", "network", "distance", "p"],
                [[r.auxiliary, args.network, format_number(r.distance), format_number(r.p_value)]])
    write_table(out / "gof_profile.tsv", ["k", "observed", "simulated_mean"],
                [[k, format_number(o), format_number(s)]
                 for k, (o, s) in enumerate(zip(r.observed, r.simulated_mean))])
    return EXIT_OK


def cmd_table(args, cp, out: Path, seed: int) -> int:
    vals = dict(theta_ego=args.theta_ego, theta_alter=args.theta_alter, theta_sim=args.theta_sim,
                mean=args.mean, value_range=args.range, sim_mean=args.sim_mean)
    if args.result:
        fitted, constants = read_result(args.result)
        cov = args.covariate
        names = {"theta_ego": f"{args.network}:egoX({cov})",
                 "theta_alter": f"{args.network}:altX({cov})",
                 "theta_sim": f"{args.network}:simX({cov})"}
        for key, name in names.items():
            if vals[key] is None:
                vals[key] = float(fitted.estimates[fitted.index(name)]) \
                    if name in fitted.param_names else 0.0
        if constants is not None:
            for key, v in (("mean", constants.mean), ("value_range", constants.range),
                           ("sim_mean", constants.sim_mean)):
                if vals[key] is None:
                    vals[key] = v
    missing = [k for k, v in vals.items() if v is None]
    if missing:
        raise ConfigError("table needs values for " + ", ".join(missing))
    lo, hi = (int(v) for v in args.levels.split("-"))
    levels = list(range(lo, hi + 1))
    t = selection_table(levels=levels, **vals)
    write_table(out / "selection_table.tsv", ["ego\\alter"] + [str(v) for v in levels],
                [[str(a)] + [f"{round(g, 2) + 0.0:.2f}" for g in t.gains[k]] for k, a in enumerate(levels)])
    return EXIT_OK


COMMANDS = {
    "describe": (cmd_describe, "panel descriptives and tie-level transition counts"),
    "simulate": (cmd_simulate, "simulate panels from a model (synthetic generator without [data])"),
    "estimate": (cmd_estimate, "method-of-moments estimation"),
    "score-test": (cmd_score_test, "score-type test of omitted effects at a fitted model"),
    "wald-test": (cmd_wald_test, "joint Wald test on fitted parameters"),
    "gof": (cmd_gof, "goodness of fit on an auxiliary statistic"),
    "table": (cmd_table, "ego-alter selection table"),
}
NEEDS_CONFIG = {"describe", "simulate", "estimate", "score-test", "gof"}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="osaom", description="Ordered stochastic actor-oriented models for weak/strong networks "
                                  "and an ordinal behavior.",
        epilog=f"Output directory defaults to ${OUTPUT_ENV} or ./osaom-out. Exit codes: 0 ok, "
               "1 config/data/numerical error, 2 usage, 3 not converged.")
    parser.add_argument("--version", action="version", version=f"osaom {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", "-c", help="INI run config")
        p.add_argument("--out", "-o", help=f"output directory (default ${OUTPUT_ENV} or ./osaom-out)")
        p.add_argument("--seed", type=int, help="overrides the seed in the config")
        p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                       help="worker threads (results do not depend on it)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("score-test", "wald-test", "gof", "table"):
            p.add_argument("--result", help="result.ini written by estimate")
        if name == "simulate":
            p.add_argument("--replications", type=int)
            p.add_argument("--event-log", action="store_true", help="write events.tsv per replication")
        if name == "score-test":
            p.add_argument("--effect", nargs="+", help="omitted effect(s), e.g. behavior:outIsolate(weak)")
            p.add_argument("--sims", type=int)
            p.add_argument("--derivative", choices=("score", "fd"), default="score")
        if name == "wald-test":
            p.add_argument("--params", nargs="+", help="parameter names as in result.ini")
        if name == "gof":
            p.add_argument("--auxiliary", choices=AUXILIARY, default="indegree")
            p.add_argument("--network", choices=("weak", "strong"), default="weak")
            p.add_argument("--sims", type=int)
        if name == "table":
            for flag in ("theta-ego", "theta-alter", "theta-sim", "mean", "range", "sim-mean"):
                p.add_argument(f"--{flag}", type=float)
            p.add_argument("--levels", default="1-13", help="inclusive range, e.g. 1-13")
            p.add_argument("--network", choices=("weak", "strong"), default="strong")
            p.add_argument("--covariate", default="beh")
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    args.argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    fn = COMMANDS[args.command][0]
    cp = None
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.config:
            cp = read_config(args.config)
        elif args.command in NEEDS_CONFIG and args.command != "simulate":
            raise ConfigError(f"{args.command} needs --config")
        if cp is None:
            cp = new_config()
        seed = _seed(args, cp)
        out = _output_dir(args, cp)
        try:
            code = fn(args, cp, out, seed)
        except NotConverged as exc:
            _write_manifest(out, args, cp, seed, started, {"status": "not-converged"})
            print(f"osaom: error (non-convergence): {exc}", file=sys.stderr)
            return EXIT_NOT_CONVERGED
        _write_manifest(out, args, cp, seed, started, {"status": "ok"})
        return code
    except (ConfigError, DataError, EstimationError, SimulationError,
            np.linalg.LinAlgError, ValueError, OSError) as exc:
        print(f"osaom: error ({_category(exc)}): {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
