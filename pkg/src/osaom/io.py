"""Plain-text readers and writers: matrices, delimited tables, run configs, result files."""
from __future__ import annotations

import configparser
import csv
import datetime as dt
from pathlib import Path
from typing import Iterable

import numpy as np

from .data import (N_LEVELS, ActorCovariate, ConfigError, DataError, PanelDataset,
                   aggregate_behavior, dichotomize, recode_behavior)
from .effects import DEPENDENTS, EffectSpec

MISSING = "NA"


def read_matrix(path: str | Path, square: bool = True) -> np.ndarray:
    """Whitespace-separated numbers, one row per line, ``NA`` for missing."""
    path = Path(path)
    rows = []
    width = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            tokens = line.split()
            if not tokens:
                continue
            try:
                row = [np.nan if t == MISSING else float(t) for t in tokens]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}:{lineno}: expected {width} values, got {len(row)}")
            rows.append(row)
    if not rows:
        raise DataError(f"{path}: empty matrix")
    m = np.array(rows)
    if square and m.shape[0] != m.shape[1]:
        raise DataError(f"{path}: matrix is {m.shape[0]}x{m.shape[1]}, expected square")
    return m


def format_number(v: float) -> str:
    if np.isnan(v):
        return MISSING
    if float(v).is_integer() and abs(v) < 1e15:
        return str(int(v))
    return f"{v:.10g}"


def write_matrix(path: str | Path, m: np.ndarray) -> None:
    with open(path, "w") as fh:
        for row in np.atleast_2d(m):
            fh.write(" ".join(format_number(v) for v in row) + "\n")


def _split_row(line: str, delim: str | None) -> list[str]:
    if delim is None:
        return line.split()
    return next(csv.reader([line], delimiter=delim))


def read_table(path: str | Path) -> tuple[list[str], list[list[str]]]:
    """Delimited table with a header row; comma, tab or whitespace separated."""
    path = Path(path)
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines:
        raise DataError(f"{path}: empty table")
    head = lines[0]
    delim = "," if "," in head else ("\t" if "\t" in head else None)
    header = [h.strip() for h in _split_row(head, delim)]
    rows = []
    for lineno, line in enumerate(lines[1:], 2):
        row = [c.strip() for c in _split_row(line, delim)]
        if len(row) != len(header):
            raise DataError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        rows.append(row)
    return header, rows


def write_table(path: str | Path, header: list[str], rows: Iterable[Iterable], delim: str = "\t") -> None:
    with open(path, "w") as fh:
        fh.write(delim.join(header) + "\n")
        for row in rows:
            fh.write(delim.join(format_number(v) if isinstance(v, (float, np.floating))
                                else str(v) for v in row) + "\n")


def read_actor_covariates(path: str | Path, categorical: Iterable[str] = ()) -> tuple[list[str], dict]:
    header, rows = read_table(path)
    actors = [r[0] for r in rows]
    categorical = set(categorical)
    covs = {}
    for k, name in enumerate(header[1:], 1):
        raw = [r[k] for r in rows]
        is_cat = name in categorical
        if not is_cat:
            try:
                vals = np.array([np.nan if v in (MISSING, "") else float(v) for v in raw])
            except ValueError:
                is_cat = True
        if is_cat:
            codes = {v: i for i, v in enumerate(sorted({v for v in raw if v not in (MISSING, "")}))}
            vals = np.array([codes[v] if v in codes else np.nan for v in raw], dtype=float)
        covs[name] = ActorCovariate(vals, categorical=is_cat)
    return actors, covs


def read_daily_ratings(path: str | Path) -> list[tuple[str, dt.date, float]]:
    header, rows = read_table(path)
    out = []
    for lineno, r in enumerate(rows, 2):
        try:
            out.append((r[0], dt.date.fromisoformat(r[1]), float(r[2])))
        except (ValueError, IndexError) as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
    return out


def new_config() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"),
                                   inline_comment_prefixes=("#",), interpolation=None)
    cp.optionxform = str
    return cp


def read_config(path: str | Path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    cp = new_config()
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.resolve().parent
    # a manifest records where the original config lived; relative paths resolve there
    if "run" in cp and "config_dir" in cp["run"]:
        base = Path(cp["run"]["config_dir"])
    cp["DEFAULT"]["_dir"] = str(base)
    return cp


def _path(cp: configparser.ConfigParser, value: str) -> Path:
    p = Path(value)
    return p if p.is_absolute() else Path(cp["DEFAULT"].get("_dir", ".")) / p


def _paths(cp, section, key) -> list[Path]:
    return [_path(cp, v) for v in cp[section][key].split()]


def load_panel(cp: configparser.ConfigParser) -> PanelDataset:
    """Build a panel from the ``[data]`` section of a run config."""
    if "data" not in cp:
        raise ConfigError("config has no [data] section")
    d = cp["data"]
    n_levels = d.getint("n_levels", N_LEVELS)
    for key in ("weak", "strong", "ratings", "behavior", "covariates", "daily_ratings"):
        for p in (_paths(cp, "data", key) if key in d else []):
            if not p.exists():
                raise ConfigError(f"data file {p} does not exist")
    if "ratings" in d:
        wc, sc = d.getint("weak_cutoff", 2), d.getint("strong_cutoff", 5)
        pairs = [dichotomize(read_matrix(p), wc, sc) for p in _paths(cp, "data", "ratings")]
        weak = np.array([pr.weak for pr in pairs])
        strong = np.array([pr.strong for pr in pairs])
    elif "weak" in d and "strong" in d:
        weak = np.array([read_matrix(p) for p in _paths(cp, "data", "weak")])
        strong = np.array([read_matrix(p) for p in _paths(cp, "data", "strong")])
        if weak.shape != strong.shape:
            raise DataError("weak and strong matrix lists differ in shape")
    else:
        raise ConfigError("[data] needs either 'ratings' or both 'weak' and 'strong'")
    waves, n = weak.shape[0], weak.shape[1]
    for m in range(waves):
        np.fill_diagonal(weak[m], 0.0)
        np.fill_diagonal(strong[m], 0.0)

    actors = [str(k + 1) for k in range(n)]
    actor_covs = {}
    if "covariates" in d:
        cat = d.get("categorical", "").split()
        actors, actor_covs = read_actor_covariates(_path(cp, d["covariates"]), cat)
        if len(actors) != n:
            raise DataError(f"covariate table has {len(actors)} actors, networks have {n}")
    dyadic = {}
    for item in d.get("dyadic", "").split():
        if ":" not in item:
            raise ConfigError(f"dyadic covariate {item!r} must be name:path")
        name, p = item.split(":", 1)
        w = read_matrix(_path(cp, p))
        np.fill_diagonal(w, 0.0)
        dyadic[name] = np.nan_to_num(w)

    if "behavior" in d:
        b = read_matrix(_path(cp, d["behavior"]), square=False)
        if b.shape != (n, waves):
            raise DataError(f"behavior file must be {n} rows x {waves} columns, got {b.shape}")
        behavior = b.T
    elif "daily_ratings" in d:
        ratings = read_daily_ratings(_path(cp, d["daily_ratings"]))
        dates = [dt.date.fromisoformat(s) for s in d.get("wave_dates", "").split()]
        if len(dates) != waves:
            raise ConfigError(f"wave_dates must list {waves} dates")
        window = d.getint("window_days", 30)
        behavior = np.array([recode_behavior(aggregate_behavior(ratings, actors, window, day))
                             for day in dates])
        n_levels = 13
    else:
        behavior = np.full((waves, n), np.nan)
    return PanelDataset(tuple(actors), weak, strong, behavior, n_levels, actor_covs, dyadic)


def load_effects(cp: configparser.ConfigParser) -> list[EffectSpec]:
    if "model" not in cp:
        raise ConfigError("config has no [model] section")
    effects = []
    for dep in DEPENDENTS:
        for token in cp["model"].get(dep, "").split():
            effects.append(EffectSpec.parse(token, dep))
    return effects


def write_result(path: str | Path, result, constants=None, effects=None) -> None:
    cp = new_config()
    cp["result"] = {
        "converged": str(result.converged).lower(),
        "max_ratio": format_number(result.max_ratio),
        "n_periods": str(result.n_periods),
        "seed": str(result.seed),
        "parameters": " ".join(result.param_names),
    }
    if constants is not None:
        cp["centering"] = {"mean": format_number(constants.mean),
                           "range": format_number(constants.range),
                           "sim_mean": format_number(constants.sim_mean)}
    for section, values in (("estimates", result.estimates), ("se", result.se),
                            ("t_conv", result.t_conv), ("targets", result.targets)):
        cp[section] = {name: format_number(v) for name, v in zip(result.param_names, values)}
    cp["covariance"] = {name: " ".join(format_number(v) for v in row)
                        for name, row in zip(result.param_names, result.cov)}
    cp["derivative"] = {name: " ".join(format_number(v) for v in row)
                        for name, row in zip(result.param_names, result.derivative)}
    with open(path, "w") as fh:
        cp.write(fh)


def read_result(path: str | Path):
    from .data import BehaviorConstants
    from .estimation import EstimationResult

    cp = new_config()
    if not Path(path).exists():
        raise ConfigError(f"result file {path} does not exist")
    cp.read(path)
    names = cp["result"]["parameters"].split()

    def vec(section):
        return np.array([float(cp[section][k]) if cp[section][k] != MISSING else np.nan
                         for k in names])

    def mat(section):
        return np.array([[np.nan if v == MISSING else float(v) for v in cp[section][k].split()]
                         for k in names])

    cov = mat("covariance")
    res = EstimationResult(
        param_names=names, estimates=vec("estimates"), se=vec("se"), t_conv=vec("t_conv"),
        max_ratio=float(cp["result"]["max_ratio"]), derivative=mat("derivative"),
        stat_cov=np.full_like(cov, np.nan), cov=cov, targets=vec("targets"),
        converged=cp["result"]["converged"] == "true",
        n_periods=int(cp["result"]["n_periods"]), seed=int(cp["result"]["seed"]))
    constants = None
    if "centering" in cp:
        c = cp["centering"]
        constants = BehaviorConstants(float(c["mean"]), float(c["range"]), float(c["sim_mean"]))
    return res, constants
