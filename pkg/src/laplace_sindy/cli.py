"""Experiment runner: config files, single runs, suites and frequency scans."""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import os
import shlex
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, IdentificationError, StageFailed
from .evaluation import (
    PERFECT_FIT,
    laplace_residual,
    log_rmse,
    normalize_to_leading,
    rank,
    rank_systems,
    replace_active,
    resimulate_system,
    score_by_laplace_residual,
    score_by_resimulation,
)
from .laplace import FrequencyGrid, TransformOptions, assemble_library, assemble_pde_library
from .library import LibrarySpec, build_time_library, special
from .regress import RegressionOptions, fit_all_pivots
from .sim import (
    CHANNEL_NAMES,
    DEFAULT_IC,
    NoiseSpec,
    SystemSpec,
    TimeGrid,
    add_noise,
    simulate_canonical,
    solve_pde,
)

EVAL_MODES = ("resim", "laplace_residual")

_SECTIONS = {
    "experiment": {"name", "seed", "output_dir", "eval", "resim_substeps", "sim_substeps"},
    "system": {"kind", "ic"},
    "params": None,
    "grid": {"t_start", "t_stop", "m", "x_start", "x_stop", "n"},
    "noise": {"level"},
    "library": {
        "k", "n", "specials", "include_constant", "include_time", "derivative_products",
        "exclude", "names", "init_points", "init_degree",
    },
    "frequencies": {"s_start", "s_step", "L"},
    "regression": {"threshold", "max_iters", "rcond", "rank_policy", "pivots"},
    "transform": {f.name for f in fields(TransformOptions)} - {"pde_axis"},
}


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one run; the seed drives the noise."""

    name: str
    system: SystemSpec
    tgrid: TimeGrid
    noise: NoiseSpec
    library: LibrarySpec
    s_start: float
    s_step: float
    L: int = 20
    regression: RegressionOptions = field(default_factory=RegressionOptions)
    transform: TransformOptions = field(default_factory=TransformOptions)
    eval: str = "resim"
    output_dir: Path = Path("runs")
    seed: int = 0
    xgrid: np.ndarray | None = None
    pivots: tuple = ()
    init_points: int | None = None
    init_degree: int | None = None
    resim_substeps: int = 4
    sim_substeps: int = 20

    def __post_init__(self):
        if self.eval not in EVAL_MODES:
            raise ConfigError(f"eval must be one of {EVAL_MODES}")
        if self.system.is_pde and self.xgrid is None:
            raise ConfigError("PDE systems need a spatial grid")
        if self.s_step <= 0 or self.s_start <= 0:
            raise ConfigError("s_start and s_step must be positive")
        if self.L < 1:
            raise ConfigError("L must be >= 1")

    @property
    def freq(self) -> FrequencyGrid:
        return FrequencyGrid.uniform(self.s_start, self.s_step, self.L)

    @property
    def is_system(self) -> bool:
        return not self.system.is_pde and self.library.d > 1


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    selected: list
    candidates: list
    summary: dict
    coefficients: list
    log_rmse: float
    elapsed: float
    files: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Config parsing


def _floats(text):
    return tuple(float(v) for v in _items(text))


def _items(text):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _optional_int(text):
    return None if text.strip().lower() in ("", "none") else int(text)


def _specials(text):
    out = []
    for item in _items(text):
        kind, _, param = item.partition(":")
        if not param:
            raise ConfigError(f"special {item!r} must read kind:param")
        out.append(special(kind.strip(), float(param)))
    return tuple(out)


def _coerce_transform(key, text):
    default = getattr(TransformOptions(), key)
    if key in ("snapshot_stride", "boundary_points", "boundary_degree"):
        return _optional_int(text)
    if isinstance(default, bool):
        return _bool(text)
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text.strip()


def _check_keys(parser):
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        allowed = _SECTIONS[section]
        if allowed is None:
            continue
        for key in parser[section]:
            if key not in allowed:
                raise ConfigError(f"unknown key {key!r} in [{section}]")


def parse_config(text: str, base: Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Build a config from INI text; ``overrides`` maps ``section.key`` to a string."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    for dotted, value in (overrides or {}).items():
        section, _, key = dotted.partition(".")
        if not key:
            raise ConfigError(f"override {dotted!r} must read section.key")
        if not parser.has_section(section):
            parser.add_section(section)
        parser[section][key] = str(value)
    _check_keys(parser)
    try:
        return _build_config(parser, base or Path("."))
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError, IdentificationError) as exc:
        raise ConfigError(f"{type(exc).__name__}: {exc}") from None


def _build_config(parser, base: Path) -> ExperimentConfig:
    def get(section, key, default=None):
        if parser.has_option(section, key):
            return parser[section][key]
        if default is None:
            raise ConfigError(f"missing [{section}] {key}")
        return default

    exp = parser["experiment"] if parser.has_section("experiment") else {}
    kind = get("system", "kind")
    params = {k: float(v) for k, v in parser["params"].items()} if parser.has_section("params") else {}
    ic = _floats(parser["system"]["ic"]) if parser.has_option("system", "ic") else DEFAULT_IC.get(kind)
    system = SystemSpec(kind, params, ic)
    seed = int(exp.get("seed", "0"))
    tgrid = TimeGrid.uniform(float(get("grid", "t_start")), float(get("grid", "t_stop")), int(get("grid", "m")))
    xgrid = None
    if parser.has_option("grid", "n"):
        xgrid = np.linspace(float(get("grid", "x_start")), float(get("grid", "x_stop")), int(get("grid", "n")))
    noise = NoiseSpec(float(get("noise", "level", "0")), seed)

    lib = parser["library"] if parser.has_section("library") else {}
    names = _items(lib["names"]) if "names" in lib else CHANNEL_NAMES.get(kind, ())
    d = len(ic) if system.kind in CHANNEL_NAMES else 1
    library = LibrarySpec(
        d=d,
        k=int(lib.get("k", "1")),
        n=int(lib.get("n", "1")),
        specials=_specials(lib.get("specials", "")),
        include_constant=_bool(lib.get("include_constant", "true")),
        include_time=_bool(lib.get("include_time", "true")),
        derivative_products=_bool(lib.get("derivative_products", "true")),
        exclude=_items(lib.get("exclude", "")),
        names=names,
        pde=system.is_pde,
    )

    reg = parser["regression"] if parser.has_section("regression") else {}
    regression = RegressionOptions(
        threshold=float(reg.get("threshold", "0.01")),
        max_iters=int(reg.get("max_iters", "20")),
        rcond=float(reg.get("rcond", "1e-13")),
        rank_policy=reg.get("rank_policy", "raise"),
    )
    tr = parser["transform"] if parser.has_section("transform") else {}
    topts = {k: _coerce_transform(k, v) for k, v in tr.items()}
    topts["pde_axis"] = "space" if system.is_pde else "time"
    transform = TransformOptions(**topts)

    out = Path(exp.get("output_dir", f"runs/{exp.get('name', kind)}"))
    return ExperimentConfig(
        name=exp.get("name", kind),
        system=system,
        tgrid=tgrid,
        noise=noise,
        library=library,
        s_start=float(get("frequencies", "s_start")),
        s_step=float(get("frequencies", "s_step")),
        L=int(get("frequencies", "L", "20")),
        regression=regression,
        transform=transform,
        eval=exp.get("eval", "resim"),
        output_dir=out if out.is_absolute() else base / out,
        seed=seed,
        xgrid=xgrid,
        pivots=_items(reg.get("pivots", "")),
        init_points=_optional_int(lib.get("init_points", "none")),
        init_degree=_optional_int(lib.get("init_degree", "none")),
        resim_substeps=int(exp.get("resim_substeps", "4")),
        sim_substeps=int(exp.get("sim_substeps", "20")),
    )


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config(text, Path.cwd(), overrides)


# ---------------------------------------------------------------------------
# Pipeline


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, (IdentificationError, ValueError, ArithmeticError)):
            if isinstance(exc, StageFailed):
                return False
            raise StageFailed(self.name, exc) from exc
        return False


@dataclass
class _Outcome:
    selected: list
    candidates: list
    coefficients: list
    log_rmse: float
    prediction: list
    prediction_header: list
    best_aicc: float
    p: int


def _measure(config: ExperimentConfig):
    with _Stage("simulate"):
        if config.system.is_pde:
            clean = solve_pde(config.system, config.tgrid, config.xgrid)
        else:
            clean = simulate_canonical(config.system, config.tgrid, substeps=config.sim_substeps)
        return add_noise(clean, config.noise)


def _pivot_indices(lib, names):
    if not names:
        return None
    rendered = lib.rendered()
    try:
        return [rendered.index(n) for n in names]
    except ValueError:
        raise ConfigError(f"pivots {names} not all in library {rendered}") from None


def _pipeline(config: ExperimentConfig, data=None, freq=None) -> _Outcome:
    data = _measure(config) if data is None else data
    freq = config.freq if freq is None else freq
    with _Stage("library"):
        if config.system.is_pde:
            lib = assemble_pde_library(data, config.library, freq, config.transform)
            tlib = None
        else:
            tlib = build_time_library(data, config.library, init_points=config.init_points, init_degree=config.init_degree)
            lib = assemble_library(tlib, freq, config.transform)
    with _Stage("regression"):
        fits = fit_all_pivots(lib, config.regression, _pivot_indices(lib, config.pivots))
        if not fits.models:
            raise StageFailed("regression", IdentificationError(f"every pivot failed: {fits.failures}"))
    with _Stage("evaluation"):
        if config.is_system:
            return _evaluate_system(config, data, lib, fits.models)
        return _evaluate_scalar(config, data, lib, tlib, fits.models)


def _evaluate_scalar(config, data, lib, tlib, models) -> _Outcome:
    time_domain = config.eval == "resim" and not config.system.is_pde
    if time_domain:
        truth = data.states[0]
        scored = [score_by_resimulation(m, truth, tlib.initial_derivatives[0], data.grid, config.resim_substeps) for m in models]
    else:
        scored = [score_by_laplace_residual(m, lib.theta) for m in models]
    ordered = rank(scored)
    best = ordered[0]
    shown = normalize_to_leading(best.model)
    candidates = [
        {
            "rank": i + 1,
            "pivot": lib.rendered()[sm.pivot],
            "status": sm.status,
            "p": sm.p,
            "aicc": sm.aicc,
            "log_rmse": sm.log_rmse,
            "equation": normalize_to_leading(sm.model).render(),
        }
        for i, sm in enumerate(ordered)
    ]
    if time_domain and best.prediction is not None:
        header = ["t", "u_measured", "u_predicted"]
        rows = [[t, a, b] for t, a, b in zip(data.t, data.states[0], best.prediction)]
    else:
        header = ["row", "s", "residual"]
        r = laplace_residual(best.model, lib.theta)
        rows = [[i, lib.freq.s[i % lib.freq.L], v] for i, v in enumerate(r)]
    return _Outcome([shown.render()], candidates, [shown.coefficients()], best.log_rmse, rows, header, best.aicc, best.p)


def _evaluate_system(config, data, lib, models) -> _Outcome:
    ranked = rank_systems(models, lib.theta, config.library.d)
    best = ranked[0]
    candidates = [
        {
            "rank": i + 1,
            "pivot": "+".join(lib.rendered()[m.pivot] for m in choice.members),
            "status": "ok",
            "p": choice.p,
            "aicc": choice.aicc,
            "log_rmse": math.nan,
            "equation": " ; ".join(choice.system.render()),
        }
        for i, choice in enumerate(ranked)
    ]
    eqs = best.system.as_models()
    coefficients = [replace_active(m).coefficients() for m in eqs]
    names = list(best.system.names)
    if config.eval == "resim":
        pred = resimulate_system(best.system, data.states[:, 0], data.grid, config.resim_substeps)
        with np.errstate(over="ignore"):
            err = log_rmse(data.states, pred)
        header = ["t"] + [f"{n}_measured" for n in names] + [f"{n}_predicted" for n in names]
        rows = [[t, *data.states[:, j], *pred[:, j]] for j, t in enumerate(data.t)]
    else:
        r = np.concatenate([laplace_residual(replace_active(m), lib.theta) for m in eqs])
        err = 0.5 * math.log(float(r @ r) / r.size) if r.any() else PERFECT_FIT
        header = ["row", "residual"]
        rows = [[i, v] for i, v in enumerate(r)]
    candidates[0]["log_rmse"] = err
    return _Outcome(best.system.render(), candidates, coefficients, err, rows, header, best.aicc, best.p)


# ---------------------------------------------------------------------------
# Artifacts


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _summary(config: ExperimentConfig, outcome: _Outcome) -> dict:
    out = {
        "experiment": config.name,
        "system": config.system.kind,
        "noise": config.noise.level,
        "seed": config.seed,
        "scheme": config.transform.scheme,
        "s_start": config.s_start,
        "s_step": config.s_step,
        "L": config.L,
        "threshold": config.regression.threshold,
        "eval": config.eval,
        "status": "ok",
        "p": outcome.p,
        "aicc": outcome.best_aicc,
        "log_rmse": outcome.log_rmse,
        "candidates": len(outcome.candidates),
    }
    for j, eq in enumerate(outcome.selected):
        out[f"equation_{j}"] = eq
    return out


def run_experiment(config: ExperimentConfig, write: bool = True) -> ExperimentReport:
    """Simulate, build the Laplace library, regress every pivot and select a model.

    Writes ``candidates.csv``, ``selected.txt``, ``prediction.csv`` and
    ``summary.txt`` under ``config.output_dir`` unless ``write`` is false.
    Failures raise :class:`StageFailed` naming the stage.
    """
    start = time.perf_counter()
    outcome = _pipeline(config)
    elapsed = time.perf_counter() - start
    summary = _summary(config, outcome)
    report = ExperimentReport(config, outcome.selected, outcome.candidates, summary, outcome.coefficients, outcome.log_rmse, elapsed)
    if write:
        out = Path(config.output_dir)
        cols = ["rank", "pivot", "status", "p", "aicc", "log_rmse", "equation"]
        files = {
            "candidates": (out / "candidates.csv", _csv_text(cols, [[c[k] for k in cols] for c in outcome.candidates])),
            "selected": (out / "selected.txt", "\n".join(outcome.selected) + "\n"),
            "prediction": (out / "prediction.csv", _csv_text(outcome.prediction_header, outcome.prediction)),
            "summary": (out / "summary.txt", "".join(f"{k}: {_fmt(v)}\n" for k, v in summary.items())),
        }
        for key, (path, text) in files.items():
            _atomic_write(path, text)
            report.files[key] = path
    return report


# ---------------------------------------------------------------------------
# Suites


@dataclass(frozen=True)
class ManifestEntry:
    path: Path
    overrides: dict


def read_manifest(path) -> list:
    """One config per line, optionally followed by ``section.key=value`` overrides.

    Paths are relative to the manifest.  Blank lines and ``#`` comments are skipped.
    """
    path = Path(path)
    entries = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        first, *rest = shlex.split(line)
        overrides = {}
        for item in rest:
            key, sep, value = item.partition("=")
            if not sep:
                raise ConfigError(f"manifest override {item!r} must read section.key=value")
            overrides[key] = value
        cfg = Path(first)
        entries.append(ManifestEntry(cfg if cfg.is_absolute() else path.parent / cfg, overrides))
    if not entries:
        raise ConfigError(f"manifest {path} lists no experiments")
    return entries


SUITE_COLUMNS = ["experiment", "noise", "seed", "status", "p", "aicc", "log_rmse", "equation", "error"]


def _suite_row(entry: ManifestEntry, out_root: Path | None, seed: int | None) -> dict:
    row = {"experiment": entry.path.stem, "noise": "", "seed": "", "status": "failed", "p": "", "aicc": "", "log_rmse": "", "equation": "", "error": ""}
    try:
        config = load_config(entry.path, entry.overrides)
        if seed is not None:
            config = replace(config, seed=seed, noise=NoiseSpec(config.noise.level, seed))
        tag = f"{config.name}_n{config.noise.level:g}_s{config.seed}"
        if out_root is not None:
            config = replace(config, output_dir=out_root / tag)
        row.update(experiment=config.name, noise=config.noise.level, seed=config.seed)
        report = run_experiment(config)
    except IdentificationError as exc:
        row["error"] = str(exc)
        return row
    row.update(
        status="ok",
        p=report.summary["p"],
        aicc=report.summary["aicc"],
        log_rmse=report.log_rmse,
        equation=" ; ".join(report.selected),
    )
    return row


def run_suite(manifest, out: Path | None = None, seed: int | None = None, jobs: int = 1) -> list:
    """Run every manifest entry, recording failures instead of stopping.

    Returns the aggregate rows (keyed by experiment and noise level) and
    writes ``suite.csv`` under ``out`` when given.  Row order follows the
    manifest, so the CSV is identical across reruns.
    """
    entries = read_manifest(manifest)
    out = Path(out) if out is not None else None
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_suite_row, entries, [out] * len(entries), [seed] * len(entries)))
    else:
        rows = [_suite_row(e, out, seed) for e in entries]
    if out is not None:
        _atomic_write(out / "suite.csv", _csv_text(SUITE_COLUMNS, [[r[c] for c in SUITE_COLUMNS] for r in rows]))
    return rows


# ---------------------------------------------------------------------------
# Frequency scans


def parse_range(text: str) -> np.ndarray:
    """``A:B:N`` to ``N`` evenly spaced values from ``A`` to ``B`` inclusive."""
    try:
        a, b, n = text.split(":")
        a, b, n = float(a), float(b), int(n)
    except ValueError:
        raise ConfigError(f"range {text!r} must read start:stop:count") from None
    if n < 1:
        raise ConfigError("range count must be >= 1")
    return np.linspace(a, b, n)


def scan_frequencies(config: ExperimentConfig, s_starts, s_steps, path=None) -> np.ndarray:
    """Log RMSE of the selected model over a grid of ``(s_start, s_step)``.

    Cells whose run fails hold NaN.  Returns an array indexed
    ``[i_step, i_start]`` and, with ``path``, writes it as long-format CSV.
    """
    s_starts = np.atleast_1d(np.asarray(s_starts, dtype=float))
    s_steps = np.atleast_1d(np.asarray(s_steps, dtype=float))
    if np.any(s_starts <= 0) or np.any(s_steps <= 0):
        raise ConfigError("scan ranges must be positive")
    data = _measure(config)
    grid = np.full((s_steps.size, s_starts.size), np.nan)
    for i, ds in enumerate(s_steps):
        for j, s0 in enumerate(s_starts):
            try:
                grid[i, j] = _pipeline(config, data, FrequencyGrid.uniform(s0, ds, config.L)).log_rmse
            except IdentificationError:
                pass
    if path is not None:
        rows = [[s0, ds, grid[i, j]] for i, ds in enumerate(s_steps) for j, s0 in enumerate(s_starts)]
        _atomic_write(Path(path), _csv_text(["s_start", "s_step", "log_rmse"], rows))
    return grid


# ---------------------------------------------------------------------------
# Command line


def _apply_flags(config: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        config = replace(config, seed=args.seed, noise=NoiseSpec(config.noise.level, args.seed))
    if args.out is not None:
        config = replace(config, output_dir=Path(args.out))
    if args.threshold is not None:
        config = replace(config, regression=replace(config.regression, threshold=args.threshold))
    if args.scheme is not None:
        config = replace(config, transform=replace(config.transform, scheme=args.scheme))
    return config


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="laplace-sindy", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("--threshold", type=float)
    common.add_argument("--scheme", choices=("as_written", "true_trapezoid", "exponential"))
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", parents=[common], help="run one experiment config")
    p.add_argument("config")
    p = sub.add_parser("suite", parents=[common], help="run every config listed in a manifest")
    p.add_argument("manifest")
    p.add_argument("--jobs", type=int, default=1)
    p = sub.add_parser("scan", parents=[common], help="log RMSE heat map over frequency grids")
    p.add_argument("config")
    p.add_argument("--s-start", required=True, help="A:B:N")
    p.add_argument("--s-step", required=True, help="C:D:N")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            report = run_experiment(_apply_flags(load_config(args.config), args))
            for line in report.selected:
                print(line)
            print(f"log_rmse: {report.log_rmse:.4f}  outputs: {report.config.output_dir}")
        elif args.command == "suite":
            if args.scheme or args.threshold is not None:
                raise ConfigError("--scheme and --threshold apply to run and scan only")
            out = Path(args.out) if args.out else Path("runs/suite")
            rows = run_suite(args.manifest, out, args.seed, args.jobs)
            failed = [r for r in rows if r["status"] != "ok"]
            for r in rows:
                print(f"{r['experiment']:<28} noise={r['noise']!s:<5} {r['status']:<7} {r['equation'] or r['error']}")
            print(f"{len(rows) - len(failed)}/{len(rows)} succeeded; table in {out / 'suite.csv'}")
            return 1 if failed else 0
        else:
            config = _apply_flags(load_config(args.config), args)
            path = Path(args.out or config.output_dir) / "scan.csv"
            grid = scan_frequencies(config, parse_range(args.s_start), parse_range(args.s_step), path)
            print(f"{np.isfinite(grid).sum()}/{grid.size} cells succeeded; heat map in {path}")
    except IdentificationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
