"""Command-line interface.

Every command resolves its configuration as built-in defaults, overridden by
the ``--config`` file (TOML or JSON), overridden by command-line flags, and
writes the result to ``manifest.json`` in the output directory. Passing that
manifest back with ``--config`` repeats the run exactly.

Exit codes: 0 success, 2 input or configuration error, 3 convergence
diagnostics flagged under ``--strict``.
"""

from __future__ import annotations

import argparse
import copy
import datetime as _dt
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, diagnostics, gp, inference, io, plot, studygen, summary
from .domain import DataError, IndividualRecord

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("poolprev")

EXIT_OK, EXIT_INPUT, EXIT_STRICT = 0, 2, 3
SYNTHETIC_ORIGIN = _dt.date(2000, 1, 1)

SAMPLER_DEFAULTS = {
    "chains": 4,
    "warmup": 1000,
    "draws": 1000,
    "thin": 1,
    "jitter": None,
    "ess_steps": 2,
    "mh_steps": 1,
    "target_accept": 0.3,
    "init_spread": 0.1,
}
PRIOR_DEFAULTS = {"mu_sd": 2.0, "sigma_sd": 1.0, "ell_tail_prob": 0.01, "ell_shape": None, "ell_rate": None}
DATA_DEFAULTS = {"layout": None, "interval_span": None, "window_days": 10}
PREDICT_DEFAULTS = {"grid_points": 200, "max_draws": summary.DEFAULT_MAX_DRAWS}

DEFAULTS = {
    "simulate": {"study": {"preset": "study1", "n_per_time": None, "m": None}},
    "pool": {"data": dict(DATA_DEFAULTS, path=None), "pool": {"m_star": 3, "layout": "efficient"}},
    "fit": {
        "data": dict(DATA_DEFAULTS, path=None),
        "prior": PRIOR_DEFAULTS,
        "sampler": SAMPLER_DEFAULTS,
        "predict": PREDICT_DEFAULTS,
    },
    "compare": {
        "data": dict(DATA_DEFAULTS, paths={}, truth=None),
        "prior": PRIOR_DEFAULTS,
        "sampler": SAMPLER_DEFAULTS,
    },
    "resample-study": {
        "data": dict(DATA_DEFAULTS, path=None),
        "resample": {"m_star": 3, "replicates": 25, "skip_individual": False},
        "prior": PRIOR_DEFAULTS,
        "sampler": SAMPLER_DEFAULTS,
    },
    "summarize": {
        "data": dict(DATA_DEFAULTS, path=None, draws=None),
        "predict": PREDICT_DEFAULTS,
    },
}


class CliError(Exception):
    """Input or configuration problem; reported and mapped to exit code 2."""


# -- configuration -----------------------------------------------------------------


def load_config_file(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as err:
        raise CliError(f"cannot read config {path}: {err.strerror}") from err
    try:
        if path.suffix.lower() == ".json":
            return json.loads(raw.decode("utf-8"))
        return tomllib.loads(raw.decode("utf-8"))
    except (json.JSONDecodeError, tomllib.TOMLDecodeError, UnicodeDecodeError) as err:
        raise CliError(f"invalid config {path}: {err}") from err


def _merge(base, override, where="config"):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in out:
            raise CliError(f"unknown {where} key {key!r}")
        if isinstance(out[key], dict) and key != "paths":
            if not isinstance(val, dict):
                raise CliError(f"{where} key {key!r} must be a table")
            out[key] = _merge(out[key], val, f"{where}.{key}")
        else:
            out[key] = copy.deepcopy(val)
    return out


def resolve_config(command, args):
    """defaults < config file < flags."""
    cfg = {"command": command, "seed": None, **copy.deepcopy(DEFAULTS[command])}
    if args.config:
        file_cfg = load_config_file(args.config)
        file_cmd = file_cfg.pop("command", command)
        file_cfg.pop("version", None)
        if file_cmd != command:
            raise CliError(f"config was written for {file_cmd!r}, not {command!r}")
        cfg = _merge(cfg, file_cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    for (section, key), val in _flag_overrides(command, args).items():
        if val is not None:
            cfg[section][key] = val
    if cfg["seed"] is None:
        raise CliError("a seed is required: pass --seed or set seed in the config")
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise CliError(f"seed must be a non-negative integer, got {cfg['seed']!r}")
    return cfg


def _flag_overrides(command, args):
    g = lambda name: getattr(args, name, None)
    out = {}
    if "data" in DEFAULTS[command]:
        out[("data", "interval_span")] = g("interval_span")
        out[("data", "window_days")] = g("window_days")
        out[("data", "layout")] = g("layout")
        if command != "compare" and g("data"):
            out[("data", "path")] = str(Path(g("data")).resolve())
    if command == "simulate":
        out[("study", "preset")] = g("preset")
        out[("study", "n_per_time")] = g("n_per_time")
        out[("study", "m")] = g("m")
    if command == "pool":
        out[("pool", "m_star")] = g("m_star")
        out[("pool", "layout")] = g("pool_layout")
    if command == "compare":
        if g("data"):
            out[("data", "paths")] = dict(_parse_labelled(g("data")))
        if g("truth"):
            out[("data", "truth")] = str(Path(g("truth")).resolve())
    if command == "resample-study":
        out[("resample", "m_star")] = g("m_star")
        out[("resample", "replicates")] = g("replicates")
        out[("resample", "skip_individual")] = True if g("skip_individual") else None
    if command == "summarize" and g("draws"):
        out[("data", "draws")] = str(Path(g("draws")).resolve())
    if "sampler" in DEFAULTS[command]:
        for key in ("chains", "warmup", "draws", "thin"):
            out[("sampler", key)] = g(key)
    if "predict" in DEFAULTS[command]:
        out[("predict", "grid_points")] = g("grid_points")
    return out


def _parse_labelled(items):
    out = []
    for item in items:
        label, sep, path = item.partition("=")
        if not sep or not label or not path:
            raise CliError(f"--data expects LABEL=PATH, got {item!r}")
        out.append((label, str(Path(path).resolve())))
    return out


def sampler_config(cfg, seed, threads):
    s = cfg["sampler"]
    try:
        return inference.SamplerConfig(seed=seed, threads=threads, **s)
    except (TypeError, ValueError) as err:
        raise CliError(f"invalid sampler config: {err}") from err


def prior_config(cfg):
    try:
        return gp.PriorConfig(**cfg["prior"])
    except TypeError as err:
        raise CliError(f"invalid prior config: {err}") from err


def write_manifest(outdir, cfg):
    io.write_json(outdir / "manifest.json", dict(cfg, version=__version__))


def _outdir(path):
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as err:
        raise CliError(f"output directory {out} is not writable: {err.strerror}") from err
    return out


# -- data loading ---------------------------------------------------------------------


def load_records_as_results(path, window_days, interval_span=None):
    records = io.read_records(path)
    if not records:
        raise CliError(f"{path}: no records")
    results, origin = studygen.aggregate_by_window(records, window_days, interval_span)
    return results, origin


def load_dataset(data_cfg, path=None):
    """Observations for fitting from any supported file; records are aggregated."""
    path = path or data_cfg.get("path")
    if not path:
        raise CliError("no data file given (use --data)")
    layout = io.detect_layout(path)
    expected = data_cfg.get("layout")
    if expected is not None:
        found = "individual" if layout in ("records", "counts") else layout
        if expected != found:
            raise CliError(f"{path}: config layout {expected!r} does not match the file's {found!r} header")
    span = data_cfg.get("interval_span")
    if layout == "records":
        results, _ = load_records_as_results(path, data_cfg["window_days"], span)
        data = results.counts()
    else:
        data = io.read_observations(path, span)
    report = inference.validate_dataset(data)
    if not report.ok:
        raise CliError(f"{path}: invalid data:\n  " + "\n  ".join(report.messages))
    return data


def fit_dataset(data, cfg, seed, threads):
    config = sampler_config(cfg, seed, threads)
    if config.chains < 2 or config.draws < diagnostics.MIN_DRAWS:
        raise CliError(f"need at least 2 chains and {diagnostics.MIN_DRAWS} draws for diagnostics")
    draws = inference.run_mcmc(data, config, prior_config(cfg))
    return draws, diagnostics.diagnose(draws)


def _report_flags(diag, label, strict):
    if diag.flagged:
        shown = ", ".join(diag.flagged[:8]) + (" ..." if len(diag.flagged) > 8 else "")
        log.warning("%s: convergence diagnostics flagged %d parameter(s): %s", label, len(diag.flagged), shown)
        return strict
    return False


# -- commands -------------------------------------------------------------------------


def cmd_simulate(cfg, outdir, threads, strict):
    st = cfg["study"]
    try:
        study = studygen.preset(st["preset"], st["n_per_time"], st["m"])
    except ValueError as err:
        raise CliError(str(err)) from err
    seed = cfg["seed"]
    truth, individuals, pooled, plan = studygen.generate_synthetic(study, seed)
    sub = studygen.matched_subsample(individuals, [study.m], studygen.derive_seed(seed, 2))
    records = []
    for i, (t, r) in enumerate(zip(study.grid.times, individuals.results)):
        date = SYNTHETIC_ORIGIN + _dt.timedelta(days=int(t))
        records += [IndividualRecord("site1", date, int(v), f"t{i}-{j}") for j, v in enumerate(r)]
    io.write_truth(outdir / "truth.csv", truth)
    io.write_records(outdir / "individual.csv", records)
    io.write_observations(outdir / "counts.csv", individuals.counts())
    io.write_observations(outdir / "pooled.csv", pooled)
    io.write_observations(outdir / "subsampled.csv", sub.counts())
    io.write_json(outdir / "plan.json", plan.to_json())
    cfg["study"]["n_per_time"], cfg["study"]["m"] = study.n_per_time, study.m
    print(f"simulated {study.name}: {len(study.grid)} times, {study.n_per_time} individuals each, m={study.m}")
    return EXIT_OK


def cmd_pool(cfg, outdir, threads, strict):
    d, p = cfg["data"], cfg["pool"]
    if not d["path"]:
        raise CliError("no data file given (use --data)")
    results, _ = load_records_as_results(d["path"], d["window_days"], d["interval_span"])
    try:
        plan, pooled = studygen.make_pools(results, int(p["m_star"]), cfg["seed"], p["layout"])
    except ValueError as err:
        raise CliError(str(err)) from err
    io.write_observations(outdir / "pooled.csv", pooled)
    io.write_json(outdir / "plan.json", plan.to_json())
    print(f"pooled {int(pooled.n_per_time.sum())} individuals into {int(pooled.tests_per_time().sum())} pools")
    return EXIT_OK


def cmd_fit(cfg, outdir, threads, strict):
    data = load_dataset(cfg["data"])
    draws, diag = fit_dataset(data, cfg, cfg["seed"], threads)
    pred = summary.default_prediction_grid(data.grid, cfg["predict"]["grid_points"])
    curve = summary.summarize_curve(draws, pred, studygen.derive_seed(cfg["seed"], 1), cfg["predict"]["max_draws"])
    draws.to_csv(outdir / "draws.csv")
    io.write_summary(outdir / "summary.csv", curve)
    io.write_summary(outdir / "summary_obs.csv", summary.observed_summary(draws))
    io.write_json(outdir / "diagnostics.json", diag.to_json())
    plot.write_svg(outdir / "curve.svg", plot.curve_svg(curve, data.grid.times))
    for name in ("ell", "sigma", "mu"):
        mean, lo, hi = draws.interval(name)
        print(f"{name:>5}: mean {mean:.4g}  95% CI ({lo:.4g}, {hi:.4g})")
    return EXIT_STRICT if _report_flags(diag, "fit", strict) else EXIT_OK


def _compare_rows(results):
    rows = []
    for name in ("ell", "sigma", "mu"):
        for label, (draws, _) in results.items():
            mean, lo, hi = draws.interval(name)
            rows.append((name, label, mean, lo, hi))
    return rows


def cmd_compare(cfg, outdir, threads, strict):
    paths = cfg["data"]["paths"]
    if not paths:
        raise CliError("compare needs at least one --data LABEL=PATH")
    truth = None
    if cfg["data"]["truth"]:
        truth = io.read_truth(cfg["data"]["truth"])
    results, failed = {}, False
    for i, (label, path) in enumerate(paths.items()):
        data = load_dataset(cfg["data"], path)
        draws, diag = fit_dataset(data, cfg, studygen.derive_seed(cfg["seed"], i), threads)
        failed |= _report_flags(diag, label, strict)
        results[label] = (draws, data)
    rows = _compare_rows(results)
    with open(outdir / "compare.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write("parameter,strategy,mean,lo95,hi95\n")
        for name, label, mean, lo, hi in rows:
            fh.write(f"{name},{label},{mean!r},{lo!r},{hi!r}\n")
    labels = list(paths)
    width = max(26, *(len(lb) + 2 for lb in labels))
    print("param " + "".join(f"  {lb:>{width}}" for lb in labels))
    for name in ("ell", "sigma", "mu"):
        cells = [f"{m:.3g} ({lo:.3g}, {hi:.3g})" for n, _, m, lo, hi in rows if n == name]
        print(f"{name:<6}" + "".join(f"  {c:>{width}}" for c in cells))
    if truth is not None:
        t_true, _, p_true = truth
        with open(outdir / "mae.csv", "w", newline="", encoding="utf-8") as fh:
            fh.write("strategy,mae\n")
            for i, (label, (draws, data)) in enumerate(results.items()):
                curve = summary.summarize_curve(draws, t_true, studygen.derive_seed(cfg["seed"], i, 1))
                mae = summary.curve_mae(curve, p_true)
                fh.write(f"{label},{mae!r}\n")
                print(f"MAE vs truth [{label}]: {mae:.5f}")
    return EXIT_STRICT if failed else EXIT_OK


def cmd_resample_study(cfg, outdir, threads, strict):
    d, r = cfg["data"], cfg["resample"]
    if not d["path"]:
        raise CliError("no data file given (use --data)")
    results, _ = load_records_as_results(d["path"], d["window_days"], d["interval_span"])
    seed = cfg["seed"]
    try:
        reps = studygen.resample_study(results, int(r["m_star"]), int(r["replicates"]), seed)
    except ValueError as err:
        raise CliError(str(err)) from err
    times = results.grid.times
    failed = False
    full_draws, diag = fit_dataset(results.counts(), cfg, studygen.derive_seed(seed, 99), threads)
    failed |= _report_flags(diag, "full data", strict)
    band = summary.observed_summary(full_draws)
    arms = {"pooled": [], "individual": []}
    for i, (pooled, sub) in enumerate(reps):
        todo = [("pooled", pooled)] + ([] if r["skip_individual"] else [("individual", sub.counts())])
        for j, (arm, data) in enumerate(todo):
            draws, diag = fit_dataset(data, cfg, studygen.derive_seed(seed, i, j), threads)
            failed |= _report_flags(diag, f"replicate {i} {arm}", strict)
            arms[arm].append(summary.observed_summary(draws).median)
    with open(outdir / "medians.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write("arm,replicate,time,median\n")
        for arm, curves in arms.items():
            for i, curve in enumerate(curves):
                for t, v in zip(times, curve):
                    fh.write(f"{arm},{i},{float(t)!r},{float(v)!r}\n")
    sd = {arm: np.std(c, axis=0, ddof=1) if len(c) > 1 else np.zeros(times.size) for arm, c in arms.items() if c}
    with open(outdir / "sd.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write("time," + ",".join(f"sd_{a}" for a in sd) + "\n")
        for k, t in enumerate(times):
            fh.write(f"{float(t)!r}," + ",".join(repr(float(v[k])) for v in sd.values()) + "\n")
    for arm, curves in arms.items():
        if curves:
            svg = plot.overlay_svg(times, curves, band, times, title=f"{arm} replicate medians (m*={r['m_star']})")
            plot.write_svg(outdir / f"overlay_{arm}.svg", svg)
    if "pooled" in sd and "individual" in sd:
        frac = float(np.mean(sd["pooled"] <= sd["individual"]))
        print(f"pooled SD <= individual SD at {100 * frac:.0f}% of times")
    return EXIT_STRICT if failed else EXIT_OK


def cmd_summarize(cfg, outdir, threads, strict):
    d = cfg["data"]
    if not d["draws"]:
        raise CliError("summarize needs --draws")
    data = load_dataset(d)
    try:
        draws = inference.PosteriorDraws.from_csv(d["draws"], data.grid.times)
    except (OSError, ValueError) as err:
        raise CliError(str(err)) from err
    pred = summary.default_prediction_grid(data.grid, cfg["predict"]["grid_points"])
    curve = summary.summarize_curve(draws, pred, studygen.derive_seed(cfg["seed"], 1), cfg["predict"]["max_draws"])
    io.write_summary(outdir / "summary.csv", curve)
    io.write_summary(outdir / "summary_obs.csv", summary.observed_summary(draws))
    plot.write_svg(outdir / "curve.svg", plot.curve_svg(curve, data.grid.times))
    failed = False
    if draws.chains >= 2 and draws.n_draws >= diagnostics.MIN_DRAWS:
        diag = diagnostics.diagnose(draws)
        io.write_json(outdir / "diagnostics.json", diag.to_json())
        failed = _report_flags(diag, "summarize", strict)
    else:
        log.warning("too few chains or draws for convergence diagnostics; none written")
    return EXIT_STRICT if failed else EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "pool": cmd_pool,
    "fit": cmd_fit,
    "compare": cmd_compare,
    "resample-study": cmd_resample_study,
    "summarize": cmd_summarize,
}


# -- argument parsing ---------------------------------------------------------------------


def _common(p):
    p.add_argument("--seed", type=int, help="master random seed (required unless set in --config)")
    p.add_argument("--config", help="TOML or JSON config file; a previous manifest.json works too")
    p.add_argument("--out", default=".", help="output directory (created if missing)")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="parallel chains")
    p.add_argument("--strict", action="store_true", help="exit with code 3 if diagnostics flag a parameter")


def _data_opts(p):
    p.add_argument("--interval-span", type=float, help="length of the observation interval in days")
    p.add_argument("--window-days", type=int, help="aggregation window for individual records (default 10)")


def _sampler_opts(p):
    p.add_argument("--chains", type=int)
    p.add_argument("--warmup", type=int)
    p.add_argument("--draws", type=int)
    p.add_argument("--thin", type=int)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="poolprev", description="Estimate time-varying prevalence from pooled and individual test data."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a synthetic study")
    _common(p)
    p.add_argument("--preset", choices=["study1", "study2"])
    p.add_argument("--n-per-time", type=int, help="individuals tested per time")
    p.add_argument("--m", type=int, help="pool size")

    p = sub.add_parser("pool", help="pool individual records into a hypothetical pooled design")
    _common(p)
    _data_opts(p)
    p.add_argument("--data", help="individual-record CSV")
    p.add_argument("--m-star", type=int)
    p.add_argument("--pool-layout", choices=["efficient", "general"])

    p = sub.add_parser("fit", help="fit the model to one dataset")
    _common(p)
    _data_opts(p)
    _sampler_opts(p)
    p.add_argument("--data", help="observation CSV (pooled, counts or individual records)")
    p.add_argument("--layout", choices=["general", "ideal", "efficient", "individual"])
    p.add_argument("--grid-points", type=int, help="prediction grid size (default 200)")

    p = sub.add_parser("compare", help="fit several strategies and tabulate hyperparameters")
    _common(p)
    _data_opts(p)
    _sampler_opts(p)
    p.add_argument("--data", action="append", metavar="LABEL=PATH", help="dataset for one strategy (repeatable)")
    p.add_argument("--truth", help="truth CSV for MAE against the true prevalence")

    p = sub.add_parser("resample-study", help="refit repeatedly re-pooled and subsampled data")
    _common(p)
    _data_opts(p)
    _sampler_opts(p)
    p.add_argument("--data", help="individual-record CSV")
    p.add_argument("--m-star", type=int)
    p.add_argument("--replicates", type=int)
    p.add_argument("--skip-individual", action="store_true", help="fit the pooled arm only")

    p = sub.add_parser("summarize", help="summaries and diagnostics from a saved draws CSV")
    _common(p)
    _data_opts(p)
    p.add_argument("--data", help="observation CSV the draws were fitted to")
    p.add_argument("--draws", help="draws CSV")
    p.add_argument("--grid-points", type=int)
    return parser


def main(argv=None):
    logging.basicConfig(format="poolprev: %(levelname)s: %(message)s", level=logging.INFO)
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.command, args)
        outdir = _outdir(args.out)
        threads = max(1, int(args.threads))
        code = COMMANDS[args.command](cfg, outdir, threads, args.strict)
        write_manifest(outdir, cfg)
    except (CliError, io.ParseError, DataError) as err:
        log.error("%s", err)
        return EXIT_INPUT
    except (diagnostics.DiagnosticsError, gp.GPError, inference.SamplerError) as err:
        log.error("%s", err)
        return EXIT_INPUT
    return code


if __name__ == "__main__":
    sys.exit(main())
