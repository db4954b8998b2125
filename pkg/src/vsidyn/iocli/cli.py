"""Command-line entry point: ``vsidyn <command> ...``.

Exit status: 0 success, 1 invalid input (arguments, config, data files),
2 numerical failure (including reproduction checks that miss their target).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import jsonschema
import numpy as np

from ..dynamics import PropagationError
from ..estimate import ABCConfig, FitError, FitProblem, abc_errors, rate_fit, strain_fit, worker_count
from ..lineshape import AliasingError, PhononData, isc_rate, overlap_function, synthetic_modes
from ..sequences import ExperimentError, Trace, emission_change_map
from .config import ConfigError, RunConfig, _number, _reject_unknown, experiment_descriptor, linspace_spec, load_config
from .results import read_document, result_document, trace_from_record, write_document
from .traces import TraceFormatError, emit_trace, ingest_trace

log = logging.getLogger("vsidyn")

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; route it to our validation code instead."""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# -- helpers -------------------------------------------------------------------


def _noisy(trace: Trace, exposure: float, rng: np.random.Generator) -> Trace:
    counts = rng.poisson(trace.pl * exposure)
    return Trace(trace.times, counts / exposure, trace.meta, None, exposure)


def _run_experiments(cfg: RunConfig, blocks: list[tuple[str, dict]]) -> list[tuple[str, Trace]]:
    children = np.random.SeedSequence(cfg.seed).spawn(len(blocks))
    out = []
    for (name, block), child in zip(blocks, children):
        exp = experiment_descriptor(block, cfg.family)
        trace = exp.simulate(cfg.model)
        if "exposure" in block:
            trace = _noisy(trace, float(block["exposure"]), np.random.default_rng(child))
        out.append((name, trace))
    return out


def _emit(cfg: RunConfig, out_dir: Path, command: str, traces=(), **doc_kw) -> dict:
    """Single writer for every file a command produces."""
    out_dir.mkdir(parents=True, exist_ok=True)
    if "csv" in cfg.formats:
        for name, trace in traces:
            emit_trace(trace, out_dir / f"{name}.csv")
    doc = result_document(command, cfg.raw, cfg.seed, traces, **doc_kw)
    if "json" in cfg.formats:
        write_document(doc, out_dir / f"{command}.json")
    return doc


def _out_dir(args, cfg: RunConfig) -> Path:
    return Path(args.out) if args.out else Path(cfg.output_dir)


def _load(args) -> RunConfig:
    cfg = load_config(args.config, args.preset)
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.raw = {**cfg.raw, "seed": args.seed}
    return cfg


def _dataset_blocks(cfg: RunConfig) -> list[tuple[str, dict]]:
    return [(f"ds{i}_{d['name']}", d) for i, d in enumerate(cfg.datasets)]


# -- commands --------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load(args)
    blocks = ([("experiment_" + cfg.experiment["name"], cfg.experiment)] if cfg.experiment else []) + _dataset_blocks(cfg)
    if not blocks:
        raise ConfigError("simulate needs an 'experiment' or 'datasets' section")
    traces = _run_experiments(cfg, blocks)
    _emit(cfg, _out_dir(args, cfg), "simulate", traces)
    for name, tr in traces:
        print(f"{name}: {len(tr)} samples, peak {tr.pl.max():.6g} counts/us")
    return EXIT_OK


def _fit_section(cfg: RunConfig, allowed: set) -> dict:
    fit = cfg.require("fit")
    _reject_unknown(fit, allowed, "fit")
    return fit


RATE_FIT_KEYS = {"kind", "free", "x0", "n_starts", "max_evals", "restarts", "exposure", "check_identifiability"}
STRAIN_FIT_KEYS = {"kind", "odmr_peak", "fidelities", "n_starts", "max_evals", "max_transverse", "sigma_odmr", "sigma_fid"}


def build_problem(cfg: RunConfig, traces: list[Trace], fit: dict) -> FitProblem:
    if len(traces) != len(cfg.datasets):
        raise ConfigError(f"got {len(traces)} data file(s) for {len(cfg.datasets)} configured dataset(s)")
    free = fit.get("free")
    if not isinstance(free, dict) or not free:
        raise ConfigError("fit.free must map parameter names to [low, high] bounds")
    bounds = {}
    for name, b in free.items():
        if not (isinstance(b, list) and len(b) == 2):
            raise ConfigError(f"fit.free.{name} must be [low, high]")
        bounds[name] = (_number(b[0], f"fit.free.{name}"), _number(b[1], f"fit.free.{name}"))
    exps = [experiment_descriptor(d, cfg.family, f"datasets[{i}]") for i, d in enumerate(cfg.datasets)]
    try:
        return FitProblem(list(zip(traces, exps)), bounds, cfg.model)
    except ValueError as exc:
        raise ConfigError(f"fit: {exc}") from None


def cmd_fit(args) -> int:
    cfg = _load(args)
    kind = cfg.require("fit").get("kind", "rate")
    if kind == "strain":
        return _strain_fit(args, cfg)
    if kind != "rate":
        raise ConfigError(f"fit.kind must be 'rate' or 'strain', got {kind!r}")
    fit = _fit_section(cfg, RATE_FIT_KEYS)
    exposure = _number(fit.get("exposure", 1.0), "fit.exposure")
    if not args.data:
        raise ConfigError("a rate fit needs one data file per configured dataset")
    traces = [ingest_trace(p, exposure=exposure) for p in args.data]
    problem = build_problem(cfg, traces, fit)
    x0 = None
    if "x0" in fit:
        start = fit["x0"]
        _reject_unknown(start, set(problem.names), "fit.x0")
        x0 = [_number(start[n], f"fit.x0.{n}") if n in start else problem.value_of(n) for n in problem.names]
    result = rate_fit(
        problem,
        x0,
        n_starts=int(fit.get("n_starts", 16)),
        seed=cfg.seed,
        max_evals=int(fit.get("max_evals", 4000)),
        restarts=int(fit.get("restarts", 2)),
        workers=worker_count(),
        check_identifiability=bool(fit.get("check_identifiability", True)),
    )
    named = [(f"data_{i}", t) for i, t in enumerate(traces)]
    models = [(f"model_{i}", t) for i, t in enumerate(problem.simulate(result.vector(problem.names)))]
    fit_doc = {**result.as_dict(), "bounds": {k: list(v) for k, v in problem.free_params.items()}}
    _emit(cfg, _out_dir(args, cfg), "fit", named + models, fit=fit_doc)
    print(f"chi2_r = {result.chi2_r:.6g} after {result.n_evals} evaluations")
    for k, v in result.best_params.items():
        print(f"  {k} = {v:.6g}")
    return EXIT_OK


def _strain_fit(args, cfg: RunConfig) -> int:
    fit = _fit_section(cfg, STRAIN_FIT_KEYS)
    try:
        peak = _number(fit["odmr_peak"], "fit.odmr_peak")
        fids = tuple(_number(f, "fit.fidelities") for f in fit["fidelities"])
    except KeyError as exc:
        raise ConfigError(f"a strain fit needs {exc}") from None
    if len(fids) != 2:
        raise ConfigError("fit.fidelities must be [p_3/2 after A1, p_1/2 after A2]")
    kw = {k: fit[k] for k in ("n_starts", "max_evals", "max_transverse", "sigma_odmr", "sigma_fid") if k in fit}
    res = strain_fit(peak, fids, cfg.model, seed=cfg.seed, workers=worker_count(), **kw)
    fit_doc = {
        "best_params": res.strain.as_dict(),
        "chi2_r": res.residual,
        "odmr": res.odmr,
        "fidelities": list(res.fidelities),
        "underdetermined": res.underdetermined,
        "candidates": [{**s.as_dict(), "residual": r} for s, r in res.candidates],
    }
    _emit(cfg, _out_dir(args, cfg), "fit", fit=fit_doc)
    print(f"strain {res.strain.as_dict()} residual {res.residual:.4g}; ODMR {res.odmr:.4f} MHz")
    if res.underdetermined:
        print("warning: several strain configurations fit equally well")
    return EXIT_OK


ABC_KEYS = {"variation", "iterations", "acceptance_quantile", "ci_level", "threshold", "chunk"}


def cmd_abc(args) -> int:
    cfg = _load(args)
    section = cfg.abc or {}
    _reject_unknown(section, ABC_KEYS, "abc")
    try:
        abc_cfg = ABCConfig(**section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"abc: {exc}") from None
    doc = read_document(args.fitresult)
    if doc["command"] != "fit" or not doc["fit"] or "bounds" not in doc["fit"]:
        raise ConfigError(f"{args.fitresult} is not a rate-fit result document")
    # the fit document is self-contained: rebuild its datasets and model
    fit_cfg_raw = doc["config"]
    from .config import from_dict

    fit_cfg = from_dict(fit_cfg_raw)
    data = sorted((r for r in doc["traces"] if r["name"].startswith("data_")), key=lambda r: int(r["name"][5:]))
    traces = [trace_from_record(r) for r in data]
    problem = build_problem(fit_cfg, traces, {"free": doc["fit"]["bounds"]})
    from ..estimate import FitResult

    best = FitResult(doc["fit"]["best_params"], doc["fit"]["chi2_r"])
    res = abc_errors(problem, best, abc_cfg, seed=cfg.seed, workers=worker_count())
    abc_doc = {
        "names": res.names,
        "threshold": res.threshold,
        "acceptance_rate": res.acceptance_rate,
        "ci": {k: list(v) for k, v in res.ci.items()},
        "box": {k: list(v) for k, v in res.box.items()},
        "non_identifiable": res.non_identifiable,
        "accepted_samples": res.accepted_samples,
    }
    fit_doc = {**doc["fit"], "per_param_ci": abc_doc["ci"]}
    _emit(cfg, _out_dir(args, cfg), "abc", fit=fit_doc, abc=abc_doc)
    print(f"accepted {res.accepted.sum()} of {res.samples.shape[0]} (threshold chi2_r <= {res.threshold:.4g})")
    for k, (lo, hi) in res.ci.items():
        print(f"  {k}: [{lo:.6g}, {hi:.6g}]")
    return EXIT_OK


SWEEP_KEYS = {
    "emission_map": {"kind", "gamma3", "gamma4", "excitation", "window"},
    "parameter": {"kind", "parameter", "values"},
}


def _sweep_point(args):
    exp, cfg = args
    return exp.simulate(cfg)


def cmd_sweep(args) -> int:
    cfg = _load(args)
    sweep = cfg.require("sweep")
    kind = sweep.get("kind")
    if kind not in SWEEP_KEYS:
        raise ConfigError(f"sweep.kind must be one of {sorted(SWEEP_KEYS)}")
    _reject_unknown(sweep, SWEEP_KEYS[kind], "sweep")
    out_dir = _out_dir(args, cfg)
    if kind == "emission_map":
        g3 = linspace_spec(sweep.get("gamma3"), "sweep.gamma3")
        g4 = linspace_spec(sweep.get("gamma4"), "sweep.gamma4")
        excitation = sweep.get("excitation", "A1")
        grid = emission_change_map(cfg.model, g3, g4, excitation, _number(sweep.get("window", 40.0), "sweep.window"))
        extra = {"gamma3": g3, "gamma4": g4, "excitation": excitation, "delta_pl_percent": grid}
        _emit(cfg, out_dir, "sweep", extra=extra)
        if "csv" in cfg.formats:
            with (out_dir / "emission_map.csv").open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["gamma3_MHz", "gamma4_MHz", "delta_pl_percent"])
                for i, a in enumerate(g3):
                    for j, b in enumerate(g4):
                        w.writerow([repr(float(a)), repr(float(b)), repr(float(grid[i, j]))])
        print(f"emission map {grid.shape[0]}x{grid.shape[1]}: min {grid.min():+.3f}%, max {grid.max():+.3f}%")
        return EXIT_OK
    exp_block = cfg.require("experiment")
    name = sweep.get("parameter")
    values = linspace_spec(sweep.get("values"), "sweep.values")
    jobs = []
    for v in values:
        if name in cfg.model.rates.as_dict():
            jobs.append((experiment_descriptor(exp_block, cfg.family), cfg.model.with_rates(**{name: float(v)})))
        else:
            block = {**exp_block, "params": {**exp_block.get("params", {}), name: float(v)}}
            jobs.append((experiment_descriptor(block, cfg.family), cfg.model))
    n = worker_count()
    if n > 1:
        with ProcessPoolExecutor(n) as pool:
            results = list(pool.map(_sweep_point, jobs))
    else:
        results = [_sweep_point(j) for j in jobs]
    traces = [(f"{name}={v!r}", t) for v, t in zip(values.tolist(), results)]
    _emit(cfg, out_dir, "sweep", traces, extra={"parameter": name, "values": values})
    print(f"swept {name} over {len(values)} values")
    return EXIT_OK


LINESHAPE_KEYS = {"modes", "eta", "sigma", "grid", "lambda_soc", "delta_if"}


def read_modes(spec, sigma: float | None) -> PhononData:
    """``"synthetic"``, a list of [omega, sigma, s] rows or {"csv": path}."""
    if spec == "synthetic":
        return synthetic_modes()
    if isinstance(spec, list):
        rows = spec
    elif isinstance(spec, dict) and set(spec) == {"csv"}:
        path = Path(spec["csv"])
        try:
            with path.open(newline="") as fh:
                reader = csv.DictReader(fh)
                need = {"omega_meV", "sigma_meV", "s_k"}
                if not need <= set(reader.fieldnames or ()):
                    raise ConfigError(f"{path}: mode table needs columns {sorted(need)}")
                rows = [[float(r["omega_meV"]), float(r["sigma_meV"]), float(r["s_k"])] for r in reader]
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    else:
        raise ConfigError("lineshape.modes must be 'synthetic', a list of [omega, sigma, s] or {\"csv\": path}")
    arr = np.array(rows, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ConfigError("each mode needs omega_meV, sigma_meV and s_k")
    if sigma is not None:
        arr[:, 1] = sigma
    try:
        return PhononData(arr[:, 0], arr[:, 1], arr[:, 2])
    except ValueError as exc:
        raise ConfigError(f"lineshape.modes: {exc}") from None


def cmd_lineshape(args) -> int:
    cfg = _load(args)
    ls = cfg.require("lineshape")
    _reject_unknown(ls, LINESHAPE_KEYS, "lineshape")
    sigma = _number(ls["sigma"], "lineshape.sigma") if "sigma" in ls else None
    modes = read_modes(ls.get("modes", "synthetic"), sigma)
    eta = _number(ls.get("eta", 1.0), "lineshape.eta")
    grid = linspace_spec(ls["grid"], "lineshape.grid") if "grid" in ls else None
    ov = overlap_function(modes, eta, grid)
    extra = {
        "eta": eta,
        "norm": ov.norm(),
        "first_moment": ov.first_moment(),
        "relaxation_energy": modes.relaxation_energy,
        "total_s": modes.total_s,
        "energies_meV": ov.energies,
        "overlap_per_meV": ov.a,
    }
    if "lambda_soc" in ls or "delta_if" in ls:
        lam = _number(ls.get("lambda_soc"), "lineshape.lambda_soc")
        delta = _number(ls.get("delta_if"), "lineshape.delta_if")
        extra["isc_rate_MHz"] = isc_rate(lam, delta, ov)
    out_dir = _out_dir(args, cfg)
    _emit(cfg, out_dir, "lineshape", extra=extra)
    if "csv" in cfg.formats:
        with (out_dir / "overlap.csv").open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["energy_meV", "overlap_per_meV"])
            for e, a in zip(ov.energies, ov.a):
                w.writerow([repr(float(e)), repr(float(a))])
    print(f"norm {extra['norm']:.6f}, first moment {extra['first_moment']:.4f} meV (sum s*omega {modes.relaxation_energy:.4f})")
    if "isc_rate_MHz" in extra:
        print(f"ISC rate {extra['isc_rate_MHz']:.6g} MHz")
    return EXIT_OK


def cmd_paper_repro(args) -> int:
    from ..repro import CHECKS, run_checks

    keys = None
    if args.only:
        try:
            keys = sorted({int(k) for k in args.only.split(",")})
        except ValueError:
            raise ConfigError("--only takes comma-separated check numbers") from None
        bad = [k for k in keys if k not in CHECKS]
        if bad:
            raise ConfigError(f"unknown check(s) {bad}; available {sorted(CHECKS)}")
    results = run_checks(keys)
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} checks passed")
    if args.out:
        seed = 0 if args.seed is None else args.seed
        doc = result_document("paper-repro", {"checks": keys or sorted(CHECKS)}, seed, extra={"checks": [r.as_dict() for r in results]})
        write_document(doc, Path(args.out) / "paper-repro.json")
    return EXIT_OK if n_pass == len(results) else EXIT_NUMERIC


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="vsidyn", description="Spin and photoluminescence dynamics of V_Si centres in SiC.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_text, config=True):
        p = sub.add_parser(name, help=help_text, description=help_text)
        if config:
            p.add_argument("config", help="JSON run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out", default=None, help="output directory (overrides output.directory)")
        p.add_argument("--preset", choices=["no_strain", "strain"], default=None, help="model preset")
        p.set_defaults(func=func)
        return p

    add("simulate", cmd_simulate, "simulate the configured experiment(s) and write trace CSVs")
    p = add("fit", cmd_fit, "fit rates to measured traces, or strain to ODMR and fidelities")
    p.add_argument("data", nargs="*", help="trace CSV files, one per configured dataset")
    p = add("abc", cmd_abc, "ABC confidence intervals around a rate-fit result")
    p.add_argument("fitresult", help="fit.json written by 'vsidyn fit'")
    add("sweep", cmd_sweep, "emission-change maps or one-parameter sweeps")
    add("lineshape", cmd_lineshape, "vibrational overlap function and ISC rate")
    p = add("paper-repro", cmd_paper_repro, "run the reference reproduction checks", config=False)
    p.add_argument("--only", default=None, help="comma-separated check numbers")
    return parser


NUMERIC_ERRORS = (PropagationError, FitError, ExperimentError, AliasingError, np.linalg.LinAlgError, FloatingPointError)
INPUT_ERRORS = (ConfigError, TraceFormatError, jsonschema.ValidationError, json.JSONDecodeError, OSError)


def cli_dispatch(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except INPUT_ERRORS as exc:
        msg = exc.message if isinstance(exc, jsonschema.ValidationError) else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INVALID
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


def main() -> None:
    sys.exit(cli_dispatch())
