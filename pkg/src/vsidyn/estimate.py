"""Goodness of fit, simplex minimisation, model fits and ABC error bars."""
from __future__ import annotations

import logging
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np
from scipy.stats import chi2 as chi2_dist
from scipy.stats import qmc

from .dynamics import DARK, DriveState, ModelConfig, RateSet, Simulator, deshelling_rates
from .sequences import (
    PROBE_DURATION,
    PROBE_RABI,
    RABI_20NW,
    PulseSegment,
    PulseSequence,
    Trace,
    run_sequence,
    spin_depletion_experiment,
    visibility_experiment,
)
from .spincore import StrainParams, Transition, odmr_frequency, strain_hamiltonian

log = logging.getLogger(__name__)

WORKERS_ENV = "VSIDYN_WORKERS"
RATE_FIELDS = tuple(f.name for f in fields(RateSet))


class FitError(RuntimeError):
    pass


def worker_count(requested: int | None = None) -> int:
    if requested is not None:
        n = requested
    else:
        raw = os.environ.get(WORKERS_ENV, "1")
        try:
            n = int(raw)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError("worker count must be >= 1")
    return n


# -- goodness of fit -----------------------------------------------------------


def _on_grid(model: Trace, data: Trace) -> np.ndarray:
    if model.times.shape == data.times.shape and np.allclose(model.times, data.times, rtol=0, atol=1e-12):
        return model.pl
    return np.interp(data.times, model.times, model.pl)


def chi2_sum(model_traces: Sequence[Trace], data_traces: Sequence[Trace]) -> tuple[float, int]:
    if len(model_traces) != len(data_traces):
        raise ValueError("need one model trace per data trace")
    total, n = 0.0, 0
    for m, d in zip(model_traces, data_traces):
        resid = (_on_grid(m, d) - d.pl) / d.poisson_sigma()
        total += float(resid @ resid)
        n += d.pl.size
    return total, n


def chi2_reduced(model_traces: Sequence[Trace], data_traces: Sequence[Trace], n_free: int) -> float:
    """Reduced chi-square; model traces are interpolated onto the data grid.

    Without explicit ``sigma`` the Poisson rule sqrt(max(data * bin, 1)) / bin
    applies, with ``bin`` the data trace's exposure.
    """
    total, n = chi2_sum(model_traces, data_traces)
    if n <= n_free:
        raise ValueError(f"{n} data points cannot support {n_free} free parameters")
    return total / (n - n_free)


def poisson_resample(trace: Trace, rng: np.random.Generator) -> Trace:
    """Shot-noise realisation of a noiseless trace at its exposure."""
    counts = rng.poisson(trace.pl * trace.exposure)
    return Trace(trace.times.copy(), counts / trace.exposure, dict(trace.meta), None, trace.exposure)


# -- Nelder-Mead ---------------------------------------------------------------


@dataclass(frozen=True)
class NMResult:
    x: np.ndarray
    fun: float
    n_evals: int
    converged: bool
    message: str = ""


def nelder_mead(
    objective: Callable[[np.ndarray], float],
    x0: Sequence[float],
    bounds: Sequence[tuple[float, float]] | None = None,
    xtol: float = 1e-8,
    ftol: float = 1e-10,
    max_evals: int = 5000,
    initial_step: Sequence[float] | float | None = None,
) -> NMResult:
    """Downhill simplex with reflection 1, expansion 2, contraction and shrink 1/2.

    Bounds are enforced by clipping trial points. Converges when both the
    spread of vertex values and the max vertex distance from the best vertex
    drop below the tolerances. Non-finite objective values count as +inf.
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    if bounds is not None:
        lo, hi = np.array(bounds, dtype=float).T
        if lo.shape != (n,) or np.any(lo > hi):
            raise ValueError("bounds must be (low, high) pairs, one per parameter")
    else:
        lo, hi = np.full(n, -np.inf), np.full(n, np.inf)

    def clip(x):
        return np.clip(x, lo, hi)

    evals = 0

    def f(x):
        nonlocal evals
        evals += 1
        v = objective(x)
        return float(v) if np.isfinite(v) else np.inf

    x0 = clip(x0)
    f0 = f(x0)
    if not np.isfinite(f0):
        raise FitError("objective is not finite at the starting point")

    if initial_step is None:
        step = np.where(x0 != 0, 0.05 * np.abs(x0), 0.00025)
    else:
        step = np.broadcast_to(np.asarray(initial_step, dtype=float), (n,)).copy()
    sim = [x0]
    for i in range(n):
        v = x0.copy()
        v[i] = x0[i] + step[i]
        if v[i] > hi[i]:
            v[i] = x0[i] - step[i]
        sim.append(clip(v))
    sim = np.array(sim)
    fs = np.array([f0] + [f(v) for v in sim[1:]])

    converged = False
    message = "maximum number of evaluations reached"
    while evals < max_evals:
        order = np.argsort(fs, kind="stable")
        sim, fs = sim[order], fs[order]
        if np.max(np.abs(fs[1:] - fs[0])) <= ftol and np.max(np.abs(sim[1:] - sim[0])) <= xtol:
            converged, message = True, "converged"
            break
        centroid = sim[:-1].mean(axis=0)
        xr = clip(centroid + (centroid - sim[-1]))
        fr = f(xr)
        if fr < fs[0]:
            xe = clip(centroid + 2 * (centroid - sim[-1]))
            fe = f(xe)
            sim[-1], fs[-1] = (xe, fe) if fe < fr else (xr, fr)
        elif fr < fs[-2]:
            sim[-1], fs[-1] = xr, fr
        else:
            if fr < fs[-1]:
                xc = clip(centroid + 0.5 * (xr - centroid))
                fc = f(xc)
                accept = fc <= fr
            else:
                xc = clip(centroid + 0.5 * (sim[-1] - centroid))
                fc = f(xc)
                accept = fc < fs[-1]
            if accept:
                sim[-1], fs[-1] = xc, fc
            else:
                sim[1:] = clip(sim[0] + 0.5 * (sim[1:] - sim[0]))
                fs[1:] = [f(v) for v in sim[1:]]
    best = int(np.argmin(fs))
    if not converged:
        log.warning("nelder_mead: %s (best f = %.6g)", message, fs[best])
    return NMResult(sim[best].copy(), float(fs[best]), evals, converged, message)


def latin_hypercube(bounds: Sequence[tuple[float, float]], n: int, seed: int | None) -> np.ndarray:
    lo, hi = np.array(bounds, dtype=float).T
    sample = qmc.LatinHypercube(d=lo.size, seed=seed).random(n)
    return qmc.scale(sample, lo, hi)


def _run_start(args):
    objective, x, bounds, kw = args
    return nelder_mead(objective, x, bounds, **kw)


def multistart(
    objective: Callable[[np.ndarray], float],
    bounds: Sequence[tuple[float, float]],
    n_starts: int = 16,
    seed: int | None = 0,
    x0: Sequence[float] | None = None,
    workers: int | None = None,
    **nm_kw,
) -> tuple[NMResult, list[NMResult]]:
    """Nelder-Mead from Latin-hypercube starts (plus ``x0`` if given).

    The lowest objective wins; ties go to the smaller parameter norm.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be >= 1")
    starts = list(latin_hypercube(bounds, n_starts, seed))
    if x0 is not None:
        starts[0] = np.asarray(x0, dtype=float)
    jobs = [(objective, s, bounds, nm_kw) for s in starts]
    n_workers = worker_count(workers)
    if n_workers > 1:
        with ProcessPoolExecutor(n_workers) as pool:
            results = list(pool.map(_run_start, jobs))
    else:
        results = [_run_start(j) for j in jobs]
    best = min(results, key=lambda r: (r.fun, float(np.linalg.norm(r.x))))
    return best, results


# -- rate fit ------------------------------------------------------------------


@dataclass
class FitProblem:
    """Traces with the experiments that produced them and the parameters to fit.

    Parameter names are RateSet fields, ``efficiency``, ``dark_rate``,
    ``ds<i>.<field>`` for a numeric field of dataset ``i``'s descriptor and
    ``ds<i>.offset`` for an additive PL background of that dataset.
    """

    datasets: list[tuple[Trace, object]]
    free_params: dict[str, tuple[float, float]]
    baseline: ModelConfig

    def __post_init__(self):
        if not self.datasets:
            raise ValueError("a fit problem needs at least one dataset")
        if not self.free_params:
            raise ValueError("a fit problem needs at least one free parameter")
        self.free_params = dict(self.free_params)
        for name, (lo, hi) in self.free_params.items():
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"bounds of {name} must be finite with low < high")
            self._check_name(name)

    def _check_name(self, name: str):
        if name in RATE_FIELDS or name in ("efficiency", "dark_rate"):
            return
        if name.startswith("ds") and "." in name:
            idx, attr = name[2:].split(".", 1)
            if idx.isdigit() and int(idx) < len(self.datasets):
                exp = self.datasets[int(idx)][1]
                if attr == "offset" or attr in {f.name for f in fields(exp)}:
                    return
        raise ValueError(f"unknown fit parameter {name!r}")

    @property
    def names(self) -> list[str]:
        return list(self.free_params)

    @property
    def bounds(self) -> list[tuple[float, float]]:
        return list(self.free_params.values())

    @property
    def n_points(self) -> int:
        return sum(len(t) for t, _ in self.datasets)

    @property
    def dof(self) -> int:
        return self.n_points - len(self.free_params)

    def baseline_vector(self) -> np.ndarray:
        return np.array([self.value_of(name) for name in self.names])

    def value_of(self, name: str) -> float:
        if name in RATE_FIELDS:
            return getattr(self.baseline.rates, name)
        if name in ("efficiency", "dark_rate"):
            return getattr(self.baseline, name)
        idx, attr = name[2:].split(".", 1)
        if attr == "offset":
            return 0.0
        return getattr(self.datasets[int(idx)][1], attr)

    def apply(self, x: Sequence[float]) -> tuple[ModelConfig, list, np.ndarray]:
        rate_changes, cfg_changes = {}, {}
        exps = [exp for _, exp in self.datasets]
        offsets = np.zeros(len(exps))
        for name, v in zip(self.names, np.asarray(x, dtype=float)):
            if name in RATE_FIELDS:
                rate_changes[name] = float(v)
            elif name in ("efficiency", "dark_rate"):
                cfg_changes[name] = float(v)
            else:
                idx, attr = name[2:].split(".", 1)
                i = int(idx)
                if attr == "offset":
                    offsets[i] = v
                else:
                    exps[i] = replace(exps[i], **{attr: float(v)})
        cfg = replace(self.baseline, rates=replace(self.baseline.rates, **rate_changes), **cfg_changes)
        return cfg, exps, offsets

    def simulate(self, x: Sequence[float]) -> list[Trace]:
        cfg, exps, offsets = self.apply(x)
        sim = Simulator(cfg)
        out = []
        for exp, off in zip(exps, offsets):
            tr = exp.simulate(cfg, sim)
            if off:
                tr = Trace(tr.times, np.maximum(tr.pl + off, 0.0), tr.meta)
            out.append(tr)
        return out

    def chi2_r(self, x: Sequence[float]) -> float:
        try:
            models = self.simulate(x)
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.debug("objective rejected %s: %s", x, exc)
            return np.inf
        return chi2_reduced(models, [t for t, _ in self.datasets], len(self.free_params))

    __call__ = chi2_r


@dataclass
class FitResult:
    best_params: dict[str, float]
    chi2_r: float
    per_param_ci: dict[str, tuple[float, float]] | None = None
    accepted_samples: np.ndarray | None = None
    n_evals: int = 0
    converged: bool = True
    flagged: list[str] = field(default_factory=list)
    starts: list[tuple[list[float], float]] = field(default_factory=list)

    def vector(self, names: Sequence[str]) -> np.ndarray:
        return np.array([self.best_params[n] for n in names])

    def as_dict(self) -> dict:
        return {
            "best_params": dict(self.best_params),
            "chi2_r": self.chi2_r,
            "per_param_ci": None if self.per_param_ci is None else {k: list(v) for k, v in self.per_param_ci.items()},
            "n_evals": self.n_evals,
            "converged": self.converged,
            "flagged": list(self.flagged),
        }


class _Scaled:
    """Objective in coordinates normalised to the unit box (picklable)."""

    def __init__(self, problem: FitProblem):
        self.problem = problem
        self.lo, self.hi = np.array(problem.bounds).T

    def to_phys(self, u):
        return self.lo + np.asarray(u) * (self.hi - self.lo)

    def to_unit(self, x):
        return (np.asarray(x) - self.lo) / (self.hi - self.lo)

    def __call__(self, u):
        return self.problem.chi2_r(self.to_phys(u))


def fisher_flags(problem: FitProblem, x: np.ndarray, rel_tol: float = 0.2, h: float = 1e-4) -> list[str]:
    """Parameters whose local (Fisher) standard error exceeds ``rel_tol`` of their value.

    The residual Jacobian is taken by central differences in log-parameter
    space, so a parameter that only enters through a sum with another gets a
    huge error bar and is flagged.
    """
    data = [t for t, _ in problem.datasets]
    sig = np.concatenate([d.poisson_sigma() for d in data])

    def resid(v):
        models = problem.simulate(v)
        return np.concatenate([_on_grid(m, d) for m, d in zip(models, data)]) / sig

    cols = []
    for i in range(x.size):
        dx = h * max(abs(x[i]), 1e-6)
        up, dn = x.copy(), x.copy()
        up[i] += dx
        dn[i] -= dx
        cols.append((resid(up) - resid(dn)) / (2 * dx) * max(abs(x[i]), 1e-6))
    jac = np.column_stack(cols)
    evals, evecs = np.linalg.eigh(jac.T @ jac)
    null = evals <= 1e-12 * max(evals.max(), 0.0)
    # a direction the data cannot see makes every parameter on it unbounded
    rel_err = np.sqrt(np.clip((evecs[:, ~null] ** 2) @ (1 / evals[~null]), 0, None))
    rel_err[np.any(np.abs(evecs[:, null]) > 1e-6, axis=1)] = np.inf
    return [n for n, e in zip(problem.names, rel_err) if not e < rel_tol]


def rate_fit(
    problem: FitProblem,
    x0: Sequence[float] | None = None,
    n_starts: int = 16,
    seed: int | None = 0,
    max_evals: int = 4000,
    restarts: int = 2,
    workers: int | None = None,
    check_identifiability: bool = True,
) -> FitResult:
    """Joint Nelder-Mead fit of all free parameters over every dataset.

    Runs in box-normalised coordinates; each start is restarted from its own
    optimum ``restarts`` times to shake the simplex loose.
    """
    kinds = {getattr(exp, "kind", type(exp).__name__) for _, exp in problem.datasets}
    if len(problem.datasets) < 2:
        raise ValueError("rate_fit needs at least two complementary datasets")
    if len(kinds) < 2:
        warnings.warn(f"all datasets are of kind {kinds.pop()!r}; most rates will be unidentifiable", stacklevel=2)
    scaled = _Scaled(problem)
    u0 = None if x0 is None else scaled.to_unit(x0)
    bounds = [(0.0, 1.0)] * len(problem.names)
    nm_kw = dict(xtol=1e-7, ftol=1e-9, max_evals=max_evals, initial_step=0.1)
    best, results = multistart(scaled, bounds, n_starts, seed, u0, workers, **nm_kw)
    total = sum(r.n_evals for r in results)
    for _ in range(restarts):
        again = nelder_mead(scaled, best.x, bounds, **{**nm_kw, "initial_step": 0.02})
        total += again.n_evals
        improved = again.fun < best.fun
        best = again if again.fun <= best.fun else best
        if not improved:
            break
    x = scaled.to_phys(best.x)
    flagged = fisher_flags(problem, x) if check_identifiability else []
    if flagged:
        warnings.warn(f"poorly identifiable parameters: {flagged}", stacklevel=2)
    return FitResult(
        best_params=dict(zip(problem.names, map(float, x))),
        chi2_r=best.fun,
        n_evals=total,
        converged=best.converged,
        flagged=flagged,
        starts=[(list(map(float, scaled.to_phys(r.x))), r.fun) for r in results],
    )


# -- ABC -----------------------------------------------------------------------


@dataclass(frozen=True)
class ABCConfig:
    variation: float = 0.20
    iterations: int = 9000
    acceptance_quantile: float = 0.95
    ci_level: float = 0.68
    threshold: float | None = None  # fixed chi2_r gate; overrides the quantile rule
    chunk: int = 250  # samples per independently seeded block

    def __post_init__(self):
        if not 0 < self.variation < 1:
            raise ValueError("variation must lie in (0, 1)")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not 0 < self.acceptance_quantile < 1 or not 0 < self.ci_level < 1:
            raise ValueError("quantile and ci_level must lie in (0, 1)")

    def gate(self, dof: int, best_chi2_r: float) -> float:
        """Acceptance threshold on chi2_r; never below the best fit's own value."""
        rule = self.threshold if self.threshold is not None else chi2_dist.ppf(self.acceptance_quantile, dof) / dof
        return max(rule, best_chi2_r)


@dataclass
class ABCResult:
    names: list[str]
    samples: np.ndarray
    chi2_r: np.ndarray
    accepted: np.ndarray
    threshold: float
    ci: dict[str, tuple[float, float]]
    box: dict[str, tuple[float, float]]
    non_identifiable: list[str]

    @property
    def acceptance_rate(self) -> float:
        return float(self.accepted.mean())

    @property
    def accepted_samples(self) -> np.ndarray:
        return self.samples[self.accepted]


def _abc_chunk(args):
    problem, lo, hi, n, seed_seq = args
    rng = np.random.default_rng(seed_seq)
    draws = rng.uniform(lo, hi, size=(n, lo.size))
    return draws, np.array([problem.chi2_r(x) for x in draws])


def abc_errors(
    problem: FitProblem,
    best: FitResult,
    abc: ABCConfig = ABCConfig(),
    seed: int = 0,
    workers: int | None = None,
) -> ABCResult:
    """Rejection ABC around the best fit with a chi-square acceptance gate.

    Samples are drawn in fixed-size blocks, each seeded from the run seed by
    block index, so results do not depend on the number of workers.
    """
    names = problem.names
    centre = best.vector(names)
    lo = np.minimum(centre * (1 - abc.variation), centre * (1 + abc.variation))
    hi = np.maximum(centre * (1 - abc.variation), centre * (1 + abc.variation))
    blo, bhi = np.array(problem.bounds).T
    lo, hi = np.clip(lo, blo, bhi), np.clip(hi, blo, bhi)
    sizes = [abc.chunk] * (abc.iterations // abc.chunk)
    if abc.iterations % abc.chunk:
        sizes.append(abc.iterations % abc.chunk)
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    jobs = [(problem, lo, hi, n, s) for n, s in zip(sizes, children)]
    n_workers = worker_count(workers)
    if n_workers > 1:
        with ProcessPoolExecutor(n_workers) as pool:
            parts = list(pool.map(_abc_chunk, jobs))
    else:
        parts = [_abc_chunk(j) for j in jobs]
    samples = np.vstack([p[0] for p in parts])
    chis = np.concatenate([p[1] for p in parts])
    thr = abc.gate(problem.dof, best.chi2_r)
    accepted = chis <= thr
    rate = accepted.mean()
    if rate < 1e-3:
        warnings.warn(f"ABC acceptance rate {rate:.2e} < 0.1%; consider a wider prior box", stacklevel=2)
    tail = (1 - abc.ci_level) / 2
    ci, non_id = {}, []
    for k, name in enumerate(names):
        col = samples[accepted, k]
        if col.size:
            ci[name] = (float(np.quantile(col, tail)), float(np.quantile(col, 1 - tail)))
            # flat marginal: the central interval is as wide as a uniform one would be
            width = abc.ci_level * (hi[k] - lo[k])
            if width > 0 and ci[name][1] - ci[name][0] >= 0.9 * width:
                non_id.append(name)
        else:
            ci[name] = (float("nan"), float("nan"))
    if non_id:
        warnings.warn(f"ABC marginals span the prior box for {non_id}", stacklevel=2)
    best.per_param_ci = ci
    best.accepted_samples = samples[accepted]
    box = {n: (float(a), float(b)) for n, a, b in zip(names, lo, hi)}
    return ABCResult(list(names), samples, chis, accepted, float(thr), ci, box, non_id)


# -- strain fit ----------------------------------------------------------------


@dataclass(frozen=True)
class StrainFitResult:
    strain: StrainParams
    residual: float
    odmr: float
    fidelities: tuple[float, float]
    candidates: list[tuple[StrainParams, float]]
    underdetermined: bool


def forward_strain_observables(
    strain: StrainParams,
    cfg_baseline: ModelConfig,
    pump_duration: float = 80.0,
    probe_rabi: float = PROBE_RABI,
) -> tuple[float, float, float]:
    """(ODMR peak, p_3/2 after A1 pumping, p_1/2 after A2 pumping).

    Fidelities are inferred from probe contrast exactly as in the measurement,
    so detection efficiency and dark counts of ``cfg_baseline`` matter.
    """
    h_g = strain_hamiltonian(cfg_baseline.h_ground.d_zfs, strain)
    cfg = replace(cfg_baseline, h_ground=h_g, strain=strain)
    sim = Simulator(cfg)
    v1 = visibility_experiment(cfg, Transition.A1, pump_duration, PROBE_DURATION, probe_rabi, RABI_20NW, sim)
    v2 = visibility_experiment(cfg, Transition.A2, pump_duration, PROBE_DURATION, probe_rabi, RABI_20NW, sim)
    return odmr_frequency(h_g), v1.p_32, v2.p_12


class _StrainObjective:
    def __init__(self, peak, fids, cfg, sigma_odmr, sigma_fid):
        self.peak, self.fids, self.cfg = peak, fids, cfg
        self.s_odmr, self.s_fid = sigma_odmr, sigma_fid

    @staticmethod
    def params(x) -> StrainParams:
        pz, p1, p2, th = x
        return StrainParams(float(pz), max(float(p1), 0.0), max(float(p2), 0.0), float(np.clip(th, 0, np.nextafter(np.pi, 0))))

    def __call__(self, x) -> float:
        f, a, b = forward_strain_observables(self.params(x), self.cfg)
        return ((f - self.peak) / self.s_odmr) ** 2 + ((a - self.fids[0]) / self.s_fid) ** 2 + ((b - self.fids[1]) / self.s_fid) ** 2


def strain_fit(
    odmr_peak: float,
    fidelities: tuple[float, float],
    cfg_baseline: ModelConfig,
    n_starts: int = 16,
    seed: int | None = 0,
    sigma_odmr: float = 0.05,
    sigma_fid: float = 0.01,
    max_transverse: float = 8.0,
    max_evals: int = 600,
    workers: int | None = None,
) -> StrainFitResult:
    """Strain couplings matching an ODMR peak and two pumped-state fidelities.

    Searches the canonical domain. Three observables cannot always pin four
    couplings: every start that ends within a chi-square unit of the best is
    kept, and the result is flagged under-determined when those disagree.
    """
    if odmr_peak <= 0:
        raise ValueError("odmr_peak must be > 0")
    if not all(0 < f < 1 for f in fidelities):
        raise ValueError("fidelities must lie in (0, 1)")
    d = cfg_baseline.h_ground.d_zfs
    half_span = max(abs(odmr_peak - d), 2.0) + max_transverse
    bounds = [(-half_span, half_span), (0.0, max_transverse), (0.0, max_transverse), (0.0, float(np.nextafter(np.pi, 0)))]
    obj = _StrainObjective(odmr_peak, tuple(fidelities), cfg_baseline, sigma_odmr, sigma_fid)
    x_axial = [(odmr_peak - d) / 2, 0.0, 0.0, 0.0]
    best, results = multistart(
        obj, bounds, n_starts, seed, x_axial, workers, xtol=1e-6, ftol=1e-8, max_evals=max_evals,
        initial_step=[0.5, 0.5, 0.5, 0.3],
    )
    near = [r for r in sorted(results, key=lambda r: r.fun) if r.fun <= best.fun + 1.0]
    cands = [(obj.params(r.x), r.fun) for r in near]
    spread = np.ptp(np.array([[s.pi_1, s.pi_2] for s, _ in cands]), axis=0) if len(cands) > 1 else np.zeros(2)
    under = bool(np.any(spread > 0.1))
    if not best.converged and best.fun > 1.0:
        raise FitError(f"strain fit did not converge (residual {best.fun:.3g})")
    strain = obj.params(best.x)
    f, a, b = forward_strain_observables(strain, cfg_baseline)
    return StrainFitResult(strain, best.fun, f, (a, b), cands, under)


# -- deshelling law ---------------------------------------------------------------


@dataclass(frozen=True)
class DeshellingLaw:
    rabi: np.ndarray
    gamma_3p: np.ndarray
    gamma_4p: np.ndarray
    slope_3: float
    intercept_3: float
    slope_4: float
    intercept_4: float
    beta: float
    gamma_3p0: float
    gamma_4p0: float


def fit_ms2_rates(
    trace: Trace,
    transition: Transition | str,
    rabi: float,
    cfg: ModelConfig,
    init_drive: DriveState,
    init_duration: float = 40.0,
    wait: float = 2.0,
) -> tuple[float, float]:
    """Constant MS2 -> ground rates during the drive that reproduce a spin-depletion trace.

    Every other parameter is held at ``cfg``. The trial rates replace the
    power-dependent law only while the resonant laser is on.
    """
    transition = Transition(transition)
    dt = float(trace.times[1] - trace.times[0])
    window = float(trace.times[-1]) + dt
    base = DriveState.resonant(transition, rabi)
    flat = cfg.with_rates(beta=0.0)  # power dependence comes only from the trial rates
    sim = Simulator(flat)
    scale = max(trace.pl.max(), 1e-30)

    def objective(u):
        g3, g4 = np.exp(u)
        seq = PulseSequence(
            (
                PulseSegment(init_duration, init_drive, reset=True),
                PulseSegment(wait, DARK),
                PulseSegment(window, replace(base, offres_gamma_3p=g3, offres_gamma_4p=g4), record=True),
            ),
            sample_dt=dt,
        )
        model = run_sequence(seq, flat, sim)
        return float(np.sum(((model.pl - trace.pl) / scale) ** 2))

    on_a1 = transition is Transition.A1
    g3_0, g4_0 = deshelling_rates(cfg.rates, rabi if on_a1 else 0.0, 0.0 if on_a1 else rabi)
    start = np.log([max(g3_0, 0.02), max(g4_0, 0.02)])
    res = nelder_mead(objective, start, [(-9.0, 2.0)] * 2, xtol=1e-8, ftol=1e-20, max_evals=1500, initial_step=0.3)
    g3, g4 = np.exp(res.x)
    return float(g3), float(g4)


def deshelling_law_fit(
    cfg: ModelConfig,
    transition: Transition | str = Transition.A1,
    rabis: Sequence[float] = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0),
    init_drive: DriveState | None = None,
    window: float = 40.0,
    sample_dt: float = 0.2,
) -> DeshellingLaw:
    """Simulate spin depletion, extract constant MS2 rates per power, fit the law.

    Straight lines in Omega give the intercepts; the saturating law, linear
    in (gamma_3p0, gamma_4p0, beta) for a drive on ``transition`` only,
    gives beta.
    """
    from .presets import PUMP_50UW

    transition = Transition(transition)
    init_drive = init_drive or PUMP_50UW["no_strain"]
    rabis = np.asarray(rabis, dtype=float)
    g3s, g4s = [], []
    for om in rabis:
        trace = spin_depletion_experiment(cfg, transition, [om], window, init_drive, sample_dt=sample_dt)[0]
        g3, g4 = fit_ms2_rates(trace, transition, om, cfg, init_drive)
        g3s.append(g3)
        g4s.append(g4)
    g3s, g4s = np.array(g3s), np.array(g4s)
    s3, i3 = np.polyfit(rabis, g3s, 1)
    s4, i4 = np.polyfit(rabis, g4s, 1)
    unit = cfg.rates.replace(beta=1.0, gamma_3p0=0.0, gamma_4p0=0.0)
    on_a1 = transition is Transition.A1
    shape = np.array([deshelling_rates(unit, om if on_a1 else 0.0, 0.0 if on_a1 else om) for om in rabis])
    n = rabis.size
    design = np.zeros((2 * n, 3))
    design[:n, 0] = 1
    design[n:, 1] = 1
    design[:n, 2] = shape[:, 0]
    design[n:, 2] = shape[:, 1]
    (c3, c4, beta), *_ = np.linalg.lstsq(design, np.concatenate([g3s, g4s]), rcond=None)
    return DeshellingLaw(rabis, g3s, g4s, float(s3), float(i3), float(s4), float(i4), float(beta), float(c3), float(c4))
