"""Experiment orchestration: sweeps, risk runs, speedup runs, plots.

Each experiment walks a deterministic grid, derives every seed from the
spec's master seed and the cell position, and writes one CSV with a fixed
column order and 17-significant-digit floats, so a rerun of the same spec
reproduces the output byte for byte.  Grid cells are independent and can be
evaluated by a process pool; the CSV assembly is an ordered reduction, so
the result does not depend on completion order.
"""

from __future__ import annotations

import csv
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import matplotlib

matplotlib.use("Agg", force=False)
import matplotlib.pyplot as plt
import numpy as np

from . import bounds as bd
from .coupling import derive_seed, estimate_stability_detailed
from .optimizer import (
    LookaheadConfig,
    RECORD_FULL,
    RECORD_SLOW_ONLY,
    StepSchedule,
    averaged_iterate,
    lookahead_run,
    validate_step_windows,
)
from .problems import (
    ConfigurationError,
    GeneratorSpec,
    LOGISTIC,
    empirical_minimizer,
    empirical_risk,
    generate_dataset,
)

KIND_STABILITY = "stability"
KIND_RISK = "risk"
KIND_SPEEDUP = "speedup"
EXPERIMENT_KINDS = (KIND_STABILITY, KIND_RISK, KIND_SPEEDUP)

OUTPUT_FINAL = "w_t"
OUTPUT_AVERAGED = "v_bar"

PRESET_NONE = "none"
PRESET_STRONGLY_CONVEX = "strongly_convex"

_TAG_RISK_DATA = 401
_TAG_RISK_ALGO = 419
_TAG_RISK_HELDOUT = 433
_TAG_RISK_FSTAR = 449
_TAG_SPEEDUP_DATA = 503
_TAG_SPEEDUP_ALGO = 521

MIN_RISK_HELDOUT = 10_000

STABILITY_COLUMNS = [
    "alpha", "k", "T", "b", "n", "eta",
    "l1_mean", "l1_se", "l2_mean", "l2_se", "samples",
    "bound_l1", "bound_l2", "dominates_l1", "dominates_l2", "window_ok",
]
RISK_COLUMNS = [
    "n", "alpha", "k", "T", "b", "eta", "output", "seeds",
    "emp_risk", "emp_risk_se", "pop_risk", "pop_risk_se",
    "gen_gap", "gen_gap_se", "opt_err", "opt_err_se",
    "excess", "excess_se", "fs_ws", "fs_ws_se", "f_star",
    "decomp_residual", "decomp_se", "window_ok",
]
SPEEDUP_COLUMNS = [
    "b", "n", "eta", "R", "k", "T", "iterations", "seeds",
    "excess", "excess_se", "valid", "skipped",
]


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: generator, hyperparameter grid, Monte Carlo budget."""

    name: str
    kind: str
    generator: GeneratorSpec
    alphas: tuple = (0.5,)
    ks: tuple = (5,)
    ts: tuple = (10,)
    bs: tuple = (1,)
    etas: tuple = (0.5,)
    n: int = 64
    ns: tuple = ()
    datasets: int = 8
    indices_per_dataset: int = 16
    algo_seeds: int = 4
    risk_seeds: int = 50
    heldout_size: int = 100_000
    output: str = OUTPUT_FINAL
    preset: str = PRESET_NONE
    c_t: float = 1.0
    speedup_k: int = 4
    master_seed: int = 0
    workers: int = 1
    output_dir: str = "."

    def __post_init__(self):
        if self.kind not in EXPERIMENT_KINDS:
            raise ConfigurationError(f"unknown experiment kind {self.kind!r}")
        for name in ("alphas", "ks", "ts", "bs", "etas", "ns"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.kind == KIND_STABILITY:
            for name in ("alphas", "ks", "ts", "bs", "etas"):
                if not getattr(self, name):
                    raise ConfigurationError(f"stability sweep needs a nonempty {name} grid")
        if self.kind == KIND_RISK:
            if not self.ns:
                raise ConfigurationError("risk experiment needs at least one sample size n")
            if self.heldout_size < MIN_RISK_HELDOUT:
                raise ConfigurationError(f"risk experiments need heldout_size >= {MIN_RISK_HELDOUT}")
            if self.output not in (OUTPUT_FINAL, OUTPUT_AVERAGED):
                raise ConfigurationError(f"unknown output {self.output!r}")
            if self.preset not in (PRESET_NONE, PRESET_STRONGLY_CONVEX):
                raise ConfigurationError(f"unknown preset {self.preset!r}")
        if self.kind == KIND_SPEEDUP and not self.bs:
            raise ConfigurationError("speedup experiment needs a batch-size grid")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")

    def csv_path(self) -> str:
        return os.path.join(self.output_dir, f"{self.name}_{self.kind}.csv")


@dataclass(frozen=True)
class RiskReport:
    """Per-cell aggregate of empirical, population and decomposed risks.

    The identity excess = gen_gap + opt_err + (fs_ws - f_star) holds per
    sample by construction; decomp_residual records the realized mean
    discrepancy and decomp_se the combined standard error it is judged by.
    """

    emp_risk: float
    emp_risk_se: float
    pop_risk: float
    pop_risk_se: float
    gen_gap: float
    gen_gap_se: float
    opt_err: float
    opt_err_se: float
    excess: float
    excess_se: float
    fs_ws: float
    fs_ws_se: float
    f_star: float
    decomp_residual: float
    decomp_se: float
    seeds: int


def _se(values: np.ndarray) -> float:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(values.size))


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def write_csv(path: str, columns: list[str], rows: list[dict]) -> None:
    """Deterministic CSV bytes: fixed column order, 17-digit floats."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(row[c]) for c in columns) + "\n")


def read_csv(path: str) -> tuple[list[str], list[dict]]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return [], []
        return list(reader.fieldnames), list(reader)


def _stability_cells(spec: ExperimentSpec):
    return list(product(spec.alphas, spec.ks, spec.ts, spec.bs, spec.etas))


def _stability_cell_worker(payload):
    spec, cell = payload
    alpha, k, T, b, eta = cell
    model = spec.generator.model()
    config = LookaheadConfig(
        alpha=alpha, k=int(k), T=int(T), b=int(b),
        eta=StepSchedule.constant_rate(eta), record_level=RECORD_SLOW_ONLY,
    )
    window_ok = not validate_step_windows(config, model)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        est, fs_mean = estimate_stability_detailed(
            config, model, spec.generator, spec.n,
            num_datasets=spec.datasets,
            indices_per_dataset=spec.indices_per_dataset,
            seeds_per_index=spec.algo_seeds,
            master_seed=spec.master_seed,
        )
    inputs = bd.BoundInputs(
        alpha=alpha, k=int(k), T=int(T), b=int(b), n=spec.n,
        L=model.L, mu=model.mu, eta=eta, fs_v=fs_mean,
    )
    if model.mu > 0:
        bound_l1 = bd.strcvx_l1_bound(inputs, int(T) - 1)
        bound_l2 = bd.strcvx_l2_bound(inputs, int(T) - 1)
    else:
        bound_l1 = bd.cvx_l1_bound(inputs, int(T) - 1)
        bound_l2 = bd.cvx_l2_bound(inputs, int(T) - 1)
    return {
        "alpha": alpha, "k": int(k), "T": int(T), "b": int(b), "n": spec.n, "eta": eta,
        "l1_mean": est.l1_mean, "l1_se": est.std_error_l1,
        "l2_mean": est.l2_mean, "l2_se": est.std_error_l2,
        "samples": est.samples,
        "bound_l1": bound_l1, "bound_l2": bound_l2,
        "dominates_l1": est.l1_mean + 2.0 * est.std_error_l1 <= bound_l1,
        "dominates_l2": est.l2_mean + 2.0 * est.std_error_l2 <= bound_l2,
        "window_ok": window_ok,
    }


def _map_cells(worker, payloads, workers: int):
    if workers > 1 and len(payloads) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(worker, payloads))
    return [worker(p) for p in payloads]


def run_stability_sweep(spec: ExperimentSpec) -> tuple[list[dict], str]:
    """Stability estimates and matching bound values for every grid cell."""
    if spec.kind != KIND_STABILITY:
        raise ConfigurationError("spec kind must be 'stability'")
    payloads = [(spec, cell) for cell in _stability_cells(spec)]
    rows = _map_cells(_stability_cell_worker, payloads, spec.workers)
    path = spec.csv_path()
    write_csv(path, STABILITY_COLUMNS, rows)
    return rows, path


def _resolve_risk_cell(spec: ExperimentSpec, n: int, alpha: float, k, T, b, eta):
    model = spec.generator.model()
    if spec.preset == PRESET_STRONGLY_CONVEX:
        if model.mu <= 0:
            raise ConfigurationError("strongly convex presets need a ridge generator")
        preset = bd.preset_strongly_convex(model.L, model.mu, alpha, int(b), n, c_T=spec.c_t)
        return preset.eta, preset.k, preset.T
    return float(eta), int(k), int(T)


def _population_risk(spec: ExperimentSpec, w: np.ndarray, heldout_seed: int) -> float:
    gen = spec.generator
    if gen.kind == LOGISTIC:
        sample = generate_dataset(gen, spec.heldout_size, heldout_seed)
        return empirical_risk(gen.model(), w, sample)
    return gen.population_risk(w)


def _optimal_risk(spec: ExperimentSpec, cell_index: int) -> float:
    gen = spec.generator
    if gen.kind == LOGISTIC:
        seed = derive_seed(spec.master_seed, _TAG_RISK_FSTAR, cell_index)
        sample = generate_dataset(gen, 10**6, seed)
        return empirical_risk(gen.model(), gen.w_true, sample)
    return gen.optimal_risk()


def _risk_cell_worker(payload):
    spec, cell_index, n, alpha, k, T, b, eta = payload
    model = spec.generator.model()
    eta, k, T = _resolve_risk_cell(spec, n, alpha, k, T, b, eta)
    record = RECORD_FULL if spec.output == OUTPUT_AVERAGED else RECORD_SLOW_ONLY
    f_star = _optimal_risk(spec, cell_index)
    emp, pop, fsws, gen_gap, opt_err, excess, resid = ([] for _ in range(7))
    window_ok = True
    for r in range(spec.risk_seeds):
        S = generate_dataset(spec.generator, n, derive_seed(spec.master_seed, _TAG_RISK_DATA, cell_index, r))
        w_s, fs_ws = empirical_minimizer(model, S)
        config = LookaheadConfig(
            alpha=alpha, k=k, T=T, b=int(b), eta=StepSchedule.constant_rate(eta),
            seed=derive_seed(spec.master_seed, _TAG_RISK_ALGO, cell_index, r),
            record_level=record,
        )
        window_ok = window_ok and not validate_step_windows(config, model)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            traj = lookahead_run(config, model, S)
        out = averaged_iterate(traj) if spec.output == OUTPUT_AVERAGED else traj.final_slow
        e = empirical_risk(model, out, S)
        p = _population_risk(spec, out, derive_seed(spec.master_seed, _TAG_RISK_HELDOUT, cell_index, r))
        emp.append(e)
        pop.append(p)
        fsws.append(fs_ws)
        gen_gap.append(p - e)
        opt_err.append(e - fs_ws)
        excess.append(p - f_star)
        resid.append((p - f_star) - (p - e) - (e - fs_ws) - (fs_ws - f_star))
    combined_se = math.sqrt(_se(excess) ** 2 + _se(gen_gap) ** 2 + _se(opt_err) ** 2 + _se(fsws) ** 2)
    report = RiskReport(
        emp_risk=float(np.mean(emp)), emp_risk_se=_se(emp),
        pop_risk=float(np.mean(pop)), pop_risk_se=_se(pop),
        gen_gap=float(np.mean(gen_gap)), gen_gap_se=_se(gen_gap),
        opt_err=float(np.mean(opt_err)), opt_err_se=_se(opt_err),
        excess=float(np.mean(excess)), excess_se=_se(excess),
        fs_ws=float(np.mean(fsws)), fs_ws_se=_se(fsws),
        f_star=f_star,
        decomp_residual=float(np.mean(resid)), decomp_se=combined_se,
        seeds=spec.risk_seeds,
    )
    return {
        "n": n, "alpha": alpha, "k": k, "T": T, "b": int(b), "eta": eta,
        "output": spec.output, "seeds": report.seeds,
        "emp_risk": report.emp_risk, "emp_risk_se": report.emp_risk_se,
        "pop_risk": report.pop_risk, "pop_risk_se": report.pop_risk_se,
        "gen_gap": report.gen_gap, "gen_gap_se": report.gen_gap_se,
        "opt_err": report.opt_err, "opt_err_se": report.opt_err_se,
        "excess": report.excess, "excess_se": report.excess_se,
        "fs_ws": report.fs_ws, "fs_ws_se": report.fs_ws_se,
        "f_star": report.f_star,
        "decomp_residual": report.decomp_residual, "decomp_se": report.decomp_se,
        "window_ok": window_ok,
    }


def _risk_cells(spec: ExperimentSpec):
    if spec.preset == PRESET_STRONGLY_CONVEX:
        grid = [(a, None, None, b, None) for a, b in product(spec.alphas, spec.bs)]
    else:
        grid = list(product(spec.alphas, spec.ks, spec.ts, spec.bs, spec.etas))
    return [(n,) + cell for n, cell in product(spec.ns, grid)]


def run_risk_experiment(spec: ExperimentSpec) -> tuple[list[dict], str]:
    """Train per cell, estimate risks, verify the error decomposition."""
    if spec.kind != KIND_RISK:
        raise ConfigurationError("spec kind must be 'risk'")
    cells = _risk_cells(spec)
    payloads = [(spec, ci) + cell for ci, cell in enumerate(cells)]
    rows = _map_cells(_risk_cell_worker, payloads, spec.workers)
    path = spec.csv_path()
    write_csv(path, RISK_COLUMNS, rows)
    return rows, path


def _speedup_cell_worker(payload):
    spec, cell_index, b = payload
    gen = spec.generator
    model = gen.model()
    f_star = gen.optimal_risk()
    preset = bd.preset_convex(f_star, spec.n, model.L, int(b))
    if preset.regime != 1:
        raise ConfigurationError(
            "linear-speedup runs need f_star >= 1/n; raise sigma or shrink n"
        )
    k = spec.speedup_k
    T = max(1, round(preset.R / k))
    row = {
        "b": int(b), "n": spec.n, "eta": preset.eta, "R": preset.R,
        "k": k, "T": T, "iterations": T * k, "seeds": spec.risk_seeds,
        "excess": float("nan"), "excess_se": float("nan"),
        "valid": preset.b_valid, "skipped": not preset.b_valid,
    }
    if not preset.b_valid:
        return row
    excess = []
    for r in range(spec.risk_seeds):
        S = generate_dataset(gen, spec.n, derive_seed(spec.master_seed, _TAG_SPEEDUP_DATA, cell_index, r))
        config = LookaheadConfig(
            alpha=spec.alphas[0], k=k, T=T, b=int(b),
            eta=StepSchedule.constant_rate(preset.eta),
            seed=derive_seed(spec.master_seed, _TAG_SPEEDUP_ALGO, cell_index, r),
            record_level=RECORD_FULL,
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            traj = lookahead_run(config, model, S)
        v_bar = averaged_iterate(traj)
        excess.append(gen.population_risk(v_bar) - f_star)
    row["excess"] = float(np.mean(excess))
    row["excess_se"] = _se(excess)
    return row


def run_speedup_experiment(spec: ExperimentSpec) -> tuple[list[dict], str]:
    """Match the excess risk across batch sizes with eta ~ b and R ~ n/b."""
    if spec.kind != KIND_SPEEDUP:
        raise ConfigurationError("spec kind must be 'speedup'")
    if spec.generator.kind == LOGISTIC:
        raise ConfigurationError("speedup runs need a closed-form optimal risk")
    payloads = [(spec, ci, b) for ci, b in enumerate(spec.bs)]
    rows = _map_cells(_speedup_cell_worker, payloads, spec.workers)
    path = spec.csv_path()
    write_csv(path, SPEEDUP_COLUMNS, rows)
    return rows, path


def run_experiment(spec: ExperimentSpec) -> tuple[list[dict], str]:
    if spec.kind == KIND_STABILITY:
        return run_stability_sweep(spec)
    if spec.kind == KIND_RISK:
        return run_risk_experiment(spec)
    return run_speedup_experiment(spec)


def window_violations(spec: ExperimentSpec) -> list[str]:
    """Step-size window notes across the whole grid, for strict mode."""
    model = spec.generator.model()
    notes = []
    if spec.kind == KIND_STABILITY:
        for alpha, k, T, b, eta in _stability_cells(spec):
            config = LookaheadConfig(alpha=alpha, k=int(k), T=int(T), b=int(b), eta=eta)
            for note in validate_step_windows(config, model):
                notes.append(f"alpha={alpha} k={k} T={T} b={b} eta={eta}: {note}")
    elif spec.kind == KIND_RISK:
        for n, alpha, k, T, b, eta in _risk_cells(spec):
            eta_r, k_r, t_r = _resolve_risk_cell(spec, n, alpha, k, T, b, eta)
            config = LookaheadConfig(alpha=alpha, k=k_r, T=t_r, b=int(b), eta=eta_r)
            for note in validate_step_windows(config, model):
                notes.append(f"n={n} alpha={alpha} k={k_r} T={t_r} b={b} eta={eta_r}: {note}")
    return notes


@dataclass(frozen=True)
class PlotSpec:
    """What to draw from a result CSV and where to write the SVG."""

    kind: str  # stability_vs_alpha | bound_overlay | excess_vs_n
    out_path: str
    x: str = ""
    y: str = ""

    PLOT_KINDS = ("stability_vs_alpha", "bound_overlay", "excess_vs_n")

    def __post_init__(self):
        if self.kind not in self.PLOT_KINDS:
            raise ConfigurationError(f"unknown plot kind {self.kind!r}")


def _column(rows: list[dict], name: str) -> np.ndarray:
    if rows and name not in rows[0]:
        raise ConfigurationError(f"CSV is missing column {name!r}")
    return np.array([float(r[name]) for r in rows])


def _deterministic_savefig(fig, path: str) -> None:
    plt.rcParams["svg.hashsalt"] = "lookstab"
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def emit_plots(csv_path: str, plot_spec: PlotSpec) -> str:
    """Render one deterministic SVG plot from an experiment CSV."""
    _, rows = read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    if not rows:
        warnings.warn(f"no data rows in {csv_path}; writing empty axes", stacklevel=2)
        ax.set_title("no data")
        _deterministic_savefig(fig, plot_spec.out_path)
        return plot_spec.out_path

    if plot_spec.kind == "stability_vs_alpha":
        x_name = plot_spec.x or "alpha"
        y_name = plot_spec.y or "l1_mean"
        se_name = y_name.replace("_mean", "_se")
        bcol = _column(rows, "b")
        for b in sorted(set(bcol)):
            idx = bcol == b
            x = _column(rows, x_name)[idx]
            y = _column(rows, y_name)[idx]
            order = np.argsort(x, kind="stable")
            se = _column(rows, se_name)[idx] if se_name in rows[0] else None
            yerr = 2 * se[order] if se is not None else None
            ax.errorbar(x[order], y[order], yerr=yerr, marker="o", label=f"b={int(b)}")
        ax.set_xlabel(x_name)
        ax.set_ylabel(y_name)
        ax.legend()
    elif plot_spec.kind == "bound_overlay":
        x_name = plot_spec.x or "alpha"
        y_name = plot_spec.y or "l1_mean"
        bound_name = "bound_" + y_name.replace("_mean", "")
        x = _column(rows, x_name)
        order = np.argsort(x, kind="stable")
        y = _column(rows, y_name)
        bound = _column(rows, bound_name)
        ax.plot(x[order], bound[order], marker="s", label=bound_name)
        ax.plot(x[order], y[order], marker="o", label=f"empirical {y_name}")
        ax.set_xlabel(x_name)
        ax.set_ylabel(y_name)
        ax.legend()
    else:  # excess_vs_n
        x_name = plot_spec.x or "n"
        y_name = plot_spec.y or "excess"
        x = _column(rows, x_name)
        y = _column(rows, y_name)
        order = np.argsort(x, kind="stable")
        ax.loglog(x[order], y[order], marker="o")
        ax.set_xlabel(x_name)
        ax.set_ylabel(y_name)
    ax.set_title(plot_spec.kind)
    _deterministic_savefig(fig, plot_spec.out_path)
    return plot_spec.out_path
