"""Two-timescale Lookahead over with-replacement minibatch SGD.

The outer loop keeps slow weights w_t; each outer step runs k inner minibatch
SGD steps from v_0 = w_{t-1} producing fast weights v_k, then interpolates

    w_t = (1 - alpha) * w_{t-1} + alpha * v_k.

Minibatches are b i.i.d. uniform index draws WITH replacement, so the count
of any fixed index in a batch is Binomial(b, 1/n).  Runs are deterministic
given the seed, and the drawn index stream is logged so that coupled runs on
perturbed datasets can replay the identical stream.

The per-inner-step empirical risks F_S(v_{tau,t}) for tau = 0..k-1 are
recorded with a full pass over the sample; the bound evaluators consume them.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.random import default_rng

from .problems import ConfigurationError, Dataset, LossModel, empirical_risk, minibatch_grad

RECORD_FULL = "full"
RECORD_SLOW_ONLY = "slow_only"
STRONGLY_CONVEX_ETA_FLOOR = 2.0 * np.log(2.0)


@dataclass(frozen=True)
class StepSchedule:
    """Inner step sizes: a single constant or a per-(outer, inner) table.

    The table has shape (T, k); row t-1 holds eta_{0,t}..eta_{k-1,t}.
    All entries must be positive.
    """

    constant: float | None = None
    table: np.ndarray | None = None

    def __post_init__(self):
        if (self.constant is None) == (self.table is None):
            raise ConfigurationError("provide exactly one of constant or table")
        if self.constant is not None:
            if self.constant <= 0:
                raise ConfigurationError("step size must be positive")
        else:
            tbl = np.asarray(self.table, dtype=float)
            if tbl.ndim != 2:
                raise ConfigurationError("step table must be 2-d (outer, inner)")
            if np.any(tbl <= 0):
                raise ConfigurationError("all step entries must be positive")
            object.__setattr__(self, "table", tbl)

    @classmethod
    def constant_rate(cls, eta: float) -> "StepSchedule":
        return cls(constant=float(eta))

    @classmethod
    def per_step(cls, table: np.ndarray) -> "StepSchedule":
        return cls(table=table)

    def rates_for_step(self, t: int, k: int) -> np.ndarray:
        """Step sizes for outer step t (1-based), inner indices 0..k-1."""
        if self.constant is not None:
            return np.full(k, self.constant)
        if not 1 <= t <= self.table.shape[0] or self.table.shape[1] != k:
            raise ConfigurationError("step table does not cover requested (t, k)")
        return self.table[t - 1]

    def as_table(self, T: int, k: int) -> np.ndarray:
        if self.constant is not None:
            return np.full((T, k), self.constant)
        if self.table.shape != (T, k):
            raise ConfigurationError(f"step table shape {self.table.shape} != ({T}, {k})")
        return self.table

    def max_rate(self, T: int, k: int) -> float:
        return float(np.max(self.as_table(T, k)))

    def min_rate(self, T: int, k: int) -> float:
        return float(np.min(self.as_table(T, k)))


@dataclass(frozen=True)
class LookaheadConfig:
    """All hyperparameters of one run.

    alpha in (0, 1]; alpha = 1 with k = 1 degenerates to plain minibatch SGD.
    w0 defaults to the zero vector.  record_level "slow_only" drops fast
    weights to save memory on large sweeps; inner risks are always recorded.
    """

    alpha: float
    k: int
    T: int
    b: int
    eta: StepSchedule
    seed: int = 0
    record_level: str = RECORD_FULL
    w0: np.ndarray | None = None

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ConfigurationError("alpha must lie in (0, 1]")
        for name in ("k", "T", "b"):
            val = getattr(self, name)
            if not isinstance(val, (int, np.integer)) or val < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if isinstance(self.eta, (int, float)):
            object.__setattr__(self, "eta", StepSchedule.constant_rate(float(self.eta)))
        elif not isinstance(self.eta, StepSchedule):
            raise ConfigurationError("eta must be a StepSchedule or a number")
        if self.record_level not in (RECORD_FULL, RECORD_SLOW_ONLY):
            raise ConfigurationError(f"unknown record level {self.record_level!r}")
        if self.w0 is not None:
            object.__setattr__(self, "w0", np.asarray(self.w0, dtype=float))

    def initial_weights(self, d: int) -> np.ndarray:
        if self.w0 is None:
            return np.zeros(d)
        if self.w0.shape != (d,):
            raise ConfigurationError("w0 dimension does not match the problem")
        return self.w0.copy()


def validate_step_windows(config: LookaheadConfig, model: LossModel) -> list[str]:
    """Step-size window checks for the convex and strongly convex regimes.

    Returns human-readable warnings; callers decide whether to escalate.
    """
    notes = []
    hi = config.eta.max_rate(config.T, config.k)
    lo = config.eta.min_rate(config.T, config.k)
    if model.L > 0 and hi * model.L > 1.0 + 1e-12:
        notes.append(
            f"step size {hi:g} exceeds 1/L = {1.0 / model.L:g}; convex-regime guarantees void"
        )
    if model.mu > 0:
        floor = STRONGLY_CONVEX_ETA_FLOOR / (config.k * model.mu)
        if lo < floor * (1 - 1e-12):
            notes.append(
                f"step size {lo:g} below strongly-convex floor 2*ln2/(k*mu) = {floor:g}"
            )
    return notes


@dataclass(frozen=True)
class Trajectory:
    """Recorded run: slow weights, optional fast weights, inner risks, indices.

    w has shape (T+1, d) with w[0] the initial point.  When recorded, v has
    shape (T, k+1, d) with v[t-1, 0] = w[t-1] and v[t-1, k] the fast output of
    outer step t.  fs_v[t-1, tau] = F_S(v_{tau,t}) for tau = 0..k-1.
    index_log has shape (T, k, b).
    """

    w: np.ndarray
    fs_v: np.ndarray
    index_log: np.ndarray
    v: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.w.shape[0] - 1

    @property
    def k(self) -> int:
        return self.fs_v.shape[1]

    @property
    def d(self) -> int:
        return self.w.shape[1]

    @property
    def final_slow(self) -> np.ndarray:
        return self.w[-1]

    def to_csv(self, path) -> None:
        """One row per (t, tau): t, tau, F_S_v, w_norm (fast-weight norm)."""
        if self.v is None:
            raise ConfigurationError("trajectory CSV needs full recording")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("t,tau,F_S_v,w_norm\n")
            for t in range(1, self.T + 1):
                for tau in range(self.k):
                    norm = float(np.linalg.norm(self.v[t - 1, tau]))
                    fh.write(
                        f"{t},{tau},{format(self.fs_v[t - 1, tau], '.17g')},{format(norm, '.17g')}\n"
                    )


def sample_minibatch(rng, n: int, b: int) -> np.ndarray:
    """b i.i.d. uniform draws from [0, n) WITH replacement."""
    if n < 1 or b < 1:
        raise ConfigurationError("sample_minibatch needs n >= 1 and b >= 1")
    return rng.integers(0, n, size=b)


def draw_index_stream(seed_or_rng, n: int, b: int, k: int, T: int) -> np.ndarray:
    """The full (T, k, b) minibatch index stream of one run."""
    rng = seed_or_rng if hasattr(seed_or_rng, "integers") else default_rng(seed_or_rng)
    stream = np.empty((T, k, b), dtype=np.int64)
    for t in range(T):
        for tau in range(k):
            stream[t, tau] = sample_minibatch(rng, n, b)
    return stream


def sgd_inner(
    model: LossModel,
    S: Dataset,
    v0: np.ndarray,
    etas: np.ndarray,
    index_stream: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """k minibatch SGD steps from v0.

    etas has k entries (zero entries allowed here; a zero step is a no-op).
    index_stream has shape (k, b).  Returns (v_hist, fs) where v_hist has
    shape (k+1, d) including the final iterate and fs[tau] = F_S(v_tau) for
    tau = 0..k-1.
    """
    etas = np.asarray(etas, dtype=float)
    k = etas.shape[0]
    if index_stream.shape[0] != k:
        raise ConfigurationError("index stream does not provide k minibatches")
    v = np.asarray(v0, dtype=float).copy()
    v_hist = np.empty((k + 1, v.shape[0]))
    fs = np.empty(k)
    v_hist[0] = v
    for tau in range(k):
        fs[tau] = empirical_risk(model, v, S)
        g = minibatch_grad(model, v, S, index_stream[tau])
        v = v - etas[tau] * g
        v_hist[tau + 1] = v
    return v_hist, fs


def lookahead_run(
    config: LookaheadConfig,
    model: LossModel,
    S: Dataset,
    index_stream: np.ndarray | None = None,
) -> Trajectory:
    """One full Lookahead run; deterministic given (config, S, index_stream).

    When index_stream is None it is drawn from config.seed.  Passing an
    explicit stream lets coupled runs on neighbor datasets share their
    minibatch indices exactly.
    """
    for note in validate_step_windows(config, model):
        warnings.warn(note, stacklevel=2)
    d = S.d
    if model.d != d:
        raise ConfigurationError("dataset dimension does not match model")
    if index_stream is None:
        index_stream = draw_index_stream(config.seed, S.n, config.b, config.k, config.T)
    else:
        index_stream = np.asarray(index_stream, dtype=np.int64)
        if index_stream.shape != (config.T, config.k, config.b):
            raise ConfigurationError("index stream shape must be (T, k, b)")

    w = config.initial_weights(d)
    w_hist = np.empty((config.T + 1, d))
    w_hist[0] = w
    fs_v = np.empty((config.T, config.k))
    v_store = (
        np.empty((config.T, config.k + 1, d)) if config.record_level == RECORD_FULL else None
    )
    for t in range(1, config.T + 1):
        etas = config.eta.rates_for_step(t, config.k)
        v_hist, fs = sgd_inner(model, S, w, etas, index_stream[t - 1])
        fs_v[t - 1] = fs
        if v_store is not None:
            v_store[t - 1] = v_hist
        w = (1.0 - config.alpha) * w + config.alpha * v_hist[-1]
        w_hist[t] = w
    return Trajectory(w=w_hist, fs_v=fs_v, index_log=index_stream, v=v_store)


def averaged_iterate(traj: Trajectory) -> np.ndarray:
    """Mean of the T*k fast iterates v_{tau,t}, tau = 0..k-1, t = 1..T."""
    if traj.v is None:
        raise ConfigurationError("averaged iterate needs full recording")
    return traj.v[:, : traj.k, :].mean(axis=(0, 1))


def slow_weights_to_csv(traj: Trajectory, path) -> None:
    """Dump the slow-weight snapshots, one row per outer step."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        cols = ["t"] + [f"w_{j}" for j in range(traj.d)]
        fh.write(",".join(cols) + "\n")
        for t in range(traj.T + 1):
            vals = [str(t)] + [format(v, ".17g") for v in traj.w[t]]
            fh.write(",".join(vals) + "\n")
