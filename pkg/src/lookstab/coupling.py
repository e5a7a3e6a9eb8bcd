"""Coupled runs on single-point-perturbed datasets and stability estimation.

A neighbor dataset replaces one position of S with a fresh draw from the same
generator.  A coupled run executes Lookahead on S and on the neighbor with
the identical minibatch index stream, so the trajectories diverge only
through the replaced point.  Averaging final-iterate distances over
(dataset, replaced index, algorithm seed) cells gives Monte Carlo estimates
of l1 / l2 on-average model stability:

    l1 = E[(1/n) sum_i ||A(S) - A(S with point i replaced)||]
    l2 = E[(1/n) sum_i ||A(S) - A(S with point i replaced)||^2]

Every cell derives its seeds by hashing the (master, dataset, index, seed)
tuple, so results are independent of evaluation order and cells can run in
parallel.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace as dc_replace

import numpy as np
from numpy.random import SeedSequence, default_rng

from .optimizer import (
    LookaheadConfig,
    RECORD_FULL,
    Trajectory,
    averaged_iterate,
    draw_index_stream,
    lookahead_run,
)
from .problems import ConfigurationError, DataPoint, Dataset, GeneratorSpec, LossModel, generate_dataset

MEASURE_FINAL = "w_T"
MEASURE_AVERAGED = "v_bar"

# Stream tags keeping dataset, neighbor, index-choice and algorithm seeds
# independent of each other.
_TAG_DATASET = 101
_TAG_INDEX_CHOICE = 157
_TAG_NEIGHBOR = 211
_TAG_ALGORITHM = 307

_EXHAUSTIVE_LIMIT = 100_000


def derive_seed(*parts: int) -> int:
    """Deterministic 64-bit seed from a tuple of integers."""
    return int(SeedSequence(list(parts)).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class NeighborPair:
    """S together with its copy where position index holds the fresh draw."""

    dataset: Dataset
    index: int
    z_prime: DataPoint
    replaced: Dataset


def make_neighbor(S: Dataset, i: int, spec: GeneratorSpec, seed: int) -> NeighborPair:
    """Replace position i of S with one fresh draw from spec; S is unchanged."""
    if not 0 <= i < S.n:
        raise ConfigurationError(f"index {i} out of range for n={S.n}")
    z_prime = generate_dataset(spec, 1, seed).point(0)
    return NeighborPair(dataset=S, index=i, z_prime=z_prime, replaced=S.replace_point(i, z_prime))


@dataclass(frozen=True)
class CoupledRun:
    """Both trajectories plus per-outer-step slow-weight distances."""

    traj: Trajectory
    traj_neighbor: Trajectory
    dist: np.ndarray     # (T+1,), dist[t] = ||w_t - w_t'||
    dist_sq: np.ndarray  # (T+1,)


def coupled_run(
    config: LookaheadConfig,
    model: LossModel,
    pair: NeighborPair,
    index_stream: np.ndarray | None = None,
) -> CoupledRun:
    """Run Lookahead on S and on the neighbor with a shared index stream.

    Both runs start from the same w0 and read the same index sequence; the
    neighbor run looks the indices up in the replaced dataset.  With
    z_prime equal to the original point the arithmetic is identical and the
    distance series is exactly zero.
    """
    if index_stream is None:
        index_stream = draw_index_stream(
            config.seed, pair.dataset.n, config.b, config.k, config.T
        )
    traj = lookahead_run(config, model, pair.dataset, index_stream=index_stream)
    traj_nb = lookahead_run(config, model, pair.replaced, index_stream=index_stream)
    diff = traj.w - traj_nb.w
    dist = np.linalg.norm(diff, axis=1)
    return CoupledRun(traj=traj, traj_neighbor=traj_nb, dist=dist, dist_sq=dist**2)


@dataclass(frozen=True)
class StabilityEstimate:
    """Monte Carlo stability estimate with standard errors.

    l1_mean and l2_mean estimate the plain and squared on-average distances;
    by Jensen l1_mean^2 <= l2_mean up to sampling noise on matched samples.
    """

    l1_mean: float
    l2_mean: float
    std_error_l1: float
    std_error_l2: float
    samples: int

    @classmethod
    def from_distances(cls, dists: np.ndarray) -> "StabilityEstimate":
        dists = np.asarray(dists, dtype=float)
        n = dists.size
        if n == 0:
            raise ConfigurationError("stability estimate needs at least one sample")
        sq = dists**2
        se1 = float(np.std(dists, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        se2 = float(np.std(sq, ddof=1) / np.sqrt(n)) if n > 1 else 0.0
        return cls(
            l1_mean=float(dists.mean()),
            l2_mean=float(sq.mean()),
            std_error_l1=se1,
            std_error_l2=se2,
            samples=n,
        )


def _measured_distance(res: CoupledRun, measure: str) -> float:
    if measure == MEASURE_FINAL:
        return float(res.dist[-1])
    if measure == MEASURE_AVERAGED:
        return float(np.linalg.norm(averaged_iterate(res.traj) - averaged_iterate(res.traj_neighbor)))
    raise ConfigurationError(f"unknown stability measure {measure!r}")


def _group_payloads(
    config, model, spec, n, num_datasets, indices_per_dataset, seeds_per_index, master_seed, measure
):
    payloads = []
    for g in range(num_datasets):
        payloads.append(
            (config, model, spec, n, g, indices_per_dataset, seeds_per_index, master_seed, measure)
        )
    return payloads


def _eval_dataset_group(payload):
    (config, model, spec, n, g, indices_per_dataset, seeds_per_index, master_seed, measure) = payload
    S = generate_dataset(spec, n, derive_seed(master_seed, _TAG_DATASET, g))
    if indices_per_dataset >= n:
        indices = np.arange(n)
    else:
        choice_rng = default_rng(derive_seed(master_seed, _TAG_INDEX_CHOICE, g))
        indices = np.sort(choice_rng.choice(n, size=indices_per_dataset, replace=False))
    dists = []
    fs_sum = np.zeros((config.T, config.k))
    runs = 0
    for i in indices:
        pair = make_neighbor(S, int(i), spec, derive_seed(master_seed, _TAG_NEIGHBOR, g, int(i)))
        for r in range(seeds_per_index):
            run_cfg = dc_replace(
                config, seed=derive_seed(master_seed, _TAG_ALGORITHM, g, int(i), r)
            )
            res = coupled_run(run_cfg, model, pair)
            dists.append(_measured_distance(res, measure))
            fs_sum += res.traj.fs_v
            runs += 1
    return np.asarray(dists), fs_sum, runs


def estimate_stability_detailed(
    config: LookaheadConfig,
    model: LossModel,
    spec: GeneratorSpec,
    n: int,
    num_datasets: int = 8,
    indices_per_dataset: int = 16,
    seeds_per_index: int = 4,
    master_seed: int = 0,
    measure: str = MEASURE_FINAL,
    exhaustive: bool = False,
    workers: int = 1,
) -> tuple[StabilityEstimate, np.ndarray]:
    """Stability estimate plus the mean inner-risk table of the unperturbed runs.

    The (T, k) risk table averages F_S(v_{tau,t}) over every run on S, which
    is exactly the quantity the stability bound evaluators consume.
    """
    if min(num_datasets, indices_per_dataset, seeds_per_index) < 1:
        raise ConfigurationError("all Monte Carlo counts must be >= 1")
    if measure == MEASURE_AVERAGED and config.record_level != RECORD_FULL:
        raise ConfigurationError("averaged-iterate stability needs full recording")
    if exhaustive:
        return _estimate_exhaustive(config, model, spec, n, num_datasets, master_seed, measure)

    payloads = _group_payloads(
        config, model, spec, n, num_datasets, indices_per_dataset, seeds_per_index, master_seed, measure
    )
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_eval_dataset_group, payloads))
    else:
        results = [_eval_dataset_group(p) for p in payloads]

    dists = np.concatenate([r[0] for r in results])
    fs_sum = sum(r[1] for r in results)
    runs = sum(r[2] for r in results)
    return StabilityEstimate.from_distances(dists), fs_sum / runs


def _estimate_exhaustive(config, model, spec, n, num_datasets, master_seed, measure):
    # Enumerate every minibatch index stream and every replacement index with
    # equal weight instead of sampling; only feasible when n^(T*k*b) is tiny.
    draws = config.T * config.k * config.b
    total = n**draws
    if total * n * num_datasets > _EXHAUSTIVE_LIMIT:
        raise ConfigurationError(
            f"exhaustive enumeration would need {total * n * num_datasets} runs"
        )
    dists = []
    fs_sum = np.zeros((config.T, config.k))
    runs = 0
    for g in range(num_datasets):
        S = generate_dataset(spec, n, derive_seed(master_seed, _TAG_DATASET, g))
        for i in range(n):
            pair = make_neighbor(S, i, spec, derive_seed(master_seed, _TAG_NEIGHBOR, g, i))
            for combo in itertools.product(range(n), repeat=draws):
                stream = np.asarray(combo, dtype=np.int64).reshape(config.T, config.k, config.b)
                res = coupled_run(config, model, pair, index_stream=stream)
                dists.append(_measured_distance(res, measure))
                fs_sum += res.traj.fs_v
                runs += 1
    return StabilityEstimate.from_distances(np.asarray(dists)), fs_sum / runs


def estimate_stability(
    config: LookaheadConfig,
    model: LossModel,
    spec: GeneratorSpec,
    n: int,
    num_datasets: int = 8,
    indices_per_dataset: int = 16,
    seeds_per_index: int = 4,
    master_seed: int = 0,
    measure: str = MEASURE_FINAL,
    exhaustive: bool = False,
    workers: int = 1,
) -> StabilityEstimate:
    """Monte Carlo estimate of l1 / l2 on-average model stability."""
    est, _ = estimate_stability_detailed(
        config,
        model,
        spec,
        n,
        num_datasets=num_datasets,
        indices_per_dataset=indices_per_dataset,
        seeds_per_index=seeds_per_index,
        master_seed=master_seed,
        measure=measure,
        exhaustive=exhaustive,
        workers=workers,
    )
    return est
