import numpy as np
import pytest

from lookstab.coupling import (
    MEASURE_AVERAGED,
    NeighborPair,
    StabilityEstimate,
    _TAG_DATASET,
    _TAG_NEIGHBOR,
    coupled_run,
    derive_seed,
    estimate_stability,
    estimate_stability_detailed,
    make_neighbor,
)
from lookstab.optimizer import LookaheadConfig, RECORD_SLOW_ONLY, draw_index_stream
from lookstab.problems import (
    ConfigurationError,
    GeneratorSpec,
    generate_dataset,
    loss_grad,
    minibatch_grad,
)

SPEC = GeneratorSpec(kind="least_squares", d=3, b_x=1.0, sigma=0.5)


def test_make_neighbor_contracts():
    S = generate_dataset(SPEC, 6, 1)
    pair = make_neighbor(S, 2, SPEC, 55)
    assert pair.replaced.n == S.n
    mask = np.arange(6) != 2
    assert np.array_equal(pair.replaced.x[mask], S.x[mask])
    assert np.array_equal(pair.replaced.x[2], pair.z_prime.x)
    again = make_neighbor(S, 2, SPEC, 55)
    assert np.array_equal(again.z_prime.x, pair.z_prime.x)
    assert again.z_prime.y == pair.z_prime.y
    with pytest.raises(ConfigurationError):
        make_neighbor(S, 6, SPEC, 0)


def test_identical_replacement_gives_exact_zero_distance():
    S = generate_dataset(SPEC, 10, 3)
    pair = NeighborPair(dataset=S, index=4, z_prime=S.point(4), replaced=S.replace_point(4, S.point(4)))
    config = LookaheadConfig(alpha=0.5, k=3, T=8, b=2, eta=0.5, seed=7)
    res = coupled_run(config, SPEC.model(), pair)
    assert np.all(res.dist == 0.0)
    assert np.all(res.dist_sq == 0.0)


def test_tiny_alpha_freezes_slow_weights():
    S = generate_dataset(SPEC, 10, 3)
    pair = make_neighbor(S, 1, SPEC, 4)
    config = LookaheadConfig(alpha=1e-12, k=3, T=5, b=1, eta=0.5, seed=7)
    res = coupled_run(config, SPEC.model(), pair)
    assert np.all(res.dist <= 1e-9)


def test_one_step_hand_simulation():
    spec = GeneratorSpec(kind="least_squares", d=2, b_x=1.0, sigma=0.8)
    model = spec.model()
    S = generate_dataset(spec, 2, 9)
    pair = make_neighbor(S, 0, spec, 10)
    alpha, eta = 0.5, 0.4
    config = LookaheadConfig(alpha=alpha, k=1, T=1, b=1, eta=eta, seed=0)
    # batch hits the replaced index: divergence is alpha*eta*||grad difference||
    hit = coupled_run(config, model, pair, index_stream=np.array([[[0]]]))
    w0 = np.zeros(2)
    expected = alpha * eta * np.linalg.norm(
        loss_grad(model, w0, S.point(0)) - loss_grad(model, w0, pair.z_prime)
    )
    assert hit.dist[-1] == pytest.approx(expected, rel=1e-12)
    # batch misses the replaced index: no divergence at all
    miss = coupled_run(config, model, pair, index_stream=np.array([[[1]]]))
    assert miss.dist[-1] == 0.0


def test_degenerate_lookahead_matches_manual_sgd_coupling():
    spec = GeneratorSpec(kind="least_squares", d=2, b_x=1.0, sigma=0.5)
    model = spec.model()
    S = generate_dataset(spec, 8, 21)
    pair = make_neighbor(S, 3, spec, 22)
    config = LookaheadConfig(alpha=1.0, k=1, T=12, b=2, eta=0.4, seed=5)
    res = coupled_run(config, model, pair)
    stream = draw_index_stream(5, 8, 2, 1, 12)
    w = np.zeros(2)
    w_nb = np.zeros(2)
    for t in range(12):
        w = w - 0.4 * minibatch_grad(model, w, S, stream[t, 0])
        w_nb = w_nb - 0.4 * minibatch_grad(model, w_nb, pair.replaced, stream[t, 0])
    assert res.dist[-1] == np.linalg.norm(w - w_nb)


def test_point_mass_generator_estimates_zero():
    degenerate = GeneratorSpec(kind="least_squares", d=2, b_x=0.0, sigma=0.0)
    config = LookaheadConfig(alpha=0.5, k=2, T=3, b=1, eta=0.5, seed=0)
    est = estimate_stability(
        config, degenerate.model(), degenerate, 4,
        num_datasets=1, indices_per_dataset=4, seeds_per_index=1,
    )
    assert est.l1_mean == 0.0 and est.l2_mean == 0.0


def test_exhaustive_enumeration_matches_closed_form():
    spec = GeneratorSpec(kind="least_squares", d=2, b_x=1.0, sigma=0.7)
    model = spec.model()
    alpha, eta, n, master = 0.5, 0.4, 4, 77
    config = LookaheadConfig(alpha=alpha, k=1, T=1, b=1, eta=eta, seed=0)
    est, _ = estimate_stability_detailed(
        config, model, spec, n, num_datasets=1, master_seed=master, exhaustive=True
    )
    S = generate_dataset(spec, n, derive_seed(master, _TAG_DATASET, 0))
    w0 = np.zeros(2)
    dists = []
    for i in range(n):
        zp = generate_dataset(spec, 1, derive_seed(master, _TAG_NEIGHBOR, 0, i)).point(0)
        gap = alpha * eta * np.linalg.norm(loss_grad(model, w0, S.point(i)) - loss_grad(model, w0, zp))
        dists.extend([gap] + [0.0] * (n - 1))
    closed_l1 = float(np.mean(dists))
    closed_l2 = float(np.mean(np.square(dists)))
    assert abs(est.l1_mean - closed_l1) <= 1e-12 * closed_l1
    assert abs(est.l2_mean - closed_l2) <= 1e-12 * closed_l2
    assert est.samples == n * n


def test_exhaustive_guard_rejects_large_grids():
    config = LookaheadConfig(alpha=0.5, k=3, T=4, b=2, eta=0.5, seed=0)
    with pytest.raises(ConfigurationError):
        estimate_stability(config, SPEC.model(), SPEC, 10, exhaustive=True)


def test_estimator_determinism_and_parallel_equivalence():
    config = LookaheadConfig(alpha=0.5, k=2, T=4, b=1, eta=0.5, seed=0)
    kwargs = dict(num_datasets=2, indices_per_dataset=3, seeds_per_index=2, master_seed=11)
    a = estimate_stability(config, SPEC.model(), SPEC, 8, **kwargs)
    b = estimate_stability(config, SPEC.model(), SPEC, 8, **kwargs)
    assert a == b
    c = estimate_stability(config, SPEC.model(), SPEC, 8, workers=2, **kwargs)
    assert a == c


def test_jensen_consistency():
    config = LookaheadConfig(alpha=0.5, k=3, T=6, b=2, eta=0.5, seed=0)
    est = estimate_stability(
        config, SPEC.model(), SPEC, 16,
        num_datasets=3, indices_per_dataset=8, seeds_per_index=2, master_seed=5,
    )
    combined = 3.0 * (est.std_error_l2 + 2.0 * est.l1_mean * est.std_error_l1)
    assert est.l1_mean**2 <= est.l2_mean + combined


def test_averaged_iterate_measure():
    config = LookaheadConfig(alpha=0.5, k=2, T=4, b=1, eta=0.5, seed=0)
    est = estimate_stability(
        config, SPEC.model(), SPEC, 8,
        num_datasets=1, indices_per_dataset=2, seeds_per_index=1,
        master_seed=13, measure=MEASURE_AVERAGED,
    )
    assert est.l1_mean >= 0.0
    slow = LookaheadConfig(alpha=0.5, k=2, T=4, b=1, eta=0.5, record_level=RECORD_SLOW_ONLY)
    with pytest.raises(ConfigurationError):
        estimate_stability(
            slow, SPEC.model(), SPEC, 8,
            num_datasets=1, indices_per_dataset=2, seeds_per_index=1,
            measure=MEASURE_AVERAGED,
        )


def test_estimate_requires_positive_counts():
    config = LookaheadConfig(alpha=0.5, k=1, T=1, b=1, eta=0.5)
    with pytest.raises(ConfigurationError):
        estimate_stability(config, SPEC.model(), SPEC, 4, num_datasets=0)
    with pytest.raises(ConfigurationError):
        StabilityEstimate.from_distances(np.array([]))


def _sweep_cell(alpha, k, T, b, master_seed=9):
    config = LookaheadConfig(alpha=alpha, k=k, T=T, b=b, eta=0.5, record_level=RECORD_SLOW_ONLY)
    return estimate_stability(
        config, SPEC.model(), SPEC, 32,
        num_datasets=3, indices_per_dataset=8, seeds_per_index=3, master_seed=master_seed,
    )


def test_l1_trend_in_alpha_grid():
    # shared seeds across the grid; at most one inversion, and only within 2 SE
    grid = (0.1, 0.3, 0.5, 0.8, 1.0)
    ests = [_sweep_cell(a, 3, 10, 1) for a in grid]
    inversions = 0
    for prev, cur in zip(ests, ests[1:]):
        if cur.l1_mean < prev.l1_mean:
            inversions += 1
            assert prev.l1_mean - cur.l1_mean <= 2 * (prev.std_error_l1 + cur.std_error_l1)
    assert inversions <= 1


def test_l2_trend_in_batch_size_fixed_budget():
    # total gradient draws T*k*b held at 48 while b grows
    cells = [(1, 16), (2, 8), (4, 4), (8, 2)]
    ests = [_sweep_cell(0.5, 3, T, b) for b, T in cells]
    inversions = 0
    for prev, cur in zip(ests, ests[1:]):
        if cur.l2_mean > prev.l2_mean:
            inversions += 1
            assert cur.l2_mean - prev.l2_mean <= 2 * (prev.std_error_l2 + cur.std_error_l2)
    assert inversions <= 1
