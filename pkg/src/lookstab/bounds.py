"""Evaluators for the stability, generalization and optimization bounds.

Every evaluator is a pure function of a BoundInputs record: same inputs give
bit-identical outputs.  The inner sums run over inner indices j = 0..k-1
(k terms), the conservative convention that matches the recorded risk tables.

The fs_v table holds seed-averaged empirical risks of the fast iterates,
fs_v[h-1, j] ~ E[F_S(v_{j,h})], which is what makes the bounds optimistic:
they shrink as the optimizer drives the empirical risk down.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .problems import ConfigurationError

STRONGLY_CONVEX_ETA_FLOOR = 2.0 * math.log(2.0)

BOUND_NAMES = (
    "CvxL1",
    "CvxL2",
    "StrCvxL1",
    "StrCvxL2",
    "GenGapL2",
    "GenGapL1",
    "CvxOpt",
    "StrCvxOpt",
    "CvxExcessShape",
    "StrCvxExcessShape",
)


@dataclass(frozen=True)
class BoundInputs:
    """Realized quantities every bound formula reads.

    eta is a constant or a (T, k) table.  fs_v is the (T, k) seed-averaged
    inner-risk table; fs_ws the minimum empirical risk F_S(w_S); dist0 the
    squared distance ||w0 - w_S||^2; f_star the optimal population risk.
    """

    alpha: float
    k: int
    T: int
    b: int
    n: int
    L: float
    mu: float = 0.0
    eta: float | np.ndarray = 0.0
    fs_v: np.ndarray | None = None
    fs_ws: float = 0.0
    dist0: float = 0.0
    f_star: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "L"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        for name in ("fs_ws", "dist0", "f_star", "mu"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative")
        if self.fs_v is not None:
            fs = np.asarray(self.fs_v, dtype=float)
            if fs.shape != (self.T, self.k):
                raise ConfigurationError(f"fs_v shape {fs.shape} != ({self.T}, {self.k})")
            if np.any(fs < 0):
                raise ConfigurationError("fs_v entries must be nonnegative")
            object.__setattr__(self, "fs_v", fs)

    def eta_table(self) -> np.ndarray:
        eta = self.eta
        if np.isscalar(eta):
            return np.full((self.T, self.k), float(eta))
        eta = np.asarray(eta, dtype=float)
        if eta.shape != (self.T, self.k):
            raise ConfigurationError(f"eta table shape {eta.shape} != ({self.T}, {self.k})")
        return eta

    def constant_eta(self) -> float:
        tbl = self.eta_table()
        lo, hi = float(tbl.min()), float(tbl.max())
        if hi - lo > 1e-15 * max(1.0, hi):
            raise ConfigurationError("this bound needs a constant step size")
        return hi


@dataclass(frozen=True)
class BoundReport:
    """One evaluated bound value plus a snapshot of the inputs used."""

    name: str
    value: float
    inputs_digest: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in BOUND_NAMES:
            raise ConfigurationError(f"unknown bound name {self.name!r}")
        if self.value < 0:
            raise ConfigurationError("bound values are nonnegative")


def _need_fs(inputs: BoundInputs, t: int) -> np.ndarray:
    if inputs.fs_v is None:
        raise ConfigurationError("this bound needs the fs_v risk table")
    if not 0 <= t < inputs.T:
        raise ConfigurationError(f"outer step t={t} outside recorded range [0, {inputs.T})")
    return inputs.fs_v


def cvx_l1_bound(inputs: BoundInputs, t: int) -> float:
    """Convex l1 stability bound for the slow weights after outer step t+1.

        alpha * sum_{h=1}^{t+1} sum_{j=0}^{k-1} 2 eta_{j,h} sqrt(2 L fs_v[j,h]) / n
    """
    fs = _need_fs(inputs, t)
    eta = inputs.eta_table()
    core = eta[: t + 1] * np.sqrt(2.0 * inputs.L * fs[: t + 1])
    return float(inputs.alpha * 2.0 / inputs.n * core.sum())


def cvx_l2_bound(inputs: BoundInputs, t: int) -> float:
    """Convex l2 stability bound.

        (16 a^2 L / (n b) + 16 a^2 L (t+1) k / n^2) * sum eta^2 fs_v
    """
    fs = _need_fs(inputs, t)
    eta = inputs.eta_table()
    coeff = 16.0 * inputs.alpha**2 * inputs.L / (inputs.n * inputs.b)
    coeff += 16.0 * inputs.alpha**2 * inputs.L * (t + 1) * inputs.k / inputs.n**2
    return float(coeff * (eta[: t + 1] ** 2 * fs[: t + 1]).sum())


def _tail_products(eta_row: np.ndarray, mu: float) -> np.ndarray:
    # prod_{j'=j+1}^{k-1} (1 - mu eta_{j'} / 2) for each j, empty product = 1
    factors = 1.0 - mu * eta_row / 2.0
    rev = np.concatenate(([1.0], np.cumprod(factors[::-1])[:-1]))[::-1]
    return rev


def strcvx_l1_bound(inputs: BoundInputs, t: int) -> float:
    """Strongly convex l1 stability bound with geometric outer damping.

        (2 a sqrt(2L) / n) * sum_{t'=1}^{t+1} (1 - a/2)^{t+1-t'}
            sum_j eta_{j,t'} sqrt(fs_v[j,t']) prod_{j'>j} (1 - mu eta_{j',t'}/2)
    """
    if inputs.mu <= 0:
        raise ConfigurationError("mu must be positive; use the convex bounds otherwise")
    fs = _need_fs(inputs, t)
    eta = inputs.eta_table()
    total = 0.0
    for h in range(1, t + 2):
        row_eta = eta[h - 1]
        tails = _tail_products(row_eta, inputs.mu)
        inner = float((row_eta * np.sqrt(fs[h - 1]) * tails).sum())
        total += (1.0 - inputs.alpha / 2.0) ** (t + 1 - h) * inner
    return float(2.0 * inputs.alpha * math.sqrt(2.0 * inputs.L) / inputs.n * total)


def strcvx_l2_bound(inputs: BoundInputs, t: int, squared_product: bool = True) -> float:
    """Strongly convex l2 stability bound.

        sum_{t'} sum_j (16 a^2 eta^2 / (n b) + 32 (t+1) a^2 eta / (n^2 mu))
            * fs_v[j,t'] * prod_{j'>j} (1 - mu eta_{j',t'}/2)^2

    squared_product=False switches the damping products to the unsquared
    variant; the squared form is the default.
    """
    if inputs.mu <= 0:
        raise ConfigurationError("mu must be positive; use the convex bounds otherwise")
    fs = _need_fs(inputs, t)
    eta = inputs.eta_table()
    power = 2.0 if squared_product else 1.0
    total = 0.0
    for h in range(1, t + 2):
        row_eta = eta[h - 1]
        tails = _tail_products(row_eta, inputs.mu) ** power
        coeff = 16.0 * inputs.alpha**2 * row_eta**2 / (inputs.n * inputs.b)
        coeff = coeff + 32.0 * (t + 1) * inputs.alpha**2 * row_eta / (inputs.n**2 * inputs.mu)
        total += float((coeff * fs[h - 1] * tails).sum())
    return total


def gen_gap_from_l2(L: float, gamma: float, mean_emp_risk: float, l2_avg: float) -> float:
    """Generalization-gap bound from l2 stability.

        (L / gamma) * mean_emp_risk + ((L + gamma) / 2) * l2_avg

    l2_avg is the per-index average squared distance, either the Monte Carlo
    estimate or an evaluated l2 stability bound.
    """
    if gamma <= 0:
        raise ConfigurationError("gamma must be positive")
    return (L / gamma) * mean_emp_risk + 0.5 * (L + gamma) * l2_avg


def gen_gap_from_l1(g_effective: float, l1_avg: float) -> float:
    """Generalization-gap bound from l1 stability: G_effective * l1_avg.

    g_effective is an empirical max gradient norm over a probe set, standing
    in for the unattainable supremum; report it alongside the value.
    """
    return g_effective * l1_avg


def cvx_opt_bound(inputs: BoundInputs) -> float:
    """Optimization-error bound for the averaged fast iterate, convex case.

        b dist0 / (2 a eta k T (b - L eta (b+1))) + L eta fs_ws / (b - L eta (b+1))

    Requires a constant step with eta < b / (L (b+1)), strictly.
    """
    eta = inputs.constant_eta()
    denom = inputs.b - inputs.L * eta * (inputs.b + 1)
    if denom <= 0:
        raise ConfigurationError("step size must satisfy eta < b / (L (b+1))")
    first = inputs.b * inputs.dist0 / (2.0 * inputs.alpha * eta * inputs.k * inputs.T * denom)
    second = inputs.L * eta * inputs.fs_ws / denom
    return float(first + second)


def _strcvx_required_eta(inputs: BoundInputs) -> float:
    return inputs.b * inputs.mu / (2.0 * inputs.L**2 * (inputs.b + 1))


def strcvx_opt_bound(inputs: BoundInputs) -> float:
    """Optimization-error bound for the final slow iterate, strongly convex case.

        (L/2) e^{-(3/4) a k mu eta T} dist0
        + (L a / 2) [sum_{t=0}^{T-1} e^{-(3/4) a k mu eta t}]
                    [sum_{k'=0}^{k-1} e^{-(3/4) mu eta k'}] (2 eta^2 L / b) fs_ws

    The fixed step eta = b mu / (2 L^2 (b+1)) is part of the statement; any
    other step is rejected.
    """
    if inputs.mu <= 0:
        raise ConfigurationError("mu must be positive")
    eta = inputs.constant_eta()
    required = _strcvx_required_eta(inputs)
    if abs(eta - required) > 1e-12 * max(1.0, required):
        raise ConfigurationError(
            f"this bound fixes eta = b*mu/(2*L^2*(b+1)) = {required:g}, got {eta:g}"
        )
    rate_outer = 0.75 * inputs.alpha * inputs.k * inputs.mu * eta
    rate_inner = 0.75 * inputs.mu * eta
    first = 0.5 * inputs.L * math.exp(-rate_outer * inputs.T) * inputs.dist0
    outer_sum = float(np.exp(-rate_outer * np.arange(inputs.T)).sum())
    inner_sum = float(np.exp(-rate_inner * np.arange(inputs.k)).sum())
    second = 0.5 * inputs.L * inputs.alpha * outer_sum * inner_sum
    second *= 2.0 * eta**2 * inputs.L / inputs.b * inputs.fs_ws
    return float(first + second)


def strcvx_contraction_factor(inputs: BoundInputs) -> float:
    """Outer-loop contraction factor rho = 1 - a (1 - (1 - 1.5 mu eta)^k)."""
    if inputs.mu <= 0:
        raise ConfigurationError("mu must be positive")
    eta = inputs.constant_eta()
    return 1.0 - inputs.alpha * (1.0 - (1.0 - 1.5 * inputs.mu * eta) ** inputs.k)


def strcvx_param_error_bound(inputs: BoundInputs, t: int) -> float:
    """Bound on E||w_t - w_S||^2: geometric decay plus a steady-state floor.

        rho^t dist0 + a sum_{t'=0}^{t-1} rho^{t'} S_k (2 L eta^2 / b) fs_ws

    with S_k = sum_{k'=0}^{k-1} (1 - 1.5 mu eta)^{k'}.  Requires the same
    fixed step as strcvx_opt_bound.
    """
    if t < 0:
        raise ConfigurationError("t must be nonnegative")
    eta = inputs.constant_eta()
    required = _strcvx_required_eta(inputs)
    if abs(eta - required) > 1e-12 * max(1.0, required):
        raise ConfigurationError(
            f"this bound fixes eta = b*mu/(2*L^2*(b+1)) = {required:g}, got {eta:g}"
        )
    rho = strcvx_contraction_factor(inputs)
    decay = 1.0 - 1.5 * inputs.mu * eta
    s_k = float(np.cumprod(np.concatenate(([1.0], np.full(inputs.k - 1, decay)))).sum())
    noise = 2.0 * inputs.L * eta**2 / inputs.b * inputs.fs_ws
    geo = float(np.cumprod(np.concatenate(([1.0], np.full(max(t - 1, 0), rho)))).sum()) if t > 0 else 0.0
    return float(rho**t * inputs.dist0 + inputs.alpha * geo * s_k * noise)


@dataclass(frozen=True)
class ConvexPreset:
    """Hyperparameters for the convex excess-risk regimes.

    regime 1 (f_star >= 1/n): eta = b / sqrt(n f_star), R ~ n/b,
    gamma = sqrt(n f_star); valid only when b <= sqrt(n f_star) / (2L).
    regime 2 (f_star < 1/n): eta = 1/(2L), R = n, gamma = 1.
    """

    eta: float
    R: int
    gamma: float
    regime: int
    b_valid: bool


def preset_convex(f_star: float, n: int, L: float, b: int) -> ConvexPreset:
    if f_star < 0:
        raise ConfigurationError("f_star must be nonnegative")
    if n < 1:
        raise ConfigurationError("n must be >= 1")
    if f_star >= 1.0 / n:
        root = math.sqrt(n * f_star)
        return ConvexPreset(
            eta=b / root,
            R=math.ceil(n / b),
            gamma=root,
            regime=1,
            b_valid=b <= root / (2.0 * L),
        )
    return ConvexPreset(eta=1.0 / (2.0 * L), R=n, gamma=1.0, regime=2, b_valid=True)


@dataclass(frozen=True)
class StronglyConvexPreset:
    """Fast-rate hyperparameters: fixed step, long inner loop, log outer loop.

    alpha_ok records whether alpha <= b mu / (2 ln2 (b+1) L); when it holds,
    the produced (eta, k) sit inside the strongly convex step-size window
    2 ln2 / (k mu) <= eta <= 1/L.
    """

    eta: float
    k: int
    T: int
    alpha_ok: bool


def preset_strongly_convex(
    L: float, mu: float, alpha: float, b: int, n: int, c_T: float = 1.0
) -> StronglyConvexPreset:
    if mu <= 0:
        raise ConfigurationError("mu must be positive")
    if not 0 < alpha <= 1:
        raise ConfigurationError("alpha must lie in (0, 1]")
    if b < 1 or n < 1:
        raise ConfigurationError("b and n must be >= 1")
    eta = b * mu / (2.0 * L**2 * (b + 1))
    k = math.ceil(2.0 * L / (alpha * mu))
    if mu * n <= 1.0:
        warnings.warn("mu * n <= 1: log(mu n) nonpositive, using T = 1", stacklevel=2)
        T = 1
    else:
        T = max(1, math.ceil(c_T * math.log(mu * n)))
    alpha_ok = alpha <= b * mu / (2.0 * math.log(2.0) * (b + 1) * L)
    return StronglyConvexPreset(eta=eta, k=k, T=T, alpha_ok=alpha_ok)


def cvx_excess_shape(inputs: BoundInputs, R: int) -> float:
    """Shape of the convex excess-risk bound with the hidden constant set to 1.

        L eta f*/b + 1/(a eta R) + (f* + L eta / b + 1/(a eta R)) / gamma
        + L (L + gamma) a^2 eta^2 (1/(n b) + R/n^2) (R f* + R L eta / b + 1/(a eta))

    Use only for trend and shape analysis, never as a certified bound.
    """
    if inputs.gamma <= 0:
        raise ConfigurationError("gamma must be positive")
    if R < 1:
        raise ConfigurationError("R must be >= 1")
    eta = inputs.constant_eta()
    a = inputs.alpha
    inv = 1.0 / (a * eta * R)
    term1 = inputs.L * eta * inputs.f_star / inputs.b
    term2 = inv
    term3 = (inputs.f_star + inputs.L * eta / inputs.b + inv) / inputs.gamma
    term4 = (
        inputs.L
        * (inputs.L + inputs.gamma)
        * a**2
        * eta**2
        * (1.0 / (inputs.n * inputs.b) + R / inputs.n**2)
        * (R * inputs.f_star + R * inputs.L * eta / inputs.b + 1.0 / (a * eta))
    )
    return float(term1 + term2 + term3 + term4)


def make_report(name: str, value: float, **digest) -> BoundReport:
    return BoundReport(name=name, value=value, inputs_digest=dict(digest))
