"""Synthetic convex loss families with exact smoothness constants.

Three per-example losses on z = (x, y):

    least_squares   f(w; z) = 0.5 * (<w, x> - y)^2
    ridge           f(w; z) = 0.5 * (<w, x> - y)^2 + (lam / 2) * ||w||^2
    logistic        f(w; z) = log(1 + exp(-y * <w, x>)),  y in {-1, +1}

Features are drawn uniformly from the ball of radius b_x, which makes the
declared smoothness constants exact over the whole support:

    least_squares   L = b_x^2,           mu = 0
    ridge           L = b_x^2 + lam,     mu = lam
    logistic        L = b_x^2 / 4,       mu = 0

All functions here are pure; datasets and models are immutable after
construction and safe to share across threads or processes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.random import default_rng
from scipy.optimize import minimize
from scipy.special import expit

LEAST_SQUARES = "least_squares"
RIDGE = "ridge"
LOGISTIC = "logistic"
KINDS = (LEAST_SQUARES, RIDGE, LOGISTIC)

# Gaussian label noise is clipped at this many standard deviations so the
# generator's declared label bound holds for every sample.  The variance
# distortion is below 1e-8 relative and is ignored by the analytic risks.
NOISE_CLIP_SIGMAS = 6.0

GRAD_TOL = 1e-8
LOGISTIC_ORACLE_TOL = 1e-10
LOGISTIC_ORACLE_MAX_ITER = 10**6


class ConfigurationError(ValueError):
    """Invalid configuration or violated operation precondition."""


class NoUniqueMinimizerError(ConfigurationError):
    """Singular normal equations: the problem has no unique minimizer."""


@dataclass(frozen=True)
class DataPoint:
    """A single example z = (x, y) with feature vector x and scalar label y."""

    x: np.ndarray
    y: float


@dataclass(frozen=True)
class Dataset:
    """An ordered sample of n examples; index i is meaningful for replacement."""

    x: np.ndarray  # (n, d)
    y: np.ndarray  # (n,)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.ndim != 2:
            raise ConfigurationError("dataset features must be a 2-d array")
        if y.shape != (x.shape[0],):
            raise ConfigurationError("label array must have one entry per row")
        if x.shape[0] < 1:
            raise ConfigurationError("dataset must contain at least one point")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def point(self, i: int) -> DataPoint:
        return DataPoint(x=self.x[i].copy(), y=float(self.y[i]))

    def replace_point(self, i: int, z: DataPoint) -> "Dataset":
        """Return a copy with position i replaced by z. Self is unchanged."""
        if not 0 <= i < self.n:
            raise ConfigurationError(f"index {i} out of range for n={self.n}")
        x = self.x.copy()
        y = self.y.copy()
        x[i] = np.asarray(z.x, dtype=float)
        y[i] = float(z.y)
        return Dataset(x=x, y=y)

    def to_csv(self, path) -> None:
        """Write the sample as CSV with header x_0,...,x_{d-1},y."""
        cols = [f"x_{j}" for j in range(self.d)] + ["y"]
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for i in range(self.n):
                vals = [format(v, ".17g") for v in self.x[i]] + [format(self.y[i], ".17g")]
                fh.write(",".join(vals) + "\n")


@dataclass(frozen=True)
class LossModel:
    """A loss family together with its exact constants.

    L is the per-example smoothness constant, worst case over the generator's
    support (so step-size constraints are dataset independent).  mu is the
    strong-convexity constant: 0 except for ridge, where mu = lam.
    """

    kind: str
    d: int
    L: float
    mu: float
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown loss kind {self.kind!r}")
        if self.d < 1:
            raise ConfigurationError("dimension must be >= 1")
        if self.L < 0 or self.mu < 0 or self.lam < 0:
            raise ConfigurationError("constants must be nonnegative")

    @classmethod
    def least_squares(cls, d: int, b_x: float = 1.0) -> "LossModel":
        return cls(kind=LEAST_SQUARES, d=d, L=b_x**2, mu=0.0)

    @classmethod
    def ridge(cls, d: int, lam: float, b_x: float = 1.0) -> "LossModel":
        if lam <= 0:
            raise ConfigurationError("ridge requires lam > 0")
        return cls(kind=RIDGE, d=d, L=b_x**2 + lam, mu=lam, lam=lam)

    @classmethod
    def logistic(cls, d: int, b_x: float = 1.0) -> "LossModel":
        return cls(kind=LOGISTIC, d=d, L=b_x**2 / 4.0, mu=0.0)


@dataclass(frozen=True)
class GeneratorSpec:
    """Sampling distribution for synthetic examples.

    Features are uniform on the ball of radius b_x.  Labels:

        least_squares / ridge   y = <w_true, x> + clipped Gaussian(0, sigma^2)
        logistic                y = +1 with probability expit(<w_true, x>), else -1
                                (sigma is ignored)

    w_true defaults to the unit-norm constant vector ones(d)/sqrt(d).
    """

    kind: str
    d: int
    b_x: float = 1.0
    sigma: float = 0.0
    lam: float = 0.0
    w_true: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown generator kind {self.kind!r}")
        if self.d < 1:
            raise ConfigurationError("dimension must be >= 1")
        if self.b_x < 0:
            raise ConfigurationError("feature-norm bound b_x must be >= 0")
        if self.sigma < 0:
            raise ConfigurationError("label noise sigma must be >= 0")
        if self.kind == RIDGE and self.lam <= 0:
            raise ConfigurationError("ridge generator requires lam > 0")
        if self.kind != RIDGE and self.lam != 0.0:
            raise ConfigurationError("lam is only meaningful for ridge")
        if self.w_true is None:
            w = np.ones(self.d) / np.sqrt(self.d)
        else:
            w = np.asarray(self.w_true, dtype=float)
            if w.shape != (self.d,):
                raise ConfigurationError("w_true must have shape (d,)")
        object.__setattr__(self, "w_true", w)

    def model(self) -> LossModel:
        if self.kind == LEAST_SQUARES:
            return LossModel.least_squares(self.d, self.b_x)
        if self.kind == RIDGE:
            return LossModel.ridge(self.d, self.lam, self.b_x)
        return LossModel.logistic(self.d, self.b_x)

    @property
    def label_bound(self) -> float:
        """Declared bound B_y with |y| <= B_y for every generated sample."""
        if self.kind == LOGISTIC:
            return 1.0
        return float(np.linalg.norm(self.w_true) * self.b_x + NOISE_CLIP_SIGMAS * self.sigma)

    @property
    def feature_second_moment(self) -> float:
        """Scalar s with E[x x^T] = s * I for the uniform ball of radius b_x."""
        return self.b_x**2 / (self.d + 2)

    def population_risk(self, w: np.ndarray) -> float:
        """Closed-form population risk, available for least squares and ridge."""
        if self.kind == LOGISTIC:
            raise ConfigurationError("no closed-form population risk for logistic")
        w = np.asarray(w, dtype=float)
        s = self.feature_second_moment
        diff = w - self.w_true
        value = 0.5 * s * float(diff @ diff) + 0.5 * self.sigma**2
        if self.kind == RIDGE:
            value += 0.5 * self.lam * float(w @ w)
        return value

    def optimal_weights(self) -> np.ndarray:
        """Population minimizer w*.

        Least squares: w_true.  Ridge with isotropic features: shrunk w_true.
        Logistic with the well-specified link: w_true.
        """
        if self.kind == RIDGE:
            s = self.feature_second_moment
            return (s / (s + self.lam)) * self.w_true
        return self.w_true.copy()

    def optimal_risk(self) -> float:
        """F(w*) in closed form, available for least squares and ridge."""
        if self.kind == LOGISTIC:
            raise ConfigurationError("estimate the logistic optimal risk on a held-out sample")
        if self.kind == LEAST_SQUARES:
            return 0.5 * self.sigma**2
        s = self.feature_second_moment
        shrink = s / (s + self.lam)
        wnorm2 = float(self.w_true @ self.w_true)
        return 0.5 * self.lam * shrink * wnorm2 + 0.5 * self.sigma**2


def _uniform_ball(rng, n: int, d: int, radius: float) -> np.ndarray:
    g = rng.standard_normal((n, d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    u = rng.random((n, 1))
    return radius * (u ** (1.0 / d)) * (g / norms)


def generate_dataset(spec: GeneratorSpec, n: int, seed: int) -> Dataset:
    """Draw n i.i.d. examples; bit-identical for identical (spec, n, seed)."""
    if n < 1:
        raise ConfigurationError("dataset size n must be >= 1")
    rng = default_rng(seed)
    x = _uniform_ball(rng, n, spec.d, spec.b_x)
    if spec.kind == LOGISTIC:
        p = expit(x @ spec.w_true)
        y = np.where(rng.random(n) < p, 1.0, -1.0)
    else:
        y = x @ spec.w_true
        if spec.sigma > 0:
            noise = rng.normal(0.0, spec.sigma, n)
            clip = NOISE_CLIP_SIGMAS * spec.sigma
            y = y + np.clip(noise, -clip, clip)
    return Dataset(x=x, y=y)


def _check_dims(model: LossModel, w: np.ndarray, d_data: int) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.shape != (model.d,):
        raise ConfigurationError(f"weight vector has shape {w.shape}, expected ({model.d},)")
    if d_data != model.d:
        raise ConfigurationError(f"data dimension {d_data} does not match model dimension {model.d}")
    return w


def _example_losses(model: LossModel, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if model.kind == LOGISTIC:
        m = y * (x @ w)
        return np.logaddexp(0.0, -m)
    r = x @ w - y
    vals = 0.5 * r**2
    if model.kind == RIDGE:
        vals = vals + 0.5 * model.lam * float(w @ w)
    return vals


def _mean_grad(model: LossModel, w: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    n = x.shape[0]
    if model.kind == LOGISTIC:
        m = y * (x @ w)
        coef = -y * expit(-m)
        return x.T @ coef / n
    r = x @ w - y
    g = x.T @ r / n
    if model.kind == RIDGE:
        g = g + model.lam * w
    return g


def loss_value(model: LossModel, w: np.ndarray, z: DataPoint) -> float:
    """Per-example loss f(w; z); nonnegative for all inputs."""
    x = np.asarray(z.x, dtype=float)
    w = _check_dims(model, w, x.shape[0])
    return float(_example_losses(model, w, x[None, :], np.array([z.y]))[0])


def loss_grad(model: LossModel, w: np.ndarray, z: DataPoint) -> np.ndarray:
    """Analytic gradient of loss_value with respect to w."""
    x = np.asarray(z.x, dtype=float)
    w = _check_dims(model, w, x.shape[0])
    return _mean_grad(model, w, x[None, :], np.array([z.y]))


def empirical_risk(model: LossModel, w: np.ndarray, S: Dataset) -> float:
    """Mean of loss_value over all points of S."""
    w = _check_dims(model, w, S.d)
    return float(np.mean(_example_losses(model, w, S.x, S.y)))


def empirical_grad(model: LossModel, w: np.ndarray, S: Dataset) -> np.ndarray:
    """Mean of loss_grad over all points of S."""
    w = _check_dims(model, w, S.d)
    return _mean_grad(model, w, S.x, S.y)


def minibatch_grad(model: LossModel, w: np.ndarray, S: Dataset, indices: np.ndarray) -> np.ndarray:
    """Mean gradient over the rows of S selected by indices (with repeats)."""
    w = _check_dims(model, w, S.d)
    indices = np.asarray(indices)
    if indices.size == 0:
        raise ConfigurationError("minibatch must contain at least one index")
    if indices.min() < 0 or indices.max() >= S.n:
        raise ConfigurationError("minibatch index out of range")
    return _mean_grad(model, w, S.x[indices], S.y[indices])


def _logistic_minimizer(model: LossModel, S: Dataset) -> np.ndarray:
    # Quasi-Newton start (deterministic), then plain full-batch descent at
    # step 1/L until the gradient norm tolerance is met.  Pure descent alone
    # cannot reach 1e-10 in any reasonable iteration budget.
    def fun(w):
        return empirical_risk(model, w, S), empirical_grad(model, w, S)

    res = minimize(
        fun,
        x0=np.zeros(model.d),
        jac=True,
        method="L-BFGS-B",
        options={"maxiter": 100_000, "gtol": 1e-13, "ftol": 0.0},
    )
    w = np.asarray(res.x, dtype=float)
    step = 1.0 / model.L
    for _ in range(LOGISTIC_ORACLE_MAX_ITER):
        g = empirical_grad(model, w, S)
        if np.linalg.norm(g) <= LOGISTIC_ORACLE_TOL:
            break
        w = w - step * g
    return w


def empirical_minimizer(model: LossModel, S: Dataset) -> tuple[np.ndarray, float]:
    """Minimizer w_S of the empirical risk and its value F_S(w_S).

    Least squares solves the normal equations and fails on singular designs.
    Ridge is always solvable.  Logistic uses the deterministic descent oracle.
    """
    if S.d != model.d:
        raise ConfigurationError("dataset dimension does not match model")
    x, y = S.x, S.y
    if model.kind == LEAST_SQUARES:
        gram = x.T @ x
        try:
            w = np.linalg.solve(gram, x.T @ y)
        except np.linalg.LinAlgError as exc:
            raise NoUniqueMinimizerError("no unique minimizer: singular normal equations") from exc
    elif model.kind == RIDGE:
        n = S.n
        w = np.linalg.solve(x.T @ x / n + model.lam * np.eye(model.d), x.T @ y / n)
    else:
        w = _logistic_minimizer(model, S)
    gnorm = float(np.linalg.norm(empirical_grad(model, w, S)))
    if gnorm > GRAD_TOL:
        raise NoUniqueMinimizerError(
            f"no unique minimizer: residual gradient norm {gnorm:.3e} exceeds {GRAD_TOL}"
        )
    return w, empirical_risk(model, w, S)


@dataclass(frozen=True)
class SelfBoundingReport:
    """Probe results for ||grad f||^2 <= 2 L f."""

    n_probes: int
    violations: int
    max_ratio: float
    max_excess: float
    passed: bool


def check_self_bounding(
    model: LossModel, probes: list[tuple[np.ndarray, DataPoint]], slack: float = 1e-9
) -> SelfBoundingReport:
    """Check the self-bounding inequality on every probe (w, z).

    A probe with f(w; z) = 0 must have a zero gradient, which the same
    inequality enforces through the absolute slack.
    """
    violations = 0
    max_ratio = 0.0
    max_excess = -np.inf
    for w, z in probes:
        f = loss_value(model, w, z)
        g2 = float(np.sum(loss_grad(model, w, z) ** 2))
        bound = 2.0 * model.L * f
        excess = g2 - bound
        max_excess = max(max_excess, excess)
        if bound > 0:
            max_ratio = max(max_ratio, g2 / bound)
        if excess > slack:
            violations += 1
    return SelfBoundingReport(
        n_probes=len(probes),
        violations=violations,
        max_ratio=max_ratio,
        max_excess=max_excess,
        passed=violations == 0,
    )


@dataclass(frozen=True)
class GradientMapReport:
    """Probe results for the gradient-step map w -> w - eta * grad f(w; z)."""

    n_probes: int
    eta: float
    nonexpansive_violations: int
    contraction_violations: int
    cocoercivity_violations: int
    max_map_ratio: float
    passed: bool


def check_gradient_maps(
    model: LossModel,
    eta: float,
    probes: list[tuple[np.ndarray, np.ndarray, DataPoint]],
    atol: float = 1e-12,
) -> GradientMapReport:
    """Check non-expansiveness, strong-convexity contraction and cocoercivity.

    Requires eta <= 2/L; contraction checks additionally require mu > 0 and
    eta <= 1/L.  Cocoercivity is checked per example:
    ||g1 - g2||^2 <= L <g1 - g2, w1 - w2>.
    """
    if eta <= 0:
        raise ConfigurationError("eta must be positive")
    if model.L > 0 and eta > 2.0 / model.L * (1 + 1e-12):
        raise ConfigurationError("non-expansiveness requires eta <= 2/L")
    if model.mu > 0 and eta > 1.0 / model.L * (1 + 1e-12):
        raise ConfigurationError("contraction checks require eta <= 1/L")

    nonexp = 0
    contr = 0
    coco = 0
    max_ratio = 0.0
    for w1, w2, z in probes:
        w1 = np.asarray(w1, dtype=float)
        w2 = np.asarray(w2, dtype=float)
        g1 = loss_grad(model, w1, z)
        g2 = loss_grad(model, w2, z)
        dist = float(np.linalg.norm(w1 - w2))
        mapped = float(np.linalg.norm((w1 - eta * g1) - (w2 - eta * g2)))
        if mapped > dist + atol:
            nonexp += 1
        if dist > 0:
            max_ratio = max(max_ratio, mapped / dist)
        if model.mu > 0:
            if mapped > (1.0 - eta * model.mu / 2.0) * dist + atol:
                contr += 1
            if mapped**2 > (1.0 - eta * model.mu) * dist**2 + atol:
                contr += 1
        gd = g1 - g2
        lhs = float(gd @ gd)
        rhs = model.L * float(gd @ (w1 - w2))
        if lhs > rhs + atol:
            coco += 1
    return GradientMapReport(
        n_probes=len(probes),
        eta=eta,
        nonexpansive_violations=nonexp,
        contraction_violations=contr,
        cocoercivity_violations=coco,
        max_map_ratio=max_ratio,
        passed=nonexp == 0 and contr == 0 and coco == 0,
    )


def probe_points(spec: GeneratorSpec, n_probes: int, seed: int, weight_scale: float = 2.0):
    """Random (w, z) probes for property checks, deterministic given seed."""
    rng = default_rng(seed)
    data = generate_dataset(spec, n_probes, seed)
    return [
        (weight_scale * rng.standard_normal(spec.d), data.point(i)) for i in range(n_probes)
    ]


def probe_pairs(spec: GeneratorSpec, n_probes: int, seed: int, weight_scale: float = 2.0):
    """Random (w1, w2, z) probes for gradient-map checks."""
    rng = default_rng(seed)
    data = generate_dataset(spec, n_probes, seed)
    return [
        (
            weight_scale * rng.standard_normal(spec.d),
            weight_scale * rng.standard_normal(spec.d),
            data.point(i),
        )
        for i in range(n_probes)
    ]
