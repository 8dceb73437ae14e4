"""Exact Gaussian-process regression over molecular kernels.

Targets are standardized on the training set and modelled with a zero prior
mean.  Training factorizes ``K + (noise + jitter) I`` once; predictions are
returned in the original target units.
"""

from __future__ import annotations

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize

from . import kernels
from .kernels import KernelConfig, SskConfig, TanimotoConfig

__all__ = [
    "AllRestartsFailed",
    "CholeskyFailure",
    "ConstantTargets",
    "DimensionMismatch",
    "GpError",
    "GpModel",
    "NoiseConfig",
    "OptBudget",
    "OptimizationResult",
    "OptimizationTrace",
    "PredictiveDistribution",
    "TargetStats",
    "deserialize",
    "fit",
    "log_marginal_likelihood",
    "lml_gradient",
    "optimize_hyperparameters",
    "predict",
    "predict_arrays",
    "serialize",
]

log = logging.getLogger(__name__)

NOISE_FLOOR = 1e-8
JITTER_ESCALATION = 1e-4
_LOG_2PI = math.log(2.0 * math.pi)


class GpError(ValueError):
    pass


class CholeskyFailure(GpError):
    pass


class ConstantTargets(GpError):
    pass


class DimensionMismatch(GpError):
    pass


class AllRestartsFailed(GpError):
    pass


@dataclass(frozen=True)
class NoiseConfig:
    noise_variance: float = 0.1
    jitter: float = 1e-6

    def __post_init__(self):
        if not self.noise_variance >= NOISE_FLOOR:
            raise ValueError(f"noise_variance must be >= {NOISE_FLOOR}")
        if not self.jitter >= 0:
            raise ValueError("jitter must be non-negative")


@dataclass(frozen=True)
class TargetStats:
    mean: float
    std: float

    @classmethod
    def from_targets(cls, y: np.ndarray) -> "TargetStats":
        std = float(np.std(y))
        if not std > 0:
            raise ConstantTargets("targets are constant; cannot standardize")
        return cls(float(np.mean(y)), std)

    def standardize(self, y):
        return (np.asarray(y, dtype=float) - self.mean) / self.std


@dataclass(frozen=True)
class PredictiveDistribution:
    mean: float
    std: float


@dataclass
class GpModel:
    kernel_config: KernelConfig
    noise: NoiseConfig
    train_inputs: list
    train_targets: np.ndarray
    cholesky_factor: np.ndarray
    alpha: np.ndarray
    target_stats: TargetStats
    log_marginal_likelihood: float
    jitter_used: float = field(default=0.0)

    def predict(self, test_inputs) -> list[PredictiveDistribution]:
        return predict(self, test_inputs)


def _as_targets(inputs, targets) -> np.ndarray:
    y = np.asarray(targets, dtype=float)
    if y.ndim != 1 or len(inputs) != y.shape[0]:
        raise DimensionMismatch(f"{len(inputs)} inputs but {y.shape} targets")
    if y.shape[0] < 2:
        raise DimensionMismatch("at least two training points are required")
    if not np.all(np.isfinite(y)):
        raise GpError("targets must be finite")
    return y


def _factorize(K: np.ndarray, noise: NoiseConfig) -> tuple[np.ndarray, float]:
    jitter = noise.jitter
    n = K.shape[0]
    ladder = [jitter] if jitter >= JITTER_ESCALATION else [jitter, JITTER_ESCALATION]
    for jit in ladder:
        A = K + (noise.noise_variance + jit) * np.eye(n)
        try:
            return scipy.linalg.cholesky(A, lower=True, check_finite=False), jit
        except np.linalg.LinAlgError:
            log.debug("Cholesky failed with jitter %.1e", jit)
    raise CholeskyFailure(f"Cholesky failed even with jitter {ladder[-1]:.1e}")


def _lml_terms(K: np.ndarray, y_std: np.ndarray, noise: NoiseConfig):
    L, jit = _factorize(K, noise)
    alpha = scipy.linalg.cho_solve((L, True), y_std, check_finite=False)
    n = y_std.shape[0]
    lml = -0.5 * float(y_std @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * _LOG_2PI
    return lml, L, alpha, jit


def fit(inputs, targets, kernel_config: KernelConfig, noise: NoiseConfig = NoiseConfig()
        ) -> GpModel:
    """Train an exact GP: standardize targets, build the Gram, factorize.

    Raises
    ------
    DimensionMismatch
        Fewer than two points or input/target length mismatch.
    ConstantTargets
        All targets equal.
    CholeskyFailure
        The system stayed indefinite after one jitter escalation.
    """
    y = _as_targets(inputs, targets)
    stats = TargetStats.from_targets(y)
    y_std = stats.standardize(y)
    K = kernels.gram(list(inputs), kernel_config).values
    lml, L, alpha, jit = _lml_terms(K, y_std, noise)
    return GpModel(kernel_config=kernel_config, noise=noise, train_inputs=list(inputs),
                   train_targets=y, cholesky_factor=L, alpha=alpha, target_stats=stats,
                   log_marginal_likelihood=lml, jitter_used=jit)


def predict_arrays(model: GpModel, test_inputs) -> tuple[np.ndarray, np.ndarray]:
    """Predictive means and standard deviations (original units) as arrays."""
    test_inputs = list(test_inputs)
    if not test_inputs:
        return np.zeros(0), np.zeros(0)
    Ks = kernels.cross_gram(model.train_inputs, test_inputs, model.kernel_config)
    mean = Ks @ model.alpha
    v = scipy.linalg.solve_triangular(model.cholesky_factor, Ks.T, lower=True,
                                      check_finite=False)
    latent = kernels.prior_variance(test_inputs, model.kernel_config) - np.sum(v * v, axis=0)
    latent = np.maximum(latent, 0.0)
    var = np.maximum(latent + model.noise.noise_variance, 1e-12)
    stats = model.target_stats
    return mean * stats.std + stats.mean, np.sqrt(var) * stats.std


def predict(model: GpModel, test_inputs) -> list[PredictiveDistribution]:
    means, stds = predict_arrays(model, test_inputs)
    return [PredictiveDistribution(float(m), float(s)) for m, s in zip(means, stds)]


def log_marginal_likelihood(inputs, targets, kernel_config: KernelConfig,
                            noise: NoiseConfig = NoiseConfig()) -> float:
    """Exact log evidence of the standardized targets."""
    y = _as_targets(inputs, targets)
    y_std = TargetStats.from_targets(y).standardize(y)
    K = kernels.gram(list(inputs), kernel_config).values
    return _lml_terms(K, y_std, noise)[0]


def lml_gradient(inputs, targets, kernel_config: KernelConfig,
                 noise: NoiseConfig = NoiseConfig()) -> np.ndarray:
    """dLML / d(log signal variance, log noise variance), analytically.

    Uses ``0.5 tr((a a^T - A^-1) dA)`` with ``dA = K`` for the signal term and
    ``noise_variance * I`` for the noise term.
    """
    y = _as_targets(inputs, targets)
    y_std = TargetStats.from_targets(y).standardize(y)
    K = kernels.gram(list(inputs), kernel_config).values
    _, L, alpha, _ = _lml_terms(K, y_std, noise)
    A_inv = scipy.linalg.cho_solve((L, True), np.eye(K.shape[0]), check_finite=False)
    W = np.outer(alpha, alpha) - A_inv
    d_signal = 0.5 * float(np.sum(W * K))
    d_noise = 0.5 * noise.noise_variance * float(np.trace(W))
    return np.array([d_signal, d_noise])


# --------------------------------------------------------------------------
# hyperparameter search
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OptBudget:
    restarts: int = 3
    max_evals: int = 200
    seed: int = 0
    fix_noise: bool = False


@dataclass
class OptimizationTrace:
    """LML of every objective evaluation, in order (``-inf`` marks a failure)."""

    values: list[float] = field(default_factory=list)
    start_of_restart: list[int] = field(default_factory=list)

    @property
    def best_so_far(self) -> list[float]:
        return np.maximum.accumulate(np.asarray(self.values, dtype=float)).tolist() \
            if self.values else []

    @property
    def best(self) -> float:
        return max(self.values) if self.values else -math.inf


class OptimizationResult(NamedTuple):
    kernel_config: KernelConfig
    noise: NoiseConfig
    trace: OptimizationTrace


# log-space bounds for (signal variance, noise variance, match decay, gap decay)
_BOUNDS = {
    "signal_variance": (math.log(1e-3), math.log(1e3)),
    "noise_variance": (math.log(NOISE_FLOOR), math.log(10.0)),
    "match_decay": (math.log(0.01), 0.0),
    "gap_decay": (math.log(0.01), 0.0),
}
# restart draws are taken from a narrower box
_START_BOX = {
    "signal_variance": (math.log(0.1), math.log(10.0)),
    "noise_variance": (math.log(1e-3), math.log(1.0)),
    "match_decay": (math.log(0.1), 0.0),
    "gap_decay": (math.log(0.1), 0.0),
}


class _LruGramCache:
    def __init__(self, compute: Callable[[KernelConfig], np.ndarray], maxsize: int = 16):
        self._compute = compute
        self._data: OrderedDict = OrderedDict()
        self._maxsize = maxsize

    def __call__(self, cfg: KernelConfig) -> np.ndarray:
        key = (round(getattr(cfg, "match_decay", 0.0), 12),
               round(getattr(cfg, "gap_decay", 0.0), 12))
        if key in self._data:
            self._data.move_to_end(key)
            return self._data[key]
        value = self._compute(cfg)
        self._data[key] = value
        if len(self._data) > self._maxsize:
            self._data.popitem(last=False)
        return value


class _Objective:
    """Standardized-target LML as a function of log hyperparameters."""

    def __init__(self, y_std, template: KernelConfig, noise_init: NoiseConfig, fix_noise: bool,
                 base_gram: Callable[[KernelConfig], np.ndarray], spectral: bool):
        self.y = y_std
        self.template = template
        self.noise_init = noise_init
        self.names = ["signal_variance"]
        if not fix_noise:
            self.names.append("noise_variance")
        if isinstance(template, SskConfig):
            self.names += ["match_decay", "gap_decay"]
        self.base_gram = base_gram
        self.trace = OptimizationTrace()
        self._spectral = None
        if spectral and isinstance(template, TanimotoConfig):
            B = base_gram(kernels.with_unit_variance(template))
            lam, Q = np.linalg.eigh(B)
            self._spectral = (lam, (Q.T @ y_std) ** 2)

    def configs(self, theta) -> tuple[KernelConfig, NoiseConfig]:
        vals = dict(zip(self.names, np.exp(np.asarray(theta, dtype=float))))
        kcfg = replace(self.template, signal_variance=float(vals["signal_variance"]))
        if isinstance(kcfg, SskConfig):
            kcfg = replace(kcfg, match_decay=float(min(vals["match_decay"], 1.0)),
                           gap_decay=float(min(vals["gap_decay"], 1.0)))
        noise = self.noise_init
        if "noise_variance" in vals:
            noise = replace(noise, noise_variance=float(max(vals["noise_variance"], NOISE_FLOOR)))
        return kcfg, noise

    def lml(self, kcfg: KernelConfig, noise: NoiseConfig) -> float:
        if self._spectral is not None:
            lam, proj = self._spectral
            d = kcfg.signal_variance * lam + noise.noise_variance + noise.jitter
            if not np.all(d > 0):
                raise CholeskyFailure("non-positive eigenvalue in spectral path")
            n = self.y.shape[0]
            return float(-0.5 * np.sum(proj / d) - 0.5 * np.sum(np.log(d)) - 0.5 * n * _LOG_2PI)
        B = self.base_gram(kernels.with_unit_variance(kcfg))
        return _lml_terms(kcfg.signal_variance * B, self.y, noise)[0]

    def __call__(self, theta) -> float:
        kcfg, noise = self.configs(theta)
        try:
            value = self.lml(kcfg, noise)
        except CholeskyFailure:
            value = -math.inf
        if not math.isfinite(value):
            value = -math.inf
        self.trace.values.append(value)
        return value

    def initial(self) -> np.ndarray:
        out = []
        for name in self.names:
            v = self.noise_init.noise_variance if name == "noise_variance" \
                else getattr(self.template, name)
            lo, hi = _BOUNDS[name]
            out.append(min(max(math.log(v), lo), hi))
        return np.array(out)

    def draw(self, rng: np.random.Generator) -> np.ndarray:
        return np.array([rng.uniform(*_START_BOX[name]) for name in self.names])

    def bounds(self):
        return [_BOUNDS[name] for name in self.names]


def _simplex(x0, bounds, step=0.5):
    pts = [x0]
    for i, (lo, hi) in enumerate(bounds):
        x = x0.copy()
        x[i] = x0[i] + step if x0[i] + step <= hi else x0[i] - step
        x[i] = min(max(x[i], lo), hi)
        pts.append(x)
    return np.array(pts)


def _template(kernel_family) -> KernelConfig:
    if isinstance(kernel_family, (TanimotoConfig, SskConfig)):
        return kernel_family
    if kernel_family == "tanimoto":
        return TanimotoConfig()
    if kernel_family == "ssk":
        return SskConfig()
    raise ValueError(f"unknown kernel family {kernel_family!r}")


def optimize_hyperparameters(inputs, targets, kernel_family="tanimoto",
                             noise_init: NoiseConfig = NoiseConfig(),
                             budget: OptBudget = OptBudget(), *,
                             base_gram: Callable[[KernelConfig], np.ndarray] | None = None,
                             spectral: bool = True) -> OptimizationResult:
    """Maximize the LML by multi-start Nelder-Mead in log-parameter space.

    ``kernel_family`` is ``"tanimoto"``, ``"ssk"`` or a config whose values
    seed the first start (its subsequence length stays fixed).  Each further
    restart begins at a seeded random draw.  ``base_gram`` may supply the
    unit-variance Gram for a config, e.g. from a precomputed
    :class:`~molgp.kernels.SskExpansion`; by default it is computed from
    ``inputs``.  With ``spectral`` the Tanimoto search evaluates the LML from
    one eigendecomposition instead of a Cholesky per step.

    The returned configuration is the best one evaluated across all starts.
    """
    y = _as_targets(inputs, targets)
    y_std = TargetStats.from_targets(y).standardize(y)
    template = _template(kernel_family)
    if base_gram is None:
        inputs = list(inputs)
        kernels._check_representation(inputs, template)
        base_gram = lambda cfg: kernels.gram(inputs, cfg).values  # noqa: E731
    if isinstance(template, SskConfig):
        base_gram = _LruGramCache(base_gram)
    else:
        fixed = base_gram(kernels.with_unit_variance(template))
        base_gram = lambda cfg: fixed  # noqa: E731

    obj = _Objective(y_std, template, noise_init, budget.fix_noise, base_gram, spectral)
    rng = np.random.default_rng(budget.seed)
    bounds = obj.bounds()
    best_theta, best_val = None, -math.inf
    for r in range(max(1, budget.restarts)):
        x0 = obj.initial() if r == 0 else obj.draw(rng)
        obj.trace.start_of_restart.append(len(obj.trace.values))
        evaluated: list[tuple[float, np.ndarray]] = []

        def neg(theta):
            theta = np.clip(theta, [b[0] for b in bounds], [b[1] for b in bounds])
            val = obj(theta)
            evaluated.append((val, theta.copy()))
            return 1e30 if val == -math.inf else -val

        scipy.optimize.minimize(
            neg, x0, method="Nelder-Mead", bounds=bounds,
            options={"maxfev": budget.max_evals, "initial_simplex": _simplex(x0, bounds),
                     "xatol": 1e-4, "fatol": 1e-6})
        for val, theta in evaluated:
            if val > best_val:
                best_val, best_theta = val, theta
        log.debug("restart %d: best LML %.6g after %d evaluations", r, best_val, len(evaluated))
    if best_theta is None:
        raise AllRestartsFailed("every objective evaluation failed to factorize")
    kcfg, noise = obj.configs(best_theta)
    return OptimizationResult(kcfg, noise, obj.trace)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def _kernel_to_dict(cfg: KernelConfig) -> dict:
    if isinstance(cfg, TanimotoConfig):
        return {"family": "tanimoto", "signal_variance": cfg.signal_variance}
    return {"family": "ssk", "signal_variance": cfg.signal_variance,
            "match_decay": cfg.match_decay, "gap_decay": cfg.gap_decay,
            "max_subsequence_length": cfg.max_subsequence_length,
            "normalize": cfg.normalize, "sum_lengths": cfg.sum_lengths}


def kernel_from_dict(d: dict) -> KernelConfig:
    d = dict(d)
    family = d.pop("family")
    if family == "tanimoto":
        return TanimotoConfig(**d)
    if family == "ssk":
        return SskConfig(**d)
    raise ValueError(f"unknown kernel family {family!r}")


def serialize(model: GpModel) -> dict:
    """Neutral key-value form; the factorization is rebuilt on load."""
    if isinstance(model.kernel_config, TanimotoConfig):
        inputs = [fp.to_hex() for fp in model.train_inputs]
        n_bits = model.train_inputs[0].n_bits
    else:
        inputs = [list(s) for s in model.train_inputs]
        n_bits = None
    return {
        "kernel": _kernel_to_dict(model.kernel_config),
        "noise": {"noise_variance": model.noise.noise_variance, "jitter": model.noise.jitter},
        "target_stats": {"mean": model.target_stats.mean, "std": model.target_stats.std},
        "train_targets": [float(v) for v in model.train_targets],
        "train_inputs": inputs,
        "n_bits": n_bits,
        "log_marginal_likelihood": model.log_marginal_likelihood,
    }


def deserialize(d: dict, train_inputs: Sequence | None = None) -> GpModel:
    """Rebuild a model; ``train_inputs`` overrides the stored inputs if given."""
    from .fingerprint import Fingerprint

    kcfg = kernel_from_dict(d["kernel"])
    noise = NoiseConfig(**d["noise"])
    if train_inputs is None:
        if isinstance(kcfg, TanimotoConfig):
            train_inputs = [Fingerprint.from_hex(h, d["n_bits"]) for h in d["train_inputs"]]
        else:
            train_inputs = [tuple(s) for s in d["train_inputs"]]
    model = fit(train_inputs, d["train_targets"], kcfg, noise)
    stored = d.get("target_stats")
    if stored and (abs(stored["mean"] - model.target_stats.mean) > 1e-12 * max(1, abs(stored["mean"]))
                   or abs(stored["std"] - model.target_stats.std) > 1e-12 * stored["std"]):
        raise GpError("stored target statistics disagree with the stored targets")
    return model
