"""Benchmark protocol and uncertainty calibration.

``run_benchmark`` repeats: shuffle, split train/test, fit hyperparameters on
the training part by marginal likelihood, predict the held-out part, record
RMSE.  Calibration scores count how often the true value falls inside the
central ``q`` predictive interval; a calibrated model scores ``C(q) = q``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import gp, kernels
from .kernels import KernelConfig, SskConfig, TanimotoConfig

__all__ = [
    "DEFAULT_QUANTILES",
    "BenchmarkResult",
    "CalibrationCurve",
    "DatasetTooSmall",
    "DomainError",
    "EmptyInput",
    "InvalidQuantile",
    "LengthMismatch",
    "SplitOutcome",
    "SplitSpec",
    "calibration_curve",
    "calibration_score",
    "inverse_normal_cdf",
    "rmse",
    "run_benchmark",
    "split",
]

log = logging.getLogger(__name__)

DEFAULT_QUANTILES = tuple(round(0.05 * k, 2) for k in range(1, 20))


class DatasetTooSmall(ValueError):
    pass


class LengthMismatch(ValueError):
    pass


class EmptyInput(ValueError):
    pass


class InvalidQuantile(ValueError):
    pass


class DomainError(ValueError):
    pass


# --------------------------------------------------------------------------
# inverse normal CDF (Wichura, AS 241, PPND16)
# --------------------------------------------------------------------------

_A = (3.3871328727963666080e0, 1.3314166789178437745e+2, 1.9715909503065514427e+3,
      1.3731693765509461125e+4, 4.5921953931549871457e+4, 6.7265770927008700853e+4,
      3.3430575583588128105e+4, 2.5090809287301226727e+3)
_B = (1.0, 4.2313330701600911252e+1, 6.8718700749205790830e+2, 5.3941960214247511077e+3,
      2.1213794301586595867e+4, 3.9307895800092710610e+4, 2.8729085735721942674e+4,
      5.2264952788528545610e+3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _poly(coef, x):
    acc = 0.0
    for c in reversed(coef):
        acc = acc * x + c
    return acc


def inverse_normal_cdf(p: float) -> float:
    """Standard normal quantile; relative accuracy about 1e-16 on (0, 1)."""
    if not 0.0 < p < 1.0:
        raise DomainError(f"p must lie in (0, 1), got {p!r}")
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        return q * _poly(_A, r) / _poly(_B, r)
    r = p if q < 0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        val = _poly(_C, r) / _poly(_D, r)
    else:
        r -= 5.0
        val = _poly(_E, r) / _poly(_F, r)
    return -val if q < 0 else val


# --------------------------------------------------------------------------
# splits and metrics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    n_repeats: int = 20
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.n_repeats < 1:
            raise ValueError("n_repeats must be positive")


def split(dataset_size: int, spec: SplitSpec = SplitSpec()) -> list[tuple[np.ndarray, np.ndarray]]:
    """Independent random train/test partitions, reproducible from ``spec.seed``."""
    if dataset_size < 10:
        raise DatasetTooSmall(f"need at least 10 molecules, got {dataset_size}")
    n_train = int(round(spec.train_fraction * dataset_size))
    n_train = min(max(n_train, 1), dataset_size - 1)
    rng = np.random.default_rng(spec.seed)
    out = []
    for _ in range(spec.n_repeats):
        perm = rng.permutation(dataset_size)
        out.append((np.sort(perm[:n_train]), np.sort(perm[n_train:])))
    return out


def rmse(predictions, truths) -> float:
    p = np.asarray(predictions, dtype=float)
    t = np.asarray(truths, dtype=float)
    if p.shape != t.shape:
        raise LengthMismatch(f"{p.shape} predictions vs {t.shape} truths")
    if p.size == 0:
        raise EmptyInput("rmse of an empty set")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def calibration_score(residual_zscores, q: float) -> float:
    """Fraction of ``|z|`` strictly below the two-sided normal ``q`` threshold."""
    if not 0.0 < q < 1.0:
        raise InvalidQuantile(f"q must lie in (0, 1), got {q!r}")
    z = np.asarray(residual_zscores, dtype=float)
    if z.size == 0:
        raise EmptyInput("no residuals")
    if not np.all(np.isfinite(z)):
        raise ValueError("z-scores must be finite")
    threshold = inverse_normal_cdf((1.0 + q) / 2.0)
    return float(np.count_nonzero(np.abs(z) < threshold)) / z.size


@dataclass
class CalibrationCurve:
    quantiles: list[float]
    scores: list[float]

    def max_deviation(self) -> float:
        return max(abs(c - q) for q, c in zip(self.quantiles, self.scores))

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write("q,c_of_q\n")
            for q, c in zip(self.quantiles, self.scores):
                fh.write(f"{q!r},{c!r}\n")


def _check_grid(quantiles) -> list[float]:
    grid = [float(q) for q in quantiles]
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
        raise InvalidQuantile("quantile grid must be non-empty and strictly increasing")
    for q in grid:
        if not 0.0 < q < 1.0:
            raise InvalidQuantile(f"grid value {q!r} outside (0, 1)")
    return grid


def zscores(means, stds, truths) -> np.ndarray:
    means, stds, truths = (np.asarray(a, dtype=float) for a in (means, stds, truths))
    if not (means.shape == stds.shape == truths.shape):
        raise LengthMismatch("means, stds and truths differ in length")
    if np.any(stds <= 0):
        raise ValueError("predictive standard deviations must be positive")
    return (means - truths) / stds


def calibration_curve(means, stds, truths, quantiles=DEFAULT_QUANTILES) -> CalibrationCurve:
    """``C(q)`` over ``quantiles`` for one pooled set of predictions."""
    grid = _check_grid(quantiles)
    z = zscores(means, stds, truths)
    return CalibrationCurve(grid, [calibration_score(z, q) for q in grid])


def mean_calibration_curve(groups, quantiles=DEFAULT_QUANTILES) -> CalibrationCurve:
    """Average of per-group curves; ``groups`` yields ``(means, stds, truths)``."""
    grid = _check_grid(quantiles)
    curves = [calibration_curve(m, s, t, grid).scores for m, s, t in groups]
    if not curves:
        raise EmptyInput("no prediction groups")
    return CalibrationCurve(grid, np.mean(curves, axis=0).tolist())


# --------------------------------------------------------------------------
# benchmark
# --------------------------------------------------------------------------

@dataclass
class SplitOutcome:
    test_indices: list[int]
    means: list[float]
    stds: list[float]
    truths: list[float]
    rmse: float
    kernel: dict
    noise_variance: float
    log_marginal_likelihood: float


@dataclass
class BenchmarkResult:
    per_split_rmse: list[float]
    per_split: list[SplitOutcome] = field(default_factory=list)

    @property
    def rmse_mean(self) -> float:
        return float(np.mean(self.per_split_rmse))

    @property
    def rmse_std(self) -> float:
        return float(np.std(self.per_split_rmse))

    def pooled(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        means = np.concatenate([s.means for s in self.per_split])
        stds = np.concatenate([s.stds for s in self.per_split])
        truths = np.concatenate([s.truths for s in self.per_split])
        return means, stds, truths

    def calibration(self, quantiles=DEFAULT_QUANTILES, mode: str = "pooled") -> CalibrationCurve:
        if mode == "pooled":
            return calibration_curve(*self.pooled(), quantiles)
        if mode == "per_split":
            return mean_calibration_curve(((s.means, s.stds, s.truths) for s in self.per_split),
                                          quantiles)
        raise ValueError(f"unknown calibration mode {mode!r}")

    def to_dict(self) -> dict:
        return {
            "n_repeats": len(self.per_split_rmse),
            "rmse_mean": self.rmse_mean,
            "rmse_std": self.rmse_std,
            "per_split_rmse": list(self.per_split_rmse),
            "splits": [vars(s) for s in self.per_split],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BenchmarkResult":
        return cls(list(d["per_split_rmse"]), [SplitOutcome(**s) for s in d["splits"]])


def _base_gram_source(inputs, template: KernelConfig, use_expansion: bool):
    """Unit-variance Gram over the whole dataset, indexable by split."""
    if isinstance(template, TanimotoConfig):
        full = kernels.gram(inputs, TanimotoConfig()).values
        return lambda idx: (lambda cfg: full[np.ix_(idx, idx)])
    if use_expansion:
        exp = kernels.SskExpansion(inputs, template.max_subsequence_length)
        log.info("string-kernel expansion built: %.1f MB", exp.nbytes / 1e6)
        return lambda idx: (lambda cfg: exp.gram(idx, cfg))
    return lambda idx: None


def run_benchmark(inputs: Sequence, targets, kernel_template: KernelConfig,
                  spec: SplitSpec = SplitSpec(), budget: gp.OptBudget = gp.OptBudget(),
                  noise_init: gp.NoiseConfig = gp.NoiseConfig(), *,
                  use_expansion: bool = True,
                  progress: Callable[[int, float], None] | None = None) -> BenchmarkResult:
    """Repeated-split RMSE with hyperparameters refit on every training set.

    ``inputs`` are fingerprints (Tanimoto) or symbol sequences (string
    kernel).  Splits are processed in order; outcome ``k`` always belongs to
    split ``k``.
    """
    inputs = list(inputs)
    y = np.asarray(targets, dtype=float)
    if len(inputs) != y.shape[0]:
        raise LengthMismatch(f"{len(inputs)} inputs vs {y.shape[0]} targets")
    source = _base_gram_source(inputs, kernel_template, use_expansion)
    result = BenchmarkResult([])
    for k, (tr, te) in enumerate(split(len(inputs), spec)):
        train_x = [inputs[i] for i in tr]
        test_x = [inputs[i] for i in te]
        opt_budget = gp.OptBudget(budget.restarts, budget.max_evals,
                                  budget.seed + k, budget.fix_noise)
        kcfg, noise, _ = gp.optimize_hyperparameters(
            train_x, y[tr], kernel_template, noise_init, opt_budget, base_gram=source(tr))
        model = gp.fit(train_x, y[tr], kcfg, noise)
        means, stds = gp.predict_arrays(model, test_x)
        err = rmse(means, y[te])
        result.per_split_rmse.append(err)
        result.per_split.append(SplitOutcome(
            test_indices=[int(i) for i in te], means=means.tolist(), stds=stds.tolist(),
            truths=y[te].tolist(), rmse=err, kernel=gp._kernel_to_dict(kcfg),
            noise_variance=noise.noise_variance,
            log_marginal_likelihood=model.log_marginal_likelihood))
        log.info("split %d/%d: rmse %.4f", k + 1, spec.n_repeats, err)
        if progress is not None:
            progress(k, err)
    return result
