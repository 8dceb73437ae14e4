"""End-to-end acceptance criteria.

Each test appends one ``PASS``/``FAIL`` line to the terminal summary with the
measured value, the tolerance and the wall time.  The benchmark criteria are
slow (the string-kernel FreeSolv run dominates); select them with
``-m slow`` or skip them with ``-m "not slow"``.
"""

import filecmp
import json
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from molgp import cli, data, evaluation, gp, kernels
from molgp.evaluation import SplitSpec
from molgp.kernels import SskConfig, TanimotoConfig

from conftest import ACCEPTANCE_LINES, ESOL, FREESOLV, PHOTOSWITCH, extended_enabled, need


class Outcome:
    def __init__(self):
        self.ok = False
        self.detail = ""


@contextmanager
def criterion(number, title, limit_s):
    out = Outcome()
    t0 = time.perf_counter()
    failure = None
    try:
        yield out
    except BaseException as exc:  # recorded, then re-raised
        failure = exc
        if not out.detail:
            out.detail = f"{type(exc).__name__}: {exc}"
        out.ok = False
    elapsed = time.perf_counter() - t0
    in_time = limit_s is None or elapsed <= limit_s
    limit = f"limit {limit_s:.0f}s" if limit_s is not None else "no limit"
    status = "PASS" if out.ok and in_time and failure is None else "FAIL"
    if isinstance(failure, pytest.skip.Exception):
        status = "SKIP"
    ACCEPTANCE_LINES.append(f"[{status}] {number:>2}. {title}: {out.detail} "
                            f"({elapsed:.1f}s, {limit})")
    if failure is not None:
        raise failure
    assert out.ok, out.detail
    assert in_time, f"criterion {number} took {elapsed:.1f}s, limit {limit_s}s"


def benchmark(path, kernel, repeats=20, seed=0):
    ds = data.load_csv(need(path))
    rep = data.KERNEL_REPRESENTATION[kernel]
    inputs = data.featurize(ds.smiles, rep)
    template = TanimotoConfig() if kernel == "tanimoto" else SskConfig()
    return evaluation.run_benchmark(inputs, ds.targets, template,
                                    SplitSpec(0.9, repeats, seed), gp.OptBudget())


def check_band(out, result, lo, hi, units=""):
    m, s = result.rmse_mean, result.rmse_std
    out.ok = lo <= m <= hi and len(result.per_split_rmse) > 0
    out.detail = (f"RMSE {m:.3f} +- {s:.3f}{units} over {len(result.per_split_rmse)} splits, "
                  f"band [{lo}, {hi}]")


def test_c01_ssk_oracle_equivalence():
    with criterion(1, "SSK dynamic program equals brute-force enumeration", 10) as out:
        rng = np.random.default_rng(1)
        worst = 0.0
        count = 0
        for _ in range(500):
            s = "".join(rng.choice(list("abcd"), rng.integers(1, 9)))
            t = "".join(rng.choice(list("abcd"), rng.integers(1, 9)))
            n = int(rng.integers(1, 4))
            for lm, lg in rng.uniform(0.01, 1.0, (10, 2)):
                for normalize in (False, True):
                    cfg = SskConfig(lm, lg, n, normalize=normalize)
                    a, b = kernels.ssk(s, t, cfg), kernels.ssk_bruteforce(s, t, cfg)
                    rel = abs(a - b) / abs(b) if b != 0 else abs(a)
                    worst = max(worst, rel)
                    count += 1
        out.ok = worst <= 1e-10
        out.detail = f"max relative error {worst:.2e} over {count} evaluations, tol 1e-10"


def test_c02_kernel_properties(esol_fps, esol_seqs):
    with criterion(2, "kernel symmetry, range, diagonal and PSD on ESOL subsets", 120) as out:
        rng = np.random.default_rng(2)
        problems = []
        for draw in range(10):
            idx = rng.choice(len(esol_fps), 200, replace=False)
            sv = float(np.exp(rng.uniform(math.log(0.1), math.log(10))))
            lm, lg = rng.uniform(0.01, 1.0, 2)
            cases = [([esol_fps[i] for i in idx], TanimotoConfig(sv), kernels.tanimoto),
                     ([esol_seqs[i] for i in idx], SskConfig(lm, lg, 5, sv), kernels.ssk)]
            for inputs, cfg, single in cases:
                name = type(cfg).__name__
                K = kernels.gram(inputs, cfg).values
                if not np.array_equal(K, K.T):
                    problems.append(f"{name} draw {draw}: Gram not symmetric")
                if K.min() < 0 or K.max() > sv:
                    problems.append(f"{name} draw {draw}: value outside [0, {sv:.3g}]")
                if not np.all(np.diag(K) == sv):
                    problems.append(f"{name} draw {draw}: diagonal differs from signal variance")
                try:
                    np.linalg.cholesky(K + 1e-6 * np.eye(len(inputs)))
                except np.linalg.LinAlgError:
                    problems.append(f"{name} draw {draw}: Cholesky failed")
                for _ in range(20):
                    i, j = rng.integers(len(inputs), size=2)
                    if single(inputs[i], inputs[j], cfg) != single(inputs[j], inputs[i], cfg):
                        problems.append(f"{name} draw {draw}: scalar kernel asymmetric")
        out.ok = not problems
        out.detail = "; ".join(problems[:3]) if problems else \
            "20 Grams of 200 molecules: symmetric, in range, unit diagonal, factorizable"


def test_c03_gp_numerics(esol, esol_fps, esol_seqs):
    with criterion(3, "GP reconstruction, interpolation and LML gradients", 120) as out:
        rng = np.random.default_rng(3)
        y_all = np.asarray(esol.targets)
        details = []
        worst_rec = 0.0
        for size in (50, 150, 300):
            idx = rng.choice(len(esol_fps), size, replace=False)
            for inputs, cfg in [([esol_fps[i] for i in idx], TanimotoConfig(0.8)),
                                ([esol_seqs[i] for i in idx], SskConfig(0.5, 0.7))]:
                noise = gp.NoiseConfig(0.02)
                model = gp.fit(inputs, y_all[idx], cfg, noise)
                K = kernels.gram(inputs, cfg).values
                A = K + (noise.noise_variance + model.jitter_used) * np.eye(size)
                L = model.cholesky_factor
                worst_rec = max(worst_rec, np.linalg.norm(L @ L.T - A) / np.linalg.norm(K))
        details.append(f"reconstruction {worst_rec:.1e} (tol 1e-8)")

        # interpolation on distinct fingerprints with vanishing noise
        seen, idx = set(), []
        for i in rng.permutation(len(esol_fps)):
            if esol_fps[i] not in seen:
                seen.add(esol_fps[i])
                idx.append(int(i))
            if len(idx) == 100:
                break
        fps = [esol_fps[i] for i in idx]
        model = gp.fit(fps, y_all[idx], TanimotoConfig(), gp.NoiseConfig(1e-8))
        mean, _ = gp.predict_arrays(model, fps)
        interp = float(np.max(np.abs(mean - y_all[idx])) / model.target_stats.std)
        details.append(f"interpolation {interp:.1e} (tol 1e-3)")

        # central differences in log space against the analytic gradient
        fps, y = esol_fps[:200], y_all[:200]
        worst_grad = 0.0
        h = 1e-5
        for sv, sn2 in [(1.0, 0.1), (0.2, 0.01), (5.0, 1.0)]:
            def f(a, b):
                return gp.log_marginal_likelihood(fps, y, TanimotoConfig(math.exp(a)),
                                                  gp.NoiseConfig(math.exp(b)))
            a, b = math.log(sv), math.log(sn2)
            fd = np.array([(f(a + h, b) - f(a - h, b)) / (2 * h),
                           (f(a, b + h) - f(a, b - h)) / (2 * h)])
            g = gp.lml_gradient(fps, y, TanimotoConfig(sv), gp.NoiseConfig(sn2))
            worst_grad = max(worst_grad, float(np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-2))))
        details.append(f"gradient {worst_grad:.1e} (tol 1e-4)")

        grid = np.array([[gp.log_marginal_likelihood(fps[:100], y[:100], TanimotoConfig(s),
                                                     gp.NoiseConfig(n))
                          for n in np.geomspace(1e-4, 5, 10)] for s in np.geomspace(1e-2, 1e2, 10)])
        finite = bool(np.all(np.isfinite(grid)))
        details.append(f"10x10 LML grid finite: {finite}")
        out.ok = worst_rec < 1e-8 and interp < 1e-3 and worst_grad < 1e-4 and finite
        out.detail = ", ".join(details)


@pytest.mark.slow
def test_c04_tanimoto_esol():
    with criterion(4, "Tanimoto GP on ESOL", 600) as out:
        check_band(out, benchmark(ESOL, "tanimoto"), 0.85, 1.25)


@pytest.mark.slow
def test_c05_tanimoto_freesolv():
    with criterion(5, "Tanimoto GP on FreeSolv", 300) as out:
        check_band(out, benchmark(FREESOLV, "tanimoto"), 1.5, 2.3)


@pytest.mark.slow
def test_c06_ssk_freesolv():
    with criterion(6, "string-kernel GP on FreeSolv, 20 splits", 3600) as out:
        check_band(out, benchmark(FREESOLV, "ssk", 20), 1.0, 1.8)


@pytest.mark.slow
def test_c06b_ssk_freesolv_reduced():
    with criterion(6, "string-kernel GP on FreeSolv, reduced 5 splits", 3600) as out:
        check_band(out, benchmark(FREESOLV, "ssk", 5), 1.0, 1.8)


@pytest.mark.slow
@pytest.mark.extended
def test_c07_ssk_esol():
    with criterion(7, "string-kernel GP on ESOL (extended)", None) as out:
        if not extended_enabled():
            out.detail = "set MOLGP_EXTENDED=1 to run (overnight-scale job)"
            pytest.skip(out.detail)
        check_band(out, benchmark(ESOL, "ssk", 20), 0.55, 0.90)


@pytest.mark.slow
def test_c08_tanimoto_photoswitch():
    with criterion(8, "Tanimoto GP on Photoswitch", None) as out:
        if not PHOTOSWITCH.is_file():
            out.detail = "Photoswitch.csv not supplied"
            pytest.skip(out.detail)
        check_band(out, benchmark(PHOTOSWITCH, "tanimoto"), 18, 30, " nm")


def test_c09_calibration_soundness(esol_fps):
    with criterion(9, "calibration on data drawn from a Tanimoto GP prior", 300) as out:
        rng = np.random.default_rng(9)
        means, stds, truths = [], [], []
        for _ in range(5):
            idx = rng.choice(len(esol_fps), 400, replace=False)
            fps = [esol_fps[i] for i in idx]
            K = kernels.gram(fps, TanimotoConfig()).values
            f = np.linalg.cholesky(K + 1e-6 * np.eye(400)) @ rng.standard_normal(400)
            y = f + math.sqrt(0.1) * rng.standard_normal(400)
            train, test = np.arange(200), np.arange(200, 400)
            train_x = [fps[i] for i in train]
            res = gp.optimize_hyperparameters(train_x, y[train], "tanimoto")
            model = gp.fit(train_x, y[train], res.kernel_config, res.noise)
            m, s = gp.predict_arrays(model, [fps[i] for i in test])
            means.append(m)
            stds.append(s)
            truths.append(y[test])
        grid = [round(0.1 * k, 1) for k in range(1, 10)]
        curve = evaluation.calibration_curve(np.concatenate(means), np.concatenate(stds),
                                             np.concatenate(truths), grid)
        dev = curve.max_deviation()
        out.ok = dev <= 0.10
        out.detail = f"max |C(q) - q| = {dev:.3f} over q = 0.1..0.9, tol 0.10"


@pytest.mark.slow
def test_c10_benchmark_determinism(tmp_path):
    with criterion(10, "repeated benchmark runs are byte-identical", None) as out:
        need(ESOL)
        dirs = [tmp_path / "a", tmp_path / "b"]
        for d in dirs:
            code = cli.main(["benchmark", "--dataset", str(ESOL), "--kernel", "tanimoto",
                             "--repeats", "20", "--seed", "7", "--out-dir", str(d)])
            assert code == 0
        names = ["results.json", "predictions.csv", "rmse.csv", "manifest.txt",
                 "parity.png", "rmse.png"]
        match, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], names, shallow=False)
        doc = json.loads((dirs[0] / "results.json").read_text())
        out.ok = not mismatch and not errors and len(doc["per_split_rmse"]) == 20
        out.detail = (f"{len(match)}/{len(names)} files identical; results.json has "
                      f"{len(doc['per_split_rmse'])} RMSE values, mean {doc['rmse_mean']:.3f}")
