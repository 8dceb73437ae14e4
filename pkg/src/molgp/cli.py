"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, data, evaluation, gp, kernels
from .fingerprint import EmptyMolecule, FingerprintConfig, fingerprint_batch
from .smiles import SmilesError, parse, tokenize

log = logging.getLogger("molgp")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_dataset(p, required=True):
    p.add_argument("--dataset", required=required, help="CSV file with a header row")
    p.add_argument("--smiles-col", help="SMILES column (default by dataset name)")
    p.add_argument("--target-col", help="target column (default by dataset name)")


def _add_featurization(p):
    p.add_argument("--radius", type=int, default=3)
    p.add_argument("--nbits", type=int, default=2048)
    p.add_argument("--fingerprints", help="precomputed hex fingerprints, one per CSV data row")


def _add_model(p):
    p.add_argument("--kernel", choices=["tanimoto", "ssk"], default="tanimoto")
    p.add_argument("--max-subseq", type=int, default=5)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--max-evals", type=int, default=200)
    p.add_argument("--noise", type=float, default=0.1, help="initial noise variance")
    p.add_argument("--fix-noise", action="store_true", help="hold the noise variance fixed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", default=".")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="molgp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"molgp {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("tokenize", help="dump the token stream of SMILES strings")
    p.add_argument("smiles", nargs="*")
    _add_dataset(p, required=False)
    p.add_argument("--kinds", action="store_true", help="prefix each token with its kind")

    p = sub.add_parser("fingerprint", help="emit hex-encoded fingerprints")
    p.add_argument("smiles", nargs="*")
    _add_dataset(p, required=False)
    p.add_argument("--radius", type=int, default=3)
    p.add_argument("--nbits", type=int, default=2048)
    p.add_argument("--output", help="write here instead of stdout")

    p = sub.add_parser("fit", help="train one model on a whole dataset")
    _add_dataset(p)
    _add_featurization(p)
    _add_model(p)
    p.add_argument("--no-optimize", action="store_true",
                   help="fit with the initial hyperparameters")

    p = sub.add_parser("predict", help="predict mean and std for new molecules")
    p.add_argument("--model", required=True)
    p.add_argument("smiles", nargs="*")
    p.add_argument("--input", help="file with one SMILES per line")
    p.add_argument("--fingerprints", help="hex fingerprints instead of SMILES")
    p.add_argument("--output", help="CSV destination (default stdout)")

    for name, help_ in (("benchmark", "repeated-split RMSE protocol"),
                        ("calibrate", "repeated-split calibration curve")):
        p = sub.add_parser(name, help=help_)
        _add_dataset(p, required=(name == "benchmark"))
        _add_featurization(p)
        _add_model(p)
        p.add_argument("--repeats", type=int, default=20)
        p.add_argument("--train-frac", type=float, default=0.9)
        p.add_argument("--no-plots", action="store_true")
        if name == "calibrate":
            p.add_argument("--results", help="reuse an existing benchmark results.json")
            p.add_argument("--quantiles", help="comma-separated grid (default 0.05..0.95)")
            p.add_argument("--mode", choices=["pooled", "per_split"], default="pooled")
    return parser


# --------------------------------------------------------------------------

def _smiles_inputs(args) -> list[str]:
    out = list(args.smiles)
    if getattr(args, "dataset", None):
        out += _smiles_column(args.dataset, args.smiles_col)
    if getattr(args, "input", None):
        out += [line.strip() for line in Path(args.input).read_text().splitlines() if line.strip()]
    if not out:
        raise UsageError("no SMILES given")
    return out


def _smiles_column(path, column) -> list[str]:
    column = column or data.default_columns(path)[0] or "smiles"
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if column not in (reader.fieldnames or []):
            raise data.MissingColumn(column, path)
        return [row[column].strip() for row in reader if row[column].strip()]


def _run_config(args) -> data.RunConfig:
    return data.RunConfig(
        kernel=args.kernel,
        noise_variance=args.noise,
        max_subsequence_length=args.max_subseq,
        fix_noise=args.fix_noise,
        fingerprint=FingerprintConfig(args.nbits, args.radius),
        split=evaluation.SplitSpec(getattr(args, "train_frac", 0.9),
                                   getattr(args, "repeats", 20), args.seed),
        budget=gp.OptBudget(args.restarts, args.max_evals, args.seed, args.fix_noise),
        out_dir=args.out_dir)


def _dataset_inputs(args, cfg: data.RunConfig):
    ds = data.load_csv(args.dataset, args.smiles_col, args.target_col)
    if args.fingerprints:
        if cfg.representation != "fingerprint":
            raise kernels.RepresentationMismatch(
                "precomputed fingerprints need the tanimoto kernel")
        inputs = data.load_fingerprints(args.fingerprints, cfg.fingerprint.n_bits, ds)
    else:
        inputs = data.featurize(ds.smiles, cfg.representation, cfg.fingerprint)
    return ds, inputs


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def cmd_tokenize(args) -> int:
    for smi in _smiles_inputs(args):
        toks = tokenize(smi)
        if args.kinds:
            print(" ".join(f"{t.kind.value}:{t.text}" for t in toks))
        else:
            print(" ".join(t.text for t in toks))
    return EXIT_OK


def cmd_fingerprint(args) -> int:
    cfg = FingerprintConfig(args.nbits, args.radius)
    fps = fingerprint_batch([parse(s) for s in _smiles_inputs(args)], cfg)
    lines = "".join(fp.to_hex() + "\n" for fp in fps)
    if args.output:
        Path(args.output).write_text(lines, encoding="ascii")
    else:
        sys.stdout.write(lines)
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _run_config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ds, inputs = _dataset_inputs(args, cfg)
    kcfg, noise = cfg.kernel_template(), cfg.noise_config()
    trace = None
    if not args.no_optimize:
        kcfg, noise, trace = gp.optimize_hyperparameters(inputs, ds.targets, kcfg, noise,
                                                         cfg.budget)
    model = gp.fit(inputs, ds.targets, kcfg, noise)
    data.save_model(model, out / "model.json",
                    smiles=None if args.fingerprints else ds.smiles,
                    fingerprint_config=cfg.fingerprint if cfg.kernel == "tanimoto" else None)
    with open(out / "lml_trace.csv", "w", encoding="utf-8") as fh:
        fh.write("evaluation,lml,best_lml\n")
        if trace is not None:
            for i, (v, b) in enumerate(zip(trace.values, trace.best_so_far)):
                fh.write(f"{i},{v!r},{b!r}\n")
    data.write_manifest(out / "manifest.txt", "fit", cfg, args.dataset,
                        {"n_molecules": len(ds)})
    print(f"fitted {cfg.kernel} GP on {len(ds)} molecules; "
          f"LML {model.log_marginal_likelihood:.4f}; model written to {out / 'model.json'}")
    return EXIT_OK


def cmd_predict(args) -> int:
    mf = data.read_model_file(args.model)
    if args.fingerprints:
        if mf.representation != "fingerprint":
            raise kernels.RepresentationMismatch(
                "model uses a string kernel; fingerprints cannot be scored")
        n_bits = mf.model.train_inputs[0].n_bits
        inputs = data.read_hex_file(args.fingerprints, n_bits)
        labels = [str(i) for i in range(len(inputs))]
    else:
        labels = _smiles_inputs(args)
        inputs = mf.featurize(labels)
    means, stds = gp.predict_arrays(mf.model, inputs)
    fh = open(args.output, "w", encoding="utf-8", newline="") if args.output else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["smiles", "mean", "std"])
        for lab, m, s in zip(labels, means, stds):
            w.writerow([lab, repr(float(m)), repr(float(s))])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def _benchmark(args, cfg, command):
    ds, inputs = _dataset_inputs(args, cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = evaluation.run_benchmark(inputs, ds.targets, cfg.kernel_template(), cfg.split,
                                      cfg.budget, cfg.noise_config())
    doc = {"dataset": ds.name, "units": ds.units, "kernel": cfg.kernel,
           "n_molecules": len(ds), **result.to_dict()}
    _write_json(out / "results.json", doc)
    with open(out / "predictions.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "index", "smiles", "truth", "mean", "std"])
        for k, s in enumerate(result.per_split):
            for i, t, m, sd in zip(s.test_indices, s.truths, s.means, s.stds):
                w.writerow([k, i, ds.smiles[i], repr(t), repr(m), repr(sd)])
    with open(out / "rmse.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("split,rmse\n")
        for k, e in enumerate(result.per_split_rmse):
            fh.write(f"{k},{e!r}\n")
    data.write_manifest(out / "manifest.txt", command, cfg, args.dataset,
                        {"n_molecules": len(ds)})
    if not args.no_plots:
        from . import plotting

        label = f"{cfg.kernel.upper()} GP, {ds.name}"
        plotting.plot_parity(*result.pooled(), out / "parity.png", ds.units, label)
        plotting.plot_rmse(result.per_split_rmse, out / "rmse.png", label)
    return ds, result


def cmd_benchmark(args) -> int:
    cfg = _run_config(args)
    ds, result = _benchmark(args, cfg, "benchmark")
    print(f"{ds.name} {cfg.kernel}: RMSE {result.rmse_mean:.4f} +- {result.rmse_std:.4f} "
          f"over {len(result.per_split_rmse)} splits")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    grid = evaluation.DEFAULT_QUANTILES
    if args.quantiles:
        try:
            grid = [float(v) for v in args.quantiles.split(",")]
        except ValueError as exc:
            raise UsageError(f"bad --quantiles: {exc}") from exc
    cfg = _run_config(args)
    out = Path(cfg.out_dir)
    if args.results:
        doc = json.loads(Path(args.results).read_text(encoding="utf-8"))
        result = evaluation.BenchmarkResult.from_dict(doc)
        name = doc.get("dataset", "")
        out.mkdir(parents=True, exist_ok=True)
    elif args.dataset:
        ds, result = _benchmark(args, cfg, "calibrate")
        name = ds.name
    else:
        raise UsageError("calibrate needs --dataset or --results")
    curve = result.calibration(grid, args.mode)
    curve.to_csv(out / "calibration.csv")
    if not args.no_plots:
        from . import plotting

        plotting.plot_calibration({f"{cfg.kernel.upper()} GP": curve},
                                  out / "calibration.png", name)
    print(f"calibration curve written to {out / 'calibration.csv'}; "
          f"max |C(q) - q| = {curve.max_deviation():.4f}")
    return EXIT_OK


COMMANDS = {"tokenize": cmd_tokenize, "fingerprint": cmd_fingerprint, "fit": cmd_fit,
            "predict": cmd_predict, "benchmark": cmd_benchmark, "calibrate": cmd_calibrate}

DATA_ERRORS = (data.DataError, SmilesError, EmptyMolecule, kernels.KernelError, gp.GpError,
               evaluation.DatasetTooSmall, FileNotFoundError, UnicodeDecodeError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # usage errors, --help and --version
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    kernels.configure_threads()
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"molgp {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as exc:
        print(f"molgp {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
