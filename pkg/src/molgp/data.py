"""Dataset ingestion, run configuration, model files and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

from . import __version__, gp
from .evaluation import SplitSpec
from .fingerprint import Fingerprint, FingerprintConfig, fingerprint_batch, read_hex_file
from .kernels import RepresentationMismatch, SskConfig, TanimotoConfig
from .smiles import parse, symbols

__all__ = [
    "DATASET_COLUMNS",
    "CorruptFile",
    "DataError",
    "Dataset",
    "MissingColumn",
    "ModelFile",
    "NoValidRows",
    "RunConfig",
    "VersionMismatch",
    "featurize",
    "file_sha256",
    "load_csv",
    "load_model",
    "read_model_file",
    "save_model",
    "write_manifest",
]

log = logging.getLogger(__name__)

MODEL_FORMAT = "molgp-model"
MODEL_VERSION = 1

# (smiles column, target column, units) of the public distributions
DATASET_COLUMNS = {
    "esol": ("smiles", "measured log solubility in mols per litre", "log mol/L"),
    "delaney": ("smiles", "measured log solubility in mols per litre", "log mol/L"),
    "freesolv": ("smiles", "expt", "kcal/mol"),
    "photoswitch": ("SMILES", "E isomer pi-pi* wavelength in nm", "nm"),
}


class DataError(ValueError):
    pass


class MissingColumn(DataError):
    def __init__(self, name: str, path=None):
        super().__init__(f"column {name!r} not found" + (f" in {path}" if path else ""))
        self.name = name


class NoValidRows(DataError):
    pass


class VersionMismatch(DataError):
    pass


class CorruptFile(DataError):
    pass


@dataclass
class Dataset:
    smiles: list[str]
    targets: list[float]
    name: str = ""
    units: str = ""
    row_indices: list[int] = field(default_factory=list)
    skipped_rows: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.smiles) != len(self.targets):
            raise DataError("smiles and targets differ in length")
        if not self.row_indices:
            self.row_indices = list(range(len(self.smiles)))

    def __len__(self) -> int:
        return len(self.smiles)


def default_columns(path) -> tuple[str | None, str | None, str]:
    stem = Path(path).stem.lower()
    if stem in DATASET_COLUMNS:
        return DATASET_COLUMNS[stem]
    # longest key first so "freesolv" is not taken for "esol"
    for key in sorted(DATASET_COLUMNS, key=len, reverse=True):
        if key in stem:
            return DATASET_COLUMNS[key]
    return None, None, ""


def load_csv(path, smiles_column: str | None = None, target_column: str | None = None,
             name: str | None = None) -> Dataset:
    """Read a header-row CSV; unusable rows are skipped and logged.

    Column names default by file name for ESOL, FreeSolv and Photoswitch.
    SMILES cells are stripped of surrounding whitespace.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset not found: {path}")
    d_smiles, d_target, units = default_columns(path)
    smiles_column = smiles_column or d_smiles or "smiles"
    target_column = target_column or d_target
    if target_column is None:
        raise MissingColumn("<target column not specified>", path)
    smiles, targets, rows, skipped = [], [], [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in (smiles_column, target_column):
            if col not in header:
                raise MissingColumn(col, path)
        for i, row in enumerate(reader):
            smi = (row.get(smiles_column) or "").strip()
            raw = (row.get(target_column) or "").strip()
            try:
                value = float(raw)
            except ValueError:
                value = math.nan
            if not smi or not math.isfinite(value):
                skipped.append(i)
                continue
            smiles.append(smi)
            targets.append(value)
            rows.append(i)
    if skipped:
        log.warning("%s: skipped %d rows without a usable SMILES/target: %s", path.name,
                    len(skipped), skipped[:20] if len(skipped) > 20 else skipped)
    if not smiles:
        raise NoValidRows(f"no valid rows in {path}")
    log.info("%s: loaded %d rows, skipped %d", path.name, len(smiles), len(skipped))
    return Dataset(smiles, targets, name or path.stem, units, rows, skipped)


def featurize(smiles: Sequence[str], representation: str,
              fp_config: FingerprintConfig = FingerprintConfig()):
    """Fingerprints (``"fingerprint"``) or kernel symbol sequences (``"smiles"``)."""
    if representation == "fingerprint":
        return fingerprint_batch([parse(s) for s in smiles], fp_config)
    if representation == "smiles":
        return [symbols(s) for s in smiles]
    raise ValueError(f"unknown representation {representation!r}")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --------------------------------------------------------------------------
# run configuration
# --------------------------------------------------------------------------

KERNEL_REPRESENTATION = {"tanimoto": "fingerprint", "ssk": "smiles"}


@dataclass
class RunConfig:
    kernel: str = "tanimoto"
    representation: str = ""
    signal_variance: float = 1.0
    noise_variance: float = 0.1
    match_decay: float = 0.5
    gap_decay: float = 0.5
    max_subsequence_length: int = 5
    fix_noise: bool = False
    fingerprint: FingerprintConfig = field(default_factory=FingerprintConfig)
    split: SplitSpec = field(default_factory=SplitSpec)
    budget: gp.OptBudget = field(default_factory=gp.OptBudget)
    out_dir: str = "."

    def __post_init__(self):
        if self.kernel not in KERNEL_REPRESENTATION:
            raise ValueError(f"unknown kernel {self.kernel!r}")
        expected = KERNEL_REPRESENTATION[self.kernel]
        if not self.representation:
            self.representation = expected
        if self.representation != expected:
            raise RepresentationMismatch(
                f"kernel {self.kernel!r} needs the {expected!r} representation, "
                f"not {self.representation!r}")

    def kernel_template(self):
        if self.kernel == "tanimoto":
            return TanimotoConfig(self.signal_variance)
        return SskConfig(self.match_decay, self.gap_decay, self.max_subsequence_length,
                         self.signal_variance)

    def noise_config(self) -> gp.NoiseConfig:
        return gp.NoiseConfig(self.noise_variance)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("out_dir")
        return d


def write_manifest(path, command: str, config: RunConfig, dataset_path=None,
                   extra: dict | None = None) -> None:
    """Plain-text ``key: value`` record of everything that determines a run."""
    lines = [f"command: {command}",
             f"molgp_version: {__version__}",
             f"seed: {config.split.seed}",
             f"config: {json.dumps(config.to_dict(), sort_keys=True)}"]
    if dataset_path is not None:
        lines.append(f"dataset: {Path(dataset_path).name}")
        lines.append(f"dataset_sha256: {file_sha256(dataset_path)}")
    for k, v in sorted((extra or {}).items()):
        lines.append(f"{k}: {v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------
# model files
# --------------------------------------------------------------------------

@dataclass
class ModelFile:
    model: gp.GpModel
    representation: str
    smiles: list[str] | None = None
    fingerprint_config: FingerprintConfig | None = None

    def featurize(self, smiles: Sequence[str]):
        return featurize(smiles, self.representation,
                         self.fingerprint_config or FingerprintConfig())


def save_model(model: gp.GpModel, path, *, smiles: Sequence[str] | None = None,
               fingerprint_config: FingerprintConfig | None = None) -> None:
    payload = gp.serialize(model)
    representation = "fingerprint" if isinstance(model.kernel_config, TanimotoConfig) \
        else "smiles"
    if smiles is not None:
        if len(smiles) != len(model.train_inputs):
            raise DataError("smiles list does not match the training set")
        payload.pop("train_inputs")
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "molgp_version": __version__,
        "representation": representation,
        "fingerprint": asdict(fingerprint_config) if fingerprint_config else None,
        "train_smiles": list(smiles) if smiles is not None else None,
        "gp": payload,
    }
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")
    os.replace(tmp, path)


def read_model_file(path) -> ModelFile:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise CorruptFile(f"{path}: not a readable model file ({exc})") from exc
    if not isinstance(doc, dict) or doc.get("format") != MODEL_FORMAT:
        raise CorruptFile(f"{path}: not a molgp model file")
    if doc.get("version") != MODEL_VERSION:
        raise VersionMismatch(f"{path}: model format version {doc.get('version')!r}, "
                              f"this library reads version {MODEL_VERSION}")
    try:
        fp_cfg = FingerprintConfig(**doc["fingerprint"]) if doc.get("fingerprint") else None
        smiles = doc.get("train_smiles")
        representation = doc["representation"]
        inputs = None
        if smiles is not None:
            inputs = featurize(smiles, representation, fp_cfg or FingerprintConfig())
        model = gp.deserialize(doc["gp"], inputs)
    except (KeyError, TypeError, AttributeError) as exc:
        raise CorruptFile(f"{path}: missing or malformed field ({exc})") from exc
    return ModelFile(model, representation, smiles, fp_cfg)


def load_model(path) -> gp.GpModel:
    return read_model_file(path).model


def load_fingerprints(path, n_bits: int, dataset: Dataset | None = None) -> list[Fingerprint]:
    """Hex fingerprints; with ``dataset`` the lines align to its CSV data rows."""
    fps = read_hex_file(path, n_bits)
    if dataset is None:
        return fps
    if max(dataset.row_indices) >= len(fps):
        raise DataError(f"{path}: {len(fps)} fingerprints but the dataset has more rows")
    return [fps[i] for i in dataset.row_indices]
