import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from molgp import cli, data, gp
from molgp.fingerprint import FingerprintConfig
from molgp.kernels import SskConfig, TanimotoConfig

from conftest import ESOL, FREESOLV, need


def write_csv(path, rows, header=("smiles", "y")):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


@pytest.fixture
def small_csv(tmp_path, esol):
    rows = list(zip(esol.smiles[:40], esol.targets[:40]))
    return write_csv(tmp_path / "small.csv", rows)


class TestLoadCsv:
    def test_esol_count(self, esol):
        assert len(esol) == 1128 and not esol.skipped_rows
        assert esol.units == "log mol/L"

    def test_freesolv_count(self, freesolv):
        assert len(freesolv) == 642
        assert freesolv.units == "kcal/mol"

    def test_malformed_row_skipped(self, tmp_path, caplog):
        path = write_csv(tmp_path / "d.csv", [("CCO", "1.0"), ("CCN", "oops"), ("", "2.0"),
                                              ("CCC", "nan"), ("c1ccccc1", "3.5")])
        with caplog.at_level("WARNING"):
            ds = data.load_csv(path, "smiles", "y")
        assert ds.smiles == ["CCO", "c1ccccc1"]
        assert ds.targets == [1.0, 3.5]
        assert ds.row_indices == [0, 4] and ds.skipped_rows == [1, 2, 3]
        assert "skipped 3 rows" in caplog.text

    def test_one_bad_row(self, tmp_path):
        rows = [(f"C{'C' * i}", str(i)) for i in range(6)]
        rows[2] = (rows[2][0], "")
        ds = data.load_csv(write_csv(tmp_path / "d.csv", rows), "smiles", "y")
        assert len(ds) == len(rows) - 1

    def test_missing_column(self, small_csv):
        with pytest.raises(data.MissingColumn) as exc:
            data.load_csv(small_csv, "smiles", "absent")
        assert exc.value.name == "absent"

    def test_no_valid_rows(self, tmp_path):
        with pytest.raises(data.NoValidRows):
            data.load_csv(write_csv(tmp_path / "d.csv", [("C", "x")]), "smiles", "y")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            data.load_csv(tmp_path / "nope.csv", "smiles", "y")

    def test_idempotent_and_ordered(self):
        a = data.load_csv(need(FREESOLV))
        b = data.load_csv(need(FREESOLV))
        assert a == b
        with open(FREESOLV, encoding="utf-8", newline="") as fh:
            first = next(csv.DictReader(fh))
        assert a.smiles[0] == first["smiles"].strip()

    def test_default_columns(self):
        assert data.default_columns("FreeSolv.csv")[1] == "expt"
        assert data.default_columns("delaney-processed.csv")[2] == "log mol/L"
        assert data.default_columns("other.csv") == (None, None, "")


class TestRunConfig:
    def test_representation_checked(self):
        with pytest.raises(data.RepresentationMismatch):
            data.RunConfig(kernel="ssk", representation="fingerprint")
        assert data.RunConfig(kernel="ssk").representation == "smiles"

    def test_manifest(self, tmp_path, small_csv):
        cfg = data.RunConfig()
        data.write_manifest(tmp_path / "m.txt", "fit", cfg, small_csv, {"n_molecules": 40})
        text = (tmp_path / "m.txt").read_text()
        assert f"dataset_sha256: {data.file_sha256(small_csv)}" in text
        assert "seed: 0" in text and "molgp_version:" in text and "n_molecules: 40" in text


class TestModelFiles:
    @pytest.mark.parametrize("family", ["tanimoto", "ssk"])
    def test_roundtrip(self, tmp_path, esol, family):
        rep = "fingerprint" if family == "tanimoto" else "smiles"
        fp_cfg = FingerprintConfig(1024, 2)
        smiles = esol.smiles[:60]
        inputs = data.featurize(smiles, rep, fp_cfg)
        cfg = TanimotoConfig(1.4) if family == "tanimoto" else SskConfig(0.7, 0.6, 5, 1.2)
        model = gp.fit(inputs, esol.targets[:60], cfg, gp.NoiseConfig(0.05))
        path = tmp_path / "model.json"
        data.save_model(model, path, smiles=smiles,
                        fingerprint_config=fp_cfg if family == "tanimoto" else None)
        mf = data.read_model_file(path)
        held = mf.featurize(esol.smiles[60:70])
        a = gp.predict_arrays(model, held)
        b = gp.predict_arrays(mf.model, held)
        assert np.max(np.abs(a[0] - b[0])) < 1e-10
        assert np.max(np.abs(a[1] - b[1])) < 1e-10
        doc = json.loads(path.read_text())
        assert doc["version"] == data.MODEL_VERSION and doc["gp"]["kernel"]["family"] == family
        assert doc["train_smiles"] == smiles

    def test_hex_only_roundtrip(self, tmp_path, esol_fps, esol):
        model = gp.fit(esol_fps[:30], esol.targets[:30], TanimotoConfig())
        data.save_model(model, tmp_path / "m.json")
        clone = data.load_model(tmp_path / "m.json")
        np.testing.assert_array_equal(clone.alpha, model.alpha)

    def test_version_mismatch(self, tmp_path, esol_fps, esol):
        model = gp.fit(esol_fps[:10], esol.targets[:10], TanimotoConfig())
        path = tmp_path / "m.json"
        data.save_model(model, path)
        doc = json.loads(path.read_text())
        doc["version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(data.VersionMismatch):
            data.load_model(path)

    def test_truncated(self, tmp_path, esol_fps, esol):
        model = gp.fit(esol_fps[:10], esol.targets[:10], TanimotoConfig())
        path = tmp_path / "m.json"
        data.save_model(model, path)
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(data.CorruptFile):
            data.load_model(path)

    def test_not_a_model(self, tmp_path):
        (tmp_path / "x.json").write_text('{"format": "other"}')
        with pytest.raises(data.CorruptFile):
            data.load_model(tmp_path / "x.json")
        (tmp_path / "y.json").write_text('{"format": "molgp-model", "version": 1}')
        with pytest.raises(data.CorruptFile):
            data.load_model(tmp_path / "y.json")


class TestCli:
    def test_tokenize(self, capsys):
        assert cli.main(["tokenize", "c1ccccc1Cl"]) == 0
        assert capsys.readouterr().out.strip() == "c 1 c c c c c 1 Cl"

    def test_tokenize_kinds(self, capsys):
        assert cli.main(["tokenize", "--kinds", "C=O"]) == 0
        assert capsys.readouterr().out.strip() == "OrganicAtom:C Bond:= OrganicAtom:O"

    def test_tokenize_bad_smiles(self, capsys):
        assert cli.main(["tokenize", "C&C"]) == cli.EXIT_DATA
        assert "UnknownCharacter" in capsys.readouterr().err

    def test_fingerprint(self, tmp_path, capsys):
        assert cli.main(["fingerprint", "CCO", "C", "--nbits", "64"]) == 0
        lines = capsys.readouterr().out.split()
        assert len(lines) == 2 and all(len(line) == 16 for line in lines)
        out = tmp_path / "fp.txt"
        assert cli.main(["fingerprint", "CCO", "--output", str(out)]) == 0
        assert len(out.read_text().strip()) == 512

    def test_usage_errors(self, capsys):
        assert cli.main([]) == cli.EXIT_USAGE
        assert cli.main(["bogus"]) == cli.EXIT_USAGE
        assert cli.main(["fit"]) == cli.EXIT_USAGE
        assert cli.main(["tokenize"]) == cli.EXIT_USAGE
        assert cli.main(["calibrate", "--no-plots"]) == cli.EXIT_USAGE

    def test_missing_dataset(self, tmp_path):
        assert cli.main(["fit", "--dataset", str(tmp_path / "no.csv")]) == cli.EXIT_DATA

    def test_missing_model(self, tmp_path):
        assert cli.main(["predict", "--model", str(tmp_path / "no.json"), "C"]) == cli.EXIT_DATA

    def test_fit_predict(self, tmp_path, small_csv, capsys):
        out = tmp_path / "run"
        argv = ["fit", "--dataset", str(small_csv), "--target-col", "y", "--restarts", "1",
                "--max-evals", "30", "--out-dir", str(out)]
        assert cli.main(argv) == 0
        for name in ("model.json", "lml_trace.csv", "manifest.txt"):
            assert (out / name).is_file()
        trace = (out / "lml_trace.csv").read_text().splitlines()
        assert trace[0] == "evaluation,lml,best_lml" and len(trace) > 5
        capsys.readouterr()
        pred = tmp_path / "pred.csv"
        assert cli.main(["predict", "--model", str(out / "model.json"), "CCO", "c1ccccc1",
                         "--output", str(pred)]) == 0
        rows = list(csv.DictReader(open(pred, encoding="utf-8")))
        assert [r["smiles"] for r in rows] == ["CCO", "c1ccccc1"]
        assert all(float(r["std"]) > 0 for r in rows)

    def test_predict_representation_mismatch(self, tmp_path, small_csv, capsys):
        out = tmp_path / "ssk"
        assert cli.main(["fit", "--dataset", str(small_csv), "--target-col", "y", "--kernel",
                         "ssk", "--max-subseq", "3", "--no-optimize", "--out-dir",
                         str(out)]) == 0
        hexes = tmp_path / "fps.txt"
        assert cli.main(["fingerprint", "CCO", "--output", str(hexes)]) == 0
        capsys.readouterr()
        code = cli.main(["predict", "--model", str(out / "model.json"), "--fingerprints",
                         str(hexes)])
        assert code == cli.EXIT_DATA
        assert "RepresentationMismatch" in capsys.readouterr().err

    def test_fit_with_hex_fingerprints(self, tmp_path, small_csv):
        hexes = tmp_path / "fps.txt"
        ds = data.load_csv(small_csv, "smiles", "y")
        assert cli.main(["fingerprint", *ds.smiles, "--output", str(hexes)]) == 0
        out = tmp_path / "hex"
        assert cli.main(["fit", "--dataset", str(small_csv), "--target-col", "y",
                         "--fingerprints", str(hexes), "--no-optimize",
                         "--out-dir", str(out)]) == 0
        assert cli.main(["fit", "--dataset", str(small_csv), "--target-col", "y",
                         "--fingerprints", str(hexes), "--kernel", "ssk",
                         "--out-dir", str(out)]) == cli.EXIT_DATA

    def test_benchmark_and_calibrate(self, tmp_path, small_csv, capsys):
        out = tmp_path / "bench"
        argv = ["benchmark", "--dataset", str(small_csv), "--target-col", "y", "--repeats", "3",
                "--restarts", "1", "--max-evals", "30", "--seed", "2", "--out-dir", str(out)]
        assert cli.main(argv) == 0
        doc = json.loads((out / "results.json").read_text())
        assert doc["n_repeats"] == 3 and len(doc["per_split_rmse"]) == 3
        assert doc["rmse_mean"] == pytest.approx(np.mean(doc["per_split_rmse"]))
        for name in ("predictions.csv", "rmse.csv", "manifest.txt", "parity.png", "rmse.png"):
            assert (out / name).is_file()
        assert (out / "parity.png").read_bytes()[:4] == b"\x89PNG"
        cal = tmp_path / "cal"
        assert cli.main(["calibrate", "--results", str(out / "results.json"), "--quantiles",
                         "0.1,0.5,0.9", "--out-dir", str(cal)]) == 0
        lines = (cal / "calibration.csv").read_text().splitlines()
        assert lines[0] == "q,c_of_q" and len(lines) == 4
        assert [float(line.split(",")[0]) for line in lines[1:]] == [0.1, 0.5, 0.9]
        assert (cal / "calibration.png").is_file()
        assert cli.main(["calibrate", "--results", str(out / "results.json"), "--quantiles",
                         "0.5,abc", "--out-dir", str(cal)]) == cli.EXIT_USAGE

    def test_calibrate_from_dataset(self, tmp_path, small_csv):
        out = tmp_path / "cal"
        assert cli.main(["calibrate", "--dataset", str(small_csv), "--target-col", "y",
                         "--repeats", "2", "--restarts", "1", "--max-evals", "20",
                         "--no-plots", "--mode", "per_split", "--out-dir", str(out)]) == 0
        assert len((out / "calibration.csv").read_text().splitlines()) == 20
        assert not (out / "calibration.png").exists()

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "molgp", "tokenize", "CC"],
                              capture_output=True, text=True, timeout=120)
        assert proc.returncode == 0 and proc.stdout.strip() == "C C"

    def test_version(self, capsys):
        assert cli.main(["--version"]) == 0
        assert capsys.readouterr().out.startswith("molgp ")


def test_esol_dataset_checksum():
    # the bundled file is the public MoleculeNet distribution
    assert data.file_sha256(need(ESOL)).startswith("d377c80b")
