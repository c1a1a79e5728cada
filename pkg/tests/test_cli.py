import json
import os
import shutil

import numpy as np
import pytest

from geoforest.cli import main
from geoforest.pipeline import load_manifest
from geoforest.volume import read_label_mhd, read_mhd

from _cases import make_tiny_manifest

TINY_CONFIG = {
    "mode": "with_geodesic",
    "background_margin": 6,
    "train": {"n_trees": 2, "max_depth": 6, "min_samples_split": 4,
              "n_candidate_features": 24, "samples_per_class_per_volume": 120,
              "bagging_fraction": 1.0,
              "feature_ranges": {"offset_range": 3, "max_extent": 3}},
}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("cli")
    make_tiny_manifest(str(directory / "data"), n_cases=4)
    config_path = directory / "config.json"
    config_path.write_text(json.dumps(TINY_CONFIG))
    return directory


def test_geodesic_command_smoke(workdir, capsys):
    data = workdir / "data"
    out = workdir / "geo.mhd"
    rc = main(["geodesic", "--ct", str(data / "case0_ct.mhd"),
               "--annotation", str(data / "case0_right.json"),
               "--gamma", "1.5", "--out", str(out)])
    assert rc == 0
    vol = read_mhd(str(out))
    assert vol.dims == (24, 20, 12)
    assert vol.data.min() == 0.0 and vol.data.max() <= 1.0


def test_geodesic_missing_ct_is_usage_error(workdir, capsys):
    with pytest.raises(SystemExit) as err:
        main(["geodesic", "--annotation", "x.json", "--out", "y.mhd"])
    assert err.value.code == 2


def test_geodesic_negative_gamma_is_usage_error(workdir):
    data = workdir / "data"
    with pytest.raises(SystemExit) as err:
        main(["geodesic", "--ct", str(data / "case0_ct.mhd"),
              "--annotation", str(data / "case0_right.json"),
              "--gamma", "-1", "--out", str(workdir / "no.mhd")])
    assert err.value.code == 2


def test_geodesic_unreadable_input_exit_1(workdir, capsys):
    rc = main(["geodesic", "--ct", str(workdir / "absent.mhd"),
               "--annotation", str(workdir / "absent.json"),
               "--out", str(workdir / "no.mhd")])
    assert rc == 1
    assert "error:" in capsys.readouterr().err


def test_train_predict_evaluate_flow(workdir, capsys):
    data = workdir / "data"
    manifest = str(data / "manifest.json")
    config = str(workdir / "config.json")
    model = str(workdir / "model.json")

    assert main(["train", "--manifest", manifest, "--config", config,
                 "--seed", "3", "--out", model]) == 0
    assert os.path.exists(model)

    pred_dir = str(workdir / "preds")
    assert main(["predict", "--manifest", manifest, "--model", model,
                 "--config", config, "--out", pred_dir]) == 0
    cases = load_manifest(manifest)
    for case in cases:
        pred = read_label_mhd(os.path.join(pred_dir, f"{case.case_id}.mhd"))
        assert pred.dims == (24, 20, 12)

    out_dir = str(workdir / "report")
    assert main(["evaluate", "--manifest", manifest, "--config", config,
                 "--k", "2", "--seed", "1", "--out-dir", out_dir]) == 0
    assert os.path.exists(os.path.join(out_dir, "report.json"))
    assert os.path.exists(os.path.join(out_dir, "report.csv"))
    assert os.path.exists(os.path.join(out_dir, "dice_right.png"))
    assert os.path.exists(os.path.join(out_dir, "dice_left.png"))
    doc = json.loads(open(os.path.join(out_dir, "report.json")).read())
    assert {r["mode"] for r in doc["rows"]} == {"baseline_ct_only", "with_geodesic"}


def test_train_is_idempotent(workdir):
    data = workdir / "data"
    manifest = str(data / "manifest.json")
    config = str(workdir / "config.json")
    m1, m2 = str(workdir / "m1.json"), str(workdir / "m2.json")
    assert main(["train", "--manifest", manifest, "--config", config,
                 "--seed", "9", "--out", m1]) == 0
    assert main(["train", "--manifest", manifest, "--config", config,
                 "--seed", "9", "--out", m2]) == 0
    assert open(m1, "rb").read() == open(m2, "rb").read()


def test_predict_mode_mismatch_exit_1(workdir, capsys):
    data = workdir / "data"
    manifest = str(data / "manifest.json")
    config = str(workdir / "config.json")
    model = str(workdir / "baseline_model.json")
    assert main(["train", "--manifest", manifest, "--config", config,
                 "--mode", "baseline_ct_only", "--seed", "3",
                 "--out", model]) == 0
    rc = main(["predict", "--manifest", manifest, "--model", model,
               "--config", config, "--case", "case0",
               "--out", str(workdir / "mismatch.mhd")])
    assert rc == 1
    assert "channel layout mismatch" in capsys.readouterr().err


def test_evaluate_score_only_identity_gives_dice_one(workdir, capsys):
    data = workdir / "data"
    manifest = str(data / "manifest.json")
    pred_dir = workdir / "identity_preds"
    pred_dir.mkdir(exist_ok=True)
    for case in load_manifest(manifest):
        for ext in (".mhd", ".raw"):
            src = os.path.splitext(case.ground_truth_path)[0] + ext
            shutil.copy(src, str(pred_dir / f"{case.case_id}{ext}"))
        # header references the original raw name; rewrite it
        header = pred_dir / f"{case.case_id}.mhd"
        text = header.read_text().replace(
            os.path.basename(os.path.splitext(case.ground_truth_path)[0]) + ".raw",
            f"{case.case_id}.raw")
        header.write_text(text)
    out_dir = str(workdir / "score_report")
    rc = main(["evaluate", "--manifest", manifest, "--pred-dir", str(pred_dir),
               "--out-dir", out_dir])
    assert rc == 0
    doc = json.loads(open(os.path.join(out_dir, "report.json")).read())
    assert all(row["dice"] == 1.0 for row in doc["rows"])


def test_phantom_command(workdir):
    out_dir = str(workdir / "phantoms")
    assert main(["phantom", "--out-dir", out_dir, "--count", "2"]) == 0
    cases = load_manifest(os.path.join(out_dir, "manifest.json"))
    assert len(cases) == 2
    assert read_mhd(cases[0].ct_path).dims == (96, 96, 64)
