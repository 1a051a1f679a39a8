import json

import numpy as np
import pytest

import ambireg


SMALL_PHANTOM = {"dims": [20, 40, 20], "spacing_mm": [6.0, 6.0, 6.0]}
SMALL_CAMERA = {"detector_px": [16, 12], "pixel_pitch_mm": 16.0}


def tiny_overrides():
    return [
        "seed=5",
        "data.n_train_phantoms=2",
        "data.n_test_phantoms=1",
        "data.poses_per_phantom=6",
        "data.calibration_renders=10",
        "data.phantom.dims=[20,40,20]",
        "data.phantom.spacing_mm=[6,6,6]",
        "camera.detector_px=[16,12]",
        "camera.pixel_pitch_mm=16",
        "condnet.volume_input_dims=[8,16,8]",
        "condnet.image_input_dims=[16,12]",
        "condnet.blocks=2",
        "condnet.volume_channels=[2,2]",
        "condnet.image_channels=[2,3]",
        "condnet.fusion_hidden=8",
        "condnet.cond_dim=6",
        "flow.depth=2",
        "flow.hidden=8",
        "flow.cond_dim=6",
        "stage1.epochs=2",
        "stage1.batch_size=4",
        "stage2.epochs=3",
        "stage2.batch_size=4",
        "modes.n_samples=256",
        "eval.histogram_cases=2",
    ]


def test_default_config_round_trips():
    cfg = ambireg.default_config()
    assert cfg["flow"]["depth"] == 8
    assert ambireg.resolve_config(cfg) == cfg
    changed = ambireg.resolve_config(cfg, ["stage2.epochs=7"])
    assert changed["stage2"]["epochs"] == 7


def test_unknown_config_key_is_rejected():
    with pytest.raises(ambireg.ConfigError):
        ambireg.resolve_config({"flow": {"depthh": 3}})


def test_phantom_symmetry_and_marker():
    vol, spacing = ambireg.make_phantom(SMALL_PHANTOM, seed=3)
    assert vol.shape == (20, 40, 20)
    assert vol.dtype == np.float32
    assert np.array_equal(ambireg.rot180_volume(vol, spacing), vol)
    assert np.array_equal(vol[::-1, :, ::-1], vol)

    marked, _ = ambireg.make_phantom(SMALL_PHANTOM, seed=3, marker=True)
    assert np.abs(marked[::-1, :, ::-1] - marked).max() > 0.1


def test_half_turn_matches_lao_flip():
    vol, spacing = ambireg.make_phantom(SMALL_PHANTOM, seed=1, marker=True)
    pose = {"tx": 4.0, "ty": -3.0, "tz": 6.0, "lao": 12.0, "cran": -9.0}
    flipped = dict(pose, lao=192.0)
    a = ambireg.render_drr(ambireg.rot180_volume(vol, spacing), spacing, pose, SMALL_CAMERA)
    b = ambireg.render_drr(vol, spacing, flipped, SMALL_CAMERA)
    c = ambireg.render_drr(vol, spacing, pose, SMALL_CAMERA)
    assert a.shape == (12, 16)
    assert np.abs(a - b).mean() < 1e-6 * max(1.0, b.mean())
    assert np.abs(c - b).mean() > 0.05 * b.mean()


def test_detect_modes_separates_two_clusters():
    rng = np.random.default_rng(0)
    x = rng.normal(0.0, 0.05, size=(2000, 5))
    x[:1000, 3] += 0.8
    x[1000:, 3] -= 0.8
    report = ambireg.detect_modes(x, threshold=2000.0, seed=1)
    assert report["label"] == "multi-modal"
    means = sorted(v[3] for v in report["mode_vectors"])
    assert means[0] == pytest.approx(-0.8, abs=0.02)
    assert means[1] == pytest.approx(0.8, abs=0.02)

    single = ambireg.detect_modes(x[:1000], threshold=2000.0, seed=1)
    assert single["label"] == "uni-modal"


def test_detect_modes_rejects_bad_shape():
    with pytest.raises(ambireg.ParameterError):
        ambireg.detect_modes(np.zeros((10, 4)))


def test_tiny_pipeline(tmp_path):
    cfg = ambireg.resolve_config(None, tiny_overrides())
    data = ambireg.gen_data(cfg, tmp_path / "data")
    assert data["norm_constant"] > 0.0

    result = ambireg.train(cfg, data["train_manifest"], tmp_path / "run", resume=False)
    assert result["finished"]
    assert len(result["stage1_loss"]) == 2
    assert len(result["stage2_loss"]) == 3

    summary = ambireg.evaluate(cfg, result["model"], data["test_manifest"], tmp_path / "eval")
    subsets = {s["subset"]: s for s in summary["subsets"]}
    assert subsets["all"]["n_total"] == 6

    with open(data["test_manifest"]) as f:
        lines = [json.loads(line) for line in f if line.strip()]
    record = next(r for r in lines if "image_path" in r)
    root = tmp_path / "data"
    report = ambireg.infer(cfg, result["model"], root / record["volume_path"], root / record["image_path"], seed=2)
    assert report["label"] in ("uni-modal", "multi-modal")
    assert len(report["mode_poses"]) in (1, 2)
