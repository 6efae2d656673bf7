import json
import shutil

import numpy as np
import pytest

from grouplatent.autoencoder import AutoencoderConfig, decode_batch, init_autoencoder
from grouplatent.dataset import GroupSelector, fit_standardizer, load_dataset
from grouplatent.errors import ConfigError, ShapeError, ValidationError
from grouplatent.gmm import GmmModel
from grouplatent.pipeline import (
    STAGES,
    PipelineConfig,
    RunManifest,
    StageError,
    emit_generator_handoff,
    read_generator_handoff,
    run_full_pipeline,
    run_sample_group,
    sampled_dataset,
    sha256_file,
)

TINY = {
    "data": {"n_per_group": 40, "dim": 16, "sem_dim": 4},
    "autoencoder": {"encoder_dims": [16, 32, 8]},
    "training": {"epochs": 3, "batch_size": 32},
    "gmm": {"n_components": 2},
    "n_samples": 30,
    "evaluation": {"classifier_epochs": 20, "score_samples": 30},
}


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    manifest = run_full_pipeline(PipelineConfig.from_dict(TINY), out, timestamp="T0")
    return out, manifest


# -- sampling and handoff ---------------------------------------------------


def test_run_sample_group_degenerate(rng):
    model = init_autoencoder(AutoencoderConfig(encoder_dims=(6, 4, 3), seed=0, dtype="float64"))
    model.standardizer = fit_standardizer(rng.standard_normal((20, 6)) * 2 + 1)
    mu = rng.standard_normal((2, 3))
    gmm = GmmModel([0.0, 1.0], mu, np.full((2, 3), 1e-12))
    w, b = run_sample_group(model, gmm, 1, seed=0)
    expected = model.standardizer.inverse(decode_batch(model, mu[1:2]))
    np.testing.assert_allclose(w, expected, atol=1e-5)
    w2, _ = run_sample_group(model, gmm, 1, seed=0)
    np.testing.assert_array_equal(w, w2)
    raw, _ = run_sample_group(model, gmm, 1, seed=0, st=None)
    np.testing.assert_allclose(raw, decode_batch(model, mu[1:2]), atol=1e-5)


def test_run_sample_group_dim_mismatch():
    model = init_autoencoder(AutoencoderConfig(encoder_dims=(6, 3), seed=0))
    with pytest.raises(ShapeError):
        run_sample_group(model, GmmModel([1.0], [[0.0, 0.0]], [[1.0, 1.0]]), 5, 0)


def test_sampled_dataset_labels(schema):
    ds = sampled_dataset(schema, GroupSelector.parse("gender=female"), np.ones((4, 3)))
    assert ds.schema.values("race")[-1] == "?unknown"
    np.testing.assert_array_equal(ds.labels, [[1, 2]] * 4)


def test_handoff_round_trip(tmp_path, rng):
    lat = rng.standard_normal((3, 8192)).astype(np.float32)
    path = tmp_path / "h.f32"
    side = emit_generator_handoff(lat, path, 16)
    meta = json.loads(side.read_text())
    assert meta["shape"] == [3, 16, 512]
    assert meta["dtype"] == "float32" and meta["byte_order"] == "little"
    back = read_generator_handoff(path)
    np.testing.assert_array_equal(back.reshape(3, -1), lat)
    assert path.stat().st_size == 3 * 8192 * 4


def test_handoff_indivisible(tmp_path):
    with pytest.raises(ValidationError):
        emit_generator_handoff(np.zeros((2, 64)), tmp_path / "x.f32", 5)


# -- config -----------------------------------------------------------------


def test_config_unknown_key_and_group():
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"bogus": 1})
    with pytest.raises(ValidationError):
        PipelineConfig.from_dict({"groups": ["gender=robot"]})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"n_samples": 0})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"data": {"source": "file", "path": "/nonexistent.latd"}})


def test_config_hash_and_seeds():
    a = PipelineConfig.from_dict(TINY)
    b = PipelineConfig.from_dict(json.loads(json.dumps(TINY)))
    assert a.hash() == b.hash()
    assert PipelineConfig.from_dict(TINY, seed=1).hash() != a.hash()
    assert a.stage_seed("gmm", "x") == b.stage_seed("gmm", "x")
    assert a.stage_seed("gmm", "x") != a.stage_seed("gmm", "y")


def test_unknown_group_fails_before_training(tmp_path):
    cfg = PipelineConfig.from_dict(TINY)
    cfg.raw["groups"] = ["gender=robot"]
    with pytest.raises(ValidationError):
        run_full_pipeline(cfg, tmp_path / "r")
    assert not (tmp_path / "r" / "model.lmae").exists()


# -- full run ---------------------------------------------------------------


def test_manifest_lists_every_file(tiny_run):
    out, manifest = tiny_run
    listed = {a["path"] for a in manifest.artifacts()}
    on_disk = {p.name for p in out.iterdir()} - {"manifest.json"}
    assert listed == on_disk
    for art in manifest.artifacts():
        assert sha256_file(out / art["path"]) == art["sha256"]
    assert list(manifest.stages) == list(STAGES)
    stored = json.loads((out / "manifest.json").read_text())
    assert stored["manifest_hash"] == manifest.content_hash()
    assert stored["versions"]["backend"] in ("numpy", "numba")


def test_sample_files(tiny_run):
    out, _ = tiny_run
    s = load_dataset(out / "samples_gender-female_race-white.latd")
    assert len(s) == 30 and s.dim == 16
    np.testing.assert_array_equal(np.unique(s.labels, axis=0), [[1, 0]])
    assert any(p.name.startswith("report_confusion_gender_T0") for p in out.iterdir())


def test_rerun_identical(tiny_run, tmp_path):
    out, manifest = tiny_run
    again = run_full_pipeline(PipelineConfig.from_dict(TINY), tmp_path / "b", timestamp="T9")
    assert again.content_hash() == manifest.content_hash()
    for art in manifest.artifacts():
        if art["path"].endswith((".latd", ".lmae", ".lgmm")):
            assert (out / art["path"]).read_bytes() == (tmp_path / "b" / art["path"]).read_bytes()


def test_resume_skips_and_rebuilds(tiny_run, tmp_path):
    out, manifest = tiny_run
    copy = tmp_path / "c"
    shutil.copytree(out, copy)
    resumed = run_full_pipeline(PipelineConfig.from_dict(TINY), copy, timestamp="T0")
    assert resumed.content_hash() == manifest.content_hash()
    # deleting a downstream artifact re-runs that stage and everything after it
    (copy / "gmm_gender-male_race-white.lgmm").unlink()
    rebuilt = run_full_pipeline(PipelineConfig.from_dict(TINY), copy, timestamp="T1")
    assert rebuilt.content_hash() == manifest.content_hash()
    assert (copy / "gmm_gender-male_race-white.lgmm").exists()
    assert rebuilt.stages["train_ae"]["seconds"] == manifest.stages["train_ae"]["seconds"]
    names = {p.name for p in copy.iterdir()}
    assert not any("_T0." in n for n in names if n.startswith("report_"))


def test_stop_after_stage(tmp_path):
    m = run_full_pipeline(PipelineConfig.from_dict(TINY), tmp_path, stop_after="split")
    assert list(m.stages) == ["data", "split"]
    assert RunManifest.read(tmp_path).config_hash == m.config_hash
    with pytest.raises(ConfigError):
        run_full_pipeline(PipelineConfig.from_dict(TINY), tmp_path, stop_after="nope")


def test_stage_failure_names_stage(tmp_path):
    cfg = PipelineConfig.from_dict(dict(TINY, gmm={"n_components": 20}))
    with pytest.raises(StageError) as err:
        run_full_pipeline(cfg, tmp_path)
    assert err.value.stage == "fit_gmm"
    assert (tmp_path / "model.lmae").exists()


def test_file_source(tiny_run, tmp_path):
    out, _ = tiny_run
    cfg = dict(TINY, data={"source": "file", "path": str(out / "dataset.latd")})
    m = run_full_pipeline(PipelineConfig.from_dict(cfg), tmp_path, stop_after="split")
    assert (tmp_path / "dataset.latd").read_bytes() == (out / "dataset.latd").read_bytes()
    assert m.stages["split"]["artifacts"]["train.latd"]["sha256"] == sha256_file(out / "train.latd")
