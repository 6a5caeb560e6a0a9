import numpy as np
import pytest

from motioncloud import eigenspace
from motioncloud import pipeline as P
from motioncloud import synth


def test_features_block_mean():
    t = np.arange(2 * 8 * 8, dtype=np.uint8).reshape(2, 8, 8)
    f = P.features(t, 4)
    assert f.shape == (2, 4)
    assert f[0, 0] == pytest.approx(t[0, :4, :4].mean())
    assert P.features(t, 1).shape == (2, 64)


def test_trained_model_classifies_its_own_clips(small_items, small_model):
    for label, _, f in small_items:
        sig = small_model.signature(eigenspace.project_many(small_model.eigen, f))
        assert small_model.classify(sig)[0] == label


def test_model_round_trip(small_model, tmp_path):
    P.save_action_model(small_model, str(tmp_path))
    m2 = P.load_action_model(str(tmp_path))
    assert m2.classes == small_model.classes
    assert m2.d0 == pytest.approx(small_model.d0)
    assert np.allclose(m2.rest_point, small_model.rest_point)
    assert m2.config == small_model.config
    assert len(m2.fuzzy_context) == len(small_model.fuzzy_context)


def test_static_clip_is_null(small_model, small_spec):
    frames = synth.static_clip(np.random.default_rng(0), 20, small_spec.size)
    _, sig = P.clip_signature(small_model, frames)
    assert small_model.is_null(sig)


def test_moving_clip_is_not_null(small_model, small_spec):
    frames = synth.render_clip("run", np.random.default_rng(9), 20, small_spec.size)
    _, sig = P.clip_signature(small_model, frames)
    assert not small_model.is_null(sig)


def test_short_clip_rejected(small_model, small_spec):
    frames = synth.render_clip("wave", np.random.default_rng(1), 4, small_spec.size)
    with pytest.raises(P.PipelineError, match="too short"):
        P.clip_signature(small_model, frames)


def test_unknown_kernel_and_empty_input(small_items):
    with pytest.raises(P.PipelineError):
        P.train_model([], "poly")
    with pytest.raises(P.PipelineError, match="unknown kernel"):
        P.train_model(small_items, "rbf")


def test_auto_degree_records_curve(small_items):
    m = P.train_model(small_items, "poly", "auto", K=4, degree_range=(1, 2, 3))
    assert set(m.degree_curve) == {1, 2, 3}
    assert m.eigen.degree == max(m.degree_curve, key=lambda d: (m.degree_curve[d], -d))


def test_corrupt_model_dir(tmp_path):
    with pytest.raises(ValueError):
        P.load_action_model(str(tmp_path))
