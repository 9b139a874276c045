import math

import numpy as np
import pytest

from gradcheck import check
from sccam import tensor as T
from sccam.errors import FormatError, ShapeError, StateError
from sccam.losses import supervised_contrastive_loss
from sccam.model import (
    SCCAM,
    ClassifierParams,
    ModelConfig,
    classify,
    deserialize_params,
    encoder_forward,
    serialize_params,
)
from sccam.tensor import Tensor


def small_config(**kw):
    base = dict(height=3, width=4, n_classes=2, hidden=6, embed_dim=4, alpha=3, seed=3)
    base.update(kw)
    return ModelConfig(**base)


def test_zero_params_give_identical_embeddings(rng):
    model = SCCAM.init(small_config(normalize=False))
    for t in model.tensors().values():
        t.data[...] = 0.0
    z = encoder_forward(rng.normal(size=(5, 3, 4)), model.encoder, model.config, "train").embedding.data
    assert np.all(z == z[0])


def test_refined_map_keeps_window_shape(rng):
    cfg = ModelConfig(height=5, width=20, hidden=8, embed_dim=4)
    model = SCCAM.init(cfg)
    art = encoder_forward(rng.normal(size=(3, 1, 5, 20)), model.encoder, cfg, "train")
    assert art.refined.shape == (3, 32, 5, 20)
    assert art.spatial_map.shape == (3, 1, 5, 20)
    np.testing.assert_allclose(np.linalg.norm(art.embedding.data, axis=1), 1.0, atol=1e-10)


def test_window_mismatch_rejected(rng):
    model = SCCAM.init(small_config())
    with pytest.raises(ShapeError):
        model.forward(rng.normal(size=(2, 3, 5)), "train")


def test_infer_without_training_raises(rng):
    model = SCCAM.init(small_config())
    with pytest.raises(StateError):
        model.forward(rng.normal(size=(2, 3, 4)))


def test_end_to_end_scl_gradient(rng):
    model = SCCAM.init(small_config())
    x = rng.uniform(-2, 2, size=(4, 3, 4))
    labels = [0, 0, 1, 1]
    params = list(model.encoder.tensors().values())
    check(lambda: supervised_contrastive_loss(
        encoder_forward(x, model.encoder, model.config, "train").embedding, labels, 0.5), params, tol=1e-4)


def test_infer_mode_batch_independent_and_deterministic(rng):
    model = SCCAM.init(small_config())
    x = rng.normal(size=(6, 3, 4))
    model.forward(x, "train")
    full = model.forward(x).logits.data
    singles = np.concatenate([model.forward(x[i:i + 1]).logits.data for i in range(6)])
    np.testing.assert_array_equal(full, model.forward(x).logits.data)
    np.testing.assert_allclose(singles, full, rtol=0, atol=1e-13)


def test_classify_zero_weights_uniform_and_lowest_label():
    clf = ClassifierParams(Tensor(np.zeros((3, 4))))
    out = classify(np.ones((2, 4)), clf)
    np.testing.assert_allclose(out.probabilities, 1 / 3)
    np.testing.assert_array_equal(out.labels, [0, 0])


def test_classify_closed_form():
    out = classify(np.array([3.0, 1.0]), ClassifierParams(Tensor(np.eye(2))))
    e2 = math.exp(2)
    np.testing.assert_allclose(out.probabilities, [e2 / (e2 + 1), 1 / (e2 + 1)], rtol=1e-15)
    assert out.labels == 0


def test_classify_shift_invariant_label(rng):
    z = rng.normal(size=(10, 4))
    w = rng.normal(size=(3, 4))
    base = classify(z, ClassifierParams(Tensor(w))).labels
    shifted = np.argmax(z @ w.T + 7.5, axis=1)
    np.testing.assert_array_equal(base, shifted)


def test_checkpoint_round_trip_bitwise(rng, tmp_path):
    model = SCCAM.init(small_config())
    model.forward(rng.normal(size=(4, 3, 4)), "train")
    model.extras["std_mean"] = np.arange(3.0)
    blob = serialize_params(model)
    again = deserialize_params(blob)
    assert again.config == model.config
    for name, t in model.tensors().items():
        assert again.tensors()[name].data.tobytes() == t.data.tobytes()
    assert again.encoder.bn2.running_var.tobytes() == model.encoder.bn2.running_var.tobytes()
    np.testing.assert_array_equal(again.extras["std_mean"], np.arange(3.0))
    assert serialize_params(again) == blob
    model.save(tmp_path / "m.ckpt")
    assert SCCAM.load(tmp_path / "m.ckpt").to_bytes() == blob


def test_truncated_or_corrupt_checkpoint_rejected(rng):
    blob = SCCAM.init(small_config()).to_bytes()
    with pytest.raises(FormatError, match="checksum"):
        deserialize_params(blob[:-100])
    bad = bytearray(blob)
    bad[40] ^= 0xFF
    with pytest.raises(FormatError):
        deserialize_params(bytes(bad))
    with pytest.raises(FormatError, match="magic"):
        deserialize_params(b"NOTACKPT" + blob[8:])


def test_version_mismatch_rejected():
    from sccam import binfmt
    blob = binfmt.pack(b"SCCAMCKP", 99, {"config": {}}, {})
    with pytest.raises(FormatError, match="version"):
        deserialize_params(blob)
