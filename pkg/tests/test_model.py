"""Whole-pipeline forward pass, compositing identities, checkpointing."""

import numpy as np
import pytest

from mvinpaint.config import RunConfig
from mvinpaint.data import Dataset, dataset_write
from mvinpaint.model import forward_frame, init_generator, load_model, save_model, trainable
from mvinpaint.tensor import no_grad

CFG = RunConfig(width=32, height=32, n_frames=6)


@pytest.fixture(scope="module")
def ds(tmp_path_factory):
    out = tmp_path_factory.mktemp("model_ds")
    dataset_write(CFG.scene_spec(), out)
    return Dataset(out)


@pytest.fixture(scope="module")
def params():
    return init_generator(CFG, 0)


def test_forward_frame_shapes_and_stats(ds, params):
    with no_grad():
        res = forward_frame(3, ds, params, CFG)
    assert res.f_hat.shape == (3, 32, 32)
    assert res.f_tilde.shape == (3, 32, 32)
    assert res.frame.shape == (3, 32, 32)
    assert res.err.shape == (32, 32) and res.covered.dtype == bool
    assert res.stats["n_p"] > 0 and res.stats["n_r"] > 0
    assert len(res.stats["context_sizes"]) == CFG.n_g * CFG.n_b
    assert res.stats["macs_total"] >= res.stats["macs_post"] > 0


def test_forward_composites_through_the_error_mask(ds, params):
    with no_grad():
        res = forward_frame(3, ds, params, CFG)
    keep = res.err == 0
    assert keep.any() and (~keep).any()
    np.testing.assert_array_equal(res.f_hat.data[:, keep], res.frame[:, keep])
    np.testing.assert_array_equal(res.f_hat.data[:, ~keep], res.f_tilde.data[:, ~keep])


def test_forward_decodes_over_every_hole(ds, params):
    with no_grad():
        res = forward_frame(5, ds, params, CFG)
    assert res.err.any()
    assert res.covered[res.err > 0].all()


def test_forward_dense_equals_full_retention(ds, params):
    with no_grad():
        a = forward_frame(4, ds, params, CFG)
        b = forward_frame(4, ds, params, CFG, rho=1.0)
    np.testing.assert_array_equal(a.f_hat.data, b.f_hat.data)
    assert a.stats["macs_post"] == b.stats["macs_post"]


def test_forward_sparsify_reduces_context(ds, params):
    with no_grad():
        dense = forward_frame(4, ds, params, CFG)
        sparse = forward_frame(4, ds, params, CFG, rho=0.25)
    assert sparse.stats["macs_post"] < dense.stats["macs_post"]
    assert max(sparse.stats["context_sizes"]) <= max(dense.stats["context_sizes"])


def test_trainable_lists_every_generator_weight(params):
    ps = trainable(params)
    assert len(ps) == len(params)
    assert all(p.requires_grad for p in ps)


def test_checkpoint_roundtrip(tmp_path, params):
    save_model(tmp_path / "ck", params, CFG, extra={"step": "42"})
    restored, cfg2, extra = load_model(tmp_path / "ck")
    assert cfg2 == CFG
    assert extra == {"step": "42"}
    assert set(restored) == set(params)
    for name in params:
        np.testing.assert_array_equal(restored[name].data, params[name].data)
        assert restored[name].requires_grad


def test_checkpoint_preserves_outputs(tmp_path, ds, params):
    save_model(tmp_path / "ck2", params, CFG)
    restored, cfg2, _ = load_model(tmp_path / "ck2")
    with no_grad():
        a = forward_frame(2, ds, params, CFG)
        b = forward_frame(2, ds, restored, cfg2)
    np.testing.assert_array_equal(a.f_hat.data, b.f_hat.data)
