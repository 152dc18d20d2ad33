import numpy as np
import pytest

from pfmprune import tensor as T
from pfmprune.errors import ConfigError, DataError, ShapeError
from pfmprune.gcn import (GcnArchitecture, build_model, forward, gcn_block_forward, load_checkpoint,
                          param_count, save_checkpoint)
from pfmprune.phasefield import psi_np
from pfmprune.tensor import Tensor


def test_block_trivial_cases():
    u = Tensor(np.random.default_rng(0).normal(size=(3, 2)))
    out = gcn_block_forward(u, [Tensor(np.eye(2))], [Tensor(np.zeros((3, 4)))], "identity")
    assert np.array_equal(out.data, np.zeros((2, 4)))
    swap = Tensor([[0.0, 1.0], [1.0, 0.0]])
    out = gcn_block_forward(Tensor(np.eye(2)), [swap], [Tensor([[1.0], [2.0]])], "identity")
    assert out.data.tolist() == [[2.0], [1.0]]


def test_block_additive_heads(rng):
    u = Tensor(rng.normal(size=(3, 4)))
    a, w = Tensor(rng.normal(size=(4, 4))), Tensor(rng.normal(size=(3, 2)))
    one = gcn_block_forward(u, [a], [w], "identity").data
    two = gcn_block_forward(u, [a, Tensor(np.zeros((4, 4)))], [w, Tensor(rng.normal(size=(3, 2)))],
                            "identity").data
    np.testing.assert_array_equal(one, two)


def test_block_head_mismatch():
    with pytest.raises(ConfigError):
        gcn_block_forward(Tensor(np.ones((2, 2))), [Tensor(np.eye(2))] * 2, [Tensor(np.ones((2, 1)))])


def test_block_permutation_equivariance(rng):
    n, s, c = 6, 4, 3
    u = rng.normal(size=(s, n))
    adj = [rng.normal(size=(n, n)) for _ in range(2)]
    w = [rng.normal(size=(s, c)) for _ in range(2)]
    perm = rng.permutation(n)
    p = np.eye(n)[:, perm]
    base = gcn_block_forward(Tensor(u), [Tensor(a) for a in adj], [Tensor(x) for x in w]).data
    moved = gcn_block_forward(Tensor(u @ p), [Tensor(p.T @ a @ p) for a in adj], [Tensor(x) for x in w]).data
    np.testing.assert_allclose(moved, base[perm], atol=1e-12)


def test_param_count(toy_arch):
    model = build_model(toy_arch, seed=0)
    assert toy_arch.param_count == 160
    assert param_count(model) == 160
    model.fc_latent.data[:] = 5.0
    assert param_count(model) == 160


@pytest.mark.parametrize("init", ["phase_uniform", "glorot"])
def test_build_is_deterministic(toy_arch, init):
    a, b = build_model(toy_arch, 3, init=init), build_model(toy_arch, 3, init=init)
    c = build_model(toy_arch, 4, init=init)
    for x, y, z in zip(a.latents(), b.latents(), c.latents()):
        assert x.data.tobytes() == y.data.tobytes()
        assert not np.array_equal(x.data, z.data)


def test_phase_uniform_init_spreads_masks():
    arch = GcnArchitecture(n_nodes=10, in_channels=12, conv_filters=16, n_classes=4)
    prior = np.eye(10) + np.eye(10, k=1) + np.eye(10, k=-1)
    model = build_model(arch, 0, adjacency=prior)
    for m in model.soft_masks():
        # stratified: exactly one mask value per 1/N bin
        bins = np.floor(np.sort(m.reshape(-1)) * m.size + 1e-9).astype(int)
        assert np.array_equal(bins, np.arange(m.size))
    adj_mask = model.soft_masks()[0]
    assert adj_mask[prior != 0].min() > adj_mask[prior == 0].max()


def test_glorot_adjacency_is_prior_plus_noise(toy_arch):
    prior = np.eye(4)
    model = build_model(toy_arch, 0, adjacency=prior, init="glorot")
    assert np.abs(model.adjacency_latents[0].data - prior).max() < 0.1


def _reference_logits(model, batch):
    arch = model.arch
    ga, gw, gf = arch.gains()
    eff = [t.data * psi_np(t.data) for t in model.latents()]
    k = arch.heads
    rows = []
    for u in batch:
        h = gcn_block_forward(Tensor(u), [Tensor(a * ga) for a in eff[:k]],
                              [Tensor(w * gw) for w in eff[k:2 * k]], arch.activation).data
        rows.append(h.reshape(-1) @ (eff[2 * k] * gf))
    return np.array(rows)


def test_forward_matches_per_sample_reference(small_model, rng):
    batch = rng.normal(size=(7, 4, 5))
    np.testing.assert_allclose(forward(small_model, batch).data, _reference_logits(small_model, batch),
                               rtol=1e-12, atol=1e-12)


def test_forward_zero_latents_and_identical_rows(small_model, rng):
    for t in small_model.latents():
        t.data[:] = 0.0
    assert np.array_equal(forward(small_model, rng.normal(size=(3, 4, 5))).data, np.zeros((3, 3)))
    model = build_model(small_model.arch, 1)
    sample = rng.normal(size=(4, 5))
    out = forward(model, np.stack([sample] * 4)).data
    assert all(np.array_equal(out[0], row) for row in out)


def test_forward_shape_error(small_model):
    with pytest.raises(ShapeError):
        forward(small_model, np.zeros((2, 5, 4)))


def test_forward_is_pure(small_model, rng):
    batch = rng.normal(size=(3, 4, 5))
    assert forward(small_model, batch).data.tobytes() == forward(small_model, batch).data.tobytes()


def test_forward_gradient(small_model, rng):
    batch = rng.normal(size=(3, 4, 5))
    labels = rng.integers(0, 3, size=3)
    err = T.grad_check(lambda _: T.softmax_cross_entropy(forward(small_model, batch), labels),
                       small_model.latents())
    assert err < 1e-5


def test_checkpoint_roundtrip(tmp_path, small_model, rng):
    path = tmp_path / "m.ckpt"
    small_model.masks = [np.ones(t.shape) for t in small_model.latents()]
    save_checkpoint(small_model, path)
    loaded = load_checkpoint(path)
    assert loaded.arch == small_model.arch
    for a, b in zip(loaded.latents(), small_model.latents()):
        assert a.data.tobytes() == b.data.tobytes()
    batch = rng.normal(size=(2, 4, 5))
    assert np.array_equal(forward(loaded, batch).data, forward(small_model, batch).data)


def test_checkpoint_rejects_garbage(tmp_path, small_model):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"nope\n")
    with pytest.raises(DataError):
        load_checkpoint(bad)
    path = tmp_path / "m.ckpt"
    save_checkpoint(small_model, path)
    path.write_bytes(path.read_bytes()[:-16])
    with pytest.raises(DataError):
        load_checkpoint(path)


def test_arch_validation():
    with pytest.raises(ConfigError):
        GcnArchitecture(n_nodes=0, in_channels=3)
    with pytest.raises(ConfigError):
        GcnArchitecture(n_nodes=3, in_channels=3, n_classes=1)
    with pytest.raises(ConfigError):
        GcnArchitecture(n_nodes=3, in_channels=3, activation="tanh")
