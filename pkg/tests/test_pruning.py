import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pfmprune.errors import ShapeError
from pfmprune.gcn import GcnArchitecture, GcnModel, build_model, forward
from pfmprune.pruning import (apply_masks, binarization_fraction, binarize_masks, connectivity_report,
                              magnitude_prune, mask_rate, observed_pruning_rate)
from pfmprune.tensor import Tensor

TINY = GcnArchitecture(n_nodes=1, in_channels=1, heads=1, conv_filters=1, n_classes=2)


def model_from(values):
    """A model whose latents hold ``values`` (shapes are irrelevant to mask bookkeeping)."""
    a, w, *rest = values
    return GcnModel(TINY, [Tensor([[a]])], [Tensor([[w]])], Tensor(np.array(rest).reshape(-1, 1)))


def test_binarize_examples():
    m = model_from([0.0, 3.0, 0.5])
    assert [x.item() for x in binarize_masks(m, 0.5)] == [0.0, 1.0, 0.0]
    zeros = model_from([0.0, 0.0, 0.0])
    assert all(x.sum() == 0 for x in binarize_masks(zeros, 0.3))


def test_observed_rate_examples():
    assert observed_pruning_rate(model_from([0.0, 3.0, 0.5]), 0.5) == pytest.approx(2 / 3)
    assert observed_pruning_rate(model_from([10.0, -12.0, 11.0]), 0.9) == 0.0
    assert observed_pruning_rate(model_from([0.0, 0.0, 0.0]), 0.1) == 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 0.95))
def test_observed_rate_complements_kept(seed, z):
    model = build_model(GcnArchitecture(4, 6, 1, 8, 3), seed)
    kept = sum(m.sum() for m in binarize_masks(model, z)) / 160
    assert observed_pruning_rate(model, z) + kept == 1.0


def test_magnitude_prune_example():
    masks = magnitude_prune(model_from([0.1, -0.5, 0.3, -0.05]), 0.5)
    assert np.concatenate([m.reshape(-1) for m in masks]).tolist() == [0.0, 1.0, 1.0, 0.0]
    assert all(m.all() for m in magnitude_prune(model_from([0.1, -0.5, 0.3]), 0.0))


def test_magnitude_prune_breaks_ties_by_index():
    masks = magnitude_prune(model_from([0.2, 0.2, 0.2, 0.2]), 0.5)
    assert np.concatenate([m.reshape(-1) for m in masks]).tolist() == [0.0, 0.0, 1.0, 1.0]


def test_magnitude_prune_exact_count():
    arch = GcnArchitecture(5, 6, 2, 4, 3)
    for seed in range(20):
        model = build_model(arch, seed)
        for tpr in (0.1, 0.5, 0.9):
            n = arch.param_count
            assert mask_rate(magnitude_prune(model, tpr)) == np.floor(tpr * n) / n


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 1000), st.floats(0.1, 10.0), st.floats(0.0, 0.95))
def test_magnitude_prune_scale_invariant(seed, c, tpr):
    model = build_model(GcnArchitecture(4, 6, 1, 8, 3), seed)
    scaled = model.copy()
    for t in scaled.latents():
        t.data = t.data * c
    for a, b in zip(magnitude_prune(model, tpr), magnitude_prune(scaled, tpr)):
        assert np.array_equal(a, b)


def test_binarization_fraction_examples():
    assert binarization_fraction([np.array([0.02, 0.98, 0.5])], 0.1) == pytest.approx(2 / 3)
    assert binarization_fraction([np.zeros(5)], 0.1) == 1.0
    assert binarization_fraction([np.full(5, 0.5)], 0.1) == 0.0
    with pytest.raises(ValueError):
        binarization_fraction([np.zeros(2)], 0.5)


def brute_force_dead(arch, masks):
    """Forward reachability over the explicit connection graph."""
    k, n, s, c = arch.heads, arch.n_nodes, arch.in_channels, arch.conv_filters
    g = nx.DiGraph()
    g.add_node("src")
    for v in range(n):
        for i in range(s):
            g.add_edge("src", ("in", v, i))
    for h in range(k):
        adj, w = masks[h], masks[k + h]
        for u in range(n):
            for v in range(n):
                if adj[u, v]:
                    for i in range(s):
                        g.add_edge(("in", v, i), ("agg", h, u, i))
        for u in range(n):
            for i in range(s):
                for f in range(c):
                    if w[i, f]:
                        g.add_edge(("agg", h, u, i), ("hid", u, f))
    fc = masks[2 * k]
    for u in range(n):
        for f in range(c):
            for j in range(arch.n_classes):
                if fc[u * c + f, j]:
                    g.add_edge(("hid", u, f), ("out", j))
    reach = nx.descendants(g, "src")
    hidden_live = {(u, f) for u in range(n) for f in range(c) if ("hid", u, f) in reach}
    return (sum(1 for f in range(c) if not any((u, f) in hidden_live for u in range(n))),
            sum(1 for j in range(arch.n_classes) if ("out", j) not in reach),
            sum(1 for u in range(n) if not any((u, f) in hidden_live for f in range(c))))


def test_connectivity_full_and_one_dead_filter(toy_arch):
    model = build_model(toy_arch, 0)
    full = [np.ones(t.shape) for t in model.latents()]
    assert connectivity_report(model, full).dead_output_units == 0
    full[1][:, 3] = 0
    report = connectivity_report(model, full)
    assert report.dead_output_units >= 1 and report.dead_filters == 1


@pytest.mark.parametrize("seed", range(10))
def test_connectivity_matches_reachability(seed):
    arch = GcnArchitecture(n_nodes=4, in_channels=6, heads=2, conv_filters=8, n_classes=3)
    model = build_model(arch, seed)
    rng = np.random.default_rng(seed)
    density = [0.01, 0.1, 0.3][seed % 3]
    masks = [(rng.random(t.shape) < density).astype(float) for t in model.latents()]
    report = connectivity_report(model, masks)
    assert (report.dead_filters, report.dead_classes, report.dead_nodes) == brute_force_dead(arch, masks)


def test_apply_masks(small_model, rng):
    batch = rng.normal(size=(3, 4, 5))
    ones = [np.ones(t.shape) for t in small_model.latents()]
    zeros = [np.zeros(t.shape) for t in small_model.latents()]
    assert np.array_equal(forward(apply_masks(small_model, ones), batch).data, forward(small_model, batch).data)
    assert np.array_equal(forward(apply_masks(small_model, zeros), batch).data, np.zeros((3, 3)))
    assert small_model.masks is None
    with pytest.raises(ShapeError):
        apply_masks(small_model, ones[:-1])
    with pytest.raises(ShapeError):
        apply_masks(small_model, [np.ones((1, 1))] * len(ones))


def test_pruning_exact_zeros_is_a_no_op(small_model, rng):
    batch = rng.normal(size=(3, 4, 5))
    small_model.conv_latents[0].data[0, :] = 0.0
    masks = [np.ones(t.shape) for t in small_model.latents()]
    masks[2][0, :] = 0.0
    a = forward(small_model, batch).data
    b = forward(apply_masks(small_model, masks), batch).data
    assert np.max(np.abs(a - b)) <= 1e-9 * max(1.0, np.max(np.abs(a)))
