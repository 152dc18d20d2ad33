import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pfmprune import tensor as T
from pfmprune.errors import ConfigError, DomainError
from pfmprune.phasefield import PhaseFieldParams, phase_field_energy, ultra_local
from pfmprune.regularizers import (KINDS, RegularizerSpec, assemble_regularizer, entropy_reg, l0_reg,
                                   l1_reg, l2_cost_reg)
from pfmprune.tensor import Tensor

from conftest import central_diff

masks_st = arrays(np.float64, st.integers(1, 20), elements=st.floats(0.0, 0.999))


def test_l1():
    assert l1_reg([Tensor(np.zeros(4))]).item() == 0.0
    assert l1_reg([Tensor([0.2, 0.8])]).item() == pytest.approx(1.0)
    m = Tensor([0.1, 0.5, 0.9], requires_grad=True)
    T.backward(l1_reg([m]))
    assert m.grad.tolist() == [1.0, 1.0, 1.0]


def test_entropy():
    assert entropy_reg([Tensor([0.0])]).item() == 0.0
    assert entropy_reg([Tensor([0.5])]).item() == pytest.approx(0.693147, abs=1e-6)
    grid = np.linspace(0, 0.999, 1000)
    vals = [entropy_reg([Tensor([g])]).item() for g in grid]
    assert abs(grid[int(np.argmax(vals))] - 0.5) < 1e-3
    assert min(vals) == vals[0]


def test_l2_cost():
    assert l2_cost_reg([Tensor([1.0, 0.0])], 0.5).item() == 0.0
    assert l2_cost_reg([Tensor([1.0, 1.0])], 0.5).item() == pytest.approx(0.25)
    assert l2_cost_reg([Tensor(np.ones(5))], 1e-12).item() == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(DomainError):
        l2_cost_reg([Tensor([0.5])], 1.0)


def test_l0():
    assert l0_reg([Tensor([0.0])]).item() == 0.0
    assert l0_reg([Tensor([0.1])], tau=0.1).item() == pytest.approx(0.632121, abs=1e-6)
    assert l0_reg([Tensor([0.99])], tau=0.05).item() == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(DomainError):
        l0_reg([Tensor([0.5])], tau=0.0)


@pytest.mark.parametrize("tau", [0.05, 0.1, 0.25])
def test_l0_counts_binary_corners(tau):
    for corner in itertools.product([0.0, 1.0], repeat=3):
        count = sum(1 for c in corner if c != 0)
        assert abs(l0_reg([Tensor(list(corner))], tau).item() - count) < 1e-6


def test_assemble_none_and_balanced_pfm():
    m = [Tensor([0.2, 0.7, 0.9])]
    assert assemble_regularizer(RegularizerSpec("none", lam=5.0), m).item() == 0.0
    spec = RegularizerSpec("pfm", lam=2.0, target_tpr=0.5, normalize=False)
    expect = 2.0 * float(ultra_local(np.array([0.2, 0.7, 0.9]), PhaseFieldParams(0.0, 3.0)).sum())
    assert assemble_regularizer(spec, m).item() == pytest.approx(expect, abs=1e-12)


def test_assemble_joint_is_additive():
    vals = np.array([0.2, 0.7, 0.9])
    spec = RegularizerSpec("l1", lam=1.5, pfm_joint=True, normalize=False)
    got = assemble_regularizer(spec, [Tensor(vals)]).item()
    expect = 1.5 * (vals.sum() + ultra_local(vals, PhaseFieldParams(0.0, 3.0)).sum())
    assert got == pytest.approx(expect, abs=1e-12)
    normalized = RegularizerSpec("l1", lam=1.5, pfm_joint=True)
    assert assemble_regularizer(normalized, [Tensor(vals)]).item() == pytest.approx(expect / 3, abs=1e-12)


def test_pfm_kind_uses_tpr_alpha():
    vals = np.array([0.1, 0.95, 0.99])
    spec = RegularizerSpec("pfm", lam=1.0, target_tpr=0.9, normalize=False)
    expect = ultra_local(vals, PhaseFieldParams(2 * 3 * 0.9 - 3, 3.0)).sum()
    assert assemble_regularizer(spec, [Tensor(vals)]).item() == pytest.approx(expect, abs=1e-12)


def test_spec_validation():
    with pytest.raises(ConfigError):
        RegularizerSpec("pfm", pfm_joint=True)
    with pytest.raises(ConfigError):
        RegularizerSpec("l3")
    with pytest.raises(ConfigError):
        RegularizerSpec("l1", lam=-1)
    with pytest.raises(ConfigError):
        RegularizerSpec("l1", target_tpr=1.0)


@settings(max_examples=40, deadline=None)
@given(masks_st)
def test_nonnegativity_and_pfm_bound(m):
    masks = [Tensor(m)]
    for kind in ("l0", "l1", "l2cost", "entropy"):
        assert assemble_regularizer(RegularizerSpec(kind, lam=1.0), masks).item() >= 0.0
    for tpr in (0.2, 0.5, 0.95):
        p = PhaseFieldParams.for_tpr(tpr)
        bound = m.size * min(ultra_local(0.0, p), ultra_local(1.0, p))
        assert phase_field_energy(masks, p).item() >= bound - 1e-12


@pytest.mark.parametrize("kind,joint", [(k, j) for k in KINDS for j in (False, True) if not (k == "pfm" and j)])
def test_regularizer_gradients_match_fd(kind, joint):
    spec = RegularizerSpec(kind, lam=1.3, pfm_joint=joint, target_tpr=0.8, normalize=False)
    m0 = np.random.default_rng(9).uniform(0.02, 0.98, size=12)
    m = Tensor(m0, requires_grad=True)
    loss = assemble_regularizer(spec, [m])
    T.backward(loss)
    grad = np.zeros_like(m0) if m.grad is None else m.grad
    fd = central_diff(lambda v: assemble_regularizer(spec, [Tensor(v)]).item(), m0)
    assert np.max(np.abs(grad - fd) / np.maximum(1, np.abs(grad))) < 1e-6
