"""Numpy forward modes: cross-mode equivalence, the unfolded-sum oracle,
degenerations, masking, causality and the underflow guard."""

import numpy as np
import pytest

from gateloop import modes, reference
from gateloop.modes import GateLoopInputs, SurrogateUnderflowError

RNG = np.random.default_rng(11)


def random_inputs(batch, length, heads, d_h=1, mag_range=(0.5, 1.0)):
    shape = (batch, length, heads, d_h)
    mag = RNG.uniform(*mag_range, size=shape)
    phase = RNG.uniform(-np.pi, np.pi, size=shape)
    return GateLoopInputs(
        q=RNG.normal(size=shape) + 1j * RNG.normal(size=shape),
        k=RNG.normal(size=shape) + 1j * RNG.normal(size=shape),
        v=RNG.normal(size=shape),
        a=mag * np.exp(1j * phase),
    )


def rel_err(x, y, floor=1e-250):
    return float((np.abs(x - y) / np.maximum(np.abs(y), floor)).max())


# -- oracle equivalence -----------------------------------------------------------

@pytest.mark.parametrize("length", [1, 2, 5, 33, 128])
def test_all_modes_match_unfolded_sum(length):
    inp = random_inputs(2, length, 3, mag_range=(0.8, 1.0))
    truth = reference.unfolded_reference(inp)
    for fn in (modes.recurrent_forward, modes.scan_forward,
               modes.attention_forward):
        assert rel_err(fn(inp), truth) < 1e-10, fn.__name__


def test_recurrent_general_state_matches_general_oracle():
    inp = random_inputs(2, 12, 2, d_h=3, mag_range=(0.8, 1.0))
    truth = reference.unfolded_reference_general(inp)
    assert rel_err(modes.recurrent_forward(inp), truth) < 1e-10


def test_general_state_reduces_to_scalar_case():
    inp = random_inputs(1, 9, 2, d_h=1)
    got = reference.unfolded_reference_general(inp)
    assert rel_err(got, reference.unfolded_reference(inp)) < 1e-12


@pytest.mark.parametrize("length", [1, 2, 127, 512, 4096])
def test_recurrent_vs_scan_long_lengths(length):
    inp = random_inputs(1, length, 2, mag_range=(1e-6, 1.0))
    assert rel_err(modes.scan_forward(inp),
                   modes.recurrent_forward(inp)) < 1e-11


def test_attention_vs_others_moderate_length():
    inp = random_inputs(2, 256, 2, mag_range=(0.9, 1.0))
    rec = modes.recurrent_forward(inp)
    assert rel_err(modes.attention_forward(inp), rec) < 1e-8
    assert rel_err(modes.scan_forward(inp), rec) < 1e-8


# -- degenerations -----------------------------------------------------------------

def test_constant_transition_matches_retention_oracle():
    b, l, heads = 2, 256, 3
    shape = (b, l, heads, 1)
    q = RNG.normal(size=shape) + 1j * RNG.normal(size=shape)
    k = RNG.normal(size=shape) + 1j * RNG.normal(size=shape)
    v = RNG.normal(size=shape)
    a_const = (RNG.uniform(0.9, 0.999, size=(b, heads))
               * np.exp(1j * RNG.uniform(-0.1, 0.1, size=(b, heads))))
    a = np.broadcast_to(a_const[:, None, :, None], shape)
    inp = GateLoopInputs(q, k, v, a)
    truth = reference.retnet_oracle(q[..., 0], k[..., 0], v[..., 0], a_const)
    for fn in (modes.recurrent_forward, modes.scan_forward,
               modes.attention_forward):
        assert rel_err(fn(inp)[..., 0], truth) < 1e-11, fn.__name__


def test_unit_qk_constant_transition_matches_convolution_oracle():
    b, l, heads = 1, 256, 2
    shape = (b, l, heads, 1)
    v = RNG.normal(size=shape)
    a_const = RNG.uniform(0.9, 0.99, size=(b, heads)) * np.exp(
        1j * RNG.uniform(-0.05, 0.05, size=(b, heads)))
    inp = GateLoopInputs(np.ones(shape), np.ones(shape), v,
                         np.broadcast_to(a_const[:, None, :, None], shape))
    truth = reference.s4_conv_oracle(v[..., 0], a_const)
    for fn in (modes.recurrent_forward, modes.scan_forward,
               modes.attention_forward):
        assert rel_err(fn(inp)[..., 0], truth) < 1e-11, fn.__name__


# -- causality and masking ----------------------------------------------------------

def test_future_perturbation_leaves_past_untouched():
    length, cut = 40, 17
    inp = random_inputs(1, length, 2)
    base = modes.recurrent_forward(inp)
    pert = GateLoopInputs(inp.q.copy(), inp.k.copy(), inp.v.copy(), inp.a.copy())
    pert.q[:, cut + 1:] = RNG.normal(size=pert.q[:, cut + 1:].shape)
    pert.k[:, cut + 1:] *= 3.0
    pert.v[:, cut + 1:] -= 5.0
    pert.a[:, cut + 1:] *= 0.1
    assert np.array_equal(modes.recurrent_forward(pert)[:, :cut + 1],
                          base[:, :cut + 1])
    assert rel_err(modes.scan_forward(pert)[:, :cut + 1],
                   base[:, :cut + 1]) < 1e-12


def test_masked_region_of_attention_scores_is_inert():
    length = 24
    inp = random_inputs(1, length, 2, mag_range=(0.9, 1.0))
    base = modes.attention_forward(inp)
    poison = np.triu(np.full((length, length), 1e6), k=1)
    assert np.array_equal(modes.attention_forward(inp, score_perturb=poison),
                          base)


def test_softmax_attention_rows_are_causal_distributions():
    inp = random_inputs(2, 16, 2, mag_range=(0.9, 1.0))
    y = modes.softmax_attention_forward(inp)
    assert np.isrealobj(y)
    # Reconstruct the weights by feeding one-hot values through each column.
    v0 = np.zeros_like(inp.v)
    weights = []
    for m in range(16):
        v = v0.copy()
        v[:, m] = 1.0
        col = modes.softmax_attention_forward(
            GateLoopInputs(inp.q, inp.k, v, inp.a))
        weights.append(col[..., 0])
    w = np.stack(weights, axis=-1)  # (b, n, h, m)
    assert np.allclose(w.sum(axis=-1), 1.0, atol=1e-12)
    for n in range(16):
        assert np.allclose(w[:, n, :, n + 1:], 0.0)


# -- underflow guard ------------------------------------------------------------------

def test_surrogate_underflow_raises_while_linear_modes_survive():
    shape = (1, 512, 1, 1)
    inp = GateLoopInputs(np.ones(shape) + 0j, np.ones(shape) + 0j,
                         RNG.normal(size=shape),
                         np.full(shape, 0.2 + 0j))
    with pytest.raises(SurrogateUnderflowError):
        modes.attention_forward(inp)
    rec = modes.recurrent_forward(inp)
    sc = modes.scan_forward(inp)
    assert np.all(np.isfinite(rec.view(np.float64)))
    assert rel_err(sc, rec) < 1e-11


def test_shape_validation():
    with pytest.raises(ValueError):
        GateLoopInputs(np.ones((1, 4, 2, 1)), np.ones((1, 4, 2, 1)),
                       np.ones((1, 5, 2, 1)), np.ones((1, 4, 2, 1)))
    with pytest.raises(ValueError):
        GateLoopInputs(np.ones((4, 2)), np.ones((4, 2)),
                       np.ones((4, 2)), np.ones((4, 2)))


def test_debug_checks_flag_catches_nonfinite():
    inp = random_inputs(1, 4, 1)
    inp.v[0, 2] = np.nan
    modes.recurrent_forward(inp)  # silent by default
    modes.debug_checks = True
    try:
        with pytest.raises(FloatingPointError):
            modes.recurrent_forward(inp)
    finally:
        modes.debug_checks = False
