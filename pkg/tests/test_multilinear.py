"""Multilinear algebra: blocks, norms, pushforward, and the jet operators."""
from __future__ import annotations

import math
import sys
from pathlib import Path

import numpy as np
import pytest

from folcomp import MLMap, adapted_norm, pushforward, symmetrize
from folcomp.errors import NearSingularDenominator, OrderMismatch
from folcomp.multilinear import (
    adapted_norm_coeffs_1d,
    block_norm,
    block_patterns,
    block_split,
    dc_compose,
    dcp_product,
    dicp_inverse,
    inverse_jets_kernel,
    ordered_compositions,
    pushforward_batch,
    sym_tensor,
    zero_map,
)
from folcomp.norms import build_perron, bundle

sys.path.insert(0, str(Path(__file__).resolve().parent))
from _poly import mixed_partial, poly_eval, poly_jet, poly_jet_mlmaps, random_poly  # noqa: E402


def test_mlmap_shape_checks():
    with pytest.raises(OrderMismatch):
        MLMap(k=2, n=1, coeffs=np.zeros((2, 3, 1)))
    with pytest.raises(OrderMismatch):
        MLMap(k=6, n=1, coeffs=np.zeros((2,) * 6 + (1,)))
    m = MLMap(k=1, n=1, coeffs=np.zeros((2,)))   # scalar values gain an axis
    assert m.coeffs.shape == (2, 1)


def test_symmetrize_idempotent_and_invariant():
    rng = np.random.default_rng(0)
    b = MLMap(k=3, n=2, coeffs=rng.standard_normal((3, 3, 3, 2)))
    s = symmetrize(b)
    assert np.allclose(s.coeffs, symmetrize(s).coeffs)
    assert np.allclose(s.coeffs, np.transpose(s.coeffs, (1, 0, 2, 3)))
    assert np.allclose(s.coeffs, np.transpose(s.coeffs, (2, 1, 0, 3)))


def test_block_split_partitions_exactly():
    rng = np.random.default_rng(1)
    b = MLMap(k=2, n=2, coeffs=rng.standard_normal((3, 3, 2)))
    parts = block_split(b)
    assert set(parts) == set(block_patterns(2))
    total = sum(p.coeffs for p in parts.values())
    assert np.array_equal(total, b.coeffs)


def test_block_patterns_order():
    assert block_patterns(2) == [("E", "E"), ("E", "F"), ("F", "E"), ("F", "F")]


def test_ordered_composition_counts():
    for k in range(1, 6):
        for q in range(1, k + 1):
            assert len(ordered_compositions(k, q)) == math.comb(k - 1, q - 1)


def test_adapted_norm_matches_1d_fast_path():
    rng = np.random.default_rng(2)
    pd = build_perron(bundle(0.1, 0.1, 0.1), 2)
    for _ in range(20):
        b = MLMap(k=2, n=1, coeffs=rng.standard_normal((2, 2, 1)))
        slow = adapted_norm(b, pd)
        fast = adapted_norm_coeffs_1d(b.coeffs[None], 2, pd.weights)[0]
        assert slow == pytest.approx(fast, rel=1e-12)


def test_block_norm_singleton_is_abs():
    b = MLMap(k=2, n=1, coeffs=np.array([[[1.5], [-2.0]], [[0.25], [3.0]]]))
    assert block_norm(b, ("E", "F")) == pytest.approx(2.0)
    assert block_norm(b, ("F", "F")) == pytest.approx(3.0)


def test_pushforward_is_argument_composition():
    rng = np.random.default_rng(4)
    b = MLMap(k=2, n=2, coeffs=rng.standard_normal((3, 3, 2)))
    M = rng.standard_normal((3, 3))
    vecs = [rng.standard_normal(3) for _ in range(2)]
    direct = b.apply([M @ v for v in vecs])
    pushed = pushforward(b, M).apply(vecs)
    assert np.allclose(direct, pushed, atol=1e-12)
    batched = pushforward_batch(b.coeffs[None], M[None], 2)[0]
    assert np.allclose(batched, pushforward(b, M).coeffs, atol=1e-12)


def test_zero_map_applies_to_zero():
    z = zero_map(3, 1)
    assert np.all(z.apply([np.ones(2)] * 3) == 0.0)


def test_dc_compose_equals_composite_derivative():
    rng = np.random.default_rng(6)
    n, d = 2, 3
    p = rng.uniform(-0.3, 0.3, d)
    f = random_poly(rng, d, d, 2, scale=0.5)
    nu = random_poly(rng, d, n, 2, scale=0.4)
    fp = poly_eval(f, p[None])[0]
    f_ml = poly_jet_mlmaps(f, p, 3, n)[1:]
    nu_ml = poly_jet_mlmaps(nu, fp, 3, n)
    for k in (1, 2, 3):
        vecs = [rng.uniform(-1, 1, d) for _ in range(k)]
        got = dc_compose(nu_ml[1:k + 1], f_ml, k, 1, k).apply(vecs)
        ref = mixed_partial(lambda q: poly_eval(nu, poly_eval(f, q[None]))[0],
                            p, vecs, h=0.25)
        assert np.max(np.abs(got - ref)) < 1e-10


def test_dc_compose_window_validation():
    z1 = zero_map(1, 1)
    with pytest.raises(OrderMismatch):
        dc_compose([z1], [z1], 2, 3, 1)
    with pytest.raises(OrderMismatch):
        dc_compose([z1], [z1], 3, 1, 2)     # inner jets must reach order k1-k2+1


def test_dcp_product_equals_product_derivative():
    rng = np.random.default_rng(7)
    n, d = 1, 2
    p = rng.uniform(-0.3, 0.3, d)
    f = random_poly(rng, d, d, 2, scale=0.5)
    nu = random_poly(rng, d, n, 2, scale=0.3)
    B = random_poly(rng, d, n, 2, scale=0.3)
    fp = poly_eval(f, p[None])[0]
    f_ml = poly_jet_mlmaps(f, p, 3, n)[1:]
    nu_ml = poly_jet_mlmaps(nu, fp, 3, n)
    B_ml = poly_jet_mlmaps(B, p, 3, n)

    def w(q):
        return float(poly_eval(nu, poly_eval(f, q[None]))[0] @ poly_eval(B, q[None])[0])

    for k in (1, 2, 3):
        vecs = [rng.uniform(-1, 1, d) for _ in range(k)]
        got = float(dcp_product(nu_ml, f_ml, B_ml, k, 0, k).apply(vecs)[0])
        assert got == pytest.approx(mixed_partial(w, p, vecs, h=0.25), abs=1e-10)


def test_dicp_inverse_equals_reciprocal_derivative():
    rng = np.random.default_rng(8)
    n, d = 1, 2
    p = rng.uniform(-0.3, 0.3, d)
    f = random_poly(rng, d, d, 2, scale=0.5)
    nu = random_poly(rng, d, n, 2, scale=0.3)
    B = random_poly(rng, d, n, 2, scale=0.3)
    fp = poly_eval(f, p[None])[0]
    f_ml = poly_jet_mlmaps(f, p, 3, n)[1:]
    nu_ml = poly_jet_mlmaps(nu, fp, 3, n)
    B_ml = poly_jet_mlmaps(B, p, 3, n)
    denom = 1.0 - float(poly_eval(nu, fp[None])[0] @ poly_eval(B, p[None])[0])

    def g(q):
        return 1.0 / (1.0 - float(poly_eval(nu, poly_eval(f, q[None]))[0]
                                  @ poly_eval(B, q[None])[0]))

    for k in (1, 2, 3):
        vecs = [rng.uniform(-1, 1, d) for _ in range(k)]
        got = float(dicp_inverse(nu_ml, f_ml, B_ml, k, 1, k, denom).apply(vecs)[0])
        assert got == pytest.approx(mixed_partial(g, p, vecs, h=0.05), abs=1e-6)


def test_dicp_rejects_tiny_denominator():
    z = zero_map(1, 1)
    with pytest.raises(NearSingularDenominator):
        dicp_inverse([zero_map(0, 1)], [z], [zero_map(0, 1)], 1, 1, 1, 1e-12)


def test_inverse_jets_kernel_matches_reciprocal():
    # u a positive polynomial; symmetrized kernel levels are jets of 1/u
    rng = np.random.default_rng(9)
    d = 2
    p = rng.uniform(-0.3, 0.3, d)
    u = random_poly(rng, d, 1, 2, scale=0.2)
    u[(0,) * d] = np.array([1.0]) + u.get((0,) * d, 0.0)   # keep u near 1
    jets = poly_jet(u, p, 3)
    ujets = [jets[0][None]] + [jets[r][None] for r in range(1, 4)]
    inv = inverse_jets_kernel(ujets, 3)
    assert inv[0][0, 0] == pytest.approx(1.0 / jets[0][0], rel=1e-12)

    def g(q):
        return 1.0 / float(poly_eval(u, q[None])[0, 0])

    for k in (1, 2, 3):
        vecs = [rng.uniform(-1, 1, d) for _ in range(k)]
        tensor = sym_tensor(inv[k][0], k)
        got = tensor
        for v in vecs:
            got = np.tensordot(v, got, axes=(0, 0))
        assert float(got[0]) == pytest.approx(mixed_partial(g, p, vecs, h=0.05), abs=1e-6)
