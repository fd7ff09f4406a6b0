"""Polynomial test maps with closed-form jets, plus mixed-partial stencils.

A polynomial R^d -> R^v is a dict {exponent tuple: coefficient vector}.
Derivatives of polynomials are polynomials, so the jet tensors used as
oracle inputs are exact; the finite-difference side uses tensor products
of central first-derivative stencils whose one-variable exactness degree
(2 * halfwidth) is chosen to cover the polynomial degrees involved.
"""
from __future__ import annotations

import numpy as np

from folcomp import MLMap


def random_poly(rng, d, v, degree, scale=1.0):
    poly = {}
    for powers in _exponents(d, degree):
        poly[powers] = scale * rng.uniform(-1.0, 1.0, size=v)
    return poly


def _exponents(d, degree):
    if d == 0:
        yield ()
        return
    for head in range(degree + 1):
        for rest in _exponents(d - 1, degree - head):
            yield (head,) + rest


def poly_eval(poly, P):
    P = np.atleast_2d(np.asarray(P, dtype=float))
    v = len(next(iter(poly.values())))
    out = np.zeros((P.shape[0], v))
    for powers, coeffs in poly.items():
        mono = np.ones(P.shape[0])
        for a, p in enumerate(powers):
            if p:
                mono = mono * P[:, a] ** p
        out += mono[:, None] * np.asarray(coeffs)
    return out


def poly_diff(poly, axis):
    out = {}
    for powers, coeffs in poly.items():
        p = powers[axis]
        if p == 0:
            continue
        lowered = powers[:axis] + (p - 1,) + powers[axis + 1:]
        out[lowered] = out.get(lowered, 0.0) + p * np.asarray(coeffs, dtype=float)
    if not out:
        v = len(next(iter(poly.values())))
        out[(0,) * len(next(iter(poly)))] = np.zeros(v)
    return out


def poly_jet(poly, point, order):
    """Exact derivative tensors [value, D^1, ..., D^order] at one point.

    The order-j entry has shape (d,)*j + (v,): slot axes first, value last,
    entry [a1..aj] = d^j poly / dx_a1 .. dx_aj evaluated at `point`.
    """
    point = np.asarray(point, dtype=float)
    d = point.shape[0]
    v = len(next(iter(poly.values())))
    out = [poly_eval(poly, point[None])[0]]
    layer = {(): poly}
    for j in range(1, order + 1):
        nxt = {}
        for idx, q in layer.items():
            for a in range(d):
                nxt[idx + (a,)] = poly_diff(q, a)
        layer = nxt
        arr = np.zeros((d,) * j + (v,))
        for idx, q in layer.items():
            arr[idx] = poly_eval(q, point[None])[0]
        out.append(arr)
    return out


def poly_jet_mlmaps(poly, point, order, n):
    """poly_jet wrapped as MLMaps of orders 0..order (n = d - 1)."""
    jets = poly_jet(poly, point, order)
    return [MLMap(k=j, n=n, coeffs=jets[j]) for j in range(order + 1)]


# ----------------------------------------------------------------------------
# mixed partials by nested central stencils
# ----------------------------------------------------------------------------

def _stencil(h, halfwidth):
    """Offsets and weights with sum_s w_s q(s) = q'(0), exact to degree 2*hw."""
    offsets = h * np.arange(-halfwidth, halfwidth + 1, dtype=float)
    V = np.vander(offsets, increasing=True).T
    rhs = np.zeros(offsets.shape[0])
    rhs[1] = 1.0
    return offsets, np.linalg.solve(V, rhs)


def mixed_partial(func, point, vectors, h=0.05, halfwidth=3):
    """d^k func(point + t1 v1 + ... + tk vk) / dt1..dtk at t = 0."""
    offsets, weights = _stencil(h, halfwidth)
    point = np.asarray(point, dtype=float)

    def rec(vecs, base):
        if not vecs:
            return func(base)
        total = 0.0
        for off, w in zip(offsets, weights):
            total = total + w * rec(vecs[1:], base + off * vecs[0])
        return total

    return rec(list(vectors), point)
