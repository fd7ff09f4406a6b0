"""Lorenz-type maps in normal form and their exact derivative jets.

The maps handled here are Poincare return maps T(x, y) = (F(x, y), G(x, y))
on the box D = {max|x_i| <= 1} x {|y| <= 1}, discontinuous across the plane
D0 = {y = 0}, with the one-sided normal form (side s = sign(y))

    F(x, y) = x*_s + |y|^alpha * (B*_s + phi_s(x, y))
    G(x, y) = y*_s + |y|^alpha * (A*_s + psi_s(x, y))

where A*_s != 0, alpha > 0, and the perturbations are finite sums

    phi_s(x, y) = sum_j  p_j(x) * |y|^(gamma + e_j),      e_j >= 0,

(p_j polynomial, vector valued for phi, scalar for psi) so that every mixed
partial obeys |d^(l+m) phi / dx^l dy^m| <= K |y|^(gamma - m) near y = 0.
Restricting perturbations to this polynomial-times-power family keeps every
derivative exactly computable: each component of F and G is a finite sum of
monomial terms  c * x^p * |y|^beta,  and mixed partials of such terms are
closed-form (falling factorials times |y|^(beta - m) times sign(y)^m).

The fibered-coefficient functions of the graph transform are

    A = dF/dx * (dG/dy)^-1     (n x n, indexed [out, in])
    B = dF/dy * (dG/dy)^-1     (n-column)
    C = dG/dx * (dG/dy)^-1     (n-row)

All evaluation routines have batched variants (trailing `_batch`) operating
on arrays of points at once; the scalar wrappers exist for API clarity and
tests. Everything is a pure function of (spec, points): safe to call from
any number of workers.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDy, EvalAtSingular, OrderUnsupported, SpecInvalid

# Relative floor under which |dG/dy| counts as degenerate.
DY_FLOOR = 1e-12


# ----------------------------------------------------------------------------
# spec and point types
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PerturbationTerm:
    """One perturbation summand p(x) * |y|^(gamma + e) on one side.

    monomials is a tuple of (powers, coeffs) pairs: powers is a length-n
    tuple of exponents, coeffs the coefficient vector (length n for phi
    terms, length 1 for psi terms).
    """

    side: str
    monomials: tuple
    e: float


@dataclass(frozen=True, eq=False)
class MapSpec:
    """Parametric Lorenz-type map in the normal form above.

    Construction does not validate (an invalid spec is a legitimate object
    for the decay diagnostics to reject); evaluation entry points call
    validate() and raise SpecInvalid.
    """

    n: int
    k: int
    alpha: float
    gamma: float
    x_star_plus: np.ndarray
    x_star_minus: np.ndarray
    y_star_plus: float
    y_star_minus: float
    A_star_plus: float
    A_star_minus: float
    B_star_plus: np.ndarray
    B_star_minus: np.ndarray
    phi_coeffs: tuple = field(default=())
    psi_coeffs: tuple = field(default=())
    K: float = 1.0

    def __post_init__(self):
        for name in ("x_star_plus", "x_star_minus", "B_star_plus", "B_star_minus"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "phi_coeffs", tuple(self.phi_coeffs))
        object.__setattr__(self, "psi_coeffs", tuple(self.psi_coeffs))


@dataclass(frozen=True, eq=False)
class Point:
    """A point of the phase box D (or an image point possibly outside it)."""

    x: np.ndarray
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "y", float(self.y))

    @property
    def half(self):
        if self.y > 0.0:
            return "plus"
        if self.y < 0.0:
            return "minus"
        return "zero"

    @property
    def inside_D(self):
        return bool(np.max(np.abs(self.x)) <= 1.0 and abs(self.y) <= 1.0)


def validate(spec):
    """Raise SpecInvalid listing every violated MapSpec invariant."""
    problems = []
    if not (isinstance(spec.n, int) and spec.n >= 1):
        problems.append("n must be a positive integer")
    if not (isinstance(spec.k, int) and spec.k >= 1):
        problems.append("k must be an integer >= 1")
    if not spec.alpha > 0.0:
        problems.append("alpha must be > 0")
    if not spec.gamma > spec.k - 1:
        problems.append("gamma must exceed k - 1")
    if spec.A_star_plus == 0.0 or spec.A_star_minus == 0.0:
        problems.append("A*_+ and A*_- must be nonzero")
    if not spec.K > 0.0:
        problems.append("K must be positive")
    for name in ("x_star_plus", "x_star_minus", "B_star_plus", "B_star_minus"):
        if getattr(spec, name).shape != (spec.n,):
            problems.append("%s must have length n" % name)
    for label, terms, vlen in (("phi", spec.phi_coeffs, spec.n), ("psi", spec.psi_coeffs, 1)):
        for t in terms:
            if t.side not in ("+", "-"):
                problems.append("%s term side must be '+' or '-'" % label)
            if t.e < 0.0:
                problems.append("%s term has extra exponent e = %g < 0 "
                                "(the decay bound K|y|^(gamma-m) cannot hold)" % (label, t.e))
            for powers, coeffs in t.monomials:
                if len(powers) != spec.n or any((not isinstance(p, int)) or p < 0 for p in powers):
                    problems.append("%s monomial powers must be %d nonnegative ints" % (label, spec.n))
                if len(coeffs) != vlen:
                    problems.append("%s monomial coefficient vector must have length %d" % (label, vlen))
    if problems:
        raise SpecInvalid("; ".join(problems))
    return spec


# ----------------------------------------------------------------------------
# JSON round trip (exact field names, unknown fields rejected)
# ----------------------------------------------------------------------------

_FIELDS = ("n", "k", "alpha", "gamma",
           "x_star_plus", "x_star_minus", "y_star_plus", "y_star_minus",
           "A_star_plus", "A_star_minus", "B_star_plus", "B_star_minus",
           "phi_coeffs", "psi_coeffs", "K")


def _terms_from_json(raw, label):
    terms = []
    for entry in raw:
        if not (isinstance(entry, (list, tuple)) and len(entry) == 3):
            raise SpecInvalid("%s_coeffs entries must be [side, monomials, e] triples" % label)
        side, monomials, e = entry
        mono = tuple((tuple(int(p) for p in powers), tuple(float(c) for c in coeffs))
                     for powers, coeffs in monomials)
        terms.append(PerturbationTerm(side=str(side), monomials=mono, e=float(e)))
    return tuple(terms)


def spec_from_dict(doc, check=True):
    unknown = sorted(set(doc) - set(_FIELDS))
    if unknown:
        raise SpecInvalid("unknown fields in map document: %s" % ", ".join(unknown))
    missing = sorted(set(_FIELDS) - set(doc))
    if missing:
        raise SpecInvalid("missing fields in map document: %s" % ", ".join(missing))
    spec = MapSpec(
        n=int(doc["n"]), k=int(doc["k"]),
        alpha=float(doc["alpha"]), gamma=float(doc["gamma"]),
        x_star_plus=doc["x_star_plus"], x_star_minus=doc["x_star_minus"],
        y_star_plus=float(doc["y_star_plus"]), y_star_minus=float(doc["y_star_minus"]),
        A_star_plus=float(doc["A_star_plus"]), A_star_minus=float(doc["A_star_minus"]),
        B_star_plus=doc["B_star_plus"], B_star_minus=doc["B_star_minus"],
        phi_coeffs=_terms_from_json(doc["phi_coeffs"], "phi"),
        psi_coeffs=_terms_from_json(doc["psi_coeffs"], "psi"),
        K=float(doc["K"]),
    )
    if check:
        validate(spec)
    return spec


def spec_to_dict(spec):
    def terms_out(terms):
        return [[t.side, [[list(p), list(c)] for p, c in t.monomials], t.e] for t in terms]
    return {
        "n": spec.n, "k": spec.k, "alpha": spec.alpha, "gamma": spec.gamma,
        "x_star_plus": list(spec.x_star_plus), "x_star_minus": list(spec.x_star_minus),
        "y_star_plus": spec.y_star_plus, "y_star_minus": spec.y_star_minus,
        "A_star_plus": spec.A_star_plus, "A_star_minus": spec.A_star_minus,
        "B_star_plus": list(spec.B_star_plus), "B_star_minus": list(spec.B_star_minus),
        "phi_coeffs": terms_out(spec.phi_coeffs), "psi_coeffs": terms_out(spec.psi_coeffs),
        "K": spec.K,
    }


def load_spec(path, check=True):
    with open(path, "r", encoding="utf-8") as fh:
        return spec_from_dict(json.load(fh), check=check)


def save_spec(spec, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec_to_dict(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ----------------------------------------------------------------------------
# term assembly: every component of T is a finite sum  c * x^p * |y|^beta
# ----------------------------------------------------------------------------

def _component_terms(spec, side):
    """Flattened monomial terms (out, coeff, xpow, beta) for one side.

    out indexes the output component: 0..n-1 are F, n is G; xpow is a
    length-n tuple of x exponents; beta the |y| exponent.
    """
    n = spec.n
    zero = (0,) * n
    x_star = spec.x_star_plus if side == "+" else spec.x_star_minus
    y_star = spec.y_star_plus if side == "+" else spec.y_star_minus
    a_star = spec.A_star_plus if side == "+" else spec.A_star_minus
    b_star = spec.B_star_plus if side == "+" else spec.B_star_minus

    terms = []
    for r in range(n):
        terms.append((r, float(x_star[r]), zero, 0.0))
        terms.append((r, float(b_star[r]), zero, spec.alpha))
    terms.append((n, float(y_star), zero, 0.0))
    terms.append((n, float(a_star), zero, spec.alpha))

    for t in spec.phi_coeffs:
        if t.side != side:
            continue
        beta = spec.alpha + spec.gamma + t.e
        for powers, coeffs in t.monomials:
            for r in range(n):
                if coeffs[r] != 0.0:
                    terms.append((r, float(coeffs[r]), tuple(powers), beta))
    for t in spec.psi_coeffs:
        if t.side != side:
            continue
        beta = spec.alpha + spec.gamma + t.e
        for powers, coeffs in t.monomials:
            if coeffs[0] != 0.0:
                terms.append((n, float(coeffs[0]), tuple(powers), beta))
    return terms


def _perturbation_terms(spec, side, which):
    """Monomial terms of phi or psi alone (without the |y|^alpha factor)."""
    n = spec.n
    out = []
    src = spec.phi_coeffs if which == "phi" else spec.psi_coeffs
    vlen = n if which == "phi" else 1
    for t in src:
        if t.side != side:
            continue
        beta = spec.gamma + t.e
        for powers, coeffs in t.monomials:
            for r in range(vlen):
                if coeffs[r] != 0.0:
                    out.append((r, float(coeffs[r]), tuple(powers), beta))
    return out


def _falling(beta, m):
    out = 1.0
    for j in range(m):
        out *= beta - j
    return out


def _partial_from_terms(terms, n_out, X, Y, lx, my):
    """Evaluate d^(lx,my) of a term list at points (X, Y) on one side.

    X has shape (m, n), Y shape (m,) with a single sign throughout; lx is
    the x multi-index, my the y order. Returns (m, n_out).
    """
    absy = np.abs(Y)
    sgn = np.where(Y >= 0.0, 1.0, -1.0)
    out = np.zeros((Y.shape[0], n_out))
    for (r, coeff, xpow, beta) in terms:
        c = coeff * _falling(beta, my)
        if c == 0.0:
            continue
        skip = False
        xfac = None
        for a, (p, l) in enumerate(zip(xpow, lx)):
            if l > p:
                skip = True
                break
            c *= _falling(float(p), l)
            if p - l > 0:
                piece = X[:, a] ** (p - l)
                xfac = piece if xfac is None else xfac * piece
        if skip or c == 0.0:
            continue
        # y != 0 throughout, so |y|^(beta - my) is safe for any real exponent
        val = c * absy ** (beta - my)
        if my % 2 == 1:
            val = val * sgn
        if xfac is not None:
            val = val * xfac
        out[:, r] += val
    return out


def _split_sides(Y):
    if np.any(Y == 0.0):
        raise EvalAtSingular("evaluation requested on the singular plane y = 0")
    plus = Y > 0.0
    return plus, ~plus


def eval_partials_batch(spec, X, Y, lx, my, check=True):
    """Batched mixed partial d^(lx, my) T at (X, Y); returns (m, n+1)."""
    if check:
        validate(spec)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    plus, minus = _split_sides(Y)
    out = np.zeros((Y.shape[0], spec.n + 1))
    for side, mask in (("+", plus), ("-", minus)):
        if np.any(mask):
            terms = _component_terms(spec, side)
            out[mask] = _partial_from_terms(terms, spec.n + 1, X[mask], Y[mask], lx, my)
    return out


# ----------------------------------------------------------------------------
# public evaluation: T, the jet of T, and the coefficient functions A, B, C
# ----------------------------------------------------------------------------

def eval_T_batch(spec, X, Y, check=True):
    """T at a batch of points: returns (F (m, n), G (m,))."""
    vals = eval_partials_batch(spec, X, Y, (0,) * spec.n, 0, check=check)
    return vals[:, : spec.n], vals[:, spec.n]


def eval_T(spec, p):
    """T(p) as a Point. The image need not lie in D; the caller checks."""
    F, G = eval_T_batch(spec, p.x[None, :], np.array([p.y]))
    return Point(x=F[0], y=float(G[0]))


def eval_DT_jet_batch(spec, X, Y, order, check=True):
    """Derivative tensors D^1 T .. D^order T at a batch of points.

    Returns a list of arrays, the j-th of shape (m, n+1) + (n+1,)*j with the
    output component first and the j argument slots after it. Tensors are
    exactly symmetric in the argument slots by construction (each mixed
    partial is computed once and written to every slot permutation).
    """
    if check:
        validate(spec)
    if order > spec.k + 1:
        raise OrderUnsupported("derivative order %d exceeds k + 1 = %d" % (order, spec.k + 1))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    d = spec.n + 1
    cache = {}

    def partial(lx, my):
        key = (lx, my)
        if key not in cache:
            cache[key] = eval_partials_batch(spec, X, Y, lx, my, check=False)
        return cache[key]

    jets = []
    for j in range(1, order + 1):
        tensor = np.zeros((Y.shape[0], d) + (d,) * j)
        for idx in np.ndindex(*(d,) * j):
            lx = tuple(sum(1 for i in idx if i == a) for a in range(spec.n))
            my = sum(1 for i in idx if i == spec.n)
            tensor[(slice(None), slice(None)) + idx] = partial(lx, my)
        jets.append(tensor)
    return jets


def eval_DT_jet(spec, p, order):
    jets = eval_DT_jet_batch(spec, p.x[None, :], np.array([p.y]), order)
    return [t[0] for t in jets]


def eval_ABC_batch(spec, X, Y, check=True):
    """A, B, C and the raw dF/dx, dG/dy at a batch of points.

    Returns (A (m,n,n), B (m,n), C (m,n), dyG (m,), dxF (m,n,n)). Raises
    DegenerateDy when |dG/dy| falls below DY_FLOOR times its batch scale.
    """
    (j1,) = eval_DT_jet_batch(spec, X, Y, 1, check=check)
    n = spec.n
    dxF = j1[:, :n, :n]
    dyF = j1[:, :n, n]
    dxG = j1[:, n, :n]
    dyG = j1[:, n, n]
    scale = max(float(np.max(np.abs(dyG))), 1.0)
    if np.any(np.abs(dyG) < DY_FLOOR * scale):
        raise DegenerateDy("|dG/dy| below %.1e at %d point(s)"
                           % (DY_FLOOR * scale, int(np.sum(np.abs(dyG) < DY_FLOOR * scale))))
    inv = 1.0 / dyG
    A = dxF * inv[:, None, None]
    B = dyF * inv[:, None]
    C = dxG * inv[:, None]
    return A, B, C, dyG, dxF


def eval_ABC(spec, p):
    """A (n x n), B (n-column), C (n-row) at a single point."""
    A, B, C, _, _ = eval_ABC_batch(spec, p.x[None, :], np.array([p.y]))
    return A[0], B[0], C[0]


def verify_L1_decay(spec, samples):
    """Worst decay ratios of the perturbations over a list of sample Points.

    For every derivative multi-order l + m <= k + 1 reports

        max over samples of  |d^(l+m) phi / dx^l dy^m| / |y|^(gamma - m)

    (max over x multi-indices of total order l, max over components), and
    likewise for psi; the report passes iff every ratio is <= spec.K.
    Report-only: works on invalid specs (e.g. a term with e < 0) so the
    divergence is visible rather than masked by construction-time checks.
    """
    X = np.stack([p.x for p in samples])
    Y = np.array([p.y for p in samples])
    plus, minus = _split_sides(Y)
    absy = np.abs(Y)
    records = []
    for which, vlen in (("phi", spec.n), ("psi", 1)):
        for total in range(spec.k + 2):
            for m in range(spec.k + 2 - total):
                worst = 0.0
                for lx in _multi_indices(spec.n, total):
                    vals = np.zeros((len(samples), vlen))
                    for side, mask in (("+", plus), ("-", minus)):
                        if np.any(mask):
                            terms = _perturbation_terms(spec, side, which)
                            vals[mask] = _partial_from_terms(terms, vlen, X[mask], Y[mask], lx, m)
                    ratios = np.max(np.abs(vals), axis=1) / absy ** (spec.gamma - m)
                    worst = max(worst, float(np.max(ratios)))
                records.append({"which": which, "l": total, "m": m, "worst_ratio": worst})
    passes = all(rec["worst_ratio"] <= spec.K for rec in records)
    return {"records": records, "passes": passes, "K": spec.K}


def _multi_indices(n, total):
    if n == 1:
        yield (total,)
        return
    for head in range(total + 1):
        for rest in _multi_indices(n - 1, total - head):
            yield (head,) + rest


if __name__ == "__main__":
    # quick self-check on the shipped closed forms
    pure = spec_from_dict(json.loads("""
    {"n": 1, "k": 2, "alpha": 1.5, "gamma": 1.5,
     "x_star_plus": [0.5], "x_star_minus": [-0.5],
     "y_star_plus": -1.0, "y_star_minus": 1.0,
     "A_star_plus": 2.0, "A_star_minus": -2.0,
     "B_star_plus": [0.25], "B_star_minus": [-0.25],
     "phi_coeffs": [], "psi_coeffs": [], "K": 1.0}"""))
    img = eval_T(pure, Point(x=np.array([0.3]), y=1.0))
    assert np.allclose(img.x, 0.75) and math.isclose(img.y, 1.0)
    A, B, C = eval_ABC(pure, Point(x=np.array([0.3]), y=0.25))
    assert abs(A[0, 0]) < 1e-15 and abs(B[0] - 0.125) < 1e-15 and abs(C[0]) < 1e-15
    (j1,) = eval_DT_jet(pure, Point(x=np.array([0.3]), y=1.0), 1)
    assert np.allclose(j1, [[0.0, 0.375], [0.0, 3.0]])
    print("map_model self-check ok")
