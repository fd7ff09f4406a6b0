"""Dense multilinear maps and the higher-derivative operator algebra.

A k-linear map b on R^(n+1) with values in R^v is stored densely as a
coefficient tensor of shape (d,)*k + (v,), d = n + 1, entry [j1..jk][r] =
r-th component of b(e_j1, ..., e_jk). Argument slots come first, the value
axis last; batched kernels put an arbitrary batch prefix before the slots.

On top of the raw tensors this module implements

  * the symmetrizing operator Sym^k (average over slot permutations),
  * the block decomposition b = sum_f b_f over f in {E, F}^k, where slot
    j <= n-1 reads E (an x-direction) and slot j = n reads F (the
    y-direction); blocks are indexed lexicographically with E first,
  * the generalized derivative operators for composites (dc_compose),
    products with a composed factor (dcp_product), and reciprocals of
    1 - (nu o f) * B (dicp_inverse), each of which reproduces the true
    derivative D^k(...) when fed true jets - the coefficient per ordered
    composition (r_1, ..., r_q) of k is k!/(q! r_1! ... r_q!) for the
    composite and k!/(r_1! ... r_q!) * u^-(q+1) for the reciprocal, which
    is what the finite-difference oracles pin down,
  * the weighted block norm |b|_i = sum_f k_f ||b_f|| with Perron weights
    k_f, and the argument-wise pushforward b -> b(M ., ..., M .).

Supported orders are small (hard cap k <= 5); tensors are exponential in k
by design and the validated range is k <= 3.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import NearSingularDenominator, OrderMismatch

MAX_ORDER = 5

# letters for building einsum subscripts on demand
_LETTERS = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ"


@dataclass(frozen=True, eq=False)
class MLMap:
    """A dense k-linear map on R^(n+1) with an R^v value (v = n typically)."""

    k: int
    n: int
    coeffs: np.ndarray

    def __post_init__(self):
        if self.k > MAX_ORDER:
            raise OrderMismatch("order %d exceeds the hard cap %d" % (self.k, MAX_ORDER))
        d = self.n + 1
        c = np.asarray(self.coeffs, dtype=float)
        if c.ndim == self.k:            # scalar-valued: add the value axis
            c = c[..., None]
        if c.shape[: self.k] != (d,) * self.k or c.ndim != self.k + 1:
            raise OrderMismatch("coefficients must have shape (%d,)*%d + (v,), got %s"
                                % (d, self.k, c.shape))
        object.__setattr__(self, "coeffs", c)

    @property
    def value_dim(self):
        return self.coeffs.shape[-1]

    def apply(self, vectors):
        """Evaluate on k vectors of R^(n+1); returns the R^v value."""
        out = self.coeffs
        for vec in vectors:
            out = np.tensordot(np.asarray(vec, dtype=float), out, axes=(0, 0))
        return out


def zero_map(k, n, v=None):
    v = n if v is None else v
    return MLMap(k=k, n=n, coeffs=np.zeros((n + 1,) * k + (v,)))


# ----------------------------------------------------------------------------
# symmetrization
# ----------------------------------------------------------------------------

def sym_tensor(c, k, batch_ndim=0):
    """Average a tensor over all permutations of its k slot axes.

    Slot axes occupy positions batch_ndim .. batch_ndim + k - 1; whatever
    follows (value axes) rides along untouched.
    """
    if k < 2:
        return np.asarray(c, dtype=float)
    c = np.asarray(c, dtype=float)
    axes = list(range(c.ndim))
    out = np.zeros_like(c)
    for perm in itertools.permutations(range(k)):
        order = axes[:batch_ndim] + [batch_ndim + p for p in perm] + axes[batch_ndim + k:]
        out += np.transpose(c, order)
    out /= math.factorial(k)
    return out


def symmetrize(b):
    """Sym^k b: the symmetric part of b. Idempotent, norm nonexpanding."""
    return MLMap(k=b.k, n=b.n, coeffs=sym_tensor(b.coeffs, b.k))


# ----------------------------------------------------------------------------
# block decomposition over {E, F}^k
# ----------------------------------------------------------------------------

def block_patterns(k):
    """All f in {E, F}^k in lexicographic order with E first."""
    return list(itertools.product("EF", repeat=k))


def _block_slices(pattern, n):
    return tuple(slice(0, n) if s == "E" else slice(n, n + 1) for s in pattern)


def block_split(b):
    """The 2^k blocks of b as full-shape maps with disjoint supports.

    Returns {pattern: MLMap}; summing the coefficient tensors recovers b
    exactly, since every slot-index tuple belongs to exactly one pattern.
    """
    out = {}
    for pattern in block_patterns(b.k):
        c = np.zeros_like(b.coeffs)
        sl = _block_slices(pattern, b.n)
        c[sl] = b.coeffs[sl]
        out[pattern] = MLMap(k=b.k, n=b.n, coeffs=c)
    return out


def _unfolded_norm(mat, method, iters=50):
    """Largest singular value of a (rows, v) unfolding.

    method "2": power iteration on M^T M, fixed 50 iterations, deterministic
    start; method "frobenius": the Frobenius norm.
    """
    if method == "frobenius":
        return float(np.sqrt(np.sum(mat * mat)))
    if mat.size == 0:
        return 0.0
    rows, v = mat.shape
    if v == 1 or rows == 1:
        return float(np.linalg.norm(mat.ravel()))
    rng = np.random.default_rng(20240817)
    vec = rng.standard_normal(v)
    vec /= np.linalg.norm(vec)
    for _ in range(iters):
        w = mat.T @ (mat @ vec)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        vec = w / nw
    return float(np.linalg.norm(mat @ vec))


def block_norm(b, pattern, method="2"):
    """Operator-norm estimate of one block, via its unfolding."""
    sub = b.coeffs[_block_slices(pattern, b.n)]
    mat = sub.reshape(-1, b.coeffs.shape[-1])
    return _unfolded_norm(mat, method)


def adapted_norm(b, pd, method="2"):
    """|b|_i = sum over f of k_f ||b_f||, with Perron weights from pd.

    pd is a PerronData whose order must equal b.k; its weights are indexed
    by the same lexicographic {E, F}^i order as block_patterns.
    """
    if pd.i != b.k:
        raise OrderMismatch("PerronData order %d does not match map order %d" % (pd.i, b.k))
    patterns = block_patterns(b.k)
    total = 0.0
    for w, pattern in zip(pd.weights, patterns):
        total += w * block_norm(b, pattern, method=method)
    return float(total)


def adapted_norm_coeffs_1d(values, k, weights):
    """Vectorized |.|_k for n = 1 over a batch of coefficient tensors.

    For n = 1 every block is a single coefficient, so the block operator
    norm is its absolute value and the adapted norm is a plain weighted
    sum. values has shape (B,) + (2,)*k + (1,); returns (B,).
    """
    flat = np.abs(values.reshape(values.shape[0], -1))
    return flat @ np.asarray(weights, dtype=float)


def max_coeff_norm(b):
    return float(np.max(np.abs(b.coeffs))) if b.coeffs.size else 0.0


def dump_debug(b):
    """Flat golden-test dump: one `(j1,..,jk)[r] = value` line per entry."""
    lines = []
    d = b.n + 1
    for idx in np.ndindex(*(d,) * b.k):
        for r in range(b.coeffs.shape[-1]):
            lines.append("(%s)[%d] = %r" % (",".join(str(i) for i in idx), r,
                                            float(b.coeffs[idx + (r,)])))
    return "\n".join(lines)


# ----------------------------------------------------------------------------
# pushforward along a linear map of the argument space
# ----------------------------------------------------------------------------

def pushforward(b, M):
    """b(M x1, ..., M xk): compose every argument slot with the matrix M."""
    M = np.asarray(M, dtype=float)
    c = b.coeffs
    for slot in range(b.k):
        # contract slot axis (always first after the rotation) with M's rows
        c = np.tensordot(M, c, axes=(0, slot))
        c = np.moveaxis(c, 0, slot)
    return MLMap(k=b.k, n=b.n, coeffs=c)


def pushforward_batch(values, M, k):
    """Batched pushforward: values (B,)+(d,)*k+(v,), M (B, d, d)."""
    c = np.asarray(values, dtype=float)
    for slot in range(1, k + 1):
        c = np.moveaxis(c, slot, 1)
        # sum_j M[b, j, a] c[b, j, ...]
        c = np.einsum("bja,bj...->ba...", M, c)
        c = np.moveaxis(c, 1, slot)
    return c


# ----------------------------------------------------------------------------
# composition machinery (ordered compositions of k into q positive parts)
# ----------------------------------------------------------------------------

def ordered_compositions(k, q):
    """All tuples (r_1, ..., r_q) of positive integers with sum k."""
    if q == 0:
        return [()] if k == 0 else []
    if q == 1:
        return [(k,)]
    out = []
    for first in range(1, k - q + 2):
        for rest in ordered_compositions(k - first, q - 1):
            out.append((first,) + rest)
    return out


def _compose_term(outer, inners, comp, batch=True):
    """One composition term: outer(D^{r_1}f(.), ..., D^{r_q}f(.)).

    outer: (B,) + (d,)*q + (V,); inners[t]: (B, d) + (d,)*r_t (output axis
    first, as map jets come); result (B,) + (d,)*sum(comp) + (V,). The
    argument blocks are consecutive, block t of size r_t.
    """
    q = len(comp)
    subs = []
    pos = 0
    batch_l = _LETTERS[0]
    val_l = _LETTERS[1]
    next_free = 2
    contract = []
    for _ in range(q):
        contract.append(_LETTERS[next_free])
        next_free += 1
    arg_ls = []
    for r in comp:
        block = _LETTERS[next_free:next_free + r]
        next_free += r
        arg_ls.append(block)
        pos += r
    subs.append(batch_l + "".join(contract) + val_l)
    for t, r in enumerate(comp):
        subs.append(batch_l + contract[t] + arg_ls[t])
    out_sub = batch_l + "".join(arg_ls) + val_l
    operands = [outer] + [inners[t] for t in range(q)]
    return np.einsum(",".join(subs) + "->" + out_sub, *operands)


def dc_kernel(outer_levels, inner_jets, k1, k2, k3):
    """Raw composite-derivative sum before symmetrization (batched).

    outer_levels[q] for q = 0..k3: the level-q data at f(p), shape
    (B,) + (d,)*q + (V,) (entries below k2 may be None); inner_jets[r-1] =
    D^r f, shape (B, d) + (d,)*r. The coefficient of the ordered
    composition (r_1..r_q) is k1!/(q! r_1!..r_q!), which makes the full
    window (k1, 1, k1) the derivative D^{k1}(nu o f) for true jets.
    """
    shape_ref = None
    total = None
    for q in range(max(k2, 1), k3 + 1):
        outer = outer_levels[q]
        for comp in ordered_compositions(k1, q):
            coeff = math.factorial(k1) / math.factorial(q)
            for r in comp:
                coeff /= math.factorial(r)
            term = coeff * _compose_term(outer, [inner_jets[r - 1] for r in comp], comp)
            total = term if total is None else total + term
            shape_ref = term.shape
    if total is None:
        raise OrderMismatch("empty composition window (k1=%d, k2=%d, k3=%d)" % (k1, k2, k3))
    return total


def _as_batched(ml, value_first=False):
    c = ml.coeffs[None]
    if value_first:
        c = np.moveaxis(c, -1, 1)
    return c


def dc_compose(outer_jets, inner_jets, k1, k2, k3):
    """Sym^{k1} of the generalized composite derivative.

    outer_jets: MLMaps of orders k2..k3 (jets of nu at f(p)); inner_jets:
    MLMaps D^1 f .. D^{k1-k2+1} f (value dimension d = n + 1). For the full
    window (k1, 1, k1) and true jets this equals D^{k1}(nu o f).
    """
    if not (k1 >= k3 >= k2 >= 1):
        raise OrderMismatch("need k1 >= k3 >= k2 >= 1, got (%d, %d, %d)" % (k1, k2, k3))
    if len(outer_jets) < k3 - k2 + 1:
        raise OrderMismatch("outer jets must cover orders %d..%d" % (k2, k3))
    if len(inner_jets) < k1 - k2 + 1:
        raise OrderMismatch("inner jets must cover orders 1..%d" % (k1 - k2 + 1))
    n = outer_jets[0].n
    levels = [None] * (k3 + 1)
    for i, ml in enumerate(outer_jets):
        levels[k2 + i] = ml.coeffs[None]
    inners = [_as_batched(ml, value_first=True) for ml in inner_jets]
    raw = dc_kernel(levels, inners, k1, k2, k3)
    return MLMap(k=k1, n=n, coeffs=sym_tensor(raw, k1, batch_ndim=1)[0])


# ----------------------------------------------------------------------------
# products with a composed factor, and reciprocals
# ----------------------------------------------------------------------------

def _pair_blocks(left, right, pairing):
    """Tensor the argument slots of two batched tensors and pair values.

    left (B,)+(d,)*p+(vL...), right (B,)+(d,)*m+(vR...); left's slots come
    first. pairing: "dot" contracts the two value axes (row . column ->
    scalar value axis of length 1); "rowmat" contracts left's row value
    with the first value axis of right's (n, n') matrix value; "scalar"
    broadcasts a value-1 left against right's value.
    """
    p = left.ndim - 2
    if pairing == "scalar":
        m = right.ndim - 2
        sub_l = "z" + _LETTERS[2:2 + p] + "v"
        sub_r = "z" + _LETTERS[2 + p:2 + p + m] + "w"
        out = "z" + _LETTERS[2:2 + p + m] + "w"
        return np.einsum(sub_l + "," + sub_r + "->" + out, left, right)
    if pairing == "dot":
        m = right.ndim - 2
        sub_l = "z" + _LETTERS[2:2 + p] + "v"
        sub_r = "z" + _LETTERS[2 + p:2 + p + m] + "v"
        out = "z" + _LETTERS[2:2 + p + m]
        return np.einsum(sub_l + "," + sub_r + "->" + out, left, right)[..., None]
    if pairing == "rowmat":
        m = right.ndim - 3
        sub_l = "z" + _LETTERS[2:2 + p] + "v"
        sub_r = "z" + _LETTERS[2 + p:2 + p + m] + "vw"
        out = "z" + _LETTERS[2:2 + p + m] + "w"
        return np.einsum(sub_l + "," + sub_r + "->" + out, left, right)
    raise ValueError("unknown pairing %r" % pairing)


def leibniz_kernel(jets_left, jets_right, order, pairing):
    """sum_m C(order, m) (D^m left tensor D^(order-m) right), unsymmetrized.

    jets_* are lists by order of batched tensors (value axis last, length 1
    allowed for scalars). The caller symmetrizes.
    """
    total = None
    for m in range(order + 1):
        term = math.comb(order, m) * _pair_blocks(jets_left[m], jets_right[order - m], pairing)
        total = term if total is None else total + term
    return total


def inverse_jets_kernel(ujets, order):
    """Jets of 1/u from jets of u (batched, scalar values).

    ujets[0] (B, 1) is the base value, ujets[r] (B,)+(d,)*r+(1,) the
    derivative levels. Level k of the output is

        sum_q sum over ordered (r_1..r_q), sum r_t = k of
            k!/(r_1!..r_q!) (-1)^q u^-(q+1) u_(r_1) x .. x u_(r_q)

    (unsymmetrized; blocks consecutive). Returns the list 1/u, D(1/u), ...
    """
    u0 = ujets[0][:, 0]
    out = [1.0 / u0[:, None]]
    for k in range(1, order + 1):
        total = None
        for q in range(1, k + 1):
            base = (-1.0) ** q * u0 ** (-(q + 1))
            for comp in ordered_compositions(k, q):
                coeff = math.factorial(k)
                for r in comp:
                    coeff /= math.factorial(r)
                term = base[:, None] * coeff
                term = term.reshape((u0.shape[0],) + (1,) * 0 + (1,))
                acc = term
                for r in comp:
                    acc = _pair_blocks(acc, ujets[r], "scalar")
                total = acc if total is None else total + acc
        out.append(total)
    return out


def dcp_product(nu_jets, f_jets, B_jets, k1, k2, k3):
    """Sym^{k1} sum_q C(k1, q) of (composite level q) paired with D^{k1-q}B.

    nu_jets: MLMaps orders 0..k3 (order 0 is the value nu(f(p)) as a
    k=0 map); f_jets: D^1 f..; B_jets: MLMaps orders 0..k1-k2 of the
    column factor B. For the full window (k, 0, k) and true jets this is
    D^k((nu o f) . B).
    """
    if not (k1 >= k3 >= k2 >= 0):
        raise OrderMismatch("need k1 >= k3 >= k2 >= 0, got (%d, %d, %d)" % (k1, k2, k3))
    if len(nu_jets) < k3 + 1 or len(B_jets) < k1 - k2 + 1:
        raise OrderMismatch("incomplete jet lists for dcp window (%d, %d, %d)" % (k1, k2, k3))
    n = B_jets[0].n
    inners = [_as_batched(ml, value_first=True) for ml in f_jets]
    total = None
    for q in range(k2, k3 + 1):
        if q == 0:
            left = nu_jets[0].coeffs[None]
        else:
            levels = [None] * (q + 1)
            for j in range(1, q + 1):
                levels[j] = nu_jets[j].coeffs[None]
            left = dc_kernel(levels, inners, q, 1, q)
        right = B_jets[k1 - q].coeffs[None]
        term = math.comb(k1, q) * _pair_blocks(left, right, "dot")
        total = term if total is None else total + term
    coeffs = sym_tensor(total, k1, batch_ndim=1)[0]
    return MLMap(k=k1, n=n, coeffs=coeffs)


def dicp_inverse(nu_jets, f_jets, B_jets, k1, k2, k3, denom):
    """Sym^{k1} of the reciprocal-derivative sum for (1 - (nu o f) . B)^-1.

    denom is the scalar value 1 - nu(f(p)) . B(p); each ordered composition
    (r_1..r_q) contributes k1!/(r_1!..r_q!) denom^-(q+1) times the product
    of the w-levels D^{r_t}((nu o f) . B) - all signs cancel against the
    (-1)^q of the underlying reciprocal rule, so the sum is over plain
    products. For the window (k, 1, k) and true jets this equals
    D^k (1 - (nu o f) . B)^-1.
    """
    if abs(denom) < 1e-9:
        raise NearSingularDenominator("|1 - (nu o f) B| = %.3e below 1e-9" % abs(denom))
    if not (k1 >= k3 >= k2 >= 0):
        raise OrderMismatch("need k1 >= k3 >= k2 >= 0, got (%d, %d, %d)" % (k1, k2, k3))
    n = B_jets[0].n
    wlevels = [None]
    for r in range(1, k1 + 1):
        wlevels.append(dcp_product(nu_jets, f_jets, B_jets, r, 0, r).coeffs[None])
    total = None
    for q in range(max(k2, 1), k3 + 1):
        base = denom ** (-(q + 1))
        for comp in ordered_compositions(k1, q):
            coeff = math.factorial(k1) * base
            for r in comp:
                coeff /= math.factorial(r)
            acc = np.full((1, 1), coeff)
            for r in comp:
                acc = _pair_blocks(acc, wlevels[r], "scalar")
            total = acc if total is None else total + acc
    if total is None:
        raise OrderMismatch("empty dicp window (k1=%d, k2=%d, k3=%d)" % (k1, k2, k3))
    coeffs = sym_tensor(total, k1, batch_ndim=1)[0]
    return MLMap(k=k1, n=n, coeffs=coeffs)
