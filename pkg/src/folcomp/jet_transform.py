"""Derivative-jet extension of the graph transform and its fiber iteration.

The graph transform has the node-wise form Gamma(nu)(z) = num(z) / u(z)
with num = (nu o T) A - C and u = 1 - (nu o T) B, all coefficients taken at
z. Its i-th derivative is therefore an explicit jet-algebra expression: a
chain rule for nu o T (composition jets of the candidate levels with the
jets of T), Leibniz products against the jets of A, B, C, and reciprocal
jets of u. The level-i map Psi^i is exactly that expression with the
candidate tuple (nu_0, ..., nu_i) substituted for (nu, Dnu, ..., D^i nu),
so Psi^i(nu, Dnu, ..., D^i nu) = D^i Gamma(nu) whenever the inputs are the
true jets of a smooth field - the property the finite-difference tests pin.

The extended iteration updates the whole tuple simultaneously,

    (nu_0, ..., nu_i)  ->  (Gamma nu_0, Psi^1(nu_0, nu_1), ..., Psi^i(...)),

a fiber contraction over the base contraction Gamma: level j contracts at
rate about Theta(j) once the base has settled, and the distances are
measured in the adapted block norms (Perron weights) where that rate is
uniform. Levels above 2 are not assembled symbolically (the nested
composition sums grow combinatorially); they are produced by one-sided
grid differentiation of the converged level below and flagged "fd".

All levels vanish identically on y = 0 (enforced exactly after every
sweep), and every level is a symmetric multilinear map - Sym is applied as
the final step of each assembly.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import (DenominatorBreach, NoConvergence, OrderMismatch,
                     OrderUnsupported)
from .graph_transform import (DENOM_FLOOR, Field, GammaEngine, apply_plan,
                              zero_field)
from .map_model import eval_DT_jet_batch
from .multilinear import (adapted_norm_coeffs_1d, block_patterns,
                          dc_kernel, inverse_jets_kernel, leibniz_kernel,
                          sym_tensor)
from .norms import (build_perron, compute_Theta, check_L2, estimate_norms,
                    floored_bundle)

EXACT_ORDER_CAP = 2


# ----------------------------------------------------------------------------
# jet fields
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class JetField:
    """A tuple (nu_0, A_1, ..., A_order) of grid-sampled jet levels.

    levels[0] is a Field; levels[j] for j >= 1 is an ndarray of shape
    grid.shape + (d,)*j + (n,) with d = n + 1, holding the level-j
    multilinear map at every node (argument axes first, value axis last).
    modes[j] records how level j was produced ("seed", "exact", "fd").
    """

    levels: list
    modes: tuple

    def __post_init__(self):
        if not self.levels or not isinstance(self.levels[0], Field):
            raise OrderMismatch("levels[0] must be a Field")
        grid = self.grid
        d = grid.n + 1
        iz = grid.zero_index
        zsel = (slice(None),) * grid.n + (iz,)
        fixed = [self.levels[0]]
        for j, lev in enumerate(self.levels[1:], start=1):
            arr = np.asarray(lev, dtype=float)
            expect = grid.shape + (d,) * j + (grid.n,)
            if arr.shape != expect:
                raise OrderMismatch("level %d must have shape %s, got %s"
                                    % (j, expect, arr.shape))
            if np.any(arr[zsel] != 0.0):
                raise OrderMismatch("level %d must vanish exactly on y = 0" % j)
            fixed.append(arr)
        object.__setattr__(self, "levels", fixed)
        if len(self.modes) != len(self.levels):
            raise OrderMismatch("need one mode tag per level")

    @property
    def grid(self):
        return self.levels[0].grid

    @property
    def L_bound(self):
        return self.levels[0].L_bound

    @property
    def order(self):
        return len(self.levels) - 1


def zero_jets(grid, L_bound, order):
    """The all-zero admissible seed (trivially satisfies every invariant)."""
    d = grid.n + 1
    levels = [zero_field(grid, L_bound)]
    for j in range(1, order + 1):
        levels.append(np.zeros(grid.shape + (d,) * j + (grid.n,)))
    return JetField(levels=levels, modes=("seed",) * (order + 1))


def random_jet_seed(grid, L_bound, order, rng, scale=0.1):
    """Random admissible seed: bounded level 0, symmetric small jet levels."""
    from .graph_transform import random_admissible_field
    d = grid.n + 1
    iz = grid.zero_index
    levels = [random_admissible_field(grid, L_bound, rng)]
    for j in range(1, order + 1):
        arr = rng.uniform(-scale, scale, size=grid.shape + (d,) * j + (grid.n,))
        arr = sym_tensor(arr, j, batch_ndim=grid.n + 1)
        arr[(slice(None),) * grid.n + (iz,)] = 0.0
        levels.append(arr)
    return JetField(levels=levels, modes=("seed",) * (order + 1))


def level_node_norms(jets, j):
    """Per-node magnitude of level j: row 1-norm at level 0, max |coeff| above."""
    if j == 0:
        return np.sum(np.abs(jets.levels[0].values), axis=-1)
    arr = jets.levels[j]
    g = jets.grid.n + 1
    return np.max(np.abs(arr).reshape(arr.shape[:g] + (-1,)), axis=-1)


# ----------------------------------------------------------------------------
# grid differentiation (the "fd" production rule for levels above the cap)
# ----------------------------------------------------------------------------

def grid_derivative(grid, arr, slots):
    """One-sided grid derivative of a level array; new slot axis first.

    Differentiates along every coordinate direction with second-order
    stencils; the y-direction is differentiated separately on each side of
    the y = 0 plane (the jets are one-sided objects there), and the plane
    itself is set to 0. `slots` is the slot count of the input level.
    """
    g = grid.n + 1
    derivs = []
    for a in range(grid.n):
        derivs.append(np.gradient(arr, grid.x_nodes[a], axis=a, edge_order=2))
    iz = grid.zero_index
    yax = grid.n
    neg = [slice(None)] * arr.ndim
    pos = [slice(None)] * arr.ndim
    neg[yax] = slice(0, iz + 1)
    pos[yax] = slice(iz, None)
    dneg = np.gradient(arr[tuple(neg)], grid.y_nodes[:iz + 1], axis=yax, edge_order=2)
    dpos = np.gradient(arr[tuple(pos)], grid.y_nodes[iz:], axis=yax, edge_order=2)
    dy = np.empty_like(arr)
    dy[tuple(neg)] = dneg
    dy[tuple(pos)] = dpos
    derivs.append(dy)
    out = np.stack(derivs, axis=g)
    out[(slice(None),) * grid.n + (iz,)] = 0.0
    return sym_tensor(out, slots + 1, batch_ndim=g)


# ----------------------------------------------------------------------------
# the jet engine: frozen coefficient jets + per-sweep assembly
# ----------------------------------------------------------------------------

def _raw_gather(flat_level, plan):
    """Plan gather without any norm clamping (jet levels are not L-bounded)."""
    gathered = flat_level[plan["corners"]]
    return np.einsum("mc,mcv->mv", plan["weights"], gathered)


class JetEngine:
    """Per-grid frozen data for repeated Psi sweeps up to a given order.

    Holds a GammaEngine for the level-0 update (identical arithmetic to the
    plain solver) and, at the live nodes, the jets of the map T and of the
    coefficients A, B, C assembled once from derivative tensors of T paired
    with reciprocal jets of dG/dy.
    """

    def __init__(self, spec, grid, L_bound, order, threads=1):
        if order > spec.k:
            raise OrderUnsupported("jet order %d exceeds the smoothness class k=%d"
                                   % (order, spec.k))
        self.spec = spec
        self.grid = grid
        self.order = order
        self.exact_order = min(order, EXACT_ORDER_CAP)
        self.ga = GammaEngine(spec, grid, L_bound, threads=threads)
        n, d = grid.n, grid.n + 1
        X, Y = grid.node_points()
        live = self.ga.live
        Xl, Yl = X[live], Y[live]
        self.y_min = (1.0 / grid.M) ** grid.p
        self.far = np.abs(Yl) >= self.y_min
        io = self.exact_order
        jets_T = eval_DT_jet_batch(spec, Xl, Yl, io + 1)  # [D^1 T, .., D^(io+1) T]
        self.T_inner = jets_T
        gjets, PJ, QJ, RJ = [], [], [], []
        for j in range(io + 1):
            t = jets_T[j]                               # D^(j+1) T: (m, d) + (d,)*(j+1)
            gjets.append(t[(slice(None), d - 1, d - 1)][..., None])
            PJ.append(np.moveaxis(t[:, :n, :n], (1, 2), (-2, -1)).reshape(
                t.shape[:1] + (d,) * j + (n * n,)))
            QJ.append(np.moveaxis(t[:, :n, d - 1], 1, -1))
            RJ.append(np.moveaxis(t[:, d - 1, :n], 1, -1))
        if np.any(np.abs(gjets[0][:, 0]) < DENOM_FLOOR):
            raise DenominatorBreach("dG/dy vanishes at a node")
        invg = inverse_jets_kernel(gjets, io)
        self.A_jets = [leibniz_kernel(invg, PJ, j, "scalar").reshape(
            PJ[j].shape[:-1] + (n, n)) for j in range(io + 1)]
        self.B_jets = [leibniz_kernel(invg, QJ, j, "scalar") for j in range(io + 1)]
        self.C_jets = [leibniz_kernel(invg, RJ, j, "scalar") for j in range(io + 1)]

    def _interp_levels(self, levels, upto):
        """Candidate levels evaluated at the T-images of the live nodes.

        Level 0 goes through the clamped field gather (same numbers the
        level-0 update sees); higher levels gather raw.
        """
        n, d = self.grid.n, self.grid.n + 1
        out = [apply_plan(levels[0].reshape(-1, n), self.ga.plan, self.ga.L_bound)]
        for j in range(1, upto + 1):
            got = _raw_gather(levels[j].reshape(-1, d ** j * n), self.ga.plan)
            out.append(got.reshape((got.shape[0],) + (d,) * j + (n,)))
        return out

    def sweep_exact(self, levels):
        """Psi^j at every live node, j = 1..exact_order, from raw level arrays."""
        io = self.exact_order
        lvlT = self._interp_levels(levels, io)
        cjets = [lvlT[0]]
        for q in range(1, io + 1):
            cjets.append(dc_kernel(lvlT, self.T_inner, q, 1, q))
        wjets = [leibniz_kernel(cjets, self.B_jets, q, "dot") for q in range(io + 1)]
        u0 = 1.0 - wjets[0]
        if float(np.min(np.abs(u0))) < DENOM_FLOOR:
            raise DenominatorBreach("|1 - (nu o T) B| fell below %.0e in a jet sweep"
                                    % DENOM_FLOOR)
        ujets = [u0] + [-w for w in wjets[1:]]
        invjets = inverse_jets_kernel(ujets, io)
        numjets = [leibniz_kernel(cjets, self.A_jets, q, "rowmat") - self.C_jets[q]
                   for q in range(io + 1)]
        out = {}
        for i in range(1, io + 1):
            raw = leibniz_kernel(invjets, numjets, i, "scalar")
            raw[~self.far] = 0.0
            out[i] = sym_tensor(raw, i, batch_ndim=1)
        return out

    def embed(self, live_values, j):
        """Scatter live-node level values back into a full grid array."""
        grid = self.grid
        d = grid.n + 1
        full = np.zeros(grid.shape + (d,) * j + (grid.n,))
        full.reshape((-1,) + (d,) * j + (grid.n,))[self.ga.live] = live_values
        return full


def psi_apply(spec, jets, i, engine=None):
    """Level-i update map applied to a jet tuple: returns (values, mode).

    Exact jet-algebra assembly for i <= 2; grid differentiation of level
    i - 1 (flagged "fd") for 3 <= i <= k; OrderUnsupported beyond k.
    values is the full-grid level array (zero on y = 0 and inside the
    near-plane cutoff), already symmetrized.
    """
    if i < 1:
        raise OrderMismatch("level index must be >= 1")
    if i > spec.k:
        raise OrderUnsupported("Psi^%d undefined: the map class is C^%d" % (i, spec.k))
    if jets.order < i - 1 or (i <= EXACT_ORDER_CAP and jets.order < i):
        raise OrderMismatch("jet tuple of order %d cannot feed level %d"
                            % (jets.order, i))
    if i > EXACT_ORDER_CAP:
        return grid_derivative(jets.grid, jets.levels[i - 1], i - 1), "fd"
    if engine is None:
        engine = JetEngine(spec, jets.grid, jets.L_bound, order=i)
    raw_levels = [jets.levels[0].values] + list(jets.levels[1:])
    out = engine.sweep_exact(raw_levels)
    return engine.embed(out[i], i), "exact"


# ----------------------------------------------------------------------------
# fiber iteration
# ----------------------------------------------------------------------------

def _tail_ratio(history, floor=1e-14, window=10):
    pairs = [(a, b) for a, b in zip(history, history[1:]) if a > floor]
    if not pairs:
        return None
    tail = pairs[-window:]
    return float(np.median([b / a for a, b in tail]))


def fiber_iterate(spec, seed, tol=1e-10, max_iter=10000, threads=1,
                  factorial_reading="2*k!"):
    """Iterate the extended transform to its attracting fixed tuple.

    Updates all levels simultaneously from the previous tuple, measures
    level-j distances in the adapted (Perron-weighted) block norms, and
    stops when every level moved by at most tol. Returns (JetField,
    report); the report carries per-level histories, observed tail ratios,
    Theta(j) under the configured reading, and any warnings. Levels above
    the exact cap are produced afterwards by grid differentiation of the
    converged level below ("fd").

    Raises NoConvergence (histories attached) when max_iter is exhausted.
    """
    grid, order = seed.grid, seed.order
    engine = JetEngine(spec, grid, seed.L_bound, order=order, threads=threads)
    io = engine.exact_order
    nb = estimate_norms(spec, grid, refine_check=False)
    report = {"theta": {}, "warnings": [], "factorial_reading": factorial_reading}
    if check_L2(nb)[0]:
        for j in range(1, min(order, spec.k) + 1):
            report["theta"][str(j)] = compute_Theta(nb, j, factorial_reading=factorial_reading)
            if report["theta"][str(j)] >= 1.0:
                msg = ("Theta(%d) = %.3f >= 1: level-%d contraction is not certified; "
                       "proceeding in diagnostic mode" % (j, report["theta"][str(j)], j))
                report["warnings"].append(msg)
                warnings.warn(msg)
    else:
        msg = "norm condition fails (no contraction certificate); proceeding"
        report["warnings"].append(msg)
        warnings.warn(msg)
    fb, floored = floored_bundle(nb)
    report["perron_floored"] = floored
    pweights = {j: build_perron(fb, j).weights for j in range(1, io + 1)}

    cur = [seed.levels[0].values] + [np.asarray(a) for a in seed.levels[1:io + 1]]
    histories = {str(j): [] for j in range(io + 1)}
    live = engine.ga.live
    converged = False
    for _ in range(max_iter):
        new0 = engine.ga.apply_values(cur[0])
        psis = engine.sweep_exact(cur)
        new = [new0] + [engine.embed(psis[j], j) for j in range(1, io + 1)]
        dists = [float(np.max(np.sum(np.abs(new[0] - cur[0]), axis=-1)))]
        for j in range(1, io + 1):
            diff = (new[j] - cur[j]).reshape((-1,) + new[j].shape[grid.n + 1:])[live]
            if grid.n == 1:
                dj = float(np.max(adapted_norm_coeffs_1d(diff, j, pweights[j])))
            else:
                flat = np.abs(diff).reshape(diff.shape[0], -1)
                dj = float(np.max(flat @ _pattern_weights(grid.n, j, pweights[j])))
            dists.append(dj)
        for j, dv in enumerate(dists):
            histories[str(j)].append(dv)
        cur = new
        if max(dists) <= tol:
            converged = True
            break
    report["histories"] = histories
    report["ratios"] = {j: _tail_ratio(h) for j, h in histories.items()}
    report["iterations"] = len(histories["0"])
    if not converged:
        raise NoConvergence("extended iteration did not reach tol %.1e in %d sweeps "
                            "(per-level ratios %s)" % (tol, max_iter, report["ratios"]),
                            history=histories)
    levels = [Field(grid=grid, values=cur[0], L_bound=seed.L_bound)] + cur[1:]
    modes = ["exact"] * (io + 1)
    for j in range(io + 1, order + 1):
        levels.append(grid_derivative(grid, levels[j - 1], j - 1))
        modes.append("fd")
    return JetField(levels=levels, modes=tuple(modes)), report


def _pattern_weights(n, j, pweights):
    """Expand {E, F}^j Perron weights to the d^j coefficient slots (n >= 2)."""
    d = n + 1
    w = np.empty(d ** j)
    for flat, idx in enumerate(np.ndindex(*(d,) * j)):
        pattern = tuple("E" if a < n else "F" for a in idx)
        w[flat] = pweights[block_patterns(j).index(pattern)]
    return w


# ----------------------------------------------------------------------------
# vanishing diagnostics near the singular plane
# ----------------------------------------------------------------------------

def verify_vanishing(jets, tol=1e-4, deltas=(0.1, 0.01, 0.001)):
    """Near-plane maxima per level and their log-log decay slope.

    For each level j reports max node magnitude over 0 < |y| <= delta for
    each delta, whether the maxima decrease monotonically, whether the
    smallest is below tol * 10, and the fitted slope of log magnitude
    against log |y| at the central x-column.
    """
    grid = jets.grid
    ys = grid.y_nodes
    report = {"tol": tol, "deltas": list(deltas), "levels": {}}
    cols = tuple(len(ax) // 2 for ax in grid.x_nodes)
    for j in range(jets.order + 1):
        mags = level_node_norms(jets, j)
        maxima = []
        for delta in deltas:
            sel = (ys != 0.0) & (np.abs(ys) <= delta)
            maxima.append(float(np.max(mags[..., sel])) if np.any(sel) else 0.0)
        monotone = all(a >= b for a, b in zip(maxima, maxima[1:]))
        col = mags[cols]
        win = (ys >= 1e-3) & (ys <= 1e-1) & (col > 0.0)
        slope = (float(np.polyfit(np.log(ys[win]), np.log(col[win]), 1)[0])
                 if int(np.sum(win)) >= 2 else math.inf)
        report["levels"][str(j)] = {
            "delta_maxima": maxima,
            "monotone": monotone,
            "below": maxima[-1] <= tol * 10.0,
            "slope": slope,
        }
    return report


# ----------------------------------------------------------------------------
# per-level CSV export
# ----------------------------------------------------------------------------

def jet_level_save(jets, j, path):
    """Write level j as CSV: node coordinates plus flattened coefficients."""
    import csv as _csv
    grid = jets.grid
    d = grid.n + 1
    X, Y = grid.node_points()
    if j == 0:
        flat = jets.levels[0].flat_values()
        labels = ["nu%d" % (r + 1) for r in range(grid.n)]
    else:
        flat = jets.levels[j].reshape(-1, d ** j * grid.n)
        labels = ["c_%s_%d" % ("".join(map(str, idx)), r)
                  for idx in np.ndindex(*(d,) * j) for r in range(grid.n)]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["x%d" % (a + 1) for a in range(grid.n)] + ["y"] + labels)
        for i in range(flat.shape[0]):
            w.writerow([repr(float(v)) for v in X[i]] + [repr(float(Y[i]))]
                       + [repr(float(v)) for v in flat[i]])


def jet_level_load(path, grid, j):
    """Reload a jet_level_save CSV into a full-grid level array."""
    import csv as _csv
    d = grid.n + 1
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = _csv.reader(fh)
        next(reader)
        for row in reader:
            rows.append([float(s) for s in row])
    data = np.asarray(rows)[:, grid.n + 1:]
    return data.reshape(grid.shape + (d,) * j + (grid.n,))
