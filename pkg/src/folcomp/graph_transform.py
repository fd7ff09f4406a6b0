"""Discretized slope fields and the graph-transform fixed point.

A slope field nu assigns to every grid node a row vector in R^n (measured
in the row 1-norm), vanishes identically on the singular plane y = 0, and
is bounded by the admissible constant L. The graph transform

    (Gamma nu)(x, y) = (nu(T(x, y)) A(x, y) - C(x, y)) / (1 - nu(T(x, y)) B(x, y))

(0 on y = 0) contracts this set and its fixed point nu* is the slope field
of the invariant foliation; iterating Gamma on any admissible seed walks
geometrically to nu*.

Discretization: the y-axis carries the graded mesh +-(j/M)^p (plus the
0 plane), concentrating nodes near the singular plane where nu* vanishes
to order gamma + 1; x-axes are uniform. Because y = 0 is itself a node, no
interpolation cell ever straddles the discontinuity plane, so multilinear
interpolation within cells is automatically one-sided. Images T(node) that
overshoot the box are clamped componentwise (counted), and interpolated
slope values are clamped in norm to L (interpolation overshoot only; the
true operator maps admissible fields to admissible fields).

The evaluation points T(node), the coefficients A, B, C, and the
interpolation stencils are all independent of the field being transformed,
so the iteration precomputes them once (GammaEngine) and each sweep is a
gather + a few vectorized products; with `threads` > 1 the node range is
processed in disjoint chunks whose outputs are written to disjoint slots -
worker count cannot change any value.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from concurrent.futures import ThreadPoolExecutor

from .errors import ConfigError, DenominatorBreach, NoConvergence
from .map_model import eval_ABC_batch, eval_T_batch

DENOM_FLOOR = 1e-9
FIELD_SLACK = 1e-12


# ----------------------------------------------------------------------------
# grid
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Grid:
    """Tensor grid over the box: uniform x-axes, graded symmetric y-axis."""

    n: int
    x_nodes: tuple
    y_nodes: np.ndarray
    M: int
    p: float

    def __post_init__(self):
        object.__setattr__(self, "x_nodes", tuple(np.asarray(ax, dtype=float) for ax in self.x_nodes))
        object.__setattr__(self, "y_nodes", np.asarray(self.y_nodes, dtype=float))
        y = self.y_nodes
        if not np.any(y == 0.0):
            raise ConfigError("y_nodes must contain 0")
        if np.any(np.diff(y) <= 0.0):
            raise ConfigError("y_nodes must be strictly increasing")
        if not np.array_equal(y, -y[::-1]):
            raise ConfigError("y_nodes must be symmetric about 0")
        if np.max(np.abs(y)) > 1.0:
            raise ConfigError("|y| nodes must stay within 1")
        for ax in self.x_nodes:
            if np.any(np.diff(ax) <= 0.0) or np.max(np.abs(ax)) > 1.0:
                raise ConfigError("x nodes must be strictly increasing within [-1, 1]")

    @classmethod
    def build(cls, n=1, M=200, p=2.0, x_resolution=41):
        """Graded product grid: y = +-(j/M)^p for j = 1..M plus the 0 plane."""
        if M < 2 or p < 1.0 or x_resolution < 3:
            raise ConfigError("need M >= 2, p >= 1, x_resolution >= 3")
        pos = ((np.arange(1, M + 1) / M) ** p)
        y = np.concatenate([-pos[::-1], [0.0], pos])
        axes = tuple(np.linspace(-1.0, 1.0, x_resolution) for _ in range(n))
        return cls(n=n, x_nodes=axes, y_nodes=y, M=M, p=float(p))

    def refine(self, factor=2):
        """Same grading rule at factor x the half-resolution; x-axes keep
        their endpoints and gain factor x density. Original nodes persist."""
        return Grid.build(n=self.n, M=self.M * factor, p=self.p,
                          x_resolution=(len(self.x_nodes[0]) - 1) * factor + 1)

    @property
    def shape(self):
        return tuple(len(ax) for ax in self.x_nodes) + (len(self.y_nodes),)

    @property
    def zero_index(self):
        return int(np.where(self.y_nodes == 0.0)[0][0])

    def node_points(self):
        """All nodes flattened, C-order: returns X (m, n), Y (m,)."""
        mesh = np.meshgrid(*self.x_nodes, self.y_nodes, indexing="ij")
        X = np.stack([m.ravel() for m in mesh[:-1]], axis=1)
        return X, mesh[-1].ravel()


# ----------------------------------------------------------------------------
# field
# ----------------------------------------------------------------------------

def _row_norms(values):
    return np.sum(np.abs(values), axis=-1)


@dataclass(frozen=True, eq=False)
class Field:
    """Admissible slope field on a grid: zero on y = 0, row norms <= L."""

    grid: Grid
    values: np.ndarray
    L_bound: float

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        expect = self.grid.shape + (self.grid.n,)
        if vals.shape != expect:
            raise ConfigError("field values must have shape %s, got %s" % (expect, vals.shape))
        zplane = vals[..., self.grid.zero_index, :]
        if np.any(zplane != 0.0):
            raise ConfigError("field must vanish exactly on the y = 0 plane")
        worst = float(np.max(_row_norms(vals))) if vals.size else 0.0
        if worst > self.L_bound + FIELD_SLACK:
            raise ConfigError("field norm %.6g exceeds the admissible bound %.6g"
                              % (worst, self.L_bound))
        object.__setattr__(self, "values", vals)

    def flat_values(self):
        return self.values.reshape(-1, self.grid.n)


def zero_field(grid, L_bound):
    return Field(grid=grid, values=np.zeros(grid.shape + (grid.n,)), L_bound=L_bound)


def random_admissible_field(grid, L_bound, rng):
    """Uniform random admissible field: rows scaled into the L ball, zero plane."""
    vals = rng.uniform(-1.0, 1.0, size=grid.shape + (grid.n,))
    norms = _row_norms(vals)
    scale = np.where(norms > 0.0, L_bound / np.maximum(norms, 1e-300), 0.0)
    vals = vals * (scale * rng.uniform(0.0, 1.0, size=norms.shape))[..., None]
    vals[..., grid.zero_index, :] = 0.0
    return Field(grid=grid, values=vals, L_bound=L_bound)


def sup_distance(f1, f2):
    """Sup over nodes of the row 1-norm of the difference."""
    return float(np.max(_row_norms(f1.values - f2.values)))


# ----------------------------------------------------------------------------
# multilinear interpolation with precomputed stencils
# ----------------------------------------------------------------------------

def build_plan(grid, X, Y):
    """Precompute cell stencils and weights for points (X, Y).

    Coordinates are clamped componentwise into the box first (the count of
    affected points is recorded); the stencil never spans y = 0 because 0
    is a node. Returns a dict with flat corner indices (m, 2^(n+1)),
    weights (m, 2^(n+1)), and the clamp count.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).ravel()
    m = Y.shape[0]
    clamped = np.zeros(m, dtype=bool)
    coords = []
    for a, ax in enumerate(grid.x_nodes):
        c = X[:, a]
        cc = np.clip(c, ax[0], ax[-1])
        clamped |= cc != c
        coords.append(cc)
    yy = np.clip(Y, grid.y_nodes[0], grid.y_nodes[-1])
    clamped |= yy != Y
    coords.append(yy)

    axes = list(grid.x_nodes) + [grid.y_nodes]
    lo_idx = []
    ts = []
    for ax, c in zip(axes, coords):
        i = np.clip(np.searchsorted(ax, c, side="right") - 1, 0, len(ax) - 2)
        lo_idx.append(i)
        ts.append((c - ax[i]) / (ax[i + 1] - ax[i]))

    d = grid.n + 1
    dims = grid.shape
    corners = np.empty((m, 2 ** d), dtype=np.int64)
    weights = np.empty((m, 2 ** d))
    for bit, picks in enumerate(np.ndindex(*(2,) * d)):
        idx = [lo_idx[a] + picks[a] for a in range(d)]
        w = np.ones(m)
        for a in range(d):
            w = w * (ts[a] if picks[a] else 1.0 - ts[a])
        corners[:, bit] = np.ravel_multi_index(idx, dims)
        weights[:, bit] = w
    return {"corners": corners, "weights": weights, "clamp_count": int(np.sum(clamped))}


def apply_plan(flat_values, plan, L_bound):
    """Gather-and-blend a plan against flattened node values; norm-clamp to L."""
    gathered = flat_values[plan["corners"]]          # (m, 2^d, n)
    out = np.einsum("mc,mcr->mr", plan["weights"], gathered)
    norms = np.sum(np.abs(out), axis=1)
    over = norms > L_bound
    if np.any(over):
        out[over] *= (L_bound / norms[over])[:, None]
    return out


def interpolate(f, p):
    """Field value at a point (clamped into the box, one-sided across y = 0)."""
    plan = build_plan(f.grid, np.atleast_2d(p.x), np.array([p.y]))
    return apply_plan(f.flat_values(), plan, f.L_bound)[0]


def interpolate_batch(f, X, Y):
    plan = build_plan(f.grid, X, Y)
    return apply_plan(f.flat_values(), plan, f.L_bound)


# ----------------------------------------------------------------------------
# the graph transform
# ----------------------------------------------------------------------------

class GammaEngine:
    """Frozen per-grid data for repeated Gamma sweeps.

    Everything that does not depend on the field - the images T(node), the
    interpolation stencils at those images, and the coefficients A, B, C at
    the nodes - is computed once. apply() is then one gather plus O(m n^2)
    arithmetic per sweep.
    """

    def __init__(self, spec, grid, L_bound, threads=1):
        self.spec = spec
        self.grid = grid
        self.L_bound = float(L_bound)
        self.threads = max(1, int(threads))
        X, Y = grid.node_points()
        self.live = Y != 0.0
        Xl, Yl = X[self.live], Y[self.live]
        F, G = eval_T_batch(spec, Xl, Yl)
        self.plan = build_plan(grid, F, G)
        self.coord_clamps = self.plan["clamp_count"]
        A, B, C, _, _ = eval_ABC_batch(spec, Xl, Yl)
        self.A, self.B, self.C = A, B, C
        self.n_live = int(np.sum(self.live))

    def _chunk_ranges(self):
        chunk = int(math.ceil(self.n_live / self.threads))
        return [(s, min(s + chunk, self.n_live)) for s in range(0, self.n_live, chunk)
                if s < self.n_live]

    def apply_values(self, values, stats=None):
        flat = values.reshape(-1, self.grid.n)
        nuT = apply_plan(flat, self.plan, self.L_bound)
        out_live = np.empty_like(nuT)
        value_clamps = np.zeros(len(self._chunk_ranges()), dtype=np.int64)
        min_den = np.empty(len(self._chunk_ranges()))

        def work(ci, lo, hi):
            num = np.einsum("mr,mrs->ms", nuT[lo:hi], self.A[lo:hi]) - self.C[lo:hi]
            den = 1.0 - np.einsum("mr,mr->m", nuT[lo:hi], self.B[lo:hi])
            min_den[ci] = float(np.min(np.abs(den)))
            res = num / den[:, None]
            norms = np.sum(np.abs(res), axis=1)
            over = norms > self.L_bound
            value_clamps[ci] = int(np.sum(over))
            if np.any(over):
                res[over] *= (self.L_bound / norms[over])[:, None]
            out_live[lo:hi] = res

        ranges = self._chunk_ranges()
        if self.threads == 1 or len(ranges) == 1:
            for ci, (lo, hi) in enumerate(ranges):
                work(ci, lo, hi)
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                list(pool.map(lambda args: work(*args),
                              [(ci, lo, hi) for ci, (lo, hi) in enumerate(ranges)]))
        worst_den = float(np.min(min_den))
        if worst_den < DENOM_FLOOR:
            raise DenominatorBreach("|1 - (nu o T) B| reached %.3e (< %.0e): "
                                    "the bound L is inconsistent with the data"
                                    % (worst_den, DENOM_FLOOR))
        out = np.zeros(values.shape)
        out.reshape(-1, self.grid.n)[self.live] = out_live
        if stats is not None:
            stats["coord_clamps"] = self.coord_clamps
            stats["value_clamps"] = int(np.sum(value_clamps))
            stats["min_abs_denominator"] = worst_den
            stats["live_nodes"] = self.n_live
        return out

    def apply(self, f, stats=None):
        return Field(grid=self.grid, values=self.apply_values(f.values, stats=stats),
                     L_bound=self.L_bound)


def gamma_apply(spec, f, stats=None, threads=1):
    """One application of the graph transform to an admissible field.

    Pass a dict as `stats` to receive the clamp counters and the minimal
    |denominator| of the sweep.
    """
    return GammaEngine(spec, f.grid, f.L_bound, threads=threads).apply(f, stats=stats)


def iterate_to_fixed_point(spec, seed, tol=1e-10, max_iter=10000, threads=1,
                           engine=None, stats=None):
    """Iterate Gamma from a seed until the sup node distance drops to tol.

    Returns (fixed field, history of sup distances). The history is the
    sequence d_m = sup |nu_{m+1} - nu_m|; geometric decay with the
    contraction ratio is the expected shape. Raises NoConvergence (with the
    history attached) when max_iter is exhausted.
    """
    if engine is None:
        engine = GammaEngine(spec, seed.grid, seed.L_bound, threads=threads)
    cur = seed
    history = []
    for _ in range(max_iter):
        new = engine.apply(cur, stats=stats)
        d = sup_distance(new, cur)
        history.append(d)
        if d <= tol:
            return new, history
        cur = new
    ratio = (history[-1] / history[-2]) if len(history) >= 2 and history[-2] > 0 else math.nan
    raise NoConvergence("no convergence after %d sweeps (last distance %.3e, "
                        "observed ratio %.3f)" % (max_iter, history[-1], ratio),
                        history=history)


def measure_contraction(spec, trials=50, grid=None, L_bound=None, seed=0, engine=None):
    """Worst observed Lipschitz ratio of Gamma over random admissible pairs.

    Returns (worst ratio, list of ratios). Must come out < 1 on models
    satisfying the admissibility assumptions; reported as-is (diagnostic)
    otherwise.
    """
    if grid is None:
        grid = Grid.build(n=spec.n)
    if L_bound is None:
        from .norms import compute_L, estimate_norms
        L_bound = compute_L(estimate_norms(spec, grid, refine_check=False))
    if engine is None:
        engine = GammaEngine(spec, grid, L_bound)
    rng = np.random.default_rng(seed)
    ratios = []
    for _ in range(trials):
        f1 = random_admissible_field(grid, L_bound, rng)
        f2 = random_admissible_field(grid, L_bound, rng)
        d = sup_distance(f1, f2)
        if d == 0.0:
            continue
        g1 = engine.apply(f1)
        g2 = engine.apply(f2)
        ratios.append(sup_distance(g1, g2) / d)
    return (max(ratios) if ratios else 0.0), ratios


def decay_exponent(f, x0=None, window=(1e-4, 0.1)):
    """Log-log slope of |nu(x0, y)| on the positive window near the plane.

    Least-squares fit of log row-norm against log y over the y-nodes inside
    `window` at the x-column nearest x0 (default 0). Returns +inf when the
    field vanishes on the window (the all-zero tag).
    """
    grid = f.grid
    if x0 is None:
        x0 = np.zeros(grid.n)
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    cols = tuple(int(np.argmin(np.abs(ax - x0[a]))) for a, ax in enumerate(grid.x_nodes))
    ys = grid.y_nodes
    sel = (ys >= window[0]) & (ys <= window[1])
    vals = _row_norms(f.values[cols])[sel]
    ysel = ys[sel]
    keep = vals > 0.0
    if int(np.sum(keep)) < 2:
        return math.inf
    slope = np.polyfit(np.log(ysel[keep]), np.log(vals[keep]), 1)[0]
    return float(slope)


# ----------------------------------------------------------------------------
# serialization (CSV of node rows + JSON header); bit-exact round trip
# ----------------------------------------------------------------------------

def field_save(f, csv_path, json_path, history=None, extra=None):
    """Write node rows x1..xn, y, nu1..nun (repr floats) plus a JSON header."""
    X, Y = f.grid.node_points()
    flat = f.flat_values()
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x%d" % (a + 1) for a in range(f.grid.n)] + ["y"]
                   + ["nu%d" % (r + 1) for r in range(f.grid.n)])
        for i in range(flat.shape[0]):
            w.writerow([repr(float(v)) for v in X[i]] + [repr(float(Y[i]))]
                       + [repr(float(v)) for v in flat[i]])
    header = {
        "n": f.grid.n, "M": f.grid.M, "p": f.grid.p,
        "x_nodes": [[repr(float(v)) for v in ax] for ax in f.grid.x_nodes],
        "y_nodes": [repr(float(v)) for v in f.grid.y_nodes],
        "L_bound": repr(float(f.L_bound)),
        "history": [repr(float(h)) for h in (history or [])],
    }
    if extra:
        header.update(extra)
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(header, fh, indent=2, sort_keys=True)
        fh.write("\n")


def field_load(csv_path, json_path):
    """Rebuild (Field, header) from field_save output, bit for bit."""
    with open(json_path, "r", encoding="utf-8") as fh:
        header = json.load(fh)
    grid = Grid(n=int(header["n"]),
                x_nodes=tuple(np.array([float(s) for s in ax]) for ax in header["x_nodes"]),
                y_nodes=np.array([float(s) for s in header["y_nodes"]]),
                M=int(header["M"]), p=float(header["p"]))
    rows = []
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            rows.append([float(s) for s in row])
    data = np.asarray(rows)
    values = data[:, grid.n + 1:].reshape(grid.shape + (grid.n,))
    f = Field(grid=grid, values=values, L_bound=float(header["L_bound"]))
    return f, header
