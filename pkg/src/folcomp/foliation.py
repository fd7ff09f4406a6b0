"""Leaves of the invariant foliation and the one-dimensional reduction.

A converged slope field nu* determines leaves as graphs y = h(x) solving
dy/dx = nu*(x, y): through every point of the box there is exactly one,
the plane y = 0 is itself a leaf, and no leaf crosses it (nu* vanishes
there, so y = 0 solves the same equation). trace_leaf integrates that
equation with a fixed-step classical 4-stage scheme - no adaptivity, so
retracing is bit-reproducible - and truncates with a flag where a leaf
exits through the top or bottom wall.

The foliation is the right object because T maps leaves into leaves;
check_invariance audits exactly that, mapping the samples of one leaf
through T and measuring how far they stray from the leaf traced through
the mapped base point.

Collapsing each leaf to its intersection with a transversal {x = const}
turns T into a one-dimensional map: Gbar(y) is computed by mapping
(transversal_x, y) through T and sliding along the leaf through the image
back to the transversal. Near y = 0 the image jumps to the opposite wall
neighborhoods, and |Gbar(y) - Gbar(0+-)| ~ |y|^alpha gives back the cusp
exponent (alpha_fit). Samples whose slide leaves the box before reaching
the transversal are dropped and counted; LeafEscapes is raised only when
an entire side is lost.

For n >= 2 the leaves are graphs over an n-dimensional base and tracing
follows axis-ordered polylines; path_independence measures how much the
result depends on the axis order (the integrability defect, which for a
true invariant field should sit at integrator-error level).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LeafEscapes
from .graph_transform import interpolate_batch
from .map_model import Point, eval_T_batch

X_STEP = 1e-3
ALPHA_WINDOW = (1e-3, 1e-1)


# ----------------------------------------------------------------------------
# types
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Leaf:
    """A traced leaf: ordered samples (x..., y) along the integration path."""

    base: Point
    samples: np.ndarray          # (S, n + 1), x columns then y
    step: float
    truncated: bool = False
    flags: tuple = ()

    @property
    def xs(self):
        return self.samples[:, :-1]

    @property
    def ys(self):
        return self.samples[:, -1]


@dataclass(frozen=True, eq=False)
class ReducedMap:
    """The transversal return data: samples (y, Gbar(y)) and the cusp fit."""

    transversal_x: float
    samples: np.ndarray          # (S, 2) rows (y, Gbar(y)), sorted by y
    alpha_fit: float
    gbar_limits: dict            # {"+": Gbar(0+), "-": Gbar(0-)}
    monotone: dict               # {"+": bool, "-": bool} strict monotonicity
    dropped: int = 0


# ----------------------------------------------------------------------------
# field evaluation helpers
# ----------------------------------------------------------------------------

def _nu(field, X, Y):
    """Vectorized slope lookup, (m, n) from column points."""
    return interpolate_batch(field, X, Y)


def _rk4_masked(field, X, Y, h, active, axis=0):
    """One classical step of dy/dt = nu_axis(x, y) along coordinate `axis`.

    X (m, n), Y (m,), h (m,) signed per-sample steps; rows where ~active
    pass through unchanged. Returns the new (X, Y).
    """
    def f(Xc, Yc):
        return _nu(field, Xc, Yc)[:, axis]

    ha = np.where(active, h, 0.0)
    ea = np.zeros_like(X)
    ea[:, axis] = 1.0
    k1 = f(X, Y)
    k2 = f(X + ea * (ha / 2)[:, None], Y + ha / 2 * k1)
    k3 = f(X + ea * (ha / 2)[:, None], Y + ha / 2 * k2)
    k4 = f(X + ea * ha[:, None], Y + ha * k3)
    Ynew = Y + ha / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    Xnew = X + ea * ha[:, None]
    return Xnew, Ynew


# ----------------------------------------------------------------------------
# tracing a single leaf
# ----------------------------------------------------------------------------

def trace_leaf(field, base, x_step=X_STEP, axis=0):
    """Integrate the leaf through `base` across the box along one x-axis.

    Classical fixed-step 4-stage integration of dy/dx = nu(x, y) in both
    directions until x reaches -1 and +1 (exact final partial steps), with
    samples recorded at every step. If y leaves [-1, 1] the trace stops at
    the last interior sample and the leaf is flagged truncated
    ("LeftDomain").
    """
    n = field.grid.n
    x0 = np.atleast_1d(np.asarray(base.x, dtype=float))
    y0 = float(base.y)
    if np.max(np.abs(x0)) > 1.0 or abs(y0) > 1.0:
        raise ConfigError("leaf base must lie inside the box")
    flags = []

    def march(direction):
        pts = []
        X = x0[None, :].copy()
        Y = np.array([y0])
        active = np.array([True])
        while True:
            remaining = direction * (direction * 1.0 - X[0, axis])
            if remaining <= 0.0:
                break
            h = np.array([direction * min(x_step, remaining)])
            Xn, Yn = _rk4_masked(field, X, Y, h, active, axis=axis)
            if abs(Yn[0]) > 1.0:
                flags.append("LeftDomain")
                break
            X, Y = Xn, Yn
            pts.append(np.concatenate([X[0], Y]))
        return pts

    fwd = march(+1.0)
    bwd = march(-1.0)
    rows = [np.concatenate([x0, [y0]])]
    samples = np.asarray(list(reversed(bwd)) + rows + fwd)
    return Leaf(base=Point(x0.copy(), y0), samples=samples, step=float(x_step),
                truncated=bool(flags), flags=tuple(sorted(set(flags))))


# ----------------------------------------------------------------------------
# invariance audit
# ----------------------------------------------------------------------------

def check_invariance(spec, field, leaf, report=None):
    """Max |y - deviation| of the T-image of a leaf from its target leaf.

    Every sample of `leaf` is mapped through T; the target leaf is traced
    through T(base); the deviation at a mapped sample is the distance of
    its y to the target leaf's height at the same x. Mapped samples
    outside the box (or beyond a truncated target's reach) are excluded
    and counted under "ImageOutsideD".
    """
    F, G = eval_T_batch(spec, leaf.xs, leaf.ys)
    Fb, Gb = eval_T_batch(spec, np.atleast_2d(leaf.base.x), np.array([leaf.base.y]))
    target = trace_leaf(field, Point(Fb[0], float(Gb[0])), x_step=leaf.step)
    tx = target.xs[:, 0]
    ty = target.ys
    inside = (np.max(np.abs(F), axis=1) <= 1.0) & (np.abs(G) <= 1.0)
    covered = inside & (F[:, 0] >= tx[0]) & (F[:, 0] <= tx[-1])
    excluded = int(np.sum(~covered))
    if report is not None:
        report["ImageOutsideD"] = excluded
        report["samples"] = int(G.shape[0])
    if not np.any(covered):
        return math.nan
    h_target = np.interp(F[covered, 0], tx, ty)
    return float(np.max(np.abs(G[covered] - h_target)))


# ----------------------------------------------------------------------------
# batched slide to a transversal
# ----------------------------------------------------------------------------

def _slide_to_transversal(field, X0, Y0, target_x, x_step=X_STEP, axis=0):
    """Slide points along their leaves to x_axis = target_x, batched.

    Per-sample signed steps; a sample whose |y| exceeds 1 on the way is
    deactivated and marked escaped. Returns (Y_final, escaped mask).
    """
    X = np.array(X0, dtype=float)
    Y = np.array(Y0, dtype=float)
    m = Y.shape[0]
    escaped = np.zeros(m, dtype=bool)
    done = np.zeros(m, dtype=bool)
    max_steps = int(math.ceil(2.0 / x_step)) + 2
    for _ in range(max_steps):
        remaining = target_x - X[:, axis]
        done |= np.abs(remaining) <= 1e-15
        active = ~done & ~escaped
        if not np.any(active):
            break
        h = np.sign(remaining) * np.minimum(x_step, np.abs(remaining))
        Xn, Yn = _rk4_masked(field, X, Y, h, active, axis=axis)
        bad = active & (np.abs(Yn) > 1.0)
        escaped |= bad
        keep = active & ~bad
        X[keep] = Xn[keep]
        Y[keep] = Yn[keep]
    return Y, escaped


def path_independence(field, base, target_x=None, x_step=X_STEP):
    """Integrability defect for n >= 2: slide along two axis orders.

    Integrates dy = sum_a nu_a dx_a from `base` to `target_x` along the
    axis-ordered polyline (axis 0 first, then 1, ...) and along the
    reversed order; returns the absolute y-difference.
    """
    n = field.grid.n
    if n < 2:
        raise ConfigError("path independence needs n >= 2 axes")
    x0 = np.atleast_1d(np.asarray(base.x, dtype=float))
    if target_x is None:
        target_x = -x0
    target_x = np.atleast_1d(np.asarray(target_x, dtype=float))

    def polyline(order):
        X = x0[None, :].copy()
        Y = np.array([float(base.y)])
        for a in order:
            while abs(target_x[a] - X[0, a]) > 1e-15:
                rem = target_x[a] - X[0, a]
                h = np.array([np.sign(rem) * min(x_step, abs(rem))])
                X, Y = _rk4_masked(field, X, Y, h, np.array([True]), axis=a)
        return float(Y[0])

    y_fwd = polyline(list(range(n)))
    y_rev = polyline(list(reversed(range(n))))
    return abs(y_fwd - y_rev)


# ----------------------------------------------------------------------------
# the one-dimensional reduction
# ----------------------------------------------------------------------------

def reduce_1d(spec, field, transversal_x=0.0, n_samples=80, x_step=X_STEP):
    """Collapse T to the transversal {x = transversal_x}: returns a ReducedMap.

    For each y on a signed log-spaced grid: map (transversal_x, y) through
    T, slide along the leaf through the image back to the transversal;
    that height is Gbar(y). The one-sided limits Gbar(0+-) come from
    sliding the images of the branch points (x*, y*) themselves. Escaped
    samples are dropped and counted; a side losing all its samples raises
    LeafEscapes. alpha_fit is the average over sides of the slope of
    log |Gbar(y) - Gbar(0+-)| against log |y| on the fit window.
    """
    if field.grid.n != 1:
        raise ConfigError("the reduction is implemented for one x-axis (n = 1)")
    tx = float(transversal_x)
    if abs(tx) > 1.0:
        raise ConfigError("transversal must lie inside the box")

    ys_pos = np.logspace(-3.0, 0.0, n_samples)
    rows = []
    dropped = 0
    limits = {}
    alpha_sides = []
    monotone = {}
    for side, sgn in (("+", 1.0), ("-", -1.0)):
        ys = sgn * ys_pos
        X0 = np.full((n_samples, 1), tx)
        F, G = eval_T_batch(spec, X0, ys)
        inside = (np.abs(F[:, 0]) <= 1.0) & (np.abs(G) <= 1.0)
        Yf = np.full(n_samples, np.nan)
        esc = ~inside
        if np.any(inside):
            Yf[inside], esc_in = _slide_to_transversal(
                field, F[inside], G[inside], tx, x_step=x_step)
            esc[np.flatnonzero(inside)[esc_in]] = True
        kept = ~esc
        dropped += int(np.sum(esc))
        if not np.any(kept):
            raise LeafEscapes("every sample on the %s side escaped the box" % side)
        for yv, gv in zip(ys[kept], Yf[kept]):
            rows.append((float(yv), float(gv)))

        # one-sided limit: the image of (x, 0+-) is the branch point (x*, y*)
        xs = spec.x_star_plus if side == "+" else spec.x_star_minus
        ystar = spec.y_star_plus if side == "+" else spec.y_star_minus
        ylim, esc0 = _slide_to_transversal(
            field, np.atleast_2d(np.asarray(xs, dtype=float)),
            np.array([float(ystar)]), tx, x_step=x_step)
        if esc0[0]:
            raise LeafEscapes("the %s branch-point leaf escaped the box" % side)
        limits[side] = float(ylim[0])

        yk, gk = ys[kept], Yf[kept]
        win = (np.abs(yk) >= ALPHA_WINDOW[0]) & (np.abs(yk) <= ALPHA_WINDOW[1])
        gap = np.abs(gk[win] - limits[side])
        good = gap > 0.0
        if int(np.sum(good)) >= 2:
            alpha_sides.append(float(np.polyfit(
                np.log(np.abs(yk[win][good])), np.log(gap[good]), 1)[0]))
        order = np.argsort(yk)
        diffs = np.diff(gk[order])
        monotone[side] = bool(np.all(diffs > 0.0) or np.all(diffs < 0.0))

    rows.sort(key=lambda r: r[0])
    samples = np.asarray(rows)
    alpha_fit = float(np.mean(alpha_sides)) if alpha_sides else math.nan
    return ReducedMap(transversal_x=tx, samples=samples, alpha_fit=alpha_fit,
                      gbar_limits=limits, monotone=monotone, dropped=dropped)


# ----------------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------------

def leaf_save(leaf, path):
    n = leaf.samples.shape[1] - 1
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x%d" % (a + 1) for a in range(n)] + ["y"])
        for row in leaf.samples:
            w.writerow([repr(float(v)) for v in row])


def reduced_save(rm, csv_path, json_path):
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y", "gbar"])
        for yv, gv in rm.samples:
            w.writerow([repr(float(yv)), repr(float(gv))])
    record = {
        "transversal_x": repr(float(rm.transversal_x)),
        "alpha_fit": repr(float(rm.alpha_fit)),
        "gbar_limit_plus": repr(float(rm.gbar_limits["+"])),
        "gbar_limit_minus": repr(float(rm.gbar_limits["-"])),
        "monotone_plus": rm.monotone["+"],
        "monotone_minus": rm.monotone["-"],
        "dropped": rm.dropped,
    }
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def reduced_load(csv_path, json_path):
    rows = []
    with open(csv_path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            rows.append([float(s) for s in row])
    with open(json_path, "r", encoding="utf-8") as fh:
        rec = json.load(fh)
    return ReducedMap(
        transversal_x=float(rec["transversal_x"]),
        samples=np.asarray(rows),
        alpha_fit=float(rec["alpha_fit"]),
        gbar_limits={"+": float(rec["gbar_limit_plus"]),
                     "-": float(rec["gbar_limit_minus"])},
        monotone={"+": bool(rec["monotone_plus"]), "-": bool(rec["monotone_minus"])},
        dropped=int(rec["dropped"]),
    )
