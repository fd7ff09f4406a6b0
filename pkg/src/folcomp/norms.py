"""Supremum-norm estimation, admissibility checks, and Perron machinery.

The contraction theory for the graph transform runs on five numbers, the
grid suprema over the two open halves of the phase box

    |A|, |B|, |C|, |dG/dy|, |dF/dx|,

with the conventions: A is measured in the induced max-row-sum norm, the
column B by its largest entry, the row C by the sum of entries (the dual
pairing of rows against columns then satisfies |v . B| <= |v| |B| for the
row norm used on slope fields). From these the module derives

  * the spectral-gap margin  (1 - |A|) - 2 sqrt(|B| |C|)  (assumption L2),
  * the admissible slope bound L, the smaller nonnegative root of
        |B| L^2 - (1 - |A|) L + |C| = 0,
  * the argument-growth factor  Lambda(i) = max_{m+n=i} (|A|+|B|)^m (|C|+1)^n,
  * the jet-contraction factor
        Theta(i) = 4 (i!)^2 |dG/dy|^i (|A| + |C||B|) Lambda(i)
                   / (1 + |A| + sqrt((1-|A|)^2 - 4 |B||C|))^2,
  * the Perron matrix Delta = (block-interaction factors)^(x i) with entries
    c(E,E) = |A|, c(E,F) = |B|, c(F,E) = |C|, c(F,F) = 1, its eigenvalue
    lambda and the positive weight vector defining the adapted block norms.

Grid suprema are maxima over evaluated nodes and hence lower bounds of the
true suprema; the assumption checker therefore re-runs every verdict at a
doubled resolution and reports INCONCLUSIVE on disagreement.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import L2Violated, NormDiverging, NotPositive
from .map_model import eval_ABC_batch

PERRON_TOL = 1e-12
PERRON_RESIDUAL = 1e-10
NORM_FLOOR = 1e-9


@dataclass(frozen=True, eq=False)
class NormBundle:
    """Grid suprema of the coefficient functions over the two half-boxes."""

    normA: float
    normB: float
    normC: float
    normDyG: float
    normDxF: float
    grid_meta: dict = field(default_factory=dict)


@dataclass(frozen=True, eq=False)
class PerronData:
    """Positive interaction matrix Delta of order i with its Perron pair.

    weights are the positive eigenvector entries k_f, indexed by
    f in {E, F}^i in lexicographic order (E first), normalized to sum 1.
    """

    i: int
    delta: np.ndarray
    lam: float
    weights: np.ndarray


def bundle(normA, normB, normC, normDyG=1.0, normDxF=0.0, grid_meta=None):
    """Convenience constructor for hand-made bundles (tests, examples)."""
    return NormBundle(normA=float(normA), normB=float(normB), normC=float(normC),
                      normDyG=float(normDyG), normDxF=float(normDxF),
                      grid_meta=dict(grid_meta or {}))


# ----------------------------------------------------------------------------
# grid estimation
# ----------------------------------------------------------------------------

def _node_arrays(grid):
    """All grid nodes off the singular plane, flattened to (m, n), (m,)."""
    axes = list(grid.x_nodes) + [grid.y_nodes[grid.y_nodes != 0.0]]
    mesh = np.meshgrid(*axes, indexing="ij")
    X = np.stack([m.ravel() for m in mesh[:-1]], axis=1)
    return X, mesh[-1].ravel()


def _suprema(spec, grid):
    X, Y = _node_arrays(grid)
    A, B, C, dyG, dxF = eval_ABC_batch(spec, X, Y)
    na = float(np.max(np.sum(np.abs(A), axis=2)))      # induced max-row-sum
    nb = float(np.max(np.abs(B)))
    nc = float(np.max(np.sum(np.abs(C), axis=1)))
    ng = float(np.max(np.abs(dyG)))
    nf = float(np.max(np.sum(np.abs(dxF), axis=2)))
    return na, nb, nc, ng, nf


def estimate_norms(spec, grid, refine_check=True):
    """Componentwise grid suprema of |A|, |B|, |C|, |dG/dy|, |dF/dx|.

    With refine_check on, re-estimates |dG/dy| on meshes refined 2x, 4x, 8x
    in y and raises NormDiverging when the estimate grows by more than 10x
    across the sweep (the alpha < 1 blow-up signature). Values are maxima
    over evaluated nodes, hence lower bounds of the true suprema.
    """
    na, nb, nc, ng, nf = _suprema(spec, grid)
    meta = {"M": grid.M, "p": grid.p,
            "x_resolution": [len(ax) for ax in grid.x_nodes],
            "caveat": "grid maxima are lower bounds of the true suprema"}
    if refine_check:
        base = ng
        last = ng
        for factor in (2, 4, 8):
            refined = grid.refine(factor)
            _, _, _, last, _ = _suprema(spec, refined)
            if last > 10.0 * base:
                raise NormDiverging(
                    "|dG/dy| estimate grew from %.3g to %.3g under %dx refinement "
                    "(unbounded normal derivative, e.g. alpha < 1)" % (base, last, factor))
        meta["refined_normDyG"] = last
    return NormBundle(normA=na, normB=nb, normC=nc, normDyG=ng, normDxF=nf,
                      grid_meta=meta)


# ----------------------------------------------------------------------------
# assumption (L2), the slope bound L, and the factors Lambda / Theta
# ----------------------------------------------------------------------------

def check_L2(b):
    """(verdict, margin) for  1 - |A| > 2 sqrt(|B| |C|)  (strict)."""
    margin = (1.0 - b.normA) - 2.0 * math.sqrt(b.normB * b.normC)
    return margin > 0.0, margin


def compute_L(b):
    """The admissible slope bound: smaller nonnegative root of
    |B| L^2 - (1 - |A|) L + |C| = 0, with the |B| -> 0 limit |C|/(1 - |A|)."""
    disc = (1.0 - b.normA) ** 2 - 4.0 * b.normB * b.normC
    if disc < 0.0:
        raise L2Violated("negative discriminant %.3g: the slope quadratic has no real root" % disc)
    if b.normB == 0.0:
        return b.normC / (1.0 - b.normA)
    return ((1.0 - b.normA) - math.sqrt(disc)) / (2.0 * b.normB)


def compute_Lambda(b, i):
    """Lambda(i) = max over m + n = i of (|A| + |B|)^m (|C| + 1)^n."""
    if i < 1:
        raise ValueError("i must be >= 1")
    ab = b.normA + b.normB
    c1 = b.normC + 1.0
    return max(ab ** m * c1 ** (i - m) for m in range(i + 1))


def _factorial_factor(i, factorial_reading):
    if factorial_reading == "(2k)!":
        return float(math.factorial(2 * i)) ** 2
    # default parse: (2 * k!)^2 = 4 (k!)^2
    return 4.0 * float(math.factorial(i)) ** 2


def compute_Theta(b, i, factorial_reading="2*k!"):
    """The order-i fiber contraction factor Theta(i).

    Theta(i) = fac(i) |dG/dy|^i (|A| + |C||B|) Lambda(i) / (1 + |A| + sqrt(disc))^2
    with disc = (1 - |A|)^2 - 4 |B||C| and fac(i) = 4 (i!)^2 under the
    default reading (the alternative reading ((2i)!)^2 is selectable for
    sensitivity reporting). The denominator equals (2 (1 - L |B|))^2 for the
    L of compute_L, which is where the formula's contraction content lives.
    """
    disc = (1.0 - b.normA) ** 2 - 4.0 * b.normB * b.normC
    if disc < 0.0:
        raise L2Violated("negative discriminant %.3g: Theta undefined" % disc)
    fac = _factorial_factor(i, factorial_reading)
    num = fac * b.normDyG ** i * (b.normA + b.normC * b.normB) * compute_Lambda(b, i)
    den = (1.0 + b.normA + math.sqrt(disc)) ** 2
    return num / den


def check_L3(b, k, factorial_reading="2*k!"):
    """Report {a, b, extra}: a <=> Theta(1) < 1; b <=> k < 2 or
    (Theta(k) < 1 and the quarter side condition); extra is the side
    condition |dG/dy| >= 1/4 or |dF/dx| >= 1/4 on its own."""
    extra = b.normDyG >= 0.25 or b.normDxF >= 0.25
    a = compute_Theta(b, 1, factorial_reading) < 1.0
    if k < 2:
        bb = True
    else:
        bb = compute_Theta(b, k, factorial_reading) < 1.0 and extra
    return {"a": bool(a), "b": bool(bb), "extra": bool(extra)}


# ----------------------------------------------------------------------------
# Perron matrix, eigenvalue, and adapted-norm weights
# ----------------------------------------------------------------------------

def build_perron(b, i):
    """Delta, lambda, and the positive weight vector at order i.

    Delta[g][f] = prod_j c(g_j, f_j) over the i positions, with the 2x2
    interaction table c = [[|A|, |B|], [|C|, 1]] (E row/column first), i.e.
    Delta is the i-fold Kronecker power of c in lexicographic {E,F}^i
    order. Raises NotPositive when any of the three norms vanishes - the
    caller substitutes the floor max(norm, 1e-9) and flags it.
    """
    if b.normA <= 0.0 or b.normB <= 0.0 or b.normC <= 0.0:
        raise NotPositive("Perron matrix needs |A|, |B|, |C| > 0 "
                          "(got %.3g, %.3g, %.3g); substitute a floor and flag it"
                          % (b.normA, b.normB, b.normC))
    c = np.array([[b.normA, b.normB], [b.normC, 1.0]])
    delta = np.array([[1.0]])
    for _ in range(i):
        delta = np.kron(delta, c)
    v = np.full(2 ** i, 1.0 / 2 ** i)
    lam = 0.0
    for _ in range(100000):
        w = delta @ v
        new_lam = float(np.sum(w))
        v_new = w / new_lam
        if abs(new_lam - lam) <= PERRON_TOL * new_lam:
            resid = float(np.sum(np.abs(delta @ v_new - new_lam * v_new)))
            if resid <= PERRON_RESIDUAL * new_lam:
                return PerronData(i=i, delta=delta, lam=new_lam, weights=v_new)
        v, lam = v_new, new_lam
    raise NotPositive("power iteration failed to converge (should not happen "
                      "for a positive matrix)")


def floored_bundle(b, floor=NORM_FLOOR):
    """Substitute max(norm, floor) into the three Perron entries.

    Returns (bundle, floored) where floored says whether anything changed;
    reports quoting Perron data from a floored bundle must carry the flag.
    """
    fa, fb, fc = (max(b.normA, floor), max(b.normB, floor), max(b.normC, floor))
    changed = (fa, fb, fc) != (b.normA, b.normB, b.normC)
    if not changed:
        return b, False
    return NormBundle(normA=fa, normB=fb, normC=fc, normDyG=b.normDyG,
                      normDxF=b.normDxF, grid_meta=dict(b.grid_meta)), True


def row_sum(b, pattern):
    """Closed-form row sum of Delta for row g = pattern:
    (|A| + |B|)^m (|C| + 1)^n with m = #E and n = #F entries of g."""
    m = sum(1 for s in pattern if s == "E")
    return (b.normA + b.normB) ** m * (b.normC + 1.0) ** (len(pattern) - m)


# ----------------------------------------------------------------------------
# the full assumption check (CLI `check` backend)
# ----------------------------------------------------------------------------

def run_assumption_check(spec, grid, factorial_reading="2*k!"):
    """Estimate, verify (L2)/(L3) at two resolutions, and report.

    The report is JSON-ready. Verdict is PASS or FAIL when the coarse and
    2x-refined verdicts agree, INCONCLUSIVE otherwise (grid suprema are
    only lower bounds, so a disagreement means the resolution is too low to
    call). The slope-bound equation is solved as the smaller positive root;
    the sign flip relative to the printed form is flagged, not hidden.
    """
    out = {"factorial_reading": factorial_reading, "eq_L_sign_flipped": True}
    reports = []
    for tag, g in (("base", grid), ("refined", grid.refine(2))):
        b = estimate_norms(spec, g, refine_check=(tag == "base"))
        ok2, margin = check_L2(b)
        rep = {"grid": tag, "normA": b.normA, "normB": b.normB, "normC": b.normC,
               "normDyG": b.normDyG, "normDxF": b.normDxF,
               "L2": {"passes": ok2, "margin": margin}}
        if ok2:
            rep["L"] = compute_L(b)
            rep["Theta"] = {str(i): compute_Theta(b, i, factorial_reading)
                            for i in range(1, spec.k + 1)}
            alt = "(2k)!" if factorial_reading != "(2k)!" else "2*k!"
            rep["Theta_alt_reading"] = {str(i): compute_Theta(b, i, alt)
                                        for i in range(1, spec.k + 1)}
            rep["L3"] = check_L3(b, spec.k, factorial_reading)
            fb, floored = floored_bundle(b)
            rep["perron"] = {}
            for i in range(1, spec.k + 1):
                pd = build_perron(fb, i)
                rep["perron"][str(i)] = {"lambda": pd.lam, "floored": floored}
        reports.append(rep)
    base, refined = reports
    out["reports"] = reports
    if not base["L2"]["passes"]:
        agreed = base["L2"]["passes"] == refined["L2"]["passes"]
        out["verdict"] = "FAIL" if agreed else "INCONCLUSIVE"
        out["failure"] = "L2"
        return out
    agreed = (base["L2"]["passes"] == refined["L2"]["passes"]
              and refined.get("L3") is not None
              and base["L3"]["a"] == refined["L3"]["a"]
              and base["L3"]["b"] == refined["L3"]["b"])
    passed = base["L3"]["a"] and base["L3"]["b"]
    if not agreed:
        out["verdict"] = "INCONCLUSIVE"
    else:
        out["verdict"] = "PASS" if passed else "FAIL"
    if not passed:
        failing = [name for name, ok in (("L3(a)", base["L3"]["a"]), ("L3(b)", base["L3"]["b"]))
                   if not ok]
        out["failure"] = ", ".join(failing) if failing else None
    return out


if __name__ == "__main__":
    b = bundle(0.1, 0.1, 0.1)
    print("L2:", check_L2(b))
    print("L:", compute_L(b))
    print("Lambda(1), Lambda(3):", compute_Lambda(b, 1), compute_Lambda(b, 3))
    pd = build_perron(b, 1)
    print("lambda:", pd.lam, "weights:", pd.weights)
    b2 = bundle(0.01, 0.125, 0.01, normDyG=3.0)
    print("Theta(1):", compute_Theta(b2, 1), "Theta(2):", compute_Theta(b2, 2))
