"""Shared exception hierarchy for the foliation solver.

Every error raised by the library derives from FolcompError, so callers can
catch one base class. Names mirror the failure they signal: numerical
preconditions (EvalAtSingular, DegenerateDy, NearSingularDenominator,
DenominatorBreach), violated model assumptions (SpecInvalid, L2Violated,
NotPositive, NormDiverging), iteration failures (NoConvergence), and
geometric events during leaf work (LeafEscapes).
"""
from __future__ import annotations


class FolcompError(Exception):
    """Base class for all library errors."""


class SpecInvalid(FolcompError):
    """A map specification violates one of its declared invariants."""


class EvalAtSingular(FolcompError):
    """The map or its derivatives were evaluated on the singular plane y = 0."""


class DegenerateDy(FolcompError):
    """|dG/dy| fell below the machine threshold; the map is not fibered here."""


class NormDiverging(FolcompError):
    """Grid refinement grows a supremum estimate without bound (e.g. alpha < 1)."""


class L2Violated(FolcompError):
    """The spectral-gap inequality 1 - |A| > 2 sqrt(|B||C|) fails (negative
    discriminant); L and Theta are undefined."""


class NotPositive(FolcompError):
    """The Perron matrix has a zero entry; the positive-matrix theory needs a
    floor substitution (the caller decides)."""


class OrderMismatch(FolcompError):
    """A multilinear operator received jets of the wrong orders or lengths."""


class NearSingularDenominator(FolcompError):
    """The reciprocal-derivative operator was called with |denom| below 1e-9."""


class DenominatorBreach(FolcompError):
    """|1 - (nu o T) B| dropped below 1e-9 at a grid node during a transform
    application; the admissibility bound L is inconsistent with the data."""


class NoConvergence(FolcompError):
    """An iteration hit max_iter before reaching tolerance.

    Carries the distance history so the caller can report the observed ratio.
    """

    def __init__(self, message, history=None):
        super().__init__(message)
        # a list of distances for the plain iteration, a per-level dict of
        # them for the extended one
        self.history = history if history is not None else []


class OrderUnsupported(FolcompError):
    """A jet level above the model's smoothness order k was requested."""


class LeafEscapes(FolcompError):
    """A leaf slide exited the domain before reaching the transversal."""


class LeftDomain(FolcompError):
    """A traced leaf exited the box; the trace is truncated at the wall."""


class ImageOutsideD(FolcompError):
    """A mapped sample landed outside the box during an invariance audit."""


class ConfigError(FolcompError):
    """A run configuration document is malformed or out of range."""
