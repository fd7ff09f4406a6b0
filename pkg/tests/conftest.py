"""Shared fixtures: the example maps, grids, and converged fields.

The expensive objects (converged fields and jet tuples on the reference
grid) are session-scoped so the acceptance tests and the per-module tests
share one computation.
"""
from __future__ import annotations

import json
from pathlib import Path

import pytest

from folcomp import (
    Grid,
    compute_L,
    estimate_norms,
    fiber_iterate,
    iterate_to_fixed_point,
    spec_from_dict,
    zero_field,
    zero_jets,
)
from folcomp.graph_transform import GammaEngine
from folcomp.jet_transform import JetEngine

EXAMPLES = Path(__file__).resolve().parents[1] / "examples"


def load_example(name):
    with open(EXAMPLES / name, "r", encoding="utf-8") as fh:
        return json.load(fh)


@pytest.fixture(scope="session")
def pure_spec():
    return spec_from_dict(load_example("pure_model.json"))


@pytest.fixture(scope="session")
def pert_spec():
    return spec_from_dict(load_example("perturbed_model.json"))


@pytest.fixture(scope="session")
def failing_doc():
    return load_example("failing_model.json")


@pytest.fixture(scope="session")
def grid_small():
    return Grid.build(n=1, M=60, p=2.0, x_resolution=21)


@pytest.fixture(scope="session")
def grid_ref():
    """The reference grid of the acceptance criteria (M = 200, p = 2)."""
    return Grid.build(n=1, M=200, p=2.0, x_resolution=41)


@pytest.fixture(scope="session")
def pert_L_small(pert_spec, grid_small):
    return compute_L(estimate_norms(pert_spec, grid_small, refine_check=False))


@pytest.fixture(scope="session")
def pert_L_ref(pert_spec, grid_ref):
    return compute_L(estimate_norms(pert_spec, grid_ref, refine_check=False))


@pytest.fixture(scope="session")
def pert_engine_ref(pert_spec, grid_ref, pert_L_ref):
    return GammaEngine(pert_spec, grid_ref, pert_L_ref)


@pytest.fixture(scope="session")
def pert_field_small(pert_spec, grid_small, pert_L_small):
    field, _ = iterate_to_fixed_point(
        pert_spec, zero_field(grid_small, pert_L_small), tol=1e-10)
    return field


@pytest.fixture(scope="session")
def pert_solution_ref(pert_spec, grid_ref, pert_L_ref, pert_engine_ref):
    """(field, history) of the reference-grid fixed point, tol 1e-10."""
    return iterate_to_fixed_point(
        pert_spec, zero_field(grid_ref, pert_L_ref), tol=1e-10,
        engine=pert_engine_ref)


@pytest.fixture(scope="session")
def pert_field_ref(pert_solution_ref):
    return pert_solution_ref[0]


@pytest.fixture(scope="session")
def pert_jets_ref(pert_spec, grid_ref, pert_L_ref):
    """(JetField, report) of the converged order-2 jet tuple, tol 1e-10."""
    return fiber_iterate(pert_spec, zero_jets(grid_ref, pert_L_ref, 2), tol=1e-10)


@pytest.fixture(scope="session")
def pert_jet_engine_ref(pert_spec, grid_ref, pert_L_ref):
    return JetEngine(pert_spec, grid_ref, pert_L_ref, order=2)
