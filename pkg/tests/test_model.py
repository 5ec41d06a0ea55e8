import numpy as np
import pytest

from lpmfg.grid import build_grid
from lpmfg.model import (InitialLaw, InventoryParams, LinearParams, ModelError, inventory_model, linear_model,
                         validate_model)

from conftest import make_model


def _grid(model, N=10, M=20, K=3, ar=(0.0, 0.7)):
    return build_grid(model.domain, model.horizon, N, M, K, ar)


def test_inventory_model_is_admissible():
    model = inventory_model(InventoryParams(spoilage=0.3), 1.0, InitialLaw())
    rep = validate_model(model, _grid(model))
    assert rep.ok, rep.summary()
    assert rep.bounds.intensity == pytest.approx(0.5)
    assert rep.bounds.diffusion == pytest.approx(0.05**2)


def test_jump_beyond_domain_flags_upper_half():
    model = make_model(jump=0.5, intensity=1.0)
    grid = _grid(model)
    rep = validate_model(model, grid)
    xs = sorted({v.x for v in rep.violations if v.kind == "jump_containment"})
    expected = grid.x_nodes[grid.x_nodes > 0.5 + 1e-12]
    np.testing.assert_allclose(xs, expected)


def test_negative_intensity_flagged_at_every_time():
    model = make_model(intensity=-1.0)
    grid = _grid(model)
    rep = validate_model(model, grid)
    ts = sorted({v.t for v in rep.violations if v.kind == "intensity"})
    np.testing.assert_allclose(ts, grid.t_nodes)


def test_non_finite_coefficient_names_sample():
    model = make_model(drift=lambda t, x, z, a: np.where(np.asarray(x) > 0.5, np.nan, 0.0) + 0 * np.asarray(a))
    with pytest.raises(ModelError, match="drift.*x="):
        validate_model(model, _grid(model))


def test_inventory_coefficients():
    p = InventoryParams(spoilage=0.3, competition=0.0)
    model = inventory_model(p, 1.0, InitialLaw("point_mass", x0=0.5))
    x = np.linspace(0, 1, 5)
    # no coupling: the drift ignores the statistic
    np.testing.assert_array_equal(model.drift(0.0, x, np.array([0.2]), 0.3), model.drift(0.0, x, np.array([0.9]), 0.3))
    # producing exactly the base demand leaves zero drift
    np.testing.assert_allclose(model.drift(0.0, x, np.array([0.5]), p.base_demand), 0.0)
    assert float(model.jump(0.0, 1.0, np.array([0.0]), 0.0)) == pytest.approx(-0.3)


@pytest.mark.parametrize("kind,kw,expected", [
    ("uniform", {}, np.full(5, 0.2)),
    ("point_mass", {"x0": 0.5}, np.array([0, 0, 1.0, 0, 0])),
    ("point_mass", {"x0": 0.375}, np.array([0, 0.5, 0.5, 0, 0])),
    ("histogram", {"weights": (1.0, 0, 0, 0, 3.0)}, np.array([0.25, 0, 0, 0, 0.75])),
])
def test_initial_law_on_grid(kind, kw, expected):
    np.testing.assert_allclose(InitialLaw(kind, **kw).on_grid(np.linspace(0, 1, 5)), expected)


def test_initial_law_rejects_bad_input():
    with pytest.raises(ModelError):
        InitialLaw("point_mass")
    with pytest.raises(ModelError):
        InitialLaw("histogram", weights=(-1.0, 2.0))
    with pytest.raises(ModelError):
        InitialLaw("point_mass", x0=2.0).on_grid(np.linspace(0, 1, 5))


def test_parameter_validation():
    with pytest.raises(ModelError):
        InventoryParams(spoilage=1.0)
    with pytest.raises(ModelError):
        InventoryParams(capacity=-1.0)
    with pytest.raises(ModelError):
        LinearParams(sigma=-0.1)
    assert linear_model(LinearParams(), 2.0, InitialLaw()).horizon == 2.0
