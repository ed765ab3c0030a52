import numpy as np
import pandas as pd
import pytest

from labelmeasure.errors import DegenerateDataError, SpecError
from labelmeasure.glmm import INTERCEPT, ModelSpec, build_design


def frame():
    return pd.DataFrame({
        "z": [0, 1, 1, 0, 1, 0],
        "x": [1.0, 2.0, 3.0, 4.0, 5.0, np.nan],
        "g": ["b", "a", "b", "c", "a", "c"],
        "h": ["u", "u", "v", "v", "u", "v"],
    })


def test_design_shapes_and_level_order():
    dm = build_design(frame(), ModelSpec("z", ("x",), ("g", "g:h")))
    assert dm.n_dropped == 1
    assert dm.X.shape == (5, 2)
    assert dm.fixed_names == (INTERCEPT, "x")
    assert dm.factors[0].levels == ("b", "a", "c")
    assert dm.factors[1].levels == ("b:u", "a:u", "b:v", "c:v")
    assert dm.Z.shape == (5, 7)
    np.testing.assert_array_equal(np.asarray(dm.Z.sum(axis=1)).ravel(), 2)


def test_standardization_uses_sample_sd():
    dm = build_design(frame(), ModelSpec("z", ("x",), ("g",), standardize=("x",)))
    x = dm.X[:, 1]
    assert x.mean() == pytest.approx(0, abs=1e-12)
    assert x.std(ddof=1) == pytest.approx(1)
    assert dm.standardization["x"] == pytest.approx((3.0, np.std([1, 2, 3, 4, 5], ddof=1)))


def test_missing_column_is_spec_error():
    with pytest.raises(SpecError):
        build_design(frame(), ModelSpec("z", ("nope",), ()))


def test_single_level_factor_is_spec_error():
    df = frame().assign(k="only")
    with pytest.raises(SpecError):
        build_design(df, ModelSpec("z", (), ("k",)))


def test_non_binary_and_constant_outcomes():
    with pytest.raises(DegenerateDataError):
        build_design(frame().assign(z=[0, 1, 2, 0, 1, 0]), ModelSpec("z", (), ("g",)))
    with pytest.raises(DegenerateDataError):
        build_design(frame().assign(z=1), ModelSpec("z", (), ("g",)))


def test_model_spec_validation_and_roundtrip():
    with pytest.raises(SpecError):
        ModelSpec("z", ("z",), ())
    with pytest.raises(SpecError):
        ModelSpec("z", ("x",), (), standardize=("y",))
    spec = ModelSpec("z", ("x",), ("g",), standardize=("x",), name="m", labels={"x": "X"})
    assert ModelSpec.from_dict(spec.to_dict()) == spec
