import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epinet.errors import ValidationError
from epinet.landscape import (
    Approach,
    Landscape,
    PerceptionParams,
    Peak,
    discount_factor,
    discount_factors,
    generate_landscape,
    novelty_of,
    perceived_significance,
    true_significance,
)

unit = st.floats(0.0, 1.0, allow_nan=False)


def points(dim, min_size=0, max_size=8):
    return st.lists(st.tuples(*[unit] * dim), min_size=min_size, max_size=max_size)


def f_oracle(land: Landscape, x):
    total = land.noise_floor
    for p in land.peaks:
        d2 = sum((a - b) ** 2 for a, b in zip(x, p.center.coords))
        total += p.height * math.exp(-d2 / (2 * p.width**2))
    return total


def perceived_oracle(land, x, history, alpha, h):
    v = f_oracle(land, x)
    for o in history:
        d2 = sum((a - b) ** 2 for a, b in zip(x, o))
        v *= 1 - alpha * math.exp(-d2 / (2 * h * h))
    return v


def test_approach_bounds():
    with pytest.raises(ValidationError):
        Approach((0.5, 1.2))
    with pytest.raises(ValidationError):
        Approach(())
    assert Approach.clamped([-0.3, 1.7]).coords == (0.0, 1.0)


def test_generate_is_seeded():
    a = generate_landscape(2, 12, 5)
    assert a == generate_landscape(2, 12, 5)
    assert a != generate_landscape(2, 12, 6)
    assert len(a.peaks) == 12
    for p in a.peaks:
        assert 0.2 <= p.height <= 1.0 and 0.05 <= p.width <= 0.3


def test_single_peak_value_at_center():
    land = Landscape(2, (Peak(Approach((0.5, 0.5)), 0.8, 0.1),))
    assert true_significance(land, Approach((0.5, 0.5))) == pytest.approx(0.8)


def test_dimension_mismatch():
    land = generate_landscape(2, 3, 0)
    with pytest.raises(ValidationError):
        true_significance(land, Approach((0.1, 0.2, 0.3)))


def test_json_roundtrip():
    land = generate_landscape(3, 5, 1)
    assert Landscape.from_json(land.to_json()) == land


def test_scaled():
    land = generate_landscape(2, 4, 2)
    x = Approach((0.3, 0.6))
    assert true_significance(land.scaled(2.0), x) == pytest.approx(2 * true_significance(land, x))


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 10_000), x=st.tuples(unit, unit), hist=points(2))
def test_perceived_matches_oracle(seed, x, hist):
    land = generate_landscape(2, 6, seed)
    params = PerceptionParams(0.5, 0.1)
    got = perceived_significance(land, Approach(x), [Approach(h) for h in hist], params)
    assert abs(got - perceived_oracle(land, x, hist, 0.5, 0.1)) <= 1e-12


@settings(max_examples=100, deadline=None)
@given(x=st.tuples(unit, unit), hist=points(2), alpha=st.floats(0, 1), h=st.floats(0.01, 1))
def test_discount_bounds(x, hist, alpha, h):
    params = PerceptionParams(alpha, h)
    d = discount_factor(Approach(x), [Approach(p) for p in hist], params)
    assert (1 - alpha) ** len(hist) - 1e-12 <= d <= 1.0


@settings(max_examples=50, deadline=None)
@given(pts=points(3, 1, 6), hist=points(3, 0, 6))
def test_vectorised_discount_agrees(pts, hist):
    params = PerceptionParams()
    harr = np.array(hist, dtype=float).reshape(-1, 3)
    vec = discount_factors(np.array(pts), harr, params)
    for p, v in zip(pts, vec):
        assert abs(v - discount_factor(Approach(p), harr, params)) <= 1e-12


def test_novelty_limits():
    params = PerceptionParams()
    x = Approach((0.4, 0.4))
    assert novelty_of(x, [], params) == 1.0
    assert novelty_of(x, [x], params) == 0.0
    assert 0 < novelty_of(x, [Approach((0.5, 0.4))], params) < 1


def test_perceived_never_exceeds_truth():
    land = generate_landscape(2, 12, 3)
    rng = np.random.default_rng(0)
    hist = [Approach(tuple(r)) for r in rng.uniform(size=(10, 2))]
    for x in rng.uniform(size=(50, 2)):
        a = Approach(tuple(x))
        assert perceived_significance(land, a, hist, PerceptionParams()) <= true_significance(land, a)


def test_perception_param_validation():
    with pytest.raises(ValidationError):
        PerceptionParams(decay_alpha=1.5)
    with pytest.raises(ValidationError):
        PerceptionParams(kernel_bandwidth=0.0)
