import json

import pytest

from spatialqkd.events.estimate import InconsistentInputsError, estimate_parameters


def test_rates_from_singles_and_coincidences():
    r = estimate_parameters(3e5, 3300, 0.02, 20)
    assert r.P == pytest.approx(8.25e6)
    assert r.B == pytest.approx(6.75e6)
    assert r.Ctime_pred == pytest.approx(5100)
    doc = json.loads(r.to_json())
    assert set(doc) >= {"P", "B", "eta", "tau", "Ctime_pred"}


def test_background_free_source():
    eta, P = 0.07, 1.234567e6
    r = estimate_parameters(eta * P, eta**2 * P, eta, 5)
    assert r.B == 0.0
    assert r.P == pytest.approx(P)


def test_zero_coincidences():
    r = estimate_parameters(1000.0, 0.0, 0.1, 20)
    assert r.P == 0.0 and r.B == pytest.approx(1e4)


def test_temporal_rate_is_implied():
    # Ctime - Cst = tau S^2 whatever eta is: eta cannot be fitted from the three rates
    a = estimate_parameters(3e5, 3300, 0.02, 20)
    b = estimate_parameters(3e5, 3300, 0.03, 20)
    assert a.Ctime_pred == b.Ctime_pred


def test_inconsistent_and_invalid_inputs():
    with pytest.raises(InconsistentInputsError):
        estimate_parameters(100.0, 3300, 0.02, 20)
    with pytest.raises(ValueError):
        estimate_parameters(3e5, 3300, 0.0, 20)
    with pytest.raises(ValueError):
        estimate_parameters(-1, 3300, 0.02, 20)
