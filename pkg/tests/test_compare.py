import numpy as np
import pytest
from hypothesis import given, strategies as st

from romaeh.compare import curve_l2, curve_metrics, first_peak, project, residual_ratio


def softening(x, peak_x=1.0):
    return np.where(x <= peak_x, x, peak_x * np.exp(-(x - peak_x)))


def test_first_peak_ignores_late_restiffening():
    x = np.linspace(0.0, 10.0, 1001)
    y = softening(x) + np.where(x > 4.0, 0.5 * (x - 4.0), 0.0)
    assert y.argmax() == len(y) - 1
    assert x[first_peak(y)] == pytest.approx(1.0)


def test_first_peak_of_monotonic_curve_is_last_point():
    assert first_peak(np.arange(5.0)) == 4


def test_residual_ratio():
    x = np.linspace(0.0, 5.0, 5001)
    assert residual_ratio(x, softening(x)) == pytest.approx(np.exp(-2.0), rel=1e-6)
    assert np.isnan(residual_ratio(x[:2001], softening(x[:2001], peak_x=1.5)))


@given(st.floats(0.5, 2.0))
def test_l2_of_scaled_curve(a):
    x = np.linspace(0.0, 3.0, 301)
    y = softening(x)
    assert curve_l2(x, y, x, a * y) == pytest.approx(abs(a - 1.0), rel=1e-9, abs=1e-12)


def test_metrics_and_projection():
    x = np.linspace(0.0, 5.0, 501)
    m = curve_metrics(x, softening(x), x, 1.1 * softening(x))
    assert m.peak_error == pytest.approx(0.1)
    assert m.residual == pytest.approx(m.residual_ref)
    s, t = project([[1.0, 1.0, 0.0]], [[2.0, 4.0, 0.0]], (1.0, 1.0, 0.0))
    assert s[0] == pytest.approx(np.sqrt(2.0)) and t[0] == pytest.approx(3.0 * np.sqrt(2.0))
