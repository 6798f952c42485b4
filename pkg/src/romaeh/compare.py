"""Curve metrics for ROM versus DNS comparisons."""
from dataclasses import dataclass

import numpy as np


def curve_l2(x_ref, y_ref, x, y):
    """Relative L2 distance of ``y(x)`` to ``y_ref(x_ref)`` on the reference abscissae.

    The compared curve is linearly interpolated; reference points beyond
    its range are dropped.
    """
    x_ref, y_ref = np.asarray(x_ref, float), np.asarray(y_ref, float)
    sel = (x_ref >= np.min(x)) & (x_ref <= np.max(x))
    yi = np.interp(x_ref[sel], x, y)
    return float(np.linalg.norm(yi - y_ref[sel]) / np.linalg.norm(y_ref[sel]))


def project(program, stress, direction):
    """Scalar strain and stress along a unit load direction."""
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    return np.asarray(program, float) @ d, np.asarray(stress, float) @ d


def first_peak(y, drop=0.01):
    """Index of the limit point: the largest value before the curve first
    falls ``drop`` (relative) below its running maximum.

    A coarse reduced-order curve can stiffen again after failure, so the
    global maximum may sit at the end of the program. Without any such drop
    the global maximum is returned.
    """
    y = np.asarray(y, dtype=float)
    run = np.maximum.accumulate(y)
    below = np.flatnonzero(y < (1.0 - drop) * run)
    end = below[0] if len(below) else len(y)
    return int(np.argmax(y[:end]))


def residual_ratio(x, y, factor=3.0):
    """Stress at ``factor`` times the limit-point abscissa over the limit-point stress.

    Returns ``nan`` when the curve does not reach that abscissa.
    """
    x, y = np.asarray(x, float), np.asarray(y, float)
    k = first_peak(y)
    target = factor * x[k]
    if target > x.max() + 1e-12 * abs(x.max()):
        return float("nan")
    return float(np.interp(target, x, y) / y[k])


@dataclass(frozen=True)
class CurveMetrics:
    """ROM curve quality against a DNS reference.

    Attributes
    ----------
    l2 : float
        Relative L2 curve distance.
    peak_error : float
        Signed relative error of the limit-point stress.
    residual : float
        ROM stress at three times its peak strain over its peak.
    residual_ref : float
        The same ratio for the reference.
    """

    l2: float
    peak_error: float
    residual: float
    residual_ref: float


def curve_metrics(x_ref, y_ref, x, y):
    """L2 distance, limit-point error and residual ratios of ``y`` against ``y_ref``."""
    y, y_ref = np.asarray(y, float), np.asarray(y_ref, float)
    return CurveMetrics(curve_l2(x_ref, y_ref, x, y),
                        float(y[first_peak(y)] / y_ref[first_peak(y_ref)] - 1.0),
                        residual_ratio(x, y), residual_ratio(x_ref, y_ref))
