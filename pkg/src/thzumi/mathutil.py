"""Shared numeric helpers: dB conversions, direction vectors, weighted spreads."""

from __future__ import annotations

import numpy as np

# Propagation-geometry light speed. 3e8 m/s is the sounding convention used
# throughout (0.651 ns <-> 19.5 cm, 1332.7 ns <-> 399.8 m work out exactly).
SPEED_OF_LIGHT = 3.0e8


def db_to_lin(db):
    """Amplitude ratio for a dB value (20 dB per decade)."""
    return 10.0 ** (np.asarray(db, dtype=float) / 20.0)


def lin_to_db(lin):
    """dB value of an amplitude ratio."""
    return 20.0 * np.log10(np.asarray(lin, dtype=float))


def power_db(x, floor_db=None):
    """10*log10(|x|^2) with an optional dB floor (guards log of zero)."""
    p = np.abs(np.asarray(x)) ** 2
    if floor_db is not None:
        p = np.maximum(p, 10.0 ** (floor_db / 10.0))
        return 10.0 * np.log10(p)
    with np.errstate(divide="ignore"):
        return 10.0 * np.log10(p)


def wrap_azimuth_deg(az):
    """Wrap azimuth(s) into [0, 360)."""
    return np.mod(az, 360.0)


def direction_unit_vectors(az_deg, el_deg):
    """Unit vectors for arrival directions given azimuth/elevation in degrees.

    Convention: x = cos(el) cos(az), y = cos(el) sin(az), z = sin(el).
    Accepts scalars or arrays; returns shape (..., 3).
    """
    az = np.deg2rad(np.asarray(az_deg, dtype=float))
    el = np.deg2rad(np.asarray(el_deg, dtype=float))
    return np.stack(
        [np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1
    )


def angular_distance_deg(az1, el1, az2, el2):
    """Great-circle angle in degrees between two (az, el) directions."""
    u = direction_unit_vectors(az1, el1)
    v = direction_unit_vectors(az2, el2)
    dot = np.clip(np.sum(u * v, axis=-1), -1.0, 1.0)
    return np.rad2deg(np.arccos(dot))


def weighted_rms_spread(values, weights):
    """Power-weighted RMS spread sqrt(E[v^2] - E[v]^2) of ``values``."""
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    tot = w.sum()
    if tot <= 0:
        raise ValueError("weights must have positive sum")
    m1 = np.dot(w, v) / tot
    m2 = np.dot(w, v**2) / tot
    return float(np.sqrt(max(m2 - m1**2, 0.0)))


def weighted_circular_spread_deg(angles_deg, weights, cap_deg=None):
    """Circular (resultant-vector) angular spread in degrees.

    sigma = sqrt(-2 ln |sum w*exp(j*theta)| / sum w). A zero resultant
    saturates; ``cap_deg`` bounds the reported value in that regime.
    """
    th = np.deg2rad(np.asarray(angles_deg, dtype=float))
    w = np.asarray(weights, dtype=float)
    tot = w.sum()
    if tot <= 0:
        raise ValueError("weights must have positive sum")
    r = np.abs(np.dot(w, np.exp(1j * th))) / tot
    if r <= 0.0:
        sigma = np.inf
    else:
        sigma = np.rad2deg(np.sqrt(max(-2.0 * np.log(r), 0.0)))
    if cap_deg is not None:
        sigma = min(sigma, cap_deg)
    return float(sigma)


def parabolic_vertex(y_left, y_center, y_right):
    """Sub-sample offset of a parabola vertex through three equi-spaced points.

    Returns the offset in sample units relative to the center point, clamped
    to [-1, 1]; 0.0 when the three points are not concave.
    """
    denom = y_left - 2.0 * y_center + y_right
    if denom >= 0.0:
        return 0.0
    delta = 0.5 * (y_left - y_right) / denom
    return float(np.clip(delta, -1.0, 1.0))
