"""Coordinate geometry: spherical direction vectors, angle extraction and the
law-of-cosines placement of delay-constrained scatterers.

Conventions (global coordinate system throughout):
  zenith angle theta in [0, pi], measured from +z (theta=0 points to zenith);
  azimuth angle phi in (-pi, pi], measured from +x toward +y.
Direction vectors at a node always point from that node toward the object it
interacts with (LoS peer, cluster, target).
"""

from __future__ import annotations

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s

# Positions closer than this are treated as coincident (far below any
# physical placement precision).
COINCIDENCE_TOL = 1e-9


class GeometryError(ValueError):
    """Degenerate input geometry (coincident points, zero-length direction)."""


class InfeasibleGeometryError(GeometryError):
    """Requested path length cannot be realized by a single bounce."""


def wrap_azimuth(phi):
    """Wrap azimuth angle(s) into (-pi, pi]."""
    phi = np.asarray(phi, dtype=float)
    wrapped = np.remainder(phi + np.pi, 2.0 * np.pi) - np.pi
    # remainder maps odd multiples of pi to -pi; the convention is +pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    return wrapped if wrapped.ndim else float(wrapped)


def reflect_zenith(theta):
    """Fold zenith angle(s) back into [0, pi] (mirror at the poles)."""
    theta = np.asarray(theta, dtype=float)
    theta = np.remainder(theta, 2.0 * np.pi)
    folded = np.where(theta > np.pi, 2.0 * np.pi - theta, theta)
    return folded if folded.ndim else float(folded)


def spherical_unit(zenith, azimuth):
    """Spherical unit direction vector(s) s(theta, phi).

    Returns [sin(theta)cos(phi), sin(theta)sin(phi), cos(theta)] stacked on
    the last axis; broadcasts over leading dimensions.
    """
    zenith = np.asarray(zenith, dtype=float)
    azimuth = np.asarray(azimuth, dtype=float)
    st = np.sin(zenith)
    return np.stack(
        (st * np.cos(azimuth), st * np.sin(azimuth), np.cos(zenith)), axis=-1
    )


def angles_between(frm, to):
    """Zenith/azimuth of the direction from point ``frm`` to point ``to``.

    Both arguments broadcast on the last axis (length 3). Returns
    ``(zenith, azimuth)`` with zenith in [0, pi] and azimuth in (-pi, pi].
    Raises GeometryError when the points coincide within COINCIDENCE_TOL.
    """
    frm = np.asarray(frm, dtype=float)
    to = np.asarray(to, dtype=float)
    d = to - frm
    r = np.linalg.norm(d, axis=-1)
    if np.any(r < COINCIDENCE_TOL):
        raise GeometryError("coincident points: direction undefined")
    zenith = np.arccos(np.clip(d[..., 2] / r, -1.0, 1.0))
    azimuth = np.arctan2(d[..., 1], d[..., 0])
    if zenith.ndim == 0:
        return float(zenith), wrap_azimuth(float(azimuth))
    return zenith, wrap_azimuth(azimuth)


def velocity_vector(speed, zenith, azimuth):
    """Cartesian velocity v * s(theta, phi) for travel direction angles."""
    if speed < 0:
        raise ValueError("speed must be >= 0")
    return speed * spherical_unit(zenith, azimuth)


def map_cluster_position(anchor_a, anchor_b, arrival_zenith, arrival_azimuth,
                         total_delay):
    """Place a single-bounce scatterer on the (anchor_a, anchor_b) ellipse.

    The scatterer lies along the direction (arrival_zenith, arrival_azimuth)
    seen from ``anchor_b``, at the distance for which the two path legs sum
    to total_delay * c:

        ||r_p - anchor_a|| + ||anchor_b - r_p|| = total_delay * c

    Writing d = anchor_b - anchor_a, d_p = total_delay * c and a_hat for the
    unit vector from anchor_b toward the scatterer, the law of cosines gives
    the leg length |a| = (d_p^2 - d^2) / (2 (d_p + d . a_hat)).  The plus
    sign in the denominator is fixed by the "a_hat points from anchor_b
    toward the scatterer" orientation; it is the sign for which every
    direction from the focus intersects the ellipsoid once.

    Raises InfeasibleGeometryError when d_p <= ||d|| (degenerate ellipse) or
    the resulting leg is non-positive.
    """
    anchor_a = np.asarray(anchor_a, dtype=float)
    anchor_b = np.asarray(anchor_b, dtype=float)
    d = anchor_b - anchor_a
    dist = float(np.linalg.norm(d))
    if dist < COINCIDENCE_TOL:
        raise GeometryError("coincident anchors")
    d_p = float(total_delay) * SPEED_OF_LIGHT
    if d_p <= dist * (1.0 + 1e-15):
        raise InfeasibleGeometryError(
            f"path length {d_p:.6g} m does not exceed anchor distance {dist:.6g} m"
        )
    a_hat = spherical_unit(arrival_zenith, arrival_azimuth)
    denom = 2.0 * (d_p + float(d @ a_hat))
    if denom <= 0.0:
        raise InfeasibleGeometryError("non-positive law-of-cosines denominator")
    leg = (d_p * d_p - dist * dist) / denom
    if leg <= 0.0:
        raise InfeasibleGeometryError("non-positive scatterer leg length")
    return anchor_b + leg * a_hat


def path_length(*points):
    """Sum of straight segment lengths through the given points, in meters."""
    pts = np.asarray(points, dtype=float)
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=-1)))
