"""Sensing target and environmental-object modeling: scattering points,
radar cross-section models, and geometric placement of deterministic
clusters (law-of-cosines mapping with departure-angle realignment)."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import geometry
from .geometry import SPEED_OF_LIGHT

log = logging.getLogger(__name__)

REDRAW_ATTEMPTS = 8  # infeasible deterministic-cluster mappings before demotion


@dataclass(frozen=True)
class RcsModel:
    """Radar cross-section model: fixed value or lognormal in the dB domain.

    The lognormal kind draws 10^((a_dbsm + x)/10) with x ~ N(b1_db, b2_db^2).
    """
    kind: str = "constant"          # "constant" | "lognormal"
    value_m2: float = 1.0
    a_dbsm: float = -13.57
    b1_db: float = 0.0
    b2_db: float = 3.065

    def __post_init__(self):
        if self.kind not in ("constant", "lognormal"):
            raise ValueError(f"unknown RCS model kind {self.kind!r}")
        if self.kind == "constant" and self.value_m2 < 0:
            raise ValueError("constant RCS must be >= 0")


def draw_rcs(model: RcsModel, rng: np.random.Generator) -> float:
    """One RCS draw in m^2."""
    if model.kind == "constant":
        return model.value_m2
    x = rng.normal(model.b1_db, model.b2_db)
    return 10.0 ** ((model.a_dbsm + x) / 10.0)


@dataclass
class Target:
    """Extended sensing target: K scattering points sharing one velocity."""
    position: np.ndarray                 # center, m
    sp_positions: np.ndarray             # [K, 3] m
    sp_rcs: np.ndarray                   # [K] m^2
    velocity: np.ndarray                 # [3] m/s, common to all SPs

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        self.sp_positions = np.atleast_2d(np.asarray(self.sp_positions, dtype=float))
        self.sp_rcs = np.atleast_1d(np.asarray(self.sp_rcs, dtype=float))
        self.velocity = np.asarray(self.velocity, dtype=float)
        if self.sp_positions.shape[0] != self.sp_rcs.shape[0]:
            raise ValueError("one RCS entry per scattering point required")
        if np.any(self.sp_rcs < 0):
            raise ValueError("RCS must be >= 0")

    def bistatic_delays(self, tx: np.ndarray, rx: np.ndarray) -> np.ndarray:
        """Exact per-SP two-segment delay (tx -> SP -> rx), seconds."""
        d1 = np.linalg.norm(self.sp_positions - np.asarray(tx, float), axis=1)
        d2 = np.linalg.norm(np.asarray(rx, float) - self.sp_positions, axis=1)
        return (d1 + d2) / SPEED_OF_LIGHT


def place_target_deterministic(coords, sp_offsets, rcs_model: RcsModel,
                               velocity, rng: np.random.Generator,
                               tx=None, rx=None,
                               rcs_per_draw: str = "per_sp") -> Target:
    """Drop a target at known coordinates with configured SP offsets.

    Total target RCS is split equally across the K scattering points so the
    aggregate return is independent of K.  ``rcs_per_draw`` selects whether
    the lognormal model is drawn once per target ("per_target") or per SP
    ("per_sp", default).
    """
    coords = np.asarray(coords, dtype=float)
    for node, name in ((tx, "tx"), (rx, "rx")):
        if node is not None and np.linalg.norm(coords - np.asarray(node, float)) \
                < geometry.COINCIDENCE_TOL:
            raise geometry.GeometryError(f"target coincides with {name} position")
    sp_offsets = np.atleast_2d(np.asarray(sp_offsets, dtype=float))
    k = sp_offsets.shape[0]
    if rcs_per_draw == "per_target":
        total = draw_rcs(rcs_model, rng)
        sp_rcs = np.full(k, total / k)
    elif rcs_per_draw == "per_sp":
        sp_rcs = np.array([draw_rcs(rcs_model, rng) / k for _ in range(k)])
    else:
        raise ValueError(f"unknown rcs_per_draw {rcs_per_draw!r}")
    return Target(position=coords, sp_positions=coords[None, :] + sp_offsets,
                  sp_rcs=sp_rcs, velocity=np.asarray(velocity, dtype=float))


def place_target_stochastic(arrival_zenith: float, arrival_azimuth: float,
                            total_delay: float, tx, rx) -> np.ndarray:
    """Back-solve a stochastically generated target cluster position from its
    arrival angles at the Rx and its absolute delay (Tx/Rx ellipse)."""
    return geometry.map_cluster_position(tx, rx, arrival_zenith, arrival_azimuth,
                                         total_delay)


@dataclass
class DeterministicCluster:
    """Type-I environmental object backing one deterministic cluster."""
    link: str                            # "tx_target" | "target_rx"
    index: int                           # cluster index within the link
    position: np.ndarray                 # mapped center, m
    sp_positions: np.ndarray             # [K, 3] m
    sp_rcs: np.ndarray                   # [K] m^2
    sp_powers: np.ndarray                # [K] cluster power split equally
    velocity: np.ndarray                 # [3] m/s
    delay: float                         # absolute cluster delay, s
    xpr_db: float                        # fixed per-object ratio
    # departure/arrival angles realigned to the mapped position, radians
    dep_zenith: float = 0.0
    dep_azimuth: float = 0.0
    arr_zenith: float = 0.0
    arr_azimuth: float = 0.0


def map_deterministic_clusters(anchor_a, anchor_b, indices, delays,
                               arr_zenith, arr_azimuth, powers,
                               link: str, rng: np.random.Generator,
                               sp_offsets=None, rcs_m2: float = 0.1,
                               velocity=(0.0, 0.0, 0.0), xpr_db: float = 10.0,
                               n_sp: int = 1):
    """Map deterministic clusters onto the (anchor_a, anchor_b) ellipse.

    Each selected cluster is placed along its drawn arrival direction from
    ``anchor_b`` at the distance realizing its absolute delay; the departure
    angles are then recomputed from the mapped position.  Infeasible
    geometries are redrawn (uniform direction) up to REDRAW_ATTEMPTS times;
    clusters still failing are demoted back to the stochastic set.

    Returns (clusters, demoted_indices).
    """
    anchor_a = np.asarray(anchor_a, dtype=float)
    anchor_b = np.asarray(anchor_b, dtype=float)
    if sp_offsets is None:
        sp_offsets = np.zeros((n_sp, 3))
    sp_offsets = np.atleast_2d(np.asarray(sp_offsets, dtype=float))
    k = sp_offsets.shape[0]
    clusters: list[DeterministicCluster] = []
    demoted: list[int] = []
    for i, idx in enumerate(np.asarray(indices, dtype=int)):
        zen, azi = float(arr_zenith[i]), float(arr_azimuth[i])
        position = None
        for _ in range(REDRAW_ATTEMPTS + 1):
            try:
                position = geometry.map_cluster_position(
                    anchor_a, anchor_b, zen, azi, delays[i])
                break
            except geometry.InfeasibleGeometryError:
                zen = float(np.arccos(rng.uniform(-1.0, 1.0)))
                azi = float(rng.uniform(-np.pi, np.pi))
        if position is None:
            log.warning("cluster %d on %s link: no feasible mapping after %d "
                        "redraws, demoted to stochastic", idx, link, REDRAW_ATTEMPTS)
            demoted.append(int(idx))
            continue
        dep_zen, dep_azi = geometry.angles_between(anchor_a, position)
        arr_zen, arr_azi = geometry.angles_between(anchor_b, position)
        # cluster power is split across SPs; RCS is a per-SP property, so the
        # aggregate return sigma * P is independent of the SP count
        clusters.append(DeterministicCluster(
            link=link, index=int(idx), position=position,
            sp_positions=position[None, :] + sp_offsets,
            sp_rcs=np.full(k, rcs_m2),
            sp_powers=np.full(k, float(powers[i]) / k),
            velocity=np.asarray(velocity, dtype=float), delay=float(delays[i]),
            xpr_db=float(xpr_db),
            dep_zenith=dep_zen, dep_azimuth=dep_azi,
            arr_zenith=arr_zen, arr_azimuth=arr_azi,
        ))
    return clusters, demoted
