"""Small-scale parameter generation for one link: cluster delays (relative
and absolute), cluster/ray powers with dual thresholds, per-ray angles,
random ray coupling, cross-polarization ratios and initial phases.

Follows the TR 38.901 section 7.5 procedure with the sensing extensions:
every cluster also receives an absolute delay (link baseline plus, for
stochastic clusters under NLoS, a lognormal excess per TR 38.901 sec. 7.6.9)
and the NLoS clusters of target-channel links can be partitioned into
deterministic and stochastic subsets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import wrap_azimuth
from .scenario import Condition, ScenarioParams, LspSet

# Intra-cluster ray offset grid (TR 38.901 Table 7.5-3).
RAY_OFFSETS = np.array([
    0.0447, -0.0447, 0.1413, -0.1413, 0.2492, -0.2492, 0.3715, -0.3715,
    0.5129, -0.5129, 0.6797, -0.6797, 0.8844, -0.8844, 1.1481, -1.1481,
    1.5195, -1.5195, 2.1551, -2.1551,
])

# Azimuth / zenith scaling factors vs cluster count (TR 38.901 Tables 7.5-2/-4).
_C_PHI_TABLE = {4: 0.779, 5: 0.860, 8: 1.018, 10: 1.090, 11: 1.123, 12: 1.146,
                14: 1.190, 15: 1.211, 16: 1.226, 19: 1.273, 20: 1.289, 25: 1.358}
_C_THETA_TABLE = {8: 0.889, 10: 0.957, 11: 1.031, 12: 1.104, 15: 1.1088,
                  19: 1.184, 20: 1.178, 25: 1.282}

# Sub-cluster partition of the 20-ray grid and delay offsets in units of the
# cluster delay spread c_DS (TR 38.901 sec. 7.6.2.2 / Table 7.5-5).
SUBCLUSTER_RAYS = (
    np.array([0, 1, 2, 3, 4, 5, 6, 7, 18, 19]),
    np.array([8, 9, 10, 11, 16, 17]),
    np.array([12, 13, 14, 15]),
)
SUBCLUSTER_DELAY_FACTORS = (0.0, 1.28, 2.56)

# Cluster-power thresholds: standard initial removal and the relaxed
# post-concatenation path dropping level.
CLUSTER_DROP_DB = -25.0
PATH_DROP_DB = -40.0


def _interp_table(table: dict[int, float], n: int) -> float:
    if n in table:
        return table[n]
    keys = np.array(sorted(table))
    vals = np.array([table[k] for k in keys])
    return float(np.interp(n, keys, vals))


def draw_relative_delays(n_clusters: int, ds: float, r_tau: float,
                         rng: np.random.Generator) -> np.ndarray:
    """Sorted relative cluster delays with the first element at zero."""
    if n_clusters < 1:
        raise ValueError("need at least one cluster")
    if ds <= 0:
        raise ValueError("delay spread must be positive")
    tau = -r_tau * ds * np.log(rng.uniform(size=n_clusters))
    tau = np.sort(tau - tau.min())
    return tau


def los_delay_scaling(k_db: float) -> float:
    """Delay-spread compensation factor applied under LoS."""
    return 0.7705 - 0.0433 * k_db + 0.0002 * k_db ** 2 + 0.000017 * k_db ** 3


def draw_cluster_powers(relative_delays: np.ndarray, ds: float, r_tau: float,
                        shadow_sigma_db: float, k_db: float | None,
                        rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-cluster powers from the exponential delay-power law.

    Returns ``(powers, powers_with_specular)``: the first is normalized to
    unit sum (diffuse-only view used for coefficient weighting), the second
    carries the specular adjustment of the first cluster under LoS and is the
    set used for angle generation and cluster dropping.
    """
    z = rng.normal(0.0, shadow_sigma_db, size=relative_delays.shape)
    p = np.exp(-relative_delays * (r_tau - 1.0) / (r_tau * ds)) * 10.0 ** (-z / 10.0)
    p = p / p.sum()
    if k_db is None:
        return p, p.copy()
    k_lin = 10.0 ** (k_db / 10.0)
    p_spec = p / (k_lin + 1.0)
    p_spec[0] += k_lin / (k_lin + 1.0)
    return p, p_spec


def threshold_mask(powers: np.ndarray, threshold_db: float = CLUSTER_DROP_DB) -> np.ndarray:
    """Boolean retention mask: strict drop below max(P) * 10^(threshold/10)."""
    if powers.size == 0:
        raise ValueError("empty power set")
    floor = powers.max() * 10.0 ** (threshold_db / 10.0)
    mask = powers >= floor
    mask[np.argmax(powers)] = True
    return mask


def threshold_clusters(powers: np.ndarray,
                       threshold_db: float = CLUSTER_DROP_DB) -> np.ndarray:
    """Filtered and renormalized power set (idempotent)."""
    kept = powers[threshold_mask(powers, threshold_db)]
    return kept / kept.sum()


@dataclass
class RayAngles:
    """Per-ray departure/arrival angles in radians, shape [clusters, rays],
    plus the per-cluster center angles used for geometric cluster mapping."""
    aod: np.ndarray
    zod: np.ndarray
    aoa: np.ndarray
    zoa: np.ndarray
    aod_center: np.ndarray = None
    zod_center: np.ndarray = None
    aoa_center: np.ndarray = None
    zoa_center: np.ndarray = None


def _cluster_azimuth(powers, spread_deg, c_phi, los_angle_deg, is_los, rng):
    n = powers.shape[0]
    prime = 2.0 * (spread_deg / 1.4) * np.sqrt(-np.log(powers / powers.max())) / c_phi
    x = rng.choice((-1.0, 1.0), size=n)
    y = rng.normal(0.0, spread_deg / 7.0, size=n)
    if is_los:
        return x * prime + y - (x[0] * prime[0] + y[0] - los_angle_deg)
    return x * prime + y + los_angle_deg


def _cluster_zenith(powers, spread_deg, c_theta, los_angle_deg, is_los, offset_deg, rng):
    n = powers.shape[0]
    prime = -spread_deg * np.log(powers / powers.max()) / c_theta
    x = rng.choice((-1.0, 1.0), size=n)
    y = rng.normal(0.0, spread_deg / 7.0, size=n)
    if is_los:
        return x * prime + y - (x[0] * prime[0] + y[0] - los_angle_deg)
    return x * prime + y + los_angle_deg + offset_deg


def _fold_zenith_deg(theta):
    theta = np.remainder(theta, 360.0)
    return np.where(theta > 180.0, 360.0 - theta, theta)


def draw_ray_angles(powers_for_angles: np.ndarray, lsp: LspSet,
                    los_aod_rad: float, los_zod_rad: float,
                    los_aoa_rad: float, los_zoa_rad: float,
                    condition: Condition, params: ScenarioParams,
                    rng: np.random.Generator) -> RayAngles:
    """Per-cluster angles plus the fixed intra-cluster offset grid.

    ``powers_for_angles`` are the specular-adjusted cluster powers.  Angles
    are generated in degrees per the standard formulas and returned wrapped
    in radians (azimuths to (-pi, pi], zeniths folded into [0, pi]).
    """
    n = powers_for_angles.shape[0]
    m = params.n_rays
    is_los = condition is Condition.LOS
    k_db = 0.0 if lsp.k_db is None else lsp.k_db
    c_phi = _interp_table(_C_PHI_TABLE, n)
    c_theta = _interp_table(_C_THETA_TABLE, n)
    if is_los:
        c_phi *= 1.1035 - 0.028 * k_db - 0.002 * k_db ** 2 + 0.0001 * k_db ** 3
        c_theta *= 1.3086 + 0.0339 * k_db - 0.0077 * k_db ** 2 + 0.0002 * k_db ** 3

    offsets = RAY_OFFSETS[:m] if m <= RAY_OFFSETS.size else np.resize(RAY_OFFSETS, m)

    # validity caps of the angle-generation formulas
    asd = min(lsp.asd, 104.0)
    asa = min(lsp.asa, 104.0)
    zsd = min(lsp.zsd, 52.0)
    zsa = min(lsp.zsa, 52.0)

    aod_c = _cluster_azimuth(powers_for_angles, asd, c_phi,
                             np.degrees(los_aod_rad), is_los, rng)
    aoa_c = _cluster_azimuth(powers_for_angles, asa, c_phi,
                             np.degrees(los_aoa_rad), is_los, rng)
    zod_c = _cluster_zenith(powers_for_angles, zsd, c_theta,
                            np.degrees(los_zod_rad), is_los,
                            params.zod_offset_deg, rng)
    zoa_c = _cluster_zenith(powers_for_angles, zsa, c_theta,
                            np.degrees(los_zoa_rad), is_los, 0.0, rng)

    aod = aod_c[:, None] + params.c_asd_deg * offsets[None, :]
    aoa = aoa_c[:, None] + params.c_asa_deg * offsets[None, :]
    zod = zod_c[:, None] + (3.0 / 8.0) * (10.0 ** params.lg_zsd_mu) * offsets[None, :]
    zoa = zoa_c[:, None] + params.c_zsa_deg * offsets[None, :]

    return RayAngles(
        aod=wrap_azimuth(np.radians(aod)),
        zod=np.radians(_fold_zenith_deg(zod)),
        aoa=wrap_azimuth(np.radians(aoa)),
        zoa=np.radians(_fold_zenith_deg(zoa)),
        aod_center=wrap_azimuth(np.radians(aod_c)),
        zod_center=np.radians(_fold_zenith_deg(zod_c)),
        aoa_center=wrap_azimuth(np.radians(aoa_c)),
        zoa_center=np.radians(_fold_zenith_deg(zoa_c)),
    )


def couple_rays(angles: RayAngles, rng: np.random.Generator) -> RayAngles:
    """Randomly permute ray order of each angle family within every cluster."""
    def shuffle(a):
        out = a.copy()
        for row in out:
            rng.shuffle(row)
        return out

    return RayAngles(aod=shuffle(angles.aod), zod=shuffle(angles.zod),
                     aoa=shuffle(angles.aoa), zoa=shuffle(angles.zoa),
                     aod_center=angles.aod_center, zod_center=angles.zod_center,
                     aoa_center=angles.aoa_center, zoa_center=angles.zoa_center)


def draw_xpr(mu_db: float, sigma_db: float, shape,
             rng: np.random.Generator) -> np.ndarray:
    """Linear cross-polarization ratios, log-normal in the dB domain."""
    if sigma_db < 0:
        raise ValueError("sigma must be >= 0")
    return 10.0 ** (rng.normal(mu_db, sigma_db, size=shape) / 10.0)


def draw_phases(shape, rng: np.random.Generator) -> np.ndarray:
    """Initial phases, i.i.d. uniform over (-pi, pi]; last axis is the
    (theta-theta, theta-phi, phi-theta, phi-phi) polarization 4-tuple."""
    return np.pi - rng.uniform(0.0, 2.0 * np.pi, size=tuple(shape) + (4,))


def draw_excess_delay(params: ScenarioParams, condition: Condition,
                      rng: np.random.Generator) -> float:
    """Per-link absolute-arrival excess delay (zero under LoS)."""
    if condition is Condition.LOS or params.excess_lg_mu is None:
        return 0.0
    return 10.0 ** rng.normal(params.excess_lg_mu, params.excess_lg_sigma)


def absolutize_delays(relative: np.ndarray, baseline: float, excess: float,
                      deterministic: bool) -> np.ndarray:
    """Absolute cluster delays: baseline + relative (+ excess when stochastic)."""
    if baseline <= 0:
        raise ValueError("baseline delay must be positive")
    if excess < 0:
        raise ValueError("excess delay must be >= 0")
    if deterministic:
        return relative + baseline
    return relative + baseline + excess


def intra_cluster_ray_delays(cluster_delays: np.ndarray, powers: np.ndarray,
                             n_rays: int, c_ds_ns: float) -> np.ndarray:
    """Per-ray absolute delays [N, M]: the two strongest clusters receive the
    fixed sub-cluster delay offsets; all other rays inherit the cluster delay.
    Only defined for the 20-ray grid; other ray counts get no spreading."""
    delays = np.repeat(cluster_delays[:, None], n_rays, axis=1)
    if n_rays != 20 or cluster_delays.size == 0:
        return delays
    c_ds = c_ds_ns * 1e-9
    strongest = np.argsort(powers)[::-1][:2]
    for n in strongest:
        for rays, factor in zip(SUBCLUSTER_RAYS, SUBCLUSTER_DELAY_FACTORS):
            delays[n, rays] += factor * c_ds
    return delays


@dataclass
class LinkRealization:
    """Steps 5-10 output for one link (delay-sorted, threshold-filtered)."""
    condition: Condition
    baseline_delay: float          # geometric LoS delay of the link, s
    excess_delay: float            # per-link absolute-arrival excess, s
    relative_delays: np.ndarray    # [N] (LoS-scaled under LoS condition)
    powers: np.ndarray             # [N] unit-sum diffuse cluster powers
    powers_spec: np.ndarray        # [N] specular-adjusted (angle gen / drops)
    angles: RayAngles              # [N, M] coupled ray angles + centers
    xpr: np.ndarray                # [N, M] linear
    phases: np.ndarray             # [N, M, 4]

    @property
    def n_clusters(self) -> int:
        return self.relative_delays.shape[0]

    @property
    def n_rays(self) -> int:
        return self.angles.aod.shape[1]

    def ray_powers(self) -> np.ndarray:
        """Equal intra-cluster split: P_{n,m} = P_n / M."""
        return np.repeat(self.powers[:, None], self.n_rays, axis=1) / self.n_rays


def generate_link(params: ScenarioParams, lsp: LspSet, condition: Condition,
                  los_aod: float, los_zod: float, los_aoa: float, los_zoa: float,
                  baseline_delay: float, rng: np.random.Generator) -> LinkRealization:
    """Run steps 5-10 for one link: delays, powers (with -25 dB cluster
    removal), coupled ray angles, XPR and initial phases."""
    k_db = lsp.k_db if condition is Condition.LOS else None
    rel = draw_relative_delays(params.n_clusters, lsp.ds, params.delay_scaling, rng)
    powers, powers_spec = draw_cluster_powers(
        rel, lsp.ds, params.delay_scaling, params.per_cluster_shadow_db, k_db, rng)
    keep = threshold_mask(powers_spec, CLUSTER_DROP_DB)
    rel, powers, powers_spec = rel[keep], powers[keep], powers_spec[keep]
    powers = powers / powers.sum()
    if condition is Condition.LOS and k_db is not None:
        rel = rel / los_delay_scaling(k_db)
    angles = draw_ray_angles(powers_spec, lsp, los_aod, los_zod, los_aoa,
                             los_zoa, condition, params, rng)
    angles = couple_rays(angles, rng)
    shape = (rel.shape[0], params.n_rays)
    xpr = draw_xpr(params.xpr_mu_db, params.xpr_sigma_db, shape, rng)
    phases = draw_phases(shape, rng)
    excess = draw_excess_delay(params, condition, rng)
    return LinkRealization(condition=condition, baseline_delay=baseline_delay,
                           excess_delay=excess, relative_delays=rel,
                           powers=powers, powers_spec=powers_spec,
                           angles=angles, xpr=xpr, phases=phases)


@dataclass
class ClusterPartition:
    """Deterministic/stochastic split of the NLoS clusters of one link."""
    deterministic: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))
    stochastic: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))

    def __post_init__(self):
        overlap = np.intersect1d(self.deterministic, self.stochastic)
        if overlap.size:
            raise ValueError(f"cluster indices {overlap} in both partitions")


def partition_clusters(powers: np.ndarray, eligible: np.ndarray, n_det: int,
                       mode: str = "strongest",
                       explicit: list[int] | None = None) -> ClusterPartition:
    """Choose which of the ``eligible`` cluster indices become deterministic.

    mode "strongest" (default) picks the n_det highest-power eligible
    clusters, "first" the n_det earliest, "explicit" uses the given indices.
    Index arrays are returned sorted so reindexing preserves delay order.
    """
    eligible = np.asarray(eligible, dtype=int)
    n_det = min(n_det, eligible.size)
    if mode == "strongest":
        order = eligible[np.argsort(powers[eligible])[::-1]]
        det = np.sort(order[:n_det])
    elif mode == "first":
        det = np.sort(eligible)[:n_det]
    elif mode == "explicit":
        det = np.sort(np.asarray(explicit if explicit is not None else [], dtype=int))
        if not np.all(np.isin(det, eligible)):
            raise ValueError("explicit deterministic indices must be eligible clusters")
    else:
        raise ValueError(f"unknown partition mode {mode!r}")
    sto = np.sort(np.setdiff1d(eligible, det))
    return ClusterPartition(deterministic=det, stochastic=sto)
