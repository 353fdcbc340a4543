"""Scenario-level models: standard-scenario parameter tables, LoS-probability
assignment, path loss and correlated large-scale parameter generation.

Parameter tables ship as editable YAML files under ``isacsim/data`` (one
document per scenario/condition); standards-fidelity questions are data
edits, not code changes.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np
import yaml

from .geometry import SPEED_OF_LIGHT


class Condition(enum.Enum):
    LOS = "los"
    NLOS = "nlos"


class ScenarioKind(enum.Enum):
    UMA = "uma"
    UMI = "umi"
    INF = "inf"


class TableError(ValueError):
    """Malformed or inconsistent scenario parameter table."""


class ModelRangeError(ValueError):
    """Geometry or frequency outside the validity range of a model."""


@dataclass(frozen=True)
class LspSet:
    """One correlated draw of large-scale parameters for a link."""
    ds: float          # delay spread, seconds
    asd: float         # azimuth spread of departure, degrees
    asa: float         # azimuth spread of arrival, degrees
    zsd: float         # zenith spread of departure, degrees
    zsa: float         # zenith spread of arrival, degrees
    sf_db: float       # shadow fading, dB
    k_db: float | None  # Ricean K-factor, dB (None under NLoS)

    @property
    def k_linear(self) -> float:
        """Linear K-factor; NLoS links count as pure-diffuse (K = 0)."""
        return 0.0 if self.k_db is None else 10.0 ** (self.k_db / 10.0)


@dataclass(frozen=True)
class ScenarioParams:
    """Parameter table for one (scenario, condition) pair."""
    scenario: ScenarioKind
    condition: Condition
    lg_ds_mu: float
    lg_ds_sigma: float
    lg_asd_mu: float
    lg_asd_sigma: float
    lg_asa_mu: float
    lg_asa_sigma: float
    lg_zsd_mu: float
    lg_zsd_sigma: float
    lg_zsa_mu: float
    lg_zsa_sigma: float
    sf_sigma_db: float
    k_mu_db: float | None
    k_sigma_db: float | None
    n_clusters: int
    n_rays: int
    delay_scaling: float
    per_cluster_shadow_db: float
    c_ds_ns: float
    c_asd_deg: float
    c_asa_deg: float
    c_zsa_deg: float
    zod_offset_deg: float
    xpr_mu_db: float
    xpr_sigma_db: float
    excess_lg_mu: float | None
    excess_lg_sigma: float | None
    corr_sqrt: np.ndarray  # 7x7, order [sf k ds asd asa zsd zsa]


@dataclass(frozen=True)
class LinkState:
    """Propagation state of one link: condition, path loss and LSPs."""
    condition: Condition
    path_loss_db: float
    lsp: LspSet
    distance_3d: float


_CORR_ORDER = ["sf", "k", "ds", "asd", "asa", "zsd", "zsa"]
_table_cache: dict[tuple[ScenarioKind, Condition], ScenarioParams] = {}


def _psd_sqrt(corr: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(corr)
    if vals.min() < -1e-8:
        raise TableError(
            f"correlation matrix is not positive semidefinite (min eig {vals.min():.3g})"
        )
    return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def load_params(scenario: ScenarioKind, condition: Condition) -> ScenarioParams:
    """Load (and cache) the parameter table for one scenario/condition."""
    key = (scenario, condition)
    if key in _table_cache:
        return _table_cache[key]
    name = f"{scenario.value}_{condition.value}.yaml"
    with resources.files("isacsim.data").joinpath(name).open("r") as fh:
        doc = yaml.safe_load(fh)
    try:
        lsp = doc["lsp"]
        clus = doc["cluster"]
        corr = doc["correlation"]
        if [str(x) for x in corr["order"]] != _CORR_ORDER:
            raise TableError(f"correlation order must be {_CORR_ORDER}")
        mat = np.asarray(corr["matrix"], dtype=float)
        if mat.shape != (7, 7) or not np.allclose(mat, mat.T):
            raise TableError("correlation matrix must be symmetric 7x7")
        k = lsp.get("k_db")
        excess = doc.get("excess_delay") or {}
        params = ScenarioParams(
            scenario=scenario,
            condition=condition,
            lg_ds_mu=float(lsp["lg_ds"]["mu"]),
            lg_ds_sigma=float(lsp["lg_ds"]["sigma"]),
            lg_asd_mu=float(lsp["lg_asd"]["mu"]),
            lg_asd_sigma=float(lsp["lg_asd"]["sigma"]),
            lg_asa_mu=float(lsp["lg_asa"]["mu"]),
            lg_asa_sigma=float(lsp["lg_asa"]["sigma"]),
            lg_zsd_mu=float(lsp["lg_zsd"]["mu"]),
            lg_zsd_sigma=float(lsp["lg_zsd"]["sigma"]),
            lg_zsa_mu=float(lsp["lg_zsa"]["mu"]),
            lg_zsa_sigma=float(lsp["lg_zsa"]["sigma"]),
            sf_sigma_db=float(lsp["sf_sigma_db"]),
            k_mu_db=None if k is None else float(k["mu"]),
            k_sigma_db=None if k is None else float(k["sigma"]),
            n_clusters=int(clus["count"]),
            n_rays=int(clus["rays"]),
            delay_scaling=float(clus["delay_scaling"]),
            per_cluster_shadow_db=float(clus["per_cluster_shadow_db"]),
            c_ds_ns=float(clus["c_ds_ns"]),
            c_asd_deg=float(clus["c_asd_deg"]),
            c_asa_deg=float(clus["c_asa_deg"]),
            c_zsa_deg=float(clus["c_zsa_deg"]),
            zod_offset_deg=float(clus["zod_offset_deg"]),
            xpr_mu_db=float(doc["xpr_db"]["mu"]),
            xpr_sigma_db=float(doc["xpr_db"]["sigma"]),
            excess_lg_mu=(None if excess.get("lg_mu") is None else float(excess["lg_mu"])),
            excess_lg_sigma=(None if excess.get("lg_sigma") is None
                             else float(excess["lg_sigma"])),
            corr_sqrt=_psd_sqrt(mat),
        )
    except KeyError as exc:
        raise TableError(f"missing field {exc} in {name}") from exc
    if params.n_clusters < 1 or params.n_rays < 1:
        raise TableError("cluster and ray counts must be >= 1")
    _table_cache[key] = params
    return params


# ---------------------------------------------------------------------------
# Step 2: LoS probability (TR 38.901 Table 7.4.2-1)
# ---------------------------------------------------------------------------

def los_probability(scenario: ScenarioKind, d2d: float, h_ut: float = 1.5,
                    clutter_density: float = 0.1, clutter_size: float = 2.0,
                    clutter_height: float = 6.0, h_bs: float = 10.0) -> float:
    """Probability that a link of 2-D distance ``d2d`` is line-of-sight.

    The factory form follows the clutter-density sub-scenarios: endpoints
    below the clutter height see the exponential clutter law; a raised
    endpoint stretches the decay distance; with both endpoints above the
    clutter the link is always LoS.
    """
    if d2d < 0:
        raise ModelRangeError("negative distance")
    if scenario is ScenarioKind.UMI:
        if d2d <= 18.0:
            return 1.0
        return 18.0 / d2d + math.exp(-d2d / 36.0) * (1.0 - 18.0 / d2d)
    if scenario is ScenarioKind.UMA:
        if d2d <= 18.0:
            return 1.0
        p = 18.0 / d2d + math.exp(-d2d / 63.0) * (1.0 - 18.0 / d2d)
        if h_ut > 13.0:
            c = ((min(h_ut, 23.0) - 13.0) / 10.0) ** 1.5
            p *= 1.0 + c * 1.25 * (d2d / 100.0) ** 3 * math.exp(-d2d / 150.0)
        return min(p, 1.0)
    if scenario is ScenarioKind.INF:
        if not 0.0 <= clutter_density < 1.0:
            raise ModelRangeError("clutter density must be in [0, 1)")
        if clutter_density == 0.0:
            return 1.0
        lo, hi = min(h_ut, h_bs), max(h_ut, h_bs)
        if lo >= clutter_height:
            return 1.0
        k = -clutter_size / math.log(1.0 - clutter_density)
        if hi > clutter_height:
            k *= (hi - lo) / (clutter_height - lo)
        return math.exp(-d2d / k)
    raise ValueError(f"unknown scenario {scenario}")


def assign_condition(scenario: ScenarioKind, d2d: float, rng: np.random.Generator,
                     h_ut: float = 1.5, clutter_density: float = 0.1,
                     clutter_size: float = 2.0, clutter_height: float = 6.0,
                     h_bs: float = 10.0,
                     forced: Condition | None = None) -> Condition:
    """Bernoulli LoS/NLoS draw, or the forced condition when configured."""
    if forced is not None:
        return forced
    p = los_probability(scenario, d2d, h_ut, clutter_density, clutter_size,
                        clutter_height, h_bs)
    return Condition.LOS if rng.random() < p else Condition.NLOS


# ---------------------------------------------------------------------------
# Step 3: path loss (TR 38.901 Table 7.4.1-1)
# ---------------------------------------------------------------------------

def _breakpoint_distance(h_bs: float, h_ut: float, fc_hz: float) -> float:
    # effective antenna heights with 1 m environment height
    return 4.0 * max(h_bs - 1.0, 0.05) * max(h_ut - 1.0, 0.05) * fc_hz / SPEED_OF_LIGHT


def path_loss_db(scenario: ScenarioKind, condition: Condition, d3d: float,
                 fc_hz: float, h_bs: float = 10.0, h_ut: float = 1.5,
                 d2d: float | None = None) -> float:
    """Deterministic path loss in dB for one link (shadow fading excluded)."""
    if d3d <= 1.0:
        raise ModelRangeError(f"distance {d3d:.3g} m below 1 m model validity floor")
    if not 5e8 <= fc_hz <= 1e11:
        raise ModelRangeError(f"carrier {fc_hz:.3g} Hz outside 0.5-100 GHz validity")
    fc_ghz = fc_hz / 1e9
    if d2d is None:
        d2d = d3d
    lg_d = math.log10(d3d)
    lg_f = math.log10(fc_ghz)

    if scenario is ScenarioKind.UMA:
        dbp = _breakpoint_distance(h_bs, h_ut, fc_hz)
        if d2d <= dbp:
            pl_los = 28.0 + 22.0 * lg_d + 20.0 * lg_f
        else:
            pl_los = (28.0 + 40.0 * lg_d + 20.0 * lg_f
                      - 9.0 * math.log10(dbp ** 2 + (h_bs - h_ut) ** 2))
        if condition is Condition.LOS:
            return pl_los
        pl_nlos = 13.54 + 39.08 * lg_d + 20.0 * lg_f - 0.6 * (h_ut - 1.5)
        return max(pl_los, pl_nlos)

    if scenario is ScenarioKind.UMI:
        dbp = _breakpoint_distance(h_bs, h_ut, fc_hz)
        if d2d <= dbp:
            pl_los = 32.4 + 21.0 * lg_d + 20.0 * lg_f
        else:
            pl_los = (32.4 + 40.0 * lg_d + 20.0 * lg_f
                      - 9.5 * math.log10(dbp ** 2 + (h_bs - h_ut) ** 2))
        if condition is Condition.LOS:
            return pl_los
        pl_nlos = 35.3 * lg_d + 22.4 + 21.3 * lg_f - 0.3 * (h_ut - 1.5)
        return max(pl_los, pl_nlos)

    if scenario is ScenarioKind.INF:
        pl_los = 31.84 + 21.50 * lg_d + 19.00 * lg_f
        if condition is Condition.LOS:
            return pl_los
        pl_nlos = 33.0 + 25.5 * lg_d + 20.0 * lg_f
        return max(pl_los, pl_nlos)

    raise ValueError(f"unknown scenario {scenario}")


# ---------------------------------------------------------------------------
# Step 4: correlated large-scale parameters
# ---------------------------------------------------------------------------

def draw_lsps(params: ScenarioParams, rng: np.random.Generator) -> LspSet:
    """Draw one correlated LSP set (log-normal spreads, normal SF/K in dB).

    Spreads are returned unclipped; the angle-generation step caps them at
    its 104/52 degree validity limits.
    """
    x = params.corr_sqrt @ rng.standard_normal(7)
    sf, k, ds, asd, asa, zsd, zsa = x
    k_db = None
    if params.k_mu_db is not None:
        k_db = params.k_mu_db + params.k_sigma_db * k
    return LspSet(
        ds=10.0 ** (params.lg_ds_mu + params.lg_ds_sigma * ds),
        asd=10.0 ** (params.lg_asd_mu + params.lg_asd_sigma * asd),
        asa=10.0 ** (params.lg_asa_mu + params.lg_asa_sigma * asa),
        zsd=10.0 ** (params.lg_zsd_mu + params.lg_zsd_sigma * zsd),
        zsa=10.0 ** (params.lg_zsa_mu + params.lg_zsa_sigma * zsa),
        sf_db=params.sf_sigma_db * sf,
        k_db=k_db,
    )


def target_channel_case(tx_target: Condition, target_rx: Condition) -> int:
    """Joint propagation case of the two target-channel segments (1..4)."""
    if tx_target is Condition.LOS:
        return 1 if target_rx is Condition.LOS else 2
    return 3 if target_rx is Condition.LOS else 4


def build_link_state(scenario: ScenarioKind, pos_a, pos_b, fc_hz: float,
                     rng: np.random.Generator,
                     clutter_density: float = 0.1, clutter_size: float = 2.0,
                     clutter_height: float = 6.0,
                     forced: Condition | None = None,
                     n_clusters: int | None = None) -> tuple[LinkState, ScenarioParams]:
    """Assign condition, path loss and LSPs for the link ``pos_a -> pos_b``.

    Returns the link state together with the parameter table used (with the
    cluster-count override applied when given).
    """
    pos_a = np.asarray(pos_a, dtype=float)
    pos_b = np.asarray(pos_b, dtype=float)
    d3d = float(np.linalg.norm(pos_b - pos_a))
    d2d = float(np.linalg.norm((pos_b - pos_a)[:2]))
    h_ut = float(min(pos_a[2], pos_b[2]))
    h_bs = float(max(pos_a[2], pos_b[2]))
    condition = assign_condition(scenario, d2d, rng, h_ut, clutter_density,
                                 clutter_size, clutter_height, h_bs, forced)
    params = load_params(scenario, condition)
    if n_clusters is not None and n_clusters != params.n_clusters:
        from dataclasses import replace
        params = replace(params, n_clusters=int(n_clusters))
    pl = path_loss_db(scenario, condition, d3d, fc_hz, h_bs, h_ut, d2d)
    lsp = draw_lsps(params, rng)
    return LinkState(condition=condition, path_loss_db=pl, lsp=lsp,
                     distance_3d=d3d), params
