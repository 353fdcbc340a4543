"""Per-drop simulation pipeline: draw one independent realization of the
background and target channels from a run configuration and a seed.

Randomness is organized as named substreams keyed on (seed, drop, purpose)
so links are mutually independent, drops are reproducible in any order and
re-runs are bit-identical.
"""

from __future__ import annotations

import numpy as np

from . import cir, smallscale, target as target_mod
from .cir import (ChannelRealization, FlatDetSps, StochasticRays,
                  TargetCaseDraws, assemble_background, assemble_target,
                  combine_isac)
from .coefficients import FieldPattern
from .config import RunConfig
from .geometry import SPEED_OF_LIGHT, angles_between
from .scenario import (Condition, build_link_state, target_channel_case)

# substream purposes
_BACKGROUND, _LINK1, _LINK2, _TARGET, _CASE_DRAWS, _NOISE, _BITS = range(7)


def substream(seed: int, drop: int, purpose: int) -> np.random.Generator:
    """Independent, order-stable random stream for one (drop, purpose)."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(drop, purpose)))


def noise_rng(cfg: RunConfig, drop: int, salt: int = 0) -> np.random.Generator:
    return substream(cfg.seed, drop, _NOISE + 101 * salt)


def bits_rng(cfg: RunConfig, drop: int, salt: int = 0) -> np.random.Generator:
    return substream(cfg.seed, drop, _BITS + 101 * salt)


def _forced(cfg: RunConfig, key: str) -> Condition | None:
    val = cfg.forced_conditions.get(key)
    return None if val is None else Condition(val)


def _los_angles(a, b):
    """(aod, zod, aoa, zoa) of the direct a->b path."""
    zod, aod = angles_between(a, b)
    zoa, aoa = angles_between(b, a)
    return aod, zod, aoa, zoa


def _make_link(cfg: RunConfig, pos_a, pos_b, rng, forced_key: str):
    kind = cfg.scenario_kind()
    state, params = build_link_state(
        kind, pos_a, pos_b, cfg.carrier_hz, rng,
        clutter_density=cfg.clutter_density, clutter_size=cfg.clutter_size_m,
        clutter_height=cfg.clutter_height_m, forced=_forced(cfg, forced_key),
        n_clusters=cfg.n_clusters.get(cfg.scenario))
    if cfg.forced_k_db is not None and state.condition is Condition.LOS:
        from dataclasses import replace
        state = replace(state, lsp=replace(state.lsp, k_db=cfg.forced_k_db))
    aod, zod, aoa, zoa = _los_angles(pos_a, pos_b)
    baseline = state.distance_3d / SPEED_OF_LIGHT
    link = smallscale.generate_link(params, state.lsp, state.condition,
                                    aod, zod, aoa, zoa, baseline, rng)
    return state, params, link, (aod, zod, aoa, zoa)


def _target_link_components(cfg: RunConfig, link: smallscale.LinkRealization,
                            params, anchor_a, anchor_b, link_name: str,
                            rng: np.random.Generator):
    """Partition a target-channel link into stochastic rays and mapped
    deterministic clusters (with the zero-delay cluster removed)."""
    rel = link.relative_delays
    powers = link.powers
    angles = link.angles
    # the first cluster stands in for the link's specular leg; the NLoS
    # machinery operates on the remaining N-1 clusters
    if rel.size and rel[0] == 0.0:
        keep = np.arange(1, rel.size)
    else:
        keep = np.arange(rel.size)
    if keep.size == 0:
        return StochasticRays.empty(), FlatDetSps.from_clusters([])
    rel = rel[keep]
    powers = powers[keep]
    powers = powers / powers.sum()

    n_det = (cfg.det_clusters.count_tx_target if link_name == "tx_target"
             else cfg.det_clusters.count_target_rx)
    part = smallscale.partition_clusters(
        powers, np.arange(rel.size), n_det, mode=cfg.det_clusters.selection,
        explicit=cfg.det_clusters.explicit_indices)

    det_idx = part.deterministic
    det_clusters = []
    if det_idx.size:
        det_delays = smallscale.absolutize_delays(
            rel[det_idx], link.baseline_delay, 0.0, deterministic=True)
        arr_zen = angles.zoa_center[keep][det_idx]
        arr_azi = angles.aoa_center[keep][det_idx]
        k = cfg.det_clusters.sp_count
        offsets = (np.zeros((k, 3)) if cfg.det_clusters.sp_offsets is None
                   else np.asarray(cfg.det_clusters.sp_offsets, float))
        det_clusters, demoted = target_mod.map_deterministic_clusters(
            anchor_a, anchor_b, det_idx, det_delays, arr_zen, arr_azi,
            powers[det_idx], link_name, rng, sp_offsets=offsets,
            rcs_m2=cfg.det_clusters.rcs_m2,
            velocity=cfg.det_clusters.velocity.vector(),
            xpr_db=cfg.det_clusters.xpr_db, n_sp=k)
        if demoted:
            mapped = np.array([c.index for c in det_clusters], dtype=int)
            det_idx = mapped
    sto_idx = np.setdiff1d(np.arange(rel.size), det_idx)

    if sto_idx.size:
        sto_delays = smallscale.absolutize_delays(
            rel[sto_idx], link.baseline_delay, link.excess_delay,
            deterministic=False)
        ray_delays = smallscale.intra_cluster_ray_delays(
            sto_delays, powers[sto_idx], link.n_rays, params.c_ds_ns)
        sel = keep[sto_idx]
        m = link.n_rays
        ray_p = np.repeat(powers[sto_idx][:, None], m, axis=1) / m
        stoch = StochasticRays(
            aod=angles.aod[sel].ravel(), zod=angles.zod[sel].ravel(),
            aoa=angles.aoa[sel].ravel(), zoa=angles.zoa[sel].ravel(),
            powers=ray_p.ravel(), delays=ray_delays.ravel())
    else:
        stoch = StochasticRays.empty()
    return stoch, FlatDetSps.from_clusters(det_clusters)


def _case_draws(link1_params, link2_params, stoch1: StochasticRays,
                stoch2: StochasticRays, det1: FlatDetSps, det2: FlatDetSps,
                rng: np.random.Generator) -> TargetCaseDraws:
    """Fresh XPR/phase sets per target-channel case component.  Stochastic
    XPRs follow the scattering link's table (the final bounce for the
    double-bounce pairs); deterministic components keep per-object ratios."""
    def xpr(params, n):
        return smallscale.draw_xpr(params.xpr_mu_db, params.xpr_sigma_db, n, rng)

    return TargetCaseDraws(
        xpr_s1=xpr(link2_params, stoch2.n),
        phases_s1=smallscale.draw_phases((stoch2.n,), rng),
        phases_d1=smallscale.draw_phases((det2.n,), rng),
        xpr_s2=xpr(link1_params, stoch1.n),
        phases_s2=smallscale.draw_phases((stoch1.n,), rng),
        phases_d2=smallscale.draw_phases((det1.n,), rng),
        xpr_s3=xpr(link2_params, stoch1.n * stoch2.n),
        phases_s3=smallscale.draw_phases((stoch1.n * stoch2.n,), rng),
        phases_d3=smallscale.draw_phases((det1.n * det2.n,), rng),
    )


def simulate_drop(cfg: RunConfig, drop: int, with_target: bool = True):
    """One Monte Carlo drop.

    Returns (background, target, isac) ChannelRealizations; ``target`` is
    None when ``with_target`` is false (the ISAC channel then equals the
    background channel).
    """
    wavelength = cfg.wavelength
    tx_pos = np.asarray(cfg.tx_position, float)
    rx_pos = np.asarray(cfg.rx_position, float)
    tx_off = cfg.tx_array.offsets(wavelength)
    rx_off = cfg.rx_array.offsets(wavelength)
    v_tx = cfg.tx_velocity.vector()
    v_rx = cfg.rx_velocity.vector()
    pattern = FieldPattern(kind=cfg.field_pattern)

    # background link
    rng_b = substream(cfg.seed, drop, _BACKGROUND)
    state_b, params_b, link_b, los_b = _make_link(cfg, tx_pos, rx_pos, rng_b,
                                                  "background")
    back_amp = 1.0
    if cfg.gain_mode == "physical":
        back_amp = 10.0 ** (-(state_b.path_loss_db + state_b.lsp.sf_db) / 20.0)

    ray_delays_b = smallscale.intra_cluster_ray_delays(
        smallscale.absolutize_delays(link_b.relative_delays,
                                     link_b.baseline_delay,
                                     link_b.excess_delay, deterministic=False),
        link_b.powers, link_b.n_rays, params_b.c_ds_ns)
    back_blocks = assemble_background(
        condition_los=state_b.condition is Condition.LOS,
        k_linear=state_b.lsp.k_linear, tx_pos=tx_pos, rx_pos=rx_pos,
        tx_offsets=tx_off, rx_offsets=rx_off, los_angles=los_b,
        ray_angles=(link_b.angles.aod.ravel(), link_b.angles.zod.ravel(),
                    link_b.angles.aoa.ravel(), link_b.angles.zoa.ravel()),
        ray_powers=link_b.ray_powers().ravel(), ray_delays=ray_delays_b.ravel(),
        xpr=link_b.xpr.ravel(), phases=link_b.phases.reshape(-1, 4),
        v_tx=v_tx, v_rx=v_rx, wavelength=wavelength,
        pattern_tx=pattern, pattern_rx=pattern, amplitude=back_amp)

    meta = {
        "seed": cfg.seed, "drop": drop, "scenario": cfg.scenario,
        "background_condition": state_b.condition.value,
        "background_pl_db": state_b.path_loss_db,
        "background_k_db": state_b.lsp.k_db,
        "gamma": cir.rician_weights(
            state_b.lsp.k_linear if state_b.condition is Condition.LOS else 0.0),
    }
    background = ChannelRealization(
        blocks=back_blocks, n_rx=cfg.rx_array.size, n_tx=cfg.tx_array.size,
        wavelength=wavelength, meta=meta)

    if not with_target:
        return background, None, background

    # target and its two links
    rng_t = substream(cfg.seed, drop, _TARGET)
    rcs_model = target_mod.RcsModel(
        kind=cfg.target.rcs.kind, value_m2=cfg.target.rcs.value_m2,
        a_dbsm=cfg.target.rcs.a_dbsm, b1_db=cfg.target.rcs.b1_db,
        b2_db=cfg.target.rcs.b2_db)
    k_sp = cfg.target.sp_count
    sp_offsets = (np.zeros((k_sp, 3)) if cfg.target.sp_offsets is None
                  else np.asarray(cfg.target.sp_offsets, float))
    tgt = target_mod.place_target_deterministic(
        cfg.target.position, sp_offsets, rcs_model,
        cfg.target.velocity.vector(), rng_t, tx=tx_pos, rx=rx_pos,
        rcs_per_draw=cfg.target.rcs_per_draw)

    rng_1 = substream(cfg.seed, drop, _LINK1)
    state_1, params_1, link_1, _ = _make_link(cfg, tx_pos, tgt.position,
                                              rng_1, "tx_target")
    rng_2 = substream(cfg.seed, drop, _LINK2)
    state_2, params_2, link_2, _ = _make_link(cfg, tgt.position, rx_pos,
                                              rng_2, "target_rx")

    stoch1, det1 = _target_link_components(cfg, link_1, params_1, tx_pos,
                                           tgt.position, "tx_target", rng_1)
    stoch2, det2 = _target_link_components(cfg, link_2, params_2, tgt.position,
                                           rx_pos, "target_rx", rng_2)

    case = target_channel_case(state_1.condition, state_2.condition)
    k1 = state_1.lsp.k_linear if state_1.condition is Condition.LOS else 0.0
    k2 = state_2.lsp.k_linear if state_2.condition is Condition.LOS else 0.0

    rng_c = substream(cfg.seed, drop, _CASE_DRAWS)
    draws = _case_draws(params_1, params_2, stoch1, stoch2, det1, det2, rng_c)

    tar_amp = 1.0
    if cfg.gain_mode == "physical":
        pl = (state_1.path_loss_db + state_1.lsp.sf_db
              + state_2.path_loss_db + state_2.lsp.sf_db)
        # bistatic RCS-to-gain conversion sqrt(4 pi) / lambda
        tar_amp = 10.0 ** (-pl / 20.0) * np.sqrt(4.0 * np.pi) / wavelength

    tar_blocks = assemble_target(
        case=case, k1_linear=k1, k2_linear=k2,
        target_sps=tgt.sp_positions, target_rcs=tgt.sp_rcs,
        v_target=tgt.velocity, tx_pos=tx_pos, rx_pos=rx_pos,
        tx_offsets=tx_off, rx_offsets=rx_off,
        stoch1=stoch1, stoch2=stoch2, det1=det1, det2=det2, draws=draws,
        v_tx=v_tx, v_rx=v_rx, wavelength=wavelength,
        pattern_tx=pattern, pattern_rx=pattern, amplitude=tar_amp)

    eta1 = cir.rician_weights(k1)
    eta2 = cir.rician_weights(k2)
    tmeta = {
        "tx_target_condition": state_1.condition.value,
        "target_rx_condition": state_2.condition.value,
        "case": case,
        "gamma_weights": cir.target_gamma_weights(case, k1, k2),
        "eta": (eta1, eta2),
        "bistatic_delay": float(np.min(tgt.bistatic_delays(tx_pos, rx_pos))),
    }
    target_real = ChannelRealization(
        blocks=tar_blocks, n_rx=cfg.rx_array.size, n_tx=cfg.tx_array.size,
        wavelength=wavelength, meta=tmeta)
    # ranging ground truth: path length of the strongest target return
    tmeta["truth_range_m"] = target_real.strongest_path_delay() * SPEED_OF_LIGHT
    return background, target_real, combine_isac(background, target_real)


def scale_target_rcs(realization: ChannelRealization,
                     factor: float) -> ChannelRealization:
    """Rescale the target RCS of an assembled realization by ``factor``.

    Every target-channel path amplitude carries exactly one sqrt(sigma)
    factor of the target scattering point, so the whole target component
    scales by sqrt(factor).  Valid for constant-RCS configurations.
    """
    root = np.sqrt(factor)
    blocks = [b.scaled(root) if b.case not in ("LoS_back", "NLoS_back") else b
              for b in realization.blocks]
    return ChannelRealization(blocks=blocks, n_rx=realization.n_rx,
                              n_tx=realization.n_tx,
                              wavelength=realization.wavelength,
                              snapshots=realization.snapshots,
                              meta=dict(realization.meta))
