"""Tapped-delay-line assembly: background CIR, the target-channel NLoS
components, the K-factor weighted target CIR and the combined ISAC channel,
plus discretization onto a sample grid.

Paths are stored in flat blocks (one block per propagation case) carrying
complex weights with every scalar factor folded in, separable per-element
phase factors, absolute delays and net Doppler shifts.  LoS-type blocks keep
element-exact per-antenna-pair delays; scattered blocks share one delay per
path (element spacing is orders of magnitude below any delay bin).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import SPEED_OF_LIGHT, spherical_unit
from .coefficients import (FieldPattern, cpm_los, cpm_nlos, pattern_cpm_gain,
                           element_phase_matrix, doppler_frequency)


def rician_weights(k_linear: float) -> tuple[float, float]:
    """Specular/diffuse amplitude weights (gamma, gamma_tilde) from a linear
    K-factor: gamma = sqrt(K/(K+1)), gamma_tilde = sqrt(1/(K+1))."""
    if k_linear < 0:
        raise ValueError("K must be >= 0")
    if np.isinf(k_linear):
        return 1.0, 0.0
    return float(np.sqrt(k_linear / (k_linear + 1.0))), \
        float(np.sqrt(1.0 / (k_linear + 1.0)))


def target_gamma_weights(case: int, k1_linear: float,
                         k2_linear: float) -> tuple[float, float, float, float]:
    """Component weights (gamma_1..gamma_4) of the unified target CIR.

    eta_i / eta_tilde_i are the specular/diffuse weights of the tx-target
    (i=1) and target-rx (i=2) segments; the active set depends on the joint
    propagation case:
      1 (LoS/LoS):   (eta1*eta2, eta1*~eta2, ~eta1*eta2, ~eta1*~eta2)
      2 (LoS/NLoS):  (0, eta1, 0, ~eta2)
      3 (NLoS/LoS):  (0, 0, eta2, ~eta1)
      4 (NLoS/NLoS): (0, 0, 0, 1)
    """
    eta1, eta1t = rician_weights(k1_linear)
    eta2, eta2t = rician_weights(k2_linear)
    if case == 1:
        return eta1 * eta2, eta1 * eta2t, eta1t * eta2, eta1t * eta2t
    if case == 2:
        return 0.0, eta1, 0.0, eta2t
    if case == 3:
        return 0.0, 0.0, eta2, eta1t
    if case == 4:
        return 0.0, 0.0, 0.0, 1.0
    raise ValueError(f"invalid propagation case {case}")


@dataclass
class PathBlock:
    """A batch of same-case paths with separable element factors."""
    case: str
    weights: np.ndarray              # [P] complex, all scalar factors folded in
    doppler_hz: np.ndarray           # [P]
    etx: np.ndarray                  # [P, S]
    erx: np.ndarray                  # [P, U]
    delays: np.ndarray | None = None       # [P] shared path delays
    delays_us: np.ndarray | None = None    # [P, U, S] element-exact delays

    def __post_init__(self):
        if (self.delays is None) == (self.delays_us is None):
            raise ValueError("exactly one of delays / delays_us required")
        self.weights = np.atleast_1d(np.asarray(self.weights, dtype=complex))
        self.doppler_hz = np.atleast_1d(np.asarray(self.doppler_hz, dtype=float))
        self.etx = np.atleast_2d(np.asarray(self.etx, dtype=complex))
        self.erx = np.atleast_2d(np.asarray(self.erx, dtype=complex))

    @property
    def n_paths(self) -> int:
        return self.weights.shape[0]

    def min_delay(self) -> float:
        d = self.delays if self.delays is not None else self.delays_us
        return float(np.min(d)) if d.size else np.inf

    def max_delay(self) -> float:
        d = self.delays if self.delays is not None else self.delays_us
        return float(np.max(d)) if d.size else 0.0

    def scaled(self, factor: float) -> "PathBlock":
        return PathBlock(case=self.case, weights=self.weights * factor,
                         doppler_hz=self.doppler_hz, etx=self.etx, erx=self.erx,
                         delays=self.delays, delays_us=self.delays_us)


class SnapshotGridError(ValueError):
    pass


@dataclass
class ChannelRealization:
    """Per-antenna-pair tapped delay line H(t, tau) for one drop."""
    blocks: list[PathBlock]
    n_rx: int
    n_tx: int
    wavelength: float
    snapshots: np.ndarray = field(default_factory=lambda: np.zeros(1))
    meta: dict = field(default_factory=dict)

    def total_paths(self) -> int:
        return sum(b.n_paths for b in self.blocks)

    def delay_span(self) -> tuple[float, float]:
        if not self.blocks:
            return 0.0, 0.0
        return (min(b.min_delay() for b in self.blocks),
                max(b.max_delay() for b in self.blocks))

    def cases(self) -> list[str]:
        return [b.case for b in self.blocks]

    def strongest_path_delay(self) -> float:
        """Delay of the highest-amplitude path (pair-averaged for
        element-exact LoS taps)."""
        best_w, best_d = -1.0, 0.0
        for block in self.blocks:
            if block.n_paths == 0:
                continue
            i = int(np.argmax(np.abs(block.weights)))
            w = float(np.abs(block.weights[i]))
            if w > best_w:
                best_w = w
                best_d = (float(block.delays[i]) if block.delays is not None
                          else float(np.mean(block.delays_us[i])))
        return best_d

    def discretize(self, sample_rate_hz: float, n_bins: int,
                   mode: str = "nearest_bin", t: float = 0.0,
                   delay_origin: float = 0.0) -> np.ndarray:
        """Discrete CIR h[u, s, bin] at snapshot time t.

        Bin b covers absolute delay delay_origin + b / sample_rate_hz.
        """
        if sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")
        out = np.zeros((self.n_rx, self.n_tx, int(n_bins)), dtype=complex)
        for block in self.blocks:
            if block.n_paths == 0:
                continue
            w = kernels.doppler_rotate(block.weights, block.doppler_hz, t)
            if block.delays is not None:
                frac = (block.delays - delay_origin) * sample_rate_hz
                out += kernels.accumulate_taps(w, block.etx, block.erx, frac,
                                               n_bins, mode)
            else:
                frac = (block.delays_us - delay_origin) * sample_rate_hz
                self._accumulate_per_pair(out, w, block, frac, mode)
        return out

    @staticmethod
    def _accumulate_per_pair(out, weights, block, frac, mode):
        n_bins = out.shape[2]
        for p in range(block.n_paths):
            amp = weights[p] * block.erx[p][:, None] * block.etx[p][None, :]
            if mode == "nearest_bin":
                bins = np.round(frac[p]).astype(int)
                uu, ss = np.nonzero((bins >= 0) & (bins < n_bins))
                out[uu, ss, bins[uu, ss]] += amp[uu, ss]
            else:
                for u in range(out.shape[0]):
                    for s in range(out.shape[1]):
                        h = kernels._windowed_sinc(frac[p, u, s]
                                                   - round(frac[p, u, s]))
                        base = int(round(frac[p, u, s]))
                        for k, hv in zip(range(-kernels.SINC_HALF,
                                               kernels.SINC_HALF + 1), h):
                            b = base + k
                            if 0 <= b < n_bins:
                                out[u, s, b] += amp[u, s] * hv

    def frequency_response(self, freqs_hz: np.ndarray, t: float = 0.0) -> np.ndarray:
        """Exact (non-discretized) H[u, s, f] = sum_p w_p e^(−j2πfτ_p); slow
        reference path used as an oracle and for narrow grids."""
        freqs_hz = np.asarray(freqs_hz, dtype=float)
        out = np.zeros((self.n_rx, self.n_tx, freqs_hz.size), dtype=complex)
        for block in self.blocks:
            if block.n_paths == 0:
                continue
            w = kernels.doppler_rotate(block.weights, block.doppler_hz, t)
            if block.delays is not None:
                ph = np.exp(-2j * np.pi * np.outer(block.delays, freqs_hz))
                out += np.einsum("p,pu,ps,pf->usf", w, block.erx, block.etx, ph)
            else:
                for p in range(block.n_paths):
                    ph = np.exp(-2j * np.pi *
                                block.delays_us[p][:, :, None] * freqs_hz)
                    out += (w[p] * block.erx[p][:, None, None]
                            * block.etx[p][None, :, None] * ph)
        return out

    def taps(self, u: int, s: int, t: float = 0.0):
        """(case labels, delays, complex coefficients) of every path for one
        antenna pair at snapshot t (continuous taps, kept distinct)."""
        labels, delays, coefs = [], [], []
        for block in self.blocks:
            if block.n_paths == 0:
                continue
            w = kernels.doppler_rotate(block.weights, block.doppler_hz, t)
            c = w * block.erx[:, u] * block.etx[:, s]
            d = (block.delays if block.delays is not None
                 else block.delays_us[:, u, s])
            labels.extend([block.case] * block.n_paths)
            delays.append(d)
            coefs.append(c)
        if not delays:
            return [], np.array([]), np.array([])
        return labels, np.concatenate(delays), np.concatenate(coefs)


def combine_isac(background: ChannelRealization,
                 target: ChannelRealization) -> ChannelRealization:
    """Superpose target and background channels (union of tap sets)."""
    if (background.n_rx, background.n_tx) != (target.n_rx, target.n_tx):
        raise SnapshotGridError("antenna dimensions differ")
    if not np.array_equal(background.snapshots, target.snapshots):
        raise SnapshotGridError("snapshot grids differ")
    meta = dict(background.meta)
    meta.update({f"target_{k}": v for k, v in target.meta.items()})
    return ChannelRealization(
        blocks=list(background.blocks) + list(target.blocks),
        n_rx=background.n_rx, n_tx=background.n_tx,
        wavelength=background.wavelength,
        snapshots=background.snapshots, meta=meta)


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def _pairwise_delays(tx_elements: np.ndarray, rx_elements: np.ndarray,
                     via: np.ndarray | None = None) -> np.ndarray:
    """Element-exact delays [U, S]: direct tx->rx, or tx->via->rx."""
    if via is None:
        d = np.linalg.norm(rx_elements[:, None, :] - tx_elements[None, :, :],
                           axis=-1)
    else:
        d = (np.linalg.norm(via[None, :] - tx_elements, axis=-1)[None, :]
             + np.linalg.norm(rx_elements - via[None, :], axis=-1)[:, None])
    return d / SPEED_OF_LIGHT


def assemble_background(*, condition_los: bool, k_linear: float,
                        tx_pos, rx_pos, tx_offsets, rx_offsets,
                        los_angles, ray_angles, ray_powers, ray_delays,
                        xpr, phases, v_tx, v_rx, wavelength,
                        pattern_tx=None, pattern_rx=None,
                        amplitude: float = 1.0) -> list[PathBlock]:
    """Background CIR blocks: gamma-weighted LoS tap plus diffuse rays.

    ``los_angles`` is (aod, zod, aoa, zoa) of the direct path; ``ray_*``
    arrays are the flattened [N*M] diffuse-ray quantities.  ``amplitude`` is
    the external large-scale scale factor applied to every block.
    """
    pattern_tx = pattern_tx or FieldPattern()
    pattern_rx = pattern_rx or FieldPattern()
    tx_pos = np.asarray(tx_pos, float)
    rx_pos = np.asarray(rx_pos, float)
    tx_elements = tx_pos + np.atleast_2d(tx_offsets)
    rx_elements = rx_pos + np.atleast_2d(rx_offsets)
    gamma, gamma_t = rician_weights(k_linear if condition_los else 0.0)
    blocks = []

    if condition_los and gamma > 0.0:
        aod, zod, aoa, zoa = los_angles
        dist = float(np.linalg.norm(rx_pos - tx_pos))
        g = pattern_cpm_gain(pattern_rx, np.array([zoa]), np.array([aoa]),
                             cpm_los()[None, :, :],
                             pattern_tx, np.array([zod]), np.array([aod]))
        w = amplitude * gamma * np.exp(-2j * np.pi * dist / wavelength) * g
        f = (doppler_frequency(zod, aod, np.asarray(v_tx, float), wavelength)
             + doppler_frequency(zoa, aoa, np.asarray(v_rx, float), wavelength))
        blocks.append(PathBlock(
            case="LoS_back", weights=w, doppler_hz=np.array([float(f)]),
            etx=element_phase_matrix(zod, aod, np.atleast_2d(tx_offsets), wavelength),
            erx=element_phase_matrix(zoa, aoa, np.atleast_2d(rx_offsets), wavelength),
            delays_us=_pairwise_delays(tx_elements, rx_elements)[None, :, :]))

    if ray_powers.size:
        aod, zod, aoa, zoa = ray_angles
        g = pattern_cpm_gain(pattern_rx, zoa, aoa, cpm_nlos(xpr, phases),
                             pattern_tx, zod, aod)
        w = amplitude * gamma_t * np.sqrt(ray_powers) * g
        f = (doppler_frequency(zod, aod, np.asarray(v_tx, float), wavelength)
             + doppler_frequency(zoa, aoa, np.asarray(v_rx, float), wavelength))
        blocks.append(PathBlock(
            case="NLoS_back", weights=w, doppler_hz=f,
            etx=element_phase_matrix(zod, aod, np.atleast_2d(tx_offsets), wavelength),
            erx=element_phase_matrix(zoa, aoa, np.atleast_2d(rx_offsets), wavelength),
            delays=np.asarray(ray_delays, float)))
    return blocks


@dataclass
class StochasticRays:
    """Flattened stochastic rays of one target-channel link after
    deterministic extraction and reindexing.

    Departure-side angles are at the link's transmitting end (Tx for the
    tx-target link, target for the target-rx link); arrival-side at the
    receiving end.  Delays are absolute (baseline + relative + excess).
    """
    aod: np.ndarray
    zod: np.ndarray
    aoa: np.ndarray
    zoa: np.ndarray
    powers: np.ndarray
    delays: np.ndarray

    @property
    def n(self) -> int:
        return self.powers.shape[0]

    @classmethod
    def empty(cls) -> "StochasticRays":
        z = np.zeros(0)
        return cls(z, z, z, z, z, z)


@dataclass
class FlatDetSps:
    """Flattened scattering points of the mapped deterministic clusters of
    one link."""
    positions: np.ndarray   # [Q, 3]
    rcs: np.ndarray         # [Q]
    powers: np.ndarray      # [Q]
    velocities: np.ndarray  # [Q, 3]
    xpr: np.ndarray         # [Q] linear

    @property
    def n(self) -> int:
        return self.rcs.shape[0]

    @classmethod
    def from_clusters(cls, clusters) -> "FlatDetSps":
        if not clusters:
            z = np.zeros((0, 3))
            return cls(z, np.zeros(0), np.zeros(0), z, np.zeros(0))
        return cls(
            positions=np.concatenate([c.sp_positions for c in clusters]),
            rcs=np.concatenate([c.sp_rcs for c in clusters]),
            powers=np.concatenate([c.sp_powers for c in clusters]),
            velocities=np.concatenate([np.repeat(c.velocity[None, :],
                                                 c.sp_positions.shape[0], axis=0)
                                       for c in clusters]),
            xpr=np.concatenate([np.full(c.sp_positions.shape[0],
                                        10.0 ** (c.xpr_db / 10.0))
                                for c in clusters]),
        )


@dataclass
class TargetCaseDraws:
    """Per-case cross-polarization/phase draws for the target channel.

    Stochastic path sets take fresh lognormal XPRs; deterministic paths use
    the per-object constant ratios, so only their phases are drawn.  The
    double-bounce stochastic set is indexed by flattened (ray1, ray2) pairs.
    """
    xpr_s1: np.ndarray
    phases_s1: np.ndarray
    phases_d1: np.ndarray
    xpr_s2: np.ndarray
    phases_s2: np.ndarray
    phases_d2: np.ndarray
    xpr_s3: np.ndarray
    phases_s3: np.ndarray
    phases_d3: np.ndarray


def _angles_to(points_from: np.ndarray, points_to: np.ndarray):
    """Vectorized zenith/azimuth from each `points_from` row to `points_to`
    row (matched shapes after broadcast)."""
    d = points_to - points_from
    r = np.linalg.norm(d, axis=-1)
    zen = np.arccos(np.clip(d[..., 2] / np.maximum(r, 1e-300), -1.0, 1.0))
    azi = np.arctan2(d[..., 1], d[..., 0])
    return zen, azi


def _cross_gain(pattern_rx, zen_rx, azi_rx, cpm, pattern_tx, zen_tx, azi_tx):
    """Pattern/CPM gain over the (tx-side x rx-side) cross product.

    cpm indexes the rx side (shape [J, 2, 2]); returns [K, J] for K tx-side
    and J rx-side entries.
    """
    ft_t, ft_p = pattern_tx.evaluate(zen_tx, azi_tx)
    fr_t, fr_p = pattern_rx.evaluate(zen_rx, azi_rx)
    a = fr_t * cpm[..., 0, 0] + fr_p * cpm[..., 1, 0]   # multiplies ft_t
    b = fr_t * cpm[..., 0, 1] + fr_p * cpm[..., 1, 1]   # multiplies ft_p
    return np.outer(ft_t, a) + np.outer(ft_p, b)


PATH_DROP_DB = -40.0


def drop_weak_paths(blocks: list[PathBlock],
                    threshold_db: float = PATH_DROP_DB) -> list[PathBlock]:
    """Relaxed post-concatenation dropping of target-channel paths whose
    power falls more than |threshold_db| below the strongest path."""
    powers = [np.abs(b.weights) ** 2 for b in blocks if b.n_paths]
    if not powers:
        return blocks
    floor = max(p.max() for p in powers) * 10.0 ** (threshold_db / 10.0)
    out = []
    for b in blocks:
        if b.n_paths == 0:
            out.append(b)
            continue
        keep = np.abs(b.weights) ** 2 >= floor
        if keep.all():
            out.append(b)
            continue
        out.append(PathBlock(
            case=b.case, weights=b.weights[keep], doppler_hz=b.doppler_hz[keep],
            etx=b.etx[keep], erx=b.erx[keep],
            delays=None if b.delays is None else b.delays[keep],
            delays_us=None if b.delays_us is None else b.delays_us[keep]))
    return out


def assemble_target(*, case: int, k1_linear: float, k2_linear: float,
                    target_sps, target_rcs, v_target,
                    tx_pos, rx_pos, tx_offsets, rx_offsets,
                    stoch1: StochasticRays, stoch2: StochasticRays,
                    det1: FlatDetSps, det2: FlatDetSps,
                    draws: TargetCaseDraws, v_tx, v_rx, wavelength: float,
                    pattern_tx=None, pattern_rx=None, amplitude: float = 1.0,
                    drop_db: float = PATH_DROP_DB) -> list[PathBlock]:
    """Assemble the target-channel path blocks for all propagation cases.

    Components are weighted by the K-factor coefficients of the joint case;
    the relaxed path-dropping threshold is applied to the concatenated
    power/RCS products before that weighting.
    """
    pattern_tx = pattern_tx or FieldPattern()
    pattern_rx = pattern_rx or FieldPattern()
    tx_pos = np.asarray(tx_pos, float)
    rx_pos = np.asarray(rx_pos, float)
    tx_offsets = np.atleast_2d(np.asarray(tx_offsets, float))
    rx_offsets = np.atleast_2d(np.asarray(rx_offsets, float))
    sp = np.atleast_2d(np.asarray(target_sps, float))
    sigma = np.atleast_1d(np.asarray(target_rcs, float))
    v_l = np.asarray(v_target, float)
    v_tx = np.asarray(v_tx, float)
    v_rx = np.asarray(v_rx, float)
    g1, g2, g3, g4 = target_gamma_weights(case, k1_linear, k2_linear)

    # target-SP geometry seen from the arrays
    zod_sp, aod_sp = _angles_to(tx_pos[None, :], sp)
    zoa_sp, aoa_sp = _angles_to(rx_pos[None, :], sp)
    d1_sp = np.linalg.norm(sp - tx_pos, axis=1) / SPEED_OF_LIGHT
    d2_sp = np.linalg.norm(rx_pos - sp, axis=1) / SPEED_OF_LIGHT
    etx_sp = element_phase_matrix(zod_sp, aod_sp, tx_offsets, wavelength)
    erx_sp = element_phase_matrix(zoa_sp, aoa_sp, rx_offsets, wavelength)
    f_tx_sp = doppler_frequency(zod_sp, aod_sp, v_tx - v_l, wavelength)
    f_rx_sp = doppler_frequency(zoa_sp, aoa_sp, v_rx - v_l, wavelength)

    # (block, gamma_weight, power_metric) triplets; weights carry everything
    # except the gamma weight, which is applied after path dropping
    staged: list[tuple[PathBlock, float, np.ndarray]] = []

    # -- Case LoS_tar: specular bistatic echo per scattering point
    dist = (d1_sp + d2_sp) * SPEED_OF_LIGHT
    gain = pattern_cpm_gain(pattern_rx, zoa_sp, aoa_sp,
                            np.broadcast_to(cpm_los(), (sp.shape[0], 2, 2)),
                            pattern_tx, zod_sp, aod_sp)
    w = amplitude * np.sqrt(sigma) * np.exp(-2j * np.pi * dist / wavelength) * gain
    tx_el = tx_pos + tx_offsets
    rx_el = rx_pos + rx_offsets
    delays_us = np.stack([_pairwise_delays(tx_el, rx_el, via=sp[k])
                          for k in range(sp.shape[0])])
    staged.append((PathBlock(case="LoS_tar", weights=w,
                             doppler_hz=f_tx_sp + f_rx_sp,
                             etx=etx_sp, erx=erx_sp, delays_us=delays_us),
                   g1, sigma.copy()))

    # -- SNLoS1: LoS tx-target leg, stochastic target-rx clusters
    if stoch2.n:
        j = stoch2.n
        k = sp.shape[0]
        cpm = cpm_nlos(draws.xpr_s1, draws.phases_s1)
        gkj = _cross_gain(pattern_rx, stoch2.zoa, stoch2.aoa, cpm,
                          pattern_tx, zod_sp, aod_sp)
        metric = np.outer(sigma, stoch2.powers).ravel()
        wkj = amplitude * np.sqrt(metric) * gkj.ravel()
        f_rx2 = doppler_frequency(stoch2.zoa, stoch2.aoa, v_rx, wavelength)
        f_cl2 = doppler_frequency(stoch2.zod, stoch2.aod, v_l, wavelength)
        dop = (np.repeat(f_tx_sp, j) + np.tile(f_rx2 + f_cl2, k))
        delays = (np.repeat(d1_sp, j) + np.tile(stoch2.delays, k))
        erx2 = element_phase_matrix(stoch2.zoa, stoch2.aoa, rx_offsets, wavelength)
        staged.append((PathBlock(
            case="SNLoS1", weights=wkj, doppler_hz=dop,
            etx=np.repeat(etx_sp, j, axis=0), erx=np.tile(erx2, (k, 1)),
            delays=delays), g2, metric))

    # -- DNLoS1: LoS tx-target leg, deterministic target-rx clusters
    if det2.n:
        q = det2.n
        k = sp.shape[0]
        zoa_q, aoa_q = _angles_to(rx_pos[None, :], det2.positions)
        cpm = cpm_nlos(det2.xpr, draws.phases_d1)
        gkq = _cross_gain(pattern_rx, zoa_q, aoa_q, cpm,
                          pattern_tx, zod_sp, aod_sp)
        metric = (sigma[:, None] * (det2.rcs * det2.powers)[None, :]).ravel()
        wkq = amplitude * np.sqrt(metric) * gkq.ravel()
        # sp -> cluster-sp mid-segment geometry (per k, q)
        mid = det2.positions[None, :, :] - sp[:, None, :]
        mid_len = np.linalg.norm(mid, axis=-1)
        zen_mid, azi_mid = _angles_to(sp[:, None, :], det2.positions[None, :, :])
        f_rxq = doppler_frequency(zoa_q, aoa_q, v_rx - det2.velocities, wavelength)
        f_mid = (spherical_unit(zen_mid, azi_mid)
                 * (v_l[None, None, :] - det2.velocities[None, :, :])).sum(-1) / wavelength
        dop = np.repeat(f_tx_sp, q) + np.tile(f_rxq, k) + f_mid.ravel()
        d_rxq = np.linalg.norm(rx_pos - det2.positions, axis=1)
        delays = (np.repeat(d1_sp, q)
                  + (mid_len + d_rxq[None, :]).ravel() / SPEED_OF_LIGHT)
        erxq = element_phase_matrix(zoa_q, aoa_q, rx_offsets, wavelength)
        staged.append((PathBlock(
            case="DNLoS1", weights=wkq, doppler_hz=dop,
            etx=np.repeat(etx_sp, q, axis=0), erx=np.tile(erxq, (k, 1)),
            delays=delays), g2, metric))

    # -- SNLoS2: stochastic tx-target clusters, LoS target-rx leg
    if stoch1.n:
        i = stoch1.n
        k = sp.shape[0]
        # CPM indexes the tx-side ray here; expand over the rx-side SPs
        cpm = cpm_nlos(draws.xpr_s2, draws.phases_s2)
        ft_t, ft_p = pattern_tx.evaluate(stoch1.zod, stoch1.aod)
        fr_t, fr_p = pattern_rx.evaluate(zoa_sp, aoa_sp)
        a = cpm[..., 0, 0] * ft_t + cpm[..., 0, 1] * ft_p
        b = cpm[..., 1, 0] * ft_t + cpm[..., 1, 1] * ft_p
        gik = np.outer(a, fr_t) + np.outer(b, fr_p)   # [i, k]
        metric = np.outer(stoch1.powers, sigma).ravel()
        wik = amplitude * np.sqrt(metric) * gik.ravel()
        f_tx1 = doppler_frequency(stoch1.zod, stoch1.aod, v_tx, wavelength)
        f_cl1 = doppler_frequency(stoch1.zoa, stoch1.aoa, v_l, wavelength)
        dop = np.repeat(f_tx1 + f_cl1, k) + np.tile(f_rx_sp, i)
        delays = np.repeat(stoch1.delays, k) + np.tile(d2_sp, i)
        etx1 = element_phase_matrix(stoch1.zod, stoch1.aod, tx_offsets, wavelength)
        staged.append((PathBlock(
            case="SNLoS2", weights=wik, doppler_hz=dop,
            etx=np.repeat(etx1, k, axis=0), erx=np.tile(erx_sp, (i, 1)),
            delays=delays), g3, metric))

    # -- DNLoS2: deterministic tx-target clusters, LoS target-rx leg
    if det1.n:
        q = det1.n
        k = sp.shape[0]
        zod_q, aod_q = _angles_to(tx_pos[None, :], det1.positions)
        cpm = cpm_nlos(det1.xpr, draws.phases_d2)
        ft_t, ft_p = pattern_tx.evaluate(zod_q, aod_q)
        fr_t, fr_p = pattern_rx.evaluate(zoa_sp, aoa_sp)
        a = cpm[..., 0, 0] * ft_t + cpm[..., 0, 1] * ft_p
        b = cpm[..., 1, 0] * ft_t + cpm[..., 1, 1] * ft_p
        gqk = np.outer(a, fr_t) + np.outer(b, fr_p)   # [q, k]
        metric = ((det1.rcs * det1.powers)[:, None] * sigma[None, :]).ravel()
        wqk = amplitude * np.sqrt(metric) * gqk.ravel()
        mid = sp[None, :, :] - det1.positions[:, None, :]
        mid_len = np.linalg.norm(mid, axis=-1)
        zen_mid, azi_mid = _angles_to(
            np.broadcast_to(sp[None, :, :], mid.shape),
            np.broadcast_to(det1.positions[:, None, :], mid.shape))
        f_txq = doppler_frequency(zod_q, aod_q, v_tx - det1.velocities, wavelength)
        f_mid = (spherical_unit(zen_mid, azi_mid)
                 * (v_l[None, None, :] - det1.velocities[:, None, :])).sum(-1) / wavelength
        dop = np.repeat(f_txq, k) + f_mid.ravel() + np.tile(f_rx_sp, q)
        d_txq = np.linalg.norm(det1.positions - tx_pos, axis=1)
        delays = ((d_txq[:, None] + mid_len).ravel() / SPEED_OF_LIGHT
                  + np.tile(d2_sp, q))
        etxq = element_phase_matrix(zod_q, aod_q, tx_offsets, wavelength)
        staged.append((PathBlock(
            case="DNLoS2", weights=wqk, doppler_hz=dop,
            etx=np.repeat(etxq, k, axis=0), erx=np.tile(erx_sp, (q, 1)),
            delays=delays), g3, metric))

    # -- SNLoS3: stochastic clusters on both legs.  Only the per-SP RCS
    # depends on the scattering point here (delays and angles are cluster
    # quantities), so the SP sum collapses to a scalar amplitude factor.
    if stoch1.n and stoch2.n:
        i, j = stoch1.n, stoch2.n
        sp_amp = float(np.sum(np.sqrt(sigma)))
        cpm = cpm_nlos(draws.xpr_s3, draws.phases_s3)   # [i*j, 2, 2]
        ft_t, ft_p = pattern_tx.evaluate(stoch1.zod, stoch1.aod)
        fr_t, fr_p = pattern_rx.evaluate(stoch2.zoa, stoch2.aoa)
        ftt = np.repeat(ft_t, j)
        ftp = np.repeat(ft_p, j)
        frt = np.tile(fr_t, i)
        frp = np.tile(fr_p, i)
        gij = (frt * (cpm[:, 0, 0] * ftt + cpm[:, 0, 1] * ftp)
               + frp * (cpm[:, 1, 0] * ftt + cpm[:, 1, 1] * ftp))
        pair_power = np.outer(stoch1.powers, stoch2.powers).ravel()
        metric = pair_power * float(np.sum(sigma))
        wij = amplitude * sp_amp * np.sqrt(pair_power) * gij
        f_tx1 = doppler_frequency(stoch1.zod, stoch1.aod, v_tx, wavelength)
        f_cl1 = doppler_frequency(stoch1.zoa, stoch1.aoa, v_l, wavelength)
        f_rx2 = doppler_frequency(stoch2.zoa, stoch2.aoa, v_rx, wavelength)
        f_cl2 = doppler_frequency(stoch2.zod, stoch2.aod, v_l, wavelength)
        dop = np.repeat(f_tx1 + f_cl1, j) + np.tile(f_rx2 + f_cl2, i)
        delays = np.repeat(stoch1.delays, j) + np.tile(stoch2.delays, i)
        etx1 = element_phase_matrix(stoch1.zod, stoch1.aod, tx_offsets, wavelength)
        erx2 = element_phase_matrix(stoch2.zoa, stoch2.aoa, rx_offsets, wavelength)
        staged.append((PathBlock(
            case="SNLoS3", weights=wij, doppler_hz=dop,
            etx=np.repeat(etx1, j, axis=0), erx=np.tile(erx2, (i, 1)),
            delays=delays), g4, metric))

    # -- DNLoS3: deterministic clusters on both legs (per SP; the target-SP
    # position enters the mid-segment delays and Doppler directions)
    if det1.n and det2.n:
        q1, q2 = det1.n, det2.n
        k = sp.shape[0]
        zod_q1, aod_q1 = _angles_to(tx_pos[None, :], det1.positions)
        zoa_q2, aoa_q2 = _angles_to(rx_pos[None, :], det2.positions)
        # pair polarization: final-bounce object sets the ratio
        xpr_pair = np.tile(det2.xpr, q1)
        cpm = cpm_nlos(xpr_pair, draws.phases_d3)   # [q1*q2, 2, 2]
        ft_t, ft_p = pattern_tx.evaluate(zod_q1, aod_q1)
        fr_t, fr_p = pattern_rx.evaluate(zoa_q2, aoa_q2)
        ftt = np.repeat(ft_t, q2)
        ftp = np.repeat(ft_p, q2)
        frt = np.tile(fr_t, q1)
        frp = np.tile(fr_p, q1)
        g_pair = (frt * (cpm[:, 0, 0] * ftt + cpm[:, 0, 1] * ftp)
                  + frp * (cpm[:, 1, 0] * ftt + cpm[:, 1, 1] * ftp))
        pair_metric = np.outer(det1.rcs * det1.powers,
                               det2.rcs * det2.powers).ravel()
        metric = (sigma[:, None] * pair_metric[None, :]).ravel()
        w = amplitude * np.sqrt(metric) * np.tile(g_pair, k)
        # segment delays: tx->q1, q1->sp_k, sp_k->q2, q2->rx
        d_txq1 = np.linalg.norm(det1.positions - tx_pos, axis=1)
        d_q2rx = np.linalg.norm(rx_pos - det2.positions, axis=1)
        seg1 = np.linalg.norm(sp[:, None, :] - det1.positions[None, :, :], axis=-1)
        seg2 = np.linalg.norm(det2.positions[None, :, :] - sp[:, None, :], axis=-1)
        delays = ((d_txq1[None, :, None] + seg1[:, :, None]
                   + seg2[:, None, :] + d_q2rx[None, None, :])
                  / SPEED_OF_LIGHT).reshape(k * q1 * q2)
        f_txq1 = doppler_frequency(zod_q1, aod_q1, v_tx - det1.velocities, wavelength)
        f_q2rx = doppler_frequency(zoa_q2, aoa_q2, v_rx - det2.velocities, wavelength)
        zen1, azi1 = _angles_to(np.broadcast_to(sp[:, None, :], seg1.shape + (3,)),
                                np.broadcast_to(det1.positions[None, :, :], seg1.shape + (3,)))
        zen2, azi2 = _angles_to(np.broadcast_to(sp[:, None, :], seg2.shape + (3,)),
                                np.broadcast_to(det2.positions[None, :, :], seg2.shape + (3,)))
        f_mid1 = (spherical_unit(zen1, azi1)
                  * (v_l - det1.velocities)[None, :, :]).sum(-1) / wavelength
        f_mid2 = (spherical_unit(zen2, azi2)
                  * (v_l - det2.velocities)[None, :, :]).sum(-1) / wavelength
        dop = (f_txq1[None, :, None] + f_mid1[:, :, None]
               + f_mid2[:, None, :] + f_q2rx[None, None, :]).reshape(-1)
        etxq1 = element_phase_matrix(zod_q1, aod_q1, tx_offsets, wavelength)
        erxq2 = element_phase_matrix(zoa_q2, aoa_q2, rx_offsets, wavelength)
        staged.append((PathBlock(
            case="DNLoS3", weights=w, doppler_hz=dop,
            etx=np.tile(np.repeat(etxq1, q2, axis=0), (k, 1)),
            erx=np.tile(np.tile(erxq2, (q1, 1)), (k, 1)),
            delays=delays), g4, metric))

    # relaxed path dropping on the concatenated power/RCS products, applied
    # before the K-factor weighting
    active = [m for _, gw, m in staged if gw > 0 and m.size]
    blocks: list[PathBlock] = []
    if not active:
        return blocks
    floor = max(m.max() for m in active) * 10.0 ** (drop_db / 10.0)
    for block, gw, metric in staged:
        if gw <= 0.0:
            continue
        keep = metric >= floor
        if not keep.any():
            continue
        blocks.append(PathBlock(
            case=block.case, weights=gw * block.weights[keep],
            doppler_hz=block.doppler_hz[keep], etx=block.etx[keep],
            erx=block.erx[keep],
            delays=None if block.delays is None else block.delays[keep],
            delays_us=None if block.delays_us is None else block.delays_us[keep]))
    return blocks
