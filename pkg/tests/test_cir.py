import numpy as np
import pytest

from isacsim import cir
from isacsim.cir import (ChannelRealization, FlatDetSps, PathBlock,
                         StochasticRays, TargetCaseDraws, assemble_background,
                         assemble_target, combine_isac, drop_weak_paths,
                         rician_weights, target_gamma_weights)
from isacsim.geometry import SPEED_OF_LIGHT, angles_between

WAVELENGTH = SPEED_OF_LIGHT / 7e9


def test_rician_weights_limits():
    assert rician_weights(0.0) == (0.0, 1.0)
    assert rician_weights(np.inf) == (1.0, 0.0)
    g, gt = rician_weights(1.0)
    assert g == pytest.approx(np.sqrt(0.5))
    assert gt == pytest.approx(np.sqrt(0.5))


def test_rician_weights_normalized():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        g, gt = rician_weights(10 ** rng.uniform(-3, 3))
        assert g * g + gt * gt == pytest.approx(1.0, abs=1e-12)


def test_gamma_weights_case4():
    assert target_gamma_weights(4, 5.0, 2.0) == (0.0, 0.0, 0.0, 1.0)


def test_gamma_weights_case1_collapses():
    assert target_gamma_weights(1, 0.0, 0.0) == (0.0, 0.0, 0.0, 1.0)
    g = target_gamma_weights(1, np.inf, np.inf)
    assert g == (1.0, 0.0, 0.0, 0.0)


def test_gamma_weights_case1_unit_energy():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        k1, k2 = 10 ** rng.uniform(-3, 3, 2)
        g = target_gamma_weights(1, k1, k2)
        assert sum(x * x for x in g) == pytest.approx(1.0, abs=1e-12)


def test_gamma_weights_cases_2_3_as_printed():
    k1, k2 = 4.0, 9.0
    e1, e1t = rician_weights(k1)
    e2, e2t = rician_weights(k2)
    assert target_gamma_weights(2, k1, k2) == (0.0, e1, 0.0, e2t)
    assert target_gamma_weights(3, k1, k2) == (0.0, 0.0, e2, e1t)
    with pytest.raises(ValueError):
        target_gamma_weights(5, 1.0, 1.0)


# --- background assembly ----------------------------------------------------

def _background(k_linear, condition_los=True, n_rays=0, rng=None,
                tx_off=None, rx_off=None):
    rng = rng or np.random.default_rng(0)
    tx = np.array([0.0, 0.0, 5.0])
    rx = np.array([0.0, 5.0, 5.0])
    aod, zod = angles_between(tx, rx)[1], angles_between(tx, rx)[0]
    zoa, aoa = angles_between(rx, tx)
    if n_rays:
        ang = (rng.uniform(-np.pi, np.pi, n_rays), rng.uniform(0, np.pi, n_rays),
               rng.uniform(-np.pi, np.pi, n_rays), rng.uniform(0, np.pi, n_rays))
        powers = rng.uniform(0.1, 1.0, n_rays)
        powers /= powers.sum()
        delays = 5.0 / SPEED_OF_LIGHT + rng.uniform(0, 1e-7, n_rays)
        xpr = np.full(n_rays, 1e15)
        phases = rng.uniform(-np.pi, np.pi, (n_rays, 4))
    else:
        ang = tuple(np.zeros(0) for _ in range(4))
        powers = np.zeros(0)
        delays = np.zeros(0)
        xpr = np.zeros(0)
        phases = np.zeros((0, 4))
    blocks = assemble_background(
        condition_los=condition_los, k_linear=k_linear, tx_pos=tx, rx_pos=rx,
        tx_offsets=np.zeros((1, 3)) if tx_off is None else tx_off,
        rx_offsets=np.zeros((1, 3)) if rx_off is None else rx_off,
        los_angles=(aod, zod, aoa, zoa),
        ray_angles=(ang[0], ang[1], ang[2], ang[3]), ray_powers=powers,
        ray_delays=delays, xpr=xpr, phases=phases,
        v_tx=np.zeros(3), v_rx=np.zeros(3), wavelength=WAVELENGTH)
    return blocks


def test_background_pure_los_tap():
    blocks = _background(np.inf)
    assert [b.case for b in blocks] == ["LoS_back"]
    b = blocks[0]
    assert b.delays_us[0, 0, 0] == pytest.approx(5.0 / SPEED_OF_LIGHT, rel=1e-12)
    assert abs(b.weights[0]) == pytest.approx(1.0, rel=1e-12)
    # reference geometry: LoS tap at 16.68 ns
    assert b.delays_us[0, 0, 0] == pytest.approx(16.678e-9, rel=1e-3)


def test_background_nlos_energy_normalized():
    # K = 0: diffuse taps carry all the (unit) energy
    blocks = _background(0.0, condition_los=False, n_rays=240)
    assert [b.case for b in blocks] == ["NLoS_back"]
    energy = np.sum(np.abs(blocks[0].weights) ** 2)
    assert energy == pytest.approx(1.0, abs=1e-9)


def test_background_k_weighting_splits_energy():
    k = 4.0
    blocks = _background(k, condition_los=True, n_rays=100)
    los = [b for b in blocks if b.case == "LoS_back"][0]
    nlos = [b for b in blocks if b.case == "NLoS_back"][0]
    assert np.sum(np.abs(los.weights) ** 2) == pytest.approx(k / (k + 1), rel=1e-9)
    assert np.sum(np.abs(nlos.weights) ** 2) == pytest.approx(1 / (k + 1), rel=1e-9)


def test_background_element_exact_los_delays():
    off = np.array([[0.0, 0.0, -0.5], [0.0, 0.0, 0.5]])
    blocks = _background(np.inf, tx_off=off, rx_off=off)
    d = blocks[0].delays_us[0]
    tx = np.array([0.0, 0.0, 5.0])
    rx = np.array([0.0, 5.0, 5.0])
    for u in range(2):
        for s in range(2):
            expect = np.linalg.norm((rx + off[u]) - (tx + off[s])) / SPEED_OF_LIGHT
            assert d[u, s] == pytest.approx(expect, rel=1e-15)


# --- target assembly ---------------------------------------------------------

def _target_setup(case=1, k1=5.0, k2=5.0, n_stoch=3, det=True, sigma=0.5):
    tx = np.array([0.0, 0.0, 5.0])
    rx = np.array([0.0, 5.0, 5.0])
    sp = np.array([[3.0, 2.0, 5.0]])
    rng = np.random.default_rng(42)

    def stoch(n, base_delay):
        if n == 0:
            return StochasticRays.empty()
        return StochasticRays(
            aod=rng.uniform(-np.pi, np.pi, n), zod=rng.uniform(0.2, 2.9, n),
            aoa=rng.uniform(-np.pi, np.pi, n), zoa=rng.uniform(0.2, 2.9, n),
            powers=np.full(n, 1.0 / n),
            delays=base_delay + rng.uniform(1e-9, 8e-8, n))
    d1 = np.linalg.norm(sp[0] - tx) / SPEED_OF_LIGHT
    d2 = np.linalg.norm(rx - sp[0]) / SPEED_OF_LIGHT
    stoch1, stoch2 = stoch(n_stoch, d1), stoch(n_stoch, d2)
    if det:
        det1 = FlatDetSps(positions=np.array([[1.0, 3.0, 5.0]]),
                          rcs=np.array([0.1]), powers=np.array([0.2]),
                          velocities=np.zeros((1, 3)), xpr=np.array([1e15]))
        det2 = FlatDetSps(positions=np.array([[2.5, 4.0, 5.0]]),
                          rcs=np.array([0.1]), powers=np.array([0.3]),
                          velocities=np.zeros((1, 3)), xpr=np.array([1e15]))
    else:
        det1 = FlatDetSps.from_clusters([])
        det2 = FlatDetSps.from_clusters([])
    draws = TargetCaseDraws(
        xpr_s1=np.full(stoch2.n, 1e15), phases_s1=rng.uniform(-np.pi, np.pi, (stoch2.n, 4)),
        phases_d1=rng.uniform(-np.pi, np.pi, (det2.n, 4)),
        xpr_s2=np.full(stoch1.n, 1e15), phases_s2=rng.uniform(-np.pi, np.pi, (stoch1.n, 4)),
        phases_d2=rng.uniform(-np.pi, np.pi, (det1.n, 4)),
        xpr_s3=np.full(stoch1.n * stoch2.n, 1e15),
        phases_s3=rng.uniform(-np.pi, np.pi, (stoch1.n * stoch2.n, 4)),
        phases_d3=rng.uniform(-np.pi, np.pi, (det1.n * det2.n, 4)))
    blocks = assemble_target(
        case=case, k1_linear=k1, k2_linear=k2, target_sps=sp,
        target_rcs=np.array([sigma]), v_target=np.zeros(3), tx_pos=tx,
        rx_pos=rx, tx_offsets=np.zeros((1, 3)), rx_offsets=np.zeros((1, 3)),
        stoch1=stoch1, stoch2=stoch2, det1=det1, det2=det2, draws=draws,
        v_tx=np.zeros(3), v_rx=np.zeros(3), wavelength=WAVELENGTH,
        drop_db=-300.0)
    return blocks, (tx, rx, sp, det1, det2, stoch1, stoch2)


def test_target_case4_only_nlos3():
    blocks, _ = _target_setup(case=4)
    cases = {b.case for b in blocks}
    assert cases == {"SNLoS3", "DNLoS3"}


def test_target_case1_all_components():
    blocks, _ = _target_setup(case=1)
    assert {b.case for b in blocks} == {"LoS_tar", "SNLoS1", "DNLoS1",
                                        "SNLoS2", "DNLoS2", "SNLoS3", "DNLoS3"}


def test_target_los_tap_delay_and_magnitude():
    blocks, (tx, rx, sp, *_ ) = _target_setup(case=1, k1=np.inf, k2=np.inf,
                                              n_stoch=0, det=False, sigma=0.5)
    assert [b.case for b in blocks] == ["LoS_tar"]
    b = blocks[0]
    expect = (np.linalg.norm(sp[0] - tx) + np.linalg.norm(rx - sp[0])) / SPEED_OF_LIGHT
    assert b.delays_us[0, 0, 0] == pytest.approx(expect, rel=1e-15)
    # gamma_1 -> 1: |h|^2 = sigma
    assert abs(b.weights[0]) ** 2 == pytest.approx(0.5, rel=1e-9)


def test_target_deterministic_delay_segment_sum():
    blocks, (tx, rx, sp, det1, det2, *_ ) = _target_setup(case=1)
    dn1 = [b for b in blocks if b.case == "DNLoS1"][0]
    q = det2.positions[0]
    expect = (np.linalg.norm(sp[0] - tx) + np.linalg.norm(q - sp[0])
              + np.linalg.norm(rx - q)) / SPEED_OF_LIGHT
    assert dn1.delays[0] == pytest.approx(expect, rel=1e-12)
    dn3 = [b for b in blocks if b.case == "DNLoS3"][0]
    q1 = det1.positions[0]
    expect3 = (np.linalg.norm(q1 - tx) + np.linalg.norm(sp[0] - q1)
               + np.linalg.norm(q - sp[0]) + np.linalg.norm(rx - q)) / SPEED_OF_LIGHT
    assert dn3.delays[0] == pytest.approx(expect3, rel=1e-12)


def test_target_delay_floor_is_bistatic():
    blocks, (tx, rx, sp, *_ ) = _target_setup(case=1)
    floor = (np.linalg.norm(sp[0] - tx) + np.linalg.norm(rx - sp[0])) \
        / SPEED_OF_LIGHT
    for b in blocks:
        assert b.min_delay() >= floor - 1e-15


def test_target_rcs_sqrt_scaling():
    blocks1, _ = _target_setup(case=1, sigma=0.5)
    blocks4, _ = _target_setup(case=1, sigma=2.0)
    for b1, b4 in zip(blocks1, blocks4):
        assert np.allclose(np.abs(b4.weights), 2.0 * np.abs(b1.weights),
                           rtol=1e-12)


def test_target_case_weights_scale_components():
    # the same path set assembled under two K-factor pairs differs exactly
    # by the ratio of the case weights
    ka = (3.0, 7.0)
    kb = (0.5, 2.0)
    blocks_a, _ = _target_setup(case=1, k1=ka[0], k2=ka[1])
    blocks_b, _ = _target_setup(case=1, k1=kb[0], k2=kb[1])
    ga = target_gamma_weights(1, *ka)
    gb = target_gamma_weights(1, *kb)
    weight_of = {"LoS_tar": 0, "SNLoS1": 1, "DNLoS1": 1, "SNLoS2": 2,
                 "DNLoS2": 2, "SNLoS3": 3, "DNLoS3": 3}
    for b_a, b_b in zip(blocks_a, blocks_b):
        assert b_a.case == b_b.case
        i = weight_of[b_a.case]
        assert np.allclose(b_b.weights, b_a.weights * (gb[i] / ga[i]),
                           rtol=1e-12)


def test_target_zero_rcs_contributes_nothing():
    blocks, _ = _target_setup(case=1, sigma=0.0)
    for b in blocks:
        assert np.all(b.weights == 0)


def test_target_double_bounce_pairing_count():
    # every tx-target ray couples with every target-rx ray: with 20 rays per
    # side and one cluster each, 400 double-bounce stochastic paths
    blocks, _ = _target_setup(case=4, n_stoch=20, det=False)
    sn3 = [b for b in blocks if b.case == "SNLoS3"][0]
    assert sn3.n_paths == 400


def test_drop_weak_paths_threshold():
    block = PathBlock(case="SNLoS1",
                      weights=np.array([1.0, 1e-3 + 0j]),
                      doppler_hz=np.zeros(2), etx=np.ones((2, 1), complex),
                      erx=np.ones((2, 1), complex),
                      delays=np.array([1e-8, 2e-8]))
    out = drop_weak_paths([block], threshold_db=-40.0)
    assert out[0].n_paths == 1
    out = drop_weak_paths([block], threshold_db=-80.0)
    assert out[0].n_paths == 2


# --- realization / combination / discretization ------------------------------

def _one_tap_realization(delay, weight=1.0, case="LoS_tar", n=1):
    block = PathBlock(case=case, weights=np.array([weight], dtype=complex),
                      doppler_hz=np.zeros(1), etx=np.ones((1, n), complex),
                      erx=np.ones((1, n), complex),
                      delays=np.array([delay], dtype=float))
    return ChannelRealization(blocks=[block], n_rx=n, n_tx=n,
                              wavelength=WAVELENGTH)


def test_combine_isac_empty_target():
    back = _one_tap_realization(1e-8, case="LoS_back")
    tar = ChannelRealization(blocks=[], n_rx=1, n_tx=1, wavelength=WAVELENGTH)
    isac = combine_isac(back, tar)
    assert isac.total_paths() == back.total_paths()
    f = np.linspace(0, 1e7, 8)
    assert np.allclose(isac.frequency_response(f), back.frequency_response(f))


def test_combine_isac_disjoint_counts_and_superposition():
    a = _one_tap_realization(1e-8)
    b = _one_tap_realization(3e-8, weight=0.5j, case="NLoS_back")
    isac = combine_isac(b, a)
    assert isac.total_paths() == 2
    f = np.linspace(-1e7, 1e7, 16)
    assert np.allclose(isac.frequency_response(f),
                       a.frequency_response(f) + b.frequency_response(f),
                       atol=1e-12)


def test_combine_isac_coincident_delays_complex_sum():
    a = _one_tap_realization(2e-8, weight=1.0)
    b = _one_tap_realization(2e-8, weight=-0.5 + 0.2j, case="NLoS_back")
    isac = combine_isac(a, b)
    h = isac.discretize(1e9, 64, mode="nearest_bin")
    peak = h[0, 0, 20]
    assert peak == pytest.approx(0.5 + 0.2j, abs=1e-12)


def test_combine_isac_grid_mismatch():
    a = _one_tap_realization(1e-8)
    b = _one_tap_realization(1e-8)
    b.snapshots = np.array([0.0, 1.0])
    with pytest.raises(cir.SnapshotGridError):
        combine_isac(a, b)


def test_discretize_on_bin_filters_agree():
    fs = 1e9
    r = _one_tap_realization(32.0 / fs, weight=0.7 - 0.1j)
    near = r.discretize(fs, 128, mode="nearest_bin")
    sinc = r.discretize(fs, 128, mode="sinc_windowed")
    assert near[0, 0, 32] == pytest.approx(0.7 - 0.1j, abs=1e-12)
    assert sinc[0, 0, 32] == pytest.approx(0.7 - 0.1j, rel=1e-3)


def test_discretize_zero_taps():
    r = ChannelRealization(blocks=[], n_rx=2, n_tx=2, wavelength=WAVELENGTH)
    h = r.discretize(1e9, 32)
    assert h.shape == (2, 2, 32)
    assert np.all(h == 0)


def test_discretize_sinc_energy_two_close_taps():
    # oracle: band-limited energy of two deltas a, b spaced dt apart is
    # |a|^2 + |b|^2 + 2 Re(a b* sinc(dt fs))  (ideal low-pass to fs)
    fs = 1e9
    a, b = 1.0 + 0.0j, 0.6 - 0.8j
    t0 = 64.0 / fs
    dt = 0.5 / fs
    block = PathBlock(case="NLoS_back", weights=np.array([a, b]),
                      doppler_hz=np.zeros(2), etx=np.ones((2, 1), complex),
                      erx=np.ones((2, 1), complex),
                      delays=np.array([t0, t0 + dt]))
    r = ChannelRealization(blocks=[block], n_rx=1, n_tx=1,
                           wavelength=WAVELENGTH)
    h = r.discretize(fs, 256, mode="sinc_windowed")
    energy = float(np.sum(np.abs(h) ** 2))
    expected = (abs(a) ** 2 + abs(b) ** 2
                + 2.0 * np.real(a * np.conj(b) * np.sinc(dt * fs)))
    assert energy == pytest.approx(expected, rel=0.01)


def test_frequency_response_matches_taps():
    rng = np.random.default_rng(10)
    weights = rng.normal(size=5) + 1j * rng.normal(size=5)
    delays = rng.uniform(1e-8, 3e-7, 5)
    block = PathBlock(case="NLoS_back", weights=weights,
                      doppler_hz=np.zeros(5), etx=np.ones((5, 1), complex),
                      erx=np.ones((5, 1), complex), delays=delays)
    r = ChannelRealization(blocks=[block], n_rx=1, n_tx=1,
                           wavelength=WAVELENGTH)
    f = np.array([0.0, 1e6, 5e6])
    expect = np.sum(weights[:, None]
                    * np.exp(-2j * np.pi * delays[:, None] * f[None, :]), axis=0)
    assert np.allclose(r.frequency_response(f)[0, 0], expect, rtol=1e-12)


def test_taps_export_labels():
    a = _one_tap_realization(1e-8)
    b = _one_tap_realization(3e-8, weight=0.5, case="NLoS_back")
    isac = combine_isac(a, b)
    labels, delays, coefs = isac.taps(0, 0)
    assert labels == ["LoS_tar", "NLoS_back"]
    assert delays[0] == pytest.approx(1e-8)
    assert coefs[1] == pytest.approx(0.5 + 0j)
