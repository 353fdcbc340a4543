import dataclasses

import numpy as np
import pytest
from scipy import stats

from isacsim.geometry import SPEED_OF_LIGHT
from isacsim.scenario import Condition, LspSet, ScenarioKind, load_params
from isacsim import smallscale as ss


@pytest.fixture(scope="module")
def umi_nlos():
    return load_params(ScenarioKind.UMI, Condition.NLOS)


@pytest.fixture(scope="module")
def umi_los():
    return load_params(ScenarioKind.UMI, Condition.LOS)


def make_lsp(asa=40.0, k_db=None):
    return LspSet(ds=1e-7, asd=25.0, asa=asa, zsd=5.0, zsa=10.0,
                  sf_db=0.0, k_db=k_db)


# --- delays ---------------------------------------------------------------

def test_relative_delays_single_cluster():
    out = ss.draw_relative_delays(1, 1e-7, 3.0, np.random.default_rng(0))
    assert np.array_equal(out, [0.0])


def test_relative_delays_sorted_and_zero_first():
    out = ss.draw_relative_delays(16, 5e-8, 2.5, np.random.default_rng(1))
    assert out[0] == 0.0
    assert np.all(np.diff(out) >= 0)


def test_relative_delays_scale_linearly_with_ds():
    a = ss.draw_relative_delays(12, 1e-7, 3.0, np.random.default_rng(7))
    b = ss.draw_relative_delays(12, 2e-7, 3.0, np.random.default_rng(7))
    assert np.allclose(b, 2.0 * a, rtol=1e-12)


def test_relative_delays_order_statistics_oracle():
    # oracle: spacings of exponential order statistics,
    # E[X_(i) - X_(1)] = beta * sum_{j=2..i} 1/(n-j+1)
    n, beta = 12, 3.0 * 1e-7
    expected = np.mean([beta * sum(1.0 / (n - j + 1) for j in range(2, i + 1))
                        for i in range(2, n + 1)])
    rng = np.random.default_rng(123)
    acc = 0.0
    draws = 100_000 // n
    for _ in range(draws):
        acc += ss.draw_relative_delays(n, 1e-7, 3.0, rng)[1:].mean()
    assert acc / draws == pytest.approx(expected, rel=0.02)


def test_absolutize_deterministic_has_no_excess():
    baseline = 10.0 / SPEED_OF_LIGHT
    out = ss.absolutize_delays(np.array([0.0]), baseline, 5e-9, deterministic=True)
    assert out[0] == pytest.approx(baseline)
    assert baseline == pytest.approx(33.356e-9, rel=1e-4)


def test_absolutize_stochastic_zero_excess_matches_deterministic():
    rel = np.array([0.0, 1e-8])
    base = 5.0 / SPEED_OF_LIGHT
    assert np.allclose(ss.absolutize_delays(rel, base, 0.0, False),
                       ss.absolutize_delays(rel, base, 0.0, True))
    assert base == pytest.approx(16.678e-9, rel=1e-4)


def test_absolutize_preserves_order():
    rel = np.sort(np.random.default_rng(3).uniform(0, 1e-6, 20))
    out = ss.absolutize_delays(rel, 1e-8, 3e-9, deterministic=False)
    assert np.all(np.diff(out) >= 0)


def test_intra_cluster_ray_delays_subcluster_offsets():
    delays = np.array([5e-8, 9e-8, 2e-7])
    powers = np.array([0.5, 0.3, 0.2])
    c_ds_ns = 5.0
    out = ss.intra_cluster_ray_delays(delays, powers, 20, c_ds_ns)
    # two strongest clusters (0, 1) carry the sub-cluster offsets
    for n, base in ((0, 5e-8), (1, 9e-8)):
        assert np.allclose(out[n, ss.SUBCLUSTER_RAYS[0]], base)
        assert np.allclose(out[n, ss.SUBCLUSTER_RAYS[1]], base + 1.28 * 5e-9)
        assert np.allclose(out[n, ss.SUBCLUSTER_RAYS[2]], base + 2.56 * 5e-9)
    assert np.allclose(out[2], 2e-7)


def test_intra_cluster_ray_delays_non20_rays_flat():
    out = ss.intra_cluster_ray_delays(np.array([1e-8]), np.array([1.0]), 7, 5.0)
    assert np.allclose(out, 1e-8)


# --- powers ---------------------------------------------------------------

def test_cluster_powers_single_cluster():
    p, ps = ss.draw_cluster_powers(np.array([0.0]), 1e-7, 3.0, 3.0, None,
                                   np.random.default_rng(0))
    assert p == pytest.approx([1.0])
    assert ps == pytest.approx([1.0])


def test_cluster_powers_monotone_without_shadowing():
    rel = ss.draw_relative_delays(10, 1e-7, 3.0, np.random.default_rng(2))
    p, _ = ss.draw_cluster_powers(rel, 1e-7, 3.0, 0.0, None,
                                  np.random.default_rng(2))
    assert np.all(np.diff(p) <= 0)


def test_cluster_powers_unit_sum_property():
    rng = np.random.default_rng(5)
    for _ in range(10_000):
        n = rng.integers(1, 25)
        rel = ss.draw_relative_delays(n, 10 ** rng.uniform(-8, -6),
                                      rng.uniform(1.5, 4.0), rng)
        p, _ = ss.draw_cluster_powers(rel, 1e-7, 3.0, 3.0,
                                      None if rng.random() < 0.5 else 8.0, rng)
        assert abs(p.sum() - 1.0) < 1e-12


def test_cluster_powers_specular_adjustment():
    rel = ss.draw_relative_delays(8, 1e-7, 3.0, np.random.default_rng(9))
    _, ps = ss.draw_cluster_powers(rel, 1e-7, 3.0, 0.0, 40.0,
                                   np.random.default_rng(9))
    # K = 40 dB: virtually all power sits in the first (specular) cluster
    assert ps[0] > 0.999
    assert ps.sum() == pytest.approx(1.0, abs=1e-12)


def test_threshold_arithmetic():
    kept = ss.threshold_clusters(np.array([1.0, 1e-3]), -25.0)
    assert kept.size == 1
    kept = ss.threshold_clusters(np.array([1.0, 10 ** -2.4]), -25.0)
    assert kept.size == 2
    kept = ss.threshold_clusters(np.array([1.0, 10 ** -3.9]), -40.0)
    assert kept.size == 2


def test_threshold_keeps_strongest_and_idempotent():
    rng = np.random.default_rng(8)
    for _ in range(200):
        p = rng.uniform(0, 1, rng.integers(1, 30)) ** 4
        once = ss.threshold_clusters(p, -25.0)
        twice = ss.threshold_clusters(once, -25.0)
        assert once.size >= 1
        assert np.allclose(once, twice, rtol=1e-12)
        assert once.sum() == pytest.approx(1.0, abs=1e-12)


# --- angles ---------------------------------------------------------------

def test_ray_angles_zero_spread_collapse(umi_nlos):
    # all angular spread parameters zero: every ray sits on the cluster center
    params = dataclasses.replace(umi_nlos, c_asd_deg=0.0, c_asa_deg=0.0,
                                 c_zsa_deg=0.0, lg_zsd_mu=-300.0)
    lsp = LspSet(ds=1e-7, asd=1e-12, asa=1e-12, zsd=1e-12, zsa=1e-12,
                 sf_db=0.0, k_db=None)
    powers = np.array([0.6, 0.4])
    ang = ss.draw_ray_angles(powers, lsp, 0.3, 1.1, -0.4, 1.4,
                             Condition.NLOS, params, np.random.default_rng(0))
    for a in (ang.aoa, ang.aod):
        assert np.allclose(a, a[:, :1], atol=1e-10)
    assert np.allclose(ang.aoa, ang.aoa_center[:, None], atol=1e-10)
    assert np.allclose(ang.aoa_center, -0.4, atol=1e-10)


def test_ray_angles_zenith_in_range(umi_nlos):
    lsp = make_lsp()
    rng = np.random.default_rng(4)
    out_of_range = 0
    for _ in range(300):
        rel = ss.draw_relative_delays(umi_nlos.n_clusters, lsp.ds,
                                      umi_nlos.delay_scaling, rng)
        _, ps = ss.draw_cluster_powers(rel, lsp.ds, umi_nlos.delay_scaling,
                                       3.0, None, rng)
        ang = ss.draw_ray_angles(ps, lsp, 0.0, 1.2, 0.0, 1.5,
                                 Condition.NLOS, umi_nlos, rng)
        out_of_range += int(np.any(ang.zoa < 0) or np.any(ang.zoa > np.pi))
        out_of_range += int(np.any(ang.zod < 0) or np.any(ang.zod > np.pi))
    assert out_of_range == 0


def test_ray_angles_los_recentering(umi_los):
    # under LoS the first cluster is re-centered on the LoS direction
    lsp = make_lsp(k_db=9.0)
    rng = np.random.default_rng(6)
    rel = ss.draw_relative_delays(umi_los.n_clusters, lsp.ds,
                                  umi_los.delay_scaling, rng)
    _, ps = ss.draw_cluster_powers(rel, lsp.ds, umi_los.delay_scaling, 3.0,
                                   9.0, rng)
    ang = ss.draw_ray_angles(ps, lsp, 0.7, 1.2, -0.9, 1.6,
                             Condition.LOS, umi_los, rng)
    assert ang.aoa_center[0] == pytest.approx(-0.9, abs=1e-12)
    assert ang.aod_center[0] == pytest.approx(0.7, abs=1e-12)
    assert ang.zoa_center[0] == pytest.approx(1.6, abs=1e-12)


def test_composite_spread_variance_decomposition(umi_nlos):
    # oracle: composite circular spread^2 = center spread^2 + intra-cluster
    # spread^2 (the offset grid has unit rms, scaled by c_asa); holds for
    # narrow-enough spreads where wrapping is negligible
    params = dataclasses.replace(umi_nlos, per_cluster_shadow_db=0.0)
    lsp = make_lsp(asa=30.0)
    rng = np.random.default_rng(11)
    comp2 = []
    cent2 = []
    for _ in range(2000):
        rel = ss.draw_relative_delays(params.n_clusters, lsp.ds,
                                      params.delay_scaling, rng)
        pw, ps = ss.draw_cluster_powers(rel, lsp.ds, params.delay_scaling,
                                        0.0, None, rng)
        ang = ss.draw_ray_angles(ps, lsp, 0.3, 1.2, -0.5, 1.5,
                                 Condition.NLOS, params, rng)
        w = np.repeat(pw[:, None], params.n_rays, axis=1) / params.n_rays
        z = np.sum(w * np.exp(1j * ang.aoa)) / np.sum(w)
        comp2.append(-2.0 * np.log(np.abs(z)))
        zc = np.sum(pw * np.exp(1j * ang.aoa_center)) / np.sum(pw)
        cent2.append(-2.0 * np.log(np.abs(zc)))
    comp = np.degrees(np.sqrt(np.mean(comp2)))
    cent = np.degrees(np.sqrt(np.mean(cent2)))
    expected = np.sqrt(cent ** 2 + params.c_asa_deg ** 2)
    assert comp == pytest.approx(expected, rel=0.05)


def test_center_spread_scales_linearly_with_asa(umi_nlos):
    params = dataclasses.replace(umi_nlos, per_cluster_shadow_db=0.0)

    def centers(asa, seed):
        lsp = make_lsp(asa=asa)
        rng = np.random.default_rng(seed)
        rel = ss.draw_relative_delays(params.n_clusters, lsp.ds,
                                      params.delay_scaling, rng)
        _, ps = ss.draw_cluster_powers(rel, lsp.ds, params.delay_scaling,
                                       0.0, None, rng)
        ang = ss.draw_ray_angles(ps, lsp, 0.0, 1.2, 0.0, 1.5,
                                 Condition.NLOS, params, rng)
        return ang.aoa_center

    a = centers(10.0, 21)
    b = centers(20.0, 21)
    assert np.allclose(b, 2.0 * a, rtol=1e-9)


def test_couple_rays_permutation_only(umi_nlos):
    lsp = make_lsp()
    rng = np.random.default_rng(14)
    rel = ss.draw_relative_delays(umi_nlos.n_clusters, lsp.ds,
                                  umi_nlos.delay_scaling, rng)
    _, ps = ss.draw_cluster_powers(rel, lsp.ds, umi_nlos.delay_scaling,
                                   3.0, None, rng)
    ang = ss.draw_ray_angles(ps, lsp, 0.0, 1.2, 0.0, 1.5,
                             Condition.NLOS, umi_nlos, rng)
    coupled = ss.couple_rays(ang, np.random.default_rng(15))
    for before, after in ((ang.aoa, coupled.aoa), (ang.zod, coupled.zod)):
        assert np.allclose(np.sort(before, axis=1), np.sort(after, axis=1))
    # reproducible for a fixed stream
    again = ss.couple_rays(ang, np.random.default_rng(15))
    assert np.array_equal(coupled.aoa, again.aoa)


# --- XPR / phases / excess -------------------------------------------------

def test_xpr_degenerate_sigma():
    out = ss.draw_xpr(8.0, 0.0, (100,), np.random.default_rng(0))
    assert np.allclose(out, 10 ** 0.8)


def test_xpr_sample_mean():
    n = 100_000
    out = ss.draw_xpr(9.0, 3.0, (n,), np.random.default_rng(1))
    db = 10.0 * np.log10(out)
    assert db.mean() == pytest.approx(9.0, abs=3 * 3.0 / np.sqrt(n))


def test_phases_uniform_chi_square():
    ph = ss.draw_phases((25_000,), np.random.default_rng(2)).ravel()
    assert ph.min() > -np.pi and ph.max() <= np.pi
    hist, _ = np.histogram(ph, bins=36, range=(-np.pi, np.pi))
    assert stats.chisquare(hist).pvalue > 0.01


def test_excess_delay_zero_for_los(umi_los, umi_nlos):
    rng = np.random.default_rng(3)
    assert ss.draw_excess_delay(umi_los, Condition.LOS, rng) == 0.0
    vals = [ss.draw_excess_delay(umi_nlos, Condition.NLOS, rng)
            for _ in range(100)]
    assert all(v > 0 for v in vals)
    # lognormal in the log10 domain around the configured mean
    assert np.mean(np.log10(vals)) == pytest.approx(-7.5, abs=0.2)


# --- partition -------------------------------------------------------------

def test_partition_strongest_disjoint_exhaustive():
    powers = np.array([0.05, 0.3, 0.1, 0.25, 0.2, 0.1])
    eligible = np.arange(1, 6)
    part = ss.partition_clusters(powers, eligible, 2, mode="strongest")
    assert np.array_equal(part.deterministic, [1, 3])
    assert np.array_equal(np.sort(np.concatenate([part.deterministic,
                                                  part.stochastic])), eligible)
    assert np.intersect1d(part.deterministic, part.stochastic).size == 0


def test_partition_first_and_explicit():
    powers = np.ones(6)
    part = ss.partition_clusters(powers, np.arange(6), 3, mode="first")
    assert np.array_equal(part.deterministic, [0, 1, 2])
    part = ss.partition_clusters(powers, np.arange(6), 2, mode="explicit",
                                 explicit=[4, 2])
    assert np.array_equal(part.deterministic, [2, 4])
    with pytest.raises(ValueError):
        ss.partition_clusters(powers, np.arange(3), 1, mode="explicit",
                              explicit=[5])


def test_partition_reindex_order_preserving():
    rng = np.random.default_rng(17)
    powers = rng.uniform(0, 1, 12)
    part = ss.partition_clusters(powers, np.arange(1, 12), 5)
    assert np.all(np.diff(part.deterministic) > 0)
    assert np.all(np.diff(part.stochastic) > 0)


def test_partition_caps_at_eligible_count():
    part = ss.partition_clusters(np.ones(4), np.arange(1, 4), 10)
    assert part.deterministic.size == 3
    assert part.stochastic.size == 0


# --- full link -------------------------------------------------------------

def test_generate_link_normalization_and_order(umi_nlos):
    lsp = make_lsp()
    link = ss.generate_link(umi_nlos, lsp, Condition.NLOS, 0.0, 1.2, 0.0,
                            1.5, 1e-8, np.random.default_rng(20))
    assert np.all(np.diff(link.relative_delays) >= 0)
    assert link.ray_powers().sum() == pytest.approx(1.0, abs=1e-12)
    assert link.phases.shape == (link.n_clusters, link.n_rays, 4)
    assert np.all(link.xpr > 0)


def test_generate_link_deterministic_replay(umi_los):
    lsp = make_lsp(k_db=7.0)
    a = ss.generate_link(umi_los, lsp, Condition.LOS, 0.1, 1.2, -0.2, 1.5,
                         1e-8, np.random.default_rng(33))
    b = ss.generate_link(umi_los, lsp, Condition.LOS, 0.1, 1.2, -0.2, 1.5,
                         1e-8, np.random.default_rng(33))
    assert np.array_equal(a.relative_delays, b.relative_delays)
    assert np.array_equal(a.phases, b.phases)
    assert np.array_equal(a.angles.aoa, b.angles.aoa)
