import math

import numpy as np
import pytest

from irsloc.errors import CongestedSceneError, ConfigError, DelaySpreadError
from irsloc.scene import (
    PATH_BS_IRS_BS,
    PATH_BS_IRS_TARGET_BS,
    PATH_BS_TARGET_BS,
    Point2D,
    Scenario,
    SystemConfig,
    delay_bin,
    delay_bin_width,
    distances,
    sample_scenario,
)

from conftest import make_scenario


class TestDistances:
    def test_bs_irs_distance(self):
        truth = distances(make_scenario((0.0, -10.0)))
        assert truth.d_ai[0] == pytest.approx(math.sqrt(11600), abs=1e-12)
        assert truth.d_ai[1] == pytest.approx(math.sqrt(11600), abs=1e-12)

    def test_target_at_irs(self):
        truth = distances(make_scenario((0.0, 40.0)))
        assert truth.d_it[0] == 0.0

    def test_composed_path_is_sum_of_segments(self):
        truth = distances(make_scenario((0.0, -10.0)))
        expected = math.sqrt(11600) + 50.0 + math.sqrt(100.0**2 + 10.0**2)
        assert truth.d_aita[0, 0] == pytest.approx(expected, abs=1e-12)
        assert truth.d_aita[0, 0] == pytest.approx(258.2021, abs=1e-4)
        # composition is exact by construction
        assert truth.d_aita[0, 0] == truth.d_ai[0] + truth.d_it[0] + truth.d_at[0, 0]

    def test_triangle_inequality_anchor_pairs(self, rng):
        pts = rng.uniform(-80, 80, size=(20, 2))
        truth = distances(make_scenario(*map(tuple, pts)))
        d_bs = 200.0
        d_b1_irs = math.sqrt(11600)
        for k in range(20):
            assert abs(truth.d_at[0, k] - truth.d_at[1, k]) <= d_bs + 1e-9
            assert truth.d_at[0, k] + truth.d_at[1, k] >= d_bs - 1e-9
            assert abs(truth.d_at[0, k] - truth.d_it[k]) <= d_b1_irs + 1e-9


class TestScenarioValidation:
    def test_collocated_bs_rejected(self):
        with pytest.raises(ConfigError):
            Scenario(bs=(Point2D(0, 0), Point2D(0, 0)), irs=Point2D(1, 1), targets=())

    def test_irs_on_bs_rejected(self):
        with pytest.raises(ConfigError):
            Scenario(bs=(Point2D(0, 0), Point2D(1, 0)), irs=Point2D(1, 0), targets=())

    def test_nonfinite_point_rejected(self):
        with pytest.raises(ConfigError):
            Point2D(float("nan"), 0.0)


class TestDelayBin:
    def test_direct_path_bin(self, cfg):
        assert delay_bin_width(PATH_BS_TARGET_BS, cfg) == pytest.approx(0.375)
        assert delay_bin(30.0, PATH_BS_TARGET_BS, cfg) == 80

    def test_exact_boundary_goes_low(self, cfg):
        assert delay_bin(0.375, PATH_BS_TARGET_BS, cfg) == 1
        assert delay_bin(30.0, PATH_BS_TARGET_BS, cfg) == 80  # 80 * 0.375

    def test_composed_path_bin(self, cfg):
        assert delay_bin_width(PATH_BS_IRS_TARGET_BS, cfg) == pytest.approx(0.75)
        assert delay_bin(258.2021, PATH_BS_IRS_TARGET_BS, cfg) == 345

    def test_nonpositive_distance_rejected(self, cfg):
        with pytest.raises(ValueError):
            delay_bin(0.0, PATH_BS_TARGET_BS, cfg)
        with pytest.raises(ValueError):
            delay_bin(-3.0, PATH_BS_IRS_BS, cfg)

    def test_delay_spread_exceeded(self, cfg):
        with pytest.raises(DelaySpreadError):
            delay_bin(cfg.n_taps * 0.375 + 1.0, PATH_BS_TARGET_BS, cfg)

    @pytest.mark.parametrize(
        "kind", [PATH_BS_TARGET_BS, PATH_BS_IRS_BS, PATH_BS_IRS_TARGET_BS]
    )
    def test_defining_inequality_holds(self, cfg, rng, kind):
        width = delay_bin_width(kind, cfg)
        for d in rng.uniform(0.01, cfg.n_taps * width * 0.99, size=200):
            l = delay_bin(d, kind, cfg)
            assert (l - 1) * width <= d * (1 + 1e-9)
            assert d * (1 - 1e-9) <= l * width

    def test_midpoint_reconstruction_bound(self, cfg, rng):
        width = cfg.round_trip_bin_m
        for d in rng.uniform(1.0, 100.0, size=200):
            l = delay_bin(d, PATH_BS_TARGET_BS, cfg)
            mid = (l - 1) * width + width / 2
            assert abs(mid - d) <= width / 2 + 1e-9


class TestSystemConfig:
    def test_allocation_partition(self, cfg):
        n1 = cfg.subcarrier_indices(0)
        n2 = cfg.subcarrier_indices(1)
        assert len(np.intersect1d(n1, n2)) == 0
        assert len(n1) + len(n2) == cfg.n_subcarriers

    def test_overlapping_custom_allocation_rejected(self):
        with pytest.raises(ConfigError, match="disjoint"):
            SystemConfig(
                n_subcarriers=4,
                n_taps=2,
                allocation="custom",
                custom_allocation=((1, 2), (2, 3, 4)),
            )

    def test_incomplete_custom_allocation_rejected(self):
        with pytest.raises(ConfigError, match="partition"):
            SystemConfig(
                n_subcarriers=4,
                n_taps=2,
                allocation="custom",
                custom_allocation=((1,), (3, 4)),
            )

    def test_single_symbol_rejected(self):
        with pytest.raises(ConfigError, match="n_symbols"):
            SystemConfig(n_symbols=1)

    def test_gain_reference_calibration(self, cfg):
        # At the reference power/distance, the full-band tap-estimate SNR
        # equals the configured reference SNR.
        a0 = cfg.reference_gain
        h = a0 / cfg.gain_ref_distance_m**2
        sigma2 = cfg.gain_ref_noise_psd_mw_per_hz * cfg.subcarrier_spacing_hz
        snr = 10 ** (cfg.gain_ref_power_dbm / 10) * h**2 / sigma2
        assert 10 * math.log10(snr) == pytest.approx(cfg.gain_ref_snr_db, abs=1e-9)


class TestSampleScenario:
    def test_targets_inside_disc(self, cfg, placement):
        scen = sample_scenario(11, 3, placement, cfg)
        for p in scen.targets:
            assert p.distance_to(placement.irs) <= placement.radius_m + 1e-9

    def test_deterministic(self, cfg, placement):
        a = sample_scenario(5, 3, placement, cfg)
        b = sample_scenario(5, 3, placement, cfg)
        assert a.targets == b.targets

    def test_zero_targets_rejected(self, cfg):
        with pytest.raises(ValueError):
            sample_scenario(1, 0)

    def test_congested_scene_error(self, cfg, placement):
        with pytest.raises(CongestedSceneError):
            sample_scenario(1, 8, placement, cfg, min_bin_separation=120, max_attempts=20)

    def test_resolvable_bins(self, cfg, placement):
        # every sampled scene keeps the four bin dimensions collision-free
        # and composed bins clear of same-BS direct and static-bounce bins
        for seed in range(25):
            scen = sample_scenario(seed, 4, placement, cfg)
            truth = distances(scen)
            for m in range(2):
                ata = [delay_bin(d, PATH_BS_TARGET_BS, cfg) for d in truth.d_at[m]]
                aita = [
                    delay_bin(d, PATH_BS_IRS_TARGET_BS, cfg) for d in truth.d_aita[m]
                ]
                l_aia = delay_bin(truth.d_ai[m], PATH_BS_IRS_BS, cfg)
                assert len(set(ata)) == 4
                assert len(set(aita)) == 4
                assert not set(ata) & set(aita)
                assert l_aia not in aita

    def test_min_separation_honored(self, cfg, placement):
        for seed in range(10):
            scen = sample_scenario(seed, 3, placement, cfg, min_bin_separation=2)
            truth = distances(scen)
            for m in range(2):
                ata = sorted(delay_bin(d, PATH_BS_TARGET_BS, cfg) for d in truth.d_at[m])
                aita = sorted(
                    delay_bin(d, PATH_BS_IRS_TARGET_BS, cfg) for d in truth.d_aita[m]
                )
                assert min(np.diff(ata)) >= 2
                assert min(np.diff(aita)) >= 2
