import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stvsa.data import Dataset, write_csv
from stvsa.datagen import (
    BuildConfig,
    MinMaxNormalizer,
    ScenarioConfig,
    SimulationSettings,
    build_dataset,
    energy_sanity,
    fault_thevenin,
    feature_dim,
    impose_ratio,
    inject_noise,
    jittered_model,
    labeling_features,
    motor_torque,
    parse_ratio,
    read_trajectories,
    scenario_grid,
    simulate_scenario,
    stratified_split,
    write_trajectories,
)
from stvsa.datagen import _equilibrium
from stvsa.errors import ConfigurationError
from stvsa.sfcm import LabelRules, seed_labels

NO_JITTER = SimulationSettings(jitter=0.0, bus_jitter=0.0)


@pytest.fixture(scope="module")
def small_build():
    return build_dataset(BuildConfig(target_count=144, seed=3))


class TestScenario:
    def test_grid_has_all_combinations(self):
        assert len(scenario_grid()) == 72

    def test_enumerations_enforced(self):
        with pytest.raises(ConfigurationError):
            ScenarioConfig(load_level=1.1)
        with pytest.raises(ConfigurationError):
            ScenarioConfig(clearing_time=0.07)
        ScenarioConfig(load_level=1.1, clearing_time=0.07, strict=False)

    def test_shares_sum_to_one(self):
        m = jittered_model(ScenarioConfig(motor_ratio=0.9), SimulationSettings())
        np.testing.assert_allclose(m.motor_share + m.zip_share, 1.0)


class TestNetwork:
    def test_remote_fault_gives_prefault_thevenin(self):
        gain, x = fault_thevenin(0.1, 0.3, 1e12, np.array([0.0, 0.25, 0.5, 0.75]))
        np.testing.assert_allclose(gain, 1.0, atol=1e-6)
        np.testing.assert_allclose(x, 0.1 + 0.3 / 2, atol=1e-6)

    def test_bolted_fault_at_bus_collapses_voltage(self):
        gain, _ = fault_thevenin(0.1, 0.3, 1e-9, 0.0)
        assert abs(gain) < 1e-6

    def test_equilibrium_is_stationary(self):
        m = jittered_model(ScenarioConfig(jitter_seed=5), SimulationSettings())
        op = _equilibrium(m)
        x_pre = m.x_source + m.x_line / 2
        v = op.e / np.abs(1.0 + 1j * x_pre * op.y0)
        np.testing.assert_allclose(v, 1.0, rtol=1e-12)
        # electrical torque at the operating point balances the mechanical load
        np.testing.assert_allclose(motor_torque(m, v, op.s0), op.t_mech, rtol=1e-12)


class TestSimulation:
    def test_zero_duration_fault_stays_at_equilibrium(self):
        cfg = ScenarioConfig(clearing_time=0.0, strict=False)
        res = simulate_scenario(cfg, settings=SimulationSettings(horizon=1.0))
        assert np.max(np.abs(res.u_record - res.u_initial[:, None, :])) < 1e-6
        assert np.max(np.abs(res.features[..., :10] - 1.0)) < 1e-6

    def test_uncleared_fault_collapses(self):
        cfg = ScenarioConfig(load_level=0.8, motor_ratio=0.7, clearing_time=float("inf"), strict=False)
        res = simulate_scenario(cfg, settings=SimulationSettings(horizon=2.0))
        assert np.all(res.u_record[0, -1] < 0.7)

    def test_heavy_stalls_light_recovers(self):
        heavy = simulate_scenario(ScenarioConfig(1.2, 0.9, 0.75, 0.1), settings=NO_JITTER)
        light = simulate_scenario(ScenarioConfig(0.8, 0.7, 0.0, 0.05), settings=NO_JITTER)
        assert seed_labels(heavy.u_record, NO_JITTER.record_dt)[0] == 1
        assert seed_labels(light.u_record, NO_JITTER.record_dt)[0] == 0

    def test_feature_layout(self):
        res = simulate_scenario(ScenarioConfig(), settings=SimulationSettings(horizon=0.5))
        assert res.features.shape == (1, 60, 30)
        assert np.all(np.isfinite(res.features)) and np.all(res.features[..., :10] >= 0)
        assert feature_dim(0.03, 10) == 900

    def test_deterministic(self):
        cfg = ScenarioConfig(jitter_seed=11)
        s = SimulationSettings(horizon=0.5)
        a, b = simulate_scenario(cfg, settings=s), simulate_scenario(cfg, settings=s)
        assert np.array_equal(a.features, b.features)


class TestBuild:
    def test_shapes_and_fractions(self, small_build):
        ds = small_build.dataset
        assert ds.x.shape[1:] == (30, 30) and ds.flat().shape[1] == 900
        assert small_build.n_failed == 0
        assert 0.0 < small_build.unstable_fraction < 0.5
        assert 0.0 < small_build.unlabeled_fraction < 1.0

    def test_rules_mutually_exclusive(self, small_build):
        rules = LabelRules()
        u = small_build.u_record
        start = int(round(rules.settle / 0.01))
        stable = np.all(u[:, start:] >= rules.stable_floor, axis=(1, 2))
        unstable = np.all(u[:, -1] < rules.unstable_ceiling, axis=1)
        assert not np.any(stable & unstable)

    def test_energy_sanity_on_stable(self, small_build):
        stable = small_build.dataset.labels == 0
        assert stable.sum() > 10
        assert energy_sanity(small_build.u_record[stable], 0.01).all()

    def test_reproducible_csv(self, tmp_path):
        cfg = BuildConfig(target_count=100, seed=1, settings=SimulationSettings(horizon=1.5))
        h1 = write_csv(build_dataset(cfg).dataset, tmp_path / "a.csv")
        h2 = write_csv(build_dataset(cfg).dataset, tmp_path / "b.csv")
        assert h1 == h2
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_small_target_rejected(self):
        with pytest.raises(ConfigurationError):
            BuildConfig(target_count=50)

    def test_trajectory_store_round_trip(self, small_build, tmp_path):
        ds, u = small_build.dataset, small_build.u_record
        paths = write_trajectories(tmp_path, ds, u, 0.01, every=10)
        assert len(paths) == len(np.unique(ds.scenario_id))
        traj = read_trajectories(paths)
        assert len(traj) == len(ds)
        np.testing.assert_allclose(traj[ds.sample_id[0]], u[0, ::10], atol=5e-7)

    def test_labeling_features_range(self, small_build):
        f = labeling_features(small_build.u_record[:, ::10])
        assert f.shape == (len(small_build.dataset), 101 * 10)
        assert f.min() == 0.0 and f.max() == 1.0


def labelled(n_stable, n_unstable):
    x = np.zeros((n_stable + n_unstable, 1, 3))
    ref = np.r_[np.zeros(n_stable, int), np.ones(n_unstable, int)]
    return Dataset.from_arrays(x, ref, reference=ref)


class TestRatioAndSplit:
    def test_parse(self):
        assert parse_ratio("100:1") == 100.0
        for bad in ("1:100", "x", "3:0"):
            with pytest.raises(ConfigurationError):
                parse_ratio(bad)

    @pytest.mark.parametrize("ratio", [5, 10, 50, 100, 200])
    def test_ratio_exact_within_one(self, ratio):
        out = impose_ratio(labelled(5000, 400), ratio)
        n_s, n_u = np.sum(out.reference == 0), np.sum(out.reference == 1)
        assert abs(n_s - ratio * n_u) <= 1

    def test_ratio_subsamples_stable_when_short(self):
        out = impose_ratio(labelled(100, 400), 10)
        assert np.sum(out.reference == 0) == 100 and np.sum(out.reference == 1) == 10

    @settings(max_examples=30, deadline=None)
    @given(st.integers(5, 200), st.integers(5, 60), st.integers(0, 1000))
    def test_stratified_four_to_one(self, n0, n1, seed):
        labels = np.r_[np.zeros(n0, int), np.ones(n1, int)]
        test = stratified_split(labels, 0.2, seed)
        for k, n in ((0, n0), (1, n1)):
            assert np.sum(test & (labels == k)) == round(0.2 * n)


class TestNormalizer:
    def test_fit_on_train_only(self):
        rng = np.random.default_rng(0)
        train, test = rng.uniform(0, 1, (40, 5, 3)), rng.uniform(-3, 3, (10, 5, 3))
        norm = MinMaxNormalizer.fit(train)
        np.testing.assert_array_equal(norm.lo, train.min(axis=(0, 1)))
        np.testing.assert_array_equal(norm.hi, train.max(axis=(0, 1)))
        scaled = norm.transform(train)
        assert scaled.min() == 0.0 and scaled.max() == 1.0
        # test values outside the training range are not clipped
        assert norm.transform(test).min() < 0

    def test_round_trip(self):
        norm = MinMaxNormalizer.fit(np.arange(24.0).reshape(2, 4, 3))
        back = MinMaxNormalizer.from_dict(norm.to_dict())
        np.testing.assert_array_equal(back.lo, norm.lo)


class TestNoise:
    def test_huge_snr_is_identity(self):
        x = np.random.default_rng(0).uniform(0, 1, (5, 30, 6))
        assert np.max(np.abs(inject_noise(x, 300.0, np.random.default_rng(1)) - x)) < 1e-12

    def test_zero_db_on_unit_power(self):
        x = np.ones((200, 500, 2))
        noise = inject_noise(x, 0.0, np.random.default_rng(2)) - x
        assert noise.var() == pytest.approx(1.0, abs=0.01)

    @pytest.mark.parametrize("snr", [30.0, 40.0, 50.0])
    def test_empirical_snr(self, snr):
        rng = np.random.default_rng(3)
        x = rng.uniform(0.5, 1.5, (1000, 30, 3))
        noise = inject_noise(x, snr, rng) - x
        measured = 10 * np.log10(np.mean(x * x) / np.mean(noise * noise))
        assert abs(measured - snr) < 0.5

    def test_input_untouched_and_finite_required(self):
        x = np.ones((2, 3, 1))
        inject_noise(x, 10.0, np.random.default_rng(0))
        assert np.all(x == 1.0)
        with pytest.raises(ConfigurationError):
            inject_noise(x, float("inf"), np.random.default_rng(0))
