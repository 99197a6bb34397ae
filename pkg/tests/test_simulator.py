import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cfseq import simulator as sim


def make_params(**kw):
    base = dict(rho=0.1, K=100.0, beta_c=0.0, alpha_r=0.0, beta_r=0.0, subgroup=2)
    base.update(kw)
    return sim.PatientParams(**base)


class TestStepVolume:
    def test_fixed_point_at_capacity(self):
        p = make_params(K=50.0)
        assert sim.step_volume(50.0, 0.0, 0.0, p, 0.0) == 50.0

    def test_all_terms_off(self):
        p = make_params(rho=0.0)
        assert sim.step_volume(42.0, 3.0, 2.0, p, 0.0) == 42.0

    def test_hand_evaluated_growth(self):
        p = make_params(rho=0.1, K=np.e * 100.0)
        assert sim.step_volume(100.0, 0.0, 0.0, p, 0.0) == pytest.approx(110.0)

    def test_nonpositive_volume_rejected(self):
        with pytest.raises(ValueError):
            sim.step_volume(0.0, 0.0, 0.0, make_params(), 0.0)

    def test_floor_clamp(self):
        p = make_params(beta_c=1.0)
        v = sim.step_volume(10.0, 5.0, 0.0, p, 0.0)  # kill factor 5 > 1
        assert v == sim.VOLUME_FLOOR


class TestChemoConcentration:
    def test_dose_from_zero(self):
        assert sim.update_chemo_concentration(0.0, True) == 5.0

    def test_half_life_decay(self):
        assert sim.update_chemo_concentration(5.0, False) == 2.5

    def test_dose_on_top_of_decay(self):
        assert sim.update_chemo_concentration(5.0, True) == 7.5

    @given(st.floats(0, 100))
    def test_halves_exactly_without_dosing(self, c):
        assert sim.update_chemo_concentration(c, False) == c / 2


class TestDiameter:
    def test_reference_max_volume(self):
        assert sim.diameter_from_volume(1150.0) == pytest.approx(13.0, abs=0.06)

    def test_unit_radius(self):
        assert sim.diameter_from_volume(4 * np.pi / 3) == pytest.approx(2.0)

    def test_cube_root_scaling(self):
        d = sim.diameter_from_volume(1150.0)
        assert sim.diameter_from_volume(1150.0 / 8) == pytest.approx(d / 2)

    def test_roundtrip(self):
        v = 123.4
        assert sim.volume_from_diameter(sim.diameter_from_volume(v)) == pytest.approx(v)


class TestPolicy:
    def test_midpoint_half_probability(self):
        for gamma in (0.0, 1.0, 10.0):
            cfg = sim.SimConfig(gamma_c=gamma, gamma_r=gamma, n_patients=1)
            p_c, p_r = sim.treatment_probabilities(13.0 / 2, cfg)
            assert p_c == pytest.approx(0.5)
            assert p_r == pytest.approx(0.5)

    def test_reference_gamma10(self):
        cfg = sim.SimConfig(gamma_c=10.0, gamma_r=10.0, n_patients=1)
        p_c, _ = sim.treatment_probabilities(0.75 * 13.0, cfg)
        assert 0.920 <= p_c <= 0.925

    def test_reference_gamma1(self):
        cfg = sim.SimConfig(gamma_c=1.0, gamma_r=1.0, n_patients=1)
        p_c, _ = sim.treatment_probabilities(0.75 * 13.0, cfg)
        assert 0.560 <= p_c <= 0.563

    def test_monotone_in_diameter(self):
        cfg = sim.SimConfig(gamma_c=3.0, gamma_r=0.0, n_patients=1)
        ds = np.linspace(0, 13, 40)
        ps = [sim.treatment_probabilities(d, cfg)[0] for d in ds]
        assert all(b > a for a, b in zip(ps, ps[1:]))
        # gamma 0 arm stays at 0.5
        assert all(sim.treatment_probabilities(d, cfg)[1] == 0.5 for d in ds)


class TestPriors:
    def test_default_priors_load(self):
        priors = sim.load_priors()
        assert abs(sum(s.probability for s in priors.stages) - 1.0) < 1e-9
        assert set(priors.parameters) == {"rho", "K", "beta_c", "alpha_r", "beta_r"}

    def test_bad_stage_probabilities_rejected(self):
        priors = sim.load_priors()
        doc = priors.to_dict()
        doc["stages"][0]["probability"] += 0.1
        with pytest.raises(ValueError):
            sim.PriorConfig.from_dict(doc)

    def test_subgroup_mean_adjustment(self):
        priors = sim.load_priors()
        # constant-family sensitivities expose the mean adjustment exactly
        for name in ("beta_c", "alpha_r"):
            priors.parameters[name] = sim.PriorSpec("constant", mean=1.0)
        seen = {}
        rng = np.random.default_rng(0)
        while len(seen) < 3:
            p = sim.sample_patient_params(priors, rng)
            seen[p.subgroup] = p
        assert seen[2].beta_c == 1.0 and seen[2].alpha_r == 1.0
        assert seen[3].beta_c == pytest.approx(1.1)
        assert seen[1].alpha_r == pytest.approx(1.1)

    def test_sensitivities_nonnegative(self):
        priors = sim.load_priors()
        rng = np.random.default_rng(1)
        for _ in range(200):
            p = sim.sample_patient_params(priors, rng)
            assert min(p.beta_c, p.alpha_r, p.beta_r, p.rho) >= 0


class TestSimulateDataset:
    def test_determinism(self):
        cfg = sim.SimConfig(gamma_c=2, gamma_r=2, n_patients=20, seed=3)
        a = sim.simulate_dataset(cfg)
        b = sim.simulate_dataset(sim.SimConfig(gamma_c=2, gamma_r=2, n_patients=20, seed=3))
        for x, y in zip(a, b):
            assert np.array_equal(x.volumes, y.volumes)
            assert np.array_equal(x.treatments, y.treatments)

    def test_gamma0_marginal_rate(self):
        cfg = sim.SimConfig(gamma_c=0, gamma_r=0, n_patients=1700, seed=4,
                            max_timesteps=60)
        ds = sim.simulate_dataset(cfg)
        tr = np.concatenate([t.treatments for t in ds])
        n = len(tr)
        assert n >= 1e5
        se = 0.5 / np.sqrt(n)
        for arm in ("chemo", "radio"):
            labels = (sim.CHEMO, sim.CHEMO_RADIO) if arm == "chemo" else (sim.RADIO, sim.CHEMO_RADIO)
            rate = np.isin(tr, labels).mean()
            assert abs(rate - 0.5) < 3 * se

    def test_volumes_positive_and_finite(self):
        cfg = sim.SimConfig(gamma_c=8, gamma_r=8, n_patients=50, seed=5)
        for traj in sim.simulate_dataset(cfg):
            assert np.all(traj.volumes > 0)
            assert np.all(np.isfinite(traj.volumes))
            assert traj.length <= cfg.max_timesteps

    def test_high_gamma_conditional_chemo_rate(self):
        # large initial tumours so the big-diameter condition has support
        priors = sim.load_priors()
        for s in priors.stages:
            s.diameter_mean_cm = 11.0
            s.diameter_log_std = 0.05
            s.diameter_lower_cm, s.diameter_upper_cm = 9.0, 12.5
        priors.initial_diameter_bounds_cm = (9.0, 12.5)
        cfg = sim.SimConfig(gamma_c=10, gamma_r=10, n_patients=150, seed=6,
                            priors=priors)
        ds = sim.simulate_dataset(cfg)
        hits = total = 0
        for traj in ds:
            for t in range(traj.length):
                lo = max(0, t - cfg.diameter_window + 1)
                dbar = sim.diameter_from_volume(traj.volumes[lo:t + 1]).mean()
                if dbar > 0.75 * cfg.d_max:
                    total += 1
                    hits += traj.treatments[t] in (sim.CHEMO, sim.CHEMO_RADIO)
        assert total > 200
        assert hits / total > 0.85

    def test_death_truncates_trajectory(self):
        priors = sim.load_priors()
        for s in priors.stages:
            s.diameter_mean_cm = 12.5
            s.diameter_log_std = 0.01
            s.diameter_lower_cm, s.diameter_upper_cm = 12.0, 12.9
        priors.initial_diameter_bounds_cm = (12.0, 12.9)
        priors.parameters["rho"] = sim.PriorSpec("constant", mean=0.05)
        cfg = sim.SimConfig(gamma_c=0, gamma_r=0, n_patients=20, seed=7, priors=priors)
        ds = sim.simulate_dataset(cfg)
        assert any(t.length < cfg.max_timesteps for t in ds)


class TestCounterfactuals:
    @pytest.fixture(scope="class")
    def setup(self):
        cfg = sim.SimConfig(gamma_c=5, gamma_r=5, n_patients=30, seed=8)
        return cfg, sim.simulate_dataset(cfg)

    def test_factual_branch_exact(self, setup):
        cfg, ds = setup
        rng = np.random.default_rng(0)
        for _ in range(200):
            traj = ds[rng.integers(len(ds))]
            t = int(rng.integers(1, traj.length + 1))
            bs = sim.generate_counterfactuals(traj, t, 1, cfg)
            factual = int(traj.treatments[t - 1])
            assert bs.true_outcomes[factual] == traj.volumes[t]

    def test_tau3_plan_structure(self, setup):
        cfg, ds = setup
        bs = sim.generate_counterfactuals(ds[0], 1, 3, cfg)
        assert bs.plans.shape == (6, 3)
        for s in range(3):
            assert bs.plans[s, s] == sim.CHEMO
            assert bs.plans[3 + s, s] == sim.RADIO
        assert (bs.plans.astype(bool).sum(axis=1) == 1).all()

    def test_zero_sensitivity_branches_identical(self, setup):
        cfg, ds = setup
        traj = ds[0]
        traj2 = sim.Trajectory(patient_id=0, volumes=traj.volumes,
                               chemo_conc=traj.chemo_conc, treatments=traj.treatments,
                               noise=traj.noise, subgroup=traj.subgroup,
                               params=make_params(rho=traj.params.rho, K=traj.params.K))
        bs = sim.generate_counterfactuals(traj2, 2, 3, cfg)
        assert np.allclose(bs.true_outcomes, bs.true_outcomes[0])

    def test_shared_prefix_same_path(self, setup):
        # plans identical up to step s agree on the path through step s
        cfg, ds = setup
        traj = ds[1]
        plans = sim.timing_plans(4)
        p_late_chemo = plans[3]   # chemo at last step
        p_late_radio = plans[7]   # radio at last step
        path_a = sim.rollout_plan(traj, 1, p_late_chemo, cfg)
        path_b = sim.rollout_plan(traj, 1, p_late_radio, cfg)
        assert np.array_equal(path_a[:3], path_b[:3])

    def test_anchor_out_of_range(self, setup):
        cfg, ds = setup
        traj = ds[0]
        with pytest.raises(ValueError):
            sim.generate_counterfactuals(traj, traj.length, 2, cfg)

    def test_branch_set_count(self, setup):
        cfg, ds = setup
        tau = 3
        sets = sim.branch_sets_for_dataset(ds[:5], tau, cfg)
        expected = sum(max(0, t.length - tau + 1) for t in ds[:5])
        assert len(sets) == expected


class TestPersistence:
    def test_dataset_csv_roundtrip(self, tmp_path):
        cfg = sim.SimConfig(gamma_c=3, gamma_r=3, n_patients=10, seed=9)
        ds = sim.simulate_dataset(cfg)
        path = tmp_path / "ds.csv"
        sim.dataset_to_csv(ds, path)
        back = sim.dataset_from_csv(path)
        for a, b in zip(ds, back):
            assert np.array_equal(a.volumes, b.volumes)
            assert np.array_equal(a.chemo_conc, b.chemo_conc)
            assert np.array_equal(a.treatments, b.treatments)
            assert np.array_equal(a.noise, b.noise)
            assert a.subgroup == b.subgroup

    def test_branch_csv_roundtrip(self, tmp_path):
        cfg = sim.SimConfig(gamma_c=3, gamma_r=3, n_patients=5, seed=10)
        ds = sim.simulate_dataset(cfg)
        sets = sim.branch_sets_for_dataset(ds[:2], 3, cfg)
        path = tmp_path / "branches.csv"
        sim.branch_sets_to_csv(sets, path)
        back = sim.branch_sets_from_csv(path)
        assert len(back) == len(sets)
        for a, b in zip(sets, back):
            assert (a.patient_id, a.t, a.tau) == (b.patient_id, b.t, b.tau)
            assert np.array_equal(a.plans, b.plans)
            assert np.array_equal(a.true_outcomes, b.true_outcomes)

    def test_simconfig_json_roundtrip(self, tmp_path):
        cfg = sim.SimConfig(gamma_c=1.5, gamma_r=0.5, n_patients=7, seed=11)
        path = tmp_path / "cfg.json"
        path.write_text(__import__("json").dumps(cfg.to_dict()))
        back = sim.SimConfig.from_json(path)
        assert back.gamma_c == cfg.gamma_c and back.seed == cfg.seed
        assert back.priors.to_dict() == cfg.priors.to_dict()

    def test_invalid_config_field_named(self):
        with pytest.raises(ValueError, match="gamma_z"):
            sim.SimConfig.from_dict({"gamma_z": 1.0})
