import numpy as np
import pytest

from wlopt import engine as eng
from wlopt.errors import (
    InvalidArgumentError,
    SingularSystemError,
    TrainingDivergedError,
)


class TestGenerateExcitation:
    def test_same_seed_identical(self):
        a = eng.generate_excitation(10.0, 0.1, 0.01, seed=7)
        b = eng.generate_excitation(10.0, 0.1, 0.01, seed=7)
        assert np.array_equal(a.u_f, b.u_f)
        assert np.array_equal(a.omega_e, b.omega_e)

    def test_piecewise_constant_between_boundaries(self):
        sig = eng.generate_excitation(10.0, 0.5, 0.01, seed=3)
        pulse_idx = np.floor(sig.times / 0.5 + 1e-12).astype(int)
        for channel in (sig.u_f, sig.omega_e):
            for i in range(pulse_idx.max() + 1):
                vals = channel[pulse_idx == i]
                assert np.all(vals == vals[0])

    def test_values_within_ranges(self):
        sig = eng.generate_excitation(
            30.0, 0.1, 0.01, seed=1, omega_range=(0.15, 1.0), fuel_range=(0.0, 1.0)
        )
        assert sig.u_f.min() >= 0.0 and sig.u_f.max() <= 1.0
        assert sig.omega_e.min() >= 0.15 and sig.omega_e.max() <= 1.0

    def test_single_pulse_two_equal_samples(self):
        sig = eng.generate_excitation(1.0, 1.0, 0.5, seed=0)
        assert len(sig.times) == 2
        assert sig.u_f[0] == sig.u_f[1]
        assert sig.omega_e[0] == sig.omega_e[1]

    @pytest.mark.parametrize(
        "duration,pulse,dt",
        [(-1.0, 0.1, 0.01), (1.0, -0.1, 0.01), (1.0, 2.0, 0.01), (1.0, 0.1, 0.2), (1.0, 0.1, 0.0)],
    )
    def test_invalid_arguments(self, duration, pulse, dt):
        with pytest.raises(InvalidArgumentError):
            eng.generate_excitation(duration, pulse, dt, seed=0)


def constant_signal(omega, u_f, duration=30.0, dt=0.01):
    n = int(duration / dt)
    return eng.InputSignal(
        times=np.arange(n) * dt,
        u_f=np.full(n, u_f),
        omega_e=np.full(n, omega),
        pulse_width=duration,
    )


class TestTruthEngine:
    def test_zero_fuel_steady_state(self):
        # dp/dt = 0 at p = p_stat, so torque settles at the zero-fuel map value
        sig = constant_signal(0.18, 0.0)
        ds = eng.simulate_truth_engine(sig, noise_sigma=0.0)
        p_expected = eng.TRUTH_A1 * 0.18 + eng.TRUTH_A3
        t_expected = np.clip(
            eng.predict_torque(eng.TRUTH_TORQUE_WEIGHTS, 0.18, p_expected, 0.0),
            *eng.TORQUE_SATURATION,
        )
        assert abs(ds.p_im[-1] - p_expected) < 1e-6
        assert abs(ds.T_e[-1] - t_expected) < 1e-6

    def test_full_fuel_equilibrium_hits_saturation(self):
        # equilibrium map at u_f = 1 exceeds the torque ceiling -> clipped
        sig = constant_signal(0.18, 1.0)
        ds = eng.simulate_truth_engine(sig, noise_sigma=0.0)
        p_expected = eng.TRUTH_A1 * 0.18 + eng.TRUTH_A2 + eng.TRUTH_A3
        raw = eng.predict_torque(eng.TRUTH_TORQUE_WEIGHTS, 0.18, p_expected, 1.0)
        assert raw > eng.TORQUE_SATURATION[1]
        assert abs(ds.p_im[-1] - p_expected) < 1e-6
        assert abs(ds.T_e[-1] - eng.TORQUE_SATURATION[1]) < 1e-9

    def test_determinism(self):
        sig = eng.generate_excitation(5.0, 0.1, 0.01, seed=11)
        a = eng.simulate_truth_engine(sig, noise_sigma=0.01, seed=4)
        b = eng.simulate_truth_engine(sig, noise_sigma=0.01, seed=4)
        assert np.array_equal(a.T_e, b.T_e)
        assert np.array_equal(a.p_im, b.p_im)


class TestConcatSignals:
    def test_grid_continues_uniformly(self):
        a = eng.generate_excitation(1.0, 0.5, 0.1, seed=0)
        b = eng.generate_excitation(0.5, 0.5, 0.1, seed=1)
        joined = eng.concat_signals(a, b)
        assert len(joined.times) == len(a.times) + len(b.times)
        assert np.allclose(np.diff(joined.times), 0.1)
        assert np.array_equal(joined.u_f[: len(a.u_f)], a.u_f)
        assert np.array_equal(joined.u_f[len(a.u_f):], b.u_f)


def synthetic_linear_dataset(w_star, n, sigma, seed):
    rng = np.random.default_rng(seed)
    omega = rng.uniform(0.2, 1.0, n)
    p_im = rng.uniform(0.1, 1.2, n)
    u_f = rng.uniform(0.0, 1.0, n)
    te = w_star[0] + w_star[1] * omega + w_star[2] * p_im + w_star[3] * u_f
    if sigma > 0:
        te = te + rng.normal(0, sigma, n)
    return eng.EngineDataset(
        t=np.arange(n) * 0.01, omega_e=omega, p_im=p_im, u_f=u_f, T_e=te
    )


class TestTorqueFit:
    def test_exact_recovery(self):
        w_star = np.array([0.3, -1.2, 2.5, 0.7])
        ds = synthetic_linear_dataset(w_star, 500, 0.0, seed=0)
        w = eng.fit_torque_weights(ds)
        assert np.abs(w - w_star).max() < 1e-10

    def test_noisy_recovery(self):
        w_star = np.array([0.3, -1.2, 2.5, 0.7])
        ds = synthetic_linear_dataset(w_star, 4000, 0.01, seed=1)
        w = eng.fit_torque_weights(ds)
        assert np.abs(w - w_star).max() < 0.01

    def test_rank_deficient_names_column(self):
        n = 100
        rng = np.random.default_rng(2)
        omega = rng.uniform(0.2, 1.0, n)
        ds = eng.EngineDataset(
            t=np.arange(n) * 0.01,
            omega_e=omega,
            p_im=2.0 * omega,  # collinear with omega_e
            u_f=rng.uniform(0, 1, n),
            T_e=rng.uniform(0, 1, n),
        )
        with pytest.raises(SingularSystemError) as err:
            eng.fit_torque_weights(ds)
        assert err.value.column in ("omega_e", "p_im")

    def test_least_squares_optimality(self):
        w_star = np.array([0.3, -1.2, 2.5, 0.7])
        ds = synthetic_linear_dataset(w_star, 1000, 0.05, seed=3)
        w = eng.fit_torque_weights(ds)
        omega, p_im, u_f, te = ds.raw_columns()

        def ssr(weights):
            resid = te - eng.predict_torque(weights, omega, p_im, u_f)
            return float(np.sum(resid**2))

        base = ssr(w)
        for j in range(4):
            for delta in (1e-3, -1e-3):
                perturbed = w.copy()
                perturbed[j] += delta
                assert ssr(perturbed) >= base

    def test_too_few_rows(self):
        ds = synthetic_linear_dataset(np.ones(4), 3, 0.0, seed=0)
        with pytest.raises(InvalidArgumentError):
            eng.fit_torque_weights(ds)


class TestManifoldFit:
    def make_truth_dataset(self, duration=60.0, seed=0):
        short = eng.generate_excitation(
            duration, 0.1, 0.01, seed, omega_range=(0.15, 1.0), fuel_range=(0.0, 1.0)
        )
        long = eng.generate_excitation(
            duration / 2, 1.5, 0.01, seed + 1, omega_range=(0.15, 1.0), fuel_range=(0.0, 1.0)
        )
        return eng.simulate_truth_engine(eng.concat_signals(short, long), noise_sigma=0.0)

    def test_zero_epochs_returns_init(self):
        ds = self.make_truth_dataset(duration=5.0)
        fit = eng.fit_manifold_params(ds, epochs=0, init=0.1)
        assert fit.as_array()[:5].tolist() == [0.1] * 5

    def test_recovery_within_one_percent(self):
        # smaller dataset than the full protocol -> proportionally more epochs
        ds = self.make_truth_dataset()
        fit = eng.fit_manifold_params(ds, learning_rate=1.0, epochs=9000)
        truth = np.array([eng.TRUTH_A1, eng.TRUTH_A2, eng.TRUTH_A3, eng.TRUTH_TAU1, eng.TRUTH_TAU2])
        assert np.abs((fit.as_array() - truth) / truth).max() < 0.01

    def test_gradient_matches_finite_differences(self):
        ds = self.make_truth_dataset(duration=3.0)
        omega, p_im, u_f, _ = ds.raw_columns()
        dt = ds.t[1] - ds.t[0]
        rng = np.random.default_rng(5)
        h = 1e-6
        for _ in range(10):
            theta = np.array(
                [
                    rng.uniform(0.5, 3.5),
                    rng.uniform(0.1, 1.0),
                    rng.uniform(0.1, 1.0),
                    rng.uniform(1.0, 6.0),
                    rng.uniform(-0.3, 0.5),
                ]
            )
            _, grad = eng.manifold_loss_gradient(theta, omega, u_f, p_im, dt)
            for j in range(5):
                tp = theta.copy()
                tp[j] += h
                tm = theta.copy()
                tm[j] -= h
                lp, _ = eng.manifold_loss_gradient(tp, omega, u_f, p_im, dt)
                lm, _ = eng.manifold_loss_gradient(tm, omega, u_f, p_im, dt)
                fd = (lp - lm) / (2 * h)
                assert abs(grad[j] - fd) <= 1e-4 * max(abs(fd), 1e-12)

    def test_divergence_reports_epoch(self):
        # pressure magnitudes near the float ceiling overflow the updates
        n = 200
        ds = eng.EngineDataset(
            t=np.arange(n) * 0.01,
            omega_e=np.full(n, 0.5),
            p_im=np.logspace(1, 160, n),
            u_f=np.full(n, 0.5),
            T_e=np.zeros(n),
        )
        with pytest.raises(TrainingDivergedError) as err:
            eng.fit_manifold_params(ds, learning_rate=1e3, epochs=5)
        assert err.value.where >= 1

    def test_nonuniform_grid_rejected(self):
        ds = self.make_truth_dataset(duration=3.0)
        t = ds.t.copy()
        t[10] += 0.002
        bad = eng.EngineDataset(t=t, omega_e=ds.omega_e, p_im=ds.p_im, u_f=ds.u_f, T_e=ds.T_e)
        with pytest.raises(InvalidArgumentError):
            eng.fit_manifold_params(bad)

    def test_determinism(self):
        ds = self.make_truth_dataset(duration=10.0)
        a = eng.fit_manifold_params(ds, epochs=100)
        b = eng.fit_manifold_params(ds, epochs=100)
        assert a.as_array().tolist() == b.as_array().tolist()

    def test_early_stopping_on_flat_mae(self):
        # constant operating point: the residual collapses and the epoch-MAE
        # change falls below tolerance long before the epoch budget
        n = 500
        sig = eng.InputSignal(
            times=np.arange(n) * 0.01,
            u_f=np.full(n, 0.3),
            omega_e=np.full(n, 0.4),
            pulse_width=5.0,
        )
        ds = eng.simulate_truth_engine(sig, noise_sigma=0.0)
        fit = eng.fit_manifold_params(ds, learning_rate=2.0, epochs=5000)
        assert fit.epochs_used < 5000
        assert fit.final_mae < 1e-6


class TestMae:
    def test_identical_vectors(self):
        assert eng.mean_absolute_error([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_hand_value(self):
        assert eng.mean_absolute_error([1.0, 2.0], [0.0, 0.0]) == 1.5

    def test_length_mismatch(self):
        with pytest.raises(InvalidArgumentError):
            eng.mean_absolute_error([1.0], [1.0, 2.0])


class TestPredictTorque:
    def test_bias_at_origin(self):
        w = eng.TRUTH_TORQUE_WEIGHTS
        assert eng.predict_torque(w, 0.0, 0.0, 0.0) == -0.154712845456646

    def test_all_ones_is_weight_sum(self):
        w = eng.TRUTH_TORQUE_WEIGHTS
        assert abs(eng.predict_torque(w, 1.0, 1.0, 1.0) - w.sum()) < 1e-12
        assert abs(eng.predict_torque(w, 1.0, 1.0, 1.0) - 5.698208382) < 1e-9

    def test_zero_weights(self):
        assert eng.predict_torque(np.zeros(4), 0.3, 0.7, 0.9) == 0.0


class TestNormalizationAndIo:
    def test_normalized_columns_bounded(self):
        sig = eng.generate_excitation(
            20.0, 0.1, 0.01, seed=9, omega_range=(0.15, 1.0), fuel_range=(0.0, 1.0)
        )
        ds = eng.simulate_truth_engine(sig).normalize()
        for col in (ds.omega_e, ds.p_im, ds.u_f, ds.T_e):
            assert np.max(np.abs(col)) <= 1.0 + 1e-15

    def test_raw_columns_roundtrip(self):
        sig = eng.generate_excitation(5.0, 0.1, 0.01, seed=9)
        raw = eng.simulate_truth_engine(sig)
        norm = raw.normalize()
        for a, b in zip(raw.raw_columns(), norm.raw_columns()):
            assert np.allclose(a, b, rtol=1e-14)

    def test_dataset_csv_roundtrip(self, tmp_path):
        sig = eng.generate_excitation(2.0, 0.1, 0.01, seed=9)
        ds = eng.simulate_truth_engine(sig).normalize()
        path = tmp_path / "data.csv"
        eng.save_dataset_csv(ds, path)
        back = eng.load_dataset_csv(path, scales=ds.scales)
        assert np.allclose(back.omega_e, ds.omega_e, atol=1e-14)
        assert np.allclose(back.T_e, ds.T_e, atol=1e-14)
        header = path.read_text().splitlines()[0]
        assert header == "t,omega_e,p_im,u_f,T_e"

    def test_weights_json_roundtrip(self, tmp_path):
        path = tmp_path / "weights.json"
        eng.TRUTH_WEIGHTS.to_json(path)
        back = eng.EngineWeights.from_json(path)
        assert np.array_equal(back.w_te, eng.TRUTH_WEIGHTS.w_te)
        assert back.tau2 == eng.TRUTH_WEIGHTS.tau2

    def test_tau_p_operating_range_guard(self):
        # truth tau2 < 0: tau_p turns negative below omega_e ~ 0.118
        eng.TRUTH_WEIGHTS.validate_operating_range(0.15, 1.5)
        with pytest.raises(InvalidArgumentError):
            eng.TRUTH_WEIGHTS.validate_operating_range(0.05, 1.5)
