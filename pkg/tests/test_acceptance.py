"""End-to-end checks on the bundled scenarios"""
import cmath
from unittest import TestCase

import numpy as np
import numpy.testing as npt
import pytest
import scipy.linalg

from mgdde import Microgrid
from mgdde.cli import parse_config, scenario_file_name
from mgdde.linmodel import DdeSystem
from mgdde.spectrum import SweepParameter, characteristic_residual, dde_spectrum
from mgdde.timedomain import Engine, NonlinearPlant, Trajectory, compare_trajectories, peak_deviation

NOMINAL = 314.1592653589793
# Fixed step of the nonlinear reference runs
REFERENCE_STEP = 1e-3


def get_microgrid(name: str) -> Microgrid:
    return Microgrid(parse_config(scenario_file_name(name)))


def non_origin(eigenvalues: np.ndarray, threshold: float = 1e-4) -> np.ndarray:
    return eigenvalues[np.abs(eigenvalues) >= threshold]


def mean_deviation(trajectory: Trajectory, start: float) -> np.ndarray:
    """Return the per-inverter mean ``|omega - nominal|`` from ``start`` on"""
    return np.mean(np.abs(trajectory.group('omega')[trajectory.time >= start] - NOMINAL), axis=0)


class TestThreeInverterEquilibrium(TestCase):
    def test_power_sharing_and_restored_frequency(self):
        eq = get_microgrid('three_inverters').equilibrium()
        npt.assert_allclose(eq.p, np.full(3, 442.5), rtol=0.02)
        assert eq.omega == NOMINAL
        assert eq.magnitude[0] == pytest.approx(230.0, rel=1e-3)


class TestThreeInverterSpectrum(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.microgrid = get_microgrid('three_inverters')
        cls.system = cls.microgrid.system()

    def test_origin_eigenvalue(self):
        assert characteristic_residual(0.0, self.system) < 1e-8
        assert np.min(np.abs(scipy.linalg.eigvals(self.system.undelayed()))) < 1e-6

    def test_delay_sweep_stays_stable(self):
        values = np.linspace(0.0, 0.2, 21)
        results = self.microgrid.root_locus(SweepParameter.DELAY, values, order=20)
        assert [result.sweep_value for result in results] == values.tolist()
        for result in results:
            with self.subTest(t_d=result.sweep_value):
                remaining = non_origin(result.eigenvalues)
                assert remaining.size
                assert remaining.real.max() < 0
        undelayed = scipy.linalg.eigvals(self.system.undelayed())
        for value in results[0].eigenvalues:
            assert np.min(np.abs(undelayed - value)) < 1e-9

    def test_small_delay_matches_undelayed_spectrum(self):
        result = dde_spectrum(self.system.with_delay(1e-6), order=20, refine=True)
        undelayed = scipy.linalg.eigvals(self.system.undelayed())
        for value in undelayed:
            assert np.min(np.abs(result.eigenvalues - value)) < 1e-3
        for value in result.eigenvalues[result.eigenvalues.real > -1e4]:
            assert np.min(np.abs(undelayed - value)) < 1e-3

    def test_collocation_order_convergence(self):
        coarse = non_origin(dde_spectrum(self.system, order=20).eigenvalues)[:10]
        fine = non_origin(dde_spectrum(self.system, order=30).eigenvalues)
        for value in coarse:
            assert np.min(np.abs(fine - value)) < max(1e-6 * abs(value), 1e-8)


class TestScalarSpectrum(TestCase):
    def test_rightmost_pair(self):
        root = -0.3 + 1.3j
        for _iteration in range(50):
            root -= (root + cmath.exp(-root)) / (1 - cmath.exp(-root))
        result = dde_spectrum(DdeSystem(a=np.zeros((1, 1)), a_d=-np.ones((1, 1)), t_d=1.0), order=20)
        npt.assert_allclose(result.eigenvalues[:2], [root, root.conjugate()], atol=1e-6)


class TestLinearNonlinearAgreement(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.microgrid = get_microgrid('three_inverters')

    def test_load_step(self):
        for t_d in (0.02, 0.2):
            with self.subTest(t_d=t_d):
                linear = self.microgrid.simulate(Engine.DDE, t_d=t_d)
                nonlinear = self.microgrid.simulate(Engine.NONLINEAR, t_d=t_d, step=REFERENCE_STEP)
                peak = float(peak_deviation(nonlinear, NOMINAL, start=self.microgrid.config.timing.step_time).max())
                assert peak > 0
                report = compare_trajectories(linear, nonlinear, [f'omega_{i}' for i in range(1, 4)])
                for name, difference in report.items():
                    assert difference.max_abs < 0.02 * peak, name
                npt.assert_allclose(self.microgrid.restoration_error(linear), np.zeros(3), atol=1e-3)
                npt.assert_allclose(self.microgrid.restoration_error(nonlinear), np.zeros(3), atol=1e-3)


class TestLinearizationFidelity(TestCase):
    def test_second_order_residual_decay(self):
        microgrid = get_microgrid('three_inverters')
        spec = microgrid.network()
        eq = microgrid.equilibrium()
        system = microgrid.system()
        plant = NonlinearPlant(spec)
        base_state = plant.initial_state(eq)
        base = eq.small_signal_state()
        n = spec.size
        scales = np.concatenate((np.full(n, 0.01), np.full(n, 1.0), np.full(n, 10.0), np.zeros(n), np.full(n, 10.0)))
        rng = np.random.default_rng(2024)

        def _residual(direction: np.ndarray, delayed_direction: np.ndarray, epsilon: float) -> float:
            state = plant.state_from_small_signal(plant.small_signal_coordinates(base_state + epsilon * direction))
            delayed_p_av = eq.p_av + epsilon * delayed_direction
            nonlinear = plant.small_signal_rate(state, plant.derivative(state, delayed_p_av))
            deviation = plant.small_signal_coordinates(state) - base
            delayed = np.zeros_like(base)
            delayed[3 * n:4 * n] = epsilon * delayed_direction
            return float(np.linalg.norm(nonlinear - system.rhs(deviation, delayed)))

        for trial in range(10):
            with self.subTest(trial=trial):
                direction = scales * rng.normal(size=5 * n)
                delayed_direction = 10.0 * rng.normal(size=n)
                ratio = _residual(direction, delayed_direction, 0.5) / _residual(direction, delayed_direction, 0.25)
                assert 3.5 <= ratio <= 4.5


class TestTwelveInverters(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.microgrid = get_microgrid('twelve_inverters')

    def test_sixty_state_model(self):
        system = self.microgrid.system()
        assert system.dimension == 60
        assert system.inverter_count == 12

    def test_nonlinear_restoration(self):
        trajectory = self.microgrid.simulate(Engine.NONLINEAR, step=REFERENCE_STEP)
        npt.assert_allclose(self.microgrid.restoration_error(trajectory), np.zeros(12), atol=1e-3)

    def test_packet_loss_robustness(self):
        end_time = 6.0
        step_time = self.microgrid.config.timing.step_time
        settled = step_time + self.microgrid.config.t_d
        continuous = self.microgrid.simulate(Engine.NONLINEAR, step=REFERENCE_STEP, end_time=end_time)
        reference = float(peak_deviation(continuous, NOMINAL, start=step_time).max())
        lossless_comm = self.microgrid.config.comm_config(sample_rate=50.0, loss_probability=0.0)
        lossless = self.microgrid.simulate_sampled(lossless_comm, step=2e-3, end_time=end_time)
        lossless_deviation = mean_deviation(lossless, settled)
        for seed in range(5):
            with self.subTest(seed=seed):
                packet_log = []
                comm = self.microgrid.config.comm_config(sample_rate=50.0, loss_probability=1e-2, seed=seed)
                sampled = self.microgrid.simulate_sampled(comm, step=2e-3, end_time=end_time, packet_log=packet_log)
                lost = sum(not record.delivered for record in packet_log) / len(packet_log)
                assert 0.005 < lost < 0.02
                peak = float(peak_deviation(sampled, NOMINAL, start=step_time).max())
                assert abs(peak - reference) < 0.02 * reference
                npt.assert_allclose(mean_deviation(sampled, settled), lossless_deviation, rtol=0.1)
                npt.assert_allclose(self.microgrid.restoration_error(sampled),
                                    self.microgrid.restoration_error(lossless), atol=1e-3)


class TestFastLinks(TestCase):
    def test_matches_continuous_delay(self):
        microgrid = get_microgrid('three_inverters')
        end_time = 3.0
        continuous = microgrid.simulate(Engine.NONLINEAR, t_d=0.2, step=REFERENCE_STEP, end_time=end_time)
        comm = microgrid.config.comm_config(sample_rate=1000.0, delay=0.2, loss_probability=0.0)
        sampled = microgrid.simulate_sampled(comm, step=1e-4, end_time=end_time)
        step_time = microgrid.config.timing.step_time
        reference = peak_deviation(continuous, NOMINAL, start=step_time)
        npt.assert_allclose(peak_deviation(sampled, NOMINAL, start=step_time), reference,
                            atol=0.01 * float(reference.max()))
        npt.assert_allclose(mean_deviation(sampled, step_time + 0.2), mean_deviation(continuous, step_time + 0.2),
                            rtol=0.05)
