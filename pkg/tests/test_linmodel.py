import dataclasses
from unittest import TestCase

import numpy as np
import numpy.testing as npt
import pytest

from mgdde import Microgrid
from mgdde.cli import parse_config, scenario_file_name
from mgdde.commgraph import CommGraph, ConsensusVariant
from mgdde.equilibrium import EquilibriumMode, power_injections, solve_equilibrium
from mgdde.errors import DimensionError, ScenarioError, SingularityError
from mgdde.linmodel import (
    DdeSystem,
    assemble_full,
    assemble_primary,
    build_dde_system,
    consensus_law_variant,
    inverter_block,
    inverter_blocks,
    power_map,
    state_labels,
    trig_coeffs,
    voltage_selector,
)
from mgdde.netmodel import NetworkSpec, reduced_admittance


def get_three_inverter_network() -> NetworkSpec:
    return parse_config(scenario_file_name('three_inverters')).network_spec('pre')


class TestTrigCoefficients(TestCase):
    def test_quadrature_axis(self):
        coefficients = trig_coeffs(0.0, 230.0)
        assert coefficients.m_d == pytest.approx(-1 / 230)
        assert coefficients.m_q == 0.0
        assert coefficients.n_d == 0.0
        assert coefficients.n_q == 1.0

    def test_determinant_is_inverse_magnitude(self):
        coefficients = trig_coeffs(229.9, -0.4)
        assert coefficients.determinant == pytest.approx(-1 / abs(229.9 - 0.4j))

    def test_zero_voltage(self):
        with pytest.raises(SingularityError):
            trig_coeffs(0.0, 0.0)


class TestInverterBlock(TestCase):
    def test_block_shapes_and_inputs(self):
        spec = get_three_inverter_network()
        block = inverter_block(230.0, 0.0, spec.inverters[0])
        assert block.m.shape == (3, 3)
        assert block.b_s.shape == (3, 2)
        npt.assert_allclose(block.b_d.ravel(), [4e-4, 0.0, 0.0])
        npt.assert_allclose(block.b_r, block.b_d * spec.inverters[0].omega_f)
        assert block.b_s[0, 0] == pytest.approx(-4e-4 * spec.inverters[0].omega_f)

    def test_voltage_selector(self):
        selector = voltage_selector(2)
        npt.assert_array_equal(selector @ np.arange(6.0), [1.0, 2.0, 4.0, 5.0])


class TestPowerMap(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.spec = get_three_inverter_network()
        cls.eq = solve_equilibrium(cls.spec)
        cls.admittance = reduced_admittance(cls.spec)

    def test_matches_finite_differences(self):
        sensitivity = power_map(self.eq, self.admittance, self.spec.scale)
        assert sensitivity.shape == (6, 9)
        rng = np.random.default_rng(3)
        selector = voltage_selector(3)
        for _trial in range(5):
            direction = rng.normal(size=9)
            step = 1e-3 * selector @ direction
            voltages = self.eq.interleaved_voltages()
            upper = power_injections(voltages + step, self.admittance, self.spec.scale)
            lower = power_injections(voltages - step, self.admittance, self.spec.scale)
            expected = np.column_stack(((upper[0] - lower[0]) / 2, (upper[1] - lower[1]) / 2)).ravel()
            npt.assert_allclose(sensitivity @ (1e-3 * direction), expected, rtol=1e-6, atol=1e-9)

    def test_frequency_columns_are_zero(self):
        npt.assert_array_equal(power_map(self.eq, self.admittance)[:, 0::3], np.zeros((6, 3)))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            power_map(self.eq, np.eye(2, dtype=complex))


class TestAssembly(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.spec = get_three_inverter_network()
        cls.eq = solve_equilibrium(cls.spec)
        cls.system = build_dde_system(cls.spec, cls.eq, 0.02)

    def test_shapes_and_labels(self):
        assert self.system.a.shape == (15, 15)
        assert self.system.a_d.shape == (15, 15)
        assert self.system.labels == tuple(state_labels(3))
        assert self.system.inverter_count == 3
        assert self.system.t_d == 0.02

    def test_delayed_matrix_acts_on_averaged_power_only(self):
        columns = np.abs(self.system.a_d).sum(axis=0)
        assert np.all(columns[9:12] > 0)
        npt.assert_array_equal(np.delete(columns, np.s_[9:12]), np.zeros(12))

    def test_filter_rows(self):
        omega_f = self.spec.gains('omega_f')
        npt.assert_allclose(np.diag(self.system.a)[9:12], -omega_f)

    def test_reference_tracking_law(self):
        npt.assert_allclose(self.system.a[12:15, 12:15], -5.0 * np.diag([1.0, 2.0, 1.0]))
        npt.assert_allclose(self.system.a_d[12:15, 9:12], 5.0 * np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]))

    def test_zero_restoration_gain_removes_delay(self):
        inverters = tuple(dataclasses.replace(inverter, k_pr=0.0) for inverter in self.spec.inverters)
        spec = dataclasses.replace(self.spec, inverters=inverters)
        system = build_dde_system(spec, solve_equilibrium(spec), 0.2)
        npt.assert_array_equal(system.a_d, np.zeros((15, 15)))

    def test_average_variant(self):
        spec = dataclasses.replace(self.spec, consensus_variant=ConsensusVariant.AVERAGE, diffusion_constant=2.0)
        system = build_dde_system(spec, solve_equilibrium(spec, EquilibriumMode.PRIMARY), 0.02)
        npt.assert_allclose(system.a[12:15, 9:12], -2.0 * np.diag([1.0, 2.0, 1.0]))
        npt.assert_array_equal(system.a[12:15, 12:15], np.zeros((3, 3)))
        npt.assert_allclose(system.a_d[12:15, 9:12], 2.0 * np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]))

    def test_needs_graph(self):
        with pytest.raises(ScenarioError):
            build_dde_system(dataclasses.replace(self.spec, graph=None), self.eq, 0.02)

    def test_graph_size_mismatch(self):
        admittance = reduced_admittance(self.spec)
        a_prim, b_r, b_d = assemble_primary(inverter_blocks(self.spec, self.eq), admittance, self.eq, self.spec.scale)
        with pytest.raises(DimensionError):
            assemble_full(a_prim, b_r, b_d, CommGraph.bidirectional_chain(2), 5.0, 31.4, admittance, self.eq, 0.02)

    def test_twelve_inverters(self):
        microgrid = Microgrid(parse_config(scenario_file_name('twelve_inverters')))
        system = microgrid.system()
        assert system.dimension == 60
        assert system.t_d == 0.2


class TestConsensusLaw(TestCase):
    def test_per_inverter_gains(self):
        law = consensus_law_variant(CommGraph.bidirectional_chain(3), [1.0, 2.0, 3.0])
        npt.assert_allclose(law.delayed, [[0, 1, 0], [2, 0, 2], [0, 3, 0]])
        assert law.acts_on == 'p_ref'

    def test_wrong_gain_count(self):
        with pytest.raises(DimensionError):
            consensus_law_variant(CommGraph.bidirectional_chain(3), [1.0, 2.0])


class TestDdeSystem(TestCase):
    def test_validation(self):
        cases = (
            (DimensionError, dict(a=np.zeros((2, 3)), a_d=np.zeros((2, 3)), t_d=0.1)),
            (DimensionError, dict(a=np.zeros((2, 2)), a_d=np.zeros((3, 3)), t_d=0.1)),
            (DimensionError, dict(a=np.zeros((2, 2)), a_d=np.zeros((2, 2)), t_d=0.1, labels=('x', ))),
            (ScenarioError, dict(a=np.zeros((2, 2)), a_d=np.zeros((2, 2)), t_d=-0.1)),
        )
        for error, arguments in cases:
            with self.subTest(arguments=arguments):
                with pytest.raises(error):
                    DdeSystem(**arguments)

    def test_with_delay_and_rhs(self):
        system = DdeSystem(a=np.eye(2), a_d=2 * np.eye(2), t_d=0.1)
        delayed = system.with_delay(0.3)
        assert delayed.t_d == 0.3
        assert system.t_d == 0.1
        npt.assert_array_equal(system.rhs(np.ones(2), np.ones(2)), [3.0, 3.0])
        npt.assert_array_equal(system.undelayed(), 3 * np.eye(2))
        assert system.inverter_count is None
