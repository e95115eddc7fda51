import dataclasses
from unittest import TestCase

import numpy as np
import numpy.testing as npt
import pytest

from mgdde.cli import parse_config, scenario_file_name
from mgdde.commgraph import CommGraph, ConsensusVariant
from mgdde.equilibrium import EquilibriumMode, equilibrium_mode_for, power_injections, solve_equilibrium
from mgdde.errors import ConvergenceError, DimensionError, ScenarioError
from mgdde.netmodel import NetworkSpec, power_balance, reduced_admittance

NOMINAL = 314.1592653589793


def get_three_inverter_network(stage: str = 'pre') -> NetworkSpec:
    return parse_config(scenario_file_name('three_inverters')).network_spec(stage)


class TestSecondaryEquilibrium(TestCase):
    @classmethod
    def setUpClass(cls):
        cls.spec = get_three_inverter_network()
        cls.eq = solve_equilibrium(cls.spec, EquilibriumMode.SECONDARY)

    def test_restored_frequency(self):
        assert self.eq.omega == NOMINAL

    def test_equal_power_sharing(self):
        npt.assert_allclose(self.eq.p, np.full(3, 442.5), rtol=0.02)
        npt.assert_allclose(self.eq.p, np.full(3, self.eq.p[0]), rtol=1e-9)
        npt.assert_allclose(self.eq.p_ref, self.eq.p, rtol=1e-9)

    def test_voltages(self):
        assert self.eq.magnitude[0] == pytest.approx(230.0, rel=1e-3)
        assert self.eq.delta[0] == 0.0
        npt.assert_allclose(self.eq.magnitude[1:], 229.99, rtol=1e-3)
        npt.assert_allclose(self.eq.delta[1:], -0.0018, atol=1e-3)
        assert np.all(self.eq.delta[1:] < 0)
        assert self.eq.magnitude[1] == pytest.approx(self.eq.magnitude[2], rel=1e-12)

    def test_droop_laws_hold(self):
        npt.assert_allclose(self.eq.magnitude - 230.0 + 5e-4 * self.eq.q, np.zeros(3), atol=1e-9)

    def test_power_balance(self):
        balance = power_balance(self.spec, self.eq.voltages)
        assert balance.injected == pytest.approx(float(self.eq.p.sum()), rel=1e-12)
        assert abs(balance.mismatch) < 1e-6

    def test_currents_match_network(self):
        npt.assert_allclose(self.eq.currents, reduced_admittance(self.spec) @ self.eq.voltages, rtol=1e-12)

    def test_small_signal_state_layout(self):
        state = self.eq.small_signal_state()
        assert state.shape == (15, )
        npt.assert_array_equal(state[0:9:3], np.full(3, NOMINAL))
        npt.assert_array_equal(state[1:9:3], self.eq.e_d)
        npt.assert_array_equal(state[9:12], self.eq.p_av)
        npt.assert_array_equal(state[12:15], self.eq.p_ref)

    def test_rows(self):
        rows = self.eq.rows()
        assert [row[0] for row in rows] == [1, 2, 3]
        assert rows[1][5] == self.eq.p[1]


class TestPrimaryEquilibrium(TestCase):
    def test_frequency_droops(self):
        spec = get_three_inverter_network()
        eq = solve_equilibrium(spec, EquilibriumMode.PRIMARY)
        assert eq.omega < NOMINAL
        npt.assert_allclose(eq.omega - NOMINAL + 4e-4 * eq.p, np.zeros(3), atol=1e-9)
        npt.assert_array_equal(eq.p_ref, np.zeros(3))

    def test_without_graph(self):
        spec = dataclasses.replace(get_three_inverter_network(), graph=None)
        assert equilibrium_mode_for(spec) is EquilibriumMode.PRIMARY
        eq = solve_equilibrium(spec, EquilibriumMode.PRIMARY)
        assert eq.size == 3

    def test_post_step_load_raises_power(self):
        pre = solve_equilibrium(get_three_inverter_network('pre'))
        post = solve_equilibrium(get_three_inverter_network('post'))
        assert np.all(post.p > 1.9 * pre.p)


class TestSymmetricCases(TestCase):
    def test_open_circuit(self):
        spec = get_three_inverter_network().with_loads(())
        eq = solve_equilibrium(spec, EquilibriumMode.SECONDARY)
        assert eq.omega == NOMINAL
        npt.assert_allclose(eq.p, np.zeros(3), atol=1e-6)
        npt.assert_allclose(eq.q, np.zeros(3), atol=1e-6)
        npt.assert_allclose(eq.magnitude, np.full(3, 230.0), atol=1e-6)

    def test_identical_inverters_share_equally(self):
        spec = get_three_inverter_network()
        pair = dataclasses.replace(spec, inverters=spec.inverters[1:], lines=spec.lines[1:],
                                   graph=CommGraph.bidirectional_chain(2))
        for mode in EquilibriumMode:
            with self.subTest(mode=mode):
                eq = solve_equilibrium(pair, mode)
                assert eq.p[0] > 0
                assert eq.p[1] == pytest.approx(eq.p[0], rel=1e-9)
                assert eq.magnitude[1] == pytest.approx(eq.magnitude[0], rel=1e-12)


class TestEquilibriumErrors(TestCase):
    def test_secondary_without_graph(self):
        spec = dataclasses.replace(get_three_inverter_network(), graph=None)
        with pytest.raises(ScenarioError):
            solve_equilibrium(spec, EquilibriumMode.SECONDARY)

    def test_no_convergence(self):
        with pytest.raises(ConvergenceError) as error:
            solve_equilibrium(get_three_inverter_network(), max_iterations=0)
        assert error.value.iterations == 0
        assert len(error.value.residual) == 9

    def test_mode_from_variant(self):
        spec = get_three_inverter_network()
        assert equilibrium_mode_for(spec) is EquilibriumMode.SECONDARY
        average = dataclasses.replace(spec, consensus_variant=ConsensusVariant.AVERAGE)
        assert equilibrium_mode_for(average) is EquilibriumMode.PRIMARY


class TestPowerInjections(TestCase):
    def test_complex_and_real_form_agree(self):
        admittance = reduced_admittance(get_three_inverter_network())
        voltages = np.array([230.0, 0.0, 229.9, -0.4, 229.9, -0.3])
        p_complex, q_complex = power_injections(voltages, admittance, scale=3.0)
        phasors = voltages[0::2] + 1j * voltages[1::2]
        power = 3.0 * phasors * np.conj(admittance @ phasors)
        npt.assert_allclose(p_complex, power.real, rtol=1e-12)
        npt.assert_allclose(q_complex, power.imag, rtol=1e-10, atol=1e-9)

    def test_mismatched_dimensions(self):
        with pytest.raises(DimensionError):
            power_injections(np.zeros(4), np.eye(3, dtype=complex))
