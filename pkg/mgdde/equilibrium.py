"""Droop load flow: the operating point the small-signal model is linearized about"""
import enum
import logging
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
import scipy.linalg

from mgdde.commgraph import ConsensusVariant, adjacency_matrix, degree_matrix
from mgdde.errors import ConvergenceError, DimensionError, ScenarioError
from mgdde.netmodel import NetworkSpec, power_balance, reduced_admittance, to_real_form

_logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERATIONS = 50
DEFAULT_TOLERANCE = 1e-10
_MAX_HALVINGS = 12


class EquilibriumMode(str, enum.Enum):
    """Which steady state the load flow solves for"""
    PRIMARY = 'primary-only'
    SECONDARY = 'secondary-restored'


def equilibrium_mode_for(spec: NetworkSpec) -> EquilibriumMode:
    """Return the steady state a network settles to under its consensus law"""
    if spec.graph is not None and spec.consensus_variant is ConsensusVariant.REFERENCE_TRACKING:
        return EquilibriumMode.SECONDARY
    return EquilibriumMode.PRIMARY


@dataclass(frozen=True)
class EquilibriumPoint:
    """Per-inverter steady state of a droop-controlled network

    Voltages and currents are per-phase (d, q) components in the network frame; powers are in the
    reported basis (power scale applied)."""
    e_d: np.ndarray
    e_q: np.ndarray
    i_d: np.ndarray
    i_q: np.ndarray
    p: np.ndarray
    q: np.ndarray
    p_ref: np.ndarray
    omega: float
    iterations: int = 0
    residual: float = 0.0

    @property
    def size(self) -> int:
        return int(self.e_d.size)

    @property
    def p_av(self) -> np.ndarray:
        return self.p

    @property
    def q_av(self) -> np.ndarray:
        return self.q

    @property
    def voltages(self) -> np.ndarray:
        return self.e_d + 1j * self.e_q

    @property
    def currents(self) -> np.ndarray:
        return self.i_d + 1j * self.i_q

    @property
    def magnitude(self) -> np.ndarray:
        return np.abs(self.voltages)

    @property
    def delta(self) -> np.ndarray:
        return np.angle(self.voltages)

    def interleaved_voltages(self) -> np.ndarray:
        """Return ``[e_d1, e_q1, ..., e_dn, e_qn]``"""
        return np.column_stack((self.e_d, self.e_q)).ravel()

    def interleaved_currents(self) -> np.ndarray:
        return np.column_stack((self.i_d, self.i_q)).ravel()

    def small_signal_state(self) -> np.ndarray:
        """Return the operating point in linear-model coordinates ``[ω, e_d, e_q]*n, P_av, P_ref``"""
        primary = np.column_stack((np.full(self.size, self.omega), self.e_d, self.e_q)).ravel()
        return np.concatenate((primary, self.p_av, self.p_ref))

    def rows(self) -> List[Tuple[int, float, float, float, float, float, float, float]]:
        return [(index + 1, self.e_d[index], self.e_q[index], self.i_d[index], self.i_q[index], self.p[index],
                 self.q[index], self.p_ref[index]) for index in range(self.size)]


def power_injections(voltages: np.ndarray, admittance: np.ndarray,
                     scale: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Return active and reactive injections for interleaved (d, q) voltages

    ``admittance`` is either the complex reduced matrix or its real form. Reactive power follows
    ``p + jq = E·conj(I)``.

    Examples:
        >>> p, q = power_injections(np.array([230.0, 0.0]), np.array([[1 / 119]], dtype=complex))
        >>> round(float(p[0]), 2), float(q[0])
        (444.54, 0.0)
    """
    voltages = np.asarray(voltages, dtype=float)
    admittance = np.asarray(admittance)
    if np.iscomplexobj(admittance):
        admittance = to_real_form(admittance)
    if voltages.ndim != 1 or voltages.size % 2 or admittance.shape != (voltages.size, voltages.size):
        raise DimensionError(f'voltage vector of length {voltages.size} does not match admittance {admittance.shape}')
    currents = admittance @ voltages
    e_d, e_q = voltages[0::2], voltages[1::2]
    i_d, i_q = currents[0::2], currents[1::2]
    return scale * (e_d * i_d + e_q * i_q), scale * (e_q * i_d - e_d * i_q)


def _power_derivatives(admittance: np.ndarray, voltages: np.ndarray,
                       directions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    diag_voltages = np.diag(voltages)
    diag_currents = np.diag(admittance @ voltages)
    ds_dangle = 1j * diag_voltages @ np.conj(diag_currents - admittance @ diag_voltages)
    ds_dmagnitude = diag_voltages @ np.conj(admittance @ np.diag(directions)) + np.conj(diag_currents) @ np.diag(
        directions)
    return ds_dangle, ds_dmagnitude


def solve_equilibrium(spec: NetworkSpec,
                      mode: EquilibriumMode = EquilibriumMode.SECONDARY,
                      max_iterations: int = DEFAULT_MAX_ITERATIONS,
                      tolerance: float = DEFAULT_TOLERANCE) -> EquilibriumPoint:
    """Solve the droop load flow from a flat start

    In primary mode the unknowns are the angles of inverters 2..n, every voltage magnitude and the
    common frequency, with power references fixed at their configured values. In secondary mode the
    frequency is pinned at nominal and the power references become unknowns constrained by the
    consensus fixed point; the overdetermined but consistent system is solved by Gauss-Newton.

    Args:
        spec: the network, including the communication graph in secondary mode
        mode: which steady state to solve for
        max_iterations: Newton iteration limit
        tolerance: convergence threshold on the residual infinity norm

    Returns: the converged operating point

    Raises:
        ScenarioError: secondary mode without a valid communication graph
        ConvergenceError: no convergence within ``max_iterations``"""
    mode = EquilibriumMode(mode)
    n = spec.size
    admittance = reduced_admittance(spec)
    scale = spec.scale
    k_p, k_v = spec.gains('k_p'), spec.gains('k_v')
    e_eq, q_eq, omega_eq = spec.gains('e_eq'), spec.gains('q_eq'), spec.gains('omega_eq')
    nominal = spec.nominal_frequency
    secondary = mode is EquilibriumMode.SECONDARY
    if secondary:
        if spec.graph is None:
            raise ScenarioError('a secondary-restored equilibrium needs a communication graph')
        spec.graph.validate()
        adjacency, degree = adjacency_matrix(spec.graph), degree_matrix(spec.graph)

    def _unpack(x: np.ndarray):
        delta = np.concatenate(([0.0], x[:n - 1]))
        magnitude = x[n - 1:2 * n - 1]
        if secondary:
            return delta, magnitude, nominal, x[2 * n - 1:]
        return delta, magnitude, x[2 * n - 1], spec.gains('p_ref')

    def _residual(x: np.ndarray) -> np.ndarray:
        delta, magnitude, omega, p_ref = _unpack(x)
        voltages = magnitude * np.exp(1j * delta)
        power = scale * voltages * np.conj(admittance @ voltages)
        terms = [omega - omega_eq + k_p * (power.real - p_ref), magnitude - e_eq + k_v * (power.imag - q_eq)]
        if secondary:
            terms.append(degree @ p_ref - adjacency @ power.real)
        return np.concatenate(terms)

    def _jacobian(x: np.ndarray) -> np.ndarray:
        delta, magnitude, _omega, _p_ref = _unpack(x)
        directions = np.exp(1j * delta)
        ds_dangle, ds_dmagnitude = _power_derivatives(admittance, magnitude * directions, directions)
        ds_dangle, ds_dmagnitude = scale * ds_dangle[:, 1:], scale * ds_dmagnitude
        columns = 3 * n - 1 if secondary else 2 * n
        jacobian = np.zeros((3 * n if secondary else 2 * n, columns))
        jacobian[:n, :n - 1] = k_p[:, None] * ds_dangle.real
        jacobian[:n, n - 1:2 * n - 1] = k_p[:, None] * ds_dmagnitude.real
        jacobian[n:2 * n, :n - 1] = k_v[:, None] * ds_dangle.imag
        jacobian[n:2 * n, n - 1:2 * n - 1] = np.eye(n) + k_v[:, None] * ds_dmagnitude.imag
        if secondary:
            jacobian[:n, 2 * n - 1:] = -np.diag(k_p)
            jacobian[2 * n:, :n - 1] = -adjacency @ ds_dangle.real
            jacobian[2 * n:, n - 1:2 * n - 1] = -adjacency @ ds_dmagnitude.real
            jacobian[2 * n:, 2 * n - 1:] = degree
        else:
            jacobian[:n, 2 * n - 1] = 1.0
        return jacobian

    start = [np.zeros(n - 1), e_eq.copy()]
    start.append(spec.gains('p_ref') if secondary else np.array([nominal]))
    x = np.concatenate(start)
    point = _newton(_residual, _jacobian, x, max_iterations, tolerance, mode)
    return _build_point(spec, admittance, _unpack, *point)


def _newton(residual: Callable[[np.ndarray], np.ndarray], jacobian: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
            max_iterations: int, tolerance: float, mode: EquilibriumMode) -> Tuple[np.ndarray, int, float]:
    f = residual(x)
    norm = float(np.max(np.abs(f)))
    iteration = 0
    while norm >= tolerance:
        if iteration >= max_iterations:
            raise ConvergenceError(
                f'{mode.value} load flow did not converge in {max_iterations} iterations (residual {norm:.3e})',
                iterations=iteration, residual=f.tolist())
        iteration += 1
        step = scipy.linalg.lstsq(jacobian(x), -f)[0]
        length = 1.0
        for _halving in range(_MAX_HALVINGS):
            trial = x + length * step
            trial_f = residual(trial)
            trial_norm = float(np.max(np.abs(trial_f)))
            if np.isfinite(trial_norm) and trial_norm <= norm:
                break
            length /= 2
        x, f, norm = trial, trial_f, trial_norm
        _logger.debug('Load flow iteration %d: residual %.3e (step length %g)', iteration, norm, length)
    _logger.info('%s load flow converged in %d iterations (residual %.3e)', mode.value.capitalize(), iteration, norm)
    return x, iteration, norm


def _build_point(spec: NetworkSpec, admittance: np.ndarray, unpack, x: np.ndarray, iterations: int,
                 residual: float) -> EquilibriumPoint:
    delta, magnitude, omega, p_ref = unpack(x)
    voltages = magnitude * np.exp(1j * delta)
    currents = admittance @ voltages
    power = spec.scale * voltages * np.conj(currents)
    if _logger.isEnabledFor(logging.DEBUG):
        balance = power_balance(spec, voltages)
        _logger.debug('Power balance: injected %.6f W, load %.6f W, losses %.6f W', balance.injected, balance.load,
                      balance.losses)
    return EquilibriumPoint(
        e_d=voltages.real.copy(),
        e_q=voltages.imag.copy(),
        i_d=currents.real.copy(),
        i_q=currents.imag.copy(),
        p=power.real.copy(),
        q=power.imag.copy(),
        p_ref=np.array(p_ref, dtype=float),
        omega=float(omega),
        iterations=iterations,
        residual=residual)
