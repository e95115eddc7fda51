"""Time-domain engines: method-of-steps integration of the delayed linear system and the nonlinear
reference simulator of ideal droop-controlled voltage sources"""
import bisect
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.integrate
import tqdm
from scipy.interpolate import CubicSpline

from mgdde.commgraph import ConsensusVariant, adjacency_matrix, degree_matrix
from mgdde.equilibrium import EquilibriumPoint, equilibrium_mode_for, solve_equilibrium
from mgdde.errors import DimensionError, IntegrationError, ScenarioError
from mgdde.linmodel import DdeSystem, build_dde_system
from mgdde.netmodel import LoadSpec, NetworkSpec, PowerBalance, power_balance, reduced_admittance

_logger = logging.getLogger(__name__)

DEFAULT_REL_TOL = 1e-8
DEFAULT_ABS_TOL = 1e-10
DEFAULT_FIXED_STEP = 1e-4
DEFAULT_OUTPUT_STEP = 1e-3
# Delays needing more windows than this are integrated past the first breakpoints in one sweep
MAX_DELAY_WINDOWS = 10_000
_BREAKPOINT_WINDOWS = 6


class Engine:
    DDE = 'dde'
    NONLINEAR = 'nonlinear'
    SAMPLED = 'sampled'


@dataclass(frozen=True)
class HistoryFunction:
    """Constant initial function on ``[-t_d, 0]``"""
    value: np.ndarray

    def __post_init__(self):
        value = np.array(self.value, dtype=float).ravel()
        if not np.all(np.isfinite(value)):
            raise ScenarioError('history values must be finite')
        object.__setattr__(self, 'value', value)

    def __call__(self, _t: float) -> np.ndarray:
        return self.value


@dataclass(frozen=True)
class LoadStepScenario:
    """A load change at ``step_time`` on a network running until ``end_time``"""
    pre_loads: Tuple[LoadSpec, ...]
    post_loads: Tuple[LoadSpec, ...]
    step_time: float
    end_time: float

    def __post_init__(self):
        if self.step_time < 0:
            raise ScenarioError(f'step time must be non-negative, got {self.step_time}')
        if not self.end_time > self.step_time:
            raise ScenarioError(f'end time {self.end_time} must follow the step time {self.step_time}')
        object.__setattr__(self, 'pre_loads', tuple(self.pre_loads))
        object.__setattr__(self, 'post_loads', tuple(self.post_loads))


@dataclass(frozen=True)
class Trajectory:
    """Sampled evolution of one engine run

    Attributes:
        time: strictly increasing sample times (s)
        states: one row per sample, columns named by ``labels``
        engine: ``dde``, ``nonlinear`` or ``sampled``
        labels: state names
        channels: physical per-inverter signals ``omega_i``, ``p_av_i``, ``p_ref_i``"""
    time: np.ndarray
    states: np.ndarray
    engine: str
    labels: Tuple[str, ...] = ()
    channels: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        time = np.asarray(self.time, dtype=float)
        if time.ndim != 1 or time.size < 2:
            raise DimensionError('a trajectory needs at least two samples')
        if np.any(np.diff(time) <= 0):
            raise DimensionError('trajectory times must be strictly increasing')
        states = np.asarray(self.states, dtype=float)
        if states.shape[0] != time.size:
            raise DimensionError(f'{states.shape[0]} state rows for {time.size} samples')
        object.__setattr__(self, 'time', time)
        object.__setattr__(self, 'states', states)
        object.__setattr__(self, 'labels', tuple(self.labels))

    @property
    def channel_names(self) -> List[str]:
        return list(self.channels)

    def channel(self, name: str) -> np.ndarray:
        try:
            return self.channels[name]
        except KeyError as e:
            raise ScenarioError(f'unknown channel "{name}"; available: {", ".join(self.channels)}') from e

    def group(self, prefix: str) -> np.ndarray:
        """Return every ``<prefix>_i`` channel as columns, in inverter order"""
        names = [name for name in self.channels if name.rsplit('_', 1)[0] == prefix]
        names.sort(key=lambda name: int(name.rsplit('_', 1)[1]))
        return np.column_stack([self.channels[name] for name in names])

    def rows(self) -> Tuple[List[str], np.ndarray]:
        names = ['time'] + self.channel_names
        return names, np.column_stack([self.time] + [self.channels[name] for name in self.channel_names])


def _inverter_channels(physical: np.ndarray, n: int) -> Dict[str, np.ndarray]:
    channels: Dict[str, np.ndarray] = {}
    for i in range(n):
        channels[f'omega_{i + 1}'] = physical[:, 3 * i]
    for i in range(n):
        channels[f'p_av_{i + 1}'] = physical[:, 3 * n + i]
    for i in range(n):
        channels[f'p_ref_{i + 1}'] = physical[:, 4 * n + i]
    return channels


class _DenseHistory:
    """Piecewise dense output of an integration, searchable by time"""
    def __init__(self, initial: HistoryFunction):
        self._initial = initial
        self._starts: List[float] = []
        self._segments: List[Callable[[float], np.ndarray]] = []

    def append(self, start: float, segment: Callable[[float], np.ndarray]) -> None:
        self._starts.append(start)
        self._segments.append(segment)

    def __call__(self, t: float) -> np.ndarray:
        if t <= 0 or not self._segments:
            return self._initial(t)
        index = max(0, bisect.bisect_right(self._starts, t) - 1)
        # past the last segment the newest interpolant is extrapolated
        return self._segments[index](t)


def integrate_dde(system: DdeSystem,
                  phi: HistoryFunction,
                  t_end: float,
                  rel_tol: float = DEFAULT_REL_TOL,
                  abs_tol: float = DEFAULT_ABS_TOL,
                  output_step: Optional[float] = None,
                  offset: Optional[np.ndarray] = None,
                  max_windows: int = MAX_DELAY_WINDOWS,
                  interactive: bool = False) -> Trajectory:
    """Integrate ``ẋ = A·x(t) + A_d·x(t - t_d)`` from a constant history by the method of steps

    Each window of one delay length is integrated by an embedded Dormand-Prince pair; delayed
    values come from the dense output of earlier windows. When the delay is so short that
    ``t_end / t_d`` exceeds ``max_windows``, only the first breakpoints are stepped window by
    window and the rest is integrated in one sweep, reading the delayed state from the newest
    interpolant.

    Args:
        system: the delayed system
        phi: constant history (deviation coordinates)
        t_end: final time (s)
        rel_tol: relative local error tolerance
        abs_tol: absolute local error tolerance
        output_step: sample spacing of the returned trajectory (default ``t_end / 1000``)
        offset: operating point added to the deviations for the physical channels
        max_windows: window count above which the short-delay sweep is used
        interactive: show a progress bar

    Returns: the sampled `Trajectory` (states are deviations)

    Raises:
        IntegrationError: the step size underflowed"""
    if t_end <= 0:
        raise ScenarioError(f't_end must be positive, got {t_end}')
    if rel_tol <= 0 or abs_tol <= 0:
        raise ScenarioError('tolerances must be positive')
    if phi.value.size != system.dimension:
        raise DimensionError(f'history of length {phi.value.size} for a system of dimension {system.dimension}')
    t_d = system.t_d
    history = _DenseHistory(phi)
    if t_d == 0:
        undelayed = system.undelayed()
        fun = lambda _t, x: undelayed @ x  # noqa: E731
        bounds = [t_end]
    else:
        fun = lambda t, x: system.a @ x + system.a_d @ history(t - t_d)  # noqa: E731
        windows = math.ceil(t_end / t_d)
        if windows <= max_windows:
            bounds = [min((k + 1) * t_d, t_end) for k in range(windows)]
        else:
            _logger.debug('Delay %g s is short for a %g s run; sweeping after %d breakpoints', t_d, t_end,
                          _BREAKPOINT_WINDOWS)
            bounds = [(k + 1) * t_d for k in range(_BREAKPOINT_WINDOWS)] + [t_end]

    start, x = 0.0, phi.value.copy()
    steps = 0
    with tqdm.tqdm(total=len(bounds), unit='window', disable=not interactive) as progress:
        for bound in bounds:
            if bound <= start:
                continue
            solver = scipy.integrate.RK45(fun, start, x, bound, rtol=rel_tol, atol=abs_tol)
            while solver.status == 'running':
                message = solver.step()
                if solver.status == 'failed':
                    raise IntegrationError(f'integration failed at t = {solver.t:.6g} s: {message}')
                history.append(solver.t_old, solver.dense_output())
                steps += 1
            start, x = bound, solver.y
            progress.update()
    _logger.info('Integrated %d states to t = %g s in %d steps (t_d = %g s)', system.dimension, t_end, steps, t_d)

    if output_step is None:
        output_step = t_end / 1000
    time = _grid(t_end, output_step)
    states = np.vstack([history(t) for t in time])
    states[0] = phi.value
    channels: Dict[str, np.ndarray] = {}
    n = system.inverter_count
    if n is not None and offset is not None:
        channels = _inverter_channels(states + np.asarray(offset, dtype=float), n)
    return Trajectory(time=time, states=states, engine=Engine.DDE, labels=system.labels, channels=channels)


def _grid(t_end: float, step: float) -> np.ndarray:
    count = max(1, int(round(t_end / step)))
    return np.linspace(0.0, t_end, count + 1)


def load_step_dde(spec: NetworkSpec,
                  scenario: LoadStepScenario,
                  t_d: float,
                  rel_tol: float = DEFAULT_REL_TOL,
                  abs_tol: float = DEFAULT_ABS_TOL,
                  output_step: float = DEFAULT_OUTPUT_STEP,
                  interactive: bool = False) -> Trajectory:
    """Linear response to a load step, linearized about the post-step operating point

    The history is the pre-step operating point expressed as a deviation; the returned time axis
    starts at the step instant so it lines up with `simulate_nonlinear`."""
    pre_spec, post_spec = spec.with_loads(scenario.pre_loads), spec.with_loads(scenario.post_loads)
    mode = equilibrium_mode_for(spec)
    pre = solve_equilibrium(pre_spec, mode)
    post = solve_equilibrium(post_spec, mode)
    system = build_dde_system(post_spec, post, t_d)
    phi = HistoryFunction(pre.small_signal_state() - post.small_signal_state())
    trajectory = integrate_dde(system, phi, scenario.end_time - scenario.step_time, rel_tol=rel_tol, abs_tol=abs_tol,
                               output_step=output_step, offset=post.small_signal_state(), interactive=interactive)
    return Trajectory(time=trajectory.time + scenario.step_time, states=trajectory.states, engine=Engine.DDE,
                      labels=trajectory.labels, channels=trajectory.channels)


class DelayLine:
    """History of a vector signal sampled every ``step`` seconds, read back ``delay`` seconds late
    by cubic Lagrange interpolation

    Samples before the first push read as ``initial``.

    Examples:
        >>> line = DelayLine(delay=1.0, step=0.1, initial=np.zeros(1))
        >>> for index in range(20):
        ...     line.push(index, np.array([index * 0.1]))
        >>> round(float(line.read(1.55)[0]), 12)
        0.55
    """
    def __init__(self, delay: float, step: float, initial: np.ndarray):
        if step <= 0:
            raise ScenarioError(f'history step must be positive, got {step}')
        self.delay = delay
        self.step = step
        self._initial = np.array(initial, dtype=float)
        self._capacity = int(math.ceil(delay / step)) + 8
        self._buffer = np.tile(self._initial, (self._capacity, 1))
        self._latest = -1

    def push(self, index: int, value: np.ndarray) -> None:
        self._buffer[index % self._capacity] = value
        self._latest = index

    def _sample(self, index: int) -> np.ndarray:
        if index < 0:
            return self._initial
        if index > self._latest or index <= self._latest - self._capacity:
            raise IntegrationError(f'history sample {index} is outside the buffered range ending at {self._latest}')
        return self._buffer[index % self._capacity]

    def read(self, time: float) -> np.ndarray:
        position = (time - self.delay) / self.step
        base = math.floor(position)
        fraction = position - base
        if base + 2 > self._latest:
            base, fraction = self._latest - 2, position - (self._latest - 2)
        weights = (
            -fraction * (fraction - 1) * (fraction - 2) / 6,
            (fraction + 1) * (fraction - 1) * (fraction - 2) / 2,
            -(fraction + 1) * fraction * (fraction - 2) / 2,
            (fraction + 1) * fraction * (fraction - 1) / 6,
        )
        return sum(weight * self._sample(base + offset) for weight, offset in zip(weights, (-1, 0, 1, 2)))


class NonlinearPlant:
    """Ideal voltage sources behind droop laws with filtered power measurements on an algebraic network

    The state is ``[δ (n), E (n), P_av (n), Q_av (n), P_ref (n)]`` with δ measured in a frame rotating
    at the nominal frequency."""
    def __init__(self, spec: NetworkSpec, loads: Optional[Sequence[LoadSpec]] = None):
        self.spec = spec
        self.n = spec.size
        self.scale = spec.scale
        self.nominal = spec.nominal_frequency
        self.k_p, self.k_v, self.k_pr = spec.gains('k_p'), spec.gains('k_v'), spec.gains('k_pr')
        self.omega_f, self.omega_eq = spec.gains('omega_f'), spec.gains('omega_eq')
        self.e_eq, self.q_eq = spec.gains('e_eq'), spec.gains('q_eq')
        if spec.graph is not None:
            self.adjacency, self.degree = adjacency_matrix(spec.graph), degree_matrix(spec.graph)
        else:
            self.adjacency = self.degree = np.zeros((self.n, self.n))
        self.set_loads(spec.loads if loads is None else loads)

    def set_loads(self, loads: Sequence[LoadSpec]) -> None:
        self.loaded_spec = self.spec.with_loads(loads)
        self.admittance = reduced_admittance(self.loaded_spec)

    def split(self, state: np.ndarray) -> Tuple[np.ndarray, ...]:
        return tuple(np.asarray(state)[k * self.n:(k + 1) * self.n] for k in range(5))

    @staticmethod
    def labels(n: int) -> List[str]:
        return [f'{name}_{i}' for name in ('delta', 'e', 'p_av', 'q_av', 'p_ref') for i in range(1, n + 1)]

    def initial_state(self, eq: EquilibriumPoint) -> np.ndarray:
        return np.concatenate((eq.delta, eq.magnitude, eq.p_av, eq.q_av, eq.p_ref))

    def voltages(self, state: np.ndarray) -> np.ndarray:
        delta, magnitude = self.split(state)[:2]
        return magnitude * np.exp(1j * delta)

    def injections(self, state: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        voltages = self.voltages(state)
        power = self.scale * voltages * np.conj(self.admittance @ voltages)
        return power.real, power.imag

    def omega(self, state: np.ndarray) -> np.ndarray:
        _delta, _magnitude, p_av, _q_av, p_ref = self.split(state)
        return self.omega_eq - self.k_p * (p_av - p_ref)

    def reference_rate(self, state: np.ndarray, delayed_p_av: np.ndarray) -> np.ndarray:
        """Return ΔṖ_ref of the configured consensus law given the delayed averaged powers"""
        _delta, _magnitude, p_av, _q_av, p_ref = self.split(state)
        if self.spec.consensus_variant is ConsensusVariant.AVERAGE:
            return self.spec.diffusion_constant * (self.adjacency @ delayed_p_av - self.degree @ p_av)
        return self.k_pr * (self.adjacency @ delayed_p_av - self.degree @ p_ref)

    def derivative(self, state: np.ndarray, delayed_p_av: Optional[np.ndarray]) -> np.ndarray:
        """Return the state rate; ``delayed_p_av=None`` holds the power references constant"""
        _delta, _magnitude, p_av, q_av, _p_ref = self.split(state)
        p, q = self.injections(state)
        p_av_rate = self.omega_f * (p - p_av)
        q_av_rate = self.omega_f * (q - q_av)
        p_ref_rate = np.zeros(self.n) if delayed_p_av is None else self.reference_rate(state, delayed_p_av)
        return np.concatenate((self.omega(state) - self.nominal, -self.k_v * q_av_rate, p_av_rate, q_av_rate,
                               p_ref_rate))

    def power_balance(self, state: np.ndarray) -> PowerBalance:
        return power_balance(self.loaded_spec, self.voltages(state))

    def small_signal_coordinates(self, state: np.ndarray) -> np.ndarray:
        """Map a plant state to ``[ω, e_d, e_q]*n, P_av, P_ref``"""
        _delta, _magnitude, p_av, _q_av, p_ref = self.split(state)
        voltages = self.voltages(state)
        primary = np.column_stack((self.omega(state), voltages.real, voltages.imag)).ravel()
        return np.concatenate((primary, p_av, p_ref))

    def small_signal_rate(self, state: np.ndarray, rate: np.ndarray) -> np.ndarray:
        """Chain-rule rate of `small_signal_coordinates` along a plant state rate"""
        delta, magnitude = self.split(state)[:2]
        delta_rate, magnitude_rate, p_av_rate, _q_av_rate, p_ref_rate = self.split(rate)
        omega_rate = -self.k_p * (p_av_rate - p_ref_rate)
        e_d_rate = magnitude_rate * np.cos(delta) - magnitude * np.sin(delta) * delta_rate
        e_q_rate = magnitude_rate * np.sin(delta) + magnitude * np.cos(delta) * delta_rate
        primary = np.column_stack((omega_rate, e_d_rate, e_q_rate)).ravel()
        return np.concatenate((primary, p_av_rate, p_ref_rate))

    def state_from_small_signal(self, coordinates: np.ndarray) -> np.ndarray:
        """Inverse of `small_signal_coordinates` on the droop-consistent manifold

        The averaged reactive power follows from the voltage droop; the frequency coordinate is
        implied by the averaged and reference powers and is ignored."""
        n = self.n
        primary = np.asarray(coordinates[:3 * n]).reshape(n, 3)
        p_av, p_ref = coordinates[3 * n:4 * n], coordinates[4 * n:5 * n]
        voltages = primary[:, 1] + 1j * primary[:, 2]
        magnitude = np.abs(voltages)
        with np.errstate(divide='ignore', invalid='ignore'):
            q_av = np.where(self.k_v > 0, self.q_eq + (self.e_eq - magnitude) / self.k_v, 0.0)
        return np.concatenate((np.angle(voltages), magnitude, p_av, q_av, p_ref))


def rk4_step(rate: Callable[[float, np.ndarray], np.ndarray], t: float, state: np.ndarray,
              step: float) -> np.ndarray:
    k1 = rate(t, state)
    k2 = rate(t + step / 2, state + step / 2 * k1)
    k3 = rate(t + step / 2, state + step / 2 * k2)
    k4 = rate(t + step, state + step * k3)
    return state + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def check_step(t_d: float, step: float) -> None:
    if step <= 0:
        raise ScenarioError(f'fixed step must be positive, got {step}')
    if t_d > 0 and step > t_d / 10:
        raise ScenarioError(f'fixed step {step} s is too coarse for t_d = {t_d} s (needs step <= t_d / 10)')


def plant_trajectory(plant: NonlinearPlant, time: Sequence[float], states: Sequence[np.ndarray],
                     engine: str) -> Trajectory:
    states = np.vstack(states)
    n = plant.n
    omega = np.vstack([plant.omega(state) for state in states])
    channels: Dict[str, np.ndarray] = {}
    for i in range(n):
        channels[f'omega_{i + 1}'] = omega[:, i]
    for i in range(n):
        channels[f'p_av_{i + 1}'] = states[:, 2 * n + i]
    for i in range(n):
        channels[f'p_ref_{i + 1}'] = states[:, 4 * n + i]
    return Trajectory(time=np.asarray(time), states=states, engine=engine, labels=tuple(plant.labels(n)),
                      channels=channels)


def simulate_nonlinear(spec: NetworkSpec,
                       scenario: LoadStepScenario,
                       t_d: float,
                       step: float = DEFAULT_FIXED_STEP,
                       output_step: float = DEFAULT_OUTPUT_STEP,
                       initial: Optional[EquilibriumPoint] = None,
                       interactive: bool = False) -> Trajectory:
    """Simulate the nonlinear plant through a load step with a fixed-step fourth-order integrator

    The plant starts at the pre-step operating point (or ``initial``); delayed averaged powers are
    read from a `DelayLine` primed with that point. The reduced network is swapped at the grid step
    nearest ``scenario.step_time``.

    Raises:
        ScenarioError: the step is coarser than a tenth of the delay
        NetworkError: a reduced network is singular"""
    check_step(t_d, step)
    plant = NonlinearPlant(spec, scenario.pre_loads)
    if initial is None:
        initial = solve_equilibrium(plant.loaded_spec, equilibrium_mode_for(spec))
    state = plant.initial_state(initial)
    n = plant.n
    delay_line = DelayLine(t_d, step, state[2 * n:3 * n]) if t_d > 0 else None
    total = int(round(scenario.end_time / step))
    step_index = int(round(scenario.step_time / step))
    record_every = max(1, int(round(output_step / step)))

    def _rate(t: float, x: np.ndarray) -> np.ndarray:
        delayed = x[2 * n:3 * n] if delay_line is None else delay_line.read(t)
        return plant.derivative(x, delayed)

    time: List[float] = [0.0]
    states: List[np.ndarray] = [state]
    with tqdm.tqdm(total=total, unit='step', disable=not interactive, mininterval=0.5) as progress:
        for index in range(total):
            if index == step_index:
                plant.set_loads(scenario.post_loads)
            if delay_line is not None:
                delay_line.push(index, state[2 * n:3 * n])
            state = rk4_step(_rate, index * step, state, step)
            if not np.all(np.isfinite(state)):
                raise IntegrationError(f'nonlinear state diverged at t = {(index + 1) * step:.6g} s')
            if (index + 1) % record_every == 0 or index + 1 == total:
                time.append((index + 1) * step)
                states.append(state)
            progress.update()
    _logger.info('Nonlinear run: %d steps of %g s (t_d = %g s)', total, step, t_d)
    return plant_trajectory(plant, time, states, Engine.NONLINEAR)


class ChannelDifference(NamedTuple):
    max_abs: float
    rms: float


def compare_trajectories(a: Trajectory, b: Trajectory,
                         channels: Optional[Sequence[str]] = None) -> Dict[str, ChannelDifference]:
    """Resample ``b`` onto the samples of ``a`` inside their common time range and report per-channel
    differences

    Examples:
        >>> t = np.linspace(0.0, 1.0, 11)
        >>> a = Trajectory(t, np.zeros((11, 1)), 'dde', channels={'omega_1': np.ones(11)})
        >>> b = Trajectory(t, np.zeros((11, 1)), 'nonlinear', channels={'omega_1': np.ones(11) + 0.5})
        >>> compare_trajectories(a, b)['omega_1'].max_abs
        0.5
    """
    lower, upper = max(a.time[0], b.time[0]), min(a.time[-1], b.time[-1])
    if lower >= upper:
        raise DimensionError(f'trajectories do not overlap: [{a.time[0]}, {a.time[-1]}] and '
                             f'[{b.time[0]}, {b.time[-1]}]')
    names = list(channels) if channels is not None else [name for name in a.channel_names if name in b.channels]
    mask = (a.time >= lower) & (a.time <= upper)
    report: Dict[str, ChannelDifference] = {}
    for name in names:
        resampled = CubicSpline(b.time, b.channel(name))(a.time[mask])
        difference = a.channel(name)[mask] - resampled
        report[name] = ChannelDifference(max_abs=float(np.max(np.abs(difference))),
                                         rms=float(np.sqrt(np.mean(difference**2))))
    return report


def peak_deviation(trajectory: Trajectory, reference: float, prefix: str = 'omega',
                   start: Optional[float] = None) -> np.ndarray:
    """Return ``max |channel - reference|`` per inverter for the ``prefix`` channels after ``start``"""
    values = trajectory.group(prefix)
    if start is not None:
        values = values[trajectory.time >= start]
    return np.max(np.abs(values - reference), axis=0)
