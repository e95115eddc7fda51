"""Spectrum of the delayed system by pseudospectral collocation, root loci and delay margins"""
import concurrent.futures
import dataclasses
import enum
import logging
from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import tqdm

from mgdde.equilibrium import EquilibriumMode, equilibrium_mode_for, solve_equilibrium
from mgdde.errors import DimensionError, ScenarioError
from mgdde.linmodel import DdeSystem, build_dde_system
from mgdde.netmodel import NetworkSpec

_logger = logging.getLogger(__name__)

DEFAULT_ORDER = 20
ARTIFACT_THRESHOLD = 1e-6
ORIGIN_THRESHOLD = 1e-6
VALIDATION_WINDOW = 50.0
_REFINE_ITERATIONS = 20

SystemFactory = Callable[[float], DdeSystem]


def chebyshev_differentiation(order: int, interval: Tuple[float, float]) -> Tuple[np.ndarray, np.ndarray]:
    """Return Chebyshev-Gauss-Lobatto nodes on ``interval`` and their differentiation matrix

    Nodes run from the right end point to the left one.

    Examples:
        >>> nodes, d = chebyshev_differentiation(2, (-1.0, 1.0))
        >>> nodes.tolist()
        [1.0, 0.0, -1.0]
        >>> (d.round(12) + 0.0).tolist()
        [[1.5, -2.0, 0.5], [0.5, 0.0, -0.5], [-0.5, 2.0, -1.5]]
    """
    if order < 1:
        raise ScenarioError(f'collocation order must be at least 1, got {order}')
    lower, upper = interval
    if not upper > lower:
        raise ScenarioError(f'collocation interval must have positive length, got {interval}')
    index = np.arange(order + 1)
    # sin form keeps the nodes exactly symmetric
    x = np.sin(np.pi * (order - 2 * index) / (2 * order))
    weights = np.where((index == 0) | (index == order), 2.0, 1.0) * (-1.0)**index
    difference = x[:, None] - x[None, :] + np.eye(order + 1)
    d = np.outer(weights, 1.0 / weights) / difference
    d -= np.diag(d.sum(axis=1))
    half_length = (upper - lower) / 2
    return lower + half_length * (x + 1), d / half_length


def collocation_matrix(system: DdeSystem, order: int) -> np.ndarray:
    """Return the discretized generator of the solution operator on ``[-t_d, 0]``"""
    if system.t_d <= 0:
        raise ScenarioError('collocation needs a positive delay')
    m = system.dimension
    _nodes, d = chebyshev_differentiation(order, (-system.t_d, 0.0))
    generator = np.zeros(((order + 1) * m, (order + 1) * m))
    generator[:m, :m] = system.a
    generator[:m, order * m:] += system.a_d
    generator[m:, :] = np.kron(d[1:, :], np.eye(m))
    return generator


def characteristic_matrix(s: complex, system: DdeSystem) -> np.ndarray:
    """Return ``-sI + A + A_d·exp(-s·t_d)``"""
    return -s * np.eye(system.dimension) + system.a + system.a_d * np.exp(-s * system.t_d)


def characteristic_residual(s: complex, system: DdeSystem) -> float:
    """Return |det M(s)| normalized by the row norms of its entrywise magnitude bound

    The bound ``|s|I + |A| + |A_d|·|exp(-s·t_d)|`` makes the value dimension independent and at
    most one.

    Examples:
        >>> scalar = DdeSystem(a=np.zeros((1, 1)), a_d=-np.ones((1, 1)), t_d=1.0)
        >>> characteristic_residual(10.0, scalar) > 0.5
        True
    """
    bound = abs(s) * np.eye(system.dimension) + np.abs(system.a) + np.abs(system.a_d) * abs(
        np.exp(-s * system.t_d))
    norms = np.linalg.norm(bound, axis=1)
    if np.any(norms == 0):
        return 0.0
    sign, log_magnitude = np.linalg.slogdet(characteristic_matrix(s, system))
    if sign == 0:
        return 0.0
    return float(np.exp(log_magnitude - np.sum(np.log(norms))))


def refine_root(s: complex, system: DdeSystem, iterations: int = _REFINE_ITERATIONS) -> complex:
    """Polish a characteristic root with Newton steps ``s -= 1 / trace(M(s)^-1·M'(s))``"""
    identity = np.eye(system.dimension)
    for _iteration in range(iterations):
        matrix = characteristic_matrix(s, system)
        derivative = -identity - system.t_d * system.a_d * np.exp(-s * system.t_d)
        try:
            trace = np.trace(np.linalg.solve(matrix, derivative))
        except np.linalg.LinAlgError:
            break
        if trace == 0 or not np.isfinite(trace):
            break
        step = 1 / trace
        s -= step
        if abs(step) <= 1e-14 * max(1.0, abs(s)):
            break
    return complex(s)


@dataclass(frozen=True)
class SpectrumResult:
    """Validated eigenvalues of one delayed system, sorted by descending real part

    Attributes:
        eigenvalues: retained characteristic roots (rad/s)
        residuals: characteristic residual of each retained root
        order: collocation order
        t_d: delay (s)
        artifacts: discretization artifacts flagged near the rightmost root
        origin_threshold: magnitude below which a root is the structural origin mode
        sweep_value: swept parameter value when part of a root locus"""
    eigenvalues: np.ndarray
    residuals: np.ndarray
    order: int
    t_d: float
    artifacts: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))
    origin_threshold: float = ORIGIN_THRESHOLD
    sweep_value: Optional[float] = None

    @property
    def origin_mask(self) -> np.ndarray:
        return np.abs(self.eigenvalues) < self.origin_threshold

    @property
    def rightmost(self) -> Optional[complex]:
        """Rightmost root excluding the origin mode"""
        remaining = self.eigenvalues[~self.origin_mask]
        return complex(remaining[0]) if remaining.size else None

    @property
    def origin_magnitude(self) -> Optional[float]:
        origin = self.eigenvalues[self.origin_mask]
        return float(np.min(np.abs(origin))) if origin.size else None

    def rows(self) -> List[Tuple[float, float, float, float, bool]]:
        sweep_value = self.t_d if self.sweep_value is None else self.sweep_value
        mask = self.origin_mask
        return [(sweep_value, float(value.real), float(value.imag), float(residual), bool(origin))
                for value, residual, origin in zip(self.eigenvalues, self.residuals, mask)]


def _sorted(values: np.ndarray) -> np.ndarray:
    return values[np.lexsort((-values.imag, -values.real))]


def dde_spectrum(system: DdeSystem,
                 order: int = DEFAULT_ORDER,
                 refine: bool = False,
                 artifact_threshold: float = ARTIFACT_THRESHOLD,
                 origin_threshold: float = ORIGIN_THRESHOLD,
                 window: float = VALIDATION_WINDOW) -> SpectrumResult:
    """Approximate the rightmost characteristic roots of a delayed system

    Every candidate is checked against the characteristic equation. Candidates within ``window``
    of the rightmost one that fail the check are reported as artifacts; failing candidates further
    left are discarded.

    Args:
        system: the delayed system (a zero delay solves ``eig(A + A_d)`` directly)
        order: collocation order
        refine: polish every root by Newton iteration before validation
        artifact_threshold: largest accepted characteristic residual
        origin_threshold: magnitude below which a root is the origin mode
        window: width (rad/s) of the validated band left of the rightmost candidate

    Returns: the validated spectrum"""
    if system.t_d == 0:
        candidates = scipy.linalg.eigvals(system.undelayed())
    else:
        candidates = scipy.linalg.eigvals(collocation_matrix(system, order))
    candidates = _sorted(np.asarray(candidates, dtype=complex))
    if refine:
        candidates = _sorted(np.array([
            value if abs(value) < origin_threshold else refine_root(value, system) for value in candidates
        ], dtype=complex))
    residuals = np.array([characteristic_residual(value, system) for value in candidates])
    accepted = residuals < artifact_threshold
    near = candidates.real >= candidates[0].real - window if candidates.size else np.zeros(0, dtype=bool)
    artifacts = candidates[near & ~accepted]
    if artifacts.size:
        _logger.warning('%d discretization artifacts near the rightmost root (t_d = %g s, N = %d)', artifacts.size,
                        system.t_d, order)
    _logger.debug('Discarded %d unvalidated far-left candidates', int(np.sum(~near & ~accepted)))
    result = SpectrumResult(
        eigenvalues=candidates[accepted],
        residuals=residuals[accepted],
        order=order,
        t_d=system.t_d,
        artifacts=artifacts,
        origin_threshold=origin_threshold)
    _logger.info('Spectrum (t_d = %g s, N = %d): %d roots, rightmost %s, origin mode %s', system.t_d, order,
                 result.eigenvalues.size, result.rightmost, result.origin_magnitude)
    return result


class SweepParameter(str, enum.Enum):
    DELAY = 'delay'
    K_PR = 'kpr'
    K_P = 'kp'


def system_factory(spec: NetworkSpec, parameter: SweepParameter, t_d: float = 0.0,
                   mode: Optional[EquilibriumMode] = None) -> SystemFactory:
    """Return a callable building the delayed system for one value of the swept parameter

    Delay sweeps reuse one linearization; gain sweeps re-solve the operating point."""
    parameter = SweepParameter(parameter)
    if mode is None:
        mode = equilibrium_mode_for(spec)
    if parameter is SweepParameter.DELAY:
        base = build_dde_system(spec, solve_equilibrium(spec, mode), t_d)
        return base.with_delay

    name = 'k_pr' if parameter is SweepParameter.K_PR else 'k_p'

    def _factory(value: float) -> DdeSystem:
        inverters = tuple(dataclasses.replace(inverter, **{name: value}) for inverter in spec.inverters)
        swept = dataclasses.replace(spec, inverters=inverters)
        return build_dde_system(swept, solve_equilibrium(swept, mode), t_d)

    return _factory


def root_locus(factory: SystemFactory,
               values: Sequence[float],
               order: int = DEFAULT_ORDER,
               refine: bool = False,
               workers: int = 1,
               interactive: bool = False) -> List[SpectrumResult]:
    """Compute one spectrum per sweep value, in sweep order

    Args:
        factory: builds the system for a sweep value
        values: monotone sweep values
        order: collocation order
        refine: Newton-polish the roots
        workers: thread count for independent sweep points
        interactive: show a progress bar

    Returns: one `SpectrumResult` per value"""
    values = [float(value) for value in values]
    steps = np.diff(values)
    if steps.size and not (np.all(steps > 0) or np.all(steps < 0)):
        raise ScenarioError('sweep values must be strictly monotone')

    def _point(value: float) -> SpectrumResult:
        result = dde_spectrum(factory(value), order=order, refine=refine)
        return dataclasses.replace(result, sweep_value=value)

    with tqdm.tqdm(total=len(values), unit='point', disable=not interactive) as progress:
        if workers > 1:
            results: List[SpectrumResult] = []
            with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as executor:
                for result in executor.map(_point, values):
                    results.append(result)
                    progress.update()
        else:
            results = []
            for value in values:
                results.append(_point(value))
                progress.update()
    for result in results:
        _logger.debug('Rightmost root at %g: %s', result.sweep_value, result.rightmost)
    return results


class DelayCrossing(NamedTuple):
    t_d: float
    root: complex


def _is_stable(system: DdeSystem, order: int) -> Tuple[bool, Optional[complex]]:
    rightmost = dde_spectrum(system, order=order).rightmost
    return rightmost is None or rightmost.real < 0, rightmost


def find_delay_crossing(factory: SystemFactory,
                        lower: float,
                        upper: float,
                        order: int = DEFAULT_ORDER,
                        samples: int = 20,
                        tolerance: float = 1e-4) -> Optional[DelayCrossing]:
    """Return the smallest delay in ``[lower, upper]`` at which the rightmost root reaches the
    imaginary axis, or None when every sampled delay is stable

    The interval is scanned on ``samples`` points and the first stable-to-unstable change is bisected
    down to ``tolerance`` seconds."""
    if not upper > lower >= 0:
        raise ScenarioError(f'invalid delay interval [{lower}, {upper}]')
    if samples < 2:
        raise DimensionError('a delay scan needs at least two samples')
    grid = np.linspace(lower, upper, samples)
    stable, root = _is_stable(factory(grid[0]), order)
    if not stable:
        return DelayCrossing(t_d=float(grid[0]), root=root)
    previous = grid[0]
    for delay in grid[1:]:
        stable, root = _is_stable(factory(delay), order)
        if not stable:
            low, high = previous, delay
            while high - low > tolerance:
                middle = (low + high) / 2
                middle_stable, middle_root = _is_stable(factory(middle), order)
                if middle_stable:
                    low = middle
                else:
                    high, root = middle, middle_root
            _logger.info('Rightmost root crosses the imaginary axis at t_d = %.6g s', high)
            return DelayCrossing(t_d=float(high), root=root)
        previous = delay
    _logger.info('No imaginary-axis crossing for t_d in [%g, %g] s', lower, upper)
    return None
