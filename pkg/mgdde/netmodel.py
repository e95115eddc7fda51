"""Star-connected microgrid network: nodal admittance, Kron reduction and real form

Node ordering is inverters ``0..n-1`` followed by the common load bus ``n``. Reactances are
evaluated once at the nominal frequency; the network is algebraic.
"""
import dataclasses
import enum
import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from mgdde.commgraph import CommGraph, ConsensusVariant
from mgdde.errors import DimensionError, NetworkError, ScenarioError

_logger = logging.getLogger(__name__)

# Reduction pivots with a smaller magnitude are treated as an open-circuit load bus
_DEGENERATE_PIVOT = 1e-300


class LoadInterpretation(str, enum.Enum):
    """How a configured load impedance relates to the per-phase network"""
    AS_GIVEN = 'as-given'
    PER_PHASE_EQUIVALENT = 'per-phase-equivalent'


@dataclass(frozen=True)
class LineSpec:
    """Series connection impedance of one inverter to the load bus"""
    resistance: float
    inductance: float

    def __post_init__(self):
        if self.resistance < 0 or self.inductance < 0:
            raise ScenarioError(f'line impedance must be non-negative: {self}')
        if self.resistance == 0 and self.inductance == 0:
            raise ScenarioError('line resistance and inductance cannot both be zero')


@dataclass(frozen=True)
class LoadSpec:
    """Shunt load at the common bus

    Under `LoadInterpretation.PER_PHASE_EQUIVALENT` the impedance is the per-phase element of a
    balanced three-phase bank, so the bank power is three times the per-phase circuit power."""
    impedance: complex
    interpretation: LoadInterpretation = LoadInterpretation.AS_GIVEN

    def __post_init__(self):
        if abs(self.impedance) == 0:
            raise ScenarioError('load impedance magnitude must be positive')

    @property
    def admittance(self) -> complex:
        return 1 / complex(self.impedance)

    @property
    def phase_divisor(self) -> int:
        return 3 if self.interpretation is LoadInterpretation.PER_PHASE_EQUIVALENT else 1


@dataclass(frozen=True)
class InverterParams:
    """Droop, filter and secondary gains of one inverter

    Attributes:
        k_p: frequency droop (rad/s/W)
        k_v: voltage droop (V/var)
        k_pr: restoration integral gain (W/s)
        omega_f: power measurement filter cut-off (rad/s)
        e_eq: voltage setpoint (V)
        q_eq: reactive power setpoint (var)
        omega_eq: frequency setpoint (rad/s)
        virtual_r: virtual resistance (ohm)
        virtual_l: virtual inductance (H)
        p_ref: fixed power reference used when no secondary control acts (W)"""
    k_p: float
    k_v: float
    k_pr: float
    omega_f: float
    e_eq: float
    q_eq: float
    omega_eq: float
    virtual_r: float = 0.0
    virtual_l: float = 0.0
    p_ref: float = 0.0

    def __post_init__(self):
        if self.k_p <= 0:
            raise ScenarioError(f'k_p must be positive, got {self.k_p}')
        if self.k_v < 0 or self.k_pr < 0:
            raise ScenarioError('k_v and k_pr must be non-negative')
        if self.omega_f <= 0:
            raise ScenarioError(f'omega_f must be positive, got {self.omega_f}')


@dataclass(frozen=True)
class NetworkSpec:
    """Declarative description of the islanded microgrid"""
    nominal_frequency: float
    inverters: Tuple[InverterParams, ...]
    lines: Tuple[LineSpec, ...]
    loads: Tuple[LoadSpec, ...] = ()
    graph: Optional[CommGraph] = None
    power_scale: Optional[float] = None
    consensus_variant: ConsensusVariant = ConsensusVariant.REFERENCE_TRACKING
    diffusion_constant: float = 0.0
    labels: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.inverters:
            raise ScenarioError('a network needs at least one inverter')
        if len(self.inverters) != len(self.lines):
            raise ScenarioError(f'{len(self.inverters)} inverters but {len(self.lines)} lines')
        if self.nominal_frequency <= 0:
            raise ScenarioError('nominal frequency must be positive')
        if self.graph is not None and self.graph.vertex_count != len(self.inverters):
            raise ScenarioError(
                f'communication graph has {self.graph.vertex_count} vertices for {len(self.inverters)} inverters')

    @property
    def size(self) -> int:
        return len(self.inverters)

    @property
    def scale(self) -> float:
        """Factor relating per-phase circuit power to the reported inverter power"""
        if self.power_scale is not None:
            return float(self.power_scale)
        return float(max((load.phase_divisor for load in self.loads), default=1))

    @property
    def load_admittance(self) -> complex:
        return complex(sum(load.admittance for load in self.loads))

    def with_loads(self, loads: Sequence[LoadSpec]) -> 'NetworkSpec':
        return dataclasses.replace(self, loads=tuple(loads))

    def gains(self, name: str) -> np.ndarray:
        """Return one per-inverter parameter as a vector, e.g. ``spec.gains('k_p')``"""
        return np.array([getattr(inverter, name) for inverter in self.inverters], dtype=float)


def connection_admittance(line: LineSpec, virtual_r: float, virtual_l: float, omega: float) -> complex:
    """Return the admittance of a line in series with the inverter's virtual impedance

    Examples:
        >>> connection_admittance(LineSpec(1.0, 0.0), 0.0, 0.0, 314.159)
        (1+0j)
    """
    if omega <= 0:
        raise NetworkError(f'reactances need a positive frequency, got {omega}')
    impedance = complex(line.resistance + virtual_r, omega * (line.inductance + virtual_l))
    if impedance == 0:
        raise NetworkError('singular element: connection impedance is zero')
    return 1 / impedance


def connection_admittances(spec: NetworkSpec) -> np.ndarray:
    return np.array([
        connection_admittance(line, inverter.virtual_r, inverter.virtual_l, spec.nominal_frequency)
        for inverter, line in zip(spec.inverters, spec.lines)
    ], dtype=complex)


def connection_resistances(spec: NetworkSpec) -> np.ndarray:
    return np.array([line.resistance + inverter.virtual_r for inverter, line in zip(spec.inverters, spec.lines)])


def build_nodal_admittance(spec: NetworkSpec) -> np.ndarray:
    """Return the (n+1)x(n+1) complex nodal admittance matrix with the load bus last"""
    branches = connection_admittances(spec)
    n = branches.size
    nodal = np.zeros((n + 1, n + 1), dtype=complex)
    nodal[np.arange(n), np.arange(n)] = branches
    nodal[:n, n] = -branches
    nodal[n, :n] = -branches
    nodal[n, n] = branches.sum() + spec.load_admittance
    return nodal


def kron_reduce(nodal: np.ndarray) -> np.ndarray:
    """Eliminate the last (zero-injection) node by its Schur complement

    Examples:
        >>> kron_reduce(np.array([[2, -2], [-2, 3]], dtype=complex))
        array([[0.66666667+0.j]])
    """
    nodal = np.asarray(nodal, dtype=complex)
    if nodal.ndim != 2 or nodal.shape[0] != nodal.shape[1] or nodal.shape[0] < 2:
        raise DimensionError(f'expected a square matrix of order >= 2, got shape {nodal.shape}')
    pivot = nodal[-1, -1]
    if abs(pivot) < _DEGENERATE_PIVOT:
        raise NetworkError('degenerate network: the load-bus self admittance Y_t is zero')
    return nodal[:-1, :-1] - np.outer(nodal[:-1, -1], nodal[-1, :-1]) / pivot


def to_real_form(admittance: np.ndarray) -> np.ndarray:
    """Return the interleaved (d, q) real matrix with 2x2 blocks [[G, -B], [B, G]]"""
    admittance = np.asarray(admittance, dtype=complex)
    conductance, susceptance = admittance.real, admittance.imag
    real = np.empty((2 * admittance.shape[0], 2 * admittance.shape[1]))
    real[0::2, 0::2] = conductance
    real[0::2, 1::2] = -susceptance
    real[1::2, 0::2] = susceptance
    real[1::2, 1::2] = conductance
    return real


def reduced_admittance(spec: NetworkSpec) -> np.ndarray:
    reduced = kron_reduce(build_nodal_admittance(spec))
    _logger.debug('Reduced admittance (%d inverters):\n%s', spec.size, reduced)
    return reduced


def load_bus_voltage(spec: NetworkSpec, voltages: np.ndarray) -> complex:
    """Recover the eliminated load-bus phasor from the inverter phasors"""
    branches = connection_admittances(spec)
    total = branches.sum() + spec.load_admittance
    return complex(branches @ np.asarray(voltages, dtype=complex) / total)


class PowerBalance(NamedTuple):
    """Active power terms in the reported (scaled) basis"""
    injected: float
    load: float
    losses: float

    @property
    def mismatch(self) -> float:
        return self.injected - self.load - self.losses


def power_balance(spec: NetworkSpec, voltages: np.ndarray) -> PowerBalance:
    """Compute injected power from the reduced network and load power plus losses from the full one"""
    voltages = np.asarray(voltages, dtype=complex)
    currents = reduced_admittance(spec) @ voltages
    injected = spec.scale * float(np.sum((voltages * currents.conj()).real))
    bus = load_bus_voltage(spec, voltages)
    branch_currents = connection_admittances(spec) * (voltages - bus)
    losses = spec.scale * float(np.sum(np.abs(branch_currents) ** 2 * connection_resistances(spec)))
    load = spec.scale * abs(bus) ** 2 * spec.load_admittance.real
    return PowerBalance(injected=injected, load=load, losses=losses)
