"""Small-signal model: per-inverter blocks and the assembled delay-differential system

The state is ordered ``[ω_1, e_d1, e_q1, ..., ω_n, e_dn, e_qn, P_av1..P_avn, P_ref1..P_refn]``. The
delayed matrix only ever acts on the averaged-power columns.
"""
import dataclasses
import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from mgdde.commgraph import CommGraph, ConsensusVariant, adjacency_matrix, degree_matrix
from mgdde.equilibrium import EquilibriumPoint
from mgdde.errors import DimensionError, ScenarioError, SingularityError
from mgdde.netmodel import InverterParams, NetworkSpec, reduced_admittance, to_real_form

_logger = logging.getLogger(__name__)

# Voltage magnitudes (squared) below this are treated as a collapsed inverter
_MIN_SQUARED_MAGNITUDE = 1e-24

Gains = Union[float, Sequence[float], np.ndarray]


class TrigCoefficients(NamedTuple):
    m_d: float
    m_q: float
    n_d: float
    n_q: float

    @property
    def determinant(self) -> float:
        return self.m_d * self.n_q - self.m_q * self.n_d


def trig_coeffs(e_d: float, e_q: float) -> TrigCoefficients:
    """Return the coefficients mapping (Δe_d, Δe_q) to phase and magnitude deviations

    ``Δδ = m_d·Δe_d + m_q·Δe_q`` and ``ΔE = n_d·Δe_d + n_q·Δe_q``.

    Examples:
        >>> trig_coeffs(2.0, 0.0)
        TrigCoefficients(m_d=-0.0, m_q=0.5, n_d=1.0, n_q=0.0)
    """
    squared = e_d * e_d + e_q * e_q
    if squared < _MIN_SQUARED_MAGNITUDE:
        raise SingularityError(f'voltage magnitude is zero at (e_d={e_d}, e_q={e_q})')
    magnitude = math.sqrt(squared)
    return TrigCoefficients(m_d=-e_q / squared, m_q=e_d / squared, n_d=e_d / magnitude, n_q=e_q / magnitude)


@dataclass(frozen=True)
class InverterBlock:
    """Linearized droop and filter dynamics of one inverter around its operating point

    Attributes:
        m: 3x3 state matrix on (Δω, Δe_d, Δe_q)
        b_s: 3x2 input matrix on (Δp, Δq)
        b_r: 3x1 input on ΔP_ref
        b_d: 3x1 input on the ΔP_ref rate
        coefficients: the trigonometric coefficients used to build them"""
    m: np.ndarray
    b_s: np.ndarray
    b_r: np.ndarray
    b_d: np.ndarray
    coefficients: TrigCoefficients


def inverter_block(e_d: float, e_q: float, params: InverterParams) -> InverterBlock:
    """Build the block of one inverter at the voltage operating point ``(e_d, e_q)``

    Examples:
        >>> from mgdde.netmodel import InverterParams
        >>> params = InverterParams(k_p=4e-4, k_v=5e-4, k_pr=5.0, omega_f=31.4159, e_eq=230.0, q_eq=0.0,
        ...                         omega_eq=314.159)
        >>> block = inverter_block(230.0, 0.0, params)
        >>> float(block.m[0, 0]), bool(block.m[1, 0] == 0)
        (-31.4159, True)
    """
    coefficients = trig_coeffs(e_d, e_q)
    m_d, m_q, n_d, n_q = coefficients
    determinant = coefficients.determinant
    if abs(determinant) < np.finfo(float).tiny:
        raise SingularityError(f'singular inverter block at (e_d={e_d}, e_q={e_q})')
    omega_f, k_p, k_v = params.omega_f, params.k_p, params.k_v
    m = np.array([
        [-omega_f, 0.0, 0.0],
        [n_q / determinant, m_q * omega_f * n_d / determinant, m_q * omega_f * n_q / determinant],
        [-n_d / determinant, -m_d * omega_f * n_d / determinant, -m_d * omega_f * n_q / determinant],
    ])
    b_s = np.array([
        [-k_p * omega_f, 0.0],
        [0.0, k_v * m_q * omega_f / determinant],
        [0.0, -k_v * m_d * omega_f / determinant],
    ])
    b_d = np.array([[k_p], [0.0], [0.0]])
    return InverterBlock(m=m, b_s=b_s, b_r=omega_f * b_d, b_d=b_d, coefficients=coefficients)


def inverter_blocks(spec: NetworkSpec, eq: EquilibriumPoint) -> List[InverterBlock]:
    return [inverter_block(eq.e_d[i], eq.e_q[i], params) for i, params in enumerate(spec.inverters)]


def voltage_selector(n: int) -> np.ndarray:
    """Return K_e picking (Δe_d, Δe_q) of every inverter out of the primary state"""
    selector = np.zeros((2 * n, 3 * n))
    for i in range(n):
        selector[2 * i, 3 * i + 1] = 1.0
        selector[2 * i + 1, 3 * i + 2] = 1.0
    return selector


def power_map(eq: EquilibriumPoint, admittance: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Return the 2n x 3n map from the primary state to interleaved (Δp, Δq)"""
    real = to_real_form(admittance) if np.iscomplexobj(admittance) else np.asarray(admittance, dtype=float)
    n = eq.size
    if real.shape != (2 * n, 2 * n):
        raise DimensionError(f'admittance of shape {real.shape} does not match {n} inverters')
    current_blocks = []
    voltage_blocks = []
    for i in range(n):
        i_d, i_q, e_d, e_q = eq.i_d[i], eq.i_q[i], eq.e_d[i], eq.e_q[i]
        current_blocks.append(np.array([[i_d, i_q], [-i_q, i_d]]))
        voltage_blocks.append(np.array([[e_d, e_q], [e_q, -e_d]]))
    sensitivity = scipy.linalg.block_diag(*current_blocks) + scipy.linalg.block_diag(*voltage_blocks) @ real
    return scale * sensitivity @ voltage_selector(n)


def assemble_primary(blocks: Sequence[InverterBlock], admittance: np.ndarray, eq: EquilibriumPoint,
                     scale: float = 1.0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(A_prim, B_r, B_d)`` of the primary-level model with ΔP_ref as input"""
    if len(blocks) != eq.size:
        raise DimensionError(f'{len(blocks)} inverter blocks for an operating point of {eq.size} inverters')
    state = scipy.linalg.block_diag(*(block.m for block in blocks))
    inputs = scipy.linalg.block_diag(*(block.b_s for block in blocks))
    a_prim = state + inputs @ power_map(eq, admittance, scale)
    b_r = scipy.linalg.block_diag(*(block.b_r for block in blocks))
    b_d = scipy.linalg.block_diag(*(block.b_d for block in blocks))
    return a_prim, b_r, b_d


class ConsensusLaw(NamedTuple):
    """Linear secondary law ``ΔṖ_ref = local·Δ<acts_on>(t) + delayed·ΔP_av(t - t_d)``"""
    local: np.ndarray
    delayed: np.ndarray
    acts_on: str


def _as_diagonal(gains: Gains, n: int, name: str) -> np.ndarray:
    try:
        values = np.broadcast_to(np.asarray(gains, dtype=float), (n,))
    except ValueError as e:
        raise DimensionError(f'{name} needs {n} values') from e
    return np.diag(values)


def consensus_law_variant(graph: CommGraph, gains: Gains,
                          variant: ConsensusVariant = ConsensusVariant.REFERENCE_TRACKING) -> ConsensusLaw:
    """Return the local and delayed terms of the secondary law

    Reference tracking feeds back the local power reference; the average variant uses the
    diffusion constant ``C`` (passed as ``gains``) on the local averaged power.

    Examples:
        >>> chain = CommGraph.bidirectional_chain(3)
        >>> consensus_law_variant(chain, 5.0).local.diagonal().tolist()
        [-5.0, -10.0, -5.0]
    """
    n = graph.vertex_count
    diagonal = _as_diagonal(gains, n, 'consensus gains')
    local = -diagonal @ degree_matrix(graph)
    delayed = diagonal @ adjacency_matrix(graph)
    if ConsensusVariant(variant) is ConsensusVariant.AVERAGE:
        return ConsensusLaw(local=local, delayed=delayed, acts_on='p_av')
    return ConsensusLaw(local=local, delayed=delayed, acts_on='p_ref')


def state_labels(n: int) -> List[str]:
    """Return the state labels in model order

    Examples:
        >>> state_labels(1)
        ['omega_1', 'e_d_1', 'e_q_1', 'p_av_1', 'p_ref_1']
    """
    primary = [f'{name}_{i}' for i in range(1, n + 1) for name in ('omega', 'e_d', 'e_q')]
    return primary + [f'p_av_{i}' for i in range(1, n + 1)] + [f'p_ref_{i}' for i in range(1, n + 1)]


@dataclass(frozen=True)
class DdeSystem:
    """``ẋ(t) = A·x(t) + A_d·x(t - t_d)``"""
    a: np.ndarray
    a_d: np.ndarray
    t_d: float
    labels: Tuple[str, ...] = ()

    def __post_init__(self):
        a, a_d = np.asarray(self.a, dtype=float), np.asarray(self.a_d, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape != a_d.shape:
            raise DimensionError(f'A {a.shape} and A_d {a_d.shape} must be equal square matrices')
        if self.t_d < 0:
            raise ScenarioError(f'delay must be non-negative, got {self.t_d}')
        if self.labels and len(self.labels) != a.shape[0]:
            raise DimensionError(f'{len(self.labels)} labels for a system of dimension {a.shape[0]}')
        object.__setattr__(self, 'a', a)
        object.__setattr__(self, 'a_d', a_d)
        object.__setattr__(self, 'labels', tuple(self.labels))

    @property
    def dimension(self) -> int:
        return int(self.a.shape[0])

    @property
    def inverter_count(self) -> Optional[int]:
        """Number of inverters when the system has the five-states-per-inverter layout"""
        return self.dimension // 5 if self.dimension % 5 == 0 else None

    def with_delay(self, t_d: float) -> 'DdeSystem':
        return dataclasses.replace(self, t_d=t_d)

    def undelayed(self) -> np.ndarray:
        return self.a + self.a_d

    def rhs(self, x: np.ndarray, x_delayed: np.ndarray) -> np.ndarray:
        return self.a @ x + self.a_d @ x_delayed


def assemble_full(a_prim: np.ndarray,
                  b_r: np.ndarray,
                  b_d: np.ndarray,
                  graph: CommGraph,
                  k_pr: Gains,
                  omega_f: Gains,
                  admittance: np.ndarray,
                  eq: EquilibriumPoint,
                  t_d: float,
                  scale: float = 1.0,
                  variant: ConsensusVariant = ConsensusVariant.REFERENCE_TRACKING,
                  diffusion: Gains = 0.0) -> DdeSystem:
    """Assemble the 5n-state delayed system from the primary model and the secondary law

    The ΔP_ref rate input of the primary model is eliminated by substituting the consensus law.

    Args:
        a_prim, b_r, b_d: output of `assemble_primary`
        graph: communication graph on the n inverters
        k_pr: restoration gains (reference tracking)
        omega_f: measurement filter cut-offs
        admittance: Kron-reduced admittance, complex or real form
        eq: operating point
        t_d: communication delay (s)
        scale: power scale factor
        variant: consensus law
        diffusion: diffusion constant of the average variant

    Returns: the assembled `DdeSystem`"""
    n = eq.size
    if a_prim.shape != (3 * n, 3 * n) or b_r.shape != (3 * n, n) or b_d.shape != (3 * n, n):
        raise DimensionError(f'primary model shapes {a_prim.shape}, {b_r.shape}, {b_d.shape} do not fit {n} inverters')
    if graph.vertex_count != n:
        raise DimensionError(f'communication graph has {graph.vertex_count} vertices for {n} inverters')
    graph.validate()
    variant = ConsensusVariant(variant)
    law = consensus_law_variant(graph, diffusion if variant is ConsensusVariant.AVERAGE else k_pr, variant)
    filters = _as_diagonal(omega_f, n, 'omega_f')

    x, p_av, p_ref = slice(0, 3 * n), slice(3 * n, 4 * n), slice(4 * n, 5 * n)
    a = np.zeros((5 * n, 5 * n))
    a_d = np.zeros((5 * n, 5 * n))
    a[x, x] = a_prim
    a[p_av, x] = filters @ power_map(eq, admittance, scale)[0::2]
    a[p_av, p_av] = -filters
    a[x, p_ref] = b_r
    local_columns = p_ref if law.acts_on == 'p_ref' else p_av
    a[x, local_columns] += b_d @ law.local
    a[p_ref, local_columns] = law.local
    a_d[x, p_av] = b_d @ law.delayed
    a_d[p_ref, p_av] = law.delayed
    _logger.info('Assembled %s system: %d states, t_d = %g s', variant.value, 5 * n, t_d)
    _logger.debug('A =\n%s\nA_d =\n%s', a, a_d)
    return DdeSystem(a=a, a_d=a_d, t_d=t_d, labels=tuple(state_labels(n)))


def build_dde_system(spec: NetworkSpec, eq: EquilibriumPoint, t_d: float) -> DdeSystem:
    """Linearize a network about ``eq`` and assemble its delayed system"""
    if spec.graph is None:
        raise ScenarioError('assembling the delayed system needs a communication graph')
    admittance = reduced_admittance(spec)
    blocks = inverter_blocks(spec, eq)
    a_prim, b_r, b_d = assemble_primary(blocks, admittance, eq, spec.scale)
    return assemble_full(a_prim, b_r, b_d, spec.graph, spec.gains('k_pr'), spec.gains('omega_f'), admittance, eq,
                         t_d, scale=spec.scale, variant=spec.consensus_variant, diffusion=spec.diffusion_constant)
