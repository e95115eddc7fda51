"""Secondary control over sampled, lossy links with a constant-delay receive buffer"""
import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional

import numpy as np
import tqdm

from mgdde.commgraph import ConsensusVariant
from mgdde.equilibrium import EquilibriumPoint, equilibrium_mode_for, solve_equilibrium
from mgdde.errors import IntegrationError, ScenarioError
from mgdde.netmodel import NetworkSpec
from mgdde.timedomain import (
    DEFAULT_FIXED_STEP,
    DEFAULT_OUTPUT_STEP,
    Engine,
    LoadStepScenario,
    NonlinearPlant,
    Trajectory,
    plant_trajectory,
    rk4_step,
)

_logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 50.0


@dataclass(frozen=True)
class CommConfig:
    """Link timing and reliability

    Attributes:
        sample_rate: packet rate of every link (Hz)
        delay: end-to-end delay enforced by the receive buffer (s)
        loss_probability: independent per-packet, per-link loss probability
        seed: random generator seed
        control_rate: secondary integrator rate (Hz); defaults to ``sample_rate``
        exact_update: step reference tracking by its exact solution over a control period instead of
            forward Euler"""
    sample_rate: float = DEFAULT_SAMPLE_RATE
    delay: float = 0.0
    loss_probability: float = 0.0
    seed: int = 0
    control_rate: Optional[float] = None
    exact_update: bool = False

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ScenarioError(f'sample rate must be positive, got {self.sample_rate}')
        if self.delay < 0:
            raise ScenarioError(f'delay must be non-negative, got {self.delay}')
        if not 0 <= self.loss_probability <= 1:
            raise ScenarioError(f'loss probability must be within [0, 1], got {self.loss_probability}')
        if self.control_rate is not None and self.control_rate <= 0:
            raise ScenarioError(f'control rate must be positive, got {self.control_rate}')

    @property
    def buffer_depth(self) -> int:
        """Samples between measurement and use

        Examples:
            >>> CommConfig(sample_rate=50.0, delay=0.2).buffer_depth
            10
        """
        return int(round(self.delay * self.sample_rate))

    @property
    def effective_control_rate(self) -> float:
        return self.sample_rate if self.control_rate is None else self.control_rate


class PacketRecord(NamedTuple):
    sample_index: int
    source: int
    target: int
    delivered: bool

    @property
    def link(self) -> str:
        return f'{self.source + 1}->{self.target + 1}'


class SampledLinks:
    """Constant-delay transmission of averaged powers over every graph edge

    Each sender keeps its last ``buffer_depth + 1`` measurements; at sample ``k`` every link offers
    the measurement taken at ``k - buffer_depth``. A lost packet leaves the receiver holding the last
    delivered value."""
    def __init__(self, edges: List[tuple], n: int, comm: CommConfig, initial: np.ndarray,
                 packet_log: Optional[List[PacketRecord]] = None):
        self.edges = sorted(edges)
        self.depth = comm.buffer_depth
        self.loss_probability = comm.loss_probability
        self.rng = np.random.default_rng(comm.seed)
        self._initial = np.array(initial, dtype=float)
        self._measurements = np.tile(self._initial, (self.depth + 1, 1))
        self.held = np.zeros((n, n))
        for source, target in self.edges:
            self.held[target, source] = self._initial[source]
        self.packet_log = packet_log
        self.sent = 0
        self.lost = 0

    def sample(self, index: int, p_av: np.ndarray) -> None:
        self._measurements[index % (self.depth + 1)] = p_av
        offered = self._measurements[(index - self.depth) % (self.depth + 1)] if index >= self.depth \
            else self._initial
        draws = self.rng.random(len(self.edges))
        for (source, target), draw in zip(self.edges, draws):
            delivered = bool(draw >= self.loss_probability)
            if delivered:
                self.held[target, source] = offered[source]
            else:
                self.lost += 1
            self.sent += 1
            if self.packet_log is not None:
                self.packet_log.append(PacketRecord(index, source, target, delivered))

    def received_sums(self) -> np.ndarray:
        """Return the sum of held neighbor values at every receiver"""
        return self.held.sum(axis=1)


def track_references(p_ref: np.ndarray, received: np.ndarray, degrees: np.ndarray, k_pr: np.ndarray,
                     period: float, exact: bool = False) -> np.ndarray:
    """Advance the reference-tracking law by one control period with held neighbor sums

    Examples:
        >>> track_references(np.array([0.0]), np.array([10.0]), np.array([1.0]), np.array([5.0]), 0.1).tolist()
        [5.0]
    """
    if exact:
        target = received / degrees
        return target + (p_ref - target) * np.exp(-k_pr * degrees * period)
    return p_ref + period * k_pr * (received - degrees * p_ref)


def simulate_sampled(spec: NetworkSpec,
                     scenario: LoadStepScenario,
                     comm: CommConfig,
                     step: float = DEFAULT_FIXED_STEP,
                     output_step: float = DEFAULT_OUTPUT_STEP,
                     initial: Optional[EquilibriumPoint] = None,
                     packet_log: Optional[List[PacketRecord]] = None,
                     interactive: bool = False) -> Trajectory:
    """Simulate the nonlinear plant with the secondary law executed over sampled links

    Power references are updated at the control rate by forward Euler and held between updates.
    With ``comm.exact_update``, reference tracking instead applies the exact solution of its law over
    one control period for the held neighbor values; Euler is unstable once k_pr * d / f exceeds 2.
    The plant advances between instants with the fixed-step integrator of the continuous engine.

    Args:
        spec: the network with its communication graph
        scenario: load step
        comm: link timing, loss and seed
        step: plant integration step (s)
        output_step: trajectory sample spacing (s)
        initial: starting operating point (default: pre-step equilibrium)
        packet_log: list receiving one `PacketRecord` per link and sample
        interactive: show a progress bar

    Returns: the sampled-communication `Trajectory`"""
    if spec.graph is None:
        raise ScenarioError('sampled communication needs a communication graph')
    spec.graph.validate()
    if step <= 0 or step > (1 + 1e-9) / (10 * comm.sample_rate):
        raise ScenarioError(f'plant step {step} s must not exceed a tenth of the sample period '
                            f'{1 / comm.sample_rate} s')
    plant = NonlinearPlant(spec, scenario.pre_loads)
    if initial is None:
        initial = solve_equilibrium(plant.loaded_spec, equilibrium_mode_for(spec))
    state = plant.initial_state(initial)
    n = plant.n
    p_av_slice, p_ref_slice = slice(2 * n, 3 * n), slice(4 * n, 5 * n)
    links = SampledLinks(spec.graph.edges, n, comm, state[p_av_slice], packet_log)
    degrees = np.asarray(spec.graph.in_degrees(), dtype=float)
    average = spec.consensus_variant is ConsensusVariant.AVERAGE
    control_period = 1 / comm.effective_control_rate

    total = int(round(scenario.end_time / step))
    step_index = int(round(scenario.step_time / step))
    record_every = max(1, int(round(output_step / step)))
    sample_period_steps = 1 / (comm.sample_rate * step)
    control_period_steps = control_period / step
    next_sample, next_control = 0, 0

    def _rate(_t: float, x: np.ndarray) -> np.ndarray:
        return plant.derivative(x, None)

    time: List[float] = [0.0]
    states: List[np.ndarray] = [state]
    with tqdm.tqdm(total=total, unit='step', disable=not interactive, mininterval=0.5) as progress:
        for index in range(total):
            if index == step_index:
                plant.set_loads(scenario.post_loads)
            while int(round(next_sample * sample_period_steps)) <= index:
                links.sample(next_sample, state[p_av_slice])
                next_sample += 1
            while int(round(next_control * control_period_steps)) <= index:
                received = links.received_sums()
                state = state.copy()
                if average:
                    state[p_ref_slice] += control_period * spec.diffusion_constant * (
                        received - degrees * state[p_av_slice])
                else:
                    state[p_ref_slice] = track_references(state[p_ref_slice], received, degrees, plant.k_pr,
                                                          control_period, comm.exact_update)
                next_control += 1
            state = rk4_step(_rate, index * step, state, step)
            if not np.all(np.isfinite(state)):
                raise IntegrationError(f'sampled run diverged at t = {(index + 1) * step:.6g} s')
            if (index + 1) % record_every == 0 or index + 1 == total:
                time.append((index + 1) * step)
                states.append(state)
            progress.update()
    if links.lost:
        _logger.warning('Lost %d of %d packets (%.3g%%)', links.lost, links.sent, 100 * links.lost / links.sent)
    _logger.info('Sampled run: %d samples at %g Hz, buffer depth %d, seed %d', next_sample, comm.sample_rate,
                 links.depth, comm.seed)
    return plant_trajectory(plant, time, states, Engine.SAMPLED)


def loss_fraction(packet_log: List[PacketRecord]) -> float:
    if not packet_log:
        return math.nan
    return sum(not record.delivered for record in packet_log) / len(packet_log)
