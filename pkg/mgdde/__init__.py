"""mgdde: small-signal delay models of droop-controlled microgrids with consensus frequency restoration"""
import logging
from typing import List, Optional, Sequence

import numpy as np

from mgdde.commsim import CommConfig, PacketRecord, simulate_sampled
from mgdde.equilibrium import EquilibriumMode, EquilibriumPoint, equilibrium_mode_for, solve_equilibrium
from mgdde.errors import (
    ConvergenceError,
    DimensionError,
    GraphError,
    IntegrationError,
    NetworkError,
    NumericalError,
    ScenarioError,
    SingularityError,
)
from mgdde.linmodel import DdeSystem, build_dde_system
from mgdde.models import ScenarioConfig
from mgdde.netmodel import NetworkSpec
from mgdde.spectrum import DelayCrossing, SpectrumResult, SweepParameter, dde_spectrum, find_delay_crossing, \
    root_locus, system_factory
from mgdde.timedomain import Engine, Trajectory, load_step_dde, simulate_nonlinear

_logger = logging.getLogger(__name__)

__all__ = [
    'ConvergenceError', 'DimensionError', 'GraphError', 'IntegrationError', 'Microgrid', 'NetworkError',
    'NumericalError', 'ScenarioError', 'SingularityError'
]


class Microgrid:
    """An interface to the analyses of one scenario: operating points, delayed systems, spectra and
    time-domain runs"""
    def __init__(self, config: ScenarioConfig, interactive: bool = False):
        self.config = config
        self.interactive = interactive
        self._networks = {stage: config.network_spec(stage) for stage in ('pre', 'post')}
        _logger.debug('Scenario %s: %d inverters, t_d = %g s', config.name, config.size, config.t_d)

    def network(self, stage: str = 'pre') -> NetworkSpec:
        try:
            return self._networks[stage]
        except KeyError as e:
            raise ScenarioError(f'unknown load stage "{stage}"') from e

    def delay(self, t_d: Optional[float]) -> float:
        return self.config.t_d if t_d is None else t_d

    def equilibrium(self, stage: str = 'pre', mode: Optional[EquilibriumMode] = None) -> EquilibriumPoint:
        spec = self.network(stage)
        solver = self.config.solver
        return solve_equilibrium(spec, equilibrium_mode_for(spec) if mode is None else mode,
                                 max_iterations=solver.newton_max_iterations, tolerance=solver.newton_tolerance)

    def system(self, t_d: Optional[float] = None, stage: str = 'pre') -> DdeSystem:
        """Return the delayed system linearized about the ``stage`` operating point"""
        return build_dde_system(self.network(stage), self.equilibrium(stage), self.delay(t_d))

    def spectrum(self, t_d: Optional[float] = None, order: Optional[int] = None, stage: str = 'pre',
                 refine: bool = False, system: Optional[DdeSystem] = None) -> SpectrumResult:
        if system is None:
            system = self.system(t_d, stage)
        return dde_spectrum(system, order=order or self.config.spectral_order, refine=refine)

    def root_locus(self, parameter: SweepParameter, values: Sequence[float], order: Optional[int] = None,
                   t_d: Optional[float] = None, stage: str = 'pre', refine: bool = False,
                   workers: int = 1) -> List[SpectrumResult]:
        factory = system_factory(self.network(stage), parameter, t_d=self.delay(t_d))
        return root_locus(factory, values, order=order or self.config.spectral_order, refine=refine, workers=workers,
                          interactive=self.interactive)

    def delay_margin(self, lower: float, upper: float, order: Optional[int] = None,
                     stage: str = 'pre') -> Optional[DelayCrossing]:
        factory = system_factory(self.network(stage), SweepParameter.DELAY)
        return find_delay_crossing(factory, lower, upper, order=order or self.config.spectral_order)

    def simulate(self, engine: str = Engine.DDE, t_d: Optional[float] = None, step: Optional[float] = None,
                 end_time: Optional[float] = None) -> Trajectory:
        """Run the load-step scenario with the linear delayed model or the nonlinear plant"""
        solver = self.config.solver
        scenario = self.config.load_step(end_time)
        if engine == Engine.DDE:
            return load_step_dde(self.network('pre'), scenario, self.delay(t_d), rel_tol=solver.rel_tol,
                                 abs_tol=solver.abs_tol, output_step=solver.output_step, interactive=self.interactive)
        if engine == Engine.NONLINEAR:
            return simulate_nonlinear(self.network('pre'), scenario, self.delay(t_d), step=step or solver.fixed_step,
                                      output_step=solver.output_step, initial=self.equilibrium('pre'),
                                      interactive=self.interactive)
        raise ScenarioError(f'unknown engine "{engine}"; expected {Engine.DDE} or {Engine.NONLINEAR}')

    def simulate_sampled(self, comm: Optional[CommConfig] = None, step: Optional[float] = None,
                         end_time: Optional[float] = None,
                         packet_log: Optional[List[PacketRecord]] = None) -> Trajectory:
        comm = comm or self.config.comm_config()
        if step is None:
            step = min(self.config.solver.fixed_step, 1 / (10 * comm.sample_rate))
        return simulate_sampled(self.network('pre'), self.config.load_step(end_time), comm, step=step,
                                output_step=self.config.solver.output_step, initial=self.equilibrium('pre'),
                                packet_log=packet_log, interactive=self.interactive)

    def restoration_error(self, trajectory: Trajectory) -> np.ndarray:
        """Return the final per-inverter distance from nominal frequency"""
        return np.abs(trajectory.group('omega')[-1] - self.config.nominal_frequency)
