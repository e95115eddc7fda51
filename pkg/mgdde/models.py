"""Models for scenario settings"""
from typing import List, Optional, Tuple

from pydantic import BaseModel, Field, root_validator

from mgdde.commgraph import CommGraph, ConsensusVariant
from mgdde.commsim import DEFAULT_SAMPLE_RATE, CommConfig
from mgdde.netmodel import InverterParams, LineSpec, LoadInterpretation, LoadSpec, NetworkSpec
from mgdde.spectrum import DEFAULT_ORDER
from mgdde.timedomain import DEFAULT_ABS_TOL, DEFAULT_FIXED_STEP, DEFAULT_OUTPUT_STEP, DEFAULT_REL_TOL, LoadStepScenario

LOAD_STAGES = ('pre', 'post')


class _StrictModel(BaseModel):
    class Config:
        extra = 'forbid'


class LineConfig(_StrictModel):
    resistance: float = Field(..., ge=0)
    inductance: float = Field(..., ge=0)

    @root_validator(skip_on_failure=True)
    def _check_nonzero(cls, values):  # pylint: disable=no-self-argument
        if values['resistance'] == 0 and values['inductance'] == 0:
            raise ValueError('resistance and inductance cannot both be zero')
        return values


class InverterConfig(_StrictModel):
    k_p: float = Field(..., gt=0)
    k_v: float = Field(..., ge=0)
    k_pr: float = Field(..., ge=0)
    omega_f: float = Field(..., gt=0)
    e_eq: float = Field(..., gt=0)
    q_eq: float = 0.0
    omega_eq: Optional[float] = Field(None, gt=0)
    virtual_r: float = Field(0.0, ge=0)
    virtual_l: float = Field(0.0, ge=0)
    p_ref: float = 0.0
    line: LineConfig


class LoadConfig(_StrictModel):
    resistance: float = 0.0
    reactance: float = 0.0

    @root_validator(skip_on_failure=True)
    def _check_nonzero(cls, values):  # pylint: disable=no-self-argument
        if values['resistance'] == 0 and values['reactance'] == 0:
            raise ValueError('load impedance must be nonzero')
        return values

    @property
    def impedance(self) -> complex:
        return complex(self.resistance, self.reactance)


class LoadsConfig(_StrictModel):
    pre: List[LoadConfig] = Field(..., min_items=1)
    post: Optional[List[LoadConfig]] = None


class TimingConfig(_StrictModel):
    step_time: float = Field(1.0, ge=0)
    end_time: float = Field(31.0, gt=0)

    @root_validator(skip_on_failure=True)
    def _check_order(cls, values):  # pylint: disable=no-self-argument
        if values['step_time'] > values['end_time']:
            raise ValueError('step_time must not exceed end_time')
        return values


class SolverConfig(_StrictModel):
    rel_tol: float = Field(DEFAULT_REL_TOL, gt=0)
    abs_tol: float = Field(DEFAULT_ABS_TOL, gt=0)
    fixed_step: float = Field(DEFAULT_FIXED_STEP, gt=0)
    output_step: float = Field(DEFAULT_OUTPUT_STEP, gt=0)
    newton_max_iterations: int = Field(50, ge=1)
    newton_tolerance: float = Field(1e-10, gt=0)


class CommConfigModel(_StrictModel):
    sample_rate: float = Field(DEFAULT_SAMPLE_RATE, gt=0)
    loss_probability: float = Field(0.0, ge=0, le=1)
    seed: int = 0
    control_rate: Optional[float] = Field(None, gt=0)
    exact_update: bool = False


class ScenarioConfig(_StrictModel):
    """A complete microgrid scenario: network, loads, communication and solver settings

    ``comm_edges`` are 1-based ``[source, target]`` pairs; ``target`` receives from ``source``."""
    name: str = 'scenario'
    nominal_frequency: float = Field(..., gt=0)
    inverters: List[InverterConfig] = Field(..., min_items=1)
    loads: LoadsConfig
    load_interpretation: LoadInterpretation = LoadInterpretation.AS_GIVEN
    power_scale: Optional[float] = Field(None, gt=0)
    comm_edges: List[Tuple[int, int]] = []
    t_d: float = Field(0.0, ge=0)
    consensus_variant: ConsensusVariant = ConsensusVariant.REFERENCE_TRACKING
    diffusion_constant: float = Field(0.0, ge=0)
    spectral_order: int = Field(DEFAULT_ORDER, ge=2)
    solver: SolverConfig = SolverConfig()
    timing: TimingConfig = TimingConfig()
    comm: CommConfigModel = CommConfigModel()

    @property
    def size(self) -> int:
        return len(self.inverters)

    def graph(self) -> Optional[CommGraph]:
        if not self.comm_edges:
            return None
        return CommGraph.from_config(self.size, self.comm_edges)

    def load_specs(self, stage: str = 'pre') -> Tuple[LoadSpec, ...]:
        if stage not in LOAD_STAGES:
            raise ValueError(f'unknown load stage {stage!r}; expected one of {LOAD_STAGES}')
        loads = self.loads.pre if stage == 'pre' or self.loads.post is None else self.loads.post
        return tuple(LoadSpec(load.impedance, self.load_interpretation) for load in loads)

    def network_spec(self, stage: str = 'pre', graph: bool = True) -> NetworkSpec:
        """Return the network with the pre- or post-step loads connected"""
        inverters = tuple(
            InverterParams(
                k_p=inverter.k_p,
                k_v=inverter.k_v,
                k_pr=inverter.k_pr,
                omega_f=inverter.omega_f,
                e_eq=inverter.e_eq,
                q_eq=inverter.q_eq,
                omega_eq=self.nominal_frequency if inverter.omega_eq is None else inverter.omega_eq,
                virtual_r=inverter.virtual_r,
                virtual_l=inverter.virtual_l,
                p_ref=inverter.p_ref) for inverter in self.inverters)
        return NetworkSpec(
            nominal_frequency=self.nominal_frequency,
            inverters=inverters,
            lines=tuple(LineSpec(inverter.line.resistance, inverter.line.inductance) for inverter in self.inverters),
            loads=self.load_specs(stage),
            graph=self.graph() if graph else None,
            power_scale=self.power_scale,
            consensus_variant=self.consensus_variant,
            diffusion_constant=self.diffusion_constant)

    def load_step(self, end_time: Optional[float] = None) -> LoadStepScenario:
        return LoadStepScenario(
            pre_loads=self.load_specs('pre'),
            post_loads=self.load_specs('post'),
            step_time=self.timing.step_time,
            end_time=self.timing.end_time if end_time is None else end_time)

    def comm_config(self, **overrides) -> CommConfig:
        """Return link settings with the scenario delay; keyword arguments override individual fields"""
        settings = dict(
            sample_rate=self.comm.sample_rate,
            delay=self.t_d,
            loss_probability=self.comm.loss_probability,
            seed=self.comm.seed,
            control_rate=self.comm.control_rate,
            exact_update=self.comm.exact_update)
        settings.update({key: value for key, value in overrides.items() if value is not None})
        return CommConfig(**settings)
