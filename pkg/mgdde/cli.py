"""Command-line interface functionality for the mgdde interface"""
import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import yaml
from pydantic import ValidationError

from mgdde import Microgrid
from mgdde.commsim import PacketRecord, loss_fraction
from mgdde.errors import GraphError, NumericalError, ScenarioError
from mgdde.equilibrium import EquilibriumMode
from mgdde.io import (
    format_root,
    read_system,
    write_equilibrium,
    write_frequency_script,
    write_packet_log,
    write_root_locus_script,
    write_spectrum,
    write_system,
    write_traces_script,
    write_trajectory,
)
from mgdde.models import LOAD_STAGES, ScenarioConfig
from mgdde.spectrum import SweepParameter
from mgdde.timedomain import Engine

try:
    from mgdde.__metadata__ import VERSION
except ImportError:
    VERSION = 'unknown'

_logger = logging.getLogger(__name__)

SCENARIO_PATH = Path(__file__).parent / 'scenarios'
OUTPUT_ENVIRONMENT_VARIABLE = 'MGDDE_OUT'
EXIT_SCENARIO_ERROR = 2
EXIT_NUMERICAL_ERROR = 3
# Other names the bundled scenarios are known by
SCENARIO_ALIASES = {'table1': 'three_inverters', 'twelve': 'twelve_inverters'}


def bundled_scenarios() -> List[str]:
    return sorted(path.stem for path in SCENARIO_PATH.glob('*.json'))


def scenario_file_name(name: str) -> Path:
    """Return ``name`` as a path, or the bundled scenario of that name when no such file exists

    Examples:
        >>> scenario_file_name('table1.json') == scenario_file_name('three_inverters')
        True
    """
    path = Path(name)
    if path.exists():
        return path
    stem = path.stem if path.suffix == '.json' and path.parent == Path('.') else name
    bundled = SCENARIO_PATH / f'{SCENARIO_ALIASES.get(stem, stem)}.json'
    return bundled if bundled.exists() else path


def _format_validation_error(error: ValidationError) -> str:
    return '; '.join(f'{".".join(str(part) for part in item["loc"])}: {item["msg"]}' for item in error.errors())


def parse_config(file_name: Path) -> ScenarioConfig:
    """Read and validate a scenario file

    Args:
        file_name: a JSON or YAML scenario

    Returns: the validated scenario with defaults applied

    Raises:
        ScenarioError: the file is missing, unreadable or fails schema validation
        GraphError: the communication graph is invalid"""
    try:
        with open(file_name, 'r') as scenario_file:
            data = yaml.safe_load(scenario_file)
    except FileNotFoundError as e:
        raise ScenarioError(f'scenario file does not exist: {file_name}') from e
    except (OSError, yaml.YAMLError) as e:
        raise ScenarioError(f'unable to read scenario file {file_name}: {e}') from e
    if not isinstance(data, dict):
        raise ScenarioError(f'scenario file {file_name} must contain a mapping')
    try:
        config = ScenarioConfig.parse_obj(data)
    except ValidationError as e:
        raise ScenarioError(f'scenario file {file_name} is invalid: {_format_validation_error(e)}') from e
    try:
        graph = config.graph()
        if graph is not None:
            graph.validate()
    except GraphError as e:
        raise GraphError(e.code, f'comm_edges: {e.detail}') from e
    return config


def _parse_arguments(arguments: Optional[Sequence[str]] = None):
    parser = argparse.ArgumentParser(description=__doc__.partition('\n')[0])
    parser.add_argument('--version', '-V', action='version', version=f'%(prog)s {VERSION}')
    group = parser.add_mutually_exclusive_group()
    group.add_argument('--verbose', '-v', action='count', default=0, help='increase output verbosity')
    group.add_argument('--quiet', action='store_true', help='disable output')
    group = parser.add_mutually_exclusive_group()
    group.add_argument('--interactive', action='store_true', help='enable interactive output (i.e. for a PTY)')
    group.add_argument('--non-interactive', action='store_true', help='disable interactive output')

    parser.add_argument('--scenario', default='three_inverters', type=str,
                        help=f'Scenario file name or bundled scenario ({", ".join(bundled_scenarios())}; aliases: '
                        f'{", ".join(SCENARIO_ALIASES)}; '
                        'default: "three_inverters")')
    parser.add_argument('--out', default=Path(os.environ.get(OUTPUT_ENVIRONMENT_VARIABLE, '.')), type=Path,
                        help=f'Output directory (default: ${OUTPUT_ENVIRONMENT_VARIABLE} or working directory)')
    parser.add_argument('--plots', action='store_true', help='also write plot scripts for the written CSV files')

    commands = parser.add_subparsers(dest='command', metavar='command')
    commands.required = True

    command = commands.add_parser('equilibrium', help='solve the operating point')
    command.add_argument('--load', choices=LOAD_STAGES, default='pre', help='load set (default: "pre")')
    command.add_argument('--mode', choices=[mode.value for mode in EquilibriumMode],
                         help='steady state (default: from the consensus variant)')

    command = commands.add_parser('assemble', help='write the delayed system matrices')
    command.add_argument('--load', choices=LOAD_STAGES, default='pre', help='operating point (default: "pre")')
    command.add_argument('--td', type=float, help='communication delay in seconds (default: scenario t_d)')

    command = commands.add_parser('spectrum', help='compute the characteristic roots')
    command.add_argument('--load', choices=LOAD_STAGES, default='pre', help='operating point (default: "pre")')
    command.add_argument('--td', type=float, help='communication delay in seconds (default: scenario t_d)')
    command.add_argument('--order', type=int, help='collocation order (default: scenario spectral_order)')
    command.add_argument('--refine', action='store_true', help='Newton-polish every root')
    command.add_argument('--matrices', type=Path, help='read A, A_d from a directory written by "assemble"')

    command = commands.add_parser('rootlocus', help='sweep a parameter and track the roots')
    command.add_argument('--param', choices=[parameter.value for parameter in SweepParameter], required=True)
    command.add_argument('--from', dest='start', type=float, required=True, help='first sweep value')
    command.add_argument('--to', dest='stop', type=float, required=True, help='last sweep value')
    command.add_argument('--steps', type=int, required=True, help='sweep point count')
    command.add_argument('--td', type=float, help='fixed delay for gain sweeps (default: scenario t_d)')
    command.add_argument('--order', type=int, help='collocation order (default: scenario spectral_order)')
    command.add_argument('--workers', type=int, default=1, help='parallel sweep points (default: 1)')

    command = commands.add_parser('margin', help='search the delay at which stability is lost')
    command.add_argument('--from', dest='start', type=float, default=0.0, help='smallest delay (default: 0)')
    command.add_argument('--to', dest='stop', type=float, required=True, help='largest delay')
    command.add_argument('--order', type=int, help='collocation order (default: scenario spectral_order)')

    command = commands.add_parser('simulate', help='run the load step')
    command.add_argument('--engine', choices=[Engine.DDE, Engine.NONLINEAR], default=Engine.DDE)
    command.add_argument('--td', type=float, help='communication delay in seconds (default: scenario t_d)')
    command.add_argument('--step', type=float, help='nonlinear integration step (default: solver fixed_step)')
    command.add_argument('--end', type=float, help='end time in seconds (default: scenario timing)')

    command = commands.add_parser('commsim', help='run the load step over sampled, lossy links')
    command.add_argument('--fs', type=float, help='link sample rate in Hz (default: scenario comm)')
    command.add_argument('--loss', type=float, help='per-packet loss probability (default: scenario comm)')
    command.add_argument('--seed', type=int, help='random seed (default: scenario comm)')
    command.add_argument('--td', type=float, help='communication delay in seconds (default: scenario t_d)')
    command.add_argument('--step', type=float, help='plant integration step')
    command.add_argument('--exact-update', action='store_true',
                         help='step reference tracking by its exact solution instead of forward Euler')
    command.add_argument('--end', type=float, help='end time in seconds (default: scenario timing)')
    return parser.parse_args(arguments)


def _run_equilibrium(microgrid: Microgrid, arguments, output_path: Path) -> None:
    eq = microgrid.equilibrium(arguments.load, EquilibriumMode(arguments.mode) if arguments.mode else None)
    for inverter, e_d, e_q, _i_d, _i_q, p, q, p_ref in eq.rows():
        _logger.info('Inverter %d: E = %.4f V at %.6f rad, P = %.3f W, Q = %.3f var, P_ref = %.3f W', inverter,
                     abs(complex(e_d, e_q)), np.angle(complex(e_d, e_q)), p, q, p_ref)
    _logger.info('Frequency: %.9f rad/s', eq.omega)
    write_equilibrium(output_path / 'equilibrium.csv', eq)


def _run_assemble(microgrid: Microgrid, arguments, output_path: Path) -> None:
    write_system(output_path, microgrid.system(arguments.td, arguments.load))


def _run_spectrum(microgrid: Microgrid, arguments, output_path: Path) -> None:
    system = read_system(arguments.matrices, arguments.td) if arguments.matrices else None
    result = microgrid.spectrum(arguments.td, arguments.order, arguments.load, arguments.refine, system=system)
    if result.rightmost is not None:
        _logger.info('Rightmost root: %s', format_root(result.rightmost))
    write_spectrum(output_path / 'spectrum.csv', [result])


def _run_root_locus(microgrid: Microgrid, arguments, output_path: Path) -> None:
    if arguments.steps < 1:
        raise ScenarioError(f'--steps must be positive, got {arguments.steps}')
    values = np.linspace(arguments.start, arguments.stop, arguments.steps).tolist()
    results = microgrid.root_locus(SweepParameter(arguments.param), values, arguments.order, arguments.td,
                                   workers=arguments.workers)
    unstable = [
        result.sweep_value for result in results if result.rightmost is not None and result.rightmost.real >= 0
    ]
    if unstable:
        _logger.warning('Unstable at %s = %s', arguments.param, ', '.join(f'{value:g}' for value in unstable))
    data_file_name = write_spectrum(output_path / 'rootlocus.csv', results)
    if arguments.plots:
        write_root_locus_script(output_path / 'rootlocus_plot.py', data_file_name, arguments.param)


def _run_margin(microgrid: Microgrid, arguments, output_path: Path) -> None:  # pylint: disable=unused-argument
    crossing = microgrid.delay_margin(arguments.start, arguments.stop, arguments.order)
    if crossing is None:
        _logger.info('Stable for every delay in [%g, %g] s', arguments.start, arguments.stop)
    else:
        _logger.info('Delay margin: %.6g s (root %s)', crossing.t_d, format_root(crossing.root))


def _run_simulate(microgrid: Microgrid, arguments, output_path: Path) -> None:
    trajectory = microgrid.simulate(arguments.engine, arguments.td, arguments.step, arguments.end)
    error = microgrid.restoration_error(trajectory)
    _logger.info('Final frequency error: %.3e rad/s (largest)', float(np.max(error)))
    data_file_name = write_trajectory(output_path / f'trajectory_{arguments.engine}.csv', trajectory)
    if arguments.plots:
        write_frequency_script(output_path / f'trajectory_{arguments.engine}_plot.py',
                               [(arguments.engine, data_file_name)], microgrid.config.size)


def _run_commsim(microgrid: Microgrid, arguments, output_path: Path) -> None:
    comm = microgrid.config.comm_config(sample_rate=arguments.fs, loss_probability=arguments.loss,
                                        seed=arguments.seed, delay=arguments.td,
                                        exact_update=arguments.exact_update or None)
    packet_log: List[PacketRecord] = []
    trajectory = microgrid.simulate_sampled(comm, arguments.step, arguments.end, packet_log)
    _logger.info('Packet loss: %.4g%% of %d packets', 100 * loss_fraction(packet_log), len(packet_log))
    data_file_name = write_trajectory(output_path / 'trajectory_sampled.csv', trajectory)
    write_packet_log(output_path / 'packets.csv', packet_log)
    if arguments.plots:
        write_traces_script(output_path / 'trajectory_sampled_plot.py', data_file_name)


_COMMANDS: Dict[str, Callable[[Microgrid, argparse.Namespace, Path], None]] = {
    'equilibrium': _run_equilibrium,
    'assemble': _run_assemble,
    'spectrum': _run_spectrum,
    'rootlocus': _run_root_locus,
    'margin': _run_margin,
    'simulate': _run_simulate,
    'commsim': _run_commsim,
}


def _configure_logging(verbose: int) -> None:
    output = logging.StreamHandler(sys.stdout)
    output.addFilter(lambda record: record.levelno < logging.WARNING)
    diagnostics = logging.StreamHandler(sys.stderr)
    diagnostics.setLevel(logging.WARNING)
    logging.basicConfig(format='%(message)s', handlers=[output, diagnostics])
    logging_level = max(1, logging.INFO - (10 * verbose))
    logging.getLogger(__name__.split('.')[0]).setLevel(logging_level)


def main(arguments: Optional[Sequence[str]] = None):
    """The main command-line entry point for the mgdde interface"""
    parsed = _parse_arguments(arguments)

    if not parsed.quiet:
        _configure_logging(parsed.verbose)

    interactive = True if parsed.interactive else False if parsed.non_interactive else sys.__stdin__.isatty()

    try:
        config = parse_config(scenario_file_name(parsed.scenario))
        microgrid = Microgrid(config, interactive=interactive)
        output_path = parsed.out
        output_path.mkdir(parents=True, exist_ok=True)
        _COMMANDS[parsed.command](microgrid, parsed, output_path)
    except ScenarioError as e:
        _logger.error('Scenario error: %s', e)
        _logger.debug('', exc_info=e)
        sys.exit(EXIT_SCENARIO_ERROR)
    except NumericalError as e:
        _logger.error('Numerical failure: %s', e)
        _logger.debug('', exc_info=e)
        sys.exit(EXIT_NUMERICAL_ERROR)
    except OSError as e:
        _logger.error('Unable to write results: %s', e)
        _logger.debug('', exc_info=e)
        sys.exit(EXIT_SCENARIO_ERROR)
