"""CSV and JSON result files, and generated plot scripts"""
import csv
import json
import logging
import os
from pathlib import Path
from string import Template
from typing import Any, Iterable, List, Optional, Sequence

import numpy as np

from mgdde.commsim import PacketRecord
from mgdde.equilibrium import EquilibriumPoint
from mgdde.errors import DimensionError, ScenarioError
from mgdde.linmodel import DdeSystem
from mgdde.spectrum import SpectrumResult
from mgdde.timedomain import Trajectory

_logger = logging.getLogger(__name__)

EQUILIBRIUM_COLUMNS = ('inverter', 'e_d', 'e_q', 'i_d', 'i_q', 'p', 'q', 'p_ref')
SPECTRUM_COLUMNS = ('sweep_value', 're', 'im', 'residual', 'is_origin_mode')
PACKET_COLUMNS = ('sample_index', 'link', 'status')
SYSTEM_FILES = ('A.csv', 'A_d.csv', 'system.json')


def format_value(value: Any) -> str:
    """Return a CSV cell; floats use their shortest round-tripping representation

    Examples:
        >>> format_value(0.1)
        '0.1'
        >>> format_value(np.float64(314.1592653589793))
        '314.1592653589793'
        >>> format_value(True), format_value(3)
        ('true', '3')
    """
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def format_root(value: complex, digits: int = 4) -> str:
    """Return a compact text form of a characteristic root

    Examples:
        >>> format_root(complex(-0.318131505, 1.337235701))
        '-0.3181 ± 1.3372j'
        >>> format_root(complex(-31.41592653589793, 0.0), digits=2)
        '-31.42'
    """
    if value.imag == 0:
        return f'{value.real:.{digits}f}'
    return f'{value.real:.{digits}f} ± {abs(value.imag):.{digits}f}j'


def write_csv(file_name: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write a header and rows, formatting every cell with `format_value`

    Args:
        file_name: a writable file
        header: column names
        rows: an iterable of row sequences

    Returns: the written file name"""
    with open(file_name, 'w', newline='') as output:
        writer = csv.writer(output, lineterminator=os.linesep)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(value) for value in row])
    _logger.info('Wrote %s', file_name)
    return Path(file_name)


def _read_rows(file_name: Path) -> List[List[str]]:
    try:
        with open(file_name, 'r', newline='') as source:
            return [row for row in csv.reader(source) if row]
    except OSError as e:
        raise ScenarioError(f'unable to read {file_name}: {e.strerror}') from e


def write_equilibrium(file_name: Path, eq: EquilibriumPoint) -> Path:
    """Write one row per inverter followed by a scalar ``omega`` row"""
    rows: List[Sequence[Any]] = list(eq.rows())
    rows.append(('omega', eq.omega))
    return write_csv(file_name, EQUILIBRIUM_COLUMNS, rows)


def write_matrix(file_name: Path, matrix: np.ndarray) -> Path:
    """Write a dense matrix row-major without a header"""
    matrix = np.asarray(matrix, dtype=float)
    with open(file_name, 'w', newline='') as output:
        writer = csv.writer(output, lineterminator=os.linesep)
        for row in matrix:
            writer.writerow([format_value(value) for value in row])
    return Path(file_name)


def read_matrix(file_name: Path) -> np.ndarray:
    rows = _read_rows(file_name)
    if not rows or len({len(row) for row in rows}) != 1:
        raise DimensionError(f'{file_name} does not hold a rectangular matrix')
    try:
        matrix = np.array([[float(cell) for cell in row] for row in rows], dtype=float)
    except ValueError as e:
        raise ScenarioError(f'{file_name} contains a non-numeric cell') from e
    if matrix.ndim != 2:
        raise DimensionError(f'{file_name} does not hold a rectangular matrix')
    return matrix


def write_system(output_path: Path, system: DdeSystem) -> List[Path]:
    """Write ``A.csv``, ``A_d.csv`` and a ``system.json`` sidecar with ``n``, ``t_d`` and ``labels``"""
    a_name, a_d_name, sidecar_name = (Path(output_path) / name for name in SYSTEM_FILES)
    write_matrix(a_name, system.a)
    write_matrix(a_d_name, system.a_d)
    with open(sidecar_name, 'w') as sidecar:
        json.dump({'n': system.dimension, 't_d': system.t_d, 'labels': list(system.labels)}, sidecar, indent=2)
    _logger.info('Wrote %d-state system to %s', system.dimension, output_path)
    return [a_name, a_d_name, sidecar_name]


def read_system(input_path: Path, t_d: Optional[float] = None) -> DdeSystem:
    """Load a system written by `write_system`, optionally replacing its delay"""
    a_name, a_d_name, sidecar_name = (Path(input_path) / name for name in SYSTEM_FILES)
    try:
        with open(sidecar_name, 'r') as sidecar:
            metadata = json.load(sidecar)
    except OSError as e:
        raise ScenarioError(f'unable to read {sidecar_name}: {e.strerror}') from e
    except json.JSONDecodeError as e:
        raise ScenarioError(f'{sidecar_name} is not valid JSON: {e}') from e
    a, a_d = read_matrix(a_name), read_matrix(a_d_name)
    if a.shape != (metadata['n'], metadata['n']):
        raise DimensionError(f'{a_name} has shape {a.shape}, expected n = {metadata["n"]}')
    return DdeSystem(a, a_d, metadata['t_d'] if t_d is None else t_d, tuple(metadata.get('labels', ())))


def write_spectrum(file_name: Path, results: Iterable[SpectrumResult]) -> Path:
    """Write one row per retained root per sweep point"""
    return write_csv(file_name, SPECTRUM_COLUMNS, (row for result in results for row in result.rows()))


def write_trajectory(file_name: Path, trajectory: Trajectory) -> Path:
    """Write the physical channels, or the raw states when the run has no channels"""
    if trajectory.channels:
        header, table = trajectory.rows()
    else:
        labels = trajectory.labels or tuple(f'x_{i + 1}' for i in range(trajectory.states.shape[1]))
        header, table = ['time', *labels], np.column_stack((trajectory.time, trajectory.states))
    return write_csv(file_name, header, table.tolist())


def write_packet_log(file_name: Path, records: Iterable[PacketRecord]) -> Path:
    return write_csv(file_name, PACKET_COLUMNS,
                     ((record.sample_index, record.link, 'delivered' if record.delivered else 'lost')
                      for record in records))


_SCRIPT_PREAMBLE = '''"""Generated by mgdde; run with a Python that has matplotlib installed"""
import csv
import sys
from collections import defaultdict

import matplotlib.pyplot as plt


def read(file_name):
    with open(file_name, newline='') as source:
        return list(csv.DictReader(source))

'''

_ROOT_LOCUS_SCRIPT = Template('''
rows = read('$data')
points = [(float(row['sweep_value']), float(row['re']), float(row['im'])) for row in rows
          if row['is_origin_mode'] == 'false']
figure, axis = plt.subplots()
scatter = axis.scatter([p[1] for p in points], [p[2] for p in points], c=[p[0] for p in points], s=6)
figure.colorbar(scatter, label='$parameter')
axis.axvline(0.0, color='black', linewidth=0.5)
axis.set_xlim($real_min, 1.0)
axis.set_xlabel('real (rad/s)')
axis.set_ylabel('imaginary (rad/s)')
figure.savefig(sys.argv[1] if len(sys.argv) > 1 else '$image')
''')

_FREQUENCY_SCRIPT = Template('''
runs = [(label, read(file_name)) for label, file_name in $runs]
figure, axes = plt.subplots($inverters, 1, sharex=True, squeeze=False)
for index in range($inverters):
    axis = axes[index][0]
    for label, rows in runs:
        axis.plot([float(row['time']) for row in rows], [float(row['omega_%d' % (index + 1)]) for row in rows],
                  label=label)
    axis.set_ylabel('omega_%d (rad/s)' % (index + 1))
axes[0][0].legend()
axes[-1][0].set_xlabel('time (s)')
figure.savefig(sys.argv[1] if len(sys.argv) > 1 else '$image')
''')

_TRACES_SCRIPT = Template('''
rows = read('$data')
traces = defaultdict(list)
time = [float(row['time']) for row in rows]
for row in rows:
    for name, value in row.items():
        if name.startswith('omega_'):
            traces[name].append(float(value))
figure, axis = plt.subplots()
for name, values in sorted(traces.items(), key=lambda item: int(item[0].split('_')[1])):
    axis.plot(time, values, linewidth=0.8, label=name)
axis.set_xlabel('time (s)')
axis.set_ylabel('frequency (rad/s)')
axis.legend(ncol=2, fontsize='small')
figure.savefig(sys.argv[1] if len(sys.argv) > 1 else '$image')
''')


def _write_script(file_name: Path, body: str) -> Path:
    with open(file_name, 'w') as script:
        script.write(_SCRIPT_PREAMBLE + body)
    _logger.info('Wrote plot script %s', file_name)
    return Path(file_name)


def write_root_locus_script(file_name: Path, data_file_name: Path, parameter: str, real_min: float = -50.0) -> Path:
    """Write a script scattering root-locus roots colored by the swept parameter"""
    return _write_script(
        file_name,
        _ROOT_LOCUS_SCRIPT.substitute(data=Path(data_file_name).name, parameter=parameter, real_min=real_min,
                                      image=Path(file_name).with_suffix('.png').name))


def write_frequency_script(file_name: Path, runs: Sequence[Sequence[str]], inverters: int) -> Path:
    """Write a script with one frequency panel per inverter overlaying the labelled trajectory files

    Args:
        file_name: the script to write
        runs: ``(label, trajectory file name)`` pairs
        inverters: panel count"""
    pairs = [(str(label), Path(data).name) for label, data in runs]
    return _write_script(
        file_name,
        _FREQUENCY_SCRIPT.substitute(runs=repr(pairs), inverters=inverters,
                                     image=Path(file_name).with_suffix('.png').name))


def write_traces_script(file_name: Path, data_file_name: Path) -> Path:
    """Write a script overlaying every inverter frequency of one trajectory file"""
    return _write_script(
        file_name,
        _TRACES_SCRIPT.substitute(data=Path(data_file_name).name, image=Path(file_name).with_suffix('.png').name))
