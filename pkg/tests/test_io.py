import csv
import json
import tempfile
from pathlib import Path
from unittest import TestCase
from unittest.mock import patch

import numpy as np
import numpy.testing as npt
import pytest

import mgdde.io
from mgdde.commsim import PacketRecord
from mgdde.equilibrium import EquilibriumPoint
from mgdde.errors import DimensionError, ScenarioError
from mgdde.io import (
    EQUILIBRIUM_COLUMNS,
    PACKET_COLUMNS,
    SPECTRUM_COLUMNS,
    format_value,
    read_matrix,
    read_system,
    write_csv,
    write_equilibrium,
    write_frequency_script,
    write_matrix,
    write_packet_log,
    write_root_locus_script,
    write_spectrum,
    write_system,
    write_trajectory,
)
from mgdde.linmodel import DdeSystem
from mgdde.spectrum import SpectrumResult
from mgdde.timedomain import Engine, Trajectory


def read_dict_rows(file_name: Path):
    with open(file_name, newline='') as source:
        return list(csv.DictReader(source))


class TestFormatValue(TestCase):
    def test_values(self):
        cases = (
            (np.bool_(False), 'false'),
            (np.int64(7), '7'),
            (1 / 3, '0.3333333333333333'),
            (-0.0018, '-0.0018'),
            ('1->2', '1->2'),
        )
        for value, expected in cases:
            with self.subTest(value=value):
                assert format_value(value) == expected

    def test_floats_round_trip(self):
        for value in np.random.default_rng(11).normal(scale=1e4, size=20):
            assert float(format_value(value)) == value


class TestResultFiles(TestCase):
    def setUp(self):
        self._directory = tempfile.TemporaryDirectory()
        self.path = Path(self._directory.name)

    def tearDown(self):
        self._directory.cleanup()

    def test_equilibrium(self):
        eq = EquilibriumPoint(e_d=np.array([230.0, 229.9]), e_q=np.array([0.0, -0.4]), i_d=np.array([1.2, 1.3]),
                              i_q=np.array([-0.1, -0.2]), p=np.array([442.5, 442.5]), q=np.array([1.0, -1.0]),
                              p_ref=np.array([442.5, 442.5]), omega=314.1592653589793)
        rows = read_dict_rows(write_equilibrium(self.path / 'equilibrium.csv', eq))
        assert tuple(rows[0]) == EQUILIBRIUM_COLUMNS
        assert [row['inverter'] for row in rows] == ['1', '2', 'omega']
        assert rows[1]['e_q'] == '-0.4'
        assert rows[2]['e_d'] == '314.1592653589793'

    def test_system_round_trip(self):
        rng = np.random.default_rng(1)
        system = DdeSystem(a=rng.normal(size=(5, 5)), a_d=rng.normal(size=(5, 5)), t_d=0.02,
                           labels=('omega_1', 'e_d_1', 'e_q_1', 'p_av_1', 'p_ref_1'))
        names = write_system(self.path, system)
        assert [name.name for name in names] == ['A.csv', 'A_d.csv', 'system.json']
        loaded = read_system(self.path)
        npt.assert_array_equal(loaded.a, system.a)
        npt.assert_array_equal(loaded.a_d, system.a_d)
        assert loaded.t_d == 0.02
        assert loaded.labels == system.labels
        assert read_system(self.path, t_d=0.2).t_d == 0.2

    def test_system_size_mismatch(self):
        write_system(self.path, DdeSystem(a=np.eye(2), a_d=np.eye(2), t_d=0.1))
        with open(self.path / 'system.json', 'w') as sidecar:
            json.dump({'n': 3, 't_d': 0.1}, sidecar)
        with pytest.raises(DimensionError):
            read_system(self.path)

    def test_missing_system(self):
        with pytest.raises(ScenarioError, match='unable to read'):
            read_system(self.path)

    def test_matrix_errors(self):
        with open(self.path / 'ragged.csv', 'w') as output:
            output.write('1,2\n3\n')
        with open(self.path / 'text.csv', 'w') as output:
            output.write('1,x\n')
        with pytest.raises(DimensionError):
            read_matrix(self.path / 'ragged.csv')
        with pytest.raises(ScenarioError, match='non-numeric'):
            read_matrix(self.path / 'text.csv')

    def test_matrix_round_trip_is_exact(self):
        matrix = np.array([[0.1, -1e-300], [np.pi, 2.0**60]])
        npt.assert_array_equal(read_matrix(write_matrix(self.path / 'matrix.csv', matrix)), matrix)

    def test_spectrum(self):
        results = [
            SpectrumResult(eigenvalues=np.array([0.0, -1.0 + 2.0j]), residuals=np.array([0.0, 1e-9]), order=20,
                           t_d=0.0),
            SpectrumResult(eigenvalues=np.array([-0.5]), residuals=np.array([1e-10]), order=20, t_d=0.1),
        ]
        rows = read_dict_rows(write_spectrum(self.path / 'spectrum.csv', results))
        assert tuple(rows[0]) == SPECTRUM_COLUMNS
        assert [row['sweep_value'] for row in rows] == ['0.0', '0.0', '0.1']
        assert [row['is_origin_mode'] for row in rows] == ['true', 'false', 'false']
        assert rows[1]['im'] == '2.0'

    def test_trajectory_channels(self):
        trajectory = Trajectory(np.array([0.0, 1.0]), np.zeros((2, 5)), Engine.NONLINEAR,
                                channels={'omega_1': np.array([314.0, 314.1])})
        rows = read_dict_rows(write_trajectory(self.path / 'trajectory.csv', trajectory))
        assert list(rows[0]) == ['time', 'omega_1']
        assert rows[1]['omega_1'] == '314.1'

    def test_trajectory_states(self):
        trajectory = Trajectory(np.array([0.0, 1.0]), np.array([[1.0, 2.0], [3.0, 4.0]]), Engine.DDE)
        rows = read_dict_rows(write_trajectory(self.path / 'trajectory.csv', trajectory))
        assert list(rows[0]) == ['time', 'x_1', 'x_2']
        assert rows[1]['x_2'] == '4.0'

    def test_packet_log(self):
        records = [PacketRecord(0, 0, 1, True), PacketRecord(0, 1, 0, False)]
        rows = read_dict_rows(write_packet_log(self.path / 'packets.csv', records))
        assert tuple(rows[0]) == PACKET_COLUMNS
        assert [(row['link'], row['status']) for row in rows] == [('1->2', 'delivered'), ('2->1', 'lost')]

    def test_plot_scripts_reference_their_data(self):
        locus = write_root_locus_script(self.path / 'rootlocus.py', self.path / 'rootlocus.csv', 'delay')
        frequency = write_frequency_script(self.path / 'frequency.py',
                                           [('dde', self.path / 'trajectory_dde.csv'),
                                            ('nonlinear', self.path / 'trajectory_nonlinear.csv')], 3)
        locus_text, frequency_text = locus.read_text(), frequency.read_text()
        assert "read('rootlocus.csv')" in locus_text
        assert "'rootlocus.png'" in locus_text
        assert "('dde', 'trajectory_dde.csv')" in frequency_text
        assert 'plt.subplots(3, 1' in frequency_text
        for text in (locus_text, frequency_text):
            compile(text, 'script', 'exec')


class TestWriteCsv(TestCase):
    def test_spectrum_header(self):
        with patch.object(mgdde.io, 'write_csv') as mock_write_csv:
            write_spectrum(Path('spectrum.csv'), [])
            mock_write_csv.assert_called_once()
            file_name, header, rows = mock_write_csv.call_args[0]
            assert file_name == Path('spectrum.csv')
            assert header == SPECTRUM_COLUMNS
            assert list(rows) == []

    def test_unwritable_path(self):
        with tempfile.TemporaryDirectory() as directory:
            with pytest.raises(OSError):
                write_csv(Path(directory) / 'missing' / 'file.csv', ('a', ), [])
