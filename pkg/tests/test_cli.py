"""
Test suite for the command-line interface
Run with: python -m pytest tests/test_cli.py -v
"""

import csv

import pytest
from click.testing import CliRunner

from src.cli.interface import cli


@pytest.fixture
def runner():
    return CliRunner()


def read_csv(path):
    with path.open() as fh:
        return list(csv.DictReader(fh))


class TestBandwidthCommand:
    """Test the bandwidth table"""

    def test_table_values(self, runner, tmp_path):
        result = runner.invoke(cli, ['bandwidth', '--out', str(tmp_path)])
        assert result.exit_code == 0, result.output
        rows = read_csv(tmp_path / 'bandwidth.csv')
        assert [(r['config'], r['format'], r['placement'], r['bps'], r['saving_pct']) for r in rows] == [
            ('A', 'fixed', 'local', '126400', '58.9'),
            ('A', 'fixed', 'remote', '307200', '58.9'),
            ('A', 'float', 'local', '160000', '53.1'),
            ('A', 'float', 'remote', '340800', '53.1'),
            ('B', 'fixed', 'local', '155200', '53.8'),
            ('B', 'fixed', 'remote', '336000', '53.8'),
            ('B', 'float', 'local', '217600', '45.4'),
            ('B', 'float', 'remote', '398400', '45.4'),
        ]

    def test_tcpip_overhead(self, runner, tmp_path):
        result = runner.invoke(cli, ['bandwidth', '--config', 'A', '--format', 'float',
                                     '--overhead', '40', '--out', str(tmp_path)])
        assert result.exit_code == 0
        assert {r['saving_pct'] for r in read_csv(tmp_path / 'bandwidth.csv')} == {'32.7'}

    def test_invalid_config(self, runner):
        result = runner.invoke(cli, ['bandwidth', '--config', 'C'])
        assert result.exit_code == 2


class TestTopicsCommand:
    """Test the topic filter checker"""

    def test_match(self, runner):
        result = runner.invoke(cli, ['topics', 'REGION_1/ZONE_1/#', 'REGION_1/ZONE_1/Node_2/Topic_1'])
        assert result.exit_code == 0
        assert 'true' in result.output

    def test_no_match(self, runner):
        result = runner.invoke(cli, ['topics', 'REGION_1/+/Topic_1', 'REGION_1/ZONE_1/Node_2/Topic_1'])
        assert result.exit_code == 1
        assert 'false' in result.output

    def test_malformed_filter(self, runner):
        result = runner.invoke(cli, ['topics', 'a/#/b', 'a/x/b'])
        assert result.exit_code == 2


class TestDumpGridCommand:
    """Test grid export"""

    def test_dump(self, runner, tmp_path):
        result = runner.invoke(cli, ['dump-grid', '--out', str(tmp_path)])
        assert result.exit_code == 0, result.output
        assert len(read_csv(tmp_path / 'buses.csv')) == 14
        assert len(read_csv(tmp_path / 'branches.csv')) == 20

    def test_malformed_grid(self, runner, tmp_path):
        bad = tmp_path / 'bad.txt'
        bad.write_text("not a cdf file\n")
        result = runner.invoke(cli, ['dump-grid', '--grid', str(bad), '--out', str(tmp_path)])
        assert result.exit_code == 2


class TestLatencyCommand:
    """Test the latency campaign command"""

    def test_repeatable_outputs(self, runner, tmp_path):
        for run in ('one', 'two'):
            result = runner.invoke(cli, ['latency', '--mode', 'remote', '--trials', '50', '--seed', '9',
                                         '--out', str(tmp_path / run)])
            assert result.exit_code == 0, result.output
        for name in ('latency.csv', 'latency_cdf.csv'):
            assert (tmp_path / 'one' / name).read_bytes() == (tmp_path / 'two' / name).read_bytes()
        assert len(read_csv(tmp_path / 'one' / 'latency.csv')) == 50

    def test_unknown_node(self, runner):
        result = runner.invoke(cli, ['latency', '--node', '99', '--trials', '5'])
        assert result.exit_code != 0


class TestSeCommand:
    """Test the state-estimation command"""

    def test_default_placement(self, runner, tmp_path):
        result = runner.invoke(cli, ['se', '--trials', '3', '--out', str(tmp_path)])
        assert result.exit_code == 0, result.output
        rows = read_csv(tmp_path / 'estimate.csv')
        assert len(rows) == 14
        assert float(rows[0]['|V|']) == pytest.approx(1.06, abs=1e-9)
        timing, = read_csv(tmp_path / 'timing.csv')
        assert timing['trials'] == '3'

    def test_unobservable_placement(self, runner):
        result = runner.invoke(cli, ['se', '--placement', '2', '--trials', '1'])
        assert result.exit_code == 1
        assert 'rank deficiency' in result.output

    def test_bad_placement(self, runner):
        result = runner.invoke(cli, ['se', '--placement', 'two'])
        assert result.exit_code == 2
