"""
Test suite for the grid model and PMU placement
Run with: python -m pytest tests/test_grid.py -v
"""

import csv
from pathlib import Path

import pytest

from src.models.grid import (Branch, Bus, GridModel, MeasurementDescriptor,
                             branch_admittance, build_placement, dump_grid_csv,
                             expected_pmu_count, incident_branches, load_cdf,
                             parse_cdf)
from src.utils.errors import (CdfParseError, GridValidationError,
                              UnknownNodeError, ZeroImpedanceError)

CDF_PATH = Path(__file__).resolve().parents[1] / 'src' / 'data' / 'ieee14cdf.txt'


@pytest.fixture
def cdf_text():
    return CDF_PATH.read_text()


@pytest.fixture
def grid():
    return load_cdf(CDF_PATH)


class TestParseCdf:
    """Test IEEE CDF ingestion"""

    def test_shipped_case(self, grid):
        assert len(grid.buses) == 14
        assert len(grid.branches) == 20
        assert grid.bus_ids == list(range(1, 15))
        assert grid.is_connected()

    def test_parse_is_idempotent(self, cdf_text):
        assert parse_cdf(cdf_text) == parse_cdf(cdf_text)

    def test_taps_and_charging(self, grid):
        assert grid.branch(4, 7).tap == 0.978
        assert grid.branch(5, 6).tap == 0.932
        # zero turns ratio means no transformer
        assert grid.branch(1, 2).tap == 1.0
        assert grid.branch(1, 2).b_total == 0.0528

    def test_bus_fields(self, grid):
        bus = grid.get_bus(2)
        assert bus.name == "Bus 2     HV"
        assert bus.base_kv == 69.0

    def test_missing_branch_section(self, cdf_text):
        bus_only = cdf_text.split("BRANCH DATA FOLLOWS")[0]
        with pytest.raises(CdfParseError, match="BRANCH DATA FOLLOWS"):
            parse_cdf(bus_only)

    def test_dangling_branch(self, cdf_text):
        text = cdf_text.replace("   2    3  1  1 1 0", "   2   99  1  1 1 0")
        with pytest.raises(GridValidationError, match="unknown bus 99"):
            parse_cdf(text)

    def test_malformed_record_reports_line(self, cdf_text):
        text = cdf_text.replace("0.05917", "abc")
        with pytest.raises(CdfParseError, match="line 19") as info:
            parse_cdf(text)
        assert info.value.line == 19

    def test_zero_impedance_record_reports_line(self, cdf_text):
        text = cdf_text.replace("0.01938   0.05917", "0.0       0.0    ")
        with pytest.raises(CdfParseError, match="zero impedance") as info:
            parse_cdf(text)
        assert info.value.line == 19

    def test_unterminated_section(self, cdf_text):
        text = cdf_text.split("-999")[0]
        with pytest.raises(CdfParseError, match="not terminated"):
            parse_cdf(text)


class TestGridTypes:
    """Test bus/branch/grid validation"""

    def test_bus_validation(self):
        with pytest.raises(ValueError, match="base_kv must be positive"):
            Bus(1, "A", 0.0)
        with pytest.raises(ValueError, match="positive integer"):
            Bus(0, "A", 1.0)

    def test_branch_validation(self):
        with pytest.raises(ValueError, match="connects a bus to itself"):
            Branch(1, 1, 0.0, 0.1)
        with pytest.raises(ZeroImpedanceError):
            Branch(1, 2, 0.0, 0.0)
        with pytest.raises(ValueError, match="tap must be positive"):
            Branch(1, 2, 0.0, 0.1, tap=0.0)

    def test_duplicate_bus(self):
        with pytest.raises(GridValidationError, match="Duplicate"):
            GridModel([Bus(1, "A", 1.0), Bus(1, "B", 1.0)], [])

    def test_lookups(self, grid):
        assert grid.bus_index(1) == 0
        assert grid.bus_index(14) == 13
        with pytest.raises(UnknownNodeError):
            grid.bus_index(15)
        with pytest.raises(UnknownNodeError):
            grid.branch(2, 1)

    def test_other_end(self):
        branch = Branch(3, 5, 0.01, 0.1)
        assert branch.other_end(3) == 5
        assert branch.other_end(5) == 3
        with pytest.raises(UnknownNodeError):
            branch.other_end(4)


class TestBranchAdmittance:
    """Test the pi-model"""

    def test_pure_reactance(self):
        series, shunt_from, shunt_to = branch_admittance(Branch(1, 2, 0.0, 0.1))
        assert series == pytest.approx(-10j)
        assert shunt_from == 0
        assert shunt_to == 0

    def test_ieee14_branch_1_2(self, grid):
        series, _, _ = branch_admittance(grid.branch(1, 2))
        assert series.real == pytest.approx(4.999, abs=1e-3)
        assert series.imag == pytest.approx(-15.263, abs=1e-3)

    def test_half_charging_split(self, grid):
        _, shunt_from, shunt_to = branch_admittance(grid.branch(1, 2))
        assert shunt_from == pytest.approx(0.0264j)
        assert shunt_to == pytest.approx(0.0264j)

    def test_symmetric_without_tap(self, grid):
        for branch in grid.branches:
            if branch.tap == 1.0:
                _, shunt_from, shunt_to = branch_admittance(branch)
                assert shunt_from == shunt_to

    def test_tap_on_from_side(self):
        branch = Branch(1, 2, 0.0, 0.1, tap=0.9)
        series, shunt_from, shunt_to = branch_admittance(branch)
        y = -10j
        assert series == pytest.approx(y / 0.9)
        assert shunt_from == pytest.approx(y * 0.1 / 0.81)
        assert shunt_to == pytest.approx(y * -0.1 / 0.9)


class TestPlacement:
    """Test PMU placement"""

    def test_monitored_nodes(self, grid):
        placement = build_placement(grid, [2, 6, 7, 9], 2)
        assert [placement.pmu_count(n) for n in (2, 6, 7, 9)] == [3, 3, 2, 3]
        assert placement.pmu_count() == 11
        assert len(placement.descriptors()) == 19

    def test_single_pmu_node(self, grid):
        placement = build_placement(grid, [7], 4)
        assert placement.pmu_count() == 1
        assert len(placement.assignments[7][0]) == 4

    def test_one_channel_pmus(self, grid):
        assert build_placement(grid, [2], 1).pmu_count() == 5

    def test_node_7_split(self, grid):
        placement = build_placement(grid, [7], 2)
        labels = [[d.label() for d in pmu] for pmu in placement.assignments[7]]
        assert labels == [["V7", "I4-7@7"], ["I7-8@7", "I7-9@7"]]

    def test_unknown_node(self, grid):
        with pytest.raises(UnknownNodeError, match="unknown node 99"):
            build_placement(grid, [99], 2)

    def test_descriptor_round_trip(self, grid):
        for node in grid.bus_ids:
            placement = build_placement(grid, [node], 2)
            expected = {MeasurementDescriptor.voltage(node)}
            expected |= {MeasurementDescriptor.current(b, node) for b in incident_branches(grid, node)}
            assert set(placement.descriptors()) == expected
            assert placement.pmu_count(node) == expected_pmu_count(grid.degree(node), 2)

    def test_branch_monitored_from_both_ends(self, grid):
        placement = build_placement(grid, [7, 9], 2)
        branch_7_9 = [d for d in placement.descriptors() if d.branch == (7, 9)]
        assert sorted(d.node for d in branch_7_9) == [7, 9]


class TestIncidentBranches:
    """Test topology queries"""

    def test_node_7(self, grid):
        assert [b.key for b in incident_branches(grid, 7)] == [(4, 7), (7, 8), (7, 9)]

    def test_node_2(self, grid):
        assert len(incident_branches(grid, 2)) == 4

    def test_isolated_node(self):
        toy = GridModel([Bus(1, "A", 1.0), Bus(2, "B", 1.0), Bus(3, "C", 1.0)],
                        [Branch(1, 2, 0.01, 0.1)])
        assert incident_branches(toy, 3) == []
        assert not toy.is_connected()


class TestDumpGrid:
    """Test CSV export"""

    def test_dump(self, grid, tmp_path):
        bus_path, branch_path = dump_grid_csv(grid, tmp_path)
        with branch_path.open() as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ['from', 'to', 'r', 'x', 'b', 'tap']
        assert len(rows) == 21
        with bus_path.open() as fh:
            assert len(list(csv.reader(fh))) == 15
