"""
Network model for the monitored grid: buses, branches and PMU placement.
Parses the IEEE Common Data Format distributed by the power systems test case archive.
"""

import csv
import logging
import math
from pathlib import Path
from typing import Dict, Iterable, List, NamedTuple, Optional, Set, Tuple

from config.settings import GRID_SETTINGS
from src.utils.errors import (CdfParseError, GridValidationError,
                              UnknownNodeError, ZeroImpedanceError)

logger = logging.getLogger(__name__)


class Bus:
    def __init__(self, id: int, name: str, base_kv: float):
        if not isinstance(id, int) or id < 1:
            raise GridValidationError(f"Bus id must be a positive integer, got {id!r}")
        if base_kv <= 0:
            raise GridValidationError(f"Bus {id}: base_kv must be positive")

        self.id = id
        self.name = name.strip()
        self.base_kv = base_kv


    def __eq__(self, other):
        return (isinstance(other, Bus) and self.id == other.id
                and self.name == other.name and self.base_kv == other.base_kv)


    def __hash__(self):
        return hash(self.id)


    def __repr__(self):
        return f"Bus({self.id}: {self.name}, {self.base_kv} kV)"


class Branch:
    def __init__(self, from_bus: int, to_bus: int, r: float, x: float,
                 b_total: float = 0.0, tap: float = 1.0):
        if from_bus == to_bus:
            raise GridValidationError(f"Branch {from_bus}-{to_bus} connects a bus to itself")
        if r == 0 and x == 0:
            raise ZeroImpedanceError(f"Branch {from_bus}-{to_bus} has zero impedance")
        if tap <= 0:
            raise GridValidationError(f"Branch {from_bus}-{to_bus}: tap must be positive")

        self.from_bus = from_bus
        self.to_bus = to_bus
        self.r = r
        self.x = x
        self.b_total = b_total
        self.tap = tap


    @property
    def key(self) -> Tuple[int, int]:
        return (self.from_bus, self.to_bus)


    def other_end(self, node: int) -> int:
        """Return the bus at the opposite end from node"""
        if node == self.from_bus:
            return self.to_bus
        if node == self.to_bus:
            return self.from_bus
        raise UnknownNodeError(f"Bus {node} is not an endpoint of branch {self.key}")


    def __eq__(self, other):
        return (isinstance(other, Branch) and self.key == other.key
                and (self.r, self.x, self.b_total, self.tap)
                == (other.r, other.x, other.b_total, other.tap))


    def __hash__(self):
        return hash(self.key)


    def __repr__(self):
        return f"Branch({self.from_bus}-{self.to_bus}: r={self.r}, x={self.x}, tap={self.tap})"


class MeasurementDescriptor(NamedTuple):
    """One measured quantity: a bus voltage, or a branch current seen from node"""
    kind: str
    node: int
    branch: Optional[Tuple[int, int]] = None

    @classmethod
    def voltage(cls, node: int) -> 'MeasurementDescriptor':
        return cls('V', node)

    @classmethod
    def current(cls, branch: Branch, at_node: int) -> 'MeasurementDescriptor':
        branch.other_end(at_node)
        return cls('I', at_node, branch.key)

    @property
    def is_voltage(self) -> bool:
        return self.kind == 'V'

    def label(self) -> str:
        if self.is_voltage:
            return f"V{self.node}"
        return f"I{self.branch[0]}-{self.branch[1]}@{self.node}"


class GridModel:
    """Buses and branches of a network, immutable once built"""

    def __init__(self, buses: List[Bus], branches: List[Branch]):
        ids = [b.id for b in buses]
        if len(set(ids)) != len(ids):
            raise GridValidationError("Duplicate bus ids in grid")

        known = set(ids)
        for branch in branches:
            for end in branch.key:
                if end not in known:
                    raise GridValidationError(
                        f"Branch {branch.from_bus}-{branch.to_bus} references unknown bus {end}")

        self.buses: Tuple[Bus, ...] = tuple(sorted(buses, key=lambda b: b.id))
        self.branches: Tuple[Branch, ...] = tuple(branches)
        self._bus_index = {bus.id: i for i, bus in enumerate(self.buses)}
        self._branches_by_key = {branch.key: branch for branch in self.branches}


    @property
    def bus_ids(self) -> List[int]:
        return [bus.id for bus in self.buses]


    def bus_index(self, bus_id: int) -> int:
        """Position of a bus in the sorted bus list (state vector ordering)"""
        if bus_id not in self._bus_index:
            raise UnknownNodeError(f"Unknown bus {bus_id}")
        return self._bus_index[bus_id]


    def get_bus(self, bus_id: int) -> Bus:
        return self.buses[self.bus_index(bus_id)]


    def branch(self, from_bus: int, to_bus: int) -> Branch:
        """Find branch by its (from, to) key"""
        if (from_bus, to_bus) not in self._branches_by_key:
            raise UnknownNodeError(f"Unknown branch {from_bus}-{to_bus}")
        return self._branches_by_key[(from_bus, to_bus)]


    def degree(self, node: int) -> int:
        return len(incident_branches(self, node))


    def is_connected(self) -> bool:
        """Check graph connectivity with a breadth-first walk"""
        if not self.buses:
            return True
        neighbours: Dict[int, Set[int]] = {bus.id: set() for bus in self.buses}
        for branch in self.branches:
            neighbours[branch.from_bus].add(branch.to_bus)
            neighbours[branch.to_bus].add(branch.from_bus)

        seen = {self.buses[0].id}
        frontier = [self.buses[0].id]
        while frontier:
            node = frontier.pop()
            for nxt in neighbours[node] - seen:
                seen.add(nxt)
                frontier.append(nxt)
        return len(seen) == len(self.buses)


    def __eq__(self, other):
        return (isinstance(other, GridModel) and self.buses == other.buses
                and self.branches == other.branches)


    def __repr__(self):
        return f"GridModel({len(self.buses)} buses, {len(self.branches)} branches)"


class PmuPlacement:
    """Measurement descriptors per monitored node, packed into PMUs"""

    def __init__(self, channels_per_pmu: int, assignments: Dict[int, List[List[MeasurementDescriptor]]]):
        self.channels_per_pmu = channels_per_pmu
        self.assignments = assignments
        self.monitored_nodes = set(assignments)

        seen = set()
        for node, pmus in assignments.items():
            for pmu in pmus:
                if len(pmu) > channels_per_pmu:
                    raise GridValidationError(f"PMU at node {node} holds more than {channels_per_pmu} channels")
                for descriptor in pmu:
                    if descriptor in seen:
                        raise GridValidationError(f"Descriptor {descriptor.label()} assigned twice")
                    seen.add(descriptor)


    def pmus(self) -> List[Tuple[int, List[MeasurementDescriptor]]]:
        """Flattened (node, descriptors) list in node then PMU order"""
        return [(node, pmu) for node in sorted(self.assignments) for pmu in self.assignments[node]]


    def descriptors(self) -> List[MeasurementDescriptor]:
        return [d for _, pmu in self.pmus() for d in pmu]


    def pmu_count(self, node: Optional[int] = None) -> int:
        if node is None:
            return len(self.pmus())
        return len(self.assignments.get(node, []))


    def __repr__(self):
        counts = ", ".join(f"{n}:{len(p)}" for n, p in sorted(self.assignments.items()))
        return f"PmuPlacement({self.pmu_count()} PMUs; {counts})"


def _section(lines: List[str], header: str, start: int) -> Tuple[List[Tuple[int, str]], int]:
    """Collect records after a FOLLOWS header up to the -999 terminator"""
    for i in range(start, len(lines)):
        if lines[i].upper().startswith(header):
            records = []
            for j in range(i + 1, len(lines)):
                if lines[j].strip().startswith('-999'):
                    return records, j + 1
                if lines[j].strip():
                    records.append((j + 1, lines[j]))
            raise CdfParseError(f"{header} section is not terminated by -999", line=len(lines))
    raise CdfParseError(f"missing {header} section")


def _number(token: str, line: int, what: str, cast=float):
    try:
        return cast(token)
    except ValueError:
        raise CdfParseError(f"invalid {what} {token!r}", line=line) from None


def parse_cdf(text: str) -> GridModel:
    """Build a GridModel from the bus and branch sections of a CDF document"""
    lines = text.splitlines()
    bus_records, after_bus = _section(lines, 'BUS DATA FOLLOWS', 0)
    branch_records, _ = _section(lines, 'BRANCH DATA FOLLOWS', after_bus)

    buses = []
    for line_no, record in bus_records:
        if len(record) < 18:
            raise CdfParseError("bus record too short", line=line_no)
        bus_id = _number(record[:4], line_no, "bus number", int)
        name = record[5:17]
        fields = record[17:].split()
        if len(fields) < 15:
            raise CdfParseError(f"bus record has {len(fields)} fields after the name, expected 15", line=line_no)
        base_kv = _number(fields[9], line_no, "base kV")
        if base_kv == 0:
            logger.info("bus %d has no base kV, using %s", bus_id, GRID_SETTINGS['default_base_kv'])
            base_kv = GRID_SETTINGS['default_base_kv']
        try:
            buses.append(Bus(bus_id, name, base_kv))
        except GridValidationError as e:
            raise CdfParseError(str(e), line=line_no) from None

    branches = []
    for line_no, record in branch_records:
        fields = record.split()
        if len(fields) < 15:
            raise CdfParseError(f"branch record has {len(fields)} fields, expected at least 15", line=line_no)
        from_bus = _number(fields[0], line_no, "tap bus number", int)
        to_bus = _number(fields[1], line_no, "z bus number", int)
        r = _number(fields[6], line_no, "resistance")
        x = _number(fields[7], line_no, "reactance")
        b_total = _number(fields[8], line_no, "line charging")
        tap = _number(fields[14], line_no, "turns ratio")
        try:
            branches.append(Branch(from_bus, to_bus, r, x, b_total, tap if tap != 0 else 1.0))
        except (GridValidationError, ZeroImpedanceError) as e:
            raise CdfParseError(str(e), line=line_no) from None

    return GridModel(buses, branches)


def load_cdf(path) -> GridModel:
    """Read and parse a CDF file from disk"""
    return parse_cdf(Path(path).read_text())


def branch_admittance(branch: Branch) -> Tuple[complex, complex, complex]:
    """Pi-model of a branch with the off-nominal tap on the from side.

    Returns (series, shunt_from, shunt_to) so that the current leaving the
    from bus is series*(Vf - Vt) + shunt_from*Vf and symmetrically for the to bus.
    """
    if branch.r == 0 and branch.x == 0:
        raise ZeroImpedanceError(f"Branch {branch.key} has zero impedance")

    y = 1 / complex(branch.r, branch.x)
    charging = complex(0, branch.b_total / 2)
    a = branch.tap

    series = y / a
    shunt_from = y * (1 - a) / a ** 2 + charging / a ** 2
    shunt_to = y * (a - 1) / a + charging
    return series, shunt_from, shunt_to


def incident_branches(grid: GridModel, node: int) -> List[Branch]:
    """All branches touching node, ordered by (from, to)"""
    grid.bus_index(node)
    return sorted((b for b in grid.branches if node in b.key), key=lambda b: b.key)


def build_placement(grid: GridModel, monitored: Iterable[int], channels_per_pmu: int) -> PmuPlacement:
    """Assign voltage and incident-current descriptors of each node to PMUs"""
    if channels_per_pmu < 1:
        raise GridValidationError("channels_per_pmu must be at least 1")

    assignments = {}
    for node in sorted(set(monitored)):
        if node not in grid.bus_ids:
            raise UnknownNodeError(f"Cannot monitor unknown node {node}")

        descriptors = [MeasurementDescriptor.voltage(node)]
        descriptors.extend(MeasurementDescriptor.current(b, node) for b in incident_branches(grid, node))
        assignments[node] = [descriptors[i:i + channels_per_pmu]
                             for i in range(0, len(descriptors), channels_per_pmu)]

    return PmuPlacement(channels_per_pmu, assignments)


def expected_pmu_count(degree: int, channels_per_pmu: int) -> int:
    return math.ceil((1 + degree) / channels_per_pmu)


def dump_grid_csv(grid: GridModel, out_dir) -> Tuple[Path, Path]:
    """Write buses.csv and branches.csv into out_dir"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    bus_path = out / 'buses.csv'
    with bus_path.open('w', newline='') as fh:
        writer = csv.writer(fh)
        writer.writerow(['id', 'name', 'base_kv'])
        for bus in grid.buses:
            writer.writerow([bus.id, bus.name, bus.base_kv])

    branch_path = out / 'branches.csv'
    with branch_path.open('w', newline='') as fh:
        writer = csv.writer(fh)
        writer.writerow(['from', 'to', 'r', 'x', 'b', 'tap'])
        for branch in grid.branches:
            writer.writerow([branch.from_bus, branch.to_bus, branch.r, branch.x, branch.b_total, branch.tap])

    return bus_path, branch_path


def current_coefficients(branch: Branch, at_node: int, include_shunts: bool = True) -> Tuple[complex, complex, int]:
    """Linear map of a branch current measured at at_node.

    Returns (c_self, c_other, other_node) with I = c_self*V_self + c_other*V_other.
    """
    series, shunt_from, shunt_to = branch_admittance(branch)
    shunt = shunt_from if at_node == branch.from_bus else shunt_to
    other = branch.other_end(at_node)
    if not include_shunts:
        shunt = 0j
    return series + shunt, -series, other
