"""
PMU emulator: measurement-level emulation of synchronized PMUs reading a
pre-stored operating point.
"""

import cmath
import logging
import math
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import PMU_SETTINGS
from src.models.frames import (FLOAT32, TIME_BASE, CommandFrame, DataFrame,
                               Phasor, PmuBlock, StreamConfig, Timestamp)
from src.models.grid import GridModel, MeasurementDescriptor, current_coefficients
from src.utils.errors import (ScenarioError, UnalignedTimestampError,
                              UnsupportedRateError)

logger = logging.getLogger(__name__)

# a = e^{j2pi/3}
A_OP = cmath.exp(2j * math.pi / 3)


class Scenario:
    """Operating point (bus voltages) plus an optional frequency profile"""

    def __init__(self, bus_voltages: Dict[int, complex],
                 nominal_freq: float = PMU_SETTINGS['nominal_freq'],
                 freq_profile: Optional[List[Tuple[float, float, float]]] = None,
                 start_soc: int = PMU_SETTINGS['start_soc']):
        for bus, voltage in bus_voltages.items():
            if not 0.5 < abs(voltage) < 1.5:
                raise ScenarioError(f"Bus {bus}: |V| = {abs(voltage):.3f} pu is outside (0.5, 1.5)")

        self.bus_voltages = dict(bus_voltages)
        self.nominal_freq = nominal_freq
        self.freq_profile = sorted(freq_profile or [])
        self.start_soc = start_soc


    def voltage(self, bus: int) -> complex:
        if bus not in self.bus_voltages:
            raise ScenarioError(f"Scenario has no voltage for bus {bus}")
        return self.bus_voltages[bus]


    def frequency_at(self, t: Timestamp) -> Tuple[float, float]:
        """(deviation mHz, rocof Hz/s) of the latest profile record at or before t"""
        elapsed = t.elapsed_since(self.start_soc)
        dev, rocof = 0.0, 0.0
        for when, d, r in self.freq_profile:
            if when > elapsed:
                break
            dev, rocof = d, r
        return dev, rocof


    def __repr__(self):
        return f"Scenario({len(self.bus_voltages)} buses, {len(self.freq_profile)} freq records)"


def parse_scenario(text: str) -> Scenario:
    """Records: `bus,v_re,v_im`, `freq,t,dev_mhz,rocof`, `start,soc`, `nominal,hz`"""
    voltages = {}
    profile = []
    options = {}
    for line_no, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith('#'):
            continue
        fields = [f.strip() for f in line.split(',')]
        try:
            if fields[0] == 'freq':
                if len(fields) != 4:
                    raise ScenarioError(f"line {line_no}: freq records need t,dev_mhz,rocof")
                profile.append((float(fields[1]), float(fields[2]), float(fields[3])))
            elif fields[0] == 'start':
                options['start_soc'] = int(fields[1])
            elif fields[0] == 'nominal':
                options['nominal_freq'] = float(fields[1])
            else:
                if len(fields) != 3:
                    raise ScenarioError(f"line {line_no}: bus records need bus,v_re,v_im")
                voltages[int(fields[0])] = complex(float(fields[1]), float(fields[2]))
        except (ValueError, IndexError) as e:
            if isinstance(e, ScenarioError):
                raise
            raise ScenarioError(f"line {line_no}: cannot parse {line!r}") from None

    return Scenario(voltages, freq_profile=profile, **options)


def load_scenario(path) -> Scenario:
    return parse_scenario(Path(path).read_text())


def true_measurements(grid: GridModel, scenario: Scenario, descriptor: MeasurementDescriptor) -> Phasor:
    """Noise-free phasor of a descriptor at the scenario's operating point"""
    if descriptor.is_voltage:
        grid.bus_index(descriptor.node)
        return Phasor.from_complex(scenario.voltage(descriptor.node))

    branch = grid.branch(*descriptor.branch)
    c_self, c_other, other = current_coefficients(branch, descriptor.node)
    value = c_self * scenario.voltage(descriptor.node) + c_other * scenario.voltage(other)
    return Phasor.from_complex(value)


def expand_layout(value: complex, layout: str) -> List[complex]:
    """Phasors reported for one channel of a balanced system"""
    if layout == 'positive':
        return [value]
    phases = [value, value * A_OP ** 2, value * A_OP]
    if layout == 'phase':
        return phases
    if layout == 'phase_sequence':
        return phases + [value, 0j, 0j]
    raise ValueError(f"Unknown phasor layout {layout!r}")


def positive_sequence(block: PmuBlock, channel: int, layout: str) -> complex:
    """Recover the positive-sequence phasor of a channel from a block"""
    width = PMU_SETTINGS['phasor_layouts'][layout]
    values = [p.to_complex() for p in block.phasors[channel * width:(channel + 1) * width]]
    if layout == 'positive':
        return values[0]
    if layout == 'phase_sequence':
        return values[3]
    va, vb, vc = values
    return (va + A_OP * vb + A_OP ** 2 * vc) / 3


class NoiseModel:
    """Per-channel Gaussian deviations"""

    def __init__(self, phasor: float = 0.0, freq_mhz: float = 0.0, rocof: float = 0.0):
        if min(phasor, freq_mhz, rocof) < 0:
            raise ValueError("Noise deviations must be non-negative")
        # relative to the phasor magnitude, applied to re and im independently
        self.phasor = phasor
        self.freq_mhz = freq_mhz
        self.rocof = rocof


    @property
    def is_zero(self) -> bool:
        return self.phasor == 0 and self.freq_mhz == 0 and self.rocof == 0


    def __repr__(self):
        return f"NoiseModel(phasor={self.phasor}, freq={self.freq_mhz} mHz, rocof={self.rocof})"


class EmulatedPmu:
    """One emulated PMU streaming frames for its assigned descriptors"""

    def __init__(self, idcode: int, descriptors: Sequence[MeasurementDescriptor],
                 channels: Optional[int] = None,
                 rate: int = PMU_SETTINGS['default_rate'],
                 fmt: str = FLOAT32,
                 layout: str = 'positive',
                 noise: Optional[NoiseModel] = None,
                 streaming: bool = True,
                 rng: Optional[np.random.Generator] = None,
                 node: Optional[int] = None):
        channels = channels if channels is not None else len(descriptors)
        if len(descriptors) > channels:
            raise ValueError(f"PMU {idcode}: {len(descriptors)} descriptors exceed {channels} channels")
        if layout not in PMU_SETTINGS['phasor_layouts']:
            raise ValueError(f"Unknown phasor layout {layout!r}")
        self._check_rate(rate)

        self.idcode = idcode
        self.descriptors = list(descriptors)
        self.channels = channels
        self.rate = rate
        self.fmt = fmt
        self.layout = layout
        self.noise = noise or NoiseModel()
        self.streaming = streaming
        self.rng = rng if rng is not None else np.random.default_rng()
        self.node = node
        self.audit_log: List[str] = []


    @staticmethod
    def _check_rate(rate: int):
        if rate not in PMU_SETTINGS['valid_rates']:
            raise UnsupportedRateError(
                f"Unsupported reporting rate {rate}; must be one of {PMU_SETTINGS['valid_rates']}")


    @property
    def interval_ticks(self) -> int:
        return TIME_BASE // self.rate


    @property
    def phasor_count(self) -> int:
        return self.channels * PMU_SETTINGS['phasor_layouts'][self.layout]


    def stream_config(self) -> StreamConfig:
        """Decoding info for this PMU's frames"""
        width = PMU_SETTINGS['phasor_layouts'][self.layout]
        nominals = []
        for k in range(self.channels):
            if k < len(self.descriptors) and not self.descriptors[k].is_voltage:
                nominal = PMU_SETTINGS['current_nominal']
            else:
                nominal = PMU_SETTINGS['voltage_nominal']
            nominals.extend([nominal] * width)
        return StreamConfig(self.fmt, (self.phasor_count,), (tuple(nominals),))


    def sample_frame(self, t: Timestamp, grid: GridModel, scenario: Scenario) -> Optional[DataFrame]:
        """Emit the frame for reporting instant t, or None when not streaming"""
        if t.fracsec % self.interval_ticks:
            raise UnalignedTimestampError(
                f"PMU {self.idcode}: {t} is not on the {self.rate} fps reporting grid")
        if not self.streaming:
            return None

        values: List[complex] = []
        for k in range(self.channels):
            if k < len(self.descriptors):
                true = true_measurements(grid, scenario, self.descriptors[k]).to_complex()
            else:
                true = 0j
            values.extend(expand_layout(true, self.layout))

        dev, rocof = scenario.frequency_at(t)
        if not self.noise.is_zero:
            values, dev, rocof = self._add_noise(values, dev, rocof)

        block = PmuBlock(0, tuple(Phasor.from_complex(v) for v in values), dev, rocof)
        return DataFrame(self.idcode, t, (block,), self.fmt)


    def _add_noise(self, values: List[complex], dev: float, rocof: float):
        sigma = self.noise.phasor * np.abs(np.asarray(values))
        re_noise = self.rng.normal(0.0, 1.0, len(values)) * sigma
        im_noise = self.rng.normal(0.0, 1.0, len(values)) * sigma
        noisy = [v + complex(re, im) for v, re, im in zip(values, re_noise, im_noise)]
        dev += self.rng.normal(0.0, self.noise.freq_mhz) if self.noise.freq_mhz else 0.0
        rocof += self.rng.normal(0.0, self.noise.rocof) if self.noise.rocof else 0.0
        return noisy, float(dev), float(rocof)


    def handle_command(self, command: CommandFrame) -> 'EmulatedPmu':
        """Apply data_on/data_off; commands for other streams are ignored"""
        if command.idcode != self.idcode:
            entry = f"ignored {command.command} addressed to idcode {command.idcode}"
            self.audit_log.append(entry)
            logger.warning("PMU %d %s", self.idcode, entry)
            return self

        self.streaming = command.command == 'data_on'
        return self


    def set_rate(self, rate: int) -> 'EmulatedPmu':
        """Switch reporting rate; frames stay aligned to second boundaries"""
        self._check_rate(rate)
        if rate != self.rate:
            logger.info("PMU %d rate %d -> %d fps", self.idcode, self.rate, rate)
        self.rate = rate
        return self


    def __repr__(self):
        labels = ", ".join(d.label() for d in self.descriptors)
        return f"EmulatedPmu({self.idcode}: [{labels}], {self.rate} fps, {'on' if self.streaming else 'off'})"


def reporting_instants(start_soc: int, count: int, rate: int) -> Iterator[Timestamp]:
    """count consecutive reporting instants from the start of start_soc"""
    step = TIME_BASE // rate
    base = start_soc * TIME_BASE
    for k in range(count):
        yield Timestamp.from_ticks(base + k * step)
