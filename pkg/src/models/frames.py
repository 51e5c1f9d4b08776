"""
Synchrophasor frame value types in the IEEE C37.118.2 style.
"""

import math
from functools import total_ordering
from typing import List, Optional, Sequence, Tuple

from config.settings import CODEC_SETTINGS, COMMAND_CODES
from src.utils.errors import UnknownCommandError

TIME_BASE = CODEC_SETTINGS['time_base']

FIXED16 = 'fixed16'
FLOAT32 = 'float32'
FORMATS = (FIXED16, FLOAT32)


@total_ordering
class Timestamp:
    def __init__(self, soc: int, fracsec: int = 0):
        if not 0 <= soc <= 0xFFFFFFFF:
            raise ValueError(f"soc out of 32-bit range: {soc}")
        if not 0 <= fracsec < TIME_BASE:
            raise ValueError(f"fracsec must be in [0, {TIME_BASE}), got {fracsec}")

        self.soc = soc
        self.fracsec = fracsec


    @classmethod
    def from_ticks(cls, ticks: int) -> 'Timestamp':
        soc, fracsec = divmod(ticks, TIME_BASE)
        return cls(soc, fracsec)


    @classmethod
    def from_seconds(cls, seconds: float) -> 'Timestamp':
        return cls.from_ticks(round(seconds * TIME_BASE))


    @property
    def total_ticks(self) -> int:
        return self.soc * TIME_BASE + self.fracsec


    def seconds(self) -> float:
        return self.soc + self.fracsec / TIME_BASE


    def elapsed_since(self, origin_soc: int) -> float:
        """Seconds from the start of origin_soc, exact to the tick"""
        return (self.total_ticks - origin_soc * TIME_BASE) / TIME_BASE


    def __eq__(self, other):
        return isinstance(other, Timestamp) and self.total_ticks == other.total_ticks


    def __lt__(self, other):
        if not isinstance(other, Timestamp):
            return NotImplemented
        return self.total_ticks < other.total_ticks


    def __hash__(self):
        return hash(self.total_ticks)


    def __str__(self):
        return f"{self.soc}.{self.fracsec:06d}"


    def __repr__(self):
        return f"Timestamp({self.soc}, {self.fracsec})"


class Phasor:
    def __init__(self, re: float, im: float):
        if not (math.isfinite(re) and math.isfinite(im)):
            raise ValueError("Phasor components must be finite")

        self.re = re
        self.im = im


    @classmethod
    def from_complex(cls, value: complex) -> 'Phasor':
        return cls(float(value.real), float(value.imag))


    def to_complex(self) -> complex:
        return complex(self.re, self.im)


    def __eq__(self, other):
        return isinstance(other, Phasor) and (self.re, self.im) == (other.re, other.im)


    def __hash__(self):
        return hash((self.re, self.im))


    def __repr__(self):
        return f"Phasor({self.re}, {self.im})"


class PmuBlock:
    def __init__(self, stat: int = 0, phasors: Sequence[Phasor] = (),
                 freq_dev: float = 0.0, rocof: float = 0.0):
        if not 0 <= stat <= 0xFFFF:
            raise ValueError(f"stat must be a 16-bit word, got {stat}")

        self.stat = stat
        self.phasors: Tuple[Phasor, ...] = tuple(phasors)
        self.freq_dev = freq_dev
        self.rocof = rocof


    @property
    def is_valid(self) -> bool:
        return self.stat == 0


    def _key(self):
        return (self.stat, self.phasors, self.freq_dev, self.rocof)


    def __eq__(self, other):
        return isinstance(other, PmuBlock) and self._key() == other._key()


    def __hash__(self):
        return hash(self._key())


    def __repr__(self):
        return f"PmuBlock(stat={self.stat}, {len(self.phasors)} phasors, freq={self.freq_dev}, rocof={self.rocof})"


class DataFrame:
    def __init__(self, idcode: int, timestamp: Timestamp, blocks: Sequence[PmuBlock], fmt: str = FLOAT32):
        blocks = tuple(blocks)
        if not blocks:
            raise ValueError("A data frame needs at least one PMU block")
        if fmt not in FORMATS:
            raise ValueError(f"Unknown data format {fmt!r}")
        if not 0 <= idcode <= 0xFFFF:
            raise ValueError(f"idcode must be 16-bit, got {idcode}")

        self.idcode = idcode
        self.timestamp = timestamp
        self.blocks: Tuple[PmuBlock, ...] = blocks
        self.fmt = fmt


    @property
    def phasor_counts(self) -> List[int]:
        return [len(b.phasors) for b in self.blocks]


    def _key(self):
        return (self.idcode, self.timestamp, self.blocks, self.fmt)


    def __eq__(self, other):
        return isinstance(other, DataFrame) and self._key() == other._key()


    def __hash__(self):
        return hash(self._key())


    def __repr__(self):
        return f"DataFrame({self.idcode} @ {self.timestamp}: {len(self.blocks)} blocks, {self.fmt})"


class CommandFrame:
    def __init__(self, idcode: int, timestamp: Timestamp, command: str):
        if command not in COMMAND_CODES:
            raise UnknownCommandError(f"Unsupported command {command!r}")

        self.idcode = idcode
        self.timestamp = timestamp
        self.command = command


    @property
    def code(self) -> int:
        return COMMAND_CODES[self.command]


    def __eq__(self, other):
        return (isinstance(other, CommandFrame)
                and (self.idcode, self.timestamp, self.command) == (other.idcode, other.timestamp, other.command))


    def __hash__(self):
        return hash((self.idcode, self.timestamp, self.command))


    def __repr__(self):
        return f"CommandFrame({self.idcode} @ {self.timestamp}: {self.command})"


class StreamConfig:
    """What a receiver must know to decode a stream (CFG frames are not used).

    nominals holds one nominal magnitude per phasor channel per block and only
    matters for fixed16 scaling; None means 1.0 per-unit everywhere.
    """

    def __init__(self, fmt: str, phasor_counts: Sequence[int],
                 nominals: Optional[Sequence[Sequence[float]]] = None):
        phasor_counts = tuple(phasor_counts)
        if nominals is not None:
            nominals = tuple(tuple(n) for n in nominals)
            if [len(n) for n in nominals] != list(phasor_counts):
                raise ValueError("nominals must match phasor_counts block by block")

        self.fmt = fmt
        self.phasor_counts: Tuple[int, ...] = phasor_counts
        self.nominals: Optional[Tuple[Tuple[float, ...], ...]] = nominals


    @classmethod
    def for_frame(cls, frame: DataFrame, nominals=None) -> 'StreamConfig':
        return cls(frame.fmt, tuple(frame.phasor_counts), nominals)


    def nominal(self, block: int, channel: int) -> float:
        if self.nominals is None:
            return 1.0
        return self.nominals[block][channel]


    def concat(self, other: 'StreamConfig') -> 'StreamConfig':
        """Config of a frame made of this stream's blocks followed by other's"""
        if self.fmt != other.fmt:
            raise ValueError("Cannot concatenate streams with different formats")
        nominals = None
        if self.nominals is not None or other.nominals is not None:
            nominals = (self._nominals_or_unit() + other._nominals_or_unit())
        return StreamConfig(self.fmt, self.phasor_counts + other.phasor_counts, nominals)


    def _nominals_or_unit(self):
        if self.nominals is not None:
            return self.nominals
        return tuple(tuple(1.0 for _ in range(n)) for n in self.phasor_counts)


    def __eq__(self, other):
        return (isinstance(other, StreamConfig)
                and (self.fmt, self.phasor_counts, self.nominals)
                == (other.fmt, other.phasor_counts, other.nominals))


    def __hash__(self):
        return hash((self.fmt, self.phasor_counts, self.nominals))


    def __repr__(self):
        return f"StreamConfig({self.fmt}, {self.phasor_counts})"
