"""
Virtual Object: the cyber counterpart of one PMU.

Caches the PMU's frames at full rate and serves field selections, window
averages, triggers (periodic or threshold) and topic-driven rate requests
through a key-value representation.
"""

import bisect
import json
import logging
import operator
import re
import threading
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config.settings import PMU_SETTINGS, VO_SETTINGS
from src.models.frames import (TIME_BASE, CommandFrame, DataFrame, Phasor,
                               PmuBlock, StreamConfig, Timestamp)
from src.services.codec import decode_data_frame, encode_command, encode_data_frame, frame_kind
from src.utils.errors import NoDataError, SelectorError, TriggerError, UnsupportedRateError

logger = logging.getLogger(__name__)

HEADER_KEYS = ('idcode', 'soc', 'fracsec')
SCALAR_KEYS = HEADER_KEYS + ('freq', 'rocof')
_PHASOR_KEY = re.compile(r'^phasor\.(\d+)\.(re|im)$')

COMPARATORS: Dict[str, Callable[[float, float], bool]] = {
    '>': operator.gt,
    '<': operator.lt,
    '>=': operator.ge,
    '<=': operator.le,
    '≥': operator.ge,
    '≤': operator.le,
}

REPRESENTATIONS = ('key_value', 'frame')


def is_canonical_key(key: str) -> bool:
    return key in SCALAR_KEYS or _PHASOR_KEY.match(key) is not None


def validate_selector(selector: Iterable[str]) -> List[str]:
    keys = list(selector)
    unknown = [k for k in keys if not is_canonical_key(k)]
    if unknown:
        raise SelectorError(f"Unknown keys in selector: {unknown}")
    return keys


def frame_to_record(frame: DataFrame, block: int = 0) -> Dict[str, float]:
    """Full key-value view of one block of a frame"""
    b = frame.blocks[block]
    record = {
        'idcode': frame.idcode,
        'soc': frame.timestamp.soc,
        'fracsec': frame.timestamp.fracsec,
        'freq': b.freq_dev,
        'rocof': b.rocof,
    }
    for k, phasor in enumerate(b.phasors):
        record[f'phasor.{k}.re'] = phasor.re
        record[f'phasor.{k}.im'] = phasor.im
    return record


def project(record: Dict[str, float], selector: Sequence[str]) -> Dict[str, float]:
    missing = [k for k in selector if k not in record]
    if missing:
        raise SelectorError(f"Fields not present in record: {missing}")
    return {k: record[k] for k in selector}


def block_from_record(record: Dict[str, float]) -> PmuBlock:
    """Rebuild a measurement block from a full key-value record"""
    indices = sorted({int(m.group(1)) for m in map(_PHASOR_KEY.match, record) if m})
    if indices != list(range(len(indices))):
        raise SelectorError("Record does not carry a contiguous phasor set")
    phasors = tuple(Phasor(record[f'phasor.{k}.re'], record[f'phasor.{k}.im']) for k in indices)
    return PmuBlock(int(record.get('stat', 0)), phasors, record.get('freq', 0.0), record.get('rocof', 0.0))


def record_timestamp(record: Dict[str, float]) -> Timestamp:
    return Timestamp(int(record['soc']), int(record['fracsec']))


def record_to_document(record: Dict[str, float]) -> bytes:
    """Key-value document on the wire: JSON with decimal numbers, sorted keys"""
    return json.dumps(record, sort_keys=True, separators=(',', ':')).encode()


def document_to_record(document: bytes) -> Dict[str, float]:
    record = json.loads(document)
    if not isinstance(record, dict):
        raise SelectorError("Key-value document must be an object")
    validate_selector(record)
    return record


class Trigger:
    """Push rule registered on a VO: periodic or threshold"""

    def __init__(self, id: str, kind: str, selector: Sequence[str], destination: str,
                 period: Optional[float] = None, phase: float = 0.0,
                 field: Optional[str] = None, comparator: Optional[str] = None,
                 bound: Optional[float] = None,
                 representation: str = 'key_value', track_rate: bool = False):
        if not id:
            raise TriggerError("Trigger id cannot be empty")
        if not destination:
            raise TriggerError(f"Trigger {id}: destination is required")
        if representation not in REPRESENTATIONS:
            raise TriggerError(f"Trigger {id}: unknown representation {representation!r}")

        if kind == 'periodic':
            if period is None or period <= 0:
                raise TriggerError(f"Trigger {id}: periodic triggers need period > 0")
            if field is not None or comparator is not None or bound is not None:
                raise TriggerError(f"Trigger {id}: periodic triggers take no field/comparator/bound")
        elif kind == 'threshold':
            if field is None or comparator is None or bound is None:
                raise TriggerError(f"Trigger {id}: threshold triggers need field, comparator and bound")
            if comparator not in COMPARATORS:
                raise TriggerError(f"Trigger {id}: unknown comparator {comparator!r}")
            if period is not None:
                raise TriggerError(f"Trigger {id}: threshold triggers take no period")
            validate_selector([field])
        else:
            raise TriggerError(f"Trigger {id}: unknown kind {kind!r}")

        self.id = id
        self.kind = kind
        self.selector = validate_selector(selector)
        self.destination = destination
        self.field = field
        self.comparator = comparator
        self.bound = bound
        self.representation = representation
        self.track_rate = track_rate
        self.phase_ticks = round(phase * TIME_BASE)
        self.period_ticks = round(period * TIME_BASE) if period is not None else None
        self._last_index: Optional[int] = None


    @classmethod
    def periodic(cls, id: str, period: float, selector: Sequence[str], destination: str, **kwargs) -> 'Trigger':
        return cls(id, 'periodic', selector, destination, period=period, **kwargs)


    @classmethod
    def threshold(cls, id: str, field: str, comparator: str, bound: float,
                  selector: Sequence[str], destination: str, **kwargs) -> 'Trigger':
        return cls(id, 'threshold', selector, destination, field=field, comparator=comparator,
                   bound=bound, **kwargs)


    @classmethod
    def from_document(cls, document: Dict) -> 'Trigger':
        """Build from a POSTed trigger document"""
        try:
            return cls(
                id=document['id'],
                kind=document['kind'],
                selector=document.get('selector', []),
                destination=document['destination'],
                period=document.get('period'),
                phase=document.get('phase', 0.0),
                field=document.get('field'),
                comparator=document.get('comparator'),
                bound=document.get('bound'),
                representation=document.get('representation', 'key_value'),
                track_rate=document.get('track_rate', False),
            )
        except KeyError as e:
            raise TriggerError(f"Trigger document is missing {e.args[0]!r}") from None


    @property
    def period(self) -> Optional[float]:
        return None if self.period_ticks is None else self.period_ticks / TIME_BASE


    def firings(self, t: Timestamp, record: Dict[str, float]) -> int:
        """How many pushes the arrival of a frame at t produces"""
        if self.kind == 'threshold':
            # absent field never violates
            value = record.get(self.field)
            if value is None:
                return 0
            return int(COMPARATORS[self.comparator](value, self.bound))

        offset = t.total_ticks - self.phase_ticks
        index = offset // self.period_ticks
        if self._last_index is None:
            self._last_index = index
            return int(offset % self.period_ticks == 0)
        if index <= self._last_index:
            return 0
        count = index - self._last_index
        self._last_index = index
        return count


    def retime(self, period: float, now: Optional[Timestamp] = None):
        """Change a periodic trigger's period, keeping it anchored at now"""
        if self.kind != 'periodic':
            raise TriggerError(f"Trigger {self.id} is not periodic")
        if period <= 0:
            raise TriggerError("period must be positive")
        self.period_ticks = round(period * TIME_BASE)
        if now is None:
            self._last_index = None
        else:
            self._last_index = (now.total_ticks - self.phase_ticks) // self.period_ticks


    def __repr__(self):
        if self.kind == 'periodic':
            rule = f"every {self.period}s"
        else:
            rule = f"{self.field} {self.comparator} {self.bound}"
        return f"Trigger({self.id}: {rule} -> {self.destination})"


class PushMessage:
    """Outbound push produced by a trigger or a topic subscription"""

    def __init__(self, source: str, destination: str, timestamp: Timestamp,
                 payload: bytes, record: Dict[str, float], trigger_id: Optional[str] = None,
                 frame: Optional[DataFrame] = None):
        self.source = source
        self.destination = destination
        self.timestamp = timestamp
        self.payload = payload
        self.record = record
        self.trigger_id = trigger_id
        self.frame = frame


    @property
    def is_topic(self) -> bool:
        """Resource addresses start with '/', anything else is a topic name"""
        return not self.destination.startswith('/')


    def __repr__(self):
        return f"PushMessage({self.source} -> {self.destination} @ {self.timestamp}, {len(self.payload)} B)"


class VoResource:
    """Virtual Object for one PMU stream"""

    def __init__(self, vo_id: str, pmu_idcode: int,
                 capacity: int = VO_SETTINGS['buffer_capacity'],
                 stream_config: Optional[StreamConfig] = None,
                 pmu=None):
        if capacity < 1:
            raise ValueError("Buffer capacity must be at least 1")

        self.vo_id = vo_id
        self.pmu_idcode = pmu_idcode
        self.capacity = capacity
        self.stream_config = stream_config
        self.pmu = pmu
        self.buffer: List[DataFrame] = []
        self.triggers: Dict[str, Trigger] = {}
        self.subscriptions: List[Tuple[str, List[str]]] = []
        self.audit_log: List[str] = []
        self._ticks: List[int] = []
        self._lock = threading.RLock()


    def _audit(self, entry: str):
        self.audit_log.append(entry)
        logger.warning("VO %s %s", self.vo_id, entry)


    def ingest(self, frame: DataFrame) -> bool:
        """Insert a frame in timestamp order; False if rejected or duplicate"""
        if frame.idcode != self.pmu_idcode:
            self._audit(f"rejected frame from idcode {frame.idcode}")
            return False

        ticks = frame.timestamp.total_ticks
        with self._lock:
            pos = bisect.bisect_left(self._ticks, ticks)
            if pos < len(self._ticks) and self._ticks[pos] == ticks:
                logger.debug("VO %s dropped duplicate frame %s", self.vo_id, frame.timestamp)
                return False
            self._ticks.insert(pos, ticks)
            self.buffer.insert(pos, frame)
            if len(self.buffer) > self.capacity:
                del self._ticks[0]
                del self.buffer[0]
        return True


    def ingest_bytes(self, payload: bytes) -> Optional[DataFrame]:
        """Decode a wire frame from the PMU and ingest it"""
        try:
            if frame_kind(payload) != 'data':
                self._audit("discarded command frame on the data path")
                return None
            frame = decode_data_frame(payload, self.stream_config)
        except ValueError as e:
            self._audit(f"discarded undecodable frame: {e}")
            return None
        return frame if self.ingest(frame) else None


    def receive(self, frame: DataFrame) -> List[PushMessage]:
        """Ingest then evaluate triggers and subscriptions"""
        if not self.ingest(frame):
            return []
        return self.evaluate_triggers(frame)


    def get_resource(self, selector: Sequence[str], window: Optional[int] = None) -> Dict[str, float]:
        """Latest values of the selected fields, or their mean over the newest window frames"""
        keys = validate_selector(selector)
        with self._lock:
            if not self.buffer:
                raise NoDataError(f"VO {self.vo_id} has no buffered data")
            if window is None:
                return project(frame_to_record(self.buffer[-1]), keys)
            if window < 1 or window > len(self.buffer):
                raise NoDataError(f"Window {window} exceeds the {len(self.buffer)} buffered frames")
            records = [frame_to_record(f) for f in self.buffer[-window:]]

        newest = records[-1]
        result = {}
        for key in keys:
            if key not in newest:
                raise SelectorError(f"Field {key!r} not present in buffered frames")
            if key in HEADER_KEYS:
                result[key] = newest[key]
            else:
                result[key] = float(np.mean([r[key] for r in records]))
        return result


    def register_trigger(self, trigger: Trigger) -> 'VoResource':
        if trigger.id in self.triggers:
            raise TriggerError(f"Trigger id {trigger.id!r} already registered on {self.vo_id}")
        self.triggers[trigger.id] = trigger
        return self


    def remove_trigger(self, trigger_id: str) -> 'VoResource':
        if trigger_id not in self.triggers:
            raise TriggerError(f"No trigger {trigger_id!r} on {self.vo_id}")
        del self.triggers[trigger_id]
        return self


    def subscribe(self, topic: str, selector: Sequence[str]):
        """Publish the selected fields of every new frame on topic"""
        self.subscriptions.append((topic, validate_selector(selector)))


    def evaluate_triggers(self, frame: DataFrame) -> List[PushMessage]:
        """Pushes caused by a newly ingested frame"""
        record = frame_to_record(frame)
        messages = []
        for trigger in self.triggers.values():
            for _ in range(trigger.firings(frame.timestamp, record)):
                messages.append(self._push(trigger.destination, frame, record, trigger.selector,
                                           trigger.representation, trigger.id))
        for topic, selector in self.subscriptions:
            messages.append(self._push(topic, frame, record, selector, 'key_value', None))
        return messages


    def _push(self, destination, frame, record, selector, representation, trigger_id) -> PushMessage:
        selected = project(record, selector) if selector else dict(record)
        if representation == 'frame':
            payload = encode_data_frame(frame, self.stream_config)
            return PushMessage(self.vo_id, destination, frame.timestamp, payload, selected, trigger_id, frame)
        return PushMessage(self.vo_id, destination, frame.timestamp, record_to_document(selected),
                           selected, trigger_id)


    def apply_rate(self, rate: int, now: Optional[Timestamp] = None):
        """Change the PMU reporting rate and retime rate-tracking triggers"""
        if rate not in PMU_SETTINGS['valid_rates']:
            raise UnsupportedRateError(
                f"Unsupported reporting rate {rate}; must be one of {PMU_SETTINGS['valid_rates']}")
        if self.pmu is not None:
            self.pmu.set_rate(rate)
        if now is None and self.buffer:
            now = self.buffer[-1].timestamp
        for trigger in self.triggers.values():
            if trigger.track_rate:
                trigger.retime(1.0 / rate, now)


    def on_topic_message(self, topic: str, payload: bytes):
        """Actuation requests advertised on a subscribed topic"""
        try:
            request = json.loads(payload)
        except ValueError:
            self._audit(f"ignored malformed message on {topic}")
            return
        if not isinstance(request, dict):
            self._audit(f"ignored non-object message on {topic}")
            return
        if 'rate' in request:
            try:
                self.apply_rate(int(request['rate']))
            except (TypeError, ValueError) as e:
                self._audit(f"ignored rate request on {topic}: {e}")
                return
        if request.get('command') in ('data_on', 'data_off') and self.pmu is not None:
            self.pmu.handle_command(CommandFrame(self.pmu_idcode, self._now(), request['command']))


    def command_frame(self, command: str, timestamp: Optional[Timestamp] = None) -> bytes:
        """Wire command addressed to this VO's PMU"""
        return encode_command(CommandFrame(self.pmu_idcode, timestamp or self._now(), command))


    def _now(self) -> Timestamp:
        return self.buffer[-1].timestamp if self.buffer else Timestamp(0, 0)


    def __repr__(self):
        return f"VoResource({self.vo_id}: idcode {self.pmu_idcode}, {len(self.buffer)}/{self.capacity} frames)"
