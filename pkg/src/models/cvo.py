"""
Composite Virtual Object: aligns member streams by timestamp, composes a
multi-channel virtual PMU and raises threshold actions.
"""

import json
import logging
from typing import Dict, Iterator, List, NamedTuple, Optional, Sequence, Union

from config.settings import CVO_SETTINGS, PMU_SETTINGS
from src.models.frames import TIME_BASE, DataFrame, PmuBlock, StreamConfig, Timestamp
from src.models.virtual_object import (COMPARATORS, PushMessage, block_from_record,
                                       frame_to_record)
from src.services.codec import encode_data_frame
from src.utils.errors import IncompleteSetError

logger = logging.getLogger(__name__)

PLACEMENTS = ('local', 'remote')
OUTPUT_MODES = ('aggregated_frame', 'key_value')

# A member contribution: a frame, a key-value record, or a child CVO's set document
Contribution = Union[DataFrame, Dict]


class Threshold(NamedTuple):
    field: str
    comparator: str
    bound: float
    topic: str
    action: Dict = {}

    def violated_by(self, record: Dict) -> bool:
        if self.field not in record:
            return False
        return COMPARATORS[self.comparator](record[self.field], self.bound)


class CvoConfig:
    def __init__(self, cvo_id: str, members: Sequence[str],
                 placement: str = 'local',
                 wait_timeout: Optional[float] = None,
                 rate: int = PMU_SETTINGS['default_rate'],
                 output_mode: str = 'aggregated_frame',
                 thresholds: Optional[List[Threshold]] = None,
                 parent: Optional[str] = None,
                 idcode: int = CVO_SETTINGS['aggregate_idcode']):
        if not members:
            raise ValueError(f"CVO {cvo_id}: members cannot be empty")
        if len(set(members)) != len(members):
            raise ValueError(f"CVO {cvo_id}: duplicate members")
        if placement not in PLACEMENTS:
            raise ValueError(f"CVO {cvo_id}: placement must be one of {PLACEMENTS}")
        if output_mode not in OUTPUT_MODES:
            raise ValueError(f"CVO {cvo_id}: output_mode must be one of {OUTPUT_MODES}")
        if rate <= 0:
            raise ValueError(f"CVO {cvo_id}: rate must be positive")
        if wait_timeout is None:
            wait_timeout = CVO_SETTINGS['wait_intervals'] / rate
        if wait_timeout <= 0:
            raise ValueError(f"CVO {cvo_id}: wait_timeout must be positive")
        for threshold in thresholds or []:
            if threshold.comparator not in COMPARATORS:
                raise ValueError(f"CVO {cvo_id}: unknown comparator {threshold.comparator!r}")

        self.cvo_id = cvo_id
        self.members = list(members)
        self.placement = placement
        self.rate = rate
        self.wait_timeout = wait_timeout
        self.output_mode = output_mode
        self.thresholds = list(thresholds or [])
        self.parent = parent
        self.idcode = idcode


    def __repr__(self):
        return f"CvoConfig({self.cvo_id}: {len(self.members)} members, {self.placement}, {self.output_mode})"


class AlignedSet:
    """Member contributions sharing one timestamp"""

    def __init__(self, timestamp: Timestamp, contributions: Dict[str, Contribution], members: Sequence[str]):
        self.timestamp = timestamp
        self.members = list(members)
        self.contributions = dict(contributions)
        self.absent = [m for m in members if m not in self.contributions]
        self.complete = not self.absent


    def to_document(self) -> Dict:
        members = {}
        order = [m for m in self.members if m in self.contributions]
        for source in order:
            contribution = self.contributions[source]
            if isinstance(contribution, DataFrame):
                members[source] = [frame_to_record(contribution, i) for i in range(len(contribution.blocks))]
            else:
                members[source] = contribution
        return {
            'timestamp': [self.timestamp.soc, self.timestamp.fracsec],
            'complete': self.complete,
            'absent': self.absent,
            'members': members,
            # JSON sorts keys; block order travels separately
            'order': order,
        }


    def __repr__(self):
        state = 'complete' if self.complete else f"partial, absent={self.absent}"
        return f"AlignedSet({self.timestamp}, {state})"


def is_set_document(contribution: Contribution) -> bool:
    return isinstance(contribution, dict) and 'members' in contribution


def leaf_records(contribution: Contribution) -> Iterator[Dict]:
    """Flat key-value records carried by a contribution, in block order"""
    if isinstance(contribution, DataFrame):
        for i in range(len(contribution.blocks)):
            yield frame_to_record(contribution, i)
    elif is_set_document(contribution):
        members = contribution['members']
        for source in contribution.get('order', list(members)):
            member = members[source]
            for item in (member if isinstance(member, list) else [member]):
                yield from leaf_records(item)
    else:
        yield contribution


def contribution_blocks(contribution: Contribution) -> List[PmuBlock]:
    if isinstance(contribution, DataFrame):
        return list(contribution.blocks)
    return [block_from_record(r) for r in leaf_records(contribution)]


class CvoMessage(PushMessage):
    def __init__(self, source: str, destination: str, aligned: AlignedSet, payload: bytes,
                 frame: Optional[DataFrame] = None, document: Optional[Dict] = None):
        super().__init__(source, destination, aligned.timestamp, payload, document or {}, frame=frame)
        self.aligned = aligned


class CompositeVirtualObject:
    def __init__(self, config: CvoConfig, member_configs: Optional[Dict[str, StreamConfig]] = None):
        self.config = config
        self.member_configs = dict(member_configs or {})
        self.pending: Dict[int, Dict[str, Contribution]] = {}
        self.first_arrival: Dict[int, float] = {}
        self.emitted: Dict[int, bool] = {}
        self.audit_log: List[str] = []
        self.complete_count = 0
        self.partial_count = 0
        self._floor = -1


    @property
    def cvo_id(self) -> str:
        return self.config.cvo_id


    def _audit(self, entry: str):
        self.audit_log.append(entry)
        logger.warning("CVO %s %s", self.cvo_id, entry)


    def stream_config(self) -> Optional[StreamConfig]:
        """Decoding info of the aggregate frame, members in configured order"""
        if any(m not in self.member_configs for m in self.config.members):
            return None
        config = self.member_configs[self.config.members[0]]
        for member in self.config.members[1:]:
            config = config.concat(self.member_configs[member])
        return config


    def is_late(self, ticks: int) -> bool:
        return ticks in self.emitted or ticks <= self._floor


    def ingest(self, source: str, timestamp: Timestamp, record: Contribution, now: float) -> Optional[AlignedSet]:
        """File a record; returns the set once every member contributed"""
        if source not in self.config.members:
            self._audit(f"rejected record from non-member {source}")
            return None

        ticks = timestamp.total_ticks
        if self.is_late(ticks):
            self._audit(f"dropped late record from {source} for {timestamp}")
            return None

        slot = self.pending.setdefault(ticks, {})
        if source in slot:
            self._audit(f"dropped duplicate record from {source} for {timestamp}")
            return None
        if not slot:
            self.first_arrival[ticks] = now
        slot[source] = record

        if len(slot) == len(self.config.members):
            return self._emit(ticks)
        return None


    def expire(self, now: float) -> List[AlignedSet]:
        """Emit partial sets whose wait_timeout has elapsed, oldest first"""
        due = sorted(t for t, first in self.first_arrival.items()
                     if now - first >= self.config.wait_timeout)
        return [self._emit(t) for t in due]


    def _emit(self, ticks: int) -> AlignedSet:
        contributions = self.pending.pop(ticks)
        del self.first_arrival[ticks]
        aligned = AlignedSet(Timestamp.from_ticks(ticks), contributions, self.config.members)
        if aligned.complete:
            self.complete_count += 1
        else:
            self.partial_count += 1
            logger.info("CVO %s partial set at %s, absent %s", self.cvo_id, aligned.timestamp, aligned.absent)

        self.emitted[ticks] = aligned.complete
        horizon = round(CVO_SETTINGS['emitted_horizon'] * TIME_BASE)
        newest = max(self.emitted)
        if newest - horizon > self._floor:
            self._floor = newest - horizon
            self.emitted = {t: c for t, c in self.emitted.items() if t > self._floor}
        return aligned


    def compose_aggregate_frame(self, aligned: AlignedSet, idcode: Optional[int] = None) -> DataFrame:
        """One block per member (all blocks of a child CVO), in member order"""
        if not aligned.complete:
            raise IncompleteSetError(f"Cannot compose {aligned}: absent {aligned.absent}")

        blocks = []
        fmt = None
        for member in self.config.members:
            contribution = aligned.contributions[member]
            if isinstance(contribution, DataFrame):
                fmt = fmt or contribution.fmt
            blocks.extend(contribution_blocks(contribution))
        if fmt is None:
            config = self.stream_config()
            fmt = config.fmt if config else 'float32'
        return DataFrame(self.config.idcode if idcode is None else idcode, aligned.timestamp, tuple(blocks), fmt)


    def check_thresholds(self, aligned: AlignedSet) -> List[PushMessage]:
        """At most one action per threshold for this set"""
        actions = []
        records = [r for c in aligned.contributions.values() for r in leaf_records(c)]
        for threshold in self.config.thresholds:
            if any(threshold.violated_by(r) for r in records):
                payload = json.dumps(threshold.action, sort_keys=True).encode()
                actions.append(PushMessage(self.cvo_id, threshold.topic, aligned.timestamp, payload,
                                           dict(threshold.action)))
                logger.info("CVO %s threshold %s %s %s at %s", self.cvo_id, threshold.field,
                            threshold.comparator, threshold.bound, aligned.timestamp)
        return actions


    def forward(self, aligned: AlignedSet, destination: Optional[str] = None) -> CvoMessage:
        """Outbound message for the parent CVO or the application endpoint"""
        destination = destination or self.config.parent or 'application'
        if self.config.output_mode == 'aggregated_frame' and aligned.complete:
            frame = self.compose_aggregate_frame(aligned)
            payload = encode_data_frame(frame, self.stream_config())
            return CvoMessage(self.cvo_id, destination, aligned, payload, frame=frame)

        document = aligned.to_document()
        payload = json.dumps(document, sort_keys=True, separators=(',', ':')).encode()
        return CvoMessage(self.cvo_id, destination, aligned, payload, document=document)


    def __repr__(self):
        return (f"CompositeVirtualObject({self.cvo_id}: {len(self.pending)} pending, "
                f"{self.complete_count} complete, {self.partial_count} partial)")
