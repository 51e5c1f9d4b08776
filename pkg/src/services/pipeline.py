"""
End-to-end monitoring pipeline over the simulated network:

    PMU --pmu_vo--> VO --(lan | wan_remote)--> node CVO --(wan_local | cloud)--> [WAMS CVO --cloud-->] application

Local placement keeps node CVOs in the PMU subnetwork and sends one aggregate
up the WAN per period; remote placement sends every VO stream across the WAN
to CVOs in the cloud. Threshold actions travel through the broker and reach
VOs over the control link.
"""

import json
import logging
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from config.settings import GRID_SETTINGS, PMU_SETTINGS, TOPIC_SETTINGS
from src.models.cvo import (AlignedSet, CompositeVirtualObject, CvoConfig,
                            Threshold, is_set_document, leaf_records)
from src.models.frames import FLOAT32, TIME_BASE, DataFrame, Timestamp
from src.models.grid import GridModel, MeasurementDescriptor, build_placement
from src.models.pmu import EmulatedPmu, NoiseModel, Scenario, positive_sequence
from src.models.virtual_object import (PushMessage, VoResource, block_from_record,
                                       document_to_record, record_timestamp)
from src.services.broker import Broker
from src.services.codec import decode_data_frame, encode_data_frame
from src.services.netsim import LatencyRecord, LinkConfig, Message, Simulator
from src.services.resources import ResourceServer
from src.utils.errors import ConfigError

logger = logging.getLogger(__name__)

WAMS_CVO = 'cvo-wams'
APPLICATION = 'application'

LINKS = {
    'local': {'vo_cvo': 'lan', 'cvo_up': 'wan_local'},
    'remote': {'vo_cvo': 'wan_remote', 'cvo_up': 'cloud'},
}


def is_complete_document(document: Dict) -> bool:
    if not document.get('complete'):
        return False
    for member in document['members'].values():
        if is_set_document(member) and not is_complete_document(member):
            return False
    return True


class Application:
    """Cloud endpoint: records latency of every complete aggregate it receives"""

    def __init__(self, origin_soc: int):
        self.origin_soc = origin_soc
        self.records: List[LatencyRecord] = []
        self.received: List[Union[DataFrame, Dict]] = []
        self.payloads: List[bytes] = []
        self.partial = 0


    def accept(self, item: Union[DataFrame, Dict], payload: bytes, now: float):
        if isinstance(item, DataFrame):
            timestamp = item.timestamp
        elif is_complete_document(item):
            timestamp = Timestamp(*item['timestamp'])
        else:
            self.partial += 1
            return
        self.records.append(LatencyRecord.measure(timestamp, now, self.origin_soc))
        self.received.append(item)
        self.payloads.append(payload)


class MonitoringPipeline:
    def __init__(self, grid: GridModel, scenario: Scenario, links: LinkConfig,
                 nodes: Sequence[int] = (2,),
                 mode: str = 'local',
                 rate: int = PMU_SETTINGS['default_rate'],
                 wire_format: Optional[str] = FLOAT32,
                 layout: str = 'positive',
                 channels: int = GRID_SETTINGS['channels_per_pmu'],
                 noise: Optional[NoiseModel] = None,
                 seed: int = 0,
                 representation: str = 'frame',
                 output_mode: str = 'aggregated_frame',
                 wait_timeout: Optional[float] = None,
                 rocof_threshold: Optional[float] = None):
        if mode not in LINKS:
            raise ConfigError(f"Unknown placement mode {mode!r}")
        needed = {'pmu_vo', 'control', 'cloud'} | set(LINKS[mode].values())
        missing = sorted(needed - set(links.links))
        if missing:
            raise ConfigError(f"Link configuration lacks {missing}")
        links.check_positive_path(['pmu_vo', LINKS[mode]['vo_cvo'], LINKS[mode]['cvo_up']])

        self.grid = grid
        self.scenario = scenario
        self.links = links
        self.mode = mode
        self.rate = rate
        self.wire_format = wire_format
        self.layout = layout
        self.representation = representation
        self.placement = build_placement(grid, nodes, channels)

        link_seed, noise_seed = np.random.SeedSequence(seed).spawn(2)
        self.sim = Simulator(links.links, link_seed)
        self.broker = Broker()
        self.resources = ResourceServer()
        self.application = Application(scenario.start_soc)

        self.pmus: List[EmulatedPmu] = []
        self.vos: Dict[str, VoResource] = {}
        self._pmu_by_idcode: Dict[int, EmulatedPmu] = {}
        pmu_seeds = noise_seed.spawn(self.placement.pmu_count())
        for i, ((node, descriptors), child) in enumerate(zip(self.placement.pmus(), pmu_seeds)):
            pmu = EmulatedPmu(PMU_SETTINGS['idcode_base'] + i, descriptors, channels=channels, rate=rate,
                              fmt=wire_format or FLOAT32, layout=layout, noise=noise,
                              rng=np.random.default_rng(child), node=node)
            self.pmus.append(pmu)
            self._pmu_by_idcode[pmu.idcode] = pmu

        timeout = wait_timeout if wait_timeout is not None else links.wait_timeout
        self.cvos: Dict[str, CompositeVirtualObject] = {}
        node_cvo_ids = []
        multi_tier = len(self.placement.monitored_nodes) > 1
        for node in sorted(self.placement.monitored_nodes):
            cvo_id = f"cvo-node{node}"
            node_cvo_ids.append(cvo_id)
            node_pmus = [p for p in self.pmus if p.node == node]
            thresholds = []
            if rocof_threshold is not None:
                thresholds.append(Threshold('rocof', '>', rocof_threshold,
                                            TOPIC_SETTINGS['rate_topic'].format(node=node),
                                            {'rate': TOPIC_SETTINGS['rate_increase_fps']}))
            config = CvoConfig(cvo_id, [self._vo_id(p) for p in node_pmus], placement=mode,
                               wait_timeout=timeout, rate=rate, output_mode=output_mode, thresholds=thresholds,
                               parent=WAMS_CVO if multi_tier else None)
            self.cvos[cvo_id] = CompositeVirtualObject(
                config, {self._vo_id(p): p.stream_config() for p in node_pmus})
            for pmu in node_pmus:
                self._attach_vo(pmu, cvo_id)

        if multi_tier:
            config = CvoConfig(WAMS_CVO, node_cvo_ids, placement='remote', wait_timeout=timeout, rate=rate,
                               output_mode=output_mode)
            self.cvos[WAMS_CVO] = CompositeVirtualObject(
                config, {c: self.cvos[c].stream_config() for c in node_cvo_ids})
        self.top = self.cvos[WAMS_CVO] if multi_tier else self.cvos[node_cvo_ids[0]]


    @staticmethod
    def _vo_id(pmu: EmulatedPmu) -> str:
        return f"vo-{pmu.idcode}"


    def _attach_vo(self, pmu: EmulatedPmu, cvo_id: str):
        vo = VoResource(self._vo_id(pmu), pmu.idcode, stream_config=pmu.stream_config(), pmu=pmu)
        self.vos[vo.vo_id] = vo
        self.resources.register(vo)
        trigger = {
            'id': 'forward',
            'kind': 'periodic',
            'period': 1.0 / pmu.rate,
            'selector': [],
            'destination': f"/cvo/{cvo_id}/ingest",
            'representation': self.representation,
            'track_rate': True,
        }
        response = self.resources.handle('POST', f"/vo/{vo.vo_id}/triggers", json.dumps(trigger).encode())
        if response.status != 201:
            raise ConfigError(f"Could not register forwarding trigger on {vo.vo_id}: {response.json()}")

        topic = TOPIC_SETTINGS['rate_topic'].format(node=pmu.node)
        self.broker.subscribe(vo.vo_id, topic, lambda t, payload, vo=vo: self._send_control(vo, t, payload))


    def _send_control(self, vo: VoResource, topic: str, payload: bytes):
        message = Message('broker', vo.vo_id, payload, meta={'topic': topic})
        self.sim.send('control', message, lambda m: vo.on_topic_message(m.meta['topic'], m.payload))


    def run(self, periods: int) -> Application:
        """Stream periods reporting intervals at the starting rate, then drain the network"""
        if periods < 1:
            raise ValueError("periods must be at least 1")
        step = TIME_BASE // max(PMU_SETTINGS['valid_rates'])
        ticks = periods * (TIME_BASE // self.rate) // step
        self.sim.schedule(0.0, self._tick, 0, ticks, step)
        self.sim.run()
        logger.info("pipeline finished: %d records, %d partial", len(self.application.records),
                    self.application.partial)
        return self.application


    def _tick(self, k: int, total: int, step: int):
        t = Timestamp.from_ticks(self.scenario.start_soc * TIME_BASE + k * step)
        for pmu in self.pmus:
            if t.fracsec % pmu.interval_ticks:
                continue
            frame = pmu.sample_frame(t, self.grid, self.scenario)
            if frame is None:
                continue
            vo = self.vos[self._vo_id(pmu)]
            meta = {'frame': frame} if self.wire_format is None else {}
            message = Message(f"pmu-{pmu.idcode}", vo.vo_id, encode_data_frame(frame, vo.stream_config), meta=meta)
            self.sim.send('pmu_vo', message, lambda m, vo=vo: self._vo_receive(vo, m))
        if k + 1 < total:
            self.sim.schedule((k + 1) * step / TIME_BASE, self._tick, k + 1, total, step)


    def _vo_receive(self, vo: VoResource, message: Message):
        if 'frame' in message.meta:
            pushes = vo.receive(message.meta['frame'])
        else:
            frame = vo.ingest_bytes(message.payload)
            pushes = vo.evaluate_triggers(frame) if frame is not None else []
        for push in pushes:
            self._route_push(push)


    def _route_push(self, push: PushMessage):
        if push.is_topic:
            self.broker.publish(push.destination, push.payload)
            return
        cvo_id = push.destination.strip('/').split('/')[1]
        cvo = self.cvos[cvo_id]
        message = Message(push.source, push.destination, push.payload,
                          meta={'kind': 'frame' if push.frame is not None else 'record'})
        self.sim.send(LINKS[self.mode]['vo_cvo'], message, lambda m: self._cvo_receive(cvo, m))


    def _cvo_receive(self, cvo: CompositeVirtualObject, message: Message):
        kind = message.meta['kind']
        if kind == 'frame':
            contribution = decode_data_frame(message.payload, cvo.member_configs.get(message.src))
            timestamp = contribution.timestamp
        elif kind == 'record':
            contribution = document_to_record(message.payload)
            timestamp = record_timestamp(contribution)
        else:
            contribution = json.loads(message.payload)
            timestamp = Timestamp(*contribution['timestamp'])
            if not is_complete_document(contribution):
                logger.info("CVO %s ignoring partial set from %s at %s", cvo.cvo_id, message.src, timestamp)
                return

        aligned = cvo.ingest(message.src, timestamp, contribution, self.sim.now)
        if aligned is not None:
            self._on_set(cvo, aligned)
            return
        slot = cvo.pending.get(timestamp.total_ticks)
        if slot is not None and len(slot) == 1:
            self.sim.schedule(self.sim.now + cvo.config.wait_timeout, self._expire, cvo)


    def _expire(self, cvo: CompositeVirtualObject):
        for aligned in cvo.expire(self.sim.now):
            self._on_set(cvo, aligned)


    def _on_set(self, cvo: CompositeVirtualObject, aligned: AlignedSet):
        for action in cvo.check_thresholds(aligned):
            self.broker.publish(action.destination, action.payload)
        self.sim.schedule(self.sim.now + self.links.cvo_processing, self._forward, cvo, aligned)


    def _forward(self, cvo: CompositeVirtualObject, aligned: AlignedSet):
        out = cvo.forward(aligned)
        kind = 'frame' if out.frame is not None else 'document'
        message = Message(cvo.cvo_id, out.destination, out.payload, meta={'kind': kind})
        if cvo is self.top:
            link = 'cloud' if cvo.cvo_id == WAMS_CVO else LINKS[self.mode]['cvo_up']
            self.sim.send(link, message, lambda m: self._app_receive(m))
        else:
            self.sim.send(LINKS[self.mode]['cvo_up'], message,
                          lambda m: self._cvo_receive(self.cvos[out.destination], m))


    def _app_receive(self, message: Message):
        if message.meta['kind'] == 'frame':
            item = decode_data_frame(message.payload, self.top.stream_config())
        else:
            item = json.loads(message.payload)
        self.application.accept(item, message.payload, self.sim.now)


    def block_order(self) -> List[EmulatedPmu]:
        """PMUs in the block order of the top-level aggregate frame"""
        order = []
        cvos = [self.cvos[m] for m in self.top.config.members] if self.top.cvo_id == WAMS_CVO else [self.top]
        for cvo in cvos:
            order.extend(self._pmu_by_idcode[self.vos[m].pmu_idcode] for m in cvo.config.members)
        return order


    def measured_phasors(self, item: Union[DataFrame, Dict]) -> Dict[MeasurementDescriptor, complex]:
        """Positive-sequence value of every placed descriptor in a received aggregate"""
        if isinstance(item, DataFrame):
            pairs = list(zip(self.block_order(), item.blocks))
        else:
            pairs = [(self._pmu_by_idcode[int(r['idcode'])], block_from_record(r)) for r in leaf_records(item)]

        phasors = {}
        for pmu, block in pairs:
            for channel, descriptor in enumerate(pmu.descriptors):
                phasors[descriptor] = positive_sequence(block, channel, pmu.layout)
        return phasors


    def __repr__(self):
        nodes = sorted(self.placement.monitored_nodes)
        return f"MonitoringPipeline({self.mode}, nodes={nodes}, {len(self.pmus)} PMUs, {len(self.cvos)} CVOs)"
