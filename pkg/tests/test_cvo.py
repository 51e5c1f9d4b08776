"""
Test suite for Composite Virtual Objects
Run with: python -m pytest tests/test_cvo.py -v
"""

import json

import pytest

from src.models.cvo import (AlignedSet, CompositeVirtualObject, CvoConfig,
                            Threshold, is_set_document, leaf_records)
from src.models.frames import FIXED16, FLOAT32, DataFrame, Phasor, PmuBlock, StreamConfig, Timestamp
from src.services.codec import decode_data_frame, encode_data_frame
from src.utils.errors import IncompleteSetError

START = 1_500_000_000
T0 = Timestamp(START, 0)
MEMBERS = ['vo-100', 'vo-101', 'vo-102']


def member_frame(idcode, timestamp=T0, fmt=FLOAT32, freq=0.0, n=6):
    phasors = [Phasor(0.5 + 0.0625 * k, -0.125 * (idcode - 100)) for k in range(n)]
    return DataFrame(idcode, timestamp, (PmuBlock(0, phasors, freq, 0.0),), fmt)


def make_cvo(members=MEMBERS, **kwargs):
    return CompositeVirtualObject(CvoConfig('cvo-node2', members, **kwargs))


class TestConfig:
    """Test CVO configuration validation"""

    @pytest.mark.parametrize("kwargs,message", [
        (dict(members=[]), "cannot be empty"),
        (dict(members=['a', 'a']), "duplicate"),
        (dict(members=['a'], placement='edge'), "placement"),
        (dict(members=['a'], output_mode='xml'), "output_mode"),
        (dict(members=['a'], wait_timeout=0.0), "wait_timeout"),
        (dict(members=['a'], rate=0), "rate must be positive"),
        (dict(members=['a'], thresholds=[Threshold('freq', '!=', 1.0, 't')]), "comparator"),
    ])
    def test_invalid(self, kwargs, message):
        with pytest.raises(ValueError, match=message):
            CvoConfig('cvo', **kwargs)

    def test_default_timeout(self):
        assert CvoConfig('cvo', ['a']).wait_timeout == pytest.approx(0.04)

    @pytest.mark.parametrize("rate,timeout", [(10, 0.2), (25, 0.08), (50, 0.04)])
    def test_default_timeout_follows_rate(self, rate, timeout):
        assert CvoConfig('cvo', ['a'], rate=rate).wait_timeout == pytest.approx(timeout)

    def test_explicit_timeout_wins(self):
        assert CvoConfig('cvo', ['a'], wait_timeout=0.5, rate=10).wait_timeout == 0.5


class TestAlignment:
    """Test time alignment of member streams"""

    def test_complete_set(self):
        cvo = make_cvo()
        assert cvo.ingest('vo-100', T0, member_frame(100), 0.0) is None
        assert cvo.ingest('vo-102', T0, member_frame(102), 0.001) is None
        aligned = cvo.ingest('vo-101', T0, member_frame(101), 0.002)
        assert aligned.complete
        assert aligned.absent == []
        assert cvo.pending == {}
        assert cvo.complete_count == 1

    def test_partial_after_timeout(self):
        cvo = make_cvo(wait_timeout=0.04)
        cvo.ingest('vo-100', T0, member_frame(100), 0.0)
        cvo.ingest('vo-101', T0, member_frame(101), 0.01)
        assert cvo.expire(0.03) == []
        aligned, = cvo.expire(0.04)
        assert not aligned.complete
        assert aligned.absent == ['vo-102']
        assert cvo.partial_count == 1

    def test_expiry_oldest_first(self):
        cvo = make_cvo(wait_timeout=0.04)
        t1 = Timestamp(START, 20000)
        cvo.ingest('vo-100', t1, member_frame(100, t1), 0.0)
        cvo.ingest('vo-100', T0, member_frame(100), 0.0)
        assert [a.timestamp for a in cvo.expire(1.0)] == [T0, t1]

    def test_non_member_rejected(self):
        cvo = make_cvo()
        assert cvo.ingest('vo-200', T0, member_frame(200), 0.0) is None
        assert cvo.pending == {}
        assert "non-member vo-200" in cvo.audit_log[0]

    def test_duplicate_record(self):
        cvo = make_cvo()
        cvo.ingest('vo-100', T0, member_frame(100), 0.0)
        assert cvo.ingest('vo-100', T0, member_frame(100, freq=5.0), 0.001) is None
        assert "duplicate" in cvo.audit_log[0]
        assert cvo.pending[T0.total_ticks]['vo-100'].blocks[0].freq_dev == 0.0

    def test_late_record_after_emission(self):
        cvo = make_cvo(wait_timeout=0.04)
        cvo.ingest('vo-100', T0, member_frame(100), 0.0)
        cvo.expire(0.05)
        assert cvo.ingest('vo-102', T0, member_frame(102), 0.06) is None
        assert "late" in cvo.audit_log[-1]
        assert cvo.pending == {}

    def test_late_beyond_horizon(self):
        cvo = make_cvo(members=['vo-100'])
        later = Timestamp(START + 20, 0)
        assert cvo.ingest('vo-100', later, member_frame(100, later), 0.0).complete
        early = Timestamp(START + 5, 0)
        assert cvo.ingest('vo-100', early, member_frame(100, early), 0.0) is None
        assert cvo.is_late(early.total_ticks)


class TestComposition:
    """Test aggregate frame composition"""

    def complete_set(self, fmt=FLOAT32):
        configs = {m: StreamConfig(fmt, (6,)) for m in MEMBERS}
        cvo = CompositeVirtualObject(CvoConfig('cvo-node2', MEMBERS), configs)
        frames = [member_frame(100 + i, fmt=fmt) for i in range(3)]
        aligned = None
        for member, frame in zip(MEMBERS, frames):
            aligned = cvo.ingest(member, T0, frame, 0.0)
        return cvo, frames, aligned

    @pytest.mark.parametrize("fmt,size", [(FLOAT32, 190), (FIXED16, 106)])
    def test_aggregate_size(self, fmt, size):
        cvo, _, aligned = self.complete_set(fmt)
        message = cvo.forward(aligned)
        assert len(message.payload) == size
        assert message.frame.idcode == 1
        assert message.frame.timestamp == T0

    def test_blocks_in_member_order(self):
        cvo = make_cvo()
        for member in reversed(MEMBERS):
            aligned = cvo.ingest(member, T0, member_frame(int(member[3:])), 0.0)
        frame = cvo.compose_aggregate_frame(aligned)
        assert [b.phasors[0].im for b in frame.blocks] == [0.0, -0.125, -0.25]

    def test_bit_identical_blocks(self):
        cvo, frames, aligned = self.complete_set()
        payload = cvo.forward(aligned).payload
        assert payload[14:-2] == b''.join(encode_data_frame(f)[14:-2] for f in frames)

    def test_decodes_with_concatenated_config(self):
        cvo, frames, aligned = self.complete_set(FIXED16)
        payload = cvo.forward(aligned).payload
        decoded = decode_data_frame(payload, cvo.stream_config())
        assert len(decoded.blocks) == 3
        assert decoded.blocks[2].phasors[0].im == pytest.approx(-0.25, abs=1e-4)

    def test_single_member_identical_except_idcode(self):
        cvo = make_cvo(members=['vo-100'])
        frame = member_frame(100)
        aligned = cvo.ingest('vo-100', T0, frame, 0.0)
        assert encode_data_frame(cvo.compose_aggregate_frame(aligned, idcode=100)) == encode_data_frame(frame)
        aggregate = encode_data_frame(cvo.compose_aggregate_frame(aligned))
        original = encode_data_frame(frame)
        assert aggregate[:4] == original[:4]
        assert aggregate[6:-2] == original[6:-2]

    def test_incomplete_set(self):
        aligned = AlignedSet(T0, {'vo-100': member_frame(100)}, MEMBERS)
        with pytest.raises(IncompleteSetError, match="vo-101"):
            make_cvo().compose_aggregate_frame(aligned)


class TestThresholds:
    """Test threshold actions"""

    def test_one_action_per_threshold(self):
        threshold = Threshold('freq', '>', 100.0, 'REGION_1/ZONE_1/Node_2/rate', {'rate': 50})
        cvo = make_cvo(thresholds=[threshold])
        for i, member in enumerate(MEMBERS):
            aligned = cvo.ingest(member, T0, member_frame(100 + i, freq=150.0 if i < 2 else 0.0), 0.0)
        action, = cvo.check_thresholds(aligned)
        assert action.destination == 'REGION_1/ZONE_1/Node_2/rate'
        assert action.is_topic
        assert json.loads(action.payload) == {'rate': 50}

    def test_no_violation(self):
        cvo = make_cvo(thresholds=[Threshold('freq', '>', 100.0, 'alarm')])
        for i, member in enumerate(MEMBERS):
            aligned = cvo.ingest(member, T0, member_frame(100 + i, freq=100.0), 0.0)
        assert cvo.check_thresholds(aligned) == []

    def test_missing_field_not_violated(self):
        assert not Threshold('rocof', '>', 0.0, 't').violated_by({'freq': 1.0})


class TestForwarding:
    """Test outbound messages"""

    def test_key_value_mode(self):
        cvo = make_cvo(output_mode='key_value', parent='cvo-wams')
        for i, member in enumerate(MEMBERS):
            aligned = cvo.ingest(member, T0, member_frame(100 + i), 0.0)
        message = cvo.forward(aligned)
        assert message.destination == 'cvo-wams'
        document = json.loads(message.payload)
        assert document['complete'] is True
        assert document['timestamp'] == [START, 0]
        assert document['order'] == MEMBERS
        assert len(list(leaf_records(document))) == 3

    def test_partial_forwarded_as_document(self):
        cvo = make_cvo(wait_timeout=0.04)
        cvo.ingest('vo-100', T0, member_frame(100), 0.0)
        aligned, = cvo.expire(0.04)
        message = cvo.forward(aligned)
        assert message.destination == 'application'
        assert message.frame is None
        document = json.loads(message.payload)
        assert document['complete'] is False
        assert document['absent'] == ['vo-101', 'vo-102']


class TestMultiTier:
    """Test CVOs aggregating other CVOs"""

    def test_parent_composes_children_in_order(self):
        child_a = CompositeVirtualObject(CvoConfig('cvo-a', ['vo-99', 'vo-100'], output_mode='key_value',
                                                   parent='cvo-top'))
        child_b = CompositeVirtualObject(CvoConfig('cvo-b', ['vo-101'], output_mode='key_value',
                                                   parent='cvo-top'))
        top = CompositeVirtualObject(CvoConfig('cvo-top', ['cvo-a', 'cvo-b']))

        child_a.ingest('vo-99', T0, member_frame(99, freq=1.0), 0.0)
        a_set = child_a.ingest('vo-100', T0, member_frame(100, freq=2.0), 0.0)
        b_set = child_b.ingest('vo-101', T0, member_frame(101, freq=3.0), 0.0)

        for child, aligned in ((child_a, a_set), (child_b, b_set)):
            message = child.forward(aligned)
            assert message.destination == 'cvo-top'
            document = json.loads(message.payload)
            assert is_set_document(document)
            top_set = top.ingest(child.cvo_id, T0, document, 0.01)

        assert top_set.complete
        frame = top.compose_aggregate_frame(top_set)
        assert [b.freq_dev for b in frame.blocks] == [1.0, 2.0, 3.0]
        assert frame.blocks[0].phasors == member_frame(99).blocks[0].phasors
