import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pipeclf.errors import FormatError, TimestampRegression, UnknownFeature
from pipeclf.features import (
    AggregateStats,
    FlowTable,
    PacketRecord,
    TRACE_HEADER,
    aggregate_features,
    canonical_tuple,
    extract_packet_features,
    flow_key,
    group_by_dst_port,
    parse_ip,
    parse_trace,
    update_flow,
)
from pipeclf.model_ir import FeatureSpec

from _synth import specs


def pkt(ts_ns, src_port=1000, dst_port=80, src_ip="10.0.0.1", dst_ip="10.0.0.2",
        proto=6, length=100, flags=0):
    return PacketRecord(
        ts_ns=ts_ns,
        src_ip=parse_ip(src_ip),
        dst_ip=parse_ip(dst_ip),
        src_port=src_port,
        dst_port=dst_port,
        proto=proto,
        length=length,
        flags=flags,
    )


def reverse(r: PacketRecord, ts_ns=None) -> PacketRecord:
    return PacketRecord(
        ts_ns=r.ts_ns if ts_ns is None else ts_ns,
        src_ip=r.dst_ip,
        dst_ip=r.src_ip,
        src_port=r.dst_port,
        dst_port=r.src_port,
        proto=r.proto,
        length=r.length,
        flags=r.flags,
    )


class TestParseTrace:
    def test_empty(self):
        assert list(parse_trace([])) == []
        assert list(parse_trace([TRACE_HEADER])) == []

    def test_two_lines(self):
        lines = [
            TRACE_HEADER,
            "1000,10.0.0.1,10.0.0.2,1234,80,6,60,2",
            "2000,167772161,167772162,1234,80,17,1500,0",
        ]
        records = list(parse_trace(lines))
        assert len(records) == 2
        assert records[0].ts_ns == 1000
        assert records[0].src_ip == parse_ip("10.0.0.1")
        assert records[1].src_ip == parse_ip("10.0.0.1")  # integer form of the same IP
        assert records[1].proto == 17

    def test_timestamp_regression(self):
        lines = [TRACE_HEADER, "2000,1.2.3.4,5.6.7.8,1,2,6,60,0", "1999,1.2.3.4,5.6.7.8,1,2,6,60,0"]
        with pytest.raises(TimestampRegression) as err:
            list(parse_trace(lines))
        assert err.value.line_no == 3

    def test_malformed_line_number(self):
        lines = [TRACE_HEADER, "1000,1.2.3.4,5.6.7.8,1,2,6,60,0", "garbage,line"]
        with pytest.raises(FormatError) as err:
            list(parse_trace(lines))
        assert err.value.line_no == 3


class TestPacketFeatures:
    def test_ports_equal_indicator(self):
        fv = extract_packet_features(
            pkt(0, src_port=80, dst_port=80),
            (FeatureSpec("ports_equal", 0, 1),),
        )
        assert fv.values == (1,)
        fv = extract_packet_features(
            pkt(0, src_port=81, dst_port=80),
            (FeatureSpec("ports_equal", 0, 1),),
        )
        assert fv.values == (0,)

    def test_proto_passthrough(self):
        fv = extract_packet_features(pkt(0, proto=6), (FeatureSpec("proto", 0, 8),))
        assert fv.values == (6,)
        assert fv.provenance == ("packet",)

    def test_flow_feature_rejected(self):
        with pytest.raises(UnknownFeature):
            extract_packet_features(pkt(0), (FeatureSpec("pkt_count", 0, 16),))

    def test_saturation_flag(self):
        fv = extract_packet_features(pkt(0, length=300), (FeatureSpec("len", 0, 8),))
        assert fv.values == (255,)
        assert fv.saturated == (True,)


class TestFlowTable:
    def test_first_packet(self):
        table = FlowTable(capacity=4)
        state, fv = update_flow(table, pkt(1_000))
        assert state.pkt_count == 1
        assert state.duration_ns == 0
        assert state.jitter_bins == [0, 0, 0]
        assert state.byte_count == 100
        assert fv.values[0] == 1  # pkt_count

    def test_jitter_bins_hand_trace(self):
        # packets at t=0, 1ms, 11ms with default edges (1ms, 10ms):
        # IATs are 1ms -> bin [1ms,10ms), 10ms -> bin [10ms,inf) => bins (0,1,1)
        table = FlowTable(capacity=4)
        update_flow(table, pkt(0))
        update_flow(table, pkt(1_000_000))
        state, _ = update_flow(table, pkt(11_000_000))
        assert state.jitter_bins == [0, 1, 1]
        assert state.pkt_count == 3
        assert sum(state.jitter_bins) == state.pkt_count - 1

    def test_jitter_memory_accounting(self):
        table = FlowTable(capacity=16)
        assert table.n_bins == 3
        assert table.jitter_memory_entries() == 16 * 4  # K * (N + 1)

    def test_bidirectional_key(self):
        fwd = pkt(0)
        rev = reverse(fwd, ts_ns=10)
        assert canonical_tuple(fwd) == canonical_tuple(rev)
        assert flow_key(fwd) == flow_key(rev)
        table = FlowTable(capacity=4)
        update_flow(table, fwd)
        state, _ = update_flow(table, rev)
        assert state.pkt_count == 2
        assert state.fwd_pkts == 1
        assert state.rev_pkts == 1

    def test_lru_eviction_logged(self):
        table = FlowTable(capacity=2)
        update_flow(table, pkt(0, src_port=1))
        update_flow(table, pkt(1, src_port=2))
        update_flow(table, pkt(2, src_port=1))  # touch flow 1: flow 2 is now LRU
        update_flow(table, pkt(3, src_port=3))  # evicts flow with src_port=2
        assert table.evictions == 1
        keys = set(table.flows)
        assert flow_key(pkt(0, src_port=1)) in keys
        assert flow_key(pkt(0, src_port=3)) in keys

    def test_replay_determinism(self):
        records = [pkt(i * 1000, src_port=1000 + (i % 3)) for i in range(30)]

        def final_state():
            table = FlowTable(capacity=8)
            for r in records:
                update_flow(table, r)
            return {k: (s.pkt_count, s.byte_count, tuple(s.jitter_bins)) for k, s in table.flows.items()}

        assert final_state() == final_state()

    def test_packet_conservation_without_eviction(self):
        records = [pkt(i * 10, src_port=1000 + (i % 5)) for i in range(40)]
        table = FlowTable(capacity=16)
        for r in records:
            update_flow(table, r)
        assert sum(s.pkt_count for s in table.flows.values()) == len(records)

    def test_data_rate_definition(self):
        table = FlowTable(capacity=2)
        update_flow(table, pkt(0, length=1000))
        state, _ = update_flow(table, pkt(8_000, length=1000))
        # 2000 bytes * 8 bits / 8000 ns, integer division
        assert state.data_rate == 2

    def test_custom_feature_spec(self):
        table = FlowTable(
            capacity=2,
            specs=(FeatureSpec("pkt_count", 0, 4), FeatureSpec("byte_count", 1, 8)),
        )
        update_flow(table, pkt(0, length=200))
        state, fv = update_flow(table, pkt(10, length=200))
        assert fv.values == (2, 255)
        assert fv.saturated == (False, True)

    def test_collision_debug_tracking(self):
        table = FlowTable(capacity=8, debug_tuples=True)
        update_flow(table, pkt(0, src_port=1))
        update_flow(table, pkt(1, src_port=2))
        update_flow(table, pkt(2, src_port=1))
        # distinct tuples here do not collide in 32-bit FNV-1a
        assert table.collision_rate() == 0.0

    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 10**7)), min_size=1, max_size=60))
    @settings(max_examples=50, deadline=None)
    def test_jitter_bin_totals_invariant(self, steps):
        table = FlowTable(capacity=8)
        now = 0
        for flow_id, gap in steps:
            now += gap
            update_flow(table, pkt(now, src_port=5000 + flow_id))
        for state in table.flows.values():
            assert sum(state.jitter_bins) == state.pkt_count - 1


class TestAggregates:
    def test_single_flow_totals(self):
        table = FlowTable(capacity=4)
        update_flow(table, pkt(0))
        update_flow(table, pkt(10))
        aggs = aggregate_features(table, group_by_dst_port)
        assert aggs == {80: AggregateStats(pkt_count=2, byte_count=200, flow_count=1)}

    def test_two_flows_same_port_summed(self):
        table = FlowTable(capacity=4)
        update_flow(table, pkt(0, src_port=1111))
        update_flow(table, pkt(1, src_port=2222))
        update_flow(table, pkt(2, src_port=2222, length=50))
        aggs = aggregate_features(table, group_by_dst_port)
        assert aggs[80].pkt_count == 3
        assert aggs[80].byte_count == 250
        assert aggs[80].flow_count == 2

    def test_empty_table(self):
        table = FlowTable(capacity=4)
        assert aggregate_features(table, group_by_dst_port) == {}
