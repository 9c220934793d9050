import json

import pytest

from pullplan.fileio import (
    FormatError,
    dump_policy,
    dump_workload,
    dumps_metrics,
    load_config,
    load_policy,
    load_workload,
    validate_metrics,
)
from pullplan.model import FlowSpec, Topology
from pullplan.synthesizer import SynthesisConfig, synthesize
from pullplan.workloads import generate_workload, mesh_topology, star_topology


def sample_workload():
    topo = star_topology(3)
    flows = [
        FlowSpec(id=0, phase=0, period=100, deadline=80, target=0.99,
                 path=("s00", "base")),
        FlowSpec(id=1, phase=5, period=50, deadline=40, target=0.95,
                 path=("s01", "base")),
    ]
    return topo, flows


class TestWorkloadFormat:
    def test_round_trip_identity(self):
        topo, flows = sample_workload()
        text = dump_workload(topo, flows)
        topo2, flows2 = load_workload(text)
        assert topo2 == topo
        assert flows2 == flows

    def test_byte_stable(self):
        topo, flows = sample_workload()
        text = dump_workload(topo, flows)
        assert dump_workload(*load_workload(text)) == text

    def test_round_trip_random_flow_fields(self):
        from hypothesis import given, settings
        from hypothesis import strategies as st

        topo = star_topology(4)

        @st.composite
        def flow(draw, fid):
            period = draw(st.integers(2, 10_000))
            deadline = draw(st.integers(1, period))
            phase = draw(st.integers(0, period - deadline))
            target = draw(st.floats(1e-6, 1 - 1e-6,
                                    allow_nan=False, allow_infinity=False))
            leaf = draw(st.sampled_from(["s00", "s01", "s02", "s03"]))
            return FlowSpec(id=fid, phase=phase, period=period,
                            deadline=deadline, target=target,
                            path=(leaf, "base"))

        @settings(max_examples=60, deadline=None)
        @given(st.integers(1, 4).flatmap(
            lambda n: st.tuples(*(flow(i) for i in range(n)))))
        def check(flows):
            text = dump_workload(topo, list(flows))
            topo2, flows2 = load_workload(text)
            assert (topo2, tuple(flows2)) == (topo, flows)
            assert dump_workload(topo2, flows2) == text

        check()

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_round_trip_generated(self, seed):
        topo = mesh_topology(12, avg_degree=4.0, seed=seed)
        flows = generate_workload(topo, "MIX", 6, base_period=100, seed=seed)
        text = dump_workload(topo, flows)
        topo2, flows2 = load_workload(text)
        assert (topo2, flows2) == (topo, flows)
        assert dump_workload(topo2, flows2) == text

    def test_missing_section(self):
        with pytest.raises(FormatError, match="flows"):
            load_workload("[topology]\nbase_station = A\nnode = A\n")

    def test_line_number_in_diagnostic(self):
        text = "[topology]\nchannels = sixteen\n[flows]\n"
        with pytest.raises(FormatError, match="line 2"):
            load_workload(text)

    def test_bad_edge(self):
        text = "[topology]\nbase_station = A\nnode = A\nedge = A\n[flows]\n"
        with pytest.raises(FormatError, match="line 4"):
            load_workload(text)

    def test_unknown_key(self):
        text = "[topology]\nbase_station = A\nnode = A\nfoo = 1\n[flows]\n"
        with pytest.raises(FormatError, match="foo"):
            load_workload(text)


class TestPolicyFormat:
    def policy(self):
        topo = star_topology(2)
        flows = [
            FlowSpec(id=0, phase=0, period=10, deadline=10, target=0.92,
                     path=("s00", "base")),
            FlowSpec(id=1, phase=1, period=10, deadline=9, target=0.92,
                     path=("s01", "base")),
        ]
        return synthesize(topo, flows, SynthesisConfig(min_quality=0.7))

    def test_round_trip_equality(self):
        policy = self.policy()
        text = dump_policy(policy)
        assert load_policy(text) == policy

    def test_byte_stable(self):
        text = dump_policy(self.policy())
        assert dump_policy(load_policy(text)) == text

    def test_malformed_pull(self):
        with pytest.raises(FormatError, match="line 2"):
            load_policy("[policy]\npull = 0 0 base\n")

    def test_missing_header_field(self):
        with pytest.raises(FormatError, match="hyperperiod"):
            load_policy("[policy]\nchannels = 16\nmin_quality = 0.7\n"
                        "service_cap = 4\nactive_cap = 10\n")


class TestMetrics:
    def good_doc(self):
        return {
            "schedulable": True,
            "hyperperiod": 10,
            "slot_ms": 10.0,
            "config": {"min_quality": 0.7, "service_cap": 4,
                       "active_cap": 10, "channels": 16},
            "flows": [{
                "id": 0, "period": 10, "deadline": 10, "target": 0.92,
                "hops": 1, "end_to_end_bound": 0.973, "response_time": 3,
                "completion_slots": [2],
            }],
            "timing": {"builder_s": 0.1, "evaluator_s": 0.2, "total_s": 0.4},
        }

    def test_valid_doc_dumps(self):
        doc = self.good_doc()
        parsed = json.loads(dumps_metrics(doc))
        assert parsed == doc

    def test_missing_field_flagged(self):
        doc = self.good_doc()
        del doc["timing"]
        assert any("timing" in p for p in validate_metrics(doc))

    def test_flow_fields_checked(self):
        doc = self.good_doc()
        del doc["flows"][0]["response_time"]
        assert any("response_time" in p for p in validate_metrics(doc))

    def test_unschedulable_needs_failure(self):
        doc = self.good_doc()
        doc["schedulable"] = False
        assert any("failure" in p for p in validate_metrics(doc))
        doc["failure"] = {"flow": 0, "instance": 0, "hop": 0, "slot": 3,
                          "reason": "deadline"}
        assert validate_metrics(doc) == []


class TestConfig:
    def test_parse(self):
        text = "# defaults\nmin_quality = 0.7\nservice_cap = 4\n"
        assert load_config(text) == {"min_quality": "0.7", "service_cap": "4"}

    def test_bad_line(self):
        with pytest.raises(FormatError, match="line 1"):
            load_config("not a pair\n")
