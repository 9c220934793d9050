import pytest

from pullplan.model import (
    FlowSpec,
    HopRecord,
    InstanceRecord,
    ModelError,
    Policy,
    PolicyEntry,
    Pull,
    ServiceRef,
    Topology,
    hyperperiod,
    validate_policy,
    validate_workload,
)


def two_flow_star():
    topo = Topology(
        nodes=frozenset("ABC"),
        edges=frozenset({("B", "A"), ("C", "A")}),
        base_station="A",
    )
    flows = [
        FlowSpec(id=0, phase=0, period=10, deadline=8, target=0.92, path=("B", "A")),
        FlowSpec(id=1, phase=1, period=10, deadline=8, target=0.92, path=("C", "A")),
    ]
    return topo, flows


class TestHyperperiod:
    def test_single_period(self):
        assert hyperperiod([FlowSpec(0, 0, 100, 100, 0.99, ("B", "A"))]) == 100

    def test_lcm(self):
        flows = [
            FlowSpec(0, 0, 100, 100, 0.99, ("B", "A")),
            FlowSpec(1, 0, 200, 200, 0.99, ("B", "A")),
            FlowSpec(2, 0, 500, 500, 0.99, ("B", "A")),
        ]
        assert hyperperiod(flows) == 1000

    def test_no_flows(self):
        with pytest.raises(ModelError, match="no flows"):
            hyperperiod([])

    def test_overflow(self):
        flows = [
            FlowSpec(0, 0, 2**33, 2**33, 0.99, ("B", "A")),
            FlowSpec(1, 0, 2**31 - 1, 2**31 - 1, 0.99, ("B", "A")),
        ]
        with pytest.raises(ModelError, match="overflow"):
            hyperperiod(flows)


class TestInvariants:
    def test_base_station_must_be_a_node(self):
        with pytest.raises(ModelError):
            Topology(frozenset("AB"), frozenset(), "Z")

    def test_channel_floor(self):
        with pytest.raises(ModelError):
            Topology(frozenset("AB"), frozenset(), "A", channel_count=1)

    def test_edge_endpoints(self):
        with pytest.raises(ModelError):
            Topology(frozenset("AB"), frozenset({("A", "Z")}), "A")

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(deadline=11),              # deadline beyond period
            dict(phase=3),                  # phase + deadline beyond period
            dict(target=1.0),
            dict(target=0.0),
            dict(path=("B",)),
            dict(path=("B", "A", "B")),     # revisit
        ],
    )
    def test_flow_rejections(self, kwargs):
        base = dict(id=0, phase=0, period=10, deadline=8, target=0.9,
                    path=("B", "A"))
        base.update(kwargs)
        with pytest.raises(ModelError):
            FlowSpec(**base)

    def test_instance_fields(self):
        f = FlowSpec(id=2, phase=3, period=20, deadline=12, target=0.99,
                     path=("D", "C", "B", "A"))
        inst = f.instance(k=1, hop=1)
        assert inst.release == 3 + 20
        assert inst.deadline == 23 + 12
        assert (inst.src, inst.dst) == ("C", "B")
        assert inst.local_target == pytest.approx(0.99 ** (1 / 3), abs=0)

    def test_duplicate_priorities(self):
        topo, flows = two_flow_star()
        clash = FlowSpec(id=0, phase=0, period=10, deadline=8, target=0.92,
                         path=("C", "A"))
        with pytest.raises(ModelError, match="duplicate"):
            validate_workload(topo, [flows[0], clash])

    def test_path_must_follow_edges(self):
        topo, _ = two_flow_star()
        bad = FlowSpec(id=0, phase=0, period=10, deadline=8, target=0.92,
                       path=("A", "B"))
        with pytest.raises(ModelError, match="not an edge"):
            validate_workload(topo, [bad])

    def test_pull_service_order(self):
        f0 = FlowSpec(0, 0, 10, 8, 0.92, ("B", "A")).instance(0)
        f1 = FlowSpec(1, 0, 10, 8, 0.92, ("C", "A")).instance(0)
        Pull("A", (f0, f1), channel=0)
        with pytest.raises(ModelError, match="priority order"):
            Pull("A", (f1, f0), channel=0)
        with pytest.raises(ModelError, match="coordinator"):
            Pull("B", (f0,), channel=0)


def running_example_policy():
    """The four-slot two-flow policy of the running example, by hand."""
    entries = (
        PolicyEntry(0, 0, "A", (ServiceRef(0, 0, 0),)),
        PolicyEntry(1, 1, "A", (ServiceRef(0, 0, 0), ServiceRef(1, 0, 0))),
        PolicyEntry(2, 0, "A", (ServiceRef(0, 0, 0), ServiceRef(1, 0, 0))),
        PolicyEntry(3, 1, "A", (ServiceRef(1, 0, 0),)),
    )
    analysis = (
        InstanceRecord(
            flow=0, k=0, release=0, deadline=8, completion_slot=2,
            bound=0.973,
            hops=(HopRecord(0, 0, 0, "B", "A", 2, 0.973,
                            ((0, 0.7), (1, 0.91), (2, 0.973))),),
        ),
        InstanceRecord(
            flow=1, k=0, release=1, deadline=9, completion_slot=3,
            bound=0.9352,
            hops=(HopRecord(1, 0, 0, "C", "A", 3, 0.9352,
                            ((1, 0.49), (2, 0.784), (3, 0.9352))),),
        ),
    )
    return Policy(hyperperiod=10, channel_count=16, min_quality=0.7,
                  service_cap=4, active_cap=10, entries=entries,
                  analysis=analysis)


class TestValidatePolicy:
    def test_running_example_is_clean(self):
        topo, flows = two_flow_star()
        assert validate_policy(running_example_policy(), topo, flows) == []

    def test_empty_policy_no_flows(self):
        topo = Topology(frozenset("AB"), frozenset({("B", "A")}), "A")
        policy = Policy(hyperperiod=1, channel_count=16, min_quality=0.7,
                        service_cap=4, active_cap=10, entries=())
        assert validate_policy(policy, topo, []) == []

    def test_sender_receiver_conflict_across_pulls(self):
        # Coordinators B and C in one slot, with B the source of the
        # instance C services: exactly the case the conflict rule forbids.
        topo = Topology(
            nodes=frozenset({"X", "B", "C"}),
            edges=frozenset({("X", "B"), ("B", "C")}),
            base_station="C",
        )
        flows = [
            FlowSpec(id=0, phase=0, period=4, deadline=4, target=0.9,
                     path=("X", "B")),
            FlowSpec(id=1, phase=0, period=4, deadline=4, target=0.9,
                     path=("B", "C")),
        ]
        entries = (
            PolicyEntry(0, 0, "B", (ServiceRef(0, 0, 0),)),
            PolicyEntry(0, 1, "C", (ServiceRef(1, 0, 0),)),
        )
        analysis = tuple(
            InstanceRecord(flow=f, k=0, release=0, deadline=4,
                           completion_slot=0, bound=0.95,
                           hops=(HopRecord(f, 0, 0, src, dst, 0, 0.95,
                                           ((0, 0.95),)),))
            for f, (src, dst) in ((0, ("X", "B")), (1, ("B", "C")))
        )
        policy = Policy(hyperperiod=4, channel_count=16, min_quality=0.7,
                        service_cap=4, active_cap=10, entries=entries,
                        analysis=analysis)
        violations = validate_policy(policy, topo, flows)
        assert len(violations) == 1
        assert violations[0].rule == "node-conflict"
        assert "B" in violations[0].nodes

    def test_channel_clash(self):
        topo, flows = two_flow_star()
        base = running_example_policy()
        clashing = base.entries + (
            PolicyEntry(3, 1, "A", (ServiceRef(1, 0, 0),)),
        )
        policy = Policy(hyperperiod=10, channel_count=16, min_quality=0.7,
                        service_cap=4, active_cap=10, entries=clashing,
                        analysis=base.analysis)
        rules = {v.rule for v in validate_policy(policy, topo, flows)}
        assert "channel-clash" in rules

    def test_consecutive_channel_reuse(self):
        topo, flows = two_flow_star()
        base = running_example_policy()
        entries = list(base.entries)
        entries[1] = PolicyEntry(1, 0, "A", entries[1].services)  # same as slot 0
        policy = Policy(hyperperiod=10, channel_count=16, min_quality=0.7,
                        service_cap=4, active_cap=10, entries=tuple(entries),
                        analysis=base.analysis)
        rules = {v.rule for v in validate_policy(policy, topo, flows)}
        assert "channel-hop" in rules

    def test_missed_deadline_and_low_bound(self):
        topo, flows = two_flow_star()
        base = running_example_policy()
        bad = list(base.analysis)
        bad[0] = InstanceRecord(flow=0, k=0, release=0, deadline=8,
                                completion_slot=8, bound=0.5,
                                hops=bad[0].hops)
        policy = Policy(hyperperiod=10, channel_count=16, min_quality=0.7,
                        service_cap=4, active_cap=10, entries=base.entries,
                        analysis=tuple(bad))
        details = [v for v in validate_policy(policy, topo, flows)
                   if v.rule == "deadline-reliability"]
        assert len(details) == 2  # deadline breach plus bound below target

    def test_hop_precedence(self):
        topo = Topology(
            nodes=frozenset({"D", "C", "B"}),
            edges=frozenset({("D", "C"), ("C", "B")}),
            base_station="B",
        )
        flows = [FlowSpec(id=0, phase=0, period=8, deadline=8, target=0.9,
                          path=("D", "C", "B"))]
        entries = (
            PolicyEntry(0, 0, "C", (ServiceRef(0, 0, 0),)),
            PolicyEntry(0, 1, "B", (ServiceRef(0, 0, 1),)),  # too early
        )
        analysis = (
            InstanceRecord(
                flow=0, k=0, release=0, deadline=8, completion_slot=0,
                bound=0.9216,
                hops=(
                    HopRecord(0, 0, 0, "D", "C", 0, 0.96, ((0, 0.96),)),
                    HopRecord(0, 0, 1, "C", "B", 0, 0.96, ((0, 0.96),)),
                ),
            ),
        )
        policy = Policy(hyperperiod=8, channel_count=16, min_quality=0.7,
                        service_cap=4, active_cap=10, entries=entries,
                        analysis=analysis)
        violations = validate_policy(policy, topo, flows)
        assert any(v.rule == "hop-precedence" for v in violations)
        assert any(v.rule == "node-conflict" for v in violations)
