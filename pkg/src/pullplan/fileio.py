"""Canonical text formats: workload files, policy files, metrics documents.

Both structured formats are line oriented (``[section]`` headers and
``key = value`` lines, with repeatable keys) and byte-stable: serialising a
parsed document reproduces it exactly.  See docs/formats.md.
"""

from __future__ import annotations

import json
from typing import Iterable, Sequence

from .model import (
    FlowSpec,
    HopRecord,
    InstanceRecord,
    Policy,
    PolicyEntry,
    ServiceRef,
    Topology,
)


class FormatError(ValueError):
    """Malformed document; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")


def _lines(text: str) -> list[tuple[int, str]]:
    out = []
    for no, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        out.append((no, stripped))
    return out


def _sections(text: str) -> dict[str, list[tuple[int, str, str]]]:
    """Split into sections of (line, key, value) triples."""
    sections: dict[str, list[tuple[int, str, str]]] = {}
    current: str | None = None
    for no, line in _lines(text):
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1]
            sections.setdefault(current, [])
            continue
        if current is None:
            raise FormatError("content before any [section] header", no)
        if "=" not in line:
            raise FormatError("expected 'key = value'", no)
        key, _, value = line.partition("=")
        sections[current].append((no, key.strip(), value.strip()))
    return sections


def _int(value: str, field: str, no: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise FormatError(f"field {field!r}: {value!r} is not an integer", no)


def _float(value: str, field: str, no: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise FormatError(f"field {field!r}: {value!r} is not a number", no)


# ---------------------------------------------------------------------------
# Workload files


def dump_workload(topo: Topology, flows: Sequence[FlowSpec]) -> str:
    out = ["[topology]"]
    out.append(f"channels = {topo.channel_count}")
    out.append(f"base_station = {topo.base_station}")
    for node in sorted(topo.nodes):
        out.append(f"node = {node}")
    for a, b in sorted(topo.edges):
        out.append(f"edge = {a} {b}")
    out.append("")
    out.append("[flows]")
    out.append("# flow = id phase period deadline reliability path")
    for f in sorted(flows, key=lambda f: f.id):
        path = ">".join(f.path)
        out.append(
            f"flow = {f.id} {f.phase} {f.period} {f.deadline} "
            f"{f.target!r} {path}"
        )
    return "\n".join(out) + "\n"


def load_workload(text: str) -> tuple[Topology, list[FlowSpec]]:
    sections = _sections(text)
    for required in ("topology", "flows"):
        if required not in sections:
            raise FormatError(f"missing [{required}] section")

    channels = 16
    base: str | None = None
    nodes: set[str] = set()
    edges: set[tuple[str, str]] = set()
    for no, key, value in sections["topology"]:
        if key == "channels":
            channels = _int(value, key, no)
        elif key == "base_station":
            base = value
        elif key == "node":
            nodes.add(value)
        elif key == "edge":
            parts = value.split()
            if len(parts) != 2:
                raise FormatError("edge needs exactly two node names", no)
            edges.add((parts[0], parts[1]))
        else:
            raise FormatError(f"unknown topology field {key!r}", no)
    if base is None:
        raise FormatError("topology is missing base_station")
    topo = Topology(nodes=frozenset(nodes), edges=frozenset(edges),
                    base_station=base, channel_count=channels)

    flows = []
    for no, key, value in sections["flows"]:
        if key != "flow":
            raise FormatError(f"unknown flows field {key!r}", no)
        parts = value.split()
        if len(parts) != 6:
            raise FormatError(
                "flow needs: id phase period deadline reliability path", no
            )
        path = tuple(parts[5].split(">"))
        flows.append(
            FlowSpec(
                id=_int(parts[0], "id", no),
                phase=_int(parts[1], "phase", no),
                period=_int(parts[2], "period", no),
                deadline=_int(parts[3], "deadline", no),
                target=_float(parts[4], "reliability", no),
                path=path,
            )
        )
    return topo, flows


# ---------------------------------------------------------------------------
# Policy files


def _fmt_trajectory(traj: Sequence[tuple[int, float]]) -> str:
    if not traj:
        return "-"
    return ",".join(f"{slot}:{bound!r}" for slot, bound in traj)


def _parse_trajectory(text: str, no: int) -> tuple[tuple[int, float], ...]:
    if text == "-":
        return ()
    pairs = []
    for item in text.split(","):
        slot, _, bound = item.partition(":")
        pairs.append((_int(slot, "trajectory", no), _float(bound, "trajectory", no)))
    return tuple(pairs)


def dump_policy(policy: Policy) -> str:
    out = ["[policy]"]
    out.append(f"hyperperiod = {policy.hyperperiod}")
    out.append(f"channels = {policy.channel_count}")
    out.append(f"min_quality = {policy.min_quality!r}")
    out.append(f"service_cap = {policy.service_cap}")
    out.append(f"active_cap = {policy.active_cap}")
    out.append("# pull = slot channel coordinator flow:instance:hop,...")
    for e in sorted(policy.entries, key=lambda e: (e.slot, e.channel)):
        triples = ",".join(f"{s.flow}:{s.k}:{s.hop}" for s in e.services)
        out.append(f"pull = {e.slot} {e.channel} {e.coordinator} {triples}")
    out.append("")
    out.append("[analysis]")
    for rec in sorted(policy.analysis, key=lambda r: (r.flow, r.k)):
        out.append(
            f"instance = {rec.flow} {rec.k} release={rec.release} "
            f"deadline={rec.deadline} completion={rec.completion_slot} "
            f"bound={rec.bound!r}"
        )
        for h in rec.hops:
            out.append(
                f"hop = {h.flow} {h.k} {h.hop} src={h.src} dst={h.dst} "
                f"completion={h.completion_slot} bound={h.bound!r} "
                f"trajectory={_fmt_trajectory(h.trajectory)}"
            )
    return "\n".join(out) + "\n"


def _kv_fields(parts: list[str], no: int) -> dict[str, str]:
    out = {}
    for p in parts:
        key, eq, value = p.partition("=")
        if not eq:
            raise FormatError(f"expected key=value, got {p!r}", no)
        out[key] = value
    return out


def load_policy(text: str) -> Policy:
    sections = _sections(text)
    if "policy" not in sections:
        raise FormatError("missing [policy] section")
    header: dict[str, str] = {}
    header_lines: dict[str, int] = {}
    entries: list[PolicyEntry] = []
    for no, key, value in sections["policy"]:
        if key == "pull":
            parts = value.split()
            if len(parts) != 4:
                raise FormatError("pull needs: slot channel coordinator services", no)
            services = []
            for item in parts[3].split(","):
                bits = item.split(":")
                if len(bits) != 3:
                    raise FormatError(f"bad service triple {item!r}", no)
                services.append(ServiceRef(
                    _int(bits[0], "flow", no), _int(bits[1], "instance", no),
                    _int(bits[2], "hop", no)))
            entries.append(PolicyEntry(
                slot=_int(parts[0], "slot", no),
                channel=_int(parts[1], "channel", no),
                coordinator=parts[2],
                services=tuple(services),
            ))
        else:
            header[key] = value
            header_lines[key] = no
    for field in ("hyperperiod", "channels", "min_quality", "service_cap",
                  "active_cap"):
        if field not in header:
            raise FormatError(f"policy header is missing {field!r}")

    records: list[InstanceRecord] = []
    hops_of: dict[tuple[int, int], list[HopRecord]] = {}
    order: list[tuple[int, int, dict, int]] = []
    for no, key, value in sections.get("analysis", []):
        parts = value.split()
        if key == "instance":
            if len(parts) != 6:
                raise FormatError("instance needs 6 fields", no)
            fields = _kv_fields(parts[2:], no)
            flow, k = _int(parts[0], "flow", no), _int(parts[1], "k", no)
            order.append((flow, k, fields, no))
            hops_of.setdefault((flow, k), [])
        elif key == "hop":
            if len(parts) != 8:
                raise FormatError("hop needs 8 fields", no)
            fields = _kv_fields(parts[3:], no)
            flow, k = _int(parts[0], "flow", no), _int(parts[1], "k", no)
            if (flow, k) not in hops_of:
                raise FormatError(f"hop before its instance line", no)
            hops_of[(flow, k)].append(HopRecord(
                flow=flow, k=k, hop=_int(parts[2], "hop", no),
                src=fields["src"], dst=fields["dst"],
                completion_slot=_int(fields["completion"], "completion", no),
                bound=_float(fields["bound"], "bound", no),
                trajectory=_parse_trajectory(fields["trajectory"], no),
            ))
        else:
            raise FormatError(f"unknown analysis field {key!r}", no)
    for flow, k, fields, no in order:
        records.append(InstanceRecord(
            flow=flow, k=k,
            release=_int(fields["release"], "release", no),
            deadline=_int(fields["deadline"], "deadline", no),
            completion_slot=_int(fields["completion"], "completion", no),
            bound=_float(fields["bound"], "bound", no),
            hops=tuple(hops_of[(flow, k)]),
        ))

    no = header_lines.get("hyperperiod")
    return Policy(
        hyperperiod=_int(header["hyperperiod"], "hyperperiod", no),
        channel_count=_int(header["channels"], "channels", no),
        min_quality=float(header["min_quality"]),
        service_cap=int(header["service_cap"]),
        active_cap=int(header["active_cap"]),
        entries=tuple(entries),
        analysis=tuple(records),
    )


# ---------------------------------------------------------------------------
# Metrics documents (JSON) and CSV series


METRICS_REQUIRED = {
    "schedulable": bool,
    "hyperperiod": int,
    "slot_ms": (int, float),
    "config": dict,
    "flows": list,
    "timing": dict,
}

FLOW_FIELDS = {
    "id": int,
    "period": int,
    "deadline": int,
    "target": (int, float),
    "hops": int,
    "end_to_end_bound": (int, float),
    "response_time": int,
    "completion_slots": list,
}

TIMING_FIELDS = ("builder_s", "evaluator_s", "total_s")


def validate_metrics(doc: dict) -> list[str]:
    """Structural check of a metrics document; returns problem strings."""
    problems = []
    for key, kind in METRICS_REQUIRED.items():
        if key not in doc:
            problems.append(f"missing field {key!r}")
        elif not isinstance(doc[key], kind):
            problems.append(f"field {key!r} has type {type(doc[key]).__name__}")
    for key in TIMING_FIELDS:
        if key not in doc.get("timing", {}):
            problems.append(f"timing is missing {key!r}")
    if doc.get("schedulable"):
        for i, flow in enumerate(doc.get("flows", [])):
            for key, kind in FLOW_FIELDS.items():
                if key not in flow:
                    problems.append(f"flows[{i}] is missing {key!r}")
                elif not isinstance(flow[key], kind):
                    problems.append(f"flows[{i}].{key} has a wrong type")
    elif "failure" not in doc:
        problems.append("unschedulable document is missing 'failure'")
    return problems


def dumps_metrics(doc: dict) -> str:
    problems = validate_metrics(doc)
    if problems:
        raise FormatError("metrics document invalid: " + "; ".join(problems))
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


# ---------------------------------------------------------------------------
# Config files: bare key = value lines shared by every subcommand.


def load_config(text: str) -> dict[str, str]:
    out = {}
    for no, line in _lines(text):
        if "=" not in line:
            raise FormatError("expected 'key = value'", no)
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out
