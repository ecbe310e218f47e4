"""Regenerate the shipped scenario fixtures in src/ivnsec/fixtures/.

All fixtures share one two-switch zonal topology and one communication
matrix. The matrix is padded with switch-local diagnostic flows until the
static tables hold 39 rules on sw1 and 43 on sw2.

    python3 tools/make_fixtures.py
"""

from __future__ import annotations

import copy
import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from ivnsec.controlplane import provision_static  # noqa: E402
from ivnsec.scenario import load_document  # noqa: E402

OUT = ROOT / "src" / "ivnsec" / "fixtures"
TARGET_RULES = {"sw1": 39, "sw2": 43}

NODES = [
    ("sw1", "Switch", None, []),
    ("sw2", "Switch", None, []),
    ("zc_fl", "ZoneController", "10.0.1.11", []),
    ("zc_fr", "ZoneController", "10.0.1.12", []),
    ("gateway", "OnlineGateway", "10.0.1.20", []),
    ("camera", "Camera", "10.0.1.30", []),
    ("hpc1", "HpcNode", "10.0.1.41", [80, 8080]),
    ("nads1", "Nads", "10.0.1.50", []),
    ("zc_rl", "ZoneController", "10.0.2.11", []),
    ("zc_rr", "ZoneController", "10.0.2.12", []),
    ("infotainment", "Infotainment", "10.0.2.25", []),
    ("hpc2", "HpcNode", "10.0.2.42", [80]),
    ("hpc3", "HpcNode", "10.0.2.43", [80]),
    ("nads2", "Nads", "10.0.2.50", []),
    ("acdc_edge", "AcdcEdge", "10.0.2.60", []),
    ("controller", "SdnController", "10.0.0.1", []),
]

LINKS = [
    ("sw1", "sw2", 100),
    ("zc_fl", "sw1", 100), ("zc_fr", "sw1", 100), ("gateway", "sw1", 100), ("camera", "sw1", 100),
    ("hpc1", "sw1", 100), ("nads1", "sw1", 100),
    ("zc_rl", "sw2", 100), ("zc_rr", "sw2", 100), ("infotainment", "sw2", 100), ("hpc2", "sw2", 100),
    ("hpc3", "sw2", 100), ("nads2", "sw2", 100), ("acdc_edge", "sw2", 100),
    ("controller", "sw1", 100), ("controller", "sw2", 100),
]

TUNNELS = [
    {"domain": "chassis", "multicast_ip": "239.1.1.1", "udp_port": 30490,
     "members": ["zc_fl", "zc_fr", "zc_rl", "zc_rr"]},
    {"domain": "body", "multicast_ip": "239.1.1.2", "udp_port": 30491, "members": ["zc_fl", "zc_rr"]},
    {"domain": "powertrain", "multicast_ip": "239.1.1.3", "udp_port": 30492, "members": ["zc_fr", "zc_rl"]},
]

CORE_MATRIX = [
    {"id": "video", "src": "camera", "dst": "hpc2", "protocol": "udp", "l4_src": 5004, "l4_dst": 5004,
     "description": "front camera stream"},
    {"id": "can_chassis_fl", "src": "zc_fl", "tunnel": "chassis", "l4_src": 30501},
    {"id": "can_chassis_fr", "src": "zc_fr", "tunnel": "chassis", "l4_src": 30501},
    {"id": "can_chassis_rl", "src": "zc_rl", "tunnel": "chassis", "l4_src": 30501},
    {"id": "can_chassis_rr", "src": "zc_rr", "tunnel": "chassis", "l4_src": 30501},
    {"id": "can_body_fl", "src": "zc_fl", "tunnel": "body", "l4_src": 30502},
    {"id": "can_body_rr", "src": "zc_rr", "tunnel": "body", "l4_src": 30502},
    {"id": "can_pt_fr", "src": "zc_fr", "tunnel": "powertrain", "l4_src": 30503},
    {"id": "can_pt_rl", "src": "zc_rl", "tunnel": "powertrain", "l4_src": 30503},
    {"id": "gw_hpc1", "src": "gateway", "dst": "hpc1", "protocol": "tcp", "l4_src": 50000, "l4_dst": 80},
    {"id": "hpc1_gw", "src": "hpc1", "dst": "gateway", "protocol": "tcp", "l4_src": 80, "l4_dst": 50000},
    {"id": "hpc1_hpc2", "src": "hpc1", "dst": "hpc2", "protocol": "udp", "l4_src": 6000, "l4_dst": 6000},
    {"id": "hpc2_hpc1", "src": "hpc2", "dst": "hpc1", "protocol": "udp", "l4_src": 6001, "l4_dst": 6001},
    {"id": "hpc1_hpc3", "src": "hpc1", "dst": "hpc3", "protocol": "udp", "l4_src": 6002, "l4_dst": 6002},
    {"id": "hpc3_hpc1", "src": "hpc3", "dst": "hpc1", "protocol": "udp", "l4_src": 6003, "l4_dst": 6003},
    {"id": "info_hpc3", "src": "infotainment", "dst": "hpc3", "protocol": "tcp", "l4_src": 51000, "l4_dst": 80},
    {"id": "hpc3_info", "src": "hpc3", "dst": "infotainment", "protocol": "tcp", "l4_src": 80, "l4_dst": 51000},
    {"id": "hpc2_hpc3", "src": "hpc2", "dst": "hpc3", "protocol": "udp", "l4_src": 6004, "l4_dst": 6004},
    {"id": "gw_info", "src": "gateway", "dst": "infotainment", "protocol": "tcp", "l4_src": 52000, "l4_dst": 443},
    {"id": "info_gw", "src": "infotainment", "dst": "gateway", "protocol": "tcp", "l4_src": 443, "l4_dst": 52000},
]

# switch-local diagnostic flows used to reach the target table sizes
PADDING = {
    "sw1": ("gateway", "zc_fl", "zc_fr"),
    "sw2": ("hpc3", "zc_rl", "zc_rr"),
}

CAN_TRAFFIC = [
    {"id": "chassis_fl", "kind": "can", "flow": "can_chassis_fl", "cycle_ms": 10, "can_id": 256, "payload_len": 8},
    {"id": "body_rr", "kind": "can", "flow": "can_body_rr", "cycle_ms": 20, "can_id": 768, "payload_len": 8},
]
VIDEO_TRAFFIC = {"id": "video", "kind": "video", "flow": "video", "fps": 25, "gop": 25,
                 "i_frame_bytes": 40000, "p_frame_bytes": 8000}

VIDEO_MONITOR = {"id": "video", "flow": "video", "metric_x": "FrameSize", "metric_y": "Bandwidth",
                 "interval_ms": 100, "learning_intervals": 100}
# 1-d cycle-deviation clouds leave gaps between flat-kernel modes when h is
# derived from nearest-neighbour spacing; a fixed h keeps jittered streams quiet
CAN_MONITORS = [
    {"id": "can_chassis_fl", "flow": "can_chassis_fl", "metric_x": "FrameSize", "metric_y": "CycleDeviation",
     "interval_ms": 1000, "learning_intervals": 100, "nominal_cycle_ms": 10, "bandwidth": {"fixed": 0.3}},
    {"id": "can_body_rr", "flow": "can_body_rr", "metric_x": "FrameSize", "metric_y": "CycleDeviation",
     "interval_ms": 1000, "learning_intervals": 100, "nominal_cycle_ms": 20, "bandwidth": {"fixed": 0.3}},
]

ORCHESTRATOR = {
    "nodes": [{"id": "hpc1", "role": "Master"}, {"id": "hpc2"}, {"id": "hpc3"}],
    "services": [
        {"id": "perception", "criticality": "Critical", "allowed_nodes": ["hpc1", "hpc2"], "node": "hpc1"},
        {"id": "media", "criticality": "Optional", "node": "hpc3"},
        {"id": "navigation", "criticality": "Optional", "node": "hpc3"},
    ],
    "modes": {"FailSafe": {"fail_safe": True, "targets": {"perception": "hpc2"}}},
}


def _mac(i: int) -> str:
    return f"02:00:00:00:00:{i:02x}"


def base_document(matrix) -> dict:
    nodes = []
    for i, (nid, kind, addr, ports) in enumerate(NODES, start=1):
        node = {"id": nid, "kind": kind, "mac": _mac(i)}
        if addr:
            node["ip"] = addr
        if ports:
            node["open_ports"] = ports
        nodes.append(node)
    return {
        "id": "base",
        "description": "",
        "duration_s": 1,
        "seeds": [42],
        "topology": {
            "nodes": nodes,
            "links": [{"a": a, "b": b, "latency_us": lat} for a, b, lat in LINKS],
            "mirror_map": {"sw1": "nads1", "sw2": "nads2"},
        },
        "someip_ports": [30490, 30491, 30492],
        "tunnels": copy.deepcopy(TUNNELS),
        "matrix": copy.deepcopy(matrix),
    }


def rule_counts(matrix) -> dict:
    scn = load_document(base_document(matrix))
    tables = provision_static(scn.matrix, scn.topology, scn.tunnels)
    return {sw: len(rules) for sw, rules in tables.items()}


def padded_matrix() -> list:
    matrix = copy.deepcopy(CORE_MATRIX)
    counts = rule_counts(matrix)
    for sw, (src, *dsts) in PADDING.items():
        missing = TARGET_RULES[sw] - counts[sw]
        if missing < 0:
            raise SystemExit(f"core matrix already exceeds the target on {sw}")
        for i in range(missing):
            matrix.append({"id": f"diag_{sw}_{i}", "src": src, "dst": dsts[i % len(dsts)], "protocol": "udp",
                           "l4_src": 13400 + i, "l4_dst": 13400, "description": "diagnostics"})
    counts = rule_counts(matrix)
    if counts != TARGET_RULES:
        raise SystemExit(f"padding failed: {counts}")
    return matrix


def scenario(matrix, id: str, description: str, duration_s: float, **sections) -> dict:
    doc = base_document(matrix)
    doc["id"] = id
    doc["description"] = description
    doc["duration_s"] = duration_s
    doc.update(sections)
    return doc


def build_all() -> dict:
    m = padded_matrix()
    nads = [
        {"id": "nads1", "drop_probability": 0.0, "monitors": [VIDEO_MONITOR]},
        {"id": "nads2", "drop_probability": 0.0, "monitors": CAN_MONITORS},
    ]
    traffic = [VIDEO_TRAFFIC] + CAN_TRAFFIC
    dos = {"id": "dos", "kind": "dos", "entry": "camera", "flow": "video", "rate_pps": 75077,
           "duration_s": 134, "frame_size": 18, "start_s": 10, "start_jitter_ms": 100, "victim": "hpc2"}
    acl = [
        {"name": "deny_icmp", "protocol": "icmp"},
        {"name": "deny_tcp_wellknown", "protocol": "tcp", "l4_dst": [1, 1023]},
        {"name": "antispoof_gateway", "switch": "sw1", "from": "gateway", "ip_src_not": "10.0.1.20"},
    ]
    scan = {"id": "scan", "kind": "port_scan", "entry": "gateway", "target": "hpc1",
            "ports": [[1, 100], [8075, 8085]], "spacing_ms": 1, "src_port": 40000, "ping": True,
            "start_s": 1, "measure": "none"}
    out = {}
    out["static_provisioning"] = scenario(
        m, "static_provisioning", "Static provisioning of the communication matrix on two zonal switches.", 1,
        expected={"rules": TARGET_RULES})
    out["regular_8h"] = scenario(
        m, "regular_8h", "Eight hours of regular traffic with exact cycles; no anomaly is expected.", 28800,
        traffic=traffic, nads=nads, chunk_ms=10000, expected={"anomaly_reports": 0})
    jitter = [dict(t, jitter_frac=0.05) for t in CAN_TRAFFIC]
    out["regular_8h_jitter"] = scenario(
        m, "regular_8h_jitter", "Eight hours of control traffic with gaussian send jitter (sigma 5% of cycle).",
        28800, traffic=jitter, nads=[{"id": "nads2", "monitors": CAN_MONITORS}], chunk_ms=10000,
        expected={"max_false_positive_rate": 0.0002})
    out["local_dos"] = scenario(
        m, "local_dos", "Flood on the camera stream, mitigated by the controller removing the stream's rules.", 150,
        traffic=traffic, nads=nads, attacks=[dos],
        controller={"on_anomaly": [{"monitor": "video", "countermeasure": {"type": "remove_flow"}}]},
        acdc={"enabled": False},
        ftti_budget_ms=500, expected={"anomaly_reports": {"min": 1339, "max": 1341}})
    cloud = dict(dos, duration_s=20, measure="cloud")
    out["cloud_dos"] = scenario(
        m, "cloud_dos", "Flood on the camera stream, handled by the cyber defense center switching to FailSafe.", 35,
        traffic=traffic, nads=nads, attacks=[cloud], orchestrator=ORCHESTRATOR,
        acdc={"vehicle": "vehicle-0001", "fusion": {"window_ms": 1000, "k": 1},
              "rules": [{"match": "anomaly_report:video", "stage": "Containment",
                         "action": {"type": "set_operation_mode", "mode": "FailSafe"}}]},
        ftti_budget_ms=3000)
    out["port_scan"] = scenario(
        m, "port_scan", "TCP and ICMP scan of hpc1 from the online gateway.", 2,
        acl=acl, attacks=[scan], acdc={"enabled": False}, expected={"responses_observed": 0})
    out["port_scan_permissive"] = scenario(
        m, "port_scan_permissive", "Negative control: one scanned port is whitelisted and answers.", 2,
        acl=acl, attacks=[scan], acdc={"enabled": False},
        whitelist=[{"name": "hpc1_admin", "src": "gateway", "dst": "hpc1", "protocol": "tcp", "l4_dst": 8080,
                    "bidirectional": True}],
        expected={"responses_observed": 1})
    return out


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for name, doc in build_all().items():
        load_document(doc)
        (OUT / f"{name}.json").write_text(json.dumps(doc, indent=2) + "\n")
        print(f"wrote {name}.json")


if __name__ == "__main__":
    main()
