"""A compromised gateway scans an HPC node. Every probe misses the static
table, the controller checks it against the ACL and nothing answers. The
permissive variant whitelists one service, so exactly one reply comes back.

Run: python3 demos/port_scan_blackout.py
"""

from collections import Counter

from ivnsec.scenario import load_fixture
from ivnsec.simcore import build_summary, run


def main() -> None:
    for name in ("port_scan", "port_scan_permissive"):
        res = run(load_fixture(name), 42)
        s = build_summary(res)
        rules = Counter(e["payload"]["acl_rule"] for e in res.entries if e["type"] == "acl_violation")
        print(f"{name}: {s['probes_sent']} probes, {s['packet_in_count']} packet-ins, "
              f"{s['responses_observed']} responses")
        for rule, n in sorted(rules.items()):
            print(f"    ACL {rule}: {n} violations logged")


if __name__ == "__main__":
    main()
