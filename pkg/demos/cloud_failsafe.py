"""The same flood, answered by the cloud backend: it escalates one incident and
switches the vehicle into its FailSafe operation mode.

Run: python3 demos/cloud_failsafe.py [seed]
"""

import sys

from ivnsec.scenario import load_fixture
from ivnsec.simcore import build_summary, measure_timings, run


def main(seed: int = 42) -> None:
    scn = load_fixture("cloud_dos")
    res = run(scn, seed)
    summary = build_summary(res)
    sensor = summary["acdc"]["sensor_reports"]
    print(f"{summary['anomaly_reports']} anomaly reports reached the sensor manager; fusion escalated "
          f"{sensor['Escalated']} and suppressed {sensor['Suppressed']}.")
    for e in res.entries:
        if e["type"] in ("directive_rx", "service_disabled", "realloc_done", "mode_established"):
            print(f"  t={e['time_us'] / 1e6:10.6f} s  {e['type']:16s} {e['payload']}")
    [rec] = measure_timings(res)
    print(f"Fault handling took {rec.fhti_ms:.0f} ms:")
    for name, ms in rec.breakdown_ms.items():
        print(f"    {name:16s} {ms:9.3f} ms")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 42)
