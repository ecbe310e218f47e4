"""A flood hits the camera stream; the NADS flags it and the controller bans the flow.

Run: python3 demos/local_dos_reaction.py [seed]
"""

import sys

from ivnsec.scenario import load_fixture
from ivnsec.simcore import build_summary, measure_timings, run


def main(seed: int = 42) -> None:
    scn = load_fixture("local_dos")
    print(f"Scenario '{scn.id}': {scn.description}")
    res = run(scn, seed)
    for e in res.entries:
        if e["type"] in ("attack_start", "countermeasure_issued", "countermeasure_complete", "attack_last_victim"):
            print(f"  t={e['time_us'] / 1e6:10.6f} s  {e['type']}")
        if e["type"] == "anomaly_report" and e["payload"]["report_id"] == 1:
            v = e["payload"]["vector"]
            print(f"  t={e['time_us'] / 1e6:10.6f} s  first anomaly report: {v['frame_count']} frames in the "
                  f"interval, normalised point ({v['x']}, {v['y']}), distance {e['payload']['distance']}")
    summary = build_summary(res)
    print(f"The NADS kept reporting every interval of the flood: {summary['anomaly_reports']} reports.")
    [rec] = measure_timings(res)
    print(f"Detection took {rec.fdti_ms:.1f} ms, the reaction {rec.frti_ms:.1f} ms, and the victim saw attack "
          f"frames for {rec.fhti_ms:.1f} ms (budget {rec.ftti_budget_ms:.0f} ms).")
    for name, ms in rec.breakdown_ms.items():
        print(f"    {name:16s} {ms:9.3f} ms")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 42)
