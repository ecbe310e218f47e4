import math
from dataclasses import replace

import numpy as np
import pytest

from ivnsec.netmodel import EthernetFrame
from ivnsec.scenario import AttackSpec
from ivnsec.simcore import build_summary, measure_timings, run
from ivnsec.simcore.events import events_jsonl
from ivnsec.simcore.timing import CLOUD_COMPONENTS, LOCAL_COMPONENTS
from ivnsec.simcore.traffic import (
    DosSource, EmptySlice, PeriodicSource, ReplaySource, inject_dos, inject_port_scan, inject_replay,
    inject_spoof, spoof_template,
)

from tests.conftest import cached_run, fixture, shortened

TMPL = EthernetFrame(0, 1, 2, ip_src=1, ip_dst=2, ip_proto=17, l4_src=5004, l4_dst=5004)


# -- traffic sources ----------------------------------------------------------

def test_dos_rate_frame_count():
    src = DosSource.from_rate("d", "camera", TMPL, 10_000_000, 75077, 134_000_000)
    assert src.count == 75077 * 134 == 10_060_318
    assert int(src.time_of(src.count - 1)) < 10_000_000 + 134_000_000


def test_dos_small_rate_spacing():
    batch = inject_dos(DosSource.from_rate("d", "camera", TMPL, 0, 10, 1_000_000))
    assert len(batch) == 10
    assert np.array_equal(np.diff(batch.times), np.full(9, 100_000))


def test_dos_total_form():
    batch = inject_dos(DosSource.from_total("d", "camera", TMPL, 5, 7, 70))
    assert batch.times.tolist() == [5, 15, 25, 35, 45, 55, 65]
    with pytest.raises(ValueError):
        DosSource.from_rate("d", "camera", TMPL, 0, 0, 10)


def test_dos_chunks_concatenate_to_whole():
    src = DosSource.from_rate("d", "camera", TMPL, 3, 333, 2_000_000)
    whole = inject_dos(src).times
    parts = [b.times for k in range(3) for b in src.batches(k * 1_000_000, (k + 1) * 1_000_000, 0, k)]
    assert np.array_equal(np.concatenate(parts), whole)


def test_periodic_jitter_chunk_independence():
    src = PeriodicSource("p", "zc_fl", TMPL, 0, None, "", 10_000, 8, 0.1)
    a = src.batches(0, 1_000_000, 7, 0)[0].times
    b = src.batches(0, 1_000_000, 7, 0)[0].times
    assert np.array_equal(a, b)
    assert np.all(np.abs(a - np.arange(100) * 10_000) <= 5_000)
    assert np.all(np.diff(a) >= 0)
    assert not np.array_equal(a, src.batches(0, 1_000_000, 8, 0)[0].times)


def test_replay_shifts_recorded_slice():
    rec = PeriodicSource("p", "zc_fl", TMPL, 0, None, "", 10_000)
    rep = ReplaySource("r", "hpc1", TMPL, 5_000_000, None, "", rec, 1_000_000, 1_100_000)
    frames = inject_replay(rep)
    assert [f.timestamp for f in frames] == [5_000_000 + i * 10_000 for i in range(10)]
    with pytest.raises(EmptySlice):
        inject_replay(ReplaySource("r", "hpc1", TMPL, 0, None, "", rec, 1_000_001, 1_000_002))


def test_spoof_carries_forged_source():
    scn = fixture("local_dos")
    forged = scn.topology["hpc1"]
    tmpl = spoof_template(TMPL, forged)
    frames = inject_spoof(PeriodicSource("s", "infotainment", tmpl, 0, 50_000, "", 10_000))
    assert len(frames) == 5
    assert all(f.ip_src == forged.ip and f.src_mac == forged.mac for f in frames)


# -- engine runs --------------------------------------------------------------

def _attack(kind, entry, start_us, measure="none", **params):
    return AttackSpec(kind, kind, entry, start_us, tuple(sorted(params.items())), measure=measure)


def test_empty_scenario():
    scn = replace(fixture("local_dos"), traffic=[], attacks=[], duration_us=2_000_000)
    res = run(scn, 1)
    assert measure_timings(res) == []
    summary = build_summary(res)
    assert summary["anomaly_reports"] == 0 and summary["frames"] == {}


def test_run_is_deterministic():
    scn = shortened(fixture("port_scan"), 3_000_000)
    assert events_jsonl(run(scn, 5).entries) == events_jsonl(run(scn, 5).entries)


def test_empty_port_range_sends_nothing():
    base = fixture("port_scan")
    scn = replace(base, attacks=[_attack("port_scan", "infotainment", 100_000, target="hpc1", ports=(),
                                         ping=False)], duration_us=1_000_000)
    summary = build_summary(run(scn, 0))
    assert summary["probes_sent"] == 0 and summary["acl_violations"] == 0


def test_replay_and_spoof_attacks_are_conserved():
    base = fixture("local_dos")
    attacks = [
        _attack("replay", "hpc1", 2_000_000, source="body_rr", slice_us=(0, 500_000)),
        _attack("spoof", "infotainment", 2_000_000, flow="hpc1_hpc2", forged_src="hpc1", rate_pps=100,
                duration_us=500_000, frame_size=64),
    ]
    res = run(replace(base, attacks=attacks, duration_us=3_000_000), 0)
    rep, spoof = res.stats["attack:replay"], res.stats["attack:spoof"]
    assert rep.injected == 25
    assert spoof.injected == 50
    assert all(st.to_dict()["balanced"] for st in res.stats.values())
    assert build_summary(res)["anomaly_reports"] == 0


def test_missing_detection_yields_undetected_record():
    scn = replace(fixture("local_dos"), nads=[], duration_us=12_000_000)
    [rec] = measure_timings(run(scn, 42))
    assert not rec.detected and math.isinf(rec.fhti_ms)
    assert rec.to_dict()["fhti_ms"] is None


def test_local_dos_conservation_and_breakdown():
    res = cached_run("local_dos", 42)
    assert all(st.to_dict()["balanced"] for st in res.stats.values())
    [rec] = measure_timings(res)
    assert rec.detected
    assert set(rec.breakdown_ms) == set(LOCAL_COMPONENTS)
    assert sum(rec.breakdown_ms.values()) == pytest.approx(rec.fhti_ms, abs=1e-6)
    assert rec.frti_ms <= 23.0 + 1e-9


def test_cloud_dos_causality_chain():
    res = cached_run("cloud_dos", 42)
    entries = res.entries
    applied = next(e for e in entries if e["type"] == "directive_applied")
    incident = next(e for e in entries if e["type"] == "incident"
                    and e["payload"]["incident"] == applied["payload"]["incident"])
    first_id = incident["payload"]["reports"][0]
    report = next(e for e in entries if e["type"] == "anomaly_report" and e["payload"]["report_id"] == first_id)
    at_nads = next(e for e in entries if e["type"] == "attack_first_nads"
                   and e["payload"]["nads"] == report["payload"]["nads"])
    assert at_nads["time_us"] <= report["time_us"] <= incident["time_us"] <= applied["time_us"]
    [rec] = measure_timings(res)
    assert set(rec.breakdown_ms) == set(CLOUD_COMPONENTS)
    assert sum(rec.breakdown_ms.values()) == pytest.approx(rec.fhti_ms, abs=1e-6)
    mode = build_summary(res)["operation_mode"]
    assert mode["mode"] == "FailSafe"
