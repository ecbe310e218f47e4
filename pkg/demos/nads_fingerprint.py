"""How a stream monitor learns a fingerprint of normal traffic and why a
flood of minimum-size frames lands far outside it.

Run: python3 demos/nads_fingerprint.py
"""

import numpy as np

from ivnsec.nads import MeanShiftModel, StreamMonitorConfig, assess, compute_raw
from ivnsec.netmodel import StreamKey


def main() -> None:
    cfg = StreamMonitorConfig(id="video", stream=StreamKey(ip_src=1, ip_dst=2, ip_proto=17, l4_src=5004,
                                                           l4_dst=5004), interval_us=100_000)
    rng = np.random.default_rng(1)
    normal = []
    for i in range(100):
        n = int(rng.integers(40, 50))
        normal.append(compute_raw(np.sort(rng.integers(0, 100_000, n)), rng.integers(1200, 1317, n), cfg, i))
    model = MeanShiftModel.train(normal, cfg)
    lo, hi = model.modes.min(axis=0), model.modes.max(axis=0)
    print(f"Learned {len(model.modes)} mode(s) with bandwidth h={model.h:.3f}, spanning "
          f"x {lo[0]:.2f}..{hi[0]:.2f} and y {lo[1]:.2f}..{hi[1]:.2f} of the normalised plane.")
    flood = compute_raw(np.arange(7508) * 13, np.full(7508, 18), cfg, 100)
    v = model.normalize(flood)
    res = assess(v, model)
    print(f"A 0.1 s flood interval: {flood.frame_count} frames, mean size {flood.raw_x:.0f} B, "
          f"{flood.raw_y:.0f} B/s.")
    print(f"Normalised to ({v.x}, {v.y}) (clamped: {v.clamped}); distance {res.distance:.3f} -> {res.verdict.value}")


if __name__ == "__main__":
    main()
