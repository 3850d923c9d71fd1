"""Smoke test of the Python bindings: build with
`pip install --no-build-isolation ./crates/python`, then run this script."""

import json
import math
import random
import sys
import tempfile
from pathlib import Path

import pysslcal as s


def close(a, b, tol):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    # Geometry round trips.
    t = s.RigidTransform.from_axis_angle([0.1, -0.2, 0.3], [0.5, 0.0, -1.0])
    p = [1.0, 2.0, 3.0]
    assert close(t.inverse().apply(t.apply(p)), p, 1e-12)
    assert close(s.RigidTransform(t.matrix()).apply(p), t.apply(p), 1e-15)
    rot, shift = t.distance_to(t.compose(s.RigidTransform.identity()))
    assert rot < 1e-9 and shift < 1e-12

    # Ground-truth pairs give the ground-truth extrinsic.
    c3, c2, ids, gt, intr = s.simulate_corners(placements=4, seed=3)
    est, inliers, errors = s.calibrate(c3, c2, intr, placement_ids=ids, seed=1)
    rot, shift = est.distance_to(gt)
    assert rot < 1e-6 and shift < 1e-6, (rot, shift)
    assert all(inliers) and max(errors) < 1e-6

    # Gross pixel offsets are rejected.
    rng = random.Random(0)
    bad = rng.sample(range(len(c2)), len(c2) // 4)
    noisy = [list(q) for q in c2]
    for i in bad:
        noisy[i][0] += 40.0
    est, inliers, _ = s.calibrate(c3, noisy, intr, placement_ids=ids)
    assert not any(inliers[i] for i in bad)

    report = s.normalized_reprojection_error(c3, c2, gt, intr)
    assert report["nre_total"] < 1e-9
    assert max(c["weight"] for c in report["per_corner"]) == 1.0

    # A plane with one far point: the far point goes, the plane survives.
    pts = [[rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0, 0.5] for _ in range(400)]
    pts.append([0.0, 0.0, 5.0, 0.5])
    kept = s.remove_statistical_outliers(pts, k=10)
    assert 400 not in kept and len(kept) > 300
    plane, survivors, _ = s.refine_plane([[x, y, 3.0 + z, i] for x, y, z, i in pts], seed=2)
    assert abs(abs(plane[2]) - 1.0) < 1e-6 and survivors[-1] >= 400

    try:
        s.CheckerboardSpec(5, 5, 0.1)
    except s.SslcalError as e:
        assert "config" in str(e) or "invalid_input" in str(e)
    else:
        raise AssertionError("square boards are ambiguous")

    # Small end-to-end run through the commands.
    with tempfile.TemporaryDirectory() as d:
        d = Path(d)
        summary = s.simulate(str(d / "ds"), placements=3, frames=10, seed=5)
        assert summary["placements"] == 3
        est, record = s.calibrate_dataset(str(d / "ds"), str(d / "rec.json"), seed=5)
        err = record["ground_truth_error"]
        print("end-to-end: %.3f deg, %.1f mm" % (err["rotation_deg"], 1e3 * err["translation_m"]))
        report = s.evaluate(str(d / "rec.json"), str(d / "ds"), str(d / "eval"))
        assert math.isfinite(report["mean_weighted_error"])
        assert json.loads((d / "eval" / "report.json").read_text())["nre_total"] == report["nre_total"]

    print("pysslcal", s.__version__, "smoke test passed")


if __name__ == "__main__":
    sys.exit(main())
