"""Smoke test for the qi2 extension module.

Build and install first, e.g.:
    maturin build -m crates/python/Cargo.toml --release -o dist && pip install dist/qi2-*.whl
"""

import math
import os
import random
import tempfile

import qi2


def close(a, b, tol=1e-9):
    return abs(a - b) <= max(1e-12, tol * max(abs(a), abs(b)))


def main():
    # affine data: every local score is zero
    xs = [[float(i)] for i in range(50)]
    ds = qi2.Dataset(xs, [[3.0 * x[0] - 1.0] for x in xs])
    res = qi2.compute(ds, k_max=10)
    assert res.n == 50 and res.k_max == 10
    assert max(max(row) for row in res.matrix()) < 1e-9

    # two labeled blobs plus one point of class 1 planted in blob 0
    rng = random.Random(7)
    pts, cls = [], []
    for c, cx in enumerate((0.0, 100.0)):
        for _ in range(50):
            pts.append([cx + rng.gauss(0, 1), rng.gauss(0, 1)])
            cls.append(c)
    pts.append([0.0, 0.0])
    cls.append(1)
    planted = len(pts) - 1
    blobs = qi2.Dataset(pts, [[float(c)] for c in cls], labels=[str(c) for c in cls])
    res = qi2.compute(blobs, k_max=40, output_metric="discrete")
    report = res.detect("outliers", blobs)
    assert [f["id"] for f in report["flagged"]] == [planted], report
    k, spike = report["flagged"][0]["trigger"]
    ids = [i for i in range(len(pts))]
    ids.sort(key=lambda j: (math.dist(pts[planted], pts[j]), j))
    direct = qi2.subset_qi2r(blobs, ids[: k + 1], output_metric="discrete")
    assert close(spike, direct), (spike, direct)
    assert planted in res.select((5, 25), (10.0, math.inf))
    assert res.detect("outliers", blobs, {"outlier_spike_min": 1e300})["flagged"] == []

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "blobs.qi2")
        res.save(path)
        again = qi2.Results.load(path, blobs)
        assert again.to_bytes() == res.to_bytes()
        other = qi2.Dataset(pts[:-1], [[float(c)] for c in cls[:-1]])
        try:
            qi2.Results.load(path, other)
        except qi2.DataError:
            pass
        else:
            raise AssertionError("fingerprint mismatch accepted")

    try:
        qi2.compute(ds, input_metric="manhattan")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown metric accepted")

    print("global", round(qi2.global_qi2r(blobs, output_metric="discrete"), 4))
    print("cluster counts", qi2.cluster_counts(blobs, [5, 10]))
    print("smoke test ok")


if __name__ == "__main__":
    main()
