#!/usr/bin/env python3
"""Smoke test for the pothole_py extension module.

Builds the extension with cargo, imports it from the build tree, and runs a
scene through the whole pipeline: synthesis, road fit, flattening,
segmentation, scoring, plus the attention and loss surfaces. Exits nonzero
on the first failed check.
"""

import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_and_import():
    subprocess.run(
        ["cargo", "build", "-p", "pothole-py", "--features", "extension-module"],
        cwd=REPO,
        check=True,
    )
    lib = REPO / "target" / "debug" / "libpothole_py.so"
    if not lib.is_file():  # e.g. macOS
        lib = REPO / "target" / "debug" / "libpothole_py.dylib"
    stage = Path(tempfile.mkdtemp(prefix="pothole_py_"))
    shutil.copy(lib, stage / "pothole_py.so")
    sys.path.insert(0, str(stage))
    import pothole_py

    return pothole_py


def main():
    pp = build_and_import()
    print(f"imported pothole_py from {pp.__file__}")

    # A scene with a known road model and two flat potholes.
    line = (
        "width=320 height=240 phi=0.02 varkappa=1.5 kappa=40 seed=9 "
        "pothole=80:120:20:12:0.4:6:flat pothole=220:150:15:10:1.2:8:flat"
    )
    disp, gt_mask, gt_model = pp.generate_scene(line)
    assert disp.width == 320 and disp.height == 240
    assert gt_mask.area() > 0
    print(f"scene: {disp!r}, gt {gt_mask!r}, model {gt_model!r}")

    fit, flat = pp.fit_and_transform(disp, robust_refit=True)
    assert abs(fit.model.phi - 0.02) < 1e-3, fit.model.phi
    assert abs(fit.model.varkappa - 1.5) / 1.5 < 1e-2
    assert fit.method in ("grid_refine", "closed_form")
    assert min(v for v in flat.values() if not math.isnan(v)) == 0.0
    print(f"fit: {fit!r}")

    pred = pp.segment(flat, fit.model, min_area=10)
    tp, fp, fn, tn = pp.confusion(pred, gt_mask)
    fsc, iou = pp.fsc_iou(tp, fp, fn, tn)
    assert iou == 1.0 and fsc == 1.0, (tp, fp, fn, tn)
    comps = pp.connected_components(pred)
    assert len(comps) == 2 and all(area > 100 for (_, area, _) in comps), comps
    mfsc, miou = pp.mean_metrics([(fsc, iou), (1.0, 1.0)])
    assert mfsc == 1.0 and miou == 1.0
    print(f"detection closure: iou={iou}, components={[(c[0], c[1]) for c in comps]}")

    rows = pp.v_disparity(disp, 1.0)
    assert len(rows) == 240 and sum(map(sum, rows)) == disp.valid_count()

    thr = pp.otsu_threshold(flat.values(), 256)
    assert 0.0 < thr < max(v for v in flat.values() if not math.isnan(v))
    print(f"v-disparity and otsu ok (threshold {thr:.3f})")

    with tempfile.TemporaryDirectory() as td:
        p = str(Path(td) / "flat.png")
        flat.save(p, 1 / 256)
        again = pp.DisparityImage.load(p, 1 / 256)
        diff = max(
            abs(a - b)
            for a, b in zip(flat.values(), again.values())
            if not (math.isnan(a) or math.isnan(b))
        )
        assert diff <= 1 / 256, diff
    print("disk round trip ok")

    assert abs(pp.gan_loss([0.5, 0.5], [0.5, 0.5]) + 2 * math.log(2)) < 1e-12
    batch = [[1.0, 2.0, 3.0, 4.0]]
    assert pp.cycle_loss(2, 2, batch, batch) == 0.0
    assert pp.cycle_loss(2, 2, batch, [[2.0, 2.0, 3.0, 5.0]]) == 0.5
    assert abs(pp.full_objective([1, 2, 3, -1, -2, -3])) < 1e-12
    print("losses ok")

    lines = pp.random_scene_lines(2, seed=5)
    assert lines == pp.random_scene_lines(2, seed=5) and len(lines) == 2
    d2, m2, _ = pp.generate_scene(lines[0])
    assert d2.width == 640 and m2.width == 640

    gt = pp.random_gt_mask(64, 48, seed=3, axis_range=(4.0, 9.0))
    assert gt.area() > 0
    assert gt.pixels() == pp.random_gt_mask(64, 48, seed=3, axis_range=(4.0, 9.0)).pixels()
    print("synthetic generators deterministic")

    feats = []
    n, c, h, w = 1, 8, 4, 4
    for level in range(5):
        vals = [math.sin(0.37 * (level + 1) * k) for k in range(n * c * h * w)]
        feats.append(pp.Tensor4(n, c, h, w, vals))
    outs = pp.apply_scheme(feats, "pam,cam,cam,cam,dam", seed=2)
    assert [t.shape for t in outs] == [t.shape for t in feats]
    for x, y in zip(feats[:4], outs[:4]):  # gated levels shrink
        assert all(abs(yo) <= abs(xi) for xi, yo in zip(x.data(), y.data()))
    try:
        pp.apply_scheme(feats, "dam,cam,cam,cam,none", seed=2)
    except ValueError as e:
        print(f"scheme placement enforced ({e})")
    else:
        raise AssertionError("non-top dam was accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
