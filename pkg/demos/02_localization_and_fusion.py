"""Locating a terminal from individual paths and fusing the fixes.

Each path type gives its own position estimate:

* the direct path gives range and bearing from the AP;
* a specular bounce works the same way from a known VA;
* a diffuse bounce needs the scatterer outline instead of a VA.

Fusing the independent fixes in information form gives a tighter estimate
than any single one.
"""

import numpy as np

from isaccoop.geom import Point2, Segment
from isaccoop.sense import (Polyline, fuse_gaussians, localize_los, localize_via_diffuse,
                            localize_via_va)
from isaccoop.world import (Anchor, NoiseModel, PathKind, Scatterer, ScattererKind, Scene,
                            UEState, synth_paths)


def describe(name, g, truth):
    err = np.linalg.norm(g.mean - truth)
    print(f"{name:9s} mean ({g.mean[0]:6.3f}, {g.mean[1]:6.3f})  error {err:.3f} m  "
          f"std trace {np.sqrt(g.trace):.3f} m")


def main():
    ap = Anchor(0, (0.0, 0.0))
    mirror = Segment(Point2(-10, 3), Point2(10, 3))
    rough = Segment(Point2(-10, -5), Point2(10, -5))
    scene = Scene([ap], [Scatterer(0, mirror), Scatterer(1, rough, ScattererKind.DIFFUSE)])
    truth = np.array([4.0, 0.0])
    noise = NoiseModel()
    va = scene.true_virtual_anchors(ap.position)[0]
    outlines = [Polyline([rough.a, rough.b])]

    fixes = []
    for p in synth_paths(scene, ap, UEState(tuple(truth)), noise, rng_seed=3):
        if p.truth_kind is PathKind.LOS:
            g = localize_los(ap.position, p, noise)
        elif p.truth_kind is PathKind.SPECULAR_NLOS:
            g = localize_via_va(va, p, noise)
        else:
            g = localize_via_diffuse(ap.position, outlines, p, noise)
        describe(p.truth_kind.value.split("_")[0], g, truth)
        fixes.append(g)

    describe("fused", fuse_gaussians(fixes), truth)


if __name__ == "__main__":
    main()
