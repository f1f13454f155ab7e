"""Multipath geometry with the image method.

A single mirror wall along y = 3 reflects the access point (AP) at the
origin into a virtual anchor (VA) at (0, 6).  The terminal (UE) at (4, 0)
sees two paths: the direct one and the wall bounce.  The bounce behaves as
if it came straight from the VA, so its length equals the UE-VA distance.
"""

import math

from isaccoop.geom import Point2, Segment, distance, mirror_point, ray_cast
from isaccoop.world import (SPEED_OF_LIGHT, Anchor, NoiseModel, Scatterer, Scene, UEState,
                            synth_paths)


def main():
    wall = Segment(Point2(-10, 3), Point2(10, 3))
    ap = Anchor(0, (0.0, 0.0))
    ue = UEState((4.0, 0.0))
    scene = Scene([ap], [Scatterer(0, wall)])

    va = mirror_point(ap.position, wall)
    print(f"virtual anchor: {va}")

    for p in synth_paths(scene, ap, ue, NoiseModel.noiseless()):
        length = p.toa * SPEED_OF_LIGHT
        print(f"{p.truth_kind.value:13s} AOD {math.degrees(p.aod):7.2f} deg  "
              f"AOA {math.degrees(p.aoa):7.2f} deg  length {length:.4f} m")

    # The AP-side arrival bearing of the bounce hits the wall at the
    # reflection point, which lies on the straight line from UE to VA.
    bounce = synth_paths(scene, ap, ue, NoiseModel.noiseless())[1]
    hit = ray_cast(ap.position, bounce.aoa, [wall])
    print(f"reflection point: ({hit.point.x:.4f}, {hit.point.y:.4f})")
    print(f"|UE-VA| = {distance(ue.position, va):.4f} m")

    # With the default noise model the measurements scatter around the truth.
    noisy = synth_paths(scene, ap, ue, NoiseModel(), rng_seed=1)
    print("noisy AODs (deg):", [round(math.degrees(p.aod), 2) for p in noisy])


if __name__ == "__main__":
    main()
