"""The AP senses its surroundings by itself.

A monostatic beam sweep returns echoes from nearby surfaces.  Each echo
becomes a reflection point half its round-trip range away.  The points are
joined into outlines, and every straight run of an outline gives a VA for
the terminals to use.
"""

import numpy as np

from isaccoop.geom import Point2, Segment
from isaccoop.sense import interpolate_shape, reflection_points_from_echoes, va_from_shape
from isaccoop.world import (Anchor, BeamGrid, NoiseModel, Scatterer, ScattererKind, Scene,
                            synth_echoes)


def main():
    ap = Anchor(0, (0.0, 0.0))
    scene = Scene([ap], [
        Scatterer(0, Segment(Point2(-10, -6), Point2(8, -6)), ScattererKind.DIFFUSE),
        Scatterer(1, Segment(Point2(9, -5), Point2(9, 5)), ScattererKind.DIFFUSE),
    ])
    echoes = synth_echoes(scene, ap, BeamGrid(256), NoiseModel(), rng_seed=2)
    points = reflection_points_from_echoes(ap.position, echoes)
    print(f"{len(echoes)} echoes -> {len(points)} reflection points")

    for shape in interpolate_shape(points, cluster_radius=1.0):
        ends = np.round(shape.vertices[[0, -1]], 2).tolist()
        print(f"outline with {len(shape.vertices)} vertices from {ends[0]} to {ends[1]}, "
              f"residual {100 * shape.residual:.1f} cm")
        for g in va_from_shape(ap.position, shape):
            print(f"  VA at ({g.mean[0]:.3f}, {g.mean[1]:.3f}), std {np.sqrt(g.cov[0, 0]):.3f} m")
    print("true VAs:", {k: tuple(round(c, 3) for c in v) for k, v in
                        scene.true_virtual_anchors(ap.position, kinds=tuple(ScattererKind)).items()})


if __name__ == "__main__":
    main()
