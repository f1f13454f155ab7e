"""Channel SLAM: a moving terminal maps virtual anchors while locating itself.

In every slot the terminal:

1. labels its paths (direct, specular or diffuse);
2. associates the specular ones with known VAs;
3. fuses its position fixes;
4. refines the matched VAs from the updated position and starts new ones.

A VA needs two observations before it is trusted for positioning.
"""

import numpy as np

from isaccoop.geom import Point2, Segment
from isaccoop.sense import Gaussian2
from isaccoop.slam import (RadioFeatureMap, associate, classify_paths, predict_ue,
                           reduced_beam_set, slam_step)
from isaccoop.world import Anchor, BeamGrid, NoiseModel, Scatterer, Scene, UEState, synth_paths


def main():
    ap = Anchor(0, (0.0, 0.0))
    scene = Scene([ap], [Scatterer(0, Segment(Point2(-40, 4), Point2(40, 4))),
                         Scatterer(1, Segment(Point2(12, -20), Point2(12, 20)))])
    truths = scene.true_virtual_anchors(ap.position)
    noise = NoiseModel()
    rng = np.random.default_rng(7)
    grid = BeamGrid(64)
    dt, q, vel = 0.5, 0.05, np.array([0.4, 0.05])

    truth = np.array([-8.0, -1.0])
    pred = Gaussian2(truth + rng.normal(0, 0.5, 2), 0.25 * np.eye(2))
    fmap = RadioFeatureMap()
    for slot in range(30):
        obs = [p.observed() for p in synth_paths(scene, ap, UEState(tuple(truth)), noise, rng)]
        labels = classify_paths(obs, fmap, pred, ap.position, noise)
        assoc = associate(obs, fmap, pred, noise, labels=labels)
        beams = reduced_beam_set(pred, ap.position, grid)
        fmap, post, diag = slam_step(fmap, pred, obs, noise, ap.position, now=slot * dt,
                                     labels=labels, association=assoc)
        if slot % 5 == 0 or slot == 29:
            err = np.linalg.norm(post.mean - truth)
            vas = ", ".join(f"#{v.id} n={v.n_obs} tr={v.estimate.trace:.4f}" for v in fmap.vas)
            print(f"slot {slot:2d}: UE error {err:.3f} m, {len(beams)} beams, {vas}")
        truth = truth + vel * dt + 0.5 * rng.normal(0, q, 2) * dt ** 2
        pred = predict_ue(post, vel, dt, q)

    for v in fmap.vas:
        nearest = min(truths.values(), key=lambda t: np.linalg.norm(v.estimate.mean - t))
        print(f"VA #{v.id}: estimate {np.round(v.estimate.mean, 3)}, truth {tuple(nearest)}")


if __name__ == "__main__":
    main()
