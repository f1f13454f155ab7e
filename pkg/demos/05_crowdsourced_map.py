"""Terminals pool their VA estimates in a shared map.

Two terminals see the same wall from bearings 90 degrees apart.  Each VA
estimate is sharp along the line of sight and loose across it.  Merging the
two local maps crosses the error ellipses, so the shared VA is better than
either terminal's own.  The map is then saved, reloaded, and a newcomer
downloads the confident part of it.
"""

import math
import tempfile
from pathlib import Path

import numpy as np

from isaccoop.crowd import load_map, merge_local, save_map, select_for_download
from isaccoop.crowd import GlobalMapRecord
from isaccoop.geom import Point2, Segment
from isaccoop.sense import Gaussian2, observe_va
from isaccoop.slam import RadioFeatureMap, VirtualAnchorFeature
from isaccoop.world import Anchor, NoiseModel, Scatterer, Scene, UEState, synth_paths


AP = Anchor(0, (0.0, 0.0))
SCENE = Scene([AP], [Scatterer(0, Segment(Point2(-50, 3), Point2(50, 3)))])
VA_TRUE = np.array([0.0, 6.0])
TERMINALS = {"north-east": math.pi / 4, "north-west": 3 * math.pi / 4}


def one_round(noise, rng):
    """Each terminal observes the VA once; returns their estimates and the merged record."""
    record = GlobalMapRecord()
    singles = {}
    for terminal, bearing in TERMINALS.items():
        ue = VA_TRUE - 10 * np.array([math.cos(bearing), math.sin(bearing)])
        path = next(p for p in synth_paths(SCENE, AP, UEState(tuple(ue)), noise, rng)
                    if p.truth_scatterer_id == 0)
        est = observe_va(Gaussian2(ue, np.zeros((2, 2))), path.observed(), noise)
        singles[terminal] = est
        record = merge_local(record, RadioFeatureMap(vas=[VirtualAnchorFeature(0, est)]),
                             terminal)
    return singles, record


def main():
    noise = NoiseModel()
    rng = np.random.default_rng(4)
    singles, record = one_round(noise, rng)
    for terminal, est in singles.items():
        print(f"{terminal}: std along/across line of sight "
              f"{np.round(np.sqrt(np.linalg.eigvalsh(est.cov)), 3)} m")
    shared = record.map.vas[0]
    print(f"shared VA #{shared.id}: std {np.round(np.sqrt(np.linalg.eigvalsh(shared.estimate.cov)), 3)}"
          f" m, contributors {record.contributor_counts[shared.id]}")

    sq = {name: 0.0 for name in [*TERMINALS, "shared"]}
    n = 300
    for _ in range(n):
        s, rec = one_round(noise, rng)
        for name, est in s.items():
            sq[name] += float(np.sum((est.mean - VA_TRUE) ** 2))
        sq["shared"] += float(np.sum((rec.map.vas[0].estimate.mean - VA_TRUE) ** 2))
    print(f"RMSE over {n} rounds: " + ", ".join(f"{k} {math.sqrt(v / n):.3f} m"
                                                 for k, v in sq.items()))

    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "map.json"
        save_map(record, path)
        back = load_map(path)
        same = np.array_equal(back.map.vas[0].estimate.mean, shared.estimate.mean)
        print(f"saved {path.stat().st_size} bytes; reload identical: {same}")

    dl = select_for_download(back, (0.0, 0.0), radius=20.0, min_confidence=2)
    print(f"newcomer downloads {len(dl.vas)} VA(s) with at least two observations")


if __name__ == "__main__":
    main()
