"""Sub-6 GHz clusters narrow the mmWave beam search.

The low band sees bundles of sub-paths, one bundle per propagation path.
The spread of a bundle bounds where the terminal can be relative to a
known anchor.  The mmWave AP then scans only the beams covering that
sector instead of all 64.  A hysteresis switch picks the band from the
mmWave link quality.
"""

import math

import numpy as np

from isaccoop.band import (LinkChoice, band_switch, beams_for_region, bootstrap_access,
                           feasible_terminal_region)
from isaccoop.crowd import GlobalMapRecord, merge_local
from isaccoop.geom import bearing_between
from isaccoop.bench import nominal_config
from isaccoop.sense import Gaussian2
from isaccoop.slam import RadioFeatureMap, VirtualAnchorFeature
from isaccoop.world import BeamGrid, UEState, synth_clusters


def main():
    cfg = nominal_config()
    mm, sub6 = cfg.serving_ap, cfg.sub6_ap
    grid = BeamGrid(64)
    ue = (-4.0, 4.2)

    clusters = synth_clusters(cfg.scene, sub6, UEState(ue), cfg.noise, 32, (0.02, 1e-9),
                              rng_seed=5)
    first = min(clusters, key=lambda c: c.mean_toa)
    region = feasible_terminal_region(sub6.position, first, k_sigma=3.0)
    sel = beams_for_region(region, mm.position, grid)
    true_beam = grid.nearest(bearing_between(mm.position, ue))
    print(f"earliest cluster: {first.truth_kind.value}, spread {math.degrees(first.spread_aod):.2f}"
          f" deg -> {len(sel)} of {grid.n_beams} beams, true beam covered: "
          f"{true_beam in sel.indices}")

    # Cold start: no link yet, only a GPS fix and a crowd map with one VA.
    record = GlobalMapRecord()
    for t in range(2):
        va = VirtualAnchorFeature(0, Gaussian2((0.0, 16.0), 0.01 * np.eye(2)), n_obs=3)
        record = merge_local(record, RadioFeatureMap(vas=[va]), t)
    plan = bootstrap_access(record, (20.0, 30.0), 2.0, grid, mm.position)
    print(f"bootstrap from GPS: {len(plan.beams)} beams, fallback to full sweep: {plan.fallback}")

    state = LinkChoice.USE_MMWAVE
    for snr in (0.05, 0.004, 0.0015, 0.003, 0.005):
        state = band_switch(snr, 2e-3, state)
        print(f"mmWave SNR {snr:.4f} -> {state.value}")


if __name__ == "__main__":
    main()
