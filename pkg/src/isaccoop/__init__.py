"""Geometric ISAC simulator with multi-domain sensing cooperation."""

from .geom import Point2, Segment, bearing_between, mirror_point, ray_cast, segment_blocks
from .world import (SPEED_OF_LIGHT, Anchor, Band, BeamGrid, NoiseModel, PathKind, Scatterer,
                    ScattererKind, Scene, UEState, advance_ue, synth_clusters, synth_echoes,
                    synth_paths)
from .sense import (Gaussian2, Polyline, WeightedPoint, fuse_gaussians, interpolate_shape,
                    localize_los, localize_via_diffuse, localize_via_va, observe_va,
                    reflection_points_from_echoes, va_from_shape)
from .slam import (PathLabel, RadioFeatureMap, VirtualAnchorFeature, associate, classify_paths,
                   predict_ue, reduced_beam_set, retire_features, slam_step)
from .crowd import (GlobalMapRecord, load_map, merge_local, merge_scatterer_points, prune,
                    report_vanished, save_map, select_for_download)
from .band import (FeasibleRegion, LinkChoice, band_switch, beams_for_region, bootstrap_access,
                   feasible_terminal_region, feasible_va_region)

__all__ = [
    "Anchor",
    "Band",
    "BeamGrid",
    "FeasibleRegion",
    "Gaussian2",
    "GlobalMapRecord",
    "LinkChoice",
    "NoiseModel",
    "PathKind",
    "PathLabel",
    "Point2",
    "Polyline",
    "RadioFeatureMap",
    "SPEED_OF_LIGHT",
    "Scatterer",
    "ScattererKind",
    "Scene",
    "Segment",
    "UEState",
    "VirtualAnchorFeature",
    "WeightedPoint",
    "advance_ue",
    "associate",
    "band_switch",
    "beams_for_region",
    "bearing_between",
    "bootstrap_access",
    "classify_paths",
    "feasible_terminal_region",
    "feasible_va_region",
    "fuse_gaussians",
    "interpolate_shape",
    "load_map",
    "localize_los",
    "localize_via_diffuse",
    "localize_via_va",
    "merge_local",
    "merge_scatterer_points",
    "mirror_point",
    "observe_va",
    "predict_ue",
    "prune",
    "ray_cast",
    "reduced_beam_set",
    "reflection_points_from_echoes",
    "report_vanished",
    "retire_features",
    "save_map",
    "segment_blocks",
    "select_for_download",
    "slam_step",
    "synth_clusters",
    "synth_echoes",
    "synth_paths",
    "va_from_shape",
]

__version__ = "0.1.0"
