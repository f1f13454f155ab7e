"""
Per-slot virtual-anchor SLAM.

Each channel-sounding slot runs three steps in order:

1. fuse the prediction, the LOS fix and every path tied to a confirmed VA
   (plus diffuse paths landing on a mapped outline) into the UE estimate;
2. refine each associated VA with the observation seen from that estimate;
3. spawn new VAs from the leftover specular candidates.

Maps are treated as values: ``slam_step`` returns a new ``RadioFeatureMap``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import geom
from .errors import InfeasibleGeometryError, NoScattererError
from .sense import (Gaussian2, fuse_gaussians, interpolate_shape, localize_los,
                    localize_via_diffuse, localize_via_va, mahalanobis2, observe_va)
from .world import BeamGrid, NoiseModel

# chi-square(2 dof) 0.99 quantile
DEFAULT_GATE = 9.21
# A VA joins UE localisation only after this many fused observations.
MIN_OBS_FOR_LOCALIZATION = 2


@dataclass
class VirtualAnchorFeature:
    id: int
    estimate: Gaussian2
    n_obs: int = 1
    last_seen: float = 0.0
    global_id: Optional[int] = None


@dataclass
class RadioFeatureMap:
    vas: list = field(default_factory=list)
    reflection_points: list = field(default_factory=list)
    shapes: list = field(default_factory=list)
    frame_id: str = "world"

    def va(self, va_id: int) -> VirtualAnchorFeature:
        for v in self.vas:
            if v.id == va_id:
                return v
        raise KeyError(va_id)

    def next_id(self) -> int:
        return max((v.id for v in self.vas), default=-1) + 1

    def copy(self) -> "RadioFeatureMap":
        return RadioFeatureMap(
            vas=[replace(v, estimate=v.estimate.copy()) for v in self.vas],
            reflection_points=list(self.reflection_points),
            shapes=list(self.shapes),
            frame_id=self.frame_id,
        )

    def with_points(self, points, cluster_radius: float) -> "RadioFeatureMap":
        """Copy with ``points`` as reflection points and outlines rebuilt."""
        out = self.copy()
        out.reflection_points = list(points)
        out.shapes = interpolate_shape(out.reflection_points, cluster_radius)
        return out


class PathLabel(str, enum.Enum):
    LOS = "los"
    SPECULAR = "specular"
    DIFFUSE = "diffuse"


@dataclass
class Association:
    matched: list = field(default_factory=list)
    unmatched_measurements: list = field(default_factory=list)
    # (measurement_index, prior_id) for matches against downloaded features
    # that have no local counterpart yet.
    matched_prior: list = field(default_factory=list)
    distances: dict = field(default_factory=dict)


@dataclass
class SlamDiagnostics:
    labels: list
    association: Association
    n_fixes: int = 0
    births: list = field(default_factory=list)
    ue_innovation: float = 0.0
    fix_residuals: list = field(default_factory=list)
    va_shifts: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)


@dataclass
class _Working:
    key: tuple          # ("own", id) or ("prior", prior_id)
    estimate: Gaussian2
    n_eff: int


def working_features(fmap: RadioFeatureMap, priors: Optional[RadioFeatureMap]) -> list:
    prior_by_id = {v.id: v for v in priors.vas} if priors is not None else {}
    used = set()
    out = []
    for v in fmap.vas:
        p = prior_by_id.get(v.global_id) if v.global_id is not None else None
        if p is None:
            out.append(_Working(("own", v.id), v.estimate, v.n_obs))
        else:
            used.add(p.id)
            out.append(_Working(("own", v.id), fuse_gaussians([v.estimate, p.estimate]),
                                v.n_obs + p.n_obs))
    for pid, p in prior_by_id.items():
        if pid not in used:
            out.append(_Working(("prior", pid), p.estimate, p.n_obs))
    return out


def classify_paths(measurements: Sequence, fmap: RadioFeatureMap, ue_pred: Gaussian2,
                   ap_pos, noise: NoiseModel, gate: float = DEFAULT_GATE,
                   priors: Optional[RadioFeatureMap] = None) -> list:
    """Label each path LOS / SPECULAR / DIFFUSE.

    The earliest path is LOS if its LOS fix gates with the prediction.  Other
    paths are SPECULAR when they gate with a known VA, DIFFUSE when the AOA
    ray lands on a mapped outline and the resulting fix gates with the
    prediction, and SPECULAR (a new VA) otherwise.
    """
    labels = [None] * len(measurements)
    if not measurements:
        return []
    i0 = min(range(len(measurements)), key=lambda i: (measurements[i].toa, i))
    if mahalanobis2(localize_los(ap_pos, measurements[i0], noise), ue_pred) <= gate:
        labels[i0] = PathLabel.LOS
    feats = working_features(fmap, priors)
    for i, m in enumerate(measurements):
        if labels[i] is not None:
            continue
        obs = observe_va(ue_pred, m, noise)
        if any(mahalanobis2(obs, f.estimate) <= gate for f in feats):
            labels[i] = PathLabel.SPECULAR
            continue
        if fmap.shapes:
            try:
                fix = localize_via_diffuse(ap_pos, fmap.shapes, m, noise)
            except (NoScattererError, InfeasibleGeometryError):
                fix = None
            if fix is not None and mahalanobis2(fix, ue_pred) <= gate:
                labels[i] = PathLabel.DIFFUSE
                continue
        labels[i] = PathLabel.SPECULAR
    return labels


def los_aided_prediction(measurements: Sequence, labels: Sequence, ue_pred: Gaussian2,
                         ap_pos, noise: NoiseModel) -> Gaussian2:
    """``ue_pred`` sharpened by the LOS fix, for gating only.

    A vague prediction (e.g. a GPS prior) inflates every VA observation by
    the same position uncertainty, which lets far-off features pass the
    gate.  Conditioning on the LOS path first removes most of that common
    error.  Returns ``ue_pred`` itself when no path is labelled LOS.
    """
    fixes = [localize_los(ap_pos, m, noise)
             for m, lab in zip(measurements, labels) if lab is PathLabel.LOS]
    return fuse_gaussians([ue_pred] + fixes) if fixes else ue_pred


def associate(measurements: Sequence, fmap: RadioFeatureMap, ue_pred: Gaussian2,
              noise: NoiseModel, gate: float = DEFAULT_GATE, labels: Optional[list] = None,
              priors: Optional[RadioFeatureMap] = None) -> Association:
    """Greedy global-nearest-neighbour association of specular paths to VAs.

    Candidate pairs inside the chi-square ``gate`` are taken in order of
    increasing Mahalanobis distance, ties broken by measurement index; each
    VA and each path is used at most once.
    """
    if gate <= 0:
        raise ValueError("gate must be > 0")
    cand = [i for i in range(len(measurements))
            if labels is None or labels[i] is PathLabel.SPECULAR]
    feats = working_features(fmap, priors)
    pairs = []
    for i in cand:
        obs = observe_va(ue_pred, measurements[i], noise)
        for f in feats:
            d2 = mahalanobis2(obs, f.estimate)
            if d2 <= gate:
                pairs.append((d2, i, f.key))
    pairs.sort(key=lambda t: (t[0], t[1]))
    taken_m, taken_f = set(), set()
    assoc = Association()
    for d2, i, key in pairs:
        if i in taken_m or key in taken_f:
            continue
        taken_m.add(i)
        taken_f.add(key)
        assoc.distances[i] = d2
        if key[0] == "own":
            assoc.matched.append((i, key[1]))
        else:
            assoc.matched_prior.append((i, key[1]))
    assoc.matched.sort()
    assoc.matched_prior.sort()
    assoc.unmatched_measurements = [i for i in cand if i not in taken_m]
    return assoc


def slam_step(fmap: RadioFeatureMap, ue_pred: Gaussian2, measurements: Sequence,
              noise: NoiseModel, ap_pos, *, gate: float = DEFAULT_GATE, now: float = 0.0,
              priors: Optional[RadioFeatureMap] = None, labels: Optional[list] = None,
              association: Optional[Association] = None):
    """One SLAM slot.  Returns ``(new_map, ue_post, diagnostics)``.

    ``priors`` holds downloaded features (ids in the prior's own numbering)
    linked to local VAs through ``VirtualAnchorFeature.global_id``; they
    sharpen association and localisation but are never written into the
    local estimates.  ``labels`` / ``association`` override the built-in
    classifier and associator (used for oracle runs).
    """
    if labels is None:
        labels = classify_paths(measurements, fmap, ue_pred, ap_pos, noise, gate, priors)
    if association is None:
        association = associate(measurements, fmap, ue_pred, noise, gate, labels, priors)
    diag = SlamDiagnostics(labels=list(labels), association=association)
    feats = {f.key: f for f in working_features(fmap, priors)}

    # 1) UE position
    fixes = []
    for i, lab in enumerate(labels):
        if lab is PathLabel.LOS:
            fixes.append(localize_los(ap_pos, measurements[i], noise))
    for i, vid in association.matched:
        f = feats[("own", vid)]
        if f.n_eff >= MIN_OBS_FOR_LOCALIZATION:
            fixes.append(localize_via_va(f.estimate, measurements[i], noise))
    for i, pid in association.matched_prior:
        f = feats[("prior", pid)]
        if f.n_eff >= MIN_OBS_FOR_LOCALIZATION:
            fixes.append(localize_via_va(f.estimate, measurements[i], noise))
    for i, lab in enumerate(labels):
        if lab is PathLabel.DIFFUSE:
            try:
                fixes.append(localize_via_diffuse(ap_pos, fmap.shapes, measurements[i], noise))
            except (NoScattererError, InfeasibleGeometryError) as exc:
                diag.warnings.append(f"diffuse path {i} dropped: {exc}")
    diag.n_fixes = len(fixes)
    if not fixes:
        diag.warnings.append("no usable measurement; map unchanged")
        return fmap, ue_pred, diag
    ue_post = fuse_gaussians([ue_pred] + fixes)
    diag.ue_innovation = mahalanobis2(ue_post, ue_pred)
    diag.fix_residuals = [float(np.linalg.norm(f.mean - ue_post.mean)) for f in fixes]

    # 2) legacy VA refinement
    new_map = fmap.copy()
    by_id = {v.id: v for v in new_map.vas}
    for i, vid in association.matched:
        v = by_id[vid]
        refined = fuse_gaussians([v.estimate, observe_va(ue_post, measurements[i], noise)])
        diag.va_shifts[vid] = float(np.linalg.norm(refined.mean - v.estimate.mean))
        v.estimate = refined
        v.n_obs += 1
        v.last_seen = now

    # 3) new VAs (prior-backed births keep the link to the downloaded feature)
    next_id = new_map.next_id()
    births = [(i, pid) for i, pid in association.matched_prior]
    births += [(i, None) for i in association.unmatched_measurements]
    for i, pid in sorted(births, key=lambda t: t[0]):
        new_map.vas.append(VirtualAnchorFeature(
            id=next_id, estimate=observe_va(ue_post, measurements[i], noise),
            n_obs=1, last_seen=now, global_id=pid))
        diag.births.append(next_id)
        next_id += 1
    return new_map, ue_post, diag


def cv_process_noise(dt: float, q: float) -> np.ndarray:
    """Per-axis [position, velocity] process noise of the constant-velocity model."""
    return q * np.array([[dt ** 4 / 4, dt ** 3 / 2], [dt ** 3 / 2, dt ** 2]])


def predict_ue(ue_post: Gaussian2, velocity, dt: float, process_noise_accel: float,
               velocity_cov=None) -> Gaussian2:
    """Propagate the UE position estimate by ``dt``.

    The position block ``q*dt^4/4`` of the CV process noise is added on both
    axes; ``velocity_cov`` (if the velocity is itself an estimate) adds
    ``dt^2 * velocity_cov``.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    q = process_noise_accel ** 2
    cov = ue_post.cov + cv_process_noise(dt, q)[0, 0] * np.eye(2)
    if velocity_cov is not None:
        cov = cov + dt * dt * np.asarray(velocity_cov, dtype=float)
    return Gaussian2(ue_post.mean + np.asarray(velocity, dtype=float) * dt, cov)


@dataclass
class BeamSelection:
    """Candidate beams.  ``full_sweep`` marks the unconstrained fallback."""

    indices: np.ndarray
    bearings: np.ndarray
    full_sweep: bool = False
    interval: Optional[tuple] = None   # (lo, width) in radians

    def __len__(self):
        return len(self.indices)

    def contains_bearing(self, grid: BeamGrid, bearing: float) -> bool:
        return grid.nearest(bearing) in set(self.indices.tolist())


def select_beams(grid: BeamGrid, lo: float, width: float, centre: float) -> BeamSelection:
    idx = grid.covering(lo, width)
    near = grid.nearest(centre)
    if near not in idx:
        idx = np.sort(np.append(idx, near))
    return BeamSelection(idx, grid.directions[idx], False, (geom.wrap_angle(lo), width))


def full_sweep(grid: BeamGrid) -> BeamSelection:
    idx = np.arange(grid.n_beams)
    return BeamSelection(idx, grid.directions.copy(), True, None)


def ellipse_bearing_interval(region: Gaussian2, anchor_pos, k_sigma: float):
    """Bearing interval ``(lo, width, centre)`` subtended at ``anchor_pos``
    by the ``k_sigma`` ellipse of ``region``; None if the anchor is inside."""
    cov = region.cov + 1e-12 * np.eye(2)
    L = np.linalg.cholesky(cov)
    p = np.asarray(anchor_pos, dtype=float)
    q = np.linalg.solve(L, p - region.mean)
    r = math.hypot(*q)
    if r <= k_sigma:
        return None
    beta = math.atan2(q[1], q[0])
    delta = math.acos(k_sigma / r)
    centre = geom.bearing_between(p, region.mean)
    rel = []
    for sgn in (1.0, -1.0):
        t = k_sigma * np.array([math.cos(beta + sgn * delta), math.sin(beta + sgn * delta)])
        x = region.mean + L @ t
        rel.append(geom.wrap_angle(geom.bearing_between(p, x) - centre))
    lo, hi = min(rel), max(rel)
    return centre + lo, hi - lo, centre


def reduced_beam_set(region: Gaussian2, anchor_pos, grid: BeamGrid,
                     k_sigma: float = 3.0) -> BeamSelection:
    """Grid beams covering the ``k_sigma`` confidence ellipse of ``region``.

    Falls back to the full grid (``full_sweep=True``) when the anchor lies
    inside the ellipse.
    """
    if k_sigma <= 0:
        raise ValueError("k_sigma must be > 0")
    iv = ellipse_bearing_interval(region, anchor_pos, k_sigma)
    if iv is None:
        return full_sweep(grid)
    lo, width, centre = iv
    return select_beams(grid, lo, width, centre)


def retire_features(fmap: RadioFeatureMap, now: float, max_age: float,
                    max_cov_trace: float) -> RadioFeatureMap:
    """Drop single-observation VAs that are stale or too uncertain."""
    out = fmap.copy()
    out.vas = [v for v in out.vas
               if not (v.n_obs == 1 and (now - v.last_seen > max_age
                                         or v.estimate.trace > max_cov_trace))]
    return out
