"""
One seeded Monte-Carlo trial of the per-slot schedule.

Each slot runs, in order:

1. active sensing: every mmWave AP sweeps its echo beams, turns the echoes
   into reflection points and outlines, and refines its own VA list;
2. passive sensing: each UE sounds the channel and runs one SLAM step,
   using the AP map (and peer downloads) as priors;
3. map exchange every ``exchange_every`` slots when crowdsourcing is on;
4. mmWave access beams, pruned by the prediction or the sub-6 clusters.

All randomness is drawn from streams keyed by (module, slot, entity) so
switching a cooperation flag on or off leaves every measurement unchanged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .. import geom
from ..band import LinkChoice, band_switch, beams_for_region, feasible_terminal_region
from ..crowd import GlobalMapRecord, merge_local, select_for_download
from ..geom import Point2
from ..sense import (Gaussian2, fuse_gaussians, interpolate_shape, mahalanobis2,
                     reflection_points_from_echoes, va_from_shape)
from ..slam import (Association, PathLabel, RadioFeatureMap, VirtualAnchorFeature, associate,
                    classify_paths, los_aided_prediction, predict_ue, reduced_beam_set,
                    retire_features, slam_step, working_features)
from ..world import (BeamGrid, PathKind, UEState, advance_ue, synth_clusters, synth_echoes,
                     synth_paths)
from .config import ScenarioConfig

# Stream identifiers for the counter-based RNG.
_MOTION, _ECHO, _PATHS, _CLUSTERS, _GPS = range(5)
# Offset that keeps peer-only prior ids apart from AP feature ids.
_PEER_ID_BASE = 100_000
_GPS_INFLATION = 2.0


class TrialError(RuntimeError):
    def __init__(self, seed, slot, cause):
        super().__init__(f"trial seed={seed} slot={slot}: {type(cause).__name__}: {cause}")
        self.seed = seed
        self.slot = slot
        self.cause = cause


@dataclass(frozen=True)
class MetricsRow:
    seed: int
    slot: int
    ue_id: int
    ue_rmse: float
    va_rmse: float
    map_hausdorff: float
    beams_scanned: int
    beams_full: int
    assoc_accuracy: float
    band: str
    va_misses: int = 0


CSV_FIELDS = ("seed", "slot", "ue_id", "ue_rmse", "va_rmse", "map_hausdorff",
              "beams_scanned", "beams_full", "assoc_accuracy", "band")


def stream(root_seed: int, module: int, slot: int, entity: int) -> np.random.Generator:
    """Independent generator for one (module, slot, entity) triple."""
    return np.random.default_rng(np.random.SeedSequence(root_seed,
                                                        spawn_key=(module, slot, entity)))


# --- truth bookkeeping ------------------------------------------------------

def _true_vas(config: ScenarioConfig, ap_pos) -> dict:
    """Mirror images of the AP across every wall, keyed by scatterer id.

    Diffuse walls are included: a diffuse bounce at the specular point is
    geometrically indistinguishable from a mirror reflection.
    """
    return {s.id: geom.mirror_point(ap_pos, s.segment) for s in config.scene.scatterers}


def _nearest_truth(mean, truths: dict, gate: float) -> Optional[int]:
    best, best_d = None, gate
    for sid, p in truths.items():
        d = math.hypot(mean[0] - p[0], mean[1] - p[1])
        if d <= best_d:
            best, best_d = sid, d
    return best


def va_errors(estimates, truths: dict, gate: float):
    """Optimal one-to-one matching of estimate means to true VAs within ``gate``.

    Returns ``(rmse, misses)``; rmse is NaN when nothing matches.
    """
    if not truths:
        return math.nan, 0
    tp = np.array(list(truths.values()), dtype=float)
    if not estimates:
        return math.nan, len(tp)
    ep = np.array(estimates, dtype=float).reshape(-1, 2)
    d = np.linalg.norm(ep[:, None, :] - tp[None, :, :], axis=2)
    big = 1e6
    cost = np.where(d <= gate, d, big)
    r, c = linear_sum_assignment(cost)
    ok = cost[r, c] < big
    hits = d[r[ok], c[ok]]
    misses = len(tp) - int(ok.sum())
    if hits.size == 0:
        return math.nan, misses
    return float(np.sqrt(np.mean(hits ** 2))), misses


def map_error(shapes, segments) -> float:
    """Largest distance from any outline vertex to the nearest true wall."""
    if not shapes or not segments:
        return math.nan
    segs = geom.segments_to_array(segments)
    worst = 0.0
    for sh in shapes:
        d = geom.point_segment_distances(sh.vertices, segs)
        worst = max(worst, float(d.min(axis=1).max()))
    return worst


# --- active sensing ---------------------------------------------------------

@dataclass
class _ApMap:
    """An AP's own map: VAs refined slot after slot from echo outlines."""

    map: RadioFeatureMap = field(default_factory=RadioFeatureMap)

    def update(self, ap_pos, echoes, cluster_radius: float, gate: float, now: float):
        points = reflection_points_from_echoes(ap_pos, echoes)
        shapes = interpolate_shape(points, cluster_radius) if points else []
        cands = [g for sh in shapes for g in va_from_shape(ap_pos, sh)]
        vas = self.map.vas
        taken = set()
        pairs = sorted((mahalanobis2(g, v.estimate), k, v.id)
                       for k, g in enumerate(cands) for v in vas)
        matched = {}
        for d2, k, vid in pairs:
            if d2 > gate or k in matched or vid in taken:
                continue
            matched[k] = vid
            taken.add(vid)
        by_id = {v.id: v for v in vas}
        next_id = self.map.next_id()
        for k, g in enumerate(cands):
            if k in matched:
                v = by_id[matched[k]]
                v.estimate = fuse_gaussians([v.estimate, g])
                v.n_obs += 1
                v.last_seen = now
            else:
                vas.append(VirtualAnchorFeature(next_id, g, 1, now))
                next_id += 1
        self.map.reflection_points = points
        self.map.shapes = shapes


def _combine_priors(ap_map: Optional[RadioFeatureMap], peers: Optional[RadioFeatureMap],
                    gate: float) -> Optional[RadioFeatureMap]:
    """One prior map from the AP's features and the peer download."""
    if ap_map is None and peers is None:
        return None
    out = RadioFeatureMap()
    if ap_map is not None:
        out.vas = [VirtualAnchorFeature(v.id, v.estimate, v.n_obs, v.last_seen)
                   for v in ap_map.vas]
        out.shapes = list(ap_map.shapes)
    if peers is not None:
        base = list(out.vas)
        used = set()
        for p in peers.vas:
            best = None
            for v in base:
                if v.id in used:
                    continue
                d2 = mahalanobis2(p.estimate, v.estimate)
                if d2 <= gate and (best is None or d2 < best[0]):
                    best = (d2, v)
            if best is None:
                out.vas.append(VirtualAnchorFeature(_PEER_ID_BASE + p.id, p.estimate,
                                                    p.n_obs, p.last_seen))
            else:
                v = best[1]
                used.add(v.id)
                k = out.vas.index(v)
                out.vas[k] = VirtualAnchorFeature(v.id, fuse_gaussians([v.estimate, p.estimate]),
                                                  v.n_obs + p.n_obs, max(v.last_seen, p.last_seen))
        out.shapes += [s for s in peers.shapes if s not in out.shapes]
    return out


def link_to_priors(fmap: RadioFeatureMap, priors: Optional[RadioFeatureMap],
                   gate: float) -> None:
    """Point each local VA at the prior feature it duplicates, in place.

    Links to features that are no longer in ``priors`` are dropped; unlinked
    VAs are then gated against the free prior features, nearest first.
    """
    ids = {p.id for p in priors.vas} if priors is not None else set()
    for v in fmap.vas:
        if v.global_id not in ids:
            v.global_id = None
    if priors is None:
        return
    taken = {v.global_id for v in fmap.vas if v.global_id is not None}
    pairs = sorted((mahalanobis2(v.estimate, p.estimate), v.id, p.id)
                   for v in fmap.vas if v.global_id is None
                   for p in priors.vas if p.id not in taken)
    by_id = {v.id: v for v in fmap.vas}
    for d2, vid, pid in pairs:
        if d2 > gate:
            break
        v = by_id[vid]
        if v.global_id is None and pid not in taken:
            v.global_id = pid
            taken.add(pid)


# --- passive sensing --------------------------------------------------------

@dataclass
class _Terminal:
    id: int
    truth: UEState
    estimate: Gaussian2
    map: RadioFeatureMap = field(default_factory=RadioFeatureMap)
    birth_truth: dict = field(default_factory=dict)   # local VA id -> scatterer id
    peers: Optional[RadioFeatureMap] = None
    link: LinkChoice = LinkChoice.USE_MMWAVE
    waypoint_s: float = 0.0
    previous: Optional[Gaussian2] = None


def _path_truth(m) -> Optional[int]:
    return None if m.truth_kind is PathKind.LOS else m.truth_scatterer_id


def _feature_tags(term: _Terminal, priors, truths, gate) -> dict:
    """Truth scatterer id behind each working feature key."""
    tags = {}
    for f in working_features(term.map, priors):
        if f.key[0] == "own":
            tags[f.key] = term.birth_truth.get(f.key[1])
        else:
            tags[f.key] = _nearest_truth(f.estimate.mean, truths, gate)
    return tags


def _cheat(measurements, tags: dict):
    """Labels and association read off the ground truth."""
    labels, assoc = [], Association()
    by_tag = {}
    for key in sorted(tags, key=lambda k: (k[0] != "own", k[1])):
        if tags[key] is not None:
            by_tag.setdefault(tags[key], key)
    for i, m in enumerate(measurements):
        if m.truth_kind is PathKind.LOS:
            labels.append(PathLabel.LOS)
            continue
        labels.append(PathLabel.SPECULAR)
        key = by_tag.get(m.truth_scatterer_id)
        if key is None:
            assoc.unmatched_measurements.append(i)
        elif key[0] == "own":
            assoc.matched.append((i, key[1]))
        else:
            assoc.matched_prior.append((i, key[1]))
    return labels, assoc


def _accuracy(measurements, diag, tags: dict) -> float:
    if not measurements:
        return 1.0
    matched = {i: ("own", v) for i, v in diag.association.matched}
    matched.update({i: ("prior", p) for i, p in diag.association.matched_prior})
    present = {t for t in tags.values() if t is not None}
    ok = 0
    for i, m in enumerate(measurements):
        lab = diag.labels[i]
        truth = _path_truth(m)
        if truth is None:
            ok += lab is PathLabel.LOS
        elif lab is PathLabel.LOS:
            pass
        elif lab is PathLabel.DIFFUSE:
            ok += 1
        elif i in matched:
            ok += tags.get(matched[i]) == truth
        else:
            ok += truth not in present
    return ok / len(measurements)


def _waypoint_position(traj, s: float) -> Point2:
    pts = [traj.position, *traj.waypoints]
    for a, b in zip(pts[:-1], pts[1:]):
        seg = geom.distance(a, b)
        if s <= seg and seg > 0:
            f = s / seg
            return Point2(a.x + f * (b.x - a.x), a.y + f * (b.y - a.y))
        s -= seg
    return pts[-1]


def _advance(term: _Terminal, traj, config: ScenarioConfig, seed: int, slot: int) -> None:
    """Move the true UE by one slot."""
    if traj.waypoints:
        old = term.truth.position
        term.waypoint_s += traj.speed * config.dt
        new = _waypoint_position(traj, term.waypoint_s)
        vel = Point2((new.x - old.x) / config.dt, (new.y - old.y) / config.dt)
        term.truth = UEState(new, vel, term.truth.time + config.dt)
    else:
        term.truth = advance_ue(term.truth, config.dt, config.process_noise_accel,
                                stream(seed, _MOTION, slot, term.id))


def _predict(term: _Terminal, traj, config: ScenarioConfig) -> Gaussian2:
    """CV prediction with the velocity differenced from the last two fixes.

    Before a second fix exists the configured initial velocity is used.
    """
    if term.previous is None:
        return predict_ue(term.estimate, traj.velocity, config.dt, config.process_noise_accel)
    vel = (term.estimate.mean - term.previous.mean) / config.dt
    vcov = (term.estimate.cov + term.previous.cov) / config.dt ** 2
    return predict_ue(term.estimate, vel, config.dt, config.process_noise_accel, vcov)


def _access_beams(term, config, ap, grid, sub6, seed, slot, prior):
    """Beams scanned for mmWave access and the resulting link choice."""
    sel = None
    if config.cooperation.multiband and sub6 is not None:
        clusters = synth_clusters(config.scene, sub6, term.truth, config.noise,
                                  config.cluster_model.n_subpaths,
                                  (config.cluster_model.angle_spread,
                                   config.cluster_model.delay_spread),
                                  stream(seed, _CLUSTERS, slot, term.id))
        if clusters:
            first = min(clusters, key=lambda c: c.mean_toa)
            region = feasible_terminal_region(sub6.position, first, config.k_sigma)
            sel = beams_for_region(region, ap.position, grid)
    if sel is None or sel.full_sweep:
        pred = reduced_beam_set(prior, ap.position, grid, config.k_sigma)
        if sel is None or len(pred) < len(sel):
            sel = pred
    true_beam = grid.nearest(geom.bearing_between(ap.position, term.truth.position))
    scanned = len(sel) if true_beam in set(sel.indices.tolist()) else grid.n_beams
    d = geom.distance(ap.position, term.truth.position)
    snr = float(config.noise.amplitude(d))
    link = band_switch(snr, config.snr_threshold, term.link) if sub6 is not None else term.link
    return scanned, link


def run_trial(config: ScenarioConfig, seed: int, cheat_association: bool = False) -> list:
    """Simulate one trial; one ``MetricsRow`` per (slot, UE).

    Any failure inside a slot is re-raised as ``TrialError`` naming the
    seed and slot.
    """
    return _run(config, seed, cheat_association)


def _run(config: ScenarioConfig, seed: int, cheat: bool) -> list:
    ap = config.serving_ap
    sub6 = config.sub6_ap
    coop = config.cooperation
    echo_grid = BeamGrid(config.active_beams)
    mm_grid = BeamGrid(config.mmwave_beams)
    truths = _true_vas(config, ap.position)
    gate = config.association_gate
    ap_map = _ApMap()
    record = GlobalMapRecord(cluster_radius=config.cluster_radius)

    terms = []
    for traj in config.ue_trajectories:
        g = stream(seed, _GPS, 0, traj.id).standard_normal(2) * config.gps_sigma
        start = UEState(traj.position, traj.velocity, 0.0)
        # The prior is widened to twice the GPS sigma so the LOS gate does
        # not reject a correct fix when the GPS draw lands in its tail.
        est = Gaussian2(np.asarray(traj.position) + g,
                        (_GPS_INFLATION * config.gps_sigma) ** 2 * np.eye(2))
        terms.append(_Terminal(traj.id, start, est))

    rows = []
    for slot in range(config.n_slots):
        now = slot * config.dt
        try:
            if coop.active_passive:
                echoes = synth_echoes(config.scene, ap, echo_grid, config.noise,
                                      stream(seed, _ECHO, slot, ap.id))
                ap_map.update(ap.position, echoes, config.cluster_radius, gate, now)
            for term, traj in zip(terms, config.ue_trajectories):
                if slot > 0:
                    _advance(term, traj, config, seed, slot)
                    prior = _predict(term, traj, config)
                else:
                    prior = term.estimate
                priors = _combine_priors(ap_map.map if coop.active_passive else None,
                                         term.peers if coop.crowdsourcing else None, gate)
                if priors is not None:
                    term.map.shapes = list(priors.shapes)
                link_to_priors(term.map, priors, gate)
                paths = synth_paths(config.scene, ap, term.truth, config.noise,
                                    stream(seed, _PATHS, slot, term.id))
                tags = _feature_tags(term, priors, truths, config.va_metric_gate)
                obs = [p.observed() for p in paths]
                if cheat:
                    labels, assoc = _cheat(paths, tags)
                else:
                    labels = classify_paths(obs, term.map, prior, ap.position, config.noise,
                                            gate, priors)
                    sharp = los_aided_prediction(obs, labels, prior, ap.position, config.noise)
                    assoc = associate(obs, term.map, sharp, config.noise, gate, labels, priors)
                new_map, post, diag = slam_step(term.map, prior, obs, config.noise, ap.position,
                                                gate=gate, now=now, priors=priors,
                                                labels=labels, association=assoc)
                for vid, (i, _) in zip(diag.births, _birth_order(diag)):
                    term.birth_truth[vid] = _path_truth(paths[i])
                accuracy = _accuracy(paths, diag, tags)
                term.map = retire_features(new_map, now, config.max_feature_age,
                                           config.max_feature_trace)
                if slot > 0:
                    term.previous = term.estimate
                term.estimate = post
                scanned, term.link = _access_beams(term, config, ap, mm_grid, sub6, seed,
                                                   slot, prior)
                work = working_features(term.map, priors)
                va_rmse, misses = va_errors([f.estimate.mean for f in work], truths,
                                            config.va_metric_gate)
                rows.append(MetricsRow(
                    seed=seed, slot=slot, ue_id=term.id,
                    ue_rmse=float(np.linalg.norm(post.mean - np.asarray(term.truth.position))),
                    va_rmse=va_rmse,
                    map_hausdorff=map_error(term.map.shapes, config.scene.segments),
                    beams_scanned=int(scanned), beams_full=mm_grid.n_beams,
                    assoc_accuracy=float(accuracy), band=term.link.value, va_misses=misses))
            if coop.crowdsourcing and slot % config.exchange_every == config.exchange_every - 1:
                for term in terms:
                    record = merge_local(record, term.map, term.id, gate)
                for term in terms:
                    term.peers = select_for_download(record, term.estimate.mean, 1e6,
                                                     min_confidence=2,
                                                     exclude_terminal=term.id)
        except Exception as exc:
            raise TrialError(seed, slot, exc) from exc
    return rows


def _birth_order(diag):
    """(measurement index, prior id) pairs in the order slam_step births them."""
    births = [(i, pid) for i, pid in diag.association.matched_prior]
    births += [(i, None) for i in diag.association.unmatched_measurements]
    return sorted(births, key=lambda t: t[0])
