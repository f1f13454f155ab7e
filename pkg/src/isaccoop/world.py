"""
Ground-truth radio scene and parameter-level measurement synthesis.

Three kinds of measurements are produced, one per communication stage:

* ``synth_echoes``  -- monostatic echoes of a 360 degree beam sweep (beam scanning),
* ``synth_paths``   -- LOS and first-order reflected paths of an uplink pilot
  (channel sounding); AOD is measured at the transmitting UE, AOA at the AP,
* ``synth_clusters`` -- sub-6 GHz path bundles summarised by means and spreads.

Measurements are the exact geometric parameters plus independent zero-mean
Gaussian errors; no waveform is simulated.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from . import geom
from .geom import Point2, Segment, as_point, bearing_between, distance, mirror_point

SPEED_OF_LIGHT = 299_792_458.0

Seed = Union[None, int, np.random.SeedSequence, np.random.Generator]


class ScattererKind(str, enum.Enum):
    SPECULAR = "specular"
    DIFFUSE = "diffuse"


class Band(str, enum.Enum):
    SUB6 = "sub6"
    MMWAVE = "mmwave"


class PathKind(str, enum.Enum):
    LOS = "los"
    SPECULAR_NLOS = "specular_nlos"
    DIFFUSE_NLOS = "diffuse_nlos"


@dataclass(frozen=True)
class Scatterer:
    id: int
    segment: Segment
    kind: ScattererKind = ScattererKind.SPECULAR

    def __post_init__(self):
        if not isinstance(self.segment, Segment):
            object.__setattr__(self, "segment", Segment(*self.segment))
        object.__setattr__(self, "kind", ScattererKind(self.kind))


@dataclass(frozen=True)
class Anchor:
    id: int
    position: Point2
    band: Band = Band.MMWAVE

    def __post_init__(self):
        object.__setattr__(self, "position", as_point(self.position))
        object.__setattr__(self, "band", Band(self.band))


@dataclass(frozen=True)
class Scene:
    anchors: tuple = ()
    scatterers: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "anchors", tuple(self.anchors))
        object.__setattr__(self, "scatterers", tuple(self.scatterers))
        for name, items in (("anchor", self.anchors), ("scatterer", self.scatterers)):
            ids = [x.id for x in items]
            if len(set(ids)) != len(ids):
                raise ValueError(f"duplicate {name} ids: {ids}")
        object.__setattr__(self, "_segs", [s.segment for s in self.scatterers])
        object.__setattr__(self, "_seg_array", geom.segments_to_array(self._segs))

    @property
    def segments(self) -> list:
        return self._segs

    @property
    def segment_array(self) -> np.ndarray:
        return self._seg_array

    def anchor(self, anchor_id: int) -> Anchor:
        for a in self.anchors:
            if a.id == anchor_id:
                return a
        raise KeyError(anchor_id)

    def true_virtual_anchors(self, ap_pos, kinds=(ScattererKind.SPECULAR,)) -> dict:
        """Mirror images of ``ap_pos`` keyed by scatterer id."""
        return {s.id: mirror_point(ap_pos, s.segment)
                for s in self.scatterers if s.kind in kinds}


@dataclass
class UEState:
    position: Point2
    velocity: tuple = (0.0, 0.0)
    time: float = 0.0

    def __post_init__(self):
        self.position = as_point(self.position)
        self.velocity = as_point(self.velocity)


@dataclass(frozen=True)
class NoiseModel:
    """Measurement error model.

    Attributes:
        sigma_aod, sigma_aoa: angle error std [rad].
        sigma_toa: delay error std [s].
        snr_ref: SNR at which the sigmas apply when ``snr_scaled`` is set.
        amplitude_a0: amplitude at 1 m; SNR and echo amplitude are a0 / d**gamma.
        path_loss_exponent: gamma.
        detect_threshold: minimum echo amplitude that is reported.
        specular_incidence_tol: specular surfaces echo only within this
            angle of normal incidence [rad].
        amplitude_jitter: std of the log-normal echo amplitude factor.
        snr_scaled: scale sigmas by sqrt(snr_ref / snr).
    """

    sigma_aod: float = 0.02
    sigma_aoa: float = 0.02
    sigma_toa: float = 0.3e-9
    snr_ref: float = 0.01
    amplitude_a0: float = 1.0
    path_loss_exponent: float = 2.0
    detect_threshold: float = 1e-3
    specular_incidence_tol: float = math.radians(5.0)
    amplitude_jitter: float = 0.1
    snr_scaled: bool = False

    def __post_init__(self):
        for name in ("sigma_aod", "sigma_aoa", "sigma_toa", "amplitude_jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.path_loss_exponent <= 0:
            raise ValueError("path_loss_exponent must be > 0")
        if self.detect_threshold <= 0:
            raise ValueError("detect_threshold must be > 0")
        if self.amplitude_a0 <= 0 or self.snr_ref <= 0:
            raise ValueError("amplitude_a0 and snr_ref must be > 0")

    @classmethod
    def noiseless(cls, **kw) -> "NoiseModel":
        kw = {"sigma_aod": 0.0, "sigma_aoa": 0.0, "sigma_toa": 0.0,
              "amplitude_jitter": 0.0, **kw}
        return cls(**kw)

    def sigmas(self, snr: Optional[float] = None) -> tuple:
        """Effective ``(sigma_aod, sigma_aoa, sigma_toa)`` for a path."""
        k = 1.0
        if self.snr_scaled and snr is not None and snr > 0:
            k = math.sqrt(self.snr_ref / snr)
        return self.sigma_aod * k, self.sigma_aoa * k, self.sigma_toa * k

    def amplitude(self, d):
        return self.amplitude_a0 / np.power(d, self.path_loss_exponent)


@dataclass(frozen=True)
class PathObservation:
    """Estimator-facing view of a path: no ground-truth labels."""

    aod: float
    aoa: float
    toa: float
    snr: float = 1.0


@dataclass(frozen=True)
class PathMeasurement:
    aod: float
    aoa: float
    toa: float
    snr: float
    truth_kind: PathKind
    truth_scatterer_id: Optional[int] = None

    def observed(self) -> PathObservation:
        return PathObservation(self.aod, self.aoa, self.toa, self.snr)


@dataclass(frozen=True)
class ClusterMeasurement:
    mean_aod: float
    mean_aoa: float
    mean_toa: float
    spread_aod: float
    spread_aoa: float
    spread_toa: float
    n_subpaths: int
    truth_kind: Optional[PathKind] = None
    truth_scatterer_id: Optional[int] = None

    def __post_init__(self):
        if min(self.spread_aod, self.spread_aoa, self.spread_toa) < 0:
            raise ValueError("spreads must be >= 0")
        if self.n_subpaths < 1:
            raise ValueError("n_subpaths must be >= 1")


@dataclass(frozen=True)
class EchoDetection:
    beam: float
    toa: float
    amplitude: float


@dataclass(frozen=True)
class BeamGrid:
    """Uniform beam codebook over the full circle, sorted, containing bearing 0."""

    n_beams: int
    directions: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.n_beams < 4:
            raise ValueError("n_beams must be >= 4")
        d = geom.wrap_angles(np.arange(self.n_beams) * (2 * math.pi / self.n_beams))
        object.__setattr__(self, "directions", np.sort(d))

    @property
    def spacing(self) -> float:
        return 2 * math.pi / self.n_beams

    def nearest(self, bearing: float) -> int:
        diff = np.abs(geom.wrap_angles(self.directions - bearing))
        return int(np.argmin(diff))

    def covering(self, lo: float, width: float) -> np.ndarray:
        """Indices of beams whose angular cell overlaps ``[lo, lo + width]``.

        A beam's cell is its bearing +/- half the spacing.  ``lo`` may be any
        real; the interval is taken modulo 2 pi.
        """
        half = 0.5 * self.spacing
        if width + 2 * half >= 2 * math.pi:
            return np.arange(self.n_beams)
        rel = np.remainder(self.directions - (lo - half), 2 * math.pi)
        return np.flatnonzero(rel < width + 2 * half)


def _rng(seed: Seed) -> np.random.Generator:
    return np.random.default_rng(seed)


def _nominal_paths(scene: Scene, ap_pos: Point2, ue_pos: Point2):
    """Exact (kind, scatterer_id, aod, aoa, length) tuples, LOS first."""
    segs = scene.segments
    out = []
    if not geom.segment_blocks(ap_pos, ue_pos, segs):
        out.append((PathKind.LOS, None, bearing_between(ue_pos, ap_pos),
                    bearing_between(ap_pos, ue_pos), distance(ap_pos, ue_pos)))
    for i, sc in enumerate(scene.scatterers):
        if sc.kind is ScattererKind.SPECULAR:
            s = _specular_point(ap_pos, ue_pos, sc.segment)
            kind = PathKind.SPECULAR_NLOS
        else:
            s = _diffuse_point(ap_pos, ue_pos, sc.segment, segs, i)
            kind = PathKind.DIFFUSE_NLOS
        if s is None:
            continue
        if s == ap_pos or s == ue_pos:
            continue
        if geom.segment_blocks(ap_pos, s, segs, exclude=i):
            continue
        if geom.segment_blocks(s, ue_pos, segs, exclude=i):
            continue
        out.append((kind, sc.id, bearing_between(ue_pos, s), bearing_between(ap_pos, s),
                    distance(ap_pos, s) + distance(s, ue_pos)))
    return out


def _specular_point(ap, ue, seg: Segment) -> Optional[Point2]:
    va = mirror_point(ap, seg)
    hit = geom.intersect_segments(va, ue, seg)
    if hit is None:
        return None
    t, s = hit
    if not (0.0 < t < 1.0 and 0.0 < s < 1.0):
        return None
    return seg.point_at(s)


def _diffuse_point(ap, ue, seg: Segment, segs, index, n_search=201) -> Optional[Point2]:
    side_ap = geom.side_of(ap, seg)
    side_ue = geom.side_of(ue, seg)
    if side_ap * side_ue <= 0:
        return None
    # Total leg length is convex along the segment, so the constrained
    # minimiser is the clamped specular parameter.
    va = mirror_point(ap, seg)
    hit = geom.intersect_segments(va, ue, seg)
    s0 = 0.5 if hit is None else min(1.0, max(0.0, hit[1]))
    cand = seg.point_at(s0)

    def visible(p):
        return (not geom.segment_blocks(ap, p, segs, exclude=index)
                and not geom.segment_blocks(p, ue, segs, exclude=index))

    if visible(cand):
        return cand
    grid = np.linspace(0.0, 1.0, n_search)
    pts = [seg.point_at(float(s)) for s in grid]
    lengths = [distance(ap, p) + distance(p, ue) for p in pts]
    for k in np.argsort(lengths, kind="stable"):
        if visible(pts[k]):
            return pts[k]
    return None


def synth_paths(scene: Scene, ap: Anchor, ue: UEState, noise: NoiseModel,
                rng_seed: Seed = None) -> list:
    """LOS and first-order reflected paths between ``ap`` and ``ue``.

    Returns ``PathMeasurement`` objects, LOS first then in scatterer order.
    An empty list means every path is blocked.
    """
    ap_pos = ap.position if isinstance(ap, Anchor) else as_point(ap)
    ue_pos = ue.position if isinstance(ue, UEState) else as_point(ue)
    if ap_pos == ue_pos:
        raise geom.GeometryError("UE coincides with the AP")
    nominal = _nominal_paths(scene, ap_pos, ue_pos)
    rng = _rng(rng_seed)
    w = rng.standard_normal((len(nominal), 3))
    out = []
    for (kind, sid, aod, aoa, length), (w1, w2, w3) in zip(nominal, w):
        toa = length / SPEED_OF_LIGHT
        snr = noise.amplitude_a0 / length ** noise.path_loss_exponent
        s_aod, s_aoa, s_toa = noise.sigmas(snr)
        out.append(PathMeasurement(
            aod=geom.wrap_angle(aod + s_aod * float(w1)),
            aoa=geom.wrap_angle(aoa + s_aoa * float(w2)),
            toa=max(toa + s_toa * float(w3), 1e-15),
            snr=snr,
            truth_kind=kind,
            truth_scatterer_id=sid,
        ))
    return out


def synth_clusters(scene: Scene, ap: Anchor, ue: UEState, noise: NoiseModel,
                   n_subpaths: int, intra_spread: tuple, rng_seed: Seed = None) -> list:
    """Sub-6 GHz clusters: one bundle of ``n_subpaths`` sub-paths per nominal path.

    ``intra_spread`` is ``(angle_std [rad], delay_std [s])``.  Reported spreads
    are sample standard deviations (ddof=1); zero when ``n_subpaths == 1``.
    """
    if ap.band is not Band.SUB6:
        raise ValueError("synth_clusters requires a sub-6 GHz anchor")
    if n_subpaths < 1:
        raise ValueError("n_subpaths must be >= 1")
    nominal = synth_paths(scene, ap, ue, NoiseModel.noiseless(), None)
    sig_a, sig_t = intra_spread
    rng = _rng(rng_seed)
    out = []
    for p in nominal:
        w = rng.standard_normal((3, n_subpaths))
        aod = p.aod + sig_a * w[0]
        aoa = p.aoa + sig_a * w[1]
        toa = p.toa + sig_t * w[2]
        m_aod, s_aod = _angle_stats(aod)
        m_aoa, s_aoa = _angle_stats(aoa)
        s_toa = float(np.std(toa, ddof=1)) if n_subpaths > 1 else 0.0
        out.append(ClusterMeasurement(
            mean_aod=m_aod, mean_aoa=m_aoa, mean_toa=float(np.mean(toa)),
            spread_aod=s_aod, spread_aoa=s_aoa, spread_toa=s_toa,
            n_subpaths=n_subpaths, truth_kind=p.truth_kind,
            truth_scatterer_id=p.truth_scatterer_id,
        ))
    return out


def _angle_stats(a: np.ndarray) -> tuple:
    ref = a[0]
    rel = geom.wrap_angles(a - ref)
    mean = geom.wrap_angle(float(ref + rel.mean()))
    spread = float(np.std(rel, ddof=1)) if a.size > 1 else 0.0
    return mean, spread


def synth_echoes(scene: Scene, ap, grid: BeamGrid, noise: NoiseModel,
                 rng_seed: Seed = None) -> list:
    """Monostatic echoes of one full beam sweep from ``ap`` (an Anchor or a point).

    Diffuse surfaces always echo; specular ones only near normal incidence.
    Weak returns below ``noise.detect_threshold`` are dropped.
    """
    origin = ap.position if isinstance(ap, Anchor) else as_point(ap)
    beams = grid.directions
    dist, idx = geom.ray_cast_fan(origin, beams, scene.segment_array)
    rng = _rng(rng_seed)
    w = rng.standard_normal((2, beams.size))
    out = []
    for k in np.flatnonzero(idx >= 0):
        sc = scene.scatterers[idx[k]]
        d = float(dist[k])
        if sc.kind is ScattererKind.SPECULAR:
            e = sc.segment.b - sc.segment.a
            cos_inc = abs(geom.cross((math.cos(beams[k]), math.sin(beams[k])), e)) / sc.segment.length
            incidence = math.acos(min(1.0, cos_inc))
            if incidence > noise.specular_incidence_tol:
                continue
        amp = float(noise.amplitude(d)) * math.exp(noise.amplitude_jitter * float(w[1, k]))
        if amp < noise.detect_threshold:
            continue
        snr = noise.amplitude_a0 / (2 * d) ** noise.path_loss_exponent
        s_toa = noise.sigmas(snr)[2]
        toa = max(2 * d / SPEED_OF_LIGHT + s_toa * float(w[0, k]), 1e-15)
        out.append(EchoDetection(beam=float(beams[k]), toa=toa, amplitude=amp))
    return out


def advance_ue(ue: UEState, dt: float, process_noise_accel: float,
               rng_seed: Seed = None) -> UEState:
    """Constant-velocity step with white Gaussian acceleration."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    a = _rng(rng_seed).standard_normal(2) * process_noise_accel
    px, py = ue.position
    vx, vy = ue.velocity
    return UEState(
        position=Point2(px + vx * dt + 0.5 * a[0] * dt * dt, py + vy * dt + 0.5 * a[1] * dt * dt),
        velocity=Point2(vx + a[0] * dt, vy + a[1] * dt),
        time=ue.time + dt,
    )


def with_position(ue: UEState, position) -> UEState:
    return replace(ue, position=as_point(position))
