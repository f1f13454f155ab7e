"""
Sub-6 GHz / mmWave cooperation.

Sub-6 GHz clusters give means and spreads of AOD and TOA.  Because the VA,
the reflection point and the UE are collinear, ``mean +/- k*spread`` bounds
an annular sector that contains the VA (seen from the UE) or the UE (seen
from a known VA).  mmWave beam training is then restricted to the grid
beams that cover the sector.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import geom
from .crowd import GlobalMapRecord, select_for_download
from .geom import Point2, as_point
from .slam import BeamSelection, RadioFeatureMap, full_sweep, select_beams
from .world import SPEED_OF_LIGHT, BeamGrid, ClusterMeasurement

TWO_PI = 2 * math.pi


class LinkChoice(str, enum.Enum):
    USE_MMWAVE = "mmwave"
    USE_SUB6 = "sub6"


@dataclass(frozen=True)
class FeasibleRegion:
    """Annular sector ``{anchor + r*u(b)}`` with ``b`` running CCW from
    ``bearing_lo`` to ``bearing_hi`` and ``range_lo <= r <= range_hi``."""

    anchor: Point2
    bearing_lo: float
    bearing_hi: float
    range_lo: float
    range_hi: float
    full_circle: bool = False

    def __post_init__(self):
        object.__setattr__(self, "anchor", as_point(self.anchor))
        if self.range_lo < 0 or self.range_lo > self.range_hi:
            raise ValueError("need 0 <= range_lo <= range_hi")

    @classmethod
    def around(cls, anchor, bearing: float, half_width: float, range_lo: float,
               range_hi: float) -> "FeasibleRegion":
        range_lo = max(0.0, range_lo)
        range_hi = max(range_lo, range_hi)
        if half_width >= math.pi:
            return cls(anchor, -math.pi + 1e-15, math.pi, range_lo, range_hi, True)
        return cls(anchor, geom.wrap_angle(bearing - half_width),
                   geom.wrap_angle(bearing + half_width), range_lo, range_hi)

    @property
    def bearing_width(self) -> float:
        if self.full_circle:
            return TWO_PI
        return math.remainder(self.bearing_hi - self.bearing_lo, TWO_PI) % TWO_PI

    @property
    def centroid(self) -> Point2:
        b = self.bearing_lo + 0.5 * self.bearing_width
        r = 0.5 * (self.range_lo + self.range_hi)
        return Point2(self.anchor.x + r * math.cos(b), self.anchor.y + r * math.sin(b))

    def contains(self, p, tol: float = 1e-9) -> bool:
        r = geom.distance(self.anchor, p)
        if r < self.range_lo - tol or r > self.range_hi + tol:
            return False
        if r <= tol or self.full_circle:
            return True
        rel = (geom.bearing_between(self.anchor, p) - self.bearing_lo) % TWO_PI
        ang_tol = tol / r
        return rel <= self.bearing_width + ang_tol or rel >= TWO_PI - ang_tol

    def boundary_points(self, n: int = 32) -> np.ndarray:
        b = self.bearing_lo + np.linspace(0.0, self.bearing_width, n)
        r = np.linspace(self.range_lo, self.range_hi, n)
        a = np.asarray(self.anchor)
        u = np.stack([np.cos(b), np.sin(b)], 1)
        pts = [a + self.range_lo * u, a + self.range_hi * u]
        for bb in (b[0], b[-1]):
            pts.append(a + r[:, None] * np.array([math.cos(bb), math.sin(bb)]))
        return np.concatenate(pts)


def feasible_va_region(ue_pos, cluster: ClusterMeasurement, k_sigma: float = 3.0) -> FeasibleRegion:
    """Sector apexed at the UE that bounds the VA of a cluster."""
    if k_sigma <= 0:
        raise ValueError("k_sigma must be > 0")
    return FeasibleRegion.around(
        ue_pos, cluster.mean_aod, k_sigma * cluster.spread_aod,
        SPEED_OF_LIGHT * (cluster.mean_toa - k_sigma * cluster.spread_toa),
        SPEED_OF_LIGHT * (cluster.mean_toa + k_sigma * cluster.spread_toa))


def feasible_terminal_region(va, cluster: ClusterMeasurement, k_sigma: float = 3.0) -> FeasibleRegion:
    """Sector apexed at a known VA (or the AP itself for a LOS cluster) that
    bounds the terminal: c*toa back along the reversed departure bearing."""
    if k_sigma <= 0:
        raise ValueError("k_sigma must be > 0")
    return FeasibleRegion.around(
        va, cluster.mean_aod + math.pi, k_sigma * cluster.spread_aod,
        SPEED_OF_LIGHT * (cluster.mean_toa - k_sigma * cluster.spread_toa),
        SPEED_OF_LIGHT * (cluster.mean_toa + k_sigma * cluster.spread_toa))


def _extreme_points(region: FeasibleRegion, p: np.ndarray) -> np.ndarray:
    a = np.asarray(region.anchor)
    lo, w = region.bearing_lo, region.bearing_width
    pts = []
    for r in {region.range_lo, region.range_hi}:
        for b in (lo, lo + w):
            pts.append(a + r * np.array([math.cos(b), math.sin(b)]))
        d = float(np.linalg.norm(p - a))
        if r > 0 and d > r:
            base = math.atan2(p[1] - a[1], p[0] - a[0])
            delta = math.acos(r / d)
            for b in (base + delta, base - delta):
                if (b - lo) % TWO_PI <= w:
                    pts.append(a + r * np.array([math.cos(b), math.sin(b)]))
    return np.array(pts)


def region_bearing_interval(region: FeasibleRegion, beam_anchor):
    """``(lo, width, centre)`` of bearings from ``beam_anchor`` into the
    region, or None when the bearings are unconstrained."""
    p = np.asarray(beam_anchor, dtype=float)
    if region.full_circle or region.contains(p):
        return None
    centre = geom.bearing_between(p, region.centroid) if geom.distance(p, region.centroid) > 0 else 0.0
    ext = _extreme_points(region, p)
    rel = geom.wrap_angles(np.arctan2(ext[:, 1] - p[1], ext[:, 0] - p[0]) - centre)
    lo, hi = float(rel.min()), float(rel.max())
    if hi - lo >= math.pi - 1e-9:
        return None
    # The corner/tangent set is exact for sectors subtending < pi; verify.
    chk = region.boundary_points()
    relc = geom.wrap_angles(np.arctan2(chk[:, 1] - p[1], chk[:, 0] - p[0]) - centre)
    if relc.min() < lo - 1e-9 or relc.max() > hi + 1e-9:
        return None
    return centre + lo, hi - lo, centre


def beams_for_region(region: FeasibleRegion, beam_anchor, grid: BeamGrid) -> BeamSelection:
    """Grid beams from ``beam_anchor`` whose cells overlap the region.

    Never empty: the beam nearest the centroid bearing is always included.
    Falls back to the full grid (``full_sweep=True``) when the anchor lies
    inside the region.
    """
    iv = region_bearing_interval(region, beam_anchor)
    if iv is None:
        return full_sweep(grid)
    lo, width, _ = iv
    centre = geom.bearing_between(beam_anchor, region.centroid)
    return select_beams(grid, lo, width, centre)


def band_switch(link_snr_mmwave: float, snr_threshold: float, state: LinkChoice,
                hysteresis_factor: float = 2.0) -> LinkChoice:
    """Hysteresis switch: drop to sub-6 below ``snr_threshold``, return to
    mmWave above ``snr_threshold * hysteresis_factor``, else hold."""
    if snr_threshold <= 0 or hysteresis_factor < 1:
        raise ValueError("need snr_threshold > 0 and hysteresis_factor >= 1")
    if link_snr_mmwave < snr_threshold:
        return LinkChoice.USE_SUB6
    if link_snr_mmwave > snr_threshold * hysteresis_factor:
        return LinkChoice.USE_MMWAVE
    return LinkChoice(state)


@dataclass
class AccessPlan:
    downloaded: RadioFeatureMap
    beams: BeamSelection
    fallback: bool
    va_id: Optional[int] = None


def bootstrap_access(global_rec: GlobalMapRecord, gps_rough, gps_sigma: float, grid: BeamGrid,
                     mmwave_ap, *, k_sigma: float = 3.0, margin: float = 50.0,
                     min_confidence: int = 2) -> AccessPlan:
    """Initial mmWave access from a GPS fix and the downloaded map.

    The map is cut to ``k_sigma * gps_sigma + margin`` around the GPS fix.
    The terminal region is the sector, apexed at the downloaded VA whose
    bearing from the fix is closest to the AP's, that encloses the
    ``k_sigma`` GPS disk; the AP then scans only beams covering it.
    """
    g = np.asarray(gps_rough, dtype=float)
    ap = np.asarray(mmwave_ap, dtype=float)
    dl = select_for_download(global_rec, g, k_sigma * gps_sigma + margin, min_confidence)
    if not dl.vas:
        return AccessPlan(dl, full_sweep(grid), True)
    ap_b = geom.bearing_between(g, ap)
    best = min(dl.vas, key=lambda v: (abs(geom.wrap_angle(geom.bearing_between(g, v.estimate.mean)
                                                            - ap_b)), v.id))
    v = best.estimate.mean
    d = float(np.linalg.norm(g - v))
    rad = k_sigma * gps_sigma
    half = math.asin(min(1.0, rad / d)) if d > 0 else math.pi
    region = FeasibleRegion.around(v, geom.bearing_between(v, g) if d > 0 else 0.0,
                                   math.pi if rad >= d else half, d - rad, d + rad)
    sel = beams_for_region(region, ap, grid)
    return AccessPlan(dl, sel, sel.full_sweep, best.id)
