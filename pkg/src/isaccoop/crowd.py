"""
Cloud-side radio map: merging, pruning, download selection and persistence.

The global record keeps every terminal's latest estimate of each feature
separately and exposes their information-form product.  A terminal that
re-uploads its (cumulative) local map therefore replaces its previous
contribution instead of being counted twice.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Optional

import numpy as np

from .errors import FeatureNotFoundError, FrameMismatchError, MapFormatError
from .geom import Point2
from .sense import Gaussian2, Polyline, WeightedPoint, fuse_gaussians, interpolate_shape, mahalanobis2
from .slam import DEFAULT_GATE, RadioFeatureMap, VirtualAnchorFeature

DEFAULT_CLUSTER_RADIUS = 1.0
PRUNE_CELL = 0.1


@dataclass
class Contribution:
    estimate: Gaussian2
    n_obs: int
    last_seen: float


@dataclass
class GlobalMapRecord:
    map: RadioFeatureMap = field(default_factory=RadioFeatureMap)
    version: int = 0
    contributions: dict = field(default_factory=dict)   # va_id -> {terminal: Contribution}
    vanish_votes: dict = field(default_factory=dict)    # va_id -> set of terminals
    links: dict = field(default_factory=dict)           # (terminal, local_id) -> va_id
    cluster_radius: float = DEFAULT_CLUSTER_RADIUS

    @property
    def contributor_counts(self) -> dict:
        return {vid: sorted(c, key=str) for vid, c in self.contributions.items()}

    def _bumped(self) -> "GlobalMapRecord":
        out = copy.deepcopy(self)
        out.version += 1
        return out


def _refuse(rec: GlobalMapRecord, vid: int, exclude: Optional[Hashable] = None):
    parts = [c for t, c in rec.contributions[vid].items() if t != exclude]
    if not parts:
        return None
    return VirtualAnchorFeature(
        id=vid,
        estimate=fuse_gaussians([c.estimate for c in parts]).copy(),
        n_obs=sum(c.n_obs for c in parts),
        last_seen=max(c.last_seen for c in parts),
    )


def _rebuild_vas(rec: GlobalMapRecord):
    rec.map.vas = [_refuse(rec, vid) for vid in sorted(rec.contributions)]


def _union_points(old: list, new) -> list:
    seen = {(p.point, p.weight) for p in old}
    out = list(old)
    for p in new:
        p = WeightedPoint(Point2(*p.point), float(p.weight))
        if p.weight <= 0:
            raise ValueError("point weights must be > 0")
        key = (p.point, p.weight)
        if key not in seen:
            seen.add(key)
            out.append(p)
    return out


def merge_local(global_rec: GlobalMapRecord, local: RadioFeatureMap, terminal_id: Hashable,
                gate: float = DEFAULT_GATE) -> GlobalMapRecord:
    """Fold a terminal's local map into the global record.

    Local VAs already linked to a global feature (from an earlier upload)
    update that feature; the rest are gated against the remaining global
    features by Mahalanobis distance and matched greedily, nearest first.
    Unmatched VAs become new global features.  Reflection points are
    unioned and outlines rebuilt.
    """
    if global_rec.map.frame_id != local.frame_id and (global_rec.map.vas or global_rec.version):
        raise FrameMismatchError(f"{local.frame_id!r} != {global_rec.map.frame_id!r}")
    rec = global_rec._bumped()
    rec.map.frame_id = local.frame_id
    current = {v.id: v for v in rec.map.vas}

    matched = {}
    pending = []
    for lv in local.vas:
        g = rec.links.get((terminal_id, lv.id))
        if g in current and g not in matched.values():
            matched[lv.id] = g
        else:
            pending.append(lv)
    pairs = []
    for lv in pending:
        for gid, gv in current.items():
            d2 = mahalanobis2(lv.estimate, gv.estimate)
            if d2 <= gate:
                pairs.append((d2, lv.id, gid))
    pairs.sort(key=lambda t: (t[0], t[1], t[2]))
    used = set(matched.values())
    for _, lid, gid in pairs:
        if lid in matched or gid in used:
            continue
        matched[lid] = gid
        used.add(gid)

    next_id = max(rec.contributions, default=-1) + 1
    for lv in local.vas:
        gid = matched.get(lv.id)
        if gid is None:
            gid = next_id
            next_id += 1
            rec.contributions[gid] = {}
        rec.contributions[gid][terminal_id] = Contribution(
            lv.estimate.copy(), lv.n_obs, lv.last_seen)
        rec.links[(terminal_id, lv.id)] = gid
    _rebuild_vas(rec)
    if local.reflection_points:
        rec.map.reflection_points = _union_points(rec.map.reflection_points,
                                                  local.reflection_points)
        rec.map.shapes = interpolate_shape(rec.map.reflection_points, rec.cluster_radius)
    return rec


def link_for(rec: GlobalMapRecord, terminal_id: Hashable, local_id: int) -> Optional[int]:
    """Global id assigned to a terminal's local VA by the last merge."""
    return rec.links.get((terminal_id, local_id))


def merge_scatterer_points(global_rec: GlobalMapRecord, local_points, terminal_id: Hashable
                           ) -> GlobalMapRecord:
    """Union a terminal's reflection points into the global map and rebuild
    outlines; amplitude weights let close-range points dominate the fit."""
    rec = global_rec._bumped()
    rec.map.reflection_points = _union_points(rec.map.reflection_points, local_points)
    rec.map.shapes = interpolate_shape(rec.map.reflection_points, rec.cluster_radius)
    return rec


def report_vanished(global_rec: GlobalMapRecord, va_id: int, terminal_id: Hashable,
                    quorum: int = 2) -> GlobalMapRecord:
    """Record a vanish vote; delete the VA once ``quorum`` distinct terminals agree."""
    if va_id not in global_rec.contributions:
        raise FeatureNotFoundError(va_id)
    if terminal_id in global_rec.vanish_votes.get(va_id, set()):
        return global_rec
    rec = global_rec._bumped()
    votes = rec.vanish_votes.setdefault(va_id, set())
    votes.add(terminal_id)
    if len(votes) >= quorum:
        del rec.contributions[va_id]
        del rec.vanish_votes[va_id]
        rec.links = {k: v for k, v in rec.links.items() if v != va_id}
        _rebuild_vas(rec)
    return rec


def confidence(v: VirtualAnchorFeature) -> int:
    return v.n_obs


def _shape_near(shape: Polyline, centre: np.ndarray, radius: float) -> bool:
    a = shape.vertices[:-1]
    e = shape.vertices[1:] - a
    t = np.clip(np.einsum("ij,ij->i", centre - a, e) / np.einsum("ij,ij->i", e, e), 0, 1)
    d = np.linalg.norm(a + t[:, None] * e - centre, axis=1)
    return bool(np.any(d <= radius))


def select_for_download(global_rec: GlobalMapRecord, rough_position, radius: float,
                        min_confidence: int = 2, max_cov_trace: float = math.inf,
                        exclude_terminal: Optional[Hashable] = None) -> RadioFeatureMap:
    """Features relevant to a terminal near ``rough_position``.

    VAs within ``radius`` whose confidence (observation count) reaches
    ``min_confidence`` and whose covariance trace is at most
    ``max_cov_trace``; outlines touching the disk.  With
    ``exclude_terminal`` each VA is re-fused without that terminal's own
    contribution, so a terminal can combine the download with its local
    map without double counting.
    """
    if radius <= 0:
        raise ValueError("radius must be > 0")
    c = np.asarray(rough_position, dtype=float)
    vas = []
    for vid in sorted(global_rec.contributions):
        v = _refuse(global_rec, vid, exclude_terminal)
        if v is None:
            continue
        if np.linalg.norm(v.estimate.mean - c) > radius:
            continue
        if confidence(v) < min_confidence or v.estimate.trace > max_cov_trace:
            continue
        vas.append(v)
    shapes = [s for s in global_rec.map.shapes if _shape_near(s, c, radius)]
    return RadioFeatureMap(vas=vas, reflection_points=[], shapes=shapes,
                           frame_id=global_rec.map.frame_id)


def _in_region(v, region) -> bool:
    if region is None:
        return True
    centre, radius = region
    return float(np.linalg.norm(v.estimate.mean - np.asarray(centre, dtype=float))) <= radius


def prune(global_rec: GlobalMapRecord, max_features: int, region=None) -> GlobalMapRecord:
    """Keep the ``max_features`` most confident VAs inside ``region``.

    ``region`` is ``(centre, radius)`` or None for the whole map; ties on
    confidence go to the smaller covariance trace, then the lower id.
    Reflection points are decimated on a 0.1 m grid, keeping the strongest
    point per cell.
    """
    if max_features < 1:
        raise ValueError("max_features must be >= 1")
    rec = global_rec._bumped()
    inside = [v for v in rec.map.vas if _in_region(v, region)]
    ranked = sorted(inside, key=lambda v: (-confidence(v), v.estimate.trace, v.id))
    drop = {v.id for v in ranked[max_features:]}
    for vid in drop:
        del rec.contributions[vid]
        rec.vanish_votes.pop(vid, None)
    rec.links = {k: v for k, v in rec.links.items() if v not in drop}
    _rebuild_vas(rec)
    rec.map.reflection_points = decimate_points(rec.map.reflection_points, PRUNE_CELL)
    rec.map.shapes = interpolate_shape(rec.map.reflection_points, rec.cluster_radius)
    return rec


def decimate_points(points: list, cell: float) -> list:
    best = {}
    for p in points:
        key = (math.floor(p.point[0] / cell), math.floor(p.point[1] / cell))
        if key not in best or p.weight > best[key].weight:
            best[key] = p
    keep = {id(p) for p in best.values()}
    return [p for p in points if id(p) in keep]


# --- persistence -----------------------------------------------------------

def _emit(obj) -> str:
    """JSON text with every float written to 17 significant digits."""
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError("non-finite number in map")
        s = format(x, ".17g")
        if "." not in s and "e" not in s and "n" not in s:
            s += ".0"
        return s
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_emit(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_emit(v) for v in obj) + "]"
    if isinstance(obj, np.ndarray):
        return _emit(obj.tolist())
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _va_dict(v: VirtualAnchorFeature) -> dict:
    d = {"id": v.id, "mean": v.estimate.mean.tolist(), "cov": v.estimate.cov.tolist(),
         "n_obs": v.n_obs, "last_seen": float(v.last_seen)}
    if v.global_id is not None:
        d["global_id"] = v.global_id
    return d


def map_to_dict(fmap: RadioFeatureMap, version: int = 0) -> dict:
    return {
        "version": version,
        "frame_id": fmap.frame_id,
        "vas": [_va_dict(v) for v in fmap.vas],
        "points": [{"p": list(p.point), "w": float(p.weight)} for p in fmap.reflection_points],
        "shapes": [s.vertices.tolist() for s in fmap.shapes],
        "shape_meta": [{"residual": float(s.residual), "weight": float(s.weight)}
                       for s in fmap.shapes],
    }


def record_to_dict(rec: GlobalMapRecord) -> dict:
    d = map_to_dict(rec.map, rec.version)
    d["cluster_radius"] = float(rec.cluster_radius)
    d["contributions"] = [
        {"va": vid, "terminal": t, "mean": c.estimate.mean.tolist(),
         "cov": c.estimate.cov.tolist(), "n_obs": c.n_obs, "last_seen": float(c.last_seen)}
        for vid, parts in sorted(rec.contributions.items()) for t, c in parts.items()]
    d["vanish_votes"] = [{"va": vid, "terminals": sorted(ts, key=str)}
                         for vid, ts in sorted(rec.vanish_votes.items())]
    d["links"] = [[t, lid, gid] for (t, lid), gid in rec.links.items()]
    return d


def save_map(record, path) -> None:
    """Write a ``GlobalMapRecord`` (or bare ``RadioFeatureMap``) as UTF-8 JSON."""
    d = record_to_dict(record) if isinstance(record, GlobalMapRecord) else map_to_dict(record)
    Path(path).write_text(_emit(d) + "\n", encoding="utf-8")


class _Reader:
    def __init__(self, path):
        self.path = str(path)

    def fail(self, where, msg):
        raise MapFormatError(f"{self.path}: field {where}: {msg}")

    def get(self, d, key, where, kind=None, default=...):
        if not isinstance(d, dict):
            self.fail(where, "expected an object")
        if key not in d:
            if default is not ...:
                return default
            self.fail(f"{where}.{key}" if where else key, "missing")
        val = d[key]
        name = f"{where}.{key}" if where else key
        if kind == "int" and (isinstance(val, bool) or not isinstance(val, int)):
            self.fail(name, f"expected integer, got {val!r}")
        if kind == "num":
            if isinstance(val, bool) or not isinstance(val, (int, float)):
                self.fail(name, f"expected number, got {val!r}")
            val = float(val)
        if kind == "str" and not isinstance(val, str):
            self.fail(name, f"expected string, got {val!r}")
        if kind == "list" and not isinstance(val, list):
            self.fail(name, "expected an array")
        return val

    def array(self, val, shape, where):
        try:
            a = np.array(val, dtype=float)
        except (TypeError, ValueError):
            self.fail(where, "expected numeric array")
        if a.shape != shape and not (shape == (-1, 2) and a.ndim == 2 and a.shape[1] == 2):
            self.fail(where, f"expected shape {shape}, got {a.shape}")
        if not np.all(np.isfinite(a)):
            self.fail(where, "non-finite value")
        return a

    def va(self, d, where):
        return VirtualAnchorFeature(
            id=self.get(d, "id", where, "int"),
            estimate=Gaussian2(self.array(self.get(d, "mean", where), (2,), f"{where}.mean"),
                               self.array(self.get(d, "cov", where), (2, 2), f"{where}.cov")),
            n_obs=self.get(d, "n_obs", where, "int"),
            last_seen=self.get(d, "last_seen", where, "num"),
            global_id=self.get(d, "global_id", where, None, None),
        )


def load_map(path) -> GlobalMapRecord:
    """Read a map file written by ``save_map``.

    Raises ``MapFormatError`` naming the line (syntax errors) or the field
    path (schema errors).
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MapFormatError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    r = _Reader(path)
    if not isinstance(doc, dict):
        r.fail("<root>", "expected an object")
    version = r.get(doc, "version", "", "int")
    frame_id = r.get(doc, "frame_id", "", "str")
    vas = [r.va(d, f"vas[{i}]") for i, d in enumerate(r.get(doc, "vas", "", "list"))]
    points = []
    for i, d in enumerate(r.get(doc, "points", "", "list")):
        p = r.array(r.get(d, "p", f"points[{i}]"), (2,), f"points[{i}].p")
        w = r.get(d, "w", f"points[{i}]", "num")
        if w <= 0:
            r.fail(f"points[{i}].w", "weight must be > 0")
        points.append(WeightedPoint(Point2(float(p[0]), float(p[1])), w))
    raw_shapes = r.get(doc, "shapes", "", "list")
    meta = r.get(doc, "shape_meta", "", "list", [{}] * len(raw_shapes))
    if len(meta) != len(raw_shapes):
        r.fail("shape_meta", "length differs from shapes")
    shapes = []
    for i, (s, m) in enumerate(zip(raw_shapes, meta)):
        v = r.array(s, (-1, 2), f"shapes[{i}]")
        try:
            shapes.append(Polyline(v, residual=float(m.get("residual", 0.0)),
                                   weight=float(m.get("weight", 1.0))))
        except ValueError as exc:
            r.fail(f"shapes[{i}]", str(exc))
    fmap = RadioFeatureMap(vas=vas, reflection_points=points, shapes=shapes, frame_id=frame_id)
    rec = GlobalMapRecord(map=fmap, version=version,
                          cluster_radius=r.get(doc, "cluster_radius", "", "num",
                                               DEFAULT_CLUSTER_RADIUS))
    contribs = r.get(doc, "contributions", "", "list", None)
    if contribs is None:
        for v in vas:
            rec.contributions[v.id] = {None: Contribution(v.estimate.copy(), v.n_obs, v.last_seen)}
    else:
        for i, d in enumerate(contribs):
            where = f"contributions[{i}]"
            vid = r.get(d, "va", where, "int")
            c = Contribution(
                Gaussian2(r.array(r.get(d, "mean", where), (2,), f"{where}.mean"),
                          r.array(r.get(d, "cov", where), (2, 2), f"{where}.cov")),
                r.get(d, "n_obs", where, "int"), r.get(d, "last_seen", where, "num"))
            rec.contributions.setdefault(vid, {})[r.get(d, "terminal", where)] = c
    for i, d in enumerate(r.get(doc, "vanish_votes", "", "list", [])):
        rec.vanish_votes[r.get(d, "va", f"vanish_votes[{i}]", "int")] = set(
            r.get(d, "terminals", f"vanish_votes[{i}]", "list"))
    for i, item in enumerate(r.get(doc, "links", "", "list", [])):
        if not (isinstance(item, list) and len(item) == 3):
            r.fail(f"links[{i}]", "expected [terminal, local_id, global_id]")
        rec.links[(item[0], item[1])] = item[2]
    return rec
