"""Scenario configuration: JSON schema, defaults and validation."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from ..errors import ConfigError
from ..geom import GeometryError, Point2, Segment, as_point
from ..world import Anchor, Band, NoiseModel, Scatterer, Scene


@dataclass(frozen=True)
class UETrajectory:
    """Either constant velocity (with process noise) or a waypoint path
    traversed at ``speed``."""

    id: int
    position: Point2
    velocity: Point2 = Point2(0.0, 0.0)
    waypoints: tuple = ()
    speed: float = 0.0


@dataclass(frozen=True)
class Cooperation:
    active_passive: bool = True
    crowdsourcing: bool = False
    multiband: bool = False


@dataclass(frozen=True)
class ClusterModel:
    n_subpaths: int = 32
    angle_spread: float = 0.02
    delay_spread: float = 1e-9


@dataclass(frozen=True)
class ScenarioConfig:
    scene: Scene
    ue_trajectories: tuple
    n_slots: int = 20
    dt: float = 0.5
    process_noise_accel: float = 0.05
    noise: NoiseModel = field(default_factory=NoiseModel)
    active_beams: int = 256
    mmwave_beams: int = 64
    cluster_model: ClusterModel = field(default_factory=ClusterModel)
    cooperation: Cooperation = field(default_factory=Cooperation)
    k_sigma: float = 3.0
    association_gate: float = 9.21
    va_metric_gate: float = 5.0
    exchange_every: int = 5
    cluster_radius: float = 1.0
    gps_sigma: float = 3.0
    snr_threshold: float = 2e-3
    max_feature_age: float = 2.0
    max_feature_trace: float = 4.0
    seeds: tuple = (0,)

    @property
    def serving_ap(self) -> Anchor:
        for a in self.scene.anchors:
            if a.band is Band.MMWAVE:
                return a
        return self.scene.anchors[0]

    @property
    def sub6_ap(self) -> Optional[Anchor]:
        for a in self.scene.anchors:
            if a.band is Band.SUB6:
                return a
        return None

    def with_cooperation(self, **flags) -> "ScenarioConfig":
        from dataclasses import replace
        return replace(self, cooperation=replace(self.cooperation, **flags))


class _Obj:
    """Key access on one JSON object with unknown-key warnings."""

    def __init__(self, d, where):
        if not isinstance(d, dict):
            raise ConfigError(where or "<root>", "expected an object")
        self.d = d
        self.where = where
        self.used = set()

    def name(self, key):
        return f"{self.where}.{key}" if self.where else key

    def get(self, key, default=..., kind=None):
        self.used.add(key)
        if key not in self.d:
            if default is ...:
                raise ConfigError(self.name(key), "missing required field")
            return default
        v = self.d[key]
        if kind is int and (isinstance(v, bool) or not isinstance(v, int)):
            raise ConfigError(self.name(key), f"expected integer, got {v!r}")
        if kind is float:
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(self.name(key), f"expected finite number, got {v!r}")
            v = float(v)
        if kind is bool and not isinstance(v, bool):
            raise ConfigError(self.name(key), f"expected true/false, got {v!r}")
        if kind is list and not isinstance(v, list):
            raise ConfigError(self.name(key), "expected an array")
        return v

    def point(self, key, default=...):
        v = self.get(key, default)
        if v is default and default is not ...:
            return v
        try:
            if len(v) != 2:
                raise TypeError
            return as_point(v)
        except (TypeError, ValueError, GeometryError):
            raise ConfigError(self.name(key), f"expected [x, y], got {v!r}") from None

    def finish(self):
        for k in self.d:
            if k not in self.used:
                warnings.warn(f"unknown config key {self.name(k)!r} ignored", stacklevel=3)


def _positive(obj, key, value, strict=True):
    if (value <= 0) if strict else (value < 0):
        raise ConfigError(obj.name(key), f"must be {'>' if strict else '>='} 0, got {value}")
    return value


def _scene(obj: _Obj) -> Scene:
    anchors = []
    for i, a in enumerate(obj.get("anchors", kind=list)):
        o = _Obj(a, obj.name(f"anchors[{i}]"))
        band = o.get("band", "mmwave")
        try:
            band = Band(band)
        except ValueError:
            raise ConfigError(o.name("band"), f"expected 'sub6' or 'mmwave', got {band!r}") from None
        anchors.append(Anchor(o.get("id", kind=int), o.point("position"), band))
        o.finish()
    scat = []
    for i, s in enumerate(obj.get("scatterers", [], kind=list)):
        o = _Obj(s, obj.name(f"scatterers[{i}]"))
        seg = o.get("segment", kind=list)
        try:
            segment = Segment(as_point(seg[0]), as_point(seg[1]))
        except (IndexError, TypeError, ValueError, GeometryError) as exc:
            raise ConfigError(o.name("segment"), f"invalid segment: {exc}") from None
        kind = o.get("kind", "specular")
        if kind not in ("specular", "diffuse"):
            raise ConfigError(o.name("kind"), f"expected 'specular' or 'diffuse', got {kind!r}")
        scat.append(Scatterer(o.get("id", kind=int), segment, kind))
        o.finish()
    if not anchors:
        raise ConfigError(obj.name("anchors"), "at least one anchor required")
    try:
        return Scene(anchors, scat)
    except ValueError as exc:
        raise ConfigError(obj.where, str(exc)) from None


def _noise(obj: _Obj) -> NoiseModel:
    kw = {}
    for f in fields(NoiseModel):
        if f.name in obj.d:
            kw[f.name] = obj.get(f.name, kind=bool if f.type in ("bool", bool) else float)
    obj.finish()
    try:
        return NoiseModel(**kw)
    except ValueError as exc:
        raise ConfigError(obj.where, str(exc)) from None


def config_from_dict(d: dict) -> ScenarioConfig:
    """Build and validate a ``ScenarioConfig``; raises ``ConfigError``."""
    root = _Obj(d, "")
    scene_obj = _Obj(root.get("scene"), "scene")
    scene = _scene(scene_obj)
    scene_obj.finish()

    ues = []
    for i, u in enumerate(root.get("ue_trajectories", kind=list)):
        o = _Obj(u, f"ue_trajectories[{i}]")
        wps = o.get("waypoints", [], kind=list)
        wp = []
        for j in range(len(wps)):
            try:
                wp.append(as_point(wps[j]))
            except (TypeError, ValueError, GeometryError, IndexError):
                raise ConfigError(o.name(f"waypoints[{j}]"), "expected [x, y]") from None
        speed = _positive(o, "speed", o.get("speed", 0.0, kind=float), strict=False)
        if wp and speed <= 0:
            raise ConfigError(o.name("speed"), "waypoint trajectories need speed > 0")
        ues.append(UETrajectory(o.get("id", i, kind=int), o.point("position"),
                                o.point("velocity", Point2(0.0, 0.0)), tuple(wp), speed))
        o.finish()
    if not ues:
        raise ConfigError("ue_trajectories", "at least one UE required")
    if len({u.id for u in ues}) != len(ues):
        raise ConfigError("ue_trajectories", "duplicate UE ids")

    kw = {}
    n_slots = root.get("n_slots", 20, kind=int)
    if n_slots < 1:
        raise ConfigError("n_slots", f"must be >= 1, got {n_slots}")
    kw["n_slots"] = n_slots
    kw["dt"] = _positive(root, "dt", root.get("dt", 0.5, kind=float))
    kw["process_noise_accel"] = _positive(
        root, "process_noise_accel", root.get("process_noise_accel", 0.05, kind=float), False)
    if "noise" in root.d:
        kw["noise"] = _noise(_Obj(root.get("noise"), "noise"))

    if "beam_grids" in root.d:
        bg = _Obj(root.get("beam_grids"), "beam_grids")
        for key, attr in (("active", "active_beams"), ("mmwave", "mmwave_beams")):
            n = bg.get(key, getattr(ScenarioConfig, attr), kind=int)
            if n < 4:
                raise ConfigError(bg.name(key), f"must be >= 4, got {n}")
            kw[attr] = n
        bg.finish()
    if "cluster_model" in root.d:
        cm = _Obj(root.get("cluster_model"), "cluster_model")
        n_sub = cm.get("n_subpaths", 32, kind=int)
        if n_sub < 1:
            raise ConfigError(cm.name("n_subpaths"), "must be >= 1")
        kw["cluster_model"] = ClusterModel(
            n_sub,
            _positive(cm, "angle_spread", cm.get("angle_spread", 0.02, kind=float), False),
            _positive(cm, "delay_spread", cm.get("delay_spread", 1e-9, kind=float), False))
        cm.finish()
    if "cooperation" in root.d:
        co = _Obj(root.get("cooperation"), "cooperation")
        kw["cooperation"] = Cooperation(co.get("active_passive", True, kind=bool),
                                        co.get("crowdsourcing", False, kind=bool),
                                        co.get("multiband", False, kind=bool))
        co.finish()
    if "gates" in root.d:
        g = _Obj(root.get("gates"), "gates")
        kw["association_gate"] = _positive(g, "association", g.get("association", 9.21, kind=float))
        kw["va_metric_gate"] = _positive(g, "va_metric", g.get("va_metric", 5.0, kind=float))
        g.finish()
    for key, default, strict in (("k_sigma", 3.0, True), ("cluster_radius", 1.0, True),
                                 ("gps_sigma", 3.0, False), ("snr_threshold", 2e-3, True),
                                 ("max_feature_age", 2.0, True), ("max_feature_trace", 4.0, True)):
        kw[key] = _positive(root, key, root.get(key, default, kind=float), strict)
    ex = root.get("exchange_every", 5, kind=int)
    if ex < 1:
        raise ConfigError("exchange_every", "must be >= 1")
    kw["exchange_every"] = ex
    seeds = root.get("seeds", [0], kind=list)
    if not seeds:
        raise ConfigError("seeds", "at least one seed required")
    for j, s in enumerate(seeds):
        if isinstance(s, bool) or not isinstance(s, int) or s < 0:
            raise ConfigError(f"seeds[{j}]", f"expected non-negative integer, got {s!r}")
    kw["seeds"] = tuple(seeds)
    root.finish()
    return ScenarioConfig(scene=scene, ue_trajectories=tuple(ues), **kw)


def load_scenario(path) -> ScenarioConfig:
    """Read a UTF-8 JSON scenario file.  Unknown keys only warn."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc}") from None
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_dict(d)


NOMINAL = {
    "scene": {
        "anchors": [
            {"id": 0, "position": [0.0, 0.0], "band": "mmwave"},
            {"id": 1, "position": [0.0, 0.0], "band": "sub6"},
        ],
        "scatterers": [
            {"id": 0, "segment": [[-12.0, 8.0], [-1.0, 8.0]], "kind": "specular"},
            {"id": 1, "segment": [[12.0, -4.0], [12.0, 6.0]], "kind": "specular"},
            {"id": 2, "segment": [[-10.0, -6.0], [8.0, -6.0]], "kind": "diffuse"},
            {"id": 3, "segment": [[-9.0, 1.0], [-9.0, 7.0]], "kind": "specular"},
            {"id": 4, "segment": [[-2.9, 3.267], [-1.9, 3.933]], "kind": "specular"},
        ],
    },
    "ue_trajectories": [
        {"id": 0, "position": [-5.0, 4.0], "velocity": [0.4, 0.1]},
        {"id": 1, "position": [-7.0, 2.0], "velocity": [0.3, 0.3]},
    ],
    "n_slots": 10,
    "dt": 0.5,
    "seeds": [0],
}


def nominal_config(**overrides) -> ScenarioConfig:
    """The reference 2-UE scenario: one AP site, four walls and a pillar.

    The top and left walls never face the AP at near-normal incidence, so
    its echo sweep cannot chart them and only the terminals learn their
    virtual anchors.  The pillar cuts UE 0's direct path in the last slots.
    """
    d = json.loads(json.dumps(NOMINAL))
    d.update(overrides)
    return config_from_dict(d)
