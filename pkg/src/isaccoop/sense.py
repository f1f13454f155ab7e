"""
Estimation primitives for active and passive sensing.

Every estimator returns a ``Gaussian2``: a position mean plus a first-order
(polar -> Cartesian Jacobian) covariance.  Angles follow the uplink
convention of :mod:`isaccoop.world`: AOD at the UE, AOA at the AP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import geom
from .errors import (DegenerateFusionError, InfeasibleGeometryError, MeasurementError,
                     NoScattererError)
from .geom import Point2, Segment
from .world import SPEED_OF_LIGHT, NoiseModel

# Added to every covariance before inversion [m^2].
REGULARIZATION = 1e-9
# Lower bound on the isotropic variance of a shape-derived VA [m^2].
SHAPE_VAR_FLOOR = 1e-4

_EYE = np.eye(2)


@dataclass
class Gaussian2:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float).reshape(2)
        self.cov = np.asarray(self.cov, dtype=float).reshape(2, 2)

    @property
    def trace(self) -> float:
        return float(self.cov[0, 0] + self.cov[1, 1])

    def mahalanobis2(self, x) -> float:
        d = np.asarray(x, dtype=float) - self.mean
        return float(d @ np.linalg.solve(self.cov + REGULARIZATION * _EYE, d))

    def copy(self) -> "Gaussian2":
        return Gaussian2(self.mean.copy(), self.cov.copy())


class WeightedPoint(NamedTuple):
    point: Point2
    weight: float


@dataclass
class Polyline:
    """Ordered scatterer outline.

    ``residual`` is the weighted RMS distance of the supporting reflection
    points from the outline; ``weight`` their total weight.
    """

    vertices: np.ndarray
    residual: float = 0.0
    weight: float = 1.0

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        if len(self.vertices) < 2:
            raise ValueError("polyline needs at least 2 vertices")
        if np.any(np.all(self.vertices[1:] == self.vertices[:-1], axis=1)):
            raise ValueError("consecutive polyline vertices must differ")

    def edges(self) -> list:
        v = self.vertices
        return [Segment(Point2(*v[i]), Point2(*v[i + 1])) for i in range(len(v) - 1)]

    def edge_array(self) -> np.ndarray:
        return np.stack([self.vertices[:-1], self.vertices[1:]], axis=1)


def mahalanobis2(a: Gaussian2, b: Gaussian2) -> float:
    """Squared Mahalanobis distance between two independent estimates."""
    d = a.mean - b.mean
    s = a.cov + b.cov + REGULARIZATION * _EYE
    return float(d @ np.linalg.solve(s, d))


def polar_cov(bearing: float, sigma_radial: float, sigma_tangential: float) -> np.ndarray:
    """Covariance with std ``sigma_radial`` along ``bearing`` and
    ``sigma_tangential`` across it."""
    c, s = math.cos(bearing), math.sin(bearing)
    u = np.array([c, s])
    v = np.array([-s, c])
    return sigma_radial ** 2 * np.outer(u, u) + sigma_tangential ** 2 * np.outer(v, v)


def _check_toa(m) -> float:
    if not m.toa > 0:
        raise MeasurementError(f"non-positive TOA {m.toa}")
    return SPEED_OF_LIGHT * m.toa


def reflection_points_from_echoes(ap_pos, echoes) -> list:
    """Map each echo to the reflection point half its round-trip range away."""
    ax, ay = ap_pos[0], ap_pos[1]
    out = []
    for e in echoes:
        r = 0.5 * SPEED_OF_LIGHT * e.toa
        out.append(WeightedPoint(Point2(ax + r * math.cos(e.beam), ay + r * math.sin(e.beam)),
                                 float(e.amplitude)))
    return out


def _principal_frame(p: np.ndarray, w: np.ndarray):
    c = (w[:, None] * p).sum(0) / w.sum()
    d = p - c
    cov = (w[:, None, None] * (d[:, :, None] * d[:, None, :])).sum(0) / w.sum()
    _, vecs = np.linalg.eigh(cov)
    e = vecs[:, 1]
    if (abs(e[0]) > 1e-12 and e[0] < 0) or (abs(e[0]) <= 1e-12 and e[1] < 0):
        e = -e
    n = np.array([-e[1], e[0]])
    return c, e, n


def _local_linear(x: np.ndarray, y: np.ndarray, w: np.ndarray, h: float) -> np.ndarray:
    """Kernel-weighted local linear fit of y(x), evaluated at every x."""
    if h <= 0:
        return y.copy()
    dx = x[None, :] - x[:, None]
    k = w[None, :] * np.exp(-0.5 * (dx / h) ** 2)
    s0 = k.sum(1)
    s1 = (k * dx).sum(1)
    s2 = (k * dx * dx).sum(1)
    t0 = (k * y[None, :]).sum(1)
    t1 = (k * dx * y[None, :]).sum(1)
    det = s0 * s2 - s1 * s1
    ok = det > 1e-12 * np.maximum(s0 * s2, 1e-300)
    fit = np.where(ok, (s2 * t0 - s1 * t1) / np.where(ok, det, 1.0), t0 / s0)
    return fit


def cluster_points(points: np.ndarray, radius: float) -> np.ndarray:
    """Single-linkage cluster labels for threshold ``radius``."""
    n = len(points)
    if n == 0:
        return np.zeros(0, dtype=int)
    pairs = cKDTree(points).query_pairs(radius, output_type="ndarray")
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, labels = connected_components(graph, directed=False)
    return labels


def interpolate_shape(points: Sequence[WeightedPoint], cluster_radius: float,
                      smoothing: Optional[float] = None) -> list:
    """Turn discrete reflection points into scatterer outlines.

    Points are grouped by single linkage at ``cluster_radius``; singleton
    groups are dropped.  Within a group, points are ordered along the
    weighted principal axis and joined in that order.  Vertex offsets from
    the axis are smoothed by a weighted local linear fit with Gaussian
    bandwidth ``smoothing`` (default ``cluster_radius / 4``; 0 disables),
    so high-amplitude points dominate the outline.
    """
    if not points:
        return []
    h = cluster_radius / 4 if smoothing is None else smoothing
    p = np.array([wp.point for wp in points], dtype=float)
    w = np.array([wp.weight for wp in points], dtype=float)
    if np.any(w <= 0):
        raise ValueError("point weights must be > 0")
    labels = cluster_points(p, cluster_radius)
    shapes = []
    # Order clusters by first member for deterministic output.
    _, first = np.unique(labels, return_index=True)
    for lab in labels[np.sort(first)]:
        idx = np.flatnonzero(labels == lab)
        if idx.size < 2:
            continue
        pc, wc = p[idx], w[idx]
        c, e, n = _principal_frame(pc, wc)
        x = (pc - c) @ e
        y = (pc - c) @ n
        order = np.argsort(x, kind="stable")
        x, y, wc, pc = x[order], y[order], wc[order], pc[order]
        yfit = _local_linear(x, y, wc, h)
        verts = c + x[:, None] * e + yfit[:, None] * n
        far = np.linalg.norm(verts - pc, axis=1) > cluster_radius
        verts[far] = pc[far]
        keep = np.ones(len(verts), dtype=bool)
        keep[1:] = np.any(verts[1:] != verts[:-1], axis=1)
        verts = verts[keep]
        if len(verts) < 2:
            continue
        resid = math.sqrt(float((wc * (y - yfit) ** 2).sum() / wc.sum()))
        shapes.append(Polyline(verts, residual=resid, weight=float(wc.sum())))
    return shapes


def _rdp(v: np.ndarray, tol: float) -> list:
    """Ramer-Douglas-Peucker: indices of retained vertices."""
    keep = [0, len(v) - 1]
    stack = [(0, len(v) - 1)]
    while stack:
        i, j = stack.pop()
        if j <= i + 1:
            continue
        a, b = v[i], v[j]
        ab = b - a
        L = math.hypot(*ab)
        seg = v[i + 1:j] - a
        if L == 0:
            d = np.hypot(seg[:, 0], seg[:, 1])
        else:
            d = np.abs(ab[0] * seg[:, 1] - ab[1] * seg[:, 0]) / L
        k = int(np.argmax(d))
        if d[k] > tol:
            m = i + 1 + k
            keep.append(m)
            stack.append((i, m))
            stack.append((m, j))
    return sorted(set(keep))


def va_from_shape(ap_pos, shape: Polyline, simplify_tol: Optional[float] = None) -> list:
    """Virtual anchors implied by the straight pieces of ``shape``.

    The outline is first split into nearly straight runs (RDP with
    ``simplify_tol``, default ``3 * residual + 1 cm``; pass 0 to keep every
    edge).  Each run's vertices are fitted with a total-least-squares line
    and the AP is mirrored across it.  The isotropic variance is the largest
    eigenvalue of the line-fit uncertainty pushed through the mirror map,
    floored at ``SHAPE_VAR_FLOOR``.  The scatter about the line is the
    larger of the outline residual and the run's own fit residual, since
    light smoothing of sparse points leaves the former too optimistic.
    """
    v = shape.vertices
    tol = 3 * shape.residual + 0.01 if simplify_tol is None else simplify_tol
    cut = _rdp(v, tol) if tol > 0 else list(range(len(v)))
    p = np.asarray(ap_pos, dtype=float)
    out = []
    for i, j in zip(cut[:-1], cut[1:]):
        run = v[i:j + 1]
        c = run.mean(0)
        d = run - c
        _, vecs = np.linalg.eigh(d.T @ d)
        t = vecs[:, 1]
        n = np.array([-t[1], t[0]])
        off = float(n @ (p - c))
        mean = p - 2 * off * n
        m = len(run)
        sig2 = shape.residual ** 2
        if m > 2:
            sig2 = max(sig2, float(((d @ n) ** 2).sum()) / (m - 2))
        spread = float(((d @ t) ** 2).sum())
        g_delta = 2 * n
        g_alpha = -2 * (float(t @ (p - c)) * n + off * t)
        cov = sig2 / m * np.outer(g_delta, g_delta)
        if spread > 0:
            cov = cov + sig2 / spread * np.outer(g_alpha, g_alpha)
        var = max(float(np.linalg.eigvalsh(cov)[-1]), SHAPE_VAR_FLOOR)
        out.append(Gaussian2(mean, var * _EYE))
    return out


def localize_los(ap_pos, m, noise: NoiseModel) -> Gaussian2:
    """UE position from a LOS path: range c*toa along the AOA from the AP."""
    r = _check_toa(m)
    _, s_aoa, s_toa = noise.sigmas(getattr(m, "snr", None))
    mean = np.array([ap_pos[0] + r * math.cos(m.aoa), ap_pos[1] + r * math.sin(m.aoa)])
    return Gaussian2(mean, polar_cov(m.aoa, SPEED_OF_LIGHT * s_toa, r * s_aoa))


def localize_via_va(va, m, noise: NoiseModel) -> Gaussian2:
    """UE position from a specular path with known virtual anchor.

    UE, reflection point and VA are collinear, so the UE sits c*toa back from
    the VA along the departure bearing.  ``va`` may be a point or a
    ``Gaussian2``; in the latter case its covariance is added.
    """
    r = _check_toa(m)
    s_aod, _, s_toa = noise.sigmas(getattr(m, "snr", None))
    if isinstance(va, Gaussian2):
        centre, extra = va.mean, va.cov
    else:
        centre, extra = np.asarray(va, dtype=float), 0.0
    mean = centre - r * np.array([math.cos(m.aod), math.sin(m.aod)])
    return Gaussian2(mean, polar_cov(m.aod, SPEED_OF_LIGHT * s_toa, r * s_aod) + extra)


def _shape_edges(shapes: Sequence[Polyline]):
    edges, owner = [], []
    for k, sh in enumerate(shapes):
        for e in sh.edges():
            edges.append(e)
            owner.append(k)
    return edges, owner


def localize_via_diffuse(ap_pos, shapes: Sequence[Polyline], m, noise: NoiseModel) -> Gaussian2:
    """UE position from a reflected path and a mapped scatterer outline.

    The AOA ray from the AP fixes the reflection point on the outline; the
    remaining path length is walked back from it along the reversed AOD.
    """
    if not shapes:
        raise NoScattererError("no mapped shapes")
    total = _check_toa(m)
    edges, owner = _shape_edges(shapes)
    hit = geom.ray_cast(ap_pos, m.aoa, edges)
    if hit is None:
        raise NoScattererError(f"AOA ray {m.aoa:.4f} rad hits no mapped shape")
    leg1 = hit.distance
    d2 = total - leg1
    if d2 <= 0:
        raise InfeasibleGeometryError(
            f"path length {total:.3f} m shorter than AP-scatterer leg {leg1:.3f} m")
    s_aod, s_aoa, s_toa = noise.sigmas(getattr(m, "snr", None))
    s = np.array(hit.point)
    w = np.array([math.cos(m.aod), math.sin(m.aod)])
    w_perp = np.array([-w[1], w[0]])
    u = np.array([math.cos(m.aoa), math.sin(m.aoa)])
    u_perp = np.array([-u[1], u[0]])
    edge = edges[hit.segment_index]
    ev = np.array(edge.b - edge.a)
    nrm = np.array([-ev[1], ev[0]])
    nu = float(nrm @ u)
    dt_daoa = -leg1 * float(nrm @ u_perp) / nu if nu != 0 else 0.0
    g_aoa = dt_daoa * u + leg1 * u_perp + dt_daoa * w
    g_aod = -d2 * w_perp
    g_toa = -SPEED_OF_LIGHT * w
    cov = (s_aoa ** 2 * np.outer(g_aoa, g_aoa) + s_aod ** 2 * np.outer(g_aod, g_aod)
           + s_toa ** 2 * np.outer(g_toa, g_toa)
           + shapes[owner[hit.segment_index]].residual ** 2 * _EYE)
    return Gaussian2(s - d2 * w, cov)


def observe_va(ue: Gaussian2, m, noise: NoiseModel) -> Gaussian2:
    """Virtual-anchor observation from a specular path seen at ``ue``."""
    r = _check_toa(m)
    s_aod, _, s_toa = noise.sigmas(getattr(m, "snr", None))
    mean = ue.mean + r * np.array([math.cos(m.aod), math.sin(m.aod)])
    return Gaussian2(mean, polar_cov(m.aod, SPEED_OF_LIGHT * s_toa, r * s_aod) + ue.cov)


def fuse_gaussians(estimates: Sequence[Gaussian2]) -> Gaussian2:
    """Product of independent Gaussian estimates (information form)."""
    if not estimates:
        raise DegenerateFusionError("nothing to fuse")
    if len(estimates) == 1:
        return estimates[0]
    info = np.zeros((2, 2))
    eta = np.zeros(2)
    try:
        for g in estimates:
            li = np.linalg.inv(g.cov + REGULARIZATION * _EYE)
            info += li
            eta += li @ g.mean
        cov = np.linalg.inv(info)
    except np.linalg.LinAlgError as exc:
        raise DegenerateFusionError(str(exc)) from exc
    if not (np.all(np.isfinite(cov)) and np.all(np.isfinite(eta))):
        raise DegenerateFusionError("non-finite information matrix")
    cov = 0.5 * (cov + cov.T)
    return Gaussian2(cov @ eta, cov)
