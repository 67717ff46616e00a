"""Geometric primitives shared by the simulator and the estimator.

Points are plain ``numpy`` arrays of shape ``(3,)`` (stacks of points have a
trailing axis of length 3). Two-dimensional scenes use ``z = 0`` and a grid
that is a single cell thick in ``z``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence

import numpy as np

from .exceptions import (
    DegenerateEllipsoidError,
    GrazingIncidenceError,
    InvalidGeometryError,
    NoIntersectionError,
)

_UNIT_TOL = 1e-12


def as_point(p, name: str = "point") -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.shape != (3,):
        raise InvalidGeometryError(f"{name} must have shape (3,), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidGeometryError(f"{name} has non-finite coordinates")
    return arr


def as_points(p, name: str = "points") -> np.ndarray:
    arr = np.asarray(p, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise InvalidGeometryError(f"{name} must have shape (K, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidGeometryError(f"{name} has non-finite coordinates")
    return arr


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n < _UNIT_TOL:
        raise InvalidGeometryError("cannot normalize a zero-length vector")
    return v / n


@dataclass(frozen=True)
class Plane:
    """Infinite plane through ``anchor`` with unit ``normal``."""

    anchor: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        anchor = as_point(self.anchor, "anchor")
        normal = as_point(self.normal, "normal")
        if abs(np.linalg.norm(normal) - 1.0) > 1e-12:
            normal = unit(normal)
        object.__setattr__(self, "anchor", anchor)
        object.__setattr__(self, "normal", normal)

    def signed_distance(self, points) -> np.ndarray:
        return (np.asarray(points, dtype=float) - self.anchor) @ self.normal


@dataclass(frozen=True)
class SearchGrid:
    """Axis-aligned box sampled at cell centres.

    ``bounds`` is a ``(3, 2)`` array of ``[lo, hi]`` per axis. The number of
    cells per axis is ``floor((hi - lo) / spacing)`` (at least one); points sit
    at the cell centres so a 2-D scene uses ``z`` bounds ``[-h, h]`` with
    ``2h = spacing``. ``tolerance`` defaults to half the cell diagonal.
    """

    bounds: np.ndarray
    spacing: float
    tolerance: float | None = None
    shape: tuple = field(init=False)

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float)
        if b.shape != (3, 2) or not np.all(np.isfinite(b)):
            raise InvalidGeometryError("grid bounds must be a finite (3, 2) array")
        if np.any(b[:, 1] <= b[:, 0]):
            raise InvalidGeometryError("grid box must have positive volume")
        if not self.spacing > 0:
            raise InvalidGeometryError("grid spacing must be positive")
        tol = np.sqrt(3.0) / 2.0 * self.spacing if self.tolerance is None else float(self.tolerance)
        if not tol > 0:
            raise InvalidGeometryError("grid tolerance must be positive")
        counts = np.maximum(1, np.floor((b[:, 1] - b[:, 0]) / self.spacing + 1e-9).astype(int))
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "tolerance", tol)
        object.__setattr__(self, "shape", tuple(int(c) for c in counts))

    def axis(self, k: int) -> np.ndarray:
        i = np.arange(self.shape[k])
        return np.round(self.bounds[k, 0] + (i + 0.5) * self.spacing, 9)

    @cached_property
    def points(self) -> np.ndarray:
        """All grid points, ``(V, 3)``, in lexicographic (x, y, z) order."""
        xs, ys, zs = np.meshgrid(self.axis(0), self.axis(1), self.axis(2), indexing="ij")
        return np.stack([xs.ravel(), ys.ravel(), zs.ravel()], axis=1)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return np.all((p >= lo - 1e-9) & (p <= hi + 1e-9), axis=-1)

    def with_tolerance(self, tolerance: float) -> "SearchGrid":
        return SearchGrid(self.bounds, self.spacing, tolerance)


def path_distance(hops) -> float:
    """Length of the polyline Tx -> interaction points -> Rx."""
    pts = np.asarray(hops, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 2:
        raise InvalidGeometryError("hops must be a (K+2, 3) array with K >= 0")
    if not np.all(np.isfinite(pts)):
        raise InvalidGeometryError("hops contain non-finite coordinates")
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def ellipsoid_candidates(grid: SearchGrid, focus_a, focus_b, total_distance: float) -> np.ndarray:
    """Grid points whose focal distance sum matches ``total_distance`` within tolerance."""
    a = as_point(focus_a, "focus_a")
    b = as_point(focus_b, "focus_b")
    if not np.isfinite(total_distance) or total_distance <= np.linalg.norm(a - b):
        raise DegenerateEllipsoidError(
            f"distance {total_distance!r} does not exceed focal separation {np.linalg.norm(a - b):.6g}"
        )
    pts = grid.points
    s = np.linalg.norm(pts - a, axis=1) + np.linalg.norm(pts - b, axis=1)
    return pts[np.abs(s - total_distance) <= grid.tolerance]


def second_hop_candidates(grid: SearchGrid, first_hop, rx_ref, tx_ref, total_distance: float) -> np.ndarray:
    """Second interaction points of a two-bounce track with a fixed first hop.

    The remaining budget after the leg ``tx_ref -> first_hop`` is shared by the
    legs ``first_hop -> r -> rx_ref``.
    """
    r1 = as_point(first_hop, "first_hop")
    tx = as_point(tx_ref, "tx_ref")
    budget = total_distance - np.linalg.norm(tx - r1)
    return ellipsoid_candidates(grid, r1, rx_ref, budget)


def reflection_normal(point, prev, next) -> np.ndarray:
    """Unit normal bisecting the incoming and outgoing legs at ``point``."""
    p = as_point(point)
    u = p - as_point(prev, "prev")
    w = p - as_point(next, "next")
    nu, nw = np.linalg.norm(u), np.linalg.norm(w)
    if nu < _UNIT_TOL or nw < _UNIT_TOL:
        raise InvalidGeometryError("reflection point coincides with a neighbour")
    s = u / nu + w / nw
    ns = np.linalg.norm(s)
    if ns < 1e-12:
        raise GrazingIncidenceError("grazing incidence: no reflection normal")
    return s / ns


def mirror_point(source, plane: Plane) -> np.ndarray:
    s = as_point(source, "source")
    n = plane.normal
    return s - 2.0 * n * (n @ (s - plane.anchor))


class Intersection(NamedTuple):
    point: np.ndarray
    t: float
    within_segment: bool


def line_plane_intersection(a, b, plane: Plane) -> Intersection:
    a = as_point(a, "a")
    b = as_point(b, "b")
    d = b - a
    denom = plane.normal @ d
    if abs(denom) <= 1e-12 * np.linalg.norm(d) or np.linalg.norm(d) == 0:
        raise NoIntersectionError("line is parallel to the plane")
    t = float(plane.normal @ (plane.anchor - a) / denom)
    return Intersection(a + t * d, t, 0.0 <= t <= 1.0)


def image_distances(tx, rx, anchor, normal) -> np.ndarray:
    """Specular path lengths ``|mirror(tx_m) - rx_n|`` for a batch of planes.

    ``anchor`` and ``normal`` are ``(C, 3)``; returns ``(C, M, N)``.
    """
    anchor = np.atleast_2d(anchor)
    normal = np.atleast_2d(normal)
    off = np.einsum("mk,ck->cm", tx, normal) - np.einsum("ck,ck->c", anchor, normal)[:, None]
    img = tx[None, :, :] - 2.0 * off[:, :, None] * normal[:, None, :]
    return np.linalg.norm(img[:, :, None, :] - rx[None, None, :, :], axis=-1)


def per_element_reflection_points(ref_point, normal, tx_elements, rx_elements, bounds=None):
    """Specular points on a plane for every Tx/Rx element pair.

    Returns ``(points, visible)`` with shapes ``(M, N, 3)`` and ``(M, N)``. A
    cell is visible when the mirror-image line meets the plane inside the
    image-to-Rx segment and, if ``bounds`` (a ``(3, 2)`` box or SearchGrid) is
    given, inside that box. Elements lying on the plane are invisible.
    """
    plane = Plane(ref_point, normal)
    tx = as_points(tx_elements, "tx_elements")
    rx = as_points(rx_elements, "rx_elements")
    n = plane.normal
    img = tx - 2.0 * ((tx - plane.anchor) @ n)[:, None] * n
    d = rx[None, :, :] - img[:, None, :]
    denom = d @ n
    num = ((plane.anchor - img) @ n)[:, None]
    on_plane = (np.abs((tx - plane.anchor) @ n)[:, None] < 1e-12) | (np.abs((rx - plane.anchor) @ n)[None, :] < 1e-12)
    safe = np.abs(denom) > 1e-12 * np.maximum(np.linalg.norm(d, axis=-1), 1e-300)
    t = np.where(safe, num / np.where(safe, denom, 1.0), np.nan)
    pts = img[:, None, :] + t[..., None] * d
    visible = safe & ~on_plane & (t >= 0.0) & (t <= 1.0)
    if bounds is not None:
        box = bounds.bounds if isinstance(bounds, SearchGrid) else np.asarray(bounds, dtype=float)
        inside = np.all((pts >= box[:, 0] - 1e-9) & (pts <= box[:, 1] + 1e-9), axis=-1)
        visible &= inside
    return pts, visible


def facet_normal(vertices) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    return unit(np.cross(v[1] - v[0], v[2] - v[0]))


def points_in_polygon(points, vertices, strict: bool = True, tol: float = 1e-9) -> np.ndarray:
    """Whether coplanar ``points`` lie inside the convex polygon ``vertices``.

    With ``strict`` the boundary (within ``tol``) counts as outside.
    """
    v = np.asarray(vertices, dtype=float)
    p = np.asarray(points, dtype=float)
    n = facet_normal(v)
    inside = np.ones(p.shape[:-1], dtype=bool)
    for k in range(len(v)):
        e = v[(k + 1) % len(v)] - v[k]
        s = np.cross(e, p - v[k]) @ n / np.linalg.norm(e)
        inside &= s > tol if strict else s >= -tol
    return inside


def _vertices(facet) -> np.ndarray:
    return np.asarray(getattr(facet, "vertices", facet), dtype=float)


def segments_blocked(a, b, blockers: Sequence) -> np.ndarray:
    """Vectorized :func:`segment_blocked` over broadcastable stacks of endpoints."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    shape = np.broadcast_shapes(a.shape, b.shape)[:-1]
    a = np.broadcast_to(a, shape + (3,))
    b = np.broadcast_to(b, shape + (3,))
    hit = np.zeros(shape, dtype=bool)
    d = b - a
    for facet in blockers:
        v = _vertices(facet)
        n = facet_normal(v)
        denom = d @ n
        ok = np.abs(denom) > 1e-12 * np.linalg.norm(d, axis=-1)
        t = np.where(ok, ((v[0] - a) @ n) / np.where(ok, denom, 1.0), -1.0)
        ok &= (t > 1e-12) & (t < 1.0 - 1e-12)
        if not ok.any():
            continue
        p = a + t[..., None] * d
        hit |= ok & points_in_polygon(p, v, strict=True)
    return hit


def segment_blocked(a, b, blockers: Sequence) -> bool:
    """True iff the open segment ``a -> b`` crosses the interior of any blocker facet."""
    return bool(segments_blocked(as_point(a, "a"), as_point(b, "b"), blockers))


def project_to_ellipsoid(points, focus_a, focus_b, total_distance, iters: int = 6) -> np.ndarray:
    """Move points along the focal-sum gradient until ``|r-a| + |r-b| = d``.

    ``points`` is ``(..., 3)``; ``focus_a`` and ``total_distance`` may be
    batched to match. Newton steps on the focal sum; points already on the
    surface are returned unchanged.
    """
    r = np.array(points, dtype=float, copy=True)
    a = np.asarray(focus_a, dtype=float)
    b = np.asarray(focus_b, dtype=float)
    d = np.asarray(total_distance, dtype=float)
    for _ in range(iters):
        u = r - a
        w = r - b
        nu = np.linalg.norm(u, axis=-1, keepdims=True)
        nw = np.linalg.norm(w, axis=-1, keepdims=True)
        g = u / np.maximum(nu, 1e-300) + w / np.maximum(nw, 1e-300)
        err = (nu + nw)[..., 0] - d
        gg = np.sum(g * g, axis=-1)
        step = np.where(gg > 1e-24, err / np.maximum(gg, 1e-24), 0.0)
        r -= step[..., None] * g
        if np.all(np.abs(err) < 1e-13):
            break
    return r
