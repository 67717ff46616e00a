"""Environment description and ground-truth multipath enumeration.

Specular facets are handled with the image method, point scatterers (and
rough facets, which act as a single coherent scatterer at their reference
specular point) by direct summation. Only facets tagged ``blocker`` occlude.
"""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .channel import SPEED_OF_LIGHT, FrequencyGrid
from .exceptions import InvalidGeometryError, InvalidPathError, ScenarioError
from .geometry import (
    SearchGrid,
    as_point,
    as_points,
    facet_normal,
    points_in_polygon,
    segments_blocked,
    unit,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

MECHANISMS = ("specular", "rough-scatter", "blocker")
HOP_KINDS = ("specular", "scatter", "diffraction-edge")


@dataclass
class Facet:
    vertices: np.ndarray
    mechanism: str = "specular"
    reflectivity: float = 1.0
    name: str = ""

    def __post_init__(self):
        v = as_points(self.vertices, "facet vertices")
        if not 3 <= len(v) <= 4:
            raise InvalidGeometryError("a facet has 3 or 4 vertices")
        if self.mechanism not in MECHANISMS:
            raise InvalidGeometryError(f"unknown facet mechanism {self.mechanism!r}")
        if not 0.0 <= self.reflectivity <= 1.0:
            raise InvalidGeometryError("reflectivity must lie in [0, 1]")
        n = facet_normal(v)
        if np.max(np.abs((v - v[0]) @ n)) > 1e-9:
            raise InvalidGeometryError("facet vertices are not coplanar")
        k = len(v)
        turns = [np.cross(v[(i + 1) % k] - v[i], v[(i + 2) % k] - v[(i + 1) % k]) @ n for i in range(k)]
        if min(turns) <= 0:
            raise InvalidGeometryError("facet is not a convex polygon")
        self.vertices = v

    @property
    def normal(self) -> np.ndarray:
        return facet_normal(self.vertices)

    @property
    def edges(self) -> list[tuple[np.ndarray, np.ndarray]]:
        v = self.vertices
        return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]

    def contains(self, points) -> np.ndarray:
        return points_in_polygon(points, self.vertices, strict=False)


@dataclass
class Environment:
    facets: list[Facet] = field(default_factory=list)
    point_scatterers: list[tuple[np.ndarray, float]] = field(default_factory=list)
    diffraction_edges: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)
    bounds: np.ndarray | None = None

    def __post_init__(self):
        self.point_scatterers = [(as_point(p, "scatterer"), float(a)) for p, a in self.point_scatterers]
        self.diffraction_edges = [(as_point(p, "edge"), as_point(q, "edge")) for p, q in self.diffraction_edges]
        if self.bounds is not None:
            b = np.asarray(self.bounds, dtype=float)
            if b.shape != (3, 2) or np.any(b[:, 1] <= b[:, 0]):
                raise InvalidGeometryError("environment bounds must be a non-empty (3, 2) box")
            self.bounds = b
        for p, q in self.diffraction_edges:
            if not any(_same_edge(p, q, e) for f in self.blockers for e in f.edges):
                raise InvalidGeometryError("diffraction edge does not coincide with a blocker edge")

    @property
    def blockers(self) -> list[Facet]:
        return [f for f in self.facets if f.mechanism == "blocker"]

    def with_facets(self, facets: Sequence[Facet]) -> "Environment":
        return Environment(list(facets), list(self.point_scatterers), [], self.bounds)


def _same_edge(p, q, edge, tol=1e-9) -> bool:
    a, b = edge
    return (np.allclose(p, a, atol=tol) and np.allclose(q, b, atol=tol)) or (
        np.allclose(p, b, atol=tol) and np.allclose(q, a, atol=tol)
    )


@dataclass
class ArrayLayout:
    """Tx/Rx element coordinates with 0-based reference indices."""

    tx: np.ndarray
    rx: np.ndarray
    ref_tx: int = 0
    ref_rx: int = 0

    def __post_init__(self):
        self.tx = as_points(self.tx, "tx elements")
        self.rx = as_points(self.rx, "rx elements")
        if not 0 <= self.ref_tx < len(self.tx) or not 0 <= self.ref_rx < len(self.rx):
            raise InvalidGeometryError("reference index out of range")
        for pts, name in ((self.tx, "tx"), (self.rx, "rx")):
            if len(pts) > 1:
                d = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
                if np.min(d[~np.eye(len(pts), dtype=bool)]) <= 0:
                    raise InvalidGeometryError(f"duplicate {name} element positions")

    @property
    def M(self) -> int:
        return len(self.tx)

    @property
    def N(self) -> int:
        return len(self.rx)

    @property
    def tx_ref(self) -> np.ndarray:
        return self.tx[self.ref_tx]

    @property
    def rx_ref(self) -> np.ndarray:
        return self.rx[self.ref_rx]

    def los_distances(self) -> np.ndarray:
        return np.linalg.norm(self.tx[:, None, :] - self.rx[None, :, :], axis=-1)


def make_array(layout: str, count, spacing: float, origin, direction=(1, 0, 0), direction2=(0, 1, 0), radius=None) -> np.ndarray:
    """Element coordinates for a linear, planar or circular aperture.

    ``spacing`` is in meters. Linear and planar arrays start at ``origin``;
    a circular array is centred on it and lies in the plane spanned by the two
    directions.
    """
    origin = as_point(origin, "origin")
    u = unit(direction)
    if layout == "linear":
        return origin + np.arange(int(count))[:, None] * spacing * u
    if layout == "planar":
        nx, ny = (int(c) for c in count)
        v = unit(direction2)
        i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        return origin + spacing * (i.ravel()[:, None] * u + j.ravel()[:, None] * v)
    if layout == "circular":
        count = int(count)
        v = unit(direction2 - (np.asarray(direction2, float) @ u) * u)
        r = radius if radius is not None else count * spacing / (2 * np.pi)
        phi = 2 * np.pi * np.arange(count) / count
        return origin + r * (np.cos(phi)[:, None] * u + np.sin(phi)[:, None] * v)
    raise ScenarioError(f"unknown array layout {layout!r}")


@dataclass
class PathTruth:
    """One ground-truth multipath.

    ``points`` are the reference-channel interaction points ``(K, 3)``;
    ``element_points`` ``(M, N, K, 3)`` is populated whenever a hop is
    specular. ``distances`` overrides the geometry (delay-only paths).
    """

    order: int
    points: np.ndarray
    mechanisms: tuple
    gain: complex
    visibility: np.ndarray
    element_points: np.ndarray | None = None
    amplitude_profile: np.ndarray | None = None
    facets: tuple = ()
    normals: np.ndarray | None = None
    label: str = ""
    distances: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        self.visibility = np.asarray(self.visibility, dtype=bool)
        self.mechanisms = tuple(self.mechanisms)
        if len(self.points) != self.order or len(self.mechanisms) != self.order:
            raise InvalidPathError("bounce order does not match points/mechanisms")
        if any(m not in HOP_KINDS for m in self.mechanisms):
            raise InvalidPathError(f"unknown hop mechanism in {self.mechanisms}")
        if not np.isfinite(self.gain):
            raise InvalidPathError("path gain must be finite")

    @property
    def is_specular(self) -> bool:
        return "specular" in self.mechanisms

    def check(self, arrays: ArrayLayout) -> None:
        if self.visibility.shape != (arrays.M, arrays.N):
            raise InvalidPathError("visibility mask does not match the arrays")
        if self.distances is not None:
            return
        if self.is_specular and self.element_points is None:
            raise InvalidPathError("specular path lacks per-element interaction points")
        if self.element_points is not None and self.element_points.shape != (arrays.M, arrays.N, self.order, 3):
            raise InvalidPathError("per-element points do not match the arrays")

    def element_tracks(self, arrays: ArrayLayout) -> np.ndarray:
        """Per-element hop coordinates ``(M, N, K + 2, 3)``."""
        M, N = arrays.M, arrays.N
        if self.element_points is not None:
            mid = self.element_points
        else:
            mid = np.broadcast_to(self.points, (M, N, self.order, 3))
        tx = np.broadcast_to(arrays.tx[:, None, None, :], (M, N, 1, 3))
        rx = np.broadcast_to(arrays.rx[None, :, None, :], (M, N, 1, 3))
        return np.concatenate([tx, mid, rx], axis=2)

    def element_distances(self, arrays: ArrayLayout) -> np.ndarray:
        self.check(arrays)
        if self.distances is not None:
            return np.asarray(self.distances, dtype=float)
        tracks = self.element_tracks(arrays)
        return np.linalg.norm(np.diff(tracks, axis=2), axis=-1).sum(axis=2)

    def reference_distance(self, arrays: ArrayLayout) -> float:
        return float(self.element_distances(arrays)[arrays.ref_tx, arrays.ref_rx])


# -- enumeration ---------------------------------------------------------------

def _specular_run(a, b, planes):
    """Image-method points for a run of specular planes between fixed endpoints.

    ``a`` and ``b`` broadcast to ``(..., 3)``; ``planes`` is a list of
    ``(anchor, normal)``. Returns points ``(..., k, 3)`` and the per-hop
    segment parameters ``(..., k)``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    shape = np.broadcast_shapes(a.shape, b.shape)
    images = [np.broadcast_to(a, shape)]
    for anchor, n in planes:
        src = images[-1]
        images.append(src - 2.0 * ((src - anchor) @ n)[..., None] * n)
    pts = [None] * len(planes)
    ts = [None] * len(planes)
    target = np.broadcast_to(b, shape)
    for k in range(len(planes) - 1, -1, -1):
        anchor, n = planes[k]
        img = images[k + 1]
        d = target - img
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = ((anchor - img) @ n) / denom
        p = img + t[..., None] * d
        pts[k] = p
        ts[k] = t
        target = p
    return np.stack(pts, axis=-2), np.stack(ts, axis=-1)


def _hop_points(hops, env: Environment, tx, rx):
    """Interaction points and validity for a hop sequence over element stacks.

    ``hops`` entries are ``("specular", facet_index)`` or ``("point", xyz)``.
    ``tx`` and ``rx`` broadcast against each other with trailing axis 3.
    """
    shape = np.broadcast_shapes(tx.shape, rx.shape)[:-1]
    K = len(hops)
    out = np.empty(shape + (K, 3))
    valid = np.ones(shape, dtype=bool)
    anchors = [np.broadcast_to(tx, shape + (3,))]
    anchor_idx = [-1]
    for k, (kind, val) in enumerate(hops):
        if kind == "point":
            out[..., k, :] = val
            anchors.append(np.broadcast_to(np.asarray(val, float), shape + (3,)))
            anchor_idx.append(k)
    anchors.append(np.broadcast_to(rx, shape + (3,)))
    anchor_idx.append(K)
    for j in range(len(anchor_idx) - 1):
        lo, hi = anchor_idx[j], anchor_idx[j + 1]
        run = list(range(lo + 1, hi))
        if not run:
            continue
        facets = [env.facets[hops[k][1]] for k in run]
        planes = [(f.vertices[0], f.normal) for f in facets]
        pts, ts = _specular_run(anchors[j], anchors[j + 1], planes)
        for i, k in enumerate(run):
            out[..., k, :] = pts[..., i, :]
            ok = np.isfinite(ts[..., i]) & (ts[..., i] > 0.0) & (ts[..., i] < 1.0)
            ok &= facets[i].contains(np.nan_to_num(pts[..., i, :]))
            valid &= ok
    return out, valid


def _interactors(env: Environment, arrays: ArrayLayout):
    """Hop candidates: facets (specular or rough) plus point scatterers with amplitudes."""
    facets = [(f.mechanism, i) for i, f in enumerate(env.facets) if f.mechanism in ("specular", "rough-scatter")]
    points = [(("point", np.asarray(p, float)), amp, f"scatterer {j}", -1)
              for j, (p, amp) in enumerate(env.point_scatterers)]
    return facets, points


def _make_path(hops, meta, env: Environment, arrays: ArrayLayout) -> PathTruth | None:
    # rough facets act as point scatterers pinned where the reference channel
    # would reflect specularly
    ref_hops = [("specular", h[1]) if h[0] == "rough-scatter" else h for h in hops]
    ref_pts, ok = _hop_points(ref_hops, env, arrays.tx_ref, arrays.rx_ref)
    if not ok:
        return None
    hops = [("point", ref_pts[k]) if h[0] == "rough-scatter" else h for k, h in enumerate(hops)]
    if any(np.linalg.norm(np.diff(np.vstack([arrays.tx_ref, ref_pts, arrays.rx_ref]), axis=0), axis=1) < 1e-9):
        return None
    mechanisms = tuple("specular" if h[0] == "specular" else "scatter" for h in hops)
    facets = tuple(m[2] for m in meta)
    normals = np.full((len(hops), 3), np.nan)
    for k, h in enumerate(hops):
        if h[0] == "specular":
            normals[k] = env.facets[h[1]].normal
    element_points = None
    if "specular" in mechanisms:
        element_points, _ = _hop_points(hops, env, arrays.tx[:, None, :], arrays.rx[None, :, :])
    d_ref = float(np.linalg.norm(np.diff(np.vstack([arrays.tx_ref, ref_pts, arrays.rx_ref]), axis=0), axis=1).sum())
    gain = float(np.prod([m[0] for m in meta])) / d_ref
    path = PathTruth(
        order=len(hops),
        points=ref_pts,
        mechanisms=mechanisms,
        gain=gain,
        visibility=np.ones((arrays.M, arrays.N), dtype=bool),
        element_points=element_points,
        facets=facets,
        normals=normals,
        label=" -> ".join(m[1] for m in meta),
    )
    path.visibility = visibility_mask(path, env, arrays)
    return path


def enumerate_paths(env: Environment, arrays: ArrayLayout, max_bounce: int = 2) -> list[PathTruth]:
    """LoS plus all one- and two-bounce tracks valid for the reference channel.

    Gains are the product of per-hop reflectivities/amplitudes times ``1/d``
    of the reference channel. Paths invisible on every element are dropped.
    Result is sorted by reference-channel distance.
    """
    if max_bounce not in (1, 2):
        raise ValueError("max_bounce must be 1 or 2")
    paths = []
    los = PathTruth(0, np.empty((0, 3)), (), 0.0, np.ones((arrays.M, arrays.N), dtype=bool), label="LoS")
    los.gain = 1.0 / float(np.linalg.norm(arrays.tx_ref - arrays.rx_ref))
    los.visibility = visibility_mask(los, env, arrays)
    if los.visibility.any():
        paths.append(los)

    facets, points = _interactors(env, arrays)
    items = [(h, (env.facets[h[1]].reflectivity, env.facets[h[1]].name or f"facet {h[1]}", h[1])) for h in facets]
    items += [(h, (amp, name, fidx)) for h, amp, name, fidx in points]
    for h, meta in items:
        p = _make_path([h], [meta], env, arrays)
        if p is not None:
            paths.append(p)
    if max_bounce >= 2:
        for (h1, m1), (h2, m2) in itertools.permutations(items, 2):
            if h1[0] != "point" and h2[0] != "point" and h1[1] == h2[1]:
                continue
            p = _make_path([h1, h2], [m1, m2], env, arrays)
            if p is not None:
                paths.append(p)
    paths = [p for p in paths if p.visibility.any()]
    paths.sort(key=lambda p: p.reference_distance(arrays))
    return paths


def visibility_mask(path: PathTruth, env: Environment, arrays: ArrayLayout) -> np.ndarray:
    """Element-wise visibility: no leg crosses a blocker, specular points stay on their facet."""
    tracks = path.element_tracks(arrays)
    mask = ~np.any(segments_blocked(tracks[:, :, :-1, :], tracks[:, :, 1:, :], env.blockers), axis=-1)
    for k, mech in enumerate(path.mechanisms):
        if mech == "specular" and path.element_points is not None and k < len(path.facets) and path.facets[k] >= 0:
            facet = env.facets[path.facets[k]]
            mask &= facet.contains(path.element_points[:, :, k, :])
    return mask


def diffraction_sources(env: Environment, arrays: ArrayLayout, taper_db_per_m: float = 30.0,
                        coefficient: float = 0.1) -> list[PathTruth]:
    """One coherent edge-diffraction path per flagged blocker edge.

    The interaction point is the edge midpoint, shared by every element. The
    amplitude of element pair ``(m, n)`` decays by ``taper_db_per_m`` per meter
    of shadow depth, the distance of ``rx_n`` from the shadow boundary (the
    ray ``tx_m -> midpoint``) when the direct ``tx_m -> rx_n`` segment is
    blocked.
    """
    if taper_db_per_m < 0:
        raise ValueError("taper must be non-negative")
    out = []
    blocked = segments_blocked(arrays.tx[:, None, :], arrays.rx[None, :, :], env.blockers)
    for j, (p, q) in enumerate(env.diffraction_edges):
        mid = 0.5 * (p + q)
        u = mid[None, :] - arrays.tx
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        w = arrays.rx[None, :, :] - arrays.tx[:, None, :]
        depth = np.linalg.norm(w - (w @ u[0])[..., None] * u[0] if len(u) == 1 else
                               w - np.einsum("mnk,mk->mn", w, u)[..., None] * u[:, None, :], axis=-1)
        depth = np.where(blocked, depth, 0.0)
        profile = 10.0 ** (-taper_db_per_m * depth / 20.0)
        d_ref = np.linalg.norm(mid - arrays.tx_ref) + np.linalg.norm(mid - arrays.rx_ref)
        out.append(PathTruth(
            order=1,
            points=mid[None, :],
            mechanisms=("diffraction-edge",),
            gain=coefficient / d_ref,
            visibility=np.ones((arrays.M, arrays.N), dtype=bool),
            amplitude_profile=profile,
            facets=(-1,),
            label=f"edge {j}",
        ))
    return out


# -- scenario files ------------------------------------------------------------

@dataclass
class Scenario:
    environment: Environment
    arrays: ArrayLayout
    freq: FrequencyGrid
    max_bounce: int = 2
    diffraction_taper_db_per_m: float = 30.0
    diffraction_coefficient: float = 0.1
    snr_db: float = float("inf")
    name: str = ""
    source: str | None = None

    @property
    def bounds(self) -> np.ndarray:
        return self.environment.bounds

    def truth_paths(self) -> list[PathTruth]:
        paths = enumerate_paths(self.environment, self.arrays, self.max_bounce)
        if self.environment.diffraction_edges:
            paths += diffraction_sources(self.environment, self.arrays, self.diffraction_taper_db_per_m,
                                         self.diffraction_coefficient)
            paths.sort(key=lambda p: p.reference_distance(self.arrays))
        return paths

    def grid(self, spacing: float, tolerance: float | None = None) -> SearchGrid:
        return SearchGrid(self.bounds, spacing, tolerance)


_KEYS = {
    "": {"name", "room", "band", "tx", "rx", "facet", "scatterer", "blocker", "simulation"},
    "room": {"bounds"},
    "band": {"start_hz", "center_hz", "spacing_hz", "count"},
    "array": {"layout", "count", "spacing_wavelengths", "spacing_m", "origin", "direction", "direction2",
              "radius", "positions", "reference"},
    "facet": {"name", "vertices", "mechanism", "reflectivity"},
    "scatterer": {"point", "amplitude"},
    "blocker": {"name", "vertices", "diffraction_edges"},
    "simulation": {"max_bounce", "snr_db", "diffraction_taper_db_per_m", "diffraction_coefficient"},
}


def _line_of(text: str, key: str) -> int | None:
    for i, line in enumerate(text.splitlines(), 1):
        if re.match(rf"^\s*\[*\s*{re.escape(key)}\s*[\]=]", line):
            return i
    return None


def _check_keys(section: dict, allowed: set, where: str, text: str) -> None:
    for key in section:
        if key not in allowed:
            line = _line_of(text, key)
            at = f" (line {line})" if line else ""
            raise ScenarioError(f"unknown key {key!r} in [{where}]{at}")


def _require(section: dict, key: str, where: str, text: str):
    if key not in section:
        line = _line_of(text, where)
        at = f" (line {line})" if line else ""
        raise ScenarioError(f"missing key {key!r} in [{where}]{at}")
    return section[key]


def parse_band(section: dict, text: str = "") -> FrequencyGrid:
    _check_keys(section, _KEYS["band"], "band", text)
    spacing = float(_require(section, "spacing_hz", "band", text))
    count = int(_require(section, "count", "band", text))
    if "start_hz" in section:
        start = float(section["start_hz"])
    elif "center_hz" in section:
        start = float(section["center_hz"]) - 0.5 * (count - 1) * spacing
    else:
        raise ScenarioError("[band] needs start_hz or center_hz")
    return FrequencyGrid(start, spacing, count)


def parse_array(section: dict, where: str, wavelength: float, text: str = "") -> tuple[np.ndarray, int]:
    _check_keys(section, _KEYS["array"], where, text)
    ref = int(section.get("reference", 1)) - 1
    if "positions" in section:
        return as_points(section["positions"], f"{where} positions"), ref
    layout = section.get("layout", "linear")
    count = _require(section, "count", where, text)
    if "spacing_m" in section:
        spacing = float(section["spacing_m"])
    else:
        spacing = float(_require(section, "spacing_wavelengths", where, text)) * wavelength
    pts = make_array(
        layout,
        count,
        spacing,
        _require(section, "origin", where, text),
        section.get("direction", (1.0, 0.0, 0.0)),
        section.get("direction2", (0.0, 1.0, 0.0)),
        section.get("radius"),
    )
    return pts, ref


def parse_scenario(text: str, source: str | None = None) -> Scenario:
    """Parse scenario TOML text. Errors carry line numbers where known."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{source or 'scenario'}: {exc}") from exc
    try:
        _check_keys(doc, _KEYS[""], "top level", text)
        room = _require(doc, "room", "room", text)
        _check_keys(room, _KEYS["room"], "room", text)
        bounds = np.asarray(_require(room, "bounds", "room", text), dtype=float)
        freq = parse_band(_require(doc, "band", "band", text), text)
        tx, ref_tx = parse_array(_require(doc, "tx", "tx", text), "tx", freq.wavelength, text)
        rx, ref_rx = parse_array(_require(doc, "rx", "rx", text), "rx", freq.wavelength, text)
        arrays = ArrayLayout(tx, rx, ref_tx, ref_rx)

        facets, edges, scatterers = [], [], []
        for sec in doc.get("facet", []):
            _check_keys(sec, _KEYS["facet"], "facet", text)
            facets.append(Facet(
                np.asarray(_require(sec, "vertices", "facet", text), dtype=float),
                sec.get("mechanism", "specular"),
                float(sec.get("reflectivity", 1.0)),
                sec.get("name", ""),
            ))
        for sec in doc.get("blocker", []):
            _check_keys(sec, _KEYS["blocker"], "blocker", text)
            f = Facet(np.asarray(_require(sec, "vertices", "blocker", text), dtype=float), "blocker", 0.0,
                      sec.get("name", ""))
            facets.append(f)
            for k in sec.get("diffraction_edges", []):
                if not 0 <= int(k) < len(f.vertices):
                    raise ScenarioError(f"diffraction edge index {k} out of range (line {_line_of(text, 'diffraction_edges')})")
                edges.append(f.edges[int(k)])
        for sec in doc.get("scatterer", []):
            _check_keys(sec, _KEYS["scatterer"], "scatterer", text)
            scatterers.append((_require(sec, "point", "scatterer", text), float(sec.get("amplitude", 1.0))))
        env = Environment(facets, scatterers, edges, bounds)

        sim = doc.get("simulation", {})
        _check_keys(sim, _KEYS["simulation"], "simulation", text)
        return Scenario(
            environment=env,
            arrays=arrays,
            freq=freq,
            max_bounce=int(sim.get("max_bounce", 2)),
            diffraction_taper_db_per_m=float(sim.get("diffraction_taper_db_per_m", 30.0)),
            diffraction_coefficient=float(sim.get("diffraction_coefficient", 0.1)),
            snr_db=float(sim.get("snr_db", float("inf"))),
            name=str(doc.get("name", "")),
            source=source,
        )
    except ScenarioError:
        raise
    except (InvalidGeometryError, TypeError, ValueError) as exc:
        raise ScenarioError(f"{source or 'scenario'}: {exc}") from exc


def load_scenario(path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), str(path))


__all__ = [
    "ArrayLayout",
    "Environment",
    "Facet",
    "PathTruth",
    "Scenario",
    "SPEED_OF_LIGHT",
    "diffraction_sources",
    "enumerate_paths",
    "load_scenario",
    "make_array",
    "parse_scenario",
    "visibility_mask",
]
