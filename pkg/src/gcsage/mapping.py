"""Environment maps, truth matching, SNS reports and summary metrics."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .channel import SPEED_OF_LIGHT, to_db
from .exceptions import DegenerateEllipsoidError
from .geometry import Plane, SearchGrid, ellipsoid_candidates

LOCATED = ("scatter-1", "scatter-2", "reflect-1")


@dataclass
class MapEntry:
    """One localized object (or a delay-only annotation for high-bounce paths).

    ``point`` is the scatterer location or the reference reflection point of a
    reflector; reflectors also carry the per-element point set and the plane.
    """

    kind: str
    point: np.ndarray | None
    power_db: float
    path_index: int
    distance: float
    hop: int = 0
    plane: Plane | None = None
    point_set: np.ndarray | None = None

    @property
    def located(self) -> bool:
        return self.kind in LOCATED


@dataclass
class EnvironmentMap:
    entries: list = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    def located(self) -> list:
        return [e for e in self.entries if e.located]

    def paths(self) -> dict:
        """Located entries grouped by source path index, hops in order."""
        out = {}
        for e in self.located():
            out.setdefault(e.path_index, []).append(e)
        for v in out.values():
            v.sort(key=lambda e: e.hop)
        return out


def _power_db(amplitudes) -> float:
    return float(to_db(np.sum(np.abs(amplitudes) ** 2)))


def build_map(estimates, arrays=None) -> EnvironmentMap:
    """One entry per localized object; LoS paths are not mapped."""
    entries = []
    for i, est in enumerate(estimates):
        pdb = _power_db(est.amplitudes)
        if arrays is not None:
            dist = float(est.distances[arrays.ref_tx, arrays.ref_rx])
        else:
            dist = float(np.median(est.distances))
        if est.kind in ("scatter-1", "scatter-2"):
            for k, p in enumerate(np.asarray(est.points).reshape(-1, 3)):
                entries.append(MapEntry(est.kind, np.array(p), pdb, i, dist, hop=k))
        elif est.kind == "reflect-1":
            pts = None
            if est.element_points is not None:
                pts = np.asarray(est.element_points).reshape(-1, 3)
                if est.visible is not None:
                    pts = pts[np.asarray(est.visible).ravel()]
            entries.append(MapEntry(est.kind, np.asarray(est.points).reshape(-1, 3)[0], pdb, i, dist,
                                    plane=est.plane, point_set=pts))
        elif est.kind == "high-bounce":
            entries.append(MapEntry(est.kind, None, pdb, i, dist))
    return EnvironmentMap(entries)


# -- matching ------------------------------------------------------------------

@dataclass
class ErrorRow:
    bounce_order: int
    path: str
    hop: int
    truth: np.ndarray
    estimate: np.ndarray | None
    error: float
    path_index: int | None = None
    coverage: float | None = None


@dataclass
class ErrorReport:
    rows: list = field(default_factory=list)
    ghosts: list = field(default_factory=list)
    misses: list = field(default_factory=list)

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.error for r in self.rows if r.estimate is not None], dtype=float)

    @property
    def mean(self) -> float:
        e = self.errors
        return float(e.mean()) if e.size else float("nan")

    @property
    def max(self) -> float:
        e = self.errors
        return float(e.max()) if e.size else float("nan")

    def row(self, path: str, hop: int = 0) -> ErrorRow | None:
        for r in self.rows:
            if r.path == path and r.hop == hop:
                return r
        return None


def _reflector_error(entry: MapEntry, truth, arrays, tol: float):
    """Mean point-to-plane distance to the truth facet plus coverage of its per-element points."""
    normal = None if truth.normals is None else np.asarray(truth.normals)[0]
    if normal is None or not np.all(np.isfinite(normal)) or entry.point_set is None or not len(entry.point_set):
        return float(np.linalg.norm(entry.point - truth.points[0])), None
    err = float(np.mean(np.abs((entry.point_set - truth.points[0]) @ normal)))
    cover = None
    if truth.element_points is not None and arrays is not None:
        tp = truth.element_points[..., 0, :][truth.visibility]
        if len(tp):
            gap = np.min(np.linalg.norm(tp[:, None, :] - entry.point_set[None, :, :], axis=-1), axis=1)
            cover = float(np.mean(gap <= tol))
    return err, cover


def match_and_score(emap: EnvironmentMap, truths, arrays, freq, *, gate_bins: float = 2.0,
                    coverage_tol: float = 0.1) -> ErrorReport:
    """Greedy delay-gated, then nearest, matching of mapped paths to located truth paths.

    A mapped path and a truth path are eligible when their bounce orders agree
    and their reference distances differ by at most ``gate_bins`` delay bins.
    Eligible pairs are assigned in order of increasing mean hop error, each
    truth and each mapped path at most once.
    """
    gate = gate_bins * freq.delay_bin * SPEED_OF_LIGHT
    groups = emap.paths()
    located = [(j, t) for j, t in enumerate(truths) if t.order >= 1]
    pairs = []
    for i, hops in groups.items():
        order = 1 if hops[0].kind == "reflect-1" else len(hops)
        for j, t in located:
            if t.order != order or abs(hops[0].distance - t.reference_distance(arrays)) > gate:
                continue
            if hops[0].kind == "reflect-1":
                err, cover = _reflector_error(hops[0], t, arrays, coverage_tol)
                errs, covers = [err], [cover]
            else:
                errs = [float(np.linalg.norm(h.point - t.points[k])) for k, h in enumerate(hops)]
                covers = [None] * len(hops)
            pairs.append((float(np.mean(errs)), i, j, errs, covers))
    pairs.sort(key=lambda p: (p[0], p[1], p[2]))
    used_i, used_j, matched = set(), set(), {}
    for _, i, j, errs, covers in pairs:
        if i in used_i or j in used_j:
            continue
        used_i.add(i)
        used_j.add(j)
        matched[j] = (i, errs, covers)

    report = ErrorReport()
    for j, t in sorted(located, key=lambda jt: (jt[1].order, jt[1].reference_distance(arrays))):
        if j in matched:
            i, errs, covers = matched[j]
            for k in range(t.order):
                report.rows.append(ErrorRow(t.order, t.label, k, t.points[k], groups[i][k].point, errs[k], i,
                                            covers[k]))
        else:
            report.misses.append(j)
            for k in range(t.order):
                report.rows.append(ErrorRow(t.order, t.label, k, t.points[k], None, float("nan")))
    report.ghosts = sorted(i for i in groups if i not in used_i)
    return report


def write_error_csv(path, report: ErrorReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bounce_order", "path", "hop", "truth_x", "truth_y", "truth_z",
                    "est_x", "est_y", "est_z", "error_m", "path_index"])
        for r in report.rows:
            est = ["", "", ""] if r.estimate is None else [f"{v:.6f}" for v in r.estimate]
            err = "" if r.estimate is None else f"{r.error:.6f}"
            idx = "" if r.path_index is None else r.path_index + 1
            w.writerow([r.bounce_order, r.path, r.hop + 1, *[f"{v:.6f}" for v in r.truth], *est, err, idx])


# -- SNS -----------------------------------------------------------------------

@dataclass
class SNSReport:
    path_index: int
    kind: str
    magnitude_db: np.ndarray
    invisible: np.ndarray

    @property
    def invisible_fraction(self) -> float:
        return float(np.mean(self.invisible))


def _relative_db(amplitudes, threshold_db):
    mag = np.abs(np.asarray(amplitudes))
    if not np.any(mag > 0):
        return np.zeros(mag.shape), np.ones(mag.shape, dtype=bool)
    db = to_db(mag**2)
    # the visible reference is the median of cells within the threshold of
    # the current reference, starting from the strongest cell
    ref = float(db.max())
    for _ in range(20):
        vis = db >= ref - threshold_db
        new = float(np.median(db[vis]))
        if new == ref:
            break
        ref = new
    rel = db - ref
    return rel, rel < -threshold_db


def sns_report(estimates, threshold_db: float = 20.0) -> list[SNSReport]:
    """Per-path element magnitudes in dB relative to the median visible cell, with invisible flags."""
    out = []
    for i, est in enumerate(estimates):
        rel, inv = _relative_db(est.amplitudes, threshold_db)
        out.append(SNSReport(i, est.kind, rel, inv))
    return out


def mask_agreement(invisible, truth_visibility) -> float:
    """Fraction of cells where the estimated invisible mask agrees with the truth."""
    invisible = np.asarray(invisible, dtype=bool)
    truth_visibility = np.asarray(truth_visibility, dtype=bool)
    return float(np.mean(invisible == ~truth_visibility))


def write_sns_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path_index", "kind", "tx_index", "rx_index", "relative_db", "invisible"])
        for r in reports:
            M, N = r.magnitude_db.shape
            for m in range(M):
                for n in range(N):
                    w.writerow([r.path_index + 1, r.kind, m + 1, n + 1, f"{r.magnitude_db[m, n]:.6f}",
                                int(r.invisible[m, n])])


# -- sparsity and convergence ---------------------------------------------------

def sparsity_ratio(grid: SearchGrid, scenario) -> float:
    """Mean fraction of grid points inside the delay shell of each one-bounce truth path."""
    arrays = scenario.arrays
    fracs = []
    for t in scenario.truth_paths():
        if t.order != 1:
            continue
        try:
            c = ellipsoid_candidates(grid, arrays.tx_ref, arrays.rx_ref, t.reference_distance(arrays))
        except DegenerateEllipsoidError:
            c = np.empty((0, 3))
        fracs.append(len(c) / grid.size)
    return float(np.mean(fracs)) if fracs else 0.0


def convergence_rows(trace) -> list[tuple]:
    """``(iteration, objective, seconds)`` with iteration 0 the initialisation."""
    return [(k, float(o), float(s)) for k, (o, s) in enumerate(zip(trace.objectives, trace.seconds))]


def write_convergence_csv(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective", "seconds"])
        for k, o, s in convergence_rows(trace):
            w.writerow([k, repr(o), f"{s:.6f}"])


# -- export ----------------------------------------------------------------------

def write_map_csv(path, emap: EnvironmentMap) -> None:
    """Rows ``class,x,y,z,power_db,path_index``; reflectors write one row per element point."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "x", "y", "z", "power_db", "path_index"])
        for e in emap.entries:
            if not e.located:
                continue
            pts = e.point_set if e.kind == "reflect-1" and e.point_set is not None else [e.point]
            for p in pts:
                w.writerow([e.kind, *[f"{v:.6f}" for v in p], f"{e.power_db:.6f}", e.path_index + 1])


def map_to_dict(emap: EnvironmentMap) -> dict:
    items = []
    for e in emap.entries:
        d = {"class": e.kind, "path_index": e.path_index + 1, "hop": e.hop + 1, "power_db": e.power_db,
             "reference_distance_m": e.distance}
        if e.point is not None:
            d["point"] = [float(v) for v in e.point]
        if e.plane is not None:
            d["plane"] = {"anchor": e.plane.anchor.tolist(), "normal": e.plane.normal.tolist()}
        if e.point_set is not None:
            d["points"] = np.asarray(e.point_set).tolist()
        items.append(d)
    return {"entries": items}


def write_map_json(path, emap: EnvironmentMap) -> None:
    with open(path, "w") as fh:
        json.dump(map_to_dict(emap), fh, indent=1)
