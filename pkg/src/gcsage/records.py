"""JSON records for truth and estimate files, and estimator config TOML."""
from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

from .channel import FrequencyGrid, to_db
from .estimator import KINDS, EstimatorConfig, PathEstimate, RunTrace
from .exceptions import ScenarioError
from .geometry import Plane, SearchGrid
from .scenario import ArrayLayout, PathTruth, load_scenario

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

FORMAT_VERSION = 1


class RecordError(ValueError):
    """Malformed or mismatched truth/results file."""


def _complex_pair(a) -> dict:
    a = np.asarray(a)
    return {"re": a.real.tolist(), "im": a.imag.tolist()}


def _from_pair(d) -> np.ndarray:
    return np.asarray(d["re"], dtype=float) + 1j * np.asarray(d["im"], dtype=float)


def arrays_to_dict(arrays: ArrayLayout) -> dict:
    return {"tx": arrays.tx.tolist(), "rx": arrays.rx.tolist(),
            "reference_tx": arrays.ref_tx + 1, "reference_rx": arrays.ref_rx + 1}


def arrays_from_dict(d) -> ArrayLayout:
    return ArrayLayout(np.asarray(d["tx"]), np.asarray(d["rx"]), int(d["reference_tx"]) - 1,
                       int(d["reference_rx"]) - 1)


def band_to_dict(freq: FrequencyGrid) -> dict:
    return {"start_hz": freq.start, "spacing_hz": freq.spacing, "count": freq.count}


def band_from_dict(d) -> FrequencyGrid:
    return FrequencyGrid(float(d["start_hz"]), float(d["spacing_hz"]), int(d["count"]))


# -- truth -----------------------------------------------------------------------

def truth_to_dict(paths, arrays: ArrayLayout, freq: FrequencyGrid) -> dict:
    items = []
    for p in paths:
        d = {
            "label": p.label,
            "order": p.order,
            "mechanisms": list(p.mechanisms),
            "points": p.points.tolist(),
            "gain": _complex_pair(p.gain),
            "reference_distance_m": p.reference_distance(arrays),
            "facets": list(p.facets),
            "visibility": p.visibility.astype(int).tolist(),
        }
        if p.normals is not None:
            d["normals"] = np.where(np.isfinite(p.normals), p.normals, 0.0).tolist()
            d["normal_defined"] = np.isfinite(p.normals).all(axis=-1).tolist()
        if p.element_points is not None:
            d["element_points"] = np.asarray(p.element_points).tolist()
        if p.amplitude_profile is not None:
            d["amplitude_profile"] = np.asarray(p.amplitude_profile, dtype=float).tolist()
        if p.distances is not None:
            d["distances"] = np.asarray(p.distances).tolist()
        items.append(d)
    return {"kind": "truth", "version": FORMAT_VERSION, "arrays": arrays_to_dict(arrays),
            "band": band_to_dict(freq), "paths": items}


def truth_from_dict(doc):
    if doc.get("kind") != "truth":
        raise RecordError("not a truth file")
    try:
        arrays = arrays_from_dict(doc["arrays"])
        freq = band_from_dict(doc["band"])
        paths = []
        for d in doc["paths"]:
            normals = None
            if "normals" in d:
                normals = np.asarray(d["normals"], dtype=float).reshape(-1, 3)
                normals[~np.asarray(d["normal_defined"], dtype=bool)] = np.nan
            p = PathTruth(
                order=int(d["order"]),
                points=np.asarray(d["points"], dtype=float),
                mechanisms=tuple(d["mechanisms"]),
                gain=complex(_from_pair(d["gain"])),
                visibility=np.asarray(d["visibility"], dtype=bool),
                element_points=np.asarray(d["element_points"], dtype=float) if "element_points" in d else None,
                amplitude_profile=np.asarray(d["amplitude_profile"]) if "amplitude_profile" in d else None,
                facets=tuple(d.get("facets", ())),
                normals=normals,
                label=d.get("label", ""),
                distances=np.asarray(d["distances"], dtype=float) if "distances" in d else None,
            )
            p.check(arrays)
            paths.append(p)
    except (KeyError, TypeError, ValueError) as exc:
        raise RecordError(f"malformed truth file: {exc}") from exc
    return paths, arrays, freq


# -- estimates -------------------------------------------------------------------

def estimate_to_dict(e: PathEstimate) -> dict:
    d = {
        "kind": e.kind,
        "delay_s": e.delay,
        "power_db": float(to_db(e.power)),
        "points": np.asarray(e.points).tolist(),
        "distances": np.asarray(e.distances).tolist(),
        "reference_delay_ns": e.delay * 1e9,
        "amplitudes": _complex_pair(e.amplitudes),
        "amplitude_db": to_db(np.abs(e.amplitudes) ** 2).tolist(),
        "amplitude_phase_rad": np.angle(e.amplitudes).tolist(),
        "objective": None if not np.isfinite(e.objective) else float(e.objective),
    }
    if e.plane is not None:
        d["plane"] = {"anchor": e.plane.anchor.tolist(), "normal": e.plane.normal.tolist()}
    if e.element_points is not None:
        d["element_points"] = np.asarray(e.element_points).tolist()
    if e.visible is not None:
        d["visible"] = np.asarray(e.visible).astype(int).tolist()
    return d


def estimate_from_dict(d) -> PathEstimate:
    if d["kind"] not in KINDS:
        raise RecordError(f"unknown path class {d['kind']!r}")
    plane = Plane(np.asarray(d["plane"]["anchor"]), np.asarray(d["plane"]["normal"])) if "plane" in d else None
    return PathEstimate(
        kind=d["kind"],
        delay=float(d["delay_s"]),
        amplitudes=_from_pair(d["amplitudes"]),
        distances=np.asarray(d["distances"], dtype=float),
        points=np.asarray(d["points"], dtype=float).reshape(-1, 3),
        plane=plane,
        element_points=np.asarray(d["element_points"], dtype=float) if "element_points" in d else None,
        visible=np.asarray(d["visible"], dtype=bool) if "visible" in d else None,
        objective=np.nan if d.get("objective") is None else float(d["objective"]),
    )


def trace_to_dict(trace: RunTrace) -> dict:
    return {"objectives": [float(v) for v in trace.objectives], "seconds": [float(v) for v in trace.seconds],
            "updates": trace.updates, "converged": trace.converged, "noise_power": trace.noise_power,
            "final_objective": trace.final_objective}


def trace_from_dict(d) -> RunTrace:
    return RunTrace(list(d["objectives"]), list(d["seconds"]), list(d.get("updates", [])), bool(d["converged"]),
                    float(d["noise_power"]), float(d["final_objective"]))


def results_to_dict(estimates, trace: RunTrace, arrays: ArrayLayout, freq: FrequencyGrid, mode: str) -> dict:
    return {"kind": "results", "version": FORMAT_VERSION, "mode": mode, "arrays": arrays_to_dict(arrays),
            "band": band_to_dict(freq), "paths": [estimate_to_dict(e) for e in estimates],
            "trace": trace_to_dict(trace)}


def results_from_dict(doc):
    if doc.get("kind") != "results":
        raise RecordError("not a results file")
    try:
        arrays = arrays_from_dict(doc["arrays"])
        freq = band_from_dict(doc["band"])
        estimates = [estimate_from_dict(d) for d in doc["paths"]]
        trace = trace_from_dict(doc["trace"])
    except (KeyError, TypeError, ValueError) as exc:
        raise RecordError(f"malformed results file: {exc}") from exc
    for e in estimates:
        if e.distances.shape != (arrays.M, arrays.N) or e.amplitudes.shape != (arrays.M, arrays.N):
            raise RecordError("path shapes do not match the arrays")
    return estimates, trace, arrays, freq


def write_json(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise RecordError(f"{path}: {exc}") from exc


# -- estimator config -------------------------------------------------------------

_CONFIG_KEYS = {"scenario", "estimator", "grid"}
_GRID_KEYS = {"spacing", "tolerance", "bounds"}
_EST_KEYS = {"n_paths", "beta", "noise_power", "max_iter", "tol", "model_margin", "two_bounce",
             "two_bounce_stride", "min_hop_separation", "drop_threshold", "delay_window", "init_sweeps",
             "oversample", "rerank", "refine_seeds", "global_sweeps", "local_radius", "refine", "reflection"}


def load_config(path):
    """Estimator config TOML.

    Returns ``(EstimatorConfig, scenario)``: the scenario (resolved relative to
    the config file) supplies the array layout, band and default grid bounds.
    """
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc
    unknown = set(doc) - _CONFIG_KEYS
    unknown |= {f"grid.{k}" for k in set(doc.get("grid", {})) - _GRID_KEYS}
    unknown |= {f"estimator.{k}" for k in set(doc.get("estimator", {})) - _EST_KEYS}
    if unknown:
        raise ScenarioError(f"{path}: unknown keys {sorted(unknown)}")
    if "scenario" not in doc:
        raise ScenarioError(f"{path}: missing key 'scenario'")
    scenario = load_scenario(path.parent / doc["scenario"])
    g = doc.get("grid", {})
    bounds = np.asarray(g.get("bounds", scenario.bounds), dtype=float)
    grid = SearchGrid(bounds, float(g.get("spacing", 0.1)), g.get("tolerance"))
    est = dict(doc.get("estimator", {}))
    return EstimatorConfig(grid=grid, **est), scenario
