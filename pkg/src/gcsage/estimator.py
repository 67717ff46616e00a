"""Geometry-constrained SAGE estimation of near-field multipath.

Every path is modelled by its per-element propagation distances plus a free
complex amplitude per Tx/Rx element pair. For fixed distances the amplitudes
have a closed form (scalar least squares per element), so each M-step reduces
to maximising the summed matched-filter power

    J(d) = ||y_l||^2 - sum_mn |s(d_mn)^H y_l[m, n]|^2 / P

over a candidate set of geometries. Candidate sets come from the reference
delay: an ellipsoid shell for one-bounce scatterers and reflectors, a nested
shell search for two-bounce scatterers, and a 1-D delay search for paths that
fit no geometric model.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize, minimize_scalar
from sklearn.base import BaseEstimator

from .channel import SPEED_OF_LIGHT, ChannelTensor, delay_profile, steering_phase
from .exceptions import DegenerateSearchError, InvalidInputError
from .geometry import (
    Plane,
    SearchGrid,
    image_distances,
    per_element_reflection_points,
    project_to_ellipsoid,
)
from .validation import check_channel, check_positive

log = logging.getLogger(__name__)

KINDS = ("los", "scatter-1", "scatter-2", "reflect-1", "high-bounce")


@dataclass
class EstimatorConfig:
    n_paths: int = 8
    grid: SearchGrid | None = None
    beta: object = "uniform"
    noise_power: float | None = None
    max_iter: int = 10
    tol: float = 1e-3
    model_margin: float = 0.01
    reflection: bool = True
    two_bounce: bool = True
    two_bounce_stride: int = 2
    min_hop_separation: float = 0.5
    drop_threshold: float = 2.0
    delay_window: float | None = None
    init_sweeps: int = 2
    oversample: int = 32
    rerank: int = 64
    refine_seeds: int = 8
    global_sweeps: int = 1
    local_radius: float = 0.5
    refine: bool = True

    def __post_init__(self):
        if int(self.n_paths) < 1:
            raise InvalidInputError("n_paths must be at least 1")
        check_positive(self.tol, "tol")
        check_positive(self.model_margin, "model_margin")
        check_positive(self.max_iter, "max_iter")
        check_positive(self.two_bounce_stride, "two_bounce_stride")
        check_positive(self.oversample, "oversample")
        if self.drop_threshold < 0 or self.min_hop_separation < 0:
            raise InvalidInputError("thresholds must be non-negative")
        if self.noise_power is not None and not self.noise_power >= 0:
            raise InvalidInputError("noise_power must be non-negative")
        self.betas(int(self.n_paths))

    def betas(self, L: int) -> np.ndarray:
        """Residual weights with unit sum of squares (``serial`` gives all ones)."""
        if isinstance(self.beta, str):
            if self.beta == "uniform":
                return np.full(L, 1.0 / np.sqrt(L))
            if self.beta == "serial":
                return np.ones(L)
            raise InvalidInputError(f"unknown beta policy {self.beta!r}")
        b = np.asarray(self.beta, dtype=float)
        if b.shape != (int(self.n_paths),) or np.any(b <= 0):
            raise InvalidInputError("explicit beta needs n_paths positive weights")
        if abs(np.sum(b**2) - 1.0) > 1e-9:
            raise InvalidInputError("explicit beta must satisfy sum(beta**2) == 1")
        return b[:L] / np.sqrt(np.sum(b[:L] ** 2))


@dataclass
class PathEstimate:
    """One estimated path.

    ``distances`` holds the per-element propagation lengths in meters and
    always agrees with the stored geometry. ``points`` is empty for ``los``
    and ``high-bounce``, the shared point for ``scatter-1``, both hops for
    ``scatter-2`` and the reference specular point for ``reflect-1``.
    """

    kind: str
    delay: float
    amplitudes: np.ndarray
    distances: np.ndarray
    points: np.ndarray = field(default_factory=lambda: np.empty((0, 3)))
    plane: Plane | None = None
    element_points: np.ndarray | None = None
    visible: np.ndarray | None = None
    objective: float = np.nan

    @property
    def delays(self) -> np.ndarray:
        return self.distances / SPEED_OF_LIGHT

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def gain(self, arrays) -> complex:
        return complex(self.amplitudes[arrays.ref_tx, arrays.ref_rx])


@dataclass
class RunTrace:
    objectives: list = field(default_factory=list)
    seconds: list = field(default_factory=list)
    updates: list = field(default_factory=list)
    converged: bool = False
    noise_power: float = 0.0
    final_objective: float = np.nan


# -- distance models -----------------------------------------------------------

def _pair_dist(points, elements) -> np.ndarray:
    return np.linalg.norm(points[..., None, :] - elements, axis=-1)


def scatter_distances(points, arrays) -> np.ndarray:
    """Per-element lengths through shared hops; ``points`` is ``(..., K, 3)``."""
    pts = np.asarray(points, dtype=float)
    d = _pair_dist(pts[..., 0, :], arrays.tx)[..., :, None] + _pair_dist(pts[..., -1, :], arrays.rx)[..., None, :]
    if pts.shape[-2] > 1:
        d = d + np.linalg.norm(np.diff(pts, axis=-2), axis=-1).sum(axis=-1)[..., None, None]
    return d


def reflect_geometry(point, normal, arrays, bounds=None):
    """Distances, per-element points and visibility for a specular plane."""
    dist = image_distances(arrays.tx, arrays.rx, point[None], normal[None])[0]
    pts, vis = per_element_reflection_points(point, normal, arrays.tx, arrays.rx, bounds)
    return dist, pts, vis


def _bisector_normals(points, tx, rx):
    u = points - tx
    w = points - rx
    nu = np.linalg.norm(u, axis=-1, keepdims=True)
    nw = np.linalg.norm(w, axis=-1, keepdims=True)
    ok = (nu[:, 0] > 1e-12) & (nw[:, 0] > 1e-12)
    s = u / np.where(nu > 0, nu, 1.0) + w / np.where(nw > 0, nw, 1.0)
    ns = np.linalg.norm(s, axis=-1)
    ok &= ns > 1e-9
    return s / np.where(ns > 0, ns, 1.0)[:, None], ok


# -- matched-filter evaluation ---------------------------------------------------

def coherent_gain(c) -> np.ndarray:
    """Energy captured by a shared complex gain times a real per-element profile.

    For per-element correlations ``c`` the least-squares fit of
    ``alpha * a_mn`` (``alpha`` complex, ``a`` real) captures
    ``(sum |c|^2 + |sum c^2|) / 2``.
    """
    c = np.asarray(c)
    return 0.5 * (np.sum(np.abs(c) ** 2, axis=(-2, -1)) + np.abs(np.sum(c * c, axis=(-2, -1))))


class Correlator:
    """Per-element matched filtering of one tensor ``y`` against delay models."""

    def __init__(self, values: np.ndarray, freq, oversample: int = 16):
        self.y = np.asarray(values, dtype=complex)
        self.freq = freq
        self.P = freq.count
        self.energy = float(np.vdot(self.y, self.y).real)
        self.oversample = int(oversample)
        self._table = None

    def _carrier(self, dist):
        b = self.freq.start * np.asarray(dist, dtype=float) / SPEED_OF_LIGHT
        return np.exp(2j * np.pi * (b - np.round(b)))

    def correlate(self, dist) -> np.ndarray:
        """``s(d)^H y[m, n]`` for distances ``(..., M, N)``."""
        a = self.freq.spacing * np.asarray(dist, dtype=float) / SPEED_OF_LIGHT
        w = np.exp(2j * np.pi * (a - np.round(a)))
        acc = np.zeros(np.broadcast_shapes(w.shape, self.y.shape[:2]), dtype=complex)
        for p in range(self.P - 1, -1, -1):
            acc *= w
            acc += self.y[..., p]
        return acc * self._carrier(dist)

    def amplitudes(self, dist) -> np.ndarray:
        """Unconstrained per-element least-squares amplitudes."""
        return self.correlate(dist) / self.P

    def profile_amplitudes(self, dist) -> np.ndarray:
        """Amplitudes of the shared-phase, real-profile model."""
        c = self.correlate(dist)
        phase = np.exp(0.5j * np.angle(np.sum(c * c, axis=(-2, -1))))[..., None, None]
        return (c * phase.conj()).real * phase / self.P

    def objective(self, dist) -> np.ndarray:
        """Residual energy of the shared-phase, real-profile model."""
        return self.energy - coherent_gain(self.correlate(dist)) / self.P

    def objective_per_element(self, dist) -> np.ndarray:
        """Residual energy with a free complex amplitude per element."""
        c = self.correlate(dist)
        return self.energy - np.sum(np.abs(c) ** 2, axis=(-2, -1)) / self.P

    def _complex_table(self):
        # kernel centred on the middle sub-band so a single path interpolates
        # as a real Dirichlet lobe rather than a rotating phasor
        if self._table is None:
            K = self.P * self.oversample
            pc = 0.5 * (self.P - 1)
            t = np.fft.ifft(self.y, n=K, axis=-1) * K * np.exp(-2j * np.pi * pc * np.arange(K) / K)
            self._table = t.reshape(-1, K)
        return self._table

    def approx_objective(self, dist) -> np.ndarray:
        """``objective`` with correlations interpolated from an oversampled FFT."""
        table = self._complex_table()
        K = table.shape[1]
        dist = np.asarray(dist, dtype=float)
        a = dist * (self.freq.spacing / SPEED_OF_LIGHT)
        x = (a % 1.0) * K
        i0 = np.floor(x).astype(np.intp)
        frac = x - i0
        i0 %= K
        i1 = (i0 + 1) % K
        off = (np.arange(table.shape[0]) * K).reshape(self.y.shape[:2])
        flat = table.ravel()
        c = flat[off + i0] * (1.0 - frac) + flat[off + i1] * frac
        # the centred kernel wraps with sign (-1)^(P-1) per full cycle of a
        b = self.freq.center * dist / SPEED_OF_LIGHT
        carrier = np.exp(2j * np.pi * (b - np.round(b)))
        if (self.P - 1) % 2:
            carrier = carrier * np.where(np.floor(a) % 2 == 0, 1.0, -1.0)
        return self.energy - coherent_gain(c * carrier) / self.P

    def delay_profile(self, oversample: int = 4) -> np.ndarray:
        """Element-summed power delay profile on an oversampled delay axis."""
        K = self.P * oversample
        return np.sum(np.abs(np.fft.ifft(self.y, n=K, axis=-1)) ** 2, axis=(0, 1))


def _as_tensor(yhat, arrays=None, freq=None) -> ChannelTensor:
    if isinstance(yhat, ChannelTensor):
        return yhat
    return ChannelTensor(yhat, freq, arrays)


# -- reference initialisation ------------------------------------------------------

def _polish(fn, x0, step):
    """Continuous refinement of a grid minimiser within one grid step."""
    lo, hi = max(0.0, x0 - step), x0 + step
    res = minimize_scalar(fn, bounds=(lo, hi), method="bounded", options={"xatol": step * 1e-4})
    return float(res.x) if res.fun <= fn(x0) else float(x0)


def _refine_delay(h, freq, tau0, half_width, step):
    taus = tau0 + np.arange(-np.round(half_width / step), np.round(half_width / step) + 1) * step
    taus = taus[taus >= 0]
    s = steering_phase(taus, freq)
    c = s.conj() @ h
    k = int(np.argmax(np.abs(c)))
    tau = _polish(lambda t: -abs(steering_phase(t, freq).conj() @ h), float(taus[k]), step)
    return tau, complex(steering_phase(tau, freq).conj() @ h / freq.count)


def init_reference(chan: ChannelTensor, config: EstimatorConfig) -> list:
    """Successive-cancellation delay/amplitude estimates on the reference channel.

    Returns ``(tau, alpha)`` pairs sorted by descending ``|alpha|``.
    """
    freq = chan.freq
    P = freq.count
    L = int(config.n_paths)
    if L > P:
        raise InvalidInputError("path budget exceeds the number of sub-bands")
    h = np.asarray(chan.reference, dtype=complex)
    if not np.any(h):
        warnings.warn("reference channel is identically zero", RuntimeWarning)
        return []
    bin_ = freq.delay_bin
    step = bin_ / 8.0
    over = 4
    res = h.copy()
    taus, alphas = [], []
    for _ in range(L):
        pdp = np.abs(np.fft.ifft(res, n=over * P)) ** 2
        k = int(np.argmax(pdp))
        tau, alpha = _refine_delay(res, freq, k * bin_ / over, bin_ / over, step)
        res -= alpha * steering_phase(tau, freq)
        taus.append(tau)
        alphas.append(alpha)
    for _ in range(int(config.init_sweeps)):
        for l in range(L):
            res += alphas[l] * steering_phase(taus[l], freq)
            taus[l], alphas[l] = _refine_delay(res, freq, taus[l], bin_, step)
            res -= alphas[l] * steering_phase(taus[l], freq)
    order = np.argsort(-np.abs(alphas), kind="stable")
    return [(taus[i], alphas[i]) for i in order]


def estimate_noise_power(chan: ChannelTensor) -> float:
    """Noise variance per sample from the tail of the reference delay profile."""
    pdp = delay_profile(chan.reference)
    tail = pdp[-max(1, len(pdp) // 10):]
    return float(np.median(tail) * len(pdp) / np.log(2.0))


# -- E and M steps ---------------------------------------------------------------

def reconstruct_path(est: PathEstimate, freq) -> np.ndarray:
    return est.amplitudes[..., None] * steering_phase(est.distances / SPEED_OF_LIGHT, freq)


def e_step(y: ChannelTensor, estimates, l: int, config: EstimatorConfig, residual=None) -> ChannelTensor:
    """``z_l + beta_l * (y - sum_k z_k)``."""
    zs = [reconstruct_path(e, y.freq) for e in estimates]
    if residual is None:
        residual = y.values - (np.sum(zs, axis=0) if zs else 0.0)
    beta = config.betas(len(estimates))[l]
    return ChannelTensor(zs[l] + beta * residual, y.freq, y.arrays)


def estimate_amplitudes(yhat, delays, freq=None) -> np.ndarray:
    """Per-element least-squares amplitudes for per-element delays (seconds)."""
    values = yhat.values if isinstance(yhat, ChannelTensor) else np.asarray(yhat)
    freq = freq if freq is not None else yhat.freq
    tau = np.asarray(delays, dtype=float)
    if not np.all(np.isfinite(tau)):
        raise InvalidInputError("delays must be finite")
    return Correlator(values, freq).amplitudes(tau * SPEED_OF_LIGHT)


def _corr(yhat, config):
    return Correlator(yhat.values, yhat.freq, config.oversample)


def _shell(grid, tx, rx, d, tol):
    pts = grid.points
    s = np.linalg.norm(pts - tx, axis=1) + np.linalg.norm(pts - rx, axis=1)
    return pts[np.abs(s - d) <= tol]


def _with_previous(cands, prev):
    if prev is None:
        return cands
    prev = np.asarray(prev, dtype=float).reshape(1, 3)
    if len(cands) and np.any(np.all(np.isclose(cands, prev, atol=1e-12), axis=1)):
        return cands
    return np.vstack([cands, prev])


def _layers(d, window, step):
    if window <= 0:
        return np.array([float(d)])
    k = int(np.ceil(window / step - 1e-9))
    return d + step * np.arange(-k, k + 1)


def _chunked(fn, dist, size=2_000_000):
    n = max(1, size // max(1, dist[0].size))
    return np.concatenate([fn(dist[i:i + n]) for i in range(0, len(dist), n)])


def one_bounce_candidates(grid: SearchGrid, arrays, d, *, window=0.0, prev=None, layer_step=None):
    """Shell grid points projected onto the exact delay ellipsoid(s).

    With ``window > 0`` the shell is widened and every point is projected onto
    a stack of ellipsoids spaced ``layer_step`` apart covering ``d +- window``.
    Order: layer-major, then lexicographic grid order, previous point last.
    """
    tx, rx = arrays.tx_ref, arrays.rx_ref
    d_los = float(np.linalg.norm(tx - rx))
    shell = _with_previous(_shell(grid, tx, rx, d, grid.tolerance + window), prev)
    step = layer_step or 0.5 * grid.spacing
    layers = _layers(d, window, step)
    layers = layers[layers > d_los + 1e-9]
    if len(shell) == 0 or len(layers) == 0:
        return np.empty((0, 3))
    return np.concatenate([project_to_ellipsoid(shell, tx, rx, dd) for dd in layers])


def m_step_scatter_one(yhat, d, grid: SearchGrid, config: EstimatorConfig, *, prev=None, scale=1.0,
                       window=0.0, corr=None):
    """Best shared scatterer on the delay ellipsoid; returns ``(point, value)``.

    Candidates are the grid points of the ellipsoid shell, each projected onto
    the exact ellipsoid before scoring. Ties resolve to the first candidate in
    lexicographic grid order.
    """
    yhat = _as_tensor(yhat)
    arrays = yhat.arrays
    if d <= np.linalg.norm(arrays.tx_ref - arrays.rx_ref):
        raise DegenerateSearchError("reference distance does not exceed the direct distance")
    cands = one_bounce_candidates(grid, arrays, d, window=window, prev=prev)
    if len(cands) == 0:
        raise DegenerateSearchError("no one-bounce candidates")
    corr = corr or _corr(yhat, config)
    vals = _chunked(corr.objective, scatter_distances(cands[:, None, :], arrays))
    k = int(np.argmin(vals))
    return cands[k], float(vals[k]) / scale


def m_step_reflection(yhat, d, grid: SearchGrid, config: EstimatorConfig, *, prev=None, scale=1.0,
                      window=0.0, corr=None):
    """Best specular plane through a point of the delay ellipsoid.

    Each candidate point fixes the plane normal as the bisector of its legs to
    the reference elements; per-element distances follow from the Tx mirror
    images. Returns ``(plane, element_points, value)``.
    """
    yhat = _as_tensor(yhat)
    arrays = yhat.arrays
    if d <= np.linalg.norm(arrays.tx_ref - arrays.rx_ref):
        raise DegenerateSearchError("reference distance does not exceed the direct distance")
    cands = one_bounce_candidates(grid, arrays, d, window=window, prev=prev)
    normals, ok = _bisector_normals(cands, arrays.tx_ref, arrays.rx_ref)
    cands, normals = cands[ok], normals[ok]
    if len(cands) == 0:
        raise DegenerateSearchError("no admissible reflection candidates")
    corr = corr or _corr(yhat, config)
    vals = np.concatenate([
        corr.objective(image_distances(arrays.tx, arrays.rx, cands[i:i + 256], normals[i:i + 256]))
        for i in range(0, len(cands), 256)
    ])
    k = int(np.argmin(vals))
    plane = Plane(cands[k], normals[k])
    pts, _ = per_element_reflection_points(cands[k], normals[k], arrays.tx, arrays.rx)
    return plane, pts, float(vals[k]) / scale


def _flat(corr, tau):
    M, N = corr.y.shape[:2]
    return np.full((M, N), tau * SPEED_OF_LIGHT)


def m_step_high_bounce(yhat, tau, config: EstimatorConfig, *, scale=1.0, corr=None, global_scan=False):
    """Flat-delay refinement within two delay bins; returns ``(tau, value)``.

    The fine grid (step ``1 / (8 P f_s)``) is followed by a continuous polish.
    With ``global_scan`` the peak of the element-summed delay profile is
    tried as a second starting point.
    """
    yhat = _as_tensor(yhat)
    bin_ = yhat.freq.delay_bin
    corr = corr or _corr(yhat, config)
    M, N = yhat.values.shape[:2]
    starts = [float(tau)]
    if global_scan:
        prof = corr.delay_profile(4)
        starts.append(float(np.argmax(prof)) * bin_ / 4.0)
    best = None
    for t0 in starts:
        taus = t0 + np.arange(-16, 17) * bin_ / 8.0
        taus = taus[taus >= 0]
        vals = corr.objective(np.broadcast_to((taus * SPEED_OF_LIGHT)[:, None, None], (len(taus), M, N)))
        k = int(np.argmin(vals))

        def fn(t):
            return float(corr.objective(_flat(corr, t)))

        t = _polish(fn, float(taus[k]), bin_ / 8.0)
        v = fn(t)
        if best is None or v < best[1]:
            best = (t, v)
    return best[0], best[1] / scale


def m_step_scatter_two(yhat, d, grid: SearchGrid, config: EstimatorConfig, *, prev=None, scale=1.0,
                       window=0.0, corr=None, near=None):
    """Nested first-hop / second-hop shell search; returns ``((r1, r2), value)``.

    First hops are grid points; for each, the second-hop shell is projected
    onto its exact ellipsoid. First hops are screened on a strided grid with
    interpolated correlations, the best few are refined on the full grid
    around them, and the ``rerank`` best pairs are evaluated exactly. ``near``
    (a point and radius) restricts first hops to a ball on the full grid.
    """
    yhat = _as_tensor(yhat)
    arrays = yhat.arrays
    corr = corr or _corr(yhat, config)
    tol = grid.tolerance + window
    G = grid.points
    idx = np.stack(np.unravel_index(np.arange(grid.size), grid.shape), axis=1)
    tx, rx = arrays.tx_ref, arrays.rx_ref
    A = _pair_dist(G, arrays.tx)
    a0 = A[:, arrays.ref_tx]
    b0 = np.linalg.norm(G - rx, axis=1)
    sep = config.min_hop_separation
    hop_ok = (a0 >= sep) & (b0 >= sep)
    first_ok = hop_ok & (a0 + b0 + sep <= d + tol)

    def screen(first):
        out_i, out_r2, out_v = [], [], []
        for i in first:
            budget = d - a0[i]
            c = np.linalg.norm(G - G[i], axis=1)
            j = np.flatnonzero(hop_ok & (c >= sep) & (np.abs(c + b0 - budget) <= tol))
            if len(j) == 0:
                continue
            r2 = project_to_ellipsoid(G[j], G[i], rx, budget)
            leg = np.linalg.norm(r2 - G[i], axis=1)
            dist = A[i][None, :, None] + leg[:, None, None] + _pair_dist(r2, arrays.rx)[:, None, :]
            out_i.append(np.full(len(j), i))
            out_r2.append(r2)
            out_v.append(corr.approx_objective(dist))
        if not out_i:
            return np.empty(0, int), np.empty((0, 3)), np.empty(0)
        return np.concatenate(out_i), np.concatenate(out_r2), np.concatenate(out_v)

    if near is not None:
        center, radius = near
        first = np.flatnonzero(first_ok & (np.linalg.norm(G - center, axis=1) <= radius))
        ii, rr, vv = screen(first)
    else:
        stride = int(config.two_bounce_stride)
        coarse = np.flatnonzero(first_ok & np.all(idx % stride == 0, axis=1))
        ci, cr, cv = screen(coarse)
        seeds = []
        for i in ci[np.argsort(cv, kind="stable")]:
            if i not in seeds:
                seeds.append(i)
            if len(seeds) >= config.refine_seeds:
                break
        close = np.zeros(grid.size, dtype=bool)
        for i in seeds:
            close |= np.all(np.abs(idx - idx[i]) < stride, axis=1)
        close &= first_ok
        close[coarse] = False
        fi, fr, fv = screen(np.flatnonzero(close))
        ii, rr, vv = np.concatenate([ci, fi]), np.concatenate([cr, fr]), np.concatenate([cv, fv])
    if len(ii) == 0 and prev is None:
        raise DegenerateSearchError("no feasible two-bounce pairs")
    top = np.argsort(vv, kind="stable")[: int(config.rerank)]
    pairs = np.stack([G[ii[top]], rr[top]], axis=1)
    if prev is not None:
        p1, p2 = np.asarray(prev, dtype=float).reshape(2, 3)
        budget = d - np.linalg.norm(p1 - tx)
        if budget > np.linalg.norm(p1 - rx):
            p2 = project_to_ellipsoid(p2, p1, rx, budget)
            pairs = np.concatenate([pairs, np.stack([p1, p2])[None]])
    if len(pairs) == 0:
        raise DegenerateSearchError("no feasible two-bounce pairs")
    exact = corr.objective(scatter_distances(pairs, arrays))
    # lexicographic tie-break on (first hop, second hop)
    order = np.lexsort(tuple(pairs.reshape(len(pairs), 6).T[::-1]) + (exact,))
    k = int(order[0])
    return (pairs[k, 0], pairs[k, 1]), float(exact[k]) / scale


# -- classification -----------------------------------------------------------------

def _make(kind, dist, amps, arrays, value, points=None, plane=None, element_points=None, visible=None):
    d0 = float(dist[arrays.ref_tx, arrays.ref_rx])
    return PathEstimate(
        kind=kind,
        delay=d0 / SPEED_OF_LIGHT,
        amplitudes=amps,
        distances=dist,
        points=np.empty((0, 3)) if points is None else np.asarray(points, float).reshape(-1, 3),
        plane=plane,
        element_points=element_points,
        visible=visible,
        objective=value,
    )


def _reference_distance(est: PathEstimate, arrays) -> float:
    return float(est.distances[arrays.ref_tx, arrays.ref_rx])


def _free_axes(grid: SearchGrid) -> np.ndarray:
    return np.flatnonzero(np.asarray(grid.shape) > 1)


def _refine(corr, build, points, grid: SearchGrid, scale, enabled=True):
    """Continuous local refinement of interaction points from a grid solution.

    ``build`` maps a ``(K, 3)`` point array to ``(distances, extra)`` or
    ``(None, None)`` when infeasible. Only axes along which the grid varies
    are free. Points may not leave the grid box by more than one cell.
    Returns ``(value, distances, extra)``.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    axes = _free_axes(grid)
    lo = grid.bounds[:, 0] - grid.spacing
    hi = grid.bounds[:, 1] + grid.spacing

    def unpack(x):
        pts = points.copy()
        pts[:, axes] = np.asarray(x).reshape(len(points), len(axes))
        return pts

    def fn(x):
        pts = unpack(x)
        if np.any(pts < lo) or np.any(pts > hi):
            return np.inf
        dist, _ = build(pts)
        return np.inf if dist is None else float(corr.objective(dist))

    x0 = points[:, axes].ravel()
    best_x, best_f = x0, fn(x0)
    if enabled and len(x0):
        step = 0.5 * grid.spacing
        simplex = np.vstack([x0] + [x0 + step * e for e in np.eye(len(x0))])
        # infeasible vertices score inf; inf - inf in the stopping test is harmless
        with np.errstate(invalid="ignore"):
            res = minimize(fn, x0, method="Nelder-Mead",
                           options={"initial_simplex": simplex, "xatol": 1e-4,
                                    "fatol": 1e-9 * max(best_f, 1e-300), "maxfev": 400 * len(x0)})
        if res.fun < best_f:
            best_x, best_f = res.x, float(res.fun)
    dist, extra = build(unpack(best_x))
    return best_f / scale, dist, extra


def _scatter_one_at(pts, arrays):
    return scatter_distances(pts[:1], arrays), {"points": pts[0]}


def _reflect_at(pts, arrays, bounds=None):
    p = pts[0]
    n, ok = _bisector_normals(p[None], arrays.tx_ref, arrays.rx_ref)
    if not ok[0]:
        return None, None
    dist, epts, vis = reflect_geometry(p, n[0], arrays, bounds)
    return dist, {"points": p, "plane": Plane(p, n[0]), "element_points": epts, "visible": vis}


def _scatter_two_at(pts, arrays, sep):
    r1, r2 = pts
    if min(np.linalg.norm(r1 - arrays.tx_ref), np.linalg.norm(r2 - arrays.rx_ref), np.linalg.norm(r2 - r1)) < sep:
        return None, None
    return scatter_distances(pts, arrays), {"points": pts.copy()}


def classify_and_update(yhat, current: PathEstimate, grid: SearchGrid, config: EstimatorConfig, *,
                        scale=1.0, hybrid=None, record=None, global_search=True) -> PathEstimate:
    """Pick the best propagation model for one path given its E-step tensor.

    Order of preference: flat-delay (high-bounce) baseline; a direct-path or
    one-bounce model replaces it when it lowers the objective by the model
    margin relative to the previous value (or to the flat-delay value when
    that is larger), a reflector being preferred to a scatterer only when it beats it
    and does not exceed the previous value; a two-bounce model replaces the
    current choice under the same margin. The winning geometry keeps its
    shape while its reference distance is polished continuously. The result
    never has a larger objective than the previous geometry refitted to
    ``yhat``; amplitudes are always the per-element least-squares values.
    """
    yhat = _as_tensor(yhat)
    arrays = yhat.arrays
    hybrid = config.reflection if hybrid is None else hybrid
    corr = _corr(yhat, config)
    margin = 1.0 - config.model_margin
    d_los = float(np.linalg.norm(arrays.tx_ref - arrays.rx_ref))
    located = current.kind != "high-bounce"

    prev_val = float(corr.objective(current.distances)) / scale
    tau_hb, val_hb = m_step_high_bounce(yhat, current.delay, config, scale=scale, corr=corr,
                                        global_scan=not located)
    d = _reference_distance(current, arrays) if located else tau_hb * SPEED_OF_LIGHT
    window = 0.0 if located else _delay_window(config, yhat.freq)
    prev_pts = current.points[0] if current.kind in ("scatter-1", "reflect-1") else None
    vals = {"prev": prev_val, "high-bounce": val_hb}
    choice = ("high-bounce", val_hb, _flat(corr, tau_hb), {})

    one = []
    # the direct path has no free parameters, so global sweeps always try it:
    # across a wide aperture the flat-delay start can sit far from d_los
    if global_search or abs(d - d_los) <= grid.tolerance + window:
        dist = arrays.los_distances()
        v = float(corr.objective(dist)) / scale
        vals["los"] = v
        one.append(("los", v, dist, {}))
    try:
        pt, _ = m_step_scatter_one(yhat, d, grid, config, prev=prev_pts, scale=scale, window=window, corr=corr)
        v_s, dist, extra = _refine(corr, lambda q: _scatter_one_at(q, arrays), pt, grid, scale, config.refine)
        vals["scatter-1"] = v_s
        scat = ("scatter-1", v_s, dist, extra)
        if hybrid:
            try:
                plane, _, _ = m_step_reflection(yhat, d, grid, config, prev=prev_pts, scale=scale,
                                                window=window, corr=corr)
                v_r, dist_r, extra_r = _refine(corr, lambda q: _reflect_at(q, arrays, grid), plane.anchor, grid,
                                               scale, config.refine)
                vals["reflect-1"] = v_r
                if v_r < v_s and v_r <= prev_val:
                    scat = ("reflect-1", v_r, dist_r, extra_r)
            except DegenerateSearchError:
                pass
        one.append(scat)
    except DegenerateSearchError:
        pass
    if one:
        best = one[0]
        # a one-bounce model must beat the direct path by the margin as well
        if len(one) > 1 and one[1][1] <= margin * best[1]:
            best = one[1]
        # the margin is measured from the previous value, or from the refitted
        # flat-delay model when that is the weaker baseline
        if best[1] <= margin * max(prev_val, val_hb):
            choice = best

    run_two = config.two_bounce and (global_search or current.kind in ("scatter-2", "high-bounce"))
    if run_two:
        prev_pair = current.points if current.kind == "scatter-2" else None
        near = None
        if not global_search and current.kind == "scatter-2":
            near = (current.points[0], config.local_radius)
        try:
            pair, _ = m_step_scatter_two(yhat, d, grid, config, prev=prev_pair, scale=scale,
                                         window=window, corr=corr, near=near)
            v_2, dist2, extra2 = _refine(corr, lambda q: _scatter_two_at(q, arrays, config.min_hop_separation),
                                         np.stack(pair), grid, scale, config.refine)
            vals["scatter-2"] = v_2
            if v_2 <= margin * choice[1]:
                choice = ("scatter-2", v_2, dist2, extra2)
        except DegenerateSearchError:
            pass

    kind, value, dist, extra = choice
    if value > prev_val:
        kind, value, dist = current.kind, prev_val, current.distances
        extra = {"points": current.points, "plane": current.plane,
                 "element_points": current.element_points, "visible": current.visible}
    if record is not None:
        record.update(vals)
        record["kind"] = kind
        record["value"] = value
    amps = corr.amplitudes(dist)
    return _make(kind, dist, amps, arrays, value, **extra)


def _delay_window(config: EstimatorConfig, freq) -> float:
    if config.delay_window is not None:
        return float(config.delay_window)
    return 0.5 * SPEED_OF_LIGHT * freq.delay_bin


# -- outer loop --------------------------------------------------------------------

def objective(y: ChannelTensor, estimates) -> float:
    """``||y - sum_l z_l||^2``."""
    r = y.values.copy()
    for e in estimates:
        r -= reconstruct_path(e, y.freq)
    return float(np.vdot(r, r).real)


def _seed(y: ChannelTensor, init, config) -> list:
    res = y.values.copy()
    M, N = res.shape[:2]
    out = []
    for tau, _ in init:
        dist = np.full((M, N), tau * SPEED_OF_LIGHT)
        amps = Correlator(res, y.freq).amplitudes(dist)
        est = _make("high-bounce", dist, amps, y.arrays, np.nan)
        res -= reconstruct_path(est, y.freq)
        out.append(est)
    return out


def run_gc_sage(chan: ChannelTensor, config: EstimatorConfig, hybrid=None):
    """Full GC-SAGE loop; returns ``(estimates, trace)``.

    Estimates are sorted by descending total power. Paths whose energy stays
    below ``drop_threshold`` times the energy a pure-noise per-element fit
    would capture are removed after the last sweep.
    """
    chan = check_channel(chan)
    grid = config.grid
    if grid is None:
        raise InvalidInputError("estimator config has no search grid")
    sigma2 = config.noise_power
    if sigma2 is None:
        sigma2 = chan.noise_power if chan.noise_power is not None else estimate_noise_power(chan)
    trace = RunTrace(noise_power=float(sigma2))
    t0 = time.perf_counter()
    init = init_reference(chan, config)
    estimates = _seed(chan, init, config)
    if not estimates:
        trace.converged = True
        trace.objectives.append(chan.energy())
        trace.final_objective = chan.energy()
        return [], trace
    L = len(estimates)
    betas = config.betas(L)
    zs = [reconstruct_path(e, chan.freq) for e in estimates]
    res = chan.values - np.sum(zs, axis=0)
    obj = float(np.vdot(res, res).real)
    trace.objectives.append(obj)
    trace.seconds.append(time.perf_counter() - t0)

    for it in range(int(config.max_iter)):
        t_it = time.perf_counter()
        start = obj
        for l in range(L):
            yhat = ChannelTensor(zs[l] + betas[l] * res, chan.freq, chan.arrays)
            scale = betas[l] * sigma2 if sigma2 > 0 else 1.0
            rec = {"iteration": it + 1, "path": l}
            new = classify_and_update(yhat, estimates[l], grid, config, scale=scale, hybrid=hybrid, record=rec,
                                      global_search=it < config.global_sweeps)
            z_new = reconstruct_path(new, chan.freq)
            res_new = res + zs[l] - z_new
            obj_new = float(np.vdot(res_new, res_new).real)
            rec["accepted"] = obj_new <= obj
            if obj_new <= obj:
                estimates[l], zs[l], res, obj = new, z_new, res_new, obj_new
            trace.updates.append(rec)
        trace.objectives.append(obj)
        trace.seconds.append(time.perf_counter() - t_it)
        log.debug("sweep %d objective %.6g", it + 1, obj)
        if start - obj <= config.tol * start:
            trace.converged = True
            break

    M, N, P = chan.values.shape
    # the relative term keeps noiseless runs from retaining round-off crumbs
    floor = max(config.drop_threshold * M * N * sigma2, 1e-12 * chan.energy())
    keep = [e for e in estimates if P * e.power > floor and e.power > 0]
    keep.sort(key=lambda e: -e.power)
    trace.final_objective = objective(chan, keep)
    return keep, trace


# -- estimator wrapper -------------------------------------------------------------

class GCSAGE(BaseEstimator):
    """Estimator-style front end: ``fit`` on a ChannelTensor, ``predict`` the model tensor."""

    def __init__(self, grid=None, n_paths=8, beta="uniform", noise_power=None, max_iter=10, tol=1e-3,
                 model_margin=0.01, reflection=True, two_bounce=True, two_bounce_stride=2,
                 min_hop_separation=0.5, drop_threshold=2.0, delay_window=None):
        self.grid = grid
        self.n_paths = n_paths
        self.beta = beta
        self.noise_power = noise_power
        self.max_iter = max_iter
        self.tol = tol
        self.model_margin = model_margin
        self.reflection = reflection
        self.two_bounce = two_bounce
        self.two_bounce_stride = two_bounce_stride
        self.min_hop_separation = min_hop_separation
        self.drop_threshold = drop_threshold
        self.delay_window = delay_window

    def config(self) -> EstimatorConfig:
        return EstimatorConfig(**self.get_params())

    def fit(self, X, y=None):
        X = check_channel(X)
        self.paths_, self.trace_ = run_gc_sage(X, self.config())
        self.converged_ = self.trace_.converged
        self.objective_ = self.trace_.final_objective
        return self

    def _check_fitted(self):
        if not hasattr(self, "paths_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("GCSAGE instance is not fitted yet")

    def predict(self, X) -> np.ndarray:
        """Model tensor ``sum_l z_l`` on the frequency grid of ``X``."""
        self._check_fitted()
        X = check_channel(X)
        out = np.zeros(X.values.shape, dtype=complex)
        for e in self.paths_:
            out += reconstruct_path(e, X.freq)
        return out

    def score(self, X, y=None) -> float:
        """Negative residual energy (larger is better)."""
        self._check_fitted()
        return -objective(check_channel(X), self.paths_)
