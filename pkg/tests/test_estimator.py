import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from gcsage.channel import SPEED_OF_LIGHT, ChannelTensor, FrequencyGrid, steering_phase, synthesize_channel
from gcsage.estimator import (
    GCSAGE,
    EstimatorConfig,
    PathEstimate,
    classify_and_update,
    coherent_gain,
    e_step,
    estimate_amplitudes,
    init_reference,
    m_step_high_bounce,
    m_step_reflection,
    m_step_scatter_one,
    m_step_scatter_two,
    objective,
    run_gc_sage,
    scatter_distances,
)
from gcsage.exceptions import DegenerateSearchError, InvalidInputError
from gcsage.geometry import SearchGrid
from gcsage.scenario import ArrayLayout, Environment, PathTruth, enumerate_paths

from conftest import wall

LAM = 0.01


@pytest.fixture
def arrays():
    # Tx along x, Rx along y: no mirror symmetry between the two half planes
    tx = np.array([[1.0 + k * LAM / 2, 0.0, 0.0] for k in range(3)])
    rx = np.array([[3.0, k * LAM / 2, 0.0] for k in range(8)])
    return ArrayLayout(tx, rx, 0, 0)


@pytest.fixture
def grid():
    return SearchGrid(np.array([[-0.25, 4.25], [-0.25, 4.25], [-0.05, 0.05]]), 0.1)


@pytest.fixture
def freq():
    return FrequencyGrid(29.9e9, 20e6, 21)


def scatter_truth(arrays, *pts, gain=1.0):
    pts = np.array(pts, dtype=float)
    return PathTruth(len(pts), pts, ("scatter",) * len(pts), gain, np.ones((arrays.M, arrays.N), dtype=bool))


def tensor(paths, arrays, freq, snr_db=np.inf, seed=0):
    return synthesize_channel(paths, arrays, freq, snr_db, seed)


def as_estimate(path, arrays, kind):
    d = path.element_distances(arrays)
    amp = path.gain * path.visibility.astype(float)
    return PathEstimate(kind, d[arrays.ref_tx, arrays.ref_rx] / SPEED_OF_LIGHT, amp.astype(complex), d,
                        path.points)


# -- config ------------------------------------------------------------------------

def test_beta_policies():
    assert np.allclose(EstimatorConfig(n_paths=4).betas(4), 0.5)
    assert np.allclose(EstimatorConfig(n_paths=4, beta="serial").betas(4), 1.0)
    b = np.array([0.6, 0.8])
    assert np.allclose(EstimatorConfig(n_paths=2, beta=b).betas(2), b)
    with pytest.raises(InvalidInputError):
        EstimatorConfig(n_paths=2, beta=np.array([0.5, 0.5]))
    with pytest.raises(InvalidInputError):
        EstimatorConfig(beta="greedy")
    with pytest.raises(InvalidInputError):
        EstimatorConfig(n_paths=0)


def test_coherent_gain_matches_phase_scan():
    rng = np.random.default_rng(0)
    c = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
    theta = np.linspace(0, np.pi, 200001)
    brute = np.max(np.sum(np.real(c[None] * np.exp(-1j * theta)[:, None, None]) ** 2, axis=(1, 2)))
    assert coherent_gain(c) == pytest.approx(brute, rel=1e-9)


# -- E-step and amplitudes ---------------------------------------------------------

def test_e_step_single_path_full_residual(arrays, freq):
    truth = scatter_truth(arrays, (2.0, 2.0, 0.0))
    y = tensor([truth], arrays, freq, 10.0, seed=1)
    est = as_estimate(scatter_truth(arrays, (2.0, 2.1, 0.0)), arrays, "scatter-1")
    yhat = e_step(y, [est], 0, EstimatorConfig(n_paths=1))
    assert np.allclose(yhat.values, y.values, atol=1e-14)


def test_e_step_zero_residual(arrays, freq):
    a = as_estimate(scatter_truth(arrays, (2.0, 2.0, 0.0)), arrays, "scatter-1")
    b = as_estimate(scatter_truth(arrays, (1.0, 3.0, 0.0), gain=0.5), arrays, "scatter-1")
    y = ChannelTensor(np.zeros((arrays.M, arrays.N, freq.count)), freq, arrays)
    z0 = a.amplitudes[..., None] * steering_phase(a.delays, freq)
    z1 = b.amplitudes[..., None] * steering_phase(b.delays, freq)
    y.values = z0 + z1
    yhat = e_step(y, [a, b], 1, EstimatorConfig(n_paths=2), residual=np.zeros_like(y.values))
    assert np.array_equal(yhat.values, z1)


def test_amplitudes_exact_for_true_delays(arrays, freq):
    truth = scatter_truth(arrays, (2.0, 2.0, 0.0), gain=0.3 - 0.2j)
    y = tensor([truth], arrays, freq)
    amp = estimate_amplitudes(y, truth.element_distances(arrays) / SPEED_OF_LIGHT)
    assert np.max(np.abs(amp - (0.3 - 0.2j))) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_amplitudes_match_least_squares(seed):
    rng = np.random.default_rng(seed)
    freq = FrequencyGrid(29.5e9, 10e6, 17)
    y = rng.standard_normal((2, 3, 17)) + 1j * rng.standard_normal((2, 3, 17))
    tau = rng.uniform(0, 50e-9, (2, 3))
    got = estimate_amplitudes(y, tau, freq)
    s = steering_phase(tau, freq)
    for m in range(2):
        for n in range(3):
            ref = np.linalg.lstsq(s[m, n][:, None], y[m, n], rcond=None)[0][0]
            assert abs(got[m, n] - ref) <= 1e-10 * abs(ref)


def test_amplitudes_noise_floor():
    rng = np.random.default_rng(5)
    freq = FrequencyGrid(29.5e9, 10e6, 64)
    sigma2 = 0.5
    y = np.sqrt(sigma2 / 2) * (rng.standard_normal((40, 50, 64)) + 1j * rng.standard_normal((40, 50, 64)))
    amp = estimate_amplitudes(y, np.full((40, 50), 12e-9), freq)
    assert np.mean(np.abs(amp) ** 2) == pytest.approx(sigma2 / 64, rel=0.05)


# -- reference initialisation ---------------------------------------------------------

def _siso(freq, taus, alphas, sigma2=0.0, seed=0):
    h = sum(a * steering_phase(t, freq) for t, a in zip(taus, alphas))
    rng = np.random.default_rng(seed)
    h = h + np.sqrt(sigma2 / 2) * (rng.standard_normal(freq.count) + 1j * rng.standard_normal(freq.count))
    return ChannelTensor(h.reshape(1, 1, -1), freq)


def test_init_single_path():
    freq = FrequencyGrid(29.5e9, 10e6, 101)
    (tau, alpha), = init_reference(_siso(freq, [20e-9], [1.0]), EstimatorConfig(n_paths=1))
    assert abs(tau - 20e-9) <= freq.delay_bin / 8
    assert abs(abs(alpha) - 1.0) <= 0.01


def test_init_two_paths_ordered():
    freq = FrequencyGrid(29.5e9, 10e6, 101)
    taus = [20e-9, 20e-9 + 3 * freq.delay_bin]
    out = init_reference(_siso(freq, taus, [0.4, 1.0]), EstimatorConfig(n_paths=2))
    assert abs(out[0][0] - taus[1]) <= freq.delay_bin / 8 and abs(out[1][0] - taus[0]) <= freq.delay_bin / 8


def test_init_surplus_paths_at_noise_level():
    freq = FrequencyGrid(29.5e9, 10e6, 101)
    sigma2 = 1e-4
    out = init_reference(_siso(freq, [20e-9], [1.0], sigma2, seed=2), EstimatorConfig(n_paths=4))
    assert all(abs(a) ** 2 <= 10 * sigma2 for _, a in out[1:])


def test_init_zero_channel_warns():
    freq = FrequencyGrid(29.5e9, 10e6, 11)
    with pytest.warns(RuntimeWarning):
        assert init_reference(ChannelTensor(np.zeros((1, 1, 11)), freq), EstimatorConfig(n_paths=1)) == []


# -- M-steps ---------------------------------------------------------------------------

def test_scatter_one_recovers_on_grid_truth(arrays, freq, grid):
    truth = scatter_truth(arrays, (2.0, 2.0, 0.0))
    y = tensor([truth], arrays, freq)
    pt, val = m_step_scatter_one(y, truth.reference_distance(arrays), grid, EstimatorConfig(grid=grid))
    assert np.allclose(pt, truth.points[0], atol=1e-9)
    assert abs(val) <= 1e-9 * y.energy()


def test_scatter_one_degenerate(arrays, freq, grid):
    y = tensor([scatter_truth(arrays, (2.0, 2.0, 0.0))], arrays, freq)
    with pytest.raises(DegenerateSearchError):
        m_step_scatter_one(y, 1.9, grid, EstimatorConfig(grid=grid))


def test_scatter_two_recovers_on_grid_truth(arrays, freq):
    grid = SearchGrid(np.array([[-0.25, 3.75], [-0.25, 3.75], [-0.05, 0.05]]), 0.1)
    truth = scatter_truth(arrays, (0.6, 2.4, 0.0), (3.0, 3.0, 0.0))
    y = tensor([truth], arrays, freq)
    cfg = EstimatorConfig(grid=grid, two_bounce_stride=1)
    (r1, r2), val = m_step_scatter_two(y, truth.reference_distance(arrays), grid, cfg)
    assert np.allclose(r1, truth.points[0], atol=1e-9) and np.allclose(r2, truth.points[1], atol=1e-9)
    assert abs(val) <= 1e-9 * y.energy()


def test_reflection_recovers_wall(arrays, freq, grid):
    env = Environment([wall(-1.0, 0.5, 3.0, 4.5)])
    truth = next(p for p in enumerate_paths(env, arrays, 1) if p.order == 1)
    y = tensor([truth], arrays, freq)
    plane, pts, val = m_step_reflection(y, truth.reference_distance(arrays), grid, EstimatorConfig(grid=grid))
    n_true = env.facets[0].normal
    assert np.degrees(np.arccos(min(1.0, abs(plane.normal @ n_true)))) <= 1.0
    off = np.abs((pts.reshape(-1, 3) - env.facets[0].vertices[0]) @ n_true)
    assert off.max() <= grid.tolerance


def test_high_bounce_flat_delay(arrays, freq):
    d = np.full((arrays.M, arrays.N), 9.3)
    truth = PathTruth(1, np.zeros((1, 3)), ("scatter",), 1.0, np.ones((arrays.M, arrays.N), dtype=bool), distances=d)
    y = tensor([truth], arrays, freq)
    tau, val = m_step_high_bounce(y, 9.0 / SPEED_OF_LIGHT, EstimatorConfig())
    assert tau * SPEED_OF_LIGHT == pytest.approx(9.3, abs=1e-6)
    assert val <= 1e-9 * y.energy()


# -- classification ------------------------------------------------------------------

def _seeded(y, arrays, d):
    dist = np.full((arrays.M, arrays.N), d)
    from gcsage.estimator import Correlator

    amps = Correlator(y.values, y.freq).amplitudes(dist)
    return PathEstimate("high-bounce", d / SPEED_OF_LIGHT, amps, dist)


def _classify(paths, arrays, freq, grid, snr_db=30.0, **kw):
    y = tensor(paths, arrays, freq, snr_db, seed=3)
    cfg = EstimatorConfig(grid=grid, n_paths=1, two_bounce_stride=1, **kw)
    d0 = paths[0].reference_distance(arrays)
    return classify_and_update(y, _seeded(y, arrays, d0 + 0.05), grid, cfg, scale=y.noise_power)


def test_classify_scatterer(arrays, freq, grid):
    truth = scatter_truth(arrays, (2.0, 2.0, 0.0))
    est = _classify([truth], arrays, freq, grid)
    assert est.kind == "scatter-1"
    assert np.linalg.norm(est.points[0] - truth.points[0]) <= 0.1


def test_classify_specular_wall(arrays, freq, grid):
    env = Environment([wall(-1.0, 0.5, 3.0, 4.5)])
    truth = next(p for p in enumerate_paths(env, arrays, 1) if p.order == 1)
    assert _classify([truth], arrays, freq, grid).kind == "reflect-1"


def test_classify_three_bounce_as_high_bounce(arrays, freq, grid):
    d = scatter_distances(np.array([[0.5, 3.5, 0.0], [3.5, 3.8, 0.0], [4.0, 0.5, 0.0]]), arrays)
    truth = PathTruth(1, np.zeros((1, 3)), ("scatter",), 1.0, np.ones((arrays.M, arrays.N), dtype=bool),
                      distances=d + 0.004 * np.random.default_rng(0).standard_normal(d.shape))
    est = _classify([truth], arrays, freq, grid, two_bounce=False)
    assert est.kind == "high-bounce"


# -- outer loop ------------------------------------------------------------------------

def test_objective_truth_and_empty(arrays, freq):
    truth = scatter_truth(arrays, (2.0, 2.0, 0.0))
    y = tensor([truth], arrays, freq)
    assert objective(y, [as_estimate(truth, arrays, "scatter-1")]) == 0.0
    assert objective(y, []) == pytest.approx(y.energy())


def test_run_single_path_noiseless(arrays, freq, grid):
    truth = scatter_truth(arrays, (2.0, 2.0, 0.0))
    y = tensor([truth], arrays, freq)
    est, trace = run_gc_sage(y, EstimatorConfig(grid=grid, n_paths=1, max_iter=3, two_bounce=False))
    assert trace.final_objective <= 1e-10 * y.energy()
    assert len(est) == 1 and est[0].kind == "scatter-1"
    assert np.all(np.diff(trace.objectives) <= 0)


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2**16))
def test_objective_monotone_over_sweeps(seed):
    tx = np.array([[1.0 + k * LAM / 2, 0.0, 0.0] for k in range(3)])
    rx = np.array([[3.0, k * LAM / 2, 0.0] for k in range(8)])
    arrays = ArrayLayout(tx, rx)
    freq = FrequencyGrid(29.9e9, 20e6, 21)
    grid = SearchGrid(np.array([[-0.25, 4.25], [-0.25, 4.25], [-0.05, 0.05]]), 0.2)
    rng = np.random.default_rng(seed)
    paths = [scatter_truth(arrays, (*rng.uniform(0.3, 4.0, 2), 0.0), gain=rng.uniform(0.3, 1)) for _ in range(2)]
    y = tensor(paths, arrays, freq, 15.0, seed=seed)
    _, trace = run_gc_sage(y, EstimatorConfig(grid=grid, n_paths=2, max_iter=3, two_bounce=False))
    assert np.all(np.diff(trace.objectives) <= 0)
    assert all(r["value"] <= r["prev"] for r in trace.updates)


def test_run_is_deterministic(arrays, freq):
    grid = SearchGrid(np.array([[-0.25, 4.25], [-0.25, 4.25], [-0.05, 0.05]]), 0.2)
    y = tensor([scatter_truth(arrays, (2.0, 2.0, 0.0))], arrays, freq, 20.0, seed=4)
    cfg = EstimatorConfig(grid=grid, n_paths=2, max_iter=2, two_bounce=False)
    a, ta = run_gc_sage(y, cfg)
    b, tb = run_gc_sage(y, cfg)
    assert ta.objectives == tb.objectives
    assert all(x.distances.tobytes() == z.distances.tobytes() for x, z in zip(a, b))


def test_run_requires_grid(arrays, freq):
    y = tensor([scatter_truth(arrays, (2.0, 2.0, 0.0))], arrays, freq)
    with pytest.raises(InvalidInputError):
        run_gc_sage(y, EstimatorConfig())
    with pytest.raises(InvalidInputError):
        run_gc_sage(ChannelTensor(y.values, freq), EstimatorConfig())


# -- estimator wrapper -------------------------------------------------------------------

def test_gcsage_fit_predict_score(arrays, freq, grid):
    truth = scatter_truth(arrays, (2.0, 2.0, 0.0))
    y = tensor([truth], arrays, freq)
    model = GCSAGE(grid=grid, n_paths=1, max_iter=2, two_bounce=False)
    with pytest.raises(NotFittedError):
        model.predict(y)
    assert model.fit(y) is model
    assert np.allclose(model.predict(y), y.values, atol=1e-6 * np.abs(y.values).max())
    assert -model.score(y) <= 1e-10 * y.energy()
    assert model.converged_ in (True, False)


def test_gcsage_params_roundtrip(grid):
    model = GCSAGE(grid=grid, n_paths=3, beta="serial")
    twin = clone(model)
    assert twin.get_params()["n_paths"] == 3 and twin.get_params()["beta"] == "serial"
    assert model.config().beta == "serial"
    with pytest.raises(InvalidInputError):
        GCSAGE(grid=grid, n_paths=2).fit(np.zeros((1, 1, 3)))
