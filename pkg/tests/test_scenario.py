import numpy as np
import pytest

from gcsage.exceptions import InvalidGeometryError, InvalidPathError, ScenarioError
from gcsage.scenario import (
    ArrayLayout,
    Environment,
    Facet,
    PathTruth,
    diffraction_sources,
    enumerate_paths,
    make_array,
    parse_scenario,
    visibility_mask,
)

from conftest import wall


def angle(a, b):
    return np.arccos(np.clip(a @ b / np.linalg.norm(a) / np.linalg.norm(b), -1, 1))


def single_arrays(tx=(1.0, 1.0, 0.0), rx=(3.0, 1.0, 0.0)):
    return ArrayLayout(np.array([tx]), np.array([rx]))


def test_empty_environment_gives_los_only(empty_env):
    paths = enumerate_paths(empty_env, single_arrays())
    assert len(paths) == 1 and paths[0].order == 0
    assert paths[0].gain == pytest.approx(0.5)


def test_case1_one_bounce_truths(case1):
    # reference-channel reflection points of the three walls
    expected = {"left wall": (0.0, 2.88), "upper wall": (2.46, 6.0), "right wall": (6.0, 2.27)}
    paths = {p.label: p for p in case1.truth_paths() if p.order == 1}
    for label, xy in expected.items():
        assert np.linalg.norm(paths[label].points[0, :2] - xy) <= 0.02, label


def test_case1_two_bounce_truths(case1):
    expected = {
        "upper wall -> left wall": [(0.64, 6.0), (0.0, 5.19)],
        "upper wall -> right wall": [(3.94, 6.0), (6.0, 3.84)],
        "left wall -> right wall": [(0.0, 3.49), (6.0, 1.77)],
        "right wall -> left wall": [(6.0, 3.19), (0.0, 1.78)],
    }
    paths = {p.label: p for p in case1.truth_paths() if p.order == 2}
    for label, pts in expected.items():
        assert np.allclose(paths[label].points[:, :2], pts, atol=0.02), label


def test_case1_table_dimensions(case1):
    a = case1.arrays
    assert (a.M, a.N, case1.freq.count) == (16, 121, 101)
    assert case1.freq.spacing == 10e6


def test_parallel_walls_two_bounce_equal_angles():
    env = Environment([wall(0, 0, 0, 4), wall(4, 0, 4, 4)], bounds=np.array([[-1, 5.0], [-1, 5.0], [-1, 1.0]]))
    arrays = single_arrays((1.0, 1.0, 0.0), (3.0, 2.5, 0.0))
    paths = enumerate_paths(env, arrays)
    two = [p for p in paths if p.order == 2]
    assert len(two) == 2
    for p in two:
        track = p.element_tracks(arrays)[0, 0]
        for k in (1, 2):
            n = env.facets[p.facets[k - 1]].normal
            assert abs(angle(track[k - 1] - track[k], n) - angle(track[k + 1] - track[k], n)) < 1e-9


def test_visibility_no_blockers(case1):
    env = case1.environment.with_facets([f for f in case1.environment.facets if f.mechanism != "blocker"])
    for p in enumerate_paths(env, case1.arrays):
        assert visibility_mask(p, env, case1.arrays).all()


def test_case1_upper_wall_contiguous_null(case1):
    upper = next(p for p in case1.truth_paths() if p.label == "upper wall")
    vis = upper.visibility
    assert vis.any() and not vis.all()
    # per Tx row the blocked Rx indices form one contiguous run
    for row in vis:
        idx = np.flatnonzero(~row)
        if len(idx):
            assert np.all(np.diff(idx) == 1)


def test_visibility_full_blocker():
    env = Environment([Facet(np.array([[2.0, -5, -1], [2.0, 5, -1], [2.0, 5, 1], [2.0, -5, 1]]), "blocker")])
    arrays = ArrayLayout(np.array([[1.0, 0, 0], [1.0, 0.1, 0]]), np.array([[3.0, 0, 0], [3.0, 0.2, 0]]))
    los = PathTruth(0, np.empty((0, 3)), (), 1.0, np.ones((2, 2), dtype=bool))
    assert not visibility_mask(los, env, arrays).any()
    assert enumerate_paths(env, arrays) == []


def test_diffraction_none_without_edges(case1):
    assert diffraction_sources(case1.environment, case1.arrays) == []


def test_diffraction_zero_taper_uniform():
    blk = Facet(np.array([[2.0, -0.5, -1], [2.0, 0.5, -1], [2.0, 0.5, 1], [2.0, -0.5, 1]]), "blocker")
    env = Environment([blk], diffraction_edges=[blk.edges[1]])
    arrays = ArrayLayout(np.array([[1.0, 0, 0]]), np.array([[3.0, y, 0] for y in np.linspace(-0.3, 0.8, 6)]))
    flat = diffraction_sources(env, arrays, taper_db_per_m=0.0)[0]
    assert np.all(flat.amplitude_profile == 1.0)
    tapered = diffraction_sources(env, arrays, taper_db_per_m=30.0)[0]
    assert tapered.amplitude_profile.min() < 1.0


def test_rough_facet_acts_as_pinned_scatterer():
    env = Environment([wall(0, 0, 0, 4, mechanism="rough-scatter")])
    arrays = ArrayLayout(np.array([[1.0, 1.0, 0], [1.005, 1.0, 0]]), np.array([[3.0, 1.0, 0], [3.01, 1.0, 0]]))
    p = next(p for p in enumerate_paths(env, arrays) if p.order == 1)
    assert p.mechanisms == ("scatter",) and p.element_points is None
    assert np.allclose(p.points[0], (0, 1.0, 0))


def test_make_array_layouts():
    lin = make_array("linear", 4, 0.5, (0, 0, 0))
    assert np.allclose(lin[:, 0], [0, 0.5, 1.0, 1.5])
    pl = make_array("planar", (2, 3), 1.0, (0, 0, 0))
    assert pl.shape == (6, 3)
    circ = make_array("circular", 8, 0.1, (0, 0, 0), radius=1.0)
    assert np.allclose(np.linalg.norm(circ, axis=1), 1.0)
    with pytest.raises(ScenarioError):
        make_array("spiral", 3, 0.1, (0, 0, 0))


def test_facet_validation():
    with pytest.raises(InvalidGeometryError):
        Facet(np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0.5], [0, 1, 0]], dtype=float))
    with pytest.raises(InvalidGeometryError):
        Facet(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float), reflectivity=1.5)
    with pytest.raises(InvalidGeometryError):
        Facet(np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0]], dtype=float), mechanism="glass")


def test_array_layout_validation():
    with pytest.raises(InvalidGeometryError):
        ArrayLayout(np.zeros((2, 3)), np.ones((1, 3)))
    with pytest.raises(InvalidGeometryError):
        ArrayLayout(np.zeros((1, 3)), np.ones((1, 3)), ref_tx=1)


def test_path_truth_validation():
    with pytest.raises(InvalidPathError):
        PathTruth(1, np.zeros((2, 3)), ("scatter",), 1.0, np.ones((1, 1)))
    specular = PathTruth(1, np.zeros((1, 3)), ("specular",), 1.0, np.ones((1, 1), dtype=bool))
    with pytest.raises(InvalidPathError):
        specular.check(single_arrays())


MINIMAL = """
[room]
bounds = [[0, 6], [0, 6], [-0.05, 0.05]]
[band]
start_hz = 29.5e9
spacing_hz = 10e6
count = 11
[tx]
count = 2
spacing_wavelengths = 0.5
origin = [1, 1, 0]
[rx]
count = 3
spacing_m = 0.01
origin = [3, 1, 0]
reference = 2
"""


def test_parse_minimal():
    s = parse_scenario(MINIMAL)
    assert (s.arrays.M, s.arrays.N, s.arrays.ref_rx) == (2, 3, 1)
    assert s.freq.start == 29.5e9 and np.isinf(s.snr_db)


def test_parse_unknown_key_reports_line():
    with pytest.raises(ScenarioError, match="line"):
        parse_scenario(MINIMAL + "\n[simulation]\nmax_bounces = 2\n")


def test_parse_missing_section():
    with pytest.raises(ScenarioError, match="band"):
        parse_scenario(MINIMAL.replace("[band]", "[bandx]"))


def test_parse_bad_toml():
    with pytest.raises(ScenarioError):
        parse_scenario("[room\n")


def test_case2_objects(case2):
    paths = case2.truth_paths()
    assert [p.order for p in paths].count(1) == 4
    kinds = sorted(p.mechanisms[0] for p in paths if p.order == 1)
    assert kinds == ["scatter", "scatter", "specular", "specular"]
