"""Distance fields: toy graphs, sphere accuracy, metric invariants, caching."""

import numpy as np
import pytest
from scipy import sparse

from bijmap import geodesics
from bijmap.geodesics import (
    DistanceField,
    all_pairs,
    distance_field,
    graph_distances,
    load_distances,
    mesh_edge_graph,
    save_distances,
)
from bijmap.mesh import TriMesh, synth_pair


def path_graph(weights):
    n = len(weights) + 1
    rows = np.arange(n - 1)
    g = sparse.csr_matrix((weights, (rows, rows + 1)), shape=(n, n))
    return g + g.T


class TestToyGraphs:
    def test_three_vertex_path(self):
        d = graph_distances(path_graph([1.0, 1.0]), sources=0)
        np.testing.assert_allclose(d, [0, 1, 2])

    def test_all_pairs_path(self):
        D = graph_distances(path_graph([1.0, 1.0]))
        np.testing.assert_allclose(D, [[0, 1, 2], [1, 0, 1], [2, 1, 0]])


def flat_grid(side, spacing=1.0):
    xs = np.arange(side) * spacing
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    verts = np.column_stack([gx.ravel(), gy.ravel(), np.zeros(side * side)])
    faces = []
    for i in range(side - 1):
        for j in range(side - 1):
            a = i * side + j
            b = a + side
            faces.append([a, b, a + 1])
            faces.append([b, b + 1, a + 1])
    return TriMesh(verts, np.array(faces))


class TestSingleSource:
    def test_sphere_antipodal(self):
        x, _, _ = synth_pair("sphere", 2500)
        d = distance_field(x, 0, "fast_marching")
        anti = int(np.argmin(np.linalg.norm(x.vertices + x.vertices[0], axis=1)))
        chord = np.linalg.norm(x.vertices[anti] - x.vertices[0])
        great_circle = 2 * np.arcsin(min(1.0, chord / 2))
        assert abs(d[anti] - great_circle) / great_circle < 0.03

    def test_refinement_improves(self):
        errs = []
        for n in (600, 2400):
            x, _, _ = synth_pair("sphere", n)
            d = distance_field(x, 0, "fast_marching")
            anti = int(np.argmin(np.linalg.norm(x.vertices + x.vertices[0], axis=1)))
            chord = np.linalg.norm(x.vertices[anti] - x.vertices[0])
            gc = 2 * np.arcsin(min(1.0, chord / 2))
            errs.append(abs(d[anti] - gc) / gc)
        assert errs[1] < errs[0]

    def test_grid_fmm_beats_dijkstra(self):
        m = flat_grid(20)
        src = 0
        target = m.n_vertices - 1  # opposite corner
        exact = np.linalg.norm(m.vertices[target] - m.vertices[src])
        d_fmm = distance_field(m, src, "fast_marching")[target]
        d_dij = distance_field(m, src, "dijkstra")[target]
        assert abs(d_fmm - exact) < abs(d_dij - exact)

    def test_dijkstra_dominates_fmm(self):
        m = flat_grid(15)
        d_fmm = distance_field(m, 3, "fast_marching")
        d_dij = distance_field(m, 3, "dijkstra")
        assert (d_dij >= d_fmm - 1e-9).all()

    def test_source_validation(self):
        m = flat_grid(4)
        with pytest.raises(ValueError, match="source"):
            distance_field(m, 99)


class TestAllPairs:
    def test_symmetry_and_diagonal(self, sphere_pair):
        D = sphere_pair.dx.D
        assert np.abs(D - D.T).max() == 0.0
        assert np.abs(np.diag(D)).max() == 0.0
        assert D.min() >= 0.0

    def test_geodesic_dominates_chord(self, sphere_pair):
        v = sphere_pair.x.vertices
        chord = np.linalg.norm(v[None] - v[:, None], axis=2)
        assert (sphere_pair.dx.D - chord).min() > -1e-9

    def test_triangle_inequality_spot_check(self, sphere_pair):
        D = sphere_pair.dx.D
        mesh = sphere_pair.x
        e = mesh.edges
        mean_edge = np.linalg.norm(
            mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]], axis=1).mean()
        rng = np.random.default_rng(0)
        n = mesh.n_vertices
        i, j, k = rng.integers(0, n, size=(3, 1000))
        assert (D[i, k] <= D[i, j] + D[j, k] + 2 * mean_edge).all()

    def test_storage_cap(self):
        x, _, _ = synth_pair("sphere", 300)
        with pytest.raises(ValueError, match="cap"):
            all_pairs(x, storage_cap=100)

    def test_methods_agree_roughly(self):
        x, _, _ = synth_pair("sphere", 300)
        f = all_pairs(x, "fast_marching")
        d = all_pairs(x, "dijkstra")
        # edge-graph distances overestimate but stay within ~20% on a sphere
        ratio = d.D[f.D > 0.5] / f.D[f.D > 0.5]
        assert ratio.min() > 0.99 and ratio.max() < 1.20


class TestDistanceField:
    def test_constructor_enforces_invariants(self):
        D = np.array([[0.0, 1.0], [3.0, 0.1]])
        f = DistanceField(D, method="dijkstra")
        assert f.D[0, 1] == f.D[1, 0] == 2.0
        assert f.D[1, 1] == 0.0

    def test_negative_rejected(self):
        with pytest.raises(ValueError, match="negative"):
            DistanceField(np.array([[0.0, -1.0], [-1.0, 0.0]]))

    def test_diameter_small_mesh_is_max(self, sphere_pair):
        assert sphere_pair.dx.diameter == sphere_pair.dx.D.max()

    def test_diameter_estimate_large(self):
        rng = np.random.default_rng(2)
        pts = rng.random((2500, 3))
        D = np.linalg.norm(pts[:, None] - pts[None], axis=2)
        est = geodesics.estimate_diameter(D)
        assert 0.8 * D.max() <= est <= D.max()


class TestCache:
    def test_roundtrip(self, tmp_path, sphere_pair):
        p = tmp_path / "d.dst1"
        save_distances(sphere_pair.dx, p)
        loaded = load_distances(p)
        assert loaded.method == "fast_marching"
        assert loaded.n == sphere_pair.dx.n
        # float32 storage: relative error bounded by the mantissa
        err = np.abs(loaded.D - sphere_pair.dx.D).max()
        assert err < 1e-6 * sphere_pair.dx.diameter

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.dst1"
        p.write_bytes(b"XXXX" + b"\x00" * 16)
        with pytest.raises(ValueError, match="magic"):
            load_distances(p)
