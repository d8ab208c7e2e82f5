"""Error curves, coverage reports, stage timing."""

import json
import time

import numpy as np
import pytest

from bijmap.evaluation import (
    StageTimer,
    coverage,
    geodesic_error,
    runtime_report,
)
from bijmap.fmap import PointMap


class TestGeodesicError:
    def test_perfect_map(self, sphere_pair):
        rep = geodesic_error(sphere_pair.gt, sphere_pair.gt, sphere_pair.dy,
                             sphere_pair.dy.diameter)
        assert rep.mean == 0.0 and rep.median == 0.0
        assert rep.exact_hit_frac == 1.0
        # with all errors at zero the strict-< curve is 0 at t=0, 1 beyond
        assert rep.curve[0] == 0.0
        assert (rep.curve[1:] == 1.0).all()

    def test_constant_map_errors_are_distances(self, sphere_pair):
        pair = sphere_pair
        n = pair.x.n_vertices
        const = PointMap(np.full(n, pair.gt.image[0]), n)
        rep = geodesic_error(const, pair.gt, pair.dy, pair.dy.diameter)
        expected = pair.dy.D[pair.gt.image, pair.gt.image[0]] / pair.dy.diameter
        np.testing.assert_allclose(rep.errors, expected)

    def test_curve_monotone_and_bounded(self, sphere_pair):
        pair = sphere_pair
        rng = np.random.default_rng(0)
        pm = PointMap(rng.permutation(pair.x.n_vertices), pair.x.n_vertices)
        rep = geodesic_error(pm, pair.gt, pair.dy, pair.dy.diameter)
        assert (np.diff(rep.curve) >= 0).all()
        assert rep.curve[-1] <= 1.0
        assert rep.errors.min() >= 0.0

    def test_csv(self, tmp_path, sphere_pair):
        rep = geodesic_error(sphere_pair.gt, sphere_pair.gt, sphere_pair.dy,
                             sphere_pair.dy.diameter)
        p = tmp_path / "curve.csv"
        rep.write_csv(p)
        lines = p.read_text().strip().splitlines()
        assert lines[0] == "threshold,fraction"
        assert len(lines) == 102  # header + 101 grid points

    def test_requires_bijective_gt(self, sphere_pair):
        n = sphere_pair.x.n_vertices
        bad_gt = PointMap(np.zeros(n, int), n)
        with pytest.raises(ValueError, match="bijective"):
            geodesic_error(bad_gt, bad_gt, sphere_pair.dy,
                           sphere_pair.dy.diameter)


class TestCoverage:
    def test_bijective_full_coverage(self, sphere_pair):
        rep = coverage(sphere_pair.gt, sphere_pair.dy)
        assert rep.coverage == 1.0
        assert rep.distances.max() == 0.0

    def test_constant_map(self, sphere_pair):
        n = sphere_pair.x.n_vertices
        rep = coverage(PointMap(np.zeros(n, int), n), sphere_pair.dy)
        assert rep.coverage == pytest.approx(1.0 / n)
        np.testing.assert_allclose(rep.distances, sphere_pair.dy.D[:, 0])

    def test_partial_coverage(self, sphere_pair):
        pair = sphere_pair
        n = pair.x.n_vertices
        image = pair.gt.image.copy()
        image[: n // 4] = image[0]  # collapse a quarter of the sources
        rep = coverage(PointMap(image, n), pair.dy)
        assert 0.5 < rep.coverage < 1.0


class TestTimer:
    def test_empty_report(self):
        assert runtime_report(StageTimer()) == {}

    def test_bayes_stage_grows_superlinearly(self):
        # two timed runs: quadrupling n must raise the denoise cost by more
        # than the linear factor of 4
        from bijmap import geodesics
        from bijmap.bayes import BayesConfig, bayes_denoise
        from bijmap.mesh import synth_pair

        times = {}
        for n in (400, 1600):
            x, y, gt = synth_pair("sphere", n, "rigid", 3)
            dx = geodesics.all_pairs(x)
            dy = geodesics.all_pairs(y)
            rng = np.random.default_rng(0)
            pi0 = PointMap(rng.permutation(n), n)
            cfg = BayesConfig(sigma2_frac=0.04)
            bayes_denoise(pi0, dx, dy, x.vertex_areas, y.vertex_areas, cfg)
            t0 = time.perf_counter()
            bayes_denoise(pi0, dx, dy, x.vertex_areas, y.vertex_areas, cfg)
            times[n] = time.perf_counter() - t0
        assert times[1600] > 4.0 * times[400]

    def test_stages_recorded(self, tmp_path):
        t = StageTimer()
        with t.stage("a"):
            time.sleep(0.01)
        with t.stage("b"):
            pass
        rep = runtime_report(t, tmp_path / "r.json")
        assert rep["a"] >= 0.01
        assert set(rep) == {"a", "b"}
        assert json.loads((tmp_path / "r.json").read_text()) == rep

    def test_accumulates(self):
        t = StageTimer()
        for _ in range(3):
            with t.stage("x"):
                pass
        assert t.times["x"] >= 0.0
