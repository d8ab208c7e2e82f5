"""Functional map construction and the pointwise recovery baselines."""

import itertools

import numpy as np
import pytest

from bijmap.fmap import (
    FunctionalMap,
    PointMap,
    SparseCorrespondence,
    build_fmap,
    diagonal_dominance,
    interpolate_sparse,
    nearest_rows,
    recover_bijective_nn,
    recover_icp,
    recover_nn,
)
from bijmap.mesh import synth_pair
from bijmap.spectral import compute_basis


class TestPointMap:
    def test_bijective_flag_checked(self):
        assert PointMap([1, 0, 2], 3).bijective
        assert not PointMap([0, 0, 2], 3).bijective
        assert not PointMap([0, 1], 3).bijective  # rectangular

    def test_range_check(self):
        with pytest.raises(ValueError, match="range"):
            PointMap([0, 5], 3)

    def test_inverse(self):
        pm = PointMap([2, 0, 1], 3)
        np.testing.assert_array_equal(pm.inverse().image, [1, 2, 0])

    def test_file_roundtrip(self, tmp_path):
        pm = PointMap([2, 0, 1], 3)
        p = tmp_path / "m.map"
        pm.save(p, header="cfg=deadbeef")
        assert (tmp_path / "m.map").read_text().startswith("# cfg=deadbeef\n")
        loaded = PointMap.load(p, n_tgt=3)
        assert loaded == pm


class TestSparseCorrespondence:
    def test_duplicate_sources_rejected(self):
        with pytest.raises(ValueError, match="duplicate"):
            SparseCorrespondence([[0, 1], [0, 2]])

    def test_file_roundtrip(self, tmp_path):
        sc = SparseCorrespondence([[0, 5], [3, 2]])
        p = tmp_path / "s.txt"
        sc.save(p)
        loaded = SparseCorrespondence.load(p)
        np.testing.assert_array_equal(loaded.pairs, sc.pairs)


class TestFunctionalMapFile:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        fm = FunctionalMap(rng.normal(size=(6, 6)))
        p = tmp_path / "c.fmp"
        fm.save(p)
        loaded = FunctionalMap.load(p)
        np.testing.assert_array_equal(loaded.C, fm.C)

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "c.fmp"
        p.write_bytes(b"JUNK" + b"\x00" * 8)
        with pytest.raises(ValueError, match="magic"):
            FunctionalMap.load(p)


class TestBuildFmap:
    def test_identity_map_gives_identity(self, sphere_pair):
        b = sphere_pair.bx
        ident = PointMap.identity(b.n)
        fm = build_fmap(ident, b, b, 20)
        assert np.abs(fm.C - np.eye(20)).max() < 1e-8

    def test_full_rank_inversion(self):
        # with complete bases the spectral relation inverts back to the
        # permutation matrix exactly
        x, y, gt = synth_pair("sphere", 120, deform="rigid", permute_seed=2)
        bx = compute_basis(x, 120)
        by = compute_basis(y, 120)
        fm = build_fmap(gt, bx, by, 120)
        pi = by.phi_w @ fm.C @ bx.phi_w.T
        dense = np.zeros((120, 120))
        dense[gt.image, np.arange(120)] = 1.0
        assert np.abs(pi - dense).max() < 1e-6

    def test_diagonal_dominance_on_isometry(self, sphere_pair):
        fm = sphere_pair.gt_fmap(20)
        assert diagonal_dominance(fm.C) > 1.0

    def test_k_too_large(self, sphere_pair):
        with pytest.raises(ValueError, match="exceeds"):
            build_fmap(PointMap.identity(sphere_pair.bx.n),
                       sphere_pair.bx, sphere_pair.by, 99)


class TestObjectiveIdentity:
    def test_lap_nn_equivalence(self, sphere_pair):
        # |C Phi^T - Psi^T Pi|_F^2 = |C Phi^T|^2 + |Psi^T|^2 - 2 <Psi C Phi^T, Pi>
        b = sphere_pair.bx
        rng = np.random.default_rng(3)
        C = rng.normal(size=(20, 20))
        phi = sphere_pair.bx.phi_w
        psi = sphere_pair.by.phi_w
        for _ in range(5):
            perm = rng.permutation(b.n)
            lhs = np.linalg.norm(C @ phi.T - psi[perm].T) ** 2
            inner = (psi @ C @ phi.T)[perm, np.arange(b.n)].sum()
            rhs = (np.linalg.norm(C @ phi.T) ** 2 + np.linalg.norm(psi.T) ** 2
                   - 2 * inner)
            assert abs(lhs - rhs) < 1e-8 * max(1.0, abs(lhs))


class TestNearestRows:
    def test_matches_bruteforce(self):
        rng = np.random.default_rng(9)
        q = rng.normal(size=(40, 6))
        p = rng.normal(size=(70, 6))
        got = nearest_rows(q, p, chunk=16)
        ref = np.array([np.linalg.norm(p - qi, axis=1).argmin() for qi in q])
        np.testing.assert_array_equal(got, ref)

    def test_tie_breaks_to_lowest_index(self):
        q = np.array([[0.0, 0.0]])
        p = np.array([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]])
        assert nearest_rows(q, p)[0] == 0


class TestRecoverNN:
    def test_identity(self, sphere_pair):
        b = sphere_pair.bx
        pm = recover_nn(FunctionalMap(np.eye(20)), b, b)
        np.testing.assert_array_equal(pm.image, np.arange(b.n))

    def test_two_point_toy(self):
        # hand-checkable: embeddings distances decide each source column
        class StubBasis:
            def __init__(self, phi_w):
                self.phi_w = phi_w
                self.n, self.k = phi_w.shape

        bx = StubBasis(np.array([[1.0, 0.0], [0.0, 1.0]]))
        by = StubBasis(np.array([[0.9, 0.1], [0.0, 1.0]]))
        pm = recover_nn(FunctionalMap(np.eye(2)), bx, by)
        np.testing.assert_array_equal(pm.image, [0, 1])

    def test_noisy_c_not_surjective(self, sphere_pair):
        pm = recover_nn(sphere_pair.noisy_fmap(0.2), sphere_pair.bx,
                        sphere_pair.by)
        assert not pm.bijective
        assert np.unique(pm.image).size < sphere_pair.bx.n


class TestRecoverBijectiveNN:
    def test_toy_matches_enumeration(self):
        class StubBasis:
            def __init__(self, phi_w):
                self.phi_w = phi_w
                self.n, self.k = phi_w.shape

        rng = np.random.default_rng(4)
        for _ in range(10):
            phi = rng.normal(size=(3, 3))
            psi = rng.normal(size=(3, 3))
            C = rng.normal(size=(3, 3))
            pm = recover_bijective_nn(FunctionalMap(C), StubBasis(phi),
                                      StubBasis(psi))
            scores = psi @ C @ phi.T  # benefit[j, i]
            best, best_val = None, -np.inf
            for perm in itertools.permutations(range(3)):
                v = sum(scores[perm[i], i] for i in range(3))
                if v > best_val:
                    best, best_val = perm, v
            np.testing.assert_array_equal(pm.image, best)

    def test_recovers_groundtruth_at_full_rank(self):
        x, y, gt = synth_pair("sphere", 200, deform="rigid", permute_seed=3)
        bx = compute_basis(x, 200)
        by = compute_basis(y, 200)
        fm = build_fmap(gt, bx, by, 200)
        pm = recover_bijective_nn(fm, bx, by)
        np.testing.assert_array_equal(pm.image, gt.image)

    def test_always_permutation(self, sphere_pair):
        pm = recover_bijective_nn(sphere_pair.noisy_fmap(0.4),
                                  sphere_pair.bx, sphere_pair.by)
        assert pm.bijective

    def test_objective_beats_random_permutations(self, sphere_pair):
        fm = sphere_pair.noisy_fmap(0.3)
        phi = sphere_pair.bx.phi_w[:, :20]
        psi = sphere_pair.by.phi_w[:, :20]
        scores = psi @ fm.C @ phi.T
        pm = recover_bijective_nn(fm, sphere_pair.bx, sphere_pair.by)
        n = sphere_pair.bx.n
        ours = scores[pm.image, np.arange(n)].sum()
        rng = np.random.default_rng(0)
        for _ in range(20):
            perm = rng.permutation(n)
            assert ours >= scores[perm, np.arange(n)].sum() - 1e-9

    def test_objective_beats_repaired_nn(self, sphere_pair):
        # project the (non-bijective) NN map to a permutation by keeping
        # first claims and greedily reassigning displaced sources, then check
        # the assignment solution scores at least as well
        fm = sphere_pair.noisy_fmap(0.3)
        phi = sphere_pair.bx.phi_w[:, :20]
        psi = sphere_pair.by.phi_w[:, :20]
        scores = psi @ fm.C @ phi.T
        n = sphere_pair.bx.n
        nn = recover_nn(fm, sphere_pair.bx, sphere_pair.by)
        repaired = np.full(n, -1, np.int64)
        taken = np.zeros(n, bool)
        for i, j in enumerate(nn.image):
            if not taken[j]:
                repaired[i] = j
                taken[j] = True
        free = np.flatnonzero(~taken)
        cursor = 0
        for i in np.flatnonzero(repaired < 0):
            repaired[i] = free[cursor]
            cursor += 1
        pm = recover_bijective_nn(fm, sphere_pair.bx, sphere_pair.by)
        ours = scores[pm.image, np.arange(n)].sum()
        theirs = scores[repaired, np.arange(n)].sum()
        assert ours >= theirs - 1e-9


class TestRecoverICP:
    def test_fixed_point_in_one_iteration(self, sphere_pair):
        b = sphere_pair.bx
        pm, C, info = recover_icp(FunctionalMap(np.eye(20)), b, b,
                                  full_output=True)
        np.testing.assert_array_equal(pm.image, np.arange(b.n))
        assert info["iterations"] == 1
        np.testing.assert_allclose(C.C, np.eye(20), atol=1e-10)

    def test_objective_non_increasing(self, sphere_pair):
        fm = sphere_pair.noisy_fmap(0.3)
        _, _, info = recover_icp(fm, sphere_pair.bx, sphere_pair.by,
                                 full_output=True)
        objs = info["objectives"]
        assert all(a >= b - 1e-9 * max(1.0, objs[0])
                   for a, b in zip(objs, objs[1:]))

    def test_refined_c_is_orthogonal(self, sphere_pair):
        fm = sphere_pair.noisy_fmap(0.3)
        _, C = recover_icp(fm, sphere_pair.bx, sphere_pair.by)
        assert np.abs(C.C.T @ C.C - np.eye(20)).max() < 1e-8

    def test_improves_noisy_input(self, sphere_pair, bend_pair):
        from bijmap.evaluation import geodesic_error
        for pair in (sphere_pair,):
            fm = pair.noisy_fmap(0.25)
            nn = recover_nn(fm, pair.bx, pair.by)
            icp_pm, _ = recover_icp(fm, pair.bx, pair.by)
            e_nn = geodesic_error(nn, pair.gt, pair.dy, pair.dy.diameter).mean
            e_icp = geodesic_error(icp_pm, pair.gt, pair.dy,
                                   pair.dy.diameter).mean
            assert e_icp <= e_nn


class TestInterpolateSparse:
    def test_full_sparse_set_reproduces_map(self, sphere_pair):
        n = sphere_pair.x.n_vertices
        sc = SparseCorrespondence(
            np.column_stack([np.arange(n), sphere_pair.gt.image]))
        pm = interpolate_sparse(sc, sphere_pair.dx, n_tgt=n)
        assert pm == sphere_pair.gt

    def test_single_pair_constant_map(self, sphere_pair):
        n = sphere_pair.x.n_vertices
        pm = interpolate_sparse(SparseCorrespondence([[5, 77]]),
                                sphere_pair.dx, n_tgt=n)
        assert (pm.image == 77).all()

    def test_error_grows_with_distance_to_landmarks(self, sphere_pair):
        n = sphere_pair.x.n_vertices
        rng = np.random.default_rng(8)
        srcs = rng.choice(n, 20, replace=False)
        sc = SparseCorrespondence(
            np.column_stack([srcs, sphere_pair.gt.image[srcs]]))
        pm = interpolate_sparse(sc, sphere_pair.dx, n_tgt=n)
        errs = sphere_pair.dy.D[pm.image, sphere_pair.gt.image]
        d_to_set = sphere_pair.dx.D[:, srcs].min(axis=1)
        # zero error at the landmarks, correlated growth away from them
        assert errs[srcs].max() == 0.0
        near = errs[d_to_set < np.median(d_to_set)].mean()
        far = errs[d_to_set >= np.median(d_to_set)].mean()
        assert far > near

    def test_empty_rejected(self, sphere_pair):
        sc = SparseCorrespondence(np.empty((0, 2), dtype=int))
        with pytest.raises(ValueError, match="empty"):
            interpolate_sparse(sc, sphere_pair.dx)
