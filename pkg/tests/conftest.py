"""Shared fixtures: small synthetic pairs with precomputed distance fields
and spectral bases, built once per session."""

import numpy as np
import pytest

from bijmap import fmap, geodesics, spectral
from bijmap.mesh import synth_pair


class Pair:
    """Bundle of everything the pipeline needs for one synthetic pair."""

    def __init__(self, kind, resolution, deform, seed, amplitude=0.3, k=20):
        self.x, self.y, self.gt = synth_pair(kind, resolution, deform, seed,
                                             amplitude)
        self.dx = geodesics.all_pairs(self.x)
        self.dy = geodesics.all_pairs(self.y)
        self.bx = spectral.compute_basis(self.x, k)
        self.by = spectral.compute_basis(self.y, k)

    def gt_fmap(self, k=None):
        return fmap.build_fmap(self.gt, self.bx, self.by, k or self.bx.k)

    def noisy_fmap(self, noise=0.15, seed=0, k=None):
        fm = self.gt_fmap(k)
        rng = np.random.default_rng([seed, 7])
        scale = noise * np.abs(fm.C).max()
        return fmap.FunctionalMap(fm.C + scale * rng.normal(size=fm.C.shape))


@pytest.fixture(scope="session")
def sphere_pair():
    """Rigid (exactly isometric) sphere pair, n=300."""
    return Pair("sphere", 300, "rigid", seed=5, k=20)


@pytest.fixture(scope="session")
def bend_pair():
    """Near-isometric twisted sphere pair, n=300."""
    return Pair("sphere", 300, "bend", seed=5, amplitude=0.6, k=20)


@pytest.fixture(scope="session")
def plane_pair():
    """Bumpy plane pair under a cylindrical bend, n~312."""
    return Pair("bumpy_plane", 300, "bend", seed=3, amplitude=0.4, k=20)
