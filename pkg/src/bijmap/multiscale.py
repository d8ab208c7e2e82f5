"""Coarse-to-fine Bayesian denoising for large meshes.

A full assignment is solved on the coarsest farthest-point-sampling level;
each solution is prolonged to the next level by nearest-neighbor
interpolation and used as the input correspondence there, with candidate
targets restricted to a fixed geodesic radius around the prolonged guess
(prohibited pairs simply get no score entry).  The radius must exceed the
coarse sampling radius or the true match may be excluded; infeasible levels
retry with the radius doubled.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import lap
from .bayes import BayesConfig, bayes_denoise, gaussian_pullback, score_rows
from .fmap import PointMap
from ._rows import gather_rows, row_provider


@dataclass
class MultiscaleConfig:
    """Level sizes (ascending, last = n), candidate radius multiplier, and
    optional per-level BayesConfig overrides (index -> config)."""

    level_sizes: list
    radius_mult: float = 2.0
    level_configs: dict = field(default_factory=dict)
    max_radius_retries: int = 3

    def __post_init__(self):
        sizes = list(self.level_sizes)
        if not sizes or any(b <= a for a, b in zip(sizes, sizes[1:])):
            raise ValueError("level sizes must be strictly ascending")
        if self.radius_mult <= 1.0:
            raise ValueError("radius multiplier must exceed 1 "
                             "(candidates must cover the coarse sampling radius)")
        self.level_sizes = sizes


def _aggregated_areas(level_samples, parents, areas):
    """Sum the fine vertex areas over the cell of each sample (discrete da)."""
    local = np.full(areas.size, -1, np.int64)
    local[level_samples] = np.arange(level_samples.size)
    owner = local[parents]
    return np.bincount(owner, weights=areas, minlength=level_samples.size)


def bayes_denoise_multiscale(pi0, dist_x, dist_y, areas_x, areas_y,
                             hier_x, hier_y, mcfg, cfg=None, lap_solver=None,
                             full_output=False):
    """Hierarchical version of the Bayesian denoiser.

    ``hier_x``/``hier_y`` are SampleHierarchy objects whose level sizes match
    ``mcfg.level_sizes`` (the last level spanning all vertices).  Returns a
    bijective PointMap on the full vertex set; with ``full_output`` also a
    per-level report (sizes, score density, radius, wall time).
    """
    cfg = cfg or BayesConfig()
    n, _ = row_provider(dist_x)
    ny, _ = row_provider(dist_y)
    if not (pi0.n_src == pi0.n_tgt == n == ny):
        raise ValueError("multiscale denoising needs equal-size shapes")
    areas_x = np.asarray(areas_x, dtype=np.float64)
    areas_y = np.asarray(areas_y, dtype=np.float64)
    sizes = mcfg.level_sizes
    if sizes[-1] != n:
        raise ValueError("last level must span all vertices")
    if hier_x.n_levels != len(sizes) or hier_y.n_levels != len(sizes):
        raise ValueError("hierarchies do not match the configured level count")
    for l, size in enumerate(sizes):
        if hier_x.levels[l].size != size or hier_y.levels[l].size != size:
            raise ValueError(f"hierarchy level {l} does not have size {size}")

    solve = lap_solver or lap.solve_auction
    report = []
    assigned = None      # PointMap on (sorted) sample vertex ids of prev level
    prev_sx = None
    for lvl, m in enumerate(sizes):
        t0 = time.perf_counter()
        # sorted sample sets make the degenerate single-level case bit-equal
        # to the plain dense solve
        sx = np.sort(hier_x.levels[lvl])
        sy = np.sort(hier_y.levels[lvl])
        local_y = np.full(n, -1, np.int64)
        local_y[sy] = np.arange(m)

        if lvl == 0:
            # restrict pi0: snap each sample's image to its nearest Y sample
            guess_vertex = hier_y.parents[0][pi0.image[sx]]
        else:
            imgmap = np.full(n, -1, np.int64)
            imgmap[prev_sx] = assigned
            guess_vertex = imgmap[hier_x.parents[lvl - 1][sx]]
        guess_local = local_y[guess_vertex]
        if (guess_local < 0).any():
            raise RuntimeError("prolonged guess escaped the sample set; "
                               "hierarchies are not nested")

        ax = _aggregated_areas(sx, hier_x.parents[lvl], areas_x)
        ay = _aggregated_areas(sy, hier_y.parents[lvl], areas_y)
        dx_sub = gather_rows(dist_x, sx)[:, sx]
        dy_sub = gather_rows(dist_y, sy)[:, sy]
        lcfg = mcfg.level_configs.get(lvl, cfg)

        if lvl == 0:
            out = bayes_denoise(PointMap(guess_local, m), dx_sub, dy_sub,
                                ax, ay, lcfg, lap_solver)
            perm_local = out.image
            density = 1.0
            radius = None
        else:
            radius = mcfg.radius_mult * hier_y.radii[lvl - 1]
            perm_local, density, radius = _solve_restricted(
                guess_local, dx_sub, dy_sub, ax, ay, lcfg, radius,
                mcfg.max_radius_retries, solve)

        assigned = sy[perm_local]
        prev_sx = sx
        report.append({"level": lvl, "size": int(m), "density": float(density),
                       "radius": radius,
                       "seconds": round(time.perf_counter() - t0, 6)})

    image = np.empty(n, np.int64)
    image[prev_sx] = assigned
    result = PointMap(image, n)
    if full_output:
        return result, report
    return result


def _structure_feasible(cols, m):
    from ._kernels import bipartite_matching

    indptr = np.zeros(m + 1, np.int64)
    indptr[1:] = np.cumsum([c.size for c in cols])
    match = bipartite_matching(indptr, np.concatenate(cols), m)
    return not (match < 0).any()


def _solve_restricted(guess_local, dx, dy, ax, ay, cfg, radius, retries, solve):
    """Radius-restricted sparse assignment at one refinement level."""
    m = guess_local.size
    sigma2 = cfg.sigma2_frac * ay.sum()
    current = guess_local
    density = 1.0
    for _ in range(cfg.iterations):
        r = radius
        for attempt in range(retries + 1):
            ball = dy[current] <= r          # candidate mask per row
            cols = [np.nonzero(ball[i])[0] for i in range(m)]
            if _structure_feasible(cols, m):
                break
            if attempt == retries:
                raise ValueError(f"restricted assignment infeasible even after "
                                 f"{retries} radius doublings (r={r:.4g})")
            r *= 2.0
        problem = _restricted_problem(current, dx, dy, ax, sigma2, cfg, cols)
        density = sum(c.size for c in cols) / float(m * m)
        res = solve(problem)
        current = res.permutation
    return current, density, r


def _restricted_problem(image_local, dx, dy, ax, sigma2, cfg, cols):
    pm = PointMap(image_local, image_local.size)
    m = image_local.size
    weights = gaussian_pullback(dy, pm.image, sigma2, cfg.kernel_cutoff)
    vals = score_rows(pm, dx, dy, ax, sigma2, cfg, np.arange(m),
                      allowed=cols, weights=weights)
    return lap.AssignmentProblem.from_sparse(m, cols, vals, sense="min")
