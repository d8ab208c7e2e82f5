"""Command-line orchestration: cached precomputation, map recovery,
Bayesian denoising, evaluation, and the synthetic experiment driver.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import bayes, evaluation, fmap, geodesics, mesh as meshmod, multiscale, spectral

_CACHE_ENV = "BIJMAP_CACHE_DIR"


def _file_hash(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def _config_hash(obj):
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _write_json(path, payload, config):
    payload = dict(payload)
    payload["config"] = config
    payload["config_hash"] = _config_hash(config)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


class Workspace:
    """Cache lookup keyed by mesh content hash; sidecars record provenance."""

    def __init__(self, cache_dir, threads):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.threads = threads

    def spectral_path(self, mesh_path, k):
        return self.cache_dir / f"{_file_hash(mesh_path)}_k{k}.spb1"

    def distance_path(self, mesh_path, method):
        return self.cache_dir / f"{_file_hash(mesh_path)}_{method}.dst1"

    def precompute(self, mesh_path, k, method, compress=True):
        m = meshmod.load_mesh(mesh_path)
        dpath = self.distance_path(mesh_path, method)
        spath = self.spectral_path(mesh_path, k)
        config = {"mesh": _file_hash(mesh_path), "k": k, "method": method,
                  "compress": compress}
        if not dpath.exists():
            field = geodesics.all_pairs(m, method=method, workers=self.threads)
            geodesics.save_distances(field, dpath)
            _write_json(str(dpath) + ".json", {"kind": "distances"}, config)
        if not spath.exists():
            basis = spectral.compute_basis(m, k)
            compressed = None
            if compress:
                field = geodesics.load_distances(dpath)
                compressed = spectral.compress_distances(basis, field)
            spectral.save_spectral(spath, basis, compressed)
            _write_json(str(spath) + ".json", {"kind": "spectral"}, config)
        return m, dpath, spath

    def load(self, mesh_path, k, method):
        m = meshmod.load_mesh(mesh_path)
        dpath = self.distance_path(mesh_path, method)
        spath = self.spectral_path(mesh_path, k)
        if not dpath.exists() or not spath.exists():
            raise click.ClickException(
                f"missing cache for {mesh_path}; run `bijmap precompute "
                f"{mesh_path} --k {k} --method {method}` first")
        field = geodesics.load_distances(dpath)
        basis, compressed = spectral.load_spectral(spath, m.vertex_areas)
        return m, field, basis, compressed


pass_ws = click.make_pass_decorator(Workspace)


@click.group()
@click.option("--threads", type=int, default=None,
              help="worker threads for distance sweeps and experiment rows")
@click.option("--cache-dir", type=click.Path(), default=None,
              help=f"cache directory (env {_CACHE_ENV}, default ./bijmap_cache)")
@click.pass_context
def main(ctx, threads, cache_dir):
    """Pointwise correspondence recovery and bijective denoising toolkit."""
    cache_dir = cache_dir or os.environ.get(_CACHE_ENV, "bijmap_cache")
    ctx.obj = Workspace(cache_dir, threads)


@main.command()
@click.option("--kind", type=click.Choice(["sphere", "bumpy_plane"]), default="sphere")
@click.option("--resolution", type=int, default=1000)
@click.option("--deform", type=click.Choice(["none", "rigid", "bend"]), default="rigid")
@click.option("--amplitude", type=float, default=0.3)
@click.option("--seed", type=int, default=1)
@click.option("--out-dir", type=click.Path(), required=True)
def synth(kind, resolution, deform, amplitude, seed, out_dir):
    """Generate a synthetic (source, target, groundtruth) test pair."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    x, y, gt = meshmod.synth_pair(kind, resolution, deform, seed, amplitude)
    config = {"kind": kind, "resolution": resolution, "deform": deform,
              "amplitude": amplitude, "seed": seed}
    meshmod.save_off(x, out / "X.off")
    meshmod.save_off(y, out / "Y.off")
    gt.save(out / "gt.map", header=f"cfg={_config_hash(config)}")
    _write_json(out / "pair.json", {"n": x.n_vertices}, config)
    click.echo(f"wrote {out}/X.off {out}/Y.off {out}/gt.map (n={x.n_vertices})")


@main.command()
@click.argument("mesh_path", type=click.Path(exists=True))
@click.option("--k", type=int, default=100, help="basis size (also used for caches)")
@click.option("--method", type=click.Choice(geodesics.METHODS), default="fast_marching")
@click.option("--compress/--no-compress", default=True,
              help="store the spectral distance code alongside the basis")
@pass_ws
def precompute(ws, mesh_path, k, method, compress):
    """Compute and cache the eigenbasis and geodesic distances of a mesh."""
    t0 = time.perf_counter()
    m, dpath, spath = ws.precompute(mesh_path, k, method, compress)
    click.echo(f"n={m.n_vertices}: {dpath.name}, {spath.name} "
               f"({time.perf_counter() - t0:.1f}s)")


def _load_pair(ws, src, tgt, k, method):
    mx, dx, bx, cx = ws.load(src, k, method)
    my, dy, by, cy = ws.load(tgt, k, method)
    return mx, dx, bx, my, dy, by


@main.command(name="fmap")
@click.option("--src", type=click.Path(exists=True), required=True)
@click.option("--tgt", type=click.Path(exists=True), required=True)
@click.option("--gt-map", type=click.Path(exists=True), default=None)
@click.option("--sparse", "sparse_path", type=click.Path(exists=True), default=None)
@click.option("--k", type=int, default=20, help="functional map rank")
@click.option("--cache-k", type=int, default=100)
@click.option("--method", type=click.Choice(geodesics.METHODS), default="fast_marching")
@click.option("--out", type=click.Path(), required=True)
@pass_ws
def fmap_cmd(ws, src, tgt, gt_map, sparse_path, k, cache_k, method, out):
    """Build a k x k functional map from a dense map or sparse landmarks."""
    if (gt_map is None) == (sparse_path is None):
        raise click.UsageError("provide exactly one of --gt-map / --sparse")
    mx, dx, bx, my, dy, by = _load_pair(ws, src, tgt, cache_k, method)
    if sparse_path is not None:
        corr = fmap.SparseCorrespondence.load(sparse_path)
        pmap = fmap.interpolate_sparse(corr, dx, n_tgt=my.n_vertices)
    else:
        pmap = fmap.PointMap.load(gt_map, n_tgt=my.n_vertices)
    fm = fmap.build_fmap(pmap, bx, by, k)
    fm.save(out)
    click.echo(f"wrote {out} (k={k}, dominance="
               f"{fmap.diagonal_dominance(fm.C):.2f})")


@main.command()
@click.option("--src", type=click.Path(exists=True), required=True)
@click.option("--tgt", type=click.Path(exists=True), required=True)
@click.option("--sparse", "sparse_path", type=click.Path(exists=True), required=True)
@click.option("--cache-k", type=int, default=100)
@click.option("--method", type=click.Choice(geodesics.METHODS), default="fast_marching")
@click.option("--out", type=click.Path(), required=True)
@pass_ws
def interpolate(ws, src, tgt, sparse_path, cache_k, method, out):
    """Densify sparse landmarks by nearest-neighbor interpolation."""
    mx, dx, bx, my, dy, by = _load_pair(ws, src, tgt, cache_k, method)
    corr = fmap.SparseCorrespondence.load(sparse_path)
    pmap = fmap.interpolate_sparse(corr, dx, n_tgt=my.n_vertices)
    config = {"sparse": _file_hash(sparse_path), "src": _file_hash(src),
              "tgt": _file_hash(tgt)}
    pmap.save(out, header=f"cfg={_config_hash(config)}")
    click.echo(f"wrote {out}")


@main.command()
@click.option("--src", type=click.Path(exists=True), required=True)
@click.option("--tgt", type=click.Path(exists=True), required=True)
@click.option("--fmap", "fmap_path", type=click.Path(exists=True), required=True)
@click.option("--recovery", "method", type=click.Choice(["nn", "bijnn", "icp"]),
              required=True)
@click.option("--cache-k", type=int, default=100)
@click.option("--dist-method", type=click.Choice(geodesics.METHODS),
              default="fast_marching")
@click.option("--eps0", type=float, default=None)
@click.option("--eps-factor", type=float, default=5.0)
@click.option("--eps-final", type=float, default=None)
@click.option("--out", type=click.Path(), required=True)
@pass_ws
def recover(ws, src, tgt, fmap_path, method, cache_k, dist_method,
            eps0, eps_factor, eps_final, out):
    """Recover a dense pointwise map from a functional map."""
    mx, dx, bx, my, dy, by = _load_pair(ws, src, tgt, cache_k, dist_method)
    fm = fmap.FunctionalMap.load(fmap_path)
    if method == "nn":
        pmap = fmap.recover_nn(fm, bx, by)
    elif method == "bijnn":
        solver = _auction_solver(eps0, eps_factor, eps_final)
        pmap = fmap.recover_bijective_nn(fm, bx, by, lap_solver=solver)
    else:
        pmap, _ = fmap.recover_icp(fm, bx, by)
    config = {"method": method, "fmap": _file_hash(fmap_path),
              "src": _file_hash(src), "tgt": _file_hash(tgt),
              "eps0": eps0, "eps_factor": eps_factor, "eps_final": eps_final}
    pmap.save(out, header=f"cfg={_config_hash(config)}")
    click.echo(f"wrote {out} (bijective={pmap.bijective})")


def _auction_solver(eps0, eps_factor, eps_final):
    from . import lap

    def solve(problem):
        return lap.solve_auction(problem, eps0=eps0, eps_factor=eps_factor,
                                 eps_final=eps_final)
    return solve


@main.command()
@click.option("--src", type=click.Path(exists=True), required=True)
@click.option("--tgt", type=click.Path(exists=True), required=True)
@click.option("--map", "map_path", type=click.Path(exists=True), required=True)
@click.option("--gt", "gt_path", type=click.Path(exists=True), default=None,
              help="groundtruth map; enables per-iteration error rows")
@click.option("--p", type=click.Choice(["1", "2"]), default="1")
@click.option("--sigma2-frac", type=float, default=0.06)
@click.option("--iters", type=int, default=1)
@click.option("--cutoff", type=float, default=3.0)
@click.option("--eps0", type=float, default=None)
@click.option("--eps-factor", type=float, default=5.0)
@click.option("--eps-final", type=float, default=None)
@click.option("--levels", default=None,
              help="comma-separated multiscale level sizes, e.g. 500,2000")
@click.option("--radius-mult", type=float, default=2.0)
@click.option("--cache-k", type=int, default=100)
@click.option("--dist-method", type=click.Choice(geodesics.METHODS),
              default="fast_marching")
@click.option("--out", type=click.Path(), required=True)
@pass_ws
def denoise(ws, src, tgt, map_path, gt_path, p, sigma2_frac, iters, cutoff,
            eps0, eps_factor, eps_final, levels, radius_mult, cache_k,
            dist_method, out):
    """Denoise any dense map into a guaranteed bijection."""
    mx, dx, bx, my, dy, by = _load_pair(ws, src, tgt, cache_k, dist_method)
    pi0 = fmap.PointMap.load(map_path, n_tgt=my.n_vertices)
    gt = (fmap.PointMap.load(gt_path, n_tgt=my.n_vertices)
          if gt_path else None)
    cfg = bayes.BayesConfig(p=int(p), sigma2_frac=sigma2_frac, iterations=1,
                            kernel_cutoff=cutoff)
    solver = _auction_solver(eps0, eps_factor, eps_final)
    config = {"p": int(p), "sigma2_frac": sigma2_frac, "iters": iters,
              "cutoff": cutoff, "levels": levels, "radius_mult": radius_mult,
              "map": _file_hash(map_path), "src": _file_hash(src),
              "tgt": _file_hash(tgt), "eps0": eps0, "eps_factor": eps_factor,
              "eps_final": eps_final}
    timer = evaluation.StageTimer()
    report = {}
    mcfg = hx = hy = None
    if levels:
        sizes = [int(s) for s in levels.split(",")]
        mcfg = multiscale.MultiscaleConfig(sizes, radius_mult=radius_mult)
        with timer.stage("hierarchy"):
            hx = meshmod.farthest_point_sample(mx, dx, sizes)
            hy = meshmod.farthest_point_sample(my, dy, sizes)

    result = pi0
    iteration_rows = []
    with timer.stage("denoise"):
        for it in range(1, iters + 1):
            if mcfg is not None:
                result, levels_report = multiscale.bayes_denoise_multiscale(
                    result, dx, dy, mx.vertex_areas, my.vertex_areas, hx, hy,
                    mcfg, cfg, lap_solver=solver, full_output=True)
                report["levels"] = levels_report
            else:
                result = bayes.bayes_denoise(result, dx, dy, mx.vertex_areas,
                                             my.vertex_areas, cfg,
                                             lap_solver=solver)
            if gt is not None:
                err = evaluation.geodesic_error(result, gt, dy, dy.diameter)
                iteration_rows.append({"iteration": it, **err.summary()})
    result.save(out, header=f"cfg={_config_hash(config)}")
    report["stage_times"] = evaluation.runtime_report(timer)
    report["bijective"] = result.bijective
    if iteration_rows:
        report["iterations"] = iteration_rows
    _write_json(out + ".json", report, config)
    click.echo(f"wrote {out} (bijective={result.bijective})")


@main.command()
@click.option("--map", "map_path", type=click.Path(exists=True), required=True)
@click.option("--gt", "gt_path", type=click.Path(exists=True), required=True)
@click.option("--tgt", type=click.Path(exists=True), required=True)
@click.option("--cache-k", type=int, default=100)
@click.option("--dist-method", type=click.Choice(geodesics.METHODS),
              default="fast_marching")
@click.option("--out-prefix", type=click.Path(), required=True)
@pass_ws
def evaluate(ws, map_path, gt_path, tgt, cache_k, dist_method, out_prefix):
    """Geodesic-error curve and coverage of a map against groundtruth."""
    my, dy, by, cy = ws.load(tgt, cache_k, dist_method)
    pmap = fmap.PointMap.load(map_path, n_tgt=my.n_vertices)
    gt = fmap.PointMap.load(gt_path, n_tgt=my.n_vertices)
    err = evaluation.geodesic_error(pmap, gt, dy, dy.diameter)
    cov = evaluation.coverage(pmap, dy)
    err.write_csv(out_prefix + ".csv")
    config = {"map": _file_hash(map_path), "gt": _file_hash(gt_path),
              "tgt": _file_hash(tgt)}
    _write_json(out_prefix + ".json",
                {**err.summary(), **cov.summary(), "stage_times": {}}, config)
    click.echo(f"mean={err.mean:.5f} median={err.median:.5f} "
               f"exact={err.exact_hit_frac:.3f} coverage={cov.coverage:.3f}")


def _noisy_fmap(fm, noise, seed):
    if noise <= 0:
        return fm
    rng = np.random.default_rng([seed, 0xC0FFEE])
    scale = noise * np.abs(fm.C).max()
    return fmap.FunctionalMap(fm.C + scale * rng.normal(size=fm.C.shape),
                              fm.src_basis_id, fm.tgt_basis_id)


def _experiment_row(job):
    """One (pair, k, recovery, +-bayes) cell of the sweep."""
    (bx, by, dx, dy, ax, ay, gt, k, method, use_bayes, cfg, c_noise, seed) = job
    timer = evaluation.StageTimer()
    fm = fmap.build_fmap(gt, bx, by, k)
    fm = _noisy_fmap(fm, c_noise, seed)
    with timer.stage(method):
        if method == "nn":
            pmap = fmap.recover_nn(fm, bx, by)
        elif method == "bijnn":
            pmap = fmap.recover_bijective_nn(fm, bx, by)
        else:
            pmap, _ = fmap.recover_icp(fm, bx, by)
    if use_bayes:
        with timer.stage("bayes"):
            pmap = bayes.bayes_denoise(pmap, dx, dy, ax, ay, cfg)
    err = evaluation.geodesic_error(pmap, gt, dy, dy.diameter)
    cov = evaluation.coverage(pmap, dy)
    return {"k": k, "method": method, "bayes": use_bayes, "seed": seed,
            **err.summary(), **cov.summary(),
            "bijective": pmap.bijective,
            "stage_times": evaluation.runtime_report(timer)}, err


@main.command()
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--kind", type=click.Choice(["sphere", "bumpy_plane"]), default="sphere")
@click.option("--resolution", type=int, default=1000)
@click.option("--deform", type=click.Choice(["none", "rigid", "bend"]), default="rigid")
@click.option("--amplitude", type=float, default=0.3)
@click.option("--pairs", type=int, default=3, help="number of random pairs")
@click.option("--ks", default="20,50", help="functional map ranks")
@click.option("--c-noise", type=float, default=0.15,
              help="relative gaussian noise on the spectral map (0 = ideal C)")
@click.option("--sparse-count", type=int, default=20)
@click.option("--iters", type=int, default=5, help="denoise passes for the sparse track")
@click.option("--p", type=click.Choice(["1", "2"]), default="1")
@click.option("--sigma2-frac", type=float, default=0.06)
@pass_ws
def experiment(ws, out_dir, kind, resolution, deform, amplitude, pairs, ks,
               c_noise, sparse_count, iters, p, sigma2_frac):
    """Full sweep: recovery methods x {with, without} denoising, both ranks,
    plus the sparse-landmark iteration track; one JSON/CSV bundle per run."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    k_list = [int(s) for s in ks.split(",")]
    cfg = bayes.BayesConfig(p=int(p), sigma2_frac=sigma2_frac)
    config = {"kind": kind, "resolution": resolution, "deform": deform,
              "amplitude": amplitude, "pairs": pairs, "ks": k_list,
              "c_noise": c_noise, "sparse_count": sparse_count, "iters": iters,
              "p": int(p), "sigma2_frac": sigma2_frac}
    rows = []
    sparse_rows = []
    for seed in range(1, pairs + 1):
        x, y, gt = meshmod.synth_pair(kind, resolution, deform, seed, amplitude)
        dx = geodesics.all_pairs(x, workers=ws.threads)
        dy = geodesics.all_pairs(y, workers=ws.threads)
        kmax = max(k_list)
        bx = spectral.compute_basis(x, kmax)
        by = spectral.compute_basis(y, kmax)
        jobs = [(bx, by, dx, dy, x.vertex_areas, y.vertex_areas, gt, k, method,
                 use_bayes, cfg, c_noise, seed)
                for k in k_list
                for method in ("nn", "bijnn", "icp")
                for use_bayes in (False, True)]
        with ThreadPoolExecutor(max_workers=ws.threads or os.cpu_count()) as pool:
            for row, err in pool.map(_experiment_row, jobs):
                rows.append(row)
                tag = (f"pair{seed}_k{row['k']}_{row['method']}"
                       f"{'_bayes' if row['bayes'] else ''}")
                err.write_csv(out / f"{tag}.csv")

        rng = np.random.default_rng([seed, 51])
        srcs = rng.choice(x.n_vertices, size=sparse_count, replace=False)
        corr = fmap.SparseCorrespondence(np.column_stack([srcs, gt.image[srcs]]))
        pmap = fmap.interpolate_sparse(corr, dx, n_tgt=y.n_vertices)
        track = [evaluation.geodesic_error(pmap, gt, dy, dy.diameter).mean]
        for _ in range(iters):
            pmap = bayes.bayes_denoise(pmap, dx, dy, x.vertex_areas,
                                       y.vertex_areas, cfg)
            track.append(evaluation.geodesic_error(pmap, gt, dy, dy.diameter).mean)
        sparse_rows.append({"seed": seed, "mean_errors": track})

    with open(out / "sparse_iterations.csv", "w") as fh:
        fh.write("seed," + ",".join(f"iter{i}" for i in range(iters + 1)) + "\n")
        for row in sparse_rows:
            fh.write(f"{row['seed']}," +
                     ",".join(f"{e:.6f}" for e in row["mean_errors"]) + "\n")
    _write_json(out / "experiment.json",
                {"rows": rows, "sparse_iterations": sparse_rows}, config)
    click.echo(f"wrote {out}/experiment.json ({len(rows)} rows)")


if __name__ == "__main__":
    main()
