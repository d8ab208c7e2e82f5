"""Geodesic-error statistics, surjectivity/coverage reports, stage timing."""

import json
import time
from contextlib import contextmanager

import numpy as np

#: fixed threshold grid (fractions of the target diameter) so CSV curves from
#: different runs align column-wise
THRESHOLDS = np.round(np.arange(101) * 0.0025, 6)


class ErrorReport:
    """Per-vertex geodesic errors of a map against groundtruth.

    Errors are d_Y between the recovered and the true match, relative to the
    target's geodesic diameter.  The curve holds, for each grid threshold t,
    the fraction of vertices with error < t.
    """

    def __init__(self, errors):
        errors = np.asarray(errors, dtype=np.float64)
        self.errors = errors
        self.mean = float(errors.mean())
        self.median = float(np.median(errors))
        self.exact_hit_frac = float((errors == 0.0).mean())
        srt = np.sort(errors)
        self.thresholds = THRESHOLDS
        self.curve = np.searchsorted(srt, THRESHOLDS, side="left") / errors.size

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("threshold,fraction\n")
            for t, f in zip(self.thresholds, self.curve):
                fh.write(f"{t:.4f},{f:.6f}\n")

    def summary(self):
        return {"mean": self.mean, "median": self.median,
                "exact_hit_frac": self.exact_hit_frac}


class CoverageReport:
    """How well the image of a map covers the target shape.

    distances[j] is the geodesic distance from target vertex j to the image
    of the source; coverage is the fraction at exactly zero (vertices with a
    preimage).  The histogram counts distances, normalized by the diameter,
    over the standard threshold grid.
    """

    def __init__(self, distances, diameter):
        distances = np.asarray(distances, dtype=np.float64)
        self.distances = distances
        self.coverage = float((distances == 0.0).mean())
        rel = distances / diameter if diameter > 0 else distances
        self.histogram = np.histogram(rel, bins=np.append(THRESHOLDS, np.inf))[0]

    def summary(self):
        return {"coverage": self.coverage,
                "mean_gap": float(self.distances.mean())}


def geodesic_error(pmap, gt, dist_y, diameter):
    """Error report of a dense map against a bijective groundtruth."""
    if pmap.n_src != gt.n_src or pmap.n_tgt != gt.n_tgt:
        raise ValueError("map and groundtruth sizes differ")
    if not gt.bijective:
        raise ValueError("groundtruth must be bijective")
    D = dist_y.D if hasattr(dist_y, "D") else np.asarray(dist_y)
    errs = D[pmap.image, gt.image] / diameter
    return ErrorReport(errs)


def coverage(pmap, dist_y):
    """Coverage report of a dense map on the target shape."""
    D = dist_y.D if hasattr(dist_y, "D") else np.asarray(dist_y)
    diameter = getattr(dist_y, "diameter", float(D.max()))
    if pmap.bijective:
        return CoverageReport(np.zeros(pmap.n_tgt), diameter)
    covered = np.unique(pmap.image)
    return CoverageReport(D[:, covered].min(axis=1), diameter)


class StageTimer:
    """Wall-clock accounting of named pipeline stages."""

    def __init__(self):
        self.times = {}

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.times[name] = self.times.get(name, 0.0) + time.perf_counter() - t0


def runtime_report(timer, path=None):
    """Per-stage wall times as a JSON-able dict (optionally written out)."""
    report = {k: round(v, 6) for k, v in timer.times.items()}
    if path is not None:
        with open(path, "w") as fh:
            json.dump(report, fh, indent=2)
    return report
