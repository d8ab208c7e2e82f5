"""Functional maps and pointwise recovery baselines.

Conventions: a PointMap sends source vertices to target vertices.  The
spectral matrix C of a map is the product of the area-weighted target basis
(transposed), the 0/1 matrix of the map, and the area-weighted source basis;
all downstream recovery formulas use plain dot products under this choice.
"""

import struct
import warnings

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist

from . import lap
from ._rows import gather_rows, row_provider


class PointMap:
    """Dense vertex-to-vertex correspondence.

    Parameters
    ----------
    image : array_like of int
        Target index for every source vertex (length n_src).
    n_tgt : int
        Number of target vertices.

    The ``bijective`` flag is computed, never trusted: it is True exactly
    when n_src == n_tgt and the image is a permutation.
    """

    def __init__(self, image, n_tgt):
        image = np.asarray(image, dtype=np.int64).copy()
        if image.ndim != 1:
            raise ValueError("image must be a 1-d index array")
        self.n_src = image.size
        self.n_tgt = int(n_tgt)
        if image.size and (image.min() < 0 or image.max() >= self.n_tgt):
            raise ValueError("map image out of target range")
        image.flags.writeable = False
        self.image = image
        self.bijective = bool(
            self.n_src == self.n_tgt
            and np.unique(image).size == self.n_src
        )

    def __eq__(self, other):
        return (isinstance(other, PointMap) and self.n_tgt == other.n_tgt
                and np.array_equal(self.image, other.image))

    def __repr__(self):
        return (f"PointMap(n_src={self.n_src}, n_tgt={self.n_tgt}, "
                f"bijective={self.bijective})")

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n), n)

    def inverse(self):
        if not self.bijective:
            raise ValueError("only bijective maps can be inverted")
        inv = np.empty(self.n_src, np.int64)
        inv[self.image] = np.arange(self.n_src)
        return PointMap(inv, self.n_src)

    def save(self, path, header=None):
        """Write one 0-based target index per line; optional '#' header."""
        with open(path, "w") as fh:
            if header:
                fh.write(f"# {header}\n")
            fh.write("\n".join(str(int(j)) for j in self.image))
            fh.write("\n")

    @classmethod
    def load(cls, path, n_tgt=None):
        image = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                image.append(int(line))
        image = np.array(image, dtype=np.int64)
        if n_tgt is None:
            n_tgt = int(image.max()) + 1 if image.size else 0
        return cls(image, n_tgt)


class SparseCorrespondence:
    """A short list of (source vertex, target vertex) landmark pairs."""

    def __init__(self, pairs):
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        if pairs.size and pairs.min() < 0:
            raise ValueError("negative vertex index in sparse correspondence")
        src = pairs[:, 0]
        if np.unique(src).size != src.size:
            raise ValueError("duplicate source vertices in sparse correspondence")
        self.pairs = pairs
        self.count = pairs.shape[0]

    def save(self, path, header=None):
        with open(path, "w") as fh:
            if header:
                fh.write(f"# {header}\n")
            for s, t in self.pairs:
                fh.write(f"{s} {t}\n")

    @classmethod
    def load(cls, path):
        pairs = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                s, t = line.split()
                pairs.append((int(s), int(t)))
        return cls(pairs)


class FunctionalMap:
    """k x k spectral representation of a map between two shapes."""

    def __init__(self, C, src_basis_id="", tgt_basis_id=""):
        C = np.asarray(C, dtype=np.float64)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValueError("C must be square")
        self.C = C
        self.k = C.shape[0]
        self.src_basis_id = src_basis_id
        self.tgt_basis_id = tgt_basis_id

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(b"FMP1")
            fh.write(struct.pack("<I", self.k))
            fh.write(self.C.astype(np.float64).tobytes(order="C"))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != b"FMP1":
                raise ValueError(f"not a functional map file: bad magic {magic!r}")
            (k,) = struct.unpack("<I", fh.read(4))
            data = np.frombuffer(fh.read(8 * k * k), dtype=np.float64)
            if data.size != k * k:
                raise ValueError("truncated functional map file")
        return cls(data.reshape(k, k).copy())


def diagonal_dominance(C):
    """mean |diagonal| over mean |off-diagonal|; > 1 for near-isometries."""
    k = C.shape[0]
    if k == 1:
        return np.inf
    off = np.abs(C).sum() - np.abs(np.diag(C)).sum()
    return float(np.abs(np.diag(C)).mean() / (off / (k * (k - 1))))


def build_fmap(pmap, basis_x, basis_y, k):
    """Spectral matrix of a dense map in truncated area-weighted bases.

    Args:
        pmap: PointMap from shape X to shape Y (dense over X).
        basis_x, basis_y: SpectralBasis of the source / target shape.
        k: truncation size (low-pass approximation of the map).

    Returns:
        FunctionalMap with C = Psi_w[:, :k]^T  Pi  Phi_w[:, :k], where Pi is
        the 0/1 matrix scattering source rows to their image rows.
    """
    if k > basis_x.k or k > basis_y.k:
        raise ValueError(f"k={k} exceeds basis size ({basis_x.k}, {basis_y.k})")
    if pmap.n_src != basis_x.n or pmap.n_tgt != basis_y.n:
        raise ValueError("map size does not match the bases")
    phi = basis_x.phi_w[:, :k]
    psi = basis_y.phi_w[:, :k]
    pi = sparse.csr_matrix(
        (np.ones(pmap.n_src), (pmap.image, np.arange(pmap.n_src))),
        shape=(pmap.n_tgt, pmap.n_src),
    )
    C = psi.T @ (pi @ phi)
    fm = FunctionalMap(C, basis_x.basis_id, basis_y.basis_id)
    if pmap.bijective and diagonal_dominance(C) <= 1.0:
        warnings.warn("functional map is not diagonally dominant; "
                      "the pair is far from isometric or the bases disagree",
                      stacklevel=2)
    return fm


def nearest_rows(queries, points, chunk=2048):
    """Index of the euclidean-nearest row of ``points`` for each query row.

    Exact chunked search; ties resolve to the lowest index.  Deliberately no
    spatial index: at the spectral dimensions used here brute force is both
    faster and exactly reproducible.
    """
    out = np.empty(queries.shape[0], dtype=np.int64)
    for lo in range(0, queries.shape[0], chunk):
        hi = min(lo + chunk, queries.shape[0])
        d = cdist(queries[lo:hi], points)
        out[lo:hi] = d.argmin(axis=1)
    return out


def _embeddings(fm, basis_x, basis_y):
    C = fm.C if isinstance(fm, FunctionalMap) else np.asarray(fm)
    k = C.shape[0]
    if k > basis_x.k or k > basis_y.k:
        raise ValueError("functional map larger than the available bases")
    phi = basis_x.phi_w[:, :k]
    psi = basis_y.phi_w[:, :k]
    return C, phi, psi


def recover_nn(fm, basis_x, basis_y):
    """Pointwise map by independent nearest neighbors in the spectral domain.

    Every source vertex maps to the target vertex whose embedding is closest
    to its image C phi(x).  Solutions of this per-column problem are not
    guaranteed to be bijections.
    """
    C, phi, psi = _embeddings(fm, basis_x, basis_y)
    image = nearest_rows(phi @ C.T, psi)
    return PointMap(image, basis_y.n)


def recover_bijective_nn(fm, basis_x, basis_y, lap_solver=None):
    """Bijective pointwise recovery as a linear assignment problem.

    Maximizes the Frobenius inner product between the permutation and the
    spectral score matrix; the result is always a permutation.
    """
    C, phi, psi = _embeddings(fm, basis_x, basis_y)
    if basis_x.n != basis_y.n:
        raise ValueError("bijective recovery needs equal vertex counts")
    scores = (phi @ C.T) @ psi.T  # benefit[i, j] = <psi_j, C phi_i>
    problem = lap.AssignmentProblem.from_dense(scores, sense="max")
    solve = lap_solver or lap.solve_auction
    res = solve(problem)
    return PointMap(res.permutation, basis_y.n)


def recover_icp(fm0, basis_x, basis_y, max_iters=50, tol=1e-10, full_output=False):
    """Alternate nearest-neighbor recovery with orthogonal Procrustes C-updates.

    Stops when the point map repeats, the objective decrease becomes
    negligible, or max_iters is hit.  Returns (PointMap, refined C); with
    ``full_output`` also a dict with iteration count and objective trace.
    """
    C, phi, psi = _embeddings(fm0, basis_x, basis_y)
    ids = (getattr(fm0, "src_basis_id", ""), getattr(fm0, "tgt_basis_id", ""))
    pmap = None
    objectives = []
    iters = 0
    for _ in range(max_iters):
        new = recover_nn(C, basis_x, basis_y)
        if pmap is not None and new == pmap:
            break
        pmap = new
        cross = psi[pmap.image].T @ phi
        try:
            U, _, Vt = np.linalg.svd(cross)
        except np.linalg.LinAlgError:
            warnings.warn("Procrustes SVD failed; returning last iterate")
            break
        C = U @ Vt
        iters += 1
        obj = float(np.linalg.norm(C @ phi.T - psi[pmap.image].T) ** 2)
        if objectives and objectives[-1] - obj < tol * max(objectives[0], 1e-30):
            objectives.append(obj)
            break
        objectives.append(obj)
    refined = FunctionalMap(C, *ids)
    if full_output:
        return pmap, refined, {"iterations": iters, "objectives": objectives}
    return pmap, refined


def interpolate_sparse(corr, dist_x, n_tgt=None):
    """Densify a sparse correspondence by geodesic nearest-landmark lookup.

    Every source vertex receives the image of its nearest sparse source
    (ties to the earliest pair in the list).  The result is generally far
    from bijective.
    """
    if corr.count == 0:
        raise ValueError("empty sparse correspondence")
    n, _ = row_provider(dist_x)
    src = corr.pairs[:, 0]
    tgt = corr.pairs[:, 1]
    if src.max() >= n:
        raise ValueError("sparse source index out of range")
    rows = gather_rows(dist_x, src)          # (s, n) distances from landmarks
    nearest = rows.argmin(axis=0)            # lowest list index wins ties
    if n_tgt is None:
        n_tgt = n
    return PointMap(tgt[nearest], n_tgt)
