"""Cotangent Laplace-Beltrami discretization, truncated eigenbasis, manifold
Fourier analysis/synthesis, and spectral compression of distance matrices."""

import hashlib
import struct

import numpy as np
from scipy import sparse
from scipy.linalg import eigh
from scipy.sparse.linalg import eigsh

from ._rows import row_provider

#: dense solve below this size (or when nearly the whole spectrum is wanted)
_DENSE_N = 400


def build_laplacian(mesh):
    """Cotangent stiffness matrix and lumped mass matrix of a mesh.

    Returns
    -------
    stiffness : csr_matrix, shape (n, n)
        Symmetric, rows sum to zero, positive semidefinite.  Negative
        cotangent weights are kept unclamped; semidefiniteness holds by
        construction (Galerkin form of the Dirichlet energy).
    mass : dia_matrix, shape (n, n)
        Diagonal matrix of the lumped vertex areas.
    """
    verts, tris = mesh.vertices, mesh.faces
    n = mesh.n_vertices

    ii, jj, ww = [], [], []
    for c in range(3):
        o = tris[:, c]                  # corner opposite the edge (a, b)
        a = tris[:, (c + 1) % 3]
        b = tris[:, (c + 2) % 3]
        e1 = verts[a] - verts[o]
        e2 = verts[b] - verts[o]
        cot = 0.5 * np.einsum("ij,ij->i", e1, e2) / np.linalg.norm(
            np.cross(e1, e2), axis=1)
        ii.extend([a, b])
        jj.extend([b, a])
        ww.extend([-cot, -cot])
    W = sparse.csr_matrix(
        (np.concatenate(ww), (np.concatenate(ii), np.concatenate(jj))),
        shape=(n, n))
    L = W - sparse.diags(np.asarray(W.sum(axis=1)).ravel())
    M = sparse.diags(mesh.vertex_areas)
    return L.tocsr(), M.todia()


class SpectralBasis:
    """First k Laplace-Beltrami eigenpairs of a shape.

    phi_m is mass-orthonormal (Phi^T M Phi = I); phi_w = M^(1/2) phi_m is the
    area-weighted form, orthonormal under the plain dot product, so every
    spectral formula downstream uses ordinary matrix products.

    Sign convention: in each column of phi_m the entry of largest magnitude
    is positive, making the basis deterministic.
    """

    def __init__(self, eigenvalues, phi_m, mass_diag):
        self.eigenvalues = np.asarray(eigenvalues, dtype=np.float64)
        self.phi_m = np.ascontiguousarray(phi_m, dtype=np.float64)
        self.mass = np.asarray(mass_diag, dtype=np.float64)
        self.phi_w = np.sqrt(self.mass)[:, None] * self.phi_m
        self.n, self.k = self.phi_m.shape
        for a in (self.eigenvalues, self.phi_m, self.phi_w, self.mass):
            a.flags.writeable = False
        h = hashlib.blake2b(digest_size=8)
        h.update(self.eigenvalues.tobytes())
        h.update(self.phi_m.tobytes())
        self.basis_id = h.hexdigest()

    def __repr__(self):
        return f"SpectralBasis(n={self.n}, k={self.k}, id={self.basis_id})"


def _fix_signs(phi):
    idx = np.abs(phi).argmax(axis=0)
    flip = phi[idx, np.arange(phi.shape[1])] < 0
    phi = phi.copy()
    phi[:, flip] *= -1.0
    return phi


def eigenbasis(L, M, k):
    """Solve the generalized eigenproblem L phi = lambda M phi for the k
    smallest eigenpairs.

    Small problems (and requests for essentially the whole spectrum) use a
    dense solver; otherwise ARPACK in shift-invert mode around zero with a
    deterministic start vector.  Residuals are verified against 1e-6.
    """
    n = L.shape[0]
    if k < 1 or k > n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    mass_diag = np.asarray(M.diagonal()).ravel()

    if n <= _DENSE_N or k > n // 2:
        vals, vecs = eigh(L.toarray(), np.diag(mass_diag),
                          subset_by_index=[0, k - 1])
    else:
        # strictly negative shift keeps L - sigma M positive definite
        scale = L.diagonal().sum() / mass_diag.sum()
        sigma = -1e-2 * scale
        v0 = np.full(n, 1.0 / np.sqrt(n))
        try:
            vals, vecs = eigsh(L, k=k, M=M, sigma=sigma, which="LM", v0=v0)
        except Exception as exc:  # ArpackError / ArpackNoConvergence
            raise RuntimeError(f"eigensolver failed: {exc}") from exc
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]

    # normalize (solvers return M-orthonormal vectors; enforce exactly)
    norms = np.sqrt(np.einsum("ij,ij->j", vecs, mass_diag[:, None] * vecs))
    vecs = vecs / norms
    vecs = _fix_signs(vecs)

    resid = L @ vecs - (mass_diag[:, None] * vecs) * vals
    ref = np.linalg.norm(mass_diag[:, None] * vecs, axis=0)
    rel = np.linalg.norm(resid, axis=0) / ref
    worst = int(np.argmax(rel))
    if rel[worst] > 1e-6:
        raise RuntimeError(f"eigenpair {worst} did not converge "
                           f"(relative residual {rel[worst]:.2e})")

    # clip numerically-negative bottom eigenvalues of the PSD pencil
    floor = -1e-9 * max(abs(vals[-1]), 1.0)
    if vals[0] < floor:
        raise RuntimeError(f"stiffness matrix is not PSD (lambda_1 = {vals[0]:.3e})")
    vals = np.maximum(vals, 0.0)
    if k > 1 and not vals[0] < 1e-6 * vals[1]:
        raise RuntimeError("lowest eigenvalue is not numerically zero; "
                           "the mesh or mass matrix is suspect")
    return SpectralBasis(vals, vecs, mass_diag)


def compute_basis(mesh, k):
    """Convenience wrapper: cotangent Laplacian + eigenbasis of a mesh."""
    L, M = build_laplacian(mesh)
    return eigenbasis(L, M, k)


def analyze(basis, f):
    """Manifold Fourier coefficients <f, phi_i> of a vertex function."""
    f = np.asarray(f)
    if f.shape[0] != basis.n:
        raise ValueError(f"function has length {f.shape[0]}, expected {basis.n}")
    return basis.phi_m.T @ (basis.mass[:, None] * f if f.ndim > 1
                            else basis.mass * f)


def synthesize(basis, coeffs):
    """Evaluate a coefficient vector back on the vertices (rank-k synthesis)."""
    coeffs = np.asarray(coeffs)
    if coeffs.shape[0] != basis.k:
        raise ValueError(f"got {coeffs.shape[0]} coefficients, expected {basis.k}")
    return basis.phi_m @ coeffs


class CompressedDistances:
    """Spectral code of a distance matrix: the k x n coefficients Phi_w^T D.

    Rows are decompressed on demand; truncation ringing is clipped at zero
    (distances are nonnegative) and the self-distance entry reset to zero.
    """

    def __init__(self, A, basis):
        self.A = np.ascontiguousarray(A, dtype=np.float64)
        self.basis = basis
        self.k, self.n = self.A.shape
        if self.k > basis.k or self.n != basis.n:
            raise ValueError("coefficient matrix does not match the basis")
        self.A.flags.writeable = False

    def row(self, i):
        r = self.basis.phi_w[:, :self.k] @ self.A[:, i]
        np.clip(r, 0.0, None, out=r)
        r[i] = 0.0
        return r

    def rows(self, idx):
        idx = np.asarray(idx)
        r = (self.basis.phi_w[:, :self.k] @ self.A[:, idx]).T
        np.clip(r, 0.0, None, out=r)
        r[np.arange(idx.size), idx] = 0.0
        return r


def compress_distances(basis, dist, k=None, block=2048):
    """Project a full distance matrix onto the area-weighted basis.

    Works column-blockwise so only O(k n) memory is needed beyond access to
    the matrix itself.
    """
    k = basis.k if k is None else int(k)
    if k > basis.k:
        raise ValueError(f"k={k} exceeds basis size {basis.k}")
    n, row = row_provider(dist)
    if n != basis.n:
        raise ValueError("distance data does not match the basis")
    phi_t = basis.phi_w[:, :k].T
    A = np.empty((k, n))
    full = getattr(dist, "D", dist if isinstance(dist, np.ndarray) else None)
    if full is not None:
        for lo in range(0, n, block):
            hi = min(lo + block, n)
            A[:, lo:hi] = phi_t @ full[:, lo:hi]
    else:
        for i in range(n):
            A[:, i] = phi_t @ row(i)
    return CompressedDistances(A, basis)


# ---------------------------------------------------------------------------
# cache file: "SPB1" | u32 n | u32 k | k f64 eigenvalues | n*k f64 Phi_M (F)
#             [ "CDX1" | k*n f64 A (F) ]

def save_spectral(path, basis, compressed=None):
    """Write the spectral cache; the round-trip is bit-exact."""
    with open(path, "wb") as fh:
        fh.write(b"SPB1")
        fh.write(struct.pack("<II", basis.n, basis.k))
        fh.write(basis.eigenvalues.tobytes())
        fh.write(basis.phi_m.tobytes(order="F"))
        if compressed is not None:
            if compressed.k != basis.k:
                raise ValueError("CDX1 block must use the basis k")
            fh.write(b"CDX1")
            fh.write(compressed.A.tobytes(order="F"))


def load_spectral(path, vertex_areas):
    """Load a spectral cache; the mass diagonal comes from the mesh.

    Returns (SpectralBasis, CompressedDistances or None).
    """
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != b"SPB1":
        raise ValueError(f"not a spectral cache: bad magic {buf[:4]!r}")
    n, k = struct.unpack("<II", buf[4:12])
    off = 12
    vals = np.frombuffer(buf, np.float64, k, off)
    off += 8 * k
    phi = np.frombuffer(buf, np.float64, n * k, off).reshape((n, k), order="F")
    off += 8 * n * k
    areas = np.asarray(vertex_areas, dtype=np.float64)
    if areas.size != n:
        raise ValueError("vertex areas do not match the cached basis")
    basis = SpectralBasis(vals.copy(), phi.copy(), areas)
    compressed = None
    if off < len(buf):
        if buf[off:off + 4] != b"CDX1":
            raise ValueError("corrupt spectral cache: unknown trailing block")
        off += 4
        A = np.frombuffer(buf, np.float64, k * n, off).reshape((k, n), order="F")
        compressed = CompressedDistances(A.copy(), basis)
    return basis, compressed
