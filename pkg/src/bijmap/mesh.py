"""Triangle meshes: parsing, areas, farthest point sampling, synthetic pairs."""

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.spatial import ConvexHull

from .fmap import PointMap
from ._rows import row_provider

_DEGENERATE_REL_AREA = 1e-12


class TriMesh:
    """Immutable triangle mesh with lumped (barycentric) vertex areas.

    Parameters
    ----------
    vertices : array_like, shape (n, 3)
        Vertex positions.
    faces : array_like, shape (m, 3)
        Vertex index triples (0-based).

    Raises
    ------
    ValueError
        On out-of-range indices, degenerate faces (repeated vertex or area
        below 1e-12 of the mean triangle area), or a mesh that is not
        edge-connected.  Geodesic distances are undefined across components,
        so multi-component input is rejected rather than matched piecewise.

    Notes
    -----
    Vertex areas are one third of the incident triangle areas; they always
    sum to the total surface area and are strictly positive on a valid mesh.
    Instances are immutable after construction and safe to share across
    worker threads.
    """

    def __init__(self, vertices, faces):
        vertices = np.ascontiguousarray(vertices, dtype=np.float64)
        faces = np.ascontiguousarray(faces, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise ValueError("vertices must be an (n, 3) array")
        if faces.ndim != 2 or faces.shape[1] != 3:
            raise ValueError("faces must be an (m, 3) array")
        n = vertices.shape[0]
        if faces.size:
            if faces.min() < 0 or faces.max() >= n:
                raise ValueError("face index out of range")
        same = ((faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2])
                | (faces[:, 0] == faces[:, 2]))
        if same.any():
            raise ValueError(f"degenerate face (repeated vertex): {np.where(same)[0][:5]}")

        cross = np.cross(vertices[faces[:, 1]] - vertices[faces[:, 0]],
                         vertices[faces[:, 2]] - vertices[faces[:, 0]])
        tri_areas = 0.5 * np.linalg.norm(cross, axis=1)
        if faces.size:
            tiny = tri_areas < _DEGENERATE_REL_AREA * tri_areas.mean()
            if tiny.any():
                raise ValueError(f"degenerate face (zero area): {np.where(tiny)[0][:5]}")

        self.vertices = vertices
        self.faces = faces
        self.triangle_areas = tri_areas
        va = np.bincount(faces.ravel(), weights=np.repeat(tri_areas / 3.0, 3),
                         minlength=n)
        self.vertex_areas = va
        self.total_area = float(tri_areas.sum())

        e = np.sort(faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        self.edges = np.unique(e, axis=0)

        adj = sparse.csr_matrix(
            (np.ones(2 * len(self.edges), np.int8),
             (np.concatenate([self.edges[:, 0], self.edges[:, 1]]),
              np.concatenate([self.edges[:, 1], self.edges[:, 0]]))),
            shape=(n, n))
        ncomp = csgraph.connected_components(adj, directed=False,
                                             return_labels=False)
        if ncomp != 1:
            raise ValueError(f"mesh is not edge-connected ({ncomp} components); "
                             "geodesic distances are undefined across components")

        for a in (self.vertices, self.faces, self.triangle_areas,
                  self.vertex_areas, self.edges):
            a.flags.writeable = False

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    def __repr__(self):
        return f"TriMesh(n_vertices={self.n_vertices}, n_faces={self.n_faces})"


def load_mesh(path, format=None):
    """Read a TriMesh from an ASCII OFF or OBJ file.

    The format is inferred from the extension unless given.  OBJ parsing
    accepts ``v``/``f`` records only; normals and textures are ignored
    (``f 3/1/2`` style references keep the vertex index).
    """
    path = str(path)
    if format is None:
        low = path.lower()
        if low.endswith(".off"):
            format = "off"
        elif low.endswith(".obj"):
            format = "obj"
        else:
            raise ValueError(f"cannot infer mesh format from {path!r}")
    if format == "off":
        return _load_off(path)
    if format == "obj":
        return _load_obj(path)
    raise ValueError(f"unsupported mesh format {format!r}")


def _meaningful_lines(path):
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                yield line


def _load_off(path):
    lines = _meaningful_lines(path)
    try:
        header = next(lines)
    except StopIteration:
        raise ValueError(f"{path}: empty OFF file") from None
    if header != "OFF":
        raise ValueError(f"{path}: missing OFF header")
    try:
        counts = next(lines).split()
        nv, nf = int(counts[0]), int(counts[1])
        verts = np.empty((nv, 3))
        for i in range(nv):
            verts[i] = [float(x) for x in next(lines).split()[:3]]
        faces = np.empty((nf, 3), np.int64)
        for i in range(nf):
            rec = next(lines).split()
            if int(rec[0]) != 3:
                raise ValueError(f"{path}: face {i} is not a triangle")
            faces[i] = [int(x) for x in rec[1:4]]
    except (StopIteration, IndexError, ValueError) as exc:
        if isinstance(exc, ValueError) and str(exc).startswith(path):
            raise
        raise ValueError(f"{path}: malformed OFF file ({exc})") from None
    return TriMesh(verts, faces)


def _load_obj(path):
    verts, faces = [], []
    for line in _meaningful_lines(path):
        rec = line.split()
        if rec[0] == "v":
            verts.append([float(x) for x in rec[1:4]])
        elif rec[0] == "f":
            if len(rec) != 4:
                raise ValueError(f"{path}: only triangle faces are supported")
            idx = [int(tok.split("/")[0]) for tok in rec[1:4]]
            faces.append([i - 1 for i in idx])  # OBJ is 1-based
    if not verts:
        raise ValueError(f"{path}: no vertices found")
    return TriMesh(np.array(verts), np.array(faces, np.int64))


def save_off(mesh, path):
    """Write an ASCII OFF file (header, counts, vertices, triangles)."""
    with open(path, "w") as fh:
        fh.write("OFF\n")
        fh.write(f"{mesh.n_vertices} {mesh.n_faces} 0\n")
        for v in mesh.vertices:
            fh.write(f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")


class SampleHierarchy:
    """Nested farthest-point-sampling levels (coarse to fine).

    levels[l] holds the first counts[l] sample vertex ids (each level is a
    prefix of the next), radii[l] the covering radius after that many
    samples, and parents[l] maps every mesh vertex to its nearest sample of
    level l.
    """

    def __init__(self, levels, radii, parents):
        for a, b in zip(radii, radii[1:]):
            if not b < a:
                raise ValueError("sampling radius must strictly decrease across levels")
        for coarse, fine in zip(levels, levels[1:]):
            if not np.array_equal(fine[:coarse.size], coarse):
                raise ValueError("levels must be nested")
        self.levels = levels
        self.radii = radii
        self.parents = parents

    @property
    def n_levels(self):
        return len(self.levels)


def farthest_point_sample(mesh_or_n, dist, counts, seed_vertex=0):
    """Greedy farthest point sampling under a given metric.

    Args:
        mesh_or_n: TriMesh (or plain vertex count) defining the index range.
        dist: distance provider (DistanceField, square ndarray, or anything
            with ``.row``/``.n``) covering all vertices.
        counts: ascending level sizes; the last must not exceed n.
        seed_vertex: first sample.

    Each new sample maximizes the distance to the chosen set, ties broken by
    lowest vertex index, so the hierarchy is reproducible.
    """
    n = mesh_or_n if isinstance(mesh_or_n, int) else mesh_or_n.n_vertices
    dn, row = row_provider(dist)
    if dn != n:
        raise ValueError("distance provider does not cover all vertices")
    counts = list(counts)
    if any(b <= a for a, b in zip(counts, counts[1:])):
        raise ValueError("counts must be strictly ascending")
    if not counts or counts[-1] > n or counts[0] < 1:
        raise ValueError("counts out of range")
    if not 0 <= seed_vertex < n:
        raise ValueError("seed vertex out of range")

    order = np.empty(counts[-1], np.int64)
    order[0] = seed_vertex
    mind = np.asarray(row(seed_vertex), dtype=np.float64).copy()
    nearest = np.full(n, seed_vertex, np.int64)

    levels, radii, parents = [], [], []
    boundary = 0
    for chosen in range(1, counts[-1] + 1):
        if chosen == counts[boundary]:
            levels.append(order[:chosen].copy())
            radii.append(float(mind.max()))
            parents.append(nearest.copy())
            boundary += 1
            if boundary == len(counts):
                break
        nxt = int(np.argmax(mind))
        order[chosen] = nxt
        r = row(nxt)
        closer = r < mind
        mind[closer] = r[closer]
        nearest[closer] = nxt
    return SampleHierarchy(levels, radii, parents)


# ---------------------------------------------------------------------------
# synthetic test pairs

def _fibonacci_sphere(n):
    i = np.arange(n)
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    z = 1.0 - (2.0 * i + 1.0) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    theta = 2.0 * np.pi * i / golden
    pts = np.column_stack([r * np.cos(theta), r * np.sin(theta), z])
    hull = ConvexHull(pts)
    return pts, hull.simplices.astype(np.int64)


def _bumpy_plane(n_target):
    side = max(2, int(round(np.sqrt(n_target))))
    xs = np.linspace(0.0, 1.0, side)
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    # two asymmetric bumps break the grid symmetries
    z = (0.12 * np.exp(-((gx - 0.3) ** 2 + (gy - 0.35) ** 2) / 0.02)
         + 0.08 * np.exp(-((gx - 0.72) ** 2 + (gy - 0.6) ** 2) / 0.05))
    verts = np.column_stack([gx.ravel(), gy.ravel(), z.ravel()])
    faces = []
    for i in range(side - 1):
        for j in range(side - 1):
            a = i * side + j
            b = a + side
            faces.append([a, b, a + 1])
            faces.append([b, b + 1, a + 1])
    return verts, np.array(faces, np.int64)


def _rotation(rng):
    q = rng.normal(size=(3, 3))
    r, _ = np.linalg.qr(q)
    if np.linalg.det(r) < 0:
        r[:, 0] = -r[:, 0]
    return r


def _deform(verts, kind, deform, amplitude, rng):
    if deform == "none":
        return verts.copy()
    if deform == "rigid":
        return verts @ _rotation(rng).T + rng.normal(scale=0.3, size=3)
    if deform == "bend":
        out = verts.copy()
        if kind == "bumpy_plane":
            # wrap the x-axis around a cylinder of radius 1/amplitude
            R = 1.0 / amplitude
            x, z = out[:, 0], out[:, 2]
            out = np.column_stack([(R + z) * np.sin(x / R), out[:, 1],
                                   (R + z) * np.cos(x / R) - R])
        else:
            # height-dependent twist about the z-axis
            ang = amplitude * out[:, 2]
            c, s = np.cos(ang), np.sin(ang)
            out = np.column_stack([c * out[:, 0] - s * out[:, 1],
                                   s * out[:, 0] + c * out[:, 1], out[:, 2]])
        return out
    raise ValueError(f"unknown deform {deform!r}")


def synth_pair(kind, resolution, deform="none", permute_seed=0, amplitude=0.3):
    """Generate a (source, target, groundtruth) test triple.

    The target is the source under the requested deformation plus a vertex
    permutation; the returned PointMap is that permutation exactly.
    ``permute_seed=0`` means the identity permutation by convention; any
    other seed draws a random one.  ``none`` and ``rigid`` are exact
    isometries, ``bend`` is a near-isometry controlled by ``amplitude``.
    """
    if kind == "sphere":
        verts, faces = _fibonacci_sphere(int(resolution))
    elif kind == "bumpy_plane":
        verts, faces = _bumpy_plane(int(resolution))
    else:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    n = verts.shape[0]
    if not 100 <= n <= 20000:
        raise ValueError(f"resolution yields n={n}, outside [100, 20000]")

    rng = np.random.default_rng([int(permute_seed), 17])
    deformed = _deform(verts, kind, deform, amplitude, rng)

    if permute_seed == 0:
        perm = np.arange(n, dtype=np.int64)
    else:
        perm = np.random.default_rng(int(permute_seed)).permutation(n)

    verts_y = np.empty_like(deformed)
    verts_y[perm] = deformed
    faces_y = perm[faces]

    mesh_x = TriMesh(verts, faces)
    mesh_y = TriMesh(verts_y, faces_y)
    return mesh_x, mesh_y, PointMap(perm, n)
