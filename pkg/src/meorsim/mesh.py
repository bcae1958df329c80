"""Structured meshes: 1D axial lines and 3D boxes of quadratic Lagrange elements.

Boundary facets are tagged ``inlet`` (bottom of the vertical axis), ``outlet``
(opposite face) and ``wall`` (everything else, no-flow). Meshes are immutable
after construction and safe to share.
"""

from dataclasses import dataclass, field

import numpy as np

from .elements import get_reference_element
from .errors import InvalidGeometryError


@dataclass(frozen=True)
class BoundarySet:
    """One facet group: parent element ids plus local face ids, and its nodes."""

    name: str
    nodes: np.ndarray     # unique node ids in the set
    elements: np.ndarray  # parent element per facet
    faces: np.ndarray     # local face id per facet


@dataclass(frozen=True)
class Mesh:
    dimension: int
    coords: np.ndarray        # (n_nodes, dim) in m
    elevation: np.ndarray     # (n_nodes,) elevation z in m, drives gravity
    connectivity: np.ndarray  # (n_elements, 3**dim)
    boundary: dict = field(repr=False)
    area: float | None = None  # cross-section in m^2, 1D meshes only

    @property
    def n_nodes(self):
        return self.coords.shape[0]

    @property
    def n_elements(self):
        return self.connectivity.shape[0]

    def cross_section(self):
        """Area factor converting per-unit-area 1D fluxes to volumetric rates."""
        return self.area if self.dimension == 1 else 1.0

    def volume(self):
        """Domain volume from element quadrature (validates the Jacobians)."""
        ref = get_reference_element(self.dimension)
        xe = self.coords[self.connectivity]                     # (e, nloc, dim)
        jac = np.einsum("qad,ean->eqdn", ref.dn, xe)            # (e, q, dim, dim)
        det = np.linalg.det(jac) if self.dimension > 1 else jac[:, :, 0, 0]
        if np.any(det <= 0.0):
            raise InvalidGeometryError("non-positive element Jacobian")
        return float(np.einsum("q,eq->", ref.qw, det))

    def to_csv(self, path):
        """Write a node summary (id, x, y, z) usable for plotting scripts."""
        xyz = np.zeros((self.n_nodes, 3))
        xyz[:, : self.dimension] = self.coords
        xyz[:, 2] = self.elevation
        with open(path, "w", newline="\n") as fh:
            fh.write("node,x_m,y_m,z_m\n")
            for i, (x, y, z) in enumerate(xyz):
                fh.write(f"{i},{x:.17g},{y:.17g},{z:.17g}\n")


def build_line_mesh(length, n_elements, area, vertical=False):
    """Uniform 1D mesh of 3-node quadratic line elements.

    The inlet is the node at coordinate 0 (the bottom when ``vertical``),
    the outlet the node at ``length``. Elevation equals the axial coordinate
    for vertical meshes and is identically zero otherwise.
    """
    if length <= 0.0 or area <= 0.0:
        raise InvalidGeometryError("length and area must be positive")
    n_elements = int(n_elements)
    if n_elements < 1:
        raise InvalidGeometryError("need at least one element")
    n_nodes = 2 * n_elements + 1
    x = np.linspace(0.0, float(length), n_nodes)
    coords = x[:, None]
    elevation = x.copy() if vertical else np.zeros(n_nodes)
    conn = np.array([[2 * e, 2 * e + 1, 2 * e + 2] for e in range(n_elements)],
                    dtype=np.int64)
    boundary = {
        "inlet": BoundarySet("inlet", np.array([0]), np.array([0]), np.array([0])),
        "outlet": BoundarySet("outlet", np.array([n_nodes - 1]),
                              np.array([n_elements - 1]), np.array([1])),
        "wall": BoundarySet("wall", np.array([], dtype=np.int64),
                            np.array([], dtype=np.int64),
                            np.array([], dtype=np.int64)),
    }
    return Mesh(1, coords, elevation, conn, boundary, float(area))


def build_box_mesh(lengths, n_elements, vertical_axis=2):
    """Tensor-product box of 27-node hexahedra.

    The inlet is the face at the bottom of ``vertical_axis``, the outlet the
    opposite face; the four remaining faces are no-flow walls.
    """
    lengths = np.asarray(lengths, dtype=float)
    counts = np.asarray(n_elements, dtype=int)
    if lengths.shape != (3,) or counts.shape != (3,):
        raise InvalidGeometryError("need three extents and three element counts")
    if np.any(lengths <= 0.0) or np.any(counts < 1):
        raise InvalidGeometryError("extents must be positive, counts >= 1")
    if vertical_axis not in (0, 1, 2):
        raise InvalidGeometryError("vertical_axis must be 0, 1 or 2")

    nn = 2 * counts + 1
    axes = [np.linspace(0.0, lengths[ax], nn[ax]) for ax in range(3)]
    grid = np.meshgrid(*axes, indexing="ij")
    # global node index = i + nn0*(j + nn1*k), first axis fastest
    coords = np.stack([g.reshape(-1, order="F") for g in grid], axis=-1)

    def gid(i, j, k):
        return i + nn[0] * (j + nn[1] * k)

    conn = np.empty((counts.prod(), 27), dtype=np.int64)
    e = 0
    for ek in range(counts[2]):
        for ej in range(counts[1]):
            for ei in range(counts[0]):
                loc = [gid(2 * ei + a, 2 * ej + b, 2 * ek + c)
                       for c in range(3) for b in range(3) for a in range(3)]
                conn[e] = loc
                e += 1

    def eid(ei, ej, ek):
        return ei + counts[0] * (ej + counts[1] * ek)

    def face_set(axis, side):
        els, nodes = [], []
        rng = [range(counts[0]), range(counts[1]), range(counts[2])]
        rng[axis] = [0 if side == 0 else counts[axis] - 1]
        for ek in rng[2]:
            for ej in rng[1]:
                for ei in rng[0]:
                    els.append(eid(ei, ej, ek))
        idx = [np.arange(nn[0]), np.arange(nn[1]), np.arange(nn[2])]
        idx[axis] = np.array([0 if side == 0 else nn[axis] - 1])
        ii, jj, kk = np.meshgrid(*idx, indexing="ij")
        nodes = gid(ii, jj, kk).ravel()
        face_id = 2 * axis + side
        return (np.array(els, dtype=np.int64),
                np.full(len(els), face_id, dtype=np.int64),
                np.unique(nodes))

    boundary = {}
    wall_els, wall_faces, wall_nodes = [], [], []
    for axis in range(3):
        for side in (0, 1):
            els, faces, nodes = face_set(axis, side)
            if axis == vertical_axis:
                name = "inlet" if side == 0 else "outlet"
                boundary[name] = BoundarySet(name, nodes, els, faces)
            else:
                wall_els.append(els)
                wall_faces.append(faces)
                wall_nodes.append(nodes)
    boundary["wall"] = BoundarySet(
        "wall", np.unique(np.concatenate(wall_nodes)),
        np.concatenate(wall_els), np.concatenate(wall_faces))

    elevation = coords[:, vertical_axis].copy()
    return Mesh(3, coords, elevation, conn, boundary, None)
