"""Reference elements: quadratic Lagrange bases and Gauss quadrature tables.

Local node numbering is lexicographic in the reference coordinates
(first axis fastest), which matches how the structured meshes are built.
"""

from dataclasses import dataclass

import numpy as np

# 3-point Gauss rule per direction (exact through degree 5)
_GP = np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)])
_GW = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])


def _line3(xi):
    """Quadratic Lagrange basis on [-1, 1] with nodes at -1, 0, +1."""
    xi = np.asarray(xi, dtype=float)
    n = np.stack([0.5 * xi * (xi - 1.0), 1.0 - xi * xi, 0.5 * xi * (xi + 1.0)], axis=-1)
    dn = np.stack([xi - 0.5, -2.0 * xi, xi + 0.5], axis=-1)
    return n, dn


def _tensor_basis(coords):
    """Tensor-product quadratic basis at points ``coords`` of shape (npts, dim)."""
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    npts, dim = coords.shape
    n1, d1 = zip(*(_line3(coords[:, ax]) for ax in range(dim)))
    nloc = 3**dim
    n = np.ones((npts, nloc))
    dn = np.zeros((npts, nloc, dim))
    for a in range(nloc):
        idx = [(a // 3**ax) % 3 for ax in range(dim)]
        for ax in range(dim):
            n[:, a] *= n1[ax][:, idx[ax]]
        for der in range(dim):
            term = np.ones(npts)
            for ax in range(dim):
                term *= d1[ax][:, idx[ax]] if ax == der else n1[ax][:, idx[ax]]
            dn[:, a, der] = term
    return n, dn


@dataclass(frozen=True)
class FaceRule:
    """Parent-element tabulation at the quadrature points of one face."""

    qp: np.ndarray          # (n_fqp, dim) parent reference coordinates
    qw: np.ndarray          # (n_fqp,) reference face weights
    n: np.ndarray           # (n_fqp, n_nodes) parent basis values
    dn: np.ndarray          # (n_fqp, n_nodes, dim) parent basis gradients
    ref_normal: np.ndarray  # (dim,) outward normal in reference coordinates


@dataclass(frozen=True)
class ReferenceElement:
    dim: int
    n_nodes: int
    qp: np.ndarray    # (n_qp, dim)
    qw: np.ndarray    # (n_qp,)
    n: np.ndarray     # (n_qp, n_nodes)
    dn: np.ndarray    # (n_qp, n_nodes, dim)
    faces: tuple      # FaceRule per local face, ordered (-x, +x, -y, +y, ...)


def _volume_rule(dim):
    grids = np.meshgrid(*([_GP] * dim), indexing="ij")
    # first axis fastest, consistent with the lexicographic node order
    pts = np.stack([g.reshape(-1, order="F") for g in grids], axis=-1)
    wgrids = np.meshgrid(*([_GW] * dim), indexing="ij")
    w = np.ones(pts.shape[0])
    for g in wgrids:
        w *= g.reshape(-1, order="F")
    return pts, w


def _face_rules(dim):
    faces = []
    if dim == 1:
        for side, xi in ((-1.0, -1.0), (1.0, 1.0)):
            n, dn = _tensor_basis(np.array([[xi]]))
            faces.append(FaceRule(np.array([[xi]]), np.array([1.0]), n, dn,
                                  np.array([side])))
        return tuple(faces)
    in_face = dim - 1
    fpts, fw = _volume_rule(in_face)
    for axis in range(dim):
        for side in (-1.0, 1.0):
            qp = np.zeros((fpts.shape[0], dim))
            other = [ax for ax in range(dim) if ax != axis]
            for a, ax in enumerate(other):
                qp[:, ax] = fpts[:, a]
            qp[:, axis] = side
            n, dn = _tensor_basis(qp)
            normal = np.zeros(dim)
            normal[axis] = side
            faces.append(FaceRule(qp, fw.copy(), n, dn, normal))
    return tuple(faces)


def reference_element(dim):
    """Quadratic Lagrange reference element for 1D lines or 3D hexahedra."""
    if dim not in (1, 3):
        raise ValueError(f"unsupported element dimension {dim}")
    qp, qw = _volume_rule(dim)
    n, dn = _tensor_basis(qp)
    return ReferenceElement(dim=dim, n_nodes=3**dim, qp=qp, qw=qw, n=n, dn=dn,
                            faces=_face_rules(dim))


_CACHE = {}


def get_reference_element(dim):
    if dim not in _CACHE:
        _CACHE[dim] = reference_element(dim)
    return _CACHE[dim]
