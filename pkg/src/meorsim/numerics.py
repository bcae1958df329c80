"""Discretization and solver engine.

Everything is phrased in the generic coefficient form

    d_a du/dt + div(-c grad(u) - alpha u + gamma) + beta.grad(u) + a u = f

assembled with a standard Galerkin method on quadratic Lagrange elements.
Coefficient blocks are supplied by a callback evaluated at quadrature points,
so the same assembler serves the flow system, the transport system and the
verification problems. Jacobians combine the analytic contribution of the
terms that are linear in the unknowns with central finite differences of the
coefficient blocks themselves; the coefficients may depend on the unknown
values but not on their gradients.

Boundary conditions follow the constraint/flux split (h u = r constraints,
prescribed normal flux g, or an implicit "outflow" flux in which selected
parts of the interior flux expression are kept in the weak form). Dirichlet
constraints are imposed by row elimination.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elements import get_reference_element
from .errors import AssemblyError, SolverError

log = logging.getLogger("meorsim")


@dataclass
class NumericsConfig:
    """Time step, solver tolerances and stabilization settings."""

    dt: float = 3600.0            # nominal step, s
    bdf_order: int = 2            # startup steps always use BDF1
    newton_rtol: float = 1e-8
    newton_atol: float = 1e-12
    newton_max_iter: int = 25
    max_rejections: int = 10      # consecutive dt halvings before aborting
    quadrature_order: int = 3     # Gauss points per direction
    eps_diffusion: float = 1e-7   # artificial saturation diffusion, m^2/s

    def __post_init__(self):
        if self.dt <= 0.0 or self.newton_rtol <= 0.0 or self.newton_atol <= 0.0:
            raise ValueError("time step and tolerances must be positive")
        if self.bdf_order not in (1, 2):
            raise ValueError("bdf_order must be 1 or 2")


# ---------------------------------------------------------------------------
# geometry cache


class Discretization:
    """Precomputed basis values, physical gradients and facet geometry."""

    def __init__(self, mesh):
        self.mesh = mesh
        ref = get_reference_element(mesh.dimension)
        self.ref = ref
        dim = mesh.dimension
        xe = mesh.coords[mesh.connectivity]                  # (e, a, dim)
        # jacobian J[e,q,i,j] = d x_i / d xi_j
        jac = np.einsum("ead,qan->eqdn", xe, ref.dn)
        det = np.linalg.det(jac) if dim > 1 else jac[..., 0, 0]
        if np.any(det <= 0.0):
            raise AssemblyError("non-positive element Jacobian")
        inv = np.linalg.inv(jac) if dim > 1 else (1.0 / jac)
        # physical gradients dN/dx[e,q,a,i] = dN/dxi[q,a,j] * invJ[e,q,j,i]
        self.dndx = np.einsum("qaj,eqji->eqai", ref.dn, inv)
        self.wdet = ref.qw[None, :] * det
        self.n = ref.n
        self.conn = mesh.connectivity
        self.facets = {name: self._facet_geometry(bset)
                       for name, bset in mesh.boundary.items()
                       if len(bset.elements) > 0}

    def _facet_geometry(self, bset):
        mesh, ref, dim = self.mesh, self.ref, self.mesh.dimension
        face_n = np.stack([fr.n for fr in ref.faces])          # (6 or 2, q, a)
        face_dn = np.stack([fr.dn for fr in ref.faces])
        face_qw = np.stack([fr.qw for fr in ref.faces])
        face_nrm = np.stack([fr.ref_normal for fr in ref.faces])
        fid = bset.faces
        n = face_n[fid]                                        # (f, q, a)
        dn = face_dn[fid]                                      # (f, q, a, dim)
        qw = face_qw[fid]
        ref_nrm = face_nrm[fid]                                # (f, dim)
        conn = mesh.connectivity[bset.elements]                # (f, a)
        xe = mesh.coords[conn]                                 # (f, a, dim)
        jac = np.einsum("fad,fqan->fqdn", xe, dn)
        det = np.linalg.det(jac) if dim > 1 else jac[..., 0, 0]
        inv = np.linalg.inv(jac) if dim > 1 else (1.0 / jac)
        dndx = np.einsum("fqaj,fqji->fqai", dn, inv)
        # Nanson: outward area vector = det(J) J^{-T} n_ref
        avec = det[..., None] * np.einsum("fqji,fj->fqi", inv, ref_nrm)
        measure = np.linalg.norm(avec, axis=-1)
        normal = avec / measure[..., None]
        return {"conn": conn, "n": n, "dndx": dndx,
                "wds": qw * measure, "normal": normal}

    # interpolation helpers -------------------------------------------------

    def at_volume(self, nodal):
        """Nodal field -> (values, gradients) at the volume quadrature points."""
        ue = np.asarray(nodal)[self.conn]
        return (np.einsum("qa,ea->eq", self.n, ue),
                np.einsum("eqad,ea->eqd", self.dndx, ue))

    def at_facets(self, tag, nodal):
        geo = self.facets[tag]
        ue = np.asarray(nodal)[geo["conn"]]
        return (np.einsum("fqa,fa->fq", geo["n"], ue),
                np.einsum("fqad,fa->fqd", geo["dndx"], ue))

    def integrate(self, nodal):
        vals, _ = self.at_volume(nodal)
        return float(np.sum(self.wdet * vals))


_DISC_CACHE = {}


def discretization(mesh):
    key = id(mesh)
    entry = _DISC_CACHE.get(key)
    if entry is None or entry.mesh is not mesh:
        entry = Discretization(mesh)
        _DISC_CACHE[key] = entry
    return entry


# ---------------------------------------------------------------------------
# coefficient form


@dataclass
class CoeffBlocks:
    """Coefficient arrays at evaluation points (trailing axis = points).

    ``c`` may be scalar-valued (m, m, p) or tensor-valued (m, m, p, dim, dim).
    Missing blocks are treated as zero.
    """

    c: np.ndarray | None = None
    alpha: np.ndarray | None = None   # (m, m, p, dim)
    beta: np.ndarray | None = None    # (m, m, p, dim)
    gamma: np.ndarray | None = None   # (m, p, dim)
    a: np.ndarray | None = None       # (m, m, p)
    f: np.ndarray | None = None       # (m, p)
    d_a: np.ndarray | None = None     # (m, m, p), multiplies the BDF term


@dataclass
class OutflowSpec:
    """Parts of the interior flux kept implicit on an open boundary."""

    keep_c_cols: tuple = ()
    keep_alpha: bool = False
    keep_gamma: bool = False


@dataclass
class BoundarySpec:
    """Per boundary-set conditions, keyed by unknown index."""

    dirichlet: dict = field(default_factory=dict)  # comp -> value (scalar/array)
    flux: dict = field(default_factory=dict)       # comp -> prescribed g
    outflow: dict = field(default_factory=dict)    # comp -> OutflowSpec


@dataclass
class CoefficientForm:
    """A PDE system ready for Galerkin assembly.

    ``coefficients(tag, u)`` returns the CoeffBlocks at the evaluation points
    of ``tag`` ("volume" or a boundary-set name) given the unknowns ``u`` of
    shape (m, points). ``nonlinear_unknowns`` lists the components the blocks
    actually depend on; Jacobian finite differences are restricted to them.
    ``bdf_scale`` is c0/dt of the time discretization (0 for steady problems)
    and ``history`` the nodal history term such that du/dt is approximated by
    bdf_scale*u - history.
    """

    n_unknowns: int
    coefficients: object
    boundary: dict = field(default_factory=dict)   # set name -> BoundarySpec
    nonlinear_unknowns: tuple = ()
    bdf_scale: float = 0.0
    history: np.ndarray | None = None              # (m, n_nodes)
    fd_scales: tuple = ()                          # typical magnitude per unknown


@dataclass
class AssembledSystem:
    matrix: sp.csr_matrix
    residual: np.ndarray
    raw_residual: np.ndarray       # before Dirichlet row replacement
    boundary_flux: dict            # (set, comp) -> outward flux integral
    dirichlet_dofs: np.ndarray

    def __iter__(self):  # allows: matrix, residual = galerkin_assemble(...)
        return iter((self.matrix, self.residual))


def _as_tensor_c(c, dim):
    """Promote scalar-valued c blocks to (m, m, p, dim, dim)."""
    if c is None:
        return None
    if c.ndim == 3:
        eye = np.eye(dim)
        return c[..., None, None] * eye
    return c


def _contract(blocks, u, grad_u, dim, bdf_scale):
    """Flux and value parts of the residual integrand.

    Returns (phi, r): phi[m, p, dim] multiplies grad(w), r[m, p] multiplies w.
    The history and point-independent terms are added by the caller.
    """
    m, p = u.shape
    phi = np.zeros((m, p, dim))
    r = np.zeros((m, p))
    c = _as_tensor_c(blocks.c, dim)
    if c is not None:
        phi += np.einsum("ijpdg,jpg->ipd", c, grad_u)
    if blocks.alpha is not None:
        phi += np.einsum("ijpd,jp->ipd", blocks.alpha, u)
    if blocks.gamma is not None:
        phi -= blocks.gamma
    if blocks.d_a is not None and bdf_scale != 0.0:
        r += bdf_scale * np.einsum("ijp,jp->ip", blocks.d_a, u)
    if blocks.a is not None:
        r += np.einsum("ijp,jp->ip", blocks.a, u)
    if blocks.beta is not None:
        r += np.einsum("ijpd,jpd->ip", blocks.beta, grad_u)
    if blocks.f is not None:
        r -= blocks.f
    return phi, r


def _boundary_contract(blocks, u, grad_u, normal, spec_or_g, dim):
    """Normal flux expression G on a boundary (prescribed or implicit)."""
    m, p = u.shape
    if not isinstance(spec_or_g, dict):
        raise AssemblyError("internal: expected per-component boundary map")
    g = np.zeros((m, p))
    c = _as_tensor_c(blocks.c, dim)
    for i, spec in spec_or_g.items():
        if isinstance(spec, OutflowSpec):
            if c is not None:
                for j in spec.keep_c_cols:
                    g[i] += np.einsum("pdg,pg,pd->p", c[i, j], grad_u[j], normal)
            if spec.keep_alpha and blocks.alpha is not None:
                g[i] += np.einsum("jpd,jp,pd->p", blocks.alpha[i], u, normal)
            if spec.keep_gamma and blocks.gamma is not None:
                g[i] -= np.einsum("pd,pd->p", blocks.gamma[i], normal)
        else:
            g[i] = spec
    return g


def _fd_delta(u, scale):
    return 1e-7 * np.maximum(np.abs(u), scale)


def galerkin_assemble(form, mesh, u=None):
    """Assemble the Jacobian matrix and residual vector of ``form`` at ``u``.

    ``u`` is the flat unknown vector (component-major); omitted it defaults
    to zero, which for linear problems yields the classic (K, -F) pair up to
    sign: solving matrix @ x = -residual returns the solution.
    """
    disc = discretization(mesh)
    m = form.n_unknowns
    n_nodes = mesh.n_nodes
    dim = mesh.dimension
    if u is None:
        u = np.zeros(m * n_nodes)
    u_nodal = np.asarray(u, dtype=float).reshape(m, n_nodes)

    fd_scales = form.fd_scales or tuple(1.0 for _ in range(m))

    n_el, n_qp, n_bf = disc.dndx.shape[0], disc.dndx.shape[1], disc.dndx.shape[2]
    conn = disc.conn
    npts = n_el * n_qp

    # unknowns at volume quadrature points
    u_e = u_nodal[:, conn]                                   # (m, e, a)
    u_q = np.einsum("qa,mea->meq", disc.n, u_e).reshape(m, npts)
    gu_q = np.einsum("eqad,mea->meqd", disc.dndx, u_e).reshape(m, npts, dim)

    blocks = form.coefficients("volume", u_q)
    phi, r = _contract(blocks, u_q, gu_q, dim, form.bdf_scale)
    if form.history is not None:
        hist_e = form.history[:, conn]
        r -= np.einsum("qa,mea->meq", disc.n, hist_e).reshape(m, npts)

    phi = phi.reshape(m, n_el, n_qp, dim)
    r = r.reshape(m, n_el, n_qp)

    residual = np.zeros(m * n_nodes)
    for i in range(m):
        loc = np.einsum("eq,eqad,eqd->ea", disc.wdet, disc.dndx, phi[i]) \
            + np.einsum("eq,qa,eq->ea", disc.wdet, disc.n, r[i])
        np.add.at(residual, i * n_nodes + conn, loc)

    # --- Jacobian: analytic part of the linear-in-u terms
    ij_rows, ij_cols, ij_vals = [], [], []
    c_t = _as_tensor_c(blocks.c, dim)
    mass_coeff = None
    if blocks.d_a is not None and form.bdf_scale != 0.0:
        mass_coeff = form.bdf_scale * blocks.d_a
    if blocks.a is not None:
        mass_coeff = blocks.a if mass_coeff is None else mass_coeff + blocks.a

    row_base = conn[:, :, None]                                # (e, a, 1)
    col_base = conn[:, None, :]                                # (e, 1, b)

    def push(i, j, loc):
        ij_rows.append(np.broadcast_to(i * n_nodes + row_base, loc.shape).ravel())
        ij_cols.append(np.broadcast_to(j * n_nodes + col_base, loc.shape).ravel())
        ij_vals.append(loc.ravel())

    for i in range(m):
        for j in range(m):
            loc = np.zeros((n_el, n_bf, n_bf))
            if c_t is not None:
                cij = c_t[i, j].reshape(n_el, n_qp, dim, dim)
                loc += np.einsum("eq,eqad,eqdg,eqbg->eab",
                                 disc.wdet, disc.dndx, cij, disc.dndx)
            if blocks.alpha is not None:
                aij = blocks.alpha[i, j].reshape(n_el, n_qp, dim)
                loc += np.einsum("eq,eqad,eqd,qb->eab",
                                 disc.wdet, disc.dndx, aij, disc.n)
            if blocks.beta is not None:
                bij = blocks.beta[i, j].reshape(n_el, n_qp, dim)
                loc += np.einsum("eq,qa,eqd,eqbd->eab",
                                 disc.wdet, disc.n, bij, disc.dndx)
            if mass_coeff is not None:
                mij = mass_coeff[i, j].reshape(n_el, n_qp)
                loc += np.einsum("eq,qa,eq,qb->eab",
                                 disc.wdet, disc.n, mij, disc.n)
            push(i, j, loc)

    # --- Jacobian: finite differences of the coefficient blocks
    for k in form.nonlinear_unknowns:
        delta = _fd_delta(u_q[k], fd_scales[k])
        up = u_q.copy()
        up[k] = u_q[k] + delta
        um = u_q.copy()
        um[k] = u_q[k] - delta
        phi_p, r_p = _contract(form.coefficients("volume", up), u_q, gu_q,
                               dim, form.bdf_scale)
        phi_m, r_m = _contract(form.coefficients("volume", um), u_q, gu_q,
                               dim, form.bdf_scale)
        inv2d = 1.0 / (2.0 * delta)
        dphi = ((phi_p - phi_m) * inv2d[None, :, None]).reshape(m, n_el, n_qp, dim)
        dr = ((r_p - r_m) * inv2d[None, :]).reshape(m, n_el, n_qp)
        for i in range(m):
            loc = np.einsum("eq,eqad,eqd,qb->eab",
                            disc.wdet, disc.dndx, dphi[i], disc.n) \
                + np.einsum("eq,qa,eq,qb->eab", disc.wdet, disc.n, dr[i], disc.n)
            push(i, k, loc)

    # --- boundary terms
    boundary_flux = {}
    for tag, bspec in form.boundary.items():
        if tag not in disc.facets:
            continue
        geo = disc.facets[tag]
        fconn = geo["conn"]
        n_f, n_fq = geo["wds"].shape
        fpts = n_f * n_fq
        u_f = u_nodal[:, fconn]
        uq_f = np.einsum("fqa,mfa->mfq", geo["n"], u_f).reshape(m, fpts)
        guq_f = np.einsum("fqad,mfa->mfqd", geo["dndx"], u_f).reshape(m, fpts, dim)
        nrm = geo["normal"].reshape(fpts, dim)

        comp_map = {}
        comp_map.update({i: g for i, g in bspec.flux.items()})
        comp_map.update({i: spec for i, spec in bspec.outflow.items()})
        if not comp_map:
            continue
        fblocks = form.coefficients(tag, uq_f)
        gvals = _boundary_contract(fblocks, uq_f, guq_f, nrm, comp_map, dim)
        gq = gvals.reshape(m, n_f, n_fq)
        for i in comp_map:
            loc = np.einsum("fq,fqa,fq->fa", geo["wds"], geo["n"], gq[i])
            np.subtract.at(residual, i * n_nodes + fconn, loc)
            boundary_flux[(tag, i)] = -float(np.sum(geo["wds"] * gq[i]))

        # Jacobian of the implicit (outflow) parts
        out_items = [(i, s) for i, s in bspec.outflow.items()]
        if out_items:
            fc_t = _as_tensor_c(fblocks.c, dim)
            frow = fconn[:, :, None]
            fcol = fconn[:, None, :]
            for i, spec in out_items:
                if fc_t is not None:
                    for j in spec.keep_c_cols:
                        cij = fc_t[i, j].reshape(n_f, n_fq, dim, dim)
                        loc = np.einsum("fq,fqa,fqdg,fqbg,fqd->fab",
                                        geo["wds"], geo["n"], cij,
                                        geo["dndx"], geo["normal"])
                        ij_rows.append(np.broadcast_to(i * n_nodes + frow, loc.shape).ravel())
                        ij_cols.append(np.broadcast_to(j * n_nodes + fcol, loc.shape).ravel())
                        ij_vals.append(-loc.ravel())
                if spec.keep_alpha and fblocks.alpha is not None:
                    for j in range(m):
                        aij = fblocks.alpha[i, j].reshape(n_f, n_fq, dim)
                        loc = np.einsum("fq,fqa,fqd,fqd,fqb->fab",
                                        geo["wds"], geo["n"], aij,
                                        geo["normal"], geo["n"])
                        ij_rows.append(np.broadcast_to(i * n_nodes + frow, loc.shape).ravel())
                        ij_cols.append(np.broadcast_to(j * n_nodes + fcol, loc.shape).ravel())
                        ij_vals.append(-loc.ravel())
            # coefficient dependence of the boundary flux
            for k in form.nonlinear_unknowns:
                delta = _fd_delta(uq_f[k], fd_scales[k])
                up = uq_f.copy()
                up[k] = uq_f[k] + delta
                um = uq_f.copy()
                um[k] = uq_f[k] - delta
                g_p = _boundary_contract(form.coefficients(tag, up), uq_f,
                                         guq_f, nrm, dict(out_items), dim)
                g_m = _boundary_contract(form.coefficients(tag, um), uq_f,
                                         guq_f, nrm, dict(out_items), dim)
                dg = ((g_p - g_m) / (2.0 * delta)).reshape(m, n_f, n_fq)
                for i, _ in out_items:
                    loc = np.einsum("fq,fqa,fq,fqb->fab",
                                    geo["wds"], geo["n"], dg[i], geo["n"])
                    ij_rows.append(np.broadcast_to(i * n_nodes + frow, loc.shape).ravel())
                    ij_cols.append(np.broadcast_to(k * n_nodes + fcol, loc.shape).ravel())
                    ij_vals.append(-loc.ravel())

    # --- Dirichlet constraints by row elimination
    dir_dofs, dir_vals = [], []
    for tag, bspec in form.boundary.items():
        bset = mesh.boundary.get(tag)
        if bset is None or len(bset.nodes) == 0:
            continue
        for i, value in bspec.dirichlet.items():
            dofs = i * n_nodes + bset.nodes
            dir_dofs.append(dofs)
            dir_vals.append(np.broadcast_to(np.asarray(value, dtype=float),
                                            dofs.shape).copy())
    if dir_dofs:
        dir_dofs = np.concatenate(dir_dofs)
        dir_vals = np.concatenate(dir_vals)
    else:
        dir_dofs = np.empty(0, dtype=np.int64)
        dir_vals = np.empty(0)

    # explicit diagonal entries so constrained rows keep a stable pattern
    ij_rows.append(dir_dofs)
    ij_cols.append(dir_dofs)
    ij_vals.append(np.zeros(dir_dofs.shape[0]))

    ndof = m * n_nodes
    matrix = sp.csr_matrix(
        (np.concatenate(ij_vals),
         (np.concatenate(ij_rows), np.concatenate(ij_cols))),
        shape=(ndof, ndof))
    matrix.sum_duplicates()

    raw_residual = residual.copy()
    if dir_dofs.size:
        zero_rows_inplace(matrix, dir_dofs)
        diag = matrix.diagonal()
        diag[dir_dofs] = 1.0
        matrix.setdiag(diag)
        residual[dir_dofs] = u[dir_dofs] - dir_vals

    return AssembledSystem(matrix, residual, raw_residual, boundary_flux,
                           dir_dofs)


def zero_rows_inplace(matrix, rows):
    """Zero out the given CSR rows without changing the sparsity pattern."""
    for row in rows:
        matrix.data[matrix.indptr[row]:matrix.indptr[row + 1]] = 0.0


# ---------------------------------------------------------------------------
# time discretization


def bdf_step(history, dt, order):
    """Backward-difference coefficients for the d_a block.

    ``history`` holds past states, most recent first. Returns (scale, hist)
    such that du/dt is approximated by scale*u - hist. Falls back to BDF1
    when the history is too short for the requested order.
    """
    if order not in (1, 2):
        raise ValueError("BDF order must be 1 or 2")
    if len(history) == 0:
        raise ValueError("need at least one history state")
    if order == 1 or len(history) < 2:
        return 1.0 / dt, np.asarray(history[0]) / dt
    u1, u2 = np.asarray(history[0]), np.asarray(history[1])
    return 1.5 / dt, (4.0 * u1 - u2) / (2.0 * dt)


# ---------------------------------------------------------------------------
# nonlinear and linear solvers


@dataclass
class NewtonResult:
    u: np.ndarray
    iterations: int
    residual_norm: float
    initial_norm: float
    history: list
    converged: bool


def newton_solve(fun, u0, config):
    """Newton-Raphson iteration on ``fun(u) -> (residual, jacobian)``.

    Stops when ||R|| <= rtol*||R0|| + atol. Raises SolverError when the
    iteration budget is exhausted; the caller is expected to retry with a
    smaller time step.
    """
    u = np.atleast_1d(np.asarray(u0, dtype=float)).copy()
    norms = []
    norm0 = None
    for it in range(config.newton_max_iter + 1):
        out = fun(u)
        res, jac = out[0], out[1]
        res = np.atleast_1d(np.asarray(res, dtype=float))
        norm = float(np.linalg.norm(res))
        norms.append(norm)
        if norm0 is None:
            norm0 = norm
        if norm <= config.newton_rtol * norm0 + config.newton_atol:
            return NewtonResult(u, it, norm, norm0, norms, True)
        if it == config.newton_max_iter:
            break
        du = sparse_lu_solve(jac, -res)
        u = u + du
    raise SolverError(
        f"Newton did not converge in {config.newton_max_iter} iterations "
        f"(residual {norms[-1]:.3e}, initial {norm0:.3e})")


def sparse_lu_solve(matrix, rhs):
    """Direct sparse LU solve for square unsymmetric systems.

    One step of iterative refinement is applied if the residual check
    ||Ax - b|| / ||b|| <= 1e-10 fails on the first pass.
    """
    rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
    if sp.issparse(matrix):
        mat = matrix.tocsc()
    else:
        mat = sp.csc_matrix(np.atleast_2d(np.asarray(matrix, dtype=float)))
    if mat.shape[0] != mat.shape[1] or mat.shape[0] != rhs.shape[0]:
        raise SolverError("matrix/rhs shapes are inconsistent")
    try:
        lu = spla.splu(mat)
        x = lu.solve(rhs)
    except RuntimeError as exc:
        raise SolverError(f"sparse LU factorization failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        bad = int(np.argmax(~np.isfinite(x)))
        raise SolverError(f"numerically singular pivot (first bad row {bad})")
    bnorm = float(np.linalg.norm(rhs))
    if bnorm > 0.0:
        resid = rhs - mat @ x
        if np.linalg.norm(resid) > 1e-10 * bnorm:
            x = x + lu.solve(resid)
            resid = rhs - mat @ x
            if np.linalg.norm(resid) > 1e-10 * bnorm:
                raise SolverError(
                    "linear solve residual "
                    f"{np.linalg.norm(resid) / bnorm:.3e} exceeds 1e-10")
    return x
