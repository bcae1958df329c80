"""Two-phase incompressible flow in oil-pressure / water-saturation form.

Unknowns are (p_o, S_w); phase velocities are reconstructed afterwards.
The coefficient blocks follow the matrix form of the pressure/saturation
system, with the capillary cross term replaced by the artificial diffusion
coefficient eps when capillarity is off. Gravity enters through the
elevation gradient, so horizontal meshes see no gravity terms at all.

Boundary handling: a constant-rate inlet prescribes the total normal flux
on the pressure row and a Dirichlet water saturation; the outlet holds
p_o fixed and lets water leave through the pressure-gradient part of its
flux (zero diffusive saturation flux); walls are natural no-flow. A shut-in
stage (u_w_in = 0) drops both inlet conditions.
"""

from dataclasses import dataclass

import numpy as np

from . import petrophysics as petro_mod
from .errors import IllPosedProblemError
from .numerics import (BoundarySpec, CoeffBlocks, CoefficientForm, OutflowSpec,
                       bdf_step, discretization, galerkin_assemble,
                       newton_solve)

P_IDX, S_IDX = 0, 1


@dataclass
class FlowBCs:
    """Stage boundary data. ``s_w_in = None`` tracks 1 - S_or at the inlet."""

    u_w_in: float          # injection Darcy velocity, m/s; 0 means shut-in
    p_out: float           # outlet pressure, Pa
    s_w_in: float | None = None

    def __post_init__(self):
        if self.u_w_in < 0.0:
            raise IllPosedProblemError("injection velocity must be >= 0")


@dataclass
class FlowState:
    """Nodal pressure/saturation plus the last reconstructed velocities."""

    p: np.ndarray
    s_w: np.ndarray
    u: np.ndarray | None = None     # (n_el, n_qp, dim) total Darcy velocity
    u_w: np.ndarray | None = None
    u_o: np.ndarray | None = None

    def copy(self):
        return FlowState(self.p.copy(), self.s_w.copy(),
                         None if self.u is None else self.u.copy(),
                         None if self.u_w is None else self.u_w.copy(),
                         None if self.u_o is None else self.u_o.copy())


def _petro_point_fields(disc, petro, dphi_dt, mesh):
    """Frozen rock/geometry fields interpolated to each evaluation point set."""
    tags = ["volume"] + list(disc.facets.keys())
    fields = {}
    for tag in tags:
        if tag == "volume":
            interp = lambda f: disc.at_volume(f)  # noqa: E731
        else:
            interp = lambda f, t=tag: disc.at_facets(t, f)  # noqa: E731
        phi, _ = interp(petro.phi)
        k, _ = interp(petro.k)
        s_or, _ = interp(petro.s_or)
        k_ro0, _ = interp(petro.k_ro0)
        n_o, _ = interp(petro.n_o)
        dphidt, _ = interp(dphi_dt)
        _, gradz = interp(mesh.elevation)
        shp = phi.shape
        fields[tag] = {k2: v.reshape(-1) for k2, v in
                       [("phi", phi), ("k", k), ("s_or", s_or),
                        ("k_ro0", k_ro0), ("n_o", n_o), ("dphidt", dphidt)]}
        fields[tag]["gradz"] = gradz.reshape(-1, mesh.dimension)
        fields[tag]["npts"] = int(np.prod(shp))
    return fields


def _constitutive(s_w, pts, bc, fluids):
    """Mobilities and capillary derivative at evaluation points."""
    s_e = petro_mod.normalized_saturation(s_w, bc.s_wr, pts["s_or"])
    k_rw, k_ro = petro_mod.relative_permeabilities(
        s_e, bc, k_ro0=pts["k_ro0"], n_o=pts["n_o"])
    lam_w, lam_o, lam, f_w, f_o = petro_mod.mobilities(
        k_rw, k_ro, fluids.mu_w, fluids.mu_o)
    dse_dsw = 1.0 / (1.0 - bc.s_wr - pts["s_or"])
    _, dpc_dsw = petro_mod.capillary_pressure(s_e, bc.p_t, bc.theta, dse_dsw)
    return lam_w, lam_o, lam, f_w, f_o, dpc_dsw


def assemble_flow_system(mesh, petro, fluids, bc_params, eps,
                         dphi_dt=None, q_w=0.0, q_o=0.0):
    """Coefficient form of the pressure/saturation system (volume part).

    ``dphi_dt`` is the nodal porosity rate supplied by the coupling loop;
    ``eps`` the artificial saturation diffusion (m^2/s). Boundary conditions
    are attached separately by :func:`apply_flow_bcs`.
    """
    disc = discretization(mesh)
    dphi_dt = np.zeros(mesh.n_nodes) if dphi_dt is None else dphi_dt
    pts_all = _petro_point_fields(disc, petro, dphi_dt, mesh)
    grav = fluids.gravity

    def coefficients(tag, u):
        pts = pts_all[tag]
        npts = u.shape[1]
        lam_w, lam_o, lam, f_w, f_o, dpc_dsw = _constitutive(
            u[S_IDX], pts, bc_params, fluids)
        k = pts["k"]
        c = np.zeros((2, 2, npts))
        c[P_IDX, P_IDX] = lam * k
        c[P_IDX, S_IDX] = -lam_w * dpc_dsw * k
        c[S_IDX, P_IDX] = lam_w * k
        c[S_IDX, S_IDX] = -lam_w * dpc_dsw * k + eps
        gamma = np.zeros((2, npts, mesh.dimension))
        gz = pts["gradz"]
        gamma[P_IDX] = (-(lam_o * fluids.rho_o + lam_w * fluids.rho_w)
                        * grav * k)[:, None] * gz
        gamma[S_IDX] = (-(lam_w * fluids.rho_w) * grav * k)[:, None] * gz
        a = np.zeros((2, 2, npts))
        a[S_IDX, S_IDX] = pts["dphidt"]
        f = np.zeros((2, npts))
        f[P_IDX] = q_o + q_w - pts["dphidt"]
        f[S_IDX] = q_w
        d_a = np.zeros((2, 2, npts))
        d_a[S_IDX, S_IDX] = pts["phi"]
        return CoeffBlocks(c=c, gamma=gamma, a=a, f=f, d_a=d_a)

    return CoefficientForm(
        n_unknowns=2, coefficients=coefficients,
        nonlinear_unknowns=(S_IDX,), fd_scales=(1.0e6, 1.0))


def apply_flow_bcs(form, bcs, mesh, petro=None):
    """Attach inlet/outlet/wall conditions to a flow coefficient form."""
    if bcs.p_out is None:
        raise IllPosedProblemError("outlet pressure is required (pure-Neumann "
                                   "flow problem would be singular)")
    boundary = {}
    if bcs.u_w_in > 0.0:
        if bcs.s_w_in is not None:
            s_in = float(bcs.s_w_in)
        else:
            if petro is None:
                raise IllPosedProblemError("tracking inlet saturation needs "
                                           "the petro state")
            s_in = 1.0 - petro.s_or[mesh.boundary["inlet"].nodes]
        boundary["inlet"] = BoundarySpec(dirichlet={S_IDX: s_in},
                                         flux={P_IDX: bcs.u_w_in})
    boundary["outlet"] = BoundarySpec(
        dirichlet={P_IDX: bcs.p_out},
        outflow={S_IDX: OutflowSpec(keep_c_cols=(P_IDX,), keep_gamma=True)})
    form.boundary = boundary
    return form


def reconstruct_velocities(state, petro, fluids, mesh, bc_params):
    """Total/water/oil Darcy velocities at the volume quadrature points."""
    disc = discretization(mesh)
    s_q, gs_q = disc.at_volume(state.s_w)
    _, gp_q = disc.at_volume(state.p)
    _, gz_q = disc.at_volume(mesh.elevation)
    shape = s_q.shape
    pts = {}
    for name, arr in (("phi", petro.phi), ("k", petro.k), ("s_or", petro.s_or),
                      ("k_ro0", petro.k_ro0), ("n_o", petro.n_o)):
        v, _ = disc.at_volume(arr)
        pts[name] = v.reshape(-1)
    lam_w, lam_o, lam, f_w, f_o, dpc_dsw = _constitutive(
        s_q.reshape(-1), pts, bc_params, fluids)
    k = pts["k"]
    gp = gp_q.reshape(-1, mesh.dimension)
    gs = gs_q.reshape(-1, mesh.dimension)
    gz = gz_q.reshape(-1, mesh.dimension)
    grav = fluids.gravity
    lam_k = (lam * k)[:, None]
    u = (-lam_k * gp
         + (lam * f_w * dpc_dsw * k)[:, None] * gs
         - (lam * (f_o * fluids.rho_o + f_w * fluids.rho_w) * grav * k)[:, None] * gz)
    u_w = (-(lam * f_w * k)[:, None] * gp
           + (lam * f_w * dpc_dsw * k)[:, None] * gs
           - (lam * f_w * fluids.rho_w * grav * k)[:, None] * gz)
    u_o = (-(lam * f_o * k)[:, None] * gp
           - (lam * f_o * fluids.rho_o * grav * k)[:, None] * gz)
    newshape = shape + (mesh.dimension,)
    return u.reshape(newshape), u_w.reshape(newshape), u_o.reshape(newshape)


@dataclass
class FlowStepResult:
    state: FlowState
    newton_iterations: int
    residual_norm: float
    q_total_out: float   # volumetric rate through the outlet, m^3/s
    q_water_out: float
    q_oil_out: float
    p_inlet: float


def solve_flow_step(mesh, state, petro, fluids, bc_params, bcs, dt, history,
                    order, config, dphi_dt=None):
    """One implicit flow step; ``history`` holds past S_w fields, newest first.

    ``dt = None`` solves the steady problem (used by verification tests).
    """
    form = assemble_flow_system(mesh, petro, fluids, bc_params,
                                config.eps_diffusion, dphi_dt=dphi_dt)
    apply_flow_bcs(form, bcs, mesh, petro)
    if dt is not None:
        scale, hist = bdf_step(history, dt, order)
        form.bdf_scale = scale
        full_hist = np.zeros((2, mesh.n_nodes))
        full_hist[S_IDX] = petro.phi * hist
        form.history = full_hist
    last = {}

    def fun(u):
        system = galerkin_assemble(form, mesh, u)
        last["system"] = system
        return system.residual, system.matrix

    u0 = np.concatenate([state.p, state.s_w])
    result = newton_solve(fun, u0, config)
    system = last["system"]
    n = mesh.n_nodes
    new_state = FlowState(result.u[:n].copy(), result.u[n:].copy())
    new_state.u, new_state.u_w, new_state.u_o = reconstruct_velocities(
        new_state, petro, fluids, mesh, bc_params)

    area = mesh.cross_section()
    out_p_dofs = P_IDX * n + mesh.boundary["outlet"].nodes
    q_total = -float(np.sum(system.raw_residual[out_p_dofs])) * area
    q_water = system.boundary_flux.get(("outlet", S_IDX), 0.0) * area
    p_in = float(np.mean(new_state.p[mesh.boundary["inlet"].nodes]))
    return FlowStepResult(new_state, result.iterations, result.residual_norm,
                          q_total, q_water, q_total - q_water, p_in)
