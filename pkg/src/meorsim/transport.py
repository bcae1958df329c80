"""Advection-dispersion-reaction transport of microbes, nutrients, surfactant.

The three concentrations share one generic equation

    d(phi S_w c)/dt + div(u_w c - phi S_w D grad c) = source

and differ only in their reaction sources. The sessile fractions sigma_r
(reversible) and sigma_i (irreversible) follow pointwise ODEs integrated with
the same backward-difference scheme as the PDEs. A scenario activates any
subset of the components; growth is Monod-limited when the nutrient equation
is active and runs at the maximal rate otherwise (single-species column mode).

Inlet boundary: total-flux (Danckwerts) condition, which degenerates to zero
dispersive flux during shut-in stages. Outlet: implicit advective outflow
with zero dispersive flux. The storage term is discretized on the product
phi*S_w*c so that the discrete mass ledger closes.
"""

from dataclasses import dataclass

import numpy as np

from . import biokinetics as bio
from . import petrophysics as petro_mod
from .errors import ConfigError, SolverError
from .numerics import (BoundarySpec, CoeffBlocks, CoefficientForm, OutflowSpec,
                       bdf_step, discretization, galerkin_assemble,
                       newton_solve)

COMPONENTS = ("microbes", "nutrients", "surfactant")
M_IDX, N_IDX, SURF_IDX = 0, 1, 2


@dataclass(frozen=True)
class DispersionParams:
    """Dispersivities (m), molecular diffusion (m^2/s) and tortuosity."""

    alpha_l: float = 0.0
    alpha_t: float = 0.0
    d_mol: float = 0.0
    tortuosity: float = 1.0

    def __post_init__(self):
        if not (self.alpha_l >= self.alpha_t >= 0.0):
            raise ConfigError("need alpha_l >= alpha_t >= 0")
        if self.d_mol < 0.0 or self.tortuosity <= 0.0:
            raise ConfigError("need d_mol >= 0 and tortuosity > 0")


@dataclass
class TransportState:
    """Nodal concentrations (kg/m^3) and sessile volume fractions."""

    c: np.ndarray        # (3, n_nodes), rows follow COMPONENTS
    sigma_r: np.ndarray
    sigma_i: np.ndarray

    @classmethod
    def zeros(cls, n_nodes, sigma0=0.0):
        return cls(np.zeros((3, n_nodes)),
                   np.full(n_nodes, float(sigma0)),
                   np.zeros(n_nodes))

    @property
    def c_m(self):
        return self.c[M_IDX]

    @property
    def c_n(self):
        return self.c[N_IDX]

    @property
    def c_surf(self):
        return self.c[SURF_IDX]

    @property
    def sigma(self):
        return self.sigma_r + self.sigma_i

    def copy(self):
        return TransportState(self.c.copy(), self.sigma_r.copy(),
                              self.sigma_i.copy())


def dispersion_tensor(v_w, params):
    """Hydrodynamic dispersion tensor from the interstitial velocity.

    ``v_w`` has shape (..., dim); the result appends (dim, dim). The
    velocity-dependent terms vanish smoothly as |v| -> 0.
    """
    v = np.asarray(v_w, dtype=float)
    dim = v.shape[-1]
    speed = np.linalg.norm(v, axis=-1)
    eye = np.eye(dim)
    iso = (params.alpha_t * speed + params.tortuosity * params.d_mol)
    d = iso[..., None, None] * eye
    safe = np.where(speed > 0.0, speed, 1.0)
    vv = v[..., :, None] * v[..., None, :] / safe[..., None, None]
    d += np.where(speed[..., None, None] > 0.0,
                  (params.alpha_l - params.alpha_t) * vv, 0.0)
    return d


def _growth_rate(c_n, kinetics, nutrient_limited):
    if nutrient_limited:
        return bio.monod_growth(c_n, kinetics.g_max, kinetics.k_mn)
    return np.full(np.shape(c_n), kinetics.g_max)


def _flow_point_fields(disc, mesh, flow_state, petro, fluids, bc_params):
    """phi, S_w, phi*S_w, Darcy water velocity per evaluation point set."""
    fields = {}
    phi_sw_nodal = petro.phi * flow_state.s_w
    for tag in ["volume"] + list(disc.facets.keys()):
        if tag == "volume":
            interp = disc.at_volume
        else:
            interp = lambda f, t=tag: disc.at_facets(t, f)  # noqa: E731
        s_q, gs_q = interp(flow_state.s_w)
        _, gp_q = interp(flow_state.p)
        _, gz_q = interp(mesh.elevation)
        phi_q, _ = interp(petro.phi)
        phisw_q, _ = interp(phi_sw_nodal)
        pts = {}
        for name, arr in (("k", petro.k), ("s_or", petro.s_or),
                          ("k_ro0", petro.k_ro0), ("n_o", petro.n_o)):
            v, _ = interp(arr)
            pts[name] = v.reshape(-1)
        s_flat = s_q.reshape(-1)
        s_e = petro_mod.normalized_saturation(s_flat, bc_params.s_wr,
                                              pts["s_or"])
        k_rw, k_ro = petro_mod.relative_permeabilities(
            s_e, bc_params, k_ro0=pts["k_ro0"], n_o=pts["n_o"])
        lam_w, lam_o, lam, f_w, f_o = petro_mod.mobilities(
            k_rw, k_ro, fluids.mu_w, fluids.mu_o)
        dse = 1.0 / (1.0 - bc_params.s_wr - pts["s_or"])
        _, dpc_dsw = petro_mod.capillary_pressure(s_e, bc_params.p_t,
                                                  bc_params.theta, dse)
        dimn = mesh.dimension
        gp = gp_q.reshape(-1, dimn)
        gs = gs_q.reshape(-1, dimn)
        gz = gz_q.reshape(-1, dimn)
        k = pts["k"]
        u_w = (-(lam * f_w * k)[:, None] * gp
               + (lam * f_w * dpc_dsw * k)[:, None] * gs
               - (lam * f_w * fluids.rho_w * fluids.gravity * k)[:, None] * gz)
        fields[tag] = {
            "phi": phi_q.reshape(-1),
            "s_w": s_flat,
            "phi_sw": np.maximum(phisw_q.reshape(-1), 1e-12),
            "u_w": u_w,
        }
    return fields


def assemble_transport_system(mesh, state, flow_state, petro, fluids,
                              bc_params, kinetics, dispersion, active,
                              nutrient_limited=True):
    """Coefficient form for the active components (no boundary data yet).

    ``dispersion`` is a sequence of three DispersionParams following
    COMPONENTS; ``active`` the tuple of active component indices. Sessile
    fractions enter the sources frozen at their current outer iterate.
    """
    disc = discretization(mesh)
    active = tuple(active)
    m = len(active)
    if m == 0:
        raise ConfigError("no active transport components")
    flow_pts = _flow_point_fields(disc, mesh, flow_state, petro, fluids,
                                  bc_params)
    sigma_nodal = state.sigma
    sig_pts, sigr_pts = {}, {}
    for tag in flow_pts:
        interp = disc.at_volume if tag == "volume" \
            else (lambda f, t=tag: disc.at_facets(t, f))
        sig, _ = interp(sigma_nodal)
        sig_pts[tag] = sig.reshape(-1)
        sr, _ = interp(state.sigma_r)
        sigr_pts[tag] = sr.reshape(-1)
    dim = mesh.dimension

    def coefficients(tag, u):
        pts = flow_pts[tag]
        sigma = sig_pts[tag]
        npts = u.shape[1]
        phi, s_w, phi_sw, u_w = pts["phi"], pts["s_w"], pts["phi_sw"], pts["u_w"]
        v_w = u_w / phi_sw[:, None]

        full_c = np.zeros((3, npts))
        for loc, g in enumerate(active):
            full_c[g] = u[loc]
        g_m = _growth_rate(full_c[N_IDX], kinetics, nutrient_limited)
        if SURF_IDX in active:
            r_surf = bio.surfactant_rate(full_c[N_IDX], full_c[M_IDX], sigma,
                                         phi, s_w, kinetics)
        else:
            r_surf = np.zeros(npts)
        biomass = phi * s_w * full_c[M_IDX] + sigma * kinetics.rho_m
        sources = np.zeros((3, npts))
        sources[M_IDX] = (phi * s_w * (g_m - kinetics.d_m - kinetics.k_d)
                          * full_c[M_IDX]
                          + kinetics.k_d * kinetics.rho_m * sigr_pts[tag]
                          - r_surf / kinetics.y_surf_m)
        sources[N_IDX] = (-g_m * biomass / kinetics.y_mn
                          - r_surf / kinetics.y_surf_n
                          - kinetics.m_n * biomass)
        sources[SURF_IDX] = r_surf

        c_block = np.zeros((m, m, npts, dim, dim))
        alpha = np.zeros((m, m, npts, dim))
        d_a = np.zeros((m, m, npts))
        f = np.zeros((m, npts))
        for loc, g in enumerate(active):
            d_tensor = dispersion_tensor(v_w, dispersion[g])
            c_block[loc, loc] = phi_sw[:, None, None] * d_tensor
            alpha[loc, loc] = -u_w
            d_a[loc, loc] = phi_sw
            f[loc] = sources[g]
        return CoeffBlocks(c=c_block, alpha=alpha, f=f, d_a=d_a)

    return CoefficientForm(n_unknowns=m, coefficients=coefficients,
                           nonlinear_unknowns=tuple(range(m)))


def apply_transport_bcs(form, c_in, u_w_in, active):
    """Danckwerts inlet (total flux = injected flux) and advective outflow."""
    c_in = np.asarray(c_in, dtype=float)
    if np.any(c_in < 0.0):
        raise ConfigError("injected concentrations must be non-negative")
    boundary = {}
    if u_w_in > 0.0:
        boundary["inlet"] = BoundarySpec(
            flux={loc: float(c_in[g]) * u_w_in for loc, g in enumerate(active)})
    boundary["outlet"] = BoundarySpec(
        outflow={loc: OutflowSpec(keep_alpha=True)
                 for loc in range(len(active))})
    form.boundary = boundary
    return form


def sessile_odes(state, c_m, phi, g_m, kinetics, dt, history_r, history_i,
                 order):
    """Pointwise backward-difference update of the sessile fractions.

    Linear in the new fractions, so the update is a direct solve per node;
    non-negativity is enforced. Returns (sigma_r, sigma_i).
    """
    if dt <= 0.0:
        raise ConfigError("sessile ODE step needs dt > 0")
    scale_r, hist_r = bdf_step(history_r, dt, order)
    scale_i, hist_i = bdf_step(history_i, dt, order)
    attach = phi * np.maximum(c_m, 0.0) / kinetics.rho_m
    rate_r = g_m - kinetics.k_d - kinetics.d_m
    rate_i = g_m - kinetics.d_m
    sigma_r = (hist_r + kinetics.k_c1 * attach) / (scale_r - rate_r)
    sigma_i = (hist_i + kinetics.k_c2 * attach) / (scale_i - rate_i)
    return np.maximum(sigma_r, 0.0), np.maximum(sigma_i, 0.0)


class NegativeConcentrationError(SolverError):
    """A transport solve left meaningfully negative concentrations."""


@dataclass
class TransportStepResult:
    state: TransportState
    newton_iterations: int
    residual_norm: float
    boundary_flux: dict
    system: object


def solve_transport_step(mesh, state, flow_state, petro, fluids, bc_params,
                         kinetics, dispersion, active, c_in, u_w_in,
                         dt, history_products, order, config,
                         nutrient_limited=True, negativity_tol=None,
                         fd_scales=None):
    """One implicit transport step for the active components.

    ``history_products`` holds past nodal (phi S_w c) products per component,
    newest first, shaped (k, len(active), n_nodes). The sessile ODEs are not
    advanced here; the coupling loop owns them.
    """
    form = assemble_transport_system(mesh, state, flow_state, petro, fluids,
                                     bc_params, kinetics, dispersion, active,
                                     nutrient_limited)
    apply_transport_bcs(form, c_in, u_w_in, active)
    scale, hist = bdf_step(history_products, dt, order)
    form.bdf_scale = scale
    form.history = hist
    if fd_scales is None:
        fd_scales = tuple(max(float(c_in[g]), float(np.abs(state.c[g]).max()),
                              1e-6) for g in active)
    form.fd_scales = fd_scales

    last = {}

    def fun(u):
        system = galerkin_assemble(form, mesh, u)
        last["system"] = system
        return system.residual, system.matrix

    u0 = np.concatenate([state.c[g] for g in active])
    result = newton_solve(fun, u0, config)
    n = mesh.n_nodes
    new_state = state.copy()
    for loc, g in enumerate(active):
        new_state.c[g] = result.u[loc * n:(loc + 1) * n]

    if negativity_tol is None:
        negativity_tol = tuple(1e-10 for _ in active)
    for loc, g in enumerate(active):
        low = float(new_state.c[g].min())
        if low < -negativity_tol[loc]:
            raise NegativeConcentrationError(
                f"{COMPONENTS[g]} concentration reached {low:.3e}")

    system = last["system"]
    return TransportStepResult(new_state, result.iterations,
                               result.residual_norm, system.boundary_flux,
                               system)
