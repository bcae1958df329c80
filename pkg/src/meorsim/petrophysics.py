"""Rock-fluid constitutive laws.

Saturation normalization, Brooks-Corey capillary pressure, the three relative
permeability families used by the built-in scenarios, mobilities/fractional
flow, and the porosity/permeability feedback driven by bioclogging.

All functions are pure and accept scalars or per-node numpy arrays.
"""

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DegenerateMobilityError

# saturation clamp keeping p_cow and its derivative finite near the dry/wet ends
S_EPS = 1e-6

RELPERM_FAMILIES = ("modified-bc", "power", "classic-bc")


class PluggingWarning(UserWarning):
    """Sessile volume fraction reached the porosity floor somewhere."""


@dataclass(frozen=True)
class FluidProps:
    """Phase viscosities (Pa.s), densities (kg/m^3) and gravity (m/s^2)."""

    mu_w: float
    mu_o: float
    rho_w: float
    rho_o: float
    gravity: float = 9.81

    def __post_init__(self):
        for name in ("mu_w", "mu_o", "rho_w", "rho_o"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"FluidProps.{name} must be positive")
        if self.gravity < 0.0:
            raise ConfigError("FluidProps.gravity must be non-negative")


@dataclass(frozen=True)
class BrooksCoreyParams:
    """Capillary pressure fit and relative permeability family selection.

    ``family`` is one of ``modified-bc`` (endpoint/exponent form),
    ``power`` (k_rw = S_e^omega, k_ro = (1-S_e)^omega) or ``classic-bc``
    (pore-size-distribution form with exponent theta). ``omega`` only
    applies to the power family.
    """

    p_t: float            # entry pressure, Pa (0 switches capillarity off)
    theta: float          # Brooks-Corey exponent
    s_wr: float
    s_or: float
    k_rw0: float = 1.0
    k_ro0: float = 1.0
    n_w: float = 1.0
    n_o: float = 1.0
    family: str = "modified-bc"
    omega: float = 1.0

    def __post_init__(self):
        if self.family not in RELPERM_FAMILIES:
            raise ConfigError(f"unknown relperm family {self.family!r}; "
                              f"choose one of {RELPERM_FAMILIES}")
        if self.s_wr < 0.0 or self.s_or < 0.0 or self.s_wr + self.s_or >= 1.0:
            raise ConfigError("need 0 <= s_wr, 0 <= s_or and s_wr + s_or < 1")
        if self.p_t < 0.0 or self.theta <= 0.0:
            raise ConfigError("need p_t >= 0 and theta > 0")
        for name in ("k_rw0", "k_ro0"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"endpoint {name} must lie in (0, 1]")
        if self.n_w < 1.0 or self.n_o < 1.0 or self.omega < 1.0:
            raise ConfigError("relperm exponents must be >= 1")


@dataclass
class PetroState:
    """Per-node rock state mutated by the coupling chain each step."""

    phi0: float
    k0: float
    phi: np.ndarray
    k: np.ndarray
    s_or: np.ndarray    # current residual oil saturation
    k_ro0: np.ndarray   # current oil relperm endpoint
    n_o: np.ndarray     # current oil relperm exponent

    @classmethod
    def uniform(cls, n_nodes, phi0, k0, bc):
        return cls(phi0=float(phi0), k0=float(k0),
                   phi=np.full(n_nodes, float(phi0)),
                   k=np.full(n_nodes, float(k0)),
                   s_or=np.full(n_nodes, bc.s_or),
                   k_ro0=np.full(n_nodes, bc.k_ro0),
                   n_o=np.full(n_nodes, bc.n_o))

    def copy(self):
        return replace(self, phi=self.phi.copy(), k=self.k.copy(),
                       s_or=self.s_or.copy(), k_ro0=self.k_ro0.copy(),
                       n_o=self.n_o.copy())


def normalized_saturation(s_w, s_wr, s_or):
    """Effective saturation (S_w - S_wr)/(1 - S_wr - S_or), clamped away from 0/1."""
    s_e = (np.asarray(s_w, dtype=float) - s_wr) / (1.0 - s_wr - s_or)
    return np.clip(s_e, S_EPS, 1.0 - S_EPS)


def capillary_pressure(s_e, p_t, theta, dse_dsw=1.0):
    """Brooks-Corey p_cow = p_t * S_e^(-1/theta) and its S_w derivative.

    ``dse_dsw`` is 1/(1 - S_wr - S_or), the chain-rule factor from the
    saturation normalization. ``p_t = 0`` disables capillarity.
    """
    s_e = np.asarray(s_e, dtype=float)
    if p_t == 0.0:
        z = np.zeros_like(s_e)
        return z, z.copy()
    pc = p_t * s_e ** (-1.0 / theta)
    dpc_dsw = -(p_t / theta) * s_e ** (-1.0 / theta - 1.0) * dse_dsw
    return pc, dpc_dsw


def relative_permeabilities(s_e, params, k_ro0=None, n_o=None):
    """Relative permeabilities of the configured family.

    ``k_ro0`` / ``n_o`` override the static parameters with the per-node
    values produced by the trapping-number chain.
    """
    s_e = np.asarray(s_e, dtype=float)
    fam = params.family
    if fam == "modified-bc":
        kro0 = params.k_ro0 if k_ro0 is None else k_ro0
        no = params.n_o if n_o is None else n_o
        k_rw = params.k_rw0 * s_e**params.n_w
        k_ro = kro0 * (1.0 - s_e) ** no
    elif fam == "power":
        k_rw = s_e**params.omega
        k_ro = (1.0 - s_e) ** params.omega
    elif fam == "classic-bc":
        th = params.theta
        k_rw = s_e ** ((2.0 + 3.0 * th) / th)
        k_ro = (1.0 - s_e) ** 2 * (1.0 - s_e ** ((2.0 + th) / th))
    else:  # pragma: no cover - guarded in BrooksCoreyParams
        raise ConfigError(f"unknown relperm family {fam!r}")
    return k_rw, k_ro


def mobilities(k_rw, k_ro, mu_w, mu_o):
    """Phase/total mobilities and fractional flows (f_w + f_o = 1 exactly)."""
    if mu_w <= 0.0 or mu_o <= 0.0:
        raise ConfigError("viscosities must be positive")
    lam_w = np.asarray(k_rw, dtype=float) / mu_w
    lam_o = np.asarray(k_ro, dtype=float) / mu_o
    lam = lam_w + lam_o
    if np.any(lam <= 0.0):
        raise DegenerateMobilityError("total mobility vanished")
    f_w = lam_w / lam
    f_o = 1.0 - f_w
    return lam_w, lam_o, lam, f_w, f_o


def porosity_update(phi0, sigma):
    """Porosity reduced by the sessile volume fraction, floored at 0.01*phi0."""
    sigma = np.asarray(sigma, dtype=float)
    floor = 0.01 * phi0
    phi = phi0 - sigma
    if np.any(phi < floor):
        warnings.warn("sessile fraction reached the porosity floor (plugging)",
                      PluggingWarning, stacklevel=2)
        phi = np.maximum(phi, floor)
    return phi


def kozeny_carman(phi, k0, phi0):
    """Permeability from porosity; equals k0 at phi0 and increases with phi."""
    phi = np.asarray(phi, dtype=float)
    return k0 * ((1.0 - phi0) ** 2 / phi0**3) * (phi**3 / (1.0 - phi) ** 2)
