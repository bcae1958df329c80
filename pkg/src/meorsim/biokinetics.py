"""Biological and interfacial closures.

Monod growth, surfactant production, the interfacial-tension fit, the
trapping number, and the chain that turns surfactant concentration into
updated residual oil saturation and oil relperm endpoint/exponent:

    c_surf -> sigma_ow -> N_To -> S_or -> (k_ro0, n_o)

Interfacial tension is handled in N/m internally; mN/m only at I/O.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InvalidStateError


@dataclass(frozen=True)
class KineticParams:
    """Rates (1/s), half-saturation constants and yields of the microbial model."""

    g_max: float = 0.0        # maximal Monod growth rate
    k_mn: float = 1.0         # Monod constant for nutrients, kg/m^3
    d_m: float = 0.0          # death rate
    k_c1: float = 0.0         # reversible clogging (attachment) rate
    k_c2: float = 0.0         # irreversible clogging rate
    k_d: float = 0.0          # declogging (detachment) rate
    m_n: float = 0.0          # maintenance consumption coefficient, used as 1/s
    y_mn: float = 1.0         # yield of cells per nutrient
    y_surf_m: float = 1.0     # yield of surfactant per cells
    y_surf_n: float = 1.0     # yield of surfactant per nutrient
    mu_surf_max: float = 0.0  # maximal surfactant formation rate
    k_surf_n: float = 1.0     # saturation constant of surfactant formation
    c_n_crit: float = 0.0     # nutrient threshold below which no surfactant forms
    rho_m: float = 1000.0     # microbial density, kg/m^3

    def __post_init__(self):
        for name in ("g_max", "k_mn", "d_m", "k_c1", "k_c2", "k_d", "m_n",
                     "mu_surf_max", "k_surf_n", "c_n_crit", "rho_m"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"KineticParams.{name} must be non-negative")
        for name in ("y_mn", "y_surf_m", "y_surf_n"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"KineticParams.{name} must be positive")


@dataclass(frozen=True)
class TrappingParams:
    """Endpoints of the trapping-number interpolation and the IFT fit constant.

    ``n_to_low``/``n_to_high`` bound the active range of the chain; they are
    calibration inputs, not measurements.
    """

    c_crit: float             # kg/m^3, sets sigma_ow at zero surfactant
    s_or_low: float
    s_or_high: float
    n_to_low: float
    n_to_high: float
    k_ro0_low: float
    k_ro0_high: float
    n_o_low: float
    n_o_high: float
    theta_ow: float = 0.0     # contact angle, rad
    include_bond: bool = False

    def __post_init__(self):
        if not self.s_or_high < self.s_or_low:
            raise ConfigError("need s_or_high < s_or_low")
        if not 0.0 < self.n_to_low < self.n_to_high:
            raise ConfigError("need 0 < n_to_low < n_to_high")
        if not 0.0 <= self.theta_ow < math.pi / 2.0:
            raise ConfigError("contact angle must lie in [0, pi/2)")
        if self.c_crit <= 0.0:
            raise ConfigError("c_crit must be positive")


def monod_growth(c_n, g_max, k_mn):
    """Monod growth rate g_max * c_n / (k_mn + c_n), zero for c_n <= 0."""
    c_n = np.maximum(np.asarray(c_n, dtype=float), 0.0)
    denom = k_mn + c_n
    return np.where(denom > 0.0, g_max * c_n / np.where(denom > 0.0, denom, 1.0), 0.0)


def surfactant_rate(c_n, c_m, sigma, phi, s_w, params):
    """Surfactant production rate per bulk volume, kg/(m^3 s).

    Proportional to the total biomass (planktonic + sessile) and switched
    off below the critical nutrient concentration.
    """
    c_n = np.asarray(c_n, dtype=float)
    excess = c_n - params.c_n_crit
    denom = params.k_surf_n + excess
    factor = np.where((excess > 0.0) & (denom > 0.0),
                      excess / np.where(denom > 0.0, denom, 1.0), 0.0)
    biomass = phi * s_w * np.maximum(c_m, 0.0) + np.maximum(sigma, 0.0) * params.rho_m
    return params.mu_surf_max * factor * biomass


def interfacial_tension(c_surf, c_crit):
    """Oil-water interfacial tension in N/m from the laboratory fit curve."""
    c_surf = np.maximum(np.asarray(c_surf, dtype=float), 0.0)
    return 1.0e-3 * np.sqrt(10.0 / (c_surf + c_crit))


def trapping_number(u_w_in, mu_w, sigma_ow, theta_ow,
                    include_bond=False, delta_rho=0.0, gravity=9.81,
                    k=0.0, k_rw=0.0):
    """Oil-phase trapping number.

    Defaults to the capillary number u_w_in * mu_w / (sigma_ow cos theta_ow);
    vertical flow makes the Bond-number extension |N_CA + N_B|. The velocity
    is the injection velocity, not the local one, to avoid instabilities.
    """
    sigma_ow = np.asarray(sigma_ow, dtype=float)
    if np.any(sigma_ow <= 0.0):
        raise InvalidStateError("interfacial tension must be positive")
    denom = sigma_ow * math.cos(theta_ow)
    n_ca = u_w_in * mu_w / denom
    if not include_bond:
        return n_ca
    n_b = delta_rho * gravity * k * k_rw / denom
    return np.abs(n_ca + n_b)


def residual_oil_update(n_to, params):
    """Residual oil saturation interpolated linearly in the trapping number."""
    frac = (np.asarray(n_to, dtype=float) - params.n_to_low) \
        / (params.n_to_high - params.n_to_low)
    frac = np.clip(frac, 0.0, 1.0)
    return params.s_or_low - (params.s_or_low - params.s_or_high) * frac


def relperm_endpoint_update(s_or, params):
    """Oil relperm endpoint and exponent blended linearly along S_or."""
    frac = (params.s_or_low - np.asarray(s_or, dtype=float)) \
        / (params.s_or_low - params.s_or_high)
    frac = np.clip(frac, 0.0, 1.0)
    k_ro0 = params.k_ro0_low + frac * (params.k_ro0_high - params.k_ro0_low)
    n_o = params.n_o_low + frac * (params.n_o_high - params.n_o_low)
    return k_ro0, n_o


def surfactant_chain(c_surf, u_w_in, mu_w, params,
                     delta_rho=0.0, gravity=9.81, k=0.0, k_rw=0.0):
    """Full surfactant feedback chain; returns (sigma_ow, N_To, S_or, k_ro0, n_o)."""
    sigma_ow = interfacial_tension(c_surf, params.c_crit)
    n_to = trapping_number(u_w_in, mu_w, sigma_ow, params.theta_ow,
                           include_bond=params.include_bond,
                           delta_rho=delta_rho, gravity=gravity, k=k, k_rw=k_rw)
    s_or = residual_oil_update(n_to, params)
    k_ro0, n_o = relperm_endpoint_update(s_or, params)
    return sigma_ow, n_to, s_or, k_ro0, n_o
