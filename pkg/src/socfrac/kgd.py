"""Plane-strain (KGD-type) hydraulic fracture asymptotics for a constant injection rate.

Inputs must come in one coherent unit system; nothing is converted here.
"""
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class KgdParams:
    G: float        # shear modulus
    Q: float        # injection rate
    mu: float       # fluid viscosity
    nu: float = 0.0  # Poisson ratio
    S: float = 0.0  # in-situ stress added to the mouth pressure

    def __post_init__(self):
        if not (self.G > 0 and self.Q > 0 and self.mu > 0):
            raise ValueError("G, Q and mu must be positive")
        if not 0 <= self.nu < 0.5:
            raise ValueError("Poisson ratio must lie in [0, 0.5)")


def kgd_length(t, p):
    """Crack length L = 0.65 (G Q^3 / (mu (1 - nu)))^(1/6) t^(2/3)."""
    t = np.asarray(t, float)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    return 0.65 * (p.G * p.Q ** 3 / (p.mu * (1 - p.nu))) ** (1 / 6) * t ** (2 / 3)


def kgd_cmod(t, p):
    """Mouth opening CMOD = 2.14 (mu (1 - nu) Q^3 / G)^(1/6) t^(1/3)."""
    t = np.asarray(t, float)
    if np.any(t < 0):
        raise ValueError("time must be non-negative")
    return 2.14 * (p.mu * (1 - p.nu) * p.Q ** 3 / p.G) ** (1 / 6) * t ** (1 / 3)


def kgd_pcm(L, p):
    """Mouth pressure p_cm = 1.97 (G^3 Q mu / ((1 - nu)^3 L^2))^(1/4) + S."""
    L = np.asarray(L, float)
    if np.any(L <= 0):
        raise ValueError("crack length must be positive")
    return 1.97 * (p.G ** 3 * p.Q * p.mu / ((1 - p.nu) ** 3 * L ** 2)) ** 0.25 + p.S


def kgd_table(times, p):
    """Rows (t, L, CMOD, p_cm); p_cm is NaN where L = 0."""
    t = np.asarray(times, float)
    L = kgd_length(t, p)
    pcm = np.full(t.shape, np.nan)
    pos = L > 0
    pcm[pos] = kgd_pcm(L[pos], p)
    return np.column_stack([t, L, kgd_cmod(t, p), pcm])
