"""Disease-free and single-strain endemic equilibria in closed form."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, SystemState, unpack, _rhs
from .threshold import build_A0, neg_A0_solve, t0


@dataclass(frozen=True, eq=False)
class EndemicEquilibrium:
    strain_index: int
    xbar: float
    zbar: np.ndarray  # (ybar_1 .. ybar_k, mbar)
    gbar: float
    residual_norm: float
    residual_scale: float
    t0: float

    @property
    def ybar(self) -> np.ndarray:
        return self.zbar[:-1]

    @property
    def mbar(self) -> float:
        return float(self.zbar[-1])

    def vector(self, spec: ModelSpec) -> np.ndarray:
        """Flat state with every other strain at zero."""
        v = np.zeros(spec.dim)
        v[0] = self.xbar
        v[spec.z_indices(self.strain_index)] = self.zbar
        v[spec.g_index(self.strain_index)] = self.gbar
        return v

    def state(self, spec: ModelSpec) -> SystemState:
        return unpack(self.vector(spec), spec)


def dfe_vector(spec: ModelSpec) -> np.ndarray:
    v = np.zeros(spec.dim)
    v[0] = spec.xstar
    return v


def dfe(spec: ModelSpec) -> SystemState:
    return unpack(dfe_vector(spec), spec)


def flux_scale(spec: ModelSpec, v: np.ndarray) -> float:
    """Largest individual flux entering the right-hand side at v.

    Cancellation in the residual is bounded by rounding relative to this.
    """
    p = spec.arrays
    k = spec.k
    x = v[0]
    blocks = v[1:].reshape(spec.n, k + 2)
    Y, g, m = blocks[:, :k], blocks[:, k], blocks[:, k + 1]
    rec = spec.recruitment
    terms = [abs(rec.f(x)), rec.mu_x * abs(x), np.abs(p.beta * x * m).max(initial=0.0),
             np.abs(p.alp * Y).max(initial=0.0), np.abs(p.gam * Y).max(initial=0.0),
             np.abs(p.r * p.gam[:, -1] * Y[:, -1]).max(initial=0.0),
             np.abs(p.mu_m * m).max(initial=0.0)]
    if spec.include_gametocytes:
        terms += [np.abs(p.delta * Y[:, -1]).max(initial=0.0), np.abs(p.mu_g * g).max(initial=0.0)]
    return float(max(terms))


def endemic_equilibrium(spec: ModelSpec, i: int) -> EndemicEquilibrium | None:
    """Closed-form equilibrium where only strain i persists; None when T0^i <= 1."""
    strain = spec.strains[i]
    xstar = spec.xstar
    t = t0(strain, xstar, spec.u)
    if not t > 1:
        return None
    xbar = strain.mu_m / (strain.beta * (strain.burst_factor() - spec.u))
    A0 = build_A0(strain)
    rhs = np.zeros(spec.k + 1)
    rhs[0] = 1.0
    rhs[-1] = -spec.u
    zbar = spec.recruitment.phi(xbar) * neg_A0_solve(A0, rhs)
    gbar = strain.delta / strain.mu_g * zbar[spec.k - 1] if spec.include_gametocytes else 0.0

    v = np.zeros(spec.dim)
    v[0] = xbar
    v[spec.z_indices(i)] = zbar
    v[spec.g_index(i)] = gbar
    residual = float(np.abs(_rhs(spec, v)).max())
    zbar.setflags(write=False)
    return EndemicEquilibrium(strain_index=i, xbar=float(xbar), zbar=zbar, gbar=float(gbar),
                              residual_norm=residual, residual_scale=flux_scale(spec, v), t0=t)


def all_endemic_equilibria(spec: ModelSpec) -> list[EndemicEquilibrium | None]:
    return [endemic_equilibrium(spec, i) for i in range(spec.n)]
