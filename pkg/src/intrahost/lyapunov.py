"""Lyapunov certificates for clearance and for the endemic/exclusion outcome.

Three candidate functions are provided, each with a value, gradient and a
closed-form derivative along the flow:

* :class:`ClearanceLyapunov` -- ``x - x* - x* ln(x/x*) + sum_i V_DFE(z_i)``,
  nonincreasing when every strain has T0 <= 1.
* :class:`EndemicLyapunov` -- Volterra-type function centred at one strain's
  endemic equilibrium, weights taken from a :class:`LyapunovCertificate`.
* :class:`MultistrainLyapunov` -- ``T0^w V_EE + a sum_{j != w} V_DFE(z_j)``
  for the strain ``w`` with the strictly largest threshold.

Values are normalised so that each function is zero at its reference
equilibrium.  Vectorised evaluation (``values``) returns NaN outside the
domain instead of raising.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .equilibria import endemic_equilibrium
from .errors import DimensionMismatch, DomainError, NoEndemicEquilibrium, NotGeneric, UnsupportedRecruitment
from .model import ConstantRecruitment, ModelSpec, StrainParams, as_vector, _rhs
from .threshold import (ThresholdReport, build_A0, neg_A0_solve, neg_A0T_solve, t0,
                        threshold_report)


@dataclass(frozen=True, eq=False)
class LyapunovCertificate:
    strain_index: int
    a: float
    b: np.ndarray  # length k+1, b[-1] == 1
    xbar: float
    zbar: np.ndarray


def _chain_coefficients(strain: StrainParams) -> np.ndarray:
    """b with b_{k+1} = 1, b_k alpha_k = r gamma_k, b_j alpha_j = gamma_j b_{j+1}."""
    k = strain.k
    b = np.empty(k + 1)
    b[k] = 1.0
    b[k - 1] = strain.r * strain.gammas[-1] / strain.alphas[-1]
    for j in range(k - 2, -1, -1):
        b[j] = strain.gammas[j] * b[j + 1] / strain.alphas[j]
    return b


def certificate(spec: ModelSpec, i: int) -> LyapunovCertificate:
    ee = endemic_equilibrium(spec, i)
    strain = spec.strains[i]
    if ee is None:
        raise NoEndemicEquilibrium(i, t0(strain, spec.xstar, spec.u))
    a = strain.mu_m / (strain.beta * ee.xbar)
    b = _chain_coefficients(strain)
    b.setflags(write=False)
    return LyapunovCertificate(strain_index=i, a=float(a), b=b, xbar=ee.xbar, zbar=ee.zbar)


def certificate_residuals(spec: ModelSpec, cert: LyapunovCertificate) -> dict[str, float]:
    """Relative residuals of the kernel and chain relations the weights must satisfy."""
    strain = spec.strains[cert.strain_index]
    a, b, u = cert.a, cert.b, spec.u
    k = spec.k
    A0 = build_A0(strain)

    kern1 = abs((b[0] - u * b[-1]) - a) / max(1.0, abs(a), abs(b[0]))

    ew = np.zeros(k + 1)
    ew[-1] = 1.0
    lin = A0.T @ b + a * strain.beta * cert.xbar * ew
    kern2_linear = float(np.abs(lin).max() / np.abs(b).max())
    explicit = a * strain.beta * cert.xbar * neg_A0T_solve(A0, ew)
    kern2 = float(np.max(np.abs(b - explicit) / np.abs(b)))

    rel = [abs(a + u - b[0]) / max(1.0, abs(a) + u, abs(b[0]))]
    for j in range(k - 1):
        lhs, rhs = b[j] * strain.alphas[j], strain.gammas[j] * b[j + 1]
        rel.append(abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs)))
    lhs, rhs = b[k - 1] * strain.alphas[-1], strain.r * strain.gammas[-1]
    rel.append(abs(lhs - rhs) / max(1.0, abs(lhs), abs(rhs)))
    return {"kern1": float(kern1), "kern2": kern2, "kern2_linear": kern2_linear,
            "coef1": float(max(rel))}


def v_dfe_component(strain: StrainParams, xstar: float, z) -> float:
    """beta x* <e_omega, (-A0)^{-1} z> via one forward substitution."""
    z = np.asarray(z, dtype=float)
    if z.shape != (strain.k + 1,):
        raise DimensionMismatch(f"z must have length {strain.k + 1}, got shape {z.shape}")
    return float(strain.beta * xstar * neg_A0_solve(build_A0(strain), z)[-1])


def _relative_entropy(s, sbar):
    """s - sbar - sbar ln(s/sbar): nonnegative, zero only at s = sbar."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return s - sbar - sbar * np.log(s / sbar)


def _dfe_weights(spec: ModelSpec, xstar: float) -> np.ndarray:
    """Row i holds beta_i x* (-A_i)^{-T} e_omega, the gradient of V_DFE(z_i)."""
    out = np.empty((spec.n, spec.k + 1))
    ew = np.zeros(spec.k + 1)
    ew[-1] = 1.0
    for i, s in enumerate(spec.strains):
        out[i] = s.beta * xstar * neg_A0T_solve(build_A0(s), ew)
    return out


class LyapunovFunction:
    name = "V"

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self._zidx = np.array([spec.z_indices(i) for i in range(spec.n)])

    def values(self, states) -> np.ndarray:
        raise NotImplementedError

    def value(self, state) -> float:
        v = as_vector(state, self.spec)
        out = float(self.values(v[None, :])[0])
        if not np.isfinite(out):
            raise DomainError(f"{self.name} is undefined at this state")
        return out

    def gradient(self, state) -> np.ndarray:
        raise NotImplementedError

    def vdot(self, state) -> float:
        raise NotImplementedError


class ClearanceLyapunov(LyapunovFunction):
    name = "V_clearance"

    def __init__(self, spec: ModelSpec, report: ThresholdReport | None = None):
        super().__init__(spec)
        self.report = report or threshold_report(spec)
        self.xstar = self.report.xstar
        self.weights = _dfe_weights(spec, self.xstar)

    def values(self, states) -> np.ndarray:
        S = np.atleast_2d(np.asarray(states, dtype=float))
        x = S[:, 0]
        out = np.where(x > 0, _relative_entropy(np.where(x > 0, x, 1.0), self.xstar), np.nan)
        Z = S[:, self._zidx]  # (T, n, k+1)
        return out + np.einsum("tij,ij->t", Z, self.weights)

    def gradient(self, state) -> np.ndarray:
        v = as_vector(state, self.spec)
        if not v[0] > 0:
            raise DomainError("clearance Lyapunov function needs x > 0")
        grad = np.zeros_like(v)
        grad[0] = 1.0 - self.xstar / v[0]
        grad[self._zidx] = self.weights
        return grad

    def vdot(self, state) -> float:
        v = as_vector(state, self.spec)
        x = v[0]
        if not x > 0:
            raise DomainError("clearance Lyapunov function needs x > 0")
        p = self.spec.arrays
        m = v[self._zidx[:, -1]]
        phi = self.spec.recruitment.phi(x)
        return float((x - self.xstar) / x * phi + x * np.sum(p.beta * m * (self.report.t0s - 1.0)))


class EndemicLyapunov(LyapunovFunction):
    name = "V_endemic"

    def __init__(self, spec: ModelSpec, cert: LyapunovCertificate):
        super().__init__(spec)
        self.cert = cert
        self.i = cert.strain_index
        self.strain = spec.strains[self.i]
        self.idx = self._zidx[self.i]
        self.others = [j for j in range(spec.n) if j != self.i]

    def values(self, states) -> np.ndarray:
        S = np.atleast_2d(np.asarray(states, dtype=float))
        c = self.cert
        x = S[:, 0]
        Z = S[:, self.idx]
        ok = (x > 0) & np.all(Z > 0, axis=1)
        x = np.where(ok, x, 1.0)
        Z = np.where(ok[:, None], Z, 1.0)
        val = c.a * _relative_entropy(x, c.xbar) + _relative_entropy(Z, c.zbar) @ c.b
        return np.where(ok, val, np.nan)

    def _check_domain(self, v):
        if not (v[0] > 0 and np.all(v[self.idx] > 0)):
            raise DomainError(f"{self.name} needs x > 0 and strain {self.i + 1} components > 0")

    def gradient(self, state) -> np.ndarray:
        v = as_vector(state, self.spec)
        self._check_domain(v)
        c = self.cert
        grad = np.zeros_like(v)
        grad[0] = c.a * (1.0 - c.xbar / v[0])
        grad[self.idx] = c.b * (1.0 - c.zbar / v[self.idx])
        return grad

    def _cycle_bracket(self, X: float, rho: np.ndarray) -> float:
        """k + X - X rho_m/rho_1 - sum rho_{j-1}/rho_j - rho_k/rho_m."""
        k = self.spec.k
        out = k + X - X * rho[-1] / rho[0] - rho[k - 1] / rho[-1]
        if k > 1:
            out -= np.sum(rho[:k - 1] / rho[1:k])
        return float(out)

    def vdot_single(self, v: np.ndarray) -> float:
        """Derivative driven by this strain's own dynamics (other strains absent)."""
        c = self.cert
        f = self.spec.recruitment.f
        x, xbar = v[0], c.xbar
        fx, fxb = f(x), f(xbar)
        rho = v[self.idx] / c.zbar
        head = c.a * (fx + fxb - fxb * x / xbar - fx * xbar / x)
        release = self.strain.r * self.strain.gammas[-1] * c.zbar[self.spec.k - 1]
        return float(head + release * self._cycle_bracket(x / xbar, rho))

    def vdot(self, state) -> float:
        v = as_vector(state, self.spec)
        self._check_domain(v)
        p = self.spec.arrays
        pressure = sum(p.beta[j] * v[self._zidx[j, -1]] for j in self.others)
        return self.vdot_single(v) - self.cert.a * (v[0] - self.cert.xbar) * pressure


class MultistrainLyapunov(LyapunovFunction):
    name = "V_multistrain"

    def __init__(self, spec: ModelSpec, cert: LyapunovCertificate,
                 report: ThresholdReport | None = None):
        super().__init__(spec)
        self.report = report or threshold_report(spec)
        if not self.report.generic:
            raise NotGeneric("largest T0 is tied; no strict winner to centre on")
        top = int(np.argmax(self.report.t0s))
        if cert.strain_index != top:
            raise ValueError(f"certificate is for strain {cert.strain_index + 1}, "
                             f"but strain {top + 1} has the largest T0")
        self.cert = cert
        self.i = top
        self.T = float(self.report.t0s[top])
        self.endemic = EndemicLyapunov(spec, cert)
        self.weights = _dfe_weights(spec, self.report.xstar)
        self.others = self.endemic.others

    def values(self, states) -> np.ndarray:
        S = np.atleast_2d(np.asarray(states, dtype=float))
        val = self.T * self.endemic.values(S)
        for j in self.others:
            val = val + self.cert.a * S[:, self._zidx[j]] @ self.weights[j]
        return val

    def gradient(self, state) -> np.ndarray:
        v = as_vector(state, self.spec)
        grad = self.T * self.endemic.gradient(v)
        for j in self.others:
            grad[self._zidx[j]] += self.cert.a * self.weights[j]
        return grad

    def vdot(self, state) -> float:
        v = as_vector(state, self.spec)
        self.endemic._check_domain(v)
        p = self.spec.arrays
        x = v[0]
        rest = sum(p.beta[j] * v[self._zidx[j, -1]] * x * (self.report.t0s[j] - self.T)
                   for j in self.others)
        return float(self.T * self.endemic.vdot_single(v) + self.cert.a * rest)


# -- spec-level entry points -------------------------------------------------


def v_clearance(spec: ModelSpec, state) -> float:
    return ClearanceLyapunov(spec).value(state)


def v_endemic(spec: ModelSpec, i: int, cert: LyapunovCertificate, state) -> float:
    if cert.strain_index != i:
        raise ValueError("certificate belongs to a different strain")
    return EndemicLyapunov(spec, cert).value(state)


def v_multistrain(spec: ModelSpec, cert: LyapunovCertificate, state) -> float:
    return MultistrainLyapunov(spec, cert).value(state)


def vdot_analytic(V: LyapunovFunction, state) -> float:
    return V.vdot(state)


def vdot_chain_rule(V: LyapunovFunction, state) -> float:
    v = as_vector(state, V.spec)
    return float(V.gradient(v) @ _rhs(V.spec, v))


def phi_dotvee(spec: ModelSpec, i: int, cert: LyapunovCertificate, state) -> float:
    """Endemic-V derivative in its AM-GM form, constant recruitment only.

    With f' = 0 the mean-value term drops out and the derivative splits into a
    nonpositive quadratic in x and a nonpositive AM-GM bracket in the ratios.
    """
    rec = spec.recruitment
    if not isinstance(rec, ConstantRecruitment):
        raise UnsupportedRecruitment("the AM-GM form needs constant recruitment (f' = 0)")
    v = as_vector(state, spec)
    idx = spec.z_indices(i)
    if not (v[0] > 0 and np.all(v[idx] > 0)):
        raise DomainError(f"need x > 0 and strain {i + 1} components > 0")
    strain = spec.strains[i]
    k = spec.k
    x, xbar = v[0], cert.xbar
    rho = v[idx] / cert.zbar
    X = x / xbar
    quad = -(cert.b[0] * rec.mu_x * xbar - spec.u * rec.lam) * (x - xbar) ** 2 / (x * xbar)
    bracket = k + 2 - 1.0 / X - X * rho[-1] / rho[0] - rho[k - 1] / rho[-1]
    if k > 1:
        bracket -= np.sum(rho[:k - 1] / rho[1:k])
    return float(quad + strain.r * strain.gammas[-1] * cert.zbar[k - 1] * bracket)


# -- decrease along sampled trajectories -------------------------------------


@dataclass(frozen=True, eq=False)
class DecreaseReport:
    function: str
    max_increase: float
    tolerance: float
    passed: bool
    values: np.ndarray
    times: np.ndarray
    evaluated: int  # samples inside the function's domain


def verify_decrease(V: LyapunovFunction, trajectory, rel_tol: float = 1e-8) -> DecreaseReport:
    """Largest forward difference of V over consecutive in-domain samples.

    Passes when it does not exceed ``rel_tol * (1 + max|V|)``; samples where V
    is undefined (e.g. a start on a boundary face) are skipped.
    """
    vals = V.values(trajectory.states)
    mask = np.isfinite(vals)
    good = vals[mask]
    if good.size < 2:
        max_inc = 0.0
    else:
        max_inc = float(max(np.max(np.diff(good)), 0.0))
    scale = float(np.max(np.abs(good))) if good.size else 0.0
    tol = rel_tol * (1.0 + scale)
    return DecreaseReport(function=V.name, max_increase=max_inc, tolerance=tol,
                          passed=max_inc <= tol, values=vals, times=np.asarray(trajectory.times),
                          evaluated=int(mask.sum()))
