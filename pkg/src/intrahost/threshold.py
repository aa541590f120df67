"""Stage matrix, basic reproduction number R0 and the threshold T0.

All actions of ``(-A0)^{-1}`` go through bidiagonal substitution: ``A0`` is
lower bidiagonal with a strictly negative diagonal, so ``-A0`` is an
M-matrix and its inverse is entrywise nonnegative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, SingularMatrix
from .model import ModelSpec, RecruitmentModel, StrainParams, ConstantRecruitment, solve_xstar

__all__ = [
    "build_A0", "solve_xstar", "neg_A0_solve", "neg_A0T_solve", "r0_closed_form",
    "r0_next_generation", "t0", "t0_closed_form", "alpha_star", "ThresholdReport",
    "threshold_report", "GENERIC_RTOL",
]

GENERIC_RTOL = 1e-9
GRID_POINTS = 4096


def build_A0(strain: StrainParams, k: int | None = None) -> np.ndarray:
    """(k+1)x(k+1) stage matrix acting on z = (y_1, .., y_k, m)."""
    k = strain.k if k is None else k
    if k != strain.k:
        raise DimensionMismatch(f"strain has {strain.k} stages, asked for k={k}")
    A = np.zeros((k + 1, k + 1))
    A[np.arange(k), np.arange(k)] = -strain.alphas
    A[k, k] = -strain.mu_m
    A[np.arange(1, k), np.arange(k - 1)] = strain.gammas[:-1]
    A[k, k - 1] = strain.r * strain.gammas[-1]
    return A


def _check_bidiagonal_system(A: np.ndarray, v) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    v = np.asarray(v, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or v.shape != (A.shape[0],):
        raise DimensionMismatch(f"matrix of shape {A.shape} cannot act on vector of shape {v.shape}")
    diag = -np.diag(A)
    if np.any(diag == 0) or not np.all(np.isfinite(diag)):
        raise SingularMatrix("stage matrix has a zero diagonal entry")
    sub = np.diag(A, -1)
    return v, diag, sub


def neg_A0_solve(A0: np.ndarray, v) -> np.ndarray:
    """Solve (-A0) w = v by forward substitution."""
    v, diag, sub = _check_bidiagonal_system(A0, v)
    w = np.empty_like(v)
    w[0] = v[0] / diag[0]
    for j in range(1, v.size):
        w[j] = (v[j] + sub[j - 1] * w[j - 1]) / diag[j]
    return w


def neg_A0T_solve(A0: np.ndarray, v) -> np.ndarray:
    """Solve (-A0)^T w = v by back substitution."""
    v, diag, sub = _check_bidiagonal_system(A0, v)
    w = np.empty_like(v)
    w[-1] = v[-1] / diag[-1]
    for j in range(v.size - 2, -1, -1):
        w[j] = (v[j] + sub[j] * w[j + 1]) / diag[j]
    return w


def r0_closed_form(strain: StrainParams, xstar: float, u: float) -> float:
    bx = strain.beta * xstar
    return float(strain.r * bx / (strain.mu_m + u * bx) * np.prod(strain.gammas / strain.alphas))


def r0_next_generation(strain: StrainParams, xstar: float, u: float, method: str = "direct") -> float:
    """beta x* <-(A*)^{-1} e_1, e_omega> with A* = A0 - u beta x* e_omega e_omega^T.

    ``method="direct"`` forms A* and solves it; ``method="smw"`` applies the
    Sherman-Morrison-Woodbury update to solves with A0 only.
    """
    A0 = build_A0(strain)
    size = A0.shape[0]
    e1 = np.zeros(size)
    e1[0] = 1.0
    c = u * strain.beta * xstar
    if method == "direct":
        A_star = A0.copy()
        A_star[-1, -1] -= c
        w = neg_A0_solve(A_star, e1)
        return float(strain.beta * xstar * w[-1])
    if method == "smw":
        ew = np.zeros(size)
        ew[-1] = 1.0
        p = neg_A0_solve(A0, e1)
        q = neg_A0_solve(A0, ew)
        denom = 1.0 + c * q[-1]
        w = p - (c / denom) * q * p[-1]
        return float(strain.beta * xstar * w[-1])
    raise ValueError(f"unknown method {method!r}")


def t0(strain: StrainParams, xstar: float, u: float) -> float:
    """beta x* <(-A0)^{-1}(e_1 - u e_omega), e_omega>; may be <= 0."""
    A0 = build_A0(strain)
    v = np.zeros(A0.shape[0])
    v[0] = 1.0
    v[-1] = -u
    return float(strain.beta * xstar * neg_A0_solve(A0, v)[-1])


def t0_closed_form(strain: StrainParams, xstar: float, u: float) -> float:
    return float(strain.beta * xstar * (strain.burst_factor() - u) / strain.mu_m)


def _golden_max(fun, lo: float, hi: float, tol: float = 1e-12, maxiter: int = 200) -> float:
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(maxiter):
        if b - a <= tol * max(1.0, abs(a) + abs(b)):
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return max(fc, fd)


def alpha_star(recruitment: RecruitmentModel, xstar: float | None = None) -> float:
    """-max of phi' over [0, x*]."""
    if isinstance(recruitment, ConstantRecruitment):
        return float(recruitment.mu_x)
    if xstar is None:
        xstar = solve_xstar(recruitment)
    grid = np.linspace(0.0, xstar, GRID_POINTS)
    vals = np.asarray(recruitment.dphi(grid), dtype=float)
    j = int(np.argmax(vals))
    best = float(vals[j])
    lo = grid[max(j - 1, 0)]
    hi = grid[min(j + 1, grid.size - 1)]
    refined = _golden_max(lambda s: float(recruitment.dphi(s)), lo, hi)
    return -max(best, refined)


@dataclass(frozen=True, eq=False)
class ThresholdReport:
    xstar: float
    r0s: np.ndarray
    t0s: np.ndarray
    r0: float
    winner: int | None  # 0-based strain index
    generic: bool
    alpha_star: float

    @property
    def n(self) -> int:
        return int(self.r0s.size)

    def xbar(self, i: int) -> float | None:
        """x*/T0 for strains with T0 > 0, else None."""
        t = self.t0s[i]
        return float(self.xstar / t) if t > 0 else None

    def ranking(self) -> list[int]:
        """Strain indices by decreasing T0 (stable for ties)."""
        return sorted(range(self.n), key=lambda i: -self.t0s[i])


def top_t0_is_unique(t0s, rtol: float = GENERIC_RTOL) -> bool:
    t = np.sort(np.asarray(t0s, dtype=float))[::-1]
    if t.size < 2:
        return True
    return bool(t[0] - t[1] > rtol * max(abs(t[0]), abs(t[1])))


def threshold_report(spec: ModelSpec, xstar: float | None = None) -> ThresholdReport:
    xstar = spec.xstar if xstar is None else xstar
    r0s = np.array([r0_closed_form(s, xstar, spec.u) for s in spec.strains])
    t0s = np.array([t0(s, xstar, spec.u) for s in spec.strains])
    r0 = float(r0s.max())
    generic = top_t0_is_unique(t0s)
    winner = int(np.argmax(t0s)) if (r0 > 1 and generic) else None
    for a in (r0s, t0s):
        a.setflags(write=False)
    return ThresholdReport(xstar=float(xstar), r0s=r0s, t0s=t0s, r0=r0, winner=winner,
                           generic=generic, alpha_star=alpha_star(spec.recruitment, xstar))
