"""Parameter and state types for the k-stage, n-strain within-host model.

State layout (flat vector, length ``1 + n*(k+2)``)::

    [x, y_{1,1} .. y_{k,1}, g_1, m_1, y_{1,2}, .., g_2, m_2, .., m_n]

``x`` is the uninfected red-cell concentration, ``y_{j,i}`` the parasitized
cells of strain ``i`` in age class ``j``, ``g_i`` gametocytes and ``m_i`` free
merozoites.  Strain indices are 0-based throughout the Python API.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple, Sequence, Union

import numpy as np

from .errors import (
    DimensionMismatch,
    HomeostasisViolation,
    IntrahostError,
    NonPositiveParameter,
    NonUniqueRoot,
    NoRootInBracket,
)

SIGN_SAMPLES = 4096


# ---------------------------------------------------------------------------
# Recruitment of uninfected red cells
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConstantRecruitment:
    """f(x) = lam, phi(x) = lam - mu_x * x."""

    lam: float
    mu_x: float

    def f(self, x):
        return self.lam + 0.0 * x

    def df(self, x):
        return 0.0 * x

    def phi(self, x):
        return self.lam - self.mu_x * x

    def dphi(self, x):
        return -self.mu_x + 0.0 * x

    @property
    def logistic_s(self) -> float:
        return 0.0

    @property
    def logistic_K(self) -> float:
        return 1.0

    def parameter_violations(self) -> list[IntrahostError]:
        out: list[IntrahostError] = []
        if not (self.lam > 0):
            out.append(NonPositiveParameter(f"recruitment lambda must be > 0, got {self.lam}"))
        if not (self.mu_x > 0):
            out.append(NonPositiveParameter(f"recruitment mu_x must be > 0, got {self.mu_x}"))
        return out

    def root_guess(self) -> float:
        return self.lam / self.mu_x


@dataclass(frozen=True)
class LogisticRecruitment:
    """f(x) = lam + s*x*(1 - x/K), phi(x) = f(x) - mu_x * x."""

    lam: float
    s: float
    K: float
    mu_x: float

    def f(self, x):
        return self.lam + self.s * x * (1.0 - x / self.K)

    def df(self, x):
        return self.s * (1.0 - 2.0 * x / self.K)

    def phi(self, x):
        return self.f(x) - self.mu_x * x

    def dphi(self, x):
        return self.df(x) - self.mu_x

    @property
    def logistic_s(self) -> float:
        return self.s

    @property
    def logistic_K(self) -> float:
        return self.K

    def parameter_violations(self) -> list[IntrahostError]:
        out: list[IntrahostError] = []
        if not (self.lam >= 0):
            out.append(NonPositiveParameter(f"recruitment lambda must be >= 0, got {self.lam}"))
        if not (self.s >= 0):
            out.append(NonPositiveParameter(f"recruitment s must be >= 0, got {self.s}"))
        if not (self.K > 0):
            out.append(NonPositiveParameter(f"recruitment K must be > 0, got {self.K}"))
        if not (self.mu_x > 0):
            out.append(NonPositiveParameter(f"recruitment mu_x must be > 0, got {self.mu_x}"))
        return out

    def root_guess(self) -> float:
        if self.lam > 0:
            return self.lam / self.mu_x
        return self.K


RecruitmentModel = Union[ConstantRecruitment, LogisticRecruitment]


def solve_xstar(recruitment: RecruitmentModel) -> float:
    """Positive root of phi: bracket by doubling, bisect, then polish with Newton."""
    phi, dphi = recruitment.phi, recruitment.dphi
    lo = 0.0
    if not phi(lo) > 0:
        raise NoRootInBracket(f"phi(0) = {phi(lo)!r} is not positive")
    hi = recruitment.root_guess()
    if not (math.isfinite(hi) and hi > 0):
        hi = 1.0
    for _ in range(2100):
        if phi(hi) < 0:
            break
        if phi(hi) == 0:
            return float(hi)
        lo, hi = hi, 2.0 * hi
    else:
        raise NoRootInBracket("phi stays nonnegative on every bracket tried")

    while hi - lo > 1e-6 * hi:
        mid = 0.5 * (lo + hi)
        if phi(mid) > 0:
            lo = mid
        else:
            hi = mid

    x = 0.5 * (lo + hi)
    for _ in range(60):
        d = dphi(x)
        if d == 0:
            break
        step = phi(x) / d
        x_new = x - step
        if not lo <= x_new <= hi:
            break
        if x_new == x:
            break
        x = x_new
        if abs(step) <= 4 * np.finfo(float).eps * abs(x):
            # one more iteration to settle the last ulp
            x_last = x - phi(x) / dphi(x)
            if lo <= x_last <= hi and abs(phi(x_last)) < abs(phi(x)):
                x = x_last
            break

    scale = max(abs(recruitment.lam), recruitment.mu_x * x)
    if not abs(phi(x)) < 1e-12 * scale:
        raise NoRootInBracket(f"root refinement stalled at x={x!r}, phi={phi(x)!r}")
    return float(x)


# ---------------------------------------------------------------------------
# Strain and model parameters
# ---------------------------------------------------------------------------


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=float).reshape(-1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class StrainParams:
    """Rates for one parasite strain.

    ``gammas[j]`` is the transfer rate out of age class ``j`` (the last one
    feeds merozoite release), ``alphas[j]`` the total exit rate of class ``j``.
    """

    beta: float
    r: float
    gammas: np.ndarray
    alphas: np.ndarray
    mu_m: float
    delta: float = 0.0
    mu_g: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "gammas", _frozen_array(self.gammas))
        object.__setattr__(self, "alphas", _frozen_array(self.alphas))
        if self.gammas.shape != self.alphas.shape:
            raise DimensionMismatch(
                f"gammas has {self.gammas.size} entries but alphas has {self.alphas.size}"
            )

    @property
    def k(self) -> int:
        return int(self.alphas.size)

    def burst_factor(self) -> float:
        """r * prod(gamma) / prod(alpha): merozoites released per infected cell."""
        return float(self.r * np.prod(self.gammas / self.alphas))

    def parameter_violations(self, label: str = "strain") -> list[IntrahostError]:
        out: list[IntrahostError] = []
        for name in ("beta", "r", "mu_m", "mu_g"):
            v = getattr(self, name)
            if not (v > 0):
                out.append(NonPositiveParameter(f"{label}.{name} must be > 0, got {v}"))
        if not (self.delta >= 0):
            out.append(NonPositiveParameter(f"{label}.delta must be >= 0, got {self.delta}"))
        for name in ("gammas", "alphas"):
            arr = getattr(self, name)
            if not np.all(arr > 0):
                out.append(NonPositiveParameter(f"{label}.{name} must all be > 0, got {arr.tolist()}"))
        return out

    def __repr__(self) -> str:
        return (
            f"StrainParams(beta={self.beta!r}, r={self.r!r}, gammas={self.gammas.tolist()!r}, "
            f"alphas={self.alphas.tolist()!r}, mu_m={self.mu_m!r}, delta={self.delta!r}, "
            f"mu_g={self.mu_g!r})"
        )


class ParamArrays(NamedTuple):
    beta: np.ndarray  # (n,)
    r: np.ndarray  # (n,)
    gam: np.ndarray  # (n, k)
    alp: np.ndarray  # (n, k)
    mu_m: np.ndarray  # (n,)
    delta: np.ndarray  # (n,)
    mu_g: np.ndarray  # (n,)


@dataclass(frozen=True, eq=False)
class ModelSpec:
    k: int
    n: int
    u: float
    recruitment: RecruitmentModel
    strains: tuple[StrainParams, ...]
    include_gametocytes: bool = True

    def __post_init__(self):
        object.__setattr__(self, "strains", tuple(self.strains))
        if self.k < 1 or self.n < 1:
            raise DimensionMismatch(f"need k >= 1 and n >= 1, got k={self.k}, n={self.n}")
        if len(self.strains) != self.n:
            raise DimensionMismatch(f"n={self.n} but {len(self.strains)} strain blocks given")
        for i, s in enumerate(self.strains):
            if s.k != self.k:
                raise DimensionMismatch(f"strain {i + 1} has {s.k} stages, model has k={self.k}")

    @classmethod
    def build(cls, recruitment: RecruitmentModel, strains: Sequence[StrainParams],
              u: float = 1.0, include_gametocytes: bool = True) -> "ModelSpec":
        strains = tuple(strains)
        if not strains:
            raise DimensionMismatch("at least one strain is required")
        return cls(k=strains[0].k, n=len(strains), u=u, recruitment=recruitment,
                   strains=strains, include_gametocytes=include_gametocytes)

    @property
    def dim(self) -> int:
        return 1 + self.n * (self.k + 2)

    @property
    def block(self) -> int:
        return self.k + 2

    def strain_slice(self, i: int) -> slice:
        start = 1 + i * self.block
        return slice(start, start + self.block)

    def z_indices(self, i: int) -> np.ndarray:
        """Flat indices of (y_1..y_k, m) for strain i (gametocytes excluded)."""
        start = 1 + i * self.block
        return np.r_[start:start + self.k, start + self.k + 1]

    def m_index(self, i: int) -> int:
        return 1 + i * self.block + self.k + 1

    def g_index(self, i: int) -> int:
        return 1 + i * self.block + self.k

    @cached_property
    def arrays(self) -> ParamArrays:
        st = self.strains
        arrs = ParamArrays(
            beta=np.array([s.beta for s in st], dtype=float),
            r=np.array([s.r for s in st], dtype=float),
            gam=np.array([s.gammas for s in st], dtype=float).reshape(self.n, self.k),
            alp=np.array([s.alphas for s in st], dtype=float).reshape(self.n, self.k),
            mu_m=np.array([s.mu_m for s in st], dtype=float),
            delta=np.array([s.delta for s in st], dtype=float),
            mu_g=np.array([s.mu_g for s in st], dtype=float),
        )
        for a in arrs:
            a.setflags(write=False)
        return arrs

    @cached_property
    def xstar(self) -> float:
        return solve_xstar(self.recruitment)

    def min_rate(self) -> float:
        """Smallest rate constant in the model, in 1/day."""
        rates = [self.recruitment.mu_x]
        for s in self.strains:
            rates += [*s.gammas, *s.alphas, s.mu_m]
            if self.include_gametocytes:
                rates.append(s.mu_g)
        return float(min(rates))


# ---------------------------------------------------------------------------
# State
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SystemState:
    x: float
    y: np.ndarray  # (n, k)
    g: np.ndarray  # (n,)
    m: np.ndarray  # (n,)

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        if y.ndim == 1:
            y = y.reshape(1, -1)
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "g", np.array(self.g, dtype=float).reshape(-1))
        object.__setattr__(self, "m", np.array(self.m, dtype=float).reshape(-1))
        n = y.shape[0]
        if self.g.size != n or self.m.size != n:
            raise DimensionMismatch("y, g and m must describe the same number of strains")

    def __eq__(self, other):
        if not isinstance(other, SystemState):
            return NotImplemented
        return (self.x == other.x and np.array_equal(self.y, other.y)
                and np.array_equal(self.g, other.g) and np.array_equal(self.m, other.m))


def pack(state: SystemState) -> np.ndarray:
    n, k = state.y.shape
    blocks = np.empty((n, k + 2))
    blocks[:, :k] = state.y
    blocks[:, k] = state.g
    blocks[:, k + 1] = state.m
    return np.concatenate(([state.x], blocks.ravel()))


def unpack(vec, spec: ModelSpec) -> SystemState:
    v = np.asarray(vec, dtype=float)
    if v.ndim != 1 or v.size != spec.dim:
        raise DimensionMismatch(f"expected a flat vector of length {spec.dim}, got shape {v.shape}")
    blocks = v[1:].reshape(spec.n, spec.k + 2)
    return SystemState(x=v[0], y=blocks[:, :spec.k].copy(), g=blocks[:, spec.k].copy(),
                       m=blocks[:, spec.k + 1].copy())


def as_vector(state, spec: ModelSpec) -> np.ndarray:
    """Flat float vector for either a SystemState or an array-like."""
    if isinstance(state, SystemState):
        if state.y.shape != (spec.n, spec.k):
            raise DimensionMismatch(
                f"state has y of shape {state.y.shape}, model needs {(spec.n, spec.k)}")
        return pack(state)
    v = np.asarray(state, dtype=float)
    if v.shape[-1:] != (spec.dim,):
        raise DimensionMismatch(f"expected trailing dimension {spec.dim}, got shape {v.shape}")
    return v


# ---------------------------------------------------------------------------
# Right-hand side
# ---------------------------------------------------------------------------


def _rhs(spec: ModelSpec, v: np.ndarray) -> np.ndarray:
    p = spec.arrays
    k = spec.k
    x = v[0]
    blocks = v[1:].reshape(spec.n, k + 2)
    Y = blocks[:, :k]
    g = blocks[:, k]
    m = blocks[:, k + 1]
    infect = p.beta * x * m

    out = np.empty_like(v)
    dblocks = out[1:].reshape(spec.n, k + 2)
    dY = dblocks[:, :k]
    np.multiply(-p.alp, Y, out=dY)
    dY[:, 0] += infect
    if k > 1:
        dY[:, 1:] += p.gam[:, :-1] * Y[:, :-1]
    if spec.include_gametocytes:
        dblocks[:, k] = p.delta * Y[:, -1] - p.mu_g * g
    else:
        dblocks[:, k] = 0.0
    dblocks[:, k + 1] = p.r * p.gam[:, -1] * Y[:, -1] - p.mu_m * m - spec.u * infect
    out[0] = spec.recruitment.phi(x) - infect.sum()
    return out


def vector_field(spec: ModelSpec, state):
    """Time derivative of the state; returns the same kind (SystemState or array) as given."""
    v = as_vector(state, spec)
    if v.ndim != 1:
        raise DimensionMismatch(f"expected a single state, got shape {v.shape}")
    d = _rhs(spec, v)
    if isinstance(state, SystemState):
        return unpack(d, spec)
    return d


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


@dataclass
class ValidationReport:
    ok: bool
    xstar: float | None
    violations: list[IntrahostError] = field(default_factory=list)

    def raise_if_invalid(self) -> None:
        if self.violations:
            raise self.violations[0]


def check_homeostasis(recruitment: RecruitmentModel, samples: int = SIGN_SAMPLES) -> float:
    """Return x* after checking phi > 0 on [0, x*) and phi < 0 beyond, on a dense grid."""
    phi0 = float(recruitment.phi(0.0))
    if not phi0 > 0:
        raise HomeostasisViolation(f"phi(0) = {phi0!r} must be > 0")
    xstar = solve_xstar(recruitment)
    grid = np.linspace(0.0, 4.0 * xstar, samples)
    vals = np.asarray(recruitment.phi(grid), dtype=float)
    signs = np.sign(vals)
    # entries within rounding of zero near x* carry no sign information
    tiny = 1e-12 * max(abs(recruitment.lam), recruitment.mu_x * xstar)
    signs[np.abs(vals) <= tiny] = 0
    nz = signs[signs != 0]
    changes = int(np.count_nonzero(nz[1:] != nz[:-1]))
    if changes > 1:
        raise NonUniqueRoot(f"phi changes sign {changes} times on [0, {4 * xstar:g}]")
    below, above = grid < xstar, grid > xstar
    if np.any(signs[below] < 0) or np.any(signs[above] > 0):
        raise NonUniqueRoot("phi has the wrong sign on one side of x*")
    return xstar


def validate_spec(spec: ModelSpec) -> ValidationReport:
    violations: list[IntrahostError] = []
    if not (spec.u >= 0):
        violations.append(NonPositiveParameter(f"u must be >= 0, got {spec.u}"))
    rec_viol = spec.recruitment.parameter_violations()
    violations += rec_viol
    for i, s in enumerate(spec.strains):
        violations += s.parameter_violations(f"strain{i + 1}")
    xstar = None
    if not rec_viol:
        try:
            xstar = check_homeostasis(spec.recruitment)
        except IntrahostError as exc:
            violations.append(exc)
    return ValidationReport(ok=not violations, xstar=xstar, violations=violations)
