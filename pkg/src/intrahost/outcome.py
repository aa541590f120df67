"""Outcome prediction from the thresholds, and simulation-based confirmation."""

from __future__ import annotations

import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum
from itertools import product
from typing import Mapping, Sequence

import numpy as np

from .equilibria import endemic_equilibrium
from .errors import (BudgetExceeded, IntrahostError, NoEndemicEquilibrium, UnknownParameter,
                     WrongModelShape)
from .lyapunov import (ClearanceLyapunov, DecreaseReport, EndemicLyapunov, MultistrainLyapunov,
                       certificate, verify_decrease)
from .model import ConstantRecruitment, ModelSpec, as_vector, validate_spec
from .simulate import IntegratorOptions, Trajectory, detect_extinction, integrate
from .threshold import ThresholdReport, threshold_report

MAX_SWEEP_CELLS = 100_000
MAX_SWEEP_DIMS = 3
DEFAULT_INOCULUM = 1e-3
EXTINCTION_ATOL_FACTOR = 1e-3


class OutcomeKind(str, Enum):
    CLEARANCE = "Clearance"
    EXCLUSION_WINNER = "ExclusionWinner"
    NON_GENERIC = "NonGeneric"
    INCONCLUSIVE_STABILITY = "InconclusiveStability"


@dataclass(frozen=True, eq=False)
class OutcomePrediction:
    kind: OutcomeKind
    r0: float
    t0s: np.ndarray
    r0s: np.ndarray
    winner: int | None
    scstab_holds: bool | None
    amg_condition_holds: bool | None
    report: ThresholdReport

    def describe(self) -> str:
        if self.kind is OutcomeKind.CLEARANCE:
            return f"Clearance (R0 = {self.r0:.4f} ≤ 1)"
        if self.kind is OutcomeKind.NON_GENERIC:
            return "NonGeneric (largest T0 is tied; no unique winner)"
        label = f"ExclusionWinner{{{self.winner + 1}}}"
        if self.kind is OutcomeKind.INCONCLUSIVE_STABILITY:
            return label + " [InconclusiveStability: SCstab fails, global stability unproven]"
        return label


# -- sufficient conditions ---------------------------------------------------


def scstab_sides(spec: ModelSpec, i: int, report: ThresholdReport | None = None) -> tuple[float, float]:
    """(u beta phi(xbar), alpha* mu_m) for strain i."""
    report = report or threshold_report(spec)
    strain = spec.strains[i]
    if not report.t0s[i] > 1:
        raise NoEndemicEquilibrium(i, float(report.t0s[i]))
    xbar = strain.mu_m / (strain.beta * (strain.burst_factor() - spec.u))
    lhs = spec.u * strain.beta * spec.recruitment.phi(xbar)
    return float(lhs), float(report.alpha_star * strain.mu_m)


def check_scstab(spec: ModelSpec, i: int, report: ThresholdReport | None = None) -> bool:
    lhs, rhs = scstab_sides(spec, i, report)
    return lhs <= rhs


def amg_multiplier(r: float) -> float:
    """(sqrt(r) + sqrt(r - 1))^2, defined for r >= 1."""
    return (math.sqrt(r) + math.sqrt(r - 1.0)) ** 2


def is_amg_shape(spec: ModelSpec) -> bool:
    return (spec.k == 1 and spec.n == 1 and spec.u == 1
            and isinstance(spec.recruitment, ConstantRecruitment))


def check_amg_condition(spec: ModelSpec) -> bool:
    """beta Lambda <= (sqrt(r)+sqrt(r-1))^2 mu_x mu_m for the three-variable model.

    With gamma != alpha the model is the same system with burst size
    r*gamma/alpha, which is what enters the inequality.
    """
    if not is_amg_shape(spec):
        raise WrongModelShape("the AMG condition needs k=1, n=1, u=1 and constant recruitment")
    strain = spec.strains[0]
    r_eff = strain.burst_factor()
    if r_eff < 1:
        return False
    rec = spec.recruitment
    return strain.beta * rec.lam <= amg_multiplier(r_eff) * rec.mu_x * strain.mu_m


def predict(spec: ModelSpec, report: ThresholdReport | None = None) -> OutcomePrediction:
    report = report or threshold_report(spec)
    amg = check_amg_condition(spec) if is_amg_shape(spec) else None
    common = dict(r0=report.r0, t0s=report.t0s, r0s=report.r0s, amg_condition_holds=amg,
                  report=report)
    if report.r0 <= 1:
        return OutcomePrediction(kind=OutcomeKind.CLEARANCE, winner=None, scstab_holds=None, **common)
    if not report.generic:
        return OutcomePrediction(kind=OutcomeKind.NON_GENERIC, winner=None, scstab_holds=None, **common)
    w = report.winner
    holds = check_scstab(spec, w, report)
    kind = OutcomeKind.EXCLUSION_WINNER if holds else OutcomeKind.INCONCLUSIVE_STABILITY
    return OutcomePrediction(kind=kind, winner=w, scstab_holds=holds, **common)


# -- experiments -------------------------------------------------------------


def default_initial(spec: ModelSpec, inoculum: float = DEFAULT_INOCULUM) -> np.ndarray:
    """Disease-free equilibrium plus a small merozoite inoculum of every strain."""
    v = np.zeros(spec.dim)
    v[0] = spec.xstar
    for i in range(spec.n):
        v[spec.m_index(i)] = inoculum
    return v


def invariant_face(spec: ModelSpec, v: np.ndarray, winner: int | None) -> str | None:
    """Name of the invariant boundary face the state lies on, if any."""
    parasites = np.concatenate([v[spec.z_indices(i)] for i in range(spec.n)])
    if np.all(parasites == 0):
        return "x-axis"
    if winner is not None and np.all(v[spec.z_indices(winner)] == 0):
        return f"face y_{winner + 1} = m_{winner + 1} = 0"
    return None


def lyapunov_for(spec: ModelSpec, prediction: OutcomePrediction):
    if prediction.kind is OutcomeKind.CLEARANCE:
        return ClearanceLyapunov(spec, prediction.report)
    if prediction.winner is None:
        return None
    cert = certificate(spec, prediction.winner)
    if spec.n == 1:
        return EndemicLyapunov(spec, cert)
    return MultistrainLyapunov(spec, cert, prediction.report)


@dataclass(frozen=True, eq=False)
class ExperimentReport:
    prediction: OutcomePrediction
    trajectory: Trajectory | None
    extinct: tuple[bool, ...]
    matched: bool | None  # None: no claim to test (invariant face or nongeneric)
    invariant_face: str | None
    terminal_rel_error: float | None
    decrease: DecreaseReport | None
    horizon: float
    reruns: int

    @property
    def invariant_face_start(self) -> bool:
        return self.invariant_face is not None


def terminal_error(spec: ModelSpec, prediction: OutcomePrediction, final: np.ndarray) -> float:
    """Componentwise relative distance of the final state from the predicted equilibrium.

    Clearance compares x against x*; exclusion compares x and the winner's
    (y, m) -- and g when gametocytes are modelled -- against its EE.
    """
    if prediction.kind is OutcomeKind.CLEARANCE:
        return float(abs(final[0] - prediction.report.xstar) / prediction.report.xstar)
    ee = endemic_equilibrium(spec, prediction.winner)
    target = ee.vector(spec)
    idx = [0, *spec.z_indices(prediction.winner)]
    if spec.include_gametocytes and ee.gbar > 0:
        idx.append(spec.g_index(prediction.winner))
    idx = np.array(idx)
    return float(np.max(np.abs(final[idx] - target[idx]) / np.abs(target[idx])))


def _judge(spec, prediction, traj, eps, rtol):
    extinct = detect_extinction(traj, spec, eps)
    err = terminal_error(spec, prediction, traj.final)
    if prediction.kind is OutcomeKind.CLEARANCE:
        matched = all(extinct) and err <= rtol
    else:
        others_gone = all(extinct[j] for j in range(spec.n) if j != prediction.winner)
        matched = (not extinct[prediction.winner]) and others_gone and err <= rtol
    return extinct, err, bool(matched)


def run_experiment(spec: ModelSpec, initial=None, opts: IntegratorOptions | None = None,
                   retries: int = 0, retry_factor: float = 4.0,
                   match_rtol: float = 1e-3) -> ExperimentReport:
    """Integrate and compare the long-time state with :func:`predict`.

    A mismatch is re-run up to ``retries`` times with the horizon multiplied
    by ``retry_factor`` before it is reported.
    """
    opts = (opts or IntegratorOptions()).validated()
    # components below atol carry no accuracy, so resolve well under the extinction level
    opts = replace(opts, atol=min(opts.atol, EXTINCTION_ATOL_FACTOR * opts.extinction_eps))
    prediction = predict(spec)
    v0 = np.array(default_initial(spec) if initial is None else as_vector(initial, spec), dtype=float)
    horizon = opts.horizon(spec)

    face = invariant_face(spec, v0, prediction.winner)
    if prediction.kind is OutcomeKind.NON_GENERIC or (
            face is not None and prediction.kind is not OutcomeKind.CLEARANCE):
        traj = integrate(spec, v0, replace(opts, t_end=horizon))
        return ExperimentReport(prediction=prediction, trajectory=traj,
                                extinct=detect_extinction(traj, spec, opts.extinction_eps),
                                matched=None, invariant_face=face, terminal_rel_error=None,
                                decrease=None, horizon=horizon, reruns=0)

    reruns = 0
    while True:
        traj = integrate(spec, v0, replace(opts, t_end=horizon))
        extinct, err, matched = _judge(spec, prediction, traj, opts.extinction_eps, match_rtol)
        if matched or reruns >= retries:
            break
        reruns += 1
        horizon *= retry_factor

    V = lyapunov_for(spec, prediction)
    decrease = verify_decrease(V, traj) if V is not None else None
    return ExperimentReport(prediction=prediction, trajectory=traj, extinct=extinct,
                            matched=matched, invariant_face=face, terminal_rel_error=err,
                            decrease=decrease, horizon=horizon, reruns=reruns)


# -- parameter sweeps --------------------------------------------------------

_STRAIN_PATH = re.compile(r"^strain(\d+)\.(beta|r|mu_m|delta|mu_g|gammas|alphas)(?:\.(\d+))?$")
_RECRUIT_FIELDS = {"lambda": "lam", "lam": "lam", "mu_x": "mu_x", "s": "s", "K": "K"}


def set_parameter(spec: ModelSpec, path: str, value: float) -> ModelSpec:
    """Copy of spec with one parameter replaced.

    Paths: ``u``, ``recruitment.<lambda|mu_x|s|K>``, ``strainN.<beta|r|mu_m|delta|mu_g>``
    and ``strainN.<gammas|alphas>.J`` (N, J 1-based).
    """
    value = float(value)
    if path == "u":
        return replace(spec, u=value)
    if path.startswith("recruitment."):
        name = _RECRUIT_FIELDS.get(path.split(".", 1)[1])
        if name is None or not hasattr(spec.recruitment, name):
            raise UnknownParameter(f"unknown parameter path {path!r}")
        return replace(spec, recruitment=replace(spec.recruitment, **{name: value}))
    m = _STRAIN_PATH.match(path)
    if not m:
        raise UnknownParameter(f"unknown parameter path {path!r}")
    i = int(m.group(1)) - 1
    if not 0 <= i < spec.n:
        raise UnknownParameter(f"{path!r}: model has {spec.n} strain(s)")
    field, sub = m.group(2), m.group(3)
    strain = spec.strains[i]
    if field in ("gammas", "alphas"):
        if sub is None:
            raise UnknownParameter(f"{path!r}: give a 1-based stage index, e.g. {path}.1")
        j = int(sub) - 1
        if not 0 <= j < spec.k:
            raise UnknownParameter(f"{path!r}: model has k={spec.k} stages")
        arr = getattr(strain, field).copy()
        arr[j] = value
        new = replace(strain, **{field: arr})
    else:
        if sub is not None:
            raise UnknownParameter(f"unknown parameter path {path!r}")
        new = replace(strain, **{field: value})
    strains = list(spec.strains)
    strains[i] = new
    return replace(spec, strains=tuple(strains))


@dataclass(frozen=True, eq=False)
class SweepCell:
    values: tuple[float, ...]
    prediction: OutcomePrediction | None
    near_tie: bool
    matched: bool | None = None
    error: str | None = None


@dataclass(frozen=True, eq=False)
class SweepReport:
    params: tuple[str, ...]
    cells: list[SweepCell]

    @property
    def match_rate(self) -> float | None:
        judged = [c.matched for c in self.cells if c.matched is not None and not c.near_tie]
        if not judged:
            return None
        return sum(judged) / len(judged)

    @property
    def near_tie_cells(self) -> list[SweepCell]:
        return [c for c in self.cells if c.near_tie]


def worker_count(requested: int | None = None) -> int:
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("INTRAHOST_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, n)


def _near_tie(report: ThresholdReport, rtol: float) -> bool:
    t = np.sort(report.t0s)[::-1]
    if t.size < 2 or report.r0 <= 1:
        return False
    return bool(t[0] - t[1] <= rtol * max(abs(t[0]), abs(t[1])))


def _sweep_cell(template, params, values, opts, simulate, near_tie_rtol, initial):
    try:
        spec = template
        for path, val in zip(params, values):
            spec = set_parameter(spec, path, val)
        validate_spec(spec).raise_if_invalid()
        pred = predict(spec)
    except IntrahostError as exc:
        return SweepCell(values=values, prediction=None, near_tie=False, error=str(exc))
    near = _near_tie(pred.report, near_tie_rtol)
    matched = None
    if simulate:
        try:
            matched = run_experiment(spec, initial, opts).matched
        except IntrahostError as exc:
            return SweepCell(values=values, prediction=pred, near_tie=near, error=str(exc))
    return SweepCell(values=values, prediction=pred, near_tie=near, matched=matched)


def sweep(template: ModelSpec, grid: Mapping[str, Sequence[float]],
          opts: IntegratorOptions | None = None, simulate: bool = False,
          workers: int | None = None, near_tie_rtol: float = 1e-3, initial=None) -> SweepReport:
    """Predict (and optionally simulate) every cell of a rectangular parameter grid.

    Cells are returned in row-major order of ``grid`` regardless of worker count.
    """
    params = tuple(grid)
    if len(params) > MAX_SWEEP_DIMS:
        raise BudgetExceeded(f"at most {MAX_SWEEP_DIMS} swept parameters, got {len(params)}")
    axes = [list(map(float, grid[p])) for p in params]
    total = math.prod(len(a) for a in axes)
    if total > MAX_SWEEP_CELLS:
        raise BudgetExceeded(f"{total} cells exceeds the budget of {MAX_SWEEP_CELLS}")
    for p in params:  # fail fast on bad paths
        set_parameter(template, p, 1.0)
    combos = [tuple(c) for c in product(*axes)]
    args = (params, opts, simulate, near_tie_rtol, initial)

    n_workers = worker_count(workers)
    if n_workers == 1 or total == 1:
        cells = [_sweep_cell(template, params, c, opts, simulate, near_tie_rtol, initial)
                 for c in combos]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            cells = list(pool.map(
                lambda c: _sweep_cell(template, params, c, *args[1:]), combos))
    return SweepReport(params=params, cells=cells)
