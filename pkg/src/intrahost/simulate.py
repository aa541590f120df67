"""Forward integration of the model with an adaptive Dormand-Prince 5(4) pair.

The stepping loop is compiled with numba (``nogil``) so that independent
integrations can run on a thread pool.  Nonnegativity: an accepted step whose
smallest component lies in ``[-atol, 0)`` is clamped to zero; anything more
negative rejects the step and retries at half the size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum

import numba
import numpy as np

from .errors import InvalidOptions, NonFiniteState, StepSizeUnderflow
from .model import ModelSpec, as_vector, _rhs

# Dormand-Prince 5(4) tableau.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0])
_A = np.array([
    [0.0, 0.0, 0.0, 0.0, 0.0],
    [1 / 5, 0.0, 0.0, 0.0, 0.0],
    [3 / 40, 9 / 40, 0.0, 0.0, 0.0],
    [44 / 45, -56 / 15, 32 / 9, 0.0, 0.0],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729, 0.0],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
])
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
# 5th minus embedded 4th order weights (7 stages, FSAL)
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])
# Continuous extension: y(t + th*h) = y + h * K^T (P @ [th, th^2, th^3, th^4])
_P = np.array([
    [1.0, -8048581381 / 2820520608, 8663915743 / 2820520608, -12715105075 / 11282082432],
    [0.0, 0.0, 0.0, 0.0],
    [0.0, 131558114200 / 32700410799, -68118460800 / 10900136933, 87487479700 / 32700410799],
    [0.0, -1754552775 / 470086768, 14199869525 / 1410260304, -10690763975 / 1880347072],
    [0.0, 127303824393 / 49829197408, -318862633887 / 49829197408, 701980252875 / 199316789632],
    [0.0, -282668133 / 205662961, 2019193451 / 616988883, -1453857185 / 822651844],
    [0.0, 40617522 / 29380423, -110615467 / 29380423, 69997945 / 29380423],
])

STATUS_OK, STATUS_STEADY, STATUS_UNDERFLOW, STATUS_NONFINITE, STATUS_MAXSTEPS = range(5)


@numba.njit(cache=True, nogil=True)
def _rhs_nb(y, out, n, k, u, lam, s, K, mu_x, beta, r, gam, alp, mum, delta, mug, incl_g):
    x = y[0]
    total = 0.0
    blk = k + 2
    for i in range(n):
        base = 1 + i * blk
        m = y[base + k + 1]
        inf = beta[i] * x * m
        total += inf
        out[base] = inf - alp[i, 0] * y[base]
        for j in range(1, k):
            out[base + j] = gam[i, j - 1] * y[base + j - 1] - alp[i, j] * y[base + j]
        yk = y[base + k - 1]
        if incl_g:
            out[base + k] = delta[i] * yk - mug[i] * y[base + k]
        else:
            out[base + k] = 0.0
        out[base + k + 1] = r[i] * gam[i, k - 1] * yk - mum[i] * m - u * inf
    out[0] = lam + s * x * (1.0 - x / K) - mu_x * x - total


@numba.njit(cache=True, nogil=True)
def _rms(v, sc):
    acc = 0.0
    for i in range(v.size):
        q = v[i] / sc[i]
        acc += q * q
    return math.sqrt(acc / v.size)


@numba.njit(cache=True, nogil=True)
def _dopri5(y0, t_end, sample_t, rtol, atol, max_step, h_init, fixed_step, max_steps,
            stop_on_steady, steady_tol, A, B, E, P,
            n, k, u, lam, s, K, mu_x, beta, r, gam, alp, mum, delta, mug, incl_g):
    dim = y0.size
    n_samples = sample_t.size
    out = np.zeros((n_samples, dim))
    St = np.zeros((7, dim))
    y = y0.copy()
    y_new = np.empty(dim)
    tmp = np.empty(dim)
    sc = np.empty(dim)
    err = np.empty(dim)
    t = 0.0
    _rhs_nb(y, St[0], n, k, u, lam, s, K, mu_x, beta, r, gam, alp, mum, delta, mug, incl_g)

    si = 0
    while si < n_samples and sample_t[si] <= 0.0:
        out[si] = y
        si += 1

    if fixed_step > 0:
        h = fixed_step
    elif h_init > 0:
        h = h_init
    else:
        for i in range(dim):
            sc[i] = atol + rtol * abs(y[i])
        d0 = _rms(y, sc)
        d1 = _rms(St[0], sc)
        if d0 < 1e-5 or d1 < 1e-5:
            h0 = 1e-6
        else:
            h0 = 0.01 * d0 / d1
        h0 = min(h0, t_end)
        for i in range(dim):
            tmp[i] = y[i] + h0 * St[0, i]
        _rhs_nb(tmp, St[1], n, k, u, lam, s, K, mu_x, beta, r, gam, alp, mum, delta, mug, incl_g)
        for i in range(dim):
            err[i] = St[1, i] - St[0, i]
        d2 = _rms(err, sc) / h0
        if max(d1, d2) <= 1e-15:
            h1 = max(1e-6, h0 * 1e-3)
        else:
            h1 = (0.01 / max(d1, d2)) ** 0.2
        h = min(100.0 * h0, h1)
        if not (h > 0.0 and math.isfinite(h)):
            h = 1e-6
    h = min(h, max_step)

    status = STATUS_OK
    n_steps = 0
    n_rejected = 0
    just_rejected = False
    neg_cap = np.inf
    eps = 2.220446049250313e-16
    while t < t_end:
        if n_steps >= max_steps:
            status = STATUS_MAXSTEPS
            break
        last = False
        if fixed_step > 0:
            h = fixed_step
        if h >= t_end - t or t_end - (t + h) <= 16.0 * eps * max(abs(t_end), 1.0):
            h = t_end - t
            last = True
        if not (h >= 16.0 * eps * max(abs(t), 1.0)):  # also catches NaN
            status = STATUS_UNDERFLOW
            break

        for st in range(1, 6):
            for i in range(dim):
                acc = 0.0
                for j in range(st):
                    acc += A[st, j] * St[j, i]
                tmp[i] = y[i] + h * acc
            _rhs_nb(tmp, St[st], n, k, u, lam, s, K, mu_x, beta, r, gam, alp, mum, delta, mug, incl_g)
        for i in range(dim):
            acc = 0.0
            for j in range(6):
                acc += B[j] * St[j, i]
            y_new[i] = y[i] + h * acc
        _rhs_nb(y_new, St[6], n, k, u, lam, s, K, mu_x, beta, r, gam, alp, mum, delta, mug, incl_g)

        finite = True
        for i in range(dim):
            acc = 0.0
            for j in range(7):
                acc += E[j] * St[j, i]
            err[i] = h * acc
            sc[i] = atol + rtol * max(abs(y[i]), abs(y_new[i]))
            if not (math.isfinite(y_new[i]) and math.isfinite(St[6, i])):
                finite = False
        if not finite:
            n_rejected += 1
            h *= 0.1
            just_rejected = True
            if not (h >= 16.0 * eps * max(abs(t), 1.0)):
                status = STATUS_NONFINITE
                break
            continue
        err_norm = _rms(err, sc)

        if fixed_step <= 0 and not (err_norm <= 1.0):
            n_rejected += 1
            h *= max(0.2, 0.9 * err_norm ** -0.2)
            just_rejected = True
            continue

        lowest = y_new.min()
        if fixed_step <= 0 and lowest < -atol:
            n_rejected += 1
            h *= 0.5
            neg_cap = h
            just_rejected = True
            continue

        t_new = t_end if last else t + h
        # dense output from the unclamped stages
        while si < n_samples and sample_t[si] <= t_new:
            if sample_t[si] == t_new:
                for i in range(dim):
                    out[si, i] = y_new[i]
            else:
                th = (sample_t[si] - t) / h
                q1 = th
                q2 = th * th
                q3 = q2 * th
                q4 = q3 * th
                for i in range(dim):
                    acc = 0.0
                    for j in range(7):
                        acc += St[j, i] * (P[j, 0] * q1 + P[j, 1] * q2 + P[j, 2] * q3 + P[j, 3] * q4)
                    out[si, i] = y[i] + h * acc
            for i in range(dim):
                if out[si, i] < 0.0:
                    out[si, i] = 0.0
            si += 1

        if lowest < 0.0:
            for i in range(dim):
                if y_new[i] < 0.0:
                    y_new[i] = 0.0
            _rhs_nb(y_new, St[6], n, k, u, lam, s, K, mu_x, beta, r, gam, alp, mum, delta, mug, incl_g)

        t = t_new
        n_steps += 1
        for i in range(dim):
            y[i] = y_new[i]
            St[0, i] = St[6, i]

        if stop_on_steady:
            fmax = 0.0
            ymax = 0.0
            for i in range(dim):
                fmax = max(fmax, abs(St[0, i]))
                ymax = max(ymax, abs(y[i]))
            if fmax < steady_tol * (1.0 + ymax):
                status = STATUS_STEADY
                break

        if fixed_step <= 0:
            if err_norm == 0.0:
                factor = 10.0
            else:
                factor = min(10.0, max(0.2, 0.9 * err_norm ** -0.2))
            if just_rejected:
                factor = min(1.0, factor)
            # undershoot of sub-atol components is a stability limit the error
            # estimate cannot see; approach it again slowly
            h = min(h * factor, max_step, neg_cap)
            neg_cap *= 1.1
            just_rejected = False

    return status, out, si, t, y, n_steps, n_rejected


# ---------------------------------------------------------------------------


class EventKind(str, Enum):
    REACHED_T_END = "ReachedTEnd"
    STEADY_STATE = "SteadyState"
    EXTINCTION = "Extinction"


@dataclass(frozen=True)
class TerminalEvent:
    kind: EventKind
    time: float
    extinct: tuple[int, ...] = ()  # 0-based strains below extinction_eps at the end

    def describe(self) -> str:
        text = f"{self.kind.value} at t={self.time!r}"
        if self.extinct:
            text += " extinct=" + ",".join(f"s{i + 1}" for i in self.extinct)
        return text


@dataclass(frozen=True)
class IntegratorOptions:
    t_end: float | None = None  # None: 2000 / (smallest rate constant)
    rtol: float = 1e-8
    atol: float = 1e-10
    max_step: float = math.inf
    extinction_eps: float = 1e-12
    steady_tol: float = 1e-9
    samples: int = 1001
    first_step: float | None = None
    fixed_step: float | None = None
    max_steps: int = 50_000_000
    stop_on_steady: bool = False

    def validated(self) -> "IntegratorOptions":
        for name in ("rtol", "atol", "max_step", "extinction_eps", "steady_tol"):
            val = getattr(self, name)
            if not (isinstance(val, (int, float)) and val > 0):
                raise InvalidOptions(f"{name} must be > 0, got {val!r}")
        if self.t_end is not None and not (math.isfinite(self.t_end) and self.t_end > 0):
            raise InvalidOptions(f"t_end must be finite and > 0, got {self.t_end!r}")
        if not (isinstance(self.samples, int) and self.samples >= 2):
            raise InvalidOptions(f"samples must be an integer >= 2, got {self.samples!r}")
        for name in ("first_step", "fixed_step"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise InvalidOptions(f"{name} must be > 0, got {val!r}")
        if self.max_steps < 1:
            raise InvalidOptions("max_steps must be >= 1")
        return self

    def horizon(self, spec: ModelSpec) -> float:
        return default_horizon(spec) if self.t_end is None else float(self.t_end)


def default_horizon(spec: ModelSpec, factor: float = 2000.0) -> float:
    return factor / spec.min_rate()


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (samples, dim)
    event: TerminalEvent
    n_steps: int
    n_rejected: int

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def __len__(self) -> int:
        return int(self.times.size)


def _extinct_at(spec: ModelSpec, v: np.ndarray, eps: float) -> tuple[int, ...]:
    return tuple(i for i in range(spec.n) if np.max(v[spec.z_indices(i)]) < eps)


def steady_state_detect(spec: ModelSpec, state, steady_tol: float = 1e-9) -> bool:
    v = as_vector(state, spec)
    return bool(np.max(np.abs(_rhs(spec, v))) < steady_tol * (1.0 + np.max(np.abs(v))))


def integrate(spec: ModelSpec, initial, opts: IntegratorOptions | None = None,
              **overrides) -> Trajectory:
    opts = (opts or IntegratorOptions())
    if overrides:
        opts = replace(opts, **overrides)
    opts = opts.validated()
    y0 = np.array(as_vector(initial, spec), dtype=float)
    if y0.ndim != 1:
        raise InvalidOptions("initial must be a single state")
    if not np.all(np.isfinite(y0)):
        raise NonFiniteState("initial state is not finite")
    if np.any(y0 < 0):
        raise InvalidOptions("initial state must be nonnegative")
    t_end = opts.horizon(spec)
    sample_t = np.linspace(0.0, t_end, opts.samples)
    sample_t[-1] = t_end
    p = spec.arrays
    rec = spec.recruitment
    status, out, filled, t_stop, y_final, n_steps, n_rej = _dopri5(
        y0, float(t_end), sample_t, float(opts.rtol), float(opts.atol), float(opts.max_step),
        float(opts.first_step or 0.0), float(opts.fixed_step or 0.0), int(opts.max_steps),
        bool(opts.stop_on_steady), float(opts.steady_tol), _A, _B, _E, _P,
        spec.n, spec.k, float(spec.u), float(rec.lam), float(rec.logistic_s),
        float(rec.logistic_K), float(rec.mu_x), p.beta, p.r, p.gam, p.alp, p.mu_m, p.delta,
        p.mu_g, bool(spec.include_gametocytes))

    if status == STATUS_UNDERFLOW:
        raise StepSizeUnderflow(f"step size underflow at t={t_stop!r}")
    if status == STATUS_NONFINITE:
        raise NonFiniteState(f"non-finite state encountered near t={t_stop!r}")
    if status == STATUS_MAXSTEPS:
        raise StepSizeUnderflow(f"step budget of {opts.max_steps} exhausted at t={t_stop!r}")

    times = sample_t[:filled]
    states = out[:filled]
    if status == STATUS_STEADY and (filled == 0 or times[-1] < t_stop):
        times = np.append(times, t_stop)
        states = np.vstack([states, y_final])

    extinct = _extinct_at(spec, states[-1], opts.extinction_eps)
    if status == STATUS_STEADY or steady_state_detect(spec, states[-1], opts.steady_tol):
        kind = EventKind.STEADY_STATE
    elif extinct:
        kind = EventKind.EXTINCTION
    else:
        kind = EventKind.REACHED_T_END
    times.setflags(write=False)
    states.setflags(write=False)
    return Trajectory(times=times, states=states,
                      event=TerminalEvent(kind=kind, time=float(t_stop), extinct=extinct),
                      n_steps=int(n_steps), n_rejected=int(n_rej))


def detect_extinction(trajectory: Trajectory, spec: ModelSpec,
                      extinction_eps: float = 1e-12) -> tuple[bool, ...]:
    """Per strain: max(y, m) stayed below extinction_eps over the last 10% of samples."""
    states = trajectory.states
    window = max(1, int(math.ceil(0.1 * len(states))))
    tail = states[-window:]
    return tuple(bool(np.max(tail[:, spec.z_indices(i)]) < extinction_eps) for i in range(spec.n))
