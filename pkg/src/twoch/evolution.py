"""Time integration of the Lagrangian system, semigroups, monitors and breaking detection.

Evolved fields are (zeta, U, yxi, Uxi, nu); r has zero time derivative and is
carried along untouched. The right-hand side is

    zeta_t = U, U_t = -Q, yxi_t = Uxi, Uxi_t = nu/2 - (P - U^2/2) yxi,
    nu_t = -2 Q U yxi + (3 U^2 - 2 P) Uxi.

For any nodal values of P and Q these equations keep
yxi*nu - yxi^2 U^2 - Uxi^2 - r^2 constant in time, node by node.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import pq_from_fields
from .state import (
    EulerianState,
    LagrangianState,
    compat_residual,
    quad,
)
from .transform import eulerian_to_lagrangian, lagrangian_to_eulerian, project


class InvariantBreach(RuntimeError):
    def __init__(self, msg, state=None, time=None):
        super().__init__(msg)
        self.state = state
        self.time = time


BREAKING_THRESHOLD = 1e-6
FIX_FLOOR = 1e-8
EVOLVED = ("zeta", "U", "yxi", "Uxi", "nu")


def _energy_fix(P, Q, U, yxi, Uxi, nu):
    """Smallest (in the least-squares sense) change of P and Q making sum(nu_t) vanish.

    The exact system conserves h because nu_t is the xi-derivative of U^3 - 2PU;
    on the grid that holds only up to quadrature error. Adding lam*U*yxi to Q and
    lam*Uxi to P removes the defect while leaving the pointwise compatibility
    identity untouched.
    """
    defect = np.mean(-2.0 * Q * U * yxi + (3.0 * U**2 - 2.0 * P) * Uxi)
    den = 2.0 * np.mean((U * yxi) ** 2 + Uxi**2)
    # Near U = 0 the defect is first order in U but den is second order, so the
    # plain ratio turns roundoff into an O(1) change of P and feeds a spurious
    # spatially constant Uxi mode. The blend below equals defect/den up to a
    # relative (tau/den)^2 for O(1) states and vanishes like den for tiny ones.
    tau = FIX_FLOOR * (1.0 + np.mean(nu)) ** 2
    lam = defect * den / (den * den + tau * tau)
    return P + lam * Uxi, Q + lam * U * yxi


def _rhs_arrays(xi, S, method, conserve, correct=True):
    zeta, U, yxi, Uxi, nu = S
    P, Q, _ = pq_from_fields(xi + zeta, U, yxi, nu, method, correct)
    if conserve:
        P, Q = _energy_fix(P, Q, U, yxi, Uxi, nu)
    return np.array([
        U,
        -Q,
        Uxi,
        0.5 * nu - (P - 0.5 * U**2) * yxi,
        -2.0 * Q * U * yxi + (3.0 * U**2 - 2.0 * P) * Uxi,
    ])


def rhs(X: LagrangianState, method: str = "fast", conserve: bool = True) -> dict:
    """Time derivatives of all fields; r_t is identically zero."""
    d = _rhs_arrays(X.grid.nodes, _pack(X), method, conserve)
    out = dict(zip(EVOLVED, d))
    out["r"] = np.zeros(X.grid.n)
    return out


def _pack(X: LagrangianState) -> np.ndarray:
    return np.array([X.zeta, X.U, X.yxi, X.Uxi, X.nu])


def _unpack(X0: LagrangianState, S: np.ndarray) -> LagrangianState:
    return LagrangianState(X0.grid, S[0], S[1], S[2], S[3], S[4], X0.r)


@dataclass
class TimeStepper:
    """Classical four-stage Runge-Kutta with a fixed step."""

    dt: float
    t: float = 0.0
    method: str = "fast"
    conserve: bool = True
    correct: bool = True
    scheme: str = "rk4"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("time step must be positive")

    def step(self, xi, S, dt=None):
        dt = self.dt if dt is None else dt
        f = lambda Z: _rhs_arrays(xi, Z, self.method, self.conserve, self.correct)
        k1 = f(S)
        k2 = f(S + 0.5 * dt * k1)
        k3 = f(S + 0.5 * dt * k2)
        k4 = f(S + dt * k3)
        self.t += dt
        return S + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _nsteps(t, dt):
    return max(1, int(math.ceil(t / dt - 1e-9)))


def evolve(X0: LagrangianState, t: float, dt: float | None = None, method: str = "fast",
           conserve: bool = True, correct: bool = True) -> LagrangianState:
    """S_t by RK4. The step is shrunk slightly if needed to land on t exactly."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return X0
    dt = default_dt(X0.grid.n) if dt is None else dt
    k = _nsteps(t, dt)
    stepper = TimeStepper(t / k, method=method, conserve=conserve, correct=correct)
    xi = X0.grid.nodes
    S = _pack(X0)
    for _ in range(k):
        S = stepper.step(xi, S)
    return _unpack(X0, S)


def default_dt(n: int) -> float:
    return 0.25 / n


def evolve_H(X0: LagrangianState, t: float, dt: float | None = None, **kw) -> LagrangianState:
    """S-bar_t = Pi o S_t."""
    return project(evolve(X0, t, dt, **kw))


def flow_D(s0: EulerianState, t: float, dt: float | None = None, **kw) -> EulerianState:
    """T_t = M o S-bar_t o L."""
    return lagrangian_to_eulerian(evolve_H(eulerian_to_lagrangian(s0), t, dt, **kw))


# ------------------------------------------------------------ breaking

@dataclass
class BreakingEvent:
    time: float
    xi_nodes: np.ndarray
    x_location: float
    concentrated_mass: float

    def to_json(self) -> dict:
        return {"t": self.time, "x": self.x_location, "mass": self.concentrated_mass}


def detect_breaking(X: LagrangianState, threshold: float = BREAKING_THRESHOLD, time: float = 0.0) -> list:
    from .transform import _runs

    flagged = X.yxi < threshold * (1.0 + X.h)
    events = []
    y = X.y
    for run in _runs(flagged):
        yr = y[run] + np.where(run < run[0], 1.0, 0.0)
        events.append(BreakingEvent(
            time=float(time),
            xi_nodes=run,
            x_location=float(np.mean(yr)) % 1.0,
            concentrated_mass=float(np.sum(X.nu[run]) / X.grid.n),
        ))
    return events


# ------------------------------------------------------------ monitored runs

REPORT_COLUMNS = ("t", "h", "energy_u2", "energy_ux2", "energy_rho2", "min_yxi", "compat_residual")


def energy_split(X: LagrangianState, threshold: float = BREAKING_THRESHOLD) -> dict:
    """h split into int u^2 dx, int u_x^2 dx (plus any concentrated part) and int rho^2 dx."""
    h = X.h
    u2 = quad(X.U**2 * X.yxi)
    ok = X.yxi > threshold * (1.0 + h)
    rho2 = quad(np.where(ok, X.r**2 / np.where(ok, X.yxi, 1.0), 0.0))
    return {"h": h, "energy_u2": u2, "energy_ux2": h - u2 - rho2, "energy_rho2": rho2}


def report_row(t: float, X: LagrangianState) -> dict:
    row = {"t": float(t)}
    row.update(energy_split(X))
    row["min_yxi"] = float(np.min(X.yxi))
    row["compat_residual"] = float(np.max(np.abs(compat_residual(X))))
    return row


@dataclass
class SimReport:
    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)
    kernel_method: str = "fast"
    t_c: float | None = None
    min_yxi_over_run: float = float("inf")

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(REPORT_COLUMNS)
            for r in self.rows:
                w.writerow([repr(float(r[c])) for c in REPORT_COLUMNS])

    def write_events(self, path) -> None:
        with open(path, "w") as fh:
            json.dump([e.to_json() for e in self.events], fh, indent=1)


@dataclass
class Run:
    times: list
    states: list
    report: SimReport
    step_times: np.ndarray
    step_min_yxi: np.ndarray
    t_c: float | None
    state_at_min: LagrangianState | None
    dt: float


def estimate_tc(times: np.ndarray, values: np.ndarray) -> float:
    """Argmin of sampled values refined by a parabola through the three nearest samples."""
    k = int(np.argmin(values))
    if k == 0 or k == len(values) - 1:
        return float(times[k])
    t0, t1, t2 = times[k - 1:k + 2]
    v0, v1, v2 = values[k - 1:k + 2]
    den = (t0 - t1) * (t0 - t2) * (t1 - t2)
    a = (t2 * (v1 - v0) + t1 * (v0 - v2) + t0 * (v2 - v1)) / den
    b = (t2**2 * (v0 - v1) + t1**2 * (v2 - v0) + t0**2 * (v1 - v2)) / den
    if a <= 0:
        return float(t1)
    return float(min(max(-b / (2 * a), t0), t2))


def simulate(
    X0: LagrangianState,
    T: float,
    dt: float | None = None,
    output_times=None,
    method: str = "fast",
    conserve: bool = True,
    breaking_threshold: float = BREAKING_THRESHOLD,
    hard_drift: float = 1e-4,
    keep_state_at_min: bool = True,
) -> Run:
    """Evolve with monitors; record states and report rows at output times.

    Output times are rounded to the nearest step. Breaking is watched at every
    step: each stretch of steps with min yxi below the threshold yields the
    events of its deepest state. A relative energy drift above hard_drift, or
    non-finite values, abort the run with InvariantBreach.
    """
    dt = default_dt(X0.grid.n) if dt is None else dt
    if T < 0:
        raise ValueError("T must be nonnegative")
    k = _nsteps(T, dt) if T > 0 else 0
    dt = T / k if k else dt
    if output_times is None:
        output_times = [0.0, T]
    out_steps = sorted({int(round(t / dt)) for t in output_times if -1e-12 <= t <= T + 1e-12})
    out_set = set(out_steps)
    stepper = TimeStepper(dt, method=method, conserve=conserve)
    xi = X0.grid.nodes
    S = _pack(X0)
    h0 = X0.h
    report = SimReport(kernel_method=method)
    times, states = [], []
    step_min = np.empty(k + 1)
    step_min[0] = float(np.min(X0.yxi))
    best = (step_min[0], X0)

    def record(i, X):
        t = i * dt
        times.append(t)
        states.append(X)
        report.rows.append(report_row(t, X))

    limit = breaking_threshold * (1.0 + h0)
    episode = None  # (min yxi, step, state) of the current breaking stretch

    def close(ep):
        report.events.extend(detect_breaking(ep[2], breaking_threshold, ep[1] * dt))

    if 0 in out_set:
        record(0, X0)
    if step_min[0] < limit:
        episode = (step_min[0], 0, X0)
    for i in range(1, k + 1):
        S = stepper.step(xi, S)
        m = float(np.min(S[2]))
        step_min[i] = m
        if not np.all(np.isfinite(S)):
            raise InvariantBreach(f"non-finite values at t={i * dt:.6g}", _unpack(X0, S), i * dt)
        if m < limit:
            if episode is None or m < episode[0]:
                episode = (m, i, _unpack(X0, S))
        elif episode is not None:
            close(episode)
            episode = None
        if i in out_set or (keep_state_at_min and m < best[0]):
            X = _unpack(X0, S)
            if keep_state_at_min and m < best[0]:
                best = (m, X)
            if i in out_set:
                drift = abs(X.h - h0) / max(h0, 1e-300)
                if drift > hard_drift:
                    raise InvariantBreach(f"energy drift {drift:.3e} at t={i * dt:.6g}", X, i * dt)
                record(i, X)
    if episode is not None:
        close(episode)
    step_times = np.arange(k + 1) * dt
    t_c = estimate_tc(step_times, step_min) if len(step_min) > 2 else None
    report.t_c = t_c
    report.min_yxi_over_run = float(np.min(step_min))
    return Run(times, states, report, step_times, step_min, t_c, best[1] if keep_state_at_min else None, dt)


def monitor_report(run: Run) -> SimReport:
    return run.report
