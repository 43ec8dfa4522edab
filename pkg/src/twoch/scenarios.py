"""Initial data, the kappa/eta normalization, weak-form residuals and the vanishing-density sweep."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .evolution import Run, simulate
from .kernels import eulerian_p, green, green_x
from .state import EulerianState, LagrangianState, PeriodicGrid
from .transform import eulerian_to_lagrangian, lagrangian_to_eulerian, project


class UnsupportedParameterError(ValueError):
    pass


# ------------------------------------------------------------ normalization

@dataclass(frozen=True)
class NormalizationParams:
    kappa: float = 0.0
    eta: float = 1.0

    def __post_init__(self):
        if not self.eta > 0:
            raise UnsupportedParameterError("eta must be positive")

    @property
    def alpha(self) -> float:
        return 0.5 * self.kappa

    @property
    def beta(self) -> float:
        return self.eta


def _shifted(values: np.ndarray, shift: float) -> np.ndarray:
    """g(x) = f(x - shift) for periodic node samples, by trigonometric interpolation."""
    n = len(values)
    if shift == 0.0:
        return values.copy()
    k = np.fft.fftfreq(n, 1.0 / n)
    return np.real(np.fft.ifft(np.fft.fft(values) * np.exp(-2j * np.pi * k * shift)))


def normalize(u: np.ndarray, rho: np.ndarray, kappa: float, eta: float, t: float = 0.0):
    """(v, tau) with v(t,x) = u(t, x - alpha t) + alpha, tau = sqrt(eta) rho(t, x - alpha t)."""
    p = NormalizationParams(kappa, eta)
    a = p.alpha
    v = _shifted(np.asarray(u, float), a * t) + a
    tau = np.sqrt(p.beta) * _shifted(np.asarray(rho, float), a * t)
    return v, tau


def denormalize(v: np.ndarray, tau: np.ndarray, kappa: float, eta: float, t: float = 0.0):
    p = NormalizationParams(kappa, eta)
    a = p.alpha
    u = _shifted(np.asarray(v, float) - a, -a * t)
    rho = _shifted(np.asarray(tau, float), -a * t) / np.sqrt(p.beta)
    return u, rho


# ------------------------------------------------------------ initial data

def make_peakon_antipeakon(p: float, q: float, rho0, grid: PeriodicGrid) -> EulerianState:
    """u0 = p G(x - (1/2 - q)) - p G(x - (1/2 + q)) with G the periodic Green function.

    rho0 is a constant or an array of node values. u0_x at a crest is the mean of
    the one-sided slopes.
    """
    if not 0 < q < 0.5:
        raise ValueError("q must lie in (0, 1/2)")
    x = grid.nodes
    a, b = 0.5 - q, 0.5 + q
    u = p * green(x - a) - p * green(x - b)
    ux = p * green_x(x - a) - p * green_x(x - b)
    rho = np.broadcast_to(np.asarray(rho0, float), (grid.n,)).copy()
    return EulerianState.from_fields(grid, u, ux, rho)


def make_smooth_fourier(coeffs, rho0, grid: PeriodicGrid, rho_coeffs=()) -> EulerianState:
    """u0 = sum_k (a_k sin 2 pi k x + b_k cos 2 pi k x) for coeffs [(k, a_k, b_k), ...].

    rho0 is the mean density; rho_coeffs adds modes to it in the same format.
    """
    x = grid.nodes

    def series(cs, base=0.0):
        f = np.full(grid.n, float(base))
        fx = np.zeros(grid.n)
        for k, a, b in cs:
            w = 2 * np.pi * k
            f += a * np.sin(w * x) + b * np.cos(w * x)
            fx += w * (a * np.cos(w * x) - b * np.sin(w * x))
        return f, fx

    u, ux = series(coeffs)
    rho, _ = series(rho_coeffs, rho0)
    return EulerianState.from_fields(grid, u, ux, rho)


def make_rest(c: float, grid: PeriodicGrid) -> EulerianState:
    z = np.zeros(grid.n)
    return EulerianState.from_fields(grid, z, z, np.full(grid.n, float(c)))


def make_random_state(grid: PeriodicGrid, rng: np.random.Generator, modes: int = 4, amp: float = 0.1,
                      rho_floor: float = 0.0, atom: bool = False) -> EulerianState:
    """Random smooth Fourier data (u and rho), optionally with one atom in mu."""
    k = np.arange(1, modes + 1)
    cu = [(int(kk), float(a), float(b)) for kk, a, b in zip(k, *(rng.normal(size=(2, modes)) * amp / k))]
    cr = [(int(kk), float(a), float(b)) for kk, a, b in zip(k, *(rng.normal(size=(2, modes)) * 0.5 * amp / k))]
    s = make_smooth_fourier(cu, rho_floor + float(rng.uniform(0.0, 0.5)), grid, cr)
    if not atom:
        return s
    atoms = ((float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.05, 0.5))),)
    return EulerianState.from_fields(grid, s.u, s.ux, s.rho, atoms)


# Tuned so that the symmetric pair collides well inside t in (0, 3); see the README.
FIG_P = 2.0
FIG_Q = 0.2
SMOOTH_COEFFS = ((1, 0.2, 0.0), (2, 0.0, 0.05))


@dataclass
class Scenario:
    kind: str = "peakon_antipeakon"
    p: float = FIG_P
    q: float = FIG_Q
    rho0: float = 0.0
    n: int = 512
    T: float = 3.0
    dt: float | None = None
    output_every: float = 0.05
    coeffs: tuple = SMOOTH_COEFFS
    snapshot: str | None = None
    extra: dict = field(default_factory=dict)

    def grid(self) -> PeriodicGrid:
        return PeriodicGrid(self.n)

    def initial(self) -> EulerianState:
        g = self.grid()
        if self.kind == "peakon_antipeakon":
            return make_peakon_antipeakon(self.p, self.q, self.rho0, g)
        if self.kind == "smooth_fourier":
            return make_smooth_fourier(self.coeffs, self.rho0, g)
        if self.kind == "rest":
            return make_rest(self.rho0, g)
        if self.kind == "custom_snapshot":
            from .state import read_snapshot
            s = read_snapshot(self.snapshot)
            if isinstance(s, LagrangianState):
                s = lagrangian_to_eulerian(s)
            return s
        raise ValueError(f"unknown scenario kind {self.kind!r}")

    def output_times(self) -> list:
        m = int(round(self.T / self.output_every))
        return [i * self.T / m for i in range(m + 1)]

    def run(self, **kw) -> Run:
        X0 = eulerian_to_lagrangian(self.initial())
        return simulate(X0, self.T, self.dt, self.output_times(), **kw)

    def manifest(self) -> dict:
        d = {k: getattr(self, k) for k in ("kind", "p", "q", "rho0", "n", "T", "dt", "output_every")}
        d["coeffs"] = [list(c) for c in self.coeffs]
        d["note"] = "p and q are tuned so that the rho0 = 0 pair collides inside (0, T)"
        return d


PRESETS = {
    "fig1": dict(kind="peakon_antipeakon", rho0=0.0),
    "fig2": dict(kind="peakon_antipeakon", rho0=0.5),
    "rest": dict(kind="rest", rho0=0.5, T=5.0),
    "smooth": dict(kind="smooth_fourier", rho0=0.5, T=1.0),
}


# ------------------------------------------------------------ weak-form residuals

def bump(t, T):
    """C-infinity bump on [0, T): exp(1 - 1/(1 - (t/T)^2)), equal to 1 at t = 0."""
    t = np.asarray(t, dtype=float)
    s = t / T
    out = np.zeros_like(s)
    m = np.abs(s) < 1
    out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m] ** 2))
    return out


def bump_t(t, T):
    t = np.asarray(t, dtype=float)
    s = t / T
    out = np.zeros_like(s)
    m = np.abs(s) < 1
    sm = s[m]
    out[m] = np.exp(1.0 - 1.0 / (1.0 - sm**2)) * (-2.0 * sm / (1.0 - sm**2) ** 2) / T
    return out


@dataclass(frozen=True)
class TestFunction:
    __test__ = False  # not a pytest class

    T: float
    kind: str
    k: int

    def space(self, x):
        w = 2 * np.pi * self.k
        return np.cos(w * x) if self.kind == "cos" else np.sin(w * x)

    def space_x(self, x):
        w = 2 * np.pi * self.k
        return -w * np.sin(w * x) if self.kind == "cos" else w * np.cos(w * x)

    def label(self) -> str:
        return f"B({self.T:g})*{self.kind}(2pi*{self.k}x)"


def default_test_functions(T: float) -> list:
    out = []
    for frac in (1.0, 0.75, 0.5):
        for kind, k in (("cos", 1), ("sin", 1), ("cos", 2), ("sin", 2)):
            out.append(TestFunction(frac * T, kind, k))
    return out


class SamplingError(ValueError):
    pass


def _time_weights(times: np.ndarray) -> np.ndarray:
    dt = np.diff(times)
    w = np.zeros(len(times))
    w[:-1] += 0.5 * dt
    w[1:] += 0.5 * dt
    return w


def weak_residuals(times, eulerian, lagrangian, tests=None) -> dict:
    """Residuals of the four weak identities for each test function.

    times: increasing snapshot times starting at 0 and covering the supports of
    the temporal bumps. eulerian/lagrangian: matching snapshot lists. Space
    integrals against dx use the x-grid trapezoid rule; integrals against the
    measure mu are evaluated through its definition as the push-forward of
    nu dxi by y.
    Returns {"weak1": array, ..., "weak4": array, "labels": [...]}.
    """
    times = np.asarray(times, dtype=float)
    if len(times) < 5 or abs(times[0]) > 1e-12:
        raise SamplingError("need at least five snapshots starting at t = 0")
    tests = tests or default_test_functions(times[-1])
    if max(tf.T for tf in tests) > times[-1] + 1e-12:
        raise SamplingError("test-function support extends past the last snapshot")
    if np.max(np.diff(times)) > 0.05 * min(tf.T for tf in tests):
        raise SamplingError("snapshots too sparse for the shortest temporal bump")
    wt = _time_weights(times)
    res = {f"weak{i}": np.zeros(len(tests)) for i in range(1, 5)}

    s0, X0 = eulerian[0], lagrangian[0]
    x0 = s0.grid.nodes
    for j, tf in enumerate(tests):
        phi0 = tf.space(x0)
        init_u = np.mean(s0.u * phi0)
        init_rho = np.mean(s0.rho * phi0)
        init_mu = np.mean(tf.space(X0.y) * X0.nu)
        res["weak1"][j] -= init_u
        res["weak3"][j] -= init_rho
        res["weak4"][j] -= init_mu

    for i, (t, s, X) in enumerate(zip(times, eulerian, lagrangian)):
        if wt[i] == 0:
            continue
        x = s.grid.nodes
        P, Px = eulerian_p(s)
        u, ux, rho = s.u, s.ux, s.rho
        y = X.y
        for j, tf in enumerate(tests):
            B = float(bump(t, tf.T))
            Bt = float(bump_t(t, tf.T))
            if B == 0.0 and Bt == 0.0:
                continue
            ph = tf.space(x)
            phx = tf.space_x(x)
            # u u_x phi is integrated by parts as -(u^2/2) phi_x
            w1 = np.mean(-u * ph * Bt - 0.5 * u**2 * phx * B + Px * ph * B)
            # P - P_xx = u^2/2 + mu/2 in the sense of measures
            w2 = B * (np.mean((P - 0.5 * u**2) * ph + Px * phx) - 0.5 * np.mean(tf.space(y) * X.nu))
            w3 = np.mean(-rho * ph * Bt - u * rho * phx * B)
            U = X.U
            w4 = (np.mean((-tf.space(y) * Bt - U * tf.space_x(y) * B) * X.nu)
                  + B * np.mean((u**3 - 2.0 * P * u) * phx))
            res["weak1"][j] += wt[i] * w1
            res["weak2"][j] += wt[i] * w2
            res["weak3"][j] += wt[i] * w3
            res["weak4"][j] += wt[i] * w4
    res["labels"] = [tf.label() for tf in tests]
    return res


def run_for_weak_check(s0: EulerianState, T: float, dt: float, every: int = 1, method: str = "fast"):
    """Run from s0 and return (times, eulerian snapshots, lagrangian snapshots in H)."""
    X0 = eulerian_to_lagrangian(s0)
    steps = int(round(T / dt))
    out_times = [i * dt for i in range(0, steps + 1, every)]
    run = simulate(X0, T, dt, out_times, method=method, keep_state_at_min=False)
    lag = [project(X) for X in run.states]
    eul = [lagrangian_to_eulerian(X) for X in lag]
    return np.array(run.times), eul, lag


# ------------------------------------------------------------ vanishing density

def _sweep_member(args):
    """u on the x-grid at the probe times for one density floor (runs in a worker)."""
    fields, rho0, probe_times, dt = args
    sc = Scenario(**{**fields, "rho0": rho0, "T": max(probe_times)})
    s0 = sc.initial()
    run = simulate(eulerian_to_lagrangian(s0), sc.T, dt if dt is not None else sc.dt, probe_times,
                   keep_state_at_min=False)
    # T_0 is the identity on D, so t = 0 reports u0 itself rather than M(L(u0))
    return run.t_c, [s0.u if t == 0 else lagrangian_to_eulerian(project(X)).u
                     for t, X in zip(run.times, run.states)]


def vanishing_density_sweep(u_scenario: Scenario, floors, probe_times, dt=None, workers: int = 1):
    """sup-norm distance between u with rho0 = d and the rho0 = 0 reference at the probe times.

    Returns dict with 'floors', 'probe_times', 'table' (len(floors) x len(probe_times)),
    and the reference collision time 't_c'. With workers > 1 each floor runs in
    its own process.
    """
    probe_times = [float(t) for t in probe_times]
    fields = dict(u_scenario.__dict__)
    jobs = [(fields, 0.0, probe_times, dt)] + [(fields, float(d), probe_times, dt) for d in floors]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_member, jobs))
    else:
        results = [_sweep_member(j) for j in jobs]
    t_c, ref_u = results[0]
    table = np.zeros((len(floors), len(probe_times)))
    for a, (_, us) in enumerate(results[1:]):
        for b in range(len(probe_times)):
            table[a, b] = float(np.max(np.abs(us[b] - ref_u[b])))
    return {"floors": list(floors), "probe_times": probe_times, "table": table, "t_c": t_c}
