"""Maps between Eulerian and Lagrangian variables and the relabeling group action.

Point fields (zeta, U) are composed by periodic linear interpolation. Fields that
transform like densities under relabeling (yxi, Uxi, nu, r) are remapped
conservatively: node values are read as cell averages, their running integral is
interpolated by a monotone cubic, and the new cell averages are differences of
that integral at the relabeled cell edges. This keeps total energy h exactly
unchanged by relabeling and projection.
"""
from __future__ import annotations

import numpy as np
from scipy.interpolate import Akima1DInterpolator, CubicHermiteSpline, CubicSpline, PchipInterpolator

from .state import (
    EulerianState,
    LagrangianState,
    PeriodicGrid,
    PeriodicMeasure,
    Relabeling,
    integral_y,
    quad,
)


class BisectionError(RuntimeError):
    pass


class InconsistentStateError(ValueError):
    pass


BISECT_RTOL = 1e-13
BISECT_MAXIT = 60
PLATEAU_THRESHOLD = 1e-8
SHIFT_EPS = 1e-13


# ------------------------------------------------------------ cumulative energy

class CumulativeEnergy:
    """F_mu(x) = mu([0,x)) for x >= 0 and -mu([x,0)) for x < 0.

    The absolutely continuous part is the periodic modified-Akima interpolant of
    the density samples, integrated exactly. Atoms count on half-open
    intervals, so F_mu jumps just to the right of an atom.
    """

    def __init__(self, mu: PeriodicMeasure):
        d = np.asarray(mu.density, dtype=float)
        self.n = len(d)
        self.dx = 1.0 / self.n
        self.d = d
        self.density = _periodic_makima(d)
        anti = self.density.antiderivative()
        self._anti = anti
        self._anti0 = float(anti(0.0))
        self.ac_total = float(anti(1.0)) - self._anti0
        self.atom_pos = np.array([x for x, _ in mu.atoms], dtype=float)
        masses = np.array([m for _, m in mu.atoms], dtype=float)
        self.atom_cum = np.concatenate([[0.0], np.cumsum(masses)])
        self.atom_mass = masses
        self.h = self.ac_total + float(self.atom_cum[-1])

    def ac(self, xr: np.ndarray) -> np.ndarray:
        """Absolutely continuous part for xr in [0, 1)."""
        return self._anti(xr) - self._anti0

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        p = np.floor(x)
        xr = x - p
        # guard xr == 1.0 from roundoff
        wrap = xr >= 1.0
        p = np.where(wrap, p + 1, p)
        xr = np.where(wrap, 0.0, xr)
        atoms = self.atom_cum[np.searchsorted(self.atom_pos, xr, side="left")]
        return p * self.h + self.ac(xr) + atoms


def f_mu(mu: PeriodicMeasure, x):
    return CumulativeEnergy(mu)(x)


def _interp(values: np.ndarray, at) -> np.ndarray:
    """Periodic linear interpolation of node samples."""
    n = len(values)
    return np.interp(at, np.arange(n) / n, values, period=1.0)


def _periodic_makima(values: np.ndarray) -> Akima1DInterpolator:
    """Modified-Akima interpolant of periodic node samples, valid on [0, 1]."""
    n = len(values)
    pad = 3
    x = np.arange(-pad, n + pad) / n
    v = np.concatenate([values[-pad:], values, values[:pad]])
    return Akima1DInterpolator(x, v, method="makima")


def _interp_cubic(values: np.ndarray, at) -> np.ndarray:
    """Periodic modified-Akima interpolation: third order where the samples are
    smooth, no overshoot next to jumps (such as u_x at a peak)."""
    return _periodic_makima(values)(np.mod(at, 1.0))


# ------------------------------------------------------------ Eulerian -> Lagrangian

def eulerian_to_lagrangian_raw(s: EulerianState, grid: PeriodicGrid | None = None) -> LagrangianState:
    """The map L~: characteristics y from the cumulative energy, then the other fields."""
    grid = grid or s.grid
    F = CumulativeEnergy(s.mu)
    h = F.h
    xi = grid.nodes
    target = (1.0 + h) * xi

    # sup{y : F(y) + y < target}; F(y)+y is strictly increasing, F(y)+y in [y, y+h] on [0,1)
    lo = np.full(grid.n, -1.0)
    hi = np.full(grid.n, 1.0)
    for _ in range(BISECT_MAXIT):
        mid = 0.5 * (lo + hi)
        below = F(mid) + mid < target
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= BISECT_RTOL * np.maximum(1.0, np.abs(hi))):
            break
    else:
        bad = int(np.argmax(hi - lo))
        raise BisectionError(f"characteristic inversion did not converge at node {bad}: bracket {hi[bad] - lo[bad]:.3e}")
    y = hi.copy()

    plateau = np.zeros(grid.n, dtype=bool)
    for x0, m in zip(F.atom_pos, F.atom_mass):
        left = float(F(x0)) + x0
        on = (target > left) & (target <= left + m)
        y[on] = x0
        plateau |= on

    u = _interp_cubic(s.u, y)
    ux = _interp_cubic(s.ux, y)
    rho = _interp_cubic(s.rho, y)
    dens = u**2 + ux**2 + rho**2
    yxi = np.where(plateau, 0.0, (1.0 + h) / (1.0 + dens))
    nu = (1.0 + h) - yxi
    Uxi = np.where(plateau, 0.0, ux * yxi)
    r = np.where(plateau, 0.0, rho * yxi)
    return LagrangianState(grid, y - xi, u, yxi, Uxi, nu, r)


# ------------------------------------------------------------ conservative remap

class _PeriodicCumulative:
    """Running integral of cell averages, cubic interpolated, periodic.

    With monotone=True (nonnegative densities) the interpolant is PCHIP, so the
    remapped density stays nonnegative. Signed densities use a periodic cubic
    spline of the detrended integral instead; PCHIP would flatten the integral
    at every sign change of the density.
    """

    def __init__(self, d: np.ndarray, monotone: bool = True):
        n = len(d)
        dx = 1.0 / n
        self.dx = dx
        self.total = float(np.sum(d) * dx)
        self.monotone = monotone
        c = np.concatenate([[0.0], np.cumsum(d) * dx])
        if monotone:
            knots = (np.arange(-3, n + 4) - 0.5) * dx
            vals = np.concatenate([
                [c[n - 3] - self.total, c[n - 2] - self.total, c[n - 1] - self.total],
                c,
                [self.total + c[1], self.total + c[2], self.total + c[3]],
            ])
            self.interp = PchipInterpolator(knots, vals, extrapolate=True)
        else:
            knots = (np.arange(n + 1) - 0.5) * dx
            vals = c - self.total * (knots + 0.5 * dx)
            vals[-1] = vals[0]
            self.interp = CubicSpline(knots, vals, bc_type="periodic")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        p = np.floor(x + 0.5 * self.dx)
        if self.monotone:
            return p * self.total + self.interp(x - p)
        return self.total * (x + 0.5 * self.dx) + self.interp(x - p)


def _edges(f: Relabeling) -> np.ndarray:
    """f at the cell edges xi_j - dx/2, j = 0..n, by cubic Hermite interpolation."""
    n = f.grid.n
    xi = f.grid.nodes
    xe = np.concatenate([xi[-2:] - 1.0, xi, xi[:2] + 1.0])
    fe = np.concatenate([f.f[-2:] - 1.0, f.f, f.f[:2] + 1.0])
    de = np.concatenate([f.fxi[-2:], f.fxi, f.fxi[:2]])
    spline = CubicHermiteSpline(xe, fe, de)
    return spline((np.arange(n + 1) - 0.5) / n)


def _second_diff(d: np.ndarray) -> np.ndarray:
    return np.roll(d, -1) - 2.0 * d + np.roll(d, 1)


def _cumulative(d: np.ndarray, monotone: bool = True) -> _PeriodicCumulative:
    """Running integral of node samples.

    The monotone path treats node values as cell averages. The spline path
    first converts node values to cell averages (fourth order in dx), which
    removes the point/average mismatch; use _from_averages on its output.
    """
    if monotone:
        return _PeriodicCumulative(d, True)
    return _PeriodicCumulative(d + _second_diff(d) / 24.0, False)


def _from_averages(avg: np.ndarray, monotone: bool) -> np.ndarray:
    """Exact inverse of the point-to-average map d -> d + d''dx^2/24 (a circulant solve)."""
    if monotone:
        return avg
    n = len(avg)
    symbol = 1.0 + (2.0 * np.cos(2.0 * np.pi * np.arange(n // 2 + 1) / n) - 2.0) / 24.0
    return np.fft.irfft(np.fft.rfft(avg) / symbol, n)


def _remap(d: np.ndarray, edges: np.ndarray, monotone: bool = True) -> np.ndarray:
    """Density composed with the relabeling, conserving the period integral."""
    avg = np.diff(_cumulative(d, monotone)(edges)) * len(d)
    return _from_averages(avg, monotone)


def _hermite(values: np.ndarray, slopes: np.ndarray, at) -> np.ndarray:
    """Periodic cubic Hermite interpolation of node samples with given node slopes."""
    n = len(values)
    at = np.asarray(at, dtype=float)
    s = np.mod(at, 1.0) * n
    j = np.minimum(np.floor(s).astype(int), n - 1)
    t = s - j
    k = (j + 1) % n
    dx = 1.0 / n
    h00 = (1 + 2 * t) * (1 - t) ** 2
    h10 = t * (1 - t) ** 2
    h01 = t * t * (3 - 2 * t)
    h11 = t * t * (t - 1)
    return h00 * values[j] + h10 * dx * slopes[j] + h01 * values[k] + h11 * dx * slopes[k]


def _point_values(X: LagrangianState, at: np.ndarray):
    """zeta and U of X at arbitrary points.

    Cubic Hermite interpolation with slopes yxi - 1 and Uxi. In cells where the
    cubic for y could fail to be monotone (slopes too steep against the secant)
    both fields fall back to linear interpolation, so y stays nondecreasing.
    """
    n = X.grid.n
    y = X.y
    sec = (np.roll(y, -1) - y) * n
    sec[-1] += n  # y(xi + 1) = y(xi) + 1
    a = X.yxi
    b = np.roll(X.yxi, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ok = np.where(sec > 0, a**2 + b**2 <= 9.0 * sec**2, (a == 0) & (b == 0))
    cell = np.minimum(np.floor(np.mod(at, 1.0) * n).astype(int), n - 1)
    good = ok[cell]
    zeta = np.where(good, _hermite(X.zeta, X.yxi - 1.0, at), _interp(X.zeta, at))
    U = np.where(good, _hermite(X.U, X.Uxi, at), _interp(X.U, at))
    return zeta, U


def _compose_points(X: LagrangianState, at: np.ndarray):
    """zeta and U of X composed with the map whose node values are `at`."""
    zeta, U = _point_values(X, at)
    return zeta + at - X.grid.nodes, U


def relabel(X: LagrangianState, f: Relabeling) -> LagrangianState:
    """Group action X o f."""
    if f.grid.n != X.grid.n:
        raise ValueError("relabeling and state grids differ")
    edges = _edges(f)
    zeta, U = _compose_points(X, f.f)
    yxi, nu = _remap_nonneg(X.yxi, X.nu, edges)
    return LagrangianState(X.grid, zeta, U, yxi, _remap(X.Uxi, edges, False), nu, _remap(X.r, edges, False))


def _remap_nonneg(yxi, nu, edges):
    """Remap the two nonnegative densities together.

    The spline remap is linear and higher order, so it keeps yxi + nu constant
    when it was; it is used unless it undershoots below zero somewhere, in which
    case both fields go through the monotone remap.
    """
    a = _remap(yxi, edges, False)
    b = _remap(nu, edges, False)
    if np.min(a) >= 0.0 and np.min(b) >= 0.0:
        return a, b
    return _remap(yxi, edges), _remap(nu, edges)


def _bisect_increasing(fun, targets, lo, hi, tol=1e-15, maxit=80):
    for _ in range(maxit):
        mid = 0.5 * (lo + hi)
        below = fun(mid) < targets
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.all(hi - lo <= tol):
            break
    return 0.5 * (lo + hi)


def project_F0(X: LagrangianState) -> LagrangianState:
    """Pi_1: relabel by the inverse of f = (y + int_0^xi nu)/(1+h).

    nu is remapped conservatively and yxi is set from yxi + nu = const, the
    constant being the period mean of yxi + nu (equal to 1 + h whenever the
    trapezoid mean of yxi is exactly 1). The spline remap is tried first; the
    monotone one is used if the spline result is not admissible.
    """
    if _in_F0(X):
        # the relabeling reduces to a shift by y(0)/(1+h)
        return shift(X, float(X.zeta[0]) / float(np.mean(X.yxi + X.nu)))
    out = _project_F0(X, monotone=False)
    return out if out is not None else _project_F0(X, monotone=True)


def _project_F0(X: LagrangianState, monotone: bool):
    n = X.grid.n
    # S is the sum of the two interpolants, not the interpolant of the sum, so
    # that on every cell the remapped nu never exceeds the remapped yxi + nu
    Y = _cumulative(X.yxi, monotone)
    N = _cumulative(X.nu, monotone)

    def S(xi):
        return Y(xi) + N(xi)

    S0 = float(S(0.0))
    y0 = float(X.zeta[0])
    scale = Y.total + N.total

    def f(xi):
        return (y0 + S(xi) - S0) / scale

    f0 = y0 / scale
    xi = X.grid.nodes
    edge_targets = (np.arange(n + 1) - 0.5) / n
    # f - id is bounded by |f0| + 1, so the inverse lies within that distance of the target
    span = abs(f0) + 1.5
    g_nodes = _bisect_increasing(f, xi, xi - span, xi + span)
    g_edges = _bisect_increasing(f, edge_targets, edge_targets - span, edge_targets + span)
    nu = _from_averages(np.diff(N(g_edges)) * n, monotone)
    if not monotone:
        if np.any(np.diff(g_edges) <= 0) or np.min(nu) < 0 or np.min(scale - nu) < 0:
            return None
    nu = np.clip(nu, 0.0, scale)
    zeta, U = _compose_points(X, g_nodes)
    # scale = mean(yxi) + h, which is 1 + h up to the quadrature error of mean(yxi)
    yxi = scale - nu
    Uxi = _from_averages(np.diff(_cumulative(X.Uxi, False)(g_edges)) * n, False)
    r = _from_averages(np.diff(_cumulative(X.r, False)(g_edges)) * n, False)
    return LagrangianState(X.grid, zeta, U, yxi, Uxi, nu, r)


def shift(X: LagrangianState, a: float) -> LagrangianState:
    """X(xi - a), using y(xi + 1) = y(xi) + 1.

    Whole cells are moved by an exact roll; only the remainder is remapped.
    """
    n = X.grid.n
    xi = X.grid.nodes
    m = int(np.round(a * n))
    if m:
        j = np.arange(n) - m
        src = j % n
        zeta = X.zeta[src] + xi[src] + (j - src) / n - xi
        X = LagrangianState(X.grid, zeta, X.U[src], X.yxi[src], X.Uxi[src], X.nu[src], X.r[src])
        a = a - m / n
    if abs(a) <= SHIFT_EPS:
        # a roundoff-sized remainder would only inject noise at kinks
        return X
    zeta, U = _compose_points(X, xi - a)
    edges = (np.arange(n + 1) - 0.5) / n - a
    yxi, nu = _remap_nonneg(X.yxi, X.nu, edges)
    s = X.yxi + X.nu
    if np.ptp(s) <= 1e-12 * float(np.max(s)):
        # a constant stays constant, so yxi + nu = 1 + h survives the shift exactly
        yxi = np.full(n, s[0]) - nu
    return LagrangianState(X.grid, zeta, U, yxi, _remap(X.Uxi, edges, False), nu, _remap(X.r, edges, False))


def center(X: LagrangianState) -> LagrangianState:
    """Pi_2: shift the label so that the integral of y over a period vanishes."""
    return shift(X, integral_y(X))


def project(X: LagrangianState) -> LagrangianState:
    """Pi = Pi_2 o Pi_1, landing in H.

    On F0, Pi_1 is the shift by y(0)/(1+h) and the two shifts combine into a
    single shift by int y, so states already in H are returned unchanged.
    """
    if _in_F0(X):
        return shift(X, integral_y(X))
    return center(project_F0(X))


def _in_F0(X: LagrangianState) -> bool:
    s = X.yxi + X.nu
    return bool(np.ptp(s) <= 1e-14 * float(np.max(s)))


def eulerian_to_lagrangian(s: EulerianState, grid: PeriodicGrid | None = None) -> LagrangianState:
    """L = Pi o L~."""
    return project(eulerian_to_lagrangian_raw(s, grid))


# ------------------------------------------------------------ Lagrangian -> Eulerian

def _runs(mask: np.ndarray) -> list[np.ndarray]:
    """Index arrays of cyclically contiguous True runs."""
    n = len(mask)
    if not mask.any():
        return []
    if mask.all():
        return [np.arange(n)]
    start = int(np.argmin(mask))  # a False entry: runs cannot wrap past it
    order = (np.arange(n) + start) % n
    m = mask[order]
    out = []
    i = 0
    while i < n:
        if m[i]:
            j = i
            while j < n and m[j]:
                j += 1
            out.append(order[i:j])
            i = j
        else:
            i += 1
    return out


def plateau_mask(X: LagrangianState, threshold: float = PLATEAU_THRESHOLD) -> np.ndarray:
    return X.yxi < threshold * (1.0 + X.h)


def lagrangian_to_eulerian(
    X: LagrangianState,
    grid: PeriodicGrid | None = None,
    threshold: float = PLATEAU_THRESHOLD,
    plateau_tol: float = 1e-3,
) -> EulerianState:
    """The map M: u = U o y^{-1}, mu = y_#(nu dxi), rho and u_x from the density ratios.

    A plateau on which U spreads by more than plateau_tol * (1 + max|U|) (plus
    the variation allowed by Uxi) is rejected as inconsistent. Near a breaking
    time a coarse grid can flag a two-node plateau with a small genuine spread,
    hence the relative default.
    """
    grid = grid or X.grid
    n = X.grid.n
    dxi = 1.0 / n
    xi = X.grid.nodes
    y = X.y
    flat = plateau_mask(X, threshold)
    Umax = float(np.max(np.abs(X.U)))

    atoms = []
    for run in _runs(flat):
        Urun = X.U[run]
        allowed = plateau_tol * (1.0 + Umax) + 10.0 * float(np.sum(np.abs(X.Uxi[run]))) * dxi
        if float(np.ptp(Urun)) > allowed:
            raise InconsistentStateError(
                f"U varies by {np.ptp(Urun):.3e} across a plateau at nodes {run[0]}..{run[-1]}"
            )
        # unwrap y along the run before averaging (runs may cross xi = 1)
        yr = y[run] + np.where(run < run[0], 1.0, 0.0)
        atoms.append((float(np.mean(yr)) % 1.0, float(np.sum(X.nu[run]) * dxi)))
    atoms = _merge_atoms(atoms)

    xs = grid.nodes
    yext = np.concatenate([y - 1.0, y, y + 1.0])
    xiext = np.concatenate([xi - 1.0, xi, xi + 1.0])
    xi_star = np.interp(xs, yext, xiext)
    # refine inside the bracketing xi-cell against the cubic y used by relabel
    lo = np.floor(xi_star * n) / n
    xi_star = _bisect_increasing(lambda a: a + _point_values(X, a)[0], xs, lo, lo + dxi, tol=1e-14)
    u = _point_values(X, xi_star)[1]

    keep = ~flat
    if not keep.any():
        z = np.zeros(grid.n)
        return EulerianState(grid, u, z, z, PeriodicMeasure(z, tuple(atoms)))
    kx = xi[keep]
    inv = 1.0 / X.yxi[keep]

    def ratio(field):
        return np.interp(xi_star, kx, field[keep] * inv, period=1.0)

    ux = ratio(X.Uxi)
    # densities go through their mass distribution, not point ratios: near
    # breaking nu/yxi is a narrow spike that node sampling would misweigh
    rho = _from_averages(_pushforward_density(X, np.where(flat, 0.0, X.r), grid), False)
    dens = np.maximum(_pushforward_density(X, np.where(flat, 0.0, X.nu), grid, nonneg=True), 0.0)
    # cell averages to point values; kept as averages if that would go negative
    pts = _from_averages(dens, False)
    if np.min(pts) >= 0.0:
        dens = pts
    return EulerianState(grid, u, ux, rho, PeriodicMeasure(dens, tuple(atoms)))


def _pushforward_density(X: LagrangianState, w: np.ndarray, grid: PeriodicGrid, nonneg: bool = False) -> np.ndarray:
    """x-cell averages of y_#(w dxi).

    Smooth route: cubic y at the xi-cell edges, fourth-order cell masses and a
    cubic spline through the cumulative mass against y. It is used when the
    image cells are well resolved (and, for a nonnegative w, the result stays
    nonnegative). Otherwise node j carries w_j dxi over the image of its cell,
    edges are node midpoints and the cumulative goes through a monotone cubic.
    """
    n = X.grid.n
    m = grid.n
    xe = (np.arange(m + 1) - 0.5) / m
    xi_e = (np.arange(n + 1) - 0.5) / n
    y = X.y
    ye = xi_e + _point_values(X, xi_e)[0]
    cum = _cumulative(w, False)
    ce = cum(xi_e) - cum(xi_e[0])
    total = ce[-1]
    gaps = np.diff(ye)
    if np.min(gaps) > 0.05 / n:
        yext = np.concatenate([ye[:-1] - 1.0, ye[:-1], ye + 1.0])
        cext = np.concatenate([ce[:-1] - total, ce[:-1], ce + total])
        avg = np.diff(CubicSpline(yext, cext)(xe)) * m
        if not nonneg or np.min(avg) >= 0.0:
            return avg
    ye = 0.5 * (np.concatenate([[y[-1] - 1.0], y]) + np.concatenate([y, [y[0] + 1.0]]))
    ce = np.concatenate([[0.0], np.cumsum(w)]) / n
    total = ce[-1]
    # extend one period on each side so every x edge is bracketed
    yext = np.concatenate([ye[:-1] - 1.0, ye[:-1], ye + 1.0])
    cext = np.concatenate([ce[:-1] - total, ce[:-1], ce + total])
    # coincident edges (plateaus) are collapsed first
    ym = np.maximum.accumulate(yext)
    keep = np.concatenate([[True], ym[1:] > ym[:-1] + 1e-14])
    G = PchipInterpolator(ym[keep], cext[keep])(xe)
    return np.diff(G) * m


def _merge_atoms(atoms, tol=1e-12):
    merged: dict[float, float] = {}
    for x, m in atoms:
        if m <= 0:
            continue
        for k in list(merged):
            if abs(k - x) < tol:
                merged[k] += m
                break
        else:
            merged[x] = m
    return tuple(sorted(merged.items()))
