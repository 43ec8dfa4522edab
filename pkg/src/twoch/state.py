"""Grids, Eulerian and Lagrangian state containers, norms and set-membership checks.

All functions have period one. Integrals over a period are computed with the
periodic trapezoid rule, i.e. the mean of the node samples.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


class GridMismatchError(ValueError):
    pass


class InvalidRelabelingError(ValueError):
    pass


@dataclass(frozen=True)
class PeriodicGrid:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 8 or self.n % 2:
            raise ValueError(f"grid size must be an even integer >= 8, got {self.n}")

    @property
    def dx(self) -> float:
        return 1.0 / self.n

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n) / self.n


def quad(f: np.ndarray) -> float:
    """Periodic trapezoid rule over one unit period."""
    return float(np.mean(f))


def cumquad(f: np.ndarray) -> np.ndarray:
    """Cumulative trapezoid integral from 0 to each node (periodic samples)."""
    n = len(f)
    inc = 0.5 * (f + np.roll(f, -1)) / n
    return np.concatenate([[0.0], np.cumsum(inc)[:-1]])


def _arr(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class PeriodicMeasure:
    """Positive periodic measure: density samples on a grid plus point masses."""

    density: np.ndarray
    atoms: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "density", _arr(self.density))
        atoms = tuple(sorted((float(x) % 1.0, float(m)) for x, m in self.atoms))
        object.__setattr__(self, "atoms", atoms)

    @property
    def ac_mass(self) -> float:
        return quad(self.density)

    @property
    def atom_mass(self) -> float:
        return float(sum(m for _, m in self.atoms))

    @property
    def h(self) -> float:
        return self.ac_mass + self.atom_mass

    def check(self) -> list[str]:
        problems = []
        if np.any(self.density < 0):
            problems.append("negative density sample")
        if any(m <= 0 for _, m in self.atoms):
            problems.append("nonpositive atom mass")
        xs = [x for x, _ in self.atoms]
        if len(set(xs)) != len(xs):
            problems.append("repeated atom position")
        return problems


@dataclass(frozen=True)
class EulerianState:
    grid: PeriodicGrid
    u: np.ndarray
    ux: np.ndarray
    rho: np.ndarray
    mu: PeriodicMeasure

    def __post_init__(self):
        for name in ("u", "ux", "rho"):
            a = _arr(getattr(self, name))
            if a.shape != (self.grid.n,):
                raise GridMismatchError(f"{name} has shape {a.shape}, grid has {self.grid.n} nodes")
            object.__setattr__(self, name, a)
        if self.mu.density.shape != (self.grid.n,):
            raise GridMismatchError("measure density does not match grid")

    @property
    def x(self) -> np.ndarray:
        return self.grid.nodes

    @classmethod
    def from_fields(cls, grid, u, ux, rho, atoms=()):
        """State whose measure is (u^2 + u_x^2 + rho^2) dx plus optional atoms."""
        u, ux, rho = (np.asarray(a, dtype=float) for a in (u, ux, rho))
        return cls(grid, u, ux, rho, PeriodicMeasure(u**2 + ux**2 + rho**2, atoms))


LAGRANGIAN_FIELDS = ("zeta", "U", "yxi", "Uxi", "nu", "r")


@dataclass(frozen=True)
class LagrangianState:
    """Lagrangian variables on a uniform xi-grid.

    y(xi) = xi + zeta(xi); yxi and Uxi are stored and evolved alongside the
    primary fields.
    """

    grid: PeriodicGrid
    zeta: np.ndarray
    U: np.ndarray
    yxi: np.ndarray
    Uxi: np.ndarray
    nu: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        for name in LAGRANGIAN_FIELDS:
            a = _arr(getattr(self, name))
            if a.shape != (self.grid.n,):
                raise GridMismatchError(f"{name} has shape {a.shape}, grid has {self.grid.n} nodes")
            object.__setattr__(self, name, a)

    @property
    def y(self) -> np.ndarray:
        return self.grid.nodes + self.zeta

    @property
    def h(self) -> float:
        return quad(self.nu)

    def fields(self) -> dict:
        return {k: getattr(self, k) for k in LAGRANGIAN_FIELDS}

    def replace(self, **kw) -> "LagrangianState":
        return replace(self, **kw)

    @classmethod
    def rest(cls, grid: PeriodicGrid, c: float = 0.0) -> "LagrangianState":
        """y = id, U = 0, constant density c (nu = c^2, r = c)."""
        n = grid.n
        z = np.zeros(n)
        return cls(grid, z, z, np.ones(n), z, np.full(n, c * c), np.full(n, float(c)))


def _same_grid(a, b):
    if a.grid.n != b.grid.n:
        raise GridMismatchError(f"grids differ: {a.grid.n} vs {b.grid.n}")


def e_distance(Xa: LagrangianState, Xb: LagrangianState) -> float:
    """E-norm of the difference of two Lagrangian states."""
    _same_grid(Xa, Xb)
    dl1 = lambda f: float(np.mean(np.abs(f)))
    dinf = lambda f: float(np.max(np.abs(f)))
    return (
        dinf(Xa.zeta - Xb.zeta) + dl1(Xa.yxi - Xb.yxi)
        + dinf(Xa.U - Xb.U) + dl1(Xa.Uxi - Xb.Uxi)
        + dl1(Xa.nu - Xb.nu) + dl1(Xa.r - Xb.r)
    )


def e_norm(X: LagrangianState) -> float:
    """||y - id||_W11 + ||U||_W11 + ||nu||_L1 + ||r||_L1."""
    n = X.grid.n
    z = np.zeros(n)
    return e_distance(X, LagrangianState(X.grid, z, z, np.ones(n), z, z, z))


@dataclass
class ValidationReport:
    ok: bool
    checks: dict = field(default_factory=dict)
    c: float = float("nan")
    mass: float = float("nan")

    def failures(self) -> list[str]:
        return [k for k, v in self.checks.items() if not v["passed"]]

    def __str__(self):
        lines = [f"{'PASS' if self.ok else 'FAIL'}"]
        for k, v in self.checks.items():
            lines.append(f"  {k}: {'ok' if v['passed'] else 'violated'} residual={v['residual']:.3e} node={v['node']}")
        return "\n".join(lines)


def _check(residual_arr: np.ndarray, tol: float) -> dict:
    """residual_arr holds nonnegative violation amounts per node."""
    if residual_arr.size == 0:
        return {"passed": True, "residual": 0.0, "node": None}
    i = int(np.argmax(residual_arr))
    r = float(residual_arr[i])
    return {"passed": bool(r <= tol), "residual": r, "node": i if r > tol else None}


C_FLOOR = 1e-12


def compat_residual(X: LagrangianState) -> np.ndarray:
    """Nodewise yxi*nu - (yxi^2 U^2 + Uxi^2 + r^2)."""
    return X.yxi * X.nu - (X.yxi**2 * X.U**2 + X.Uxi**2 + X.r**2)


def validate_F(X: LagrangianState, tol: float = 1e-10) -> ValidationReport:
    fields = X.fields()
    finite = all(np.all(np.isfinite(v)) for v in fields.values())
    checks = {}
    checks["finite"] = {"passed": finite, "residual": 0.0 if finite else float("inf"), "node": None}
    checks["yxi_nonneg"] = _check(np.maximum(-X.yxi, 0.0), tol)
    checks["nu_nonneg"] = _check(np.maximum(-X.nu, 0.0), tol)
    s = X.yxi + X.nu
    c = float(np.min(s))
    checks["yxi_plus_nu_positive"] = _check(np.maximum(C_FLOOR - s, 0.0), 0.0)
    checks["compatibility"] = _check(np.abs(compat_residual(X)), tol)
    # y nondecreasing across nodes, including the wrap y(1) = y(0) + 1
    y = X.y
    dy = np.diff(np.concatenate([y, [y[0] + 1.0]]))
    checks["y_monotone"] = _check(np.maximum(-dy, 0.0), tol)
    ok = all(v["passed"] for v in checks.values())
    return ValidationReport(ok, checks, c=c, mass=X.h)


def validate_D(s: EulerianState, tol: float = 1e-10) -> ValidationReport:
    checks = {}
    target = s.u**2 + s.ux**2 + s.rho**2
    scale = max(1.0, float(np.max(np.abs(target))))
    checks["ac_density"] = _check(np.abs(s.mu.density - target) / scale, tol)
    checks["density_nonneg"] = _check(np.maximum(-s.mu.density, 0.0), 0.0)
    probs = s.mu.check()
    checks["atoms"] = {"passed": not probs, "residual": float(len(probs)), "node": None}
    finite = all(np.all(np.isfinite(a)) for a in (s.u, s.ux, s.rho, s.mu.density))
    checks["finite"] = {"passed": finite, "residual": 0.0 if finite else float("inf"), "node": None}
    ok = all(v["passed"] for v in checks.values())
    return ValidationReport(ok, checks, mass=s.mu.h)


def member_FM(X: LagrangianState, M: float) -> bool:
    return X.h <= M


def integral_y(X: LagrangianState) -> float:
    """Exact-for-trapezoid value of int_0^1 y dxi (y - id is periodic)."""
    return 0.5 + quad(X.zeta)


def member_F0(X: LagrangianState, tol: float = 1e-8) -> bool:
    return bool(np.max(np.abs(X.yxi + X.nu - (1.0 + X.h))) <= tol)


def member_H(X: LagrangianState, tol: float = 1e-8) -> bool:
    return member_F0(X, tol) and abs(integral_y(X)) <= tol


def bm_size(X: LagrangianState) -> float:
    """||U||_W11 + ||yxi||_L1 + ||nu||_L1, the quantity bounded by M in B_M."""
    return float(np.max(np.abs(X.U)) + np.mean(np.abs(X.Uxi)) + np.mean(np.abs(X.yxi)) + np.mean(np.abs(X.nu)))


def member_BM(X: LagrangianState, M: float) -> bool:
    return bm_size(X) <= M


def bm_radius(M: float) -> float:
    """Radius of the ball B that contains every state of H with energy at most M."""
    return 6.0 * (1.0 + M)


@dataclass(frozen=True)
class Relabeling:
    """Grid samples of f with f(xi+1) = f(xi)+1 and its derivative."""

    grid: PeriodicGrid
    f: np.ndarray
    fxi: np.ndarray
    alpha: float = float("nan")

    def __post_init__(self):
        f = _arr(self.f)
        fxi = _arr(self.fxi)
        if f.shape != (self.grid.n,) or fxi.shape != (self.grid.n,):
            raise GridMismatchError("relabeling does not match grid")
        object.__setattr__(self, "f", f)
        object.__setattr__(self, "fxi", fxi)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(fxi))):
            raise InvalidRelabelingError("non-finite relabeling samples")
        if np.any(fxi <= 0):
            raise InvalidRelabelingError("relabeling derivative must be positive")
        df = np.diff(np.concatenate([f, [f[0] + 1.0]]))
        if np.any(df <= 0):
            raise InvalidRelabelingError("relabeling must be strictly increasing")
        alpha = max(float(np.max(fxi)) - 1.0, 1.0 / float(np.min(fxi)) - 1.0, 0.0)
        if not np.isnan(self.alpha) and alpha > self.alpha * (1 + 1e-12):
            raise InvalidRelabelingError(f"distortion {alpha:.3g} exceeds stated bound {self.alpha:.3g}")
        object.__setattr__(self, "alpha", alpha if np.isnan(self.alpha) else float(self.alpha))

    @classmethod
    def identity(cls, grid: PeriodicGrid) -> "Relabeling":
        return cls(grid, grid.nodes, np.ones(grid.n))

    @classmethod
    def from_functions(cls, grid: PeriodicGrid, g, dg) -> "Relabeling":
        """f = id + g with g periodic and dg its derivative."""
        xi = grid.nodes
        return cls(grid, xi + g(xi), 1.0 + dg(xi))


# ---------------------------------------------------------------- serialization

def snapshot_dict(state, time: float = 0.0) -> dict:
    """JSON-ready snapshot of either state type."""
    if isinstance(state, LagrangianState):
        fields = {k: v.tolist() for k, v in state.fields().items()}
        atoms = []
        h = state.h
    else:
        fields = {"u": state.u.tolist(), "ux": state.ux.tolist(), "rho": state.rho.tolist(),
                  "mu_density": state.mu.density.tolist()}
        atoms = [[x, m] for x, m in state.mu.atoms]
        h = state.mu.h
    return {"grid_n": state.grid.n, "fields": fields, "atoms": atoms, "meta": {"time": float(time), "h": float(h)}}


def snapshot_from_dict(d: dict):
    grid = PeriodicGrid(int(d["grid_n"]))
    f = d["fields"]
    if "zeta" in f:
        return LagrangianState(grid, *(np.asarray(f[k]) for k in LAGRANGIAN_FIELDS))
    mu = PeriodicMeasure(np.asarray(f["mu_density"]), tuple((x, m) for x, m in d.get("atoms", [])))
    return EulerianState(grid, np.asarray(f["u"]), np.asarray(f["ux"]), np.asarray(f["rho"]), mu)


def write_snapshot(path, state, time: float = 0.0) -> None:
    with open(path, "w") as fh:
        json.dump(snapshot_dict(state, time), fh)


def read_snapshot(path):
    with open(path) as fh:
        return snapshot_from_dict(json.load(fh))


def write_field_csv(path, values: Sequence[float], coord: str = "xi") -> None:
    if coord not in ("xi", "x"):
        raise ValueError("coord must be 'xi' or 'x'")
    values = np.asarray(values, dtype=float)
    nodes = np.arange(len(values)) / len(values)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([coord, "value"])
        for a, b in zip(nodes, values):
            w.writerow([repr(float(a)), repr(float(b))])
