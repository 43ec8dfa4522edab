import numpy as np
import pytest
from hypothesis import given, strategies as st

from twoch.metric import RelabelingFamily
from twoch.scenarios import make_random_state, make_smooth_fourier
from twoch.state import (
    EulerianState,
    LagrangianState,
    PeriodicGrid,
    PeriodicMeasure,
    Relabeling,
    compat_residual,
    e_distance,
    integral_y,
    member_F0,
    member_H,
    quad,
    validate_D,
    validate_F,
)
from twoch.transform import (
    CumulativeEnergy,
    InconsistentStateError,
    center,
    eulerian_to_lagrangian,
    eulerian_to_lagrangian_raw,
    lagrangian_to_eulerian,
    project,
    project_F0,
    relabel,
    shift,
)

FAMILY = RelabelingFamily()


def _measure(n, density=0.0, atoms=()):
    return PeriodicMeasure(np.full(n, float(density)), atoms)


def test_cumulative_energy_examples():
    assert CumulativeEnergy(_measure(64, 1.0))(0.7) == pytest.approx(0.7, abs=1e-14)
    F = CumulativeEnergy(_measure(64, 0.0, ((0.5, 1.0),)))
    assert F(0.5) == 0.0
    assert F(0.6) == 1.0
    assert CumulativeEnergy(_measure(64, 0.25))(-0.4) == pytest.approx(-0.1, abs=1e-14)


def test_L_raw_zero_state():
    g = PeriodicGrid(32)
    z = np.zeros(32)
    X = eulerian_to_lagrangian_raw(EulerianState.from_fields(g, z, z, z))
    assert X.h == 0.0
    assert np.all(X.zeta == 0.0) and np.all(X.U == 0.0) and np.all(X.nu == 0.0) and np.all(X.r == 0.0)


def test_L_raw_constant_density():
    g = PeriodicGrid(32)
    z = np.zeros(32)
    X = eulerian_to_lagrangian_raw(EulerianState.from_fields(g, z, z, np.full(32, 0.5)))
    assert X.h == pytest.approx(0.25, abs=1e-15)
    assert np.max(np.abs(X.zeta)) < 1e-13
    assert np.max(np.abs(X.nu - 0.25)) < 1e-13
    assert np.max(np.abs(X.r - 0.5)) < 1e-13
    assert np.max(np.abs(X.yxi - 1.0)) < 1e-13


def _atom_state(n):
    z = np.zeros(n)
    return EulerianState(PeriodicGrid(n), z, z, z, PeriodicMeasure(z, ((0.5, 1.0),)))


def test_L_raw_unit_atom():
    n = 64
    X = eulerian_to_lagrangian_raw(_atom_state(n))
    xi = X.grid.nodes
    assert X.h == 1.0
    expect = np.where(xi <= 0.25, 2 * xi, np.where(xi <= 0.75, 0.5, 2 * xi - 1))
    assert np.max(np.abs(X.y - expect)) < 1e-12
    on = (xi > 0.25) & (xi <= 0.75)
    assert np.all(X.nu[on] == 2.0) and np.all(X.yxi[on] == 0.0)
    assert np.max(np.abs(X.nu[~on])) < 1e-12 and np.max(np.abs(X.yxi[~on] - 2.0)) < 1e-12
    assert validate_F(X).ok


def test_L_raw_is_exactly_compatible():
    rng = np.random.default_rng(11)
    for atom in (False, True):
        X = eulerian_to_lagrangian_raw(make_random_state(PeriodicGrid(128), rng, atom=atom))
        assert np.max(np.abs(compat_residual(X))) < 1e-13
        assert np.ptp(X.yxi + X.nu) < 1e-13


def test_relabel_identity_and_quarter_shift():
    g = PeriodicGrid(64)
    X = eulerian_to_lagrangian_raw(make_smooth_fourier(((1, 0.2, 0.0),), 0.5, g))
    Y = relabel(X, Relabeling.identity(g))
    assert e_distance(X, Y) < 1e-13
    Y = relabel(X, Relabeling(g, g.nodes + 0.25, np.ones(64)))
    k = 16
    assert np.max(np.abs(Y.zeta - (np.roll(X.zeta, -k) + 0.25))) < 1e-12
    for name in ("U", "yxi", "Uxi", "nu", "r"):
        assert np.max(np.abs(getattr(Y, name) - np.roll(getattr(X, name), -k))) < 1e-12


@given(st.integers(0, 2**32 - 1))
def test_relabel_conserves_integrals(seed):
    rng = np.random.default_rng(seed)
    g = PeriodicGrid(128)
    X = eulerian_to_lagrangian_raw(make_random_state(g, rng))
    Y = relabel(X, FAMILY.realize(FAMILY.random(rng), g))
    assert quad(Y.nu) == pytest.approx(quad(X.nu), rel=1e-10)
    assert quad(Y.r) == pytest.approx(quad(X.r), rel=1e-10, abs=1e-14)
    assert quad(Y.yxi) == pytest.approx(quad(X.yxi), rel=1e-10)


def test_project_F0_rest_state_unchanged():
    X = LagrangianState.rest(PeriodicGrid(32), 0.5)
    assert e_distance(project_F0(X), X) < 1e-14


def test_project_F0_postcondition():
    n = 256
    g = PeriodicGrid(n)
    xi = g.nodes
    c = np.cos(2 * np.pi * xi)
    yxi = 1.0 - 0.8 * c
    zeta = -0.8 * np.sin(2 * np.pi * xi) / (2 * np.pi)
    nu = 0.3 + 0.2 * np.sin(2 * np.pi * xi) ** 2
    U = 0.3 * np.sqrt(nu / yxi)
    r = 0.5 * np.sqrt(yxi * nu - yxi**2 * U**2)
    Uxi = np.sqrt(yxi * nu - yxi**2 * U**2 - r**2)
    X = LagrangianState(g, zeta, U, yxi, Uxi, nu, r)
    assert validate_F(X).ok and np.ptp(X.yxi + X.nu) > 0.1
    Y = project_F0(X)
    assert np.max(np.abs(Y.yxi + Y.nu - (1.0 + Y.h))) < 1e-8
    assert Y.h == pytest.approx(X.h, rel=1e-12)


def test_project_lands_in_H_and_is_idempotent():
    g = PeriodicGrid(512)
    X = eulerian_to_lagrangian(make_random_state(g, np.random.default_rng(5)))
    assert member_H(X)
    assert e_distance(project(X), X) < 1e-8


def test_center_of_identity_map():
    X = LagrangianState.rest(PeriodicGrid(64), 0.5)
    Y = center(X)
    assert abs(integral_y(Y)) < 1e-14
    assert np.max(np.abs(Y.y - (X.grid.nodes - 0.5))) < 1e-14


def test_project_is_relabeling_invariant():
    errs = []
    for n in (128, 512):
        g = PeriodicGrid(n)
        rng = np.random.default_rng(5)
        X = eulerian_to_lagrangian(make_random_state(g, rng))
        errs.append(max(e_distance(project(relabel(X, FAMILY.realize(FAMILY.random(rng), g))), project(X))
                        for _ in range(3)))
    assert errs[1] < 5e-5
    assert errs[1] < errs[0] / 16


def test_shift_by_whole_cells_is_a_roll():
    g = PeriodicGrid(64)
    X = eulerian_to_lagrangian_raw(make_smooth_fourier(((1, 0.2, 0.0),), 0.5, g))
    Y = shift(X, 5 / 64)
    assert np.array_equal(Y.nu, np.roll(X.nu, 5))
    assert np.max(np.abs(Y.y - (np.roll(X.y, 5) - np.where(np.arange(64) < 5, 1.0, 0.0)))) < 1e-15


def test_M_rest_state():
    s = lagrangian_to_eulerian(LagrangianState.rest(PeriodicGrid(64), 0.5))
    assert np.max(np.abs(s.u)) == 0.0
    assert np.max(np.abs(s.rho - 0.5)) < 1e-13
    assert np.max(np.abs(s.mu.density - 0.25)) < 1e-13
    assert s.mu.atoms == ()


def test_M_unit_atom_round_trip():
    s = lagrangian_to_eulerian(eulerian_to_lagrangian_raw(_atom_state(64)))
    assert np.all(s.u == 0.0) and np.max(np.abs(s.rho)) < 1e-14
    assert len(s.mu.atoms) == 1
    x, m = s.mu.atoms[0]
    assert x == pytest.approx(0.5, abs=1e-12) and m == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(s.mu.density)) < 1e-12
    assert validate_D(s, 1e-8).ok


def test_M_conserves_mass():
    rng = np.random.default_rng(2)
    for atom in (False, True):
        X = eulerian_to_lagrangian(make_random_state(PeriodicGrid(256), rng, atom=atom))
        assert lagrangian_to_eulerian(X).mu.h == pytest.approx(X.h, rel=1e-12)


def test_M_rejects_plateau_with_varying_U():
    X = eulerian_to_lagrangian_raw(_atom_state(64))
    U = X.U.copy()
    U[30] = 0.5
    with pytest.raises(InconsistentStateError):
        lagrangian_to_eulerian(X.replace(U=U))


def test_round_trip_converges():
    errs = []
    for n in (128, 256, 512):
        g = PeriodicGrid(n)
        s = make_smooth_fourier(((1, 0.3, 0.0), (2, 0.0, 0.1)), 0.5, g, ((1, 0.0, 0.2),))
        r = lagrangian_to_eulerian(eulerian_to_lagrangian_raw(s))
        errs.append(np.max(np.abs(r.u - s.u)) + np.sqrt(np.mean((r.rho - s.rho) ** 2)) + abs(r.mu.h - s.mu.h))
    assert np.log2(errs[0] / errs[1]) >= 2 and np.log2(errs[1] / errs[2]) >= 2


def test_member_F0_of_smooth_L_output():
    X = eulerian_to_lagrangian(make_smooth_fourier(((1, 0.2, 0.0),), 0.5, PeriodicGrid(512)))
    assert member_F0(X) and member_H(X)
