"""Nonlocal terms P and Q in Lagrangian coordinates, and P in Eulerian coordinates.

For a state X with w = U^2 yxi + nu,

    P(xi) = K0 int cosh(y(xi)-y(eta)) w deta + 1/4 int exp(-sgn(xi-eta)(y(xi)-y(eta))) w deta
    Q(xi) = K0 int sinh(y(xi)-y(eta)) w deta - 1/4 int sgn(xi-eta) exp(-sgn(xi-eta)(y(xi)-y(eta))) w deta

with K0 = 1/(2(e-1)) and eta over one period. The exponential term has a kink at
eta = xi, which sits on a node; the trapezoid sum is corrected by the leading
endpoint term of the Euler-Maclaurin expansion on each side of the kink.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .state import EulerianState, LagrangianState

K0 = 1.0 / (2.0 * (np.e - 1.0))
FAST_MAX_SPREAD = 20.0
_BLOCK = 256


@dataclass(frozen=True)
class KernelOutput:
    P: np.ndarray
    Q: np.ndarray
    Pxi: np.ndarray
    Qxi: np.ndarray
    method: str = "direct"


def source(X: LagrangianState) -> np.ndarray:
    return X.U**2 * X.yxi + X.nu


def _central_diff(w: np.ndarray) -> np.ndarray:
    n = len(w)
    return (np.roll(w, -1) - np.roll(w, 1)) * (0.5 * n)


def kink_correction(yxi: np.ndarray, w: np.ndarray):
    """Corrections (dP, dQ) to add to the raw trapezoid sums.

    On each side of the kink the integrand is smooth, so the trapezoid error is
    dx^2/12 times the jump of the eta-derivative. The jump is yxi*w/2 for the P
    integrand and -w'/2 for the Q integrand (w' by central differences).
    """
    dx = 1.0 / len(w)
    return -dx * dx * yxi * w / 24.0, dx * dx * _central_diff(w) / 24.0


def _finish(X, P, Q, method):
    Pxi = Q * X.yxi
    Qxi = (P - 0.5 * X.U**2) * X.yxi - 0.5 * X.nu
    return KernelOutput(P, Q, Pxi, Qxi, method)


def pq_sums_direct(y: np.ndarray, w: np.ndarray):
    """Raw trapezoid sums by explicit O(n^2) summation over all node pairs."""
    n = len(y)
    idx = np.arange(n)
    P = np.empty(n)
    Q = np.empty(n)
    for s0 in range(0, n, _BLOCK):
        rows = idx[s0:s0 + _BLOCK]
        d = y[rows, None] - y[None, :]
        sg = np.sign(rows[:, None] - idx[None, :])
        ex = np.exp(-sg * d)
        P[rows] = (K0 * np.cosh(d) + 0.25 * ex) @ w
        Q[rows] = (K0 * np.sinh(d) - 0.25 * sg * ex) @ w
    return P / n, Q / n


def pq_sums_fast(y: np.ndarray, w: np.ndarray):
    """Raw trapezoid sums in O(n) from separable exponentials and prefix sums.

    Accumulation is done in extended precision so the result tracks the direct
    sums to near float64 roundoff.
    """
    n = len(y)
    yc = (y - 0.5 * (y.max() + y.min())).astype(np.longdouble)
    wl = w.astype(np.longdouble)
    ep = np.exp(yc)
    em = np.exp(-yc)
    a = em * wl  # e^{-y_j} w_j
    b = ep * wl  # e^{+y_j} w_j
    A = np.sum(a)
    B = np.sum(b)
    left_b = np.cumsum(b) - b               # sum_{j<i} e^{y_j} w_j
    right_a = np.cumsum(a[::-1])[::-1] - a  # sum_{j>i} e^{-y_j} w_j
    sym = 0.5 * K0 * (ep * A + em * B)
    anti = 0.5 * K0 * (ep * A - em * B)
    lo = em * left_b   # sum_{j<i} e^{-(y_i-y_j)} w_j
    hi = ep * right_a  # sum_{j>i} e^{+(y_i-y_j)} w_j
    P = sym + 0.25 * (lo + hi + wl)
    Q = anti - 0.25 * (lo - hi)
    return np.asarray(P / n, dtype=float), np.asarray(Q / n, dtype=float)


def pq_from_fields(y, U, yxi, nu, method: str = "fast", correct: bool = True):
    """P and Q from raw field arrays; returns (P, Q, method actually used)."""
    w = U**2 * yxi + nu
    if method == "fast" and float(np.ptp(y)) <= FAST_MAX_SPREAD:
        P, Q = pq_sums_fast(y, w)
        used = "fast"
    elif method in ("fast", "direct"):
        P, Q = pq_sums_direct(y, w)
        used = "direct"
    else:
        raise ValueError(f"unknown kernel method {method!r}")
    if correct:
        dP, dQ = kink_correction(yxi, w)
        P, Q = P + dP, Q + dQ
    return P, Q, used


def compute_pq(X: LagrangianState, method: str = "fast", correct: bool = True) -> KernelOutput:
    P, Q, used = pq_from_fields(X.y, X.U, X.yxi, X.nu, method, correct)
    return _finish(X, P, Q, used)


def compute_pq_direct(X: LagrangianState, correct: bool = True) -> KernelOutput:
    return compute_pq(X, "direct", correct)


def compute_pq_fast(X: LagrangianState, correct: bool = True) -> KernelOutput:
    """O(n) path; falls back to the direct sums if y spreads too far for safe exponentials."""
    return compute_pq(X, "fast", correct)


# ------------------------------------------------------------ Eulerian P

def green(d):
    """Periodic Green function of 1 - d^2/dx^2 with period 1."""
    s = np.mod(d, 1.0)
    return np.cosh(s - 0.5) / (2.0 * np.sinh(0.5))


def green_x(d):
    """Derivative of `green`; the value at the peak is the mean of the one-sided limits, 0."""
    s = np.mod(d, 1.0)
    out = np.sinh(s - 0.5) / (2.0 * np.sinh(0.5))
    return np.where(s == 0.0, 0.0, out)


def _circ_conv(kernel: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.real(np.fft.ifft(np.fft.fft(kernel) * np.fft.fft(w)))


def eulerian_p(s: EulerianState, with_measure: bool = True):
    """P and P_x on the x-grid.

    P = 1/2 G * (u^2 dx + mu). With with_measure=False the measure is replaced by
    (u^2 + u_x^2 + rho^2) dx built from the fields (smooth-solution form).
    """
    n = s.grid.n
    dx = 1.0 / n
    x = s.grid.nodes
    if with_measure:
        w = s.u**2 + s.mu.density
        atoms = s.mu.atoms
    else:
        w = 2.0 * s.u**2 + s.ux**2 + s.rho**2
        atoms = ()
    P = 0.5 * dx * _circ_conv(green(x), w) - dx * dx * w / 24.0
    Px = 0.5 * dx * _circ_conv(green_x(x), w) + dx * dx * _central_diff(w) / 24.0
    for xa, m in atoms:
        P = P + 0.5 * m * green(x - xa)
        Px = Px + 0.5 * m * green_x(x - xa)
    return P, Px
