"""Nonlinear transfer terms of the dyadic, GOY and Sabra shell models.

All kernels work on the 1-based shell convention of :mod:`shellcascade.grid`:
``u[n - 1]`` is shell ``n`` and every amplitude outside ``1..N`` is zero,
which is the Galerkin truncation of the infinite chain.  The numba kernels
are shared by the public functions below and by the time steppers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from .grid import ShellGrid, as_state

LINEAR, DYADIC, GOY, SABRA = 0, 1, 2, 3
_CODES = {"linear": LINEAR, "dyadic": DYADIC, "goy": GOY, "sabra": SABRA}

ABC_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ModelKind:
    """Which nonlinearity drives the chain.

    ``name`` is one of ``"dyadic"``, ``"goy"``, ``"sabra"`` or ``"linear"``
    (nonlinearity switched off, used to isolate the Ornstein-Uhlenbeck part).
    Sabra carries its coefficients ``a, b, c``, which must satisfy the energy
    conservation condition ``a + b + c = 0``.
    """

    name: str = "dyadic"
    a: float = 1.0
    b: float = -0.5
    c: float = -0.5

    def __post_init__(self):
        if self.name not in _CODES:
            raise ValueError(f"unknown model kind {self.name!r}; expected one of {sorted(_CODES)}")
        if self.name == "sabra":
            total = self.a + self.b + self.c
            if not abs(total) <= ABC_TOLERANCE:
                raise ValueError(
                    f"sabra coefficients violate the energy conservation condition "
                    f"a + b + c = 0 (got {total:g})"
                )

    @property
    def code(self) -> int:
        return _CODES[self.name]

    @property
    def is_complex(self) -> bool:
        return self.name in ("goy", "sabra")

    @classmethod
    def dyadic(cls):
        return cls("dyadic")

    @classmethod
    def goy(cls):
        return cls("goy")

    @classmethod
    def sabra(cls, a=1.0, b=-0.5, c=-0.5):
        return cls("sabra", a, b, c)

    @classmethod
    def linear(cls):
        return cls("linear")


# --------------------------------------------------------------------------
# numba kernels.  ``k`` always has length N + 2 (k_0 .. k_{N+1}).


@numba.njit(cache=True, inline="always")
def _at(u, n):
    if n < 1 or n > u.shape[0]:
        return u.dtype.type(0)
    return u[n - 1]


@numba.njit(cache=True, nogil=True)
def dyadic_kernel(u, v, k, out):
    """``out_n = k_{n-1} u_{n-1} v_{n-1} - k_n u_n v_{n+1}``."""
    N = u.shape[0]
    for n in range(1, N + 1):
        out[n - 1] = k[n - 1] * _at(u, n - 1) * _at(v, n - 1) - k[n] * u[n - 1] * _at(v, n + 1)


@numba.njit(cache=True, nogil=True)
def goy_kernel(u, k, out):
    N = u.shape[0]
    for n in range(1, N + 1):
        um1 = np.conj(_at(u, n - 1))
        um2 = np.conj(_at(u, n - 2))
        up1 = np.conj(_at(u, n + 1))
        up2 = np.conj(_at(u, n + 2))
        out[n - 1] = 1j * k[n] * (0.25 * um1 * up1 - up1 * up2 + 0.125 * um1 * um2)


@numba.njit(cache=True, nogil=True)
def sabra_kernel(u, k, a, b, c, out):
    N = u.shape[0]
    for n in range(1, N + 1):
        kp1 = k[n + 1] if n + 1 < k.shape[0] else 0.0
        t1 = a * kp1 * _at(u, n + 2) * np.conj(_at(u, n + 1))
        t2 = b * k[n] * _at(u, n + 1) * np.conj(_at(u, n - 1))
        t3 = c * k[n - 1] * _at(u, n - 1) * _at(u, n - 2)
        out[n - 1] = 1j * (t1 + t2 - t3)


@numba.njit(cache=True, nogil=True)
def real_drift(code, u, k, out):
    """Nonlinear term ``B(u, u)`` for real-valued models (dyadic or linear)."""
    if code == DYADIC:
        dyadic_kernel(u, u, k, out)
    else:
        out[:] = 0.0


@numba.njit(cache=True, nogil=True)
def complex_drift(code, u, k, abc, out):
    """Nonlinear term ``B(u, u)`` for complex-valued models (GOY, Sabra or linear)."""
    if code == GOY:
        goy_kernel(u, k, out)
    elif code == SABRA:
        sabra_kernel(u, k, abc[0], abc[1], abc[2], out)
    else:
        out[:] = 0.0


# --------------------------------------------------------------------------
# public API


def b_dyadic(u, v, grid: ShellGrid) -> np.ndarray:
    """Dyadic bilinear operator ``B(u, v)`` with zero boundaries."""
    u = as_state(u)
    v = as_state(v, u.shape[0])
    out = np.empty_like(u)
    dyadic_kernel(u, v, np.asarray(grid.k[: u.shape[0] + 2]), out)
    return out


def b_goy(u, grid: ShellGrid) -> np.ndarray:
    """GOY nonlinearity ``i k_n (1/4 u*_{n-1} u*_{n+1} - u*_{n+1} u*_{n+2} + 1/8 u*_{n-1} u*_{n-2})``.

    The coefficients are taken as given; energy is conserved only for
    shell spacing ``lam = 2``.
    """
    u = as_state(u, complex_valued=True)
    if u.shape[0] < 4:
        raise ValueError("GOY needs at least 4 shells")
    out = np.empty_like(u)
    goy_kernel(u, np.asarray(grid.k[: u.shape[0] + 2]), out)
    return out


def b_sabra(u, grid: ShellGrid, kind: ModelKind) -> np.ndarray:
    """Sabra nonlinearity ``i (a k_{n+1} u_{n+2} u*_{n+1} + b k_n u_{n+1} u*_{n-1} - c k_{n-1} u_{n-1} u_{n-2})``."""
    if kind.name != "sabra":
        raise ValueError("b_sabra requires a sabra ModelKind")
    u = as_state(u, complex_valued=True)
    if u.shape[0] < 4:
        raise ValueError("Sabra needs at least 4 shells")
    out = np.empty_like(u)
    sabra_kernel(u, np.asarray(grid.k[: u.shape[0] + 2]), kind.a, kind.b, kind.c, out)
    return out


def nonlinear_term(u, grid: ShellGrid, kind: ModelKind) -> np.ndarray:
    """``B(u, u)`` for whichever model ``kind`` names."""
    if kind.name == "dyadic":
        return b_dyadic(u, u, grid)
    if kind.name == "goy":
        return b_goy(u, grid)
    if kind.name == "sabra":
        return b_sabra(u, grid, kind)
    u = np.asarray(u)
    return np.zeros_like(u)


def b_bound_constant(d: float, s: float) -> float:
    """Constant ``max(2^(4d+2), (1/2)^(2+4s))`` of the dyadic boundedness estimate

    ``|B(u, v)|_{V_2d}^2 <= 4 C |u|_{V_{2d-2s}}^2 |v|_{V_{1+2s}}^2``, i.e. the
    unsquared bound holds with factor ``2 sqrt(C)`` (for ``lam = 2``).
    """
    if not (np.isfinite(d) and np.isfinite(s)):
        raise ValueError("d and s must be finite")
    return float(max(2.0 ** (4 * d + 2), 0.5 ** (2 + 4 * s)))


# (name, d, s, norm orders for |B|, |u|, |v|)
BILINEAR_BOUNDS = (
    ("|B(u,v)|_H <= C |u|_V |v|_H", 0.0, -0.5, (0, 1, 0)),
    ("|B(u,v)|_H <= C |u|_H |v|_V", 0.0, 0.0, (0, 0, 1)),
    ("|B(u,v)|_V' <= C |u|_H |v|_H", -0.5, -0.5, (-1, 0, 0)),
)
