"""Shell wavenumbers, shell vectors and the V_s scale of weighted norms.

Amplitudes are stored as 1-D numpy arrays ``u`` of length ``N`` where
``u[n - 1]`` holds shell ``n``.  Shells ``0`` and ``N + 1`` are implicit
zeros (see :func:`component`).  Wavenumbers are indexed ``0..N + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


@dataclass(frozen=True)
class ShellGrid:
    """Geometric wavenumber ladder ``k_n = k0 * lam**n`` truncated at ``N`` shells."""

    k0: float = 1.0
    lam: float = 2.0
    n_shells: int = 20

    def __post_init__(self):
        if not (np.isfinite(self.k0) and self.k0 > 0):
            raise ValueError("k0 must be positive")
        if not (np.isfinite(self.lam) and self.lam > 1):
            raise ValueError("lambda must exceed 1")
        if int(self.n_shells) != self.n_shells or self.n_shells < 3:
            raise ValueError("n_shells must be an integer >= 3")

    @cached_property
    def k(self) -> np.ndarray:
        """Wavenumbers ``k_0 .. k_{N+1}`` (length ``N + 2``), read-only."""
        n = np.arange(self.n_shells + 2, dtype=float)
        k = self.k0 * self.lam**n
        k.setflags(write=False)
        return k

    @property
    def k_shells(self) -> np.ndarray:
        """Wavenumbers of the active shells ``k_1 .. k_N``."""
        return self.k[1 : self.n_shells + 1]


def wavenumber(grid: ShellGrid, n: int) -> float:
    """Return ``k0 * lam**n`` for ``0 <= n <= N + 1``."""
    if not 0 <= n <= grid.n_shells + 1:
        raise IndexError(f"wavenumber index {n} outside 0..{grid.n_shells + 1}")
    return float(grid.k0 * grid.lam**n)


def as_state(u, n_shells: int | None = None, complex_valued: bool = False) -> np.ndarray:
    """Validate and copy ``u`` into a float64 (or complex128) shell vector."""
    dtype = np.complex128 if complex_valued else np.float64
    arr = np.array(u, dtype=dtype)
    if arr.ndim != 1:
        raise ValueError("shell state must be one-dimensional")
    if n_shells is not None and arr.shape[0] != n_shells:
        raise ValueError(f"expected {n_shells} shells, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("shell state contains non-finite entries")
    return arr


def component(u: np.ndarray, n: int):
    """Amplitude of shell ``n``; shells ``0`` and ``N + 1`` read as exact zero."""
    N = u.shape[0]
    if n == 0 or n == N + 1:
        return u.dtype.type(0)
    if not 1 <= n <= N:
        raise IndexError(f"shell index {n} outside 0..{N + 1}")
    return u[n - 1]


def _check_finite(u: np.ndarray):
    if not np.all(np.isfinite(u)):
        raise ValueError("shell state contains non-finite entries")


def norm_vs(u: np.ndarray, grid: ShellGrid, s: float) -> float:
    """Weighted norm ``sqrt(sum_n k_n^(2s) |u_n|^2)``.

    ``s = 0`` is the energy norm of H, ``s = 1`` the V norm, ``s = 2`` the
    graph norm of D(A) and ``s = -1`` the V' norm.
    """
    u = np.asarray(u)
    _check_finite(u)
    a = np.abs(u) * grid.k_shells[: u.shape[0]] ** s
    scale = float(np.max(a)) if a.size else 0.0
    if scale == 0.0:
        return 0.0
    total = 0.0
    # fixed-order sequential sum of rescaled terms: reproducible and free of
    # underflow for amplitudes deep in the dissipation range
    for x in (a / scale).tolist():
        total += x * x
    return scale * float(np.sqrt(total))


def apply_a_power(u: np.ndarray, grid: ShellGrid, s: float) -> np.ndarray:
    """Diagonal operator ``A^s``: component ``n`` becomes ``k_n^(2s) u_n``."""
    u = np.asarray(u)
    _check_finite(u)
    return grid.k_shells[: u.shape[0]] ** (2.0 * s) * u


def inner_product(u: np.ndarray, v: np.ndarray):
    """``sum_n u_n * conj(v_n)``; reduces to the plain dot product for real states."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    total = 0.0 if not (np.iscomplexobj(u) or np.iscomplexobj(v)) else 0j
    for a, b in zip(u.tolist(), np.conj(v).tolist()):
        total += a * b
    return total
