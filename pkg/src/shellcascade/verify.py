"""Algebraic self-checks of the nonlinear operators on random shell vectors.

Runs without any time stepping: energy cancellation, antisymmetry of the
dyadic trilinear form, the three boundedness estimates of the dyadic
operator, and energy conservation of GOY and Sabra.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .grid import ShellGrid, inner_product, norm_vs
from .nonlinearity import BILINEAR_BOUNDS, ModelKind, b_bound_constant, b_dyadic, b_goy, b_sabra

REL_TOL = 1e-12


@dataclass
class CheckResult:
    name: str
    passed: bool
    worst: float
    tolerance: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name}: worst {self.worst:.3e} (limit {self.tolerance:.3e}){self.detail}"


def _rel(value: float, scale: float) -> float:
    return abs(value) / scale if scale > 0 else abs(value)


def run_identity_suite(n_vectors: int = 1000, n_shells: int = 16, seed: int = 20240611) -> list:
    """Check every identity on ``n_vectors`` random draws with entries uniform in [-1, 1].

    Returns a list of :class:`CheckResult`.  The bounds use the constant
    ``2 sqrt(C_{d,s})`` on the grid ``k_n = 2^n``.
    """
    rng = np.random.default_rng(seed)
    grid = ShellGrid(1.0, 2.0, n_shells)
    worst_cancel = worst_anti = 0.0
    worst_bound = [0.0] * len(BILINEAR_BOUNDS)
    consts = [2.0 * np.sqrt(b_bound_constant(d, s)) for _, d, s, _ in BILINEAR_BOUNDS]
    worst_goy = worst_sabra = 0.0
    sabra = ModelKind.sabra()

    for _ in range(n_vectors):
        u, v, w = rng.uniform(-1.0, 1.0, size=(3, n_shells))
        buu = b_dyadic(u, u, grid)
        worst_cancel = max(worst_cancel, _rel(inner_product(buu, u), norm_vs(buu, grid, 0) * norm_vs(u, grid, 0)))
        buv, buw = b_dyadic(u, v, grid), b_dyadic(u, w, grid)
        lhs = inner_product(buv, w) + inner_product(buw, v)
        scale = norm_vs(buv, grid, 0) * norm_vs(w, grid, 0) + norm_vs(buw, grid, 0) * norm_vs(v, grid, 0)
        worst_anti = max(worst_anti, _rel(lhs, scale))
        for i, (_, _, _, (sb, su, sv)) in enumerate(BILINEAR_BOUNDS):
            ratio = norm_vs(buv, grid, sb) / (consts[i] * norm_vs(u, grid, su) * norm_vs(v, grid, sv))
            worst_bound[i] = max(worst_bound[i], ratio)

        z = u + 1j * rng.uniform(-1.0, 1.0, size=n_shells)
        g = b_goy(z, grid)
        worst_goy = max(worst_goy, _rel(np.real(inner_product(g, z)), norm_vs(g, grid, 0) * norm_vs(z, grid, 0)))
        sb_ = b_sabra(z, grid, sabra)
        worst_sabra = max(worst_sabra,
                          _rel(np.real(inner_product(sb_, z)), norm_vs(sb_, grid, 0) * norm_vs(z, grid, 0)))

    results = [
        CheckResult("dyadic <B(u,u),u> = 0", worst_cancel <= REL_TOL, worst_cancel, REL_TOL),
        CheckResult("dyadic <B(u,v),w> = -<B(u,w),v>", worst_anti <= REL_TOL, worst_anti, REL_TOL),
    ]
    for (name, d, s, _), c, wb in zip(BILINEAR_BOUNDS, consts, worst_bound):
        results.append(CheckResult(f"{name} (d={d:g}, s={s:g}, C={c:g})", wb <= 1.0, wb, 1.0,
                                   detail="  [ratio |lhs| / (C rhs)]"))
    results.append(CheckResult("GOY Re<B(u),u> = 0 (lambda=2)", worst_goy <= REL_TOL, worst_goy, REL_TOL))
    results.append(CheckResult("Sabra Re<B(u),u> = 0", worst_sabra <= REL_TOL, worst_sabra, REL_TOL))
    return results


def main_verify(n_vectors: int = 1000, out=print) -> int:
    """Print one line per check; return 0 iff every check passed."""
    t0 = time.perf_counter()
    results = run_identity_suite(n_vectors)
    for r in results:
        out(r.line())
    out(f"{sum(r.passed for r in results)}/{len(results)} checks passed in {time.perf_counter() - t0:.2f} s")
    return 0 if all(r.passed for r in results) else 1
