"""Energy balance, flux inequalities and scaling exponents from stationary estimates.

Everything here is a pure function of a :class:`StationaryEstimates`
object.  Uncertainties come from the batch means carried by the estimates:
any derived quantity is evaluated batch by batch (or linearized per batch
when it is nonlinear) so correlations between shells are respected.  The
pass/fail threshold is three standard errors throughout
(:data:`N_SIGMA`).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .statistics import StationaryEstimates, batch_stderr

N_SIGMA = 3.0
SCHEMA_VERSION = 1
K41_ZETA2 = 2.0 / 3.0


class DegenerateAnalysisError(ValueError):
    """Not enough usable data for the requested fit or window."""


class ContractViolation(ValueError):
    """A routine was called outside its hypotheses (e.g. multi-shell forcing)."""


@dataclass(frozen=True)
class InertialWindow:
    """Closed range of shells ``[n_minus, n_plus]`` used for scaling fits."""

    n_minus: int
    n_plus: int

    def __post_init__(self):
        if int(self.n_minus) != self.n_minus or int(self.n_plus) != self.n_plus:
            raise ValueError("window bounds must be integers")
        if self.n_minus < 1:
            raise ValueError("n_minus must be >= 1")
        if not self.n_minus < self.n_plus:
            raise ValueError(f"need n_minus < n_plus, got [{self.n_minus}, {self.n_plus}]")

    def check(self, n_shells: int) -> "InertialWindow":
        if self.n_plus > n_shells - 2:
            raise ValueError(f"n_plus = {self.n_plus} exceeds N - 2 = {n_shells - 2}")
        return self

    @property
    def shells(self) -> np.ndarray:
        return np.arange(self.n_minus, self.n_plus + 1)

    def to_list(self) -> list:
        return [int(self.n_minus), int(self.n_plus)]


# --------------------------------------------------------------------------
# balance relation


@dataclass
class BalanceReport:
    """Per-shell terms of ``eps_n + phi_n = phi_{n-1} + sigma_n^2 / 2`` for ``n = 1..N-1``.

    Array index ``i`` holds shell ``n = i + 1``.  ``phi_diff_se[i]`` is the
    standard error of ``phi_{n+1} - phi_n`` (last entry ``nan``).  ``k`` is
    the full wavenumber ladder, used for the implied moment bounds.
    """

    eps: np.ndarray
    eps_se: np.ndarray
    phi: np.ndarray
    phi_se: np.ndarray
    residual: np.ndarray
    stderr: np.ndarray
    sigmas: np.ndarray
    k: np.ndarray = None
    phi_diff_se: np.ndarray = None
    passes: np.ndarray = field(init=False)

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=float)
        self.phi = np.asarray(self.phi, dtype=float)
        self.eps_se = np.broadcast_to(np.asarray(self.eps_se, dtype=float), self.phi.shape).copy()
        self.phi_se = np.broadcast_to(np.asarray(self.phi_se, dtype=float), self.phi.shape).copy()
        self.residual = np.asarray(self.residual, dtype=float)
        self.stderr = np.broadcast_to(np.asarray(self.stderr, dtype=float), self.phi.shape).copy()
        self.sigmas = np.asarray(self.sigmas, dtype=float)
        if self.phi_diff_se is None:
            d = np.sqrt(self.phi_se[1:] ** 2 + self.phi_se[:-1] ** 2)
            self.phi_diff_se = np.concatenate([d, [np.nan]])
        self.passes = np.abs(self.residual) <= N_SIGMA * self.stderr

    @classmethod
    def synthetic(cls, phi, sigma: float, phi_se=0.0, eps=None):
        """Report built from given fluxes; shell 1 forced with ``sigma``, residuals from the definition."""
        phi = np.asarray(phi, dtype=float)
        eps = np.zeros_like(phi) if eps is None else np.asarray(eps, dtype=float)
        sig = np.zeros(phi.shape[0] + 1)
        sig[0] = sigma
        prev = np.concatenate([[0.0], phi[:-1]])
        res = eps + phi - prev - sig[: phi.shape[0]] ** 2 / 2
        return cls(eps, 0.0, phi, phi_se, res, 0.0, sig)

    @property
    def shells(self) -> np.ndarray:
        return np.arange(1, self.phi.shape[0] + 1)

    @property
    def pass_fraction(self) -> float:
        return float(np.mean(self.passes)) if self.passes.size else 1.0

    def forcing_sigma(self) -> float:
        """The shell-1 amplitude, or :class:`ContractViolation` if other shells are forced."""
        if np.any(self.sigmas[1:] != 0):
            raise ContractViolation("this check assumes forcing on shell 1 only")
        return float(self.sigmas[0])


def _require_samples(est: StationaryEstimates):
    if est.sample_count <= 0:
        raise DegenerateAnalysisError("empty estimates")


def balance_report(est: StationaryEstimates, model) -> BalanceReport:
    """Evaluate the stationary balance shell by shell with batch-means errors."""
    _require_samples(est)
    N = est.n_shells
    k = model.grid.k
    sig2 = model.noise.sigma_array ** 2
    eps, eps_se, phi, phi_se, res, res_se, dphi_se = [], [], [], [], [], [], []
    for n in range(1, N):
        w_eps = model.nu * k[n] ** 2 * est.weights_un2(n)
        w_phi = k[n] * est.weights_flux(n)
        w_prev = k[n - 1] * est.weights_flux(n - 1) if n > 1 else 0.0 * w_phi
        e, es = est.linear(w_eps)
        f, fs = est.linear(w_phi)
        r, rs = est.linear(w_eps + w_phi - w_prev)
        eps.append(e)
        eps_se.append(es)
        phi.append(f)
        phi_se.append(fs)
        res.append(r - sig2[n - 1] / 2)
        res_se.append(rs)
        if n < N - 1:
            dphi_se.append(est.linear(k[n + 1] * est.weights_flux(n + 1) - w_phi)[1])
    dphi_se.append(np.nan)
    return BalanceReport(np.array(eps), np.array(eps_se), np.array(phi), np.array(phi_se),
                         np.array(res), np.array(res_se), sig2**0.5, np.asarray(k), np.array(dphi_se))


def telescoped_residual(report: BalanceReport, m: int) -> float:
    """``sum_{n<=m} residual_n``, which must equal ``sum eps_n + phi_m - sum sigma_n^2/2``."""
    return float(np.sum(report.residual[:m]))


def monotonicity_check(report: BalanceReport) -> list:
    """Shells ``n`` where ``phi_{n+1} > phi_n + 3 se(phi_{n+1} - phi_n)``.

    Only meaningful under forcing of shell 1 alone; anything else raises
    :class:`ContractViolation`.
    """
    report.forcing_sigma()
    out = []
    for i in range(report.phi.shape[0] - 1):
        se = report.phi_diff_se[i]
        se = 0.0 if not np.isfinite(se) else se
        if report.phi[i + 1] > report.phi[i] + N_SIGMA * se:
            out.append(i + 1)
    return out


@dataclass
class K41BoundsReport:
    sigma: float
    upper: float
    violations: list
    flux_moment: np.ndarray
    implied_moment_bound: np.ndarray

    @property
    def ok(self) -> bool:
        return not self.violations


def k41_bounds_check(report: BalanceReport, sigma: float) -> K41BoundsReport:
    """Check ``0 <= phi_n <= sigma^2 / 2`` (each side widened by three stderr).

    Violations are ``(n, "above" | "below")`` pairs.  Also returns the flux
    moments ``phi_n / k_n`` next to the implied ceiling ``sigma^2 / k_{n+1}``.
    """
    forced = report.forcing_sigma()
    if not math.isclose(forced, sigma, rel_tol=1e-12, abs_tol=0.0):
        raise ContractViolation(f"sigma = {sigma} does not match the shell-1 forcing {forced}")
    upper = sigma**2 / 2
    viol = []
    for n, f, se in zip(report.shells, report.phi, report.phi_se):
        se = 0.0 if not np.isfinite(se) else se
        if f > upper + N_SIGMA * se:
            viol.append((int(n), "above"))
        elif f < -N_SIGMA * se:
            viol.append((int(n), "below"))
    if report.k is not None:
        kk = np.asarray(report.k)
        moment = report.phi / kk[report.shells]
        implied = sigma**2 / kk[report.shells + 1]
    else:
        moment = implied = np.full(report.phi.shape, np.nan)
    return K41BoundsReport(float(sigma), upper, viol, moment, implied)


# --------------------------------------------------------------------------
# ratio diagnostics


@dataclass
class GammaReport:
    shells: np.ndarray
    ratios: np.ndarray
    excluded: list
    gamma_hat: float
    hypothesis_value: float = math.nan

    @property
    def hypothesis_holds(self):
        if not math.isfinite(self.hypothesis_value):
            return None
        return bool(self.hypothesis_value <= 1.0)


def gamma_ratio(est: StationaryEstimates, window: InertialWindow, sigma: float | None = None) -> GammaReport:
    """``r_n = E[u_n^2] / |E[u_n^2 u_{n+1}]|^(2/3)`` on the window and its maximum.

    With ``sigma`` given, also returns ``gamma_hat 2^(2/3) sigma^(4/3)``,
    the quantity that must not exceed 1 for the second-order bound.
    """
    _require_samples(est)
    shells, ratios, excluded = [], [], []
    for n in window.shells:
        f = est.e_flux[n - 1]
        if f == 0 or not np.isfinite(f):
            excluded.append(int(n))
            continue
        shells.append(int(n))
        ratios.append(est.e_un2[n - 1] / abs(f) ** (2.0 / 3.0))
    if not shells:
        raise DegenerateAnalysisError("flux moment vanishes on every shell of the window")
    g = float(max(ratios))
    hyp = g * 2.0 ** (2.0 / 3.0) * sigma ** (4.0 / 3.0) if sigma is not None else math.nan
    return GammaReport(np.array(shells), np.array(ratios), excluded, g, hyp)


@dataclass
class DecayFit:
    shells: np.ndarray
    ratios: np.ndarray
    alpha_hat: float
    no_decay: bool


def dissipation_flux_ratio(report: BalanceReport, window: InertialWindow, tol: float = 1e-9) -> DecayFit:
    """``eps_n / |phi_n|^(2/3)`` on the window with a geometric fit ``r_n ~ alpha^n``.

    ``no_decay`` is set when the fitted ``alpha_hat`` is not below 1.
    """
    idx = window.shells - 1
    if idx[-1] >= report.phi.shape[0]:
        raise DegenerateAnalysisError("window reaches past the balance report")
    eps, phi = report.eps[idx], report.phi[idx]
    ok = (phi != 0) & (eps > 0)
    if np.count_nonzero(ok) < 2:
        raise DegenerateAnalysisError("fewer than two shells with nonzero dissipation and flux")
    r = eps[ok] / np.abs(phi[ok]) ** (2.0 / 3.0)
    n = window.shells[ok].astype(float)
    slope = _ols(n, np.log2(r))[0]
    alpha = 2.0**slope
    return DecayFit(window.shells[ok], r, float(alpha), bool(alpha >= 1.0 - tol))


# --------------------------------------------------------------------------
# exponent fits


@dataclass
class ExponentFit:
    p: float
    window: InertialWindow
    zeta_hat: float
    intercept: float
    r_squared: float
    ci_halfwidth: float
    shells: np.ndarray = None

    @property
    def ci(self) -> tuple:
        return (self.zeta_hat - self.ci_halfwidth, self.zeta_hat + self.ci_halfwidth)

    def contains(self, value: float) -> bool:
        lo, hi = self.ci
        return bool(lo <= value <= hi)

    def to_dict(self) -> dict:
        return {"p": self.p, "zeta_hat": self.zeta_hat, "ci": list(self.ci), "ci_halfwidth": self.ci_halfwidth,
                "intercept": self.intercept, "r2": self.r_squared, "window": self.window.to_list(),
                "shells": [int(n) for n in self.shells]}


def _ols(x: np.ndarray, y: np.ndarray):
    """Slope, intercept and ``r^2`` of a least-squares line (``r^2`` clamped to [0, 1])."""
    xm, ym = x.mean(), y.mean()
    dx, dy = x - xm, y - ym
    sxx = float(dx @ dx)
    slope = float(dx @ dy) / sxx
    intercept = ym - slope * xm
    resid = y - (intercept + slope * x)
    ss_res, ss_tot = float(resid @ resid), float(dy @ dy)
    if ss_tot == 0.0:
        r2 = 1.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return slope, float(intercept), r2


def _fit_power_law(est, values, batches, window, p, what):
    idx = window.shells - 1
    vals = np.abs(values[idx])
    ok = vals > 0
    if np.count_nonzero(ok) < 3:
        raise DegenerateAnalysisError(f"{what}: fewer than 3 positive points on window {window.to_list()}")
    shells = window.shells[ok]
    x = np.log2(est.grid.k[shells])
    y = np.log2(vals[ok])
    slope, intercept, r2 = _ols(x, y)
    # delta method per batch: d log2|S| = dS / (S ln 2), projected on the slope weights
    c = (x - x.mean()) / float((x - x.mean()) @ (x - x.mean()))
    if batches.shape[0] >= 2:
        sel = idx[ok]
        mean_sel = values[sel]
        rel = (batches[:, sel] - mean_sel) / (mean_sel * math.log(2.0))
        se = float(batch_stderr((rel @ c)[:, None])[0])
    else:
        se = math.nan
    return ExponentFit(float(p), window, -slope, intercept, r2, N_SIGMA * se, shells)


def fit_zeta(est: StationaryEstimates, p: float, window: InertialWindow) -> ExponentFit:
    """Regress ``log2 S_p(n)`` on ``log2 k_n`` over the window; ``zeta_hat = -slope``.

    Nonpositive points are dropped; fewer than three remaining raise
    :class:`DegenerateAnalysisError`.  The CI half-width is three delta-method
    standard errors computed from the batch means.
    """
    _require_samples(est)
    window.check(est.n_shells)
    return _fit_power_law(est, est.s_p(p), est.batch_block("sp", p), window, p, f"S_{p:g}")


def zeta3_flux(est: StationaryEstimates, window: InertialWindow) -> ExponentFit:
    """Scaling exponent of ``|E[u_n^2 u_{n+1}]|`` over the window."""
    _require_samples(est)
    window.check(est.n_shells)
    return _fit_power_law(est, est.e_flux, est.batch_block("flux"), window, 3.0, "flux moment")


@dataclass
class Zeta2ConditionReport:
    nu: float
    shells: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    max_value: float
    max_stderr: float
    flag: str
    zeta2: ExponentFit = None


def zeta2_condition_report(est: StationaryEstimates, window: InertialWindow, sigma: float, nu: float,
                           zeta2: ExponentFit | None = None, atol: float = 1e-12) -> Zeta2ConditionReport:
    """``log(E[u_n^2] / |E[u_n^2 u_{n+1}]|^(2/3)) / log(1/nu)`` on the window.

    The flag reads ``"= 2/3"`` when the maximum is zero within three
    standard errors, ``">= 2/3"`` when it is significantly negative and
    ``"inconclusive/anomalous"`` when it is significantly positive.
    ``sigma`` is recorded for context only.
    """
    if not 0 < nu < 1:
        raise ContractViolation("nu must lie in (0, 1) so that log(1/nu) > 0")
    _require_samples(est)
    window.check(est.n_shells)
    L = math.log(1.0 / nu)
    e2, fl = est.e_un2, est.e_flux
    b2, bf = est.batch_block("un2"), est.batch_block("flux")
    shells, vals, ses = [], [], []
    for n in window.shells:
        i = n - 1
        if fl[i] == 0 or e2[i] <= 0:
            continue
        shells.append(int(n))
        vals.append((math.log(e2[i]) - (2.0 / 3.0) * math.log(abs(fl[i]))) / L)
        if b2.shape[0] >= 2:
            lin = ((b2[:, i] - e2[i]) / e2[i] - (2.0 / 3.0) * (bf[:, i] - fl[i]) / fl[i]) / L
            ses.append(float(batch_stderr(lin[:, None])[0]))
        else:
            ses.append(math.nan)
    if not shells:
        raise DegenerateAnalysisError("no usable shells for the second-order diagnostic")
    vals, ses = np.array(vals), np.array(ses)
    j = int(np.argmax(vals))
    vmax, smax = float(vals[j]), float(ses[j])
    band = N_SIGMA * smax if np.isfinite(smax) else 0.0
    band = max(band, atol)
    if abs(vmax) <= band:
        flag = "= 2/3"
    elif vmax < 0:
        flag = ">= 2/3"
    else:
        flag = "inconclusive/anomalous"
    return Zeta2ConditionReport(nu, np.array(shells), vals, ses, vmax, smax, flag, zeta2)


# --------------------------------------------------------------------------
# window selection


def suggest_n_plus(nu: float, k0: float = 1.0, lam: float = 2.0) -> int:
    """Dissipation-scale estimate: the largest ``n`` with ``k_n <= nu^(-3/4)``."""
    if not nu > 0:
        raise ValueError("nu must be positive")
    return int(math.floor(math.log(nu ** (-0.75) / k0) / math.log(lam) + 1e-12))


def auto_window(report: BalanceReport, model, n_minus: int = 2, ratio: float = 0.1) -> InertialWindow:
    """Default fitting window.

    ``n_plus`` is the largest shell (at most ``N - 2``) where dissipation is
    still small against a positive outgoing flux, ``eps_n <= ratio * phi_n``.  If no
    shell above ``n_minus`` qualifies, the viscous estimate
    :func:`suggest_n_plus` is used instead, clipped to ``N - 2``.
    """
    N = model.grid.n_shells
    cands = [n for n in range(n_minus + 1, N - 1) if report.phi[n - 1] > 0 and report.eps[n - 1] <= ratio * report.phi[n - 1]]
    if cands:
        n_plus = max(cands)
    else:
        n_plus = min(suggest_n_plus(model.nu, model.grid.k0, model.grid.lam), N - 2) if model.nu > 0 else N - 2
    if n_plus <= n_minus:
        raise DegenerateAnalysisError(f"no inertial window above n_minus = {n_minus} (n_plus = {n_plus})")
    return InertialWindow(n_minus, n_plus)


# --------------------------------------------------------------------------
# JSON report


def _clean(x):
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def analysis_report(est: StationaryEstimates, model, window: InertialWindow | str = "auto",
                    p_list=None) -> dict:
    """Full analysis as a JSON-ready dict (``schema_version`` 1).

    Sections that rest on single-shell forcing are replaced by
    ``{"skipped": reason}`` when other shells are forced.
    """
    bal = balance_report(est, model)
    if window == "auto":
        window = auto_window(bal, model)
    window = window.check(est.n_shells)
    p_list = est.p_list if p_list is None else tuple(p_list)
    single = model.noise.single_forced_shell()
    sigma = single[1] if single else None

    out = {"schema_version": SCHEMA_VERSION, "window": window.to_list()}
    out["balance"] = {
        "n": bal.shells, "eps": bal.eps, "eps_stderr": bal.eps_se, "phi": bal.phi, "phi_stderr": bal.phi_se,
        "residual": bal.residual, "stderr": bal.stderr, "pass": bal.passes, "pass_fraction": bal.pass_fraction,
    }
    if single:
        out["monotonicity"] = {"violations": monotonicity_check(bal)}
        kb = k41_bounds_check(bal, sigma)
        out["k41_bounds"] = {"sigma": kb.sigma, "upper": kb.upper,
                             "violations": [{"n": n, "side": s} for n, s in kb.violations],
                             "flux_moment": kb.flux_moment, "implied_moment_bound": kb.implied_moment_bound}
    else:
        reason = "requires forcing on shell 1 only"
        out["monotonicity"] = {"skipped": reason}
        out["k41_bounds"] = {"skipped": reason}
    try:
        g = gamma_ratio(est, window, sigma)
        out["gamma"] = {"n": g.shells, "ratio": g.ratios, "gamma_hat": g.gamma_hat, "excluded": g.excluded,
                        "hypothesis_value": g.hypothesis_value, "hypothesis_holds": g.hypothesis_holds}
    except DegenerateAnalysisError as exc:
        out["gamma"] = {"skipped": str(exc)}
    out["exponents"] = [fit_zeta(est, p, window).to_dict() for p in p_list]
    out["zeta3_flux"] = zeta3_flux(est, window).to_dict()
    if 0 < model.nu < 1:
        z2 = fit_zeta(est, 2.0, window) if 2.0 in p_list else None
        zc = zeta2_condition_report(est, window, sigma if sigma is not None else math.nan, model.nu, z2)
        out["zeta2_condition"] = {"n": zc.shells, "value": zc.values, "stderr": zc.stderr,
                                  "max": zc.max_value, "max_stderr": zc.max_stderr, "flag": zc.flag,
                                  "k41_reference": K41_ZETA2}
    else:
        out["zeta2_condition"] = {"skipped": "nu must lie in (0, 1)"}
    return _clean(out)


def dumps_report(report: dict) -> str:
    return json.dumps(report, indent=2, allow_nan=False) + "\n"
