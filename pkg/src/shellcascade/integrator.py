"""Time stepping for ``du_n + nu k_n^2 u_n dt = B(u, u)_n dt + sigma_n dbeta_n``.

Two schemes are provided:

``em``
    explicit Euler-Maruyama.  Stable only when ``nu k_N^2 dt < 2``.
``ou_split``
    Lie splitting.  The linear damping plus noise is advanced exactly as an
    Ornstein-Uhlenbeck process, then the nonlinearity is applied with one
    explicit Euler substep.  The stiff diagonal never restricts ``dt``.

The per-step kernels are compiled with numba; :func:`simulate` feeds them
pre-generated Gaussian blocks from :mod:`shellcascade.noise` so that a run is
a pure function of the configuration and the seed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np

from .grid import ShellGrid, as_state
from .noise import NoiseSpec, standard_normals
from .nonlinearity import ModelKind, complex_drift, real_drift

EM, OU_SPLIT = 0, 1
_SCHEMES = {"em": EM, "ou_split": OU_SPLIT}
CHUNK_STEPS = 8192


class BlowUpError(RuntimeError):
    """A step produced a non-finite amplitude.

    ``step`` is the global index of the offending step, ``last_state`` the
    final finite state before it and ``trajectory`` whatever was sampled up
    to that point.
    """

    def __init__(self, step, time, last_state, trajectory=None):
        super().__init__(f"non-finite state at step {step} (t = {time:.6g})")
        self.step = step
        self.time = time
        self.last_state = last_state
        self.trajectory = trajectory


class StabilityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ModelSpec:
    kind: ModelKind
    nu: float
    grid: ShellGrid
    noise: NoiseSpec

    def __post_init__(self):
        if not (np.isfinite(self.nu) and self.nu >= 0):
            raise ValueError("viscosity nu must be finite and nonnegative")
        if self.noise.n_shells != self.grid.n_shells:
            raise ValueError(
                f"noise has {self.noise.n_shells} amplitudes but the grid has {self.grid.n_shells} shells"
            )
        if self.kind.is_complex and self.grid.n_shells < 4:
            raise ValueError("GOY/Sabra need at least 4 shells")

    @property
    def n_shells(self) -> int:
        return self.grid.n_shells

    @property
    def damping(self) -> np.ndarray:
        """Linear rates ``nu k_n^2`` for shells 1..N."""
        return self.nu * self.grid.k_shells**2

    @property
    def dtype(self):
        return np.complex128 if self.kind.is_complex else np.float64

    def zero_state(self) -> np.ndarray:
        return np.zeros(self.n_shells, dtype=self.dtype)

    def with_noise(self, noise: NoiseSpec) -> "ModelSpec":
        return ModelSpec(self.kind, self.nu, self.grid, noise)

    def with_stream(self, stream_id: int) -> "ModelSpec":
        return self.with_noise(self.noise.with_stream(stream_id))


@dataclass(frozen=True)
class StepScheme:
    kind: str = "ou_split"
    dt: float = 1e-4
    strict: bool = False

    def __post_init__(self):
        if self.kind not in _SCHEMES:
            raise ValueError(f"unknown scheme {self.kind!r}; expected 'em' or 'ou_split'")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise ValueError("dt must be positive")

    @property
    def code(self) -> int:
        return _SCHEMES[self.kind]

    def check_stability(self, model: ModelSpec) -> float:
        """Return ``nu k_N^2 dt``; for ``em`` warn (or raise if strict) when it reaches 2."""
        ratio = float(model.damping[-1] * self.dt)
        if self.kind == "em" and ratio >= 2.0:
            msg = f"explicit Euler-Maruyama is unstable: nu k_N^2 dt = {ratio:.3g} >= 2"
            if self.strict:
                raise ValueError(msg)
            warnings.warn(msg, StabilityWarning, stacklevel=3)
        return ratio


@dataclass
class Trajectory:
    """Sampled path of one simulation."""

    times: np.ndarray
    states: np.ndarray
    steps: np.ndarray
    final_state: np.ndarray
    final_step: int
    max_norm_h: float
    blew_up: bool = False
    norms_h2: np.ndarray = field(default=None, repr=False)
    norms_v2: np.ndarray = field(default=None, repr=False)


# --------------------------------------------------------------------------
# step coefficients


def step_coefficients(model: ModelSpec, scheme_kind: str, dt: float):
    """Per-shell ``(decay, noise_std)`` multipliers for one step.

    For ``ou_split`` the decay is ``exp(-L dt)`` and the noise standard
    deviation ``sigma sqrt((1 - exp(-2 L dt)) / (2 L))`` with ``L = nu k^2``
    (``sigma sqrt(dt)`` when ``L = 0``).  For ``em`` the decay is unused and the
    standard deviation is ``sigma sqrt(dt)``.
    """
    L = model.damping
    sig = model.noise.sigma_array
    if scheme_kind == "em":
        return np.ones_like(L), sig * math.sqrt(dt)
    decay = np.exp(-L * dt)
    var = np.empty_like(L)
    pos = L > 0
    var[pos] = -np.expm1(-2.0 * L[pos] * dt) / (2.0 * L[pos])
    var[~pos] = dt
    return decay, sig * np.sqrt(var)


# --------------------------------------------------------------------------
# kernels


@numba.njit(cache=True, nogil=True)
def _em_update(drift, code, u, k, abc, L, nstd, dt, xi, buf):
    drift(code, u, k, abc, buf)
    for n in range(u.shape[0]):
        u[n] = u[n] + dt * (buf[n] - L[n] * u[n]) + nstd[n] * xi[n]


@numba.njit(cache=True, nogil=True)
def _ou_update(drift, code, u, k, abc, decay, nstd, dt, xi, buf):
    for n in range(u.shape[0]):
        u[n] = decay[n] * u[n] + nstd[n] * xi[n]
    drift(code, u, k, abc, buf)
    for n in range(u.shape[0]):
        u[n] = u[n] + dt * buf[n]


@numba.njit(cache=True, nogil=True)
def _run_chunk(drift, code, scheme, u, k, abc, L, decay, nstd, dt, xi,
               first_step, stride, samples, sample_steps, sample_v2, kw2):
    """Advance ``u`` in place through ``xi.shape[0]`` steps.

    Returns ``(n_samples, failed_offset, max_h2)``; ``failed_offset`` is -1
    when every step stayed finite, otherwise the offset of the bad step, in
    which case ``u`` holds the last finite state.
    """
    N = u.shape[0]
    buf = np.empty_like(u)
    prev = np.empty_like(u)
    ns = 0
    max_h2 = 0.0
    for j in range(xi.shape[0]):
        prev[:] = u
        if scheme == 0:
            _em_update(drift, code, u, k, abc, L, nstd, dt, xi[j], buf)
        else:
            _ou_update(drift, code, u, k, abc, decay, nstd, dt, xi[j], buf)
        h2 = 0.0
        for n in range(N):
            a = abs(u[n])
            h2 += a * a
        if not np.isfinite(h2):
            u[:] = prev
            return ns, j, max_h2
        if h2 > max_h2:
            max_h2 = h2
        step = first_step + j + 1
        if stride > 0 and step % stride == 0:
            samples[ns, :] = u
            sample_steps[ns] = step
            v2 = 0.0
            for n in range(N):
                a = abs(u[n])
                v2 += kw2[n] * a * a
            sample_v2[ns] = v2
            ns += 1
    return ns, -1, max_h2


def _drift_for(model: ModelSpec):
    return complex_drift if model.kind.is_complex else _real_drift_abc


@numba.njit(cache=True, nogil=True)
def _real_drift_abc(code, u, k, abc, out):
    real_drift(code, u, k, out)


def _abc(model: ModelSpec) -> np.ndarray:
    kd = model.kind
    return np.array([kd.a, kd.b, kd.c], dtype=float)


def _k(model: ModelSpec) -> np.ndarray:
    return np.ascontiguousarray(model.grid.k, dtype=float)


def _single_step(model: ModelSpec, scheme_kind: str, u, dt: float, xi: np.ndarray, nstd: np.ndarray, decay):
    u = as_state(u, model.n_shells, model.kind.is_complex)
    start = u.copy()
    xi = np.ascontiguousarray(xi, dtype=float)
    buf = np.empty_like(u)
    drift = _drift_for(model)
    if scheme_kind == "em":
        _em_update(drift, model.kind.code, u, _k(model), _abc(model), model.damping, nstd, dt, xi, buf)
    else:
        _ou_update(drift, model.kind.code, u, _k(model), _abc(model), decay, nstd, dt, xi, buf)
    if not np.all(np.isfinite(u)):
        raise BlowUpError(1, dt, start)
    return u


def em_step(u, model: ModelSpec, dt: float, dW) -> np.ndarray:
    """One Euler-Maruyama step: ``u + dt (-nu k^2 u + B(u, u)) + dW``.

    ``dW`` are the already scaled increments ``sigma_n (beta_n(t + dt) - beta_n(t))``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    dW = np.asarray(dW, dtype=float)
    return _single_step(model, "em", u, dt, dW, np.ones(model.n_shells), None)


def ou_split_step(u, model: ModelSpec, dt: float, xi) -> np.ndarray:
    """One Lie-split step driven by standard Gaussians ``xi``.

    The linear part is the exact Ornstein-Uhlenbeck transition; the
    nonlinearity follows as ``u + dt B(u, u)``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    decay, nstd = step_coefficients(model, "ou_split", dt)
    return _single_step(model, "ou_split", u, dt, np.asarray(xi, dtype=float), nstd, decay)


def n_steps_for(t_final: float, dt: float) -> int:
    """``floor(t_final / dt)`` guarded against round-off just below an integer."""
    if t_final < 0:
        raise ValueError("t_final must be nonnegative")
    return int(math.floor(t_final / dt + 1e-9))


def simulate(model: ModelSpec, init, scheme: StepScheme, t_final: float, observers=(),
             store_stride: int | None = 1, start_step: int = 0, record_norms: bool = False) -> Trajectory:
    """Integrate ``floor(t_final / dt)`` steps from ``init``.

    ``store_stride`` controls which states are kept in the returned
    :class:`Trajectory` (``None`` keeps only the initial and final state).
    Each observer exposes ``stride`` and ``observe(steps, times, states)``
    and is handed blocks of states at global steps divisible by its stride.
    ``start_step`` offsets the step counter (and hence the noise stream) so a
    run can be continued exactly.

    Raises :class:`BlowUpError` on the first non-finite state.
    """
    u = as_state(init, model.n_shells, model.kind.is_complex)
    dt = scheme.dt
    scheme.check_stability(model)
    n_steps = n_steps_for(t_final, dt)
    decay, nstd = step_coefficients(model, scheme.kind, dt)
    drift = _drift_for(model)
    k, abc, L = _k(model), _abc(model), model.damping
    kw2 = model.grid.k_shells**2
    strides = [s for s in [store_stride] + [ob.stride for ob in observers] if s]
    base = math.gcd(*strides) if strides else 0

    times = [start_step * dt]
    states = [u.copy()]
    steps = [start_step]
    h2 = [float(np.sum(np.abs(u) ** 2))]
    v2 = [float(np.sum(kw2 * np.abs(u) ** 2))]
    max_h2 = h2[0]
    N = model.n_shells
    noise = model.noise

    done = 0
    while done < n_steps:
        m = min(CHUNK_STEPS, n_steps - done)
        first = start_step + done
        xi = standard_normals(noise.seed, noise.stream_id, first, m, N)
        cap = m // base + 1 if base else 1
        samp = np.empty((cap, N), dtype=u.dtype)
        samp_steps = np.empty(cap, dtype=np.int64)
        samp_v2 = np.empty(cap)
        ns, failed, chunk_max = _run_chunk(drift, model.kind.code, scheme.code, u, k, abc, L, decay, nstd,
                                           dt, xi, first, base, samp, samp_steps, samp_v2, kw2)
        max_h2 = max(max_h2, chunk_max)
        samp, samp_steps = samp[:ns], samp_steps[:ns]
        samp_times = samp_steps * dt
        if store_stride:
            keep = samp_steps % store_stride == 0
            times.extend(samp_times[keep].tolist())
            states.extend(samp[keep])
            steps.extend(samp_steps[keep].tolist())
            if record_norms:
                h2.extend(np.sum(np.abs(samp[keep]) ** 2, axis=1).tolist())
                v2.extend(samp_v2[:ns][keep].tolist())
        for ob in observers:
            sel = samp_steps % ob.stride == 0
            if np.any(sel):
                ob.observe(samp_steps[sel], samp_times[sel], samp[sel])
        if failed >= 0:
            bad = first + failed + 1
            traj = _make_traj(times, states, steps, u, bad - 1, max_h2, True, h2, v2, record_norms)
            raise BlowUpError(bad, bad * dt, u.copy(), traj)
        done += m

    final_step = start_step + n_steps
    if store_stride is None and n_steps:
        times.append(final_step * dt)
        states.append(u.copy())
        steps.append(final_step)
        if record_norms:
            h2.append(float(np.sum(np.abs(u) ** 2)))
            v2.append(float(np.sum(kw2 * np.abs(u) ** 2)))
    return _make_traj(times, states, steps, u, final_step, max_h2, False, h2, v2, record_norms)


def _make_traj(times, states, steps, u, final_step, max_h2, blew_up, h2, v2, record_norms):
    return Trajectory(
        times=np.asarray(times, dtype=float),
        states=np.array(states),
        steps=np.asarray(steps, dtype=np.int64),
        final_state=u.copy(),
        final_step=int(final_step),
        max_norm_h=math.sqrt(max_h2),
        blew_up=blew_up,
        norms_h2=np.asarray(h2) if record_norms else None,
        norms_v2=np.asarray(v2) if record_norms else None,
    )


def galerkin_project(u, m: int) -> np.ndarray:
    """Zero every shell above ``m`` (orthogonal projection onto shells 1..m)."""
    u = np.array(u, copy=True)
    if not 1 <= m <= u.shape[0]:
        raise ValueError(f"projection level {m} outside 1..{u.shape[0]}")
    u[m:] = 0
    return u


# --------------------------------------------------------------------------
# deterministic integration (conservation checks)


def rk4_integrate(u0, grid: ShellGrid, kind: ModelKind, t_final: float, dt: float, nu: float = 0.0) -> np.ndarray:
    """Classical RK4 for the noise-free system ``du/dt = -nu A u + B(u, u)``."""
    u = as_state(u0, grid.n_shells, kind.is_complex)
    k = np.ascontiguousarray(grid.k, dtype=float)
    abc = np.array([kind.a, kind.b, kind.c])
    L = nu * grid.k_shells**2
    drift = complex_drift if kind.is_complex else _real_drift_abc
    buf = np.empty_like(u)

    def f(x):
        drift(kind.code, x, k, abc, buf)
        return buf - L * x

    for _ in range(n_steps_for(t_final, dt)):
        k1 = f(u).copy()
        k2 = f(u + 0.5 * dt * k1).copy()
        k3 = f(u + 0.5 * dt * k2).copy()
        k4 = f(u + dt * k3).copy()
        u = u + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return u


# --------------------------------------------------------------------------
# pathwise uniqueness


@dataclass
class ContractionReport:
    """Two paths on one noise stream compared against the Gronwall-type bound

    ``|u1 - u2|_H^2 <= exp(C int_0^t (|u1|_H^2 + |u2|_H^2) ds) |u1(0) - u2(0)|_H^2``.
    """

    times: np.ndarray
    diff_sq: np.ndarray
    energy_integral: np.ndarray
    c_nu: float
    bound: np.ndarray
    identical: bool
    bound_holds: bool


def contraction_diagnostic(u_init_a, u_init_b, model: ModelSpec, scheme: StepScheme, t_final: float,
                           stride: int = 1) -> ContractionReport:
    """Run both initial conditions on the same noise stream and fit ``C``.

    ``c_nu`` is the smallest nonnegative constant for which the bound holds
    at every sampled time.  It is ``inf`` only if the difference grows while
    both paths carry zero energy.
    """
    ta = simulate(model, u_init_a, scheme, t_final, store_stride=stride)
    tb = simulate(model, u_init_b, scheme, t_final, store_stride=stride)
    diff = ta.states - tb.states
    diff_sq = np.sum(np.abs(diff) ** 2, axis=1)
    energy = np.sum(np.abs(ta.states) ** 2, axis=1) + np.sum(np.abs(tb.states) ** 2, axis=1)
    integral = np.concatenate([[0.0], np.cumsum(0.5 * (energy[1:] + energy[:-1]) * np.diff(ta.times))])
    d0 = diff_sq[0]
    identical = bool(np.array_equal(ta.states, tb.states))
    if d0 == 0:
        c_nu = 0.0 if np.all(diff_sq == 0) else math.inf
        bound = np.zeros_like(diff_sq)
    else:
        c_nu = 0.0
        with np.errstate(divide="ignore"):
            growth = np.log(diff_sq[1:] / d0)
        for g, I in zip(growth, integral[1:]):
            if g <= 0:
                continue
            c_nu = max(c_nu, g / I) if I > 0 else math.inf
        bound = np.exp(c_nu * integral) * d0 if math.isfinite(c_nu) else np.full_like(diff_sq, math.inf)
    holds = bool(np.all(diff_sq <= bound * (1 + 1e-12) + 0.0)) if d0 > 0 else identical
    return ContractionReport(ta.times, diff_sq, integral, c_nu, bound, identical, holds)

