"""Stationary averages of shell moments with batch-means error bars.

A long path sampled after burn-in stands in for the invariant measure: the
running time average of any observable is its empirical expectation.  The
accumulator keeps one feature vector per sample,

    [|u_n|^2 (n=1..N), flux_n (n=1..N), |u_n|^p (per p, n=1..N), |u|_H^2, |u|_V^2]

where ``flux_n = u_n^2 u_{n+1}`` for real models and
``Re(u_n^2 conj(u_{n+1}))`` for complex ones (``flux_N = 0`` by the
truncation).  Only sums are stored, so accumulators merge by addition.
Samples are grouped into non-overlapping batches of fixed size; the spread
of the batch means gives standard errors that respect autocorrelation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import ShellGrid
from .noise import trace_q


class EmptyAccumulatorError(ValueError):
    pass


def _flux_moment(states: np.ndarray) -> np.ndarray:
    nxt = np.zeros_like(states)
    nxt[:, :-1] = states[:, 1:]
    if np.iscomplexobj(states):
        return np.real(states**2 * np.conj(nxt))
    return states**2 * nxt


def batch_stderr(batch_means: np.ndarray) -> np.ndarray:
    """Standard error of the mean from batch means, column by column.

    Columns are rescaled by their largest magnitude first, so moments that
    sit near the underflow limit (deep dissipative shells) keep a nonzero
    spread.  Fewer than two batches gives ``nan``.
    """
    bm = np.atleast_2d(np.asarray(batch_means, dtype=float))
    n_b = bm.shape[0]
    if n_b < 2:
        return np.full(bm.shape[1], np.nan)
    scale = np.max(np.abs(bm), axis=0)
    out = np.zeros(bm.shape[1])
    nz = scale > 0
    y = bm[:, nz] / scale[nz]
    out[nz] = scale[nz] * np.std(y, axis=0, ddof=1) / math.sqrt(n_b)
    return out


class MomentAccumulator:
    """Online sums of the shell moments used by the balance and scaling analysis.

    Parameters
    ----------
    grid : ShellGrid
        Needed for the V norm weights.
    p_list : sequence of float
        Orders of the structure functions ``E|u_n|^p`` to track.  ``2`` is
        always answered from the ``|u_n|^2`` sums.
    batch_size : int
        Samples per batch for the batch-means error estimate.
    """

    def __init__(self, grid: ShellGrid, p_list=(2.0, 3.0), batch_size: int = 1):
        if batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        self.grid = grid
        self.n_shells = grid.n_shells
        self.p_list = tuple(float(p) for p in p_list)
        if any(not (p > 0 and math.isfinite(p)) for p in self.p_list):
            raise ValueError("structure function orders must be positive")
        self.batch_size = int(batch_size)
        self._kw2 = np.asarray(grid.k_shells) ** 2
        self.sample_count = 0
        self.sums = np.zeros(self.n_features)
        self.batch_sums = []
        self._cur = np.zeros(self.n_features)
        self._cur_n = 0

    @property
    def n_features(self) -> int:
        return self.n_shells * (2 + len(self.p_list)) + 2

    def features(self, states: np.ndarray) -> np.ndarray:
        states = np.atleast_2d(states)
        if states.shape[1] != self.n_shells:
            raise ValueError(f"expected {self.n_shells} shells, got {states.shape[1]}")
        if not np.all(np.isfinite(states)):
            raise ValueError("refusing to accumulate a non-finite sample")
        a = np.abs(states)
        a2 = a * a
        cols = [a2, _flux_moment(states)]
        for p in self.p_list:
            cols.append(a2 if p == 2.0 else a**p)
        cols.append(a2.sum(axis=1, keepdims=True))
        cols.append((a2 * self._kw2).sum(axis=1, keepdims=True))
        return np.hstack(cols)

    def accumulate(self, u) -> "MomentAccumulator":
        """Add one sample; returns ``self`` for chaining."""
        return self.accumulate_block(np.asarray(u)[None, :])

    def accumulate_block(self, states) -> "MomentAccumulator":
        """Add a block of samples (rows) in order."""
        f = self.features(states)
        i = 0
        m = f.shape[0]
        while i < m:
            take = min(self.batch_size - self._cur_n, m - i)
            part = f[i : i + take].sum(axis=0)
            self._cur += part
            self.sums += part
            self._cur_n += take
            i += take
            if self._cur_n == self.batch_size:
                self.batch_sums.append(self._cur)
                self._cur = np.zeros(self.n_features)
                self._cur_n = 0
        self.sample_count += m
        return self

    # observer protocol used by integrator.simulate
    stride = 1

    def observe(self, steps, times, states):
        self.accumulate_block(states)

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        """New accumulator holding both sample sets.

        Totals add exactly; complete batches are concatenated.  Partial
        batches still count toward the means but are joined into a single
        pending batch.
        """
        if (other.n_shells, other.p_list, other.batch_size) != (self.n_shells, self.p_list, self.batch_size):
            raise ValueError("cannot merge accumulators with different layouts")
        out = MomentAccumulator(self.grid, self.p_list, self.batch_size)
        out.sample_count = self.sample_count + other.sample_count
        out.sums = self.sums + other.sums
        out.batch_sums = [b.copy() for b in self.batch_sums + other.batch_sums]
        cur = self._cur + other._cur
        n = self._cur_n + other._cur_n
        if n >= self.batch_size:
            # two partial halves never exceed one batch worth of stderr information
            out.batch_sums.append(cur * (self.batch_size / n))
            n, cur = 0, np.zeros(self.n_features)
        out._cur, out._cur_n = cur, n
        return out

    def estimates(self) -> "StationaryEstimates":
        if self.sample_count == 0:
            raise EmptyAccumulatorError("no samples accumulated")
        mean = self.sums / self.sample_count
        bm = np.array(self.batch_sums) / self.batch_size if self.batch_sums else np.zeros((0, self.n_features))
        return StationaryEstimates(self.grid, self.p_list, self.sample_count, mean, bm)

    # -- serialization (checkpoints) --------------------------------------

    def to_dict(self) -> dict:
        return {
            "p_list": list(self.p_list),
            "batch_size": self.batch_size,
            "sample_count": self.sample_count,
            "sums": [float(x).hex() for x in self.sums],
            "batch_sums": [[float(x).hex() for x in b] for b in self.batch_sums],
            "cur": [float(x).hex() for x in self._cur],
            "cur_n": self._cur_n,
        }

    @classmethod
    def from_dict(cls, grid: ShellGrid, d: dict) -> "MomentAccumulator":
        acc = cls(grid, d["p_list"], d["batch_size"])
        acc.sample_count = int(d["sample_count"])
        acc.sums = np.array([float.fromhex(x) for x in d["sums"]])
        acc.batch_sums = [np.array([float.fromhex(x) for x in b]) for b in d["batch_sums"]]
        acc._cur = np.array([float.fromhex(x) for x in d["cur"]])
        acc._cur_n = int(d["cur_n"])
        return acc


@dataclass
class StationaryEstimates:
    """Finalized means plus the batch means they were built from."""

    grid: ShellGrid
    p_list: tuple
    sample_count: int
    mean: np.ndarray
    batch_means: np.ndarray

    @classmethod
    def from_moments(cls, grid: ShellGrid, e_un2, e_flux=None, s_p=None) -> "StationaryEstimates":
        """Estimates built directly from given moments, with zero uncertainty.

        Used to feed exact synthetic inputs (for instance pure power laws) to
        the analysis routines.  ``s_p`` maps orders to per-shell arrays.
        """
        N = grid.n_shells
        s_p = dict(s_p or {})
        p_list = tuple(float(p) for p in s_p)
        e_un2 = np.broadcast_to(np.asarray(e_un2, dtype=float), (N,))
        e_flux = np.zeros(N) if e_flux is None else np.broadcast_to(np.asarray(e_flux, dtype=float), (N,))
        cols = [e_un2, e_flux] + [np.broadcast_to(np.asarray(v, dtype=float), (N,)) for v in s_p.values()]
        kw2 = grid.k_shells**2
        mean = np.concatenate(cols + [[e_un2.sum()], [(kw2 * e_un2).sum()]])
        # two identical batches: well-defined, exactly zero standard errors
        return cls(grid, p_list, 1, mean, np.vstack([mean, mean]))

    @property
    def n_shells(self) -> int:
        return self.grid.n_shells

    @property
    def n_batches(self) -> int:
        return self.batch_means.shape[0]

    def _block(self, i: int) -> slice:
        N = self.n_shells
        return slice(i * N, (i + 1) * N)

    def _p_index(self, p: float) -> int:
        p = float(p)
        if p == 2.0 and p not in self.p_list:
            return -1
        try:
            return self.p_list.index(p)
        except ValueError:
            raise KeyError(f"structure function of order {p:g} was not accumulated (have {list(self.p_list)})")

    def linear(self, weights: np.ndarray) -> tuple:
        """Estimate and batch-means stderr of ``weights . features``."""
        w = np.asarray(weights, dtype=float)
        value = float(w @ self.mean)
        if self.n_batches < 2:
            return value, math.nan
        return value, float(batch_stderr((self.batch_means @ w)[:, None])[0])

    def _column(self, block: int, n: int) -> np.ndarray:
        w = np.zeros(self.mean.shape[0])
        w[block * self.n_shells + n - 1] = 1.0
        return w

    def weights_un2(self, n: int) -> np.ndarray:
        return self._column(0, n)

    def weights_flux(self, n: int) -> np.ndarray:
        return self._column(1, n)

    def weights_sp(self, p: float, n: int) -> np.ndarray:
        i = self._p_index(p)
        return self._column(0 if i < 0 else 2 + i, n)

    @property
    def e_un2(self) -> np.ndarray:
        return self.mean[self._block(0)]

    @property
    def e_flux(self) -> np.ndarray:
        return self.mean[self._block(1)]

    def s_p(self, p: float) -> np.ndarray:
        i = self._p_index(p)
        return self.mean[self._block(0 if i < 0 else 2 + i)]

    def stderr_of(self, block_mean: np.ndarray, block: int) -> np.ndarray:
        if self.n_batches < 2:
            return np.full(self.n_shells, np.nan)
        return batch_stderr(self.batch_means[:, self._block(block)])

    @property
    def stderr_un2(self) -> np.ndarray:
        return self.stderr_of(self.e_un2, 0)

    @property
    def stderr_flux(self) -> np.ndarray:
        return self.stderr_of(self.e_flux, 1)

    def stderr_sp(self, p: float) -> np.ndarray:
        i = self._p_index(p)
        return self.stderr_of(None, 0 if i < 0 else 2 + i)

    def batch_block(self, name: str, p: float | None = None) -> np.ndarray:
        """Batch means of one block: ``"un2"``, ``"flux"`` or ``"sp"``."""
        if name == "un2":
            return self.batch_means[:, self._block(0)]
        if name == "flux":
            return self.batch_means[:, self._block(1)]
        i = self._p_index(p)
        return self.batch_means[:, self._block(0 if i < 0 else 2 + i)]

    @property
    def mean_h2(self) -> float:
        return float(self.mean[-2])

    @property
    def mean_v2(self) -> float:
        return float(self.mean[-1])

    # -- persistence ---------------------------------------------------------

    def to_arrays(self) -> dict:
        g = self.grid
        return dict(k0=g.k0, lam=g.lam, n_shells=g.n_shells, p_list=np.array(self.p_list, dtype=float),
                    sample_count=self.sample_count, mean=self.mean, batch_means=self.batch_means)

    def save(self, path):
        np.savez(path, **self.to_arrays())

    @classmethod
    def load(cls, path) -> "StationaryEstimates":
        with np.load(path) as d:
            grid = ShellGrid(float(d["k0"]), float(d["lam"]), int(d["n_shells"]))
            return cls(grid, tuple(float(p) for p in d["p_list"]), int(d["sample_count"]),
                       d["mean"].copy(), d["batch_means"].copy())


def _check_shell(est: StationaryEstimates, n: int, lo: int = 1):
    if not lo <= n <= est.n_shells:
        raise IndexError(f"shell {n} outside {lo}..{est.n_shells}")


def epsilon_n(est: StationaryEstimates, model, n: int) -> tuple:
    """Mean dissipation rate ``nu k_n^2 E[u_n^2]`` with its stderr."""
    _check_shell(est, n)
    c = model.nu * model.grid.k[n] ** 2
    return est.linear(c * est.weights_un2(n))


def phi_n(est: StationaryEstimates, grid: ShellGrid, n: int) -> tuple:
    """Mean flux ``k_n E[u_n^2 u_{n+1}]`` out of shell ``n``; ``phi_0 = 0`` exactly."""
    if n == 0:
        return 0.0, 0.0
    _check_shell(est, n)
    return est.linear(grid.k[n] * est.weights_flux(n))


def structure_function(est: StationaryEstimates, p: float, n: int) -> tuple:
    """``E|u_n|^p`` with its stderr."""
    _check_shell(est, n)
    return est.linear(est.weights_sp(p, n))


# --------------------------------------------------------------------------
# energy identity over an ensemble


@dataclass
class EnergyIdentityReport:
    t: float
    lhs: float
    rhs: float
    residual: float
    stderr: float
    n_paths: int

    @property
    def z(self) -> float:
        if self.stderr == 0:
            return 0.0 if self.residual == 0 else math.inf
        return self.residual / self.stderr


MIN_PATHS = 30


def energy_identity_check(trajectories, model, t: float) -> EnergyIdentityReport:
    """Monte Carlo check of ``E|u(t)|_H^2 + 2 nu int_0^t E|u|_V^2 ds = E|u(0)|_H^2 + t Tr Q``.

    Every trajectory must have been run with ``record_norms=True``; the time
    integral uses the trapezoidal rule on the recorded samples.  The stderr
    is that of the per-path difference ``LHS_i - |u_i(0)|^2``.
    """
    trajectories = list(trajectories)
    if len(trajectories) < MIN_PATHS:
        raise ValueError(f"energy identity needs at least {MIN_PATHS} paths, got {len(trajectories)}")
    gains, lhs_vals, init_vals = [], [], []
    for tr in trajectories:
        if tr.norms_h2 is None:
            raise ValueError("trajectory was simulated without record_norms=True")
        idx = int(np.searchsorted(tr.times, t - 1e-12))
        if idx >= len(tr.times) or abs(tr.times[idx] - t) > 1e-9 * max(1.0, t):
            raise ValueError(f"time {t} is not a sampled time of the trajectory")
        ts = tr.times[: idx + 1]
        v2 = tr.norms_v2[: idx + 1]
        integral = float(np.sum(0.5 * (v2[1:] + v2[:-1]) * np.diff(ts))) if idx > 0 else 0.0
        x = tr.norms_h2[idx] + 2.0 * model.nu * integral
        lhs_vals.append(x)
        init_vals.append(tr.norms_h2[0])
        gains.append(x - tr.norms_h2[0])
    gains = np.array(gains)
    m = len(gains)
    tq = trace_q(model.noise)
    lhs = float(np.mean(lhs_vals))
    rhs = float(np.mean(init_vals)) + t * tq
    residual = float(np.mean(gains)) - t * tq
    stderr = float(np.std(gains, ddof=1) / math.sqrt(m))
    return EnergyIdentityReport(t, lhs, rhs, residual, stderr, m)


# --------------------------------------------------------------------------
# CSV export


def _fmt(x: float) -> str:
    return repr(float(x))


def csv_columns(p_list) -> list:
    cols = ["n", "k_n", "E_un2", "stderr_E_un2", "E_un2_un1", "stderr_E_un2_un1", "eps_n", "phi_n"]
    for p in p_list:
        cols += [f"S_{float(p):g}", f"stderr_S_{float(p):g}"]
    return cols


def estimates_to_csv(est: StationaryEstimates, model, p_list=None) -> str:
    """One row per shell ``n = 1..N`` with the columns of :func:`csv_columns`.

    Floats are written with ``repr`` so the text round-trips exactly and is
    byte-identical across reruns.
    """
    p_list = est.p_list if p_list is None else tuple(p_list)
    grid = model.grid
    lines = [",".join(csv_columns(p_list))]
    se2, sef = est.stderr_un2, est.stderr_flux
    sp = [(est.s_p(p), est.stderr_sp(p)) for p in p_list]
    for n in range(1, est.n_shells + 1):
        i = n - 1
        row = [str(n), _fmt(grid.k[n]), _fmt(est.e_un2[i]), _fmt(se2[i]), _fmt(est.e_flux[i]), _fmt(sef[i]),
               _fmt(epsilon_n(est, model, n)[0]), _fmt(phi_n(est, grid, n)[0])]
        for vals, errs in sp:
            row += [_fmt(vals[i]), _fmt(errs[i])]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"
