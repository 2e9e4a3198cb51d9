"""Reproducible Brownian increments for additive, diagonal shell forcing.

Every Gaussian draw is a pure function of ``(seed, stream_id, step_index,
shell)``.  The generator is numpy's counter-based Philox-4x64 keyed by
``(seed, stream_id)``; step ``s`` reads counter blocks starting at
``s * ceil(N / 4)``, one 64-bit word per shell.  Words are mapped to the
open unit interval with 53-bit resolution and pushed through the inverse
normal CDF (``scipy.special.ndtri``).  No rejection step is involved, so a
draw never depends on how many draws preceded it.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

SEED_ENV_VAR = "SHELLCASCADE_SEED"
_UINT64_MAX = 2**64 - 1


@dataclass(frozen=True)
class NoiseSpec:
    """Per-shell amplitudes ``sigma_n`` plus the random stream identity."""

    sigmas: tuple = field(default_factory=tuple)
    seed: int = 0
    stream_id: int = 0

    def __post_init__(self):
        sig = tuple(float(s) for s in self.sigmas)
        object.__setattr__(self, "sigmas", sig)
        if any(not np.isfinite(s) or s < 0 for s in sig):
            raise ValueError("noise amplitudes must be finite and nonnegative")
        if not 0 <= int(self.seed) <= _UINT64_MAX:
            raise ValueError("seed must be an unsigned 64-bit integer")
        if int(self.stream_id) < 0 or int(self.stream_id) > _UINT64_MAX:
            raise ValueError("stream_id must be a nonnegative 64-bit integer")

    @classmethod
    def first_shell(cls, n_shells: int, sigma: float, seed: int = 0, stream_id: int = 0):
        """Forcing ``sigma`` on shell 1 only, zero elsewhere."""
        sig = [0.0] * n_shells
        sig[0] = sigma
        return cls(tuple(sig), seed, stream_id)

    @property
    def n_shells(self) -> int:
        return len(self.sigmas)

    @property
    def sigma_array(self) -> np.ndarray:
        return np.asarray(self.sigmas, dtype=float)

    def with_stream(self, stream_id: int) -> "NoiseSpec":
        return NoiseSpec(self.sigmas, self.seed, stream_id)

    def with_seed(self, seed: int) -> "NoiseSpec":
        return NoiseSpec(self.sigmas, seed, self.stream_id)

    def single_forced_shell(self):
        """Return ``(1, sigma_1)`` if only shell 1 is forced (and it is), else ``None``."""
        sig = self.sigmas
        if sig and sig[0] != 0 and all(s == 0 for s in sig[1:]):
            return 1, sig[0]
        return None


def seed_from_env(default: int) -> int:
    """Configured seed, overridden by ``$SHELLCASCADE_SEED`` when set."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None or raw.strip() == "":
        return default
    try:
        value = int(raw.strip(), 10)
    except ValueError:
        raise ValueError(f"{SEED_ENV_VAR} must be a decimal unsigned 64-bit integer, got {raw!r}")
    if not 0 <= value <= _UINT64_MAX:
        raise ValueError(f"{SEED_ENV_VAR} out of range for unsigned 64-bit: {value}")
    return value


def _blocks_per_step(n_shells: int) -> int:
    return -(-n_shells // 4)


def standard_normals(seed: int, stream_id: int, start_step: int, n_steps: int, n_shells: int) -> np.ndarray:
    """Standard Gaussians for steps ``start_step .. start_step + n_steps - 1``.

    Returns an array of shape ``(n_steps, n_shells)``; row ``j`` is identical
    to what a call with ``start_step + j`` and ``n_steps = 1`` would return.
    """
    if start_step < 0 or n_steps < 0:
        raise ValueError("step indices must be nonnegative")
    bps = _blocks_per_step(n_shells)
    gen = np.random.Philox(key=int(seed) + (int(stream_id) << 64), counter=start_step * bps)
    words = gen.random_raw(n_steps * bps * 4).reshape(n_steps, bps * 4)[:, :n_shells]
    unif = ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(unif)


def sample_increments(spec: NoiseSpec, dt: float, step_index: int) -> np.ndarray:
    """Brownian increments ``sigma_n * dW_n`` over one step of length ``dt``."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    xi = standard_normals(spec.seed, spec.stream_id, step_index, 1, spec.n_shells)[0]
    return spec.sigma_array * np.sqrt(dt) * xi


def trace_q(spec: NoiseSpec) -> float:
    """Trace of the noise covariance, ``sum_n sigma_n^2``."""
    total = 0.0
    for s in spec.sigmas:
        total += s * s
    return total
