import math
from statistics import NormalDist

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from shellcascade.noise import SEED_ENV_VAR, NoiseSpec, sample_increments, seed_from_env, standard_normals, trace_q


def test_zero_sigma_gives_zero_increments():
    spec = NoiseSpec((0.0,) * 5, seed=3)
    for step in (0, 1, 17, 10**9):
        assert np.all(sample_increments(spec, 0.01, step) == 0.0)


def test_unforced_shells_are_exactly_zero():
    spec = NoiseSpec.first_shell(6, 1.5, seed=9)
    inc = sample_increments(spec, 1e-3, 42)
    assert inc[0] != 0.0
    assert np.all(inc[1:] == 0.0)


def test_identical_calls_give_identical_bits():
    spec = NoiseSpec((1.0, 2.0, 0.5), seed=2**63 + 5, stream_id=7)
    a = sample_increments(spec, 1e-4, 123456)
    b = sample_increments(spec, 1e-4, 123456)
    assert a.tobytes() == b.tobytes()


@settings(max_examples=25)
@given(seed=st.integers(0, 2**64 - 1), stream=st.integers(0, 1000), start=st.integers(0, 10**6),
       n=st.integers(1, 9), m=st.integers(1, 20))
def test_block_rows_equal_single_draws(seed, stream, start, n, m):
    block = standard_normals(seed, stream, start, m, n)
    j = m // 2
    single = standard_normals(seed, stream, start + j, 1, n)[0]
    assert block[j].tobytes() == single.tobytes()


def test_inverse_cdf_against_stdlib():
    # reconstruct the uniforms from the raw Philox words and map them with an independent inverse CDF
    seed, stream = 99, 3
    gen = np.random.Philox(key=seed + (stream << 64), counter=0)
    words = gen.random_raw(8)[:5]
    unif = [((int(w) >> 11) + 0.5) * 2.0**-53 for w in words]
    expected = [NormalDist().inv_cdf(u) for u in unif]
    got = standard_normals(seed, stream, 0, 1, 5)[0]
    np.testing.assert_allclose(got, expected, rtol=1e-12, atol=1e-14)


def test_monte_carlo_moments_first_shell():
    dt = 1e-3
    xi = standard_normals(2024, 0, 0, 10**6, 1)[:, 0]
    dW = 1.0 * math.sqrt(dt) * xi
    assert abs(dW.mean()) <= 4 * math.sqrt(dt) * 1e-3
    assert dW.var() == pytest.approx(dt, rel=0.01)


def test_draws_are_gaussian():
    xi = standard_normals(7, 1, 0, 100_000, 1)[:, 0]
    assert stats.kstest(xi, "norm").pvalue > 1e-3


def test_streams_are_uncorrelated():
    a = standard_normals(11, 0, 0, 100_000, 1)[:, 0]
    b = standard_normals(11, 1, 0, 100_000, 1)[:, 0]
    assert abs(np.corrcoef(a, b)[0, 1]) < 4 / math.sqrt(1e5)


def test_shells_within_a_step_are_uncorrelated():
    x = standard_normals(11, 0, 0, 100_000, 2)
    assert abs(np.corrcoef(x[:, 0], x[:, 1])[0, 1]) < 4 / math.sqrt(1e5)


def test_brownian_additivity():
    dt, M, sigma = 1e-2, 10, 0.7
    xi = standard_normals(5, 2, 0, 100_000 * M, 1)[:, 0]
    sums = (sigma * math.sqrt(dt) * xi).reshape(100_000, M).sum(axis=1)
    assert sums.var() == pytest.approx(sigma**2 * M * dt, rel=0.02)


def test_dt_must_be_positive():
    spec = NoiseSpec((1.0,))
    for dt in (0.0, -1e-3):
        with pytest.raises(ValueError, match="dt"):
            sample_increments(spec, dt, 0)


@pytest.mark.parametrize("sigmas, expected", [((1.0, 0.0, 0.0), 1.0), ((3.0, 4.0, 0.0), 25.0), ((0.0,) * 4, 0.0)])
def test_trace_q(sigmas, expected):
    assert trace_q(NoiseSpec(sigmas)) == expected


def test_spec_validation():
    with pytest.raises(ValueError, match="nonnegative"):
        NoiseSpec((1.0, -0.1))
    with pytest.raises(ValueError, match="seed"):
        NoiseSpec((1.0,), seed=2**64)
    with pytest.raises(ValueError, match="stream_id"):
        NoiseSpec((1.0,), stream_id=-1)


def test_single_forced_shell():
    assert NoiseSpec.first_shell(4, 2.0).single_forced_shell() == (1, 2.0)
    assert NoiseSpec((1.0, 0.5, 0.0)).single_forced_shell() is None
    assert NoiseSpec((0.0, 0.0, 0.0)).single_forced_shell() is None


def test_seed_env_override(monkeypatch):
    monkeypatch.delenv(SEED_ENV_VAR, raising=False)
    assert seed_from_env(5) == 5
    monkeypatch.setenv(SEED_ENV_VAR, "18446744073709551615")
    assert seed_from_env(5) == 2**64 - 1
    monkeypatch.setenv(SEED_ENV_VAR, "-3")
    with pytest.raises(ValueError, match="out of range"):
        seed_from_env(5)
    monkeypatch.setenv(SEED_ENV_VAR, "0x10")
    with pytest.raises(ValueError, match="decimal"):
        seed_from_env(5)
