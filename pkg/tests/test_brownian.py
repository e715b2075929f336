import math

import numpy as np
import pytest
from scipy import stats

from noncollide.brownian import coarsen, coarsen_increments, generate, generate_batch, load


def test_generate_deterministic():
    a = generate(42, 3, 2, 64, 1.0)
    b = generate(42, 3, 2, 64, 1.0)
    assert a.increments.tobytes() == b.increments.tobytes()
    assert a.increments.shape == (64, 2)
    assert generate(42, 4, 2, 64, 1.0).increments.tobytes() != a.increments.tobytes()


def test_batch_rows_match_single():
    batch = generate_batch(9, [5, 0, 7], 3, 32, 2.0)
    for row, pid in zip(batch, [5, 0, 7]):
        assert row.tobytes() == generate(9, pid, 3, 32, 2.0).increments.tobytes()


@pytest.mark.parametrize("n_fine,T", [(3, 1.0), (0, 1.0), (48, 1.0), (16, 0.0), (16, -1.0)])
def test_generate_errors(n_fine, T):
    with pytest.raises(ValueError):
        generate(0, 0, 2, n_fine, T)


def test_moments_over_paths():
    M, n, T = 1000, 64, 2.0
    x = generate_batch(123, range(M), 1, n, T).ravel()
    var = T / n
    se_mean = math.sqrt(var / x.size)
    assert abs(x.mean()) <= 5 * se_mean
    # variance of the sample variance for gaussian data is 2 var^2 / N
    se_var = math.sqrt(2 * var**2 / x.size)
    assert abs(x.var() - var) <= 5 * se_var


def test_coarsen_examples():
    inc = np.array([[1.0], [2.0], [3.0], [4.0]])
    np.testing.assert_array_equal(coarsen_increments(inc, 2), [[3.0], [7.0]])
    np.testing.assert_array_equal(coarsen_increments(inc, 1), inc)
    with pytest.raises(ValueError):
        coarsen_increments(inc, 3)
    with pytest.raises(ValueError):
        coarsen_increments(inc, 8)


def test_coarsen_telescoping_bitwise():
    g = generate(1, 0, 3, 256, 1.0)
    for f in (1, 2, 4, 8, 16, 64):
        direct = coarsen(g, 2 * f)
        twice = coarsen_increments(coarsen(g, 2), f)
        assert direct.tobytes() == twice.tobytes()
        other = coarsen_increments(coarsen(g, f), 2)
        assert direct.tobytes() == other.tobytes()


def test_coarsen_sums_blocks():
    g = generate(1, 0, 2, 64, 1.0)
    c = coarsen(g, 8)
    np.testing.assert_allclose(c, g.increments.reshape(8, 8, 2).sum(axis=1), rtol=1e-13, atol=1e-15)


def test_terminal_value_distribution():
    M, n, T = 1000, 32, 1.5
    W_T = coarsen_increments(generate_batch(77, range(M), 1, n, T), n)[:, 0, 0]
    assert stats.kstest(W_T / math.sqrt(T), "norm").pvalue > 1e-3
    assert abs(W_T.mean()) <= 5 * math.sqrt(T / M)


def test_independent_paths():
    a = generate(5, 0, 1, 4096, 1.0).increments.ravel()
    b = generate(5, 1, 1, 4096, 1.0).increments.ravel()
    r = np.corrcoef(a, b)[0, 1]
    assert abs(r) <= 5 / math.sqrt(a.size)


def test_dump_roundtrip(tmp_path):
    g = generate(2**63 + 5, 11, 3, 16, 0.5)
    path = tmp_path / "grid.bin"
    g.dump(path)
    raw = path.read_bytes()
    assert raw[:8] == b"NCSBROWN"
    assert len(raw) == 48 + 16 * 3 * 8
    back = load(path)
    assert (back.seed, back.path_id, back.d, back.n_fine, back.T) == (2**63 + 5, 11, 3, 16, 0.5)
    assert back.increments.tobytes() == g.increments.tobytes()
    path.write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(ValueError):
        load(path)
