import numpy as np

from viscoreg._rng import bits, gaussian_2d, gaussian_pair, stream_key, uniform


def test_rows_depend_only_on_their_stream():
    a = gaussian_2d(7, [3, 9, 11], 5)
    b = gaussian_2d(7, [11, 3], 5)
    np.testing.assert_array_equal(a[0], b[1])
    np.testing.assert_array_equal(a[2], b[0])


def test_prefix_of_draws_is_stable():
    long = gaussian_2d(1, [0, 1], 12)
    short = gaussian_2d(1, [0, 1], 4)
    np.testing.assert_array_equal(long[:, :4], short)


def test_seed_changes_draws():
    assert not np.array_equal(gaussian_2d(0, [0], 8), gaussian_2d(1, [0], 8))


def test_moments():
    z = gaussian_2d(3, np.arange(2000), 50).reshape(-1, 2)
    assert abs(z.mean()) < 0.01
    np.testing.assert_allclose(z.var(axis=0), 1.0, atol=0.02)
    assert abs(np.corrcoef(z.T)[0, 1]) < 0.01


def test_scalar_kernels_match_vectorized():
    key = np.uint64(stream_key(np.uint64(5), np.uint64(2)))
    x, y = gaussian_pair(np.uint64(bits(key, np.uint64(3))))
    v = gaussian_2d(5, [2], 4)[0, 3]
    assert (x, y) == (v[0], v[1])


def test_uniform_in_open_interval():
    key = np.uint64(stream_key(np.uint64(0), np.uint64(0)))
    u = np.array([uniform(np.uint64(bits(key, np.uint64(c)))) for c in range(5000)])
    assert u.min() > 0 and u.max() < 1
    assert abs(u.mean() - 0.5) < 0.02
