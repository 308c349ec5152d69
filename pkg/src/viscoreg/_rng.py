"""Counter-based random streams.

Every draw is a pure function of ``(seed, stream, counter)``, so a batch can be
split, reordered or evaluated in parallel and still reproduce the same numbers.
``numpy.random.Generator`` objects are sequential, which is why the Monte Carlo
kernels use this instead.
"""
import numba
import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STREAM_SALT = np.uint64(0x632BE59BD9B4E019)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S32 = np.uint64(32)
_LO32 = np.uint64(0xFFFFFFFF)
_TWO_PI = 2.0 * np.pi
_INV_2_32 = 1.0 / 4294967296.0


@numba.njit(cache=True)
def mix64(x):
    """splitmix64 finalizer; works on uint64 scalars and arrays."""
    z = x + _GOLDEN
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@numba.njit(cache=True)
def stream_key(seed, stream):
    return mix64(mix64(np.uint64(seed)) ^ (np.uint64(stream) * _GOLDEN + _STREAM_SALT))


@numba.njit(cache=True)
def bits(key, counter):
    return mix64(key ^ (counter * _GOLDEN))


@numba.njit(cache=True)
def gaussian_pair(word):
    """Box-Muller on the two 32-bit halves of one 64-bit word."""
    u1 = ((word >> _S32) + 0.5) * _INV_2_32
    u2 = ((word & _LO32) + 0.5) * _INV_2_32
    r = np.sqrt(-2.0 * np.log(u1))
    return r * np.cos(_TWO_PI * u2), r * np.sin(_TWO_PI * u2)


@numba.njit(cache=True)
def uniform(word):
    return ((word >> np.uint64(11)) + 0.5) * (1.0 / 9007199254740992.0)


def gaussian_2d(seed, streams, n_draws):
    """Standard 2D normal draws, shape ``(len(streams), n_draws, 2)``.

    Row ``i`` depends only on ``(seed, streams[i])``.
    """
    streams = np.asarray(streams, dtype=np.uint64).reshape(-1)
    counters = np.arange(n_draws, dtype=np.uint64)
    with np.errstate(over="ignore"):
        keys = mix64(mix64(np.uint64(seed)) ^ (streams * _GOLDEN + _STREAM_SALT))
        words = mix64(keys[:, None] ^ (counters[None, :] * _GOLDEN))
    x, y = gaussian_pair(words)
    return np.stack([x, y], axis=-1)
