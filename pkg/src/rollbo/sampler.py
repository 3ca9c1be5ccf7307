"""Low-discrepancy and common-random-number Gaussian sample streams.

Sobol points are built from primitive-polynomial direction numbers in
natural index order (point 0 is the origin), optionally scrambled per
dimension with a seeded linear matrix scramble plus digital shift. Uniform
points map to standard normals via the Box-Muller transform.

A materialized stream is immutable: the same (dim, n, seed, mode) always
yields bit-identical uniform and Gaussian tensors, which is what lets a
downstream estimator reuse one stream across many query points.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UnsupportedDimensionError

_NBITS = 31
_SCALE = float(2**_NBITS)

# (degree s, polynomial a, initial direction values m_1..m_s) per dimension
# beyond the first; dimension 1 is the van der Corput sequence in base 2.
_DIRECTIONS = (
    (1, 0, (1,)),
    (2, 1, (1, 3)),
    (3, 1, (1, 3, 1)),
    (3, 2, (1, 1, 1)),
    (4, 1, (1, 1, 3, 3)),
    (4, 4, (1, 3, 5, 13)),
    (5, 2, (1, 1, 5, 5, 17)),
    (5, 4, (1, 1, 5, 5, 5)),
    (5, 7, (1, 1, 7, 11, 19)),
    (5, 11, (1, 1, 5, 1, 1)),
    (5, 13, (1, 1, 1, 3, 11)),
    (5, 14, (1, 3, 5, 5, 31)),
    (6, 1, (1, 3, 3, 9, 7, 49)),
    (6, 13, (1, 1, 1, 15, 21, 21)),
    (6, 16, (1, 3, 1, 13, 27, 49)),
    (6, 19, (1, 1, 1, 15, 7, 5)),
    (6, 22, (1, 3, 1, 15, 13, 25)),
    (6, 25, (1, 1, 5, 5, 19, 61)),
    (7, 1, (1, 3, 7, 11, 23, 15, 103)),
    (7, 4, (1, 3, 7, 13, 13, 15, 69)),
    (7, 7, (1, 1, 3, 13, 7, 35, 63)),
    (7, 8, (1, 3, 5, 9, 1, 25, 53)),
    (7, 14, (1, 3, 1, 13, 9, 35, 107)),
    (7, 19, (1, 1, 1, 5, 27, 61, 129)),
    (7, 21, (1, 1, 7, 15, 3, 13, 35)),
    (7, 28, (1, 3, 5, 3, 15, 43, 49)),
    (7, 31, (1, 3, 1, 3, 23, 7, 69)),
    (7, 32, (1, 1, 5, 13, 11, 75, 73)),
    (7, 37, (1, 3, 7, 7, 17, 51, 71)),
    (7, 41, (1, 3, 1, 15, 29, 45, 107)),
    (7, 42, (1, 3, 1, 9, 5, 21, 121)),
)

MAX_SOBOL_DIM = 1 + len(_DIRECTIONS)


def _direction_vectors(dim_index: int) -> np.ndarray:
    """Direction integers v_1..v_NBITS for one dimension (0-based index)."""
    if dim_index == 0:
        return np.array([1 << (_NBITS - k) for k in range(1, _NBITS + 1)],
                        dtype=np.int64)
    s, a, m_init = _DIRECTIONS[dim_index - 1]
    v = np.zeros(_NBITS, dtype=np.int64)
    for k in range(s):
        v[k] = m_init[k] << (_NBITS - (k + 1))
    for k in range(s, _NBITS):
        acc = v[k - s] ^ (v[k - s] >> s)
        for i in range(1, s):
            if (a >> (s - 1 - i)) & 1:
                acc ^= v[k - i]
        v[k] = acc
    return v


def _sobol_integers(n: int, dim: int) -> np.ndarray:
    """First n Sobol points in natural order as (n, dim) integers < 2^NBITS."""
    if dim > MAX_SOBOL_DIM:
        raise UnsupportedDimensionError(
            f"Sobol direction-number table covers {MAX_SOBOL_DIM} dimensions, "
            f"got {dim}"
        )
    idx = np.arange(n, dtype=np.int64)
    pts = np.zeros((n, dim), dtype=np.int64)
    V = np.stack([_direction_vectors(j) for j in range(dim)], axis=0)  # (dim, NBITS)
    for bit in range(_NBITS):
        mask = ((idx >> bit) & 1).astype(bool)
        if mask.any():
            pts[mask] ^= V[:, bit][None, :]
    return pts


def _scramble(pts: np.ndarray, seed: int) -> np.ndarray:
    """Seeded digit scramble: lower-triangular bit matrix then digital shift,
    independently per dimension."""
    n, dim = pts.shape
    rng = np.random.default_rng(seed)
    out = np.zeros_like(pts)
    for j in range(dim):
        x = pts[:, j]
        y = np.zeros(n, dtype=np.int64)
        for i in range(1, _NBITS + 1):
            # digits 1..i live at bit positions NBITS-1 .. NBITS-i
            row = 1 << (_NBITS - i)
            if i > 1:
                rand_bits = int(rng.integers(0, 1 << (i - 1)))
                row |= rand_bits << (_NBITS - i + 1)
            bit = np.bitwise_count((x & row).astype(np.uint64)).astype(np.int64) & 1
            y |= bit << (_NBITS - i)
        shift = int(rng.integers(0, 1 << _NBITS))
        out[:, j] = y ^ shift
    return out


@dataclass(frozen=True)
class QmcStream:
    """Materialized Gaussian sample stream for trajectory fantasies.

    ``dim`` counts Gaussian coordinates per sample. In sobol mode ``n`` must
    be a power of two so the points form a balanced prefix of the sequence.
    """

    dim: int
    n: int
    seed: int
    mode: str = "sobol"
    scramble: bool = True
    _uniforms: np.ndarray = field(init=False, repr=False, compare=False)
    _normals: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim < 1 or self.n < 1:
            raise ValueError("dim and n must be at least 1")
        if self.mode not in ("sobol", "pseudorandom"):
            raise ValueError(f"unknown stream mode: {self.mode!r}")
        udim = self.dim + (self.dim & 1)  # Box-Muller consumes pairs
        if self.mode == "sobol":
            if self.n & (self.n - 1):
                raise ValueError("sobol mode requires n to be a power of two")
            ints = _sobol_integers(self.n, udim)
            if self.scramble:
                ints = _scramble(ints, self.seed)
            u = ints / _SCALE
        else:
            u = np.random.default_rng(self.seed).random((self.n, udim))
        normals = gaussianize(u)[:, : self.dim]
        u = u[:, : self.dim]
        u.flags.writeable = False
        normals.flags.writeable = False
        object.__setattr__(self, "_uniforms", u)
        object.__setattr__(self, "_normals", normals)

    def normals(self) -> np.ndarray:
        """(n, dim) standard-normal tensor; identical on every call."""
        return self._normals


def uniform_points(stream: QmcStream) -> np.ndarray:
    """(n, dim) points in [0, 1); identical on every call."""
    return stream._uniforms


def gaussianize(u: np.ndarray) -> np.ndarray:
    """Map uniform columns to standard normals via Box-Muller.

    Columns pair up as (u1, u2) -> (sqrt(-2 ln u1) cos(2 pi u2),
    sqrt(-2 ln u1) sin(2 pi u2)); entries are clamped away from {0, 1} by
    1e-12 first. The column count must be even (streams with an odd
    Gaussian dimension generate one spare uniform column and drop the
    final sine coordinate).
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 2 or u.shape[1] % 2:
        raise ValueError("gaussianize expects a 2-d array with an even column count")
    u = np.clip(u, 1e-12, 1.0 - 1e-12)
    out = np.empty_like(u)
    r = np.sqrt(-2.0 * np.log(u[:, 0::2]))
    theta = 2.0 * np.pi * u[:, 1::2]
    out[:, 0::2] = r * np.cos(theta)
    out[:, 1::2] = r * np.sin(theta)
    return out
