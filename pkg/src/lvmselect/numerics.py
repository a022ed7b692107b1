"""Deterministic dense linear algebra and seeded random number generation.

Matrices are plain 2-D float64 ``numpy`` arrays (row-major).  The
factorizations are delegated to LAPACK via ``numpy.linalg`` and post-processed
into a canonical form (descending eigenvalues, fixed eigenvector signs) so
that repeated calls on equal inputs give bit-identical results.

The random generator is a hand-rolled xorshift64* stream.  Seeding goes
through one splitmix64 round, uniform doubles take the top 53 bits, and
normal variates are produced by the Box-Muller transform.  The stream
consumed for ``n`` draws depends only on ``n``, never on the values drawn,
so substreams stay aligned across platforms and runs.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import ContractViolation, DegenerateMatrix

_MASK64 = (1 << 64) - 1
_SPLITMIX_GAMMA = 0x9E3779B97F4A7C15
_XORSHIFT_MULT = 0x2545F4914F6CDD1D


def _splitmix64(x):
    x = (x + _SPLITMIX_GAMMA) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


class Rng:
    """xorshift64* generator with a splitmix64-seeded 64-bit state.

    The object is advanced in place; callers that need independent streams
    derive them with :meth:`spawn`.
    """

    algorithm = "xorshift64*"

    def __init__(self, seed):
        state = _splitmix64(int(seed) & _MASK64)
        # xorshift state must never be zero
        self.state = state if state != 0 else _SPLITMIX_GAMMA

    def next_u64(self):
        x = self.state
        x ^= (x >> 12)
        x ^= (x << 25) & _MASK64
        x ^= (x >> 27)
        self.state = x
        return (x * _XORSHIFT_MULT) & _MASK64

    def uniforms(self, n):
        """``n`` doubles in [0, 1) using the top 53 bits of each word."""
        out = np.empty(n)
        for i in range(n):
            out[i] = (self.next_u64() >> 11) * (2.0 ** -53)
        return out

    def normals(self, n):
        """``n`` standard normal variates; see :func:`draw_gaussian`."""
        return draw_gaussian(self, n)

    def integers(self, lo, hi, n):
        """``n`` ints uniform on [lo, hi) by scaling uniform doubles."""
        u = self.uniforms(n)
        return (lo + np.floor(u * (hi - lo))).astype(np.int64)

    def choice_without_replacement(self, pool, k):
        """``k`` distinct indices from range(pool) via partial Fisher-Yates."""
        if k > pool:
            raise ContractViolation(f"cannot draw {k} distinct items from {pool}")
        idx = list(range(pool))
        for i in range(k):
            j = i + int(self.uniforms(1)[0] * (pool - i))
            j = min(j, pool - 1)
            idx[i], idx[j] = idx[j], idx[i]
        return np.asarray(idx[:k], dtype=np.int64)

    def spawn(self, stream):
        """Derived generator for substream ``stream`` of this seed."""
        return Rng(_splitmix64(self.state ^ (int(stream) & _MASK64)))


def draw_gaussian(rng, n):
    """``n`` standard normal variates via the Box-Muller transform.

    Consumes exactly ``2 * ceil(n / 2)`` uniforms so the stream position
    after the call depends only on ``n``.
    """
    if n < 0:
        raise ContractViolation("n must be >= 0")
    if n == 0:
        return np.empty(0)
    pairs = (n + 1) // 2
    u = rng.uniforms(2 * pairs)
    u1 = u[0::2]
    u2 = u[1::2]
    # guard log(0): map 0 to the smallest representable uniform
    u1 = np.maximum(u1, 2.0 ** -53)
    r = np.sqrt(-2.0 * np.log(u1))
    theta = 2.0 * np.pi * u2
    z = np.empty(2 * pairs)
    z[0::2] = r * np.cos(theta)
    z[1::2] = r * np.sin(theta)
    return z[:n]


@dataclass(frozen=True)
class SymEigResult:
    """Eigenvalues sorted descending; eigenvectors as matching columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def _require_symmetric(a, rtol=1e-9):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ContractViolation(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ContractViolation("matrix entries must be finite")
    scale = max(1.0, float(np.max(np.abs(a))))
    if np.max(np.abs(a - a.T)) > rtol * scale:
        raise ContractViolation("matrix is not symmetric within tolerance")
    return 0.5 * (a + a.T)


def sym_eig(a):
    """Eigen-decomposition of a symmetric matrix in canonical form.

    Eigenvalues come out in descending order; each eigenvector is scaled so
    its largest-magnitude entry is positive (first such entry on ties).
    """
    s = _require_symmetric(a)
    vals, vecs = np.linalg.eigh(s)
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    vecs = vecs[:, order]
    for j in range(vecs.shape[1]):
        col = vecs[:, j]
        i = int(np.argmax(np.abs(col)))
        if col[i] < 0:
            vecs[:, j] = -col
    return SymEigResult(eigenvalues=vals, eigenvectors=vecs)


def _cholesky_pd(a):
    s = _require_symmetric(a)
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError:
        smallest = float(np.linalg.eigvalsh(s)[0])
        raise DegenerateMatrix(
            f"matrix is not positive definite (smallest eigenvalue {smallest:.3e})",
            smallest_eigenvalue=smallest,
        ) from None


def logdet_pd(a):
    """log-determinant of an SPD matrix via its Cholesky factor."""
    chol = _cholesky_pd(a)
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def solve_spd(a, b):
    """Solve ``a x = b`` for SPD ``a`` via Cholesky forward/back substitution."""
    chol = _cholesky_pd(a)
    b = np.asarray(b, dtype=float)
    y = solve_triangular(chol, b, lower=True)
    return solve_triangular(chol.T, y, lower=False)
