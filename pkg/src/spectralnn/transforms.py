"""Dense DCT-II / DFT transformation matrices and two-sided 2-D transforms.

Every matrix here is a row-major float64 ``numpy.ndarray``. A complex matrix
is carried as a :class:`ComplexPair` of equally shaped real matrices so that
all arithmetic stays real-valued. Transforms are applied as two matrix
products, ``W1 @ x @ W2.T``, never via FFT.

Conventions that matter for round trips:

* the forward matrices carry no normalization;
* the inverse DFT matrix folds a ``1/N`` factor into each side, so
  ``idft . dft`` is an exact identity;
* the inverse DCT is the DCT-III with a first column of ``1/N`` and a
  ``2/N`` factor elsewhere, which inverts the unnormalized DCT-II.

``vec`` stacks column-major (so the Kronecker identity
``(B.T kron A) vec(X) = vec(A X B)`` holds as written), while
:func:`flatten_left_weight` flattens row-first. The two conventions are
intentional and tested separately.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class TransformKind(Enum):
    """Initialization kinds a matrix transform layer can carry."""

    DCT2 = "dct2"
    DCT3_INVERSE = "dct3-inverse"
    DFT_FORWARD = "dft"
    DFT_INVERSE = "idft"
    RANDOM_NORMALIZED = "random"


class OutputMode(Enum):
    """How a complex transform result is turned into a real feature map."""

    CONCAT = "concat"
    AMPLITUDE = "amplitude"


@dataclass(frozen=True)
class ComplexPair:
    """A complex matrix stored as separate real and imaginary parts."""

    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ValueError(
                f"real part shape {self.re.shape} != imaginary part shape {self.im.shape}"
            )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape

    def conj_t(self) -> "ComplexPair":
        """Conjugate transpose."""
        return ComplexPair(self.re.T.copy(), -self.im.T.copy())

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im


def _require_positive(**dims: int) -> None:
    for name, value in dims.items():
        if value < 1:
            raise ValueError(f"{name} must be >= 1, got {value}")


def _finite(m: np.ndarray) -> np.ndarray:
    if not np.isfinite(m).all():
        raise ValueError("matrix contains non-finite entries")
    return m


def build_dct2(k: int, n: int) -> np.ndarray:
    """K x N DCT-II matrix with entries cos((pi/N) * (col + 1/2) * row)."""
    _require_positive(k=k, n=n)
    rows = np.arange(k, dtype=np.float64)[:, None]
    cols = np.arange(n, dtype=np.float64)[None, :]
    return _finite(np.cos((np.pi / n) * (cols + 0.5) * rows))


def build_dct3_inverse(n: int, k: int) -> np.ndarray:
    """N x K inverse of the unnormalized DCT-II (a scaled DCT-III).

    Column 0 is 1/N; column k>0 is (2/N) * cos((pi/N) * k * (row + 1/2)).
    ``build_dct3_inverse(n, n) @ build_dct2(n, n)`` is the identity.
    """
    _require_positive(n=n, k=k)
    rows = np.arange(n, dtype=np.float64)[:, None]
    cols = np.arange(k, dtype=np.float64)[None, :]
    out = (2.0 / n) * np.cos((np.pi / n) * cols * (rows + 0.5))
    out[:, 0] = 1.0 / n
    return _finite(out)


def build_dft(k: int, n: int) -> ComplexPair:
    """K x N DFT matrix exp(-2*pi*j*row*col/N), split into re/im parts."""
    _require_positive(k=k, n=n)
    angle = -2.0 * np.pi * np.outer(np.arange(k), np.arange(n)) / n
    return ComplexPair(_finite(np.cos(angle)), _finite(np.sin(angle)))


def build_idft(n: int, k: int) -> ComplexPair:
    """N x K inverse DFT matrix (1/N) * exp(+2*pi*j*row*col/N).

    This is the conjugate transpose of :func:`build_dft` scaled by 1/N,
    so applying it on both sides of a 2-D transform undoes the forward
    transform exactly.
    """
    _require_positive(n=n, k=k)
    angle = 2.0 * np.pi * np.outer(np.arange(n), np.arange(k)) / n
    return ComplexPair(_finite(np.cos(angle) / n), _finite(np.sin(angle) / n))


def _check_two_sided_shapes(x_shape, wk_shape, wl_shape) -> None:
    n, m = x_shape
    if wk_shape[1] != n:
        raise ValueError(f"left matrix has {wk_shape[1]} columns, input has {n} rows")
    if wl_shape[1] != m:
        raise ValueError(f"right matrix has {wl_shape[1]} columns, input has {m} columns")


def dct2d_forward(x: np.ndarray, wk: np.ndarray, wl: np.ndarray) -> np.ndarray:
    """Two-sided real transform wk @ x @ wl.T of an N x M matrix."""
    _check_two_sided_shapes(x.shape, wk.shape, wl.shape)
    return wk @ x @ wl.T


def dft2d_forward_real(x: np.ndarray, wk: ComplexPair, wl: ComplexPair) -> ComplexPair:
    """2-D DFT of a real matrix, computed entirely in real arithmetic.

    Expands (Wrk + j*Wik) @ x @ (Wrl + j*Wil).T into

        X_R = Wrk @ x @ Wrl.T - Wik @ x @ Wil.T
        X_I = Wik @ x @ Wrl.T + Wrk @ x @ Wil.T

    and equals the naive complex 2-D DFT of ``x``.
    """
    _check_two_sided_shapes(x.shape, wk.shape, wl.shape)
    re_left = wk.re @ x
    im_left = wk.im @ x
    x_r = re_left @ wl.re.T - im_left @ wl.im.T
    x_i = im_left @ wl.re.T + re_left @ wl.im.T
    return ComplexPair(x_r, x_i)


def dft2d_complex(x: ComplexPair, wk: ComplexPair, wl: ComplexPair) -> ComplexPair:
    """Two-sided complex product wk @ x @ wl.T for complex x, in real arithmetic.

    Needed by inverse-DFT paths whose input is itself a re/im pair.
    """
    _check_two_sided_shapes(x.shape, wk.shape, wl.shape)
    u = wk.re @ x.re - wk.im @ x.im
    v = wk.im @ x.re + wk.re @ x.im
    return ComplexPair(u @ wl.re.T - v @ wl.im.T, u @ wl.im.T + v @ wl.re.T)


def complex_output(pair: ComplexPair, mode: OutputMode) -> np.ndarray:
    """Collapse a complex result to a real matrix.

    CONCAT stacks [X_R; X_I] vertically (2K x L); AMPLITUDE takes the
    entrywise magnitude sqrt(X_R^2 + X_I^2) (K x L).
    """
    if mode is OutputMode.CONCAT:
        return np.vstack([pair.re, pair.im])
    if mode is OutputMode.AMPLITUDE:
        return np.hypot(pair.re, pair.im)
    raise ValueError(f"unknown output mode {mode!r}")


def check_real_dft_symmetry(x: ComplexPair, tol: float) -> bool:
    """True iff X[k,l] == conj(X[(N-k) % N, (M-l) % M]) within tol.

    Holds for the full-size DFT of any real input; fails once the
    transformed signal had a nonzero imaginary part.
    """
    n, m = x.shape
    mirror_rows = (-np.arange(n)) % n
    mirror_cols = (-np.arange(m)) % m
    mirrored_re = x.re[np.ix_(mirror_rows, mirror_cols)]
    mirrored_im = x.im[np.ix_(mirror_rows, mirror_cols)]
    return bool(
        np.max(np.abs(x.re - mirrored_re)) <= tol
        and np.max(np.abs(x.im + mirrored_im)) <= tol
    )


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product: block (i,j) of the result is a[i,j] * b."""
    if a.size == 0 or b.size == 0:
        raise ValueError("kron requires nonempty matrices")
    m, n = a.shape
    k, l = b.shape
    # explicit block construction, kept deliberately simple
    return (a[:, None, :, None] * b[None, :, None, :]).reshape(m * k, n * l)


def vec(x: np.ndarray) -> np.ndarray:
    """Column-major stacking of a matrix into a single column."""
    if x.size == 0:
        raise ValueError("vec requires a nonempty matrix")
    return x.reshape(-1, 1, order="F").copy()


def flatten_left_weight(w: np.ndarray) -> np.ndarray:
    """Expand a left-multiplying N x N weight into its N^2 x N^2 block form.

    The result acts on row-first flattened inputs:
    ``flatten_left_weight(W) @ X.reshape(-1) == (W @ X).reshape(-1)``.
    Block (i,j) is w[i,j] * I_N, so the expanded matrix has density 1/N.
    """
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {w.shape}")
    n = w.shape[0]
    return kron(w, np.eye(n))
