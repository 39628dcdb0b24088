"""Concrete layers: convolution, Leaky ReLU, trainable matrix transforms,
global average pooling and a dense classifier.

The matrix transform layer applies ``W1 @ x @ W2.T`` to every channel of
every batch item, with one shared (W1, W2) per layer. Spectral kinds start
from exact DCT/DFT matrices; the DFT kinds keep four real weight matrices
(re/im per side). Complex results are emitted either as concatenated
real/imaginary channel blocks (doubling the channel count) or as the
entrywise amplitude.

Parameter counting follows the closed-form per-module formulas
(``conv = F_w*F_h*F_n*I_d``, square transforms ``2*S^2`` real / ``4*S^2``
complex, pooling free, classifier ``features*classes``); biases are off by
default so realized counts match those formulas.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import (
    Layer,
    Param,
    lmul,
    rmul,
    rmul_t,
    sum_abt,
    sum_atb,
    two_sided_backward,
    two_sided_forward,
)
from .transforms import (
    OutputMode,
    TransformKind,
    build_dct2,
    build_dct3_inverse,
    build_dft,
    build_idft,
)


class InitKind(Enum):
    RND = "RND"
    DCT = "DCT"
    DFT = "DFT"


def init_random_normalized(rows: int, cols: int, seed) -> np.ndarray:
    """Uniform draw on [-b, b] with b = sqrt(6 / (rows + cols))."""
    if rows < 1 or cols < 1:
        raise ValueError("dimensions must be positive")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


@dataclass(frozen=True)
class ConvSpec:
    """Geometry and channel counts of one convolution."""

    in_channels: int
    out_channels: int
    kernel_h: int
    kernel_w: int
    stride: int = 1
    padding: int = 0
    bias: bool = False

    def __post_init__(self):
        for name in ("in_channels", "out_channels", "kernel_h", "kernel_w", "stride"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.padding < 0:
            raise ValueError("padding must be >= 0")

    def out_size(self, h: int, w: int) -> tuple[int, int]:
        oh = (h + 2 * self.padding - self.kernel_h) // self.stride + 1
        ow = (w + 2 * self.padding - self.kernel_w) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ValueError(
                f"kernel {self.kernel_h}x{self.kernel_w} stride {self.stride} "
                f"does not fit a {h}x{w} input"
            )
        return oh, ow


@dataclass(frozen=True)
class TransformSpec:
    """Size and kind of one matrix transform layer."""

    kind: TransformKind
    height: int
    width: int
    output_mode: OutputMode = OutputMode.CONCAT


@dataclass(frozen=True)
class DenseSpec:
    in_features: int
    out_features: int
    bias: bool = False


def count_params(component) -> int:
    """Closed-form trainable-parameter count of a single component."""
    if isinstance(component, ConvSpec):
        n = component.kernel_w * component.kernel_h * component.out_channels * component.in_channels
        return n + (component.out_channels if component.bias else 0)
    if isinstance(component, TransformSpec):
        per_pair = component.height**2 + component.width**2
        if component.kind in (TransformKind.DFT_FORWARD, TransformKind.DFT_INVERSE):
            return 2 * per_pair
        return per_pair
    if isinstance(component, DenseSpec):
        return component.in_features * component.out_features + (
            component.out_features if component.bias else 0
        )
    if isinstance(component, Layer):
        return component.param_count()
    raise TypeError(f"cannot count parameters of {type(component).__name__}")


class Conv2d(Layer):
    """Standard cross-correlation over (batch, channel, height, width)."""

    def __init__(self, spec: ConvSpec, rng: np.random.Generator, frozen: bool = False):
        self.spec = spec
        fan_in = spec.in_channels * spec.kernel_h * spec.kernel_w
        fan_out = spec.out_channels * spec.kernel_h * spec.kernel_w
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        shape = (spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w)
        self.kernels = Param(rng.uniform(-bound, bound, size=shape), frozen=frozen)
        self.bias = Param(np.zeros(spec.out_channels), frozen=frozen) if spec.bias else None
        self._cache = None

    def params(self) -> list[Param]:
        return [self.kernels] + ([self.bias] if self.bias is not None else [])

    def forward(self, x: np.ndarray) -> np.ndarray:
        s = self.spec
        batch, c, h, w = x.shape
        if c != s.in_channels:
            raise ValueError(f"expected {s.in_channels} input channels, got {c}")
        oh, ow = s.out_size(h, w)
        if s.padding:
            xp = np.zeros((batch, c, h + 2 * s.padding, w + 2 * s.padding))
            xp[:, :, s.padding : s.padding + h, s.padding : s.padding + w] = x
        else:
            xp = x
        windows = sliding_window_view(xp, (s.kernel_h, s.kernel_w), axis=(2, 3))
        windows = windows[:, :, :: s.stride, :: s.stride]
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * oh * ow, -1)
        w_mat = self.kernels.value.reshape(s.out_channels, -1)
        out = cols @ w_mat.T
        if self.bias is not None:
            out += self.bias.value
        out = out.reshape(batch, oh, ow, s.out_channels).transpose(0, 3, 1, 2)
        self._cache = (cols, x.shape, xp.shape)
        assert np.isfinite(out).all()
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        s = self.spec
        cols, x_shape, xp_shape = self._cache
        batch, _, oh, ow = grad_out.shape
        g_mat = grad_out.transpose(0, 2, 3, 1).reshape(batch * oh * ow, s.out_channels)
        self.kernels.grad += (g_mat.T @ cols).reshape(self.kernels.value.shape)
        if self.bias is not None:
            self.bias.grad += grad_out.sum(axis=(0, 2, 3))
        grad_cols = g_mat @ self.kernels.value.reshape(s.out_channels, -1)
        # one re-layout to kernel-offset-major, then contiguous adds per offset
        grad_win = np.ascontiguousarray(
            grad_cols.reshape(batch, oh, ow, s.in_channels, s.kernel_h, s.kernel_w)
            .transpose(4, 5, 0, 3, 1, 2)
        )
        grad_xp = np.zeros(xp_shape)
        for i in range(s.kernel_h):
            for j in range(s.kernel_w):
                grad_xp[
                    :, :, i : i + s.stride * oh : s.stride, j : j + s.stride * ow : s.stride
                ] += grad_win[i, j]
        h, w = x_shape[2], x_shape[3]
        return grad_xp[:, :, s.padding : s.padding + h, s.padding : s.padding + w]


class LeakyRelu(Layer):
    """Entrywise max(x, slope * x) with slope in (0, 1)."""

    def __init__(self, slope: float = 0.01):
        if not 0.0 < slope < 1.0:
            raise ValueError(f"slope must lie in (0, 1), got {slope}")
        self.slope = slope
        self._scale = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._scale = np.where(x > 0, 1.0, self.slope)
        return x * self._scale

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out * self._scale


class MatrixTransform(Layer):
    """Trainable two-sided transform applied per channel.

    Real kinds (DCT-II, inverse DCT, random-normalized) hold one W1 and one
    W2. DFT kinds hold re/im parts of each. A forward DFT emits either
    concatenated [real; imag] channel blocks or the amplitude; the inverse
    DFT consumes such paired channels (first half real, second half imag)
    and emits the real part of the inverse transform.
    """

    REAL_KINDS = (
        TransformKind.DCT2,
        TransformKind.DCT3_INVERSE,
        TransformKind.RANDOM_NORMALIZED,
    )

    def __init__(
        self,
        kind: TransformKind,
        height: int,
        width: int,
        output_mode: OutputMode = OutputMode.CONCAT,
        frozen: bool = False,
        rng: np.random.Generator | None = None,
        paired_input: bool = False,
    ):
        if height < 1 or width < 1:
            raise ValueError("transform size must be positive")
        self.kind = kind
        self.height = height
        self.width = width
        self.output_mode = output_mode
        self.frozen = frozen
        self.paired_input = paired_input and kind is TransformKind.DFT_INVERSE
        self._cache = None

        if kind is TransformKind.DCT2:
            w1, w2 = build_dct2(height, height), build_dct2(width, width)
        elif kind is TransformKind.DCT3_INVERSE:
            w1, w2 = build_dct3_inverse(height, height), build_dct3_inverse(width, width)
        elif kind is TransformKind.RANDOM_NORMALIZED:
            if rng is None:
                raise ValueError("random-normalized initialization needs an rng")
            w1 = init_random_normalized(height, height, rng)
            w2 = init_random_normalized(width, width, rng)
        elif kind is TransformKind.DFT_FORWARD:
            p1, p2 = build_dft(height, height), build_dft(width, width)
        elif kind is TransformKind.DFT_INVERSE:
            p1, p2 = build_idft(height, height), build_idft(width, width)
        else:
            raise ValueError(f"unknown transform kind {kind!r}")

        if self.is_complex:
            self.w1_re = Param(p1.re, frozen=frozen)
            self.w1_im = Param(p1.im, frozen=frozen)
            self.w2_re = Param(p2.re, frozen=frozen)
            self.w2_im = Param(p2.im, frozen=frozen)
        else:
            self.w1 = Param(w1, frozen=frozen)
            self.w2 = Param(w2, frozen=frozen)

    @property
    def is_complex(self) -> bool:
        return self.kind in (TransformKind.DFT_FORWARD, TransformKind.DFT_INVERSE)

    def params(self) -> list[Param]:
        if self.is_complex:
            return [self.w1_re, self.w1_im, self.w2_re, self.w2_im]
        return [self.w1, self.w2]

    def _check_spatial(self, x: np.ndarray) -> None:
        if x.ndim != 4:
            raise ValueError(f"expected a 4-D input, got shape {x.shape}")
        if x.shape[-2:] != (self.height, self.width):
            raise ValueError(
                f"layer built for {self.height}x{self.width} maps, got {x.shape[-2:]}"
            )

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._check_spatial(x)
        if not self.is_complex:
            self._cache = x
            out = two_sided_forward(x, self.w1.value, self.w2.value)
        elif self.kind is TransformKind.DFT_FORWARD:
            out = self._forward_dft(x)
        else:
            out = self._forward_idft(x)
        assert np.isfinite(out).all()
        return out

    def _forward_dft(self, x: np.ndarray) -> np.ndarray:
        a, b = self.w1_re.value, self.w1_im.value
        c, d = self.w2_re.value, self.w2_im.value
        # one stacked left product gives u = a @ x and v = b @ x at once
        uv = lmul(np.vstack([a, b]), x)
        u, v = uv[..., : self.height, :], uv[..., self.height :, :]
        cat = np.concatenate([u, v], axis=-1)
        x_r = rmul_t(cat, np.hstack([c, -d]))  # u c^T - v d^T
        x_i = rmul_t(cat, np.hstack([d, c]))  # u d^T + v c^T
        if self.output_mode is OutputMode.CONCAT:
            self._cache = (x, u, v, None)
            return np.concatenate([x_r, x_i], axis=1)
        amp = np.hypot(x_r, x_i)
        self._cache = (x, u, v, (x_r, x_i, amp))
        return amp

    def _forward_idft(self, x: np.ndarray) -> np.ndarray:
        a, b = self.w1_re.value, self.w1_im.value
        c, d = self.w2_re.value, self.w2_im.value
        k = self.height
        uv = lmul(np.vstack([a, b]), x)
        u, v = uv[..., :k, :], uv[..., k:, :]
        if self.paired_input:
            if x.shape[1] % 2:
                raise ValueError("paired complex input needs an even channel count")
            half = x.shape[1] // 2
            # real part of (a + jb) (x_r + j x_i) (c + jd)^T
            real_cat = np.concatenate([u[:, :half], v[:, :half]], axis=-1)
            imag_cat = np.concatenate([u[:, half:], v[:, half:]], axis=-1)
            out = rmul_t(real_cat, np.hstack([c, -d])) - rmul_t(
                imag_cat, np.hstack([d, c])
            )
        else:
            cat = np.concatenate([u, v], axis=-1)
            out = rmul_t(cat, np.hstack([c, -d]))
        self._cache = (x, u, v)
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if not self.is_complex:
            x = self._cache
            grad_x, g1, g2 = two_sided_backward(grad_out, x, self.w1.value, self.w2.value)
            self.w1.grad += g1
            self.w2.grad += g2
            return grad_x
        if self.kind is TransformKind.DFT_FORWARD:
            return self._backward_dft(grad_out)
        return self._backward_idft(grad_out)

    def _backward_dft(self, grad_out: np.ndarray) -> np.ndarray:
        x, u, v, amp_cache = self._cache
        a, b = self.w1_re.value, self.w1_im.value
        c, d = self.w2_re.value, self.w2_im.value
        if self.output_mode is OutputMode.CONCAT:
            half = grad_out.shape[1] // 2
            g_r, g_i = grad_out[:, :half], grad_out[:, half:]
        else:
            x_r, x_i, amp = amp_cache
            safe = np.where(amp == 0.0, 1.0, amp)
            g_r = grad_out * np.where(amp == 0.0, 0.0, x_r / safe)
            g_i = grad_out * np.where(amp == 0.0, 0.0, x_i / safe)
        cat_g = np.concatenate([g_r, g_i], axis=-1)
        p = rmul(cat_g, np.vstack([c, d]))  # g_r c + g_i d
        q = rmul(cat_g, np.vstack([-d, c]))  # g_i c - g_r d
        self.w1_re.grad += sum_abt(p, x)
        self.w1_im.grad += sum_abt(q, x)
        self.w2_re.grad += sum_atb(g_r, u) + sum_atb(g_i, v)
        self.w2_im.grad += sum_atb(g_i, u) - sum_atb(g_r, v)
        return lmul(np.hstack([a.T, b.T]), np.concatenate([p, q], axis=-2))

    def _backward_idft(self, grad_out: np.ndarray) -> np.ndarray:
        x, u, v = self._cache
        a, b = self.w1_re.value, self.w1_im.value
        c, d = self.w2_re.value, self.w2_im.value
        m = self.width
        r = rmul(grad_out, np.hstack([c, d]))  # grad @ c and grad @ d, stacked
        r1, r2 = r[..., :m], r[..., m:]
        left_t = np.hstack([a.T, b.T])
        if self.paired_input:
            half = x.shape[1] // 2
            x_r, x_i = x[:, :half], x[:, half:]
            self.w1_re.grad += sum_abt(r1, x_r) - sum_abt(r2, x_i)
            self.w1_im.grad += -sum_abt(r1, x_i) - sum_abt(r2, x_r)
            self.w2_re.grad += sum_atb(grad_out, u[:, :half]) - sum_atb(
                grad_out, v[:, half:]
            )
            self.w2_im.grad += -sum_atb(grad_out, v[:, :half]) - sum_atb(
                grad_out, u[:, half:]
            )
            grad_r = lmul(left_t, np.concatenate([r1, -r2], axis=-2))
            grad_i = lmul(left_t, np.concatenate([-r2, -r1], axis=-2))
            return np.concatenate([grad_r, grad_i], axis=1)
        self.w1_re.grad += sum_abt(r1, x)
        self.w1_im.grad += -sum_abt(r2, x)
        self.w2_re.grad += sum_atb(grad_out, u)
        self.w2_im.grad += -sum_atb(grad_out, v)
        return lmul(left_t, np.concatenate([r1, -r2], axis=-2))

    def export_w1(self) -> np.ndarray:
        """First weight matrix (real part for DFT kinds)."""
        return (self.w1_re if self.is_complex else self.w1).value.copy()


class GlobalAvgPool(Layer):
    """Per-channel spatial mean; (B, C, H, W) -> (B, C, 1, 1)."""

    def __init__(self):
        self._hw = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._hw = x.shape[2], x.shape[3]
        return x.mean(axis=(2, 3), keepdims=True)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        h, w = self._hw
        return np.broadcast_to(grad_out / (h * w), grad_out.shape[:2] + (h, w)).copy()


class Flatten(Layer):
    """(B, C, H, W) -> (B, C*H*W)."""

    def __init__(self):
        self._shape = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        return grad_out.reshape(self._shape)


class Dense(Layer):
    """Fully connected map (B, F) -> (B, C): x @ W + b."""

    def __init__(self, spec: DenseSpec, rng: np.random.Generator, frozen: bool = False):
        self.spec = spec
        bound = np.sqrt(6.0 / (spec.in_features + spec.out_features))
        self.weights = Param(
            rng.uniform(-bound, bound, size=(spec.in_features, spec.out_features)),
            frozen=frozen,
        )
        self.bias = Param(np.zeros(spec.out_features), frozen=frozen) if spec.bias else None
        self._cache = None

    def params(self) -> list[Param]:
        return [self.weights] + ([self.bias] if self.bias is not None else [])

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 2 or x.shape[1] != self.spec.in_features:
            raise ValueError(
                f"expected (batch, {self.spec.in_features}) input, got {x.shape}"
            )
        self._cache = x
        out = x @ self.weights.value
        if self.bias is not None:
            out += self.bias.value
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        x = self._cache
        self.weights.grad += x.T @ grad_out
        if self.bias is not None:
            self.bias.grad += grad_out.sum(axis=0)
        return grad_out @ self.weights.value.T
