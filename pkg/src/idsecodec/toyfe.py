"""Analytic feature extractors with exact Jacobians, plus the Lipschitz-bound harness.

These are the desk-scale oracles: small differentiable maps whose Jacobians
are available in closed form, so every downstream approximation
(linearization, block localization, sketching) can be checked against exact
arithmetic.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from idsecodec.core import MB_SIZE, BlockGrid, FormatError, make_rng

EXTRACTOR_KINDS = ("identity", "blur_down", "conv_relu_conv")
_WEIGHTS_MAGIC = b"TWF1"
_WEIGHTS_RESOURCE = "conv_relu_conv_v1.bin"
_KINK_NUDGE = 1e-9


def _as_pixels(x, height: int, width: int) -> np.ndarray:
    pixels = x.pixels if hasattr(x, "pixels") else np.asarray(x, dtype=np.float64)
    if pixels.shape != (height, width):
        raise ValueError(f"image shape {pixels.shape} does not match extractor grid {height}x{width}")
    return np.asarray(pixels, dtype=np.float64)


class ToyFeatureExtractor:
    """Base: a deterministic map from (height, width) pixels to a feature vector."""

    kind = "abstract"

    def __init__(self, width: int, height: int):
        if width <= 0 or height <= 0:
            raise ValueError(f"grid must be positive, got {width}x{height}")
        self.width = width
        self.height = height

    @property
    def name(self) -> str:
        return self.kind

    @property
    def n_pixels(self) -> int:
        return self.width * self.height

    @property
    def output_dim(self) -> int:
        raise NotImplementedError

    def features(self, x) -> np.ndarray:
        raise NotImplementedError

    def vjp(self, x, v: np.ndarray) -> np.ndarray:
        """v @ J_f(x) for a feature-space vector v; returns a raster gradient."""
        raise NotImplementedError

    def vjp_multi(self, x, rows: np.ndarray) -> np.ndarray:
        """Stack of vjp results, one per row of `rows` (shape m x n_f)."""
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != self.output_dim:
            raise ValueError(f"expected rows of shape (m, {self.output_dim}), got {rows.shape}")
        return np.stack([self.vjp(x, v) for v in rows])

    def dense_jacobian(self, x) -> np.ndarray:
        """Explicit n_f x n_p Jacobian, assembled from exact vjp rows."""
        pixels = _as_pixels(x, self.height, self.width)
        out = np.empty((self.output_dim, self.n_pixels))
        basis = np.zeros(self.output_dim)
        for i in range(self.output_dim):
            basis[i] = 1.0
            out[i] = self.vjp(pixels, basis)
            basis[i] = 0.0
        return out


class IdentityExtractor(ToyFeatureExtractor):
    """f(x) = x flattened."""

    kind = "identity"

    @property
    def output_dim(self) -> int:
        return self.n_pixels

    def features(self, x) -> np.ndarray:
        return _as_pixels(x, self.height, self.width).ravel().copy()

    def vjp(self, x, v: np.ndarray) -> np.ndarray:
        if v.shape != (self.output_dim,):
            raise ValueError(f"expected feature vector of length {self.output_dim}")
        return np.asarray(v, dtype=np.float64).copy()

    def dense_jacobian(self, x) -> np.ndarray:
        return np.eye(self.n_pixels)


class BlurDownExtractor(ToyFeatureExtractor):
    """Separable [1,2,1]/4 blur with stride 2 and edge-clamped taps.

    Clamping keeps every output a convex combination of inputs, so constant
    images map to constant features.
    """

    kind = "blur_down"

    def __init__(self, width: int, height: int):
        super().__init__(width, height)
        if width % 2 or height % 2:
            raise ValueError(f"grid must be even for stride-2 output, got {width}x{height}")
        taps = np.array([1.0, 2.0, 1.0]) / 4.0
        self._w = np.outer(taps, taps)

    @property
    def output_dim(self) -> int:
        return (self.height // 2) * (self.width // 2)

    def features(self, x) -> np.ndarray:
        pixels = _as_pixels(x, self.height, self.width)
        xp = np.pad(pixels, 1, mode="edge")
        h, w = self.height, self.width
        out = np.zeros((h // 2, w // 2))
        for dr in range(3):
            for dc in range(3):
                out += self._w[dr, dc] * xp[dr : dr + h - 1 : 2, dc : dc + w - 1 : 2]
        return out.ravel()

    def vjp(self, x, v: np.ndarray) -> np.ndarray:
        if v.shape != (self.output_dim,):
            raise ValueError(f"expected feature vector of length {self.output_dim}")
        h, w = self.height, self.width
        v2 = np.asarray(v, dtype=np.float64).reshape(h // 2, w // 2)
        gp = np.zeros((h + 2, w + 2))
        for dr in range(3):
            for dc in range(3):
                gp[dr : dr + h - 1 : 2, dc : dc + w - 1 : 2] += self._w[dr, dc] * v2
        g = gp[1 : h + 1, 1 : w + 1].copy()
        # fold the edge-replication padding back onto the border pixels
        g[0, :] += gp[0, 1 : w + 1]
        g[h - 1, :] += gp[h + 1, 1 : w + 1]
        g[:, 0] += gp[1 : h + 1, 0]
        g[:, w - 1] += gp[1 : h + 1, w + 1]
        g[0, 0] += gp[0, 0]
        g[0, w - 1] += gp[0, w + 1]
        g[h - 1, 0] += gp[h + 1, 0]
        g[h - 1, w - 1] += gp[h + 1, w + 1]
        return g.ravel()


def _read_tensor_file(data: bytes, origin: str) -> list[np.ndarray]:
    """Little-endian float32 tensors: magic, u32 count, per tensor u32 ndim + dims."""
    if data[:4] != _WEIGHTS_MAGIC:
        raise FormatError(f"{origin}: bad weights magic {data[:4]!r}")
    pos = 4
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    tensors = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", data, pos)
        pos += 4
        dims = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        n = int(np.prod(dims))
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(dims)
        pos += 4 * n
        tensors.append(arr.astype(np.float64))
    if pos != len(data):
        raise FormatError(f"{origin}: trailing bytes in weights file")
    return tensors


def write_tensor_file(path: str, tensors: list[np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(_WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for t in tensors:
            fh.write(struct.pack("<I", t.ndim))
            fh.write(struct.pack(f"<{t.ndim}I", *t.shape))
            fh.write(np.ascontiguousarray(t, dtype="<f4").tobytes())


@lru_cache(maxsize=1)
def _conv_weights() -> tuple[np.ndarray, np.ndarray]:
    data = resources.files("idsecodec").joinpath("data", _WEIGHTS_RESOURCE).read_bytes()
    tensors = _read_tensor_file(data, _WEIGHTS_RESOURCE)
    if len(tensors) != 2 or tensors[0].shape != (4, 1, 3, 3) or tensors[1].shape != (2, 4, 3, 3):
        raise FormatError(f"{_WEIGHTS_RESOURCE}: unexpected tensor shapes")
    w1, w2 = tensors
    w1.setflags(write=False)
    w2.setflags(write=False)
    return w1, w2


def _corr3_batch(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Batched 3x3 cross-correlation with zero padding.

    x: (batch, c_in, h, w); w: (c_out, c_in, 3, 3) -> (batch, c_out, h, w).
    """
    b, c_in, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((b, w.shape[0], h, wd))
    for o in range(w.shape[0]):
        for c in range(c_in):
            for i in range(3):
                for j in range(3):
                    out[:, o] += w[o, c, i, j] * xp[:, c, i : i + h, j : j + wd]
    return out


def _conv3_batch(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Batched 3x3 convolution (correlation with the flipped kernel)."""
    return _corr3_batch(x, w[:, :, ::-1, ::-1])


class ConvReluConvExtractor(ToyFeatureExtractor):
    """3x3 conv (1->4, zero padding) -> ReLU -> 3x3 conv (4->2), no biases.

    Weights are frozen in the repository so the oracle is stable.  The map is
    piecewise linear; its Jacobian is W2 D(x) W1 with D the ReLU mask.  When a
    pre-activation sits exactly on a kink, the mask is taken at x + 1e-9.
    """

    kind = "conv_relu_conv"

    def __init__(self, width: int, height: int):
        super().__init__(width, height)
        self._w1, self._w2 = _conv_weights()
        # adjoint kernels: swap in/out channel axes once
        self._w2_t = np.ascontiguousarray(self._w2.swapaxes(0, 1))
        self._w1_t = np.ascontiguousarray(self._w1.swapaxes(0, 1))

    @property
    def output_dim(self) -> int:
        return 2 * self.n_pixels

    def _pre_activations(self, pixels: np.ndarray) -> np.ndarray:
        return _corr3_batch(pixels[None, None], self._w1)[0]

    def _mask(self, pixels: np.ndarray) -> np.ndarray:
        pre = self._pre_activations(pixels)
        if np.any(pre == 0.0):
            pre = self._pre_activations(pixels + _KINK_NUDGE)
        return pre > 0.0

    def features(self, x) -> np.ndarray:
        pixels = _as_pixels(x, self.height, self.width)
        act = np.maximum(self._pre_activations(pixels), 0.0)
        return _corr3_batch(act[None], self._w2)[0].ravel()

    def _vjp_masked(self, mask: np.ndarray, rows: np.ndarray) -> np.ndarray:
        v = rows.reshape(-1, 2, self.height, self.width)
        g_act = _conv3_batch(v, self._w2_t)
        g_pre = g_act * mask[None]
        g_x = _conv3_batch(g_pre, self._w1_t)
        return g_x.reshape(-1, self.n_pixels)

    def vjp(self, x, v: np.ndarray) -> np.ndarray:
        if v.shape != (self.output_dim,):
            raise ValueError(f"expected feature vector of length {self.output_dim}")
        pixels = _as_pixels(x, self.height, self.width)
        v = np.asarray(v, dtype=np.float64)
        return self._vjp_masked(self._mask(pixels), v[None])[0]

    def vjp_multi(self, x, rows: np.ndarray) -> np.ndarray:
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != self.output_dim:
            raise ValueError(f"expected rows of shape (m, {self.output_dim}), got {rows.shape}")
        pixels = _as_pixels(x, self.height, self.width)
        return self._vjp_masked(self._mask(pixels), rows)

    def dense_jacobian(self, x) -> np.ndarray:
        pixels = _as_pixels(x, self.height, self.width)
        mask = self._mask(pixels)
        out = np.empty((self.output_dim, self.n_pixels))
        for lo in range(0, self.output_dim, 256):
            hi = min(lo + 256, self.output_dim)
            basis = np.zeros((hi - lo, self.output_dim))
            basis[np.arange(hi - lo), np.arange(lo, hi)] = 1.0
            out[lo:hi] = self._vjp_masked(mask, basis)
        return out


class BlockLinearExtractor(ToyFeatureExtractor):
    """Independent frozen linear map per 16x16 macroblock (block-diagonal Jacobian).

    Cross-block coupling is exactly zero, which makes the greedy FD-RDO
    reference sweep exact; used by the oracle-equivalence tests.

    With ``scale_sigma > 0`` each block's operator is multiplied by a frozen
    log-normal gain, giving a heavy-tailed per-block sensitivity profile — a
    small-scale stand-in for feature extractors whose importance concentrates
    on a few regions of the image.

    With ``row_sigma > 0`` each individual feature row additionally gets its
    own frozen log-normal gain, so the rows within one block span widely
    different sensitivities — the analogue of feature channels whose dynamic
    ranges differ by orders of magnitude.
    """

    kind = "block_linear"

    def __init__(
        self,
        width: int,
        height: int,
        out_per_block: int = 32,
        seed: int = 2024,
        scale_sigma: float = 0.0,
        row_sigma: float = 0.0,
    ):
        super().__init__(width, height)
        self._grid = BlockGrid(width, height)
        self.out_per_block = out_per_block
        self.seed = seed
        self.scale_sigma = float(scale_sigma)
        self.row_sigma = float(row_sigma)
        if self.scale_sigma < 0:
            raise ValueError(f"scale_sigma must be >= 0, got {scale_sigma}")
        if self.row_sigma < 0:
            raise ValueError(f"row_sigma must be >= 0, got {row_sigma}")
        n_pb = MB_SIZE * MB_SIZE
        rng = make_rng(seed)
        self._ops = rng.standard_normal((self._grid.n_blocks, out_per_block, n_pb)) / np.sqrt(n_pb)
        if self.scale_sigma > 0:
            gains = np.exp(self.scale_sigma * rng.standard_normal(self._grid.n_blocks))
            self._ops *= gains[:, None, None]
        if self.row_sigma > 0:
            row_gains = np.exp(
                self.row_sigma * rng.standard_normal((self._grid.n_blocks, out_per_block))
            )
            self._ops *= row_gains[:, :, None]

    @property
    def name(self) -> str:
        base = f"{self.kind}:{self.out_per_block}:{self.seed}"
        if self.scale_sigma > 0:
            base = f"{base}:sigma{self.scale_sigma:g}"
        if self.row_sigma > 0:
            base = f"{base}:rowsigma{self.row_sigma:g}"
        return base

    @property
    def output_dim(self) -> int:
        return self._grid.n_blocks * self.out_per_block

    def features(self, x) -> np.ndarray:
        pixels = _as_pixels(x, self.height, self.width)
        flat = pixels.ravel()
        out = np.empty((self._grid.n_blocks, self.out_per_block))
        for i in range(self._grid.n_blocks):
            out[i] = self._ops[i] @ flat[self._grid.block_pixel_indices(i)]
        return out.ravel()

    def vjp(self, x, v: np.ndarray) -> np.ndarray:
        if v.shape != (self.output_dim,):
            raise ValueError(f"expected feature vector of length {self.output_dim}")
        v2 = np.asarray(v, dtype=np.float64).reshape(self._grid.n_blocks, self.out_per_block)
        g = np.zeros(self.n_pixels)
        for i in range(self._grid.n_blocks):
            g[self._grid.block_pixel_indices(i)] = v2[i] @ self._ops[i]
        return g

    def dense_jacobian(self, x) -> np.ndarray:
        out = np.zeros((self.output_dim, self.n_pixels))
        for i in range(self._grid.n_blocks):
            rows = slice(i * self.out_per_block, (i + 1) * self.out_per_block)
            out[rows, self._grid.block_pixel_indices(i)] = self._ops[i]
        return out


def make_extractor(kind: str, width: int, height: int, **kwargs) -> ToyFeatureExtractor:
    classes = {
        "identity": IdentityExtractor,
        "blur_down": BlurDownExtractor,
        "conv_relu_conv": ConvReluConvExtractor,
        "block_linear": BlockLinearExtractor,
    }
    if kind not in classes:
        raise ValueError(f"unknown extractor kind {kind!r}")
    return classes[kind](width, height, **kwargs)


def features(fe: ToyFeatureExtractor, x) -> np.ndarray:
    return fe.features(x)


def exact_jacobian(fe: ToyFeatureExtractor, x) -> np.ndarray:
    return fe.dense_jacobian(x)


def feature_distance(fe: ToyFeatureExtractor, x, x_hat) -> float:
    """Exact squared feature-space distance; the FD oracle."""
    d = fe.features(x_hat) - fe.features(x)
    return float(d @ d)


@dataclass(frozen=True, eq=False)
class LipschitzTask:
    """Scalar linear head on top of an extractor, with a 1-Lipschitz-friendly loss.

    head_norm is the exact operator norm of the head (Euclidean norm of the
    row vector).  For the squared loss the Lipschitz constant is taken
    per-instance on the segment between the two evaluated logits; for the
    absolute loss it is 1.
    """

    head: np.ndarray
    loss: str
    label: float

    def __post_init__(self):
        if self.loss not in ("squared", "absolute"):
            raise ValueError(f"loss must be 'squared' or 'absolute', got {self.loss!r}")
        if np.asarray(self.head).ndim != 1:
            raise ValueError("head must be a vector (single logit)")

    @property
    def head_norm(self) -> float:
        return float(np.linalg.norm(self.head))

    def loss_value(self, logit: float) -> float:
        err = logit - self.label
        return err * err if self.loss == "squared" else abs(err)


def lipschitz_bound_check(task: LipschitzTask, fe: ToyFeatureExtractor, x, x_hat) -> tuple[float, float]:
    """(consistency_loss, bound) with consistency_loss = (dloss)^2 <= H^2 L^2 FD.

    Raises if the inequality fails beyond float rounding slack.
    """
    fx = fe.features(x)
    fxh = fe.features(x_hat)
    if task.head.shape != fx.shape:
        raise ValueError(f"head length {task.head.shape} does not match n_f {fx.shape}")
    z = float(task.head @ fx)
    zh = float(task.head @ fxh)
    consistency = (task.loss_value(zh) - task.loss_value(z)) ** 2
    if task.loss == "squared":
        lip = abs(z - task.label) + abs(zh - task.label)
    else:
        lip = 1.0
    diff = fxh - fx
    bound = task.head_norm**2 * lip**2 * float(diff @ diff)
    if consistency > bound * (1.0 + 1e-9) + 1e-300:
        raise AssertionError(
            f"consistency loss {consistency} exceeds Lipschitz bound {bound}"
        )
    return consistency, bound
