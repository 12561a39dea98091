"""Reference CPU kernels with exact MAC/FLOP/byte instrumentation.

Conventions, used consistently here and in the analytical cost model:

* one MAC = 2 FLOPs; every element-wise op (add, mul, exp, sqrt, log,
  activation, precision conversion) counts 1 FLOP;
* weight bytes are counted in storage precision, once per logical use
  (recurrent layers therefore touch their weights once per timestep);
* activation bytes are counted at the fp32 compute width, once per
  logical read or write of a node input/output or recurrent state.

Counters are analytical functions of shapes and parameters only; they
never depend on data values or thread count. Compute is always fp32:
storage precision affects byte counters and cast cost, nothing else.

Per-kind FLOP formulas (B^ = flattened leading axes, T timesteps,
B batch, In/Out features, H hidden width):

    fc       macs = B^*In*Out                flops = 2*macs + B^*Out (+B^*Out if activated)
    lstm     macs = T*B*4H*(In+H)            flops = 2*macs + 13*T*B*H
    bilstm   exactly 2x lstm (concat is free by convention)
    conv2d   macs = B*F*Ho*Wo*C*kh*kw        flops = 2*macs + B*F*Ho*Wo
    softmax  flops = 4*numel                 (sub, exp, sum, div per element)
    mfcc     per frame: F + 5*F*ceil(log2 F) + 5*nbins + 2*26*nbins,
             macs = 26*nbins; nbins = F//2+1
    cast     flops = 2*numel (to storage and back)
    memcopy / ctc_greedy: 0 FLOPs
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .graph import MFCC_COEFFS, PRECISION_BYTES, TensorShape
from .model import quantize
from .tensor import Tensor

LOG_EPS = np.float32(1e-10)


@dataclass
class KernelCounters:
    macs: int = 0
    flops: int = 0
    weight_bytes_touched: int = 0
    activation_bytes_touched: int = 0

    def __add__(self, other: "KernelCounters") -> "KernelCounters":
        return KernelCounters(
            macs=self.macs + other.macs,
            flops=self.flops + other.flops,
            weight_bytes_touched=self.weight_bytes_touched
            + other.weight_bytes_touched,
            activation_bytes_touched=self.activation_bytes_touched
            + other.activation_bytes_touched,
        )


@dataclass
class ExecContext:
    """Execution knobs shared by all kernels in one engine run."""

    threads: int = 1
    pool: ThreadPoolExecutor | None = None
    fc_block: int = 64
    weight_byte_width: int = 4  # storage precision size of model weights

    def serial(self) -> "ExecContext":
        return ExecContext(threads=1, pool=None, fc_block=self.fc_block,
                           weight_byte_width=self.weight_byte_width)


_DEFAULT_CTX = ExecContext()


def ceil_log2(n: int) -> int:
    return (n - 1).bit_length() if n > 1 else 0


def _blocked_matmul(a: np.ndarray, w: np.ndarray, ctx: ExecContext) -> np.ndarray:
    """a @ w computed over row blocks of ctx.fc_block, optionally in
    parallel across the engine pool (one block per task)."""
    rows = a.shape[0]
    out = np.empty((rows, w.shape[1]), dtype=np.float32)
    block = max(1, ctx.fc_block)
    starts = range(0, rows, block)
    if ctx.pool is None or ctx.threads <= 1 or rows <= block:
        for lo in starts:
            np.dot(a[lo:lo + block], w, out=out[lo:lo + block])
        return out
    futures = [ctx.pool.submit(np.dot, a[lo:lo + block], w,
                               out=out[lo:lo + block]) for lo in starts]
    for fut in futures:
        fut.result()
    return out


# --- fully connected ---------------------------------------------------------

def fc_forward(x: Tensor, W: np.ndarray, b: np.ndarray, activation: str = "none",
               clip: float = 20.0, ctx: ExecContext = _DEFAULT_CTX
               ) -> tuple[Tensor, KernelCounters]:
    """y = act(xW + b), leading axes flattened into one effective batch."""
    if x.shape.tags[-1] != "F":
        raise ShapeMismatch(f"fc input needs trailing F axis, got {x.shape}")
    fan_in = x.shape.extents[-1]
    if W.shape != (fan_in, b.shape[0]):
        raise ShapeMismatch(f"fc weights {W.shape} do not match In={fan_in}, "
                            f"Out={b.shape[0]}")
    fan_out = W.shape[1]
    batch = x.data.size // fan_in

    y = _blocked_matmul(x.data.reshape(batch, fan_in), W, ctx)
    y += b
    if activation == "relu_clip":
        np.clip(y, 0.0, np.float32(clip), out=y)
    elif activation != "none":
        raise ShapeMismatch(f"unknown activation '{activation}'")

    macs = batch * fan_in * fan_out
    flops = 2 * macs + batch * fan_out
    if activation != "none":
        flops += batch * fan_out
    counters = KernelCounters(
        macs=macs, flops=flops,
        weight_bytes_touched=(fan_in * fan_out + fan_out) * ctx.weight_byte_width,
        activation_bytes_touched=4 * batch * (fan_in + fan_out),
    )
    out_shape = TensorShape(x.shape.axes[:-1] + (("F", fan_out),),
                            x.shape.precision)
    return Tensor(out_shape, y), counters


# --- recurrent ---------------------------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def _gates(xt, h, Wx, Wh, b, ctx: ExecContext) -> np.ndarray:
    if ctx.pool is None or ctx.threads <= 1:
        return xt @ Wx + h @ Wh + b
    width = Wx.shape[1]
    hidden = width // 4
    cuts = [hidden * i for i in range(5)]  # one task per gate
    out = np.empty((xt.shape[0], width), dtype=np.float32)

    def one(lo, hi):
        out[:, lo:hi] = xt @ Wx[:, lo:hi] + h @ Wh[:, lo:hi] + b[lo:hi]

    futures = [ctx.pool.submit(one, cuts[i], cuts[i + 1]) for i in range(4)]
    for fut in futures:
        fut.result()
    return out


def lstm_forward(x: Tensor, Wx: np.ndarray, Wh: np.ndarray, b: np.ndarray,
                 hidden: int, direction: str = "fwd",
                 ctx: ExecContext = _DEFAULT_CTX
                 ) -> tuple[Tensor, KernelCounters]:
    """Standard LSTM: gates i,f,g,o; zero initial state; forget bias 0.

    direction="bwd" consumes time in reverse and stores states in
    processing order: out[j] is the state after the last j+1 frames,
    i.e. the output equals a forward pass over the time-reversed input.
    Timesteps are inherently sequential; parallelism only splits gate
    columns within a step.
    """
    if x.shape.tags != ("T", "B", "F"):
        raise ShapeMismatch(f"lstm input needs axes (T,B,F), got {x.shape}")
    steps, batch, fan_in = x.shape.extents
    if Wx.shape != (fan_in, 4 * hidden) or Wh.shape != (hidden, 4 * hidden) \
            or b.shape != (4 * hidden,):
        raise ShapeMismatch(
            f"lstm weights {Wx.shape}/{Wh.shape}/{b.shape} do not match "
            f"In={fan_in}, H={hidden}")
    if direction not in ("fwd", "bwd"):
        raise ShapeMismatch(f"unknown direction '{direction}'")

    order = range(steps) if direction == "fwd" else range(steps - 1, -1, -1)
    h = np.zeros((batch, hidden), dtype=np.float32)
    c = np.zeros((batch, hidden), dtype=np.float32)
    out = np.empty((steps, batch, hidden), dtype=np.float32)
    for position, t in enumerate(order):
        z = _gates(x.data[t], h, Wx, Wh, b, ctx)
        i = _sigmoid(z[:, :hidden])
        f = _sigmoid(z[:, hidden:2 * hidden])
        g = np.tanh(z[:, 2 * hidden:3 * hidden])
        o = _sigmoid(z[:, 3 * hidden:])
        c = f * c + i * g
        h = o * np.tanh(c)
        out[position] = h

    macs = steps * batch * 4 * hidden * (fan_in + hidden)
    weight_elems = (fan_in + hidden) * 4 * hidden + 4 * hidden
    counters = KernelCounters(
        macs=macs,
        flops=2 * macs + 13 * steps * batch * hidden,
        weight_bytes_touched=steps * weight_elems * ctx.weight_byte_width,
        activation_bytes_touched=4 * steps * batch * (fan_in + 4 * hidden),
    )
    out_shape = TensorShape(x.shape.axes[:-1] + (("F", hidden),),
                            x.shape.precision)
    return Tensor(out_shape, out), counters


def bilstm_forward(x: Tensor, fwd: tuple, bwd: tuple, hidden: int,
                   ctx: ExecContext = _DEFAULT_CTX
                   ) -> tuple[Tensor, KernelCounters]:
    """Forward pass and time-reversed backward pass, concatenated on F.

    With identical frames at every timestep and shared direction
    weights, the two halves are equal. Counters are exactly the sum of
    the two directional passes. With at least two threads the
    directions run concurrently (each internally serial); they share
    no state.
    """
    if ctx.pool is not None and ctx.threads >= 2:
        inner = ctx.serial()
        f_fut = ctx.pool.submit(lstm_forward, x, *fwd, hidden, "fwd", inner)
        b_fut = ctx.pool.submit(lstm_forward, x, *bwd, hidden, "bwd", inner)
        out_f, counters_f = f_fut.result()
        out_b, counters_b = b_fut.result()
    else:
        out_f, counters_f = lstm_forward(x, *fwd, hidden, "fwd", ctx)
        out_b, counters_b = lstm_forward(x, *bwd, hidden, "bwd", ctx)

    merged = np.concatenate([out_f.data, out_b.data], axis=-1)
    out_shape = TensorShape(x.shape.axes[:-1] + (("F", 2 * hidden),),
                            x.shape.precision)
    return Tensor(out_shape, merged), counters_f + counters_b


# --- convolution -------------------------------------------------------------

def _same_padding(extent: int, kernel: int, stride: int) -> tuple[int, int]:
    out = -(-extent // stride)
    total = max((out - 1) * stride + kernel - extent, 0)
    return total // 2, total - total // 2


def conv2d_forward(x: Tensor, W: np.ndarray, b: np.ndarray, stride: int = 1,
                   padding: str = "same", ctx: ExecContext = _DEFAULT_CTX
                   ) -> tuple[Tensor, KernelCounters]:
    """Direct convolution via im2col and the blocked matmul."""
    if x.shape.tags != ("B", "C", "H", "W"):
        raise ShapeMismatch(f"conv2d input needs axes (B,C,H,W), got {x.shape}")
    batch, channels, height, width = x.shape.extents
    filters, wc, kh, kw = W.shape
    if wc != channels or b.shape != (filters,):
        raise ShapeMismatch(f"conv2d weights {W.shape}/{b.shape} do not match "
                            f"C={channels}")

    if padding == "same":
        pad_top, pad_bottom = _same_padding(height, kh, stride)
        pad_left, pad_right = _same_padding(width, kw, stride)
        data = np.pad(x.data, ((0, 0), (0, 0), (pad_top, pad_bottom),
                               (pad_left, pad_right)))
        out_h, out_w = -(-height // stride), -(-width // stride)
    elif padding == "valid":
        if height < kh or width < kw:
            raise ShapeMismatch("kernel larger than input under valid padding")
        data = x.data
        out_h = (height - kh) // stride + 1
        out_w = (width - kw) // stride + 1
    else:
        raise ShapeMismatch(f"unknown padding '{padding}'")

    columns = np.empty((batch, channels, kh, kw, out_h, out_w), dtype=np.float32)
    for dy in range(kh):
        for dx in range(kw):
            columns[:, :, dy, dx] = data[
                :, :, dy:dy + out_h * stride:stride, dx:dx + out_w * stride:stride]
    patches = columns.transpose(0, 4, 5, 1, 2, 3).reshape(
        batch * out_h * out_w, channels * kh * kw)

    flat = _blocked_matmul(patches, W.reshape(filters, -1).T, ctx)
    flat += b
    y = flat.reshape(batch, out_h, out_w, filters).transpose(0, 3, 1, 2)

    macs = batch * filters * out_h * out_w * channels * kh * kw
    counters = KernelCounters(
        macs=macs,
        flops=2 * macs + batch * filters * out_h * out_w,
        weight_bytes_touched=(filters * channels * kh * kw + filters)
        * ctx.weight_byte_width,
        activation_bytes_touched=4 * (batch * channels * height * width
                                      + batch * filters * out_h * out_w),
    )
    out_shape = TensorShape((("B", batch), ("C", filters), ("H", out_h),
                             ("W", out_w)), x.shape.precision)
    return Tensor(out_shape, np.ascontiguousarray(y)), counters


# --- softmax and inlays --------------------------------------------------------

def softmax(x: Tensor, ctx: ExecContext = _DEFAULT_CTX
            ) -> tuple[Tensor, KernelCounters]:
    """Numerically stable softmax over the F axis; rows sum to 1."""
    if "F" not in x.shape.tags:
        raise ShapeMismatch(f"softmax needs an F axis, got {x.shape}")
    axis = x.shape.tags.index("F")
    shifted = x.data - np.max(x.data, axis=axis, keepdims=True)
    exp = np.exp(shifted)
    y = exp / np.sum(exp, axis=axis, keepdims=True)
    numel = x.data.size
    counters = KernelCounters(flops=4 * numel,
                              activation_bytes_touched=8 * numel)
    return Tensor(x.shape, y), counters


def inlay_mfcc_lite(x: Tensor, ctx: ExecContext = _DEFAULT_CTX
                    ) -> tuple[Tensor, KernelCounters]:
    """Hann window + DFT magnitude + log + DCT-II, truncated to 26
    coefficients per frame. Input (T,B,F) of raw frame samples."""
    if x.shape.tags != ("T", "B", "F"):
        raise ShapeMismatch(f"mfcc needs axes (T,B,F), got {x.shape}")
    steps, batch, frame = x.shape.extents
    nbins = frame // 2 + 1
    if nbins < MFCC_COEFFS:
        raise ShapeMismatch(f"frame length {frame} too short for "
                            f"{MFCC_COEFFS} coefficients")

    n = np.arange(frame, dtype=np.float32)
    window = (0.5 - 0.5 * np.cos(2.0 * np.pi * n / (frame - 1))).astype(np.float32)
    spectrum = np.fft.rfft(x.data * window, axis=-1)
    logmag = np.log(np.abs(spectrum).astype(np.float32) + LOG_EPS)

    k = np.arange(MFCC_COEFFS, dtype=np.float64)[:, None]
    m = np.arange(nbins, dtype=np.float64)[None, :]
    dct = np.cos(np.pi * k * (2.0 * m + 1.0) / (2.0 * nbins)).astype(np.float32)
    y = logmag.astype(np.float32) @ dct.T

    frames = steps * batch
    per_frame = (frame + 5 * frame * ceil_log2(frame) + 5 * nbins
                 + 2 * MFCC_COEFFS * nbins)
    counters = KernelCounters(
        macs=frames * MFCC_COEFFS * nbins,
        flops=frames * per_frame,
        activation_bytes_touched=4 * (frames * frame + frames * MFCC_COEFFS),
    )
    out_shape = TensorShape(x.shape.axes[:-1] + (("F", MFCC_COEFFS),),
                            x.shape.precision)
    return Tensor(out_shape, y), counters


def inlay_memcopy(x: Tensor, ctx: ExecContext = _DEFAULT_CTX
                  ) -> tuple[Tensor, KernelCounters]:
    """Bit-identical copy; touches every byte once in, once out."""
    counters = KernelCounters(activation_bytes_touched=2 * x.nbytes())
    return Tensor(x.shape, x.data.copy()), counters


def inlay_cast(x: Tensor, precision: str, ctx: ExecContext = _DEFAULT_CTX
               ) -> tuple[Tensor, KernelCounters]:
    """Round-trip through the storage precision (value quantization),
    returning fp32 compute data tagged with the target precision."""
    stored, scale = quantize(x.data, precision)
    if precision == "int8":
        back = stored.astype(np.float32) * np.float32(scale)
    else:
        back = stored.astype(np.float32)
    numel = x.data.size
    width = PRECISION_BYTES[precision]
    counters = KernelCounters(
        flops=2 * numel,
        activation_bytes_touched=2 * numel * (4 + width),
    )
    out_shape = TensorShape(x.shape.axes, precision)
    return Tensor(out_shape, back), counters


def inlay_ctc_greedy(x: Tensor, ctx: ExecContext = _DEFAULT_CTX
                     ) -> tuple[Tensor, KernelCounters]:
    """Greedy CTC decode: per-step argmax over F, collapse repeats, drop
    blank (the last class). Emits one label row per batch element,
    right-padded with -1 to T slots."""
    if x.shape.tags != ("T", "B", "F"):
        raise ShapeMismatch(f"ctc_greedy needs axes (T,B,F), got {x.shape}")
    steps, batch, classes = x.shape.extents
    blank = classes - 1
    picks = np.argmax(x.data, axis=-1)  # (T, B)
    out = np.full((batch, steps), -1.0, dtype=np.float32)
    for col in range(batch):
        labels = []
        previous = None
        for t in range(steps):
            token = int(picks[t, col])
            if token != previous and token != blank:
                labels.append(token)
            previous = token
        out[col, :len(labels)] = labels
    counters = KernelCounters(
        activation_bytes_touched=4 * (steps * batch * classes + batch * steps))
    out_shape = TensorShape((("B", batch), ("N", steps)), x.shape.precision)
    return Tensor(out_shape, out), counters
