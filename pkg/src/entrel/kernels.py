"""Dense numeric kernels with paired backward passes.

All functions operate on plain numpy arrays and are pure: forward ops take
inputs and return outputs, backward ops take the upstream gradient plus the
values recorded at forward time and return input gradients. Callers own the
bookkeeping of which forward values feed which backward call (see
``model.forward_query`` / ``model.backward_query``).

float64 is the default dtype and the one all gradient checks run in;
float32 is accepted everywhere for faster training.
"""

from dataclasses import dataclass, field

import numpy as np


def matvec(m: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Matrix-vector product with explicit shape validation."""
    m = np.asarray(m)
    x = np.asarray(x)
    if m.ndim != 2 or x.ndim != 1 or m.shape[1] != x.shape[0]:
        raise ValueError(
            f"matvec shape mismatch: matrix {m.shape} vs vector {x.shape}"
        )
    return m @ x


def conv1d(seq: np.ndarray, filters: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid (narrow) 1-D convolution over a token-embedding sequence.

    seq: [L, emb], filters: [nk, w, emb], bias: [nk] -> out: [L-w+1, nk]
    with out[t, f] = bias[f] + sum_{i<w, e} seq[t+i, e] * filters[f, i, e].

    The caller must pad short sequences first; L < w is an internal error.
    """
    length, emb = seq.shape
    nk, width, femb = filters.shape
    if femb != emb:
        raise ValueError(f"conv1d embedding mismatch: seq {emb} vs filters {femb}")
    if length < width:
        raise ValueError(
            f"conv1d: sequence length {length} < filter width {width} "
            "(padding must prevent this)"
        )
    # windows[t] = seq[t:t+w]; shape [L-w+1, emb, w]
    windows = np.lib.stride_tricks.sliding_window_view(seq, width, axis=0)
    return np.einsum("tew,fwe->tf", windows, filters) + bias


def conv1d_backward(grad_out: np.ndarray, seq: np.ndarray, filters: np.ndarray):
    """Gradients of conv1d w.r.t. (seq, filters, bias) given upstream grad_out."""
    nk, width, _ = filters.shape
    steps = grad_out.shape[0]
    windows = np.lib.stride_tricks.sliding_window_view(seq, width, axis=0)
    grad_bias = grad_out.sum(axis=0)
    grad_filters = np.einsum("tf,tew->fwe", grad_out, windows)
    grad_seq = np.zeros_like(seq)
    for i in range(width):
        grad_seq[i : i + steps] += grad_out @ filters[:, i, :]
    return grad_seq, grad_filters, grad_bias


def kmax_pool(seq: np.ndarray, k: int):
    """Per-column k-max pooling preserving original sequence order.

    Returns (out [k, nk], sel [k, nk]) where sel holds the selected row index
    per slot, or -1 for zero-padded slots (used when the input has fewer than
    k rows). Ties select the earlier index.
    """
    if k < 1:
        raise ValueError(f"kmax_pool: k must be >= 1, got {k}")
    rows, nk = seq.shape
    if rows <= k:
        out = np.zeros((k, nk), dtype=seq.dtype)
        out[:rows] = seq
        sel = np.full((k, nk), -1, dtype=np.intp)
        sel[:rows] = np.arange(rows)[:, None]
        return out, sel
    # stable sort on negated values: equal values keep the earlier index
    top = np.argsort(-seq, axis=0, kind="stable")[:k]
    sel = np.sort(top, axis=0)
    return np.take_along_axis(seq, sel, axis=0), sel


def kmax_pool_backward(grad_out: np.ndarray, sel: np.ndarray, input_rows: int) -> np.ndarray:
    """Route pooled gradients back to the selected input rows, zero elsewhere."""
    k, nk = grad_out.shape
    grad_seq = np.zeros((input_rows, nk), dtype=grad_out.dtype)
    valid = sel >= 0
    cols = np.broadcast_to(np.arange(nk), sel.shape)
    np.add.at(
        grad_seq,
        (np.where(valid, sel, 0), cols),
        np.where(valid, grad_out, 0.0),
    )
    return grad_seq


def logsumexp(xs: np.ndarray) -> float:
    """log(sum(exp(xs))) for a 1-D vector, max-shifted so it never overflows."""
    xs = np.asarray(xs)
    if xs.ndim != 1 or xs.size == 0:
        raise ValueError(f"logsumexp needs a non-empty vector, got shape {xs.shape}")
    m = xs.max()
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.exp(xs - m).sum()))


def logsumexp_rows(mat: np.ndarray) -> np.ndarray:
    """Row-wise logsumexp of a 2-D array (one result per row)."""
    m = mat.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(mat - m).sum(axis=1, keepdims=True)))[:, 0]


def tanh_backward(h: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """Gradient through tanh given its *output* h: (1 - h^2) * grad."""
    return (1.0 - h * h) * grad


def softmax(xs: np.ndarray) -> np.ndarray:
    """Stable softmax of a 1-D score vector."""
    z = xs - xs.max()
    e = np.exp(z)
    return e / e.sum()


def scaled_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=np.float64):
    """Symmetric uniform init with bound sqrt(6 / (fan_in + fan_out))."""
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    """Scaled max-abs discrepancy used by every gradient check.

    The denominator is floored at 1 so that tensors whose gradients are
    legitimately tiny (or structurally zero) do not blow the ratio up on
    float rounding noise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    num = float(np.max(np.abs(a - b))) if a.size else 0.0
    den = max(1.0, float(np.max(np.abs(a))) if a.size else 0.0,
              float(np.max(np.abs(b))) if b.size else 0.0)
    return num / den


@dataclass
class ParamTensor:
    """A trainable tensor paired with its gradient accumulation buffer."""

    name: str
    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        if self.grad.shape != self.value.shape:
            raise ValueError(
                f"{self.name}: grad shape {self.grad.shape} != value shape {self.value.shape}"
            )

    def zero_grad(self):
        self.grad[...] = 0.0

    @property
    def shape(self):
        return self.value.shape
