"""Dense float64 tensors with reverse-mode automatic differentiation.

The computation graph is recorded implicitly: every operation returns a new
:class:`Tensor` holding references to its parents and a closure that pushes
the output adjoint back to them.  Calling ``backward()`` on a scalar output
topologically sorts the reachable subgraph and runs each closure exactly once,
accumulating ``.grad`` on every tensor that requires gradients.

All arithmetic is 64-bit.  Broadcasting is limited to scalar-with-tensor;
anything else is a shape error that names the offending op.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "NonDifferentiableError",
    "conv2d",
    "avg_pool2d",
    "softmax",
    "log_softmax",
    "dot",
    "l1_norm",
    "l2_norm",
    "bilinear_resize",
    "pad2d",
    "gradients",
    "finite_diff_check",
]


class NonDifferentiableError(RuntimeError):
    """Raised when a backward pass reaches a forward-only operation."""


def _shape_error(op: str, *shapes) -> ValueError:
    dims = " vs ".join(str(tuple(s)) for s in shapes)
    return ValueError(f"{op}: incompatible shapes {dims}")


class Tensor:
    """A node in the autograd graph wrapping a float64 numpy array.

    Leaves are created directly (``Tensor(data, requires_grad=True)``); every
    op output carries the closure needed to backpropagate through it.  A
    tensor and the graph hanging off it belong to a single thread; sharing
    read-only leaves (e.g. model weights) across threads is fine.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _op: str = "leaf",
                 _backward: Callable[[], None] | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward
        self._op = _op

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- graph machinery -----------------------------------------------------

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self) -> None:
        """Reverse-mode pass from this scalar; fills ``.grad`` on the graph.

        Gradients from any previous backward call on the reachable subgraph
        are discarded first, so repeated calls are independent.
        """
        if self.data.shape != ():
            raise ValueError(f"backward: output must be scalar, got shape {self.shape}")
        if not self.requires_grad:
            raise ValueError("backward: output does not require gradients")

        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        for node in topo:
            node.grad = None
        self.grad = np.ones((), dtype=np.float64)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    # -- arithmetic ----------------------------------------------------------

    @staticmethod
    def _lift(value) -> "Tensor":
        if isinstance(value, Tensor):
            return value
        return Tensor(np.asarray(value, dtype=np.float64))

    @staticmethod
    def _binary_shapes(op: str, a: "Tensor", b: "Tensor") -> None:
        # same shape, or either operand a scalar () tensor
        if a.shape != b.shape and a.shape != () and b.shape != ():
            raise _shape_error(op, a.shape, b.shape)

    @staticmethod
    def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
        # undo the scalar broadcast, if any
        if shape == () and g.shape != ():
            return np.asarray(g.sum())
        return g

    def _make(self, data, parents, op, backward) -> "Tensor":
        req = any(p.requires_grad for p in parents)
        out = Tensor(data, requires_grad=req, _parents=tuple(parents), _op=op,
                     _backward=None)
        if req:
            out._backward = backward(out)
        return out

    def __add__(self, other):
        other = Tensor._lift(other)
        Tensor._binary_shapes("add", self, other)
        a, b = self, other

        def bw(out):
            def run():
                if a.requires_grad:
                    a._accumulate(Tensor._reduce_to(out.grad, a.shape))
                if b.requires_grad:
                    b._accumulate(Tensor._reduce_to(out.grad, b.shape))
            return run

        return self._make(a.data + b.data, (a, b), "add", bw)

    __radd__ = __add__

    def __sub__(self, other):
        other = Tensor._lift(other)
        Tensor._binary_shapes("subtract", self, other)
        a, b = self, other

        def bw(out):
            def run():
                if a.requires_grad:
                    a._accumulate(Tensor._reduce_to(out.grad, a.shape))
                if b.requires_grad:
                    b._accumulate(Tensor._reduce_to(-out.grad, b.shape))
            return run

        return self._make(a.data - b.data, (a, b), "subtract", bw)

    def __rsub__(self, other):
        return Tensor._lift(other) - self

    def __mul__(self, other):
        other = Tensor._lift(other)
        Tensor._binary_shapes("multiply", self, other)
        a, b = self, other

        def bw(out):
            def run():
                if a.requires_grad:
                    a._accumulate(Tensor._reduce_to(out.grad * b.data, a.shape))
                if b.requires_grad:
                    b._accumulate(Tensor._reduce_to(out.grad * a.data, b.shape))
            return run

        return self._make(a.data * b.data, (a, b), "multiply", bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other)
        Tensor._binary_shapes("divide", self, other)
        a, b = self, other

        def bw(out):
            def run():
                if a.requires_grad:
                    a._accumulate(Tensor._reduce_to(out.grad / b.data, a.shape))
                if b.requires_grad:
                    b._accumulate(Tensor._reduce_to(-out.grad * a.data / (b.data * b.data), b.shape))
            return run

        return self._make(a.data / b.data, (a, b), "divide", bw)

    def __rtruediv__(self, other):
        return Tensor._lift(other) / self

    def __neg__(self):
        a = self

        def bw(out):
            def run():
                a._accumulate(-out.grad)
            return run

        return self._make(-a.data, (a,), "negate", bw)

    def __pow__(self, exponent):
        if not isinstance(exponent, (int, float)):
            raise TypeError("pow: exponent must be a python scalar")
        a, p = self, float(exponent)

        def bw(out):
            def run():
                a._accumulate(out.grad * p * a.data ** (p - 1.0))
            return run

        return self._make(a.data ** p, (a,), "pow", bw)

    def __matmul__(self, other):
        other = Tensor._lift(other)
        a, b = self, other
        if a.data.ndim not in (1, 2) or b.data.ndim not in (1, 2):
            raise _shape_error("matmul", a.shape, b.shape)
        if a.shape[-1] != b.shape[0]:
            raise _shape_error("matmul", a.shape, b.shape)

        def bw(out):
            def run():
                g = out.grad
                # four cases by operand rank: (m,k)@(k,n), (m,k)@(k,), (k,)@(k,n), (k,)@(k,)
                if a.requires_grad:
                    if a.data.ndim == 2:
                        a._accumulate(g @ b.data.T if b.data.ndim == 2 else np.outer(g, b.data))
                    else:
                        a._accumulate(b.data @ g if b.data.ndim == 2 else g * b.data)
                if b.requires_grad:
                    if b.data.ndim == 2:
                        b._accumulate(a.data.T @ g if a.data.ndim == 2 else np.outer(a.data, g))
                    else:
                        b._accumulate(a.data.T @ g if a.data.ndim == 2 else g * a.data)
            return run

        return self._make(a.data @ b.data, (a, b), "matmul", bw)

    # -- elementwise nonlinearities -------------------------------------------

    def relu(self):
        a = self
        mask = a.data > 0

        def bw(out):
            def run():
                a._accumulate(out.grad * mask)
            return run

        return self._make(np.where(mask, a.data, 0.0), (a,), "relu", bw)

    def exp(self):
        a = self
        value = np.exp(a.data)

        def bw(out):
            def run():
                a._accumulate(out.grad * value)
            return run

        return self._make(value, (a,), "exp", bw)

    def log(self):
        a = self

        def bw(out):
            def run():
                a._accumulate(out.grad / a.data)
            return run

        with np.errstate(invalid="ignore", divide="ignore"):
            value = np.log(a.data)
        return self._make(value, (a,), "log", bw)

    def sqrt(self):
        a = self
        with np.errstate(invalid="ignore"):
            value = np.sqrt(a.data)

        def bw(out):
            def run():
                a._accumulate(out.grad * 0.5 / value)
            return run

        return self._make(value, (a,), "sqrt", bw)

    def clamp(self, lo: float, hi: float):
        """Clip to [lo, hi]; gradient is 1 inside the bounds (inclusive), 0 outside."""
        if lo > hi:
            raise ValueError(f"clamp: lo ({lo}) > hi ({hi})")
        a = self
        mask = (a.data >= lo) & (a.data <= hi)

        def bw(out):
            def run():
                a._accumulate(out.grad * mask)
            return run

        return self._make(np.clip(a.data, lo, hi), (a,), "clamp", bw)

    def sign(self):
        """Elementwise sign.  Forward-only: backpropagating through it raises."""
        a = self

        def bw(out):
            def run():
                raise NonDifferentiableError(
                    "sign is forward-only; gradients through it are undefined")
            return run

        return self._make(np.sign(a.data), (a,), "sign", bw)

    # -- reductions and shape ops ---------------------------------------------

    def sum(self):
        a = self

        def bw(out):
            def run():
                a._accumulate(np.broadcast_to(out.grad, a.shape))
            return run

        return self._make(a.data.sum(), (a,), "sum", bw)

    def mean(self):
        a = self
        n = a.data.size

        def bw(out):
            def run():
                a._accumulate(np.broadcast_to(out.grad / n, a.shape))
            return run

        return self._make(a.data.mean(), (a,), "mean", bw)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self

        def bw(out):
            def run():
                a._accumulate(out.grad.reshape(a.shape))
            return run

        return self._make(a.data.reshape(shape), (a,), "reshape", bw)

    def flatten(self):
        return self.reshape(self.data.size)


# -- free-function primitives ------------------------------------------------


def dot(a: Tensor, b: Tensor) -> Tensor:
    """Flattened dot product of two same-shape tensors, returning a scalar."""
    a, b = Tensor._lift(a), Tensor._lift(b)
    if a.shape != b.shape:
        raise _shape_error("dot", a.shape, b.shape)

    def bw(out):
        def run():
            if a.requires_grad:
                a._accumulate(out.grad * b.data)
            if b.requires_grad:
                b._accumulate(out.grad * a.data)
        return run

    return a._make(np.vdot(a.data, b.data), (a, b), "dot", bw)


def l1_norm(t: Tensor) -> Tensor:
    """Sum of absolute values; subgradient 0 at zero entries."""
    t = Tensor._lift(t)
    sgn = np.sign(t.data)

    def bw(out):
        def run():
            t._accumulate(out.grad * sgn)
        return run

    return t._make(np.abs(t.data).sum(), (t,), "l1_norm", bw)


def l2_norm(t: Tensor) -> Tensor:
    """Euclidean norm of the flattened tensor.  Not differentiable at 0."""
    t = Tensor._lift(t)
    value = math.sqrt(float(np.vdot(t.data, t.data)))

    def bw(out):
        def run():
            if value == 0.0:
                raise ValueError("l2_norm: gradient undefined at the zero tensor")
            t._accumulate(out.grad * t.data / value)
        return run

    return t._make(value, (t,), "l2_norm", bw)


def softmax(t: Tensor) -> Tensor:
    """Softmax over a 1-D tensor (max-shifted for stability)."""
    t = Tensor._lift(t)
    if t.data.ndim != 1:
        raise _shape_error("softmax", t.shape)
    e = np.exp(t.data - t.data.max())
    s = e / e.sum()

    def bw(out):
        def run():
            g = out.grad
            t._accumulate(s * (g - np.dot(g, s)))
        return run

    return t._make(s, (t,), "softmax", bw)


def log_softmax(t: Tensor) -> Tensor:
    """Log of softmax over a 1-D tensor, computed without the exp/log round trip."""
    t = Tensor._lift(t)
    if t.data.ndim != 1:
        raise _shape_error("log_softmax", t.shape)
    shifted = t.data - t.data.max()
    lse = math.log(np.exp(shifted).sum())
    value = shifted - lse
    soft = np.exp(value)

    def bw(out):
        def run():
            g = out.grad
            t._accumulate(g - soft * g.sum())
        return run

    return t._make(value, (t,), "log_softmax", bw)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int):
    c, h, w = x.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    cols = windows[:, ::stride, ::stride]            # (c, oh, ow, kh, kw)
    cols = cols.transpose(0, 3, 4, 1, 2)             # (c, kh, kw, oh, ow)
    return np.ascontiguousarray(cols).reshape(c * kh * kw, oh * ow), oh, ow


def _col2im(dcols: np.ndarray, shape: tuple[int, int, int], kh: int, kw: int,
            stride: int, oh: int, ow: int) -> np.ndarray:
    c, h, w = shape
    dx = np.zeros((c, h, w), dtype=np.float64)
    d = dcols.reshape(c, kh, kw, oh, ow)
    for i in range(kh):
        for j in range(kw):
            dx[:, i:i + stride * oh:stride, j:j + stride * ow:stride] += d[:, i, j]
    return dx


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation of a (C_in,H,W) image with (C_out,C_in,kH,kW) filters.

    Zero padding of ``pad`` pixels is applied on each spatial border before the
    windows are gathered.  The backward pass reuses the im2col buffer from the
    forward pass, so gradients flow to the image, the filters and the bias.
    """
    x, weight = Tensor._lift(x), Tensor._lift(weight)
    if x.data.ndim != 3 or weight.data.ndim != 4:
        raise _shape_error("conv2d", x.shape, weight.shape)
    c_out, c_in, kh, kw = weight.shape
    if x.shape[0] != c_in:
        raise _shape_error("conv2d", x.shape, weight.shape)
    if bias is not None:
        bias = Tensor._lift(bias)
        if bias.shape != (c_out,):
            raise _shape_error("conv2d bias", bias.shape, (c_out,))

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    if xp.shape[1] < kh or xp.shape[2] < kw:
        raise _shape_error("conv2d", x.shape, weight.shape)
    cols, oh, ow = _im2col(xp, kh, kw, stride)
    wmat = weight.data.reshape(c_out, -1)
    out_data = (wmat @ cols).reshape(c_out, oh, ow)
    if bias is not None:
        out_data = out_data + bias.data[:, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)
    padded_shape = xp.shape

    def bw(out):
        def run():
            g = out.grad.reshape(c_out, -1)
            if weight.requires_grad:
                weight._accumulate((g @ cols.T).reshape(weight.shape))
            if bias is not None and bias.requires_grad:
                bias._accumulate(out.grad.sum(axis=(1, 2)))
            if x.requires_grad:
                dcols = wmat.T @ g
                dxp = _col2im(dcols, padded_shape, kh, kw, stride, oh, ow)
                if pad:
                    dxp = dxp[:, pad:-pad, pad:-pad]
                x._accumulate(dxp)
        return run

    return x._make(out_data, parents, "conv2d", bw)


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping k-by-k average pooling; trailing rows/cols are dropped."""
    x = Tensor._lift(x)
    if x.data.ndim != 3:
        raise _shape_error("avg_pool2d", x.shape)
    c, h, w = x.shape
    oh, ow = h // k, w // k
    if oh == 0 or ow == 0:
        raise _shape_error("avg_pool2d", x.shape)
    view = x.data[:, :oh * k, :ow * k].reshape(c, oh, k, ow, k)
    out_data = view.mean(axis=(2, 4))

    def bw(out):
        def run():
            dx = np.zeros((c, h, w), dtype=np.float64)
            g = out.grad / (k * k)
            dx[:, :oh * k, :ow * k] = np.repeat(np.repeat(g, k, axis=1), k, axis=2)
            x._accumulate(dx)
        return run

    return x._make(out_data, (x,), "avg_pool2d", bw)


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    """Zero-pad the spatial dims of a (C,H,W) tensor."""
    x = Tensor._lift(x)
    if x.data.ndim != 3 or min(top, bottom, left, right) < 0:
        raise _shape_error("pad2d", x.shape)
    out_data = np.pad(x.data, ((0, 0), (top, bottom), (left, right)))
    c, h, w = x.shape

    def bw(out):
        def run():
            x._accumulate(out.grad[:, top:top + h, left:left + w])
        return run

    return x._make(out_data, (x,), "pad2d", bw)


def _resize_axis(n_in: int, n_out: int):
    # half-pixel-center sampling; clamped to the border
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1.0)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    t = src - i0
    return i0, i1, t


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling of a (C,H,W) tensor to (C,out_h,out_w).

    The output is a fixed linear map of the input values, so the gradient is
    exact (the map's transpose, realised by scatter-adds).
    """
    x = Tensor._lift(x)
    if x.data.ndim != 3 or out_h < 1 or out_w < 1:
        raise _shape_error("bilinear_resize", x.shape)
    c, h, w = x.shape
    i0, i1, ty = _resize_axis(h, out_h)
    j0, j1, tx = _resize_axis(w, out_w)
    wy0, wy1 = (1.0 - ty)[:, None], ty[:, None]
    wx0, wx1 = (1.0 - tx)[None, :], tx[None, :]

    d = x.data
    out_data = (wy0 * wx0 * d[:, i0[:, None], j0[None, :]]
                + wy0 * wx1 * d[:, i0[:, None], j1[None, :]]
                + wy1 * wx0 * d[:, i1[:, None], j0[None, :]]
                + wy1 * wx1 * d[:, i1[:, None], j1[None, :]])

    def bw(out):
        def run():
            g = out.grad
            dx = np.zeros((c, h, w), dtype=np.float64)
            ii0 = np.broadcast_to(i0[:, None], (out_h, out_w))
            ii1 = np.broadcast_to(i1[:, None], (out_h, out_w))
            jj0 = np.broadcast_to(j0[None, :], (out_h, out_w))
            jj1 = np.broadcast_to(j1[None, :], (out_h, out_w))
            for ch in range(c):
                np.add.at(dx[ch], (ii0, jj0), g[ch] * wy0 * wx0)
                np.add.at(dx[ch], (ii0, jj1), g[ch] * wy0 * wx1)
                np.add.at(dx[ch], (ii1, jj0), g[ch] * wy1 * wx0)
                np.add.at(dx[ch], (ii1, jj1), g[ch] * wy1 * wx1)
            x._accumulate(dx)
        return run

    return x._make(out_data, (x,), "bilinear_resize", bw)


def gradients(output: Tensor, inputs: Sequence[Tensor]) -> list[np.ndarray]:
    """Run backward from a scalar output and return d(output)/d(input) per input.

    Inputs that the output does not depend on get zero gradients of their shape.
    """
    output.backward()
    out = []
    for t in inputs:
        out.append(np.zeros(t.shape) if t.grad is None else t.grad.copy())
    return out


def finite_diff_check(f: Callable[[Tensor], Tensor], x: np.ndarray,
                      h: float = 1e-5) -> float:
    """Max relative error between the analytic gradient of ``f`` and central differences.

    ``f`` maps a tensor to a scalar tensor.  The error is
    ``max_i |analytic_i - cd_i| / max(1, |cd_i|)`` with ``cd`` the central
    difference at step ``h``.  Raises if any evaluation is non-finite.
    """
    if h <= 0:
        raise ValueError("finite_diff_check: h must be positive")
    x = np.asarray(x, dtype=np.float64)
    leaf = Tensor(x, requires_grad=True)
    out = f(leaf)
    if out.data.shape != ():
        raise ValueError("finite_diff_check: f must return a scalar")
    if not np.isfinite(out.data):
        raise ValueError("finite_diff_check: f returned a non-finite value")
    out.backward()
    analytic = (np.zeros_like(x) if leaf.grad is None else leaf.grad).ravel()

    flat = x.ravel()
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        xp = x.copy().ravel()
        xp[i] = orig + h
        fp = float(f(Tensor(xp.reshape(x.shape))).data)
        xm = x.copy().ravel()
        xm[i] = orig - h
        fm = float(f(Tensor(xm.reshape(x.shape))).data)
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise ValueError("finite_diff_check: f returned a non-finite value")
        # divide by the step that was actually representable, not the nominal 2h
        cd = (fp - fm) / (xp[i] - xm[i])
        err = abs(analytic[i] - cd) / max(1.0, abs(cd))
        if err > worst:
            worst = err
    return worst
