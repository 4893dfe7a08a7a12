"""Dense-tensor math with reverse-mode autodiff, MLPs, and Adam.

Everything learned in this repo (policy, critics, state representation,
reward ensemble) is a small fully-connected net built from the ops here.
Tensors wrap float64 numpy arrays; each op records a backward closure on a
tape, and `Tensor.backward()` replays it in reverse topological order.
Non-finite values raise immediately instead of propagating.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"HASD1"

_grad_enabled = True


class no_grad:
    """Context manager that disables tape recording (inference/targets)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class NonFiniteError(FloatingPointError):
    pass


def _check_finite(data: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values in {what}")


class Tensor:
    """A float64 array plus the tape machinery to differentiate through it."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev")

    def __init__(self, data, requires_grad=False, _prev=(), _backward=None):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad or (
            _grad_enabled and any(p.requires_grad for p in _prev)
        )
        self._prev = _prev if _grad_enabled else ()
        self._backward = _backward if _grad_enabled else None

    @property
    def shape(self):
        return self.data.shape

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return self.data.item()

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        # grads are never mutated in place, so holding a reference is safe
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self, upstream=None) -> None:
        """Backpropagate from this tensor. `upstream` defaults to ones."""
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        if upstream is None:
            upstream = np.ones_like(self.data)
        else:
            upstream = np.asarray(upstream, dtype=np.float64)
            if upstream.shape != self.data.shape:
                raise ValueError(
                    f"upstream grad shape {upstream.shape} != output shape {self.data.shape}"
                )
        for node in topo:
            node.grad = None
        self.grad = upstream
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # arithmetic sugar; every op below returns a new Tensor on the tape
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -_as_array(other))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / _as_array(other))

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_array(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64)


def _sum_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reverse numpy broadcasting: reduce gradient g down to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(_as_array(a))
    b = b if isinstance(b, Tensor) else Tensor(_as_array(b))
    out = Tensor(a.data + b.data, _prev=(a, b), _backward=None)

    def _bw(g):
        if a.requires_grad:
            a._accum(_sum_to_shape(g, a.data.shape))
        if b.requires_grad:
            b._accum(_sum_to_shape(g, b.data.shape))

    out._backward = _bw if _grad_enabled else None
    return out


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else Tensor(_as_array(a))
    b = b if isinstance(b, Tensor) else Tensor(_as_array(b))
    out = Tensor(a.data * b.data, _prev=(a, b))

    def _bw(g):
        if a.requires_grad:
            a._accum(_sum_to_shape(g * b.data, a.data.shape))
        if b.requires_grad:
            b._accum(_sum_to_shape(g * a.data, b.data.shape))

    out._backward = _bw if _grad_enabled else None
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data, _prev=(a, b))

    def _bw(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    out._backward = _bw if _grad_enabled else None
    return out


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    out = Tensor(np.where(mask, a.data, 0.0), _prev=(a,))

    def _bw(g):
        if a.requires_grad:
            a._accum(g * mask)

    out._backward = _bw if _grad_enabled else None
    return out


def tanh(a: Tensor) -> Tensor:
    t = np.tanh(a.data)
    out = Tensor(t, _prev=(a,))

    def _bw(g):
        if a.requires_grad:
            a._accum(g * (1.0 - t * t))

    out._backward = _bw if _grad_enabled else None
    return out


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    out = Tensor(e, _prev=(a,))

    def _bw(g):
        if a.requires_grad:
            a._accum(g * e)

    out._backward = _bw if _grad_enabled else None
    return out


def log(a: Tensor) -> Tensor:
    with np.errstate(divide="ignore", invalid="ignore"):
        out = Tensor(np.log(a.data), _prev=(a,))

    def _bw(g):
        if a.requires_grad:
            a._accum(g / a.data)

    out._backward = _bw if _grad_enabled else None
    return out


def sqrt(a: Tensor) -> Tensor:
    s = np.sqrt(a.data)
    out = Tensor(s, _prev=(a,))

    def _bw(g):
        if a.requires_grad:
            a._accum(g * 0.5 / s)

    out._backward = _bw if _grad_enabled else None
    return out


def power(a: Tensor, p: float) -> Tensor:
    out = Tensor(a.data ** p, _prev=(a,))

    def _bw(g):
        if a.requires_grad:
            a._accum(g * p * a.data ** (p - 1.0))

    out._backward = _bw if _grad_enabled else None
    return out


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data * a.data, _prev=(a,))

    def _bw(g):
        if a.requires_grad:
            a._accum(g * 2.0 * a.data)

    out._backward = _bw if _grad_enabled else None
    return out


def softplus(a: Tensor) -> Tensor:
    # log(1 + e^x) in the overflow-safe form max(x,0) + log1p(e^-|x|)
    s = np.maximum(a.data, 0.0) + np.log1p(np.exp(-np.abs(a.data)))
    out = Tensor(s, _prev=(a,))
    e = np.exp(-np.abs(a.data))
    sig = np.where(a.data >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    def _bw(g):
        if a.requires_grad:
            a._accum(g * sig)

    out._backward = _bw if _grad_enabled else None
    return out


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp; gradient passes only where the value was strictly inside."""
    mask = (a.data > lo) & (a.data < hi)
    out = Tensor(np.clip(a.data, lo, hi), _prev=(a,))

    def _bw(g):
        if a.requires_grad:
            a._accum(g * mask)

    out._backward = _bw if _grad_enabled else None
    return out


def minimum(a: Tensor, b) -> Tensor:
    b = b if isinstance(b, Tensor) else Tensor(_as_array(b))
    amask = a.data <= b.data
    out = Tensor(np.where(amask, a.data, b.data), _prev=(a, b))

    def _bw(g):
        if a.requires_grad:
            a._accum(_sum_to_shape(g * amask, a.data.shape))
        if b.requires_grad:
            b._accum(_sum_to_shape(g * ~amask, b.data.shape))

    out._backward = _bw if _grad_enabled else None
    return out


def maximum(a: Tensor, b) -> Tensor:
    b = b if isinstance(b, Tensor) else Tensor(_as_array(b))
    amask = a.data >= b.data
    out = Tensor(np.where(amask, a.data, b.data), _prev=(a, b))

    def _bw(g):
        if a.requires_grad:
            a._accum(_sum_to_shape(g * amask, a.data.shape))
        if b.requires_grad:
            b._accum(_sum_to_shape(g * ~amask, b.data.shape))

    out._backward = _bw if _grad_enabled else None
    return out


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), _prev=(a,))

    def _bw(g):
        if a.requires_grad:
            if axis is None:
                a._accum(np.broadcast_to(g, a.data.shape).copy())
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                a._accum(np.broadcast_to(gg, a.data.shape).copy())

    out._backward = _bw if _grad_enabled else None
    return out


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def concat(tensors: list[Tensor], axis: int = -1) -> Tensor:
    datas = [t.data for t in tensors]
    out = Tensor(np.concatenate(datas, axis=axis), _prev=tuple(tensors))
    sizes = [d.shape[axis] for d in datas]

    def _bw(g):
        offset = 0
        for t, sz in zip(tensors, sizes):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(offset, offset + sz)
                t._accum(g[tuple(idx)])
            offset += sz

    out._backward = _bw if _grad_enabled else None
    return out


def narrow(a: Tensor, start: int, length: int, axis: int = -1) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(a.data[idx], _prev=(a,))

    def _bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[idx] = g
            a._accum(full)

    out._backward = _bw if _grad_enabled else None
    return out


def reshape(a: Tensor, shape: tuple) -> Tensor:
    out = Tensor(a.data.reshape(shape), _prev=(a,))

    def _bw(g):
        if a.requires_grad:
            a._accum(g.reshape(a.data.shape))

    out._backward = _bw if _grad_enabled else None
    return out


def take_along_last(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather along the last axis (indices must not repeat within a row)."""
    out = Tensor(np.take_along_axis(a.data, idx, axis=-1), _prev=(a,))

    def _bw(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.put_along_axis(full, idx, g, axis=-1)
            a._accum(full)

    out._backward = _bw if _grad_enabled else None
    return out


def _qh_numpy(p: np.ndarray, targets: np.ndarray, taus: np.ndarray):
    u = targets[:, None, :] - p[:, :, None]  # (B, M, T)
    absu = np.abs(u)
    huber = np.where(absu <= 1.0, 0.5 * u * u, absu - 0.5)
    w = np.abs(taus[None, :, None] - (u < 0.0))
    loss = float(np.mean(w * huber))
    dhuber_du = np.clip(u, -1.0, 1.0)
    grad = -(w * dhuber_du).sum(axis=2) / u.size
    return loss, grad


try:  # the hot kernel of every critic update; numba removes ~10 array passes
    import numba

    @numba.njit(cache=True)
    def _qh_compiled(p, targets, taus):  # pragma: no cover - replayed in tests
        b_n, m_n = p.shape
        t_n = targets.shape[1]
        loss = 0.0
        grad = np.zeros((b_n, m_n))
        for b in range(b_n):
            for m in range(m_n):
                pv = p[b, m]
                tau = taus[m]
                gacc = 0.0
                for t in range(t_n):
                    u = targets[b, t] - pv
                    w = (1.0 - tau) if u < 0.0 else tau
                    au = abs(u)
                    if au <= 1.0:
                        loss += w * 0.5 * u * u
                        gacc += w * u
                    else:
                        loss += w * (au - 0.5)
                        gacc += w * (1.0 if u > 0.0 else -1.0)
                grad[b, m] = -gacc
        n = b_n * m_n * t_n
        return loss / n, grad / n

    _qh_kernel = _qh_compiled
except ImportError:  # pragma: no cover
    _qh_kernel = _qh_numpy


def quantile_huber_loss(preds: Tensor, targets: np.ndarray, taus: np.ndarray) -> Tensor:
    """Fused quantile Huber regression (threshold 1), mean over all pairs.

    preds: (B, M) quantile estimates at fractions `taus` (length M).
    targets: (B, T) fixed target atoms (no gradient).
    """
    p = preds.data
    if p.ndim != 2 or targets.ndim != 2 or p.shape[0] != targets.shape[0]:
        raise ValueError(f"bad shapes: preds {p.shape}, targets {targets.shape}")
    loss, grad = _qh_kernel(
        np.ascontiguousarray(p),
        np.ascontiguousarray(targets, dtype=np.float64),
        np.ascontiguousarray(taus, dtype=np.float64),
    )
    out = Tensor(loss, _prev=(preds,))

    def _bw(g):
        if preds.requires_grad:
            preds._accum(grad * g)

    out._backward = _bw if _grad_enabled else None
    return out


def gaussian_log_prob(mean: Tensor, log_std: Tensor, value) -> Tensor:
    """Diagonal-Gaussian log density at `value`, summed over the last axis.

    `value` may be a Tensor (reparameterized sample; gradient flows through
    it) or a plain array.
    """
    value = value if isinstance(value, Tensor) else Tensor(_as_array(value))
    std = exp(log_std)
    z = mul(add(value, mul(mean, -1.0)), power(std, -1.0))
    per_dim = add(add(mul(square(z), -0.5), mul(log_std, -1.0)), -0.5 * np.log(2.0 * np.pi))
    return tsum(per_dim, axis=-1)


class Mlp:
    """Fully-connected net: rectifier hidden layers, identity output.

    Weights use fan-in-scaled uniform init, biases start at zero. Parameters
    are float64; construction from a given rng is bit-reproducible.
    """

    def __init__(self, layer_sizes: list[int], rng: np.random.Generator | None = None):
        if len(layer_sizes) < 2:
            raise ValueError("need at least input and output sizes")
        self.layer_sizes = list(layer_sizes)
        self.weights: list[Tensor] = []
        self.biases: list[Tensor] = []
        rng = rng if rng is not None else np.random.default_rng(0)
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            # biases share the weight init: exactly-zero biases park dead
            # units on the rectifier kink, where finite differences and the
            # subgradient provably disagree
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = rng.uniform(-bound, bound, size=fan_out)
            self.weights.append(Tensor(w, requires_grad=True))
            self.biases.append(Tensor(b, requires_grad=True))
        self._last_output: Tensor | None = None
        self._last_input: Tensor | None = None

    @property
    def parameters(self) -> list[Tensor]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.append(w)
            params.append(b)
        return params

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(_as_array(x))
        if x.data.shape[-1] != self.layer_sizes[0]:
            raise ValueError(
                f"input width {x.data.shape[-1]} != first layer width {self.layer_sizes[0]}"
            )
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = add(matmul(h, w), b)
            if i < last:
                h = relu(h)
        self._last_input = x
        self._last_output = h
        return h

    def __call__(self, x) -> Tensor:
        return self.forward(x)

    def zero_grad(self) -> None:
        for p in self.parameters:
            p.grad = None

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.layer_sizes = list(self.layer_sizes)
        clone.weights = [Tensor(w.data.copy(), requires_grad=True) for w in self.weights]
        clone.biases = [Tensor(b.data.copy(), requires_grad=True) for b in self.biases]
        clone._last_output = None
        clone._last_input = None
        return clone

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.parameters])

    def set_flat_parameters(self, flat: np.ndarray) -> None:
        flat = _as_array(flat)
        offset = 0
        for p in self.parameters:
            n = p.data.size
            p.data = flat[offset : offset + n].reshape(p.data.shape).copy()
            offset += n
        if offset != flat.size:
            raise ValueError(f"parameter count mismatch: expected {offset}, got {flat.size}")


def forward(net: Mlp, x) -> Tensor:
    return net.forward(x)


def backward(net: Mlp, upstream_grad) -> dict:
    """Backprop the net's most recent forward; returns param and input grads."""
    if net._last_output is None:
        raise RuntimeError("backward called before forward")
    net.zero_grad()
    if net._last_input is not None:
        net._last_input.requires_grad = True
        net._last_input.grad = None
    net._last_output.backward(upstream_grad)
    return {
        "weights": [w.grad for w in net.weights],
        "biases": [b.grad for b in net.biases],
        "input": net._last_input.grad,
    }


class AdamState:
    """Bias-corrected Adam over a fixed parameter list."""

    def __init__(self, params: list[Tensor], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        adam_step(self, self.params, [p.grad for p in self.params])

    def state_arrays(self) -> dict:
        return {"m": self.m, "v": self.v, "step_count": self.step_count}

    def load_state_arrays(self, state: dict) -> None:
        self.m = [np.array(a, dtype=np.float64) for a in state["m"]]
        self.v = [np.array(a, dtype=np.float64) for a in state["v"]]
        self.step_count = int(state["step_count"])


def adam_step(st: AdamState, params: list[Tensor], grads: list) -> None:
    """One in-place Adam update. Missing grads are treated as zero."""
    st.step_count += 1
    t = st.step_count
    bc1 = 1.0 - st.beta1 ** t
    bc2 = 1.0 - st.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.data)
        g = _as_array(g)
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {i}")
        st.m[i] = st.beta1 * st.m[i] + (1.0 - st.beta1) * g
        st.v[i] = st.beta2 * st.v[i] + (1.0 - st.beta2) * (g * g)
        mhat = st.m[i] / bc1
        vhat = st.v[i] / bc2
        p.data = p.data - st.lr * mhat / (np.sqrt(vhat) + st.eps)
        _check_finite(p.data, f"parameter {i} after adam step")


def finite_diff_check(fn, params: list[Tensor], h: float = 1e-5) -> float:
    """Max relative error between analytic grads of `fn` and central differences.

    `fn` must return a scalar Tensor built from `params`. Error per element is
    |analytic - central| / max(1, |central|).
    """
    if not 0.0 < h <= 1e-2:
        raise ValueError("h must be in (0, 1e-2]")
    for p in params:
        p.grad = None
    out = fn()
    if out.data.shape != ():
        raise ValueError(f"fn must return a scalar, got shape {out.data.shape}")
    out.backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]
    worst = 0.0
    with no_grad():
        for p, ag in zip(params, analytic):
            flat = p.data.ravel()
            agf = ag.ravel()
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + h
                fplus = float(fn().data)
                flat[j] = orig - h
                fminus = float(fn().data)
                flat[j] = orig
                central = (fplus - fminus) / (2.0 * h)
                err = abs(agf[j] - central) / max(1.0, abs(central))
                if err > worst:
                    worst = err
    return worst


def save_fragment(net: Mlp) -> bytes:
    """Binary network fragment: magic, layer sizes, length-prefixed flat params."""
    parts = [MAGIC, struct.pack("<I", len(net.layer_sizes))]
    parts.append(struct.pack(f"<{len(net.layer_sizes)}I", *net.layer_sizes))
    flat = net.flat_parameters()
    parts.append(struct.pack("<Q", flat.size))
    parts.append(flat.astype("<f8").tobytes())
    return b"".join(parts)


def load_fragment(blob: bytes) -> Mlp:
    if blob[:5] != MAGIC:
        raise ValueError("bad magic header in network fragment")
    off = 5
    (n_sizes,) = struct.unpack_from("<I", blob, off)
    off += 4
    sizes = list(struct.unpack_from(f"<{n_sizes}I", blob, off))
    off += 4 * n_sizes
    (n_params,) = struct.unpack_from("<Q", blob, off)
    off += 8
    flat = np.frombuffer(blob, dtype="<f8", count=n_params, offset=off)
    net = Mlp(sizes)
    net.set_flat_parameters(flat.astype(np.float64))
    return net
