"""Minimal deterministic numeric kernel.

Dense float64 tensors with reverse-mode gradients for exactly the layer
set the document network needs, plus Adam with linear warmup and a
central-difference gradient oracle. Everything runs on numpy, single
threaded per training step, and is bit-reproducible given a seed.

Every op guards its output against NaN/Inf (a one-pass sum probe), so a
numeric blowup surfaces at the op that produced it instead of three
modules later.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import MissingFile, VersionMismatch

CHECKPOINT_FORMAT = "ckptv1"


class ShapeMismatch(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteError(ArithmeticError):
    """An op produced NaN or Inf."""


def _guard(data: np.ndarray, op: str) -> np.ndarray:
    # sum is one pass and goes NaN/Inf whenever any entry is non-finite
    if data.size and not math.isfinite(float(data.sum())):
        raise NonFiniteError(f"{op} produced non-finite values")
    return data


class Tensor:
    """A node in the computation tape: float64 data plus a backward rule."""

    __slots__ = ("data", "grad", "_parents", "_bwd")

    def __init__(self, data, parents: tuple = (), bwd: Optional[Callable] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self._parents = parents
        self._bwd = bwd

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def backward(self) -> None:
        """Reverse-mode sweep from a scalar root, accumulating into .grad."""
        if self.data.size != 1:
            raise ShapeMismatch(f"backward needs a scalar root, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)


def tensor(data) -> Tensor:
    """Wrap an array as a constant/leaf node."""
    return Tensor(data)


def _acc(parent: Tensor, g: np.ndarray) -> None:
    # never +=: an assigned grad may be a view into a child's buffer
    parent.grad = g if parent.grad is None else parent.grad + g


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to `shape`."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = _guard(a.data + b.data, "add")
    except ValueError as e:
        raise ShapeMismatch(f"add {a.shape} vs {b.shape}") from e
    out = Tensor(data, (a, b))

    def bwd(g):
        _acc(a, _reduce_to(g, a.shape))
        _acc(b, _reduce_to(g, b.shape))

    out._bwd = bwd
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        data = _guard(a.data * b.data, "mul")
    except ValueError as e:
        raise ShapeMismatch(f"mul {a.shape} vs {b.shape}") from e
    out = Tensor(data, (a, b))

    def bwd(g):
        _acc(a, _reduce_to(g * b.data, a.shape))
        _acc(b, _reduce_to(g * a.data, b.shape))

    out._bwd = bwd
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(_guard(a.data * c, "scale"), (a,))

    def bwd(g):
        _acc(a, g * c)

    out._bwd = bwd
    return out


def _contig_swap(x: np.ndarray) -> np.ndarray:
    # numpy's batched matmul is far slower on transposed views; copy pays off
    xt = x.swapaxes(-1, -2)
    if xt.ndim > 2 and not xt.flags.c_contiguous:
        xt = np.ascontiguousarray(xt)
    return xt


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(f"matmul needs >=2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out = Tensor(_guard(a.data @ b.data, "matmul"), (a, b))

    def bwd(g):
        ga = g @ _contig_swap(b.data)
        _acc(a, ga if ga.shape == a.data.shape else _reduce_to(ga, a.shape))
        if b.ndim == 2 and g.ndim > 2:
            # stacked-batch shortcut: one gemm instead of per-batch outer products
            k = a.data.shape[-1]
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _contig_swap(a.data) @ g
            if gb.shape != b.data.shape:
                gb = _reduce_to(gb, b.shape)
        _acc(b, gb)

    out._bwd = bwd
    return out


# When set (by grad_check), every relu records its activation sign pattern
# so finite-difference probes that cross the kink can be excluded.
_RELU_TRACE: Optional[list[bytes]] = None


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0.0
    if _RELU_TRACE is not None:
        _RELU_TRACE.append(np.packbits(mask).tobytes())
    out = Tensor(np.maximum(a.data, 0.0), (a,))

    def bwd(g):
        _acc(a, g * mask)

    out._bwd = bwd
    return out


def concat(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = list(xs)
    out = Tensor(_guard(np.concatenate([x.data for x in xs], axis=axis), "concat"), tuple(xs))
    sizes = [x.data.shape[axis] for x in xs]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _acc(x, g[tuple(sl)])

    out._bwd = bwd
    return out


def take_rows(a: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows along axis 0; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.intp)
    out = Tensor(a.data[idx], (a,))

    def bwd(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        _acc(a, ga)

    out._bwd = bwd
    return out


def take_slot(a: Tensor, slot: int) -> Tensor:
    """Select one position along axis 1: (B, S, ...) -> (B, ...)."""
    out = Tensor(a.data[:, slot], (a,))

    def bwd(g):
        ga = np.zeros_like(a.data)
        ga[:, slot] = g
        _acc(a, ga)

    out._bwd = bwd
    return out


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape), (a,))

    def bwd(g):
        _acc(a, g.reshape(a.data.shape))

    out._bwd = bwd
    return out


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    # contiguous output: downstream matmuls take numpy's fast path
    out = Tensor(np.ascontiguousarray(a.data.transpose(axes)), (a,))
    inverse = tuple(int(i) for i in np.argsort(axes))

    def bwd(g):
        _acc(a, np.ascontiguousarray(g.transpose(inverse)))

    out._bwd = bwd
    return out


def masked_softmax(a: Tensor, mask: Optional[np.ndarray]) -> Tensor:
    """Softmax over the last axis; False mask lanes get exactly zero weight.

    Every row must keep at least one valid lane (the aggregation target
    slot guarantees this in practice).
    """
    z = a.data
    if mask is None:
        m = z.max(axis=-1, keepdims=True)
        e = np.exp(z - m)
    else:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        m = np.where(mask, z, -np.inf).max(axis=-1, keepdims=True)
        e = np.where(mask, np.exp(z - m), 0.0)
    s = e.sum(axis=-1, keepdims=True)
    y = _guard(e / s, "masked_softmax")
    out = Tensor(y, (a,))

    def bwd(g):
        _acc(a, (g - (g * y).sum(axis=-1, keepdims=True)) * y)

    out._bwd = bwd
    return out


def softmax_rows(a: Tensor) -> Tensor:
    """Plain softmax over the last axis."""
    return masked_softmax(a, None)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(_guard(np.asarray(a.data.sum()), "sum_all"), (a,))

    def bwd(g):
        _acc(a, np.broadcast_to(g, a.data.shape).copy())

    out._bwd = bwd
    return out


def mean_all(a: Tensor) -> Tensor:
    return scale(sum_all(a), 1.0 / a.data.size)


def cross_entropy(logits: Tensor, class_ids: np.ndarray) -> Tensor:
    """Mean negative log softmax probability of the true class per row.

    Stabilized by max subtraction, so +-1e3 logits stay exact.
    """
    ids = np.asarray(class_ids, dtype=np.intp)
    z = logits.data
    if z.ndim != 2:
        raise ShapeMismatch(f"cross_entropy expects (rows, classes), got {z.shape}")
    n, c = z.shape
    if len(ids) != n:
        raise ShapeMismatch(f"{len(ids)} class ids for {n} rows")
    if ids.min(initial=0) < 0 or ids.max(initial=0) >= c:
        raise IndexError(f"class id outside [0, {c})")
    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    nll = lse[:, 0] - z[np.arange(n), ids]
    out = Tensor(_guard(np.asarray(nll.mean()), "cross_entropy"), (logits,))

    def bwd(g):
        p = np.exp(z - lse)
        p[np.arange(n), ids] -= 1.0
        _acc(logits, p * (float(g) / n))

    out._bwd = bwd
    return out


def bce_with_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on raw logits (overflow-safe form)."""
    z = logits.data
    t = np.asarray(targets, dtype=np.float64)
    if z.shape != t.shape:
        raise ShapeMismatch(f"logits {z.shape} vs targets {t.shape}")
    losses = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = Tensor(_guard(np.asarray(losses.mean()), "bce_with_logits"), (logits,))

    def bwd(g):
        sig = 1.0 / (1.0 + np.exp(-z))
        _acc(logits, (sig - t) * (float(g) / z.size))

    out._bwd = bwd
    return out


# ---------------------------------------------------------------------------
# layers


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b. Accepts a bare vector for convenience."""
    if x.ndim == 1:
        return reshape(affine(reshape(x, (1, -1)), w, b), (w.shape[1],))
    return add(matmul(x, w), b)


def mlp2(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two affine layers with a ReLU between them."""
    return affine(relu(affine(x, w1, b1)), w2, b2)


def multi_head_attention(
    x_q: Tensor,
    x_kv: Tensor,
    key_mask: Optional[np.ndarray],
    wq: Tensor,
    bq: Tensor,
    wk: Tensor,
    bk: Tensor,
    wv: Tensor,
    bv: Tensor,
    wo: Tensor,
    bo: Tensor,
    n_heads: int = 4,
    head_size: int = 32,
    return_weights: bool = False,
):
    """One scaled dot-product attention layer over batched token sets.

    x_q is (B, Sq, D), x_kv is (B, Sk, D) with D = n_heads * head_size;
    key_mask is (B, Sk) bool (True = real token) or None. Padded lanes get
    zero attention weight exactly.
    """
    bsz, sq, d = x_q.shape
    sk = x_kv.shape[1]
    if d != n_heads * head_size:
        raise ShapeMismatch(f"width {d} != heads {n_heads} x head_size {head_size}")

    q = affine(x_q, wq, bq)
    k = affine(x_kv, wk, bk)
    v = affine(x_kv, wv, bv)
    qh = transpose(reshape(q, (bsz, sq, n_heads, head_size)), (0, 2, 1, 3))
    kh = transpose(reshape(k, (bsz, sk, n_heads, head_size)), (0, 2, 3, 1))
    vh = transpose(reshape(v, (bsz, sk, n_heads, head_size)), (0, 2, 1, 3))

    scores = scale(matmul(qh, kh), 1.0 / math.sqrt(head_size))  # (B, H, Sq, Sk)
    att = masked_softmax(scores, None if key_mask is None else key_mask[:, None, None, :])
    ctx = matmul(att, vh)  # (B, H, Sq, hs)
    out = affine(reshape(transpose(ctx, (0, 2, 1, 3)), (bsz, sq, d)), wo, bo)
    if return_weights:
        return out, att
    return out


# ---------------------------------------------------------------------------
# parameters and optimization


@dataclass
class ParamStore:
    """Named parameter arrays plus Adam moments and the step counter."""

    params: dict[str, np.ndarray] = field(default_factory=dict)
    adam_m: dict[str, np.ndarray] = field(default_factory=dict)
    adam_v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    seed: int = 0

    def add(self, name: str, array: np.ndarray) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        arr = np.asarray(array, dtype=np.float64)
        self.params[name] = arr
        self.adam_m[name] = np.zeros_like(arr)
        self.adam_v[name] = np.zeros_like(arr)

    def leaves(self) -> dict[str, Tensor]:
        """Fresh leaf tensors viewing the current parameter arrays."""
        return {name: Tensor(arr) for name, arr in self.params.items()}

    def n_parameters(self) -> int:
        return sum(a.size for a in self.params.values())


def xavier_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def warmup_steps(warmup_proportion: float, total_steps: int) -> int:
    return max(1, math.ceil(warmup_proportion * total_steps))


def adam_step(
    store: ParamStore,
    grads: dict[str, np.ndarray],
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    warmup_proportion: float = 0.01,
    total_steps: Optional[int] = None,
) -> ParamStore:
    """One Adam update with bias correction and linear learning-rate warmup.

    The effective rate ramps from 0 to `lr` over the first
    ceil(warmup_proportion * total_steps) steps and stays constant after.
    With total_steps None there is no warmup.
    """
    for name, g in grads.items():
        if name not in store.params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != store.params[name].shape:
            raise ShapeMismatch(f"grad {g.shape} vs param {store.params[name].shape} for {name!r}")

    t = store.step + 1
    if total_steps is not None:
        w = warmup_steps(warmup_proportion, total_steps)
        lr_t = lr * min(1.0, t / w)
    else:
        lr_t = lr

    for name in sorted(grads):
        g = grads[name]
        m = beta1 * store.adam_m[name] + (1.0 - beta1) * g
        v = beta2 * store.adam_v[name] + (1.0 - beta2) * g * g
        store.adam_m[name] = m
        store.adam_v[name] = v
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        store.params[name] = store.params[name] - lr_t * m_hat / (np.sqrt(v_hat) + eps)
    store.step = t
    return store


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their global L2 norm is <= max_norm."""
    total = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if total > max_norm and total > 0.0:
        factor = max_norm / total
        for name in grads:
            grads[name] = grads[name] * factor
    return total


# ---------------------------------------------------------------------------
# checkpoints


def _encode_array(arr: np.ndarray) -> dict:
    data = np.ascontiguousarray(arr, dtype="<f8")
    return {"shape": list(arr.shape), "dtype": "<f8", "data": base64.b64encode(data.tobytes()).decode("ascii")}


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype=obj["dtype"]).reshape(obj["shape"]).astype(np.float64)


def save_checkpoint(path, store: ParamStore, config_echo: dict, feature_layout: str) -> None:
    """Write a ckptv1 container; byte-stable for a given state (sorted keys)."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "feature_layout": feature_layout,
        "config": config_echo,
        "seed": store.seed,
        "step": store.step,
        "params": {k: _encode_array(v) for k, v in store.params.items()},
        "adam_m": {k: _encode_array(v) for k, v in store.adam_m.items()},
        "adam_v": {k: _encode_array(v) for k, v in store.adam_v.items()},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, separators=(",", ":")), encoding="utf-8")


def load_checkpoint(path) -> tuple[ParamStore, dict]:
    """Read a ckptv1 container; returns (store, metadata with config echo)."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(str(path))
    payload = json.loads(path.read_text(encoding="utf-8"))
    fmt = payload.get("format", "<missing>")
    if fmt != CHECKPOINT_FORMAT:
        raise VersionMismatch(CHECKPOINT_FORMAT, fmt)
    store = ParamStore(step=payload["step"], seed=payload["seed"])
    for name, obj in payload["params"].items():
        store.params[name] = _decode_array(obj)
    for name, obj in payload["adam_m"].items():
        store.adam_m[name] = _decode_array(obj)
    for name, obj in payload["adam_v"].items():
        store.adam_v[name] = _decode_array(obj)
    meta = {"config": payload["config"], "feature_layout": payload["feature_layout"]}
    return store, meta


# ---------------------------------------------------------------------------
# finite-difference oracle


def _traced_loss(loss_fn, params) -> tuple[float, tuple[bytes, ...]]:
    global _RELU_TRACE
    _RELU_TRACE = []
    try:
        loss, _ = loss_fn(params)
        return loss, tuple(_RELU_TRACE)
    finally:
        _RELU_TRACE = None


def grad_check(
    loss_fn: Callable[[dict[str, np.ndarray]], tuple[float, dict[str, np.ndarray]]],
    params: dict[str, np.ndarray],
    h: float = 1e-5,
    max_coords_per_param: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
    return_stats: bool = False,
):
    """Max relative error between analytic and central-difference gradients.

    `loss_fn(params) -> (loss, grads)` must be deterministic. With
    `max_coords_per_param` set, a seeded sample of coordinates per tensor is
    probed instead of every coordinate (the analytic side is always full).
    Relative error per coordinate: |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|).

    Central differences are meaningless across the ReLU kink. Probes whose
    +-h evaluations see different activation sign patterns are excluded and
    counted; `return_stats` exposes (worst, n_checked, n_excluded).

    The difference quotient carries float64 cancellation noise of roughly
    eps * |loss| / (2h); when analytic and numeric gradients agree within a
    few dozen ulps of that floor the oracle cannot resolve them further, so
    such coordinates count as exact matches (a genuinely wrong backward rule
    still disagrees far above the floor).
    """
    work = {k: np.array(v, dtype=np.float64, copy=True) for k, v in params.items()}
    base_loss, analytic = loss_fn(work)
    fd_floor = 64.0 * np.finfo(np.float64).eps * max(1.0, abs(base_loss)) / (2.0 * h)
    worst = 0.0
    n_checked = 0
    n_excluded = 0
    for name in sorted(work):
        arr = work[name]
        flat = arr.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords_per_param, replace=False)
        else:
            coords = np.arange(n)
        g_ad_flat = analytic[name].reshape(-1)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up, sig_up = _traced_loss(loss_fn, work)
            flat[c] = orig - h
            down, sig_down = _traced_loss(loss_fn, work)
            flat[c] = orig
            if sig_up != sig_down:
                n_excluded += 1
                continue
            g_fd = (up - down) / (2.0 * h)
            g_ad = float(g_ad_flat[c])
            if abs(g_ad - g_fd) <= fd_floor:
                err = 0.0
            else:
                err = abs(g_ad - g_fd) / max(1e-8, abs(g_ad) + abs(g_fd))
            worst = max(worst, err)
            n_checked += 1
    if return_stats:
        return worst, n_checked, n_excluded
    return worst
