"""Reverse-mode automatic differentiation on dense float64 tensors.

The engine is tape based: every primitive executed while a :class:`Tape`
is active appends a node holding the forward closure and a VJP rule.
VJP rules are themselves written in terms of primitives, so running a
backward pass with ``create_graph=True`` records the backward arithmetic
on the same tape and makes gradients differentiable to arbitrary order.
That is what lets a training loss depend on input gradients of a network
(needed when the vector field of a rollout is itself a gradient).

Everything is float64 and single threaded per tape.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field

import numpy as np

# Per-op finiteness checking; expensive, enabled in tests.
CHECK_FINITE = False

_TAPE_STACK: list["Tape | None"] = []


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


def active_tape() -> "Tape | None":
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tape:
    """Ordered record of primitive operations plus a parameter registry.

    Nodes are appended in execution order, so parents always precede
    children and a reversed walk is a valid reverse topological order.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []
        self.parameters: dict[str, Tensor] = {}

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def register(self, params: dict[str, "Tensor"]):
        for name, t in params.items():
            t.requires_grad = True
            self.parameters[name] = t

    def replay(self) -> bool:
        """Recompute every node from its parents; True if bit-identical."""
        for node in self.nodes:
            if node._fwd is None:
                continue
            fresh = node._fwd(*[p.data for p in node.parents])
            if not np.array_equal(fresh, node.data):
                return False
        return True


class _NoTape:
    def __enter__(self):
        _TAPE_STACK.append(None)
        return None

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False


def no_tape() -> _NoTape:
    """Context under which operations are not recorded."""
    return _NoTape()


class Tensor:
    """Dense float64 array with optional links into the recording tape."""

    __slots__ = ("data", "parents", "_vjp", "_fwd", "name", "requires_grad")

    def __init__(self, data, *, requires_grad=False, name=None):
        if isinstance(data, np.ndarray) and data.dtype == np.float64:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=np.float64)
        self.parents: tuple[Tensor, ...] = ()
        self._vjp = None
        self._fwd = None
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, name={self.name})"

    # arithmetic sugar; constants are lifted
    def __add__(self, other):
        return add(self, as_tensor(other))

    def __radd__(self, other):
        return add(as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, as_tensor(other))

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, as_tensor(other))

    def __rmul__(self, other):
        return mul(as_tensor(other), self)

    def __truediv__(self, other):
        return div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, c):
        return pow_const(self, c)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def variable(data, name=None) -> Tensor:
    """Leaf tensor that participates in gradient computation."""
    return Tensor(data, requires_grad=True, name=name)


def constant(data, name=None) -> Tensor:
    return Tensor(data, requires_grad=False, name=name)


def _node(data: np.ndarray, parents, vjp, fwd) -> Tensor:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError("operation produced a non-finite value")
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    tape = active_tape()
    if tape is not None:
        out.parents = tuple(parents)
        out._vjp = vjp
        out._fwd = fwd
        tape.nodes.append(out)
    return out


def _sum_to(g: Tensor, shape: tuple) -> Tensor:
    """Reduce a broadcasted gradient back to the unbroadcast shape."""
    if g.data.shape == shape:
        return g
    extra = g.data.ndim - len(shape)
    for _ in range(extra):
        g = tsum(g, axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.data.shape[ax] != 1:
            g = tsum(g, axis=ax, keepdims=True)
    if g.data.shape != shape:
        g = reshape(g, shape)
    return g


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        ga = _sum_to(g, a.data.shape) if a.requires_grad else None
        gb = _sum_to(g, b.data.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data + b.data, (a, b), vjp, lambda x, y: x + y)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        ga = _sum_to(g, a.data.shape) if a.requires_grad else None
        gb = _sum_to(neg(g), b.data.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data - b.data, (a, b), vjp, lambda x, y: x - y)


def neg(a: Tensor) -> Tensor:
    return _node(-a.data, (a,), lambda g: (neg(g),), lambda x: -x)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        ga = _sum_to(mul(g, b), a.data.shape) if a.requires_grad else None
        gb = _sum_to(mul(g, a), b.data.shape) if b.requires_grad else None
        return ga, gb

    return _node(a.data * b.data, (a, b), vjp, lambda x, y: x * y)


def div(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        ga = _sum_to(div(g, b), a.data.shape) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = _sum_to(neg(div(mul(g, a), mul(b, b))), b.data.shape)
        return ga, gb

    return _node(a.data / b.data, (a, b), vjp, lambda x, y: x / y)


def pow_const(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def vjp(g):
        return (mul(g, mul(constant(c), pow_const(a, c - 1.0))),)

    return _node(a.data**c, (a,), vjp, lambda x: x**c)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        ga = matmul(g, transpose(b)) if a.requires_grad else None
        gb = matmul(transpose(a), g) if b.requires_grad else None
        return ga, gb

    return _node(a.data @ b.data, (a, b), vjp, lambda x, y: x @ y)


def transpose(a: Tensor) -> Tensor:
    return _node(a.data.T.copy(), (a,), lambda g: (transpose(g),), lambda x: x.T.copy())


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.data.shape
    return _node(
        a.data.reshape(shape).copy(),
        (a,),
        lambda g: (reshape(g, old),),
        lambda x: x.reshape(shape).copy(),
    )


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    """Sum over an axis (or all entries)."""

    def vjp(g):
        if axis is None:
            return (broadcast_to(reshape(g, (1,) * a.data.ndim), a.data.shape),)
        if not keepdims:
            kshape = list(a.data.shape)
            kshape[axis] = 1
            g = reshape(g, kshape)
        return (broadcast_to(g, a.data.shape),)

    return _node(
        np.sum(a.data, axis=axis, keepdims=keepdims),
        (a,),
        vjp,
        lambda x: np.sum(x, axis=axis, keepdims=keepdims),
    )


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), constant(1.0 / n))


def broadcast_to(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.data.shape
    return _node(
        np.broadcast_to(a.data, shape).copy(),
        (a,),
        lambda g: (_sum_to(g, old),),
        lambda x: np.broadcast_to(x, shape).copy(),
    )


def tanh(a: Tensor) -> Tensor:
    out = _node(np.tanh(a.data), (a,), None, np.tanh)
    out._vjp = lambda g: (mul(g, sub(constant(1.0), mul(out, out))),)
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    val = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))

    def fwd(x):
        e = np.exp(-np.abs(x))
        return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))

    out = _node(val, (a,), None, fwd)
    out._vjp = lambda g: (mul(g, mul(out, sub(constant(1.0), out))),)
    return out


def softplus(a: Tensor) -> Tensor:
    # log1p(exp(-|x|)) + max(x, 0) avoids overflow on both tails
    def fwd(x):
        return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)

    return _node(fwd(a.data), (a,), lambda g: (mul(g, sigmoid(a)),), fwd)


def relu(a: Tensor) -> Tensor:
    mask = (a.data > 0).astype(np.float64)
    return _node(
        a.data * mask,
        (a,),
        lambda g: (mul(g, constant(mask)),),
        lambda x: x * (x > 0),
    )


def tabs(a: Tensor) -> Tensor:
    # subgradient at 0 is 0 (sign(0) == 0)
    sign = np.sign(a.data)
    return _node(np.abs(a.data), (a,), lambda g: (mul(g, constant(sign)),), np.abs)


def texp(a: Tensor) -> Tensor:
    out = _node(np.exp(a.data), (a,), None, np.exp)
    out._vjp = lambda g: (mul(g, out),)
    return out


def tlog(a: Tensor) -> Tensor:
    return _node(np.log(a.data), (a,), lambda g: (div(g, a),), np.log)


def tsqrt(a: Tensor) -> Tensor:
    out = _node(np.sqrt(a.data), (a,), None, np.sqrt)
    out._vjp = lambda g: (div(mul(g, constant(0.5)), out),)
    return out


def tsin(a: Tensor) -> Tensor:
    return _node(np.sin(a.data), (a,), lambda g: (mul(g, tcos(a)),), np.sin)


def tcos(a: Tensor) -> Tensor:
    return _node(np.cos(a.data), (a,), lambda g: (neg(mul(g, tsin(a))),), np.cos)


def concat(tensors, axis=1) -> Tensor:
    tensors = list(tensors)
    offsets = []
    start = 0
    for t in tensors:
        offsets.append(start)
        start += t.data.shape[axis]

    def vjp(g):
        outs = []
        for t, off in zip(tensors, offsets):
            if t.requires_grad:
                outs.append(narrow(g, axis, off, t.data.shape[axis]))
            else:
                outs.append(None)
        return tuple(outs)

    return _node(
        np.concatenate([t.data for t in tensors], axis=axis),
        tuple(tensors),
        vjp,
        lambda *xs: np.concatenate(xs, axis=axis),
    )


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    total = a.data.shape[axis]
    return _node(
        a.data[idx].copy(),
        (a,),
        lambda g: (pad_axis(g, axis, start, total),),
        lambda x: x[idx].copy(),
    )


def pad_axis(a: Tensor, axis: int, start: int, total: int) -> Tensor:
    length = a.data.shape[axis]

    def fwd(x):
        shape = list(x.shape)
        shape[axis] = total
        out = np.zeros(shape, dtype=np.float64)
        idx = [slice(None)] * x.ndim
        idx[axis] = slice(start, start + length)
        out[tuple(idx)] = x
        return out

    return _node(fwd(a.data), (a,), lambda g: (narrow(g, axis, start, length),), fwd)


# ---------------------------------------------------------------------------
# gradients


def grad(output: Tensor, sources, *, create_graph=False, seed: Tensor | None = None,
         tape: Tape | None = None):
    """Reverse-mode gradients of ``output`` with respect to ``sources``.

    Sources act as cut points: they are treated as independent inputs, so
    the backward pass neither expands their ancestry nor propagates
    through one source into another. That is the partial-derivative
    semantics rollout integrators need, and it keeps the cost of a
    gradient proportional to the subgraph between output and sources.

    With ``create_graph=True`` the backward arithmetic is recorded on the
    active tape, so the returned tensors can be differentiated again.
    """
    if create_graph and active_tape() is None:
        raise RuntimeError("create_graph requires an active tape")
    sources = list(sources)
    source_ids = {id(s) for s in sources}

    # iterative DFS postorder over the ancestor graph; avoids recursion
    # limits on deep rollout chains. Parents precede consumers in `topo`.
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        if id(node) not in source_ids:
            for parent in node.parents:
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))

    adjoints: dict[int, Tensor] = {}
    ctx = no_tape() if not create_graph else _null_ctx()
    with ctx:
        if seed is None:
            seed = constant(np.ones_like(output.data))
        adjoints[id(output)] = seed
        for node in reversed(topo):
            a = adjoints.pop(id(node), None) if id(node) not in source_ids else None
            if a is None or node._vjp is None:
                continue
            contribs = node._vjp(a)
            for parent, c in zip(node.parents, contribs):
                if c is None or not parent.requires_grad:
                    continue
                prev = adjoints.get(id(parent))
                adjoints[id(parent)] = c if prev is None else add(prev, c)
        out = []
        for s in sources:
            g = adjoints.get(id(s))
            if g is None:
                g = constant(np.zeros_like(s.data))
            out.append(g)
    return out


class _null_ctx:
    def __enter__(self):
        return None

    def __exit__(self, *exc):
        return False


def param_grad(tape: Tape, output: Tensor) -> dict[str, np.ndarray]:
    """Gradients of a scalar output for every registered parameter."""
    if output.data.size != 1:
        raise ValueError(f"param_grad needs a scalar output, got shape {output.data.shape}")
    names = list(tape.parameters)
    gs = grad(output, [tape.parameters[n] for n in names], create_graph=False, tape=tape)
    return {n: g.data.reshape(tape.parameters[n].data.shape) for n, g in zip(names, gs)}


def input_grad(f, x: Tensor) -> Tensor:
    """Gradient of the scalar-valued ``f`` at ``x``, as a differentiable tensor.

    ``x`` must be a tensor participating in the graph (requires_grad set).
    """
    x.requires_grad = True
    y = f(x)
    if y.data.size != 1:
        raise ValueError(f"input_grad needs a scalar-valued function, got shape {y.data.shape}")
    return grad(y, [x], create_graph=True)[0]


# ---------------------------------------------------------------------------
# MLP layers

ACTIVATIONS = {
    "relu": relu,
    "softplus": softplus,
    "tanh": tanh,
    "identity": lambda t: t,
}


@dataclass
class MlpParams:
    """Weights, biases and per-layer activation names of a feed-forward net."""

    weights: list[Tensor]
    biases: list[Tensor]
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("layer lists must align")
        for act in self.activations:
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        for i in range(len(self.weights) - 1):
            if self.weights[i].data.shape[1] != self.weights[i + 1].data.shape[0]:
                raise ValueError("consecutive layer shapes do not compose")

    @property
    def in_dim(self) -> int:
        return self.weights[0].data.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].data.shape[1]

    def parameters(self, prefix: str) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}.w{i}"] = w
            out[f"{prefix}.b{i}"] = b
        return out


def init_mlp(sizes, activations, rng: np.random.Generator, w_scale=1.0) -> MlpParams:
    """Glorot-style normal init; final layer scaled by ``w_scale``."""
    ws, bs = [], []
    n_layers = len(sizes) - 1
    for i in range(n_layers):
        n_in, n_out = sizes[i], sizes[i + 1]
        std = np.sqrt(2.0 / (n_in + n_out))
        if i == n_layers - 1:
            std *= w_scale
        ws.append(variable(rng.normal(0.0, std, size=(n_in, n_out))))
        bs.append(variable(np.zeros(n_out)))
    return MlpParams(ws, bs, list(activations))


def forward_mlp(params: MlpParams, x: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.data.shape[1] != params.in_dim:
        raise ValueError(
            f"input shape {x.data.shape} does not match first layer ({params.in_dim})"
        )
    h = x
    for w, b, act in zip(params.weights, params.biases, params.activations):
        h = ACTIVATIONS[act](add(matmul(h, w), b))
    return h


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Bias-corrected Adam moments, keyed by parameter name."""

    lr: float = 5e-5
    beta1: float = 0.3
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Tensor], grads: dict[str, np.ndarray]):
    """One Adam update, in place on the parameter tensors."""
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"NaN/Inf gradient for parameter {name!r}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data = p.data - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# checkpoint container

CHECKPOINT_FORMAT = "phasegan-checkpoint"
CHECKPOINT_VERSION = 1


def _encode_array(a: np.ndarray) -> dict:
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(np.ascontiguousarray(a, dtype="<f8").tobytes()).decode("ascii"),
    }


def _decode_array(d: dict) -> np.ndarray:
    buf = base64.b64decode(d["data"])
    return np.frombuffer(buf, dtype="<f8").reshape(d["shape"]).astype(np.float64)


def mlp_to_dict(params: MlpParams) -> dict:
    return {
        "kind": "mlp",
        "activations": list(params.activations),
        "weights": [_encode_array(w.data) for w in params.weights],
        "biases": [_encode_array(b.data) for b in params.biases],
    }


def mlp_from_dict(d: dict) -> MlpParams:
    ws = [variable(_decode_array(e)) for e in d["weights"]]
    bs = [variable(_decode_array(e)) for e in d["biases"]]
    return MlpParams(ws, bs, list(d["activations"]))


# other modules may register extra serializable model kinds (recurrent cells)
_CHECKPOINT_ENCODERS: dict[type, callable] = {MlpParams: mlp_to_dict}
_CHECKPOINT_DECODERS: dict[str, callable] = {"mlp": mlp_from_dict}


def register_checkpoint_kind(py_type: type, kind: str, encoder, decoder):
    _CHECKPOINT_ENCODERS[py_type] = encoder
    _CHECKPOINT_DECODERS[kind] = decoder


def save_checkpoint(path, models: dict, extra: dict | None = None):
    """Write a versioned JSON container; arrays round-trip bit-exactly."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "models": {k: _CHECKPOINT_ENCODERS[type(v)](v) for k, v in models.items()},
        "extra": extra or {},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> tuple[dict, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    models = {
        k: _CHECKPOINT_DECODERS[v.get("kind", "mlp")](v) for k, v in doc["models"].items()
    }
    return models, doc.get("extra", {})
