"""Minimal multilayer perceptron, reverse-mode gradients, and Adam.

The network is three ReLU layers of 32 nodes (two hidden plus the stated
output layer) followed by a bias-free linear projection to the requested
output dimension. Forward passes come in two flavours: a plain numpy path
for evaluation, and a taped path over autodiff Tensors for training.
"""

import struct
from dataclasses import dataclass, field as dc_field

import numpy as np

from .autodiff import Tensor, affine_relu
from .errors import NumericError, ShapeError
from .fields import VectorField

HIDDEN = 32
DEPTH = 3


@dataclass
class MlpParams:
    """Affine layers [(W, b), ...] and the final projection matrix."""

    layers: list
    proj: np.ndarray
    seed: int = 0

    @property
    def in_dim(self):
        return self.layers[0][0].shape[0]

    @property
    def out_dim(self):
        return self.proj.shape[1]


def init_mlp(in_dim, out_dim=1, seed=0):
    """He-style uniform fan-in init with a fixed seed.

    The projection starts at zero so a freshly built martingale field is
    identically zero and the first loss evaluation reads the raw payoff.
    """
    rng = np.random.default_rng(seed)
    layers = []
    fan_in = in_dim
    for _ in range(DEPTH):
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, HIDDEN))
        layers.append((w, np.zeros(HIDDEN)))
        fan_in = HIDDEN
    proj = np.zeros((HIDDEN, out_dim))
    return MlpParams(layers=layers, proj=proj, seed=seed)


def mlp_forward(params, x):
    """Plain numpy forward pass; accepts a single row or a batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != params.in_dim:
        raise ShapeError(f"input width {h.shape[1]}, network expects {params.in_dim}")
    for w, b in params.layers:
        h = np.maximum(h @ w + b, 0.0)
    out = h @ params.proj
    return out[0] if single else out


@dataclass
class MlpTensors:
    """Leaf tensors mirroring MlpParams, shared across one tape."""

    layers: list
    proj: Tensor


def params_to_tensors(params):
    layers = [
        (Tensor(w, requires_grad=True), Tensor(b, requires_grad=True))
        for w, b in params.layers
    ]
    return MlpTensors(layers=layers, proj=Tensor(params.proj, requires_grad=True))


def mlp_forward_t(tensors, x, check=False):
    """Taped forward pass. ``x`` may be a Tensor or a constant ndarray."""
    h = x
    for i, (w, b) in enumerate(tensors.layers):
        h = affine_relu(h, w, b)
        if check and not np.all(np.isfinite(h.data)):
            raise NumericError(f"mlp layer {i + 1} produced non-finite values")
    out = h @ tensors.proj
    if check and not np.all(np.isfinite(out.data)):
        raise NumericError("mlp projection produced non-finite values")
    return out


def param_arrays(params):
    """Flat list of the parameter ndarrays in a fixed order."""
    out = []
    for w, b in params.layers:
        out.extend((w, b))
    out.append(params.proj)
    return out


def tensor_arrays(tensors):
    out = []
    for w, b in tensors.layers:
        out.extend((w, b))
    out.append(tensors.proj)
    return out


def rebuild_params(template, arrays):
    """MlpParams with the template's shape and the given arrays."""
    n = len(template.layers)
    layers = [(arrays[2 * i], arrays[2 * i + 1]) for i in range(n)]
    return MlpParams(layers=layers, proj=arrays[2 * n], seed=template.seed)


def grad(loss_fn, params_list):
    """Reverse-mode gradient of a scalar loss over several networks.

    loss_fn receives a list of MlpTensors (one per network, leaves shared
    with the returned gradient order) and must return a scalar Tensor.
    Returns (loss value, list of gradient-array lists congruent to
    param_arrays of each network).
    """
    tensors = [params_to_tensors(p) for p in params_list]
    loss = loss_fn(tensors)
    if not isinstance(loss, Tensor) or loss.data.size != 1:
        raise ShapeError("loss_fn must return a scalar Tensor")
    loss.backward()
    grads = []
    for ts in tensors:
        arrs = tensor_arrays(ts)
        grads.append([a.grad if a.grad is not None else np.zeros_like(a.data) for a in arrs])
    return float(loss.data), grads


# -- Adam ------------------------------------------------------------------


@dataclass
class AdamState:
    """Moment buffers congruent to a flat list of parameter arrays."""

    m: list
    v: list
    t: int = 0
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7


def init_adam(arrays, alpha=0.001, beta1=0.9, beta2=0.999, epsilon=1e-7):
    return AdamState(
        m=[np.zeros_like(a) for a in arrays],
        v=[np.zeros_like(a) for a in arrays],
        t=0,
        alpha=alpha,
        beta1=beta1,
        beta2=beta2,
        epsilon=epsilon,
    )


def adam_update(state, arrays, grads):
    """One optimiser step; returns (new state, new arrays).

    First and second moments follow the usual recursions; both bias
    corrections use their own decay rate (1 - beta^t).
    """
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(arrays, grads, state.m, state.v):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_m.append(m)
        new_v.append(v)
        new_p.append(p - state.alpha * m_hat / (np.sqrt(v_hat) + state.epsilon))
    next_state = AdamState(
        m=new_m, v=new_v, t=t,
        alpha=state.alpha, beta1=state.beta1, beta2=state.beta2, epsilon=state.epsilon,
    )
    return next_state, new_p


# -- checkpoints -----------------------------------------------------------
#
# Layout (little-endian): magic b"MNET", uint32 version, uint32 network
# count; per network: int64 seed, uint32 array count, then per array uint32
# ndim followed by uint64 dims; after all headers, the arrays' float64
# buffers in header order.

_MAGIC = b"MNET"
_VERSION = 1


def save_checkpoint(path, mlps):
    blobs = []
    head = [_MAGIC, struct.pack("<II", _VERSION, len(mlps))]
    for p in mlps:
        arrays = param_arrays(p)
        head.append(struct.pack("<qI", p.seed, len(arrays)))
        for a in arrays:
            head.append(struct.pack("<I", a.ndim))
            head.append(struct.pack(f"<{a.ndim}Q", *a.shape))
            blobs.append(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(head))
        fh.write(b"".join(blobs))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise ShapeError(f"{path} is not a checkpoint file")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != _VERSION:
        raise ShapeError(f"unsupported checkpoint version {version}")
    off = 12
    headers = []
    for _ in range(count):
        seed, n_arrays = struct.unpack_from("<qI", raw, off)
        off += 12
        shapes = []
        for _ in range(n_arrays):
            (ndim,) = struct.unpack_from("<I", raw, off)
            off += 4
            dims = struct.unpack_from(f"<{ndim}Q", raw, off)
            off += 8 * ndim
            shapes.append(tuple(dims))
        headers.append((seed, shapes))
    mlps = []
    for seed, shapes in headers:
        arrays = []
        for shape in shapes:
            size = int(np.prod(shape)) if shape else 1
            a = np.frombuffer(raw, dtype="<f8", count=size, offset=off).reshape(shape).copy()
            off += 8 * size
            arrays.append(a)
        n_layers = (len(arrays) - 1) // 2
        layers = [(arrays[2 * i], arrays[2 * i + 1]) for i in range(n_layers)]
        mlps.append(MlpParams(layers=layers, proj=arrays[-1], seed=seed))
    return mlps


class MlpField(VectorField):
    """A vector field whose value is an MLP forward pass on the state.

    Tensor states run on the tape against this field's leaf tensors, so
    gradients wrt the network's weights flow through any scheme kernel the
    field is used in.
    """

    __slots__ = ("params", "tensors")

    def __init__(self, params):
        self.params = params
        self.tensors = params_to_tensors(params)

        def ev(t, x):
            if isinstance(x, Tensor):
                return mlp_forward_t(self.tensors, x)
            return mlp_forward(self.params, x)

        super().__init__(ev, kind="mlp-backed")

    def _autodiff_jacobian(self, t, x):
        # fresh leaves per call: jacobian passes must not disturb training tapes
        xd = np.atleast_2d(np.asarray(x, dtype=np.float64))
        batch, n = xd.shape
        jac = np.empty((batch, n, n))
        for k in range(n):
            leaf = Tensor(xd, requires_grad=True)
            out = mlp_forward_t(params_to_tensors(self.params), leaf)
            seed = np.zeros((batch, n))
            seed[:, k] = 1.0
            out.backward(seed=seed)
            jac[:, k, :] = leaf.grad
        if np.asarray(x).ndim == 1:
            return jac[0]
        return jac
