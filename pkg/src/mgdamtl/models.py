"""Shared-encoder / task-head models with hand-written gradients.

Encoders are either linear (``Z = X W^T + b``) or a one-hidden-layer MLP
(``Z = act(act(X W1^T + b1) W2^T + b2)``). Every head is linear on ``Z`` and
carries its own loss: softmax cross-entropy over integer labels, or squared
error ``mean_n |f(z_n) - y_n|^2`` (summed over output dimensions).

Shared parameters are stored flat in the order W, b (linear) or
W1, b1, W2, b2 (MLP), matrices row-major. Head parameters are W, b.
"""

from __future__ import annotations

import enum
import json
import os
from dataclasses import asdict, dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .core_types import STREAM_INIT, LossVector, ParameterStore, rng_stream

CHECKPOINT_VERSION = 1


class LossKind(enum.Enum):
    SOFTMAX_CE = "softmax_ce"
    MSE = "mse"


@dataclass(frozen=True)
class EncoderSpec:
    kind: str  # "linear" or "mlp"
    d_in: int
    d_repr: int
    hidden: int = 0
    activation: str = "tanh"

    def __post_init__(self):
        if self.kind not in ("linear", "mlp"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.kind == "mlp" and self.hidden < 1:
            raise ValueError("mlp encoder needs hidden >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.d_in < 1 or self.d_repr < 1:
            raise ValueError("encoder dimensions must be >= 1")

    def shapes(self) -> list[tuple[int, ...]]:
        if self.kind == "linear":
            return [(self.d_repr, self.d_in), (self.d_repr,)]
        return [(self.hidden, self.d_in), (self.hidden,), (self.d_repr, self.hidden), (self.d_repr,)]

    @property
    def n_params(self) -> int:
        return sum(int(np.prod(s)) for s in self.shapes())


@dataclass(frozen=True)
class HeadSpec:
    d_out: int
    loss: LossKind

    def __post_init__(self):
        if isinstance(self.loss, str):
            object.__setattr__(self, "loss", LossKind(self.loss))
        if self.d_out < 1:
            raise ValueError("head output dimension must be >= 1")
        if self.loss is LossKind.SOFTMAX_CE and self.d_out < 2:
            raise ValueError("softmax cross-entropy head needs d_out >= 2")

    def shapes(self, d_repr: int) -> list[tuple[int, ...]]:
        return [(self.d_out, d_repr), (self.d_out,)]


def _tanh(x):
    return np.tanh(x)


def _dtanh(pre, post):
    return 1.0 - post * post


def _relu(x):
    return np.maximum(x, 0.0)


def _drelu(pre, post):
    return (pre > 0).astype(np.float64)


_ACTIVATIONS = {"tanh": (_tanh, _dtanh), "relu": (_relu, _drelu)}


def _unflatten(flat: np.ndarray, shapes) -> list[np.ndarray]:
    out, pos = [], 0
    for s in shapes:
        n = int(np.prod(s))
        out.append(flat[pos: pos + n].reshape(s))
        pos += n
    return out


@dataclass
class Batch:
    inputs: np.ndarray
    labels: list[np.ndarray]

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError(f"inputs must be N x d_in with N >= 1, got shape {self.inputs.shape}")
        self.labels = [np.asarray(y) for y in self.labels]
        for t, y in enumerate(self.labels):
            if y.shape[0] != self.inputs.shape[0]:
                raise ValueError(f"task {t} has {y.shape[0]} labels for {self.inputs.shape[0]} inputs")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    def select_tasks(self, tasks: Sequence[int]) -> "Batch":
        return Batch(self.inputs, [self.labels[t] for t in tasks])


class MtlModel:
    """Hard parameter sharing: ``f_t(x) = head_t(encoder(x))``.

    Head ``t`` only reads its own block of ``params.task_blocks``; the encoder
    only reads ``params.shared``.
    """

    def __init__(self, encoder: EncoderSpec, heads: Sequence[HeadSpec], params: ParameterStore):
        self.encoder = encoder
        self.heads = tuple(heads)
        if params.n_tasks != len(self.heads):
            raise ValueError(f"{len(self.heads)} heads but {params.n_tasks} task parameter blocks")
        if params.shared.size != encoder.n_params:
            raise ValueError(f"shared block has {params.shared.size} entries, encoder needs {encoder.n_params}")
        for t, h in enumerate(self.heads):
            need = sum(int(np.prod(s)) for s in h.shapes(encoder.d_repr))
            if params.task_blocks[t].size != need:
                raise ValueError(f"task block {t} has {params.task_blocks[t].size} entries, head needs {need}")
        self.params = params

    @classmethod
    def init(cls, encoder: EncoderSpec, heads: Sequence[HeadSpec], seed: int,
             head_keys: Sequence[int] | None = None) -> "MtlModel":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.

        The encoder draws from stream ``(seed, INIT, 0)`` and head ``t`` from
        ``(seed, INIT, 1, head_keys[t])`` so a model restricted to a subset of tasks
        gets the same encoder and head weights as the full model.
        """
        head_keys = list(range(len(heads))) if head_keys is None else list(head_keys)
        rng = rng_stream(seed, STREAM_INIT, 0)
        if encoder.kind == "linear":
            fan_ins = [encoder.d_in] * 2
        else:
            fan_ins = [encoder.d_in] * 2 + [encoder.hidden] * 2
        shared = []
        for s, fan_in in zip(encoder.shapes(), fan_ins):
            bound = 1.0 / np.sqrt(fan_in)
            shared.append(rng.uniform(-bound, bound, size=s).ravel())
        blocks = []
        for h, key in zip(heads, head_keys):
            hr = rng_stream(seed, STREAM_INIT, 1, key)
            bound = 1.0 / np.sqrt(encoder.d_repr)
            blocks.append(np.concatenate([hr.uniform(-bound, bound, size=s).ravel()
                                          for s in h.shapes(encoder.d_repr)]))
        return cls(encoder, heads, ParameterStore(np.concatenate(shared), blocks))

    @property
    def n_tasks(self) -> int:
        return len(self.heads)

    def shared_views(self, flat: np.ndarray | None = None) -> list[np.ndarray]:
        return _unflatten(self.params.shared if flat is None else flat, self.encoder.shapes())

    def head_views(self, t: int, flat: np.ndarray | None = None) -> list[np.ndarray]:
        block = self.params.task_blocks[t] if flat is None else flat
        return _unflatten(block, self.heads[t].shapes(self.encoder.d_repr))

    def copy(self) -> "MtlModel":
        return MtlModel(self.encoder, self.heads, self.params.copy())

    def subset(self, tasks: Sequence[int]) -> "MtlModel":
        """A copy keeping only the listed heads."""
        p = ParameterStore(self.params.shared.copy(), [self.params.task_blocks[t].copy() for t in tasks])
        return MtlModel(self.encoder, [self.heads[t] for t in tasks], p)


class ForwardResult(NamedTuple):
    z: np.ndarray
    losses: LossVector
    outputs: list[np.ndarray]
    # encoder intermediates: (pre1, h, pre2) for mlp, () for linear
    cache: tuple


def encode(model: MtlModel, x: np.ndarray, shared: np.ndarray | None = None):
    enc = model.encoder
    views = model.shared_views(shared)
    if enc.kind == "linear":
        w, b = views
        return x @ w.T + b, ()
    act, _ = _ACTIVATIONS[enc.activation]
    w1, b1, w2, b2 = views
    pre1 = x @ w1.T + b1
    h = act(pre1)
    pre2 = h @ w2.T + b2
    return act(pre2), (pre1, h, pre2)


def _head_loss(spec: HeadSpec, out: np.ndarray, y: np.ndarray) -> float:
    n = out.shape[0]
    if spec.loss is LossKind.SOFTMAX_CE:
        shifted = out - out.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1))
        return float(np.mean(logz - shifted[np.arange(n), y.astype(np.int64)]))
    diff = out - y.reshape(n, spec.d_out)
    return float(np.sum(diff * diff) / n)


def _head_output_grad(spec: HeadSpec, out: np.ndarray, y: np.ndarray) -> np.ndarray:
    n = out.shape[0]
    if spec.loss is LossKind.SOFTMAX_CE:
        p = np.exp(out - out.max(axis=1, keepdims=True))
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), y.astype(np.int64)] -= 1.0
        return p / n
    return 2.0 * (out - y.reshape(n, spec.d_out)) / n


def head_forward(model: MtlModel, t: int, z: np.ndarray, block: np.ndarray | None = None) -> np.ndarray:
    w, b = model.head_views(t, block)
    return z @ w.T + b


def forward(model: MtlModel, batch: Batch) -> ForwardResult:
    if batch.inputs.shape[1] != model.encoder.d_in:
        raise ValueError(f"batch has {batch.inputs.shape[1]} features, encoder expects {model.encoder.d_in}")
    if len(batch.labels) != model.n_tasks:
        raise ValueError(f"batch has labels for {len(batch.labels)} tasks, model has {model.n_tasks}")
    z, cache = encode(model, batch.inputs)
    if not np.all(np.isfinite(z)):
        raise FloatingPointError("non-finite activations in encoder output")
    outputs, losses = [], []
    for t, spec in enumerate(model.heads):
        out = head_forward(model, t, z)
        outputs.append(out)
        losses.append(_head_loss(spec, out, batch.labels[t]))
    return ForwardResult(z, LossVector(np.array(losses)), outputs, cache)


def task_losses(model: MtlModel, batch: Batch) -> np.ndarray:
    return forward(model, batch).losses.values


class HeadGradients(NamedTuple):
    z_grads: list[np.ndarray]      # dL_t/dZ, each N x d_repr
    param_grads: list[np.ndarray]  # dL_t/dtheta_t, flat


def backward_task_heads(model: MtlModel, batch: Batch, fwd: ForwardResult,
                        tasks: Sequence[int] | None = None) -> HeadGradients:
    """Gradients of each task loss w.r.t. ``Z`` and w.r.t. its own head.

    Uses the current head parameters and ``fwd.z``; the encoder is not
    touched. Head outputs are recomputed so a forward result taken before a
    head update remains valid.
    """
    tasks = range(model.n_tasks) if tasks is None else tasks
    z = fwd.z
    z_grads, param_grads = [], []
    for t in tasks:
        spec = model.heads[t]
        w, _ = model.head_views(t)
        out = head_forward(model, t, z)
        g_out = _head_output_grad(spec, out, batch.labels[t])
        z_grads.append(g_out @ w)
        param_grads.append(np.concatenate([(g_out.T @ z).ravel(), g_out.sum(axis=0)]))
    return HeadGradients(z_grads, param_grads)


def backward_encoder(model: MtlModel, batch: Batch, upstream: np.ndarray, fwd: ForwardResult) -> np.ndarray:
    """Gradient over the shared block of the scalar ``sum(upstream * Z)``.

    ``upstream`` is ``dL/dZ`` and already carries any ``1/N`` factor.
    """
    u = np.asarray(upstream, dtype=np.float64)
    if u.shape != fwd.z.shape:
        raise ValueError(f"upstream has shape {u.shape}, representation is {fwd.z.shape}")
    if not np.all(np.isfinite(u)):
        raise FloatingPointError("non-finite upstream gradient")
    x = batch.inputs
    enc = model.encoder
    if enc.kind == "linear":
        return np.concatenate([(u.T @ x).ravel(), u.sum(axis=0)])
    _, dact = _ACTIVATIONS[enc.activation]
    _, _, w2, _ = model.shared_views()
    pre1, h, pre2 = fwd.cache
    d_pre2 = u * dact(pre2, fwd.z)
    d_h = d_pre2 @ w2
    d_pre1 = d_h * dact(pre1, h)
    return np.concatenate([(d_pre1.T @ x).ravel(), d_pre1.sum(axis=0),
                           (d_pre2.T @ h).ravel(), d_pre2.sum(axis=0)])


class Jacobian(NamedTuple):
    matrix: np.ndarray  # (N * d_repr) x d_sh, rows example-major
    sigma_min: float
    sigma_max: float

    @property
    def full_rank(self) -> bool:
        return self.sigma_min > 1e-6 * self.sigma_max

    @property
    def full_row_rank(self) -> bool:
        """Rank equals the number of representation coordinates."""
        return self.full_rank and self.matrix.shape[0] <= self.matrix.shape[1]

    @property
    def spectral_norm(self) -> float:
        return self.sigma_max


JACOBIAN_BUDGET = 10**6


def materialize_jacobian(model: MtlModel, batch: Batch, method: str = "analytic", h: float = 1e-5) -> Jacobian:
    """``dZ/dtheta_sh`` as a dense matrix; test-scale models only.

    ``method="analytic"`` uses forward-mode formulas written out per
    parameter group (independent of :func:`backward_encoder`);
    ``method="fd"`` uses central differences with step ``h``.
    """
    n, d_repr, d_sh = batch.size, model.encoder.d_repr, model.encoder.n_params
    if n * d_repr * d_sh > JACOBIAN_BUDGET:
        raise ValueError(f"Jacobian of size {n * d_repr} x {d_sh} exceeds budget {JACOBIAN_BUDGET}")
    if method == "analytic":
        jac = _forward_mode_jacobian(model, batch)
    elif method == "fd":
        from .oracles import central_difference_jacobian
        jac = central_difference_jacobian(lambda th: encode(model, batch.inputs, th)[0], model.params.shared, h)
    else:
        raise ValueError(f"unknown Jacobian method {method!r}")
    s = np.linalg.svd(jac, compute_uv=False)
    return Jacobian(jac, float(s.min()), float(s.max()))


def _forward_mode_jacobian(model: MtlModel, batch: Batch) -> np.ndarray:
    x = batch.inputs
    n, d_in = x.shape
    enc = model.encoder
    r = enc.d_repr
    eye_r = np.eye(r)
    if enc.kind == "linear":
        # dZ[n, a] / dW[b, i] = delta_ab x[n, i];  dZ[n, a] / db[b] = delta_ab
        jw = np.einsum("ab,ni->nabi", eye_r, x).reshape(n * r, r * d_in)
        jb = np.tile(eye_r, (n, 1))
        return np.hstack([jw, jb])
    _, dact = _ACTIVATIONS[enc.activation]
    _, _, w2, _ = model.shared_views()
    z, (pre1, hid, pre2) = encode(model, x)
    s2 = dact(pre2, z)          # n x r
    s1 = dact(pre1, hid)        # n x k
    k = enc.hidden
    # dZ[n,a]/dW2[b,j] = delta_ab s2[n,a] hid[n,j]
    jw2 = np.einsum("ab,na,nj->nabj", eye_r, s2, hid).reshape(n * r, r * k)
    jb2 = np.einsum("ab,na->nab", eye_r, s2).reshape(n * r, r)
    # dZ[n,a]/dW1[j,i] = s2[n,a] W2[a,j] s1[n,j] x[n,i]
    jw1 = np.einsum("na,aj,nj,ni->naji", s2, w2, s1, x).reshape(n * r, k * d_in)
    jb1 = np.einsum("na,aj,nj->naj", s2, w2, s1).reshape(n * r, k)
    return np.hstack([jw1, jb1, jw2, jb2])


def save_checkpoint(model: MtlModel, path: str | os.PathLike) -> None:
    meta = {
        "format": "mgdamtl-checkpoint",
        "version": CHECKPOINT_VERSION,
        "encoder": asdict(model.encoder),
        "heads": [{"d_out": h.d_out, "loss": h.loss.value} for h in model.heads],
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True)), "shared": model.params.shared}
    for t, b in enumerate(model.params.task_blocks):
        arrays[f"task_{t}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | os.PathLike) -> MtlModel:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != "mgdamtl-checkpoint":
            raise ValueError(f"{path} is not a model checkpoint")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        heads = [HeadSpec(h["d_out"], LossKind(h["loss"])) for h in meta["heads"]]
        params = ParameterStore(data["shared"].copy(), [data[f"task_{t}"].copy() for t in range(len(heads))])
    return MtlModel(EncoderSpec(**meta["encoder"]), heads, params)
