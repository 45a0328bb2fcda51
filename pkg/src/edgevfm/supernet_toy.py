"""Desk-scale weight-sharing supernet.

A stack of four (linear, ReLU) layers plus a shared linear projector stands
in for the convolutional backbone. Hidden widths follow a subnet's stage
widths divided by ``width_divisor``; a subnet addresses the leading rows and
columns of each shared tensor, so every subnet's weights are views into one
flat buffer.

Distillation uses mean squared error against a fixed teacher as a stand-in
for the full self-supervised composite; alignment uses a symmetric InfoNCE
loss on cosine similarities with only the alignment head trainable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .embedding_engine import EmbeddingBank, load_bank, save_bank
from .exceptions import ValidationError
from .search_space import SearchSpace, SubnetConfig, check_valid, default_space, enumerate_space

DEFAULT_TEMPERATURE = 0.07
# hidden biases start slightly positive: with zero biases a fully inactive
# layer hands exact zeros to the next ReLU, which sits on its kink
HIDDEN_BIAS_INIT = 0.01


class SharedParameterStore:
    """Named tensors at maximal width, all backed by one flat float64 buffer."""

    def __init__(self, shapes: dict[str, tuple[int, ...]], flat: np.ndarray | None = None):
        self.shapes = {k: tuple(v) for k, v in shapes.items()}
        size = sum(math.prod(s) for s in self.shapes.values())
        if flat is None:
            flat = np.zeros(size)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (size,):
            raise ValidationError(f"flat buffer has shape {flat.shape}, expected ({size},)")
        self.flat = flat
        self.tensors = self._views(self.flat)

    def _views(self, buf: np.ndarray) -> dict[str, np.ndarray]:
        out, offset = {}, 0
        for name, shape in self.shapes.items():
            n = math.prod(shape)
            out[name] = buf[offset : offset + n].reshape(shape)
            offset += n
        return out

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def zeros_like(self) -> SharedParameterStore:
        return SharedParameterStore(self.shapes)

    def copy(self) -> SharedParameterStore:
        return SharedParameterStore(self.shapes, self.flat.copy())

    def to_bank(self) -> EmbeddingBank:
        """Pack into the embedding-bank container: one zero-padded row per tensor.

        Labels carry ``name:AxB`` so the shapes survive the round trip.
        """
        width = max(math.prod(s) for s in self.shapes.values())
        rows = np.zeros((len(self.shapes), width), dtype=np.float32)
        labels = []
        for i, (name, shape) in enumerate(self.shapes.items()):
            rows[i, : math.prod(shape)] = self.tensors[name].ravel()
            labels.append(f"{name}:{'x'.join(map(str, shape))}")
        return EmbeddingBank(tuple(labels), rows)

    @classmethod
    def from_bank(cls, bank: EmbeddingBank) -> SharedParameterStore:
        shapes, chunks = {}, []
        for label, row in zip(bank.labels, bank.vectors):
            name, _, dims = label.rpartition(":")
            if not name:
                raise ValidationError(f"checkpoint record {label!r} lacks a shape")
            shape = tuple(int(d) for d in dims.split("x"))
            shapes[name] = shape
            chunks.append(row[: math.prod(shape)].astype(np.float64))
        return cls(shapes, np.concatenate(chunks))


N_HIDDEN = 4


class ToySupernet:
    """Shape bookkeeping for the toy network over one search space."""

    def __init__(
        self,
        space: SearchSpace | None = None,
        in_dim: int = 2,
        out_dim: int = 2,
        width_divisor: int = 24,
    ):
        self.space = space or default_space()
        self.in_dim = int(in_dim)
        self.out_dim = int(out_dim)
        self.width_divisor = int(width_divisor)
        self.max_widths = self.widths(self.space.max_config())
        if min(self.widths(self.space.min_config())) < 1:
            raise ValidationError("width divisor leaves a zero-width layer")

    def widths(self, config: SubnetConfig) -> tuple[int, ...]:
        return tuple(d // self.width_divisor for d in config.dims)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        fan_in = self.in_dim
        for i, w in enumerate(self.max_widths):
            shapes[f"layer{i}.weight"] = (w, fan_in)
            shapes[f"layer{i}.bias"] = (w,)
            fan_in = w
        shapes["projector.weight"] = (self.out_dim, fan_in)
        shapes["projector.bias"] = (self.out_dim,)
        return shapes

    def init_store(self, seed: int = 0) -> SharedParameterStore:
        rng = np.random.default_rng(seed)
        store = SharedParameterStore(self.shapes())
        for name, shape in store.shapes.items():
            if name.endswith(".weight"):
                store[name][...] = rng.normal(0.0, math.sqrt(2.0 / shape[1]), size=shape)
            elif name.startswith("layer"):
                store[name][...] = HIDDEN_BIAS_INIT
        return store

    def view(self, store: SharedParameterStore, config: SubnetConfig) -> list[tuple[np.ndarray, np.ndarray]]:
        """(weight, bias) slices for ``config``; numpy views that alias the store."""
        check_valid(self.space, config)
        widths = self.widths(config)
        out, fan_in = [], self.in_dim
        for i, w in enumerate(widths):
            out.append((store[f"layer{i}.weight"][:w, :fan_in], store[f"layer{i}.bias"][:w]))
            fan_in = w
        out.append((store["projector.weight"][:, :fan_in], store["projector.bias"]))
        return out


def _as_batch(x, in_dim: int) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.ndim != 2 or arr.shape[1] != in_dim:
        raise ValidationError(f"input must have trailing dimension {in_dim}, got {arr.shape}")
    return arr, single


def _forward_cache(net: ToySupernet, store, config, x):
    layers = net.view(store, config)
    acts = [x]
    pre = []
    h = x
    for w, b in layers[:-1]:
        z = h @ w.T + b
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    w, b = layers[-1]
    return layers, acts, pre, h @ w.T + b


def forward(net: ToySupernet, store: SharedParameterStore, config: SubnetConfig, x) -> np.ndarray:
    batch, single = _as_batch(x, net.in_dim)
    out = _forward_cache(net, store, config, batch)[-1]
    return out[0] if single else out


def _backward(net, store, config, cache, d_out, grad: SharedParameterStore) -> None:
    """Accumulate d(loss)/d(params) into the matching slices of ``grad``."""
    layers, acts, pre, _ = cache
    widths = net.widths(config)
    fan_ins = (net.in_dim, *widths)
    g_w = grad["projector.weight"][:, : fan_ins[-1]]
    g_w += d_out.T @ acts[-1]
    grad["projector.bias"][...] += d_out.sum(axis=0)
    delta = d_out @ layers[-1][0]
    for i in reversed(range(N_HIDDEN)):
        delta = delta * (pre[i] > 0.0)
        w_out, w_in = widths[i], fan_ins[i]
        grad[f"layer{i}.weight"][:w_out, :w_in] += delta.T @ acts[i]
        grad[f"layer{i}.bias"][:w_out] += delta.sum(axis=0)
        if i:
            delta = delta @ layers[i][0]


def distill_loss_and_grad(net, store, config, x, target) -> tuple[float, SharedParameterStore]:
    """Mean squared error of the subnet's projected output against ``target``."""
    cache = _forward_cache(net, store, config, x)
    diff = cache[-1] - target
    loss = float(np.mean(diff**2))
    grad = store.zeros_like()
    _backward(net, store, config, cache, 2.0 * diff / diff.size, grad)
    return loss, grad


@dataclass(frozen=True)
class SampleBatchPlan:
    configs: tuple[SubnetConfig, ...]


def sandwich_sample(
    space: SearchSpace,
    rng_seed: int | np.random.Generator,
    n_random: int = 2,
    population: Sequence[SubnetConfig] | None = None,
) -> SampleBatchPlan:
    """Smallest and largest subnet plus ``n_random`` uniform draws from the rest.

    Random draws come from the enumerated space with both extremes removed
    and are taken with replacement.
    """
    if n_random < 0:
        raise ValidationError("n_random must be nonnegative")
    lo, hi = space.min_config(), space.max_config()
    plan = [lo, hi]
    if n_random:
        pool = population if population is not None else enumerate_space(space)
        middle = [c for c in pool if c != lo and c != hi]
        if not middle:
            raise ValidationError("space has no intermediate subnets to sample")
        rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
        plan.extend(middle[i] for i in rng.integers(0, len(middle), size=n_random))
    return SampleBatchPlan(tuple(plan))


def step_distill(
    net: ToySupernet,
    store: SharedParameterStore,
    teacher: Callable[[np.ndarray], np.ndarray],
    batch,
    plan: SampleBatchPlan,
    lr: float = 0.05,
) -> list[float]:
    """One sandwich step: average the per-subnet gradients, apply them once.

    Returns each subnet's loss before the update.
    """
    x, _ = _as_batch(batch, net.in_dim)
    target = np.asarray(teacher(x), dtype=np.float64)
    if target.shape != (x.shape[0], net.out_dim):
        raise ValidationError(f"teacher output shape {target.shape} != {(x.shape[0], net.out_dim)}")
    total = np.zeros_like(store.flat)
    losses = []
    for config in plan.configs:
        loss, grad = distill_loss_and_grad(net, store, config, x, target)
        losses.append(loss)
        total += grad.flat
    store.flat -= lr * total / len(plan.configs)
    return losses


def info_nce(vision, text, temperature: float = DEFAULT_TEMPERATURE) -> tuple[float, np.ndarray]:
    """Symmetric InfoNCE over cosine similarities; returns (loss, d loss / d vision).

    Row i of ``vision`` pairs with row i of ``text``. Text embeddings are
    treated as constants.
    """
    if not temperature > 0:
        raise ValidationError("temperature must be positive")
    v = np.atleast_2d(np.asarray(vision, dtype=np.float64))
    t = np.atleast_2d(np.asarray(text, dtype=np.float64))
    if v.shape != t.shape:
        raise ValidationError(f"vision {v.shape} and text {t.shape} batches differ")
    n = v.shape[0]
    v_norm = np.linalg.norm(v, axis=1, keepdims=True)
    t_norm = np.linalg.norm(t, axis=1, keepdims=True)
    if np.any(v_norm == 0) or np.any(t_norm == 0):
        raise ValidationError("zero embedding in contrastive batch")
    vu, tu = v / v_norm, t / t_norm
    logits = vu @ tu.T / temperature

    def _log_softmax(z, axis):
        z = z - z.max(axis=axis, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    ls_rows = _log_softmax(logits, 1)
    ls_cols = _log_softmax(logits, 0)
    idx = np.arange(n)
    loss = -0.5 * (ls_rows[idx, idx].mean() + ls_cols[idx, idx].mean())
    eye = np.eye(n)
    d_logits = 0.5 * ((np.exp(ls_rows) - eye) + (np.exp(ls_cols) - eye)) / n
    d_vu = d_logits @ tu / temperature
    # project out the radial component of the normalization
    d_v = (d_vu - vu * np.sum(d_vu * vu, axis=1, keepdims=True)) / v_norm
    return float(loss), d_v


def align_loss_and_grad(net, store, config, head, x, text, temperature):
    features = forward(net, store, config, x)
    features = np.atleast_2d(features)
    vision = features @ np.asarray(head).T
    loss, d_vision = info_nce(vision, text, temperature)
    return loss, d_vision.T @ features


def step_align(
    net: ToySupernet,
    store_frozen: SharedParameterStore,
    align_head: np.ndarray,
    batch_pairs: tuple,
    temperature: float = DEFAULT_TEMPERATURE,
    lr: float = 0.1,
    plan: SampleBatchPlan | None = None,
) -> list[float]:
    """One alignment step updating ``align_head`` in place; the backbone is read-only.

    ``batch_pairs`` is ``(inputs, text_embeddings)``. With a plan, the head
    gradient is averaged over the plan's subnets.
    """
    if not temperature > 0:
        raise ValidationError("temperature must be positive")
    x, text = batch_pairs
    x, _ = _as_batch(x, net.in_dim)
    configs = plan.configs if plan is not None else (net.space.max_config(),)
    total = np.zeros_like(align_head, dtype=np.float64)
    losses = []
    flags = store_frozen.flat.flags.writeable
    store_frozen.flat.flags.writeable = False
    try:
        for config in configs:
            loss, grad = align_loss_and_grad(net, store_frozen, config, align_head, x, text, temperature)
            losses.append(loss)
            total += grad
    finally:
        store_frozen.flat.flags.writeable = flags
    align_head -= lr * total / len(configs)
    return losses


class DistillObjective:
    """Sandwich-averaged distillation loss as a function of the flat store."""

    def __init__(self, net, store, teacher, x, plan: SampleBatchPlan):
        self.net, self.store, self.plan = net, store, plan
        self.x, _ = _as_batch(x, net.in_dim)
        self.target = np.asarray(teacher(self.x), dtype=np.float64)

    @property
    def params(self) -> np.ndarray:
        return self.store.flat

    def loss_and_grad(self) -> tuple[float, np.ndarray]:
        total_loss, total_grad = 0.0, np.zeros_like(self.store.flat)
        for config in self.plan.configs:
            loss, grad = distill_loss_and_grad(self.net, self.store, config, self.x, self.target)
            total_loss += loss
            total_grad += grad.flat
        k = len(self.plan.configs)
        return total_loss / k, total_grad / k


class AlignObjective:
    """Contrastive loss as a function of the alignment head."""

    def __init__(self, net, store, head, x, text, temperature=DEFAULT_TEMPERATURE, config=None):
        self.net, self.store, self.head = net, store, head
        self.x, _ = _as_batch(x, net.in_dim)
        self.text = np.asarray(text, dtype=np.float64)
        self.temperature = temperature
        self.config = config or net.space.max_config()

    @property
    def params(self) -> np.ndarray:
        return self.head.reshape(-1)

    def loss_and_grad(self) -> tuple[float, np.ndarray]:
        loss, grad = align_loss_and_grad(
            self.net, self.store, self.config, self.head, self.x, self.text, self.temperature
        )
        return loss, grad.reshape(-1)


def grad_check(objective, epsilon: float = 1e-5, floor: float = 1e-6) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``objective.params`` must be a writable view of the parameters the loss
    reads. Relative errors use ``max(|analytic|, |numeric|, floor)`` as the
    denominator so exactly-zero coordinates do not divide by zero.
    """
    params = objective.params
    if params.dtype != np.float64:
        raise ValidationError("gradient checks need double precision")
    _, analytic = objective.loss_and_grad()
    analytic = analytic.copy()
    numeric = np.empty_like(analytic)
    for i in range(params.size):
        orig = params[i]
        params[i] = orig + epsilon
        up, _ = objective.loss_and_grad()
        params[i] = orig - epsilon
        down, _ = objective.loss_and_grad()
        params[i] = orig
        numeric[i] = (up - down) / (2 * epsilon)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def linear_teacher(in_dim: int, out_dim: int, seed: int) -> Callable[[np.ndarray], np.ndarray]:
    a = np.random.default_rng(seed).normal(0.0, 1.0 / math.sqrt(in_dim), size=(out_dim, in_dim))
    return lambda x: np.asarray(x, dtype=np.float64) @ a.T


@dataclass(frozen=True)
class TrainTrace:
    steps: tuple[int, ...]
    min_loss: tuple[float, ...]
    max_loss: tuple[float, ...]
    mean_loss: tuple[float, ...]

    def to_csv(self) -> str:
        lines = ["step,min_loss,max_loss,mean_loss"]
        for row in zip(self.steps, self.min_loss, self.max_loss, self.mean_loss):
            lines.append(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]!r}")
        return "\n".join(lines) + "\n"


def train_toy(
    steps: int = 500,
    seed: int = 0,
    plan_size: int = 4,
    n_samples: int = 64,
    lr: float = 0.05,
    net: ToySupernet | None = None,
) -> tuple[SharedParameterStore, TrainTrace]:
    """Seeded sandwich distillation of a fixed linear teacher.

    The trace records the pre-update loss of each step plus one final
    evaluation after the last update.
    """
    if plan_size < 2:
        raise ValidationError("plan size must be at least 2 (smallest and largest subnet)")
    net = net or ToySupernet()
    rng = np.random.default_rng(seed)
    store = net.init_store(seed)
    teacher = linear_teacher(net.in_dim, net.out_dim, seed + 1)
    x = rng.normal(size=(n_samples, net.in_dim))
    population = enumerate_space(net.space)
    sampler = np.random.default_rng(seed + 2)
    trace_steps, mins, maxs, means = [], [], [], []
    for step in range(steps):
        plan = sandwich_sample(net.space, sampler, plan_size - 2, population)
        losses = step_distill(net, store, teacher, x, plan, lr)
        trace_steps.append(step)
        mins.append(losses[0])
        maxs.append(losses[1])
        means.append(float(np.mean(losses)))
    target = teacher(x)
    lo = distill_loss_and_grad(net, store, net.space.min_config(), x, target)[0]
    hi = distill_loss_and_grad(net, store, net.space.max_config(), x, target)[0]
    trace_steps.append(steps)
    mins.append(lo)
    maxs.append(hi)
    means.append((lo + hi) / 2)
    return store, TrainTrace(tuple(trace_steps), tuple(mins), tuple(maxs), tuple(means))


def save_checkpoint(store: SharedParameterStore, path: str | Path) -> None:
    save_bank(store.to_bank(), path)


def load_checkpoint(path: str | Path) -> SharedParameterStore:
    return SharedParameterStore.from_bank(load_bank(path))
