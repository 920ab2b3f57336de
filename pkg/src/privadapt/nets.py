"""A small frozen-encoder classifier with insertable residual adapters.

The encoder is a linear input projection followed by ``num_layers`` blocks
(dense + ReLU by default; a degenerate single-token self-attention block is
available for shape parity with transformer checkpoints). Each adapter is a
down-projection, ReLU, and zero-initialized up-projection whose output is
added to the frozen block output, so a freshly inserted stack is an exact
identity. Adapters can additionally feed each other through one of four
connection patterns: ``none``, ``neighboring`` (each adapter also sees its
predecessor's output), ``unet`` (second-half adapters see the mirrored
first-half output), and ``densenet`` (each adapter sees the sum of all
previous outputs).

All gradients are computed analytically; training never mutates arrays in
place, so parameters shared between models stay bit-identical.

Checkpoint format (little-endian): magic ``b"RAC1"``, then uint32 fields
(version, block kind, input_dim, hidden_dim, num_layers, num_classes,
has_adapters, connection tag), then per-layer adapter down dims (uint32,
only when adapters are present), then every parameter tensor in declaration
order as raw float32.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "CONNECTIONS",
    "TRAIN_MODES",
    "EncoderConfig",
    "AdapterConfig",
    "TrainConfig",
    "FrozenEncoder",
    "AdapterStack",
    "Head",
    "Classifier",
    "init_classifier",
    "attach_adapters",
    "clone",
    "adapter_input",
    "forward",
    "backward",
    "loss_and_grads",
    "cross_entropy",
    "softmax",
    "trainable_names",
    "count_trainable",
    "parameter_counts",
    "params_digest",
    "train",
    "evaluate",
    "pack_params",
    "unpack_params",
    "save_checkpoint",
    "load_checkpoint",
]

CONNECTIONS = ("none", "neighboring", "unet", "densenet")
TRAIN_MODES = ("full_finetune", "linear_probe", "adapters")

_BLOCK_KINDS = ("dense", "attention")
_MAGIC = b"RAC1"
_VERSION = 1


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int
    hidden_dim: int
    num_layers: int
    block: str = "dense"

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.hidden_dim < 1:
            raise ValueError("dimensions must be positive")
        if self.num_layers < 1:
            raise ValueError("need at least one encoder layer")
        if self.block not in _BLOCK_KINDS:
            raise ValueError(f"block must be one of {_BLOCK_KINDS}, got {self.block!r}")


@dataclass(frozen=True)
class AdapterConfig:
    down_dim: int
    connection: str = "none"
    per_layer_dims: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.down_dim < 1:
            raise ValueError("down_dim must be >= 1")
        if self.connection not in CONNECTIONS:
            raise ValueError(f"connection must be one of {CONNECTIONS}, got {self.connection!r}")
        if self.per_layer_dims is not None and any(d < 1 for d in self.per_layer_dims):
            raise ValueError("per-layer dims must be >= 1")

    def layer_dims(self, num_layers: int) -> tuple[int, ...]:
        """Down-projection width for each layer; the override wins when set."""
        if self.per_layer_dims is not None:
            if len(self.per_layer_dims) != num_layers:
                raise ValueError(
                    f"per_layer_dims has {len(self.per_layer_dims)} entries for {num_layers} layers"
                )
            return tuple(self.per_layer_dims)
        return (self.down_dim,) * num_layers


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    optimizer: str = "adamw"
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError(f"optimizer must be 'adamw' or 'sgd', got {self.optimizer!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


def _freeze(params: dict[str, np.ndarray]) -> None:
    for arr in params.values():
        arr.flags.writeable = False


@dataclass
class FrozenEncoder:
    """Encoder parameters; arrays are read-only once constructed."""

    cfg: EncoderConfig
    params: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        _freeze(self.params)


@dataclass
class AdapterStack:
    cfg: AdapterConfig
    num_layers: int
    params: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        _freeze(self.params)

    @property
    def connection(self) -> str:
        return self.cfg.connection


@dataclass
class Head:
    num_classes: int
    params: dict[str, np.ndarray]

    def __post_init__(self) -> None:
        _freeze(self.params)


@dataclass
class Classifier:
    encoder: FrozenEncoder
    adapters: AdapterStack | None
    head: Head

    @property
    def num_classes(self) -> int:
        return self.head.num_classes

    @property
    def input_dim(self) -> int:
        return self.encoder.cfg.input_dim

    def all_params(self) -> dict[str, np.ndarray]:
        merged = dict(self.encoder.params)
        if self.adapters is not None:
            merged.update(self.adapters.params)
        merged.update(self.head.params)
        return merged

    def set_param(self, name: str, value: np.ndarray) -> None:
        for holder in (self.encoder, self.adapters, self.head):
            if holder is not None and name in holder.params:
                holder.params[name] = value
                return
        raise KeyError(name)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return forward(self.encoder, self.adapters, self.head, x)


def _block_param_names(cfg: EncoderConfig, layer: int) -> list[str]:
    if cfg.block == "attention":
        return [f"enc{layer}.{s}" for s in ("wq", "wk", "wv", "wo", "bo", "w", "b")]
    return [f"enc{layer}.w", f"enc{layer}.b"]


def init_classifier(
    enc_cfg: EncoderConfig,
    num_classes: int,
    adapter_cfg: AdapterConfig | None,
    rng: np.random.Generator,
) -> Classifier:
    """Randomly initialized classifier; adapter up-projections start at zero."""
    if num_classes < 2:
        raise ValueError("need at least two classes")
    h, d_in = enc_cfg.hidden_dim, enc_cfg.input_dim
    enc: dict[str, np.ndarray] = {}
    enc["embed.w"] = rng.normal(0.0, 1.0 / math.sqrt(d_in), size=(h, d_in))
    enc["embed.b"] = np.zeros(h)
    for layer in range(enc_cfg.num_layers):
        if enc_cfg.block == "attention":
            for s in ("wq", "wk", "wv", "wo"):
                enc[f"enc{layer}.{s}"] = rng.normal(0.0, 1.0 / math.sqrt(h), size=(h, h))
            enc[f"enc{layer}.bo"] = np.zeros(h)
        enc[f"enc{layer}.w"] = rng.normal(0.0, math.sqrt(2.0 / h), size=(h, h))
        enc[f"enc{layer}.b"] = np.zeros(h)
    encoder = FrozenEncoder(enc_cfg, enc)

    adapters = None
    if adapter_cfg is not None:
        adapters = _init_adapters(enc_cfg, adapter_cfg, rng)

    head_params = {
        "head.w": rng.normal(0.0, 1.0 / math.sqrt(h), size=(num_classes, h)),
        "head.b": np.zeros(num_classes),
    }
    return Classifier(encoder, adapters, Head(num_classes, head_params))


def _init_adapters(
    enc_cfg: EncoderConfig, adapter_cfg: AdapterConfig, rng: np.random.Generator
) -> AdapterStack:
    h = enc_cfg.hidden_dim
    dims = adapter_cfg.layer_dims(enc_cfg.num_layers)
    params: dict[str, np.ndarray] = {}
    for layer, d in enumerate(dims):
        bound = 1.0 / math.sqrt(h)
        params[f"ad{layer}.down_w"] = rng.uniform(-bound, bound, size=(d, h))
        params[f"ad{layer}.down_b"] = np.zeros(d)
        params[f"ad{layer}.up_w"] = np.zeros((h, d))
        params[f"ad{layer}.up_b"] = np.zeros(h)
    return AdapterStack(adapter_cfg, enc_cfg.num_layers, params)


def attach_adapters(
    model: Classifier, adapter_cfg: AdapterConfig, rng: np.random.Generator
) -> Classifier:
    """New classifier sharing the encoder and head, with fresh adapters."""
    stack = _init_adapters(model.encoder.cfg, adapter_cfg, rng)
    return Classifier(model.encoder, stack, model.head)


def clone(model: Classifier) -> Classifier:
    """Shallow copy: fresh component objects, shared (read-only) arrays."""
    encoder = FrozenEncoder(model.encoder.cfg, dict(model.encoder.params))
    adapters = None
    if model.adapters is not None:
        adapters = AdapterStack(
            model.adapters.cfg, model.adapters.num_layers, dict(model.adapters.params)
        )
    head = Head(model.head.num_classes, dict(model.head.params))
    return Classifier(encoder, adapters, head)


def trainable_names(model: Classifier, mode: str) -> list[str]:
    """Parameter names updated under ``mode``, in declaration order."""
    if mode not in TRAIN_MODES:
        raise ValueError(f"mode must be one of {TRAIN_MODES}, got {mode!r}")
    if mode == "adapters" and model.adapters is None:
        raise ValueError("adapters mode requires an adapter stack")
    names: list[str] = []
    if mode == "full_finetune":
        names.extend(model.encoder.params)
        if model.adapters is not None:
            names.extend(model.adapters.params)
    elif mode == "adapters":
        names.extend(model.adapters.params)
    names.extend(model.head.params)
    return names


def count_trainable(model: Classifier, mode: str) -> int:
    """Exact number of scalar parameters updated under ``mode``."""
    merged = model.all_params()
    return int(sum(merged[n].size for n in trainable_names(model, mode)))


def parameter_counts(model: Classifier) -> dict[str, int]:
    """Per-component parameter totals (encoder / adapters / head / total)."""
    enc = sum(a.size for a in model.encoder.params.values())
    ad = sum(a.size for a in model.adapters.params.values()) if model.adapters else 0
    head = sum(a.size for a in model.head.params.values())
    return {"encoder": int(enc), "adapters": int(ad), "head": int(head), "total": int(enc + ad + head)}


def params_digest(model: Classifier, names: Sequence[str] | None = None) -> str:
    """SHA-256 over the named parameter bytes; defaults to all parameters."""
    import hashlib

    merged = model.all_params()
    digest = hashlib.sha256()
    for name in sorted(merged) if names is None else names:
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(merged[name]).tobytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# forward / backward


def adapter_input(
    layer_index: int,
    num_layers: int,
    connection: str,
    prev_feature: np.ndarray,
    prior_adapter_outputs: Sequence[np.ndarray],
) -> np.ndarray:
    """Input fed to the adapter at 1-indexed ``layer_index``.

    ``prior_adapter_outputs[k-1]`` must hold the output of adapter ``k`` for
    every ``k < layer_index``; a shorter list means the caller evaluated
    adapters out of order.
    """
    if connection not in CONNECTIONS:
        raise ValueError(f"connection must be one of {CONNECTIONS}, got {connection!r}")
    if not 1 <= layer_index <= num_layers:
        raise ValueError(f"layer_index must be in [1, {num_layers}], got {layer_index}")
    if len(prior_adapter_outputs) < layer_index - 1:
        raise RuntimeError(
            f"adapter {layer_index} needs {layer_index - 1} prior outputs, "
            f"got {len(prior_adapter_outputs)} (evaluation order violated)"
        )
    if connection == "neighboring" and layer_index >= 2:
        return prev_feature + prior_adapter_outputs[layer_index - 2]
    if connection == "unet":
        mirror = num_layers - layer_index
        if 2 * layer_index > num_layers and mirror >= 1:
            return prev_feature + prior_adapter_outputs[mirror - 1]
    if connection == "densenet" and layer_index >= 2:
        total = prior_adapter_outputs[0].copy()
        for out in prior_adapter_outputs[1 : layer_index - 1]:
            total = total + out
        return prev_feature + total
    return prev_feature


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-likelihood of the labels under softmax(logits)."""
    logits = np.atleast_2d(logits)
    labels = np.atleast_1d(labels)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(labels)), labels]
    return float(np.mean(log_z - picked))


def _forward_cache(model: Classifier, x: np.ndarray) -> dict:
    enc_cfg = model.encoder.cfg
    p = model.all_params()
    n = enc_cfg.num_layers
    stack = model.adapters

    feats = [x @ p["embed.w"].T + p["embed.b"]]
    cache: dict = {
        "x": x,
        "feats": feats,
        "e_pre": [],
        "z1": [],
        "v": [],
        "u": [],
        "a_pre": [],
        "a_mid": [],
        "a_out": [],
    }
    for layer in range(n):
        prev = feats[-1]
        if enc_cfg.block == "attention":
            v = prev @ p[f"enc{layer}.wv"].T
            z1 = prev + v @ p[f"enc{layer}.wo"].T + p[f"enc{layer}.bo"]
        else:
            v = None
            z1 = prev
        e_pre = z1 @ p[f"enc{layer}.w"].T + p[f"enc{layer}.b"]
        enc_out = _relu(e_pre)
        cache["v"].append(v)
        cache["z1"].append(z1)
        cache["e_pre"].append(e_pre)
        if stack is not None:
            u = adapter_input(layer + 1, n, stack.connection, prev, cache["a_out"])
            a_pre = u @ p[f"ad{layer}.down_w"].T + p[f"ad{layer}.down_b"]
            a_mid = _relu(a_pre)
            a_out = a_mid @ p[f"ad{layer}.up_w"].T + p[f"ad{layer}.up_b"]
            cache["u"].append(u)
            cache["a_pre"].append(a_pre)
            cache["a_mid"].append(a_mid)
            cache["a_out"].append(a_out)
            feats.append(enc_out + a_out)
        else:
            feats.append(enc_out)
    cache["logits"] = feats[-1] @ p["head.w"].T + p["head.b"]
    return cache


def forward(
    encoder: FrozenEncoder,
    adapters: AdapterStack | None,
    head: Head,
    x: np.ndarray,
) -> np.ndarray:
    """Class logits for ``x`` (a single feature vector or a batch of rows)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != encoder.cfg.input_dim:
        raise ValueError(f"expected input dim {encoder.cfg.input_dim}, got {x.shape[1]}")
    logits = _forward_cache(Classifier(encoder, adapters, head), x)["logits"]
    return logits[0] if single else logits


def _backward_from_cache(
    model: Classifier, cache: dict, labels: np.ndarray, mode: str
) -> dict[str, np.ndarray]:
    enc_cfg = model.encoder.cfg
    p = model.all_params()
    n = enc_cfg.num_layers
    stack = model.adapters
    wanted = set(trainable_names(model, mode))
    grads: dict[str, np.ndarray] = {}

    def put(name: str, value: np.ndarray) -> None:
        if name in wanted:
            grads[name] = value

    logits = cache["logits"]
    batch = logits.shape[0]
    d_logits = softmax(logits)
    d_logits[np.arange(batch), labels] -= 1.0
    d_logits /= batch

    f_last = cache["feats"][n]
    put("head.w", d_logits.T @ f_last)
    put("head.b", d_logits.sum(axis=0))

    # g_feat[i] accumulates the loss gradient w.r.t. layer feature i;
    # g_aout[k] the gradient w.r.t. adapter output k+1 (all consumers of an
    # adapter output sit at strictly later layers, so a single descending
    # sweep sees every contribution before it processes the producer).
    g_feat = [None] * (n + 1)
    g_feat[n] = d_logits @ p["head.w"]
    g_aout = [None] * n if stack is not None else None

    def add(slot, idx, value):
        slot[idx] = value if slot[idx] is None else slot[idx] + value

    for layer in reversed(range(n)):
        i = layer + 1  # 1-indexed layer
        gf = g_feat[i]
        g_prev = np.zeros_like(cache["feats"][layer])

        if stack is not None:
            ga = gf if g_aout[layer] is None else gf + g_aout[layer]
            a_mid = cache["a_mid"][layer]
            put(f"ad{layer}.up_w", ga.T @ a_mid)
            put(f"ad{layer}.up_b", ga.sum(axis=0))
            g_mid = ga @ p[f"ad{layer}.up_w"]
            g_apre = g_mid * (cache["a_pre"][layer] > 0.0)
            put(f"ad{layer}.down_w", g_apre.T @ cache["u"][layer])
            put(f"ad{layer}.down_b", g_apre.sum(axis=0))
            g_u = g_apre @ p[f"ad{layer}.down_w"]
            g_prev = g_prev + g_u
            conn = stack.connection
            if conn == "neighboring" and i >= 2:
                add(g_aout, layer - 1, g_u)
            elif conn == "unet":
                mirror = n - i
                if 2 * i > n and mirror >= 1:
                    add(g_aout, mirror - 1, g_u)
            elif conn == "densenet":
                for k in range(layer):
                    add(g_aout, k, g_u)

        g_epre = gf * (cache["e_pre"][layer] > 0.0)
        put(f"enc{layer}.w", g_epre.T @ cache["z1"][layer])
        put(f"enc{layer}.b", g_epre.sum(axis=0))
        g_z1 = g_epre @ p[f"enc{layer}.w"]
        if enc_cfg.block == "attention":
            # Single-token attention: softmax over one key is constant, so
            # the query/key projections carry exactly zero gradient.
            put(f"enc{layer}.wq", np.zeros_like(p[f"enc{layer}.wq"]))
            put(f"enc{layer}.wk", np.zeros_like(p[f"enc{layer}.wk"]))
            put(f"enc{layer}.wo", g_z1.T @ cache["v"][layer])
            put(f"enc{layer}.bo", g_z1.sum(axis=0))
            g_v = g_z1 @ p[f"enc{layer}.wo"]
            put(f"enc{layer}.wv", g_v.T @ cache["feats"][layer])
            g_prev = g_prev + g_z1 + g_v @ p[f"enc{layer}.wv"]
        else:
            g_prev = g_prev + g_z1
        add(g_feat, layer, g_prev)

    g0 = g_feat[0]
    put("embed.w", g0.T @ cache["x"])
    put("embed.b", g0.sum(axis=0))
    return grads


def loss_and_grads(
    model: Classifier, x: np.ndarray, labels: np.ndarray, mode: str
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean cross-entropy over the batch and its gradients for ``mode``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    labels = np.atleast_1d(np.asarray(labels))
    cache = _forward_cache(model, x)
    loss = cross_entropy(cache["logits"], labels)
    return loss, _backward_from_cache(model, cache, labels, mode)


def backward(
    model: Classifier, x: np.ndarray, labels: np.ndarray, mode: str = "full_finetune"
) -> dict[str, np.ndarray]:
    """Exact gradients of the mean cross-entropy, trainable parameters only."""
    return loss_and_grads(model, x, labels, mode)[1]


# ---------------------------------------------------------------------------
# training


def train(
    model: Classifier,
    dataset,
    mode: str,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> tuple[Classifier, dict[str, list[float]]]:
    """Minibatch training of the mode-selected parameters.

    Returns a new classifier (the input model is never mutated) and a
    history with the per-epoch mean loss. Deterministic given ``rng``.
    """
    features = np.asarray(dataset.features, dtype=float)
    labels = np.asarray(dataset.labels)
    if len(features) == 0:
        raise ValueError("cannot train on an empty dataset")

    work = clone(model)
    names = trainable_names(work, mode)
    initial = work.all_params()
    m_state = {n: np.zeros_like(initial[n]) for n in names}
    v_state = {n: np.zeros_like(initial[n]) for n in names}
    step = 0
    history: dict[str, list[float]] = {"loss": []}

    for _ in range(cfg.epochs):
        order = rng.permutation(len(features))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = loss_and_grads(work, features[idx], labels[idx], mode)
            epoch_loss += loss * len(idx)
            step += 1
            params = work.all_params()
            for name in names:
                g = grads[name]
                theta = params[name]
                if cfg.optimizer == "adamw":
                    m_state[name] = cfg.beta1 * m_state[name] + (1 - cfg.beta1) * g
                    v_state[name] = cfg.beta2 * v_state[name] + (1 - cfg.beta2) * g * g
                    m_hat = m_state[name] / (1 - cfg.beta1**step)
                    v_hat = v_state[name] / (1 - cfg.beta2**step)
                    update = m_hat / (np.sqrt(v_hat) + cfg.adam_eps) + cfg.weight_decay * theta
                else:
                    update = g + cfg.weight_decay * theta
                work.set_param(name, theta - cfg.learning_rate * update)
        history["loss"].append(epoch_loss / len(features))

    for holder in (work.encoder, work.adapters, work.head):
        if holder is not None:
            _freeze(holder.params)
    return work, history


def evaluate(model: Classifier, dataset) -> float:
    """Classification accuracy on the dataset, in percent."""
    logits = model.forward(np.asarray(dataset.features, dtype=float))
    predicted = np.argmax(logits, axis=1)
    return float(100.0 * np.mean(predicted == np.asarray(dataset.labels)))


# ---------------------------------------------------------------------------
# flat parameter vectors (used by the DP-SGD loop)


def pack_params(arrays: dict[str, np.ndarray], names: Sequence[str]) -> np.ndarray:
    return np.concatenate([np.ravel(arrays[n]) for n in names])


def unpack_params(
    vector: np.ndarray, template: dict[str, np.ndarray], names: Sequence[str]
) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    offset = 0
    for name in names:
        shape = template[name].shape
        size = template[name].size
        out[name] = vector[offset : offset + size].reshape(shape).copy()
        offset += size
    if offset != vector.size:
        raise ValueError(f"vector has {vector.size} entries, expected {offset}")
    return out


# ---------------------------------------------------------------------------
# checkpoints


def _declaration_order(model: Classifier) -> list[str]:
    names = list(model.encoder.params)
    if model.adapters is not None:
        names.extend(model.adapters.params)
    names.extend(model.head.params)
    return names


def save_checkpoint(model: Classifier, path) -> None:
    """Write the model in the flat binary format described in the module doc."""
    cfg = model.encoder.cfg
    stack = model.adapters
    header = struct.pack(
        "<4sIIIIIIII",
        _MAGIC,
        _VERSION,
        _BLOCK_KINDS.index(cfg.block),
        cfg.input_dim,
        cfg.hidden_dim,
        cfg.num_layers,
        model.num_classes,
        1 if stack is not None else 0,
        CONNECTIONS.index(stack.connection) if stack is not None else 0,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        if stack is not None:
            dims = stack.cfg.layer_dims(cfg.num_layers)
            fh.write(struct.pack(f"<{len(dims)}I", *dims))
        merged = model.all_params()
        for name in _declaration_order(model):
            fh.write(np.ascontiguousarray(merged[name], dtype="<f4").tobytes())


def load_checkpoint(path) -> Classifier:
    with open(path, "rb") as fh:
        raw = fh.read()
    head_size = struct.calcsize("<4sIIIIIIII")
    magic, version, block_kind, d_in, h, n, classes, has_adapters, conn = struct.unpack(
        "<4sIIIIIIII", raw[:head_size]
    )
    if magic != _MAGIC or version != _VERSION:
        raise ValueError("not a recognized checkpoint file")
    offset = head_size
    enc_cfg = EncoderConfig(d_in, h, n, _BLOCK_KINDS[block_kind])
    adapter_cfg = None
    dims: tuple[int, ...] = ()
    if has_adapters:
        dims = struct.unpack(f"<{n}I", raw[offset : offset + 4 * n])
        offset += 4 * n
        adapter_cfg = AdapterConfig(dims[0], CONNECTIONS[conn], per_layer_dims=dims)

    def read(shape) -> np.ndarray:
        nonlocal offset
        size = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f4", count=size, offset=offset)
        offset += 4 * size
        return arr.astype(float).reshape(shape)

    enc: dict[str, np.ndarray] = {"embed.w": read((h, d_in)), "embed.b": read((h,))}
    for layer in range(n):
        if enc_cfg.block == "attention":
            for s in ("wq", "wk", "wv", "wo"):
                enc[f"enc{layer}.{s}"] = read((h, h))
            enc[f"enc{layer}.bo"] = read((h,))
        enc[f"enc{layer}.w"] = read((h, h))
        enc[f"enc{layer}.b"] = read((h,))
    adapters = None
    if adapter_cfg is not None:
        ad: dict[str, np.ndarray] = {}
        for layer, d in enumerate(dims):
            ad[f"ad{layer}.down_w"] = read((d, h))
            ad[f"ad{layer}.down_b"] = read((d,))
            ad[f"ad{layer}.up_w"] = read((h, d))
            ad[f"ad{layer}.up_b"] = read((h,))
        adapters = AdapterStack(adapter_cfg, n, ad)
    head_params = {"head.w": read((classes, h)), "head.b": read((classes,))}
    if offset != len(raw):
        raise ValueError("checkpoint has trailing bytes")
    return Classifier(FrozenEncoder(enc_cfg, enc), adapters, Head(classes, head_params))
