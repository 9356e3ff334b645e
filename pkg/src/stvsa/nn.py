"""Neural building blocks and the encoder-only stability classifier (StaaT).

All layers operate on :class:`~stvsa.tensor.Tensor` and keep their weights
as leaf tensors, so a model is just a tree of :class:`Module` objects whose
``parameters()`` can be handed to :class:`Adam`.
"""

from __future__ import annotations

import json
import math
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, NumericFault, ShapeError
from .tensor import Tensor

CHECKPOINT_FORMAT = "stvsa-checkpoint"
CHECKPOINT_VERSION = 1


class Module:
    """Minimal parameter container."""

    def named_parameters(self, prefix: str = ""):
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(name + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        if set(own) != set(state):
            missing = sorted(set(own) ^ set(state))
            raise ShapeError(f"state dict keys do not match model: {missing[:5]}")
        for name, p in own.items():
            if p.shape != state[name].shape:
                raise ShapeError(f"{name}: checkpoint shape {state[name].shape} != model shape {p.shape}")
            p.data = np.array(state[name], dtype=np.float64)

    def n_parameters(self) -> int:
        return sum(p.size for p in self.parameters())


def xavier_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator):
        self.d_in, self.d_out = d_in, d_out
        self.weight = Tensor(xavier_uniform(rng, d_out, d_in), requires_grad=True)
        self.bias = Tensor(np.zeros(d_out), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.d_in:
            raise ShapeError(f"Linear expects last dim {self.d_in}, got shape {x.shape}")
        y = T.matmul(x, T.swap_last(self.weight))
        return y + T.broadcast_to(self.bias, y.shape)


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.eps = eps
        self.gain = Tensor(np.ones(d), requires_grad=True)
        self.bias = Tensor(np.zeros(d), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        mu = T.broadcast_to(T.mean(x, axis=-1, keepdims=True), x.shape)
        centered = x - mu
        var = T.mean(centered * centered, axis=-1, keepdims=True)
        xhat = centered / T.broadcast_to(T.sqrt(var + self.eps), x.shape)
        return xhat * T.broadcast_to(self.gain, x.shape) + T.broadcast_to(self.bias, x.shape)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    """Inverted dropout; identity outside training or at rate 0."""
    if not train or rate == 0.0:
        return x
    keep = rng.random(x.shape) >= rate
    return x * Tensor(keep / (1.0 - rate))


def positional_encoding(seq_len: int, d_model: int) -> np.ndarray:
    """Sinusoidal position table of shape (seq_len, d_model)."""
    if seq_len <= 0 or d_model <= 0:
        raise ConfigurationError("positional_encoding needs positive seq_len and d_model")
    pos = np.arange(seq_len)[:, None]
    i2 = np.arange(0, d_model, 2)[None, :]
    angle = pos / np.power(10000.0, i2 / d_model)
    pe = np.zeros((seq_len, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : d_model // 2])
    return pe


def scaled_dot_product_attention(q: Tensor, k: Tensor, v: Tensor, return_weights: bool = False):
    """softmax(q k^T / sqrt(d_k)) v over the last two axes."""
    q, k, v = T.as_tensor(q), T.as_tensor(k), T.as_tensor(v)
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention: query dim {q.shape} and key dim {k.shape} differ")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: key length {k.shape} and value length {v.shape} differ")
    d_k = q.shape[-1]
    scores = T.matmul(q, T.swap_last(k)) * (1.0 / math.sqrt(d_k))
    weights = T.softmax(scores, axis=-1)
    out = T.matmul(weights, v)
    return (out, weights) if return_weights else out


class MultiHeadAttention(Module):
    """h parallel attention heads over d_model // h dimensional projections.

    ``w_q``, ``w_k``, ``w_v`` stack the per-head projection matrices along
    their output axis; head ``i`` uses rows ``i*d_k:(i+1)*d_k``.
    """

    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads:
            raise ConfigurationError(f"d_model={d_model} is not divisible by n_heads={n_heads}")
        self.d_model, self.n_heads, self.d_k = d_model, n_heads, d_model // n_heads
        self.w_q = Linear(d_model, d_model, rng)
        self.w_k = Linear(d_model, d_model, rng)
        self.w_v = Linear(d_model, d_model, rng)
        self.w_o = Linear(d_model, d_model, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, s, _ = x.shape
        return T.permute(T.reshape(x, (b, s, self.n_heads, self.d_k)), (0, 2, 1, 3))

    def __call__(self, x: Tensor, return_weights: bool = False):
        squeeze = x.ndim == 2
        if squeeze:
            x = T.reshape(x, (1,) + x.shape)
        b, s, _ = x.shape
        q, k, v = self._split(self.w_q(x)), self._split(self.w_k(x)), self._split(self.w_v(x))
        heads, weights = scaled_dot_product_attention(q, k, v, return_weights=True)
        merged = T.reshape(T.permute(heads, (0, 2, 1, 3)), (b, s, self.d_model))
        out = self.w_o(merged)
        if squeeze:
            out = T.reshape(out, out.shape[1:])
        return (out, weights) if return_weights else out


def multi_head_forward(mha: MultiHeadAttention, x: Tensor) -> Tensor:
    return mha(x)


class EncoderLayer(Module):
    def __init__(self, d_model: int, n_heads: int, d_ff: int, rng: np.random.Generator):
        self.attn = MultiHeadAttention(d_model, n_heads, rng)
        self.ff1 = Linear(d_model, d_ff, rng)
        self.ff2 = Linear(d_ff, d_model, rng)
        self.norm1 = LayerNorm(d_model)
        self.norm2 = LayerNorm(d_model)

    def __call__(self, x: Tensor, rate: float, rng, train: bool) -> Tensor:
        x = self.norm1(x + dropout(self.attn(x), rate, rng, train))
        h = self.ff2(T.relu(self.ff1(x)))
        return self.norm2(x + dropout(h, rate, rng, train))


@dataclass
class StaaTConfig:
    n_features: int
    seq_len: int
    d_model: int = 64
    n_heads: int = 8
    n_layers: int = 2
    d_ff: int = 128
    dropout: float = 0.5
    seed: int = 0


class Classifier(Module):
    """Common surface of the sequence classifiers: (b, seq, feat) -> (b, 2)."""

    kind = "classifier"

    def logits(self, x: Tensor, train: bool = False, rng=None) -> Tensor:  # pragma: no cover
        raise NotImplementedError

    def __call__(self, x, train: bool = False, rng=None) -> Tensor:
        return T.softmax(self.logits(T.as_tensor(x), train, rng), axis=-1)

    def predict_proba(self, x: np.ndarray, batch: int = 256) -> np.ndarray:
        out = []
        with T.no_grad():
            for i in range(0, len(x), batch):
                out.append(self(Tensor(x[i:i + batch])).data)
        return np.concatenate(out) if out else np.zeros((0, 2))

    def predict(self, x: np.ndarray) -> np.ndarray:
        p = self.predict_proba(x)
        # ties go to the unstable class
        return (p[:, 1] >= p[:, 0]).astype(int)

    def _check_input(self, x: Tensor):
        if x.ndim != 3 or x.shape[1:] != (self.config.seq_len, self.config.n_features):
            raise ShapeError(f"{self.kind} expects (batch, {self.config.seq_len}, "
                             f"{self.config.n_features}), got {x.shape}")


class StaaT(Classifier):
    """Encoder-only Transformer with mean pooling and a 2-way softmax head."""

    kind = "staat"

    def __init__(self, config: StaaTConfig):
        if config.n_layers < 1:
            raise ConfigurationError("StaaT needs at least one encoder layer")
        if not 0.0 <= config.dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {config.dropout}")
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.embed = Linear(config.n_features, config.d_model, rng)
        self.pe = positional_encoding(config.seq_len, config.d_model)
        self.layers = [EncoderLayer(config.d_model, config.n_heads, config.d_ff, rng)
                       for _ in range(config.n_layers)]
        self.head = Linear(config.d_model, 2, rng)

    def logits(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        self._check_input(x)
        h = self.embed(x)
        h = h + Tensor(np.broadcast_to(self.pe, h.shape))
        for i, layer in enumerate(self.layers):
            h = layer(h, self.config.dropout, rng, train)
            if not np.all(np.isfinite(h.data)):
                raise NumericFault(f"non-finite activation after encoder layer {i}")
        return self.head(T.mean(h, axis=1))


def staat_forward(model: StaaT, batch, train_mode: bool = False, rng=None) -> Tensor:
    return model(batch, train=train_mode, rng=rng)


class RNNClassifier(Classifier):
    """Single-layer Elman recurrence (tanh) read out from the last hidden state."""

    kind = "rnn"

    def __init__(self, config: StaaTConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.w_in = Linear(config.n_features, config.d_model, rng)
        self.w_h = Linear(config.d_model, config.d_model, rng)
        self.head = Linear(config.d_model, 2, rng)

    def logits(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        self._check_input(x)
        proj = self.w_in(x)
        h = T.tanh(proj[:, 0, :])
        for t in range(1, x.shape[1]):
            h = T.tanh(proj[:, t, :] + self.w_h(h))
        return self.head(dropout(h, self.config.dropout, rng, train))


class ConvClassifier(Classifier):
    """One 1-D convolution (kernel 3, valid padding), ReLU, temporal mean pool."""

    kind = "cnn"
    kernel = 3

    def __init__(self, config: StaaTConfig):
        self.config = config
        rng = np.random.default_rng(config.seed)
        self.taps = [Linear(config.n_features, config.d_model, rng) for _ in range(self.kernel)]
        self.head = Linear(config.d_model, 2, rng)

    def logits(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        self._check_input(x)
        n = x.shape[1] - self.kernel + 1
        h = self.taps[0](x[:, 0:n, :])
        for j in range(1, self.kernel):
            h = h + self.taps[j](x[:, j:j + n, :])
        pooled = T.mean(T.relu(h), axis=1)
        return self.head(dropout(pooled, self.config.dropout, rng, train))


CLASSIFIERS = {"staat": StaaT, "rnn": RNNClassifier, "cnn": ConvClassifier}


def build_classifier(kind: str, config: StaaTConfig) -> Classifier:
    if kind not in CLASSIFIERS:
        raise ConfigurationError(f"unknown classifier {kind!r}; choose from {sorted(CLASSIFIERS)}")
    return CLASSIFIERS[kind](config)


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Tensor], grads: dict[str, np.ndarray]):
    """One bias-corrected Adam update applied in place to ``params``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericFault(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(g)
        denom = np.sqrt(v, out=np.empty_like(v))
        denom *= 1.0 / math.sqrt(c2)
        denom += state.eps
        np.divide(m, denom, out=denom)
        denom *= state.lr / c1
        # fresh array so earlier references to p.data stay unchanged
        p.data = p.data - denom
    return params


class Adam:
    """Adam bound to a module's named parameters; reads ``p.grad``."""

    def __init__(self, named_params, lr: float = 1e-4, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = dict(named_params)
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        grads = {n: p.grad for n, p in self.params.items() if p.grad is not None}
        adam_step(self.state, self.params, grads)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 200
    batch: int = 64
    lr: float = 1e-4
    dropout: float = 0.5
    seed: int = 0


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    logp = T.log_softmax(logits, axis=-1)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(labels)), labels] = 1.0
    return -T.tsum(logp * Tensor(onehot)) * (1.0 / len(labels))


def train_classifier(model: Classifier, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
                     log=None) -> list[float]:
    """Minibatch Adam on cross-entropy; returns the mean loss of every epoch."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    if len(x) == 0:
        raise ConfigurationError("cannot train on an empty dataset")
    if not set(np.unique(y)) <= {0, 1}:
        raise ConfigurationError("labels must be 0 (stable) or 1 (unstable)")
    model.config.dropout = cfg.dropout
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.named_parameters(), lr=cfg.lr)
    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(x))
        total = 0.0
        for start in range(0, len(x), cfg.batch):
            idx = order[start:start + cfg.batch]
            opt.zero_grad()
            loss = cross_entropy(model.logits(Tensor(x[idx]), train=True, rng=rng), y[idx])
            if not np.isfinite(loss.item()):
                raise NumericFault(f"non-finite training loss at epoch {epoch}")
            T.backward(loss)
            opt.step()
            total += loss.item() * len(idx)
        history.append(total / len(x))
        if log is not None:
            log(epoch, history[-1])
    opt.zero_grad()
    return history


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path, kind: str, config: dict, state: dict[str, np.ndarray], extra: dict | None = None):
    """Write a versioned ``.npz`` holding metadata JSON plus raw float64 arrays."""
    meta = {"format": CHECKPOINT_FORMAT, "version": CHECKPOINT_VERSION,
            "kind": kind, "config": config, "extra": extra or {}}
    arrays = {"__meta__": np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    arrays.update({f"param/{k}": v for k, v in state.items()})
    # np.savez stamps entries with the wall clock; a fixed stamp keeps reruns byte-identical
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            info = zipfile.ZipInfo(f"{name}.npy", date_time=(1980, 1, 1, 0, 0, 0))
            with zf.open(info, "w", force_zip64=True) as fh:
                np.lib.format.write_array(fh, np.asarray(arr), allow_pickle=False)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ConfigurationError(f"{path}: not a checkpoint file")
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigurationError(f"{path}: unsupported checkpoint version {meta.get('version')}")
        state = {k[len("param/"):]: z[k] for k in z.files if k.startswith("param/")}
    return meta, state


def save_classifier(path, model: Classifier, extra: dict | None = None):
    save_checkpoint(path, model.kind, asdict(model.config), model.state_dict(), extra)


def load_classifier(path) -> tuple[Classifier, dict]:
    meta, state = load_checkpoint(path)
    model = build_classifier(meta["kind"], StaaTConfig(**meta["config"]))
    model.load_state_dict(state)
    return model, meta
