"""Conditional Wasserstein GAN with gradient penalty for minority oversampling.

Both networks are plain fully connected stacks with LeakyReLU(0.2). The
class label enters each network as a one-hot vector concatenated to its
input. The critic is trained by descent on

    E[D(x_fake|y)] - E[D(x|y)] + lam * E[(|grad_xhat D(xhat|y)| - 1)^2]

and the generator by descent on -E[D(G(z|y)|y)].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import Dataset
from .errors import ConfigurationError, NumericFault, ShapeError
from .nn import Adam, Linear, Module
from .resample import n_to_generate
from .tensor import Tensor

N_CLASSES = 2
SLOPE = 0.2


def one_hot(labels, n_classes: int = N_CLASSES) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


class _MLP(Module):
    def __init__(self, widths: list[int], rng: np.random.Generator):
        self.layers = [Linear(a, b, rng) for a, b in zip(widths[:-1], widths[1:])]

    def __call__(self, h: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < len(self.layers) - 1:
                h = T.leaky_relu(h, SLOPE)
        return h


class Generator(Module):
    """noise ++ one-hot label -> hidden widths -> flattened sample (linear output)."""

    def __init__(self, noise_dim: int, out_dim: int, hidden=(128, 256, 512), seed: int = 0,
                 n_classes: int = N_CLASSES):
        self.noise_dim, self.out_dim, self.n_classes = noise_dim, out_dim, n_classes
        self.hidden = tuple(hidden)
        self.net = _MLP([noise_dim + n_classes, *self.hidden, out_dim], np.random.default_rng(seed))

    def __call__(self, z, y_onehot) -> Tensor:
        z, y = T.as_tensor(z), T.as_tensor(y_onehot)
        if z.shape[-1] != self.noise_dim:
            raise ShapeError(f"generator expects noise dim {self.noise_dim}, got {z.shape}")
        return self.net(T.concat([z, y], axis=-1))

    def generate(self, n: int, label: int, rng: np.random.Generator, batch: int = 512) -> np.ndarray:
        """Draw ``n`` samples of class ``label``, clamped to the normalised range [0, 1]."""
        out = []
        with T.no_grad():
            for start in range(0, n, batch):
                k = min(batch, n - start)
                z = rng.standard_normal((k, self.noise_dim))
                out.append(self(z, one_hot(np.full(k, label), self.n_classes)).data)
        if not out:
            return np.zeros((0, self.out_dim))
        return np.clip(np.concatenate(out), 0.0, 1.0)


class Discriminator(Module):
    """sample ++ one-hot label -> 512 -> 256 -> 1 unbounded critic score."""

    def __init__(self, in_dim: int, hidden=(512, 256), seed: int = 0, n_classes: int = N_CLASSES):
        self.in_dim, self.n_classes, self.hidden = in_dim, n_classes, tuple(hidden)
        self.net = _MLP([in_dim + n_classes, *self.hidden, 1], np.random.default_rng(seed))

    def score(self, joint: Tensor) -> Tensor:
        """Critic output for already-concatenated (sample, label) rows, shape (b,)."""
        out = self.net(joint)
        return T.reshape(out, (out.shape[0],))

    def __call__(self, x, y_onehot) -> Tensor:
        x, y = T.as_tensor(x), T.as_tensor(y_onehot)
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"critic expects sample dim {self.in_dim}, got {x.shape}")
        return self.score(T.concat([x, y], axis=-1))


def gradient_penalty(D: Discriminator, x_real: np.ndarray, x_fake: np.ndarray, y_onehot: np.ndarray,
                     eps: np.ndarray) -> Tensor:
    """E[(|grad D(xhat|y)| - 1)^2] with the norm over the joint (sample, label) input."""
    xhat = eps[:, None] * x_real + (1.0 - eps[:, None]) * x_fake
    joint = Tensor(np.concatenate([xhat, y_onehot], axis=1), requires_grad=True)
    scores = D.score(joint)
    # rows are independent, so the gradient of the sum is the per-sample gradient
    g = T.grad_of_grad(T.tsum(scores), joint)
    norms = T.l2_norm(g, axis=1)
    return T.mean((norms - 1.0) * (norms - 1.0))


def critic_loss(D: Discriminator, G: Generator, x_batch, y_batch, z_batch, lam: float,
                eps: np.ndarray | None = None, rng: np.random.Generator | None = None,
                parts: dict | None = None) -> Tensor:
    """Critic objective for one batch; ``eps`` is drawn from U(0, 1) per sample if omitted."""
    x = np.asarray(x_batch, dtype=np.float64)
    y = np.asarray(y_batch, dtype=np.float64)
    if eps is None:
        eps = (rng or np.random.default_rng()).random(len(x))
    with T.no_grad():
        fake = G(z_batch, y).data
    w_term = T.mean(D(fake, y)) - T.mean(D(x, y))
    loss = w_term
    if lam:
        gp = gradient_penalty(D, x, fake, y, np.asarray(eps, dtype=np.float64))
        loss = w_term + gp * lam
    else:
        gp = None
    if not np.isfinite(loss.item()):
        raise NumericFault(f"non-finite critic loss (wasserstein term {w_term.item()!r}, "
                           f"penalty {None if gp is None else gp.item()!r}, batch {len(x)})")
    if parts is not None:
        parts["wasserstein"] = w_term.item()
        parts["penalty"] = 0.0 if gp is None else gp.item()
    return loss


def generator_loss(D: Discriminator, G: Generator, z_batch, y_batch) -> Tensor:
    y = np.asarray(y_batch, dtype=np.float64)
    loss = -T.mean(D(G(z_batch, y), y))
    if not np.isfinite(loss.item()):
        raise NumericFault(f"non-finite generator loss on a batch of {len(y)}")
    return loss


@dataclass
class GanTrainConfig:
    lam: float = 10.0
    lr: float = 1e-4
    batch: int = 64
    n_critic: int = 5
    epochs: int = 500
    noise_dim: int = 100
    seed: int = 0
    gen_hidden: tuple = (128, 256, 512)
    critic_hidden: tuple = (512, 256)
    # weight clipping of the original WGAN; only for the crippled comparison baseline
    critic_clip: float | None = None

    def __post_init__(self):
        if self.critic_clip is not None and self.critic_clip <= 0:
            raise ConfigurationError("critic_clip must be positive")
        if self.lam < 0 or (self.lam == 0 and self.critic_clip is None):
            raise ConfigurationError("gradient penalty factor must be positive unless the critic is clipped")
        if self.n_critic < 1:
            raise ConfigurationError("n_critic must be at least 1")
        if self.batch < 2 or self.epochs < 1 or self.noise_dim < 1:
            raise ConfigurationError("batch >= 2, epochs >= 1 and noise_dim >= 1 are required")


@dataclass
class GanResult:
    generator: Generator
    discriminator: Discriminator
    critic_losses: list = field(default_factory=list)
    generator_losses: list = field(default_factory=list)


def critic_iterations_per_epoch(n: int, batch: int, n_critic: int) -> int:
    """One pass over the data, rounded up to whole generator steps."""
    return n_critic * max(1, math.ceil(math.ceil(n / batch) / n_critic))


def train_cwgan_gp(x: np.ndarray, y: np.ndarray, cfg: GanTrainConfig, on_epoch=None) -> GanResult:
    """Alternate ``n_critic`` critic steps with one generator step.

    Minibatches are class balanced: half of each batch comes from each class,
    sampled with replacement, so the rare class is seen as often as the
    common one. ``on_epoch(epoch, result)`` runs after every epoch.
    """
    x = np.asarray(x, dtype=np.float64).reshape(len(x), -1)
    y = np.asarray(y, dtype=int)
    if len(x) != len(y):
        raise ShapeError("sample and label counts differ")
    pools = [np.flatnonzero(y == k) for k in range(N_CLASSES)]
    if any(len(p) == 0 for p in pools):
        raise ConfigurationError("CWGAN-GP training needs samples of both classes")
    rng = np.random.default_rng(cfg.seed)
    dim = x.shape[1]
    G = Generator(cfg.noise_dim, dim, cfg.gen_hidden, seed=cfg.seed)
    D = Discriminator(dim, cfg.critic_hidden, seed=cfg.seed + 1)
    opt_g = Adam(G.named_parameters(), lr=cfg.lr)
    opt_d = Adam(D.named_parameters(), lr=cfg.lr)
    result = GanResult(G, D)
    half = cfg.batch // 2
    labels = np.r_[np.zeros(half, int), np.ones(cfg.batch - half, int)]
    y_batch = one_hot(labels)
    iters = critic_iterations_per_epoch(len(x), cfg.batch, cfg.n_critic)
    for epoch in range(cfg.epochs):
        c_total, g_total, g_steps = 0.0, 0.0, 0
        for it in range(iters):
            idx = np.concatenate([rng.choice(pools[0], half), rng.choice(pools[1], cfg.batch - half)])
            z = rng.standard_normal((cfg.batch, cfg.noise_dim))
            opt_d.zero_grad()
            loss = critic_loss(D, G, x[idx], y_batch, z, cfg.lam, rng=rng)
            T.backward(loss)
            opt_d.step()
            if cfg.critic_clip is not None:
                for p in D.parameters():
                    np.clip(p.data, -cfg.critic_clip, cfg.critic_clip, out=p.data)
            c_total += loss.item()
            if (it + 1) % cfg.n_critic == 0:
                z = rng.standard_normal((cfg.batch, cfg.noise_dim))
                opt_g.zero_grad()
                opt_d.zero_grad()
                g_loss = generator_loss(D, G, z, y_batch)
                T.backward(g_loss)
                opt_g.step()
                g_total += g_loss.item()
                g_steps += 1
        opt_d.zero_grad()
        result.critic_losses.append(c_total / iters)
        result.generator_losses.append(g_total / g_steps)
        if on_epoch is not None:
            on_epoch(epoch, result)
    return result


def balance_dataset(G: Generator, train: Dataset, target_ratio: float = 1.0, seed: int = 0,
                    notices: list | None = None) -> Dataset:
    """Append generated minority samples until minority / majority reaches ``target_ratio``."""
    if G.out_dim != train.flat().shape[1]:
        raise ShapeError(f"generator emits {G.out_dim} features, dataset has {train.flat().shape[1]}")
    minority = train.minority_label()
    n_min = int(np.sum(train.labels == minority))
    n_maj = int(np.sum((train.labels >= 0) & (train.labels != minority)))
    n_new = n_to_generate(n_min, n_maj, target_ratio)
    if n_new == 0:
        if notices is not None:
            notices.append(f"class ratio {n_min}:{n_maj} already meets target {target_ratio}; nothing generated")
        return train.subset(np.arange(len(train)))
    samples = G.generate(n_new, minority, np.random.default_rng(seed))
    return train.append_synthetic(samples, minority, "cwgan_gp_")
