"""Losses, exact backpropagation through the cascade, ADAM and the epoch loop.

The backward pass differentiates the mean binary cross-entropy of each
sample's selected expert output. Because only the selected logit enters the
loss, the per-sample gradient flows from expert k back through the chain of
hidden layers k-1, ..., 0 and is exactly zero for the output heads of all
other experts and, in per-expert mode, for every parameter of experts above
k. ``gradcheck`` verifies the whole thing against central finite
differences.

Training follows a fixed recipe: symmetric duplication of the kin pairs
once, a fresh 1:1 nonkin resample every epoch, seeded shuffling, batches of
200, binary sigmoid cross-entropy plus an L2 penalty on the trainable
parameters, ADAM with learning rate 0.001 dropped to 0.0005 after the
second epoch, and 20% inverted dropout on the concatenated feature. Every
stream is seeded, so a (seed, data, config) triple reproduces the model
byte for byte.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .comparator import (
    Activation,
    ComparatorConfig,
    ComparatorParams,
    ForwardTrace,
    SharingMode,
    activation_grad,
    add_attention_head,
    forward,
    hidden_layer_plan,
    init_params,
    stable_sigmoid,
    stable_softmax,
)
from .data import (
    EmbeddingStore,
    PairSet,
    augment_symmetric,
    pairs_to_arrays,
    resample_nonkin,
)
from .seeding import STREAM_DROPOUT, STREAM_SHUFFLE, derive_rng

GradientSet = dict[str, np.ndarray]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 4
    batch_size: int = 200
    lr_initial: float = 0.001
    lr_late: float = 0.0005
    lr_switch_after_epoch: int = 2
    l2_lambda: float = 2e-4
    l2_includes_biases: bool = True
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.lr_initial <= 0 or self.lr_late <= 0:
            raise ValueError("learning rates must be positive")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be non-negative")

    def lr_for_epoch(self, epoch: int) -> float:
        """Epochs are 1-based; the late rate starts after the switch epoch."""
        return self.lr_initial if epoch <= self.lr_switch_after_epoch else self.lr_late


@dataclass
class EpochStats:
    epoch: int
    lr: float
    train_loss: float
    val_macro_acc: float


@dataclass
class AdamState:
    m: GradientSet
    v: GradientSet
    t: int = 0

    @classmethod
    def init_like(cls, params: ComparatorParams, keys: list[str] | None = None) -> "AdamState":
        keys = keys if keys is not None else list(params.values)
        return cls(
            m={k: np.zeros_like(params.values[k]) for k in keys},
            v={k: np.zeros_like(params.values[k]) for k in keys},
        )


def bce_loss(logits: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-element binary cross-entropy on logits, with its gradient.

    loss = softplus(logit) - target * logit, the stable rewrite of
    -[t log s(l) + (1-t) log(1 - s(l))]; gradient is sigmoid(logit) - target.
    Stays finite at arbitrary saturation.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    softplus = np.maximum(logits, 0.0) + np.log1p(np.exp(-np.abs(logits)))
    loss = softplus - targets * logits
    grad = stable_sigmoid(logits) - targets
    return loss, grad


def l2_penalty(
    params: ComparatorParams,
    lam: float,
    include_biases: bool = True,
    keys: list[str] | None = None,
) -> tuple[float, GradientSet]:
    """Squared-norm penalty lam * sum(p^2) and its gradient 2*lam*p.

    Biases (b1, b2, attention.b) can be excluded; weight matrices and PReLU
    slopes always count.
    """
    if lam < 0:
        raise ValueError("l2 factor must be non-negative")
    keys = keys if keys is not None else list(params.values)
    loss = 0.0
    grads: GradientSet = {}
    for name in keys:
        p = params.values[name]
        is_bias = name.endswith(".b1") or name.endswith(".b2") or name.endswith("attention.b")
        if is_bias and not include_biases:
            grads[name] = np.zeros_like(p)
            continue
        loss += lam * float(np.sum(p * p))
        grads[name] = 2.0 * lam * p
    return loss, grads


def backward(
    trace: ForwardTrace,
    params: ComparatorParams,
    rel_idx: np.ndarray,
    targets: np.ndarray,
) -> GradientSet:
    """Gradients of the mean selected-expert BCE over the batch.

    ``rel_idx`` holds each sample's expert position, ``targets`` its 0/1
    label. The trace must come from a forward on the same parameters.
    """
    cfg = params.config
    n, n_experts = trace.logits.shape
    rel_idx = np.asarray(rel_idx)
    targets = np.asarray(targets, dtype=np.float64)
    if rel_idx.shape != (n,) or targets.shape != (n,):
        raise ValueError("rel_idx and targets must each have one entry per traced sample")
    if len(trace.hidden) != n_experts or n_experts != cfg.n_experts:
        raise ValueError("trace does not match the model configuration")

    grads: GradientSet = {k: np.zeros_like(v) for k, v in params.values.items()
                          if not k.startswith("attention.")}
    rows = np.arange(n)
    dlogits = np.zeros((n, n_experts), dtype=np.float64)
    sel = trace.logits[rows, rel_idx]
    dlogits[rows, rel_idx] = (stable_sigmoid(sel) - targets) / n

    plan = hidden_layer_plan(cfg)
    cascade = cfg.sharing is not SharingMode.ENTIRELY_LOCAL
    carry = np.zeros_like(trace.hidden[-1])  # grad flowing into z1[i] from expert i+1
    for i in reversed(range(n_experts)):
        layer = plan[i]
        z = trace.hidden[i]
        a = trace.pre_acts[i]
        inp = trace.inputs if layer.reads_input else trace.hidden[i - 1]
        w2 = params.values[f"expert{i}.W2"]

        dz = dlogits[:, i : i + 1] * w2
        if cascade and i < n_experts - 1:
            dz = dz + carry
        grads[f"expert{i}.W2"] += (dlogits[:, i] @ z)[None, :]
        grads[f"expert{i}.b2"] += dlogits[:, i].sum(keepdims=True)

        slope = float(params.values[layer.prelu_key][0]) if layer.prelu_key else None
        da = dz * activation_grad(a, z, cfg.activation, slope)
        if layer.prelu_key:
            grads[layer.prelu_key] += np.sum(dz * np.where(a > 0, 0.0, a), keepdims=True).reshape(1)
        grads[layer.w_key] += da.T @ inp
        grads[layer.b_key] += da.sum(axis=0)
        if cascade and i > 0:
            carry = da @ params.values[layer.w_key]
    return grads


def adam_step(
    params: ComparatorParams,
    grads: GradientSet,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ComparatorParams, AdamState]:
    """One bias-corrected ADAM update, in place, over the keys in ``grads``."""
    state.t += 1
    t = state.t
    for name, g in grads.items():
        p = params.values[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {p.shape}")
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, state


def _macro_accuracy_curve(store, pairs, params):
    """Calibrated macro accuracy of the current model on an eval pair set."""
    from .evaluation import Objective, calibrate_threshold, score_pairs

    scored = score_pairs(params, store, pairs)
    _, best = calibrate_threshold(scored, objective=Objective.MACRO)
    return best


def train(
    store: EmbeddingStore,
    kin_pairs: PairSet,
    val_pairs: PairSet,
    comp_config: ComparatorConfig,
    train_config: TrainConfig,
) -> tuple[ComparatorParams, list[EpochStats]]:
    """Full training run; returns the model and per-epoch history.

    ``kin_pairs`` are raw kin pairs; symmetric relations are duplicated and
    swapped here, once, before the epoch loop. ``val_pairs`` is a fixed
    kin+nonkin set used only for the history's macro accuracy (computed at
    the per-epoch calibrated threshold). With epochs=0 the initialized
    parameters come back untouched with empty history.
    """
    params = init_params(comp_config, train_config.seed)
    state = AdamState.init_like(params)
    history: list[EpochStats] = []
    if train_config.epochs == 0:
        return params, history

    aug = augment_symmetric(kin_pairs)
    dropout_rng = derive_rng(train_config.seed, STREAM_DROPOUT)
    for epoch in range(1, train_config.epochs + 1):
        nonkin = resample_nonkin(aug, store, train_config.seed, epoch)
        epoch_pairs = list(aug.pairs) + list(nonkin.pairs)
        features, rel_idx, targets = pairs_to_arrays(store, epoch_pairs, comp_config.relations)
        order = derive_rng(train_config.seed, STREAM_SHUFFLE, epoch).permutation(len(epoch_pairs))
        features, rel_idx, targets = features[order], rel_idx[order], targets[order]

        lr = train_config.lr_for_epoch(epoch)
        batch_losses: list[float] = []
        for start in range(0, len(epoch_pairs), train_config.batch_size):
            stop = start + train_config.batch_size
            xb, kb, tb = features[start:stop], rel_idx[start:stop], targets[start:stop]
            _, trace = forward(params, xb, mode="train", rng=dropout_rng)
            sel_logits = trace.logits[np.arange(len(kb)), kb]
            losses, _ = bce_loss(sel_logits, tb)
            grads = backward(trace, params, kb, tb)
            reg_loss, reg_grads = l2_penalty(
                params,
                train_config.l2_lambda,
                train_config.l2_includes_biases,
                keys=list(grads),
            )
            for name in grads:
                grads[name] += reg_grads[name]
            params, state = adam_step(
                params,
                grads,
                state,
                lr,
                train_config.adam_beta1,
                train_config.adam_beta2,
                train_config.adam_eps,
            )
            batch_losses.append(float(losses.mean()) + reg_loss)
        val_acc = _macro_accuracy_curve(store, val_pairs, params)
        history.append(
            EpochStats(
                epoch=epoch,
                lr=lr,
                train_loss=float(np.mean(batch_losses)),
                val_macro_acc=val_acc,
            )
        )
    return params, history


def train_attention(
    params: ComparatorParams,
    store: EmbeddingStore,
    kin_pairs: PairSet,
    train_config: TrainConfig,
) -> ComparatorParams:
    """Train the relation-prediction head on kin pairs, experts frozen.

    Softmax cross-entropy over the kin pairs' relation labels with the same
    ADAM settings and learning-rate schedule as expert training. Expert
    parameters are never touched, so verification scores are bit-identical
    before and after. A missing head is added zero-initialized; with
    epochs=0 it stays zero (the uniform predictor).
    """
    params = add_attention_head(params.copy())
    if train_config.epochs == 0:
        return params
    cfg = params.config
    aug = augment_symmetric(kin_pairs)
    features, rel_idx, _ = pairs_to_arrays(store, list(aug.pairs), cfg.relations)
    att_keys = params.attention_keys()
    state = AdamState.init_like(params, keys=att_keys)
    n_experts = cfg.n_experts
    for epoch in range(1, train_config.epochs + 1):
        order = derive_rng(train_config.seed, STREAM_SHUFFLE, epoch).permutation(len(rel_idx))
        xs, ks = features[order], rel_idx[order]
        lr = train_config.lr_for_epoch(epoch)
        for start in range(0, len(ks), train_config.batch_size):
            stop = start + train_config.batch_size
            xb, kb = xs[start:stop], ks[start:stop]
            n = len(kb)
            logits = xb @ params.values["attention.W"].T + params.values["attention.b"]
            probs = stable_softmax(logits)
            dlogits = probs.copy()
            dlogits[np.arange(n), kb] -= 1.0
            dlogits /= n
            grads: GradientSet = {
                "attention.W": dlogits.T @ xb,
                "attention.b": dlogits.sum(axis=0),
            }
            params, state = adam_step(
                params,
                grads,
                state,
                lr,
                train_config.adam_beta1,
                train_config.adam_beta2,
                train_config.adam_eps,
            )
    return params


def finite_difference_grads(
    params: ComparatorParams,
    features: np.ndarray,
    rel_idx: np.ndarray,
    targets: np.ndarray,
    step: float = 1e-6,
    dropout_scale: np.ndarray | None = None,
) -> GradientSet:
    """Central-difference gradients of the mean selected BCE, every entry."""

    def loss_at(p: ComparatorParams) -> float:
        mode = "train" if dropout_scale is not None else "eval"
        _, trace = forward(p, features, mode=mode, dropout_scale=dropout_scale)
        sel = trace.logits[np.arange(len(rel_idx)), rel_idx]
        losses, _ = bce_loss(sel, targets)
        return float(losses.mean())

    grads: GradientSet = {}
    for name in params.expert_keys():
        base = params.values[name]
        g = np.zeros_like(base)
        flat = base.reshape(-1)
        gflat = g.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            up = loss_at(params)
            flat[j] = orig - step
            down = loss_at(params)
            flat[j] = orig
            gflat[j] = (up - down) / (2.0 * step)
        grads[name] = g
    return grads


def _tiny_config(activation: Activation, sharing: SharingMode) -> ComparatorConfig:
    return ComparatorConfig(
        input_dim=8,
        hidden=3,
        activation=activation,
        dropout_p=0.0,
        sharing=sharing,
        relations=("BB", "FD", "GMGS"),
    )


def gradcheck(
    seed: int = 0,
    activations: tuple[Activation, ...] = tuple(Activation),
    sharing_modes: tuple[SharingMode, ...] = tuple(SharingMode),
    step: float = 1e-6,
) -> float:
    """Max relative error between backward and central finite differences.

    Runs tiny configurations over every requested activation and sharing
    mode, with batches mixing relations and targets. Relative error per
    entry is |ga - gn| / max(1, |ga|, |gn|), which reads as absolute error
    for small gradients and relative error for large ones.
    """
    worst = 0.0
    rng = np.random.default_rng(seed)
    for activation in activations:
        for sharing in sharing_modes:
            cfg = _tiny_config(activation, sharing)
            params = init_params(cfg, seed)
            for name in params.values:  # move away from zero biases
                params.values[name] += 0.1 * rng.standard_normal(params.values[name].shape)
            features = rng.standard_normal((4, cfg.input_dim))
            rel_idx = np.array([0, 1, 2, 1])
            targets = np.array([1.0, 0.0, 1.0, 0.0])
            _, trace = forward(params, features, mode="eval")
            analytic = backward(trace, params, rel_idx, targets)
            numeric = finite_difference_grads(params, features, rel_idx, targets, step)
            for name in analytic:
                ga, gn = analytic[name], numeric[name]
                denom = np.maximum(1.0, np.maximum(np.abs(ga), np.abs(gn)))
                err = float(np.max(np.abs(ga - gn) / denom))
                worst = max(worst, err)
    return worst
