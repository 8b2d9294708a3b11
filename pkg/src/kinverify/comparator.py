"""Cascaded local-expert comparator over concatenated embedding pairs.

One two-layer expert per kinship relation. Expert ``i`` maps its input
through a hidden layer of ``hidden`` neurons and squashes a single output
neuron to a probability:

    z1[0] = act(W1_0 @ drop(f_c) + b1_0)
    z1[i] = act(W1_i @ z1[i-1]   + b1_i)      for i >= 1
    z2[i] = sigmoid(W2_i @ z1[i] + b2_i)

so the first expert reads the concatenated feature and every later expert
refines the previous expert's hidden state. Three weight layouts are
supported: PER_EXPERT (each expert owns its hidden layer, the default),
SHARED_TRUNK (experts 1..n-1 share one hidden layer) and ENTIRELY_LOCAL
(every expert reads f_c directly, no cascade).

A model's expert order is its relation tuple; by default the canonical
relation order. Parameters live in a flat name->array dict whose key
inventory is a pure function of the config, which keeps initialization,
gradients, the optimizer and serialization in one canonical order.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .data import PairLabel, concat_features
from .relations import RELATION_ORDER, KinshipRelation
from .seeding import STREAM_INIT, derive_rng

LRELU_SLOPE = 0.2
PRELU_INIT_SLOPE = 0.25

CANONICAL_RELATION_CODES = tuple(r.value for r in RELATION_ORDER)


class Activation(enum.Enum):
    LRELU = "lrelu"
    RELU = "relu"
    PRELU = "prelu"
    TANH = "tanh"


class SharingMode(enum.Enum):
    PER_EXPERT = "per-expert"
    SHARED_TRUNK = "shared-trunk"
    ENTIRELY_LOCAL = "entirely-local"


class PoolingMode(enum.Enum):
    SOFT_ATTENTION = "soft"
    HARD_ATTENTION = "hard"
    MEAN_POOL = "mean"
    MAX_POOL = "max"


@dataclass(frozen=True)
class ComparatorConfig:
    input_dim: int
    hidden: int = 192
    activation: Activation = Activation.LRELU
    dropout_p: float = 0.2
    sharing: SharingMode = SharingMode.PER_EXPERT
    relations: tuple[str, ...] = CANONICAL_RELATION_CODES

    def __post_init__(self):
        if self.input_dim < 2 or self.input_dim % 2 != 0:
            raise ValueError(f"input_dim must be an even integer >= 2, got {self.input_dim}")
        if self.hidden < 1:
            raise ValueError(f"hidden must be positive, got {self.hidden}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if len(self.relations) < 1 or len(set(self.relations)) != len(self.relations):
            raise ValueError("relations must be a non-empty tuple of distinct codes")

    @property
    def n_experts(self) -> int:
        return len(self.relations)

    def relation_position(self, relation: KinshipRelation | str) -> int:
        code = relation.value if isinstance(relation, KinshipRelation) else relation
        try:
            return self.relations.index(code)
        except ValueError:
            raise ValueError(f"relation {code!r} not handled by this model") from None


@dataclass(frozen=True)
class _HiddenLayer:
    """One hidden-layer slot: parameter keys plus where its input comes from."""

    w_key: str
    b_key: str
    prelu_key: str | None
    reads_input: bool  # True: concatenated feature; False: previous expert's z1


def hidden_layer_plan(config: ComparatorConfig) -> list[_HiddenLayer]:
    """Hidden-layer wiring for each expert position under the sharing mode."""
    prelu = config.activation is Activation.PRELU
    plan: list[_HiddenLayer] = []
    for i in range(config.n_experts):
        if config.sharing is SharingMode.ENTIRELY_LOCAL:
            name, reads_input = f"expert{i}", True
        elif config.sharing is SharingMode.SHARED_TRUNK and i > 0:
            name, reads_input = "trunk", False
        else:
            name, reads_input = f"expert{i}", i == 0
        plan.append(
            _HiddenLayer(
                w_key=f"{name}.W1",
                b_key=f"{name}.b1",
                prelu_key=f"{name}.prelu" if prelu else None,
                reads_input=reads_input,
            )
        )
    return plan


def param_layout(config: ComparatorConfig, with_attention: bool = False) -> list[tuple[str, tuple[int, ...]]]:
    """Canonical (name, shape) inventory for a config.

    The order fixes initialization draws and the serialized byte layout:
    one block per expert in order W1, b1, W2, b2, prelu slope, where the
    hidden-layer entries appear only when that expert introduces a new
    hidden layer (a shared trunk lands inside expert 1's block), followed
    by the optional attention head.
    """
    h, d2 = config.hidden, config.input_dim
    plan = hidden_layer_plan(config)
    layout: list[tuple[str, tuple[int, ...]]] = []
    seen: set[str] = set()
    for i, layer in enumerate(plan):
        new_hidden = layer.w_key not in seen
        if new_hidden:
            seen.add(layer.w_key)
            in_dim = d2 if layer.reads_input else h
            layout.append((layer.w_key, (h, in_dim)))
            layout.append((layer.b_key, (h,)))
        layout.append((f"expert{i}.W2", (1, h)))
        layout.append((f"expert{i}.b2", (1,)))
        if new_hidden and layer.prelu_key:
            layout.append((layer.prelu_key, (1,)))
    if with_attention:
        layout.append(("attention.W", (config.n_experts, d2)))
        layout.append(("attention.b", (config.n_experts,)))
    return layout


@dataclass
class ComparatorParams:
    """Entire trainable state: flat name->array dict plus metadata.

    Immutable during inference; the training loop owns it exclusively while
    updating. ``threshold`` is the calibrated decision threshold, stored
    with the model after calibration.
    """

    config: ComparatorConfig
    values: dict[str, np.ndarray]
    threshold: float | None = None

    @property
    def has_attention(self) -> bool:
        return "attention.W" in self.values

    def copy(self) -> "ComparatorParams":
        return ComparatorParams(
            config=self.config,
            values={k: v.copy() for k, v in self.values.items()},
            threshold=self.threshold,
        )

    def expert_keys(self) -> list[str]:
        return [k for k in self.values if not k.startswith("attention.")]

    def attention_keys(self) -> list[str]:
        return [k for k in self.values if k.startswith("attention.")]


def init_params(
    config: ComparatorConfig, seed: int, with_attention: bool = False
) -> ComparatorParams:
    """Fan-scaled uniform weights, zero biases, deterministic per seed.

    Weight matrices draw from U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
    The attention head starts at zero so an untrained head predicts the
    uniform relation distribution.
    """
    rng = derive_rng(seed, STREAM_INIT)
    values: dict[str, np.ndarray] = {}
    for name, shape in param_layout(config, with_attention):
        if name.endswith(".prelu"):
            values[name] = np.full(shape, PRELU_INIT_SLOPE, dtype=np.float64)
        elif name.startswith("attention."):
            values[name] = np.zeros(shape, dtype=np.float64)
        elif name.endswith(".W1") or name.endswith(".W2"):
            fan_out, fan_in = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            values[name] = rng.uniform(-limit, limit, shape)
        else:
            values[name] = np.zeros(shape, dtype=np.float64)
    return ComparatorParams(config=config, values=values)


def add_attention_head(params: ComparatorParams) -> ComparatorParams:
    """Return params extended with a zero-initialized attention head."""
    if params.has_attention:
        return params
    out = params.copy()
    n, d2 = params.config.n_experts, params.config.input_dim
    out.values["attention.W"] = np.zeros((n, d2), dtype=np.float64)
    out.values["attention.b"] = np.zeros(n, dtype=np.float64)
    return out


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    """Sigmoid via the branch that never exponentiates a positive argument."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def stable_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def apply_activation(a: np.ndarray, kind: Activation, slope: float | None = None) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if kind is Activation.LRELU:
        return np.where(a > 0, a, LRELU_SLOPE * a)
    if kind is Activation.RELU:
        return np.where(a > 0, a, 0.0)
    if kind is Activation.PRELU:
        return np.where(a > 0, a, slope * a)
    return np.tanh(a)


def activation_grad(
    a: np.ndarray, z: np.ndarray, kind: Activation, slope: float | None = None
) -> np.ndarray:
    """d act(a) / d a, elementwise, with z = act(a) reused for tanh."""
    if kind is Activation.LRELU:
        return np.where(a > 0, 1.0, LRELU_SLOPE)
    if kind is Activation.RELU:
        return np.where(a > 0, 1.0, 0.0)
    if kind is Activation.PRELU:
        return np.where(a > 0, 1.0, slope)
    return 1.0 - z * z


@dataclass
class ForwardTrace:
    """Everything the backward pass needs to replay a forward exactly."""

    inputs: np.ndarray  # post-dropout features, shape (n, 2d)
    dropout_scale: np.ndarray | None  # multiplier mask, None in eval mode
    pre_acts: list[np.ndarray]  # per expert, shape (n, hidden)
    hidden: list[np.ndarray]  # per expert, shape (n, hidden)
    logits: np.ndarray  # shape (n, n_experts), pre-sigmoid
    probs: np.ndarray  # shape (n, n_experts)


def forward(
    params: ComparatorParams,
    features: np.ndarray,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
    dropout_scale: np.ndarray | None = None,
) -> tuple[np.ndarray, ForwardTrace]:
    """Run the cascade; returns per-relation probabilities and a trace.

    ``features`` is one concatenated vector or a batch of them. Train mode
    applies inverted dropout on the features (kept entries scaled by
    1/(1-p)), drawing the mask from ``rng`` unless an explicit
    ``dropout_scale`` multiplier is supplied for replay. Eval mode is
    deterministic and never drops.
    """
    cfg = params.config
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != cfg.input_dim:
        raise ValueError(f"feature dim {x.shape[1]} does not match model input {cfg.input_dim}")
    if not np.isfinite(x).all():
        raise FloatingPointError("non-finite entries in input features")

    scale = None
    if mode == "train" and cfg.dropout_p > 0.0:
        if dropout_scale is not None:
            scale = dropout_scale
        else:
            if rng is None:
                raise ValueError("train-mode forward with dropout needs an rng")
            keep = 1.0 - cfg.dropout_p
            scale = (rng.random(x.shape) < keep) / keep
        x = x * scale

    plan = hidden_layer_plan(cfg)
    n = x.shape[0]
    pre_acts: list[np.ndarray] = []
    hidden: list[np.ndarray] = []
    logits = np.empty((n, cfg.n_experts), dtype=np.float64)
    prev = x
    for i, layer in enumerate(plan):
        inp = x if layer.reads_input else prev
        w1 = params.values[layer.w_key]
        b1 = params.values[layer.b_key]
        slope = float(params.values[layer.prelu_key][0]) if layer.prelu_key else None
        a = inp @ w1.T + b1
        if not np.isfinite(a).all():
            raise FloatingPointError(f"non-finite pre-activation in expert {i}")
        z = apply_activation(a, cfg.activation, slope)
        w2 = params.values[f"expert{i}.W2"]
        b2 = params.values[f"expert{i}.b2"]
        logits[:, i] = z @ w2[0] + b2[0]
        pre_acts.append(a)
        hidden.append(z)
        prev = z
    if not np.isfinite(logits).all():
        raise FloatingPointError("non-finite expert logits")
    probs = stable_sigmoid(logits)
    trace = ForwardTrace(
        inputs=x,
        dropout_scale=scale,
        pre_acts=pre_acts,
        hidden=hidden,
        logits=logits,
        probs=probs,
    )
    return (probs[0] if single else probs), trace


def select_output(z2: np.ndarray, relation: KinshipRelation | str, config: ComparatorConfig) -> float | np.ndarray:
    """Pick the probability of the expert handling ``relation``.

    Equivalent to the dot product of z2 with the relation's one-hot code.
    """
    pos = config.relation_position(relation)
    z2 = np.asarray(z2)
    return float(z2[pos]) if z2.ndim == 1 else z2[:, pos]


def verify(
    params: ComparatorParams,
    f1: np.ndarray,
    f2: np.ndarray,
    relation: KinshipRelation | str,
    threshold: float | None = None,
) -> tuple[float, PairLabel]:
    """Score a pair under a stated relation and decide kin vs nonkin.

    Ties count as kin: the decision is kin iff score >= threshold. Falls
    back to the threshold stored with the model when none is given.
    """
    if threshold is None:
        threshold = params.threshold
    if threshold is None:
        raise ValueError("no threshold given and none stored with the model")
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {threshold}")
    z2, _ = forward(params, concat_features(f1, f2), mode="eval")
    score = float(select_output(z2, relation, params.config))
    return score, (PairLabel.KIN if score >= threshold else PairLabel.NONKIN)


def attention_forward(params: ComparatorParams, features: np.ndarray) -> np.ndarray:
    """Predict a relation distribution from the concatenated feature."""
    if not params.has_attention:
        raise ValueError("model has no attention head")
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    logits = x @ params.values["attention.W"].T + params.values["attention.b"]
    probs = stable_softmax(logits)
    return probs[0] if single else probs


def score_unknown(
    params: ComparatorParams, features: np.ndarray, mode: PoolingMode
) -> float | np.ndarray:
    """Kin score when the relation is unknown, by pooling expert outputs."""
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    z2, _ = forward(params, np.atleast_2d(x), mode="eval")
    if mode is PoolingMode.MEAN_POOL:
        out = z2.mean(axis=1)
    elif mode is PoolingMode.MAX_POOL:
        out = z2.max(axis=1)
    else:
        att = attention_forward(params, np.atleast_2d(x))
        if mode is PoolingMode.SOFT_ATTENTION:
            out = (att * z2).sum(axis=1)
        else:
            out = z2[np.arange(z2.shape[0]), att.argmax(axis=1)]
    return float(out[0]) if single else out
