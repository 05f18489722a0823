"""Downstream head architecture.

One head is: softmax-weighted averaging over encoder layers, a stack of
1D-pointwise (per-frame) convolutions with ReLU between them, temporal mean
pooling, then a fully connected stack per task.  Multitask heads share the
layer weights and conv trunk and differ only in their FC stacks; the two
shipped pairings are age+sex and speech-flow+disfluency-type.

All parameters live in plain numpy arrays; forward and backward passes are
written out explicitly so training is bit-reproducible run to run.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import taxonomy
from ..errors import DomainError, NumericalError, ShapeError
from .losses import softmax

LOSS_KL = "kl"
LOSS_CCC = "ccc"
LOSS_MULTILABEL = "multilabel"
_LOSSES = (LOSS_KL, LOSS_CCC, LOSS_MULTILABEL)


def _default_loss(trait: str) -> str:
    if trait == "age":
        # trained as a squashed-scalar regression and binned for reporting
        return LOSS_CCC
    kind = taxonomy.default_taxonomy().category(trait).kind
    return {
        taxonomy.SINGLE_LABEL: LOSS_KL,
        taxonomy.MULTI_LABEL: LOSS_MULTILABEL,
        taxonomy.SCALAR_REGRESSION: LOSS_CCC,
    }[kind]


def task_arity(trait: str, loss: str) -> int:
    if loss == LOSS_CCC:
        return 1
    return taxonomy.default_taxonomy().category(trait).num_labels


@dataclass(frozen=True)
class TaskSpec:
    """One prediction task inside a head: trait, training loss, loss weight."""

    trait: str
    loss: str
    weight: float = 1.0

    def __post_init__(self):
        if self.loss not in _LOSSES:
            raise DomainError(f"unknown loss {self.loss!r}")
        if self.weight <= 0:
            raise DomainError("task weight must be positive")
        taxonomy.default_taxonomy().category(self.trait)  # raises on unknown trait

    @property
    def output_arity(self) -> int:
        return task_arity(self.trait, self.loss)


@dataclass(frozen=True)
class MultitaskSpec:
    """Architecture plus the tasks that share it."""

    tasks: tuple[TaskSpec, ...]
    layers: int
    dims: int
    conv_channels: int = 0  # 0 means same as dims
    conv_layers: int = 3
    hidden_dims: tuple[int, ...] = ()
    shared_trunk: bool = True
    seed: int = 0

    def __post_init__(self):
        if not self.tasks:
            raise DomainError("at least one task required")
        traits = [t.trait for t in self.tasks]
        if len(set(traits)) != len(traits):
            raise DomainError("duplicate task traits")
        if self.layers < 1 or self.dims < 1 or self.conv_layers < 1:
            raise ShapeError("layers, dims and conv_layers must be >= 1")

    @property
    def channels(self) -> int:
        return self.conv_channels or self.dims

    @property
    def traits(self) -> tuple[str, ...]:
        return tuple(t.trait for t in self.tasks)

    def task(self, trait: str) -> TaskSpec:
        for t in self.tasks:
            if t.trait == trait:
                return t
        raise DomainError(f"trait {trait!r} not in this head (has {self.traits})")


@dataclass(frozen=True)
class HeadConfig:
    """Single-trait head description; sugar over a one-task MultitaskSpec."""

    trait: str
    layers: int
    dims: int
    conv_channels: int = 0
    conv_layers: int = 3
    hidden_dims: tuple[int, ...] = ()
    output_arity: int = 0  # 0 means derived from the trait
    seed: int = 0
    loss: str = ""

    def as_multitask(self) -> MultitaskSpec:
        loss = self.loss or _default_loss(self.trait)
        arity = task_arity(self.trait, loss)
        if self.output_arity and self.output_arity != arity:
            raise DomainError(
                f"output_arity {self.output_arity} does not match trait "
                f"{self.trait!r} with loss {loss!r} (expected {arity})"
            )
        return MultitaskSpec(
            tasks=(TaskSpec(self.trait, loss),),
            layers=self.layers,
            dims=self.dims,
            conv_channels=self.conv_channels,
            conv_layers=self.conv_layers,
            hidden_dims=tuple(self.hidden_dims),
            seed=self.seed,
        )


def single_task_spec(trait: str, layers: int, dims: int, *, loss: str | None = None, **kw) -> MultitaskSpec:
    return MultitaskSpec(
        tasks=(TaskSpec(trait, loss or _default_loss(trait)),), layers=layers, dims=dims, **kw
    )


def age_sex_spec(layers: int, dims: int, **kw) -> MultitaskSpec:
    """Joint age (squashed-scalar, concordance loss) and sex (2-class) head."""
    return MultitaskSpec(
        tasks=(TaskSpec("age", LOSS_CCC), TaskSpec("sex", LOSS_KL)),
        layers=layers,
        dims=dims,
        **kw,
    )


def speech_flow_spec(layers: int, dims: int, **kw) -> MultitaskSpec:
    """Joint fluent/disfluent head plus multilabel disfluency-type head."""
    return MultitaskSpec(
        tasks=(TaskSpec("speech_flow", LOSS_KL), TaskSpec("disfluency_type", LOSS_MULTILABEL)),
        layers=layers,
        dims=dims,
        **kw,
    )


@dataclass
class HeadWeights:
    """All trainable parameters of one (possibly multitask) head."""

    spec: MultitaskSpec
    layer_logits: np.ndarray
    conv: list[tuple[np.ndarray, np.ndarray]]
    heads: dict[str, list[tuple[np.ndarray, np.ndarray]]]
    taxonomy_hash: str = field(default_factory=taxonomy.taxonomy_hash)

    def copy(self) -> "HeadWeights":
        return HeadWeights(
            spec=self.spec,
            layer_logits=self.layer_logits.copy(),
            conv=[(w.copy(), b.copy()) for w, b in self.conv],
            heads={k: [(w.copy(), b.copy()) for w, b in st] for k, st in self.heads.items()},
            taxonomy_hash=self.taxonomy_hash,
        )

    def only_trait(self) -> str:
        if len(self.spec.tasks) != 1:
            raise DomainError(
                f"head covers {self.spec.traits}; pass trait= to pick one"
            )
        return self.spec.tasks[0].trait


def _fc_dims(spec: MultitaskSpec, trait: str) -> list[int]:
    return [spec.channels, *spec.hidden_dims, spec.task(trait).output_arity]


def init_weights(spec: MultitaskSpec, dtype=np.float32) -> HeadWeights:
    """Seeded init: random conv/hidden layers, zero output layers and layer logits.

    Zero layer logits start the layer averaging uniform; zero output layers
    make the initial scores exactly zero, so the first gradient step is a
    class-mean direction and runs are trivially comparable across seeds.
    """
    rng = np.random.default_rng(spec.seed)
    layer_logits = np.zeros(spec.layers, dtype=dtype)
    conv = []
    fan_in = spec.dims
    for _ in range(spec.conv_layers):
        w = rng.standard_normal((spec.channels, fan_in)) * np.sqrt(2.0 / fan_in)
        conv.append((w.astype(dtype), np.zeros(spec.channels, dtype=dtype)))
        fan_in = spec.channels
    heads = {}
    for task in spec.tasks:
        dims = _fc_dims(spec, task.trait)
        stack = []
        for j in range(len(dims) - 1):
            d_in, d_out = dims[j], dims[j + 1]
            if j == len(dims) - 2:
                w = np.zeros((d_out, d_in), dtype=dtype)
            else:
                w = (rng.standard_normal((d_out, d_in)) * np.sqrt(2.0 / d_in)).astype(dtype)
            stack.append((w, np.zeros(d_out, dtype=dtype)))
        heads[task.trait] = stack
    return HeadWeights(spec=spec, layer_logits=layer_logits, conv=conv, heads=heads)


def layer_weights(layer_logits: np.ndarray) -> np.ndarray:
    """Softmax-normalized layer averaging weights (strictly positive, sum 1)."""
    return softmax(np.asarray(layer_logits, dtype=float))


def weighted_layer_average(stack, layer_logits: np.ndarray) -> np.ndarray:
    """Collapse an (L, T, D) stack into (T, D) features with softmax layer weights."""
    values = stack.values if hasattr(stack, "values") else np.asarray(stack)
    if values.ndim != 3:
        raise ShapeError(f"expected an (L, T, D) stack, got shape {values.shape}")
    logits = np.asarray(layer_logits)
    if logits.ndim != 1 or logits.shape[0] != values.shape[0]:
        raise ShapeError(
            f"layer logits length {logits.shape} does not match stack layers {values.shape[0]}"
        )
    w = layer_weights(logits)
    return np.tensordot(w, values, axes=(0, 0))


def _trunk_forward(features: np.ndarray, weights: HeadWeights):
    """Conv stack + temporal mean pool; returns (pooled, cache)."""
    k = len(weights.conv)
    hs = [features]
    zs = []
    h = features
    for i, (w, b) in enumerate(weights.conv):
        z = h @ w.T + b
        zs.append(z)
        h = np.maximum(z, 0.0) if i < k - 1 else z
        hs.append(h)
    pooled = h.mean(axis=0)
    return pooled, (hs, zs)


def _fc_forward(pooled: np.ndarray, stack):
    m = len(stack)
    gs = [pooled]
    zs = []
    g = pooled
    for j, (w, b) in enumerate(stack):
        z = g @ w.T + b
        zs.append(z)
        g = np.maximum(z, 0.0) if j < m - 1 else z
        gs.append(g)
    return g, (gs, zs)


def forward(features: np.ndarray, weights: HeadWeights, trait: str | None = None) -> np.ndarray:
    """Run one head on (T, D) features and return its raw scores.

    The trunk is pointwise in time, so scores are invariant to frame order.
    """
    features = np.asarray(features)
    if features.ndim != 2:
        raise ShapeError(f"expected (T, D) features, got shape {features.shape}")
    if features.shape[1] != weights.spec.dims:
        raise ShapeError(
            f"feature dim {features.shape[1]} does not match head dims {weights.spec.dims}"
        )
    trait = trait or weights.only_trait()
    if trait not in weights.heads:
        raise DomainError(f"head has no task {trait!r} (has {tuple(weights.heads)})")
    pooled, _ = _trunk_forward(features, weights)
    scores, _ = _fc_forward(pooled, weights.heads[trait])
    if not np.isfinite(scores).all():
        raise NumericalError("non-finite head scores")
    return scores


def zero_grads(weights: HeadWeights) -> dict:
    return {
        "layer_logits": np.zeros_like(weights.layer_logits, dtype=float),
        "conv": [(np.zeros_like(w, dtype=float), np.zeros_like(b, dtype=float)) for w, b in weights.conv],
        "heads": {
            k: [(np.zeros_like(w, dtype=float), np.zeros_like(b, dtype=float)) for w, b in st]
            for k, st in weights.heads.items()
        },
    }


def forward_sample(stack_values: np.ndarray, weights: HeadWeights):
    """Full forward for one (L, T, D) stack; returns (scores-by-trait, cache)."""
    logits = np.asarray(weights.layer_logits, dtype=float)
    w_layers = layer_weights(logits)
    features = np.tensordot(w_layers, stack_values, axes=(0, 0))
    pooled, trunk_cache = _trunk_forward(features, weights)
    scores = {}
    fc_caches = {}
    for trait, stack in weights.heads.items():
        scores[trait], fc_caches[trait] = _fc_forward(pooled, stack)
    cache = {
        "stack": stack_values,
        "w_layers": w_layers,
        "features": features,
        "trunk": trunk_cache,
        "fc": fc_caches,
    }
    return scores, cache


def backward_sample(dscores: dict, cache: dict, weights: HeadWeights, grads: dict):
    """Accumulate parameter gradients for one sample into ``grads``.

    ``dscores`` maps trait -> dLoss/dscores for that trait (may cover a subset
    of the head's tasks).
    """
    hs, zs = cache["trunk"]
    t_frames = hs[-1].shape[0]
    d_pooled = np.zeros(weights.spec.channels, dtype=float)
    for trait, d in dscores.items():
        stack = weights.heads[trait]
        gs, fzs = cache["fc"][trait]
        d = np.asarray(d, dtype=float)
        for j in range(len(stack) - 1, -1, -1):
            w, _ = stack[j]
            gw, gb = grads["heads"][trait][j]
            gw += np.outer(d, gs[j])
            gb += d
            d = d @ w
            if j > 0:
                d = d * (fzs[j - 1] > 0)
        d_pooled += d
    # mean pool distributes the gradient uniformly over frames
    dh = np.repeat(d_pooled[None, :] / t_frames, t_frames, axis=0)
    k = len(weights.conv)
    for i in range(k - 1, -1, -1):
        w, _ = weights.conv[i]
        dz = dh if i == k - 1 else dh * (zs[i] > 0)
        gw, gb = grads["conv"][i]
        gw += dz.T @ hs[i]
        gb += dz.sum(axis=0)
        dh = dz @ w
    dfeatures = dh
    # layer logits through the softmax: dL/dl_j = w_j (s_j - sum_m w_m s_m)
    s = np.tensordot(cache["stack"], dfeatures, axes=([1, 2], [0, 1]))
    w_layers = cache["w_layers"]
    grads["layer_logits"] += w_layers * (s - float(w_layers @ s))


def apply_update(weights: HeadWeights, grads: dict, lr: float):
    """One plain gradient step, in place, preserving parameter dtypes."""
    weights.layer_logits -= (lr * grads["layer_logits"]).astype(weights.layer_logits.dtype)
    for (w, b), (gw, gb) in zip(weights.conv, grads["conv"]):
        w -= (lr * gw).astype(w.dtype)
        b -= (lr * gb).astype(b.dtype)
    for trait, stack in weights.heads.items():
        for (w, b), (gw, gb) in zip(stack, grads["heads"][trait]):
            w -= (lr * gw).astype(w.dtype)
            b -= (lr * gb).astype(b.dtype)


def scale_grads(grads: dict, factor: float):
    grads["layer_logits"] *= factor
    for gw, gb in grads["conv"]:
        gw *= factor
        gb *= factor
    for stack in grads["heads"].values():
        for gw, gb in stack:
            gw *= factor
            gb *= factor


def cast_weights(weights: HeadWeights, dtype) -> HeadWeights:
    """Return a copy with all parameter arrays cast to ``dtype`` (for tests)."""
    out = weights.copy()
    out.layer_logits = out.layer_logits.astype(dtype)
    out.conv = [(w.astype(dtype), b.astype(dtype)) for w, b in out.conv]
    out.heads = {k: [(w.astype(dtype), b.astype(dtype)) for w, b in st] for k, st in out.heads.items()}
    return out


def spec_to_dict(spec: MultitaskSpec) -> dict:
    return {
        "tasks": [{"trait": t.trait, "loss": t.loss, "weight": t.weight} for t in spec.tasks],
        "layers": spec.layers,
        "dims": spec.dims,
        "conv_channels": spec.conv_channels,
        "conv_layers": spec.conv_layers,
        "hidden_dims": list(spec.hidden_dims),
        "shared_trunk": spec.shared_trunk,
        "seed": spec.seed,
    }


def spec_from_dict(doc: dict) -> MultitaskSpec:
    return MultitaskSpec(
        tasks=tuple(TaskSpec(t["trait"], t["loss"], t.get("weight", 1.0)) for t in doc["tasks"]),
        layers=doc["layers"],
        dims=doc["dims"],
        conv_channels=doc.get("conv_channels", 0),
        conv_layers=doc.get("conv_layers", 3),
        hidden_dims=tuple(doc.get("hidden_dims", ())),
        shared_trunk=doc.get("shared_trunk", True),
        seed=doc.get("seed", 0),
    )
