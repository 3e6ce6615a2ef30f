"""Three-branch complex 3D-CNN classifier assembled from :mod:`polcvnn.layers`.

Each branch stacks 1, 2 or 3 complex convolutions (shallow, medium, deep) on
the same ``window x window x 6`` patch; the branch outputs are concatenated,
optionally recalibrated by a squeeze-and-excitation block, flattened and fed
to a complex fully-connected head whose output moduli go through a softmax.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import layers as L
from .seeding import derive_rng

BRANCH_DEPTH = {"shallow": 1, "medium": 2, "deep": 3}
BRANCH_ALIASES = {"s": "shallow", "m": "medium", "d": "deep"}
ATTENTION = ("none", "before_fusion", "after_fusion")
ATTENTION_ALIASES = {"before": "before_fusion", "after": "after_fusion"}


@dataclass(frozen=True)
class ModelConfig:
    window: int = 13
    in_channels: int = 6
    num_classes: int = 15
    filters_per_layer: int = 16
    branches: tuple = ("shallow", "medium", "deep")
    attention_placement: str = "after_fusion"
    se_reduction: int = 4
    dropout_rate: float = 0.25
    fc_sizes: tuple = (128, 64)
    kernel_size: int = 3

    def __post_init__(self):
        names = []
        for b in self.branches:
            b = BRANCH_ALIASES.get(b.lower(), b.lower())
            if b not in BRANCH_DEPTH:
                raise ValueError(f"unknown branch {b!r}")
            names.append(b)
        # canonical order keeps parameter layout independent of how branches were listed
        object.__setattr__(self, "branches", tuple(sorted(set(names), key=BRANCH_DEPTH.get)))
        att = ATTENTION_ALIASES.get(self.attention_placement, self.attention_placement)
        object.__setattr__(self, "attention_placement", att)
        object.__setattr__(self, "fc_sizes", tuple(int(s) for s in self.fc_sizes))
        self.validate()

    def validate(self):
        if not self.branches:
            raise ValueError("invalid config: at least one branch is required")
        if self.window < 3 or self.window % 2 == 0:
            raise ValueError(f"invalid config: window must be odd and >= 3, got {self.window}")
        if self.attention_placement not in ATTENTION:
            raise ValueError(f"invalid config: attention placement {self.attention_placement!r}")
        if self.num_classes < 2:
            raise ValueError("invalid config: need at least 2 classes")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("invalid config: dropout rate must be in [0, 1)")
        if self.kernel_size < 1 or self.filters_per_layer < 1 or self.in_channels < 1:
            raise ValueError("invalid config: sizes must be positive")
        r = self.se_reduction
        if self.attention_placement == "after_fusion" and (
                r < 1 or self.fusion_channels % r):
            raise ValueError(f"invalid config: se_reduction {r} must divide {self.fusion_channels}")
        if self.attention_placement == "before_fusion" and (
                r < 1 or self.filters_per_layer % r):
            raise ValueError(
                f"invalid config: se_reduction {r} must divide {self.filters_per_layer}")

    @property
    def fusion_channels(self) -> int:
        return self.filters_per_layer * len(self.branches)

    @property
    def flatten_length(self) -> int:
        return self.window * self.window * self.in_channels * self.fusion_channels

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        raw = {}
        for line in text.splitlines():
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            key, _, value = line.partition("=")
            raw[key.strip()] = value.strip()
        kwargs = {}
        for f in fields(cls):
            if f.name not in raw:
                continue
            value = raw[f.name]
            default = getattr(cls, f.name, None)
            if f.name == "branches":
                kwargs[f.name] = tuple(v for v in value.split(",") if v)
            elif f.name == "fc_sizes":
                kwargs[f.name] = tuple(int(v) for v in value.split(",") if v)
            elif isinstance(default, float):
                kwargs[f.name] = float(value)
            elif isinstance(default, int):
                kwargs[f.name] = int(value)
            else:
                kwargs[f.name] = value
        return cls(**kwargs)

    def as_dict(self) -> dict:
        return asdict(self)


def parameter_shapes(config: ModelConfig) -> dict:
    """Ordered ``name -> (shape, is_complex)`` for every trainable tensor."""
    k = config.kernel_size
    f = config.filters_per_layer
    shapes = {}
    for branch in config.branches:
        cin = 1
        for layer in range(1, BRANCH_DEPTH[branch] + 1):
            shapes[f"{branch}.conv{layer}.weight"] = ((k, k, k, cin, f), True)
            shapes[f"{branch}.conv{layer}.bias"] = ((f,), True)
            cin = f
        if config.attention_placement == "before_fusion":
            shapes[f"{branch}.se.w1"] = ((f // config.se_reduction, f), False)
            shapes[f"{branch}.se.w2"] = ((f, f // config.se_reduction), False)
    if config.attention_placement == "after_fusion":
        c = config.fusion_channels
        shapes["se.w1"] = ((c // config.se_reduction, c), False)
        shapes["se.w2"] = ((c, c // config.se_reduction), False)
    fan_in = config.flatten_length
    for i, size in enumerate(config.fc_sizes, start=1):
        shapes[f"fc{i}.weight"] = ((fan_in, size), True)
        shapes[f"fc{i}.bias"] = ((size,), True)
        fan_in = size
    shapes["out.weight"] = ((fan_in, config.num_classes), True)
    shapes["out.bias"] = ((config.num_classes,), True)
    return shapes


def count_parameters(config: ModelConfig) -> tuple[int, int]:
    """``(complex_count, real_count)`` of scalar parameters."""
    n_complex = n_real = 0
    for shape, is_complex in parameter_shapes(config).values():
        if is_complex:
            n_complex += int(np.prod(shape))
        else:
            n_real += int(np.prod(shape))
    return n_complex, n_real


@dataclass
class Network:
    """Parameters plus the Adam state that travels with them in checkpoints."""

    config: ModelConfig
    params: dict
    adam_m: dict = field(default_factory=dict)
    adam_v: dict = field(default_factory=dict)
    step: int = 0
    best_val_loss: float = float("inf")

    def __post_init__(self):
        for name, p in self.params.items():
            self.adam_m.setdefault(name, np.zeros_like(p))
            self.adam_v.setdefault(name, np.zeros_like(p))

    def copy(self) -> "Network":
        return Network(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.adam_m.items()},
            {k: v.copy() for k, v in self.adam_v.items()},
            self.step,
            self.best_val_loss,
        )


def build(config: ModelConfig, seed: int = 0) -> Network:
    rng = derive_rng(seed, "init")
    k3 = config.kernel_size ** 3
    params = {}
    for name, (shape, is_complex) in parameter_shapes(config).items():
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=np.complex128)
        elif ".conv" in name:
            params[name] = L.glorot_complex(rng, shape, k3 * shape[3], k3 * shape[4])
        elif is_complex:
            params[name] = L.glorot_complex(rng, shape, shape[0], shape[1])
        else:
            params[name] = L.glorot_real(rng, shape, shape[1], shape[0])
    return Network(config, params)


def _check_batch(net: Network, batch: np.ndarray):
    w = net.config.window
    expected = (w, w, net.config.in_channels)
    if batch.ndim != 4 or batch.shape[1:] != expected:
        raise ValueError(f"shape mismatch: batch {batch.shape}, expected (B, {w}, {w}, "
                         f"{net.config.in_channels})")


def _forward(net, batch, training=False, rng=None):
    cfg = net.config
    p = net.params
    _check_batch(net, batch)
    x = np.asarray(batch, dtype=np.complex128)[..., None]
    cache = {"input": x, "branch": {}}
    feats = []
    for branch in cfg.branches:
        h = x
        steps = []
        for layer in range(1, BRANCH_DEPTH[branch] + 1):
            pre = L.complex_conv3d(h, p[f"{branch}.conv{layer}.weight"],
                                   p[f"{branch}.conv{layer}.bias"])
            steps.append((h, pre))
            h = L.crelu(pre)
        se = None
        if cfg.attention_placement == "before_fusion":
            out, se_cache = L.se_block_forward(h, p[f"{branch}.se.w1"], p[f"{branch}.se.w2"])
            se = (h, se_cache)
            h = out
        cache["branch"][branch] = (steps, se)
        feats.append(h)
    u = L.concat_channels(feats)
    cache["concat"] = u
    if cfg.attention_placement == "after_fusion":
        out, se_cache = L.se_block_forward(u, p["se.w1"], p["se.w2"])
        cache["se"] = (u, se_cache)
        u = out
    fused = u
    h = fused.reshape(fused.shape[0], -1)
    dense_steps = []
    for i in range(1, len(cfg.fc_sizes) + 1):
        pre = L.dense(h, p[f"fc{i}.weight"], p[f"fc{i}.bias"])
        act = L.crelu(pre)
        mask = None
        if training and cfg.dropout_rate > 0:
            mask = L.dropout_mask(act.shape, cfg.dropout_rate, rng)
            act = act * mask
        dense_steps.append((h, pre, mask))
        h = act
    logits = L.dense(h, p["out.weight"], p["out.bias"])
    cache["dense"] = dense_steps
    cache["head_input"] = h
    cache["fused"] = fused
    cache["logits"] = logits
    prob = L.magnitude_softmax(logits)
    cache["prob"] = prob
    return prob, cache


def forward(net: Network, batch: np.ndarray, training: bool = False, rng=None) -> np.ndarray:
    """Class probabilities ``(B, num_classes)`` for a batch of ``(B, w, w, 6)`` patches."""
    if training and rng is None:
        raise ValueError("training mode needs a random generator for dropout")
    return _forward(net, batch, training, rng)[0]


def trace_shapes(net: Network, batch: np.ndarray) -> dict:
    """Per-sample shapes of the intermediate tensors for one inference pass."""
    _, cache = _forward(net, batch)
    shapes = {}
    for branch, (steps, se) in cache["branch"].items():
        last_pre = steps[-1][1]
        shapes[branch] = last_pre.shape[1:]
    shapes["concat"] = cache["concat"].shape[1:]
    shapes["attention"] = cache["fused"].shape[1:]
    shapes["flatten"] = (int(np.prod(cache["fused"].shape[1:])),)
    for i, (h, pre, _) in enumerate(cache["dense"], start=1):
        shapes[f"fc{i}"] = pre.shape[1:]
    shapes["logits"] = cache["logits"].shape[1:]
    return shapes


def one_hot(labels, num_classes):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 1 or labels.max() > num_classes):
        raise ValueError(f"label out of range: expected 1..{num_classes}")
    out = np.zeros((labels.size, num_classes))
    out[np.arange(labels.size), labels - 1] = 1.0
    return out


def loss_and_grads(net: Network, batch, labels, training=False, rng=None):
    """Mean cross-entropy over the batch and its gradient for every parameter."""
    cfg = net.config
    p = net.params
    y = one_hot(labels, cfg.num_classes)
    if len(y) != len(batch):
        raise ValueError("shape mismatch: labels and batch differ in length")
    if training and rng is None:
        raise ValueError("training mode needs a random generator for dropout")
    prob, cache = _forward(net, batch, training, rng)
    loss = L.cross_entropy(prob, y)
    grads = {}

    g = L.magnitude_softmax_backward(L.cross_entropy_backward(prob, y), cache["logits"], prob)
    g, grads["out.weight"], grads["out.bias"] = L.dense_backward(
        g, cache["head_input"], p["out.weight"])
    for i in range(len(cfg.fc_sizes), 0, -1):
        h, pre, mask = cache["dense"][i - 1]
        if mask is not None:
            g = g * mask
        g = L.crelu_backward(g, pre)
        g, grads[f"fc{i}.weight"], grads[f"fc{i}.bias"] = L.dense_backward(
            g, h, p[f"fc{i}.weight"])
    g = g.reshape(cache["fused"].shape)
    if cfg.attention_placement == "after_fusion":
        u, se_cache = cache["se"]
        g, grads["se.w1"], grads["se.w2"] = L.se_block_backward(
            g, u, p["se.w1"], p["se.w2"], se_cache)
    sizes = [cfg.filters_per_layer] * len(cfg.branches)
    for branch, gb in zip(cfg.branches, L.concat_channels_backward(g, sizes)):
        steps, se = cache["branch"][branch]
        if se is not None:
            h, se_cache = se
            gb, grads[f"{branch}.se.w1"], grads[f"{branch}.se.w2"] = L.se_block_backward(
                gb, h, p[f"{branch}.se.w1"], p[f"{branch}.se.w2"], se_cache)
        for layer in range(len(steps), 0, -1):
            h, pre = steps[layer - 1]
            gb = L.crelu_backward(gb, pre)
            gb, grads[f"{branch}.conv{layer}.weight"], grads[f"{branch}.conv{layer}.bias"] = (
                L.complex_conv3d_backward(gb, h, p[f"{branch}.conv{layer}.weight"],
                                          need_input_grad=layer > 1))
    for name, param in p.items():
        if not np.iscomplexobj(param):
            grads[name] = np.real(grads[name])
    return loss, {name: grads[name] for name in p}
