"""Spatio-temporal wavenet: gated multi-branch TCN + graph convolution blocks.

Data flows [B, D, N, W] -> input 1x1 conv -> a stack of spatio-temporal
blocks (gated TCN, then graph convolution, wrapped in a residual add, with
a per-block 1x1 skip tap) -> ReLU/1x1-conv head -> flatten -> dense, giving
one forecast per target node. The single-scale variant uses one dilated
branch per block; the multi-scale variant concatenates several kernel
size / dilation branches before a 1x1 reduction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import graph
from .autodiff import Variable

SINGLE_SCALE = "single_scale"
MULTI_SCALE = "multi_scale"


class ConfigError(ValueError):
    pass


def default_branch_specs(variant: str, num_blocks: int):
    """Per-block (kernel_size, dilation) branch lists."""
    if variant == MULTI_SCALE:
        return [[(2, 1), (3, 2), (6, 3)] for _ in range(num_blocks)]
    if variant == SINGLE_SCALE:
        return [[(2, 2**i)] for i in range(num_blocks)]
    raise ConfigError(f"unknown variant {variant!r}")


@dataclass
class ModelConfig:
    variant: str = MULTI_SCALE
    num_blocks: int = 4
    residual_channels: int = 32
    skip_channels: int = 64
    head_channels: tuple = (128, 64)
    branch_specs: list = None  # list (per block) of [(K, d), ...]
    embedding_width: int = 10
    window: int = 48
    horizon: int = 6
    num_nodes: int = 5
    num_features: int = 4
    target_nodes: list = field(default_factory=lambda: [0, 3, 4])

    def __post_init__(self):
        if self.branch_specs is None:
            self.branch_specs = default_branch_specs(self.variant, self.num_blocks)
        self.validate()

    def validate(self):
        if self.num_blocks < 1:
            raise ConfigError("num_blocks must be >= 1")
        if len(self.branch_specs) != self.num_blocks:
            raise ConfigError("branch_specs must list one branch set per block")
        for branches in self.branch_specs:
            if not branches:
                raise ConfigError("every block needs at least one branch")
            if self.variant == SINGLE_SCALE and len(branches) != 1:
                raise ConfigError("single_scale blocks use exactly one branch")
            if self.variant == MULTI_SCALE and len(branches) < 2:
                raise ConfigError("multi_scale blocks need >= 2 branches")
            for k, d in branches:
                if k < 1 or d < 1:
                    raise ConfigError("kernel size and dilation must be >= 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "num_blocks": self.num_blocks,
            "residual_channels": self.residual_channels,
            "skip_channels": self.skip_channels,
            "head_channels": list(self.head_channels),
            "branch_specs": [[list(b) for b in block] for block in self.branch_specs],
            "embedding_width": self.embedding_width,
            "window": self.window,
            "horizon": self.horizon,
            "num_nodes": self.num_nodes,
            "num_features": self.num_features,
            "target_nodes": list(self.target_nodes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["head_channels"] = tuple(d["head_channels"])
        d["branch_specs"] = [[tuple(b) for b in block] for block in d["branch_specs"]]
        return cls(**d)


def receptive_field(config: ModelConfig) -> int:
    """Farthest-back input hour (inclusive) that can reach the last output step."""
    rf = 1
    for branches in config.branch_specs:
        rf += max((k - 1) * d for k, d in branches)
    return rf


def _uniform_fan_in(rng, shape, fan_in):
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


class _TcnSubunit:
    """Parallel dilated causal branches, concatenated and 1x1-reduced."""

    def __init__(self, prefix, channels, branches, rng):
        self.prefix = prefix
        self.branches = list(branches)
        self.kernels = []
        for i, (k, _d) in enumerate(self.branches):
            kern = Variable(_uniform_fan_in(rng, (channels, channels, k), channels * k))
            self.kernels.append((f"{prefix}.branch{i}.kernel", kern))
        concat_width = channels * len(self.branches)
        self.reduce_w = Variable(_uniform_fan_in(rng, (channels, concat_width), concat_width))
        self.reduce_b = Variable(np.zeros(channels))

    def forward(self, x: Variable) -> Variable:
        outs = [
            ad.conv_time_dilated_causal(x, kern, d)
            for (name, kern), (_k, d) in zip(self.kernels, self.branches)
        ]
        cat = outs[0] if len(outs) == 1 else ad.concat_channels(outs)
        return ad.conv_1x1(cat, self.reduce_w, self.reduce_b)

    def parameters(self):
        return self.kernels + [
            (f"{self.prefix}.reduce.weight", self.reduce_w),
            (f"{self.prefix}.reduce.bias", self.reduce_b),
        ]


class _StBlock:
    """Gated TCN followed by a graph convolution, with residual and skip tap."""

    def __init__(self, prefix, config: ModelConfig, branches, rng):
        c = config.residual_channels
        self.prefix = prefix
        self.tcn_a = _TcnSubunit(f"{prefix}.tcn_a", c, branches, rng)
        self.tcn_b = _TcnSubunit(f"{prefix}.tcn_b", c, branches, rng)
        self.skip_w = Variable(_uniform_fan_in(rng, (config.skip_channels, c), c))
        self.skip_b = Variable(np.zeros(config.skip_channels))
        self.gcn_theta = Variable(_uniform_fan_in(rng, (c, c), c))
        self.gcn_bias = Variable(np.zeros(c))

    def forward(self, x: Variable, adj: graph.AdjacencyMatrix):
        gated = ad.multiply(ad.tanh(self.tcn_a.forward(x)), ad.sigmoid(self.tcn_b.forward(x)))
        skip_tap = ad.conv_1x1(gated, self.skip_w, self.skip_b)
        block_out = ad.add(graph.gcn_forward(gated, adj, self.gcn_theta, self.gcn_bias), x)
        return block_out, skip_tap

    def parameters(self):
        return (
            self.tcn_a.parameters()
            + self.tcn_b.parameters()
            + [
                (f"{self.prefix}.skip.weight", self.skip_w),
                (f"{self.prefix}.skip.bias", self.skip_b),
                (f"{self.prefix}.gcn.theta", self.gcn_theta),
                (f"{self.prefix}.gcn.bias", self.gcn_bias),
            ]
        )


class Network:
    """The assembled forecaster; all blocks share one adjacency."""

    def __init__(self, config: ModelConfig, seed: int = 0, node_order=None):
        self.config = config
        self.seed = seed
        rng = np.random.default_rng(seed)
        c = config.residual_channels
        self.node_order = list(node_order) if node_order else [
            f"node{i}" for i in range(config.num_nodes)
        ]
        self.input_w = Variable(
            _uniform_fan_in(rng, (c, config.num_features), config.num_features)
        )
        self.input_b = Variable(np.zeros(c))
        self.embeddings = graph.NodeEmbeddings(config.num_nodes, config.embedding_width, rng)
        self.blocks = [
            _StBlock(f"block{i}", config, config.branch_specs[i], rng)
            for i in range(config.num_blocks)
        ]
        h1, h2 = config.head_channels
        self.head1_w = Variable(_uniform_fan_in(rng, (h1, config.skip_channels), config.skip_channels))
        self.head1_b = Variable(np.zeros(h1))
        self.head2_w = Variable(_uniform_fan_in(rng, (h2, h1), h1))
        self.head2_b = Variable(np.zeros(h2))
        flat = h2 * config.num_nodes * config.window
        n_out = len(config.target_nodes)
        self.dense_w = Variable(_uniform_fan_in(rng, (n_out, flat), flat))
        self.dense_b = Variable(np.zeros(n_out))

    def adjacency(self) -> graph.AdjacencyMatrix:
        return graph.adjacency_softmax(self.embeddings, self.node_order)

    def forward(self, x) -> Variable:
        """x: [B, D, N, W] -> forecasts [B, n_target_nodes]."""
        x = ad.as_variable(x)
        cfg = self.config
        expect = (cfg.num_features, cfg.num_nodes, cfg.window)
        if x.value.ndim != 4 or x.value.shape[1:] != expect:
            raise ad.ShapeMismatchError(
                f"input shape {x.value.shape} does not match config [B,{expect[0]},{expect[1]},{expect[2]}]"
            )
        adj = self.adjacency()
        h = ad.conv_1x1(x, self.input_w, self.input_b)
        skip_sum = None
        for block in self.blocks:
            h, tap = block.forward(h, adj)
            skip_sum = tap if skip_sum is None else ad.add(skip_sum, tap)
        out = ad.conv_1x1(ad.relu(skip_sum), self.head1_w, self.head1_b)
        out = ad.conv_1x1(ad.relu(out), self.head2_w, self.head2_b)
        return ad.dense(ad.flatten(out), self.dense_w, self.dense_b)

    def temporal_stack(self, x) -> Variable:
        """Block-stack output [B, C, N, W] before the head; used by the
        causality / receptive-field probes (the flatten+dense head mixes
        every timestep by construction)."""
        x = ad.as_variable(x)
        adj = self.adjacency()
        h = ad.conv_1x1(x, self.input_w, self.input_b)
        for block in self.blocks:
            h, _tap = block.forward(h, adj)
        return h

    def parameters(self):
        """Ordered (name, Variable) pairs covering every learnable tensor."""
        params = [
            ("input_proj.weight", self.input_w),
            ("input_proj.bias", self.input_b),
        ]
        params += self.embeddings.parameters()
        for block in self.blocks:
            params += block.parameters()
        params += [
            ("head.conv1.weight", self.head1_w),
            ("head.conv1.bias", self.head1_b),
            ("head.conv2.weight", self.head2_w),
            ("head.conv2.bias", self.head2_b),
            ("head.dense.weight", self.dense_w),
            ("head.dense.bias", self.dense_b),
        ]
        names = [n for n, _ in params]
        assert len(names) == len(set(names)), "duplicate parameter name"
        return params

    def structurally_dead(self):
        """Parameter names that can never receive gradient: only the skip
        taps feed the head, so the final block's graph convolution output
        is discarded and its weights stay at their initial values."""
        last = f"block{self.config.num_blocks - 1}"
        return {f"{last}.gcn.theta", f"{last}.gcn.bias"}

    def zero_grad(self):
        for _, p in self.parameters():
            p.zero_grad()

    def state_dict(self) -> dict:
        return {name: p.value.copy() for name, p in self.parameters()}

    def load_state_dict(self, state: dict):
        params = dict(self.parameters())
        if set(state) != set(params):
            raise KeyError(
                f"parameter names disagree: missing {set(params) - set(state)}, "
                f"unexpected {set(state) - set(params)}"
            )
        for name, value in state.items():
            p = params[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != p.value.shape:
                raise ad.ShapeMismatchError(
                    f"{name}: checkpoint shape {value.shape} != model shape {p.value.shape}"
                )
            p.value = value.copy()
