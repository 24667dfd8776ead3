"""HyperGT forward pass.

Nodes and hyperedges are stacked into one sequence of ``n + m`` instances,
shifted by incidence-based positional encodings, and passed through dense
pre-LN transformer layers. Logits are read from the node rows only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import numerics as nx
from .hypergraph import Hypergraph
from .numerics import Parameter, Tensor


@dataclass(frozen=True)
class HyperGTConfig:
    d: int = 64
    layers: int = 2
    heads: int = 4
    d_k: int | None = None
    ffn_hidden: int | None = None
    c: int = 2
    use_node_pe: bool = True
    use_edge_pe: bool = True
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.d_k is None:
            if self.d % self.heads:
                raise ValueError(f"d={self.d} is not divisible by heads={self.heads}")
            object.__setattr__(self, "d_k", self.d // self.heads)
        if self.d != self.heads * self.d_k:
            raise ValueError(f"d must equal heads * d_k ({self.d} != {self.heads}*{self.d_k})")
        if self.ffn_hidden is None:
            object.__setattr__(self, "ffn_hidden", 2 * self.d)
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if self.c < 2:
            raise ValueError("need at least two classes")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must lie in [0, 1)")


@dataclass
class LayerParams:
    ln1_gain: Parameter
    ln1_bias: Parameter
    W_Q: Parameter
    W_K: Parameter
    W_V: Parameter
    W_O: Parameter
    b_O: Parameter
    ln2_gain: Parameter
    ln2_bias: Parameter
    W_ff1: Parameter
    b_ff1: Parameter
    W_ff2: Parameter
    b_ff2: Parameter

    def parameters(self) -> Iterator[Parameter]:
        yield from vars(self).values()


@dataclass
class ModelParams:
    input_w: Parameter
    input_b: Parameter
    W_PV: Parameter  # m x d, projects incidence rows
    W_PE: Parameter  # n x d, projects incidence columns
    layers: list[LayerParams]
    final_gain: Parameter
    final_bias: Parameter
    head_w: Parameter
    head_b: Parameter

    def parameters(self) -> list[Parameter]:
        out = [self.input_w, self.input_b, self.W_PV, self.W_PE]
        for layer in self.layers:
            out.extend(layer.parameters())
        out.extend([self.final_gain, self.final_bias, self.head_w, self.head_b])
        return out


@dataclass
class ForwardTrace:
    """Logits for the nodes plus the head-averaged attention of each layer."""

    logits: Tensor
    attn: list[Tensor]
    head_attn: list[Tensor] = field(default_factory=list, repr=False)


def init_params(
    n: int, m: int, d_in: int, config: HyperGTConfig, rng: np.random.Generator
) -> ModelParams:
    d, hk, f = config.d, config.heads * config.d_k, config.ffn_hidden

    def w(name, fan_in, fan_out):
        return Parameter(nx.glorot_uniform(rng, fan_in, fan_out), name)

    def const(name, width, value):
        return Parameter(np.full((1, width), value), name)

    layers = []
    for ell in range(config.layers):
        p = f"layer{ell}."
        layers.append(
            LayerParams(
                ln1_gain=const(p + "ln1_gain", d, 1.0),
                ln1_bias=const(p + "ln1_bias", d, 0.0),
                W_Q=w(p + "W_Q", d, hk),
                W_K=w(p + "W_K", d, hk),
                W_V=w(p + "W_V", d, hk),
                W_O=w(p + "W_O", hk, d),
                b_O=const(p + "b_O", d, 0.0),
                ln2_gain=const(p + "ln2_gain", d, 1.0),
                ln2_bias=const(p + "ln2_bias", d, 0.0),
                W_ff1=w(p + "W_ff1", d, f),
                b_ff1=const(p + "b_ff1", f, 0.0),
                W_ff2=w(p + "W_ff2", f, d),
                b_ff2=const(p + "b_ff2", d, 0.0),
            )
        )
    return ModelParams(
        input_w=w("input_w", d_in, d),
        input_b=const("input_b", d, 0.0),
        W_PV=w("W_PV", m, d) if m else Parameter(np.zeros((0, d)), "W_PV"),
        W_PE=w("W_PE", n, d),
        layers=layers,
        final_gain=const("final_gain", d, 1.0),
        final_bias=const("final_bias", d, 0.0),
        head_w=w("head_w", d, config.c),
        head_b=const("head_b", config.c, 0.0),
    )


def init_hyperedge_features(hg: Hypergraph, X_V: np.ndarray) -> np.ndarray:
    """Mean of member-node features for each hyperedge."""
    sizes = hg.edge_sizes
    if np.any(sizes == 0):
        raise ValueError(f"empty hyperedge at index {int(np.flatnonzero(sizes == 0)[0])}")
    return (hg.incidence.T @ np.asarray(X_V, dtype=np.float64)) / sizes[:, None]


def assemble_input(X_V, X_E) -> np.ndarray:
    """Stack node rows above hyperedge rows."""
    X_V = np.asarray(X_V, dtype=np.float64)
    if X_E is None or len(X_E) == 0:
        return X_V.copy()
    X_E = np.asarray(X_E, dtype=np.float64)
    if X_V.shape[1] != X_E.shape[1]:
        raise ValueError(f"feature width mismatch: nodes {X_V.shape[1]}, hyperedges {X_E.shape[1]}")
    return np.vstack([X_V, X_E])


def positional_encoding(hg: Hypergraph, params: ModelParams, config: HyperGTConfig) -> Tensor:
    """``[H W_PV; H^T W_PE]`` with either block zeroed by its ablation switch."""
    n, m, d = hg.n, hg.m, config.d
    if params.W_PV.shape != (m, d) or params.W_PE.shape != (n, d):
        raise ValueError(
            f"PE weights must be {(m, d)} and {(n, d)}, got {params.W_PV.shape} and {params.W_PE.shape}"
        )
    H = hg.incidence
    node_pe = nx.matmul(H, params.W_PV) if config.use_node_pe else Tensor(np.zeros((n, d)))
    if m == 0:
        return node_pe
    edge_pe = nx.matmul(H.T, params.W_PE) if config.use_edge_pe else Tensor(np.zeros((m, d)))
    return nx.concat_rows([node_pe, edge_pe])


def _dropout(x: Tensor, rate: float, rng: np.random.Generator | None) -> Tensor:
    if rate <= 0.0 or rng is None:
        return x
    keep = rng.random(x.shape, dtype=np.float32) >= rate
    return nx.mul(x, keep * (1.0 / (1.0 - rate)))


def multi_head_attention(
    h: Tensor,
    layer: LayerParams,
    config: HyperGTConfig,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor, Tensor]:
    """Dense MHSA over all instances, before the residual connection.

    Returns the mixed output, the head-averaged attention and the stacked
    per-head attention of shape (heads, N, N).
    """
    q = nx.scale(nx.split_heads(nx.matmul(h, layer.W_Q), config.heads), 1.0 / math.sqrt(config.d_k))
    k = nx.split_heads(nx.matmul(h, layer.W_K), config.heads)
    v = nx.split_heads(nx.matmul(h, layer.W_V), config.heads)
    heads = nx.row_softmax(nx.matmul(q, nx.transpose(k)))
    mixed = nx.merge_heads(nx.matmul(_dropout(heads, config.dropout_rate, rng), v))
    out = nx.linear(mixed, layer.W_O, layer.b_O)
    return out, nx.mean_axis0(heads), heads


def attention_layer(
    Z: Tensor,
    layer: LayerParams,
    config: HyperGTConfig,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor, Tensor]:
    """``Z + MHSA(LN(Z))``."""
    h = nx.layer_norm(Z, layer.ln1_gain, layer.ln1_bias)
    out, avg, heads = multi_head_attention(h, layer, config, rng)
    return nx.add(Z, out), avg, heads


def feed_forward(
    Z: Tensor,
    layer: LayerParams,
    config: HyperGTConfig,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """``Z + W2 gelu(W1 LN(Z))``."""
    h = nx.layer_norm(Z, layer.ln2_gain, layer.ln2_bias)
    hidden = nx.gelu(nx.linear(h, layer.W_ff1, layer.b_ff1))
    hidden = _dropout(hidden, config.dropout_rate, rng)
    return nx.add(Z, nx.linear(hidden, layer.W_ff2, layer.b_ff2))


def forward(
    hg: Hypergraph,
    X_V,
    X_E,
    params: ModelParams,
    config: HyperGTConfig,
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> ForwardTrace:
    """Run the full network.

    ``X_E=None`` initialises hyperedge features from member means. Dropout
    is only active when ``train_mode`` is set and an ``rng`` is given.
    """
    if X_E is None and hg.m:
        X_E = init_hyperedge_features(hg, X_V)
    X = assemble_input(X_V, X_E)
    if X.shape[0] != hg.n + hg.m:
        raise ValueError(f"expected {hg.n + hg.m} input rows, got {X.shape[0]}")
    drop_rng = rng if train_mode else None
    Z = nx.add(nx.linear(X, params.input_w, params.input_b), positional_encoding(hg, params, config))
    attn, head_attn = [], []
    for layer in params.layers:
        Z, avg, heads = attention_layer(Z, layer, config, drop_rng)
        Z = feed_forward(Z, layer, config, drop_rng)
        attn.append(avg)
        head_attn.append(heads)
    Z = nx.layer_norm(Z, params.final_gain, params.final_bias)
    nodes = nx.slice_rows(Z, slice(0, hg.n))
    logits = nx.linear(nodes, params.head_w, params.head_b)
    return ForwardTrace(logits=logits, attn=attn, head_attn=head_attn)


def predict(trace: ForwardTrace | np.ndarray) -> np.ndarray:
    """Argmax per row; ties go to the lowest class index."""
    logits = trace.logits.value if isinstance(trace, ForwardTrace) else np.asarray(trace)
    return np.argmax(logits, axis=1)


class HyperGT:
    """Bundles a hypergraph, its parameters and a config."""

    def __init__(self, hg: Hypergraph, d_in: int, config: HyperGTConfig, seed: int = 0):
        self.hg = hg
        self.config = config
        self.params = init_params(hg.n, hg.m, d_in, config, np.random.default_rng(seed))

    def parameters(self) -> list[Parameter]:
        return self.params.parameters()

    def __call__(self, X_V, X_E=None, train_mode=False, rng=None) -> ForwardTrace:
        return forward(self.hg, X_V, X_E, self.params, self.config, train_mode, rng)
