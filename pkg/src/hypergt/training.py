"""Optimisation loop, evaluation, multi-seed runs and the two baselines."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from . import numerics as nx
from .data import Dataset, SplitSpec, make_splits
from .hypergraph import Hypergraph, star_expand
from .losses import LossBreakdown, classification_loss, structure_loss, total_loss
from .model import ForwardTrace, HyperGTConfig, forward, init_hyperedge_features, init_params, predict
from .numerics import Parameter

MODEL_KINDS = ("hypergt", "mlp", "mp")


class TrainingError(RuntimeError):
    def __init__(self, message: str, epoch: int):
        self.epoch = epoch
        super().__init__(f"epoch {epoch}: {message}")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 300
    patience: int = 50
    lam: float = 1.0
    seed: int = 0
    model: HyperGTConfig = field(default_factory=HyperGTConfig)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    l_c: float
    l_s: float
    train_acc: float
    val_acc: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc: float = float("nan")
    final: LossBreakdown | None = None


@dataclass
class RunResult:
    """Per-seed test accuracy with population mean and std."""

    per_seed_test_acc: list[float]
    mean: float
    std: float
    config: dict
    wall_time: float
    seeds: list[int] = field(default_factory=list)
    l_c_final: list[float] = field(default_factory=list)
    l_s_final: list[float] = field(default_factory=list)


# --------------------------------------------------------------------------
# optimiser


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(
    params: Sequence[Parameter],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    grads: Sequence[np.ndarray] | None = None,
) -> AdamState:
    """One Adam update with decoupled weight decay, applied in place."""
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for k, p in enumerate(params):
        g = p.grad if grads is None else grads[k]
        key = p.name
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(p.value)
            state.v[key] = np.zeros_like(p.value)
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        if weight_decay:
            p.value *= 1.0 - lr * weight_decay
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return state


# --------------------------------------------------------------------------
# models behind a common call signature


class HyperGTModel:
    def __init__(self, ds: Dataset, config: HyperGTConfig, seed: int = 0):
        self.hg = ds.hg
        self.config = config
        self.X_V = ds.X_V
        self.X_E = ds.X_E if ds.X_E is not None else (
            init_hyperedge_features(ds.hg, ds.X_V) if ds.hg.m else None
        )
        self.structure = star_expand(ds.hg)
        self.params = init_params(ds.hg.n, ds.hg.m, ds.d_in, config, np.random.default_rng(seed))

    def parameters(self) -> list[Parameter]:
        return self.params.parameters()

    def __call__(self, train_mode=False, rng=None) -> ForwardTrace:
        return forward(self.hg, self.X_V, self.X_E, self.params, self.config, train_mode, rng)


class MessagePassingNet:
    """Two-step node -> hyperedge -> node mean aggregation.

    Each round maps mean-pooled member embeddings through a linear layer and
    GELU to get hyperedge embeddings, then adds the mean of incident hyperedge
    embeddings back onto each node. With ``rounds=0`` this is a plain
    two-layer MLP on node features.
    """

    structure = None

    def __init__(self, hg: Hypergraph, X_V, hidden: int, c: int, rounds: int,
                 dropout_rate: float = 0.0, seed: int = 0):
        rng = np.random.default_rng(seed)
        H = hg.incidence
        sizes, degrees = H.sum(axis=0), H.sum(axis=1)
        self.X_V = np.asarray(X_V, dtype=np.float64)
        self.node_to_edge = H.T / np.where(sizes > 0, sizes, 1.0)[:, None]
        self.edge_to_node = H / np.where(degrees > 0, degrees, 1.0)[:, None]
        self.dropout_rate = dropout_rate
        d_in = self.X_V.shape[1]
        self.w_in = Parameter(nx.glorot_uniform(rng, d_in, hidden), "w_in")
        self.b_in = Parameter(np.zeros((1, hidden)), "b_in")
        self.rounds = [
            (Parameter(nx.glorot_uniform(rng, hidden, hidden), f"round{r}.w"),
             Parameter(np.zeros((1, hidden)), f"round{r}.b"))
            for r in range(rounds)
        ]
        self.w_out = Parameter(nx.glorot_uniform(rng, hidden, c), "w_out")
        self.b_out = Parameter(np.zeros((1, c)), "b_out")

    def parameters(self) -> list[Parameter]:
        out = [self.w_in, self.b_in]
        for w, b in self.rounds:
            out += [w, b]
        return out + [self.w_out, self.b_out]

    def edge_embeddings(self, h) -> nx.Tensor:
        w, b = self.rounds[0]
        return nx.gelu(nx.linear(nx.matmul(self.node_to_edge, h), w, b))

    def _drop(self, x, rng):
        if rng is None or self.dropout_rate <= 0:
            return x
        mask = (rng.random(x.shape) >= self.dropout_rate) / (1.0 - self.dropout_rate)
        return nx.mul(x, mask)

    def __call__(self, train_mode=False, rng=None) -> ForwardTrace:
        rng = rng if train_mode else None
        h = self._drop(nx.gelu(nx.linear(self.X_V, self.w_in, self.b_in)), rng)
        for w, b in self.rounds:
            e = nx.gelu(nx.linear(nx.matmul(self.node_to_edge, h), w, b))
            h = self._drop(nx.add(h, nx.matmul(self.edge_to_node, e)), rng)
        return ForwardTrace(logits=nx.linear(h, self.w_out, self.b_out), attn=[])


def build_model(kind: str, ds: Dataset, config: TrainConfig, seed: int):
    mc = config.model
    if kind == "hypergt":
        return HyperGTModel(ds, mc, seed)
    if kind == "mlp":
        return MessagePassingNet(ds.hg, ds.X_V, mc.d, mc.c, 0, mc.dropout_rate, seed)
    if kind == "mp":
        return MessagePassingNet(ds.hg, ds.X_V, mc.d, mc.c, mc.layers, mc.dropout_rate, seed)
    raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")


# --------------------------------------------------------------------------
# training


def _losses(model, trace: ForwardTrace, ds: Dataset, index, lam: float):
    l_c = classification_loss(trace.logits, ds.labels, index)
    if trace.attn and model.structure is not None:
        l_s = structure_loss(model.structure, trace.attn)
        total = nx.add(l_c, nx.scale(l_s, lam)) if lam else l_c
        return l_c, l_s, total
    return l_c, None, l_c


def accuracy(pred: np.ndarray, labels: np.ndarray, index) -> float:
    index = np.asarray(index, dtype=np.int64)
    if index.size == 0:
        raise ValueError("cannot evaluate on an empty index set")
    return float(np.mean(pred[index] == labels[index]))


def evaluate(model, ds: Dataset, index) -> float:
    """Accuracy of eval-mode predictions on ``index``."""
    return accuracy(predict(model(train_mode=False)), ds.labels, index)


def train(ds: Dataset, split: SplitSpec, config: TrainConfig, model=None, kind: str = "hypergt"):
    """Minimise ``L_c + lam * L_s`` on the training nodes.

    Validation accuracy is checked after every step. Training stops once
    ``patience`` consecutive evaluations fail to beat the best one, and the
    parameters from the best (earliest on ties) epoch are restored.
    Returns ``(model, history)``.
    """
    init_seq, drop_seq = np.random.SeedSequence(config.seed).spawn(2)
    if model is None:
        model = build_model(kind, ds, config, int(init_seq.generate_state(1)[0]))
    drop_rng = np.random.default_rng(drop_seq)
    params = model.parameters()
    state = AdamState()
    history = TrainHistory()
    best = [p.value.copy() for p in params]

    for epoch in range(config.epochs):
        trace = model(train_mode=True, rng=drop_rng)
        l_c, l_s, total = _losses(model, trace, ds, split.train, config.lam)
        loss = total.item()
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss {loss}", epoch)
        total.backward()
        adam_step(params, state, config.lr, weight_decay=config.weight_decay)

        pred = predict(model(train_mode=False))
        val_acc = accuracy(pred, ds.labels, split.val)
        history.records.append(
            EpochRecord(
                epoch=epoch,
                loss=loss,
                l_c=l_c.item(),
                l_s=l_s.item() if l_s is not None else 0.0,
                train_acc=accuracy(pred, ds.labels, split.train),
                val_acc=val_acc,
            )
        )
        if history.best_epoch < 0 or val_acc > history.best_val_acc:
            history.best_epoch, history.best_val_acc = epoch, val_acc
            best = [p.value.copy() for p in params]
        elif epoch - history.best_epoch > config.patience:
            break

    for p, b in zip(params, best):
        p.value[...] = b
    trace = model(train_mode=False)
    l_c, l_s, _ = _losses(model, trace, ds, split.train, config.lam)
    history.final = total_loss(l_c.item(), l_s.item() if l_s is not None else 0.0, config.lam)
    return model, history


def mlp_baseline(ds: Dataset, split: SplitSpec, config: TrainConfig) -> float:
    model, _ = train(ds, split, config, kind="mlp")
    return evaluate(model, ds, split.test)


def mp_baseline(ds: Dataset, split: SplitSpec, config: TrainConfig) -> float:
    model, _ = train(ds, split, config, kind="mp")
    return evaluate(model, ds, split.test)


# --------------------------------------------------------------------------
# multi-seed runs


def _run_one(args):
    dataset_gen, config, seed, kind = args
    ds = dataset_gen(seed) if callable(dataset_gen) else dataset_gen
    split = make_splits(ds.n, seed)
    # one BLAS thread per seed job keeps results independent of the worker count
    with threadpool_limits(limits=1):
        model, history = train(ds, split, replace(config, seed=seed), kind=kind)
    return seed, evaluate(model, ds, split.test), history.final


def config_echo(config: TrainConfig, kind: str) -> dict:
    out = {k: v for k, v in asdict(config).items() if k not in ("model", "seed")}
    out["model_kind"] = kind
    out.update({f"model.{k}": v for k, v in asdict(config.model).items()})
    return out


def multi_seed_run(
    dataset_gen: Callable[[int], Dataset] | Dataset,
    config: TrainConfig,
    seeds: Sequence[int],
    kind: str = "hypergt",
    workers: int = 1,
) -> RunResult:
    """Train and test once per seed; splits (and synthetic data) follow the seed.

    ``dataset_gen`` is either a fixed ``Dataset`` or a callable ``seed ->
    Dataset``. With ``workers > 1`` seeds run in separate processes; results
    are sorted by seed before aggregation.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    start = time.perf_counter()
    jobs = [(dataset_gen, config, s, kind) for s in seeds]
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    accs = [r[1] for r in results]
    return RunResult(
        per_seed_test_acc=accs,
        mean=float(np.mean(accs)),
        std=float(np.std(accs)),
        config=config_echo(config, kind),
        wall_time=time.perf_counter() - start,
        seeds=[r[0] for r in results],
        l_c_final=[r[2].l_c for r in results],
        l_s_final=[r[2].l_s for r in results],
    )
