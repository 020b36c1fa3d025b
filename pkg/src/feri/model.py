"""Multitask tabular network with hard parameter sharing.

Column embeddings and continuous features are concatenated, layer-normalised
and passed through a shared ReLU trunk; each task (subgroup) owns its own MLP
head ending in a single logit.  Parameters live in a flat dict keyed by name:

    emb.<feature>         (cardinality, embed_dim)
    trunk.ln.gain/bias    (1, trunk_in)
    trunk.<i>.W/b         dense layers of the trunk
    head<m>.<i>.W/b       dense layers of head m
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .autodiff import Graph, GradientSet
from .errors import ConfigError, ContractError, EmptyTaskError

MISSING_INDEX = 0


@dataclass(frozen=True)
class FeatureSchema:
    categorical: Tuple[Tuple[str, int], ...] = ()
    continuous: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "categorical", tuple((str(n), int(c)) for n, c in self.categorical))
        object.__setattr__(self, "continuous", tuple(str(n) for n in self.continuous))
        for name, card in self.categorical:
            if card < 2:
                raise ConfigError(
                    f"categorical feature {name!r} needs cardinality >= 2 "
                    f"(one real category plus the missing slot), got {card}"
                )
        names = self.names
        if len(set(names)) != len(names):
            raise ConfigError(f"feature names must be unique: {names}")

    @property
    def names(self) -> List[str]:
        return [n for n, _ in self.categorical] + list(self.continuous)

    @property
    def n_cat(self) -> int:
        return len(self.categorical)

    @property
    def n_cont(self) -> int:
        return len(self.continuous)


@dataclass(frozen=True)
class Sample:
    cat_indices: Tuple[int, ...]
    cont_values: Tuple[float, ...]
    label: int
    group: int

    def validate(self, schema: FeatureSchema, n_tasks: int):
        if len(self.cat_indices) != schema.n_cat or len(self.cont_values) != schema.n_cont:
            raise ContractError("sample does not match schema width")
        for idx, (name, card) in zip(self.cat_indices, schema.categorical):
            if not 0 <= idx < card:
                raise ContractError(f"index {idx} out of range for {name!r} (cardinality {card})")
        if self.label not in (0, 1):
            raise ContractError(f"label must be 0 or 1, got {self.label}")
        if not 0 <= self.group < n_tasks:
            raise ContractError(f"group {self.group} outside 0..{n_tasks - 1}")


@dataclass(frozen=True)
class ModelConfig:
    embed_dim: int = 8
    hidden: Tuple[int, ...] = (64, 32)
    head: Tuple[int, ...] = (16, 1)

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "head", tuple(int(h) for h in self.head))
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {self.embed_dim}")
        if any(h < 1 for h in self.hidden + self.head):
            raise ConfigError("all layer sizes must be >= 1")
        if not self.head or self.head[-1] != 1:
            raise ConfigError("the head must end in a single logit")

    def trunk_in(self, schema: FeatureSchema) -> int:
        return schema.n_cat * self.embed_dim + schema.n_cont

    def trunk_out(self, schema: FeatureSchema) -> int:
        return self.hidden[-1] if self.hidden else self.trunk_in(schema)


@dataclass
class ModelParams:
    schema: FeatureSchema
    config: ModelConfig
    n_tasks: int
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    # evaluated task graphs for one dataset, reused by the next gradient call
    _evaluated: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def copy(self) -> "ModelParams":
        return ModelParams(self.schema, self.config, self.n_tasks,
                           {k: v.copy() for k, v in self.tensors.items()})

    def head_names(self, m: int) -> List[str]:
        return [k for k in self.tensors if k.startswith(f"head{m}.")]

    def shared_names(self) -> List[str]:
        return [k for k in self.tensors if not k.startswith("head")]

    def step(self, direction: GradientSet, lr: float) -> "ModelParams":
        """New params moved by ``-lr * direction``; names absent from ``direction`` are kept."""
        out = {}
        for k, v in self.tensors.items():
            g = direction.get(k)
            if g is None:
                out[k] = v.copy()
                continue
            if g.shape != v.shape:
                raise ContractError(f"gradient for {k!r} has shape {g.shape}, parameter {v.shape}")
            out[k] = v - lr * g
        return ModelParams(self.schema, self.config, self.n_tasks, out)

    def __getitem__(self, name):
        return self.tensors[name]


def _layer_sizes(schema: FeatureSchema, config: ModelConfig):
    trunk = [config.trunk_in(schema), *config.hidden]
    head = [config.trunk_out(schema), *config.head]
    return trunk, head


def init_params(schema: FeatureSchema, config: ModelConfig, n_tasks: int, seed: int) -> ModelParams:
    if n_tasks < 1:
        raise ConfigError(f"need at least one task, got {n_tasks}")
    if config.trunk_in(schema) < 1:
        raise ConfigError("schema has no features")
    rng = np.random.default_rng(seed)

    def uniform(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    t = {}
    for name, card in schema.categorical:
        # a lookup row has no fan-in; scale by the embedding width instead
        t[f"emb.{name}"] = uniform(config.embed_dim, (card, config.embed_dim))
    trunk, head = _layer_sizes(schema, config)
    t["trunk.ln.gain"] = np.ones((1, trunk[0]))
    t["trunk.ln.bias"] = np.zeros((1, trunk[0]))
    for i, (a, b) in enumerate(zip(trunk[:-1], trunk[1:])):
        t[f"trunk.{i}.W"] = uniform(a, (a, b))
        t[f"trunk.{i}.b"] = np.zeros((1, b))
    for m in range(n_tasks):
        for i, (a, b) in enumerate(zip(head[:-1], head[1:])):
            t[f"head{m}.{i}.W"] = uniform(a, (a, b))
            t[f"head{m}.{i}.b"] = np.zeros((1, b))
    return ModelParams(schema, config, n_tasks, t)


def build_task_graph(schema: FeatureSchema, config: ModelConfig, m: int):
    """Graph for task ``m``; returns ``(graph, prob_node, loss_node)``.

    Inputs: ``cat.<feature>`` (n,) int, ``cont`` (n, q), ``y`` (n, 1).
    """
    g = Graph()
    parts = []
    for name, _ in schema.categorical:
        table = g.param(f"emb.{name}")
        parts.append(g.embedding(table, g.input(f"cat.{name}")))
    if schema.n_cont:
        parts.append(g.input("cont"))
    h = parts[0] if len(parts) == 1 else g.concat(parts)
    h = g.layer_norm(h)
    h = g.add(g.mul(h, g.param("trunk.ln.gain")), g.param("trunk.ln.bias"))
    for i in range(len(config.hidden)):
        h = g.relu(g.dense(h, g.param(f"trunk.{i}.W"), g.param(f"trunk.{i}.b")))
    n_head = len(config.head)
    for i in range(n_head):
        h = g.dense(h, g.param(f"head{m}.{i}.W"), g.param(f"head{m}.{i}.b"))
        if i < n_head - 1:
            h = g.relu(h)
    prob = g.sigmoid(h)
    loss = g.mean(g.bce(prob, g.input("y")))
    return g, prob, loss


def _feeds(params: ModelParams, graph: Graph, batch) -> dict:
    feeds = {name: params.tensors[name] for name in graph.param_names}
    for j, (name, _) in enumerate(params.schema.categorical):
        feeds[f"cat.{name}"] = batch.cat[:, j]
    if params.schema.n_cont:
        feeds["cont"] = batch.cont
    feeds["y"] = batch.label.reshape(-1, 1).astype(np.float64)
    return feeds


def _check_batch(batch, m: int):
    groups = np.asarray(batch.group)
    if groups.size and np.any(groups != m):
        bad = sorted(set(groups[groups != m].tolist()))
        raise ContractError(f"batch for task {m} contains samples of group(s) {bad}")


def forward(params: ModelParams, batch, m: int) -> np.ndarray:
    """Head-``m`` probabilities for every sample in ``batch`` (all must belong to group m)."""
    _check_batch(batch, m)
    graph, prob, _ = build_task_graph(params.schema, params.config, m)
    graph.forward(_feeds(params, graph, batch), root=prob)
    return prob.value[:, 0].copy()


def predict(params: ModelParams, data) -> np.ndarray:
    """Probabilities for a mixed-group dataset, each row scored by its own group's head."""
    out = np.empty(len(data), dtype=np.float64)
    for m in range(params.n_tasks):
        rows = np.flatnonzero(data.group == m)
        if rows.size:
            out[rows] = forward(params, data.subset(rows), m)
    return out


def _task_batch(data, m):
    rows = np.flatnonzero(data.group == m)
    if rows.size == 0:
        raise EmptyTaskError(m)
    return data.subset(rows)


def _evaluate(params: ModelParams, data, m: int):
    key = (id(data), m)
    hit = params._evaluated.get(key)
    if hit is not None and hit[0] is data:
        return hit[1], hit[2]
    batch = _task_batch(data, m)
    graph, _, loss = build_task_graph(params.schema, params.config, m)
    value = float(graph.forward(_feeds(params, graph, batch))[0, 0])
    # the data reference keeps id(data) from being recycled while cached
    params._evaluated[key] = (data, graph, value)
    return graph, value


def task_loss(params: ModelParams, data, m: int) -> float:
    """Mean binary cross-entropy of head m over the group-m samples of ``data``."""
    return _evaluate(params, data, m)[1]


def task_loss_and_grad(params: ModelParams, data, m: int) -> Tuple[float, GradientSet]:
    graph, value = _evaluate(params, data, m)
    return value, graph.backward()


def task_losses(params: ModelParams, data) -> np.ndarray:
    return np.array([task_loss(params, data, m) for m in range(params.n_tasks)])


def task_losses_and_grads(params: ModelParams, data) -> Tuple[np.ndarray, List[GradientSet]]:
    losses, grads = [], []
    for m in range(params.n_tasks):
        value, grad = task_loss_and_grad(params, data, m)
        losses.append(value)
        grads.append(grad)
    return np.array(losses), grads
