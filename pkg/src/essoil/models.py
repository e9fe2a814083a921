"""The three regressor architectures and the two loss-design heads.

Each model maps one assembled sample to a vector of per-label scores:

* ``cnn``  - stacked node features, same-padded 1-D convolutions along
  the compound axis, masked mean+max pooling over valid rows
* ``gcn``  - graph convolutions over the symmetrically normalized,
  similarity-weighted adjacency (self-loops included)
* ``gat``  - attention layers where the attention logit gets an
  additive learned-scalar similarity term per edge

Loss designs, per head width:

* ``bce_linear``     - C raw logits, binary cross-entropy from logits,
  scores are per-logit sigmoids
* ``nll_logsoftmax`` - 2C logits reshaped to (C, 2) = (absent, present),
  row log-softmax, class-index NLL against the (y, 1-y) pair; the score
  is exp(logp[:, present]), identically sigmoid(z_present - z_absent)
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .dataset import GraphSample, StackedSample

ARCHITECTURES = ("cnn", "gcn", "gat")
LOSS_DESIGNS = ("bce_linear", "nll_logsoftmax")

MASK_NEG = 1e30  # subtracted from padding rows before the max pool


class WidthMismatch(ValueError):
    pass


class ZeroDegree(ValueError):
    pass


@dataclass
class ModelConfig:
    architecture: str
    loss_design: str
    n_labels: int
    hidden_dim: int = 64
    layers: int = 2
    gat_heads: int = 1
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"architecture must be one of {ARCHITECTURES}, "
                             f"got {self.architecture!r}")
        if self.loss_design not in LOSS_DESIGNS:
            raise ValueError(f"loss_design must be one of {LOSS_DESIGNS}, "
                             f"got {self.loss_design!r}")
        if self.n_labels < 1 or self.hidden_dim < 1 or self.layers < 1 \
                or self.gat_heads < 1:
            raise ValueError("n_labels, hidden_dim, layers, gat_heads must be >= 1")

    @property
    def out_width(self) -> int:
        return self.n_labels if self.loss_design == "bce_linear" \
            else 2 * self.n_labels

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def normalize_adjacency(graph) -> np.ndarray:
    """D^-1/2 W D^-1/2 over the similarity-weighted adjacency with
    self-loops. Zero degree cannot happen with unit self-loops but is
    guarded anyway."""
    w = graph.weights if isinstance(graph, GraphSample) else np.asarray(graph)
    deg = w.sum(axis=1)
    if (deg <= 0).any():
        raise ZeroDegree("adjacency row sums must be positive")
    inv_sqrt = 1.0 / np.sqrt(deg)
    return w * inv_sqrt[:, None] * inv_sqrt[None, :]


def gcn_layer(h: ad.Value, a_hat: np.ndarray, w: ad.Value,
              activate: bool = True) -> ad.Value:
    """relu(A_hat @ H @ W); pass activate=False on the final layer."""
    out = ad.matmul(ad.matmul(ad.const(a_hat), h), w)
    return ad.relu(out) if activate else out


def gat_layer(h: ad.Value, sim: np.ndarray, w: ad.Value, a_src: ad.Value,
              a_dst: ad.Value, edge_scale: ad.Value, slope: float,
              return_attention: bool = False):
    """One attention head over the complete graph.

    e_ij = leaky_relu(a_src . Wh_i + a_dst . Wh_j) + edge_scale * sim_ij,
    attention = row softmax of e, output = attention @ (H W).
    """
    hw = ad.matmul(h, w)
    src = ad.matmul(hw, a_src)                       # (N, 1)
    dst = ad.reshape(ad.matmul(hw, a_dst), (1, -1))  # (1, N)
    e = ad.leaky_relu(ad.add(src, dst), slope)
    e = ad.add(e, ad.mul(edge_scale, ad.const(sim)))
    attention = ad.row_softmax(e)
    out = ad.matmul(attention, hw)
    if return_attention:
        return out, attention
    return out


def readout(h: ad.Value) -> ad.Value:
    """Graph-level vector: mean over nodes."""
    return ad.vmean(h, axis=0)


def score(logits: np.ndarray, loss_design: str, n_labels: int) -> np.ndarray:
    """Per-label scores in [0, 1] from raw head output."""
    z = np.asarray(logits, dtype=np.float64).ravel()
    if loss_design == "bce_linear":
        if z.shape != (n_labels,):
            raise WidthMismatch(f"expected {n_labels} logits, got {z.shape}")
        return np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                        np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    if loss_design == "nll_logsoftmax":
        if z.shape != (2 * n_labels,):
            raise WidthMismatch(f"expected {2 * n_labels} logits, got {z.shape}")
        pairs = z.reshape(n_labels, 2)
        shifted = pairs - pairs.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return np.exp(logp[:, 1])
    raise ValueError(f"unknown loss design {loss_design!r}")


class _Base:
    """Shared parameter bookkeeping and the loss/score plumbing."""

    def __init__(self, config: ModelConfig, in_dim: int, seed: int):
        self.config = config
        self.in_dim = in_dim
        self.seed = seed
        self.params: dict[str, ad.Value] = {}
        self._build()

    def _weight(self, name: str, shape) -> ad.Value:
        data = ad.glorot_uniform(shape, ad.mix_seed(self.seed, name))
        p = ad.param(data)
        self.params[name] = p
        return p

    def _bias(self, name: str, width: int) -> ad.Value:
        p = ad.param(np.zeros(width))
        self.params[name] = p
        return p

    def _build(self):
        raise NotImplementedError

    def forward(self, sample) -> ad.Value:
        raise NotImplementedError

    def _head(self, pooled: ad.Value) -> ad.Value:
        row = ad.reshape(pooled, (1, -1))
        logits = ad.add(ad.matmul(row, self.params["head_w"]),
                        self.params["head_b"])
        return ad.reshape(logits, (-1,))

    def loss(self, sample, target: np.ndarray) -> tuple[ad.Value, ad.Value]:
        logits = self.forward(sample)
        c = self.config.n_labels
        if self.config.loss_design == "bce_linear":
            return ad.bce_with_logits(logits, target), logits
        log_probs = ad.log_softmax(ad.reshape(logits, (c, 2)), axis=1)
        return ad.nll_paired(log_probs, np.asarray(target).astype(np.int64)), logits

    def predict(self, sample) -> np.ndarray:
        logits = self.forward(sample)
        return score(logits.data, self.config.loss_design, self.config.n_labels)

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in state.items():
            if name not in self.params:
                raise KeyError(f"unknown parameter {name!r}")
            if self.params[name].data.shape != arr.shape:
                raise ad.ShapeMismatch(
                    f"{name}: checkpoint shape {arr.shape} != "
                    f"model shape {self.params[name].data.shape}")
            self.params[name].data = np.asarray(arr, dtype=np.float64).copy()


class GcnModel(_Base):
    def _build(self):
        cfg = self.config
        dim = self.in_dim
        for layer in range(cfg.layers):
            self._weight(f"gcn{layer}_w", (dim, cfg.hidden_dim))
            dim = cfg.hidden_dim
        self._weight("head_w", (cfg.hidden_dim, cfg.out_width))
        self._bias("head_b", cfg.out_width)

    def forward(self, sample: GraphSample) -> ad.Value:
        a_hat = normalize_adjacency(sample)
        h = ad.const(sample.nodes)
        last = self.config.layers - 1
        for layer in range(self.config.layers):
            h = gcn_layer(h, a_hat, self.params[f"gcn{layer}_w"],
                          activate=layer < last)
        return self._head(readout(h))


class GatModel(_Base):
    def _build(self):
        cfg = self.config
        dim = self.in_dim
        for layer in range(cfg.layers):
            for head in range(cfg.gat_heads):
                tag = f"gat{layer}_h{head}"
                self._weight(f"{tag}_w", (dim, cfg.hidden_dim))
                self._weight(f"{tag}_asrc", (cfg.hidden_dim, 1))
                self._weight(f"{tag}_adst", (cfg.hidden_dim, 1))
                self.params[f"{tag}_escale"] = ad.param(np.ones(()))
            last_layer = layer == cfg.layers - 1
            dim = cfg.hidden_dim if last_layer \
                else cfg.hidden_dim * cfg.gat_heads
        self._weight("head_w", (cfg.hidden_dim, cfg.out_width))
        self._bias("head_b", cfg.out_width)

    def _layer(self, h: ad.Value, sim: np.ndarray, layer: int) -> ad.Value:
        cfg = self.config
        outs = []
        for head in range(cfg.gat_heads):
            tag = f"gat{layer}_h{head}"
            outs.append(gat_layer(h, sim, self.params[f"{tag}_w"],
                                  self.params[f"{tag}_asrc"],
                                  self.params[f"{tag}_adst"],
                                  self.params[f"{tag}_escale"],
                                  cfg.leaky_slope))
        if layer == cfg.layers - 1:  # final layer averages the heads
            acc = outs[0]
            for other in outs[1:]:
                acc = ad.add(acc, other)
            return ad.mul(acc, 1.0 / cfg.gat_heads)
        merged = outs[0] if len(outs) == 1 else ad.concat(outs, axis=1)
        return ad.relu(merged)

    def forward(self, sample: GraphSample) -> ad.Value:
        h = ad.const(sample.nodes)
        for layer in range(self.config.layers):
            h = self._layer(h, sample.weights, layer)
        return self._head(readout(h))

    def attention(self, sample: GraphSample, head: int = 0) -> np.ndarray:
        """First-layer attention matrix of one head on the input features."""
        tag = f"gat0_h{head}"
        _, att = gat_layer(ad.const(sample.nodes), sample.weights,
                           self.params[f"{tag}_w"], self.params[f"{tag}_asrc"],
                           self.params[f"{tag}_adst"],
                           self.params[f"{tag}_escale"],
                           self.config.leaky_slope, return_attention=True)
        return att.data


class CnnModel(_Base):
    KERNEL = 3

    def _build(self):
        cfg = self.config
        dim = self.in_dim
        for layer in range(cfg.layers):
            self._weight(f"conv{layer}_w", (self.KERNEL, dim, cfg.hidden_dim))
            self._bias(f"conv{layer}_b", cfg.hidden_dim)
            dim = cfg.hidden_dim
        self._weight("head_w", (2 * cfg.hidden_dim, cfg.out_width))
        self._bias("head_b", cfg.out_width)

    def forward(self, sample: StackedSample) -> ad.Value:
        if sample.valid_rows < 1:
            raise ValueError("stacked sample has no valid rows")
        h = ad.const(sample.matrix)
        for layer in range(self.config.layers):
            h = ad.relu(ad.conv1d(h, self.params[f"conv{layer}_w"],
                                  self.params[f"conv{layer}_b"]))
        n_max = sample.matrix.shape[0]
        mask = np.zeros((n_max, 1))
        mask[:sample.valid_rows] = 1.0
        masked = ad.mul(h, ad.const(mask))
        mean_pool = ad.mul(ad.vsum(masked, axis=0), 1.0 / sample.valid_rows)
        max_pool = ad.vmax(ad.add(h, ad.const((mask - 1.0) * MASK_NEG)), axis=0)
        return self._head(ad.concat([mean_pool, max_pool], axis=0))


def build_model(config: ModelConfig, in_dim: int, seed: int) -> _Base:
    cls = {"cnn": CnnModel, "gcn": GcnModel, "gat": GatModel}[config.architecture]
    return cls(config, in_dim, seed)
