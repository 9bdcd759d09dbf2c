"""The edgewise score network s(A; sigma).

A preprocessing step builds the input adjacency stack (original channel plus
a negated channel) and degree-based node features. Stacked layers then
alternate multi-channel GIN-style message passing with per-edge MLPs that
emit new symmetric adjacency channels. An output MLP maps the concatenated
per-edge channel values of every stack to one score per edge. Every linear
layer carries per-noise-level gain/bias conditioning; all other parameters
are shared across levels.

The forward pass is written over a leading batch axis that packs graphs of
equal size times selected noise levels into one set of array ops; the
single-graph entry points are thin wrappers. The network is composed purely
of message passing and nodewise/edgewise maps, so its output commutes with
node relabeling; the test suite checks this numerically rather than
assuming it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import (
    Tensor,
    add,
    concat,
    elu,
    expand,
    matmul,
    mul,
    reshape,
    scale,
    sigmoid,
    transpose,
)
from .graphs import GraphInstance, NoiseSchedule, Permutation, offdiag_mask

CHECKPOINT_HEADER = "EDPGNN-CKPT v1"

# Glorot limits are damped by this factor: raw-sum message aggregation over
# dense perturbed matrices amplifies activations multiplicatively per step,
# and unit-scale initialization overflows within a few layers.
INIT_SCALE = 0.1

_ONE = Tensor(np.array(1.0))


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 5        # stacked edge-update layers
    msg_steps: int = 4     # message-passing steps per layer
    channels: int = 4      # adjacency channels emitted by each layer
    hidden: int = 16       # MLP hidden width
    node_width: int = 16   # node feature width produced by each step
    levels: int = 6        # number of conditioned noise levels
    extra_feature_dim: int = 0  # input node features beyond the degree
    learnable_adj: bool = True
    multi_channel: bool = True

    def __post_init__(self):
        if min(self.layers, self.msg_steps, self.channels, self.hidden,
               self.node_width, self.levels) < 1:
            raise ValueError("all architecture sizes must be >= 1")
        if self.extra_feature_dim < 0:
            raise ValueError("extra_feature_dim must be >= 0")

    @property
    def input_channels(self) -> int:
        return 2 if self.multi_channel else 1

    @property
    def layer_channels(self) -> int:
        return self.channels if self.multi_channel else 1

    def node_widths(self) -> list[int]:
        """Node feature width entering each layer (and leaving the last).

        Each layer's message passing emits the concatenation of its
        msg_steps step outputs, so the width is constant after layer 0.
        """
        out_width = self.msg_steps * self.node_width
        return [1 + self.extra_feature_dim] + [out_width] * self.layers


class CondLinear:
    """Affine map with per-level gain/bias conditioning and an optional
    activation ("elu", "sigmoid", or "none")."""

    def __init__(self, in_dim: int, out_dim: int, levels: int,
                 rng: np.random.Generator, activation: str):
        limit = INIT_SCALE * math.sqrt(6.0 / (in_dim + out_dim))
        self.weight = Tensor(rng.uniform(-limit, limit, (in_dim, out_dim)),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim), requires_grad=True)
        self.gains = [Tensor(np.ones(out_dim), requires_grad=True)
                      for _ in range(levels)]
        self.shifts = [Tensor(np.zeros(out_dim), requires_grad=True)
                       for _ in range(levels)]
        self.activation = activation

    def _conditioning(self, tensors: list[Tensor], levels: tuple[int, ...],
                      graphs: int) -> Tensor:
        out_dim = tensors[0].shape[0]
        if len(levels) == 1:
            # broadcasts over the whole batch
            return reshape(tensors[levels[0]], (1, 1, out_dim))
        stacked = concat([reshape(tensors[l], (1, out_dim)) for l in levels], axis=0)
        if graphs > 1:
            stacked = expand(reshape(stacked, (1, len(levels), out_dim)),
                             (graphs, len(levels), out_dim))
        return reshape(stacked, (graphs * len(levels), 1, out_dim))

    def __call__(self, x: Tensor, levels: tuple[int, ...], graphs: int) -> Tensor:
        y = add(matmul(x, self.weight), self.bias)
        y = add(mul(y, self._conditioning(self.gains, levels, graphs)),
                self._conditioning(self.shifts, levels, graphs))
        if self.activation == "elu":
            return elu(y)
        if self.activation == "sigmoid":
            return sigmoid(y)
        return y

    def named_params(self, prefix: str):
        yield f"{prefix}.weight", self.weight
        yield f"{prefix}.bias", self.bias
        for i, g in enumerate(self.gains):
            yield f"{prefix}.gain{i}", g
        for i, s in enumerate(self.shifts):
            yield f"{prefix}.shift{i}", s

    def conditioning_params(self):
        yield from self.gains
        yield from self.shifts


class Mlp:
    """Two conditioned linear layers; the caller picks output activation."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int, levels: int,
                 rng: np.random.Generator, final_activation: str):
        self.lins = [
            CondLinear(in_dim, hidden, levels, rng, activation="elu"),
            CondLinear(hidden, out_dim, levels, rng, activation=final_activation),
        ]

    def __call__(self, x: Tensor, levels: tuple[int, ...], graphs: int) -> Tensor:
        for lin in self.lins:
            x = lin(x, levels, graphs)
        return x

    def named_params(self, prefix: str):
        for i, lin in enumerate(self.lins):
            yield from lin.named_params(f"{prefix}.lin{i}")

    def conditioning_params(self):
        for lin in self.lins:
            yield from lin.conditioning_params()


class MultiChannelGnn:
    """Message passing over every adjacency channel simultaneously.

    Step m computes per-channel messages A[c] @ Z, adds (1 + eps_m)-scaled
    self features to each, concatenates over channels, and maps the result
    through that step's node MLP. The layer output concatenates the
    msg_steps step outputs per node.
    """

    def __init__(self, cfg: ModelConfig, in_channels: int, in_width: int,
                 rng: np.random.Generator):
        self.mlps: list[Mlp] = []
        self.eps: list[Tensor] = []
        width = in_width
        for _ in range(cfg.msg_steps):
            self.mlps.append(
                Mlp(in_channels * width, cfg.hidden, cfg.node_width,
                    cfg.levels, rng, final_activation="elu")
            )
            self.eps.append(Tensor(np.array(0.0), requires_grad=True))
            width = cfg.node_width

    def __call__(self, a_stack: Tensor, z: Tensor, levels: tuple[int, ...],
                 graphs: int) -> Tensor:
        b, c, n, _ = a_stack.shape
        outs = []
        for mlp, eps in zip(self.mlps, self.eps):
            z4 = reshape(z, (b, 1, n, z.shape[-1]))
            msg = matmul(a_stack, z4)                    # (B, C, n, F)
            h = add(msg, mul(z4, add(eps, _ONE)))        # broadcast over channels
            h = reshape(transpose(h, (0, 2, 1, 3)), (b, n, c * z.shape[-1]))
            z = mlp(h, levels, graphs)
            outs.append(z)
        return concat(outs, axis=2)

    def named_params(self, prefix: str):
        for m, mlp in enumerate(self.mlps):
            yield from mlp.named_params(f"{prefix}.step{m}")
            yield f"{prefix}.step{m}.eps", self.eps[m]

    def conditioning_params(self):
        for mlp in self.mlps:
            yield from mlp.conditioning_params()


def _edge_features(a_stack: Tensor, z: Tensor) -> Tensor:
    """Per-pair rows CONCAT(A[:, i, j], Z_i, Z_j): (B, n^2, C + 2W)."""
    b, c, n, _ = a_stack.shape
    w = z.shape[-1]
    zi = expand(reshape(z, (b, n, 1, w)), (b, n, n, w))
    zj = expand(reshape(z, (b, 1, n, w)), (b, n, n, w))
    e = concat([transpose(a_stack, (0, 2, 3, 1)), zi, zj], axis=3)
    return reshape(e, (b, n * n, c + 2 * w))


class EdpLayer:
    """Node feature inference followed by edgewise channel inference."""

    def __init__(self, cfg: ModelConfig, in_channels: int, in_width: int,
                 rng: np.random.Generator):
        self.gnn = MultiChannelGnn(cfg, in_channels, in_width, rng)
        self.out_width = cfg.msg_steps * cfg.node_width
        self.edge_mlp = None
        if cfg.learnable_adj:
            # sigmoid keeps learned channels adjacency-scaled in (0, 1);
            # unbounded channel values feed back through message products
            # and blow up within a few layers
            self.edge_mlp = Mlp(
                in_channels + 2 * self.out_width, cfg.hidden,
                cfg.layer_channels, cfg.levels, rng, final_activation="sigmoid",
            )

    def __call__(self, a_stack: Tensor, z: Tensor, levels: tuple[int, ...],
                 graphs: int, off_mask: Tensor) -> tuple[Tensor, Tensor]:
        z_new = self.gnn(a_stack, z, levels, graphs)
        if self.edge_mlp is None:
            return a_stack, z_new
        b, _, n, _ = a_stack.shape
        c_out = self.edge_mlp.lins[-1].weight.shape[1]
        h = self.edge_mlp(_edge_features(a_stack, z_new), levels, graphs)
        half = transpose(reshape(h, (b, n, n, c_out)), (0, 3, 1, 2))
        a_new = add(half, transpose(half, (0, 1, 3, 2)))  # symmetric by construction
        a_new = mul(a_new, off_mask)                      # structural zero diagonal
        return a_new, z_new

    def named_params(self, prefix: str):
        yield from self.gnn.named_params(f"{prefix}.node")
        if self.edge_mlp is not None:
            yield from self.edge_mlp.named_params(f"{prefix}.edge")

    def conditioning_params(self):
        yield from self.gnn.conditioning_params()
        if self.edge_mlp is not None:
            yield from self.edge_mlp.conditioning_params()


def preprocess_input(g: GraphInstance,
                     multi_channel: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Input stack (adjacency + negated adjacency) and degree node features.

    The negated channel keeps a zero diagonal. Node features are the weighted
    degrees, prefixed by the graph's own node features when present.
    """
    adj = g.adj
    n = adj.shape[0]
    if multi_channel:
        stack = np.stack([adj, (1.0 - adj) * offdiag_mask(n)])
    else:
        stack = adj[None, :, :].copy()
    deg = adj.sum(axis=1, keepdims=True)
    if g.node_features is not None:
        z0 = np.concatenate([g.node_features, deg], axis=1)
    else:
        z0 = deg
    return stack, z0


class EdpGnn:
    """Score network with parameters, forward pass, and checkpoint I/O."""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        widths = config.node_widths()
        self.layers: list[EdpLayer] = []
        in_channels = config.input_channels
        for k in range(config.layers):
            self.layers.append(EdpLayer(config, in_channels, widths[k], rng))
            if config.learnable_adj:
                in_channels = config.layer_channels
        if config.learnable_adj:
            head_in = config.input_channels + config.layers * config.layer_channels
        else:
            head_in = config.input_channels + 2 * widths[-1]
        self.final_mlp = Mlp(head_in, config.hidden, 1, config.levels, rng,
                             final_activation="none")

    # -- parameters ---------------------------------------------------------

    def named_params(self) -> list[tuple[str, Tensor]]:
        out: list[tuple[str, Tensor]] = []
        for k, layer in enumerate(self.layers):
            out.extend(layer.named_params(f"layer{k}"))
        out.extend(self.final_mlp.named_params("final"))
        return out

    def params(self) -> list[Tensor]:
        return [t for _, t in self.named_params()]

    def param_counts(self) -> tuple[int, int]:
        """(level-shared scalar count, conditioning scalars per level)."""
        conditioning = 0
        for layer in self.layers:
            for t in layer.conditioning_params():
                conditioning += t.data.size
        for t in self.final_mlp.conditioning_params():
            conditioning += t.data.size
        total = sum(t.data.size for t in self.params())
        per_level = conditioning // self.config.levels
        return total - conditioning, per_level

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.named_params()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for name, t in self.named_params():
            value = state.get(name)
            if value is None:
                raise ValueError(f"state is missing parameter {name!r}")
            if np.shape(value) != t.data.shape:
                raise ValueError(
                    f"parameter {name!r} has shape {np.shape(value)}, expected {t.data.shape}"
                )
            t.data = np.asarray(value, dtype=np.float64).copy()

    # -- forward ------------------------------------------------------------

    def _check_levels(self, levels: tuple[int, ...]) -> None:
        for level in levels:
            if not 0 <= level < self.config.levels:
                raise ValueError(
                    f"noise level index {level} out of range [0, {self.config.levels - 1}]"
                )

    def _batch_inputs(self, adj_batch: np.ndarray,
                      node_features: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.config
        b, n, _ = adj_batch.shape
        off = offdiag_mask(n)
        if cfg.multi_channel:
            stack = np.stack([adj_batch, (1.0 - adj_batch) * off], axis=1)
        else:
            stack = adj_batch[:, None, :, :].copy()
        deg = adj_batch.sum(axis=2, keepdims=True)
        if node_features is not None:
            z0 = np.concatenate([node_features, deg], axis=2)
        else:
            z0 = deg
        expected = 1 + cfg.extra_feature_dim
        if z0.shape[2] != expected:
            raise ValueError(
                f"model expects {cfg.extra_feature_dim} extra node features, "
                f"got feature width {z0.shape[2] - 1}"
            )
        return stack, z0

    def score_batch(self, adj_batch: np.ndarray,
                    node_features: np.ndarray | None,
                    levels: tuple[int, ...], graphs: int) -> Tensor:
        """Batched forward: rows are ordered graph-major over `levels`.

        adj_batch has shape (graphs * len(levels), n, n); the result keeps
        that leading axis.
        """
        self._check_levels(levels)
        cfg = self.config
        b, n, _ = adj_batch.shape
        if b != graphs * len(levels):
            raise ValueError(
                f"batch of {b} rows does not factor into {graphs} graphs x {len(levels)} levels"
            )
        stack0, z0 = self._batch_inputs(adj_batch, node_features)
        off = Tensor(offdiag_mask(n))
        a_stack = Tensor(stack0)
        z = Tensor(z0)
        stacks = [a_stack]
        for layer in self.layers:
            a_stack, z = layer(a_stack, z, levels, graphs, off)
            stacks.append(a_stack)
        if cfg.learnable_adj:
            per_edge = concat([transpose(s, (0, 2, 3, 1)) for s in stacks], axis=3)
            width = cfg.input_channels + cfg.layers * cfg.layer_channels
            h = self.final_mlp(reshape(per_edge, (b, n * n, width)), levels, graphs)
            s = reshape(h, (b, n, n))
        else:
            # pass-through stacks carry no node information, so the head
            # reads endpoint features directly; summing both orientations
            # keeps the output exactly symmetric
            h = self.final_mlp(_edge_features(stacks[0], z), levels, graphs)
            raw = reshape(h, (b, n, n))
            s = add(raw, transpose(raw, (0, 2, 1)))
        s = mul(s, off)
        return scale(add(s, transpose(s, (0, 2, 1))), 0.5)

    def score_tensor(self, adj: np.ndarray, node_features: np.ndarray | None,
                     level: int) -> Tensor:
        """Forward pass returning the (n, n) score as an autodiff tensor."""
        adj = np.asarray(adj, dtype=np.float64)
        feats = None if node_features is None else node_features[None]
        out = self.score_batch(adj[None], feats, (level,), graphs=1)
        n = adj.shape[0]
        return reshape(out, (n, n))

    def score(self, adj: np.ndarray, node_features: np.ndarray | None,
              level: int) -> np.ndarray:
        """Forward pass outside any tape; plain numpy result."""
        return self.score_tensor(adj, node_features, level).data

    def score_many(self, adj_batch: np.ndarray, level: int) -> np.ndarray:
        """Plain-numpy scores for a batch of same-size matrices at one level."""
        return self.score_batch(adj_batch, None, (level,),
                                graphs=adj_batch.shape[0]).data

    def forward_score(self, g: GraphInstance, level: int) -> np.ndarray:
        return self.score(g.adj, g.node_features, level)


# ---------------------------------------------------------------------------
# invariance probe: the line integral of the equivariance theorem
# ---------------------------------------------------------------------------


@dataclass
class LineIntegralProbe:
    """Trapezoid quadrature of f(A) = int_0^1 <s(tA), A>_F dt along t*A."""

    endpoint: GraphInstance
    permutation: Permutation
    steps: int = 1000

    def __post_init__(self):
        if self.steps < 100:
            raise ValueError("line integral needs at least 100 steps")


def line_integral(score_model, adj: np.ndarray, level: int, steps: int) -> float:
    total = 0.0
    for k in range(steps + 1):
        t = k / steps
        weight = 0.5 if k in (0, steps) else 1.0
        s = score_model.score(t * adj, None, level)
        total += weight * float(np.vdot(s, adj))
    return total / steps


def invariance_probe(score_model, probe: LineIntegralProbe,
                     level: int) -> tuple[float, float]:
    """The probe integral for A and for the relabeled A, for comparison."""
    adj = probe.endpoint.adj
    f_a = line_integral(score_model, adj, level, probe.steps)
    f_api = line_integral(score_model, probe.permutation.apply_matrix(adj),
                          level, probe.steps)
    return f_a, f_api


# ---------------------------------------------------------------------------
# checkpoint I/O (text, self-describing)
# ---------------------------------------------------------------------------

_CONFIG_FIELDS = (
    "layers", "msg_steps", "channels", "hidden", "node_width", "levels",
    "extra_feature_dim", "learnable_adj", "multi_channel",
)


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: EdpGnn, schedule: NoiseSchedule, path: Path | str) -> None:
    cfg = model.config
    lines = [CHECKPOINT_HEADER]
    for field in _CONFIG_FIELDS:
        lines.append(f"{field} {int(getattr(cfg, field))}")
    lines.append("sigmas " + " ".join(f"{s:.17g}" for s in schedule.sigmas))
    named = model.named_params()
    lines.append(f"params {len(named)}")
    for name, t in named:
        dims = " ".join(str(d) for d in t.data.shape) if t.data.ndim else ""
        lines.append(f"param {name} {t.data.ndim}{' ' + dims if dims else ''}")
        lines.append(" ".join(f"{v:.17g}" for v in t.data.reshape(-1)))
    Path(path).write_text("\n".join(lines) + "\n")


def read_checkpoint_config(path: Path | str) -> tuple[ModelConfig, NoiseSchedule]:
    """Parse only the header of a checkpoint (cheap architecture check)."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != CHECKPOINT_HEADER:
            raise CheckpointError(
                f"{Path(path).name}: bad checkpoint header {header!r}"
            )
        fields: dict[str, int] = {}
        sigmas: tuple[float, ...] | None = None
        for _ in range(len(_CONFIG_FIELDS) + 1):
            tokens = fh.readline().split()
            if not tokens:
                raise CheckpointError(f"{Path(path).name}: truncated header")
            if tokens[0] == "sigmas":
                sigmas = tuple(float(v) for v in tokens[1:])
            elif tokens[0] in _CONFIG_FIELDS:
                fields[tokens[0]] = int(tokens[1])
            else:
                raise CheckpointError(
                    f"{Path(path).name}: unexpected header field {tokens[0]!r}"
                )
    if sigmas is None or len(fields) != len(_CONFIG_FIELDS):
        raise CheckpointError(f"{Path(path).name}: incomplete header")
    cfg = ModelConfig(
        **{k: bool(v) if k in ("learnable_adj", "multi_channel") else v
           for k, v in fields.items()}
    )
    return cfg, NoiseSchedule(sigmas)


def load_checkpoint(path: Path | str) -> tuple[EdpGnn, NoiseSchedule]:
    cfg, schedule = read_checkpoint_config(path)
    model = EdpGnn(cfg, seed=0)
    text = Path(path).read_text().splitlines()
    idx = 1 + len(_CONFIG_FIELDS) + 1  # header + config fields + sigmas
    tokens = text[idx].split()
    if tokens[0] != "params":
        raise CheckpointError(f"{Path(path).name}: missing params count")
    count = int(tokens[1])
    state: dict[str, np.ndarray] = {}
    idx += 1
    for _ in range(count):
        head = text[idx].split()
        if head[0] != "param" or len(head) < 3:
            raise CheckpointError(
                f"{Path(path).name}: malformed param record at line {idx + 1}"
            )
        name = head[1]
        ndim = int(head[2])
        shape = tuple(int(d) for d in head[3 : 3 + ndim])
        values = np.array(text[idx + 1].split(), dtype=np.float64)
        expected = int(np.prod(shape)) if shape else 1
        if values.size != expected:
            raise CheckpointError(
                f"{Path(path).name}: parameter {name!r} has {values.size} values, "
                f"expected shape {shape}"
            )
        state[name] = values.reshape(shape)
        idx += 2
    model.load_state_dict(state)
    return model, schedule
