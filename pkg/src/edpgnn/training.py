"""Denoising score-matching loss and the training loop.

The loss draws, for every graph in a batch and every noise level sigma_i,
one perturbed matrix, and penalizes the squared difference between the
network score and the exact perturbation score -(noisy - clean)/sigma_i^2,
summed over the strictly-upper triangle (the support of the noise model).
Level terms are batch means combined with weights sigma_i^2 / (2L).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import (AdamState, Tape, Tensor, adam_step, add, mul, reshape,
                       scale, tsum, zero_grads)
from .graphs import GraphInstance, NoiseSchedule, perturb_matrix, upper_mask


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 8
    steps: int = 5000
    seed: int = 0
    val_size: int = 32          # graphs held out for validation; 0 disables
    checkpoint_every: int = 250

    def validate(self) -> None:
        if self.lr <= 0 or self.batch_size < 1 or self.steps < 0:
            raise ValueError("learning rate, batch size, and steps must be positive")
        if self.val_size < 0 or self.checkpoint_every < 1:
            raise ValueError("val_size must be >= 0 and checkpoint_every >= 1")


@dataclass
class LossBreakdown:
    total: float
    terms: list[float]  # one mean squared-residual term per noise level


@dataclass
class CurveRow:
    step: int
    split: str
    total: float
    terms: list[float]


@dataclass
class TrainResult:
    curves: list[CurveRow] = field(default_factory=list)
    best_step: int = 0
    best_val: float = float("inf")


def _group_term_sums(model, group, schedule: NoiseSchedule) -> Tensor:
    """Summed per-level squared residuals for same-size (graph, noisy) pairs.

    One batched forward covers every graph at every level: rows are ordered
    graph-major over levels. Returns a length-L tensor of sums over graphs.
    """
    sigmas = schedule.sigmas
    L = len(sigmas)
    G = len(group)
    n = group[0][0].n
    adj_batch = np.stack([noisy[i] for g, noisy in group for i in range(L)])
    resid = np.stack(
        [(noisy[i] - g.adj) / (sigmas[i] * sigmas[i]) for g, noisy in group
         for i in range(L)]
    )
    feats = None
    if group[0][0].node_features is not None:
        feats = np.stack([g.node_features for g, _ in group for _ in range(L)])
    s = model.score_batch(adj_batch, feats, tuple(range(L)), graphs=G)
    masked = mul(add(s, Tensor(resid)), Tensor(upper_mask(n)))
    per_row = tsum(mul(masked, masked), axis=(1, 2))   # (G*L,)
    return tsum(reshape(per_row, (G, L)), axis=0)      # (L,)


def _loss_terms(model, graphs_and_perturbations, schedule: NoiseSchedule):
    """Weighted total and per-level mean terms over a (possibly mixed-size)
    list of (graph, [noisy matrix per level]) pairs."""
    sigmas = schedule.sigmas
    L = len(sigmas)
    by_size: dict[int, list] = {}
    for pair in graphs_and_perturbations:
        by_size.setdefault(pair[0].n, []).append(pair)
    level_sums: Tensor | None = None
    for n in sorted(by_size):
        t = _group_term_sums(model, by_size[n], schedule)
        level_sums = t if level_sums is None else add(level_sums, t)
    terms = scale(level_sums, 1.0 / len(graphs_and_perturbations))  # (L,)
    weights = np.array([s * s / (2.0 * L) for s in sigmas])
    total = tsum(mul(terms, Tensor(weights)))
    return total, terms


def dsm_loss_tensor(model, batch: list[GraphInstance], schedule: NoiseSchedule,
                    rng: np.random.Generator) -> tuple[Tensor, LossBreakdown]:
    """Loss as an autodiff scalar plus its per-level breakdown."""
    if not batch:
        raise ValueError("dsm loss needs a nonempty batch")
    pairs = []
    for g in batch:
        noisy = [perturb_matrix(g.adj, sigma, rng) for sigma in schedule.sigmas]
        pairs.append((g, noisy))
    total, terms = _loss_terms(model, pairs, schedule)
    return total, LossBreakdown(total.item(), [float(v) for v in terms.data])


def dsm_loss(model, batch: list[GraphInstance], schedule: NoiseSchedule,
             rng: np.random.Generator) -> LossBreakdown:
    _, breakdown = dsm_loss_tensor(model, batch, schedule, rng)
    return breakdown


def dsm_loss_given(model, g: GraphInstance, perturbed: list[np.ndarray],
                   schedule: NoiseSchedule) -> tuple[Tensor, LossBreakdown]:
    """Loss for one graph with externally supplied per-level perturbations."""
    total, terms = _loss_terms(model, [(g, perturbed)], schedule)
    return total, LossBreakdown(total.item(), [float(v) for v in terms.data])


def validate(model, val_set: list[GraphInstance], schedule: NoiseSchedule,
             stream_seed: int = 0x5EED) -> LossBreakdown:
    """dsm_loss under a fixed noise stream, comparable across checkpoints."""
    if not val_set:
        raise ValueError("validation set is empty")
    rng = np.random.default_rng(stream_seed)
    return dsm_loss(model, val_set, schedule, rng)


def split_validation(dataset: list[GraphInstance], val_size: int,
                     seed: int) -> tuple[list[GraphInstance], list[GraphInstance]]:
    """Deterministically hold out `val_size` graphs for validation."""
    if val_size == 0:
        return list(dataset), []
    if val_size >= len(dataset):
        raise ValueError(
            f"validation size {val_size} must be smaller than the dataset ({len(dataset)})"
        )
    order = np.random.default_rng(seed).permutation(len(dataset))
    val_idx = set(order[:val_size].tolist())
    train = [g for i, g in enumerate(dataset) if i not in val_idx]
    val = [g for i, g in enumerate(dataset) if i in val_idx]
    return train, val


def train(model, train_set: list[GraphInstance], config: TrainConfig,
          schedule: NoiseSchedule) -> TrainResult:
    """Minibatch DSM training with best-validation parameter selection.

    Batches group graphs of equal node count (no padding). Fully
    deterministic for a fixed config seed. Returns the loss curves; the
    model is left holding the parameters with the best validation loss
    (final parameters when validation is disabled).
    """
    config.validate()
    if not train_set:
        raise ValueError("training set is empty")
    result = TrainResult()
    if config.steps == 0:
        return result

    fit_set, val_set = split_validation(train_set, config.val_size, config.seed)
    ss = np.random.SeedSequence(config.seed)
    pick_rng, noise_rng, val_seed_src = [np.random.default_rng(s) for s in ss.spawn(3)]
    val_stream_seed = int(val_seed_src.integers(2**63))

    by_size: dict[int, list[int]] = {}
    for i, g in enumerate(fit_set):
        by_size.setdefault(g.n, []).append(i)
    sizes = sorted(by_size)
    size_probs = np.array([len(by_size[s]) for s in sizes], dtype=np.float64)
    size_probs /= size_probs.sum()

    params = model.params()
    adam = AdamState(lr=config.lr)
    best_state = None
    for step in range(1, config.steps + 1):
        n = sizes[int(pick_rng.choice(len(sizes), p=size_probs))]
        pool = by_size[n]
        batch = [fit_set[pool[int(k)]]
                 for k in pick_rng.integers(0, len(pool), size=config.batch_size)]
        with Tape() as tape:
            loss_t, breakdown = dsm_loss_tensor(model, batch, schedule, noise_rng)
            if not np.isfinite(breakdown.total):
                raise RuntimeError(
                    f"non-finite training loss at step {step}: terms={breakdown.terms}"
                )
            tape.backward(loss_t)
        adam_step(params, adam)
        zero_grads(params)
        result.curves.append(CurveRow(step, "train", breakdown.total, breakdown.terms))

        if val_set and (step % config.checkpoint_every == 0 or step == config.steps):
            vb = validate(model, val_set, schedule, val_stream_seed)
            result.curves.append(CurveRow(step, "val", vb.total, vb.terms))
            if vb.total < result.best_val:
                result.best_val = vb.total
                result.best_step = step
                best_state = model.state_dict()
    if best_state is not None:
        model.load_state_dict(best_state)
    return result


def write_loss_csv(rows: list[CurveRow], levels: int, path: Path | str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "total"] + [f"term_{i + 1}" for i in range(levels)]
                        + ["split"])
        for row in rows:
            writer.writerow(
                [row.step, f"{row.total:.17g}"]
                + [f"{t:.17g}" for t in row.terms]
                + [row.split]
            )
