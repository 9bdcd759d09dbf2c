"""Annealed Langevin dynamics over adjacency matrices.

The chain starts from a folded-normal initialization (absolute values of
standard normals on the upper triangle, mirrored), anneals through the
noise schedule from the largest sigma down, and runs T update steps per
level with step size alpha_i = eps_step * sigma_i^2 / sigma_L^2:

    x <- x + (alpha_i / 2) * score(x, sigma_i) + eps_s * sqrt(alpha_i) * z

where z is symmetric upper-triangle Gaussian noise. The extra coefficient
eps_s rescales the injected noise. The final state is quantized at 0.5 to
a binary graph. The diagonal receives neither drift nor noise.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graphs import (
    EmpiricalNodeSampler,
    GraphInstance,
    NoiseSchedule,
    quantize_matrix,
    symmetric_noise,
    write_edge_list,
)


@dataclass
class SamplerConfig:
    eps_step: float = 1e-3       # smallest step size (applies at sigma_L)
    eps_s: float = 0.3           # injected-noise scaling
    steps_per_level: int = 1000  # T
    schedule: NoiseSchedule = field(default_factory=NoiseSchedule)
    seed: int = 0

    def validate(self) -> None:
        if self.eps_step <= 0:
            raise ValueError("eps_step must be positive")
        if self.eps_s < 0:
            raise ValueError("eps_s must be nonnegative")
        if self.steps_per_level < 1:
            raise ValueError("steps_per_level must be >= 1")

    def step_size(self, level: int) -> float:
        sigmas = self.schedule.sigmas
        return self.eps_step * sigmas[level] ** 2 / sigmas[-1] ** 2


def langevin_level(score_model, state: np.ndarray, level: int,
                   config: SamplerConfig, rng: np.random.Generator) -> np.ndarray:
    """Run T update steps at one noise level; state stays symmetric."""
    config.validate()
    alpha = config.step_size(level)
    noise_coeff = config.eps_s * math.sqrt(alpha)
    x = state.copy()
    n = x.shape[0]
    for t in range(config.steps_per_level):
        s = score_model.score(x, None, level)
        if not np.all(np.isfinite(s)):
            raise RuntimeError(
                f"non-finite score during sampling at level {level}, step {t}"
            )
        x += (alpha / 2.0) * s
        if noise_coeff != 0.0:
            x += noise_coeff * symmetric_noise(n, rng)
    return x


def folded_normal_init(n: int, rng: np.random.Generator) -> np.ndarray:
    """|N(0,1)| on the upper triangle, mirrored below, zero diagonal."""
    return np.abs(symmetric_noise(n, rng))


def sample_graph(score_model, n: int, config: SamplerConfig,
                 rng: np.random.Generator,
                 return_continuous: bool = False):
    """Anneal through all levels and quantize to a binary graph."""
    if n < 2:
        raise ValueError(f"need at least 2 nodes to sample a graph, got {n}")
    x = folded_normal_init(n, rng)
    for level in range(config.schedule.levels):
        x = langevin_level(score_model, x, level, config, rng)
    g = GraphInstance(quantize_matrix(x), is_binary=True)
    if return_continuous:
        return g, x
    return g


def _sample_group(args):
    """Run all chains of one node size side by side (batched score calls).

    Each chain consumes only its own RNG stream, so results do not depend on
    how chains are grouped or scheduled.
    """
    score_model, n, seed_seqs, config = args
    rngs = [np.random.default_rng(s) for s in seed_seqs]
    x = np.stack([folded_normal_init(n, rng) for rng in rngs])
    for level in range(config.schedule.levels):
        alpha = config.step_size(level)
        noise_coeff = config.eps_s * math.sqrt(alpha)
        for t in range(config.steps_per_level):
            s = score_model.score_many(x, level)
            if not np.all(np.isfinite(s)):
                raise RuntimeError(
                    f"non-finite score during sampling at level {level}, step {t}"
                )
            x += (alpha / 2.0) * s
            if noise_coeff != 0.0:
                x += noise_coeff * np.stack(
                    [symmetric_noise(n, rng) for rng in rngs]
                )
    return [(GraphInstance(quantize_matrix(m), is_binary=True), m.copy()) for m in x]


def sample_set(score_model, count: int, train_set: list[GraphInstance],
               config: SamplerConfig, workers: int = 1,
               return_continuous: bool = False):
    """Draw `count` graphs, each with a node count from the training-set
    empirical size distribution and an independent RNG stream.

    Chains of equal node count run as one batched group; reruns are
    byte-identical for any worker count because stream k always belongs to
    sample k and grouping depends only on the drawn sizes.
    """
    if count < 1:
        raise ValueError(f"sample count must be >= 1, got {count}")
    config.validate()
    sizes_rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    node_sampler = EmpiricalNodeSampler(train_set)
    sizes = [node_sampler.draw(sizes_rng) for _ in range(count)]
    streams = np.random.SeedSequence(config.seed).spawn(count)
    groups: dict[int, list[int]] = {}
    for idx, n in enumerate(sizes):
        groups.setdefault(n, []).append(idx)
    jobs = [(score_model, n, [streams[i] for i in members], config)
            for n, members in sorted(groups.items())]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            group_results = list(pool.map(_sample_group, jobs, chunksize=1))
    else:
        group_results = [_sample_group(job) for job in jobs]
    results: list = [None] * count
    for (n, members), items in zip(sorted(groups.items()), group_results):
        for idx, item in zip(members, items):
            results[idx] = item if return_continuous else item[0]
    return results


def write_samples(results, out_dir: Path | str,
                  with_continuous: bool = False) -> list[str]:
    """Write sampled graphs as edge-list files plus a manifest.

    With `with_continuous`, each sample's pre-quantization matrix is dumped
    alongside (one row per line) for channel-level inspection.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = []
    continuous_names = []
    width = max(4, len(str(len(results))))
    for i, item in enumerate(results):
        if with_continuous:
            g, cont = item
        else:
            g, cont = item, None
        name = f"sample_{i:0{width}d}.txt"
        write_edge_list(g, out_dir / name)
        names.append(name)
        if cont is not None:
            cname = f"sample_{i:0{width}d}.continuous.txt"
            lines = [str(g.n)] + [
                " ".join(f"{v:.17g}" for v in row) for row in cont
            ]
            (out_dir / cname).write_text("\n".join(lines) + "\n")
            continuous_names.append(cname)
    manifest: dict = {"files": names}
    if continuous_names:
        manifest["continuous_files"] = continuous_names
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    return names
