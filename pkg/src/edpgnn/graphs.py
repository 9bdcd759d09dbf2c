"""Graph representation, permutations, the edge-noise model, quantization,
dataset generators, and edge-list file I/O.

All adjacency matrices are dense, symmetric, zero-diagonal float64 arrays.
Randomness always flows through an explicit numpy Generator so every
operation is reproducible from a seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_SIGMAS = (1.6, 0.8, 0.6, 0.4, 0.2, 0.1)

_mask_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def offdiag_mask(n: int) -> np.ndarray:
    """(n, n) matrix of ones with a zero diagonal."""
    return _masks(n)[0]


def upper_mask(n: int) -> np.ndarray:
    """(n, n) matrix with ones strictly above the diagonal."""
    return _masks(n)[1]


def _masks(n: int) -> tuple[np.ndarray, np.ndarray]:
    cached = _mask_cache.get(n)
    if cached is None:
        off = np.ones((n, n))
        np.fill_diagonal(off, 0.0)
        up = np.triu(np.ones((n, n)), k=1)
        off.setflags(write=False)
        up.setflags(write=False)
        cached = _mask_cache[n] = (off, up)
    return cached


@dataclass
class GraphInstance:
    """A graph as a symmetric real adjacency matrix with zero diagonal."""

    adj: np.ndarray
    is_binary: bool = True
    node_features: np.ndarray | None = None

    def __post_init__(self):
        self.adj = np.asarray(self.adj, dtype=np.float64)
        if self.node_features is not None:
            self.node_features = np.asarray(self.node_features, dtype=np.float64)

    @property
    def n(self) -> int:
        return self.adj.shape[0]

    def edge_count(self) -> int:
        return int(np.count_nonzero(np.triu(self.adj, k=1)))

    def copy(self) -> "GraphInstance":
        feats = None if self.node_features is None else self.node_features.copy()
        return GraphInstance(self.adj.copy(), self.is_binary, feats)

    def validate(self) -> None:
        a = self.adj
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {a.shape}")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency is not symmetric")
        if np.any(np.diagonal(a) != 0.0):
            raise ValueError("adjacency has nonzero diagonal")
        if self.is_binary and not np.all((a == 0.0) | (a == 1.0)):
            raise ValueError("is_binary set but entries are not all 0/1")
        if self.node_features is not None and self.node_features.shape[0] != self.n:
            raise ValueError(
                f"node_features has {self.node_features.shape[0]} rows for n={self.n}"
            )


class Permutation:
    """A bijection on node indices 0..n-1."""

    def __init__(self, mapping):
        perm = np.asarray(mapping, dtype=np.intp)
        n = perm.shape[0]
        if perm.ndim != 1 or not np.array_equal(np.sort(perm), np.arange(n)):
            raise ValueError("mapping is not a bijection on 0..n-1")
        self.perm = perm

    @property
    def n(self) -> int:
        return self.perm.shape[0]

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "Permutation":
        return cls(rng.permutation(n))

    def inverse(self) -> "Permutation":
        inv = np.empty_like(self.perm)
        inv[self.perm] = np.arange(self.n)
        return Permutation(inv)

    def apply_matrix(self, a: np.ndarray) -> np.ndarray:
        """Relabeled matrix a'[i, j] = a[perm[i], perm[j]]."""
        return a[np.ix_(self.perm, self.perm)]


def permute(g: GraphInstance, pi: Permutation) -> GraphInstance:
    if pi.n != g.n:
        raise ValueError(f"permutation on {pi.n} indices applied to n={g.n} graph")
    feats = None if g.node_features is None else g.node_features[pi.perm]
    return GraphInstance(pi.apply_matrix(g.adj), g.is_binary, feats)


@dataclass(frozen=True)
class NoiseSchedule:
    """Ordered noise levels sigma_1 > sigma_2 > ... > sigma_L > 0."""

    sigmas: tuple[float, ...] = DEFAULT_SIGMAS

    def __post_init__(self):
        object.__setattr__(self, "sigmas", tuple(float(s) for s in self.sigmas))
        if not self.sigmas:
            raise ValueError("noise schedule is empty")
        if any(s <= 0 for s in self.sigmas):
            raise ValueError("noise levels must be positive")
        if any(nxt >= prev for prev, nxt in zip(self.sigmas, self.sigmas[1:])):
            raise ValueError("noise levels must be strictly decreasing")

    @property
    def levels(self) -> int:
        return len(self.sigmas)


def symmetric_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """Standard normal on the upper triangle, mirrored below, zero diagonal."""
    z = np.zeros((n, n))
    iu = np.triu_indices(n, k=1)
    z[iu] = rng.standard_normal(len(iu[0]))
    return z + z.T


def perturb_matrix(adj: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if sigma <= 0:
        raise ValueError(f"noise scale must be positive, got {sigma}")
    return adj + sigma * symmetric_noise(adj.shape[0], rng)


def perturb(g: GraphInstance, sigma: float, rng: np.random.Generator) -> GraphInstance:
    """Gaussian noise on the upper triangle, mirrored; diagonal stays zero."""
    return GraphInstance(perturb_matrix(g.adj, sigma, rng), is_binary=False,
                         node_features=g.node_features)


def oracle_score(clean: GraphInstance, noisy: GraphInstance, sigma: float) -> np.ndarray:
    """Exact score of the noise model: -(noisy - clean) / sigma^2."""
    if clean.n != noisy.n:
        raise ValueError(f"graph sizes differ: {clean.n} vs {noisy.n}")
    if sigma <= 0:
        raise ValueError(f"noise scale must be positive, got {sigma}")
    return -(noisy.adj - clean.adj) / (sigma * sigma)


def quantize_matrix(adj: np.ndarray) -> np.ndarray:
    out = (adj > 0.5).astype(np.float64)
    out *= offdiag_mask(adj.shape[0])
    return out


def quantize(g: GraphInstance) -> GraphInstance:
    """Threshold entries at 0.5 (strict), forcing a binary simple graph."""
    return GraphInstance(quantize_matrix(g.adj), is_binary=True,
                         node_features=g.node_features)


class EmpiricalNodeSampler:
    """Draws a node count with its frequency in a training set."""

    def __init__(self, train_set: list[GraphInstance]):
        if not train_set:
            raise ValueError("empirical node sampler needs a nonempty training set")
        counts: dict[int, int] = {}
        for g in train_set:
            counts[g.n] = counts.get(g.n, 0) + 1
        self.sizes = np.array(sorted(counts), dtype=np.intp)
        freq = np.array([counts[int(s)] for s in self.sizes], dtype=np.float64)
        self.probs = freq / freq.sum()

    def draw(self, rng: np.random.Generator) -> int:
        return int(rng.choice(self.sizes, p=self.probs))

    def distribution(self) -> dict[int, float]:
        return {int(s): float(p) for s, p in zip(self.sizes, self.probs)}


def empirical_node_sampler(train_set: list[GraphInstance]) -> EmpiricalNodeSampler:
    return EmpiricalNodeSampler(train_set)


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

DATASET_KINDS = ("er", "community_small", "ego_small", "lobster", "edge_list_dir")


@dataclass
class DatasetSpec:
    kind: str = "community_small"
    count: int = 100
    seed: int = 0
    # kind-specific knobs; unused ones are ignored by the generators.
    # er: uniform n in [n_min, n_max] with edge probability p.
    # community_small: even n in [n_min, n_max], two halves at probability p.
    # ego_small: one-hop ego graphs with n in [n_min, n_max] from a synthetic
    #   preferential-attachment host of host_n nodes.
    # lobster: spine length uniform in [3, n], two leaf-attachment rounds.
    n: int = 10
    n_min: int = 12
    n_max: int = 20
    p: float = 0.7
    weighted: bool = False
    path: str = ""
    host_n: int = 400
    host_attach: int = 2

    def validate(self) -> None:
        if self.kind not in DATASET_KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}, expected one of {DATASET_KINDS}")
        if self.count < 1:
            raise ValueError("dataset count must be >= 1")
        if self.kind in ("er", "community_small") and not (0.0 < self.p < 1.0):
            raise ValueError(f"edge probability must be in (0, 1), got {self.p}")
        if self.n_min > self.n_max:
            raise ValueError(f"n_min {self.n_min} exceeds n_max {self.n_max}")
        if self.kind == "edge_list_dir" and not self.path:
            raise ValueError("edge_list_dir dataset needs a path")


def er_graph(n: int, p: float, rng: np.random.Generator,
             weighted: bool = False) -> GraphInstance:
    """Erdos-Renyi G(n, p); optional U[0,1] weights on the edges present."""
    iu = np.triu_indices(n, k=1)
    edges = (rng.random(len(iu[0])) < p).astype(np.float64)
    if weighted:
        edges *= rng.random(len(iu[0]))
    a = np.zeros((n, n))
    a[iu] = edges
    a += a.T
    return GraphInstance(a, is_binary=not weighted)


def _community_small_graph(rng: np.random.Generator, n_min: int, n_max: int,
                           p: float) -> GraphInstance:
    half_lo, half_hi = math.ceil(n_min / 2), n_max // 2
    half = int(rng.integers(half_lo, half_hi + 1))
    n = 2 * half
    a = np.zeros((n, n))
    for base in (0, half):
        block = er_graph(half, p, rng).adj
        a[base : base + half, base : base + half] = block
    n_inter = math.ceil(0.05 * n)
    cross = [(i, j) for i in range(half) for j in range(half, n)]
    chosen = rng.choice(len(cross), size=n_inter, replace=False)
    for k in np.sort(chosen):
        i, j = cross[int(k)]
        a[i, j] = a[j, i] = 1.0
    return GraphInstance(a)


def _preferential_attachment_host(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Synthetic host network for ego extraction (hub-heavy degree profile).

    A stand-in for a real citation network; not equivalent to any published
    dataset, only shaped like one.
    """
    a = np.zeros((n, n))
    # seed clique of m+1 nodes
    for i in range(m + 1):
        for j in range(i + 1, m + 1):
            a[i, j] = a[j, i] = 1.0
    targets = list(range(m + 1))
    for v in range(m + 1, n):
        picks: set[int] = set()
        while len(picks) < m:
            picks.add(int(targets[rng.integers(0, len(targets))]))
        for u in picks:
            a[u, v] = a[v, u] = 1.0
            targets.append(u)
        targets.extend([v] * m)
    return a


def _ego_graphs(spec: DatasetSpec, rng: np.random.Generator) -> list[GraphInstance]:
    out: list[GraphInstance] = []
    max_hosts = 16
    for _ in range(max_hosts):
        host = _preferential_attachment_host(spec.host_n, spec.host_attach, rng)
        centers = rng.permutation(spec.host_n)
        for c in centers:
            nodes = np.flatnonzero(host[c])
            ego = np.concatenate(([c], nodes))
            if spec.n_min <= len(ego) <= spec.n_max:
                out.append(GraphInstance(host[np.ix_(ego, ego)].copy()))
                if len(out) == spec.count:
                    return out
    raise ValueError(
        f"could not extract {spec.count} ego graphs with "
        f"{spec.n_min} <= n <= {spec.n_max} after {max_hosts} hosts"
    )


def _lobster_graph(rng: np.random.Generator, n: int) -> GraphInstance:
    spine = int(rng.integers(3, n + 1))
    edges: list[tuple[int, int]] = [(i, i + 1) for i in range(spine - 1)]
    total = spine
    frontier = list(range(spine))
    for _ in range(2):  # caterpillar legs, then lobster second level
        new_frontier = []
        for v in frontier:
            if rng.random() < 0.5:
                edges.append((v, total))
                new_frontier.append(total)
                total += 1
        frontier = new_frontier
    a = np.zeros((total, total))
    for u, v in edges:
        a[u, v] = a[v, u] = 1.0
    return GraphInstance(a)


def generate_dataset(spec: DatasetSpec) -> list[GraphInstance]:
    """Deterministically build `spec.count` graphs from `spec.seed`."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "er":
        out = []
        for _ in range(spec.count):
            n = int(rng.integers(spec.n_min, spec.n_max + 1))
            out.append(er_graph(n, spec.p, rng, weighted=spec.weighted))
        return out
    if spec.kind == "community_small":
        return [
            _community_small_graph(rng, spec.n_min, spec.n_max, spec.p)
            for _ in range(spec.count)
        ]
    if spec.kind == "ego_small":
        return _ego_graphs(spec, rng)
    if spec.kind == "lobster":
        return [_lobster_graph(rng, spec.n) for _ in range(spec.count)]
    if spec.kind == "edge_list_dir":
        graphs, _ = read_graph_dir(Path(spec.path))
        return graphs[: spec.count] if spec.count < len(graphs) else graphs
    raise AssertionError(spec.kind)


# ---------------------------------------------------------------------------
# edge-list files
#
# Format (text, one graph per file): first line is the node count n; each
# following line is "u v w" with 1-based endpoints u < v and real weight w
# (omitted w means 1.0). '#' starts a comment.
# ---------------------------------------------------------------------------


def write_edge_list(g: GraphInstance, path: Path | str) -> None:
    path = Path(path)
    lines = [str(g.n)]
    for i in range(g.n):
        for j in range(i + 1, g.n):
            w = g.adj[i, j]
            if w != 0.0:
                lines.append(f"{i + 1} {j + 1} {w:.17g}")
    path.write_text("\n".join(lines) + "\n")


def read_edge_list(path: Path | str) -> GraphInstance:
    path = Path(path)
    n = None
    adj = None
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if n is None:
            if len(tokens) != 1:
                raise ValueError(f"{path.name}:{lineno}: expected node count, got {raw!r}")
            try:
                n = int(tokens[0])
            except ValueError:
                raise ValueError(f"{path.name}:{lineno}: bad node count {tokens[0]!r}") from None
            if n < 1:
                raise ValueError(f"{path.name}:{lineno}: node count must be >= 1")
            adj = np.zeros((n, n))
            continue
        if len(tokens) not in (2, 3):
            raise ValueError(f"{path.name}:{lineno}: expected 'u v [w]', got {raw!r}")
        try:
            u, v = int(tokens[0]), int(tokens[1])
            w = float(tokens[2]) if len(tokens) == 3 else 1.0
        except ValueError:
            raise ValueError(f"{path.name}:{lineno}: malformed edge line {raw!r}") from None
        if not (1 <= u < v <= n):
            raise ValueError(
                f"{path.name}:{lineno}: endpoints must satisfy 1 <= u < v <= {n}, got {u} {v}"
            )
        i, j = u - 1, v - 1
        if adj[i, j] != 0.0 and adj[i, j] != w:
            raise ValueError(
                f"{path.name}:{lineno}: duplicate edge {u} {v} with conflicting weight"
            )
        adj[i, j] = adj[j, i] = w
    if n is None:
        raise ValueError(f"{path.name}: empty file")
    is_binary = bool(np.all((adj == 0.0) | (adj == 1.0)))
    return GraphInstance(adj, is_binary=is_binary)


MANIFEST_NAME = "manifest.json"


def write_graph_dir(graphs: list[GraphInstance], directory: Path | str,
                    prefix: str = "graph",
                    split: dict[str, list[int]] | None = None) -> list[str]:
    """Write one edge-list file per graph plus a manifest; returns file names."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    width = max(4, len(str(len(graphs))))
    names = [f"{prefix}_{i:0{width}d}.txt" for i in range(len(graphs))]
    for name, g in zip(names, graphs):
        write_edge_list(g, directory / name)
    manifest: dict = {"files": names}
    if split is not None:
        manifest["split"] = {k: [names[i] for i in idx] for k, idx in split.items()}
    (directory / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1) + "\n")
    return names


def read_graph_dir(directory: Path | str,
                   split: str | None = None) -> tuple[list[GraphInstance], list[str]]:
    """Read every graph listed in the manifest (or all *.txt files, sorted)."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
        if split is not None:
            try:
                names = manifest["split"][split]
            except KeyError:
                raise ValueError(f"manifest in {directory} has no split {split!r}") from None
        else:
            names = manifest["files"]
    else:
        names = sorted(p.name for p in directory.glob("*.txt"))
    if not names:
        raise ValueError(f"no graphs found in {directory}")
    return [read_edge_list(directory / name) for name in names], names
