import numpy as np

from edpgnn.autodiff import Tensor


def randomize_params(model, rng, spread=0.5):
    """Jitter every parameter (weights, biases, gains, shifts, eps) so tests
    exercise a generic point in parameter space instead of the identity-like
    initialization."""
    for _, t in model.named_params():
        t.data = t.data + rng.uniform(-spread, spread, size=t.data.shape)
    return model


class OracleScore:
    """The exact score of a point mass at a clean matrix: -(x - A)/sigma^2.

    Drop-in substitute for the network in loss and sampler code paths.
    """

    def __init__(self, clean_adj, schedule):
        self.clean = np.asarray(clean_adj, dtype=np.float64)
        self.sigmas = schedule.sigmas

    def score(self, adj, node_features, level):
        sigma = self.sigmas[level]
        return -(adj - self.clean) / (sigma * sigma)

    def score_tensor(self, adj, node_features, level):
        return Tensor(self.score(adj, node_features, level))

    def score_many(self, adj_batch, level):
        sigma = self.sigmas[level]
        return -(adj_batch - self.clean) / (sigma * sigma)

    def score_batch(self, adj_batch, node_features, levels, graphs):
        rows = [self.score(adj_batch[g * len(levels) + i], None, level)
                for g in range(graphs) for i, level in enumerate(levels)]
        return Tensor(np.stack(rows))


class ZeroScore:
    """score == 0 everywhere."""

    def score(self, adj, node_features, level):
        return np.zeros_like(adj)

    def score_many(self, adj_batch, level):
        return np.zeros_like(adj_batch)

    def score_batch(self, adj_batch, node_features, levels, graphs):
        return Tensor(np.zeros_like(adj_batch))
