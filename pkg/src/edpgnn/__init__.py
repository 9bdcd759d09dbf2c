"""Score-based graph generation toolkit.

Trains a permutation-equivariant edgewise GNN with denoising score
matching, samples graphs with annealed Langevin dynamics, and evaluates
sample sets with MMD graph statistics.
"""

__version__ = "0.1.0"
