"""AU relation graphs: label statistics, block assembly, graph convolution.

The intra-level graph connects AUs whose conditional co-occurrence in the
training labels clears a threshold (0.3 by default). The multi-level graph
repeats that sub-graph on the diagonal blocks and wires the same AU across
levels through identity off-diagonal blocks. Node features stacked
level-major (node ``l*C + j`` is AU j at level l) are then enhanced by
stacked graph-convolution layers ``Z = act(A_norm @ X @ W)``.

Graph construction runs on numpy; the forward pass runs on torch so the
weights train with the rest of the network.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn

from augraph.errors import DataError

DEFAULT_EDGE_THRESHOLD = 0.3


@dataclass(frozen=True)
class CooccurrenceStats:
    """Conditional probabilities ``prob[i, j] = p(y_i=1 | y_j=1)``.

    Columns whose AU never occurs are undefined and stored as 0, except the
    diagonal which is forced to 1 so every node keeps a self-edge.
    ``positives[j]`` is the number of samples with AU j active.
    """

    prob: np.ndarray  # (C, C) float64
    positives: np.ndarray  # (C,) int64

    @property
    def num_aus(self) -> int:
        return int(self.prob.shape[0])


def cooccurrence(labels: np.ndarray) -> CooccurrenceStats:
    """Count conditional co-occurrence statistics from an (N, C) 0/1 matrix."""
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.shape[0] < 1:
        raise DataError(f"labels must be a non-empty (N, C) matrix, got {labels.shape}")
    if not np.isin(labels, (0, 1)).all():
        raise DataError("labels must be binary (0/1)")
    y = labels.astype(np.float64)
    joint = y.T @ y  # joint[i, j] = #{y_i=1 and y_j=1}
    positives = joint.diagonal().astype(np.int64).copy()
    c = labels.shape[1]
    prob = np.zeros((c, c), dtype=np.float64)
    defined = positives > 0
    prob[:, defined] = joint[:, defined] / positives[defined]
    prob[np.diag_indices(c)] = 1.0
    return CooccurrenceStats(prob=prob, positives=positives)


def build_intra(
    stats: CooccurrenceStats,
    p_pos: float = DEFAULT_EDGE_THRESHOLD,
    symmetrize: bool = True,
) -> np.ndarray:
    """Threshold the conditional probabilities into a binary adjacency.

    An edge (i, j) exists when ``p(y_i=1 | y_j=1) >= p_pos``; the diagonal
    is forced to 1. With ``symmetrize`` (the default) the matrix is closed
    under transposition by elementwise max, which the symmetric
    normalization in :func:`normalize_adjacency` expects.
    """
    if not 0.0 < p_pos < 1.0:
        raise DataError(f"p_pos must lie in (0, 1), got {p_pos}")
    a0 = (stats.prob >= p_pos).astype(np.int64)
    np.fill_diagonal(a0, 1)
    if symmetrize:
        a0 = np.maximum(a0, a0.T)
    return a0


def build_multilevel(
    a0: np.ndarray, levels: int = 3, include_inter: bool = True
) -> np.ndarray:
    """Block adjacency with ``a0`` on the diagonal and identity off-diagonal.

    ``include_inter=False`` drops the cross-level identity blocks (used by
    the ablation that removes inter-level edges).
    """
    a0 = np.asarray(a0)
    if a0.ndim != 2 or a0.shape[0] != a0.shape[1]:
        raise DataError(f"intra-level adjacency must be square, got {a0.shape}")
    if levels < 1:
        raise DataError(f"level count must be >= 1, got {levels}")
    c = a0.shape[0]
    eye = np.eye(c, dtype=a0.dtype)
    off = eye if include_inter else np.zeros_like(eye)
    blocks = [
        [a0 if i == j else off for j in range(levels)] for i in range(levels)
    ]
    return np.block(blocks)


def normalize_adjacency(a: np.ndarray, mode: str = "symmetric") -> np.ndarray:
    """Degree-normalize a non-negative adjacency matrix.

    ``symmetric`` computes ``D^-1/2 A D^-1/2`` (the default), ``row``
    computes ``D^-1 A`` whose rows sum to one. D is the diagonal of row
    sums; a zero-degree node cannot occur once diagonals are forced to 1
    and is treated as an internal error.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DataError(f"adjacency must be square, got {a.shape}")
    if (a < 0).any():
        raise DataError("adjacency must be non-negative")
    deg = a.sum(axis=1)
    if (deg <= 0).any():
        raise DataError("zero-degree node: adjacency has an empty row")
    if mode == "symmetric":
        inv_sqrt = 1.0 / np.sqrt(deg)
        return inv_sqrt[:, None] * a * inv_sqrt[None, :]
    if mode == "row":
        return a / deg[:, None]
    raise DataError(f"unknown normalization mode {mode!r}")


@dataclass(frozen=True)
class RelationGraph:
    """Assembled relation graph: raw blocks plus the normalized matrix."""

    intra: np.ndarray  # (C, C) binary
    adjacency: np.ndarray  # (L*C, L*C) binary
    normalized: np.ndarray  # (L*C, L*C) float64
    p_pos: float

    @property
    def num_nodes(self) -> int:
        return int(self.adjacency.shape[0])


def assemble_graph(
    stats: CooccurrenceStats | None,
    num_aus: int,
    levels: int,
    p_pos: float = DEFAULT_EDGE_THRESHOLD,
    use_intra: bool = True,
    use_inter: bool = True,
    symmetrize: bool = True,
    mode: str = "symmetric",
) -> RelationGraph:
    """Build the relation graph a model configuration asks for.

    With intra-level relations disabled the sub-graph degrades to the
    identity; with inter-level relevance disabled the off-diagonal blocks
    vanish. Both off yields the identity matrix, i.e. plain per-node layers.
    """
    if use_intra:
        if stats is None:
            raise DataError("intra-level graph requested but no statistics given")
        if stats.num_aus != num_aus:
            raise DataError(
                f"statistics cover {stats.num_aus} AUs, model expects {num_aus}"
            )
        a0 = build_intra(stats, p_pos=p_pos, symmetrize=symmetrize)
    else:
        a0 = np.eye(num_aus, dtype=np.int64)
    adjacency = build_multilevel(a0, levels=levels, include_inter=use_inter)
    normalized = normalize_adjacency(adjacency, mode=mode)
    return RelationGraph(intra=a0, adjacency=adjacency, normalized=normalized, p_pos=p_pos)


_ACTIVATIONS: dict[str, Callable[[torch.Tensor], torch.Tensor]] = {
    "relu": torch.relu,
    "tanh": torch.tanh,
    "identity": lambda t: t,
}


def gcn_forward(
    x: torch.Tensor,
    adj_norm: torch.Tensor,
    weights: Sequence[torch.Tensor],
    activation: str = "relu",
) -> torch.Tensor:
    """Chain graph-convolution layers ``X <- act(A_norm @ X @ W)``.

    ``x`` is ``(nodes, d)`` or ``(batch, nodes, d)``; every layer uses the
    same normalized adjacency.
    """
    if activation not in _ACTIVATIONS:
        raise DataError(f"unknown activation {activation!r}")
    act = _ACTIVATIONS[activation]
    if x.shape[-2] != adj_norm.shape[0] or adj_norm.shape[0] != adj_norm.shape[1]:
        raise DataError(
            f"node count mismatch: features {tuple(x.shape)}, adjacency "
            f"{tuple(adj_norm.shape)}"
        )
    out = x
    for w in weights:
        if out.shape[-1] != w.shape[0]:
            raise DataError(
                f"feature width {out.shape[-1]} does not match weight {tuple(w.shape)}"
            )
        out = act(adj_norm @ out @ w)
    return out


class GraphConvStack(nn.Module):
    """Learnable stack of graph-convolution layers over a fixed adjacency."""

    def __init__(self, width: int, layers: int = 2, activation: str = "relu"):
        super().__init__()
        if layers < 1:
            raise DataError(f"need at least one layer, got {layers}")
        self.activation = activation
        self.weights = nn.ParameterList(
            nn.Parameter(torch.empty(width, width)) for _ in range(layers)
        )
        for w in self.weights:
            nn.init.xavier_uniform_(w)

    def forward(self, x: torch.Tensor, adj_norm: torch.Tensor) -> torch.Tensor:
        return gcn_forward(x, adj_norm, list(self.weights), self.activation)
