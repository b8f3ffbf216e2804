"""Graph classifier: one graph-convolution layer plus a fully connected readout.

Node features are the adjacency rows themselves, so the classifier works on a
network alone. The graph convolution uses the symmetric degree-normalized
adjacency with self-loops.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .data import N_REGIONS, ConnectivityMatrix
from .errors import DimensionError, ValidationError

N_CLASSES = 3
PROB_FLOOR = 1e-12


@dataclass
class ClassPrediction:
    logits: np.ndarray
    probabilities: np.ndarray
    predicted: int

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        if self.logits.shape != (N_CLASSES,) or self.probabilities.shape != (N_CLASSES,):
            raise DimensionError("logits and probabilities must have length 3")
        if abs(self.probabilities.sum() - 1.0) > 1e-6:
            raise ValidationError("probabilities must sum to 1")
        if self.predicted not in (0, 1, 2):
            raise ValidationError(f"predicted class must be 0..2, got {self.predicted}")


def normalize_adjacency(a: np.ndarray | ConnectivityMatrix) -> np.ndarray:
    """Symmetric normalization with self-loops: D^{-1/2} (A + I) D^{-1/2}.

    Written as an elementwise product with the outer product of the inverse
    square-root degrees, which keeps the output exactly symmetric.
    """
    weights = a.weights if isinstance(a, ConnectivityMatrix) else np.asarray(a, dtype=np.float64)
    a_tilde = weights + np.eye(weights.shape[0])
    d_inv_sqrt = 1.0 / np.sqrt(a_tilde.sum(axis=1))
    return np.outer(d_inv_sqrt, d_inv_sqrt) * a_tilde


def normalize_adjacency_tensor(adj: torch.Tensor) -> torch.Tensor:
    """Batched torch version of normalize_adjacency for (B, N, N) input."""
    eye = torch.eye(adj.shape[-1], dtype=adj.dtype, device=adj.device)
    a_tilde = adj + eye
    d_inv_sqrt = a_tilde.sum(dim=-1).rsqrt()
    outer = d_inv_sqrt.unsqueeze(-1) * d_inv_sqrt.unsqueeze(-2)
    return outer * a_tilde


class GraphClassifier(nn.Module):
    """H = relu(A_norm X W) with X = adjacency rows; logits = fc(flatten(H))."""

    def __init__(self, hidden_dim: int = 32, n_nodes: int = N_REGIONS):
        super().__init__()
        self.n_nodes = n_nodes
        self.node_transform = nn.Linear(n_nodes, hidden_dim, bias=False)
        self.readout = nn.Linear(n_nodes * hidden_dim, N_CLASSES)

    def hidden(self, adj: torch.Tensor) -> torch.Tensor:
        if adj.shape[-2:] != (self.n_nodes, self.n_nodes):
            raise DimensionError(
                f"adjacency must be (..., {self.n_nodes}, {self.n_nodes}), got {tuple(adj.shape)}"
            )
        a_norm = normalize_adjacency_tensor(adj)
        return torch.relu(a_norm @ self.node_transform(adj))

    def forward(self, adj: torch.Tensor) -> torch.Tensor:
        return self.readout(self.hidden(adj).flatten(start_dim=-2))


def classify(a: ConnectivityMatrix, model: GraphClassifier) -> ClassPrediction:
    dtype = next(model.parameters()).dtype
    adj = torch.as_tensor(a.weights, dtype=dtype).unsqueeze(0)
    with torch.no_grad():
        logits = model(adj)[0].double().numpy()
    shifted = logits - logits.max()
    probs = np.exp(shifted) / np.exp(shifted).sum()
    return ClassPrediction(logits=logits, probabilities=probs, predicted=int(np.argmax(probs)))


def cross_entropy_loss(predictions: list[ClassPrediction], labels: list[int]) -> float:
    """Mean negative log probability of the true class, floored at 1e-12."""
    if len(predictions) == 0:
        raise ValueError("empty prediction batch")
    if len(predictions) != len(labels):
        raise ValueError(f"{len(predictions)} predictions vs {len(labels)} labels")
    total = 0.0
    for pred, label in zip(predictions, labels):
        label = int(label)
        if label not in (0, 1, 2):
            raise ValidationError(f"label must be in {{0, 1, 2}}, got {label}")
        total -= np.log(max(pred.probabilities[label], PROB_FLOOR))
    return total / len(predictions)


def classification_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Differentiable version of cross_entropy_loss for training."""
    probs = torch.softmax(logits, dim=-1)
    true = probs[torch.arange(len(labels)), labels]
    return -torch.log(true.clamp(min=PROB_FLOOR)).mean()
