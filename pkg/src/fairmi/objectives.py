"""Training objectives and information estimators over soft assignments.

Three loss terms drive training:

- reconstruction_loss: mean squared reconstruction error per sample.
- clustering_loss: pushes the cluster marginal toward uniform while making
  individual assignments confident (negative cluster entropy plus the mean
  per-sample assignment entropy).
- group_cluster_mi: mutual information between the sensitive group and the
  cluster variable; used directly as the fairness penalty, and reported as
  the leakage diagnostic mi_gc.

conditional_mi estimates how much information the assignments carry about
the samples beyond what the groups already explain; it is a diagnostic, not
a training signal, and decomposes exactly into the terms above.

All logarithms are natural. Probabilities inside entropy sums go through a
log clamped at 1e-12 so that zero cells contribute exactly zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .clustering import SoftAssignment

if TYPE_CHECKING:
    from . import autodiff as ad

# must stay equal to autodiff.GUARD_EPS so numpy and graph paths agree
_EPS = 1e-12


class ObjectiveError(ValueError):
    pass


def _xlogx(p):
    # p * log(p) with 0 contributing exactly 0
    return p * np.log(np.maximum(p, _EPS))


def reconstruction_loss(x: np.ndarray, x_rec: np.ndarray) -> float:
    """Mean over samples of the squared Euclidean reconstruction distance."""
    x = np.asarray(x, dtype=np.float64)
    x_rec = np.asarray(x_rec, dtype=np.float64)
    if x.shape != x_rec.shape or x.ndim != 2:
        raise ObjectiveError(f"inputs must be matching 2-d arrays, got {x.shape} vs {x_rec.shape}")
    diff = x - x_rec
    return float((diff * diff).sum() / x.shape[0])


def cluster_marginal(assign: SoftAssignment) -> np.ndarray:
    """Mean soft assignment per cluster: a length-K probability vector."""
    return assign.probs.mean(axis=0)


def cluster_entropy(marginal: np.ndarray) -> float:
    """Entropy of the cluster marginal (nats)."""
    p = np.asarray(marginal, dtype=np.float64)
    if p.ndim != 1 or np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-9:
        raise ObjectiveError("marginal must be a probability vector")
    return float(-_xlogx(p).sum())


def assignment_entropy(assign: SoftAssignment) -> float:
    """Mean entropy of the per-sample assignment rows (nats)."""
    return float(-_xlogx(assign.probs).sum() / assign.n)


def clustering_loss(assign: SoftAssignment) -> float:
    """Negative cluster entropy plus mean assignment entropy.

    Minimizing this spreads mass evenly across clusters while making each
    row's assignment confident. Zero when rows are one-hot and balanced;
    also zero when every row is uniform (both entropies then cancel).
    """
    p = cluster_marginal(assign)
    return float(_xlogx(p).sum() - _xlogx(assign.probs).sum() / assign.n)


def _group_counts(groups, n_groups):
    groups = np.asarray(groups)
    if groups.ndim != 1:
        raise ObjectiveError("groups must be a 1-d id array")
    if groups.size and (groups.min() < 0 or groups.max() >= n_groups):
        raise ObjectiveError(f"group ids must lie in [0, {n_groups})")
    return np.bincount(groups, minlength=n_groups)


@dataclass(frozen=True)
class JointGroupCluster:
    """Empirical joint p(group, cluster) with its two marginals."""

    p_gc: np.ndarray
    p_g: np.ndarray
    p_c: np.ndarray

    def __post_init__(self):
        if abs(self.p_gc.sum() - 1.0) > 1e-9:
            raise ObjectiveError("joint must sum to 1")
        if np.any(self.p_gc < 0.0):
            raise ObjectiveError("joint entries must be non-negative")
        if np.any(np.abs(self.p_gc.sum(axis=1) - self.p_g) > 1e-9):
            raise ObjectiveError("row sums must match the group marginal")
        if np.any(np.abs(self.p_gc.sum(axis=0) - self.p_c) > 1e-9):
            raise ObjectiveError("column sums must match the cluster marginal")


def joint_group_cluster(assign: SoftAssignment, groups, n_groups: int) -> JointGroupCluster:
    """Average the soft assignment rows inside each group (groups are constants)."""
    groups = np.asarray(groups)
    if groups.shape != (assign.n,):
        raise ObjectiveError("need one group id per assignment row")
    counts = _group_counts(groups, n_groups)
    onehot = np.zeros((n_groups, assign.n))
    onehot[groups, np.arange(assign.n)] = 1.0
    p_gc = onehot @ assign.probs / assign.n
    return JointGroupCluster(p_gc=p_gc, p_g=counts / assign.n, p_c=assign.probs.sum(axis=0) / assign.n)


def group_cluster_mi(assign: SoftAssignment, groups, n_groups: int) -> float:
    """Mutual information between group and cluster under the empirical joint.

    This is the fairness penalty: zero exactly when the joint factorizes,
    i.e. when cluster assignments carry no information about the group.
    Rejects datasets with an empty group; mini-batch training uses the graph
    builder below, which lets a batch-empty group contribute zero instead.
    """
    counts = _group_counts(groups, n_groups)
    if np.any(counts == 0):
        raise ObjectiveError("every group needs at least one member")
    joint = joint_group_cluster(assign, groups, n_groups)
    total = 0.0
    for t in range(joint.p_gc.shape[0]):
        for k in range(joint.p_gc.shape[1]):
            p = joint.p_gc[t, k]
            if p > 0.0:
                total += p * (np.log(p) - np.log(joint.p_g[t]) - np.log(joint.p_c[k]))
    return float(total)


def total_loss(l_rec: float, l_clu: float, l_fair: float, alpha: float, beta_fair: float) -> float:
    """Weighted sum of the three terms."""
    if alpha < 0.0 or beta_fair < 0.0:
        raise ObjectiveError("loss weights must be non-negative")
    return float(l_rec + alpha * l_clu + beta_fair * l_fair)


def conditional_mi(assign: SoftAssignment, groups, n_groups: int) -> float:
    """Cluster information not explained by the groups.

    Computed as cluster entropy minus mean assignment entropy minus the
    group-cluster mutual information; the decomposition is exact by
    construction, so this equals cluster_entropy - assignment_entropy -
    group_cluster_mi to float precision.
    """
    h_c = cluster_entropy(cluster_marginal(assign))
    h_cx = assignment_entropy(assign)
    return float(h_c - h_cx - group_cluster_mi(assign, groups, n_groups))


# ---------------------------------------------------------------------------
# graph builders (training path). Each takes the assignment node produced by
# clustering.soft_assign_graph plus batch constants, and returns a scalar node.

def clustering_loss_graph(c_node: ad.Node, n: int) -> ad.Node:
    from . import autodiff as ad  # deferred: estimator-only callers skip the graph engine

    ones_row = ad.constant(np.ones((1, n)))
    p = ad.scale(ad.matmul(ones_row, c_node), 1.0 / n)
    neg_h_c = ad.sum_all(ad.multiply(p, ad.log_guarded(p)))
    h_cx = ad.scale(ad.sum_all(ad.multiply(c_node, ad.log_guarded(c_node))), -1.0 / n)
    return ad.add(neg_h_c, h_cx)


def group_cluster_mi_graph(c_node: ad.Node, groups, n_groups: int) -> ad.Node:
    """Differentiable group-cluster mutual information over one batch.

    Uses the expansion sum p_gc log p_gc - sum p_g log p_g - sum p_c log p_c,
    valid because assignment rows sum to one, so the joint's row sums equal
    the constant group marginal. A group missing from the batch has p_g = 0
    and contributes exactly zero. Gradients flow through the assignments
    only; groups are constants.
    """
    from . import autodiff as ad

    groups = np.asarray(groups)
    n = groups.shape[0]
    counts = _group_counts(groups, n_groups)
    onehot = np.zeros((n_groups, n))
    onehot[groups, np.arange(n)] = 1.0
    p_g = counts / n
    neg_h_g = float(_xlogx(p_g).sum())

    p_gc = ad.scale(ad.matmul(ad.constant(onehot), c_node), 1.0 / n)
    ones_row = ad.constant(np.ones((1, n)))
    p_c = ad.scale(ad.matmul(ones_row, c_node), 1.0 / n)
    joint_term = ad.sum_all(ad.multiply(p_gc, ad.log_guarded(p_gc)))
    cluster_term = ad.sum_all(ad.multiply(p_c, ad.log_guarded(p_c)))
    return ad.subtract(ad.subtract(joint_term, ad.constant(np.asarray(neg_h_g))), cluster_term)


def total_loss_graph(rec_node: ad.Node, clu_node: ad.Node, fair_node: ad.Node,
                     alpha: float, beta_fair: float) -> ad.Node:
    from . import autodiff as ad

    if alpha < 0.0 or beta_fair < 0.0:
        raise ObjectiveError("loss weights must be non-negative")
    return ad.add(rec_node, ad.add(ad.scale(clu_node, alpha), ad.scale(fair_node, beta_fair)))
