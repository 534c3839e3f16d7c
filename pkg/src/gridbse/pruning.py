"""Structural compression of a trained estimator by neuron clustering.

Hidden neurons whose activation vectors are nearly collinear (in the
uncentered-correlation sense) are redundant: the cluster's representative
keeps its incoming weights and absorbs the summed outgoing weights of all
members, which preserves the network function exactly for perfect
duplicates. Rounds of cluster-prune-retrain continue while validation error
keeps improving.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mlp import MLP, Scaler, TrainConfig, forward_activations, loss, train


def similarity(x: np.ndarray, y: np.ndarray) -> float:
    """Dissimilarity rho = 1 - E(xy)/sqrt(E(x^2) E(y^2)), in [0, 2].

    An all-zero vector has no direction; pairs involving one are assigned 1
    (never close to anything) by convention.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("similarity needs two equal-length 1-D vectors")
    sxx = float(np.mean(x * x))
    syy = float(np.mean(y * y))
    if sxx == 0.0 or syy == 0.0:
        return 1.0
    rho = 1.0 - float(np.mean(x * y)) / np.sqrt(sxx * syy)
    return float(min(max(rho, 0.0), 2.0))


def pairwise_dissimilarity(activations: np.ndarray) -> np.ndarray:
    """Dense rho matrix between the columns of an (samples x width) matrix."""
    acts = np.atleast_2d(np.asarray(activations, dtype=float))
    n = acts.shape[0]
    gram = acts.T @ acts / n
    power = np.diag(gram).copy()
    nonzero = power > 0.0
    # Floor keeps the outer product above float64 underflow so dead
    # (zero-power) columns divide to 0 instead of raising 0/0.
    floored = np.maximum(power, 1e-150)
    rho = 1.0 - gram / np.sqrt(np.outer(floored, floored))
    rho[~nonzero, :] = 1.0
    rho[:, ~nonzero] = 1.0
    np.clip(rho, 0.0, 2.0, out=rho)
    np.fill_diagonal(rho, np.where(nonzero, 0.0, 1.0))
    return rho


@dataclass(frozen=True)
class ClusterAssignment:
    """Partition of a layer's neurons plus one representative per cluster."""

    clusters: tuple
    representatives: tuple

    @property
    def n_clusters(self) -> int:
        return len(self.clusters)


def cluster_layer(activations: np.ndarray, threshold: float) -> ClusterAssignment:
    """Average-linkage agglomeration on activation dissimilarity.

    Merging happens while the smallest inter-cluster average distance stays
    strictly below the threshold (so threshold 0 merges nothing, even exact
    duplicates). Ties are broken toward the lowest involved neuron index;
    the representative is the cluster medoid, lowest index winning ties.
    """
    acts = np.atleast_2d(np.asarray(activations, dtype=float))
    width = acts.shape[1]
    if width == 0:
        raise ValueError("layer has no neurons")
    base = pairwise_dissimilarity(acts)
    members = {i: [i] for i in range(width)}
    sums = base.copy()
    sizes = np.ones(width)
    active = np.ones(width, dtype=bool)
    while active.sum() > 1:
        dist = sums / np.outer(sizes, sizes)
        dist[~active, :] = np.inf
        dist[:, ~active] = np.inf
        dist[np.tril_indices(width)] = np.inf
        flat = np.argmin(dist)
        a, b = np.unravel_index(flat, dist.shape)
        if not dist[a, b] < threshold:
            break
        # Merging into the lower slot keeps each cluster keyed by its
        # smallest member, which makes the argmin tie-break deterministic.
        members[a] = sorted(members[a] + members.pop(b))
        sizes[a] += sizes[b]
        sums[a, :] += sums[b, :]
        sums[:, a] += sums[:, b]
        active[b] = False
    clusters = []
    reps = []
    for key in sorted(members):
        group = members[key]
        if len(group) == 1:
            rep = group[0]
        else:
            idx = np.array(group)
            within = base[np.ix_(idx, idx)].sum(axis=1)
            rep = int(idx[int(np.argmin(within))])  # argmin takes the first, i.e. lowest index
        clusters.append(tuple(group))
        reps.append(rep)
    return ClusterAssignment(clusters=tuple(clusters), representatives=tuple(reps))


def prune(mlp: MLP, layer: int, assignment: ClusterAssignment) -> MLP:
    """Collapse each cluster of a hidden layer onto its representative.

    The representative keeps its incoming weights and bias; its outgoing
    column in the next layer becomes the sum over cluster members.
    """
    if not 0 <= layer < mlp.n_layers - 1:
        raise ValueError(f"layer {layer} is not a hidden layer of this model")
    width = mlp.weights[layer].shape[0]
    covered = sorted(i for cluster in assignment.clusters for i in cluster)
    if covered != list(range(width)):
        raise ValueError("cluster assignment must partition the layer exactly")
    order = np.argsort([min(c) for c in assignment.clusters])
    weights = [w.copy() for w in mlp.weights]
    biases = [b.copy() for b in mlp.biases]
    reps = [assignment.representatives[i] for i in order]
    weights[layer] = mlp.weights[layer][reps, :]
    biases[layer] = mlp.biases[layer][reps]
    merged = np.empty((mlp.weights[layer + 1].shape[0], len(reps)))
    for pos, i in enumerate(order):
        cols = list(assignment.clusters[i])
        merged[:, pos] = mlp.weights[layer + 1][:, cols].sum(axis=1)
    weights[layer + 1] = merged
    return MLP(weights, biases)


@dataclass
class PruneRound:
    round: int
    widths: list
    val_before_retrain: float
    train_loss: float
    val_loss: float
    test_loss: float = float("nan")


def prune_retrain_loop(
    mlp: MLP,
    scaler: Scaler,
    train_xy: tuple,
    val_xy: tuple,
    threshold: float,
    retrain_config: TrainConfig,
    max_rounds: int = 10,
    test_xy: tuple | None = None,
    retrain_fn=None,
):
    """Iterate cluster -> prune -> retrain, keeping the best validation round.

    Activations are collected on the validation inputs. The loop stops at
    the first round whose validation error exceeds the best seen so far,
    when a round removes no neurons, or after max_rounds. Returns
    (best_model, rounds) where rounds[0] describes the unpruned model.

    `retrain_fn(pruned_mlp, round_index) -> (mlp, train_loss, val_loss)`
    replaces the built-in retraining when supplied (used to exercise the
    stopping rule deterministically).
    """
    train_x, train_y = (np.atleast_2d(a) for a in train_xy)
    val_x, val_y = (np.atleast_2d(a) for a in val_xy)
    xtr, ytr = scaler.scale_in(train_x), scaler.scale_out(train_y)
    xva, yva = scaler.scale_in(val_x), scaler.scale_out(val_y)
    xte = yte = None
    if test_xy is not None:
        xte, yte = scaler.scale_in(np.atleast_2d(test_xy[0])), scaler.scale_out(np.atleast_2d(test_xy[1]))

    def test_loss(model):
        return loss(model, xte, yte) if xte is not None else float("nan")

    current = mlp.copy()
    val0 = loss(current, xva, yva)
    rounds = [
        PruneRound(0, current.hidden_widths, val0, loss(current, xtr, ytr), val0, test_loss(current))
    ]
    best_model = current
    best_val = val0
    for round_index in range(1, max_rounds + 1):
        acts = forward_activations(current, xva)
        assignments = [cluster_layer(layer_acts, threshold) for layer_acts in acts]
        removed = sum(
            w - a.n_clusters for w, a in zip(current.hidden_widths, assignments)
        )
        if removed == 0:
            break
        pruned = current
        for layer_index, assignment in enumerate(assignments):
            pruned = prune(pruned, layer_index, assignment)
        val_before = loss(pruned, xva, yva)
        if retrain_fn is not None:
            retrained, tr_loss, va_loss = retrain_fn(pruned, round_index)
        else:
            retrained, _, _ = train(
                train_x, train_y, val_x, val_y,
                hidden=pruned.hidden_widths,
                config=retrain_config,
                initial=pruned,
                scaler=scaler,
            )
            tr_loss = loss(retrained, xtr, ytr)
            va_loss = loss(retrained, xva, yva)
        rounds.append(
            PruneRound(round_index, retrained.hidden_widths, val_before, tr_loss, va_loss, test_loss(retrained))
        )
        if va_loss > best_val:
            break
        best_val = va_loss
        best_model = retrained
        current = retrained
    return best_model, rounds


def write_pruning_report(rounds: list, path) -> None:
    """Per-round CSV: widths and losses, one row per round."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write("round,widths,val_before_retrain,train_loss,val_loss,test_loss\n")
        for row in rounds:
            widths = "x".join(str(w) for w in row.widths)
            handle.write(
                f"{row.round},{widths},{row.val_before_retrain!r},"
                f"{row.train_loss!r},{row.val_loss!r},{row.test_loss!r}\n"
            )
