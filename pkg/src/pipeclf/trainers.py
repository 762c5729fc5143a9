"""Desk-scale reference trainers: CART, bagged forest, Gaussian NB, Lloyd's K-Means.

All trainers are pure functions of (data, params, seed).  Randomness comes
exclusively from :class:`pipeclf.rng.SplitMix64`, so a trained model is
byte-reproducible from its inputs.
"""

from __future__ import annotations

import csv
import heapq
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Sequence

from .errors import DomainError, EmptyDataset, FeatureError, InsufficientClassRows, KTooLarge, SchemaError
from .model_ir import EnsembleModel, FeatureSpec, KMeansModel, LeafNode, NBModel, Node, SplitNode, TreeModel
from .rng import SplitMix64

# Variance floor in feature-unit^2; keeps Gaussian likelihoods finite when a
# class has a constant feature.
VARIANCE_FLOOR = Fraction(1, 1 << 20)

DEFAULT_MAX_ITERS = 100  # Lloyd iterations cap


@dataclass(frozen=True)
class Dataset:
    rows: tuple[tuple[tuple[int, ...], int], ...]  # (feature values, label)
    features: tuple[FeatureSpec, ...]
    n_classes: int

    def __post_init__(self):
        for values, label in self.rows:
            if not (0 <= label < self.n_classes):
                raise DomainError(f"label {label} outside 0..{self.n_classes - 1}")
            if len(values) != len(self.features):
                raise FeatureError("row width does not match feature specs")
            for spec, v in zip(self.features, values):
                if not (0 <= v < spec.domain_size):
                    raise FeatureError(
                        f"feature {spec.name}: value {v} outside [0, 2^{spec.width_bits})"
                    )

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class TrainParams:
    max_depth: int = 8
    max_leaf_nodes: int = 256
    n_trees: int = 1
    bootstrap_fraction: Fraction = Fraction(1)
    rng_seed: int = 0

    def __post_init__(self):
        if self.max_depth < 1:
            raise DomainError("max_depth must be >= 1")
        if self.n_trees < 1:
            raise DomainError("n_trees must be >= 1")
        if not (0 < self.bootstrap_fraction <= 1):
            raise DomainError("bootstrap_fraction must be in (0, 1]")
        if self.max_leaf_nodes < 2:
            raise DomainError("max_leaf_nodes must be >= 2")


def load_dataset(text: str, features: Sequence[FeatureSpec], n_classes: int | None = None) -> Dataset:
    """Load the CSV dataset format: one column per feature (by name) plus `label`."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise EmptyDataset("dataset file has no header") from None
    header = [h.strip() for h in header]
    if header[-1] != "label":
        raise SchemaError("last dataset column must be 'label'")
    positions = []
    for spec in features:
        if spec.name not in header[:-1]:
            raise SchemaError(f"dataset is missing feature column {spec.name!r}")
        positions.append(header.index(spec.name))
    rows = []
    max_label = 0
    for line_no, line in enumerate(reader, start=2):
        if not line:
            continue
        try:
            values = tuple(int(line[p]) for p in positions)
            label = int(line[-1])
        except (IndexError, ValueError) as exc:
            raise SchemaError(f"dataset line {line_no}: {exc}") from exc
        max_label = max(max_label, label)
        rows.append((values, label))
    if n_classes is None:
        n_classes = max_label + 1
    return Dataset(rows=tuple(rows), features=tuple(features), n_classes=n_classes)


# --------------------------------------------------------------------------
# CART
# --------------------------------------------------------------------------


def _class_counts(rows: Sequence[tuple[tuple[int, ...], int]], n_classes: int) -> list[int]:
    counts = [0] * n_classes
    for _, label in rows:
        counts[label] += 1
    return counts


def _majority(counts: Sequence[int]) -> int:
    best = 0
    for y in range(1, len(counts)):
        if counts[y] > counts[best]:
            best = y
    return best


def _best_split(
    rows: Sequence[tuple[tuple[int, ...], int]], n_features: int, n_classes: int
) -> tuple[Fraction, int, int] | None:
    """Best (gain, feature, threshold) for this node, or None if no split helps.

    Candidate thresholds are floor((a + b) / 2) for adjacent observed values a < b.
    Gain is the Gini impurity decrease times the node row count (constant factor
    does not change the argmax); ties go to the lowest (feature, threshold).
    """
    n = len(rows)
    total = _class_counts(rows, n_classes)
    sum_sq_total = sum(c * c for c in total)
    best: tuple[Fraction, int, int] | None = None
    for f in range(n_features):
        by_value: dict[int, list[int]] = {}
        for values, label in rows:
            v = values[f]
            if v not in by_value:
                by_value[v] = [0] * n_classes
            by_value[v][label] += 1
        distinct = sorted(by_value)
        if len(distinct) < 2:
            continue
        left = [0] * n_classes
        n_left = 0
        for a, b in zip(distinct, distinct[1:]):
            for y in range(n_classes):
                left[y] += by_value[a][y]
            n_left += sum(by_value[a])
            threshold = (a + b) // 2
            n_right = n - n_left
            sum_sq_left = sum(c * c for c in left)
            sum_sq_right = sum((t - l) * (t - l) for t, l in zip(total, left))
            # impurity decrease * n = sum_sq_left/n_left + sum_sq_right/n_right - sum_sq_total/n
            gain = (
                Fraction(sum_sq_left, n_left)
                + Fraction(sum_sq_right, n_right)
                - Fraction(sum_sq_total, n)
            )
            if gain > 0 and (best is None or gain > best[0]):
                best = (gain, f, threshold)
    return best


@dataclass
class _GrowNode:
    rows: tuple
    depth: int
    node_id: int


def train_decision_tree(data: Dataset, params: TrainParams) -> TreeModel:
    """Greedy CART with Gini impurity, best-first growth under both caps."""
    if not data.rows:
        raise EmptyDataset("cannot train on an empty dataset")
    return _cart(data.rows, data.features, data.n_classes, params)


def _cart(
    rows: Sequence[tuple[tuple[int, ...], int]],
    features: tuple[FeatureSpec, ...],
    n_classes: int,
    params: TrainParams,
) -> TreeModel:
    nodes: list[Node | None] = [None]
    leaves = 1
    heap: list[tuple[Fraction, int, _GrowNode, tuple[Fraction, int, int]]] = []
    order = 0

    def consider(grow: _GrowNode) -> None:
        nonlocal order
        if grow.depth >= params.max_depth:
            return
        split = _best_split(grow.rows, len(features), n_classes)
        if split is not None:
            heapq.heappush(heap, (-split[0], order, grow, split))
            order += 1

    def make_leaf(grow: _GrowNode) -> None:
        counts = _class_counts(grow.rows, n_classes)
        cls = _majority(counts)
        nodes[grow.node_id] = LeafNode(
            class_id=cls, weight=Fraction(counts[cls], len(grow.rows)), depth=grow.depth
        )

    pending = {0: _GrowNode(rows=tuple(rows), depth=0, node_id=0)}
    consider(pending[0])

    while heap and leaves < params.max_leaf_nodes:
        _, _, grow, (gain, f, threshold) = heapq.heappop(heap)
        left_rows = tuple(r for r in grow.rows if r[0][f] <= threshold)
        right_rows = tuple(r for r in grow.rows if r[0][f] > threshold)
        left_id = len(nodes)
        nodes.append(None)
        right_id = len(nodes)
        nodes.append(None)
        nodes[grow.node_id] = SplitNode(feature=f, threshold=threshold, left=left_id, right=right_id)
        del pending[grow.node_id]
        leaves += 1
        for child_rows, child_id in ((left_rows, left_id), (right_rows, right_id)):
            child = _GrowNode(rows=child_rows, depth=grow.depth + 1, node_id=child_id)
            pending[child_id] = child
            consider(child)

    for grow in pending.values():
        make_leaf(grow)
    assert all(n is not None for n in nodes)
    return TreeModel(features=features, n_classes=n_classes, nodes=tuple(nodes), root=0)  # type: ignore[arg-type]


# --------------------------------------------------------------------------
# Random forest
# --------------------------------------------------------------------------


def bootstrap_indices(rng: SplitMix64, n: int, count: int) -> list[int]:
    """Sample-with-replacement index draw; module-level so tests can substitute it."""
    return [rng.next_below(n) for _ in range(count)]


def train_random_forest(data: Dataset, params: TrainParams) -> EnsembleModel:
    if not data.rows:
        raise EmptyDataset("cannot train on an empty dataset")
    master = SplitMix64(params.rng_seed)
    n = len(data.rows)
    count = max(1, round(n * params.bootstrap_fraction))
    trees = []
    for _ in range(params.n_trees):
        tree_rng = master.child()
        sample = tuple(data.rows[i] for i in bootstrap_indices(tree_rng, n, count))
        trees.append(_cart(sample, data.features, data.n_classes, params))
    return EnsembleModel(
        features=data.features, n_classes=data.n_classes, trees=tuple(trees), mode="bagging"
    )


# --------------------------------------------------------------------------
# Gaussian Naive Bayes
# --------------------------------------------------------------------------


def train_gaussian_nb(data: Dataset) -> NBModel:
    """Closed-form fit: sample mean / sample variance (n-1), floored variances."""
    if not data.rows:
        raise EmptyDataset("cannot train on an empty dataset")
    by_class: dict[int, list[tuple[int, ...]]] = {y: [] for y in range(data.n_classes)}
    for values, label in data.rows:
        by_class[label].append(values)
    for y, rows in by_class.items():
        if len(rows) < 2:
            raise InsufficientClassRows(f"class {y} has {len(rows)} rows; need >= 2")
    priors = tuple(Fraction(len(by_class[y]), len(data.rows)) for y in range(data.n_classes))
    means = []
    variances = []
    for y in range(data.n_classes):
        rows = by_class[y]
        m = len(rows)
        mu_row = []
        var_row = []
        for i in range(len(data.features)):
            mu = Fraction(sum(r[i] for r in rows), m)
            var = sum((Fraction(r[i]) - mu) ** 2 for r in rows) / (m - 1)
            mu_row.append(mu)
            var_row.append(max(var, VARIANCE_FLOOR))
        means.append(tuple(mu_row))
        variances.append(tuple(var_row))
    return NBModel(
        features=data.features,
        n_classes=data.n_classes,
        priors=priors,
        means=tuple(means),
        variances=tuple(variances),
    )


# --------------------------------------------------------------------------
# K-Means
# --------------------------------------------------------------------------


def _sq_dist(p: Sequence[int], c: Sequence[Fraction]) -> Fraction:
    return sum((Fraction(a) - b) ** 2 for a, b in zip(p, c))


def _kmeanspp_init(points: Sequence[tuple[int, ...]], k: int, rng: SplitMix64) -> list[tuple[Fraction, ...]]:
    """Seeded k-means++ style init with exact integer weighting.

    Initial centers are data points, so weights (squared distances) are
    integers and the weighted draw is an exact cumulative-sum selection.
    """
    centers = [tuple(Fraction(v) for v in points[rng.next_below(len(points))])]
    while len(centers) < k:
        weights = []
        for p in points:
            d = min(_sq_dist(p, c) for c in centers)
            weights.append(int(d))  # exact: centers are integer points here
        total = sum(weights)
        if total == 0:
            # all remaining mass sits on chosen centers; take the first new distinct point
            for p in points:
                cand = tuple(Fraction(v) for v in p)
                if cand not in centers:
                    centers.append(cand)
                    break
            continue
        r = rng.next_below(total)
        acc = 0
        for p, w in zip(points, weights):
            acc += w
            if r < acc:
                centers.append(tuple(Fraction(v) for v in p))
                break
    return centers


def lloyd_iterations(
    points: Sequence[tuple[int, ...]],
    centers: list[tuple[Fraction, ...]],
    max_iters: int = DEFAULT_MAX_ITERS,
) -> Iterator[tuple[list[tuple[Fraction, ...]], list[int], Fraction]]:
    """Yield (centers, assignment, within-cluster squared distance) per iteration.

    Stops after the assignment reaches a fixpoint or max_iters passes.
    """
    assignment: list[int] | None = None
    for _ in range(max_iters):
        new_assignment = []
        wcss = Fraction(0)
        for p in points:
            dists = [_sq_dist(p, c) for c in centers]
            j = min(range(len(centers)), key=lambda i: (dists[i], i))
            new_assignment.append(j)
            wcss += dists[j]
        clusters: dict[int, list[tuple[int, ...]]] = {}
        for p, j in zip(points, new_assignment):
            clusters.setdefault(j, []).append(p)
        centers = [
            tuple(
                Fraction(sum(p[i] for p in clusters[j]), len(clusters[j]))
                for i in range(len(points[0]))
            )
            if j in clusters
            else centers[j]
            for j in range(len(centers))
        ]
        yield centers, new_assignment, wcss
        if new_assignment == assignment:
            return
        assignment = new_assignment


def train_kmeans(data: Dataset, k: int, seed: int, max_iters: int = DEFAULT_MAX_ITERS) -> KMeansModel:
    if not data.rows:
        raise EmptyDataset("cannot train on an empty dataset")
    points = [values for values, _ in data.rows]
    distinct = set(points)
    if k > len(distinct):
        raise KTooLarge(f"k={k} exceeds {len(distinct)} distinct points")
    rng = SplitMix64(seed)
    centers = _kmeanspp_init(points, k, rng)
    for centers, _, _ in lloyd_iterations(points, centers, max_iters):
        pass
    # Duplicate centers can appear on degenerate data; nudge is not attempted,
    # the model validator reports it instead.
    return KMeansModel(
        features=data.features, n_classes=k, centers=tuple(tuple(c) for c in centers)
    )
