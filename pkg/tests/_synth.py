"""Shared builders for tests: feature specs, hand-built trees, random models, datasets."""

from __future__ import annotations

from fractions import Fraction

from pipeclf.model_ir import (
    EnsembleModel,
    FeatureSpec,
    LeafNode,
    SplitNode,
    TreeModel,
)
from pipeclf.rng import SplitMix64
from pipeclf.trainers import Dataset


def specs(*widths: int, names: list[str] | None = None) -> tuple[FeatureSpec, ...]:
    return tuple(
        FeatureSpec(name=(names[i] if names else f"f{i}"), index=i, width_bits=w)
        for i, w in enumerate(widths)
    )


def leaf(cls: int, weight=0, depth: int = 0) -> LeafNode:
    return LeafNode(class_id=cls, weight=Fraction(weight), depth=depth)


def stump(features, f: int, threshold: int, left_cls: int, right_cls: int, n_classes: int = 2) -> TreeModel:
    return TreeModel(
        features=features,
        n_classes=n_classes,
        nodes=(
            SplitNode(feature=f, threshold=threshold, left=1, right=2),
            leaf(left_cls, depth=1),
            leaf(right_cls, depth=1),
        ),
    )


def single_leaf_tree(features, cls: int = 0, n_classes: int = 2) -> TreeModel:
    return TreeModel(features=features, n_classes=n_classes, nodes=(leaf(cls),))


def figure_like_tree(features=None) -> TreeModel:
    """Depth-3 tree, 6 leaves, two features: three branches on f0, two on f1.

    f0's thresholds {3, 7, 11} give 4 intervals; f1's {3, 9} give 3.
    """
    features = features or specs(4, 4)
    nodes = (
        SplitNode(feature=0, threshold=7, left=1, right=2),  # branch 1 (f0)
        SplitNode(feature=1, threshold=3, left=3, right=4),  # branch 2 (f1)
        SplitNode(feature=0, threshold=11, left=5, right=6),  # branch 3 (f0)
        SplitNode(feature=0, threshold=3, left=7, right=8),  # branch 4 (f0)
        leaf(2, depth=2),
        SplitNode(feature=1, threshold=9, left=9, right=10),  # branch 5 (f1)
        leaf(5, depth=2),
        leaf(0, depth=3),
        leaf(1, depth=3),
        leaf(3, depth=3),
        leaf(4, depth=3),
    )
    return TreeModel(features=features, n_classes=6, nodes=nodes)


def random_tree(
    features,
    n_classes: int,
    depth: int,
    rng: SplitMix64,
    force_depth: bool = True,
    weight_span: int = 1024,
) -> TreeModel:
    """Random binary tree with max depth exactly `depth` when force_depth is set.

    Leaf weights are random rationals (for boosting) and leaf depths are the
    real path lengths (for isolation).
    """
    nodes: list = []

    def build(d: int, must_extend: bool) -> int:
        is_leaf = d >= depth or (not must_extend and d >= 1 and rng.next_below(2) == 0)
        idx = len(nodes)
        if is_leaf:
            nodes.append(
                LeafNode(
                    class_id=rng.next_below(n_classes),
                    weight=Fraction(rng.next_below(2 * weight_span + 1) - weight_span, 256),
                    depth=d,
                )
            )
            return idx
        f = rng.next_below(len(features))
        t = rng.next_below(features[f].domain_size - 1)
        nodes.append(None)
        left_spine = must_extend and rng.next_below(2) == 0
        left = build(d + 1, left_spine)
        right = build(d + 1, must_extend and not left_spine)
        nodes[idx] = SplitNode(feature=f, threshold=t, left=left, right=right)
        return idx

    build(0, force_depth)
    return TreeModel(features=features, n_classes=n_classes, nodes=tuple(nodes))


def random_bagging(features, n_classes: int, n_trees: int, depth: int, rng: SplitMix64) -> EnsembleModel:
    trees = tuple(random_tree(features, n_classes, depth, rng) for _ in range(n_trees))
    return EnsembleModel(features=features, n_classes=n_classes, trees=trees, mode="bagging")


def exhaustive_domain(features):
    import itertools

    return itertools.product(*(range(f.domain_size) for f in features))


def blob_dataset(n: int, seed: int, width: int = 6, spread: int = 8) -> Dataset:
    """Two integer blobs with overlap: class 0 near (1/4, 1/4), class 1 near (3/4, 3/4)."""
    rng = SplitMix64(seed)
    features = specs(width, width)
    top = (1 << width) - 1
    lo_center = (1 << width) // 4
    hi_center = 3 * (1 << width) // 4
    rows = []
    for i in range(n):
        label = i % 2
        cx = hi_center if label else lo_center
        cy = hi_center if label else lo_center
        dx = rng.next_below(2 * spread + 1) + rng.next_below(2 * spread + 1) - 2 * spread
        dy = rng.next_below(2 * spread + 1) + rng.next_below(2 * spread + 1) - 2 * spread
        x = min(max(cx + dx, 0), top)
        y = min(max(cy + dy, 0), top)
        rows.append(((x, y), label))
    return Dataset(rows=tuple(rows), features=features, n_classes=2)
